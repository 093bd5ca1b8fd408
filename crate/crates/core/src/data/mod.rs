//! Ingestion, channel roles, scaling and date-range splitting.

pub mod dataset;
pub mod scaler;
pub mod schema;
pub mod split;

pub use dataset::{format_timestamp, parse_timestamp, write_table, TimeSeriesDataset};
pub use scaler::MinMaxScaler;
pub use schema::{Channel, ChannelLayout, Role, VariableSchema};
pub use split::{make_splits, NamedRange, SplitPlan, Splits, TimeRange};
