//! End-to-end stages. Each stage has an in-memory form, used by tests and
//! experiments, and a `cmd_*` form that reads and writes the artifact tree.
//!
//! Artifact layout, all under the configured directories:
//!
//! ```text
//! data/manifest.toml, data/<unit>.csv
//! checkpoints/source.ckpt, checkpoints/source_log.csv
//! checkpoints/<unit>/<variant>.ckpt, checkpoints/<unit>/<variant>_log.csv
//! outputs/scores/<unit>/<variant>_samples.csv, <variant>_days.csv
//! outputs/report.csv, outputs/report.txt
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use ndarray::{concatenate, Array2, Axis};

use crate::adaptation::{mmd_finetune, Variant};
use crate::checkpoint::{CheckpointMeta, ModelCheckpoint};
use crate::config::RunConfig;
use crate::data::{make_splits, MinMaxScaler, SplitPlan, TimeSeriesDataset, VariableSchema};
use crate::error::{Error, Result};
use crate::eval::{build_report, EvaluationReport, UnitSeries};
use crate::models::{train_adaptive, train_autoencoder, AdaptiveModule, Autoencoder, TrainLog};
use crate::scoring::{anomaly_scores, ResidualScaler, ScoreSeries, ThresholdBase};
use crate::simulator::{simulate_fleet, FleetManifest, ManifestUnit, MANIFEST_FILE};

/// One unit's rows after missing-value removal and scaling.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Array2<f64>,
    pub validation: Array2<f64>,
    /// Every row after the validation range, in time order.
    pub stream: TimeSeriesDataset,
}

/// Min-max scaler fitted on the training range of `data`.
pub fn fit_scaler(data: &TimeSeriesDataset, plan: &SplitPlan) -> Result<MinMaxScaler> {
    let (clean, _) = data.drop_missing();
    let splits = make_splits(&clean, plan)?;
    MinMaxScaler::fit(splits.train.view())
}

pub fn prepare(
    data: &TimeSeriesDataset,
    plan: &SplitPlan,
    scaler: &MinMaxScaler,
) -> Result<Prepared> {
    let (clean, _) = data.drop_missing();
    let splits = make_splits(&clean, plan)?;
    if splits.validation.is_empty() {
        return Err(Error::data("validation segment is empty after exclusions"));
    }
    let mut stream = clean.filter_rows(|_, t| *t >= plan.validation.end);
    stream.values = scaler.transform(stream.view())?;
    Ok(Prepared {
        train: scaler.transform(splits.train.view())?,
        validation: scaler.transform(splits.validation.view())?,
        stream,
    })
}

/// Trains the source autoencoder and bundles it with the scaler and the
/// source unit's own threshold base.
pub fn train_source(
    data: &TimeSeriesDataset,
    unit: &ManifestUnit,
    cfg: &RunConfig,
) -> Result<(ModelCheckpoint, TrainLog)> {
    let scaler = fit_scaler(data, &unit.split)?;
    let p = prepare(data, &unit.split, &scaler)?;
    let ae = Autoencoder::build(data.schema.model_width(), cfg.seed)?;
    let (ae, log) = train_autoencoder(ae, p.train.view(), p.validation.view(), &cfg.train)?;
    let mut ckpt = ModelCheckpoint {
        meta: CheckpointMeta {
            variant: Variant::Baseline,
            schema: data.schema.clone(),
            seed: cfg.seed,
            unit: unit.id.clone(),
            adaptive_options: None,
            mmd_sigma: None,
            threshold: None,
        },
        ae,
        adaptive: None,
        scaler,
        residual_scaler: None,
    };
    let (rs, base) = calibrate(&ckpt, &p, cfg.detect.alpha(unit.relation), cfg)?;
    ckpt.residual_scaler = Some(rs);
    ckpt.meta.threshold = Some(base);
    Ok((ckpt, log))
}

/// Target-side model for one variant. Baseline returns the source checkpoint
/// unchanged. MMD needs the source unit's data.
pub fn adapt_variant(
    source: &ModelCheckpoint,
    variant: Variant,
    target: &TimeSeriesDataset,
    unit: &ManifestUnit,
    source_data: Option<(&TimeSeriesDataset, &ManifestUnit)>,
    cfg: &RunConfig,
) -> Result<(ModelCheckpoint, Option<TrainLog>)> {
    if variant == Variant::Baseline {
        return Ok((source.clone(), None));
    }
    let p = prepare(target, &unit.split, &source.scaler)?;
    let mut ckpt = source.clone();
    ckpt.meta.variant = variant;
    ckpt.meta.unit = unit.id.clone();
    ckpt.meta.threshold = None;
    ckpt.residual_scaler = None;
    let log = match variant {
        Variant::Baseline => unreachable!(),
        Variant::AdaBn => None,
        Variant::Mmd => {
            let (sd, su) = source_data
                .ok_or_else(|| Error::config("MMD adaptation needs the source unit's data"))?;
            let sp = prepare(sd, &su.split, &source.scaler)?;
            let out = mmd_finetune(
                source.ae.clone(),
                sp.train.view(),
                p.train.view(),
                p.validation.view(),
                &cfg.mmd,
                &cfg.adapt,
            )?;
            ckpt.ae = out.ae;
            ckpt.meta.mmd_sigma = Some(out.sigma);
            Some(out.log)
        }
        Variant::Taad => {
            let h =
                AdaptiveModule::build(source.meta.schema.layout(), cfg.adaptive, cfg.adapt.seed)?;
            let (h, log) = train_adaptive(
                &source.ae,
                h,
                p.train.view(),
                p.validation.view(),
                &cfg.adapt,
            )?;
            ckpt.meta.adaptive_options = Some(cfg.adaptive);
            ckpt.adaptive = Some(h);
            Some(log)
        }
    };
    Ok((ckpt, log))
}

/// Residual scaler and threshold base from the unit's healthy train and
/// validation rows, predicted the way the detector runs at test time.
fn calibrate(
    ckpt: &ModelCheckpoint,
    p: &Prepared,
    alpha: f64,
    cfg: &RunConfig,
) -> Result<(ResidualScaler, ThresholdBase)> {
    let healthy = concatenate![Axis(0), p.train, p.validation];
    let rs = ResidualScaler::fit(healthy.view())?;
    let mut det = ckpt.detector()?;
    let b = cfg.detect.batch_size;
    let pred = concatenate![
        Axis(0),
        det.predict_stream(p.train.view(), b)?,
        det.predict_stream(p.validation.view(), b)?
    ];
    let scores = anomaly_scores(rs.relative_residuals(pred.view(), healthy.view())?.view())?;
    let base = ThresholdBase::fit(&scores, alpha, cfg.detect.window)?;
    Ok((rs, base))
}

/// Scores the unit's post-validation stream. The threshold base is fitted
/// on the unit's own healthy rows with the same detector.
pub fn detect_unit(
    ckpt: &ModelCheckpoint,
    target: &TimeSeriesDataset,
    unit: &ManifestUnit,
    cfg: &RunConfig,
) -> Result<(ScoreSeries, ThresholdBase)> {
    let p = prepare(target, &unit.split, &ckpt.scaler)?;
    let (rs, base) = calibrate(ckpt, &p, cfg.detect.alpha(unit.relation), cfg)?;
    let mut det = ckpt.detector()?;
    let pred = det.predict_stream(p.stream.view(), cfg.detect.batch_size)?;
    let series = ScoreSeries::compute(
        p.stream.timestamps.clone(),
        pred.view(),
        p.stream.view(),
        &rs,
        &base,
        cfg.detect.day_threshold,
    )?;
    Ok((series, base))
}

/// Everything one in-memory run produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub source: ModelCheckpoint,
    pub source_log: TrainLog,
    /// Keyed by unit id, then variant.
    pub checkpoints: BTreeMap<String, BTreeMap<Variant, ModelCheckpoint>>,
    pub series: BTreeMap<Variant, UnitSeries>,
    pub report: EvaluationReport,
}

/// Trains, adapts, detects and evaluates every target of a generated fleet.
/// `data` holds one dataset per manifest unit, in manifest order.
pub fn run_experiment(
    cfg: &RunConfig,
    manifest: &FleetManifest,
    data: &[TimeSeriesDataset],
) -> Result<Experiment> {
    cfg.validate()?;
    if data.len() != manifest.units.len() {
        return Err(Error::config("one dataset per manifest unit is required"));
    }
    let by_id = |id: &str| -> &TimeSeriesDataset {
        let i = manifest
            .units
            .iter()
            .position(|u| u.id == id)
            .expect("unit from manifest");
        &data[i]
    };
    let su = manifest.source()?;
    let sd = by_id(&su.id);
    let (source, source_log) = train_source(sd, su, cfg)?;
    log::info!(
        "source {} trained, best val {:.3e}",
        su.id,
        source_log.best_val_loss()
    );
    let mut checkpoints = BTreeMap::new();
    let mut series: BTreeMap<Variant, UnitSeries> = BTreeMap::new();
    for tu in manifest.targets() {
        let td = by_id(&tu.id);
        let mut per = BTreeMap::new();
        for &v in &cfg.variants {
            let (ckpt, _) = adapt_variant(&source, v, td, tu, Some((sd, su)), cfg)?;
            let (s, base) = detect_unit(&ckpt, td, tu, cfg)?;
            log::info!("{} {v}: threshold {:.4}", tu.id, base.threshold()?);
            series.entry(v).or_default().insert(tu.id.clone(), s);
            per.insert(v, ckpt);
        }
        checkpoints.insert(tu.id.clone(), per);
    }
    let report = build_report(&series, manifest)?;
    Ok(Experiment {
        source,
        source_log,
        checkpoints,
        series,
        report,
    })
}

// ---- file-based commands ----

pub fn source_checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoints.join("source.ckpt")
}

pub fn variant_checkpoint_path(cfg: &RunConfig, unit: &str, v: Variant) -> PathBuf {
    cfg.paths
        .checkpoints
        .join(unit)
        .join(format!("{}.ckpt", v.tag()))
}

pub fn samples_path(cfg: &RunConfig, unit: &str, v: Variant) -> PathBuf {
    cfg.paths
        .outputs
        .join("scores")
        .join(unit)
        .join(format!("{}_samples.csv", v.tag()))
}

pub fn days_path(cfg: &RunConfig, unit: &str, v: Variant) -> PathBuf {
    cfg.paths
        .outputs
        .join("scores")
        .join(unit)
        .join(format!("{}_days.csv", v.tag()))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn load_manifest(cfg: &RunConfig) -> Result<FleetManifest> {
    FleetManifest::load(&cfg.paths.data.join(MANIFEST_FILE))
}

fn load_unit(
    cfg: &RunConfig,
    schema: &VariableSchema,
    unit: &ManifestUnit,
) -> Result<TimeSeriesDataset> {
    TimeSeriesDataset::load_csv(&cfg.paths.data.join(&unit.file), schema)
}

/// Selected target units: one by id, or all.
fn targets<'a>(manifest: &'a FleetManifest, only: Option<&str>) -> Result<Vec<&'a ManifestUnit>> {
    match only {
        Some(id) => Ok(vec![manifest.unit(id)?]),
        None => Ok(manifest.targets().collect()),
    }
}

fn variants(cfg: &RunConfig, only: Option<Variant>) -> Vec<Variant> {
    only.map_or_else(|| cfg.variants.clone(), |v| vec![v])
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<FleetManifest> {
    let fleet = cfg.fleet()?;
    let m = simulate_fleet(&fleet, &cfg.paths.data)?;
    cfg.persist(&cfg.paths.data)?;
    Ok(m)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainLog> {
    let manifest = load_manifest(cfg)?;
    let su = manifest.source()?;
    let data = load_unit(cfg, &manifest.schema, su)?;
    let (ckpt, log) = train_source(&data, su, cfg)?;
    mkdir(&cfg.paths.checkpoints)?;
    ckpt.save(&source_checkpoint_path(cfg))?;
    log.save(&cfg.paths.checkpoints.join("source_log.csv"))?;
    cfg.persist(&cfg.paths.checkpoints)?;
    Ok(log)
}

pub fn cmd_adapt(
    cfg: &RunConfig,
    only_variant: Option<Variant>,
    only_unit: Option<&str>,
) -> Result<Vec<PathBuf>> {
    let manifest = load_manifest(cfg)?;
    let src_path = source_checkpoint_path(cfg);
    let source = ModelCheckpoint::load(&src_path)?;
    let vs = variants(cfg, only_variant);
    let su = manifest.source()?;
    let source_data = if vs.contains(&Variant::Mmd) {
        Some(load_unit(cfg, &manifest.schema, su)?)
    } else {
        None
    };
    let mut written = Vec::new();
    for tu in targets(&manifest, only_unit)? {
        let td = load_unit(cfg, &manifest.schema, tu)?;
        mkdir(&cfg.paths.checkpoints.join(&tu.id))?;
        for &v in &vs {
            let path = variant_checkpoint_path(cfg, &tu.id, v);
            if v == Variant::Baseline {
                std::fs::copy(&src_path, &path).map_err(|e| Error::io(&path, e))?;
            } else {
                let (ckpt, log) = adapt_variant(
                    &source,
                    v,
                    &td,
                    tu,
                    source_data.as_ref().map(|d| (d, su)),
                    cfg,
                )?;
                ckpt.save(&path)?;
                if let Some(log) = log {
                    log.save(&path.with_file_name(format!("{}_log.csv", v.tag())))?;
                }
            }
            written.push(path);
        }
    }
    cfg.persist(&cfg.paths.checkpoints)?;
    Ok(written)
}

pub fn cmd_detect(
    cfg: &RunConfig,
    only_variant: Option<Variant>,
    only_unit: Option<&str>,
) -> Result<Vec<PathBuf>> {
    let manifest = load_manifest(cfg)?;
    let mut written = Vec::new();
    for tu in targets(&manifest, only_unit)? {
        let td = load_unit(cfg, &manifest.schema, tu)?;
        for v in variants(cfg, only_variant) {
            let ckpt = ModelCheckpoint::load(&variant_checkpoint_path(cfg, &tu.id, v))?;
            if ckpt.meta.variant != v {
                return Err(Error::state(format!(
                    "checkpoint for {v} on `{}` holds a {} model",
                    tu.id, ckpt.meta.variant
                )));
            }
            let (s, _) = detect_unit(&ckpt, &td, tu, cfg)?;
            let sp = samples_path(cfg, &tu.id, v);
            mkdir(sp.parent().expect("has parent"))?;
            s.save(&sp, &days_path(cfg, &tu.id, v))?;
            written.push(sp);
        }
    }
    cfg.persist(&cfg.paths.outputs)?;
    Ok(written)
}

/// Builds the report from persisted sample scores only.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluationReport> {
    let manifest = load_manifest(cfg)?;
    let units: Vec<&ManifestUnit> = manifest.targets().collect();
    let missing: Vec<String> = cfg
        .variants
        .iter()
        .flat_map(|&v| units.iter().map(move |u| samples_path(cfg, &u.id, v)))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "missing score files: {}",
            missing.join(", ")
        )));
    }
    let mut series = BTreeMap::new();
    for &v in &cfg.variants {
        let mut per = UnitSeries::new();
        for u in &units {
            per.insert(
                u.id.clone(),
                ScoreSeries::load(&samples_path(cfg, &u.id, v), cfg.detect.day_threshold)?,
            );
        }
        series.insert(v, per);
    }
    let report = build_report(&series, &manifest)?;
    mkdir(&cfg.paths.outputs)?;
    report.save(
        &cfg.paths.outputs.join("report.csv"),
        &cfg.paths.outputs.join("report.txt"),
    )?;
    cfg.persist(&cfg.paths.outputs)?;
    Ok(report)
}

/// Timestamps of the rows a detector scores for `unit`, for callers that
/// want to line up their own data with the score files.
pub fn stream_timestamps(data: &TimeSeriesDataset, unit: &ManifestUnit) -> Vec<DateTime<Utc>> {
    let (clean, _) = data.drop_missing();
    clean
        .timestamps
        .into_iter()
        .filter(|t| *t >= unit.split.validation.end)
        .collect()
}
