use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::archive::{Archive, NamedTensor};
use super::batchnorm::{BatchNormLayer, BnCache, BnMode};
use super::dense::DenseLayer;
use super::ops::relu;
use crate::error::{Error, Result};

/// Architecture description of one layer. A network is rebuilt from a list of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    BatchNorm { dim: usize },
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    BatchNorm(BatchNormLayer),
    Relu,
}

#[derive(Debug, Clone)]
enum Cache {
    Dense(Array2<f64>),
    BatchNorm(BnCache),
    Relu(Array2<f64>),
}

/// Activations recorded by a forward pass, consumed by the matching backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<Cache>,
}

/// Gradient buffers, one per trainable tensor, in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub buffers: Vec<Vec<f64>>,
}

impl GradientTape {
    pub fn is_zero(&self) -> bool {
        self.buffers.iter().flatten().all(|g| *g == 0.0)
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.buffers.iter_mut().flatten() {
            *g *= factor;
        }
    }
}

/// A feed-forward stack of dense, batch-normalization and ReLU layers.
#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    frozen: bool,
    last_trace: Option<Trace>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.specs == other.specs && self.layers == other.layers && self.frozen == other.frozen
    }
}

impl Network {
    /// Builds and initializes a network deterministically from `seed`.
    pub fn new(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut width: Option<usize> = None;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in &specs {
            let layer = match *spec {
                LayerSpec::Dense { input, output } => {
                    check_chain(&mut width, input)?;
                    width = Some(output);
                    Layer::Dense(DenseLayer::init(input, output, &mut rng)?)
                }
                LayerSpec::BatchNorm { dim } => {
                    check_chain(&mut width, dim)?;
                    Layer::BatchNorm(BatchNormLayer::new(dim)?)
                }
                LayerSpec::Relu => Layer::Relu,
            };
            layers.push(layer);
        }
        if width.is_none() {
            return Err(Error::config("network needs at least one sized layer"));
        }
        Ok(Self {
            specs,
            layers,
            frozen: false,
            last_trace: None,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.specs
            .iter()
            .find_map(|s| match *s {
                LayerSpec::Dense { input, .. } => Some(input),
                LayerSpec::BatchNorm { dim } => Some(dim),
                LayerSpec::Relu => None,
            })
            .unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.specs
            .iter()
            .rev()
            .find_map(|s| match *s {
                LayerSpec::Dense { output, .. } => Some(output),
                LayerSpec::BatchNorm { dim } => Some(dim),
                LayerSpec::Relu => None,
            })
            .unwrap_or(0)
    }

    /// Frozen networks still propagate gradients to their input but never
    /// accumulate parameter gradients.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn batchnorms(&self) -> impl Iterator<Item = &BatchNormLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    pub fn batchnorms_mut(&mut self) -> impl Iterator<Item = &mut BatchNormLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
    }

    pub fn dense_layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
    }

    /// Forward pass that records a trace for a later [`Network::backward`].
    pub fn forward(&mut self, batch: ArrayView2<f64>, mode: BnMode) -> Result<Array2<f64>> {
        let (out, trace) = self.forward_traced(batch, mode)?;
        self.last_trace = Some(trace);
        Ok(out)
    }

    /// Eval-mode forward through `&self`; cannot mutate any state.
    pub fn forward_eval(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(batch)?;
        let mut x = batch.to_owned();
        for layer in &self.layers {
            x = match layer {
                Layer::Dense(d) => d.forward(x.view())?,
                Layer::BatchNorm(bn) => bn.forward_eval(x.view())?,
                Layer::Relu => relu(x.view()),
            };
        }
        Ok(x)
    }

    pub fn forward_traced(
        &mut self,
        batch: ArrayView2<f64>,
        mode: BnMode,
    ) -> Result<(Array2<f64>, Trace)> {
        self.check_input(batch)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.to_owned();
        for layer in &mut self.layers {
            x = match layer {
                Layer::Dense(d) => {
                    let out = d.forward(x.view())?;
                    caches.push(Cache::Dense(x));
                    out
                }
                Layer::BatchNorm(bn) => {
                    let (out, cache) = bn.forward_cached(x.view(), mode)?;
                    caches.push(Cache::BatchNorm(cache));
                    out
                }
                Layer::Relu => {
                    let out = relu(x.view());
                    caches.push(Cache::Relu(out.clone()));
                    out
                }
            };
        }
        Ok((x, Trace { caches }))
    }

    /// Backward pass over the trace of the most recent [`Network::forward`].
    ///
    /// Returns a freshly zeroed tape filled with `d loss / d param`.
    pub fn backward(&mut self, grad_out: &Array2<f64>) -> Result<GradientTape> {
        let trace = self
            .last_trace
            .take()
            .ok_or_else(|| Error::state("backward called without a preceding forward pass"))?;
        let mut tape = self.zero_tape();
        self.backward_traced(&trace, grad_out, &mut tape)?;
        Ok(tape)
    }

    /// Accumulates parameter gradients into `tape` and returns `d loss / d input`.
    pub fn backward_traced(
        &self,
        trace: &Trace,
        grad_out: &Array2<f64>,
        tape: &mut GradientTape,
    ) -> Result<Array2<f64>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::state("trace does not belong to this network"));
        }
        if tape.buffers.len() != self.param_tensor_count() {
            return Err(Error::config(
                "gradient tape does not match network parameters",
            ));
        }
        let mut slot = tape.buffers.len();
        let mut grad = grad_out.clone();
        for (layer, cache) in self.layers.iter().zip(&trace.caches).rev() {
            grad = match (layer, cache) {
                (Layer::Dense(d), Cache::Dense(input)) => {
                    slot -= 2;
                    let (w, rest) = tape.buffers[slot..].split_at_mut(1);
                    let pg = (!self.frozen).then(|| (w[0].as_mut_slice(), rest[0].as_mut_slice()));
                    d.backward(input, &grad, pg)
                }
                (Layer::BatchNorm(bn), Cache::BatchNorm(c)) => {
                    slot -= 2;
                    let (g, rest) = tape.buffers[slot..].split_at_mut(1);
                    let pg = (!self.frozen).then(|| (g[0].as_mut_slice(), rest[0].as_mut_slice()));
                    bn.backward(c, &grad, pg)
                }
                (Layer::Relu, Cache::Relu(out)) => {
                    let mut g = grad;
                    g.zip_mut_with(out, |gi, o| {
                        if *o <= 0.0 {
                            *gi = 0.0;
                        }
                    });
                    g
                }
                _ => return Err(Error::state("trace does not belong to this network")),
            };
        }
        Ok(grad)
    }

    pub fn zero_tape(&self) -> GradientTape {
        GradientTape {
            buffers: self.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    fn param_tensor_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(_) | Layer::BatchNorm(_) => 2,
                Layer::Relu => 0,
            })
            .sum()
    }

    /// Trainable tensors in a fixed order: per layer, weights then bias, or gamma then beta.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(d.weights.as_slice().expect("standard layout"));
                    out.push(d.bias.as_slice().expect("standard layout"));
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice().expect("standard layout"));
                    out.push(bn.beta.as_slice().expect("standard layout"));
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.push(d.weights.as_slice_mut().expect("standard layout"));
                    out.push(d.bias.as_slice_mut().expect("standard layout"));
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                    out.push(bn.beta.as_slice_mut().expect("standard layout"));
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Every parameter and running statistic as named tensors under `prefix`.
    pub fn to_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    out.push(NamedTensor::from_array2(
                        format!("{prefix}.{i}.weight"),
                        &d.weights,
                    ));
                    out.push(NamedTensor::from_array1(
                        format!("{prefix}.{i}.bias"),
                        &d.bias,
                    ));
                }
                Layer::BatchNorm(bn) => {
                    out.push(NamedTensor::from_array1(
                        format!("{prefix}.{i}.gamma"),
                        &bn.gamma,
                    ));
                    out.push(NamedTensor::from_array1(
                        format!("{prefix}.{i}.beta"),
                        &bn.beta,
                    ));
                    out.push(NamedTensor::from_array1(
                        format!("{prefix}.{i}.running_mean"),
                        &bn.running_mean,
                    ));
                    out.push(NamedTensor::from_array1(
                        format!("{prefix}.{i}.running_var"),
                        &bn.running_var,
                    ));
                    out.push(NamedTensor::vector(
                        format!("{prefix}.{i}.bn_config"),
                        vec![
                            bn.momentum,
                            bn.epsilon,
                            if bn.populated { 1.0 } else { 0.0 },
                        ],
                    ));
                }
                Layer::Relu => {}
            }
        }
        out
    }

    /// Rebuilds a network from `specs` and fills it from `archive`.
    pub fn from_archive(specs: Vec<LayerSpec>, archive: &Archive, prefix: &str) -> Result<Self> {
        let mut net = Network::new(specs, 0)?;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    d.weights = archive.array2(&format!("{prefix}.{i}.weight"), d.weights.dim())?;
                    d.bias = archive.array1(&format!("{prefix}.{i}.bias"), d.bias.len())?;
                }
                Layer::BatchNorm(bn) => {
                    let dim = bn.dim();
                    bn.gamma = archive.array1(&format!("{prefix}.{i}.gamma"), dim)?;
                    bn.beta = archive.array1(&format!("{prefix}.{i}.beta"), dim)?;
                    bn.running_mean = archive.array1(&format!("{prefix}.{i}.running_mean"), dim)?;
                    bn.running_var = archive.array1(&format!("{prefix}.{i}.running_var"), dim)?;
                    let cfg: Array1<f64> = archive.array1(&format!("{prefix}.{i}.bn_config"), 3)?;
                    bn.momentum = cfg[0];
                    bn.epsilon = cfg[1];
                    bn.populated = cfg[2] != 0.0;
                }
                Layer::Relu => {}
            }
        }
        Ok(net)
    }

    fn check_input(&self, batch: ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::config(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                batch.ncols()
            )));
        }
        if batch.nrows() == 0 {
            return Err(Error::config("empty batch"));
        }
        Ok(())
    }
}

fn check_chain(width: &mut Option<usize>, next: usize) -> Result<()> {
    match *width {
        Some(w) if w != next => Err(Error::config(format!(
            "layer expects width {next} but previous layer produces {w}"
        ))),
        _ => Ok(()),
    }
}

/// Shorthand for `dense -> [batchnorm] -> [relu]` blocks.
pub fn block(input: usize, output: usize, batchnorm: bool, activation: bool) -> Vec<LayerSpec> {
    let mut v = vec![LayerSpec::Dense { input, output }];
    if batchnorm {
        v.push(LayerSpec::BatchNorm { dim: output });
    }
    if activation {
        v.push(LayerSpec::Relu);
    }
    v
}
