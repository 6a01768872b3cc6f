//! The local-global graph network: multi-scale temporal convolution, kernel
//! fusion, local graph filtering and aggregation, a global graph convolution
//! with a trainable symmetric adjacency, and a softmax head.

mod checkpoint;
pub mod layers;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::montage::{hex_digest, MontageGraph};
use crate::tensor::{softmax_rows, BatchNormMode, BatchNormSettings, Graph, RunningStats, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{layer}: {source}")]
    Layer {
        layer: &'static str,
        #[source]
        source: TensorError,
    },
    #[error("input has shape {found:?}, model expects [batch, {channels}, {len}]")]
    Input {
        found: Vec<usize>,
        channels: usize,
        len: usize,
    },
}

fn at(layer: &'static str) -> impl Fn(TensorError) -> ModelError {
    move |source| ModelError::Layer { layer, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Sampling rate of the model input in Hz; sets the temporal kernel widths.
    pub sample_rate: f64,
    /// Ratio between successive temporal kernel widths.
    pub alpha: f64,
    /// Number of temporal kernel levels.
    pub levels: usize,
    /// Kernels per level.
    pub kernels: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    /// Pooling applied after local filtering.
    pub pool2_window: usize,
    pub pool2_stride: usize,
    /// Hidden width of the global graph convolution.
    pub hidden: usize,
    pub num_gcn_layers: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Bypass local filtering; every channel becomes a global graph node.
    pub skip_local: bool,
    /// Bypass the global graph convolution and feed local embeddings to the head.
    pub skip_global: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 128.0,
            alpha: 0.5,
            levels: 3,
            kernels: 5,
            pool_window: 16,
            pool_stride: 16,
            pool2_window: 16,
            pool2_stride: 16,
            hidden: 32,
            num_gcn_layers: 1,
            dropout: 0.5,
            leaky_slope: 0.01,
            classes: 2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            skip_local: false,
            skip_global: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return fail(format!("sample_rate must be positive, got {}", self.sample_rate));
        }
        if self.levels == 0 || self.kernels == 0 || self.hidden == 0 || self.num_gcn_layers == 0 {
            return fail("levels, kernels, hidden and num_gcn_layers must be >= 1".into());
        }
        if [self.pool_window, self.pool_stride, self.pool2_window, self.pool2_stride].contains(&0) {
            return fail("pool windows and strides must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return fail(format!("leaky_slope must lie in [0, 1), got {}", self.leaky_slope));
        }
        if self.classes < 2 {
            return fail("classes must be >= 2".into());
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail("bn_eps must be positive and bn_momentum in [0, 1]".into());
        }
        if self.skip_local && self.skip_global {
            return fail("skip_local and skip_global cannot both be set: no spatial layer would remain".into());
        }
        temporal_kernel_sizes(self.sample_rate, self.alpha, self.levels)?;
        Ok(())
    }

    fn bn_settings(&self) -> BatchNormSettings {
        BatchNormSettings {
            eps: self.bn_eps,
            momentum: self.bn_momentum,
        }
    }

    /// Canonical text used for checkpoint digests.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Widths `round(alpha^k * sample_rate)` for `k = 1..=levels`.
pub fn temporal_kernel_sizes(sample_rate: f64, alpha: f64, levels: usize) -> Result<Vec<usize>, ModelError> {
    let widths: Vec<usize> = (1..=levels)
        .map(|k| (alpha.powi(k as i32) * sample_rate).round() as usize)
        .collect();
    if widths.iter().any(|&w| w < 1) {
        return Err(ModelError::Config(format!(
            "temporal kernel widths {widths:?} fall below 1 (alpha^levels * sample_rate < 1)"
        )));
    }
    if widths.windows(2).any(|p| p[1] >= p[0]) {
        return Err(ModelError::Config(format!("temporal kernel widths {widths:?} are not strictly decreasing")));
    }
    Ok(widths)
}

/// Every intermediate extent, derived from the configuration, input size and montage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims {
    pub channels: usize,
    pub input_len: usize,
    pub widths: Vec<usize>,
    pub level_lens: Vec<usize>,
    /// Sum of pooled lengths across levels.
    pub feature_len: usize,
    /// Feature length after local filtering (equals `feature_len` with `skip_local`).
    pub local_len: usize,
    /// Global graph node count: local graphs, or channels with `skip_local`.
    pub nodes: usize,
    pub head_in: usize,
}

fn pooled(len: usize, window: usize, stride: usize) -> Option<usize> {
    (len >= window).then(|| (len - window) / stride + 1)
}

impl Dims {
    pub fn compute(config: &ModelConfig, channels: usize, input_len: usize, local_graphs: usize) -> Result<Self, ModelError> {
        config.validate()?;
        let widths = temporal_kernel_sizes(config.sample_rate, config.alpha, config.levels)?;
        let mut level_lens = Vec::with_capacity(widths.len());
        for &w in &widths {
            if w > input_len {
                return Err(ModelError::Config(format!(
                    "trial length {input_len} is shorter than temporal kernel width {w}"
                )));
            }
            let len = pooled(input_len - w + 1, config.pool_window, config.pool_stride).ok_or_else(|| {
                ModelError::Config(format!(
                    "convolution output {} is shorter than pool window {}",
                    input_len - w + 1,
                    config.pool_window
                ))
            })?;
            level_lens.push(len);
        }
        let feature_len = level_lens.iter().sum();
        let (nodes, local_len) = if config.skip_local {
            (channels, feature_len)
        } else {
            let l = pooled(feature_len, config.pool2_window, config.pool2_stride).ok_or_else(|| {
                ModelError::Config(format!(
                    "feature length {feature_len} is shorter than local pool window {}",
                    config.pool2_window
                ))
            })?;
            (local_graphs, l)
        };
        let head_in = nodes * if config.skip_global { local_len } else { config.hidden };
        Ok(Self {
            channels,
            input_len,
            widths,
            level_lens,
            feature_len,
            local_len,
            nodes,
            head_in,
        })
    }
}

/// Trainable arrays in a fixed order, plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub trainable: Vec<(String, Tensor)>,
    pub bn_temporal: RunningStats,
    pub bn_global: Option<RunningStats>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.trainable.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.trainable.iter().position(|(n, _)| n == name)
    }

    pub fn is_finite(&self) -> bool {
        self.trainable.iter().all(|(_, t)| t.is_finite())
    }
}

/// Batch-norm behaviour for one forward pass.
pub enum StatsMode<'a> {
    Train {
        temporal: &'a mut RunningStats,
        global: Option<&'a mut RunningStats>,
    },
    Eval {
        temporal: &'a RunningStats,
        global: Option<&'a RunningStats>,
    },
}

/// Result of a forward pass recorded on a graph.
pub struct Forward {
    /// `[batch, classes]` pre-softmax scores.
    pub logits: Var,
    /// Graph leaves of the trainable parameters, in [`ModelParams::trainable`] order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lgg {
    config: ModelConfig,
    dims: Dims,
    groups: Vec<Vec<usize>>,
    /// Montage channel indices fed to the model, in dataset order.
    included: Vec<usize>,
    montage_digest: String,
    params: ModelParams,
}

fn xavier<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, bound)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..=bound)).collect()).expect("shape")
}

impl Lgg {
    /// Builds a model with freshly initialized parameters.
    pub fn new(config: ModelConfig, montage: &MontageGraph, input_len: usize, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let included = montage.included();
        let dims = Dims::compute(&config, included.len(), input_len, montage.p())?;
        let params = init_params(&config, &dims, &mut rng);
        Ok(Self {
            config,
            dims,
            groups: montage.model_groups(),
            included,
            montage_digest: montage.digest(),
            params,
        })
    }

    /// Rebuilds a model around existing parameters, checking every shape.
    pub fn with_params(config: ModelConfig, montage: &MontageGraph, input_len: usize, params: ModelParams) -> Result<Self, ModelError> {
        let template = Self::new(config, montage, input_len, 0)?;
        let names_match = template.params.trainable.len() == params.trainable.len()
            && template
                .params
                .trainable
                .iter()
                .zip(&params.trainable)
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
        let stats_match = template.params.bn_temporal.len() == params.bn_temporal.len()
            && template.params.bn_global.as_ref().map(RunningStats::len) == params.bn_global.as_ref().map(RunningStats::len);
        if !names_match || !stats_match {
            return Err(ModelError::Config("parameter set does not match the model configuration".into()));
        }
        Ok(Self { params, ..template })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn included(&self) -> &[usize] {
        &self.included
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn montage_digest(&self) -> &str {
        &self.montage_digest
    }

    /// Digest of the configuration and the input extents it was built for.
    pub fn config_digest(&self) -> String {
        let text = format!(
            "{}channels = {}\ninput_len = {}\n",
            self.config.canonical(),
            self.dims.channels,
            self.dims.input_len
        );
        hex_digest(text.as_bytes())
    }

    /// Stacks full-montage signals `[montage channels, len]` into a model input
    /// `[batch, included channels, len]`.
    pub fn batch_input(&self, signals: &[&Tensor]) -> Result<Tensor, ModelError> {
        let len = self.dims.input_len;
        let mut data = Vec::with_capacity(signals.len() * self.included.len() * len);
        for s in signals {
            let shape = s.shape();
            if shape.len() != 2 || shape[1] != len || self.included.iter().any(|&i| i >= shape[0]) {
                return Err(ModelError::Input {
                    found: shape.to_vec(),
                    channels: self.dims.channels,
                    len,
                });
            }
            for &c in &self.included {
                data.extend_from_slice(&s.data()[c * len..(c + 1) * len]);
            }
        }
        Tensor::new(vec![signals.len(), self.dims.channels, len], data).map_err(at("input"))
    }

    /// Records a training-mode forward pass (batch statistics, dropout active).
    pub fn forward_train(&mut self, g: &mut Graph, x: Var, rng: &mut dyn RngCore) -> Result<Forward, ModelError> {
        let (trainable, temporal, global) = (
            &self.params.trainable,
            &mut self.params.bn_temporal,
            self.params.bn_global.as_mut(),
        );
        let stats = StatsMode::Train { temporal, global };
        run(&self.config, &self.dims, &self.groups, trainable, stats, g, x, Some(rng))
    }

    /// Records an eval-mode forward pass (running statistics, no dropout).
    pub fn forward_eval(&self, g: &mut Graph, x: Var) -> Result<Forward, ModelError> {
        let stats = StatsMode::Eval {
            temporal: &self.params.bn_temporal,
            global: self.params.bn_global.as_ref(),
        };
        run(&self.config, &self.dims, &self.groups, &self.params.trainable, stats, g, x, None)
    }

    /// Eval-mode logits `[batch, classes]` for a model input `[batch, c, len]`.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let x = g.constant(input.clone()).map_err(at("input"))?;
        let f = self.forward_eval(&mut g, x)?;
        Ok(g.value(f.logits).clone())
    }

    /// Eval-mode mean cross-entropy and its gradient for every trainable array.
    pub fn eval_loss_and_grads(&self, input: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut g = Graph::new();
        let x = g.constant(input.clone()).map_err(at("input"))?;
        let f = self.forward_eval(&mut g, x)?;
        let loss = g.softmax_cross_entropy(f.logits, labels).map_err(at("loss"))?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss).map_err(at("backward"))?;
        Ok((value, f.params.iter().map(|&v| grads.wrt(v)).collect()))
    }

    /// Eval-mode mean cross-entropy.
    pub fn eval_loss(&self, input: &Tensor, labels: &[usize]) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let x = g.constant(input.clone()).map_err(at("input"))?;
        let f = self.forward_eval(&mut g, x)?;
        let loss = g.softmax_cross_entropy(f.logits, labels).map_err(at("loss"))?;
        Ok(g.value(loss).data()[0])
    }

    /// Eval-mode class probabilities `[batch, classes]`.
    pub fn predict_proba(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        softmax_rows(&self.logits(input)?).map_err(at("softmax"))
    }
}

fn init_params<R: Rng + ?Sized>(config: &ModelConfig, dims: &Dims, rng: &mut R) -> ModelParams {
    let t = config.kernels;
    let mut p: Vec<(String, Tensor)> = Vec::new();
    for (k, &w) in dims.widths.iter().enumerate() {
        p.push((format!("temporal.{k}.weight"), xavier(rng, &[t, w], w, t * w)));
        p.push((format!("temporal.{k}.bias"), Tensor::zeros(&[t])));
    }
    p.push(("bn_temporal.gamma".into(), Tensor::full(&[t], 1.0)));
    p.push(("bn_temporal.beta".into(), Tensor::zeros(&[t])));
    p.push(("fusion.weight".into(), xavier(rng, &[t], t, 1)));
    p.push(("fusion.bias".into(), Tensor::zeros(&[1])));
    if !config.skip_local {
        let (c, f) = (dims.channels, dims.feature_len);
        p.push(("local.weight".into(), xavier(rng, &[c, f], f, c)));
        p.push(("local.bias".into(), Tensor::zeros(&[c, 1])));
    }
    let n = dims.nodes;
    if !config.skip_global {
        let (f, h) = (dims.local_len, config.hidden);
        p.push(("bn_global.gamma".into(), Tensor::full(&[f], 1.0)));
        p.push(("bn_global.beta".into(), Tensor::zeros(&[f])));
        p.push((
            "global.adjacency".into(),
            uniform(rng, &[n * (n + 1) / 2], (1.0 / n as f64).sqrt()),
        ));
        p.push(("global.weight".into(), xavier(rng, &[f, h], f, h)));
        p.push(("global.bias".into(), Tensor::zeros(&[n, 1])));
        for m in 1..config.num_gcn_layers {
            p.push((format!("gcn.{m}.weight"), xavier(rng, &[h, h], h, h)));
            p.push((format!("gcn.{m}.bias"), Tensor::zeros(&[n, 1])));
        }
    }
    p.push((
        "head.weight".into(),
        xavier(rng, &[dims.head_in, config.classes], dims.head_in, config.classes),
    ));
    p.push(("head.bias".into(), Tensor::zeros(&[config.classes])));
    ModelParams {
        trainable: p,
        bn_temporal: RunningStats::new(t),
        bn_global: (!config.skip_global).then(|| RunningStats::new(dims.local_len)),
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &ModelConfig,
    dims: &Dims,
    groups: &[Vec<usize>],
    trainable: &[(String, Tensor)],
    stats: StatsMode<'_>,
    g: &mut Graph,
    x: Var,
    rng: Option<&mut dyn RngCore>,
) -> Result<Forward, ModelError> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 3 || shape[1] != dims.channels || shape[2] != dims.input_len {
        return Err(ModelError::Input {
            found: shape,
            channels: dims.channels,
            len: dims.input_len,
        });
    }
    let mut vars = Vec::with_capacity(trainable.len());
    for (_, t) in trainable {
        vars.push(g.param(t.clone()).map_err(at("parameters"))?);
    }
    let v = |name: &str| -> Var {
        let i = trainable.iter().position(|(n, _)| n == name).expect("parameter present");
        vars[i]
    };
    let settings = config.bn_settings();
    let (temporal_mode, global_mode) = match stats {
        StatsMode::Train { temporal, global } => (BatchNormMode::Train(temporal), global.map(BatchNormMode::Train)),
        StatsMode::Eval { temporal, global } => (BatchNormMode::Eval(temporal), global.map(BatchNormMode::Eval)),
    };

    let mut levels = Vec::with_capacity(dims.widths.len());
    for k in 0..dims.widths.len() {
        let w = v(&format!("temporal.{k}.weight"));
        let b = v(&format!("temporal.{k}.bias"));
        levels.push(layers::temporal_level(g, x, w, b, config)?);
    }
    let z = layers::multi_scale_concat(
        g,
        &levels,
        v("bn_temporal.gamma"),
        v("bn_temporal.beta"),
        temporal_mode,
        settings,
    )?;
    let fused = layers::kernel_fusion(g, z, v("fusion.weight"), v("fusion.bias"))?;

    let nodes = if config.skip_local {
        fused
    } else {
        let filtered = layers::local_filter(
            g,
            fused,
            v("local.weight"),
            v("local.bias"),
            config.pool2_window,
            config.pool2_stride,
        )?;
        layers::local_aggregate(g, filtered, groups)?
    };

    let embedded = if config.skip_global {
        nodes
    } else {
        let mode = global_mode.expect("global batch-norm statistics present");
        let adjacency = g
            .symmetric_from_triu(v("global.adjacency"), dims.nodes)
            .map_err(at("global adjacency"))?;
        let mut z = layers::global_filter(
            g,
            nodes,
            v("bn_global.gamma"),
            v("bn_global.beta"),
            mode,
            settings,
            adjacency,
            v("global.weight"),
            v("global.bias"),
        )?;
        for m in 1..config.num_gcn_layers {
            z = layers::gcn_layer(g, z, adjacency, v(&format!("gcn.{m}.weight")), v(&format!("gcn.{m}.bias")))?;
        }
        z
    };
    let logits = layers::classify_head(g, embedded, v("head.weight"), v("head.bias"), config.dropout, rng)?;
    Ok(Forward { logits, params: vars })
}
