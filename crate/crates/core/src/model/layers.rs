//! Individual network stages as graph compositions. All tensors carry a
//! leading batch axis.

use rand::RngCore;

use super::{at, ModelConfig, ModelError};
use crate::tensor::{BatchNormMode, BatchNormSettings, Graph, Var};

/// One temporal level: convolution with `t` shared kernels over every channel,
/// leaky ReLU, then average pooling. `[B, c, l]` to `[B, t, c, f_k]`.
pub fn temporal_level(g: &mut Graph, x: Var, kernels: Var, bias: Var, config: &ModelConfig) -> Result<Var, ModelError> {
    let conv = g.conv1d_valid(x, kernels, bias, 1).map_err(at("temporal convolution"))?;
    let act = g.leaky_relu(conv, config.leaky_slope).map_err(at("temporal activation"))?;
    g.avg_pool1d(act, config.pool_window, config.pool_stride)
        .map_err(at("temporal pooling"))
}

/// Concatenates levels along the feature axis and normalizes per kernel depth.
pub fn multi_scale_concat(
    g: &mut Graph,
    levels: &[Var],
    gamma: Var,
    beta: Var,
    mode: BatchNormMode<'_>,
    settings: BatchNormSettings,
) -> Result<Var, ModelError> {
    let z = g.concat(levels, 3).map_err(at("multi-scale concat"))?;
    g.batch_norm(z, gamma, beta, 1, mode, settings)
        .map_err(at("temporal batch norm"))
}

/// 1x1 fusion across kernel maps: `sum_j w_j * Z[:, j] + b`, depth axis removed.
/// `[B, t, c, F]` to `[B, c, F]`.
pub fn kernel_fusion(g: &mut Graph, z: Var, weights: Var, bias: Var) -> Result<Var, ModelError> {
    let s = g.axis_weighted_sum(z, weights, 1).map_err(at("kernel fusion"))?;
    g.add(s, bias).map_err(at("kernel fusion"))
}

/// `AvgPool(ReLU(W ∘ Z - b))` along the feature axis. `[B, c, F]` to `[B, c, f']`.
pub fn local_filter(g: &mut Graph, z: Var, weight: Var, bias: Var, window: usize, stride: usize) -> Result<Var, ModelError> {
    let scaled = g.hadamard(z, weight).map_err(at("local filter"))?;
    let shifted = g.sub(scaled, bias).map_err(at("local filter"))?;
    let act = g.relu(shifted).map_err(at("local filter"))?;
    g.avg_pool1d(act, window, stride).map_err(at("local pooling"))
}

/// Mean of member-channel rows per local graph. `[B, c, f']` to `[B, P, f']`.
pub fn local_aggregate(g: &mut Graph, z: Var, groups: &[Vec<usize>]) -> Result<Var, ModelError> {
    g.group_mean(z, 1, groups).map_err(at("local aggregation"))
}

/// `ReLU(A · Z · W - b)`. `[B, P, f]` to `[B, P, h]`.
pub fn gcn_layer(g: &mut Graph, z: Var, adjacency: Var, weight: Var, bias: Var) -> Result<Var, ModelError> {
    let az = g.matmul(adjacency, z).map_err(at("gcn layer"))?;
    let azw = g.matmul(az, weight).map_err(at("gcn layer"))?;
    let shifted = g.sub(azw, bias).map_err(at("gcn layer"))?;
    g.relu(shifted).map_err(at("gcn layer"))
}

/// `ReLU(A · (BN(Z) · W - b))`, with batch norm per feature over batch and nodes.
#[allow(clippy::too_many_arguments)]
pub fn global_filter(
    g: &mut Graph,
    z: Var,
    gamma: Var,
    beta: Var,
    mode: BatchNormMode<'_>,
    settings: BatchNormSettings,
    adjacency: Var,
    weight: Var,
    bias: Var,
) -> Result<Var, ModelError> {
    let normed = g
        .batch_norm(z, gamma, beta, 2, mode, settings)
        .map_err(at("global batch norm"))?;
    let zw = g.matmul(normed, weight).map_err(at("global filter"))?;
    let shifted = g.sub(zw, bias).map_err(at("global filter"))?;
    let mixed = g.matmul(adjacency, shifted).map_err(at("global filter"))?;
    g.relu(mixed).map_err(at("global filter"))
}

/// Flatten, dropout (only when `rng` is given), then affine map to class
/// logits. `[B, n, f]` to `[B, classes]`.
pub fn classify_head(
    g: &mut Graph,
    z: Var,
    weight: Var,
    bias: Var,
    dropout: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var, ModelError> {
    let shape = g.value(z).shape().to_vec();
    let batch = shape[0];
    let width: usize = shape[1..].iter().product();
    let flat = g.reshape(z, &[batch, width]).map_err(at("head"))?;
    let dropped = match rng {
        Some(r) => g.dropout(flat, dropout, true, r).map_err(at("head dropout"))?,
        None => flat,
    };
    let scores = g.matmul(dropped, weight).map_err(at("head"))?;
    g.add(scores, bias).map_err(at("head"))
}
