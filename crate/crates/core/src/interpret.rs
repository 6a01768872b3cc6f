//! Gradient saliency maps reduced to one score per channel.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::model::{Lgg, ModelError};
use crate::montage::MontageGraph;
use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("saliency graph: {0}")]
    Tensor(#[from] TensorError),
    #[error("non-finite saliency gradient")]
    NonFinite,
    #[error("channel sets differ between saliency maps")]
    ChannelMismatch,
    #[error("no saliency maps to aggregate")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("topomap: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Divided by the largest score.
    MaxScaled,
    /// Every raw score was zero, so nothing was scaled.
    AllZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub channels: Vec<String>,
    /// Scores in `[0, 1]`.
    pub scores: Vec<f64>,
    /// Scores before normalization.
    pub raw: Vec<f64>,
    pub normalization: Normalization,
}

impl SaliencyMap {
    pub fn from_raw(channels: Vec<String>, raw: Vec<f64>) -> Self {
        let max = raw.iter().fold(0.0f64, |m, &v| m.max(v));
        let (scores, normalization) = if max > 0.0 {
            (raw.iter().map(|v| v / max).collect(), Normalization::MaxScaled)
        } else {
            (raw.clone(), Normalization::AllZero)
        };
        Self {
            channels,
            scores,
            raw,
            normalization,
        }
    }

    /// Channel indices ordered by descending score; ties keep channel order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// Gradient of the predicted-class logit with respect to a single input
/// `[channels, len]`, where `logits` records the network on the graph and
/// returns `[1, classes]`.
pub fn input_gradient<F>(input: &Tensor, logits: F) -> Result<(usize, Tensor), InterpretError>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var, InterpretError>,
{
    let shape = input.shape().to_vec();
    let mut g = Graph::new();
    let x = g.param(input.clone().reshape(&[1, shape[0], shape[1]])?)?;
    let out = logits(&mut g, x)?;
    let row = g.value(out).data();
    let predicted = row
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
    let target = g.element(out, &[0, predicted])?;
    let grads = g.backward(target)?;
    let grad = grads.wrt(x).reshape(&shape)?;
    if !grad.is_finite() {
        return Err(InterpretError::NonFinite);
    }
    Ok((predicted, grad))
}

/// Mean absolute gradient over time for each channel.
pub fn channel_scores(grad: &Tensor) -> Vec<f64> {
    let len = grad.shape()[1];
    grad.data()
        .chunks(len)
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>() / len as f64)
        .collect()
}

/// Eval-mode saliency of one full-montage trial `[montage channels, len]`,
/// over the channels the model reads.
pub fn saliency(model: &Lgg, montage: &MontageGraph, signal: &Tensor) -> Result<SaliencyMap, InterpretError> {
    let input = model.batch_input(&[signal])?;
    let dims = input.shape()[1..].to_vec();
    let (_, grad) = input_gradient(&input.reshape(&dims)?, |g, x| Ok(model.forward_eval(g, x)?.logits))?;
    let names = model.included().iter().map(|&i| montage.channels()[i].clone()).collect();
    Ok(SaliencyMap::from_raw(names, channel_scores(&grad)))
}

/// Per-channel mean of the normalized scores, normalized again.
pub fn aggregate_saliency(maps: &[SaliencyMap]) -> Result<SaliencyMap, InterpretError> {
    let first = maps.first().ok_or(InterpretError::Empty)?;
    if maps.iter().any(|m| m.channels != first.channels) {
        return Err(InterpretError::ChannelMismatch);
    }
    let n = maps.len() as f64;
    let mean = (0..first.channels.len())
        .map(|c| maps.iter().map(|m| m.scores[c]).sum::<f64>() / n)
        .collect();
    Ok(SaliencyMap::from_raw(first.channels.clone(), mean))
}

const HEADER: &str = "channel,score";

/// Two-column text, one row per channel, scores to 15 significant digits.
pub fn topomap_text(map: &SaliencyMap) -> String {
    let mut out = format!("{HEADER}\n");
    for (name, s) in map.channels.iter().zip(&map.scores) {
        writeln!(out, "{name},{s:.14e}").expect("write to string");
    }
    out
}

pub fn export_topomap(map: &SaliencyMap, path: &Path) -> Result<(), InterpretError> {
    std::fs::write(path, topomap_text(map)).map_err(|source| InterpretError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads scores as written; they are not rescaled.
pub fn parse_topomap(text: &str) -> Result<SaliencyMap, InterpretError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(InterpretError::Format(format!("missing `{HEADER}` header")));
    }
    let (mut channels, mut scores) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (name, score) = line
            .split_once(',')
            .ok_or_else(|| InterpretError::Format(format!("row {}: expected `channel,score`", i + 2)))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| InterpretError::Format(format!("row {}: bad score `{score}`", i + 2)))?;
        channels.push(name.trim().to_string());
        scores.push(score);
    }
    let normalization = if scores.iter().any(|&s| s != 0.0) {
        Normalization::MaxScaled
    } else {
        Normalization::AllZero
    };
    Ok(SaliencyMap {
        channels,
        raw: scores.clone(),
        scores,
        normalization,
    })
}

pub fn import_topomap(path: &Path) -> Result<SaliencyMap, InterpretError> {
    let text = std::fs::read_to_string(path).map_err(|source| InterpretError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_topomap(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::{numeric_gradient, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn linear_readout_of_one_channel() {
        // logits = [sum_t x[0, t] * w_t, 0]
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(0.5..1.5)).collect();
        let input = Tensor::new(vec![3, 8], (0..24).map(|i| i as f64).collect()).unwrap();
        let weights = Tensor::new(vec![8, 1], w.clone()).unwrap();
        let (pred, grad) = input_gradient(&input, |g, x| {
            let row = g.slice(x, 1, 0, 1)?;
            let row = g.reshape(row, &[1, 8])?;
            let w = g.constant(weights.clone())?;
            let a = g.matmul(row, w)?;
            let zero = g.constant(Tensor::zeros(&[1, 1]))?;
            Ok(g.concat(&[a, zero], 1)?)
        })
        .unwrap();
        assert_eq!(pred, 0);
        let map = SaliencyMap::from_raw(names(3), channel_scores(&grad));
        assert_eq!(map.scores, vec![1.0, 0.0, 0.0]);
        let mean_w = w.iter().sum::<f64>() / 8.0;
        assert!((map.raw[0] - mean_w).abs() < 1e-12);
    }

    fn toy_model() -> (Lgg, MontageGraph) {
        let montage = MontageGraph::parse("channels: a, b, c, d\nlocal l: a, b\nlocal r: c, d\n").unwrap();
        let config = ModelConfig {
            sample_rate: 16.0,
            levels: 2,
            kernels: 2,
            pool_window: 4,
            pool_stride: 4,
            pool2_window: 2,
            pool2_stride: 2,
            hidden: 3,
            ..ModelConfig::default()
        };
        (Lgg::new(config, &montage, 32, 4).unwrap(), montage)
    }

    #[test]
    fn zero_head_gives_zero_map() {
        let (mut model, montage) = toy_model();
        let i = model.params().index_of("head.weight").unwrap();
        let w = &mut model.params_mut().trainable[i].1;
        *w = Tensor::zeros(w.shape());
        let signal = Tensor::full(&[4, 32], 0.3);
        let map = saliency(&model, &montage, &signal).unwrap();
        assert_eq!(map.normalization, Normalization::AllZero);
        assert!(map.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (model, _) = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = Tensor::new(vec![4, 32], (0..128).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (pred, grad) = input_gradient(&input, |g, x| Ok(model.forward_eval(g, x)?.logits)).unwrap();
        let logit = |p: &[f64]| {
            let t = Tensor::new(vec![1, 4, 32], p.to_vec())?;
            Ok(model.logits(&t).unwrap().data()[pred])
        };
        let numeric = numeric_gradient(logit, input.data(), 1e-5).unwrap();
        for _ in 0..20 {
            let k = rng.random_range(0..128);
            let err = relative_error(grad.data()[k], numeric[k]);
            assert!(err < 1e-4, "coordinate {k}: {} vs {}", grad.data()[k], numeric[k]);
        }
    }

    #[test]
    fn aggregation() {
        let a = SaliencyMap::from_raw(names(2), vec![1.0, 0.0]);
        let b = SaliencyMap::from_raw(names(2), vec![0.0, 1.0]);
        let m = aggregate_saliency(&[a.clone(), b]).unwrap();
        assert_eq!(m.raw, vec![0.5, 0.5]);
        assert_eq!(m.scores, vec![1.0, 1.0]);
        assert_eq!(aggregate_saliency(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(aggregate_saliency(&[a.clone(), a.clone()]).unwrap(), a);
        let other = SaliencyMap::from_raw(names(3), vec![1.0; 3]);
        assert!(matches!(aggregate_saliency(&[a, other]), Err(InterpretError::ChannelMismatch)));
        assert!(matches!(aggregate_saliency(&[]), Err(InterpretError::Empty)));
    }

    #[test]
    fn topomap_round_trip() {
        let map = SaliencyMap::from_raw(names(5), vec![0.1, 0.123_456_789_012_345_67, 1.0 / 3.0, 0.0, 0.9]);
        let text = topomap_text(&map);
        assert_eq!(text.lines().filter(|l| *l == HEADER).count(), 1);
        assert_eq!(text.lines().count(), 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        export_topomap(&map, &path).unwrap();
        let back = import_topomap(&path).unwrap();
        assert_eq!(back.channels, map.channels);
        for (a, b) in back.scores.iter().zip(&map.scores) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(parse_topomap("x,y\n").is_err());
    }
}
