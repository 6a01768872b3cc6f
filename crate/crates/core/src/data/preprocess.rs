//! Baseline removal, FIR band-pass, decimation and average referencing.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{DataError, TrialSample};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    /// Drop the leading baseline segment.
    Discard,
    /// Subtract each channel's baseline mean, then drop the segment.
    Subtract,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Hann,
    Rectangular,
}

impl Window {
    fn weight(self, n: usize, len: usize) -> f64 {
        if len == 1 {
            return 1.0;
        }
        let x = 2.0 * PI * n as f64 / (len - 1) as f64;
        match self {
            Window::Hamming => 0.54 - 0.46 * x.cos(),
            Window::Hann => 0.5 - 0.5 * x.cos(),
            Window::Rectangular => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub baseline_seconds: f64,
    pub baseline_mode: BaselineMode,
    pub low_hz: f64,
    pub high_hz: f64,
    /// Odd, so the group delay is a whole number of samples.
    pub fir_taps: usize,
    pub window: Window,
    pub target_rate: f64,
    pub average_reference: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            baseline_seconds: 3.0,
            baseline_mode: BaselineMode::Discard,
            low_hz: 4.0,
            high_hz: 45.0,
            fir_taps: 255,
            window: Window::Hamming,
            target_rate: 128.0,
            average_reference: true,
        }
    }
}

fn sinc_lowpass(cutoff: f64, m: f64) -> f64 {
    // ideal low-pass impulse response, cutoff in cycles per sample
    if m == 0.0 {
        2.0 * cutoff
    } else {
        (2.0 * PI * cutoff * m).sin() / (PI * m)
    }
}

/// Windowed-sinc band-pass taps. Only the first half is computed and then
/// mirrored, so the response is exactly symmetric.
pub fn bandpass_taps(low_hz: f64, high_hz: f64, rate: f64, taps: usize, window: Window) -> Result<Vec<f64>, DataError> {
    if taps == 0 || taps.is_multiple_of(2) {
        return Err(DataError::Preprocess(format!("FIR tap count must be odd, got {taps}")));
    }
    if !(0.0 <= low_hz && low_hz < high_hz && high_hz < rate / 2.0) {
        return Err(DataError::Preprocess(format!(
            "band {low_hz}-{high_hz} Hz is not within (0, {}) Hz",
            rate / 2.0
        )));
    }
    let (fl, fh) = (low_hz / rate, high_hz / rate);
    let mid = (taps - 1) / 2;
    let mut h = vec![0.0; taps];
    for n in 0..=mid {
        let m = n as f64 - mid as f64;
        let v = window.weight(n, taps) * (sinc_lowpass(fh, m) - sinc_lowpass(fl, m));
        h[n] = v;
        h[taps - 1 - n] = v;
    }
    Ok(h)
}

/// Magnitude of the filter's frequency response at `hz`.
pub fn frequency_response(taps: &[f64], hz: f64, rate: f64) -> f64 {
    let w = 2.0 * PI * hz / rate;
    let (re, im) = taps
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(re, im), (n, &h)| (re + h * (w * n as f64).cos(), im - h * (w * n as f64).sin()));
    re.hypot(im)
}

/// Zero-delay filtering: reflect-pad by the group delay on both sides, then
/// keep only fully overlapping outputs. Output length equals input length.
fn filter_centered(x: &[f64], h: &[f64]) -> Vec<f64> {
    let d = (h.len() - 1) / 2;
    let n = x.len();
    let mut padded = Vec::with_capacity(n + 2 * d);
    padded.extend((1..=d).rev().map(|i| x[i]));
    padded.extend_from_slice(x);
    padded.extend((1..=d).map(|i| x[n - 1 - i]));
    (0..n)
        .map(|i| h.iter().zip(&padded[i..i + h.len()]).map(|(a, b)| a * b).sum())
        .collect()
}

/// Returns the trial at `config.target_rate` with the baseline removed,
/// band-limited, and (by default) average-referenced.
pub fn preprocess(trial: &TrialSample, config: &PreprocessConfig) -> Result<TrialSample, DataError> {
    trial.validate()?;
    let rate = trial.sample_rate;
    let ratio = rate / config.target_rate;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 {
        return Err(DataError::Preprocess(format!(
            "source rate {rate} Hz is not an integer multiple of {} Hz",
            config.target_rate
        )));
    }
    let factor = factor as usize;
    let taps = bandpass_taps(config.low_hz, config.high_hz, rate, config.fir_taps, config.window)?;
    let baseline = (config.baseline_seconds * rate).round() as usize;
    let warmup = (taps.len() - 1) / 2;
    let (channels, len) = (trial.channels(), trial.samples());
    if len <= baseline + warmup {
        return Err(DataError::Preprocess(format!(
            "trial has {len} samples, needs more than {baseline} baseline + {warmup} filter warm-up"
        )));
    }
    let kept = len - baseline;
    let out_len = kept / factor;
    let mut out = vec![0.0; channels * out_len];
    for c in 0..channels {
        let row = &trial.signal.data()[c * len..(c + 1) * len];
        let offset = match config.baseline_mode {
            BaselineMode::Discard => 0.0,
            BaselineMode::Subtract if baseline > 0 => row[..baseline].iter().sum::<f64>() / baseline as f64,
            BaselineMode::Subtract => 0.0,
        };
        let body: Vec<f64> = row[baseline..].iter().map(|v| v - offset).collect();
        let filtered = filter_centered(&body, &taps);
        for (i, o) in out[c * out_len..(c + 1) * out_len].iter_mut().enumerate() {
            *o = filtered[i * factor];
        }
    }
    if config.average_reference {
        for i in 0..out_len {
            let mean = (0..channels).map(|c| out[c * out_len + i]).sum::<f64>() / channels as f64;
            for c in 0..channels {
                out[c * out_len + i] -= mean;
            }
        }
    }
    Ok(TrialSample {
        signal: Tensor::new(vec![channels, out_len], out).map_err(|e| DataError::Preprocess(e.to_string()))?,
        sample_rate: config.target_rate,
        subject_id: trial.subject_id,
        trial_id: trial.trial_id,
        ratings: trial.ratings.clone(),
        labels: trial.labels.clone(),
    })
}
