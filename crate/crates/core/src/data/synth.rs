//! Synthetic labeled EEG-like trials.
//!
//! Every channel carries Gaussian noise. High-class trials additionally carry
//! a sinusoid of random phase on the discriminative channels.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dimension, Label, TrialSample, DEFAULT_THRESHOLD};
use crate::montage::DEAP32;
use crate::seed::derived_rng;
use crate::tensor::Tensor;

const RATING_NAMES: [&str; 4] = ["arousal", "dominance", "liking", "valence"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub channels: usize,
    /// Trials per subject.
    pub trials: usize,
    pub subjects: usize,
    pub sample_rate: f64,
    /// Seconds per trial.
    pub duration: f64,
    /// Channel indices carrying the class oscillation.
    pub discriminative: Vec<usize>,
    pub frequency: f64,
    pub amplitude: f64,
    /// Standard deviation of the additive noise.
    pub noise: f64,
    /// Dimension whose rating follows the class.
    pub dimension: Dimension,
    /// Fraction of high-class trials per subject.
    pub high_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            channels: 32,
            trials: 40,
            subjects: 1,
            sample_rate: 128.0,
            duration: 4.0,
            // F3, T7, F4, T8 in the standard 32-channel order
            discriminative: vec![2, 7, 19, 25],
            frequency: 10.0,
            amplitude: 1.0,
            noise: 1.0,
            dimension: Dimension::Arousal,
            high_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Synth(m));
        if self.channels == 0 || self.trials == 0 || self.subjects == 0 {
            return fail("channels, trials and subjects must be positive".into());
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0 && self.duration > 0.0) {
            return fail("sample rate and duration must be positive".into());
        }
        if self.samples() == 0 {
            return fail("duration is shorter than one sample".into());
        }
        if self.discriminative.is_empty() {
            return fail("at least one discriminative channel is required".into());
        }
        if let Some(&c) = self.discriminative.iter().find(|&&c| c >= self.channels) {
            return fail(format!("discriminative channel {c} out of range for {} channels", self.channels));
        }
        if !(self.frequency > 0.0 && self.frequency < self.sample_rate / 2.0) {
            return fail(format!(
                "frequency {} Hz must lie below the Nyquist frequency {} Hz",
                self.frequency,
                self.sample_rate / 2.0
            ));
        }
        if !(self.amplitude >= 0.0 && self.noise >= 0.0) {
            return fail("amplitude and noise must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.high_fraction) {
            return fail("high_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    /// The standard 32-channel names when there are 32 channels, `Ch1..` otherwise.
    pub fn channel_names(&self) -> Vec<String> {
        if self.channels == DEAP32.len() {
            DEAP32.iter().map(|s| s.to_string()).collect()
        } else {
            (1..=self.channels).map(|i| format!("Ch{i}")).collect()
        }
    }
}

/// Generates `subjects * trials` trials with ids starting at 1. Returns the
/// channel names alongside. Deterministic for a fixed spec.
pub fn synth_dataset(spec: &SynthSpec) -> Result<(Vec<String>, Vec<TrialSample>), DataError> {
    spec.validate()?;
    let len = spec.samples();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| DataError::Synth(e.to_string()))?;
    let mut out = Vec::with_capacity(spec.subjects * spec.trials);
    for s in 0..spec.subjects {
        let subject = s as u64 + 1;
        let highs = (spec.trials as f64 * spec.high_fraction).round() as usize;
        let mut labels: Vec<Label> = (0..spec.trials).map(|i| if i < highs { Label::High } else { Label::Low }).collect();
        labels.shuffle(&mut derived_rng(spec.seed, &[subject, 0]));
        for (t, &label) in labels.iter().enumerate() {
            let trial_id = t as u64 + 1;
            let mut rng = derived_rng(spec.seed, &[subject, trial_id]);
            let mut data: Vec<f64> = (0..spec.channels * len).map(|_| noise.sample(&mut rng)).collect();
            if label == Label::High {
                for &c in &spec.discriminative {
                    let phase = rng.random_range(0.0..2.0 * PI);
                    for (i, v) in data[c * len..(c + 1) * len].iter_mut().enumerate() {
                        let time = i as f64 / spec.sample_rate;
                        *v += spec.amplitude * (2.0 * PI * spec.frequency * time + phase).sin();
                    }
                }
            }
            let mut ratings = BTreeMap::new();
            for name in RATING_NAMES {
                let u: f64 = rng.random();
                let r = if name == spec.dimension.as_str() {
                    // high in (5, 9], low in [1, 5)
                    match label {
                        Label::High => 9.0 - 4.0 * u,
                        Label::Low => 1.0 + 4.0 * u,
                    }
                } else {
                    1.0 + 8.0 * u
                };
                ratings.insert(name.to_string(), r);
            }
            let mut trial = TrialSample {
                signal: Tensor::new(vec![spec.channels, len], data).map_err(|e| DataError::Synth(e.to_string()))?,
                sample_rate: spec.sample_rate,
                subject_id: subject as u32,
                trial_id: trial_id as u32,
                ratings,
                labels: BTreeMap::new(),
            };
            trial.binarize(DEFAULT_THRESHOLD)?;
            out.push(trial);
        }
    }
    Ok((spec.channel_names(), out))
}
