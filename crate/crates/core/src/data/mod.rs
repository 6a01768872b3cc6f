//! Trials, their on-disk formats, preprocessing and synthetic generation.

mod preprocess;
mod synth;
mod text_import;
mod trial_file;

pub use preprocess::{bandpass_taps, frequency_response, preprocess, BaselineMode, PreprocessConfig, Window};
pub use synth::{synth_dataset, SynthSpec};
pub use text_import::{import_text_trial, TextSidecar};
pub use trial_file::{decode_trial, encode_trial, read_trial_file, write_trial_file};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a trial file (bad magic)")]
    BadMagic,
    #[error("unsupported trial file version {0}")]
    Version(u32),
    #[error("trial file truncated in {0}")]
    Truncated(&'static str),
    #[error("trial file {0} extents overflow")]
    ExtentOverflow(&'static str),
    #[error("trial file {0} is not valid UTF-8")]
    Utf8(&'static str),
    #[error("trial file has trailing bytes")]
    TrailingBytes,
    #[error("rating {value} for `{dimension}` lies outside [1, 9]")]
    RatingRange { dimension: String, value: f64 },
    #[error("invalid trial: {0}")]
    Invalid(String),
    #[error("preprocessing: {0}")]
    Preprocess(String),
    #[error("synthetic spec: {0}")]
    Synth(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("text import: {0}")]
    Text(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Rating dimensions usable as classification targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Arousal,
    Valence,
    Liking,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Arousal, Dimension::Valence, Dimension::Liking];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Arousal => "arousal",
            Dimension::Valence => "valence",
            Dimension::Liking => "liking",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown dimension `{s}` (expected arousal, valence or liking)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Low,
    High,
}

impl Label {
    pub fn class_index(self) -> usize {
        match self {
            Label::Low => 0,
            Label::High => 1,
        }
    }
}

pub const DEFAULT_THRESHOLD: f64 = 5.0;

/// `High` when `rating > threshold`, `Low` otherwise (the threshold itself is low).
pub fn binarize_label(dimension: &str, rating: f64, threshold: f64) -> Result<Label, DataError> {
    if !(1.0..=9.0).contains(&rating) {
        return Err(DataError::RatingRange {
            dimension: dimension.to_string(),
            value: rating,
        });
    }
    Ok(if rating > threshold { Label::High } else { Label::Low })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSample {
    /// `[channels, samples]`.
    pub signal: Tensor,
    pub sample_rate: f64,
    pub subject_id: u32,
    pub trial_id: u32,
    pub ratings: BTreeMap<String, f64>,
    pub labels: BTreeMap<String, Label>,
}

impl TrialSample {
    pub fn channels(&self) -> usize {
        self.signal.shape()[0]
    }

    pub fn samples(&self) -> usize {
        self.signal.shape()[1]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.signal.rank() != 2 {
            return Err(DataError::Invalid(format!("signal must be 2-D, got {:?}", self.signal.shape())));
        }
        if !self.signal.is_finite() {
            return Err(DataError::Invalid("signal contains non-finite values".into()));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(DataError::Invalid(format!("sample rate {} must be positive", self.sample_rate)));
        }
        for (d, &v) in &self.ratings {
            if !(1.0..=9.0).contains(&v) {
                return Err(DataError::RatingRange {
                    dimension: d.clone(),
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Fills `labels` from `ratings`.
    pub fn binarize(&mut self, threshold: f64) -> Result<(), DataError> {
        self.labels = self
            .ratings
            .iter()
            .map(|(d, &v)| Ok((d.clone(), binarize_label(d, v, threshold)?)))
            .collect::<Result<_, DataError>>()?;
        Ok(())
    }

    pub fn label(&self, dimension: Dimension) -> Option<Label> {
        self.labels.get(dimension.as_str()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub subject: u32,
    pub trial: u32,
}

/// `manifest.toml` of a dataset directory: channel names and the trial files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub channels: Vec<String>,
    pub sample_rate: f64,
    pub trials: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.toml";

pub fn trial_file_name(subject: u32, trial: u32) -> String {
    format!("s{subject:02}_t{trial:02}.lggt")
}

/// Writes trials and a manifest into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, channels: &[String], trials: &[TrialSample]) -> Result<DatasetManifest, DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let rate = trials
        .first()
        .map(|t| t.sample_rate)
        .ok_or_else(|| DataError::Manifest("no trials to write".into()))?;
    let mut entries = Vec::with_capacity(trials.len());
    for t in trials {
        if t.channels() != channels.len() {
            return Err(DataError::Manifest(format!(
                "trial {} has {} channels, manifest lists {}",
                t.trial_id,
                t.channels(),
                channels.len()
            )));
        }
        if t.sample_rate != rate {
            return Err(DataError::Manifest("trials have differing sample rates".into()));
        }
        let file = trial_file_name(t.subject_id, t.trial_id);
        write_trial_file(t, &dir.join(&file))?;
        entries.push(ManifestEntry {
            file,
            subject: t.subject_id,
            trial: t.trial_id,
        });
    }
    let manifest = DatasetManifest {
        channels: channels.to_vec(),
        sample_rate: rate,
        trials: entries,
    };
    let path = dir.join(MANIFEST);
    let text = toml::to_string(&manifest).map_err(|e| DataError::Manifest(e.to_string()))?;
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, DataError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    toml::from_str(&text).map_err(|e| DataError::Manifest(format!("{}: {e}", path.display())))
}

/// Reads every trial listed in `dir/manifest.toml`, checking them against it.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<TrialSample>), DataError> {
    let manifest = read_manifest(dir)?;
    if manifest.trials.is_empty() {
        return Err(DataError::Manifest(format!("{} lists no trials", dir.display())));
    }
    let mut trials = Vec::with_capacity(manifest.trials.len());
    for e in &manifest.trials {
        let t = read_trial_file(&dir.join(&e.file))?;
        if t.subject_id != e.subject || t.trial_id != e.trial {
            return Err(DataError::Manifest(format!("{}: ids differ from the manifest entry", e.file)));
        }
        if t.channels() != manifest.channels.len() || t.sample_rate != manifest.sample_rate {
            return Err(DataError::Manifest(format!(
                "{}: channel count or sample rate differs from the manifest",
                e.file
            )));
        }
        trials.push(t);
    }
    Ok((manifest, trials))
}
