use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerFoldLog {
    /// Best validation accuracy, ties between epochs going to the lower
    /// validation loss; absent when no epoch ran or the fold diverged first.
    pub validation_accuracy: Option<f64>,
    /// Validation cross-entropy at the best epoch.
    pub validation_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub diverged_at: Option<usize>,
    /// The fold's training split held one class only, so it was not trained.
    #[serde(default)]
    pub single_class: bool,
    pub train_size: usize,
    pub validation_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterFoldLog {
    pub test_index: usize,
    pub label: usize,
    pub prediction: usize,
    pub accuracy: f64,
    pub best_inner_fold: usize,
    pub best_inner_validation_accuracy: Option<f64>,
    pub stage2_loss_before: f64,
    pub stage2_loss_after: f64,
    pub stage2_warning: Option<String>,
    pub inner: Vec<InnerFoldLog>,
}

/// Result of nested cross-validation for one subject and label dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub subject: Option<u32>,
    pub dimension: Option<String>,
    /// Trial identifiers in outer-fold order, when known.
    pub trial_ids: Vec<u32>,
    pub seed: u64,
    pub mean_accuracy: f64,
    /// Population standard deviation of the fold accuracies.
    pub std_accuracy: f64,
    pub fold_accuracy: Vec<f64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: Vec<OuterFoldLog>,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CvReport {
    pub fn new(folds: Vec<OuterFoldLog>, model: ModelConfig, train: TrainConfig) -> Self {
        let fold_accuracy: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&fold_accuracy);
        Self {
            subject: None,
            dimension: None,
            trial_ids: Vec::new(),
            seed: train.seed,
            mean_accuracy,
            std_accuracy,
            fold_accuracy,
            model,
            train,
            folds,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Per-subject results plus their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub dimension: String,
    pub subjects: Vec<u32>,
    pub subject_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Subjects left out, with the reason.
    pub skipped: Vec<String>,
}

impl SubjectSummary {
    pub fn new(dimension: &str, results: &[(u32, f64)], skipped: Vec<String>) -> Self {
        let acc: Vec<f64> = results.iter().map(|r| r.1).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        Self {
            dimension: dimension.to_string(),
            subjects: results.iter().map(|r| r.0).collect(),
            subject_accuracy: acc,
            mean_accuracy,
            std_accuracy,
            skipped,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }
}
