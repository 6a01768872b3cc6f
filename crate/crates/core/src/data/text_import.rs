//! Import of trials stored as delimited text.
//!
//! The first row holds the channel names; each following row holds one
//! channel's samples, in header order. A TOML sidecar supplies the sample
//! rate, ids and ratings:
//!
//! ```toml
//! sample_rate = 512.0
//! subject = 1
//! trial = 4
//! [ratings]
//! arousal = 6.2
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, DataError, TrialSample, DEFAULT_THRESHOLD};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextSidecar {
    pub sample_rate: f64,
    pub subject: u32,
    pub trial: u32,
    #[serde(default)]
    pub ratings: BTreeMap<String, f64>,
}

fn parse_rows(text: &str, delimiter: u8) -> Result<(Vec<String>, Vec<Vec<f64>>), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Text(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Text(e.to_string()))?;
        let row = record
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| DataError::Text(format!("row {}: `{v}` is not a number", i + 2)))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok((names, rows))
}

/// Reads `data` (comma-, tab- or semicolon-delimited, detected from the
/// header) and its `sidecar`. Returns the channel names and the trial.
pub fn import_text_trial(data: &Path, sidecar: &Path) -> Result<(Vec<String>, TrialSample), DataError> {
    let meta_text = std::fs::read_to_string(sidecar).map_err(io_err(sidecar))?;
    let meta: TextSidecar =
        toml::from_str(&meta_text).map_err(|e| DataError::Text(format!("{}: {e}", sidecar.display())))?;
    let text = std::fs::read_to_string(data).map_err(io_err(data))?;
    let header = text.lines().next().unwrap_or("");
    let delimiter = b"\t;,"
        .iter()
        .copied()
        .find(|&d| header.as_bytes().contains(&d))
        .unwrap_or(b',');
    let (names, rows) = parse_rows(&text, delimiter)?;
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(DataError::Text("header row must list channel names".into()));
    }
    if rows.len() != names.len() {
        return Err(DataError::Text(format!(
            "{} channel rows for {} header names",
            rows.len(),
            names.len()
        )));
    }
    let len = rows[0].len();
    if len == 0 || rows.iter().any(|r| r.len() != len) {
        return Err(DataError::Text("channel rows must be non-empty and of equal length".into()));
    }
    let mut trial = TrialSample {
        signal: Tensor::new(vec![names.len(), len], rows.concat()).map_err(|e| DataError::Text(e.to_string()))?,
        sample_rate: meta.sample_rate,
        subject_id: meta.subject,
        trial_id: meta.trial,
        ratings: meta.ratings,
        labels: BTreeMap::new(),
    };
    trial.validate()?;
    trial.binarize(DEFAULT_THRESHOLD)?;
    Ok((names, trial))
}
