//! EEG channel montages and their partition into local graphs.
//!
//! Text format, one directive per line, `#` starts a comment:
//!
//! ```text
//! kind: affective                # optional; defaults to custom
//! channels: Fp1, AF3, F3, ...    # dataset channel order
//! local frontal_l: F3, F7
//! ```

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MontageError {
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("missing `channels:` header")]
    MissingHeader,
    #[error("line {line}: unknown channel `{name}`")]
    UnknownChannel { line: usize, name: String },
    #[error("channel `{name}` listed more than once")]
    DuplicateChannel { name: String },
    #[error("local graph `{name}` is empty")]
    EmptyLocal { name: String },
    #[error("local graph `{local}` refers to channel index {index}, montage has {channels}")]
    IndexOutOfRange { local: String, index: usize, channels: usize },
    #[error("no built-in {kind} graph for the {set} channel set")]
    Unsupported { kind: GraphKind, set: ChannelSet },
    #[error("unknown {what} `{value}`")]
    UnknownName { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    General,
    Affective,
    Hemisphere,
    Custom,
}

impl GraphKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphKind::General => "general",
            GraphKind::Affective => "affective",
            GraphKind::Hemisphere => "hemisphere",
            GraphKind::Custom => "custom",
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraphKind {
    type Err = MontageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "general" => Ok(GraphKind::General),
            "affective" => Ok(GraphKind::Affective),
            "hemisphere" => Ok(GraphKind::Hemisphere),
            "custom" => Ok(GraphKind::Custom),
            _ => Err(MontageError::UnknownName {
                what: "graph kind",
                value: s.to_string(),
            }),
        }
    }
}

/// Channel layouts with shipped local-graph definitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelSet {
    /// The 32-electrode layout in DEAP's recording order.
    Deap32,
    /// The 62-electrode extended 10-20 layout.
    Std62,
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelSet::Deap32 => "deap32",
            ChannelSet::Std62 => "std62",
        })
    }
}

impl ChannelSet {
    pub fn channels(self) -> &'static [&'static str] {
        match self {
            ChannelSet::Deap32 => DEAP32,
            ChannelSet::Std62 => STD62,
        }
    }

    /// The set whose channel list equals `names` exactly, if any.
    pub fn detect(names: &[String]) -> Option<Self> {
        [ChannelSet::Deap32, ChannelSet::Std62]
            .into_iter()
            .find(|set| set.channels().iter().copied().eq(names.iter().map(String::as_str)))
    }
}

pub const DEAP32: &[&str] = &[
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7", "CP5", "CP1", "P3", "P7", "PO3", "O1", "Oz", "Pz",
    "Fp2", "AF4", "Fz", "F4", "F8", "FC6", "FC2", "Cz", "C4", "T8", "CP6", "CP2", "P4", "P8", "PO4", "O2",
];

pub const STD62: &[&str] = &[
    "FP1", "FPZ", "FP2", "AF3", "AF4", "F7", "F5", "F3", "F1", "FZ", "F2", "F4", "F6", "F8", "FT7", "FC5",
    "FC3", "FC1", "FCZ", "FC2", "FC4", "FC6", "FT8", "T7", "C5", "C3", "C1", "CZ", "C2", "C4", "C6", "T8",
    "TP7", "CP5", "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6", "TP8", "P7", "P5", "P3", "P1", "PZ", "P2", "P4",
    "P6", "P8", "PO7", "PO5", "PO3", "POZ", "PO4", "PO6", "PO8", "CB1", "O1", "OZ", "O2", "CB2",
];

type Layout = &'static [(&'static str, &'static [&'static str])];

const GENERAL_DEAP32: Layout = &[
    ("prefrontal", &["Fp1", "AF3", "AF4", "Fp2"]),
    ("frontal", &["F3", "Fz", "F4"]),
    ("frontotemporal_l", &["F7"]),
    ("frontotemporal_r", &["F8"]),
    ("frontocentral", &["FC5", "FC1", "FC2", "FC6"]),
    ("central", &["C3", "Cz", "C4"]),
    ("temporal_l", &["T7"]),
    ("temporal_r", &["T8"]),
    ("centroparietal", &["CP5", "CP1", "CP2", "CP6"]),
    ("parietal", &["P7", "P3", "Pz", "P4", "P8"]),
    ("occipital", &["PO3", "PO4", "O1", "Oz", "O2"]),
];

const AFFECTIVE_DEAP32: Layout = &[
    ("prefrontal_l", &["Fp1", "AF3"]),
    ("prefrontal_r", &["Fp2", "AF4"]),
    ("frontal_l", &["F3", "F7"]),
    ("frontal_r", &["F4", "F8"]),
    ("frontocentral_l", &["FC5", "FC1"]),
    ("frontocentral_r", &["FC6", "FC2"]),
    ("central", &["C3", "Cz", "C4"]),
    ("temporal_l", &["T7"]),
    ("temporal_r", &["T8"]),
    ("centroparietal", &["CP5", "CP1", "CP2", "CP6"]),
    ("parietal", &["P7", "P3", "Pz", "P4", "P8"]),
    ("parieto_occipital", &["PO3", "PO4"]),
    ("occipital", &["O1", "Oz", "O2"]),
];

const HEMISPHERE_DEAP32: Layout = &[
    ("prefrontal_l", &["Fp1", "AF3"]),
    ("prefrontal_r", &["Fp2", "AF4"]),
    ("frontal_l", &["F3", "F7"]),
    ("frontal_r", &["F4", "F8"]),
    ("frontocentral_l", &["FC5", "FC1"]),
    ("frontocentral_r", &["FC6", "FC2"]),
    ("central_l", &["C3"]),
    ("central_r", &["C4"]),
    ("temporal_l", &["T7"]),
    ("temporal_r", &["T8"]),
    ("centroparietal_l", &["CP5", "CP1"]),
    ("centroparietal_r", &["CP6", "CP2"]),
    ("parietal_l", &["P3", "P7"]),
    ("parietal_r", &["P4", "P8"]),
    ("occipital_l", &["PO3", "O1"]),
    ("occipital_r", &["PO4", "O2"]),
];

const GENERAL_STD62: Layout = &[
    ("prefrontal", &["FP1", "FPZ", "FP2", "AF3", "AF4"]),
    ("frontal", &["F5", "F3", "F1", "FZ", "F2", "F4", "F6"]),
    ("frontotemporal_l", &["F7", "FT7"]),
    ("frontotemporal_r", &["F8", "FT8"]),
    ("frontocentral", &["FC5", "FC3", "FC1", "FCZ", "FC2", "FC4", "FC6"]),
    ("central", &["C5", "C3", "C1", "CZ", "C2", "C4", "C6"]),
    ("temporal_l", &["T7", "TP7"]),
    ("temporal_r", &["T8", "TP8"]),
    ("centroparietal", &["CP5", "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6"]),
    ("parietal", &["P7", "P5", "P3", "P1", "PZ", "P2", "P4", "P6", "P8"]),
    (
        "occipital",
        &["PO7", "PO5", "PO3", "POZ", "PO4", "PO6", "PO8", "CB1", "O1", "OZ", "O2", "CB2"],
    ),
];

const HEMISPHERE_STD62: Layout = &[
    ("prefrontal_l", &["FP1", "AF3"]),
    ("prefrontal_r", &["FP2", "AF4"]),
    ("frontal_l", &["F7", "F5", "F3", "F1"]),
    ("frontal_r", &["F8", "F6", "F4", "F2"]),
    ("frontocentral_l", &["FT7", "FC5", "FC3", "FC1"]),
    ("frontocentral_r", &["FT8", "FC6", "FC4", "FC2"]),
    ("central_l", &["T7", "C5", "C3", "C1"]),
    ("central_r", &["T8", "C6", "C4", "C2"]),
    ("centroparietal_l", &["TP7", "CP5", "CP3", "CP1"]),
    ("centroparietal_r", &["TP8", "CP6", "CP4", "CP2"]),
    ("parietal_l", &["P7", "P5", "P3", "P1"]),
    ("parietal_r", &["P8", "P6", "P4", "P2"]),
    ("parieto_occipital_l", &["PO7", "PO5", "PO3"]),
    ("parieto_occipital_r", &["PO8", "PO6", "PO4"]),
    ("occipital_l", &["CB1", "O1"]),
    ("occipital_r", &["CB2", "O2"]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalGraph {
    pub name: String,
    /// Indices into [`MontageGraph::channels`], in declaration order.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MontageGraph {
    channels: Vec<String>,
    locals: Vec<LocalGraph>,
    kind: GraphKind,
}

/// Position of an electrode relative to the midline, derived from its label.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Side {
    Midline,
    Lateral { prefix: String, number: u32 },
    Unknown,
}

fn side(name: &str) -> Side {
    let upper = name.trim().to_ascii_uppercase();
    let digits = upper.len() - upper.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let (prefix, num) = upper.split_at(upper.len() - digits);
        match num.parse() {
            Ok(number) if number > 0 => Side::Lateral {
                prefix: prefix.to_string(),
                number,
            },
            _ => Side::Unknown,
        }
    } else if upper.len() > 1 && upper.ends_with('Z') {
        Side::Midline
    } else {
        Side::Unknown
    }
}

fn prefix_of(name: &str) -> String {
    name.trim()
        .to_ascii_uppercase()
        .trim_end_matches(|c: char| c.is_ascii_digit())
        .trim_end_matches('Z')
        .to_string()
}

/// Whether the label lies over the frontal lobe (Fp, AF, F, FC and FT rows).
pub fn is_frontal(name: &str) -> bool {
    matches!(prefix_of(name).as_str(), "FP" | "AF" | "F" | "FC" | "FT")
}

pub fn is_midline(name: &str) -> bool {
    side(name) == Side::Midline
}

/// The label of the mirror electrode across the midline: odd numbers pair with
/// the next even number. Midline and unrecognized labels have no mirror.
pub fn mirror_label(name: &str) -> Option<String> {
    match side(name) {
        Side::Lateral { prefix, number } => {
            let m = if number % 2 == 1 { number + 1 } else { number - 1 };
            Some(format!("{prefix}{m}"))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    ChannelMismatch { expected: Vec<String>, found: Vec<String> },
    IndexOutOfRange { local: String, index: usize },
    EmptyLocal { local: String },
    Overlap { channel: String, first: String, second: String },
    AsymmetricFrontal { local: String },
    ExcludedChannel { channel: String, local: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ChannelMismatch { expected, found } => write!(
                f,
                "montage channels ({} entries) differ from dataset channels ({} entries)",
                found.len(),
                expected.len()
            ),
            Violation::IndexOutOfRange { local, index } => {
                write!(f, "local `{local}` refers to missing channel index {index}")
            }
            Violation::EmptyLocal { local } => write!(f, "local `{local}` is empty"),
            Violation::Overlap { channel, first, second } => {
                write!(f, "channel `{channel}` appears in `{first}` and `{second}`")
            }
            Violation::AsymmetricFrontal { local } => {
                write!(f, "frontal local `{local}` has no mirrored partner")
            }
            Violation::ExcludedChannel { channel, local } => {
                write!(f, "excluded channel `{channel}` appears in `{local}`")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Channels that belong to no local graph and are dropped from the model input.
    pub excluded: Vec<String>,
    pub included_count: usize,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl MontageGraph {
    /// Builds a montage from parts, checking only that indices are in range
    /// and locals are non-empty. Use [`MontageGraph::validate`] for the full
    /// set of structural checks.
    pub fn new(channels: Vec<String>, locals: Vec<LocalGraph>, kind: GraphKind) -> Result<Self, MontageError> {
        for l in &locals {
            if l.members.is_empty() {
                return Err(MontageError::EmptyLocal { name: l.name.clone() });
            }
            if let Some(&index) = l.members.iter().find(|&&i| i >= channels.len()) {
                return Err(MontageError::IndexOutOfRange {
                    local: l.name.clone(),
                    index,
                    channels: channels.len(),
                });
            }
        }
        Ok(Self { channels, locals, kind })
    }

    pub fn builtin(kind: GraphKind, set: ChannelSet) -> Result<Self, MontageError> {
        let layout = match (kind, set) {
            (GraphKind::General, ChannelSet::Deap32) => GENERAL_DEAP32,
            (GraphKind::Affective, ChannelSet::Deap32) => AFFECTIVE_DEAP32,
            (GraphKind::Hemisphere, ChannelSet::Deap32) => HEMISPHERE_DEAP32,
            (GraphKind::General, ChannelSet::Std62) => GENERAL_STD62,
            (GraphKind::Hemisphere, ChannelSet::Std62) => HEMISPHERE_STD62,
            _ => return Err(MontageError::Unsupported { kind, set }),
        };
        let channels: Vec<String> = set.channels().iter().map(|s| s.to_string()).collect();
        let locals = layout
            .iter()
            .map(|(name, members)| LocalGraph {
                name: name.to_string(),
                members: members
                    .iter()
                    .map(|m| channels.iter().position(|c| c == m).expect("builtin channel"))
                    .collect(),
            })
            .collect();
        Self::new(channels, locals, kind)
    }

    pub fn parse(text: &str) -> Result<Self, MontageError> {
        let mut kind = GraphKind::Custom;
        let mut channels: Option<Vec<String>> = None;
        let mut locals: Vec<LocalGraph> = Vec::new();
        let mut seen: Vec<bool> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |detail: &str| MontageError::Syntax {
                line: line_no,
                detail: detail.to_string(),
            };
            let (key, value) = line.split_once(':').ok_or_else(|| syntax("expected `key: value`"))?;
            let key = key.trim();
            if key == "kind" {
                kind = value.parse()?;
            } else if key == "channels" {
                if channels.is_some() {
                    return Err(syntax("duplicate `channels:` header"));
                }
                let names = split_names(value);
                if names.is_empty() {
                    return Err(syntax("channel list is empty"));
                }
                for (i, n) in names.iter().enumerate() {
                    if names[..i].contains(n) {
                        return Err(MontageError::DuplicateChannel { name: n.clone() });
                    }
                }
                seen = vec![false; names.len()];
                channels = Some(names);
            } else if let Some(name) = key.strip_prefix("local") {
                let name = name.trim();
                if name.is_empty() || !key.starts_with("local ") {
                    return Err(syntax("expected `local <name>: ...`"));
                }
                let header = channels.as_ref().ok_or(MontageError::MissingHeader)?;
                let names = split_names(value);
                if names.is_empty() {
                    return Err(MontageError::EmptyLocal { name: name.to_string() });
                }
                let mut members = Vec::with_capacity(names.len());
                for n in names {
                    let i = header.iter().position(|c| *c == n).ok_or(MontageError::UnknownChannel {
                        line: line_no,
                        name: n.clone(),
                    })?;
                    if seen[i] {
                        return Err(MontageError::DuplicateChannel { name: n });
                    }
                    seen[i] = true;
                    members.push(i);
                }
                locals.push(LocalGraph {
                    name: name.to_string(),
                    members,
                });
            } else {
                return Err(syntax(&format!("unknown directive `{key}`")));
            }
        }
        let channels = channels.ok_or(MontageError::MissingHeader)?;
        if locals.is_empty() {
            return Err(MontageError::Syntax {
                line: text.lines().count(),
                detail: "no local graphs declared".into(),
            });
        }
        Self::new(channels, locals, kind)
    }

    pub fn serialize(&self) -> String {
        let mut out = format!("kind: {}\nchannels: {}\n", self.kind, self.channels.join(", "));
        for l in &self.locals {
            let names: Vec<&str> = l.members.iter().map(|&i| self.channels[i].as_str()).collect();
            out.push_str(&format!("local {}: {}\n", l.name, names.join(", ")));
        }
        out
    }

    /// Hex SHA-256 of the serialized form.
    pub fn digest(&self) -> String {
        hex_digest(self.serialize().as_bytes())
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn locals(&self) -> &[LocalGraph] {
        &self.locals
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    /// Number of local graphs.
    pub fn p(&self) -> usize {
        self.locals.len()
    }

    /// Node count of each local graph.
    pub fn q_sizes(&self) -> Vec<usize> {
        self.locals.iter().map(|l| l.members.len()).collect()
    }

    /// Indices of channels belonging to some local graph, in dataset order.
    pub fn included(&self) -> Vec<usize> {
        let mut used = vec![false; self.channels.len()];
        for &i in self.locals.iter().flat_map(|l| &l.members) {
            used[i] = true;
        }
        (0..self.channels.len()).filter(|&i| used[i]).collect()
    }

    pub fn included_names(&self) -> Vec<String> {
        self.included().into_iter().map(|i| self.channels[i].clone()).collect()
    }

    /// Local memberships re-indexed into positions of [`MontageGraph::included`].
    pub fn model_groups(&self) -> Vec<Vec<usize>> {
        let included = self.included();
        self.locals
            .iter()
            .map(|l| {
                l.members
                    .iter()
                    .map(|m| included.binary_search(m).expect("member is included"))
                    .collect()
            })
            .collect()
    }

    pub fn validate(&self, dataset_channels: &[String]) -> ValidationReport {
        let mut report = ValidationReport::default();
        if dataset_channels != self.channels.as_slice() {
            report.violations.push(Violation::ChannelMismatch {
                expected: dataset_channels.to_vec(),
                found: self.channels.clone(),
            });
        }
        let mut owner: Vec<Option<usize>> = vec![None; self.channels.len()];
        for (li, l) in self.locals.iter().enumerate() {
            if l.members.is_empty() {
                report.violations.push(Violation::EmptyLocal { local: l.name.clone() });
            }
            for &m in &l.members {
                let Some(slot) = owner.get_mut(m) else {
                    report.violations.push(Violation::IndexOutOfRange {
                        local: l.name.clone(),
                        index: m,
                    });
                    continue;
                };
                match *slot {
                    Some(prev) => report.violations.push(Violation::Overlap {
                        channel: self.channels[m].clone(),
                        first: self.locals[prev].name.clone(),
                        second: l.name.clone(),
                    }),
                    None => *slot = Some(li),
                }
            }
        }
        let names = |l: &LocalGraph| -> Vec<String> {
            l.members
                .iter()
                .filter_map(|&m| self.channels.get(m))
                .map(|s| s.to_ascii_uppercase())
                .collect()
        };
        let excluded_rule: Option<fn(&str) -> bool> = match self.kind {
            GraphKind::Affective => Some(|n| is_midline(n) && is_frontal(n)),
            GraphKind::Hemisphere => Some(is_midline),
            _ => None,
        };
        if let Some(rule) = excluded_rule {
            for l in &self.locals {
                for &m in &l.members {
                    if let Some(ch) = self.channels.get(m).filter(|c| rule(c)) {
                        report.violations.push(Violation::ExcludedChannel {
                            channel: ch.clone(),
                            local: l.name.clone(),
                        });
                    }
                }
            }
        }
        if self.kind == GraphKind::Affective {
            let sets: Vec<Vec<String>> = self.locals.iter().map(|l| sorted(names(l))).collect();
            for (l, set) in self.locals.iter().zip(&sets) {
                if !set.iter().all(|n| is_frontal(n)) {
                    continue;
                }
                let mirrored: Option<Vec<String>> = set.iter().map(|n| mirror_label(n)).collect();
                let paired = mirrored.is_some_and(|m| {
                    let m = sorted(m);
                    m != *set && sets.contains(&m)
                });
                if !paired {
                    report.violations.push(Violation::AsymmetricFrontal { local: l.name.clone() });
                }
            }
        }
        report.excluded = (0..self.channels.len())
            .filter(|&i| owner[i].is_none())
            .map(|i| self.channels[i].clone())
            .collect();
        report.included_count = self.channels.len() - report.excluded.len();
        report
    }
}

/// All-ones `Q x Q` adjacency of a fully connected local graph.
pub fn local_adjacency(local: &LocalGraph) -> Tensor {
    let q = local.members.len();
    Tensor::full(&[q, q], 1.0)
}

fn split_names(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
