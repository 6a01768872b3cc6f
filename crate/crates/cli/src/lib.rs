//! Command implementations behind the `lgg` binary.
//!
//! Every command resolves a [`RunConfig`] (config file, then flag overrides)
//! before touching data, and maps failures onto [`CliError`] so the binary can
//! pick an exit code.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use lgg_core::data::{
    import_text_trial, load_dataset, preprocess, synth_dataset, write_dataset, DataError, Dimension,
    PreprocessConfig, SynthSpec, TrialSample,
};
use lgg_core::interpret::{aggregate_saliency, export_topomap, saliency, InterpretError};
use lgg_core::model::{read_checkpoint, write_checkpoint, CheckpointError, Lgg, ModelConfig, ModelError};
use lgg_core::montage::{ChannelSet, GraphKind, MontageError, MontageGraph};
use lgg_core::train::{run_nested_cv, CvReport, Dataset, ModelSpec, SubjectSummary, TrainConfig, TrainError};

pub const RUN_CONFIG: &str = "run_config.toml";
pub const MONTAGE_FILE: &str = "montage.txt";
pub const REPORT_FILE: &str = "report.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Protocol(_) => 4,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Synth(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MontageError> for CliError {
    fn from(e: MontageError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Input { .. } => CliError::Data(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Protocol(m) => CliError::Protocol(m),
            TrainError::SingleClass { .. } => CliError::Protocol(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<InterpretError> for CliError {
    fn from(e: InterpretError) -> Self {
        match e {
            InterpretError::Model(m) => m.into(),
            _ => CliError::Other(e.to_string()),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Other(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io(path))
}

/// Every setting a run depends on. Written to each run directory so a run can
/// be repeated with `--config <dir>/run_config.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: Dimension,
    /// `general`, `affective`, `hemisphere`, or a path to a montage file.
    pub graph: String,
    pub threshold: f64,
    pub jobs: usize,
    /// Restrict training to these subjects; empty means all.
    pub subjects: Vec<u32>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dimension: Dimension::Arousal,
            graph: "general".into(),
            threshold: lgg_core::data::DEFAULT_THRESHOLD,
            jobs: 1,
            subjects: Vec::new(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            preprocess: PreprocessConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Flags shared by the commands that train or rebuild models. Each one, when
/// given, replaces the config file's value.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Config document (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Rating dimension to classify.
    #[arg(long, value_parser = parse_dimension)]
    pub dimension: Option<Dimension>,
    /// general, affective, hemisphere, or a montage file path.
    #[arg(long)]
    pub graph: Option<String>,
    /// Temporal kernels per scale.
    #[arg(long)]
    pub t_kernels: Option<usize>,
    /// Remove local filtering; channels become the graph nodes.
    #[arg(long)]
    pub no_local: bool,
    /// Remove global filtering; local embeddings feed the classifier.
    #[arg(long)]
    pub no_global: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for outer folds.
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// A montage path from a config file is taken relative to that file.
fn relative_to(graph: &str, config: &Path) -> String {
    let builtin = matches!(graph.parse::<GraphKind>(), Ok(k) if k != GraphKind::Custom);
    if builtin || Path::new(graph).is_absolute() {
        return graph.to_string();
    }
    let joined = config.parent().unwrap_or(Path::new("")).join(graph);
    std::fs::canonicalize(&joined).unwrap_or(joined).to_string_lossy().into_owned()
}

fn parse_dimension(s: &str) -> Result<Dimension, String> {
    s.parse()
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(path) = &self.config {
            cfg.graph = relative_to(&cfg.graph, path);
        }
        if let Some(d) = self.dimension {
            cfg.dimension = d;
        }
        if let Some(g) = &self.graph {
            cfg.graph = g.clone();
        }
        if let Some(t) = self.t_kernels {
            cfg.model.kernels = t;
        }
        cfg.model.skip_local |= self.no_local;
        cfg.model.skip_global |= self.no_global;
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if cfg.jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// Builds the montage named by `graph` for a dataset with `channels`.
/// Built-in graphs need the standard 32- or 62-channel names.
pub fn resolve_montage(graph: &str, channels: &[String]) -> Result<MontageGraph, CliError> {
    let montage = match graph.parse::<GraphKind>() {
        Ok(GraphKind::Custom) | Err(_) => {
            let path = Path::new(graph);
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "graph `{graph}` is neither general, affective, hemisphere nor a montage file"
                )));
            }
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{graph}: {e}")))?;
            MontageGraph::parse(&text)?
        }
        Ok(kind) => {
            let set = ChannelSet::detect(channels).ok_or_else(|| {
                CliError::Config(format!(
                    "built-in `{graph}` graph needs the standard 32- or 62-channel layout; pass a montage file instead"
                ))
            })?;
            MontageGraph::builtin(kind, set)?
        }
    };
    let report = montage.validate(channels);
    if !report.is_ok() {
        let detail: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(CliError::Config(format!("montage is invalid: {}", detail.join("; "))));
    }
    if !report.excluded.is_empty() {
        info!("channels outside every local graph, dropped from the input: {}", report.excluded.join(", "));
    }
    Ok(montage)
}

fn labels_for(trials: &[&TrialSample], dimension: Dimension) -> Result<Vec<usize>, CliError> {
    trials
        .iter()
        .map(|t| {
            t.label(dimension).map(|l| l.class_index()).ok_or_else(|| {
                CliError::Data(format!(
                    "subject {} trial {} has no `{dimension}` rating",
                    t.subject_id, t.trial_id
                ))
            })
        })
        .collect()
}

fn rebinarize(trials: &mut [TrialSample], threshold: f64) -> Result<(), CliError> {
    for t in trials {
        t.binarize(threshold)?;
    }
    Ok(())
}

fn common_len(trials: &[&TrialSample]) -> Result<usize, CliError> {
    let len = trials.first().map(|t| t.samples()).ok_or_else(|| CliError::Data("no trials".into()))?;
    if trials.iter().any(|t| t.samples() != len) {
        return Err(CliError::Data("trials differ in length".into()));
    }
    Ok(len)
}

pub fn subject_dir(out: &Path, subject: u32) -> PathBuf {
    out.join(format!("subject_{subject:02}"))
}

pub fn fold_checkpoint(out: &Path, subject: u32, fold: usize) -> PathBuf {
    subject_dir(out, subject).join(format!("fold_{fold:02}.ckpt"))
}

/// Report file: the resolved configuration followed by the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: RunConfig,
    pub cv: CvReport,
}

impl RunReport {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub sample_rate: Option<f64>,
    /// Seconds per trial.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Comma-separated channel indices carrying the class signal.
    #[arg(long, value_delimiter = ',')]
    pub discriminative: Option<Vec<usize>>,
    #[arg(long)]
    pub frequency: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_parser = parse_dimension)]
    pub dimension: Option<Dimension>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<SynthSpec, CliError> {
    let mut spec = RunConfig::load(args.config.as_deref())?.synth;
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = args.$f.clone() { spec.$f = v; } )* };
    }
    set!(channels, trials, subjects, sample_rate, duration, discriminative, frequency, amplitude, noise, dimension, seed);
    let (names, trials) = synth_dataset(&spec)?;
    let manifest = write_dataset(&args.out, &names, &trials)?;
    write_file(&args.out.join("synth.toml"), toml::to_string(&spec).expect("spec serializes"))?;
    info!("wrote {} trials to {}", manifest.trials.len(), args.out.display());
    Ok(spec)
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    /// Dataset directory (with manifest.toml) at the source rate.
    #[arg(long, required_unless_present = "from_text", conflicts_with = "from_text")]
    pub input: Option<PathBuf>,
    /// Directory of delimited-text trials, each with a same-named `.toml` sidecar.
    #[arg(long)]
    pub from_text: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn read_text_dir(dir: &Path) -> Result<(Vec<String>, Vec<TrialSample>), CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "tsv" | "txt")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("{}: no .csv, .tsv or .txt trials", dir.display())));
    }
    let mut names: Option<Vec<String>> = None;
    let mut trials = Vec::with_capacity(files.len());
    for f in files {
        let (n, t) = import_text_trial(&f, &f.with_extension("toml"))?;
        match &names {
            Some(prev) if *prev != n => {
                return Err(CliError::Data(format!("{}: channel names differ from earlier files", f.display())))
            }
            None => names = Some(n),
            _ => {}
        }
        trials.push(t);
    }
    Ok((names.expect("at least one file"), trials))
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<usize, CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?.preprocess;
    let (names, raw) = match (&args.input, &args.from_text) {
        (_, Some(dir)) => read_text_dir(dir)?,
        (Some(dir), None) => {
            let (m, t) = load_dataset(dir)?;
            (m.channels, t)
        }
        (None, None) => return Err(CliError::Config("pass --input or --from-text".into())),
    };
    let out: Vec<TrialSample> = raw.iter().map(|t| preprocess(t, &cfg)).collect::<Result<_, _>>()?;
    write_dataset(&args.out, &names, &out)?;
    info!("preprocessed {} trials into {}", out.len(), args.out.display());
    Ok(out.len())
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory with manifest.toml.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub reports: Vec<CvReport>,
    pub summary: SubjectSummary,
}

/// Nested cross-validation per subject. Writes the resolved config, the
/// montage, one report plus per-fold checkpoints per subject, and a summary.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome, CliError> {
    let mut cfg = args.overrides.resolve()?;
    let (manifest, mut trials) = load_dataset(&args.data)?;
    rebinarize(&mut trials, cfg.threshold)?;
    if cfg.model.sample_rate != manifest.sample_rate {
        info!(
            "model sample rate set to the dataset's {} Hz (was {})",
            manifest.sample_rate, cfg.model.sample_rate
        );
        cfg.model.sample_rate = manifest.sample_rate;
    }
    let montage = resolve_montage(&cfg.graph, &manifest.channels)?;
    info!(
        "{} graph: P = {}, {} of {} channels used",
        montage.kind(),
        montage.p(),
        montage.included().len(),
        manifest.channels.len()
    );
    std::fs::create_dir_all(&args.out).map_err(io(&args.out))?;
    write_file(&args.out.join(RUN_CONFIG), cfg.to_toml())?;
    write_file(&args.out.join(MONTAGE_FILE), montage.serialize())?;

    let present: BTreeSet<u32> = trials.iter().map(|t| t.subject_id).collect();
    let subjects: Vec<u32> = if cfg.subjects.is_empty() {
        present.iter().copied().collect()
    } else {
        if let Some(s) = cfg.subjects.iter().find(|s| !present.contains(s)) {
            return Err(CliError::Data(format!("subject {s} is not in the dataset")));
        }
        cfg.subjects.clone()
    };
    let mut reports = Vec::new();
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for &subject in &subjects {
        let mine: Vec<&TrialSample> = trials.iter().filter(|t| t.subject_id == subject).collect();
        let data = Dataset {
            signals: mine.iter().map(|t| t.signal.clone()).collect(),
            labels: labels_for(&mine, cfg.dimension)?,
        };
        let spec = ModelSpec {
            config: &cfg.model,
            montage: &montage,
            input_len: common_len(&mine)?,
        };
        let outcome = match run_nested_cv(spec, &data, &cfg.train, cfg.jobs) {
            Err(TrainError::SingleClass { present }) if subjects.len() > 1 => {
                warn!("subject {subject}: only class {present} present for {}; skipped", cfg.dimension);
                skipped.push(format!("subject {subject}: single class"));
                continue;
            }
            other => other?,
        };
        let mut report = outcome.report;
        report.subject = Some(subject);
        report.dimension = Some(cfg.dimension.to_string());
        report.trial_ids = mine.iter().map(|t| t.trial_id).collect();
        let dir = subject_dir(&args.out, subject);
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        for (fold, model) in outcome.models.iter().enumerate() {
            write_checkpoint(&model.to_checkpoint(), &fold_checkpoint(&args.out, subject, fold))?;
        }
        let file = RunReport {
            run: cfg.clone(),
            cv: report.clone(),
        };
        write_file(&dir.join(REPORT_FILE), toml::to_string(&file).expect("report serializes"))?;
        println!(
            "subject {subject} {}: mean accuracy {:.4} (std {:.4}) over {} folds",
            cfg.dimension,
            report.mean_accuracy,
            report.std_accuracy,
            report.fold_accuracy.len()
        );
        results.push((subject, report.mean_accuracy));
        reports.push(report);
    }
    if results.is_empty() {
        return Err(CliError::Protocol(format!("no subject has both classes for {}", cfg.dimension)));
    }
    let summary = SubjectSummary::new(cfg.dimension.as_str(), &results, skipped);
    write_file(&args.out.join("summary.toml"), summary.to_toml())?;
    println!(
        "{}: mean accuracy {:.4} (std {:.4}) over {} subjects",
        cfg.dimension,
        summary.mean_accuracy,
        summary.std_accuracy,
        results.len()
    );
    Ok(TrainOutcome { reports, summary })
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Run config; defaults to the nearest run_config.toml above the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Only trials of this subject.
    #[arg(long)]
    pub subject: Option<u32>,
    /// Only these trial ids (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub trials: Option<Vec<u32>>,
}

struct Loaded {
    model: Lgg,
    montage: MontageGraph,
    dimension: Dimension,
    trials: Vec<TrialSample>,
}

fn find_run_config(checkpoint: &Path) -> Result<PathBuf, CliError> {
    checkpoint
        .ancestors()
        .skip(1)
        .map(|d| d.join(RUN_CONFIG))
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::Config(format!("no {RUN_CONFIG} above {}; pass --config", checkpoint.display())))
}

fn load_for_inference(args: &ModelArgs) -> Result<Loaded, CliError> {
    let config_path = match &args.config {
        Some(p) => p.clone(),
        None => find_run_config(&args.checkpoint)?,
    };
    let cfg = RunConfig::load(Some(&config_path))?;
    let montage_path = config_path.with_file_name(MONTAGE_FILE);
    let montage = match std::fs::read_to_string(&montage_path) {
        Ok(text) => MontageGraph::parse(&text)?,
        Err(_) => return Err(CliError::Config(format!("missing {}", montage_path.display()))),
    };
    let (manifest, mut trials) = load_dataset(&args.data)?;
    if manifest.channels != montage.channels() {
        return Err(CliError::Data(format!(
            "digest mismatch: dataset channels ({}) differ from the checkpoint montage ({})",
            manifest.channels.len(),
            montage.channels().len()
        )));
    }
    rebinarize(&mut trials, cfg.threshold)?;
    trials.retain(|t| {
        args.subject.is_none_or(|s| t.subject_id == s)
            && args.trials.as_ref().is_none_or(|ids| ids.contains(&t.trial_id))
    });
    if trials.is_empty() {
        return Err(CliError::Data("no trials match the selection".into()));
    }
    let refs: Vec<&TrialSample> = trials.iter().collect();
    let len = common_len(&refs)?;
    let ckpt = read_checkpoint(&args.checkpoint)?;
    let model = Lgg::from_checkpoint(cfg.model.clone(), &montage, len, &ckpt)?;
    Ok(Loaded {
        model,
        montage,
        dimension: cfg.dimension,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub accuracy: f64,
    /// `(subject, trial, label, prediction)`.
    pub predictions: Vec<(u32, u32, usize, usize)>,
}

pub fn cmd_eval(args: &ModelArgs) -> Result<EvalOutcome, CliError> {
    let l = load_for_inference(args)?;
    let refs: Vec<&TrialSample> = l.trials.iter().collect();
    let labels = labels_for(&refs, l.dimension)?;
    let data = Dataset {
        signals: l.trials.iter().map(|t| t.signal.clone()).collect(),
        labels: labels.clone(),
    };
    let idx: Vec<usize> = (0..data.len()).collect();
    let preds = lgg_core::train::predict(&l.model, &data, &idx, 16)?;
    let mut predictions = Vec::with_capacity(preds.len());
    for ((t, &y), &p) in l.trials.iter().zip(&labels).zip(&preds) {
        println!("subject {} trial {}: label {y} predicted {p}", t.subject_id, t.trial_id);
        predictions.push((t.subject_id, t.trial_id, y, p));
    }
    let correct = predictions.iter().filter(|p| p.2 == p.3).count();
    let accuracy = correct as f64 / predictions.len() as f64;
    println!("accuracy {accuracy:.4} ({correct}/{})", predictions.len());
    Ok(EvalOutcome { accuracy, predictions })
}

#[derive(Debug, Clone, Args)]
pub struct SaliencyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes one topomap per trial and their aggregate. Returns the file paths,
/// aggregate last.
pub fn cmd_saliency(args: &SaliencyArgs) -> Result<Vec<PathBuf>, CliError> {
    let l = load_for_inference(&args.model)?;
    std::fs::create_dir_all(&args.out).map_err(io(&args.out))?;
    let mut maps = Vec::with_capacity(l.trials.len());
    let mut files = Vec::with_capacity(l.trials.len() + 1);
    for t in &l.trials {
        let map = saliency(&l.model, &l.montage, &t.signal)?;
        let path = args.out.join(format!("saliency_s{:02}_t{:02}.csv", t.subject_id, t.trial_id));
        export_topomap(&map, &path)?;
        files.push(path);
        maps.push(map);
    }
    let agg = aggregate_saliency(&maps)?;
    let path = args.out.join("saliency_aggregate.csv");
    export_topomap(&agg, &path)?;
    files.push(path);
    info!("wrote {} saliency maps to {}", maps.len(), args.out.display());
    Ok(files)
}

#[derive(Debug, Parser)]
#[command(name = "lgg", version, about = "Local-global graph networks for EEG classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Remove baseline, band-pass, decimate and re-reference a dataset.
    Preprocess(PreprocessArgs),
    /// Nested leave-one-trial-out cross-validation per subject.
    Train(TrainArgs),
    /// Evaluate a checkpoint on trials.
    Eval(ModelArgs),
    /// Export per-channel saliency maps for trials.
    Saliency(SaliencyArgs),
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(drop),
        Command::Preprocess(a) => cmd_preprocess(a).map(drop),
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Eval(a) => cmd_eval(a).map(drop),
        Command::Saliency(a) => cmd_saliency(a).map(drop),
    }
}
