//! Dataset ingestion, run configuration and the command implementations
//! behind the `molcvt` binary.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::chem::{tokenize, validate, ChemError, Verdict};
use crate::cvae::{ConditionSet, ConditionStats, NUM_CONDITIONS};
use crate::generation::{
    generate, ConditionSource, GenError, GenerationConfig, GenerationReport, LengthStats, PropertyHistogram,
};
use crate::metrics::{evaluate, MetricsReport, MoleculeSet, Provenance, References};
use crate::model::{Batch, Model, ModelConfig, ModelError};
use crate::tensor::Tape;
use crate::training::{
    epoch_log_line, prepare, train_epoch, Scheduler, TrainConfig, TrainError, TrainRow, TrainState, EPOCH_LOG_HEADER,
};
use crate::transformer::Graph;

pub const DATASET_HEADER: [&str; 4] = ["smiles", "prop1", "prop2", "prop3"];
pub const CONDITIONS_HEADER: [&str; 3] = ["prop1", "prop2", "prop3"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed row at line {line}: {reason}")]
    MalformedRow { path: PathBuf, line: u64, reason: String },
    #[error("{path}: header {found:?} does not match expected {expected:?}")]
    HeaderMismatch {
        path: PathBuf,
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error("{path}: config line {line}: {reason}")]
    Config { path: PathBuf, line: usize, reason: String },
    #[error("{what} index {index} out of range 0..{count}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        count: usize,
    },
    #[error("no usable rows in {0}")]
    EmptyDataset(PathBuf),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid SMILES: {0}")]
    Chem(#[from] ChemError),
}

impl CliError {
    /// Short machine-readable category for the one-line error report.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::IoFailure { .. } => "io-failure",
            CliError::MalformedRow { .. } => "malformed-row",
            CliError::HeaderMismatch { .. } => "header-mismatch",
            CliError::Config { .. } => "config",
            CliError::OutOfRange { .. } => "out-of-range",
            CliError::EmptyDataset(_) => "empty-dataset",
            CliError::Checkpoint(CheckpointError::IoFailure { .. }) => "io-failure",
            CliError::Checkpoint(CheckpointError::VersionMismatch { .. }) => "version-mismatch",
            CliError::Checkpoint(CheckpointError::CorruptFile(_)) => "corrupt-file",
            CliError::Checkpoint(CheckpointError::Model(_)) => "model",
            CliError::Train(_) => "training",
            CliError::Generation(_) => "generation",
            CliError::Model(_) => "model",
            CliError::Chem(_) => "tokenization",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::IoFailure {
            path: path.to_path_buf(),
            source,
        },
        kind => CliError::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason: format!("{kind:?}"),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    TestScaffold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub smiles: String,
    pub properties: ConditionSet,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub line: u64,
    pub reason: String,
}

/// Accepted rows and the rows rejected for failing tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub rows: Vec<DatasetRow>,
    pub rejected: Vec<Rejected>,
}

impl Ingested {
    pub fn conditions(&self) -> Vec<ConditionSet> {
        self.rows.iter().map(|r| r.properties).collect()
    }

    pub fn smiles(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.smiles.clone()).collect()
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn check_header(path: &Path, r: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<(), CliError> {
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    let found: Vec<String> = header.iter().map(str::to_string).collect();
    if found != expected {
        return Err(CliError::HeaderMismatch {
            path: path.to_path_buf(),
            found,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok(())
}

fn parse_properties(path: &Path, line: u64, fields: &[&str]) -> Result<ConditionSet, CliError> {
    let mut values = [0.0; NUM_CONDITIONS];
    for (k, f) in fields.iter().enumerate() {
        values[k] = f
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| CliError::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: format!("prop{} is not a finite number: {f:?}", k + 1),
            })?;
    }
    Ok(ConditionSet(values))
}

/// Reads a `smiles,prop1,prop2,prop3` file. Rows whose SMILES do not
/// tokenize (including those over 80 tokens) are rejected and counted;
/// structural problems abort with the offending line.
pub fn ingest(path: &Path, split: Split) -> Result<Ingested, CliError> {
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &DATASET_HEADER)?;
    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = record.iter().collect();
        let properties = parse_properties(path, line, &fields[1..])?;
        let smiles = fields[0].to_string();
        match tokenize(&smiles) {
            Ok(_) => rows.push(DatasetRow {
                smiles,
                properties,
                split,
            }),
            Err(e) => rejected.push(Rejected {
                line,
                reason: e.to_string(),
            }),
        }
    }
    Ok(Ingested { rows, rejected })
}

/// Reads a `prop1,prop2,prop3` file of generation targets.
pub fn read_conditions(path: &Path) -> Result<Vec<ConditionSet>, CliError> {
    let mut reader = open_csv(path)?;
    check_header(path, &mut reader, &CONDITIONS_HEADER)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = record.iter().collect();
        out.push(parse_properties(path, line, &fields)?);
    }
    Ok(out)
}

/// The `smiles` column of any CSV file with a header.
pub fn read_smiles_column(path: &Path) -> Result<Vec<String>, CliError> {
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = header
        .iter()
        .position(|h| h == "smiles")
        .ok_or_else(|| CliError::HeaderMismatch {
            path: path.to_path_buf(),
            found: header.iter().map(str::to_string).collect(),
            expected: vec!["smiles".into()],
        })?;
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| csv_err(path, e))?;
            Ok(r.get(col).unwrap_or_default().to_string())
        })
        .collect()
}

/// Settings for a training run, read from `key = value` lines. `#` starts a
/// comment. Relative paths are resolved against the config file's
/// directory.
///
/// Keys: `d_model heads blocks d_ff latent_dim max_len dropout epochs
/// kla_start kla_step kla_end scheduler warmup_steps lr_factor eta_min
/// eta_max cycle_steps beta1 beta2 base_lr batch_size seed max_grad_norm
/// fp_radius fp_nbits train_path test_path test_scaffolds_path
/// checkpoint_path log_path resume_from checkpoint_every`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fp_radius: usize,
    pub fp_nbits: usize,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub test_scaffolds_path: Option<PathBuf>,
    pub checkpoint_path: PathBuf,
    pub log_path: Option<PathBuf>,
    pub resume_from: Option<PathBuf>,
    /// Save every this many epochs; 0 saves only at the end.
    pub checkpoint_every: u32,
    /// The text the config was parsed from.
    pub source: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::full(),
            train: TrainConfig::default(),
            fp_radius: crate::chem::DEFAULT_RADIUS,
            fp_nbits: crate::chem::DEFAULT_NBITS,
            train_path: None,
            test_path: None,
            test_scaffolds_path: None,
            checkpoint_path: PathBuf::from("model.gctc"),
            log_path: None,
            resume_from: None,
            checkpoint_every: 0,
            source: String::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Parses config text. `origin` labels errors and `base` anchors
    /// relative paths.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self, CliError> {
        let mut cfg = RunConfig {
            source: text.to_string(),
            ..RunConfig::default()
        };
        let mut scheduler = "warmup".to_string();
        let (mut warmup_steps, mut lr_factor) = (100_000u64, 3.0f64);
        let (mut eta_min, mut eta_max, mut cycle_steps) = (0.0f64, 1e-4f64, 0u64);
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| CliError::Config {
                path: origin.to_path_buf(),
                line: line_no,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err("expected `key = value`".into()))?;
            macro_rules! num {
                () => {
                    value
                        .parse()
                        .map_err(|_| err(format!("{key}: cannot parse {value:?}")))?
                };
            }
            let path = || base.join(value);
            match key {
                "d_model" => cfg.model.d_model = num!(),
                "heads" => cfg.model.heads = num!(),
                "blocks" => cfg.model.blocks = num!(),
                "d_ff" => cfg.model.d_ff = num!(),
                "latent_dim" => cfg.model.latent_dim = num!(),
                "max_len" => cfg.model.max_len = num!(),
                "dropout" => cfg.model.dropout = num!(),
                "epochs" => cfg.train.epochs = num!(),
                "kla_start" => cfg.train.kla_start = num!(),
                "kla_step" => cfg.train.kla_step = num!(),
                "kla_end" => cfg.train.kla_end = num!(),
                "scheduler" => scheduler = value.to_string(),
                "warmup_steps" => warmup_steps = num!(),
                "lr_factor" => lr_factor = num!(),
                "eta_min" => eta_min = num!(),
                "eta_max" => eta_max = num!(),
                "cycle_steps" => cycle_steps = num!(),
                "beta1" => cfg.train.adam.beta1 = num!(),
                "beta2" => cfg.train.adam.beta2 = num!(),
                "base_lr" => cfg.train.adam.base_lr = num!(),
                "batch_size" => cfg.train.batch_size = num!(),
                "seed" => cfg.train.seed = num!(),
                "max_grad_norm" => cfg.train.max_grad_norm = Some(num!()),
                "fp_radius" => cfg.fp_radius = num!(),
                "fp_nbits" => cfg.fp_nbits = num!(),
                "train_path" => cfg.train_path = Some(path()),
                "test_path" => cfg.test_path = Some(path()),
                "test_scaffolds_path" => cfg.test_scaffolds_path = Some(path()),
                "checkpoint_path" => cfg.checkpoint_path = path(),
                "log_path" => cfg.log_path = Some(path()),
                "resume_from" => cfg.resume_from = Some(path()),
                "checkpoint_every" => cfg.checkpoint_every = num!(),
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        let whole = |reason: String| CliError::Config {
            path: origin.to_path_buf(),
            line: 0,
            reason,
        };
        cfg.train.scheduler = match scheduler.as_str() {
            "warmup" => Scheduler::WarmUp {
                warmup_steps,
                factor: lr_factor,
            },
            "sgdr" => Scheduler::Sgdr {
                eta_min,
                eta_max,
                cycle_steps,
            },
            "constant" => Scheduler::Constant,
            other => return Err(whole(format!("unknown scheduler {other:?}"))),
        };
        if warmup_steps == 0 {
            return Err(whole("warmup_steps must be at least 1".into()));
        }
        if !(eta_max > eta_min && eta_min >= 0.0) {
            return Err(whole("need eta_max > eta_min >= 0".into()));
        }
        if cfg.train.kla_step <= 0.0 {
            return Err(whole("kla_step must be positive".into()));
        }
        if cfg.train.batch_size == 0 {
            return Err(whole("batch_size must be positive".into()));
        }
        if !cfg.fp_nbits.is_power_of_two() {
            return Err(whole("fp_nbits must be a power of two".into()));
        }
        cfg.model.validate().map_err(|e| whole(e.to_string()))?;
        Ok(cfg)
    }
}

/// Token counts of the accepted SMILES.
pub fn token_lengths(rows: &[DatasetRow]) -> Vec<usize> {
    rows.iter()
        .map(|r| tokenize(&r.smiles).map(|s| s.len()).unwrap_or(0))
        .collect()
}

/// A freshly initialized checkpoint whose statistics come from `rows`.
pub fn fresh_checkpoint(
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    rows: &[DatasetRow],
    config_echo: &str,
) -> Result<Checkpoint, CliError> {
    let conditions: Vec<ConditionSet> = rows.iter().map(|r| r.properties).collect();
    let mut model = Model::new(model_cfg, train_cfg.seed)?;
    model.condition_stats = ConditionStats::fit(&conditions);
    let state = TrainState::new(&model, train_cfg);
    Ok(Checkpoint {
        histogram: PropertyHistogram::build(&conditions)?,
        lengths: LengthStats::fit(&token_lengths(rows))?,
        config_echo: config_echo.to_string(),
        epoch: 0,
        step: 0,
        seed: train_cfg.seed,
        optimizer: Some(state.optimizer),
        model,
    })
}

/// Tokenized training rows.
pub fn training_rows(rows: &[DatasetRow]) -> Result<Vec<TrainRow>, CliError> {
    let pairs: Vec<(String, ConditionSet)> = rows.iter().map(|r| (r.smiles.clone(), r.properties)).collect();
    Ok(prepare(&pairs)?)
}

/// Runs epochs `ck.epoch + 1 ..= last_epoch` on `rows`, updating the
/// checkpoint in place and reporting each epoch to `on_epoch`. Stops early
/// when `on_epoch` returns `false`.
pub fn continue_training<F>(
    ck: &mut Checkpoint,
    rows: &[TrainRow],
    cfg: &TrainConfig,
    last_epoch: u32,
    mut on_epoch: F,
) -> Result<(), CliError>
where
    F: FnMut(&Checkpoint, &crate::training::EpochStats) -> Result<bool, CliError>,
{
    let mut state = TrainState {
        optimizer: match ck.optimizer.take() {
            Some(adam) => adam,
            None => TrainState::new(&ck.model, cfg).optimizer,
        },
        step: ck.step,
        epoch: ck.epoch,
    };
    let result = (|| {
        for epoch in ck.epoch + 1..=last_epoch {
            let stats = train_epoch(rows, &mut ck.model, &mut state, cfg, epoch)?;
            ck.epoch = epoch;
            ck.step = state.step;
            ck.optimizer = Some(state.optimizer.clone());
            if !on_epoch(ck, &stats)? {
                break;
            }
        }
        Ok(())
    })();
    ck.optimizer = Some(state.optimizer);
    result
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs_run: u32,
    pub final_epoch: u32,
    pub accepted: usize,
    pub rejected: usize,
    pub checkpoint: PathBuf,
}

/// `train`: ingest, train and checkpoint as described by a config file.
pub fn cmd_train(config_path: &Path, out: &mut dyn std::io::Write) -> Result<TrainSummary, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let train_path = cfg.train_path.clone().ok_or_else(|| CliError::Config {
        path: config_path.to_path_buf(),
        line: 0,
        reason: "train_path is required".into(),
    })?;
    let data = ingest(&train_path, Split::Train)?;
    let _ = writeln!(
        out,
        "ingested {}: {} rows, {} rejected",
        train_path.display(),
        data.rows.len(),
        data.rejected.len()
    );
    for r in &data.rejected {
        let _ = writeln!(out, "  rejected line {}: {}", r.line, r.reason);
    }
    if data.rows.is_empty() {
        return Err(CliError::EmptyDataset(train_path));
    }
    let rows = training_rows(&data.rows)?;
    let mut ck = match &cfg.resume_from {
        Some(p) => Checkpoint::load(p)?,
        None => fresh_checkpoint(cfg.model, &cfg.train, &data.rows, &cfg.source)?,
    };
    ck.config_echo = cfg.source.clone();
    let start = ck.epoch;
    if let Some(log) = &cfg.log_path {
        if start == 0 || !log.exists() {
            std::fs::write(log, format!("{EPOCH_LOG_HEADER}\n")).map_err(io_err(log))?;
        }
    }
    continue_training(&mut ck, &rows, &cfg.train, start + cfg.train.epochs, |ck, stats| {
        let line = epoch_log_line(stats);
        let _ = writeln!(out, "{line}");
        if let Some(log) = &cfg.log_path {
            let mut f = OpenOptions::new().append(true).open(log).map_err(io_err(log))?;
            writeln!(f, "{line}").map_err(io_err(log))?;
        }
        if cfg.checkpoint_every > 0 && stats.epoch % cfg.checkpoint_every == 0 {
            ck.save(&cfg.checkpoint_path)?;
        }
        Ok(true)
    })?;
    ck.save(&cfg.checkpoint_path)?;
    Ok(TrainSummary {
        epochs_run: ck.epoch - start,
        final_epoch: ck.epoch,
        accepted: data.rows.len(),
        rejected: data.rejected.len(),
        checkpoint: cfg.checkpoint_path,
    })
}

/// `generate`: decode `n` molecules from a checkpoint.
pub fn cmd_generate(
    checkpoint: &Path,
    n: usize,
    seed: u64,
    beam_width: usize,
    conditions_file: Option<&Path>,
    log: &mut dyn std::io::Write,
) -> Result<GenerationReport, CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let fixed = conditions_file.map(read_conditions).transpose()?;
    let source = match &fixed {
        Some(list) => ConditionSource::Fixed(list),
        None => ConditionSource::Histogram(&ck.histogram),
    };
    let cfg = GenerationConfig {
        count: n,
        beam_width,
        seed,
        ..GenerationConfig::default()
    };
    let started = Instant::now();
    let report = generate(&ck.model, &source, &ck.lengths, &cfg)?;
    let elapsed = started.elapsed().as_secs_f64() * 1000.0;
    let _ = writeln!(
        log,
        "generated {n} molecules in {elapsed:.0} ms ({:.1} ms per molecule), validity {:.4}",
        elapsed / n.max(1) as f64,
        report.valid_fraction()
    );
    if !report.molecules.is_empty() {
        let gap = report
            .molecules
            .iter()
            .map(|m| (m.token_count as f64 - m.latent_len as f64).abs())
            .sum::<f64>()
            / report.molecules.len() as f64;
        let _ = writeln!(log, "mean |token count - latent length| = {gap:.3}");
    }
    Ok(report)
}

/// `eval`: the metric suite over a generated file against reference files.
pub fn cmd_eval(
    generated: &Path,
    train: Option<&Path>,
    test: Option<&Path>,
    test_scaffolds: Option<&Path>,
) -> Result<MetricsReport, CliError> {
    let gen = read_smiles_column(generated)?;
    let load = |p: Option<&Path>, prov| -> Result<Option<MoleculeSet>, CliError> {
        p.map(|p| Ok(MoleculeSet::from_smiles(&read_smiles_column(p)?, prov)))
            .transpose()
    };
    let train = load(train, Provenance::Train)?;
    let test = load(test, Provenance::Test)?;
    let sf = load(test_scaffolds, Provenance::TestScaffold)?;
    Ok(evaluate(
        &gen,
        &References {
            train: train.as_ref(),
            test: test.as_ref(),
            test_scaffolds: sf.as_ref(),
        },
    ))
}

/// One attention weight of an encoder head.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionEntry {
    pub layer: usize,
    pub head: usize,
    pub query_index: usize,
    pub query_token: String,
    pub key_index: usize,
    pub key_token: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionDump {
    pub smiles: String,
    pub conditions: [f64; NUM_CONDITIONS],
    pub labels: Vec<String>,
    pub entries: Vec<AttentionEntry>,
}

impl AttentionDump {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// One character-shaded grid per (layer, head): rows are queries,
    /// columns keys.
    pub fn heatmap(&self) -> String {
        const SHADES: &[u8] = b" .:-=+*#%@";
        let n = self.labels.len();
        let width = self.labels.iter().map(String::len).max().unwrap_or(1);
        let mut out = String::new();
        let mut groups: Vec<(usize, usize)> = self.entries.iter().map(|e| (e.layer, e.head)).collect();
        groups.dedup();
        for (layer, head) in groups {
            out.push_str(&format!("layer {layer} head {head}\n"));
            let mut grid = vec![vec![0.0; n]; n];
            for e in self.entries.iter().filter(|e| e.layer == layer && e.head == head) {
                grid[e.query_index][e.key_index] = e.weight;
            }
            for (q, row) in grid.iter().enumerate() {
                let cells: String = row
                    .iter()
                    .map(|w| SHADES[((w.clamp(0.0, 1.0) * (SHADES.len() - 1) as f64).round()) as usize] as char)
                    .collect();
                out.push_str(&format!("{:>width$} |{cells}|\n", self.labels[q]));
            }
        }
        out
    }
}

/// `attend`: encoder self-attention for one SMILES, conditioned on
/// `conditions` (the training means when `None`).
pub fn cmd_attend(
    checkpoint: &Path,
    smiles: &str,
    layer: Option<usize>,
    head: Option<usize>,
    conditions: Option<ConditionSet>,
) -> Result<AttentionDump, CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    attention_dump(&ck.model, smiles, layer, head, conditions)
}

pub fn attention_dump(
    model: &Model,
    smiles: &str,
    layer: Option<usize>,
    head: Option<usize>,
    conditions: Option<ConditionSet>,
) -> Result<AttentionDump, CliError> {
    let (layers, heads) = (model.config.blocks, model.config.heads);
    if let Some(l) = layer.filter(|&l| l >= layers) {
        return Err(CliError::OutOfRange {
            what: "layer",
            index: l,
            count: layers,
        });
    }
    if let Some(h) = head.filter(|&h| h >= heads) {
        return Err(CliError::OutOfRange {
            what: "head",
            index: h,
            count: heads,
        });
    }
    let seq = tokenize(smiles)?;
    let conditions = conditions.unwrap_or(ConditionSet(model.condition_stats.mean));
    let batch = Batch::new(&[(&seq, conditions)])?;
    let tape = Tape::new();
    let g = Graph::eval(&tape, &model.store);
    let (_, weights) = model.encode(&g, &batch)?;
    let labels: Vec<String> = (1..=NUM_CONDITIONS)
        .map(|k| format!("cond{k}"))
        .chain(seq.tokens().iter().map(|t| t.as_str().to_string()))
        .collect();
    let n = labels.len();
    let mut entries = Vec::new();
    for (l, w) in weights.iter().enumerate() {
        if layer.is_some_and(|x| x != l) {
            continue;
        }
        let w = w.value();
        for h in (0..heads).filter(|&h| head.is_none_or(|x| x == h)) {
            for q in 0..n {
                for k in 0..n {
                    entries.push(AttentionEntry {
                        layer: l,
                        head: h,
                        query_index: q,
                        query_token: labels[q].clone(),
                        key_index: k,
                        key_token: labels[k].clone(),
                        weight: w.data()[(h * n + q) * n + k],
                    });
                }
            }
        }
    }
    Ok(AttentionDump {
        smiles: smiles.to_string(),
        conditions: conditions.0,
        labels,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationLine {
    pub line: u64,
    pub smiles: String,
    pub verdict: Verdict,
}

/// `validate`: verdicts for every SMILES in the `smiles` column of a CSV.
pub fn cmd_validate(path: &Path) -> Result<Vec<ValidationLine>, CliError> {
    Ok(read_smiles_column(path)?
        .into_iter()
        .enumerate()
        .map(|(i, smiles)| ValidationLine {
            line: i as u64 + 2,
            verdict: validate(&smiles),
            smiles,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn ingest_counts_rows_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let long = "C".repeat(81);
        let p = write(
            dir.path(),
            "d.csv",
            &format!("smiles,prop1,prop2,prop3\nCCO,1,2,3\n{long},1,2,3\nc1ccccc1,0.5,0,0.1\nCC%,1,1,1\n"),
        );
        let got = ingest(&p, Split::Train).unwrap();
        assert_eq!(got.rows.len(), 2);
        assert_eq!(got.rejected.iter().map(|r| r.line).collect::<Vec<_>>(), vec![3, 5]);
        assert_eq!(got.rows[1].properties, ConditionSet([0.5, 0.0, 0.1]));
    }

    #[test]
    fn ingest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad = write(dir.path(), "b.csv", "smiles,prop1,prop2,prop3\nCCO,1,2,3\nCCN,1,x,3\n");
        assert!(matches!(
            ingest(&bad, Split::Train),
            Err(CliError::MalformedRow { line: 3, .. })
        ));
        let short = write(dir.path(), "s.csv", "smiles,prop1,prop2,prop3\nCCO,1,2\n");
        assert!(matches!(
            ingest(&short, Split::Train),
            Err(CliError::MalformedRow { line: 2, .. })
        ));
        let header = write(dir.path(), "h.csv", "smi,a,b,c\nCCO,1,2,3\n");
        assert!(matches!(
            ingest(&header, Split::Train),
            Err(CliError::HeaderMismatch { .. })
        ));
        let missing = dir.path().join("nope.csv");
        let err = ingest(&missing, Split::Train).unwrap_err();
        assert_eq!(err.category(), "io-failure");
        assert!(err.to_string().contains("nope.csv"));
    }

    #[test]
    fn config_parsing() {
        let text = "# toy\nd_model = 32\nheads = 2\nblocks = 1\nd_ff = 64\nlatent_dim = 8\n\
                    scheduler = sgdr\neta_max = 0.001\ntrain_path = data/train.csv\nseed = 7 # trailing\n";
        let cfg = RunConfig::parse(text, Path::new("x.cfg"), Path::new("/base")).unwrap();
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train_path, Some(PathBuf::from("/base/data/train.csv")));
        assert_eq!(
            cfg.train.scheduler,
            Scheduler::Sgdr {
                eta_min: 0.0,
                eta_max: 0.001,
                cycle_steps: 0
            }
        );
        let bad = RunConfig::parse("d_model = 30\nheads = 4\n", Path::new("x"), Path::new("."));
        assert!(matches!(bad, Err(CliError::Config { .. })));
        let unknown = RunConfig::parse("colour = blue\n", Path::new("x"), Path::new("."));
        assert!(matches!(unknown, Err(CliError::Config { line: 1, .. })));
    }

    #[test]
    fn conditions_file() {
        let dir = tempfile::tempdir().unwrap();
        let ok = write(dir.path(), "c.csv", "prop1,prop2,prop3\n0.1,20,0.05\n");
        assert_eq!(read_conditions(&ok).unwrap(), vec![ConditionSet([0.1, 20.0, 0.05])]);
        let bad = write(dir.path(), "d.csv", "prop1,prop2,prop3\n0.1,nan,0.05\n");
        assert!(matches!(
            read_conditions(&bad),
            Err(CliError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn attention_dump_rows_sum_to_one() {
        let mut cfg = ModelConfig::toy();
        cfg.d_model = 16;
        cfg.d_ff = 32;
        cfg.latent_dim = 4;
        let model = Model::new(cfg, 2).unwrap();
        let dump = attention_dump(&model, "CC(=O)O", None, None, None).unwrap();
        assert_eq!(&dump.labels[..4], &["cond1", "cond2", "cond3", "C"]);
        let n = dump.labels.len();
        assert_eq!(dump.entries.len(), cfg.blocks * cfg.heads * n * n);
        for chunk in dump.entries.chunks(n) {
            let s: f64 = chunk.iter().map(|e| e.weight).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(dump.heatmap().starts_with("layer 0 head 0\n"));
        let err = attention_dump(&model, "CC", Some(5), None, None).unwrap_err();
        assert!(err.to_string().contains("0..2"));
        let json: serde_json::Value = serde_json::from_str(&dump.to_json()).unwrap();
        assert_eq!(json["entries"][0]["key_token"], "cond1");
    }
}
