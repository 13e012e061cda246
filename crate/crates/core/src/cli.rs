//! Command-line surface: cohort generation, pretraining, fine-tuning,
//! evaluation, comparison and group profiling over a run directory.
//!
//! A run directory holds `manifest.json`, `checkpoints/`, `logs/` and
//! `reports/`. All randomness comes from one root seed (see [`Seeds`]).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{ips_weights, train_lr};
use crate::checkpoint::{self, read_json, write_json, Archive};
use crate::data::{
    assign_popularity_groups, code_frequencies, load_ddi_graph, load_records, profile_groups, split_dataset,
    CodeVocabulary, DdiGraph, EhrDataset, Split,
};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::finetune::{finetune, EpochSampling, LossWeights};
use crate::metrics::{evaluate, render_table, EvalReport, Prediction};
use crate::pretrain::{pretrain, PretrainSchedule};
use crate::synth::{generate_cohort, SynthConfig, DDI_FILE, RECORDS_FILE, TRUTH_FILE, VOCAB_FILE};
use crate::train::{Schedule, Seeds, TrainingLog};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENCODER_SMP_FILE: &str = "pretrain_smp.json";
pub const ENCODER_SR_FILE: &str = "pretrain_sr.json";
pub const MODEL_FILE: &str = "model.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory written by `synth`; fills in any unset file path below.
    pub data_dir: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub ddi: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    pub n_groups: usize,
    pub n_profile_groups: usize,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            n_groups: 5,
            n_profile_groups: 13,
        }
    }
}

/// Everything a command needs besides its flags. Loaded from TOML (or JSON
/// by extension); flags override file values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threshold: f64,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub encoder: EncoderConfig,
    pub loss: LossWeights,
    pub pretrain: PretrainSchedule,
    pub finetune: Schedule,
    pub baseline: Schedule,
    pub groups: GroupingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            threshold: 0.5,
            paths: PathsConfig::default(),
            synth: SynthConfig::default(),
            encoder: EncoderConfig::default(),
            loss: LossWeights::default(),
            pretrain: PretrainSchedule::default(),
            finetune: Schedule::default(),
            baseline: Schedule {
                epochs: 50,
                lr: 3e-2,
                ..Schedule::default()
            },
            groups: GroupingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "json") {
            return read_json(path);
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn root_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::validation("a seed is required: set `seed` in the config or pass --seed"))
    }

    pub fn seeds(&self) -> Result<Seeds> {
        Ok(Seeds::from_root(self.root_seed()?))
    }

    pub fn validate(&self) -> Result<()> {
        self.root_seed()?;
        self.encoder.validate()?;
        self.loss.validate()?;
        self.finetune.validate()?;
        self.baseline.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::validation(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        if self.groups.n_groups == 0 || self.groups.n_profile_groups == 0 {
            return Err(Error::validation("group counts must be positive"));
        }
        Ok(())
    }

    fn data_file(&self, explicit: &Option<PathBuf>, name: &str, what: &str) -> Result<PathBuf> {
        explicit
            .clone()
            .or_else(|| self.paths.data_dir.as_ref().map(|d| d.join(name)))
            .ok_or_else(|| Error::validation(format!("no {what} path: set paths.data_dir or paths.{what}")))
    }

    pub fn records_path(&self) -> Result<PathBuf> {
        self.data_file(&self.paths.records, RECORDS_FILE, "records")
    }

    pub fn vocab_path(&self) -> Result<PathBuf> {
        self.data_file(&self.paths.vocab, VOCAB_FILE, "vocab")
    }

    pub fn ddi_path(&self) -> Result<PathBuf> {
        self.data_file(&self.paths.ddi, DDI_FILE, "ddi")
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        self.paths
            .run_dir
            .clone()
            .ok_or_else(|| Error::validation("no run directory: set paths.run_dir or pass --run-dir"))
    }
}

/// Loaded, split inputs of a run.
#[derive(Clone, Debug)]
pub struct RunInputs {
    pub dataset: EhrDataset,
    pub ddi: DdiGraph,
    /// SHA-256 per input file, keyed by role.
    pub hashes: BTreeMap<String, String>,
}

impl RunInputs {
    pub fn vocab(&self) -> &CodeVocabulary {
        &self.dataset.vocab
    }
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Loads records, vocabulary and DDI graph and applies the seeded split.
pub fn load_inputs(config: &RunConfig) -> Result<RunInputs> {
    let records = config.records_path()?;
    let vocab_path = config.vocab_path()?;
    let ddi_path = config.ddi_path()?;
    let mut hashes = BTreeMap::new();
    for (role, p) in [("records", &records), ("vocab", &vocab_path), ("ddi", &ddi_path)] {
        if !p.is_file() {
            return Err(Error::validation(format!("{role} file {} does not exist", p.display())));
        }
        hashes.insert(role.to_string(), sha256_file(p)?);
    }
    let vocab = CodeVocabulary::load(&vocab_path)?;
    let ddi = load_ddi_graph(&ddi_path, &vocab)?;
    if ddi.skipped > 0 {
        log::warn!("{}: skipped {} pairs naming unknown or identical medications", ddi_path.display(), ddi.skipped);
    }
    let dataset = split_dataset(load_records(&records, vocab)?, config.seeds()?.data)?;
    Ok(RunInputs {
        dataset,
        ddi: ddi.graph,
        hashes,
    })
}

/// Per-command provenance: resolved config, seed and file hashes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub config: RunConfig,
    pub seed: u64,
    pub args: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub commands: BTreeMap<String, CommandRecord>,
}

impl Manifest {
    pub fn load_or_default(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if path.exists() {
            read_json(path)
        } else {
            Ok(Manifest::default())
        }
    }
}

fn prepare_run_dir(run_dir: &Path) -> Result<()> {
    for sub in ["checkpoints", "logs", "reports"] {
        let d = run_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    Ok(())
}

fn record_command(
    run_dir: &Path,
    name: &str,
    config: &RunConfig,
    args: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    outputs: &[PathBuf],
) -> Result<()> {
    let mut manifest = Manifest::load_or_default(run_dir)?;
    let mut hashed = BTreeMap::new();
    for p in outputs {
        let key = p.strip_prefix(run_dir).unwrap_or(p).to_string_lossy().into_owned();
        hashed.insert(key, sha256_file(p)?);
    }
    manifest.commands.insert(
        name.to_string(),
        CommandRecord {
            config: config.clone(),
            seed: config.root_seed()?,
            args,
            inputs,
            outputs: hashed,
        },
    );
    write_json(run_dir.join(MANIFEST_FILE), &manifest)
}

// ---------------------------------------------------------------- synth

/// Manifest written next to a generated cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub config: SynthConfig,
    pub files: BTreeMap<String, String>,
}

/// Generates a cohort into `out`. Refuses a non-empty directory unless
/// `force` is set.
pub fn cmd_synth(config: &SynthConfig, out: &Path, force: bool) -> Result<CohortManifest> {
    config.validate()?;
    if out.exists() && !force {
        let non_empty = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
        if non_empty {
            return Err(Error::validation(format!(
                "{} already exists; pass --force to overwrite",
                out.display()
            )));
        }
    }
    let cohort = generate_cohort(config)?;
    cohort.save(out)?;
    let mut files = BTreeMap::new();
    for name in [RECORDS_FILE, VOCAB_FILE, DDI_FILE, TRUTH_FILE] {
        files.insert(name.to_string(), sha256_file(out.join(name))?);
    }
    let manifest = CohortManifest {
        config: config.clone(),
        files,
    };
    write_json(out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

// ------------------------------------------------------------- pretrain

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainLogs {
    pub smp: TrainingLog,
    pub sr: TrainingLog,
}

/// Pretrains from the seeded initialization; writes both phase checkpoints
/// and `logs/pretrain.json`.
pub fn cmd_pretrain(config: &RunConfig) -> Result<PretrainLogs> {
    config.validate()?;
    let run_dir = config.run_dir()?;
    let inputs = load_inputs(config)?;
    prepare_run_dir(&run_dir)?;
    let seeds = config.seeds()?;
    let vocab = inputs.vocab();
    let init = EncoderParams::seeded(&config.encoder, vocab.n_diseases(), vocab.n_procedures(), seeds.init);
    let schedule = PretrainSchedule {
        seed: seeds.smp,
        ..config.pretrain.clone()
    };
    let train = inputs.dataset.split_records(Split::Train);
    let val = inputs.dataset.split_records(Split::Val);
    let out = pretrain(&train, &val, vocab, init, &config.encoder, &schedule)?;

    let ckpt = run_dir.join("checkpoints");
    let smp_path = ckpt.join(ENCODER_SMP_FILE);
    let sr_path = ckpt.join(ENCODER_SR_FILE);
    checkpoint::save_encoder(&smp_path, &config.encoder, vocab, &out.after_smp, &[("smp_head", &out.smp_head)])?;
    checkpoint::save_encoder(
        &sr_path,
        &config.encoder,
        vocab,
        &out.encoder,
        &[("smp_head", &out.smp_head), ("sr_head", &out.sr_head)],
    )?;
    let logs = PretrainLogs {
        smp: out.smp_log,
        sr: out.sr_log,
    };
    let log_path = run_dir.join("logs").join("pretrain.json");
    write_json(&log_path, &logs)?;
    record_command(&run_dir, "pretrain", config, BTreeMap::new(), inputs.hashes, &[smp_path, sr_path, log_path])?;
    Ok(logs)
}

// ------------------------------------------------------------- finetune

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Transformer encoder with the combined loss.
    Raremed,
    /// Encoder trained from scratch with inverse-propensity resampling.
    Rebalancing,
    /// Multi-hot logistic regression.
    Lr,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct FinetuneOptions {
    pub method: Option<Method>,
    pub from_scratch: bool,
    /// Pretrained encoder; defaults to the run's post-SR checkpoint.
    pub encoder: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLog {
    pub method: Method,
    pub from_scratch: bool,
    pub best_epoch: Option<usize>,
    pub log: TrainingLog,
}

/// Trains the selected method and writes `checkpoints/model.json` plus the
/// validation curve in `logs/finetune.json`.
pub fn cmd_finetune(config: &RunConfig, options: &FinetuneOptions) -> Result<FinetuneLog> {
    config.validate()?;
    let method = options.method.unwrap_or(Method::Raremed);
    let run_dir = config.run_dir()?;
    let seeds = config.seeds()?;

    let encoder_path = match (method, options.from_scratch) {
        (Method::Raremed, false) => {
            let p = options
                .encoder
                .clone()
                .unwrap_or_else(|| run_dir.join("checkpoints").join(ENCODER_SR_FILE));
            if !p.exists() {
                return Err(Error::validation(format!(
                    "pretrained checkpoint {} not found; run pretrain first or pass --from-scratch",
                    p.display()
                )));
            }
            Some(p)
        }
        _ => None,
    };
    let inputs = load_inputs(config)?;
    prepare_run_dir(&run_dir)?;
    let vocab = inputs.vocab();
    let train = inputs.dataset.split_records(Split::Train);
    let val = inputs.dataset.split_records(Split::Val);
    let model_path = run_dir.join("checkpoints").join(MODEL_FILE);
    let mut input_hashes = inputs.hashes.clone();

    let (best_epoch, log) = if method == Method::Lr {
        let schedule = Schedule {
            seed: seeds.sampling,
            ..config.baseline.clone()
        };
        let out = train_lr(&train, &val, vocab, &schedule)?;
        checkpoint::save_lr(&model_path, vocab, &out.model)?;
        (out.best_epoch, out.log)
    } else {
        let encoder = match &encoder_path {
            Some(p) => {
                input_hashes.insert("encoder".into(), sha256_file(p)?);
                checkpoint::load_encoder(p, &config.encoder, vocab)?
            }
            None => EncoderParams::seeded(&config.encoder, vocab.n_diseases(), vocab.n_procedures(), seeds.init),
        };
        let sampling = if method == Method::Rebalancing {
            let freqs = code_frequencies(&inputs.dataset, Split::Train);
            EpochSampling::Weighted(ips_weights(&train, &freqs).aligned(&train)?)
        } else {
            EpochSampling::Shuffle
        };
        let schedule = Schedule {
            seed: seeds.sampling,
            ..config.finetune.clone()
        };
        let out = finetune(
            encoder,
            &config.encoder,
            vocab,
            &train,
            &val,
            &inputs.ddi,
            &schedule,
            config.loss,
            &sampling,
        )?;
        checkpoint::save_model(&model_path, vocab, &out.model)?;
        (out.best_epoch, out.log)
    };
    let result = FinetuneLog {
        method,
        from_scratch: encoder_path.is_none(),
        best_epoch,
        log,
    };
    let log_path = run_dir.join("logs").join("finetune.json");
    write_json(&log_path, &result)?;
    let args = BTreeMap::from([
        ("method".to_string(), format!("{method:?}").to_lowercase()),
        ("from_scratch".to_string(), result.from_scratch.to_string()),
    ]);
    record_command(&run_dir, "finetune", config, args, input_hashes, &[model_path, log_path])?;
    Ok(result)
}

// ------------------------------------------------------------- evaluate

/// Predictions of any saved model format.
pub fn predict_with_checkpoint(
    path: &Path,
    records: &[&crate::data::PatientRecord],
    vocab: &CodeVocabulary,
    threshold: f64,
) -> Result<Vec<Prediction>> {
    let archive = Archive::load(path)?;
    match archive.format.as_str() {
        checkpoint::MODEL_FORMAT => checkpoint::load_model(path, vocab)?.predict_all(records, vocab, threshold),
        checkpoint::LR_FORMAT => Ok(checkpoint::load_lr(path, vocab)?.predict_all(records, vocab, threshold)),
        other => Err(Error::validation(format!(
            "{} holds a {other} checkpoint, which cannot make predictions",
            path.display()
        ))),
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn report_path(run_dir: &Path, split: Split) -> PathBuf {
    run_dir.join("reports").join(format!("{split}_report.json"))
}

/// Evaluates a checkpoint on `split`: writes the prediction dump, the
/// report JSON and a text table under `reports/`.
pub fn cmd_evaluate(config: &RunConfig, model: Option<&Path>, split: Split) -> Result<EvalReport> {
    config.validate()?;
    let run_dir = config.run_dir()?;
    let model_path = model
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir.join("checkpoints").join(MODEL_FILE));
    let inputs = load_inputs(config)?;
    prepare_run_dir(&run_dir)?;
    let records = inputs.dataset.split_records(split);
    let freqs = code_frequencies(&inputs.dataset, Split::Train);
    let groups = assign_popularity_groups(records.iter().copied(), &freqs, config.groups.n_groups)?;
    let predictions = predict_with_checkpoint(&model_path, &records, inputs.vocab(), config.threshold)?;
    let report = evaluate(&predictions, &records, &inputs.ddi, &groups)?;

    let reports = run_dir.join("reports");
    let dump = reports.join(format!("{split}_predictions.jsonl"));
    let json = report_path(&run_dir, split);
    let table = reports.join(format!("{split}_table.txt"));
    write_jsonl(&dump, &predictions)?;
    write_json(&json, &report)?;
    let label = run_dir.file_name().map_or("model".into(), |n| n.to_string_lossy().into_owned());
    fs::write(&table, report.to_table(&label)).map_err(|e| Error::io(&table, e))?;

    let mut hashes = inputs.hashes;
    hashes.insert("model".into(), sha256_file(&model_path)?);
    let args = BTreeMap::from([
        ("split".to_string(), split.to_string()),
        ("model".to_string(), model_path.display().to_string()),
    ]);
    record_command(&run_dir, &format!("evaluate-{split}"), config, args, hashes, &[dump, json, table])?;
    Ok(report)
}

// -------------------------------------------------------------- compare

/// Merges the reports of several runs into one table. Runs without a
/// report render as absent; runs on different data are an error.
pub fn cmd_compare(runs: &[(String, PathBuf)], split: Split) -> Result<String> {
    let mut rows = Vec::with_capacity(runs.len());
    let mut reference: Option<(String, BTreeMap<String, String>, Option<u64>)> = None;
    for (label, dir) in runs {
        let report_file = report_path(dir, split);
        if !report_file.exists() {
            log::warn!("run {label}: no {split} report in {}", dir.display());
            rows.push((label.clone(), None));
            continue;
        }
        let manifest = Manifest::load_or_default(dir)?;
        let key = format!("evaluate-{split}");
        if let Some(record) = manifest.commands.get(&key) {
            let data: BTreeMap<String, String> = record
                .inputs
                .iter()
                .filter(|(k, _)| ["records", "vocab", "ddi"].contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            let seed = record.config.seed;
            match &reference {
                None => reference = Some((label.clone(), data, seed)),
                Some((first, ref_data, ref_seed)) => {
                    if &data != ref_data || seed != *ref_seed {
                        return Err(Error::validation(format!(
                            "runs {first} and {label} were evaluated on different datasets or splits"
                        )));
                    }
                }
            }
        }
        let report: EvalReport = read_json(&report_file)?;
        rows.push((label.clone(), Some(report)));
    }
    Ok(render_table(&rows))
}

// -------------------------------------------------------------- profile

/// Profiles all records into equal-width popularity intervals and writes
/// `reports/profile.json`. Returns the rendered table.
pub fn cmd_profile(config: &RunConfig) -> Result<String> {
    config.validate()?;
    let run_dir = config.run_dir()?;
    let inputs = load_inputs(config)?;
    prepare_run_dir(&run_dir)?;
    let freqs = code_frequencies(&inputs.dataset, Split::Train);
    let groups = profile_groups(&inputs.dataset, &freqs, config.groups.n_profile_groups);
    let path = run_dir.join("reports").join("profile.json");
    write_json(&path, &groups)?;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5} {:>17} {:>9} {:>9} {:>9} {:>9} {:>11}",
        "group", "rarest freq", "patients", "#dis", "#proc", "#med", "med pop"
    );
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    for (i, g) in groups.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>5} {:>17} {:>9} {:>9} {:>9} {:>9} {:>11}",
            i + 1,
            format!("[{:.1}, {:.1})", g.interval.0, g.interval.1),
            g.n_patients,
            fmt(g.mean_diseases),
            fmt(g.mean_procedures),
            fmt(g.mean_medications),
            fmt(g.mean_medication_popularity)
        );
    }
    record_command(&run_dir, "profile", config, BTreeMap::new(), inputs.hashes, &[path])?;
    Ok(out)
}

// ------------------------------------------------------------------ clap

#[derive(Debug, Parser)]
#[command(name = "raremed", version, about = "Pretrain-finetune medication recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort directory.
    Synth(SynthArgs),
    /// Run sequence-matching then self-reconstruction pretraining.
    Pretrain(PretrainArgs),
    /// Fine-tune a model (or train a baseline) and keep the best validation epoch.
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Merge the reports of several runs into one table.
    Compare(CompareArgs),
    /// Profile patients by rarest-disease popularity.
    Profile(ProfileArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML or JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory produced by `synth`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            config.seed = Some(s);
        }
        if let Some(d) = &self.data_dir {
            config.paths.data_dir = Some(d.clone());
        }
        if let Some(d) = &self.run_dir {
            config.paths.run_dir = Some(d.clone());
        }
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Config file; only its `[synth]` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing output directory.
    #[arg(long)]
    pub force: bool,
    /// Overrides `synth.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub n_patients: Option<usize>,
    #[arg(long)]
    pub zipf_exponent: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub smp_epochs: Option<usize>,
    #[arg(long)]
    pub sr_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "raremed")]
    pub method: Method,
    /// Skip pretraining: start from the seeded initialization.
    #[arg(long)]
    pub from_scratch: bool,
    /// Pretrained encoder checkpoint (default: the run's post-SR checkpoint).
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model checkpoint (default: the run's fine-tuned model).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Recommendation threshold (strict `>`).
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Runs as `label=run_dir`.
    #[arg(long = "run", required = true, value_parser = parse_run)]
    pub runs: Vec<(String, PathBuf)>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Also write the table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub groups: Option<usize>,
}

fn parse_run(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, dir)) if !label.is_empty() && !dir.is_empty() => Ok((label.to_string(), PathBuf::from(dir))),
        _ => Err(format!("expected label=run_dir, got {s:?}")),
    }
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let mut synth = match &a.config {
                Some(p) => RunConfig::load(p)?.synth,
                None => SynthConfig::default(),
            };
            if let Some(s) = a.seed {
                synth.seed = s;
            }
            if let Some(n) = a.noise {
                synth.noise_flip_prob = n;
            }
            if let Some(n) = a.n_patients {
                synth.n_patients = n;
            }
            if let Some(z) = a.zipf_exponent {
                synth.zipf_exponent = z;
            }
            let manifest = cmd_synth(&synth, &a.out, a.force)?;
            println!("wrote {} files to {}", manifest.files.len(), a.out.display());
        }
        Command::Pretrain(a) => {
            let mut config = a.common.resolve()?;
            if let Some(e) = a.smp_epochs {
                config.pretrain.smp_epochs = e;
            }
            if let Some(e) = a.sr_epochs {
                config.pretrain.sr_epochs = e;
            }
            if let Some(lr) = a.lr {
                config.pretrain.lr = lr;
            }
            let logs = cmd_pretrain(&config)?;
            let last = |l: &TrainingLog| l.epochs.last().map(|e| e.train_loss);
            println!("smp final loss {:?}, sr final loss {:?}", last(&logs.smp), last(&logs.sr));
        }
        Command::Finetune(a) => {
            let mut config = a.common.resolve()?;
            if let Some(x) = a.alpha {
                config.loss.alpha = x;
            }
            if let Some(x) = a.beta {
                config.loss.beta = x;
            }
            let phase = if a.method == Method::Lr {
                &mut config.baseline
            } else {
                &mut config.finetune
            };
            if let Some(e) = a.epochs {
                phase.epochs = e;
            }
            if let Some(lr) = a.lr {
                phase.lr = lr;
            }
            let options = FinetuneOptions {
                method: Some(a.method),
                from_scratch: a.from_scratch,
                encoder: a.encoder,
            };
            let out = cmd_finetune(&config, &options)?;
            let best = out.best_epoch.and_then(|e| out.log.epochs[e].val_metric);
            println!("best epoch {:?}, validation jaccard {:?}", out.best_epoch, best);
        }
        Command::Evaluate(a) => {
            let mut config = a.common.resolve()?;
            if let Some(t) = a.threshold {
                config.threshold = t;
            }
            let report = cmd_evaluate(&config, a.model.as_deref(), a.split)?;
            print!("{}", report.to_table(&a.split.to_string()));
        }
        Command::Compare(a) => {
            let table = cmd_compare(&a.runs, a.split)?;
            if let Some(p) = &a.out {
                fs::write(p, &table).map_err(|e| Error::io(p, e))?;
            }
            print!("{table}");
        }
        Command::Profile(a) => {
            let mut config = a.common.resolve()?;
            if let Some(g) = a.groups {
                config.groups.n_profile_groups = g;
            }
            print!("{}", cmd_profile(&config)?);
        }
    }
    Ok(())
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 for invalid input, 2 for runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.seed = Some(3);
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn seed_is_mandatory() {
        let c = RunConfig::default();
        assert!(c.validate().unwrap_err().is_validation());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 1\nbogus = 2\n").is_err());
        assert!(toml::from_str::<RunConfig>("seed = 1\n[finetune]\nseed = 2\n").is_err());
    }

    #[test]
    fn run_spec_parsing() {
        assert_eq!(parse_run("lr=runs/lr").unwrap(), ("lr".to_string(), PathBuf::from("runs/lr")));
        assert!(parse_run("runs/lr").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["raremed", "frobnicate"]), 1);
        assert_eq!(run(["raremed", "synth"]), 1);
    }
}
