//! The `crowdcall` command line.
//!
//! Every subcommand accepts `--config FILE` with `key = value` lines. Flags
//! override config entries, and `CROWDCALL_SEED` supplies the seed when
//! neither does. Keys a subcommand does not know are rejected. Commands that
//! write to `--out` leave a `config.txt` there holding every resolved setting.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::aggregate::{Baseline, WeightedRule};
use crate::analytics::{corpus_report, credibility_signals, readability, Lexicons};
use crate::corpus::{parse_dataset, save_dataset, split_by_question, validate, Dataset, Split};
use crate::encode::{EmbeddingTable, EncoderConfig, EncoderKind, TextEncoder};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, call_all_days, difficulty_accuracy, difficulty_quartiles, format_mcnemar, format_table, load_records, mcnemar,
    save_records, Aggregator, DayRecord, EvalReport,
};
use crate::neural::{load_model, save_model, train, ModelHeader, NeuralAggregator, TrainConfig};
use crate::synth::{bayes_bounds, generate, SynthConfig};
use crate::windowing::{WindowKind, WindowMode};

pub const SEED_ENV: &str = "CROWDCALL_SEED";
pub const CONFIG_ECHO: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(name = "crowdcall", version, about = "Call binary forecasting questions from crowdsourced forecasts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Common {
    /// `key = value` settings file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Debug, Args, Default)]
struct WindowArgs {
    /// daily or active
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    active_span: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a dataset against the schema rules
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
    },
    /// Split question ids into train / validation / test
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
        /// Three comma-separated ratios
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Generate a synthetic dataset and its latent-variable manifest
    Synth {
        #[command(flatten)]
        common: Common,
        /// Also estimate the Bayes accuracy bounds from this many windows
        #[arg(long)]
        bounds_windows: Option<String>,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// Per-justification readability and credibility signals
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        lexicons: Option<String>,
    },
    /// Corpus summary statistics and the forecasts-per-day curve
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        lexicons: Option<String>,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// Train the neural aggregator
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        split: Option<String>,
        /// p, pq, pj or pqj
        #[arg(long)]
        ablation: Option<String>,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        learning_rate: Option<String>,
        #[arg(long)]
        batch_size: Option<String>,
        #[arg(long)]
        patience: Option<String>,
        #[arg(long)]
        dropout: Option<String>,
        #[arg(long)]
        max_epochs: Option<String>,
        #[arg(long)]
        hidden: Option<String>,
        #[arg(long)]
        proj_dim: Option<String>,
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        newest_first: Option<String>,
        /// hashing or external
        #[arg(long)]
        encoder: Option<String>,
        #[arg(long)]
        embeddings: Option<String>,
        #[arg(long)]
        hash_dim: Option<String>,
    },
    /// Call questions day by day with a trained model
    Call {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        embeddings: Option<String>,
        #[arg(long)]
        split: Option<String>,
        /// all, train, validation or test
        #[arg(long)]
        subset: Option<String>,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        jobs: Option<String>,
    },
    /// Score baselines and models over every day of every question
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
        /// Comma-separated: majority, weighted, none
        #[arg(long)]
        baseline: Option<String>,
        /// paper-literal or mean-threshold
        #[arg(long)]
        weighted_rule: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        embeddings: Option<String>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        subset: Option<String>,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        jobs: Option<String>,
        /// Drop the continuity correction from McNemar's test
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        uncorrected: Option<String>,
    },
    /// McNemar's test between two day-record files
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: Option<String>,
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        uncorrected: Option<String>,
    },
}

/// Settings from flags layered over a config file, with every value that
/// was read recorded for the echo.
struct Settings {
    given: BTreeMap<String, String>,
    used: BTreeSet<String>,
    echo: BTreeMap<String, String>,
}

fn norm_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("config line {}: expected `key = value`", i + 1)))?;
        out.insert(norm_key(k), v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    fn new(command: &str, common: &Common, flags: &[(&str, &Option<String>)]) -> Result<Self> {
        let mut given = match &common.config {
            Some(path) => parse_config(&fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?)?,
            None => BTreeMap::new(),
        };
        for (k, v) in [("out", &common.out), ("seed", &common.seed)].iter().chain(flags) {
            if let Some(v) = v {
                given.insert(norm_key(k), v.clone());
            }
        }
        let mut echo = BTreeMap::new();
        echo.insert("command".to_string(), command.to_string());
        given.remove("command");
        Ok(Settings {
            given,
            used: BTreeSet::new(),
            echo,
        })
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.given.get(key).cloned()
    }

    fn has(&self, key: &str) -> bool {
        self.given.contains_key(key)
    }

    fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::InvalidConfig(format!("invalid value `{v}` for `{key}`")))
    }

    fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T> {
        let v = match self.raw(key) {
            Some(v) => Self::parse(key, &v)?,
            None => default,
        };
        self.echo.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    fn opt(&mut self, key: &str) -> Option<String> {
        let v = self.raw(key);
        if let Some(v) = &v {
            self.echo.insert(key.to_string(), v.clone());
        }
        v
    }

    fn required(&mut self, key: &str) -> Result<String> {
        self.opt(key)
            .ok_or_else(|| Error::InvalidConfig(format!("missing required `--{}`", key.replace('_', "-"))))
    }

    fn seed(&mut self, default: u64) -> Result<u64> {
        let fallback = match std::env::var(SEED_ENV) {
            Ok(v) => Self::parse(SEED_ENV, &v)?,
            Err(_) => default,
        };
        self.get("seed", fallback)
    }

    fn window(&mut self, default: WindowMode) -> Result<WindowMode> {
        let kind: WindowKind = self.get("mode", default.kind)?;
        if kind == WindowKind::Daily && self.has("active_span") {
            return Err(Error::InvalidConfig("`--active-span` conflicts with `--mode daily`".into()));
        }
        let mode = match kind {
            WindowKind::Daily => WindowMode::daily(),
            WindowKind::Active => WindowMode {
                active_span: self.get("active_span", default.active_span)?,
                span_excludes_calling_day: self.get("span_excludes_calling_day", default.span_excludes_calling_day)?,
                ..WindowMode::active(default.active_span)
            },
        };
        mode.validate()?;
        Ok(mode)
    }

    /// Rejects unknown keys and returns the echo text.
    fn finish(&self) -> Result<String> {
        let unknown: Vec<&String> = self.given.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "unknown setting(s): {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(self.echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect())
    }
}

fn out_dir(path: &str) -> Result<PathBuf> {
    let dir = PathBuf::from(path);
    fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, bytes)
}

fn question_subset(s: &mut Settings, dataset: &Dataset) -> Result<Vec<String>> {
    let split = s.opt("split");
    let default = if split.is_some() { "test" } else { "all" };
    let subset: String = s.get("subset", default.to_string())?;
    let Some(path) = split else {
        return if subset == "all" {
            Ok(dataset.question_ids())
        } else {
            Err(Error::InvalidConfig(format!("`--subset {subset}` needs `--split`")))
        };
    };
    let split = Split::load(&path)?;
    let ids = match subset.as_str() {
        "train" => split.train,
        "validation" => split.validation,
        "test" => split.test,
        "all" => dataset.question_ids(),
        other => return Err(Error::InvalidConfig(format!("unknown subset `{other}`"))),
    };
    for id in &ids {
        if dataset.question(id).is_none() {
            return Err(Error::UnknownQuestion(id.clone()));
        }
    }
    Ok(ids)
}

fn model_aggregator(path: &str, embeddings: Option<String>) -> Result<(ModelHeader, NeuralAggregator)> {
    let (header, params) = load_model(path)?;
    let encoder = match header.encoder.kind {
        EncoderKind::Hashing => TextEncoder::Hashing(header.encoder),
        EncoderKind::External => {
            let path = embeddings.ok_or_else(|| Error::InvalidConfig("model uses external embeddings; pass `--embeddings`".into()))?;
            let table = EmbeddingTable::load(path)?;
            table.check_dim(header.encoder.dim)?;
            TextEncoder::External(table)
        }
    };
    let agg = NeuralAggregator {
        params,
        encoder,
        newest_first: header.train.newest_first,
    };
    Ok((header, agg))
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                1
            } else if e.is_internal() {
                3
            } else {
                2
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Validate { common, data } => cmd_validate(Settings::new("validate", &common, &[("data", &data)])?),
        Command::Split { common, data, ratios } => cmd_split(Settings::new("split", &common, &[("data", &data), ("ratios", &ratios)])?),
        Command::Synth {
            common,
            bounds_windows,
            window,
        } => cmd_synth(Settings::new(
            "synth",
            &common,
            &[
                ("bounds_windows", &bounds_windows),
                ("mode", &window.mode),
                ("active_span", &window.active_span),
            ],
        )?),
        Command::Analyze { common, data, lexicons } => {
            cmd_analyze(Settings::new("analyze", &common, &[("data", &data), ("lexicons", &lexicons)])?)
        }
        Command::Report {
            common,
            data,
            lexicons,
            window,
        } => cmd_report(Settings::new(
            "report",
            &common,
            &[
                ("data", &data),
                ("lexicons", &lexicons),
                ("mode", &window.mode),
                ("active_span", &window.active_span),
            ],
        )?),
        Command::Train {
            common,
            data,
            split,
            ablation,
            window,
            learning_rate,
            batch_size,
            patience,
            dropout,
            max_epochs,
            hidden,
            proj_dim,
            newest_first,
            encoder,
            embeddings,
            hash_dim,
        } => cmd_train(Settings::new(
            "train",
            &common,
            &[
                ("data", &data),
                ("split", &split),
                ("ablation", &ablation),
                ("mode", &window.mode),
                ("active_span", &window.active_span),
                ("learning_rate", &learning_rate),
                ("batch_size", &batch_size),
                ("patience", &patience),
                ("dropout", &dropout),
                ("max_epochs", &max_epochs),
                ("hidden", &hidden),
                ("proj_dim", &proj_dim),
                ("newest_first", &newest_first),
                ("encoder", &encoder),
                ("embeddings", &embeddings),
                ("hash_dim", &hash_dim),
            ],
        )?),
        Command::Call {
            common,
            model,
            data,
            embeddings,
            split,
            subset,
            window,
            jobs,
        } => cmd_call(Settings::new(
            "call",
            &common,
            &[
                ("model", &model),
                ("data", &data),
                ("embeddings", &embeddings),
                ("split", &split),
                ("subset", &subset),
                ("mode", &window.mode),
                ("active_span", &window.active_span),
                ("jobs", &jobs),
            ],
        )?),
        Command::Evaluate {
            common,
            data,
            baseline,
            weighted_rule,
            model,
            embeddings,
            split,
            subset,
            window,
            jobs,
            uncorrected,
        } => cmd_evaluate(Settings::new(
            "evaluate",
            &common,
            &[
                ("data", &data),
                ("baseline", &baseline),
                ("weighted_rule", &weighted_rule),
                ("model", &model),
                ("embeddings", &embeddings),
                ("split", &split),
                ("subset", &subset),
                ("mode", &window.mode),
                ("active_span", &window.active_span),
                ("jobs", &jobs),
                ("uncorrected", &uncorrected),
            ],
        )?),
        Command::Compare { common, a, b, uncorrected } => {
            cmd_compare(Settings::new("compare", &common, &[("a", &a), ("b", &b), ("uncorrected", &uncorrected)])?)
        }
    }
}

fn cmd_validate(mut s: Settings) -> Result<i32> {
    let data = s.required("data")?;
    let out = s.opt("out");
    let echo = s.finish()?;
    let dataset = parse_dataset(&data)?;
    let report = validate(&dataset);
    let mut stdout = std::io::stdout().lock();
    for v in &report.violations {
        let _ = writeln!(stdout, "violation\t{}\t{}", v.entity, v.message);
    }
    for v in &report.warnings {
        let _ = writeln!(stdout, "warning\t{}\t{}", v.entity, v.message);
    }
    let _ = writeln!(
        stdout,
        "{} questions, {} forecasts, {} violations, {} warnings",
        dataset.questions().len(),
        dataset.forecasts().len(),
        report.violations.len(),
        report.warnings.len()
    );
    if let Some(out) = out {
        let dir = out_dir(&out)?;
        write_json(&dir.join("validation.json"), &report)?;
        write_file(&dir.join(CONFIG_ECHO), echo)?;
    }
    Ok(if report.is_valid() { 0 } else { 2 })
}

fn cmd_split(mut s: Settings) -> Result<i32> {
    let data = s.required("data")?;
    let out = s.required("out")?;
    let seed = s.seed(0)?;
    let ratios: String = s.get("ratios", "0.8,0.1,0.1".to_string())?;
    let parts = ratios
        .split(',')
        .map(|r| Settings::parse::<f64>("ratios", r.trim()))
        .collect::<Result<Vec<f64>>>()?;
    let ratios: [f64; 3] = parts
        .try_into()
        .map_err(|_| Error::InvalidConfig("`--ratios` needs three values".into()))?;
    let echo = s.finish()?;
    let dataset = parse_dataset(&data)?;
    let split = split_by_question(&dataset, ratios, seed)?;
    let dir = out_dir(&out)?;
    write_json(&dir.join("split.json"), &split)?;
    write_file(&dir.join(CONFIG_ECHO), echo)?;
    let (a, b, c) = split.sizes();
    println!("train {a}, validation {b}, test {c}");
    Ok(0)
}

fn synth_config(s: &mut Settings) -> Result<SynthConfig> {
    let d = SynthConfig::default();
    Ok(SynthConfig {
        n_questions: s.get("n_questions", d.n_questions)?,
        life_min: s.get("life_min", d.life_min)?,
        life_max: s.get("life_max", d.life_max)?,
        n_forecasters: s.get("n_forecasters", d.n_forecasters)?,
        forecasts_per_day: s.get("forecasts_per_day", d.forecasts_per_day)?,
        base_noise: s.get("base_noise", d.base_noise)?,
        noise_decay: s.get("noise_decay", d.noise_decay)?,
        reliable_fraction: s.get("reliable_fraction", d.reliable_fraction)?,
        reliable_marker: s.get("reliable_marker", d.reliable_marker)?,
        unreliable_marker: s.get("unreliable_marker", d.unreliable_marker)?,
        start_date: s.get("start_date", d.start_date)?,
        seed: s.seed(d.seed)?,
    })
}

fn cmd_synth(mut s: Settings) -> Result<i32> {
    let out = s.required("out")?;
    let config = synth_config(&mut s)?;
    let bounds_windows: usize = s.get("bounds_windows", 0)?;
    let mode = if bounds_windows > 0 { Some(s.window(WindowMode::daily())?) } else { None };
    let echo = s.finish()?;
    let (dataset, truth) = generate(&config)?;
    let dir = out_dir(&out)?;
    save_dataset(&dataset, dir.join("data.jsonl"))?;
    truth.save(dir.join("manifest.jsonl"))?;
    if let Some(mode) = mode {
        let bounds = bayes_bounds(&config, mode, bounds_windows)?;
        write_json(&dir.join("bounds.json"), &bounds)?;
        println!(
            "bayes bounds: prediction only {:.4}, with markers {:.4}",
            bounds.acc_prediction_only, bounds.acc_with_markers
        );
    }
    write_file(&dir.join(CONFIG_ECHO), echo)?;
    println!("{} questions, {} forecasts", dataset.questions().len(), dataset.forecasts().len());
    Ok(0)
}

#[derive(Serialize)]
struct JustificationRow<'a> {
    key: &'a str,
    signals: crate::analytics::CredibilitySignals,
    readability: Option<crate::analytics::ReadabilityScores>,
}

fn cmd_analyze(mut s: Settings) -> Result<i32> {
    let data = s.required("data")?;
    let out = s.required("out")?;
    let lexicons: String = s.get("lexicons", "lexicons".to_string())?;
    let echo = s.finish()?;
    let dataset = parse_dataset(&data)?;
    let lex = Lexicons::load_dir(&lexicons)?;
    let keys = dataset.forecast_keys();
    let mut body = Vec::new();
    for (f, key) in dataset.forecasts().iter().zip(&keys) {
        let row = JustificationRow {
            key,
            signals: credibility_signals(&f.justification, &lex),
            readability: readability(&f.justification, &lex.easy_words).ok(),
        };
        serde_json::to_writer(&mut body, &row)?;
        body.push(b'\n');
    }
    let dir = out_dir(&out)?;
    write_file(&dir.join("justifications.jsonl"), body)?;
    write_file(&dir.join(CONFIG_ECHO), echo)?;
    println!("{} justifications analysed", keys.len());
    Ok(0)
}

fn cmd_report(mut s: Settings) -> Result<i32> {
    let data = s.required("data")?;
    let out = s.required("out")?;
    let lexicons: String = s.get("lexicons", "lexicons".to_string())?;
    let mode = s.window(WindowMode::default())?;
    let echo = s.finish()?;
    let dataset = parse_dataset(&data)?;
    let lex = Lexicons::load_dir(&lexicons)?;
    let report = corpus_report(&dataset, &lex, mode)?;
    let dir = out_dir(&out)?;
    write_json(&dir.join("corpus_report.json"), &report)?;
    let mut curve = String::from("day\topen_questions\tsubmitted\tactive\n");
    for p in &report.forecasts_per_day {
        curve.push_str(&format!("{}\t{}\t{:.4}\t{:.4}\n", p.day, p.open_questions, p.submitted, p.active));
    }
    write_file(&dir.join("forecasts_per_day.tsv"), curve)?;
    write_file(&dir.join(CONFIG_ECHO), echo)?;
    println!("{} questions, {} forecasts", report.questions, report.forecasts);
    Ok(0)
}

fn cmd_train(mut s: Settings) -> Result<i32> {
    let data = s.required("data")?;
    let split_path = s.required("split")?;
    let out = s.required("out")?;
    let d = TrainConfig::default();
    let mode = s.window(d.mode)?;
    let config = TrainConfig {
        learning_rate: s.get("learning_rate", d.learning_rate)?,
        batch_size: s.get("batch_size", d.batch_size)?,
        patience: s.get("patience", d.patience)?,
        dropout: s.get("dropout", d.dropout)?,
        max_epochs: s.get("max_epochs", d.max_epochs)?,
        seed: s.seed(d.seed)?,
        ablation: s.get("ablation", d.ablation)?,
        mode,
        proj_dim: s.get("proj_dim", d.proj_dim)?,
        hidden: s.get("hidden", d.hidden)?,
        newest_first: s.get("newest_first", d.newest_first)?,
    };
    let kind: EncoderKind = s.get("encoder", EncoderKind::Hashing)?;
    let encoder = match kind {
        EncoderKind::Hashing => {
            if s.has("embeddings") {
                return Err(Error::InvalidConfig("`--embeddings` needs `--encoder external`".into()));
            }
            TextEncoder::Hashing(EncoderConfig::hashing(s.get("hash_dim", crate::encode::DEFAULT_HASH_DIM)?))
        }
        EncoderKind::External => {
            if s.has("hash_dim") {
                return Err(Error::InvalidConfig("`--hash-dim` conflicts with `--encoder external`".into()));
            }
            TextEncoder::External(EmbeddingTable::load(s.required("embeddings")?)?)
        }
    };
    let echo = s.finish()?;
    config.validate()?;

    let dataset = parse_dataset(&data)?;
    let split = Split::load(&split_path)?;
    let (params, log) = train(&dataset, &split, &encoder, &config)?;
    let header = ModelHeader {
        shape: params.shape,
        encoder: encoder.config(),
        train: config,
    };
    let dir = out_dir(&out)?;
    save_model(dir.join("model.bin"), &params, &header)?;
    write_json(&dir.join("train_log.json"), &log)?;
    write_file(&dir.join(CONFIG_ECHO), echo)?;
    let best = log.epochs.iter().find(|e| e.epoch == log.best_epoch);
    println!(
        "trained {} epochs, best epoch {} (validation loss {:.4}, accuracy {:.4})",
        log.epochs.len(),
        log.best_epoch,
        best.map_or(f64::NAN, |e| e.val_loss),
        best.map_or(f64::NAN, |e| e.val_accuracy)
    );
    Ok(0)
}

fn cmd_call(mut s: Settings) -> Result<i32> {
    let model = s.required("model")?;
    let data = s.required("data")?;
    let out = s.required("out")?;
    let embeddings = s.opt("embeddings");
    let (header, agg) = model_aggregator(&model, embeddings)?;
    let mode = s.window(header.train.mode)?;
    let jobs: usize = s.get("jobs", 1)?;
    let dataset = parse_dataset(&data)?;
    let ids = question_subset(&mut s, &dataset)?;
    let echo = s.finish()?;
    let records = call_all_days(&agg, &dataset, &ids, mode, jobs)?;
    let dir = out_dir(&out)?;
    save_records(&records, dir.join("records.jsonl"))?;
    write_file(&dir.join(CONFIG_ECHO), echo)?;
    println!("{} day records", records.len());
    Ok(0)
}

fn system_file(name: &str) -> String {
    format!("records_{name}.jsonl")
}

fn cmd_evaluate(mut s: Settings) -> Result<i32> {
    let data = s.required("data")?;
    let out = s.required("out")?;
    let baselines: String = s.get("baseline", "majority,weighted".to_string())?;
    let rule: WeightedRule = s.get("weighted_rule", WeightedRule::PaperLiteral)?;
    let model = s.opt("model");
    let embeddings = s.opt("embeddings");
    let mode = s.window(WindowMode::default())?;
    let jobs: usize = s.get("jobs", 1)?;
    let uncorrected: bool = s.get("uncorrected", false)?;
    let dataset = parse_dataset(&data)?;
    let ids = question_subset(&mut s, &dataset)?;

    let mut systems: Vec<Box<dyn Aggregator>> = Vec::new();
    for name in baselines.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        match name {
            "majority" => systems.push(Box::new(Baseline::Majority)),
            "weighted" => systems.push(Box::new(Baseline::Weighted(rule))),
            "none" => {}
            other => return Err(Error::InvalidConfig(format!("unknown baseline `{other}`"))),
        }
    }
    if let Some(path) = &model {
        systems.push(Box::new(model_aggregator(path, embeddings)?.1));
    }
    if systems.is_empty() {
        return Err(Error::InvalidConfig("nothing to evaluate; pass `--baseline` or `--model`".into()));
    }
    let echo = s.finish()?;

    let majority = call_all_days(&Baseline::Majority, &dataset, &ids, mode, jobs)?;
    let weighted = call_all_days(&Baseline::Weighted(WeightedRule::PaperLiteral), &dataset, &ids, mode, jobs)?;
    let difficulty = difficulty_quartiles(&majority, &weighted, &ids);

    let dir = out_dir(&out)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut all_records: Vec<(String, Vec<DayRecord>)> = Vec::new();
    for system in &systems {
        let name = system.name();
        let records = call_all_days(system.as_ref(), &dataset, &ids, mode, jobs)?;
        let mut report = accuracy(&name, &records);
        report.difficulty_quartiles = Some(difficulty_accuracy(&report, &difficulty));
        save_records(&records, dir.join(system_file(&name)))?;
        reports.push(report);
        all_records.push((name, records));
    }

    let mut significance = String::new();
    for i in 0..all_records.len() {
        for j in i + 1..all_records.len() {
            let m = mcnemar(&all_records[i].1, &all_records[j].1, !uncorrected);
            significance.push_str(&format_mcnemar(&format!("{} vs {}", all_records[i].0, all_records[j].0), &m));
        }
    }
    let table = format_table(&reports);
    write_json(&dir.join("report.json"), &reports)?;
    write_json(&dir.join("difficulty.json"), &difficulty)?;
    write_file(&dir.join("table.txt"), &table)?;
    write_file(&dir.join("significance.tsv"), &significance)?;
    write_file(&dir.join(CONFIG_ECHO), echo)?;
    print!("{table}{significance}");
    Ok(0)
}

fn cmd_compare(mut s: Settings) -> Result<i32> {
    let a = s.required("a")?;
    let b = s.required("b")?;
    let out = s.opt("out");
    let uncorrected: bool = s.get("uncorrected", false)?;
    let echo = s.finish()?;
    let m = mcnemar(&load_records(&a)?, &load_records(&b)?, !uncorrected);
    let line = format_mcnemar(&format!("{a} vs {b}"), &m);
    print!("{line}");
    if let Some(out) = out {
        let dir = out_dir(&out)?;
        write_json(&dir.join("comparison.json"), &m)?;
        write_file(&dir.join(CONFIG_ECHO), echo)?;
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let c = parse_config("# comment\n\nactive-span = 5\nmode=active\n").unwrap();
        assert_eq!(c.get("active_span").map(String::as_str), Some("5"));
        assert_eq!(c.get("mode").map(String::as_str), Some("active"));
        assert!(parse_config("no equals sign").is_err());
    }

    #[test]
    fn flags_override_config_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(&path, "mode = daily\nbogus = 1\n").unwrap();
        let common = Common {
            config: Some(path),
            ..Common::default()
        };
        let mut s = Settings::new("x", &common, &[("mode", &Some("active".into()))]).unwrap();
        assert_eq!(s.window(WindowMode::daily()).unwrap(), WindowMode::active(10));
        assert!(matches!(s.finish(), Err(Error::InvalidConfig(m)) if m.contains("bogus")));
    }

    #[test]
    fn daily_mode_with_span_is_a_conflict() {
        let common = Common::default();
        let mut s = Settings::new("x", &common, &[("mode", &Some("daily".into())), ("active_span", &Some("4".into()))]).unwrap();
        assert!(s.window(WindowMode::default()).is_err());
    }

    #[test]
    fn echo_lists_resolved_defaults() {
        let mut s = Settings::new("split", &Common::default(), &[]).unwrap();
        let _ = s.get("ratios", "0.8,0.1,0.1".to_string()).unwrap();
        let echo = s.finish().unwrap();
        assert_eq!(echo, "command = split\nratios = 0.8,0.1,0.1\n");
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["crowdcall", "frobnicate"]), 1);
        assert_eq!(run(["crowdcall", "validate"]), 1);
        assert_eq!(run(["crowdcall", "--help"]), 0);
    }
}
