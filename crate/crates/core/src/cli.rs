//! Command-line front end. Every flag has a JSON config-file key of the same
//! name (snake_case); flags override the file, and `RARE_SEED` supplies the
//! seed when neither does.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, Read as _, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coverage::{build_program, coverage_report, solve_exact, solve_greedy, ExactLimits};
use crate::dataset::{gen_synthetic, load_corpus, CorpusFormat, SyntheticConfig};
use crate::error::Error;
use crate::eval::run_experiment;
use crate::featurize::{build_vocab, RepSpec};
use crate::objective::{BoundData, Hyperparams};
use crate::pipeline::{train_model, ModelConfig};
use crate::recognizer::{read_stream, write_atomic, DecisionRecord, ModelDocument, Recognizer};
use crate::rejection::Method;
use crate::trainer::{fit, BatchMode, StepDecay, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Settings shared by all commands; each is also a config-file key.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Corpus (jsonl or csv) or, for `predict`, the instance stream ("-" for stdin).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// tfidf1k | tfidf:<n> | pca:<rank> | raw
    #[arg(long)]
    pub rep: Option<String>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub lambdak: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// fixed | inv_sqrt
    #[arg(long)]
    pub decay: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// full | <mini-batch size>
    #[arg(long)]
    pub batch: Option<String>,
    /// evt | percentile
    #[arg(long)]
    pub reject: Option<String>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// coverage: exact | greedy | auto
    #[arg(long)]
    pub solver: Option<String>,
    /// coverage: vocabulary size
    #[arg(long)]
    pub top_n: Option<usize>,
    /// coverage: word-list CSV output
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// bench: base number of rows
    #[arg(long)]
    pub n: Option<usize>,
    /// synth/bench: feature dimension
    #[arg(long)]
    pub d: Option<usize>,
    /// synth: total subclasses; bench: subclasses
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub docs_per_subclass: Option<usize>,
    #[arg(long)]
    pub majority_docs: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// synth: groups of near-duplicate columns (config file only)
    #[arg(skip)]
    pub collinearity_groups: Option<Vec<Vec<usize>>>,
}

#[derive(Args, Debug)]
struct CommandArgs {
    /// JSON file with any of the flag settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and write the model document.
    Train(CommandArgs),
    /// Classify a jsonl stream of {text} or {features} records.
    Predict(CommandArgs),
    /// Repeated random-split experiment; writes a metric report.
    Evaluate(CommandArgs),
    /// Word-cover analysis of a labeled corpus.
    Coverage(CommandArgs),
    /// Time training at n, 2n and 4n rows.
    Bench(CommandArgs),
    /// Write a synthetic numeric corpus.
    Synth(CommandArgs),
}

#[derive(Parser, Debug)]
#[command(name = "rareclass", version, about = "Rare-class recognition with emerging-subclass detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flag values override file values key by key.
fn merge(file: &RunConfig, flags: &RunConfig) -> RunConfig {
    let mut merged = serde_json::to_value(file).expect("config serializes");
    let over = serde_json::to_value(flags).expect("config serializes");
    if let (Value::Object(m), Value::Object(o)) = (&mut merged, over) {
        for (k, v) in o {
            if !v.is_null() {
                m.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged).expect("merged config has the same shape")
}

fn load_config(args: &CommandArgs) -> CliResult<RunConfig> {
    let file = match &args.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
    };
    let mut cfg = merge(&file, &args.run);
    if cfg.seed.is_none() {
        if let Ok(s) = std::env::var("RARE_SEED") {
            cfg.seed = Some(s.trim().parse().map_err(|_| CliError::Usage(format!("RARE_SEED={s:?} is not an integer")))?);
        }
    }
    Ok(cfg)
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}

impl RunConfig {
    /// Model settings with defaults filled in for anything unset.
    pub fn model_config(&self) -> CliResult<ModelConfig> {
        let d = ModelConfig::default();
        let rep = match &self.rep {
            Some(r) => r.parse::<RepSpec>().map_err(|e| CliError::Usage(e.to_string()))?,
            None => d.rep,
        };
        let reject = match &self.reject {
            Some(r) => r.parse::<Method>().map_err(|e| CliError::Usage(e.to_string()))?,
            None => d.reject,
        };
        let step_decay = match self.decay.as_deref() {
            None => d.train.step_decay,
            Some("fixed") => StepDecay::Fixed,
            Some("inv_sqrt") => StepDecay::InvSqrt,
            Some(other) => return usage(format!("unknown --decay {other:?}")),
        };
        let batch = match self.batch.as_deref() {
            None | Some("full") => BatchMode::Full,
            Some(m) => BatchMode::MiniBatch(m.parse().map_err(|_| CliError::Usage(format!("bad --batch {m:?}")))?),
        };
        let train = TrainConfig {
            max_iters: self.iters.unwrap_or(d.train.max_iters),
            step_size: self.step.or(d.train.step_size),
            step_decay,
            momentum: self.momentum.unwrap_or(d.train.momentum),
            tol: self.tol.unwrap_or(d.train.tol),
            batch,
            seed: self.seed.unwrap_or(d.train.seed),
            log_every: self.log_every.unwrap_or(d.train.log_every),
        };
        train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let cfg = ModelConfig {
            rep,
            lambda0: self.lambda0.unwrap_or(d.lambda0),
            lambda_k: self.lambdak.unwrap_or(d.lambda_k),
            mu: self.mu.unwrap_or(d.mu),
            train,
            reject,
            q: self.q.unwrap_or(d.q),
        };
        if !(cfg.q > 0.0 && cfg.q < 1.0) {
            return usage(format!("--q must be in (0, 1), got {}", cfg.q));
        }
        for (name, v) in [("lambda0", cfg.lambda0), ("lambdak", cfg.lambda_k), ("mu", cfg.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return usage(format!("--{name} must be a finite non-negative number"));
            }
        }
        Ok(cfg)
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => write_atomic(p, bytes)?,
        None => io::stdout().write_all(bytes).map_err(Error::from)?,
    }
    Ok(())
}

fn load(path: &Path) -> CliResult<crate::dataset::LabeledCorpus> {
    Ok(load_corpus(path, CorpusFormat::from_path(path))?)
}

fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let input = require(&cfg.input, "input")?;
    let out = require(&cfg.out, "out")?;
    let mc = cfg.model_config()?;
    let corpus = load(input)?;
    let rows: Vec<usize> = (0..corpus.len()).collect();
    let model = train_model(&corpus, &rows, &mc)?;
    model.document.save(out)?;
    eprintln!(
        "trained K={} d={} iters={} best_loss={:.6e} converged={}",
        model.document.k,
        model.document.d,
        model.trained.iters_run,
        model.trained.best_loss(),
        model.trained.converged
    );
    Ok(())
}

fn cmd_predict(cfg: &RunConfig) -> CliResult<()> {
    let model_path = require(&cfg.model, "model")?;
    let doc = ModelDocument::<f64>::load(model_path)?;
    let names = doc.subclass_names.clone();
    let recognizer = Recognizer::new(doc)?;
    let mut raw = String::new();
    match cfg.input.as_deref() {
        None => return usage("missing required --input"),
        Some(p) if p == Path::new("-") => {
            io::stdin().read_to_string(&mut raw).map_err(Error::from)?;
        }
        Some(p) => {
            BufReader::new(File::open(p).map_err(Error::from)?)
                .read_to_string(&mut raw)
                .map_err(Error::from)?;
        }
    }
    let featurizer = &recognizer.document().representation;
    let rows = read_stream(raw.as_bytes()).map(|rec| {
        rec.and_then(|r| featurizer.transform_one(r.text.as_deref(), r.features.as_deref()))
            .map(|x| x.to_vec())
    });
    let (decisions, stats) = recognizer.predict_stream(rows)?;
    let mut out = Vec::new();
    for (i, d) in decisions.iter().enumerate() {
        serde_json::to_writer(&mut out, &DecisionRecord::new(i, d, &names)).map_err(Error::from)?;
        out.push(b'\n');
    }
    write_output(cfg.out.as_deref(), &out)?;
    eprintln!(
        "majority={} known={:?} emerging={} sc_evaluations={}",
        stats.majority, stats.known, stats.emerging, stats.sc_evaluations
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig) -> CliResult<()> {
    let input = require(&cfg.input, "input")?;
    let mc = cfg.model_config()?;
    let reps = cfg.reps.unwrap_or(5);
    if reps == 0 {
        return usage("--reps must be >= 1");
    }
    let corpus = load(input)?;
    let mut report = run_experiment(&corpus, &mc, reps, cfg.seed.unwrap_or(0))?;
    report.config = json!({ "effective": cfg, "resolved": report.config });
    let mut bytes = serde_json::to_vec_pretty(&report).map_err(Error::from)?;
    bytes.push(b'\n');
    match &cfg.out {
        Some(p) => {
            write_atomic(p, &bytes)?;
            print!("{}", report.to_text());
        }
        None => write_output(None, &bytes)?,
    }
    if !report.complete {
        eprintln!("{}", report.to_text());
        let code = if report.runs.iter().any(|r| r.numerical) {
            Error::Diverged {
                iter: 0,
                loss: f64::NAN,
                limit: f64::NAN,
            }
        } else {
            Error::Corpus("one or more repetitions failed".into())
        };
        return Err(code.into());
    }
    Ok(())
}

fn cmd_coverage(cfg: &RunConfig) -> CliResult<()> {
    let input = require(&cfg.input, "input")?;
    let corpus = load(input)?;
    let vocab = build_vocab(corpus.docs().iter().map(|d| d.text.as_str()), cfg.top_n.unwrap_or(20))?;
    let program = build_program(&corpus, &vocab)?;
    let limits = ExactLimits::default();
    let solution = match cfg.solver.as_deref().unwrap_or("auto") {
        "exact" => solve_exact(&program, &limits)?,
        "greedy" => solve_greedy(&program),
        "auto" => match solve_exact(&program, &limits) {
            Err(Error::TooLarge(why)) => {
                eprintln!("exact solver skipped ({why}); using greedy");
                solve_greedy(&program)
            }
            other => other?,
        },
        other => return usage(format!("unknown --solver {other:?}")),
    };
    let report = coverage_report(&solution, &program, corpus.subclass_names())?;
    if let Some(csv) = &cfg.csv {
        write_atomic(csv, report.words_csv()?.as_bytes())?;
    }
    let doc = json!({ "config": cfg, "solution": solution, "report": report });
    let mut bytes = serde_json::to_vec_pretty(&doc).map_err(Error::from)?;
    bytes.push(b'\n');
    if let Some(p) = &cfg.out {
        write_atomic(p, &bytes)?;
    }
    print!("{}", report.to_text());
    Ok(())
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct BenchTiming {
    pub n: usize,
    pub seconds: f64,
    pub iters_run: usize,
}

/// Fastest of `repeats` timed fits on `n` synthetic rows (`d`, `k` fixed).
pub fn time_fit(n: usize, d: usize, k: usize, cfg: &TrainConfig, hp: &Hyperparams<f64>, seed: u64, repeats: usize) -> crate::error::Result<BenchTiming> {
    let majority = n / 2;
    let synth = SyntheticConfig {
        d,
        k_total: k.max(2),
        docs_per_subclass: ((n - majority) / k.max(2)).max(4),
        majority_docs: majority,
        subclass_separation: 4.0,
        noise_scale: 1.0,
        collinearity_groups: vec![],
        seed,
    };
    let corpus = gen_synthetic(&synth)?;
    let x = ndarray::Array2::from_shape_fn((corpus.len(), d), |(i, j)| corpus.docs()[i].features.as_ref().expect("synthetic features")[j]);
    let sub: Vec<_> = corpus.docs().iter().map(|doc| doc.subclass).collect();
    let data = BoundData::new(x, &sub, synth.k_total)?;
    let mut best: Option<BenchTiming> = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let model = fit(&data, hp, cfg)?;
        let seconds = start.elapsed().as_secs_f64();
        if best.as_ref().is_none_or(|b| seconds < b.seconds) {
            best = Some(BenchTiming {
                n: corpus.len(),
                seconds,
                iters_run: model.iters_run,
            });
        }
    }
    Ok(best.expect("at least one repeat"))
}

fn cmd_bench(cfg: &RunConfig) -> CliResult<()> {
    let mut mc = cfg.model_config()?;
    // fixed iteration count: no early stop
    mc.train.tol = f64::MIN_POSITIVE;
    mc.train.max_iters = cfg.iters.unwrap_or(200);
    let (n, d, k) = (cfg.n.unwrap_or(1000), cfg.d.unwrap_or(200), cfg.k.unwrap_or(4));
    if n < 8 || d < 2 || k < 2 {
        return usage("bench needs --n >= 8, --d >= 2, --k >= 2");
    }
    let hp = mc.hyperparams(k);
    let seed = cfg.seed.unwrap_or(0);
    let repeats = cfg.reps.unwrap_or(3);
    let mut timings = Vec::new();
    for mult in [1, 2, 4] {
        let t = time_fit(n * mult, d, k, &mc.train, &hp, seed, repeats)?;
        eprintln!("n={} seconds={:.4}", t.n, t.seconds);
        timings.push(t);
    }
    let ratios: Vec<f64> = timings.windows(2).map(|w| w[1].seconds / w[0].seconds).collect();
    let doc = json!({ "config": cfg, "timings": timings, "ratios": ratios });
    let mut bytes = serde_json::to_vec_pretty(&doc).map_err(Error::from)?;
    bytes.push(b'\n');
    write_output(cfg.out.as_deref(), &bytes)
}

fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let out = require(&cfg.out, "out")?;
    let synth = SyntheticConfig {
        d: cfg.d.unwrap_or(12),
        k_total: cfg.k.unwrap_or(6),
        docs_per_subclass: cfg.docs_per_subclass.unwrap_or(200),
        majority_docs: cfg.majority_docs.unwrap_or(1200),
        subclass_separation: cfg.separation.unwrap_or(6.0),
        noise_scale: cfg.noise.unwrap_or(1.0),
        collinearity_groups: cfg.collinearity_groups.clone().unwrap_or_default(),
        seed: cfg.seed.unwrap_or(0),
    };
    let corpus = gen_synthetic(&synth).map_err(|e| match e {
        Error::InvalidArgument(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    let mut bytes = Vec::new();
    corpus.write_jsonl(&mut bytes)?;
    write_atomic(out, &bytes)?;
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (args, handler): (&CommandArgs, fn(&RunConfig) -> CliResult<()>) = match &cli.command {
        Command::Train(a) => (a, cmd_train),
        Command::Predict(a) => (a, cmd_predict),
        Command::Evaluate(a) => (a, cmd_evaluate),
        Command::Coverage(a) => (a, cmd_coverage),
        Command::Bench(a) => (a, cmd_bench),
        Command::Synth(a) => (a, cmd_synth),
    };
    match load_config(args).and_then(|cfg| handler(&cfg)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
