//! Batch commands: EVF extraction, synthetic data, training, evaluation and
//! single-user recommendation.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or config,
//! 3 nothing to evaluate or recommend.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use artrec::catalog::{ItemId, UserId};
use artrec::dataset::{first_missing, load_dir_catalog, load_stores};
use artrec::eval::{build_cases, parse_methods, recommend, EvalOptions, MethodSpec};
use artrec::evf::{decode_image, extract_evf, EVF_DIM};
use artrec::features::{FeatureStore, FeatureVector, Source};
use artrec::hybrid::{build_training_instances, train, BprConfig};
use artrec::scoring::{Aggregation, IndexedStore};
use artrec::synth::{generate, SynthConfig};
use artrec::{evaluate, Error};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

#[derive(Debug, Parser)]
#[command(
    name = "artrec",
    version,
    about = "Content-based artwork recommendation and replay evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute explicit visual features for every image in a directory.
    ExtractEvf {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Generate a synthetic data directory.
    Synth {
        /// `key = value` config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Learn hybrid fusion weights over all replay cases and write them to a file.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated sources, e.g. `dnn,evf,metadata`.
        #[arg(long, default_value = "dnn,evf,metadata")]
        sources: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Replay the transactions and report top-k accuracy per method.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated method names, or `all`.
        #[arg(long, default_value = "all")]
        methods: String,
        #[arg(long, default_value = "5,10")]
        k: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Retrain hybrid weights for each case on strictly earlier cases.
        #[arg(long)]
        temporal_weights: bool,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the top-k items for one user at one moment.
    Recommend {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        at: i64,
        #[arg(long, default_value = "DNN")]
        method: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Text,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Profile aggregation: max or mean.
    #[arg(long, default_value = "max")]
    agg: String,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    regularization: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    /// Fuse raw similarities instead of per-pool z-scores.
    #[arg(long)]
    no_standardize: bool,
}

impl Default for RunArgs {
    fn default() -> Self {
        RunArgs {
            seed: 42,
            agg: "max".into(),
            learning_rate: None,
            regularization: None,
            epochs: None,
            negatives: None,
            no_standardize: false,
        }
    }
}

impl RunArgs {
    fn options(&self) -> Result<EvalOptions, Failure> {
        let defaults = BprConfig::default();
        let bpr = BprConfig {
            learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
            regularization: self.regularization.unwrap_or(defaults.regularization),
            epochs: self.epochs.unwrap_or(defaults.epochs),
            negatives_per_positive: self.negatives.unwrap_or(defaults.negatives_per_positive),
            seed: self.seed,
            sources: defaults.sources,
            standardize: !self.no_standardize,
        };
        bpr.validate()?;
        Ok(EvalOptions {
            agg: self.agg.parse::<Aggregation>()?,
            bpr,
            ..EvalOptions::default()
        })
    }
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Io { .. } => 1,
            Error::EmptyProfile | Error::NoEvaluableCases => 3,
            _ => 2,
        };
        Failure::new(code, err.to_string())
    }
}

fn io_failure(path: &Path, err: io::Error) -> Failure {
    Failure::new(1, format!("{}: {err}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn parse_ks(raw: &str) -> Result<Vec<usize>, Failure> {
    let mut ks = raw
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::new(2, format!("bad --k list {raw:?}")))?;
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Failure::new(2, "--k values must be positive"));
    }
    Ok(ks)
}

fn parse_sources(raw: &str) -> Result<Vec<Source>, Failure> {
    let mut sources = raw
        .split(',')
        .map(|s| s.trim().parse::<Source>())
        .collect::<Result<Vec<_>, _>>()?;
    sources.sort();
    sources.dedup();
    Ok(sources)
}

fn check_inputs(dir: &Path, sources: &[Source]) -> Result<(), Failure> {
    match first_missing(dir, sources) {
        Some(path) => Err(Failure::new(
            2,
            format!("missing input file: {}", path.display()),
        )),
        None => Ok(()),
    }
}

fn needed_sources(methods: &[MethodSpec]) -> Vec<Source> {
    let mut s: Vec<Source> = methods
        .iter()
        .flat_map(|m| m.sources.iter().copied())
        .collect();
    s.sort();
    s.dedup();
    s
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn cmd_extract_evf(images: &Path, out: &Path, jobs: usize) -> Result<String, Failure> {
    let entries = fs::read_dir(images).map_err(|e| io_failure(images, e))?;
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_failure(images, e))?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            eprintln!("warning: ignoring {}", path.display());
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        files.push((stem.to_string(), path));
    }
    files.sort();
    if let Some(pair) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Failure::new(
            2,
            format!("two images for item {}", pair[0].0),
        ));
    }
    if files.is_empty() {
        eprintln!("warning: no images found in {}", images.display());
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure::new(1, e.to_string()))?;
    let results: Vec<Result<(ItemId, FeatureVector), String>> = pool.install(|| {
        files
            .par_iter()
            .map(|(stem, path)| {
                let id =
                    ItemId::new(stem.as_str()).map_err(|m| format!("{}: {m}", path.display()))?;
                let evf = decode_image(path)
                    .and_then(|img| extract_evf(&img))
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                let v = FeatureVector::new(evf.to_array().to_vec()).map_err(|e| e.to_string())?;
                Ok((id, v))
            })
            .collect()
    });
    let mut vectors = BTreeMap::new();
    let mut offenders = Vec::new();
    for r in results {
        match r {
            Ok((id, v)) => {
                vectors.insert(id, v);
            }
            Err(m) => offenders.push(m),
        }
    }
    if !offenders.is_empty() {
        return Err(Failure::new(
            2,
            format!("undecodable images:\n  {}", offenders.join("\n  ")),
        ));
    }
    let count = vectors.len();
    let store = FeatureStore::new(Source::Evf, EVF_DIM, vectors)?;
    let mut buf = Vec::new();
    store.write(&mut buf).map_err(|e| io_failure(out, e))?;
    write_file(out, &buf)?;
    Ok(format!("wrote {count} EVF vectors to {}", out.display()))
}

pub fn cmd_synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<String, Failure> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                if e.kind() == io::ErrorKind::NotFound {
                    Failure::new(2, format!("missing config file: {}", path.display()))
                } else {
                    io_failure(path, e)
                }
            })?;
            SynthConfig::parse(&text)?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let data = generate(&cfg)?;
    data.write_dir(out)?;
    Ok(format!(
        "wrote {} users, {} items, {} transactions to {}",
        data.catalog.users().count(),
        data.catalog.len(),
        data.catalog.transactions().len(),
        out.display()
    ))
}

pub fn cmd_train(data: &Path, sources: &str, out: &Path, run: &RunArgs) -> Result<String, Failure> {
    let sources = parse_sources(sources)?;
    let opts = run.options()?;
    check_inputs(data, &sources)?;
    let catalog = load_dir_catalog(data)?;
    let stores = load_stores(data, &catalog, &sources)?;
    let cases = build_cases(&catalog);
    if cases.is_empty() {
        return Err(Error::NoEvaluableCases.into());
    }
    let cfg = opts.bpr.clone().with_sources(&sources);
    let indexed: Vec<IndexedStore> = sources
        .iter()
        .map(|s| IndexedStore::new(&catalog, &stores[s]))
        .collect();
    let refs: Vec<&IndexedStore> = indexed.iter().collect();
    let (instances, diag) = build_training_instances(&catalog, &cases, &refs, &cfg, opts.agg)?;
    if diag.negative_shortfall > 0 {
        eprintln!(
            "note: {} requested negatives unavailable",
            diag.negative_shortfall
        );
    }
    let trained = train(&instances, &cfg)?;
    let mut buf = Vec::new();
    trained
        .weights
        .write(&mut buf, cfg.seed)
        .map_err(|e| io_failure(out, e))?;
    write_file(out, &buf)?;
    let first = trained.objective.first().copied().unwrap_or(0.0);
    let last = trained.objective.last().copied().unwrap_or(0.0);
    Ok(format!(
        "trained on {} pairs from {} cases; objective {first:.6} -> {last:.6}; weights in {}",
        instances.len(),
        cases.len(),
        out.display()
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_evaluate(
    data: &Path,
    methods: &str,
    k: &str,
    out: &Path,
    format: Format,
    temporal_weights: bool,
    jobs: usize,
    run: &RunArgs,
) -> Result<String, Failure> {
    let methods = parse_methods(methods)?;
    let mut opts = run.options()?;
    opts.ks = parse_ks(k)?;
    opts.temporal_weights = temporal_weights;
    opts.jobs = jobs;
    let sources = needed_sources(&methods);
    check_inputs(data, &sources)?;
    let catalog = load_dir_catalog(data)?;
    let stores = load_stores(data, &catalog, &sources)?;
    let report = evaluate(&catalog, &stores, &methods, &opts)?;
    for row in &report.rows {
        if row.missing_vectors > 0 || row.cases_without_profile > 0 {
            eprintln!(
                "note: {}: {} pool items without vectors, {} cases without profile vectors",
                row.name, row.missing_vectors, row.cases_without_profile
            );
        }
    }
    let body = match format {
        Format::Csv => report.to_csv(),
        Format::Text => report.to_text(),
    };
    write_file(out, body.as_bytes())?;
    Ok(report.to_csv())
}

pub fn cmd_recommend(
    data: &Path,
    user: &str,
    at: i64,
    method: &str,
    k: usize,
    run: &RunArgs,
) -> Result<String, Failure> {
    let method: MethodSpec = method.parse()?;
    if k == 0 {
        return Err(Failure::new(2, "--k must be positive"));
    }
    let opts = run.options()?;
    check_inputs(data, &method.sources)?;
    let catalog = load_dir_catalog(data)?;
    let user = UserId::new(user).map_err(|m| Failure::new(2, m))?;
    if !catalog.has_user(&user) {
        return Err(Error::UnknownUser(user.to_string()).into());
    }
    let stores = load_stores(data, &catalog, &method.sources)?;
    let recs = recommend(&catalog, &stores, &method, &user, at, k, &opts).map_err(|e| match e {
        Error::EmptyProfile => Failure::new(
            3,
            format!("user {user} has no purchases with feature vectors before {at}"),
        ),
        other => other.into(),
    })?;
    let mut out = String::new();
    for (rank, (idx, score)) in recs.iter().enumerate() {
        out.push_str(&format!(
            "{}\t{}\t{score:.6}\n",
            rank + 1,
            catalog.item_id(*idx)
        ));
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::ExtractEvf { images, out, jobs } => cmd_extract_evf(&images, &out, jobs),
        Command::Synth { config, out, seed } => cmd_synth(config.as_deref(), &out, seed),
        Command::Train {
            data,
            sources,
            out,
            run,
        } => cmd_train(&data, &sources, &out, &run),
        Command::Evaluate {
            data,
            methods,
            k,
            out,
            format,
            temporal_weights,
            jobs,
            run,
        } => cmd_evaluate(
            &data,
            &methods,
            &k,
            &out,
            format,
            temporal_weights,
            jobs,
            &run,
        ),
        Command::Recommend {
            data,
            user,
            at,
            method,
            k,
            run,
        } => cmd_recommend(&data, &user, at, &method, k, &run),
    }
}

pub fn main_with(cli: Cli) -> ExitCode {
    match run(cli) {
        Ok(summary) => {
            let mut stdout = io::stdout().lock();
            let _ = stdout.write_all(summary.as_bytes());
            if !summary.ends_with('\n') {
                let _ = stdout.write_all(b"\n");
            }
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
