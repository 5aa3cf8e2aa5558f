mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cfkit::evaluation::{
    aggregate, mae, render_table, rmse, run_experiment, tune, Algorithm, Dataset, EvalReport, TuningConfig,
};
use cfkit::factorization::{train, write_model, Optimizer};
use cfkit::hybrid::CfBackend;
use cfkit::ingest::{parse_movielens, write_ratings_csv, FeaturesFormat, RatingsFormat};
use cfkit::neighborhood::SimilarityKind;
use cfkit::partitioned::train_partitioned;
use cfkit::ratings::{mask, split, SparsityLevel, SplitSpec};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "cfkit",
    version,
    about = "Collaborative filtering experiments on rating datasets"
)]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a ratings file and print a summary.
    Ingest(IngestArgs),
    /// Train a factor model on one split and save it.
    Train(RunArgs),
    /// Evaluate algorithms on the full training split.
    Evaluate(RunArgs),
    /// Evaluate algorithms across sparsity levels and seeds.
    Sweep(RunArgs),
    /// Cross-validate hyperparameters on one training split.
    Tune(RunArgs),
    /// Render a results CSV as an aggregate table.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    path: PathBuf,
    #[arg(long, default_value = "u_data_100k")]
    format: RatingsFormat,
    /// Skip malformed lines instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Write the parsed ratings as `user,item,rating` CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    csv: PathBuf,
    /// Print aggregates as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ratings file, or a MovieLens directory (u.data, ratings.dat or ratings.csv).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<RatingsFormat>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    features_format: Option<FeaturesFormat>,
    #[arg(long)]
    name: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long = "algos", visible_alias = "algo", value_delimiter = ',')]
    algos: Option<Vec<Algorithm>>,
    /// Masked shares of the training ratings, e.g. 0.2,0.5,0.8.
    #[arg(long, value_delimiter = ',')]
    sparsity: Option<Vec<f64>>,
    /// Number of seeds; runs seeds 0..N.
    #[arg(long, conflicts_with = "seed")]
    seeds: Option<u64>,
    /// A single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    no_warmup: bool,

    /// Latent rank.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    optimizer: Option<Optimizer>,
    /// Relative objective improvement below which training stops; 0 disables.
    #[arg(long)]
    tol: Option<f64>,

    #[arg(long)]
    metric: Option<SimilarityKind>,
    #[arg(long)]
    neighbors: Option<usize>,

    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    cold_threshold: Option<usize>,
    #[arg(long)]
    cf_backend: Option<CfBackend>,

    #[arg(long)]
    tables: Option<usize>,
    #[arg(long)]
    bits: Option<usize>,

    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    sync_rounds: Option<usize>,

    /// Tune each cell by cross-validation before fitting.
    #[arg(long)]
    tune: bool,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    grid_k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    grid_lambda: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    grid_alpha: Option<Vec<f64>>,
}

/// Usage and configuration problems exit with 2, runtime failures with 1.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<cfkit::Error> for Failure {
    fn from(e: cfkit::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn runtime(context: &str) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Train(a) => resolve(&a, Mode::Train).and_then(|c| cmd_train(&c)),
        Command::Evaluate(a) => resolve(&a, Mode::Evaluate).and_then(|c| cmd_evaluate(&c)),
        Command::Sweep(a) => resolve(&a, Mode::Sweep).and_then(|c| cmd_evaluate(&c)),
        Command::Tune(a) => resolve(&a, Mode::Tune).and_then(|c| cmd_tune(&c)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Train,
    Evaluate,
    Sweep,
    Tune,
}

fn mode_defaults(mode: Mode) -> RunConfig {
    let mut c = RunConfig::default();
    match mode {
        Mode::Train => {
            c.algorithms = vec![Algorithm::Mf];
            c.sparsity = vec![0.0];
            c.seeds = vec![0];
        }
        Mode::Evaluate => {
            c.sparsity = vec![0.0];
            c.seeds = vec![0];
        }
        Mode::Sweep => {}
        Mode::Tune => {
            c.algorithms = vec![Algorithm::Mf, Algorithm::Hybrid];
            c.sparsity = vec![0.2];
            c.seeds = vec![0];
            c.tuning = Some(TuningConfig::default());
        }
    }
    c
}

/// Config file (or per-command defaults), then flags.
fn resolve(a: &RunArgs, mode: Mode) -> Result<RunConfig, Failure> {
    let mut c = match &a.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => mode_defaults(mode),
    };
    if let Some(p) = &a.data {
        c.dataset.path = p.clone();
    }
    if let Some(v) = a.format {
        c.dataset.format = v;
    }
    if let Some(v) = &a.features {
        c.dataset.features = Some(v.clone());
    }
    if let Some(v) = a.features_format {
        c.dataset.features_format = v;
    }
    if let Some(v) = &a.name {
        c.dataset.name = Some(v.clone());
    }
    if let Some(v) = &a.output {
        c.output = v.clone();
    }
    if a.threads.is_some() {
        c.threads = a.threads;
    }
    if let Some(v) = &a.algos {
        c.algorithms = v.clone();
    }
    if let Some(v) = &a.sparsity {
        c.sparsity = v.clone();
    }
    if let Some(n) = a.seeds {
        c.seeds = (0..n).collect();
    }
    if let Some(s) = a.seed {
        c.seeds = vec![s];
    }
    if let Some(v) = a.test_fraction {
        c.test_fraction = v;
    }
    if a.no_warmup {
        c.warmup = false;
    }
    let p = &mut c.params;
    macro_rules! set {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = a.$flag { $field = v; })*
        };
    }
    set! {
        k => p.mf.rank,
        lambda => p.mf.lambda,
        epochs => p.mf.epochs,
        learning_rate => p.mf.learning_rate,
        optimizer => p.mf.optimizer,
        tol => p.mf.convergence_tol,
        metric => p.neighborhood.metric.kind,
        neighbors => p.neighborhood.neighbors,
        alpha => p.hybrid.alpha,
        cold_threshold => p.hybrid.cold_threshold,
        cf_backend => p.hybrid.cf_backend,
        tables => p.lsh.num_tables,
        bits => p.lsh.bits_per_table,
    }
    if let Some(n) = a.neighbors {
        p.ann_neighbors = n;
    }
    if let Some(s) = a.seed {
        p.mf.seed = s;
        p.lsh.seed = s;
    }
    if a.partitions.is_some() {
        c.partitions = a.partitions;
    }
    if a.sync_rounds.is_some() {
        c.sync_rounds = a.sync_rounds;
    }
    let grid_flags = a.folds.is_some() || a.grid_k.is_some() || a.grid_lambda.is_some() || a.grid_alpha.is_some();
    if a.tune || grid_flags {
        let t = c.tuning.get_or_insert_with(TuningConfig::default);
        if let Some(v) = a.folds {
            t.folds = v;
        }
        if let Some(v) = &a.grid_k {
            t.grid.rank = v.clone();
        }
        if let Some(v) = &a.grid_lambda {
            t.grid.lambda = v.clone();
        }
        if let Some(v) = &a.grid_alpha {
            t.grid.alpha = v.clone();
        }
    }
    resolve_dataset_dir(&mut c);
    if mode == Mode::Train && c.algorithms != [Algorithm::Mf] {
        return Err(Failure::Usage("train: only --algo mf produces a saveable model".into()));
    }
    c.validate().map_err(Failure::Usage)?;
    if c.algorithms.contains(&Algorithm::Hybrid) && c.dataset.features.is_none() {
        return Err(Failure::Usage(
            "dataset.features: the hybrid algorithm needs an item features file (--features)".into(),
        ));
    }
    Ok(c)
}

/// Expands a MovieLens directory into explicit ratings and features paths.
fn resolve_dataset_dir(c: &mut RunConfig) {
    let dir = c.dataset.path.clone();
    if !dir.is_dir() {
        return;
    }
    let layouts = [
        ("u.data", RatingsFormat::UData100k, "u.item", FeaturesFormat::UItem100k),
        (
            "ratings.dat",
            RatingsFormat::Dat1m,
            "movies.dat",
            FeaturesFormat::MovielensGenres,
        ),
        (
            "ratings.csv",
            RatingsFormat::CsvLatest,
            "movies.csv",
            FeaturesFormat::CsvKeyValue,
        ),
    ];
    for (ratings, format, features, features_format) in layouts {
        if dir.join(ratings).is_file() {
            c.dataset.path = dir.join(ratings);
            c.dataset.format = format;
            if c.dataset.name.is_none() {
                c.dataset.name = dir.file_name().map(|n| n.to_string_lossy().into_owned());
            }
            if c.dataset.features.is_none() && dir.join(features).is_file() && format != RatingsFormat::CsvLatest {
                c.dataset.features = Some(dir.join(features));
                c.dataset.features_format = features_format;
            }
            return;
        }
    }
}

fn load_dataset(c: &RunConfig) -> Result<Dataset, Failure> {
    let features = c.dataset.features.as_deref().map(|p| (p, c.dataset.features_format));
    let ds = Dataset::load(&c.dataset.label(), &c.dataset.path, c.dataset.format, features)
        .map_err(|e| Failure::Runtime(format!("loading {}: {e}", c.dataset.path.display())))?;
    log::info!(
        "{}: {} users, {} items, {} ratings",
        ds.name,
        ds.ratings.num_users(),
        ds.ratings.num_items(),
        ds.ratings.len()
    );
    Ok(ds)
}

/// Applies the thread cap and writes the resolved config into the output
/// directory.
fn prepare(c: &RunConfig) -> Result<(), Failure> {
    if let Some(t) = c.threads {
        if !cfkit::configure_threads(t) {
            log::warn!("thread pool already initialized; --threads {t} ignored");
        }
    }
    fs::create_dir_all(&c.output).map_err(runtime(&c.output.display().to_string()))?;
    write_text(&c.output.join("run_config.toml"), &c.to_toml())
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(runtime(&path.display().to_string()))
}

fn cmd_ingest(a: &IngestArgs) -> Result<(), Failure> {
    let parsed = parse_movielens(&a.path, a.format)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    if !parsed.invalid.is_empty() {
        for d in &parsed.invalid {
            eprintln!("{}:{}", a.path.display(), d);
        }
        if !a.lenient {
            return Err(Failure::Runtime(format!(
                "{}: {} malformed lines",
                a.path.display(),
                parsed.invalid.len()
            )));
        }
    }
    let m = &parsed.matrix;
    println!(
        "{} users, {} items, {} ratings (density {:.4})",
        m.num_users(),
        m.num_items(),
        m.len(),
        m.density()
    );
    if let Some(out) = &a.out {
        write_ratings_csv(out, &parsed)?;
    }
    Ok(())
}

fn cmd_train(c: &RunConfig) -> Result<(), Failure> {
    prepare(c)?;
    let ds = load_dataset(c)?;
    let seed = c.seeds[0];
    let sparsity = c.sparsity.first().copied().unwrap_or(0.0);
    let (train_full, test) = split(
        &ds.ratings,
        &SplitSpec {
            test_fraction: c.test_fraction,
            seed,
            stratify_by_user: true,
        },
    )?;
    let train_m = mask(&train_full, SparsityLevel::from_sparsity(sparsity)?, seed)?;
    let mf = c.params.mf;
    let (model, trace) = match c.partitions {
        Some(n) => {
            let rounds = c.sync_rounds.unwrap_or(mf.epochs);
            let (m, t) = train_partitioned(&train_m, n, &mf, rounds)?;
            (
                m,
                serde_json::to_value(&t).map_err(|e| Failure::Runtime(e.to_string()))?,
            )
        }
        None => {
            let (m, t) = train(&train_m, &mf)?;
            (
                m,
                serde_json::to_value(&t).map_err(|e| Failure::Runtime(e.to_string()))?,
            )
        }
    };
    let model_path = c.output.join("model.bin");
    let file = fs::File::create(&model_path).map_err(runtime(&model_path.display().to_string()))?;
    write_model(&model, BufWriter::new(file))?;

    let pairs: Vec<(f64, f64)> = test
        .entries()
        .iter()
        .map(|r| (model.predict(r.user, r.item), r.value))
        .collect();
    let (test_rmse, test_mae) = (rmse(&pairs)?, mae(&pairs)?);
    let summary = json!({
        "seed": seed,
        "sparsity": sparsity,
        "train_ratings": train_m.len(),
        "test_ratings": test.len(),
        "test_rmse": test_rmse,
        "test_mae": test_mae,
        "trace": trace,
    });
    write_text(
        &c.output.join("trace.json"),
        &serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    println!(
        "trained {} (k={}, lambda={}) on {} ratings: test RMSE {test_rmse:.4}, MAE {test_mae:.4}",
        mf.optimizer,
        mf.rank,
        mf.lambda,
        train_m.len()
    );
    println!("model written to {}", model_path.display());
    Ok(())
}

fn cmd_evaluate(c: &RunConfig) -> Result<(), Failure> {
    prepare(c)?;
    let ds = load_dataset(c)?;
    let report = run_experiment(&ds, &c.experiment())?;
    save_report(c, &report)?;
    print!("{}", render_table(&aggregate(&report.rows)));
    Ok(())
}

fn save_report(c: &RunConfig, report: &EvalReport) -> Result<(), Failure> {
    let csv_path = c.output.join("results.csv");
    let file = fs::File::create(&csv_path).map_err(runtime(&csv_path.display().to_string()))?;
    report.write_csv(BufWriter::new(file))?;
    write_text(&c.output.join("results.json"), &report.to_json()?)?;
    log::info!("{} rows written to {}", report.rows.len(), csv_path.display());
    Ok(())
}

fn cmd_tune(c: &RunConfig) -> Result<(), Failure> {
    prepare(c)?;
    let ds = load_dataset(c)?;
    let seed = c.seeds[0];
    let sparsity = c.sparsity.first().copied().unwrap_or(0.0);
    let tuning = c.tuning.clone().unwrap_or_default();
    let (train_full, _) = split(
        &ds.ratings,
        &SplitSpec {
            test_fraction: c.test_fraction,
            seed,
            stratify_by_user: true,
        },
    )?;
    let train_m = mask(&train_full, SparsityLevel::from_sparsity(sparsity)?, seed)?;
    let mut base = c.params;
    base.mf.seed = seed;
    base.lsh.seed = seed;
    let outcome = tune(
        &train_m,
        ds.features.as_deref(),
        &c.algorithms,
        &base,
        &tuning.grid,
        tuning.folds,
        seed,
    )?;
    write_text(
        &c.output.join("tune.json"),
        &serde_json::to_string_pretty(&outcome).unwrap(),
    )?;

    // replayable config with the chosen parameters and tuning switched off
    let mut tuned = c.clone();
    tuned.params = outcome.best;
    tuned.tuning = None;
    write_text(&c.output.join("tuned_config.toml"), &tuned.to_toml())?;

    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x}"));
    println!(
        "{:<12} {:>5} {:>8} {:>6} {:>7} {:>5}  mean RMSE",
        "algorithm", "k", "lambda", "alpha", "tables", "bits"
    );
    for r in &outcome.table {
        println!(
            "{:<12} {:>5} {:>8} {:>6} {:>7} {:>5}  {:.4}",
            r.algorithm.to_string(),
            fmt(r.rank.map(|x| x as f64)),
            fmt(r.lambda),
            fmt(r.alpha),
            fmt(r.num_tables.map(|x| x as f64)),
            fmt(r.bits_per_table.map(|x| x as f64)),
            r.mean_rmse
        );
    }
    let b = &outcome.best;
    println!(
        "best: k={} lambda={} alpha={} tables={} bits={}",
        b.mf.rank, b.mf.lambda, b.hybrid.alpha, b.lsh.num_tables, b.lsh.bits_per_table
    );
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<(), Failure> {
    let file = fs::File::open(&a.csv).map_err(runtime(&a.csv.display().to_string()))?;
    let report = EvalReport::read_csv(file).map_err(|e| Failure::Runtime(format!("{}: {e}", a.csv.display())))?;
    let agg = aggregate(&report.rows);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&agg).unwrap());
    } else {
        print!("{}", render_table(&agg));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> RunArgs {
        #[derive(Parser)]
        struct Wrap {
            #[command(flatten)]
            run: RunArgs,
        }
        let mut full = vec!["cfkit"];
        full.extend_from_slice(args);
        Wrap::parse_from(full).run
    }

    #[test]
    fn flags_override_defaults() {
        let a = parse(&[
            "--data", "x.data", "--k", "32", "--lambda", "0.05", "--seed", "7", "--algo", "mf",
        ]);
        let c = resolve(&a, Mode::Train).ok().unwrap();
        assert_eq!(c.params.mf.rank, 32);
        assert_eq!(c.params.mf.lambda, 0.05);
        assert_eq!(c.params.mf.seed, 7);
        assert_eq!(c.seeds, vec![7]);
    }

    #[test]
    fn sweep_flags_expand_lists() {
        let a = parse(&[
            "--data",
            "x.data",
            "--features",
            "x.item",
            "--sparsity",
            "0.2,0.5,0.8",
            "--algos",
            "baseline_cf,mf,hybrid,ann",
            "--seeds",
            "3",
        ]);
        let c = resolve(&a, Mode::Sweep).ok().unwrap();
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.experiment().retained, vec![0.8, 0.5, 0.2]);
        assert_eq!(c.algorithms.len(), 4);
    }

    #[test]
    fn hybrid_without_features_is_a_usage_error() {
        let a = parse(&["--data", "x.data", "--algos", "hybrid"]);
        assert!(matches!(resolve(&a, Mode::Evaluate), Err(Failure::Usage(m)) if m.starts_with("dataset.features")));
    }

    #[test]
    fn train_rejects_other_algorithms() {
        let a = parse(&["--data", "x.data", "--algo", "ann"]);
        assert!(matches!(resolve(&a, Mode::Train), Err(Failure::Usage(_))));
    }
}
