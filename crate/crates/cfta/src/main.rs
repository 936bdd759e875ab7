use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cfta::dataset::{self, Dataset, DatasetError};
use cfta::eval::{self, EvalError, IterativeSettings, Mode, RunSpec, Solver};
use cfta::format::{self, EmbeddingFile};
use cfta::synth::{self, SynthSpec};
use cfta_core::online::{stream_order, OnlineAdapter};
use cfta_core::{run_transductive, AdaptConfig, CovarianceMode, GaussianModel, KnowledgeBank, StreamOrder};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Backpropagation-free test-time adaptation over embedding files.
///
/// Set ADAPT_THREADS to cap internal parallelism (0 or unset: all cores).
#[derive(Parser)]
#[command(name = "cfta", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt one dataset and write a JSON report.
    Run(RunArgs),
    /// Generate a synthetic Gaussian-mixture dataset.
    Synth(SynthArgs),
    /// Evaluate all eight bank / mean / covariance on-off combinations.
    Ablate(MatrixArgs),
    /// Compare shuffled, easy-to-hard and hard-to-easy stream orders (online).
    Ordering(MatrixArgs),
    /// Dump the final knowledge bank and Gaussian model.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    Online,
    Transductive,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SolverArg {
    Closed,
    Iterative,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum CovArg {
    Shared,
    PerClass,
    Identity,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum OrderArg {
    AsGiven,
    Shuffled,
    EasyToHard,
    HardToEasy,
}

#[derive(Args)]
struct AdaptArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "online")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "closed")]
    solver: SolverArg,
    /// Knowledge-bank capacity per class [default: 16 online, 6 transductive]
    #[arg(long)]
    bank_size: Option<usize>,
    /// Weight of the bank statistics in the class means.
    #[arg(long, default_value_t = AdaptConfig::DEFAULT_ALPHA)]
    alpha: f64,
    /// Zero-shot softmax temperature [default: manifest tau, else 0.01]
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum, default_value = "shared")]
    cov: CovArg,
    #[arg(long, value_enum, default_value = "as_given")]
    order: OrderArg,
    /// Seed for the shuffled stream order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable the knowledge bank.
    #[arg(long)]
    no_bank: bool,
    /// Keep the prototypes as class means.
    #[arg(long)]
    no_mean_update: bool,
    /// Keep the identity as covariance.
    #[arg(long)]
    no_cov_update: bool,
    /// Offer each sample to the bank after predicting it.
    #[arg(long)]
    insert_after_predict: bool,
    /// Iterative solver: maximum outer iterations.
    #[arg(long, default_value_t = 20)]
    max_iters: usize,
    /// Iterative solver: stop when no label entry moves more than this.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Iterative solver: prior weight on the prototype means.
    #[arg(long, default_value_t = AdaptConfig::DEFAULT_BETA)]
    beta: f64,
    /// Iterative solver: keep the first covariance estimate.
    #[arg(long)]
    freeze_cov: bool,
    /// Omit wall_time_ms so reports are reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    adapt: AdaptArgs,
    /// Report path [default: standard output]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MatrixArgs {
    #[command(flatten)]
    adapt: AdaptArgs,
    /// Write all reports as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    adapt: AdaptArgs,
    /// Directory for bank.json, model.json, means.adpt, covariance.adpt and precision.adpt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    n_per_class: usize,
    /// Minimum distance between true class means.
    #[arg(long, default_value_t = 0.3)]
    mean_separation: f64,
    /// Norm of the offset between true means and prototypes.
    #[arg(long, default_value_t = 0.3)]
    prototype_noise: f64,
    #[arg(long, default_value_t = 5.0)]
    covariance_condition: f64,
    /// RMS per-coordinate standard deviation of the shared covariance.
    #[arg(long, default_value_t = 0.04)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::OrderingRequiresOnline => Failure::Usage(e.to_string()),
            e => Failure::Data(e.to_string()),
        }
    }
}

impl From<cfta_core::AdaptError> for Failure {
    fn from(e: cfta_core::AdaptError) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

impl AdaptArgs {
    fn spec(&self) -> CliResult<RunSpec> {
        let mode = match self.mode {
            ModeArg::Online => Mode::Online,
            ModeArg::Transductive => Mode::Transductive,
        };
        let mut spec = RunSpec::new(mode);
        let cfg = &mut spec.adapt;
        if let Some(l) = self.bank_size {
            cfg.bank_capacity = l;
        }
        cfg.alpha = self.alpha;
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        cfg.covariance_mode = match self.cov {
            CovArg::Shared => CovarianceMode::Shared,
            CovArg::PerClass => CovarianceMode::PerClass,
            CovArg::Identity => CovarianceMode::Identity,
        };
        cfg.order = match self.order {
            OrderArg::AsGiven => StreamOrder::AsGiven,
            OrderArg::Shuffled => StreamOrder::Shuffled,
            OrderArg::EasyToHard => StreamOrder::EasyToHard,
            OrderArg::HardToEasy => StreamOrder::HardToEasy,
        };
        cfg.seed = self.seed;
        cfg.use_bank = !self.no_bank;
        cfg.update_means = !self.no_mean_update;
        cfg.update_covariance = !self.no_cov_update;
        cfg.insert_after_predict = self.insert_after_predict;
        cfg.beta = self.beta;
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        if let SolverArg::Iterative = self.solver {
            if self.max_iters == 0 {
                return Err(Failure::Usage("--max-iters must be at least 1".into()));
            }
            if self.tol <= 0.0 || self.tol.is_nan() {
                return Err(Failure::Usage("--tol must be positive".into()));
            }
            spec.solver = Solver::Iterative;
            spec.iterative = Some(IterativeSettings {
                max_iters: self.max_iters,
                tol: self.tol,
                refresh_covariance: !self.freeze_cov,
            });
        }
        spec.timing = !self.no_timing;
        Ok(spec)
    }

    /// Loads the manifest; an explicit --tau overrides the manifest's value.
    fn load(&self) -> CliResult<Dataset> {
        let mut data = dataset::load_manifest(&self.manifest)?;
        if let Some(t) = self.tau {
            data.tau = Some(t);
        }
        Ok(data)
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult {
    let mut json = serde_json::to_string_pretty(value).expect("report serializes");
    json.push('\n');
    match out {
        Some(path) => fs::write(path, json).map_err(|e| Failure::Data(format!("{}: {e}", path.display()))),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn cmd_run(args: &RunArgs) -> CliResult {
    let spec = args.adapt.spec()?;
    let data = args.adapt.load()?;
    let report = eval::evaluate(&data, &spec)?;
    write_json(&report, args.out.as_deref())?;
    if let Some(path) = &args.out {
        println!(
            "{}: top-1 {:.2}%  zero-shot {:.2}%  gain {:+.2}",
            path.display(),
            100.0 * report.top1_accuracy,
            100.0 * report.zero_shot_accuracy,
            100.0 * report.gain
        );
    }
    Ok(())
}

fn cmd_ablate(args: &MatrixArgs) -> CliResult {
    let spec = args.adapt.spec()?;
    let data = args.adapt.load()?;
    let rows = eval::ablation_matrix(&data, &spec);
    print!("{}", eval::format_ablation_table(&rows));
    if let Some(out) = &args.out {
        write_json(&rows, Some(out))?;
    }
    Ok(())
}

fn cmd_ordering(args: &MatrixArgs) -> CliResult {
    let spec = args.adapt.spec()?;
    let data = args.adapt.load()?;
    let report = eval::ordering_experiment(&data, &spec)?;
    print!("{}", eval::format_ordering_table(&report));
    if let Some(out) = &args.out {
        write_json(&report, Some(out))?;
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> CliResult {
    let spec = SynthSpec {
        classes: args.classes,
        dim: args.dim,
        n_per_class: args.n_per_class,
        mean_separation: args.mean_separation,
        prototype_noise: args.prototype_noise,
        covariance_condition: args.covariance_condition,
        noise_scale: args.noise_scale,
        seed: args.seed,
    };
    let data = synth::generate(&spec).map_err(|e| match e {
        synth::SynthError::InvalidSpec(_) => Failure::Usage(e.to_string()),
        e => Failure::Data(e.to_string()),
    })?;
    let manifest =
        dataset::write_dataset(&args.out_dir, &data.features, &data.prototypes, Some(&data.labels_i32()), None)?;

    #[derive(Serialize)]
    struct SynthInfo {
        spec: SynthSpec,
        #[serde(skip_serializing_if = "Option::is_none")]
        oracle_accuracy: Option<synth::OracleAccuracy>,
    }
    let oracle_accuracy = data.oracle_accuracy().ok();
    write_json(&SynthInfo { spec, oracle_accuracy }, Some(&args.out_dir.join("synth.json")))?;
    match oracle_accuracy {
        Some(a) => println!(
            "{}: {} samples; Bayes oracle {:.2}% (raw {:.2}%)",
            manifest.display(),
            data.features.len(),
            100.0 * a.normalized,
            100.0 * a.raw
        ),
        None => println!("{}: {} samples", manifest.display(), data.features.len()),
    }
    Ok(())
}

fn write_matrix(path: &Path, rows: &[Vec<f64>]) -> CliResult {
    let file = EmbeddingFile::from_rows(rows, false).map_err(|e| Failure::Data(e.to_string()))?;
    format::write_embeddings(path, &file).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cmd_inspect(args: &InspectArgs) -> CliResult {
    let spec = args.adapt.spec()?;
    if spec.solver == Solver::Iterative {
        return Err(Failure::Usage("inspect supports the closed-form solver only".into()));
    }
    let data = args.adapt.load()?;
    let mut cfg = spec.adapt.clone();
    if let Some(t) = data.tau {
        cfg.tau = t;
    }
    let (bank, model): (KnowledgeBank, GaussianModel) = match spec.mode {
        Mode::Online => {
            let order = stream_order(&data.features, &data.prototypes, &cfg)?;
            let mut adapter = OnlineAdapter::new(&data.prototypes, cfg)?;
            for i in order {
                adapter.step(i, &data.features[i])?;
            }
            let model = adapter.model()?.clone();
            (adapter.bank().clone(), model)
        }
        Mode::Transductive => {
            let out = run_transductive(&data.features, &data.prototypes, &cfg)?;
            (out.bank, out.model)
        }
    };

    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::Data(format!("{}: {e}", args.out_dir.display())))?;
    let dir = &args.out_dir;
    write_json(&bank.summary(), Some(&dir.join("bank.json")))?;

    #[derive(Serialize)]
    struct ModelInfo<'a> {
        num_classes: usize,
        dim: usize,
        n_bank: usize,
        bank_fill: Vec<usize>,
        gda_bias: &'a [f64],
    }
    let info = ModelInfo {
        num_classes: model.num_classes(),
        dim: model.dim(),
        n_bank: model.n_bank(),
        bank_fill: bank.fill(),
        gda_bias: model.gda_bias(),
    };
    write_json(&info, Some(&dir.join("model.json")))?;

    let square = |m: &cfta_core::linalg::Matrix| -> Vec<Vec<f64>> {
        (0..m.dim()).map(|i| m.row(i).to_vec()).collect()
    };
    write_matrix(&dir.join("means.adpt"), model.means())?;
    write_matrix(&dir.join("covariance.adpt"), &square(model.covariance()))?;
    write_matrix(&dir.join("precision.adpt"), &square(model.precision()))?;
    println!(
        "{}: bank holds {} entries over {} classes",
        dir.display(),
        bank.total_len(),
        bank.num_classes()
    );
    Ok(())
}

fn configure_threads() -> CliResult {
    let Ok(value) = std::env::var("ADAPT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("ADAPT_THREADS must be a non-negative integer, got {value:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Ordering(a) => cmd_ordering(a),
        Command::Inspect(a) => cmd_inspect(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("Run with --help for usage.");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
