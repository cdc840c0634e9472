use std::fmt::Write as _;
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use shiftcvm::study::{prepare_tables, reproduce_ou_figures};
use shiftcvm::{
    compute_statistics, decide, estimate_quantiles, mde_shift, mle_shift, run_power_study,
    run_size_study, simulate_path, ExperimentConfig, InitRule, InvariantLaw, LimitGrid, LimitKind,
    LimitSampleBatch, Noise, Path, QuantileTable, ShiftDriftModel, StatisticKind, StudyReport,
    TimeGrid,
};

const DEFAULT_SEED: u64 = 1;

#[derive(Parser)]
#[command(
    name = "shiftcvm",
    version,
    about = "Cramér-von Mises tests for ergodic diffusions with unknown shift"
)]
struct Cli {
    /// Base seed. Overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory. Overrides `out_dir` in a config file.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a path of dX = S*(X - theta0) dt + dW.
    Simulate(SimulateArgs),
    /// Estimate the shift from a path.
    Estimate(EstimateArgs),
    /// Compute a statistic on a path and decide against a quantile table.
    Test(TestArgs),
    /// Invariant law tables.
    #[command(subcommand)]
    Law(LawCommand),
    /// Monte Carlo of the limit laws.
    #[command(subcommand)]
    Limits(LimitsCommand),
    /// Size and power experiments.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Limit-law densities and threshold curves.
    #[command(subcommand)]
    Figures(FiguresCommand),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "ou")]
    model: String,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta0: f64,
    #[arg(long, default_value_t = 200.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Fixed start. Without it X_0 is drawn from the shifted invariant law.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<f64>,
    /// Write the path as CSV.
    #[arg(long)]
    dump_path: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mle,
    Mde,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    path: PathBuf,
    #[arg(long, default_value = "ou")]
    model: String,
    /// Write the objective scan as `theta,objective` CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    /// delta_lte, delta_edf, mu_kernel, ks_lte or ks_edf.
    #[arg(long)]
    kind: StatisticKind,
    #[arg(long)]
    path: PathBuf,
    #[arg(long, default_value = "ou")]
    model: String,
    /// Quantile table. Without it only the statistic is reported.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Subcommand)]
enum LawCommand {
    /// Write `x,f,F` rows for the invariant law at theta = 0.
    Export {
        #[arg(long, default_value = "ou")]
        model: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LimitsCommand {
    /// Simulate replicates of a limit law and save them.
    Simulate {
        /// delta, Delta or mu.
        #[arg(long)]
        kind: LimitKind,
        #[arg(long, default_value = "ou")]
        model: String,
        /// Number of replicates.
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        /// Index of the first replicate, for sharding across machines.
        #[arg(long, default_value_t = 0)]
        first: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge sample files and estimate the upper quantiles.
    Quantiles {
        /// Sample files from `limits simulate`; shards are merged.
        #[arg(long = "in", value_delimiter = ',', required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
        eps: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Rejection rates under the null.
    Size {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rejection rates under the alternatives.
    Power {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum FiguresCommand {
    /// Densities of delta and Delta and the threshold curves for OU.
    Ou {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn model(spec: &str) -> Result<ShiftDriftModel> {
    Ok(ShiftDriftModel::parse_reference(spec)?)
}

fn out_path(
    cli_dir: &Option<PathBuf>,
    explicit: Option<PathBuf>,
    default: &str,
) -> Result<PathBuf> {
    let path = match explicit {
        Some(p) => p,
        None => cli_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("."))
            .join(default),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(path)
}

/// Write to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn read_path(file: &FsPath) -> Result<Path> {
    Ok(Path::read_csv(file)?)
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let model = model(&args.model)?;
    let time = TimeGrid::new(args.horizon, args.dt)?;
    let noise = Noise::Seeded(cli.seed.unwrap_or(DEFAULT_SEED));
    let path = match args.x0 {
        Some(x0) => simulate_path(&model, args.theta0, time, noise, InitRule::Fixed(x0))?,
        None => {
            let law = InvariantLaw::build_default(&model)?;
            simulate_path(&model, args.theta0, time, noise, InitRule::Stationary(&law))?
        }
    };
    match &args.dump_path {
        Some(file) => {
            path.write_csv(file)?;
            let (lo, hi) = path.min_max();
            println!(
                "wrote {} ({} steps, range [{lo:.4}, {hi:.4}])",
                file.display(),
                path.steps()
            );
        }
        None => emit(&path.to_csv())?,
    }
    Ok(())
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let model = model(&args.model)?;
    let path = read_path(&args.path)?;
    let est = match args.method {
        Method::Mle => mle_shift(&path, &model)?,
        Method::Mde => {
            let law = InvariantLaw::build_default(&model)?;
            mde_shift(&path, &model, &law)?
        }
    };
    println!("theta_hat={:.10}", est.theta_hat);
    if est.boundary_hit {
        eprintln!("warning: the estimate sits on the boundary of the parameter interval");
    }
    if let Some(file) = &args.curve {
        let mut csv = String::from("theta,objective\n");
        for (t, v) in est.objective_curve.iter().flatten() {
            let _ = writeln!(csv, "{t:.10e},{v:.10e}");
        }
        std::fs::write(file, csv).with_context(|| format!("writing {}", file.display()))?;
    }
    Ok(())
}

fn test(args: &TestArgs) -> Result<()> {
    let model = model(&args.model)?;
    let law = InvariantLaw::build_default(&model)?;
    let path = read_path(&args.path)?;
    let mut report = compute_statistics(&path, &model, &law, &[args.kind])?.remove(0);
    match (&args.table, args.epsilon) {
        (Some(file), Some(eps)) => {
            let table = QuantileTable::load(file)?;
            report = decide(&report, &table, eps)?;
        }
        (None, None) => {}
        _ => bail!(shiftcvm::Error::Config(
            "--table and --epsilon must be given together".into()
        )),
    }
    println!("{}", report.to_json());
    Ok(())
}

fn law_export(cli: &Cli, spec: &str, out: Option<PathBuf>) -> Result<()> {
    let model = model(spec)?;
    let law = InvariantLaw::build_default(&model)?;
    if out.is_none() && cli.out_dir.is_none() {
        return emit(&law.to_csv());
    }
    let file = out_path(&cli.out_dir, out, &format!("law_{}.csv", law.model_ref()))?;
    law.write_csv(&file)?;
    println!("wrote {}", file.display());
    Ok(())
}

fn limits_simulate(
    cli: &Cli,
    kind: LimitKind,
    spec: &str,
    n: u64,
    first: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = model(spec)?;
    let law = InvariantLaw::build_default(&model)?;
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let batch = shiftcvm::limit::simulate_limit_range(
        kind,
        &law,
        seed,
        LimitGrid::for_law(&law),
        first..first + n,
    )?;
    let file = out_path(
        &cli.out_dir,
        out,
        &format!("{kind}_{}_{first}.samples", law.model_ref()),
    )?;
    batch.save(&file)?;
    println!("wrote {} ({} samples)", file.display(), batch.n_mc());
    Ok(())
}

fn limits_quantiles(
    cli: &Cli,
    inputs: &[PathBuf],
    eps: &[f64],
    out: Option<PathBuf>,
) -> Result<()> {
    let parts = inputs
        .iter()
        .map(|f| LimitSampleBatch::load(f))
        .collect::<Result<Vec<_>, _>>()?;
    let batch = LimitSampleBatch::merge(parts)?;
    let table = estimate_quantiles(&batch, eps)?;
    emit(&table.to_text())?;
    if out.is_some() || cli.out_dir.is_some() {
        let file = out_path(
            &cli.out_dir,
            out,
            &format!("{}_{}.table", table.kind, table.model_ref),
        )?;
        table.save(&file)?;
        eprintln!("wrote {}", file.display());
    }
    Ok(())
}

fn load_config(cli: &Cli, file: Option<&FsPath>) -> Result<ExperimentConfig> {
    let mut config = match file {
        Some(f) => ExperimentConfig::load(f)?,
        None => ExperimentConfig::from_toml("model = \"ou\"")?,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    Ok(config)
}

fn print_report(report: &StudyReport, dir: &FsPath) -> Result<()> {
    emit(&report.rates_csv())?;
    for f in report.write(dir)? {
        eprintln!("wrote {}", f.display());
    }
    eprintln!(
        "{} scenarios in {:.1} s",
        report.scenarios.len(),
        report.runtime_seconds
    );
    Ok(())
}

fn study(cli: &Cli, power: bool, file: &FsPath) -> Result<()> {
    let config = load_config(cli, Some(file))?;
    let model = config.model()?;
    let law = InvariantLaw::build_default(&model)?;
    let tables = prepare_tables(&config, &law)?;
    let report = if power {
        run_power_study(&config, &law, &tables)?
    } else {
        run_size_study(&config, &law, &tables)?
    };
    print_report(&report, &config.out_dir)
}

fn figures_ou(cli: &Cli, file: Option<&FsPath>) -> Result<()> {
    let mut config = load_config(cli, file)?;
    if let Some(seed) = cli.seed {
        config.limits.seed = seed;
    }
    let data = reproduce_ou_figures(&config)?;
    println!("epsilon,d_eps,c_eps");
    for ((e, d), c) in data.epsilons.iter().zip(&data.d_eps).zip(&data.c_eps) {
        if [0.01, 0.05, 0.1].iter().any(|x| (x - e).abs() < 1e-12) {
            println!("{e},{d:.4},{c:.4}");
        }
    }
    for f in &data.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Estimate(a) => estimate(a),
        Command::Test(a) => test(a),
        Command::Law(LawCommand::Export { model, out }) => law_export(cli, model, out.clone()),
        Command::Limits(LimitsCommand::Simulate {
            kind,
            model,
            n,
            first,
            out,
        }) => limits_simulate(cli, *kind, model, *n, *first, out.clone()),
        Command::Limits(LimitsCommand::Quantiles { inputs, eps, out }) => {
            limits_quantiles(cli, inputs, eps, out.clone())
        }
        Command::Study(StudyCommand::Size { config }) => study(cli, false, config),
        Command::Study(StudyCommand::Power { config }) => study(cli, true, config),
        Command::Figures(FiguresCommand::Ou { config }) => figures_ou(cli, config.as_deref()),
    }
}

/// 3 for numerical failures, 2 for everything else the user can fix.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<shiftcvm::Error>() {
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
