use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use medtest::noise::estimate_noise;
use medtest::pipeline::run_med_test;
use medtest::{
    dense_permutation_test, export_curves, monte_carlo_rejection_rate, parse_long_csv,
    parse_long_csv_with_range, parse_wide_csv, ErrorClass, Family, Kernel, MedError,
    MonteCarloSummary, NoiseConfig, NoiseMode, SimDesign, SmootherConfig, TestConfig,
};

#[derive(Parser)]
#[command(
    name = "medtest",
    version,
    about = "Marginal energy distance tests for sparse functional data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Permutation test of marginal homogeneity on a long-format CSV.
    Test(TestArgs),
    /// Monte Carlo rejection rate of one simulation design.
    Simulate(SimulateArgs),
    /// Measurement-error variance of each group.
    NoiseEstimate(NoiseArgs),
    /// Energy distance test for curves observed on one shared grid.
    DenseEd(DenseArgs),
}

#[derive(Args)]
struct SmoothingArgs {
    /// Bandwidth for the X group (rescaled time units).
    #[arg(long, default_value_t = 0.2)]
    hx: f64,
    /// Bandwidth for the Y group; defaults to --hx.
    #[arg(long)]
    hy: Option<f64>,
    /// Number of grid points on [0, 1].
    #[arg(long, default_value_t = 101)]
    grid: usize,
    #[arg(long, default_value = "epanechnikov")]
    kernel: Kernel,
    /// Permutation budget S, counting the observed statistic.
    #[arg(long, default_value_t = 200)]
    perms: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SmoothingArgs {
    fn config(&self) -> TestConfig {
        TestConfig {
            smoother: SmootherConfig {
                kernel: self.kernel,
                h_x: self.hx,
                h_y: self.hy.unwrap_or(self.hx),
                grid_size: self.grid,
                ..SmootherConfig::default()
            },
            permutations: self.perms,
            alpha: self.alpha,
            seed: self.seed,
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Args)]
struct TestArgs {
    /// Long CSV with columns subject_id, group, time, value.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    /// none, equal_errors or augment.
    #[arg(long, default_value = "equal_errors")]
    noise_mode: NoiseMode,
    /// Rescale raw times from [lo, hi] onto [0, 1].
    #[arg(long, requires = "hi")]
    lo: Option<f64>,
    #[arg(long, requires = "lo")]
    hi: Option<f64>,
    /// Directory for g1.csv, g2.csv, g3.csv and integrand.csv.
    #[arg(long)]
    export_curves: Option<PathBuf>,
    /// Write the full run report as JSON (`-` for stdout).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// example1, example2 or gaussian_scale.
    #[arg(long)]
    design: Family,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma1: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Observe every subject on this many shared grid points (51 if no value is given).
    #[arg(long, num_args = 0..=1, default_missing_value = "51")]
    dense: Option<usize>,
    /// Defaults to equal_errors when the sigmas agree and augment otherwise.
    #[arg(long)]
    noise_mode: Option<NoiseMode>,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    /// Append the result row to this CSV (the header is written once).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = medtest::noise::DEFAULT_NOISE_BANDWIDTH)]
    bandwidth: f64,
    /// Write `{sigma2_x, sigma2_y}` here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Directory for diagnostic curves.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct DenseArgs {
    /// Wide CSV: subject_id, group, then one column per grid time.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 200)]
    perms: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Test(args) => run_test(args),
        Command::Simulate(args) => run_simulate(args),
        Command::NoiseEstimate(args) => run_noise(args),
        Command::DenseEd(args) => run_dense(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}

fn read(path: &Path) -> Result<String, MedError> {
    std::fs::read_to_string(path).map_err(|e| {
        MedError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), MedError> {
    let text = serde_json::to_string_pretty(value)?;
    if path == Path::new("-") {
        println!("{text}");
    } else {
        std::fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn run_test(args: TestArgs) -> Result<(), MedError> {
    let text = read(&args.input)?;
    let dataset = match (args.lo, args.hi) {
        (Some(lo), Some(hi)) => parse_long_csv_with_range(&text, lo, hi)?,
        _ => parse_long_csv(&text)?,
    };
    let config = args.smoothing.config();
    let report = run_med_test(&dataset, &config, args.noise_mode).map_err(|f| {
        eprintln!("run failed during the {:?} stage", f.stage);
        f.error
    })?;

    println!("{}", report.result.summary());
    if let Some(noise) = &report.noise {
        println!(
            "estimated error variances: sigma2_x = {:.6}, sigma2_y = {:.6}",
            noise.sigma2_x, noise.sigma2_y
        );
    }
    if let Some(dir) = &args.export_curves {
        export_curves(&report, dir)?;
    }
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<(), MedError> {
    let mut design = SimDesign::new(args.design, args.n, args.m).with_noise(args.sigma1, args.sigma2);
    if let Some(points) = args.dense {
        design = design.dense(points);
    }
    let mode = args.noise_mode.unwrap_or_else(|| design.default_noise_mode());
    let config = args.smoothing.config();
    let summary = monte_carlo_rejection_rate(&design, &config, mode, args.reps, config.seed)?;
    let row = summary.csv_row();
    match &args.out {
        Some(path) => {
            let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
            let mut text = String::new();
            if fresh {
                text.push_str(MonteCarloSummary::CSV_HEADER);
                text.push('\n');
            }
            text.push_str(&row);
            text.push('\n');
            use std::io::Write;
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?
                .write_all(text.as_bytes())?;
        }
        None => {
            println!("{}", MonteCarloSummary::CSV_HEADER);
            println!("{row}");
        }
    }
    Ok(())
}

fn run_noise(args: NoiseArgs) -> Result<(), MedError> {
    let dataset = parse_long_csv(&read(&args.input)?)?;
    let config = NoiseConfig {
        bandwidth: args.bandwidth,
        ..NoiseConfig::default()
    };
    let estimate = estimate_noise(&dataset, &config)?;
    let summary = serde_json::json!({
        "sigma2_x": estimate.sigma2_x,
        "sigma2_y": estimate.sigma2_y,
    });
    write_json(args.json.as_deref().unwrap_or(Path::new("-")), &summary)?;
    if let Some(dir) = &args.curves {
        std::fs::create_dir_all(dir)?;
        for (group, g) in [("x", &estimate.x), ("y", &estimate.y)] {
            for (name, curve) in [
                ("mean", &g.mean_curve),
                ("raw_diag", &g.raw_diag),
                ("gap_diag", &g.gap_diag),
                ("cov_diag", &g.cov_diag),
            ] {
                std::fs::write(dir.join(format!("{name}_{group}.csv")), curve.to_csv())?;
            }
        }
    }
    Ok(())
}

fn run_dense(args: DenseArgs) -> Result<(), MedError> {
    let sample = parse_wide_csv(&read(&args.input)?)?;
    let result = dense_permutation_test(&sample, args.perms, args.alpha, args.seed)?;
    println!("{}", result.summary().replacen("MED", "ED", 1));
    if let Some(path) = &args.json {
        write_json(path, &result)?;
    }
    Ok(())
}
