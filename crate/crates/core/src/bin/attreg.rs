use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use attreg_core::error::{Error, Result};
use attreg_core::experiments::{
    average_grids, default_directions, generate_planted, landscape, perturbed_start, GeneratorSpec,
};
use attreg_core::io::{
    read_instance, write_instance, write_landscape_csv, write_summary, write_trace_csv, RunSummary,
};
use attreg_core::nce::PairedExperiment;
use attreg_core::newton::{
    default_step_size, gradient_descent_baseline, solve, HessianMode, SolverConfig,
};
use attreg_core::seeds::derive_seed;
use attreg_core::suite::{parse_checks, run_suite, SuiteOptions};
use attreg_core::{ProblemInstance, Vector};

#[derive(Parser)]
#[command(
    name = "attreg",
    version,
    about = "Softmax / cross-entropy regression solver and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted instance and write it as JSON.
    Gen {
        #[command(flatten)]
        gen: GenArgs,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Newton solver; writes trace.csv and summary.json.
    Solve(SolveArgs),
    /// Evaluate the loss on a 2-D grid; writes CSV.
    Landscape(LandscapeArgs),
    /// Run the oracle suite over seeded instances.
    Verify(VerifyArgs),
    /// Correlated-vs-shuffled InfoNCE experiment.
    Nce(NceArgs),
}

#[derive(Args, Clone)]
struct GenArgs {
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 2.0)]
    conditioning: f64,
    #[arg(long, default_value_t = 4.0)]
    norm_cap_r: f64,
    #[arg(long, default_value_t = 1.0)]
    ridge_l: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GenArgs {
    fn spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            n: self.n,
            d: self.d,
            conditioning: self.conditioning,
            norm_cap_r: self.norm_cap_r,
            ridge_l: self.ridge_l,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Sampled,
}

#[derive(Args)]
struct SolveArgs {
    /// Instance JSON; a planted instance is generated when omitted.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[command(flatten)]
    gen: GenArgs,
    #[arg(long, default_value_t = 1e-10)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.1)]
    sample_epsilon: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Start at x* + radius·(random unit) when x* is known, else at 0.
    #[arg(long, default_value_t = 1e-3)]
    start_radius: f64,
    /// Also run gradient descent with step 1/λ_max(H(x0)) and write baseline_trace.csv.
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value_t = 10_000)]
    baseline_iters: usize,
    /// Fill step_seconds with wall-clock timings (output is then not reproducible).
    #[arg(long)]
    record_timing: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct LandscapeArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    #[command(flatten)]
    gen: GenArgs,
    /// Comma-separated center; defaults to x* when known, else 0.
    #[arg(long)]
    center: Option<String>,
    #[arg(long)]
    dir_u: Option<String>,
    #[arg(long)]
    dir_v: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    half_width: f64,
    #[arg(long, default_value_t = 21)]
    resolution: usize,
    /// Average the grid over this many generated instances (seed, seed+1, ...).
    #[arg(long)]
    avg_seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    instances: usize,
    /// Comma-separated subset of gradient,hessian,psd,sandwich,lipschitz,convergence; "all" or "" (none).
    #[arg(long, default_value = "all")]
    checks: String,
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
    /// Directory for verify.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NceArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 64)]
    pairs: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn parse_vector(text: &str) -> Result<Vector> {
    let vals = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("bad number {s:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Vector::from_vec(vals))
}

fn load_or_generate(path: Option<&Path>, gen: &GenArgs) -> Result<ProblemInstance> {
    match path {
        Some(p) => read_instance(File::open(p)?),
        None => Ok(generate_planted(&gen.spec())?.instance),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn run_gen(gen: &GenArgs, out: Option<&Path>) -> Result<ExitCode> {
    let planted = generate_planted(&gen.spec())?;
    let mut w = output(out)?;
    write_instance(&mut w, &planted.instance)?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run_solve(args: &SolveArgs) -> Result<ExitCode> {
    let inst = load_or_generate(args.instance.as_deref(), &args.gen)?;
    let x0 = match inst.x_star() {
        Some(xs) => perturbed_start(xs, args.start_radius, derive_seed(args.gen.seed, 1)),
        None => Vector::zeros(inst.d()),
    };
    let cfg = SolverConfig {
        epsilon: args.epsilon,
        delta: args.delta,
        mode: match args.mode {
            ModeArg::Exact => HessianMode::Exact,
            ModeArg::Sampled => HessianMode::Sampled,
        },
        sample_epsilon: args.sample_epsilon,
        max_iters: args.max_iters,
        seed: args.gen.seed,
        degenerate_fallback: false,
    };
    let trace = solve(&inst, &x0, &cfg)?;
    fs::create_dir_all(&args.out)?;
    let mut w = create(&args.out.join("trace.csv"))?;
    write_trace_csv(&mut w, &trace, args.record_timing)?;
    w.flush()?;
    let summary = RunSummary::from(&trace);
    let mut w = create(&args.out.join("summary.json"))?;
    write_summary(&mut w, &summary)?;
    w.flush()?;

    if args.baseline {
        let step = default_step_size(&inst, &x0)?;
        let gd =
            gradient_descent_baseline(&inst, &x0, step, args.baseline_iters, Some(args.epsilon))?;
        let mut w = create(&args.out.join("baseline_trace.csv"))?;
        write_trace_csv(&mut w, &gd, args.record_timing)?;
        w.flush()?;
        println!(
            "baseline: {} iterations, converged {}",
            gd.iterations_run, gd.converged
        );
    }
    println!(
        "newton: {} iterations, converged {}, final grad norm {:e}",
        summary.iters, summary.converged, summary.final_grad_norm
    );
    Ok(if trace.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn run_landscape(args: &LandscapeArgs) -> Result<ExitCode> {
    let instances: Vec<ProblemInstance> = match (args.avg_seeds, &args.instance) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidConfig(
                "--avg-seeds averages generated instances; drop --instance".into(),
            ))
        }
        (Some(k), None) => (0..k.max(1) as u64)
            .map(|i| {
                let mut gen = args.gen.clone();
                gen.seed = args.gen.seed.wrapping_add(i);
                Ok(generate_planted(&gen.spec())?.instance)
            })
            .collect::<Result<_>>()?,
        (None, path) => vec![load_or_generate(path.as_deref(), &args.gen)?],
    };
    let mut grids = Vec::with_capacity(instances.len());
    for inst in &instances {
        let center = match (&args.center, inst.x_star()) {
            (Some(c), _) => parse_vector(c)?,
            (None, Some(xs)) => xs.clone(),
            (None, None) => Vector::zeros(inst.d()),
        };
        let (du, dv) = match (&args.dir_u, &args.dir_v) {
            (Some(u), Some(v)) => (parse_vector(u)?, parse_vector(v)?),
            (None, None) => default_directions(inst)?,
            _ => return Err(Error::InvalidConfig("pass both --dir-u and --dir-v".into())),
        };
        grids.push(landscape(
            inst,
            &center,
            &du,
            &dv,
            args.half_width,
            args.resolution,
        )?);
    }
    let grid = average_grids(&grids)?;
    let mut w = output(args.out.as_deref())?;
    write_landscape_csv(&mut w, &grid)?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run_verify(args: &VerifyArgs) -> Result<ExitCode> {
    let opts = SuiteOptions {
        seed: args.seed,
        instances: args.instances,
        checks: parse_checks(&args.checks)?,
        corrupt_gradient: args.corrupt_gradient,
    };
    let report = run_suite(&opts)?;
    print!("{}", report.table());
    println!(
        "{} checks run, {} failed",
        report.rows.len(),
        report.rows.iter().filter(|r| !r.passed).count()
    );
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let mut w = create(&dir.join("verify.csv"))?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

#[derive(serde::Serialize)]
struct NceSummary {
    seeds: usize,
    k: usize,
    mean_correlated: f64,
    mean_shuffled: f64,
    margin: f64,
}

fn run_nce(args: &NceArgs) -> Result<ExitCode> {
    let exp = PairedExperiment {
        dim: args.dim,
        pairs: args.pairs,
        k: args.k,
        steps: args.steps,
        learning_rate: args.learning_rate,
        noise: args.noise,
    };
    fs::create_dir_all(&args.out)?;
    let mut csv = csv::Writer::from_writer(create(&args.out.join("nce_bounds.csv"))?);
    csv.write_record(["seed", "correlated_bound", "shuffled_bound"])?;
    let (mut sum_c, mut sum_s) = (0.0, 0.0);
    for i in 0..args.seeds {
        let seed = derive_seed(args.seed, i as u64);
        let out = exp.run(seed)?;
        sum_c += out.correlated;
        sum_s += out.shuffled;
        csv.write_record([
            seed.to_string(),
            out.correlated.to_string(),
            out.shuffled.to_string(),
        ])?;
    }
    csv.flush()?;
    let count = args.seeds.max(1) as f64;
    let summary = NceSummary {
        seeds: args.seeds,
        k: args.k,
        mean_correlated: sum_c / count,
        mean_shuffled: sum_s / count,
        margin: (sum_c - sum_s) / count,
    };
    let mut w = create(&args.out.join("nce_summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    println!(
        "mean correlated bound {:.6}, mean shuffled bound {:.6}",
        summary.mean_correlated, summary.mean_shuffled
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen { gen, out } => run_gen(gen, out.as_deref()),
        Command::Solve(args) => run_solve(args),
        Command::Landscape(args) => run_landscape(args),
        Command::Verify(args) => run_verify(args),
        Command::Nce(args) => run_nce(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
