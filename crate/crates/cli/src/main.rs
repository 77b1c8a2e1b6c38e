use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use plqid::estimator::spec::{identify, ProblemSpec};
use plqid::estimator::{estimate, IdentProblem, Loss};
use plqid::kernel::{build_phi, read_io_csv_file};
use plqid::sim::{default_estimators, run_monte_carlo, ExperimentSpec, Scenario};
use plqid::{KernelFamily, SolverOptions, StableSplineKernel};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "plqid", version, about = "Robust and constrained impulse-response identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate an impulse response from a (t, u, y) CSV file.
    Identify(IdentifyArgs),
    /// Run a seeded Monte Carlo study and write per-run and summary CSVs.
    Simulate(SimulateArgs),
    /// Measure solver time per iteration as m or n grows.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Clone)]
struct SolverFlags {
    #[arg(long, default_value_t = SolverOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = SolverOptions::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = SolverOptions::default().eta)]
    eta: f64,
    #[arg(long, default_value_t = SolverOptions::default().backtrack)]
    backtrack: f64,
    #[arg(long, default_value_t = SolverOptions::default().boundary_fraction)]
    boundary_fraction: f64,
    #[arg(long, default_value_t = SolverOptions::default().centering)]
    centering: f64,
}

impl SolverFlags {
    fn options(&self) -> Result<SolverOptions> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.tol > 0.0) || self.max_iters == 0 {
            bail!("tol must be positive and max-iters at least 1");
        }
        if !in_unit(self.eta) || !in_unit(self.backtrack) || !in_unit(self.boundary_fraction) || !(self.centering > 0.0 && self.centering <= 1.0) {
            bail!("eta, backtrack and boundary-fraction must lie in (0, 1), centering in (0, 1]");
        }
        Ok(SolverOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            eta: self.eta,
            backtrack: self.backtrack,
            boundary_fraction: self.boundary_fraction,
            centering: self.centering,
            ..SolverOptions::default()
        })
    }
}

#[derive(Args)]
struct IdentifyArgs {
    /// CSV with header and columns t, u, y; trailing rows may leave y empty.
    #[arg(long)]
    data: PathBuf,
    /// Problem specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Result file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write the solver iteration trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    /// Full experiment description (JSON); overrides --scenario.
    #[arg(long)]
    experiment: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    /// Defaults to 7, or to the seed in the experiment file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Use the original study sizes instead of desk-scale defaults.
    #[arg(long)]
    full_scale: bool,
    /// Leave the wall-clock column out so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scaling {
    M,
    N,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, value_enum)]
    scaling: Scaling,
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// The dimension held fixed (n when scaling m, m when scaling n).
    #[arg(long)]
    fixed: Option<usize>,
    /// Repetitions per size; the median time is reported.
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: plqid::Error| e.to_string())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Identify(a) => run_identify(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Benchmark(a) => run_benchmark(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

#[derive(Serialize)]
struct IdentifyFile<'a> {
    #[serde(flatten)]
    result: &'a plqid::estimator::spec::IdentifyOutput,
    /// Predicted output for every input row.
    prediction: Vec<f64>,
}

fn run_identify(a: IdentifyArgs) -> Result<()> {
    let opts = a.solver.options()?;
    let text = fs::read_to_string(&a.spec).with_context(|| format!("cannot read {}", a.spec.display()))?;
    let spec = ProblemSpec::from_json(&text).context("invalid problem specification")?;
    let rows = read_io_csv_file(&a.data).with_context(|| format!("cannot read {}", a.data.display()))?;
    let m = rows.iter().take_while(|r| r.y.is_some()).count();
    if rows[m..].iter().any(|r| r.y.is_some()) {
        bail!("rows with a missing y must come after all measured rows");
    }
    if m == 0 {
        bail!("no measured outputs in {}", a.data.display());
    }
    let u: Vec<f64> = rows.iter().map(|r| r.u).collect();
    let z = DVector::from_iterator(m, rows.iter().take(m).map(|r| r.y.unwrap()));
    let out = identify(&u, z, &spec, &opts)?;
    let phi = build_phi(&u, spec.n, u.len(), spec.delay)?;
    let prediction = (phi * DVector::from_vec(out.x.clone())).as_slice().to_vec();
    serde_json::to_writer_pretty(create(&a.out)?, &IdentifyFile { result: &out, prediction })?;
    if let Some(path) = &a.trace {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["iter", "mu", "residual_norm", "kkt_residual", "step"])?;
        for r in &out.trace {
            w.write_record([r.iter.to_string(), format!("{:e}", r.mu), format!("{:e}", r.residual_norm), format!("{:e}", r.kkt_residual), r.step.to_string()])?;
        }
        w.flush()?;
    }
    println!("status {:?}, {} iterations, objective {:.6e}", out.status, out.iterations, out.objective);
    if let Some(fit) = out.fit {
        println!("fit {fit:.2}");
    }
    Ok(())
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let opts = a.solver.options()?;
    let mut spec = match (&a.experiment, a.scenario) {
        (Some(path), _) => serde_json::from_str::<ExperimentSpec>(&fs::read_to_string(path)?)
            .with_context(|| format!("invalid experiment file {}", path.display()))?,
        (None, Some(s)) if a.full_scale => ExperimentSpec::full_scale(s, a.seed.unwrap_or(7)),
        (None, Some(s)) => ExperimentSpec::desk(s, a.seed.unwrap_or(7)),
        (None, None) => bail!("either --scenario or --experiment is required"),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(r) = a.runs {
        spec.runs = r;
    }
    if let Some(m) = a.m {
        spec.m = m;
    }
    if let Some(n) = a.n {
        spec.n = n;
    }
    spec.validate()?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let estimators = default_estimators(spec.scenario);
    let started = Instant::now();
    let table = run_monte_carlo(&spec, &estimators, &opts)?;
    table.write_csv(create(&a.out.join("runs.csv"))?, !a.no_timing)?;
    let summary = table.summary();
    let mut w = csv::Writer::from_writer(create(&a.out.join("summary.csv"))?);
    for s in &summary {
        w.serialize(s)?;
    }
    w.flush()?;
    serde_json::to_writer_pretty(create(&a.out.join("experiment.json"))?, &spec)?;
    for s in &summary {
        println!(
            "{:<16} median {:6.2}  mean {:6.2}  [{:6.2}, {:6.2}]  failures {}",
            s.estimator, s.median, s.mean, s.q25, s.q75, s.failures
        );
    }
    log::info!("simulation took {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    m: usize,
    n: usize,
    iterations: usize,
    seconds_per_iteration: f64,
}

fn run_benchmark(a: BenchmarkArgs) -> Result<()> {
    let opts = a.solver.options()?;
    if a.sizes.len() < 2 || a.reps == 0 {
        bail!("need at least two sizes and one repetition");
    }
    let mut rows = Vec::new();
    for &size in &a.sizes {
        let (m, n) = match a.scaling {
            Scaling::M => (size, a.fixed.unwrap_or(100)),
            Scaling::N => (a.fixed.unwrap_or(400), size),
        };
        let data = ExperimentSpec { m, n, ..ExperimentSpec::desk(Scenario::IntroOutliers, a.seed) }.generate(0)?;
        let kernel = StableSplineKernel::new(KernelFamily::Tc, 0.9)?;
        let problem = IdentProblem::new(data.model, kernel, Loss::L1, 1.0)?;
        let mut times = Vec::with_capacity(a.reps);
        let mut iterations = 0;
        for _ in 0..a.reps {
            let est = estimate(&problem, &opts)?;
            iterations = est.report.iterations;
            times.push(est.report.seconds_per_iteration());
        }
        let per_iter = plqid::sim::median(&times);
        eprintln!("m {m:5} n {n:4}: {iterations:3} iterations, {:.3e} s/iteration", per_iter);
        rows.push(BenchRow { m, n, iterations, seconds_per_iteration: per_iter });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (match a.scaling { Scaling::M => r.m, Scaling::N => r.n }) as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.seconds_per_iteration).collect();
    let slope = plqid::linalg::loglog_slope(&xs, &ys);
    let mut w = match &a.out {
        Some(path) => csv::Writer::from_writer(Box::new(create(path)?) as Box<dyn std::io::Write>),
        None => csv::Writer::from_writer(Box::new(std::io::stdout()) as Box<dyn std::io::Write>),
    };
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    eprintln!("log-log slope {slope:.3}");
    Ok(())
}
