//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 parity failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::autodiff::grad_source;
use crate::bench::{run_bench, Backend, BenchConfig, BenchWriter};
use crate::config::{Precision, Schedule, SinkhornConfig, TileConfig};
use crate::demo::{generate_problem, optimize_with, write_trajectory_csv, DemoConfig, HessianMode, TRAJECTORY_HEADER};
use crate::dense::DenseBackend;
use crate::error::{Error, Result};
use crate::io::{read_point_cloud, write_point_cloud, Dtype};
use crate::linalg::Matrix;
use crate::measure::{CostSpec, DiscreteMeasure};
use crate::otdd::{build_label_cost, otdd_distance};
use crate::parity::{hvp_error_grid, run_suite, DemoCheckConfig, SuiteConfig};
use crate::potentials::{shifts, unshift_potentials};
use crate::rng::Rng;
use crate::solver::{sinkhorn_divergence, sinkhorn_solve, SolveReport};
use crate::stream::IoLedger;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_PARITY: i32 = 3;

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "FSK_THREADS";

#[derive(Parser, Debug)]
#[command(name = "streamot", version, about = "Streaming entropic optimal transport")]
struct Cli {
    /// Worker threads for the kernels (falls back to FSK_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve entropic OT between two point clouds.
    #[command(allow_negative_numbers = true)]
    Solve(SolveArgs),
    /// Gradient of the transport cost with respect to the source points.
    #[command(allow_negative_numbers = true)]
    Grad(GradArgs),
    /// Debiased divergence, or the labeled dataset distance with --otdd.
    #[command(allow_negative_numbers = true)]
    Divergence(DivergenceArgs),
    /// Time and measure solves over a size grid; CSV on stdout.
    #[command(allow_negative_numbers = true)]
    Bench(BenchArgs),
    /// Run the self-check suite.
    Parity(ParityArgs),
    /// Shuffled linear regression with Adam/Newton switching.
    #[command(allow_negative_numbers = true)]
    ShuffledDemo(DemoArgs),
    /// Write a seeded point cloud.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScheduleArg {
    Alt,
    Sym,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Alt => Schedule::Alternating,
            ScheduleArg::Sym => Schedule::Symmetric,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::Single,
            PrecisionArg::F64 => Precision::Double,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Stream,
    Dense,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Stream => Backend::Stream,
            BackendArg::Dense => Backend::Dense,
        }
    }
}

/// Inputs shared by the commands that take two clouds.
#[derive(Args, Debug, Clone)]
struct PairArgs {
    /// Source cloud (.fsk binary or .csv); generated from --seed when absent.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Target cloud; generated from --seed when absent.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generated source size.
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Generated target size.
    #[arg(long, default_value_t = 256)]
    m: usize,
    /// Generated dimension.
    #[arg(long, default_value_t = 3)]
    d: usize,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Iteration cap, annealing included.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Marginal tolerance; 0 runs exactly --iters iterations.
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
    #[arg(long, value_enum, default_value = "alt")]
    schedule: ScheduleArg,
    /// Annealing factor in (0, 1]; 1 disables annealing.
    #[arg(long, default_value_t = 1.0)]
    eps_scale: f64,
    /// Iterations at the target eps after annealing.
    #[arg(long, default_value_t = 0)]
    extra_iters: usize,
    /// Row block size.
    #[arg(long, default_value_t = 64)]
    tile_bn: usize,
    /// Column block size.
    #[arg(long, default_value_t = 64)]
    tile_bm: usize,
    #[arg(long, value_enum, default_value = "f64")]
    precision: PrecisionArg,
}

impl SolverArgs {
    fn config(&self) -> SinkhornConfig {
        SinkhornConfig {
            eps: self.eps,
            schedule: self.schedule.into(),
            max_iters: self.iters,
            marginal_tol: self.tol,
            eps_scaling: self.eps_scale,
            extra_iters: self.extra_iters,
            precision: self.precision.into(),
        }
    }

    fn tiles(&self) -> Result<TileConfig> {
        TileConfig::new(self.tile_bn, self.tile_bm)
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value = "stream")]
    backend: BackendArg,
    /// Byte budget of the dense backend.
    #[arg(long)]
    dense_budget: Option<u64>,
    /// Write the (unshifted) potentials as CSV.
    #[arg(long)]
    potentials_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DivergenceArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Labeled dataset distance; both clouds must carry labels.
    #[arg(long)]
    otdd: bool,
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda2: f64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 2000, 4000])]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [16usize])]
    dims: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["stream", "dense"])]
    backends: Vec<BackendArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["alt"])]
    schedules: Vec<ScheduleArg>,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, value_enum, default_value = "f64")]
    precision: PrecisionArg,
    #[arg(long, default_value_t = 64)]
    tile_bn: usize,
    #[arg(long, default_value_t = 64)]
    tile_bm: usize,
    /// Simulated dense memory limit in bytes.
    #[arg(long, default_value_t = 256 << 20)]
    dense_budget: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write 0 in the timing column.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Debug)]
struct ParityArgs {
    /// Disable the online-LSE rescaling in the tiling check.
    #[arg(long)]
    break_lse: bool,
    /// Print the (tau, eta) HVP error grids.
    #[arg(long)]
    grid: bool,
    /// Run only these checks (1-10).
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<usize>>,
    /// Step cap of each shuffled-regression run.
    #[arg(long, default_value_t = 30)]
    demo_steps: usize,
    /// Number of shuffled-regression seeds.
    #[arg(long, default_value_t = 5)]
    demo_seeds: u64,
    #[arg(long, default_value_t = 2000)]
    demo_n: usize,
    /// Keep the trajectory CSV files here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HessianArg {
    Assembled,
    MatrixFree,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0.25)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise std relative to std(X W*).
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Keep the targets in their original order.
    #[arg(long)]
    no_permute: bool,
    /// Use W* = I and start near it.
    #[arg(long)]
    identity: bool,
    /// Feature scale.
    #[arg(long, default_value_t = 1.0)]
    x_scale: f64,
    #[arg(long, default_value_t = 200)]
    max_steps: usize,
    #[arg(long, value_enum, default_value = "assembled")]
    hessian: HessianArg,
    /// Trajectory CSV path; stdout when absent.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DistArg {
    Uniform,
    Normal,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "uniform")]
    dist: DistArg,
    /// Attach uniformly drawn labels from this many classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Element type of binary output.
    #[arg(long, value_enum, default_value = "f64")]
    dtype: PrecisionArg,
    /// Output path; `.csv` selects CSV, anything else the binary format.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Lib(Error),
    Parity,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e}");
        return EXIT_INVALID;
    }
    let res = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Grad(a) => cmd_grad(a),
        Command::Divergence(a) => cmd_divergence(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Parity(a) => cmd_parity(a),
        Command::ShuffledDemo(a) => cmd_shuffled_demo(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(Failure::Parity) => EXIT_PARITY,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(s) if !s.trim().is_empty() => Some(
                s.trim()
                    .parse()
                    .map_err(|_| Error::Validation(format!("{THREADS_ENV} must be a positive integer, got {s:?}")))?,
            ),
            _ => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Validation("thread count must be positive".into()));
        }
        // A pool may already exist when `run` is called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn load_pair(p: &PairArgs) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let mut rng = Rng::new(p.seed);
    let mut gen = |size: usize| DiscreteMeasure::uniform(rng.uniform_matrix(size, p.d));
    let src = match &p.source {
        Some(path) => read_point_cloud(path)?,
        None => gen(p.n)?,
    };
    let tgt = match &p.target {
        Some(path) => read_point_cloud(path)?,
        None => gen(p.m)?,
    };
    if src.dim() != tgt.dim() {
        return Err(Error::Validation(format!(
            "source has dimension {} but target has {}",
            src.dim(),
            tgt.dim()
        )));
    }
    Ok((src, tgt))
}

fn cmd_solve(a: SolveArgs) -> std::result::Result<(), Failure> {
    let (src, tgt) = load_pair(&a.pair)?;
    let cfg = a.solver.config();
    let tiles = a.solver.tiles()?;
    let cost = CostSpec::SquaredEuclidean;
    let ledger = IoLedger::new();
    let report: SolveReport = match a.backend {
        BackendArg::Stream => sinkhorn_solve(&src, &tgt, &cost, &cfg, &tiles, &ledger)?,
        BackendArg::Dense => DenseBackend::new(a.dense_budget).sinkhorn(&src, &tgt, &cost, &cfg)?,
    };
    let mut out = std::io::stdout().lock();
    writeln!(out, "backend: {}", Backend::from(a.backend).as_str())?;
    writeln!(out, "n: {} m: {} d: {}", src.len(), tgt.len(), src.dim())?;
    writeln!(out, "dual_cost: {:.17e}", report.dual_cost)?;
    writeln!(out, "iterations: {}", report.iterations)?;
    writeln!(out, "marginal_violation: {:.6e}", report.marginal_violation)?;
    writeln!(out, "converged: {}", report.converged)?;
    writeln!(out, "io_scalars: {}", ledger.snapshot().io_scalars())?;
    if let Some(path) = a.potentials_out {
        let (alpha, beta) = shifts(&src, &tgt, &cost)?;
        let (f, g) = unshift_potentials(&report.potentials, &alpha, &beta)?;
        let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
        w.write_record(["side", "index", "potential"]).map_err(Error::from)?;
        for (side, v) in [("f", &f), ("g", &g)] {
            for (i, x) in v.iter().enumerate() {
                w.write_record([side.to_string(), i.to_string(), format!("{x:e}")])
                    .map_err(Error::from)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn write_matrix_csv<W: Write>(m: &Matrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..m.cols()).map(|t| format!("g{t}")))?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_grad(a: GradArgs) -> std::result::Result<(), Failure> {
    let (src, tgt) = load_pair(&a.pair)?;
    let cfg = a.solver.config();
    let tiles = a.solver.tiles()?;
    let cost = CostSpec::SquaredEuclidean;
    let ledger = IoLedger::new();
    let rep = sinkhorn_solve(&src, &tgt, &cost, &cfg, &tiles, &ledger)?;
    let g = grad_source(&src, &tgt, &rep.potentials, &cost, &tiles, &ledger)?;
    match a.out {
        Some(path) => write_matrix_csv(&g, std::fs::File::create(path)?)?,
        None => write_matrix_csv(&g, std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_divergence(a: DivergenceArgs) -> std::result::Result<(), Failure> {
    let (src, tgt) = load_pair(&a.pair)?;
    let cfg = a.solver.config();
    let tiles = a.solver.tiles()?;
    let ledger = IoLedger::new();
    let value = if a.otdd {
        let w = build_label_cost(&src, &tgt, &cfg, &tiles)?;
        otdd_distance(&src, &tgt, &w, a.lambda1, a.lambda2, &cfg, &tiles, &ledger)?
    } else {
        sinkhorn_divergence(&src, &tgt, &CostSpec::SquaredEuclidean, &cfg, &tiles, &ledger)?
    };
    println!("divergence: {value:.17e}");
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> std::result::Result<(), Failure> {
    let cfg = BenchConfig {
        sizes: a.sizes,
        dims: a.dims,
        backends: a.backends.into_iter().map(Backend::from).collect(),
        schedules: a.schedules.into_iter().map(Schedule::from).collect(),
        eps: a.eps,
        iters: a.iters,
        precision: a.precision.into(),
        tiles: TileConfig::new(a.tile_bn, a.tile_bm)?,
        dense_budget: Some(a.dense_budget),
        seed: a.seed,
        deterministic: a.deterministic,
    };
    let mut w = BenchWriter::new(std::io::stdout().lock())?;
    run_bench(&cfg, |rec| w.write(rec))?;
    Ok(())
}

fn cmd_parity(a: ParityArgs) -> std::result::Result<(), Failure> {
    if let Some(only) = &a.only {
        if let Some(bad) = only.iter().find(|&&i| i == 0 || i > 10) {
            return Err(Error::Validation(format!("no check with id {bad}")).into());
        }
    }
    let cfg = SuiteConfig {
        break_lse: a.break_lse,
        only: a.only,
        demo: DemoCheckConfig {
            seeds: (0..a.demo_seeds).collect(),
            n: a.demo_n,
            max_steps: a.demo_steps,
            out_dir: a.out_dir,
            ..Default::default()
        },
    };
    let results = run_suite(&cfg, |o| println!("{o}"));
    if a.grid {
        for eps in [0.1, 0.25, 0.5] {
            print!("{}", hvp_error_grid(eps)?.render());
        }
    }
    let failed = results.iter().filter(|o| !o.passed).count();
    println!("{} passed, {} failed", results.len() - failed, failed);
    if failed > 0 {
        Err(Failure::Parity)
    } else {
        Ok(())
    }
}

fn cmd_shuffled_demo(a: DemoArgs) -> std::result::Result<(), Failure> {
    let cfg = DemoConfig {
        n: a.n,
        d: a.d,
        eps: a.eps,
        seed: a.seed,
        noise: a.noise,
        permute: !a.no_permute,
        identity_target: a.identity,
        x_scale: a.x_scale,
        init_scale: if a.identity { 0.05 } else { DemoConfig::default().init_scale },
        max_steps: a.max_steps,
        hessian: match a.hessian {
            HessianArg::Assembled => HessianMode::Assembled,
            HessianArg::MatrixFree => HessianMode::MatrixFree,
        },
        ..Default::default()
    };
    let problem = generate_problem(&cfg)?;
    let to_stdout = a.trajectory.is_none();
    if to_stdout {
        println!("{}", TRAJECTORY_HEADER.join(","));
    }
    let result = optimize_with(&problem, &cfg, |row| {
        if to_stdout {
            let mut buf = Vec::new();
            if write_trajectory_csv(std::slice::from_ref(row), &mut buf).is_ok() {
                let text = String::from_utf8_lossy(&buf);
                print!("{}", text.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
            }
        }
    });
    let (trajectory, outcome) = match result {
        Ok(o) => (o.trajectory.clone(), Ok(o)),
        Err(f) => (f.trajectory, Err(f.error)),
    };
    if let Some(path) = &a.trajectory {
        write_trajectory_csv(&trajectory, std::fs::File::create(path)?)?;
    }
    let o = outcome?;
    let summary = format!(
        "stop: {}\nsteps: {}\nW_hat:\n{}W_star:\n{}error_fro: {:.6e}\n",
        o.stop.as_str(),
        o.trajectory.len(),
        render_matrix(&o.w_hat),
        render_matrix(&o.w_star),
        o.w_hat.add_scaled(-1.0, &o.w_star)?.frobenius_norm()
    );
    if to_stdout {
        eprint!("{summary}");
    } else {
        print!("{summary}");
    }
    Ok(())
}

fn render_matrix(m: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:>11.6}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

fn cmd_generate(a: GenerateArgs) -> std::result::Result<(), Failure> {
    if a.n == 0 || a.d == 0 {
        return Err(Error::Validation("n and d must be positive".into()).into());
    }
    let mut rng = Rng::new(a.seed);
    let x = match a.dist {
        DistArg::Uniform => rng.uniform_matrix(a.n, a.d),
        DistArg::Normal => rng.normal_matrix(a.n, a.d, 1.0),
    };
    let m = match a.classes {
        Some(0) => return Err(Error::Validation("classes must be positive".into()).into()),
        Some(k) => {
            let labels = (0..a.n).map(|_| rng.below(k) as u32).collect();
            DiscreteMeasure::uniform_labeled(x, labels)?
        }
        None => DiscreteMeasure::uniform(x)?,
    };
    let dtype = match a.dtype {
        PrecisionArg::F32 => Dtype::F32,
        PrecisionArg::F64 => Dtype::F64,
    };
    write_point_cloud(&m, &a.out, dtype)?;
    Ok(())
}
