//! Self-checks of the library against dense references, closed forms and identities.
//!
//! Each check builds its own seeded instance and reports a pass flag with the
//! measured quantities. [`run_suite`] runs them in order.

use std::time::Instant;

use crate::alloc_track;
use crate::autodiff::{grad_source, grad_target};
use crate::bench::{bench_instance, bench_one, log_log_slope, Backend};
use crate::config::{Schedule, SinkhornConfig, TileConfig};
use crate::demo::{
    audit_trajectory, optimize, generate_problem, read_trajectory_csv, write_trajectory_csv, DemoConfig,
};
use crate::dense::{dense_hessian, dense_hvp, dense_plan, dense_sinkhorn, DenseBackend, DEFAULT_PINV_THRESHOLD};
use crate::error::Result;
use crate::hvp::{hvp_apply, schur_apply, HvpConfig, HvpWorkspace};
use crate::linalg::{dot, Matrix};
use crate::measure::{CostSpec, DiscreteMeasure, LabelTable};
use crate::otdd::{build_label_cost, otdd_distance};
use crate::potentials::ShiftedPotentials;
use crate::rng::Rng;
use crate::solver::{sinkhorn_divergence, sinkhorn_solve};
use crate::stream::{
    apply_hadamard_transport, apply_plan, apply_plan_adjoint, induced_marginals, io_f_update, symmetric_update,
    update_f_hat, update_g_hat, IoLedger,
};

/// Result of one check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    /// Measured quantities, one `key=value` item per fact.
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<28} {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

/// Settings of the shuffled-regression check.
#[derive(Clone, Debug)]
pub struct DemoCheckConfig {
    pub seeds: Vec<u64>,
    pub n: usize,
    pub eps: f64,
    pub max_steps: usize,
    /// Feature scale of the `W* = I` run.
    pub identity_x_scale: f64,
    /// Directory for the trajectory CSV files; kept in memory when `None`.
    pub out_dir: Option<std::path::PathBuf>,
}

impl Default for DemoCheckConfig {
    fn default() -> Self {
        DemoCheckConfig {
            seeds: (0..5).collect(),
            n: 2000,
            eps: 0.25,
            max_steps: 30,
            identity_x_scale: 4.0,
            out_dir: None,
        }
    }
}

/// Which checks to run and how.
#[derive(Clone, Debug, Default)]
pub struct SuiteConfig {
    /// Run the tiling check with the online-LSE rescaling disabled.
    pub break_lse: bool,
    /// Restrict to these check ids.
    pub only: Option<Vec<usize>>,
    pub demo: DemoCheckConfig,
}

pub const CHECK_NAMES: [&str; 10] = [
    "stream-dense potentials",
    "tiling invariance",
    "gradient finite differences",
    "hvp parity",
    "hvp operation count",
    "io ledger closed form",
    "marginal feasibility",
    "memory scaling",
    "divergence identities",
    "shuffled regression",
];

/// Runs the selected checks in order, calling `report` after each.
pub fn run_suite(cfg: &SuiteConfig, mut report: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for id in 1..=CHECK_NAMES.len() {
        if let Some(only) = &cfg.only {
            if !only.contains(&id) {
                continue;
            }
        }
        let start = Instant::now();
        let res = match id {
            1 => check_stream_dense(),
            2 => check_tiling(cfg.break_lse),
            3 => check_gradient_fd(),
            4 => check_hvp_parity(),
            5 => check_hvp_count(),
            6 => check_io_ledger(),
            7 => check_feasibility(),
            8 => check_memory_scaling(),
            9 => check_divergences(),
            _ => check_shuffled_demo(&cfg.demo),
        };
        let (passed, detail) = match res {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let o = CheckOutcome {
            id,
            name: CHECK_NAMES[id - 1],
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        };
        report(&o);
        out.push(o);
    }
    out
}

type Check = Result<(bool, String)>;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `‖a - b‖₂ / ‖b‖₂` (absolute when `b = 0`).
pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

fn uniform_pair(seed: u64, n: usize, m: usize, d: usize, simplex: bool) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let mut rng = Rng::new(seed);
    let x = rng.uniform_matrix(n, d);
    let y = rng.uniform_matrix(m, d);
    if simplex {
        let a = rng.simplex(n);
        let b = rng.simplex(m);
        Ok((DiscreteMeasure::new(x, a, None)?, DiscreteMeasure::new(y, b, None)?))
    } else {
        Ok((DiscreteMeasure::uniform(x)?, DiscreteMeasure::uniform(y)?))
    }
}

fn converged(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &CostSpec,
    eps: f64,
    tol: f64,
) -> Result<crate::solver::SolveReport> {
    let cfg = SinkhornConfig {
        eps,
        marginal_tol: tol,
        max_iters: 200_000,
        eps_scaling: 0.9,
        extra_iters: 200_000,
        ..Default::default()
    };
    sinkhorn_solve(src, tgt, cost, &cfg, &TileConfig::default(), &IoLedger::new())
}

/// Streaming and dense potentials after 50 alternating iterations, `d ∈ {2, 8, 32}`.
pub fn check_stream_dense() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let cost = CostSpec::SquaredEuclidean;
    let cfg = SinkhornConfig {
        eps: 0.1,
        max_iters: 50,
        ..Default::default()
    };
    for (k, d) in [2usize, 8, 32].into_iter().enumerate() {
        let (x, y) = uniform_pair(100 + k as u64, 256, 256, d, false)?;
        let s = sinkhorn_solve(&x, &y, &cost, &cfg, &TileConfig::default(), &IoLedger::new())?;
        let r = dense_sinkhorn(&x, &y, &cost, &cfg)?;
        let ef = max_abs_diff(s.potentials.f_hat(), r.potentials.f_hat()) / (1.0 + max_abs(r.potentials.f_hat()));
        let eg = max_abs_diff(s.potentials.g_hat(), r.potentials.g_hat()) / (1.0 + max_abs(r.potentials.g_hat()));
        worst = worst.max(ef).max(eg);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-9 && secs <= 10.0,
        format!("max_scaled_err={worst:.2e} (tol 1e-9) time={secs:.2}s (limit 10s)"),
    ))
}

/// Every streaming operation on a grid of tile shapes against the single-tile result.
pub fn check_tiling(break_lse: bool) -> Check {
    let (n, m, d) = (37usize, 29usize, 3usize);
    let mut rng = Rng::new(7);
    let x = rng.uniform_matrix(n, d);
    let y = rng.uniform_matrix(m, d);
    let lx: Vec<u32> = (0..n).map(|_| rng.below(3) as u32).collect();
    let ly: Vec<u32> = (0..m).map(|_| rng.below(3) as u32).collect();
    let src = DiscreteMeasure::new(x, rng.simplex(n), Some(lx))?;
    let tgt = DiscreteMeasure::new(y, rng.simplex(m), Some(ly))?;
    let mut table = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                table[i * 3 + j] = 0.5 + (i + j) as f64 * 0.25;
            }
        }
    }
    let costs = [
        CostSpec::SquaredEuclidean,
        CostSpec::LabelAugmented {
            lambda1: 0.7,
            lambda2: 0.4,
            table: LabelTable::new(3, table)?,
        },
    ];
    let eps = 0.05;
    let v = rng.normal_matrix(m, 3, 1.0);
    let u = rng.normal_matrix(n, 3, 1.0);
    let ha = rng.normal_matrix(n, 2, 1.0);
    let hb = rng.normal_matrix(m, 2, 1.0);
    let ledger = IoLedger::new();
    let single = TileConfig::new(n, m)?;

    let mut worst = 0.0f64;
    for cost in &costs {
        let warm = SinkhornConfig {
            eps,
            max_iters: 5,
            ..Default::default()
        };
        let p = sinkhorn_solve(&src, &tgt, cost, &warm, &single, &ledger)?.potentials;
        let run = |t: &TileConfig| -> Result<Vec<Vec<f64>>> {
            let sym = symmetric_update(&src, &tgt, &p, cost, t, &ledger)?;
            let (r, c) = induced_marginals(&src, &tgt, &p, cost, t, &ledger)?;
            Ok(vec![
                update_f_hat(&src, &tgt, p.g_hat(), cost, eps, t, &ledger)?,
                update_g_hat(&src, &tgt, p.f_hat(), cost, eps, t, &ledger)?,
                [sym.f_hat(), sym.g_hat()].concat(),
                [r, c].concat(),
                apply_plan(&src, &tgt, &p, &v, cost, t, &ledger)?.into_vec(),
                apply_plan_adjoint(&src, &tgt, &p, &u, cost, t, &ledger)?.into_vec(),
                apply_hadamard_transport(&src, &tgt, &p, &ha, &hb, &v, cost, t, &ledger)?.into_vec(),
            ])
        };
        let reference = run(&single)?;
        for bm in [1usize, 2, 7, m] {
            for bn in [1usize, 5, n] {
                let mut t = TileConfig::new(bn, bm)?;
                if break_lse {
                    t = t.with_broken_lse_rescaling();
                }
                for (got, want) in run(&t)?.iter().zip(&reference) {
                    worst = worst.max(rel_l2(got, want));
                }
            }
        }
    }
    Ok((
        worst <= 1e-12,
        format!(
            "max_rel_err={worst:.2e} (tol 1e-12) over 7 ops x 12 tilings x 2 costs{}",
            if break_lse { " [lse rescaling disabled]" } else { "" }
        ),
    ))
}

/// Analytic source and target gradients against central differences of the converged cost.
pub fn check_gradient_fd() -> Check {
    let (src, tgt) = uniform_pair(11, 16, 16, 3, true)?;
    let cost = CostSpec::SquaredEuclidean;
    let (eps, tol, h) = (0.1, 1e-14, 1e-5);
    let tiles = TileConfig::default();
    let ledger = IoLedger::new();
    let base = converged(&src, &tgt, &cost, eps, tol)?;
    let gs = grad_source(&src, &tgt, &base.potentials, &cost, &tiles, &ledger)?;
    let gt = grad_target(&src, &tgt, &base.potentials, &cost, &tiles, &ledger)?;
    let value = |x: &DiscreteMeasure, y: &DiscreteMeasure| converged(x, y, &cost, eps, tol).map(|r| r.dual_cost);

    let mut worst = 0.0f64;
    for (which, g) in [(0, &gs), (1, &gt)] {
        let base_m = if which == 0 { &src } else { &tgt };
        for i in 0..base_m.len() {
            for t in 0..base_m.dim() {
                let mut plus = base_m.points().clone();
                let mut minus = base_m.points().clone();
                plus.set(i, t, plus.get(i, t) + h);
                minus.set(i, t, minus.get(i, t) - h);
                let (mp, mm) = (base_m.with_points(plus)?, base_m.with_points(minus)?);
                let (vp, vm) = if which == 0 {
                    (value(&mp, &tgt)?, value(&mm, &tgt)?)
                } else {
                    (value(&src, &mp)?, value(&src, &mm)?)
                };
                let fd = (vp - vm) / (2.0 * h);
                let an = g.get(i, t);
                worst = worst.max((fd - an).abs() / an.abs());
            }
        }
    }
    Ok((
        worst <= 1e-5,
        format!("max_elementwise_rel_err={worst:.2e} (tol 1e-5) n=m=16 d=3 h=1e-5"),
    ))
}

/// Relative errors of the streamed HVP against the dense pseudoinverse HVP.
#[derive(Clone, Debug)]
pub struct HvpGrid {
    pub eps: f64,
    pub taus: [f64; 3],
    pub etas: [f64; 3],
    /// `errors[i][j]` at `taus[i]`, `etas[j]`.
    pub errors: [[f64; 3]; 3],
    pub cg_iterations: [[usize; 3]; 3],
}

impl HvpGrid {
    /// Table layout: one row per damping, one column per CG tolerance.
    pub fn render(&self) -> String {
        let mut s = format!("eps = {}\n{:>10}", self.eps, "tau \\ eta");
        for e in self.etas {
            s.push_str(&format!("{e:>12.0e}"));
        }
        s.push('\n');
        for (i, t) in self.taus.iter().enumerate() {
            s.push_str(&format!("{t:>10.0e}"));
            for j in 0..3 {
                s.push_str(&format!("{:>12.2e}", self.errors[i][j]));
            }
            s.push('\n');
        }
        s
    }

    /// Whether the error never grows as `τ` or `η` shrinks, up to `slack` relative.
    pub fn monotone(&self, slack: f64) -> bool {
        let e = &self.errors;
        (0..3).all(|i| (0..2).all(|j| e[i][j + 1] <= e[i][j] * (1.0 + slack)))
            && (0..3).all(|j| (0..2).all(|i| e[i + 1][j] <= e[i][j] * (1.0 + slack)))
    }
}

/// The seeded `n = m = 128`, `d = 4` instance with random simplex weights.
pub fn hvp_instance(seed: u64) -> Result<(DiscreteMeasure, DiscreteMeasure, Matrix)> {
    let mut rng = Rng::new(seed);
    let (n, d) = (128, 4);
    let x = rng.normal_matrix(n, d, 1.0);
    let y = rng.normal_matrix(n, d, 1.0);
    let a = rng.simplex(n);
    let b = rng.simplex(n);
    let dir = rng.normal_matrix(n, d, 1.0);
    Ok((DiscreteMeasure::new(x, a, None)?, DiscreteMeasure::new(y, b, None)?, dir))
}

/// The `(τ, η)` error grid at one `ε`.
pub fn hvp_error_grid(eps: f64) -> Result<HvpGrid> {
    let (src, tgt, dir) = hvp_instance(21)?;
    let cost = CostSpec::SquaredEuclidean;
    let sol = converged(&src, &tgt, &cost, eps, 1e-11)?;
    let plan = dense_plan(&src, &tgt, &sol.potentials, &cost)?;
    let dense = dense_hessian(&src, &tgt, &plan, eps, DEFAULT_PINV_THRESHOLD)?;
    let want = dense_hvp(&dense, &dir)?;
    let tiles = TileConfig::default();
    let ledger = IoLedger::new();
    let ws = HvpWorkspace::build(&src, &tgt, &sol.potentials, &tiles, &ledger)?;
    let taus = [1e-5, 1e-6, 1e-7];
    let etas = [1e-5, 1e-6, 1e-7];
    let mut errors = [[0.0; 3]; 3];
    let mut cg_iterations = [[0; 3]; 3];
    for (i, &tau) in taus.iter().enumerate() {
        for (j, &eta) in etas.iter().enumerate() {
            let cfg = HvpConfig {
                tau,
                cg_tol: eta,
                cg_max_iters: 100_000,
            };
            let got = hvp_apply(&src, &tgt, &ws, &dir, &cfg, &tiles, &ledger)?;
            errors[i][j] = rel_l2(got.value.as_slice(), want.as_slice());
            cg_iterations[i][j] = got.cg_iterations;
        }
    }
    Ok(HvpGrid {
        eps,
        taus,
        etas,
        errors,
        cg_iterations,
    })
}

/// Slack allowed when checking that the grid error is monotone: once the damping
/// floor is reached, tightening `η` further leaves the error flat up to rounding.
pub const GRID_MONOTONE_SLACK: f64 = 1e-3;

/// HVP parity across `ε ∈ {0.1, 0.25, 0.5}`.
pub fn check_hvp_parity() -> Check {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for eps in [0.1, 0.25, 0.5] {
        let g = hvp_error_grid(eps)?;
        let tight = g.errors[2][2];
        let default = g.errors[0][1];
        let mono = g.monotone(GRID_MONOTONE_SLACK);
        ok &= tight <= 1e-3 && default <= 2e-2 && mono;
        parts.push(format!("eps={eps}: tight={tight:.2e} default={default:.2e} monotone={mono}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 60.0;
    Ok((ok, format!("{} time={secs:.1}s (limits 1e-3, 2e-2, 60s)", parts.join("; "))))
}

/// Ledger counts of one HVP: `2K+3` transport–vector, 3 transport–matrix, 1 Hadamard.
pub fn check_hvp_count() -> Check {
    let (src, tgt) = uniform_pair(31, 40, 30, 3, true)?;
    let sol = converged(&src, &tgt, &CostSpec::SquaredEuclidean, 0.2, 1e-10)?;
    let tiles = TileConfig::new(16, 8)?;
    let ledger = IoLedger::new();
    let a = Rng::new(32).normal_matrix(40, 3, 1.0);
    let cfg = HvpConfig::default();
    let t0 = ledger.snapshot();
    let ws = HvpWorkspace::build(&src, &tgt, &sol.potentials, &tiles, &ledger)?;
    let r = hvp_apply(&src, &tgt, &ws, &a, &cfg, &tiles, &ledger)?;
    let t1 = ledger.snapshot();
    let first = t1.since(&t0);
    let k = r.cg_iterations as u64;
    let ok1 = first.transport_vector == 2 * k + 3 && first.transport_matrix == 3 && first.hadamard_transport == 1;
    let r2 = hvp_apply(&src, &tgt, &ws, &a, &cfg, &tiles, &ledger)?;
    let second = ledger.snapshot().since(&t1);
    let k2 = r2.cg_iterations as u64;
    let ok2 = second.transport_vector == 2 * k2 + 3
        && second.transport_matrix == 2
        && second.cached_reuses == 1
        && second.hadamard_transport == 1;
    Ok((
        ok1 && ok2,
        format!(
            "K={k} TV={} TM={} H={}; cached apply TM={} reuse={}",
            first.transport_vector,
            first.transport_matrix,
            first.hadamard_transport,
            second.transport_matrix,
            second.cached_reuses
        ),
    ))
}

/// Measured traffic of one `f̂` update against the closed form.
pub fn check_io_ledger() -> Check {
    let grid = [
        (64usize, 64usize, 16usize, 16usize, 4usize),
        (100, 37, 7, 5, 3),
        (1, 9, 4, 2, 2),
        (50, 50, 50, 50, 8),
        (33, 65, 8, 64, 5),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, &(n, m, bn, bm, d)) in grid.iter().enumerate() {
        let (src, tgt) = uniform_pair(40 + k as u64, n, m, d, false)?;
        let tiles = TileConfig::new(bn, bm)?;
        let ledger = IoLedger::new();
        let g = vec![0.0; m];
        update_f_hat(&src, &tgt, &g, &CostSpec::SquaredEuclidean, 0.1, &tiles, &ledger)?;
        let measured = ledger.snapshot().io_scalars();
        let formula = io_f_update(n, m, d, &tiles, false);
        let mut good = measured == formula;
        if n % bn == 0 {
            let divisible = (n * d + (n / bn) * m * (d + 2) + n) as u64;
            good &= measured == divisible;
        }
        ok &= good;
        parts.push(format!("({n},{m},{bn},{bm},{d}):{measured}{}", if good { "" } else { "!" }));
    }
    Ok((ok, parts.join(" ")))
}

/// Converged marginals, the Schur null vector and damped positivity.
pub fn check_feasibility() -> Check {
    let (src, tgt) = uniform_pair(51, 64, 48, 3, true)?;
    let sol = converged(&src, &tgt, &CostSpec::SquaredEuclidean, 0.1, 1e-9)?;
    let viol = sol.marginal_violation;
    let tiles = TileConfig::default();
    let ledger = IoLedger::new();
    let ws = HvpWorkspace::build(&src, &tgt, &sol.potentials, &tiles, &ledger)?;
    let null = schur_apply(&src, &tgt, &ws, &vec![1.0; tgt.len()], 0.0, &tiles, &ledger)?;
    let null_norm = max_abs(&null);
    let tau = 1e-5;
    let mut rng = Rng::new(52);
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let v: Vec<f64> = (0..tgt.len()).map(|_| rng.normal()).collect();
        let sv = schur_apply(&src, &tgt, &ws, &v, tau, &tiles, &ledger)?;
        worst = worst.min(dot(&v, &sv) - tau * dot(&v, &v));
    }
    Ok((
        viol <= 1e-8 && null_norm <= 1e-8 && worst >= -1e-8,
        format!("violation={viol:.2e} |S1|inf={null_norm:.2e} min(vSv-tau|v|^2)={worst:.2e}"),
    ))
}

/// Peak heap of stream and dense solves on a size ladder at `d = 64`.
pub fn check_memory_scaling() -> Check {
    if !alloc_track::is_active() {
        return Ok((false, "allocation tracking is not installed in this process".into()));
    }
    let ladder = [1000usize, 2000, 4000, 8000];
    let d = 64;
    let budget = 256u64 << 20;
    let cfg = SinkhornConfig {
        eps: 0.1,
        max_iters: 1,
        schedule: Schedule::Alternating,
        ..Default::default()
    };
    let tiles = TileConfig::default();
    let mut stream_peaks = Vec::new();
    let mut dense_sizes = Vec::new();
    let mut dense_peaks = Vec::new();
    let mut refused = Vec::new();
    for &n in &ladder {
        let (x, y) = bench_instance(n, n, d, 61)?;
        let s = bench_one(Backend::Stream, &x, &y, &cfg, &tiles, Some(budget))?;
        stream_peaks.push(s.map_or(0, |r| r.peak_bytes) as f64);
        match bench_one(Backend::Dense, &x, &y, &cfg, &tiles, Some(budget))? {
            Some(r) => {
                dense_sizes.push(n as f64);
                dense_peaks.push(r.peak_bytes as f64);
            }
            None => refused.push(n),
        }
    }
    let ns: Vec<f64> = ladder.iter().map(|&n| n as f64).collect();
    let stream_slope = log_log_slope(&ns, &stream_peaks);
    let dense_slope = if dense_sizes.len() >= 2 {
        log_log_slope(&dense_sizes, &dense_peaks)
    } else {
        f64::NAN
    };
    let expected_refused: Vec<usize> = ladder
        .iter()
        .copied()
        .filter(|&n| DenseBackend::required_bytes(n, n) > budget)
        .collect();
    let ok = stream_slope <= 1.1 && dense_slope >= 1.8 && refused == expected_refused && !refused.is_empty();
    Ok((
        ok,
        format!(
            "stream_slope={stream_slope:.3} (<=1.1) dense_slope={dense_slope:.3} (>=1.8) dense_refused={refused:?} budget=256MiB"
        ),
    ))
}

/// Divergence self-distance and symmetry, OTDD self-distance, label-cost block shape.
pub fn check_divergences() -> Check {
    let cost = CostSpec::SquaredEuclidean;
    let tiles = TileConfig::default();
    let ledger = IoLedger::new();
    let cfg = SinkhornConfig {
        eps: 0.1,
        marginal_tol: 1e-12,
        max_iters: 100_000,
        ..Default::default()
    };
    let (mu, nu) = uniform_pair(71, 40, 30, 2, true)?;
    let self_div = sinkhorn_divergence(&mu, &mu, &cost, &cfg, &tiles, &ledger)?;
    let s_mn = sinkhorn_divergence(&mu, &nu, &cost, &cfg, &tiles, &ledger)?;
    let s_nm = sinkhorn_divergence(&nu, &mu, &cost, &cfg, &tiles, &ledger)?;
    let asym = (s_mn - s_nm).abs();

    let mut rng = Rng::new(72);
    let classes = 10;
    let per = 6;
    let labeled = |rng: &mut Rng| -> Result<DiscreteMeasure> {
        let mut x = rng.normal_matrix(classes * per, 2, 0.3);
        let mut labels = Vec::new();
        for c in 0..classes {
            for k in 0..per {
                let i = c * per + k;
                x.set(i, 0, x.get(i, 0) + c as f64);
                labels.push(c as u32);
            }
        }
        DiscreteMeasure::uniform_labeled(x, labels)
    };
    let d1 = labeled(&mut rng)?;
    let d2 = labeled(&mut rng)?;
    let inner = SinkhornConfig {
        eps: 0.1,
        marginal_tol: 1e-10,
        max_iters: 10_000,
        ..Default::default()
    };
    let w = build_label_cost(&d1, &d2, &inner, &tiles)?;
    let shape = (w.entries().rows(), w.entries().cols());
    let w_self = build_label_cost(&d1, &d1, &inner, &tiles)?;
    let otdd_self = otdd_distance(&d1, &d1, &w_self, 1.0, 1.0, &cfg, &tiles, &ledger)?;
    Ok((
        self_div.abs() <= 1e-8 && asym <= 1e-8 && otdd_self.abs() <= 1e-7 && shape == (20, 20),
        format!(
            "S(mu,mu)={self_div:.1e} |S(mu,nu)-S(nu,mu)|={asym:.1e} otdd_self={otdd_self:.1e} W={}x{}",
            shape.0, shape.1
        ),
    ))
}

/// Shuffled-regression runs audited from their trajectory CSV.
pub fn check_shuffled_demo(cfg: &DemoCheckConfig) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut newton_total = 0;
    let mut record = |tag: String, demo: &DemoConfig| -> Result<(bool, Matrix, Matrix)> {
        let problem = generate_problem(demo)?;
        let outcome = optimize(&problem, demo).map_err(|f| f.error)?;
        let mut buf = Vec::new();
        write_trajectory_csv(&outcome.trajectory, &mut buf)?;
        if let Some(dir) = &cfg.out_dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("trajectory_{tag}.csv")), &buf)?;
        }
        let rows = read_trajectory_csv(&buf[..])?;
        let audit = audit_trajectory(&rows, demo.check_every, demo.switch_threshold);
        newton_total += audit.newton_steps;
        parts.push(format!(
            "{tag}: steps={} newton={} stop={}{}",
            rows.len(),
            audit.newton_steps,
            outcome.stop.as_str(),
            if audit.ok() { "" } else { " AUDIT FAILED" }
        ));
        Ok((audit.ok(), outcome.w_hat, outcome.w_star))
    };
    let base = DemoConfig {
        n: cfg.n,
        eps: cfg.eps,
        max_steps: cfg.max_steps,
        ..Default::default()
    };
    for &seed in &cfg.seeds {
        let (good, _, _) = record(format!("seed{seed}"), &DemoConfig { seed, ..base.clone() })?;
        ok &= good;
    }
    let identity = DemoConfig {
        identity_target: true,
        noise: 0.0,
        permute: false,
        x_scale: cfg.identity_x_scale,
        init_scale: 0.05,
        ..base
    };
    let (good, w_hat, w_star) = record("identity".into(), &identity)?;
    let err = w_hat.add_scaled(-1.0, &w_star)?.frobenius_norm();
    ok &= good && err <= 1e-2;
    Ok((
        ok,
        format!("{}; |W-I|_F={err:.2e} (tol 1e-2); newton steps audited={newton_total}", parts.join("; ")),
    ))
}

/// Potentials of a short solve, for callers needing a partially converged state.
pub fn partial_potentials(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &CostSpec,
    eps: f64,
    iters: usize,
) -> Result<ShiftedPotentials> {
    let cfg = SinkhornConfig {
        eps,
        max_iters: iters,
        ..Default::default()
    };
    Ok(sinkhorn_solve(src, tgt, cost, &cfg, &TileConfig::default(), &IoLedger::new())?.potentials)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_l2_basics() {
        assert_eq!(rel_l2(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((rel_l2(&[0.0, 0.0], &[3.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(rel_l2(&[3.0, 4.0], &[0.0, 0.0]), 5.0);
    }

    #[test]
    fn grid_monotonicity_rule() {
        let mut g = HvpGrid {
            eps: 0.1,
            taus: [1e-5, 1e-6, 1e-7],
            etas: [1e-5, 1e-6, 1e-7],
            errors: [[3.0, 2.0, 1.0], [2.0, 1.0, 0.5], [1.0, 0.5, 0.25]],
            cg_iterations: [[0; 3]; 3],
        };
        assert!(g.monotone(0.0));
        g.errors[2][2] = 0.6;
        assert!(!g.monotone(0.0));
        assert!(g.render().lines().count() == 5);
    }

    #[test]
    fn io_ledger_check_passes() {
        let (ok, detail) = check_io_ledger().unwrap();
        assert!(ok, "{detail}");
    }

    #[test]
    fn broken_lse_fails_tiling_check() {
        assert!(check_tiling(false).unwrap().0);
        assert!(!check_tiling(true).unwrap().0);
    }
}
