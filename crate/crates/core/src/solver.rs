//! Sinkhorn driver on top of the streaming kernels.

use crate::config::{Precision, Schedule, SinkhornConfig, TileConfig};
use crate::error::{check_len, Error, Result};
use crate::linalg::Real;
use crate::measure::{compensated_sum, CostSpec, DiscreteMeasure};
use crate::potentials::{shifts, ShiftedPotentials};
use crate::stream::{IoLedger, Prepared};

/// Outcome of a Sinkhorn solve.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub potentials: ShiftedPotentials,
    /// Full iterations performed (annealing included).
    pub iterations: usize,
    /// `‖r - a‖₁ + ‖c - b‖₁` at the returned potentials.
    pub marginal_violation: f64,
    /// `⟨f, a⟩ + ⟨g, b⟩ - ε(Σ r - 1)` at the returned potentials.
    pub dual_cost: f64,
    /// The `ε` used at each iteration.
    pub eps_history: Vec<f64>,
    /// Marginal violation after each monitored iteration (only when `marginal_tol > 0`).
    pub violation_history: Vec<f64>,
    /// Whether `marginal_tol` was reached. Always false for fixed-iteration runs.
    pub converged: bool,
}

/// Starting `ε` for annealing: the cost diameter of the joint bounding box.
pub fn annealing_start(src: &DiscreteMeasure, tgt: &DiscreteMeasure, cost: &CostSpec) -> f64 {
    let d = src.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for m in [src, tgt] {
        for i in 0..m.len() {
            for (t, &v) in m.points().row(i).iter().enumerate() {
                lo[t] = lo[t].min(v);
                hi[t] = hi[t].max(v);
            }
        }
    }
    let diam2: f64 = lo.iter().zip(&hi).map(|(l, h)| (h - l) * (h - l)).sum();
    let label_span = cost
        .table()
        .map(|t| t.entries().iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .unwrap_or(0.0);
    cost.lambda1() * diam2 + cost.lambda2() * label_span
}

/// Solves from `f = g = 0`.
pub fn sinkhorn_solve(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<SolveReport> {
    solve_impl(src, tgt, cost, cfg, tiles, ledger, None)
}

/// Solves starting from `init` (its `ε` is ignored; the schedule comes from `cfg`).
pub fn sinkhorn_solve_warm(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
    tiles: &TileConfig,
    ledger: &IoLedger,
    init: &ShiftedPotentials,
) -> Result<SolveReport> {
    solve_impl(src, tgt, cost, cfg, tiles, ledger, Some(init))
}

fn solve_impl(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
    tiles: &TileConfig,
    ledger: &IoLedger,
    init: Option<&ShiftedPotentials>,
) -> Result<SolveReport> {
    cfg.validate()?;
    tiles.validate()?;
    let prep64 = Prepared::<f64>::new(src, tgt, cost)?;
    let (f0, g0) = match init {
        Some(p) => {
            check_len("initial f_hat", src.len(), p.f_hat().len())?;
            check_len("initial g_hat", tgt.len(), p.g_hat().len())?;
            (p.f_hat().to_vec(), p.g_hat().to_vec())
        }
        None => {
            let z = ShiftedPotentials::zero_init(src, tgt, cost, cfg.eps)?;
            let (f, g, _) = z.into_parts();
            (f, g)
        }
    };
    let eps_seq = cfg.eps_sequence(annealing_start(src, tgt, cost));
    let run = match cfg.precision {
        Precision::Double => iterate(&prep64, &prep64, cfg, tiles, ledger, f0, g0, &eps_seq)?,
        Precision::Single => {
            let prep32 = Prepared::<f32>::new(src, tgt, cost)?;
            let f = f0.iter().map(|&v| v as f32).collect();
            let g = g0.iter().map(|&v| v as f32).collect();
            iterate(&prep32, &prep64, cfg, tiles, ledger, f, g, &eps_seq)?
        }
    };
    let potentials = ShiftedPotentials::new(run.f, run.g, cfg.eps)?;
    let (r, c) = prep64.marginals(potentials.f_hat(), potentials.g_hat(), cfg.eps, tiles, ledger)?;
    let marginal_violation = violation(&r, &c, src.weights(), tgt.weights());
    let dual_cost = dual_from_marginals(src, tgt, cost, &potentials, &r)?;
    Ok(SolveReport {
        potentials,
        iterations: run.iterations,
        marginal_violation,
        dual_cost,
        eps_history: eps_seq[..run.iterations].to_vec(),
        violation_history: run.violations,
        converged: run.converged || (cfg.marginal_tol > 0.0 && marginal_violation <= cfg.marginal_tol),
    })
}

struct Run {
    f: Vec<f64>,
    g: Vec<f64>,
    iterations: usize,
    violations: Vec<f64>,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn iterate<T: Real>(
    prep: &Prepared<'_, T>,
    prep64: &Prepared<'_, f64>,
    cfg: &SinkhornConfig,
    tiles: &TileConfig,
    ledger: &IoLedger,
    mut f: Vec<T>,
    mut g: Vec<T>,
    eps_seq: &[f64],
) -> Result<Run> {
    let widen = |v: &[T]| v.iter().map(|&x| Real::to_f64(x)).collect::<Vec<f64>>();
    let mut violations = Vec::new();
    let monitor = cfg.marginal_tol > 0.0;
    let check = |f: &[T], g: &[T], violations: &mut Vec<f64>| -> Result<bool> {
        let (f64s, g64s) = (widen(f), widen(g));
        let (r, c) = prep64.marginals(&f64s, &g64s, cfg.eps, tiles, ledger)?;
        let v = violation(&r, &c, prep64_weights(prep64).0, prep64_weights(prep64).1);
        violations.push(v);
        Ok(v <= cfg.marginal_tol)
    };
    if monitor && eps_seq.first() == Some(&cfg.eps) && check(&f, &g, &mut violations)? {
        return Ok(Run {
            f: widen(&f),
            g: widen(&g),
            iterations: 0,
            violations,
            converged: true,
        });
    }
    let mut converged = false;
    let mut iterations = 0;
    // Alternating pairs satisfy ĝ = g_step(f̂), so c = b exactly and the next
    // f̂ update alone yields r: monitoring costs no extra pass.
    let mut fused_ready = false;
    let a64 = prep64_weights(prep64).0;
    for (k, &e) in eps_seq.iter().enumerate() {
        let eps = T::from_f64(e);
        let diverged = |err: Error| match err {
            Error::NonFinite(_) => Error::Diverged { iteration: k + 1 },
            other => other,
        };
        match cfg.schedule {
            Schedule::Alternating => {
                let f_next = prep.f_step(&g, eps, tiles, ledger).map_err(diverged)?;
                if monitor && fused_ready && e == cfg.eps {
                    let v: f64 = (0..f.len())
                        .map(|i| {
                            let gap = (Real::to_f64(f[i]) - Real::to_f64(f_next[i])) / e;
                            (a64[i] * gap.exp() - a64[i]).abs()
                        })
                        .sum();
                    violations.push(v);
                    if v <= cfg.marginal_tol {
                        converged = true;
                        break;
                    }
                }
                f = f_next;
                g = prep.g_step(&f, eps, tiles, ledger).map_err(diverged)?;
                fused_ready = e == cfg.eps;
            }
            Schedule::Symmetric => {
                let (nf, ng) = prep.symmetric_step(&f, &g, eps, tiles, ledger).map_err(diverged)?;
                f = nf;
                g = ng;
            }
        }
        if f.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: k + 1 });
        }
        iterations = k + 1;
        if monitor && cfg.schedule == Schedule::Symmetric && e == cfg.eps && check(&f, &g, &mut violations)? {
            converged = true;
            break;
        }
    }
    Ok(Run {
        f: widen(&f),
        g: widen(&g),
        iterations,
        violations,
        converged,
    })
}

fn prep64_weights<'p>(p: &'p Prepared<'_, f64>) -> (&'p [f64], &'p [f64]) {
    let fwd = p.forward(1, 1, false);
    (fwd.rows.w, fwd.cols.w)
}

pub(crate) fn violation(r: &[f64], c: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let dr: f64 = r.iter().zip(a).map(|(x, y)| (x - y).abs()).sum();
    let dc: f64 = c.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    dr + dc
}

fn dual_from_marginals(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &CostSpec,
    p: &ShiftedPotentials,
    r: &[f64],
) -> Result<f64> {
    let (alpha, beta) = shifts(src, tgt, cost)?;
    let fa: Vec<f64> = (0..src.len())
        .map(|i| (p.f_hat()[i] + alpha[i]) * src.weights()[i])
        .collect();
    let gb: Vec<f64> = (0..tgt.len())
        .map(|j| (p.g_hat()[j] + beta[j]) * tgt.weights()[j])
        .collect();
    let mass = compensated_sum(r);
    let value = compensated_sum(&fa) + compensated_sum(&gb) - p.eps() * (mass - 1.0);
    if !value.is_finite() {
        return Err(Error::NonFinite("dual cost".into()));
    }
    Ok(value)
}

/// Entropic dual objective `⟨f, a⟩ + ⟨g, b⟩ - ε(Σ_ij P_ij - 1)` at `p`.
pub fn dual_cost(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    p: &ShiftedPotentials,
    cost: &CostSpec,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<f64> {
    let (r, _) = crate::stream::induced_marginals(src, tgt, p, cost, tiles, ledger)?;
    dual_from_marginals(src, tgt, cost, p, &r)
}

/// `‖r - a‖₁ + ‖c - b‖₁` for the plan induced by `p`.
pub fn marginal_violation(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    p: &ShiftedPotentials,
    cost: &CostSpec,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<f64> {
    let (r, c) = crate::stream::induced_marginals(src, tgt, p, cost, tiles, ledger)?;
    Ok(violation(&r, &c, src.weights(), tgt.weights()))
}

/// Debiased divergence `OT(μ, ν) - ½ OT(μ, μ) - ½ OT(ν, ν)` with one cost for all terms.
pub fn sinkhorn_divergence(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<f64> {
    let xy = sinkhorn_solve(mu, nu, cost, cfg, tiles, ledger)?.dual_cost;
    let xx = sinkhorn_solve(mu, mu, cost, cfg, tiles, ledger)?.dual_cost;
    let yy = sinkhorn_solve(nu, nu, cost, cfg, tiles, ledger)?.dual_cost;
    Ok(xy - 0.5 * xx - 0.5 * yy)
}
