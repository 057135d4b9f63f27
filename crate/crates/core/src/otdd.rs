//! Dataset distances between labeled point clouds.
//!
//! The ground cost between a labeled point `(x, ℓ)` and `(y, ℓ')` is
//! `λ₁‖x - y‖² + λ₂ W[ℓ, ℓ']`, where `W` holds debiased Sinkhorn divergences
//! between the class-conditional clouds. `W` covers the classes of both datasets
//! (`V₁ + V₂` rows), so the cross term and both self terms of the debiased
//! dataset divergence read from the same table with different label offsets.

use rayon::prelude::*;

use crate::autodiff::{grad_source, grad_target};
use crate::config::{SinkhornConfig, TileConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::measure::{CostSpec, DiscreteMeasure, LabelTable};
use crate::solver::{sinkhorn_divergence, sinkhorn_solve, SolveReport};
use crate::stream::IoLedger;

/// Class-to-class cost table over the classes of two datasets.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelCostMatrix {
    entries: Matrix,
    v1: usize,
    v2: usize,
}

impl LabelCostMatrix {
    /// Wraps a `(V₁+V₂)²` table; it must be symmetric, finite and non-negative with a zero diagonal.
    pub fn new(entries: Matrix, v1: usize, v2: usize) -> Result<Self> {
        let v = v1 + v2;
        if entries.rows() != v || entries.cols() != v {
            return Err(Error::invalid(format!(
                "label cost matrix must be {v}x{v}, got {}x{}",
                entries.rows(),
                entries.cols()
            )));
        }
        for p in 0..v {
            if entries.get(p, p) != 0.0 {
                return Err(Error::invalid("label cost diagonal must be zero"));
            }
            for q in 0..v {
                let w = entries.get(p, q);
                if !w.is_finite() || w < 0.0 || w != entries.get(q, p) {
                    return Err(Error::invalid("label cost must be finite, non-negative and symmetric"));
                }
            }
        }
        Ok(LabelCostMatrix { entries, v1, v2 })
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    /// `(V₁, V₂)`.
    pub fn class_counts(&self) -> (usize, usize) {
        (self.v1, self.v2)
    }

    /// Label offsets of the two datasets inside the joint table.
    pub fn class_offsets(&self) -> (usize, usize) {
        (0, self.v1)
    }

    /// The same table for the datasets in swapped order.
    pub fn swapped(&self) -> LabelCostMatrix {
        let (v1, v2) = (self.v1, self.v2);
        let v = v1 + v2;
        let old = |k: usize| if k < v2 { v1 + k } else { k - v2 };
        let mut e = Matrix::zeros(v, v);
        for p in 0..v {
            for q in 0..v {
                e.set(p, q, self.entries.get(old(p), old(q)));
            }
        }
        LabelCostMatrix {
            entries: e,
            v1: v2,
            v2: v1,
        }
    }

    fn table(&self) -> LabelTable {
        LabelTable::new(self.v1 + self.v2, self.entries.as_slice().to_vec()).expect("validated")
    }

    /// Costs for the cross term and the two self terms.
    pub fn costs(&self, lambda1: f64, lambda2: f64) -> [CostSpec; 3] {
        let t = self.table();
        let v1 = self.v1;
        let mk = |ro, co| CostSpec::LabelAugmented {
            lambda1,
            lambda2,
            table: t.with_offsets(ro, co),
        };
        [mk(0, v1), mk(0, 0), mk(v1, v1)]
    }
}

fn classes(m: &DiscreteMeasure, which: &str) -> Result<Vec<DiscreteMeasure>> {
    if m.labels().is_none() {
        return Err(Error::invalid(format!("{which} dataset has no labels")));
    }
    (0..m.num_classes() as u32)
        .map(|c| {
            m.class_subset(c)
                .ok_or_else(|| Error::invalid(format!("{which} dataset has no points of class {c}")))
        })
        .collect()
}

/// Debiased divergences between every pair of class-conditional clouds of the two
/// datasets (uniform weights within each class), computed at `inner_cfg`.
pub fn build_label_cost(
    d1: &DiscreteMeasure,
    d2: &DiscreteMeasure,
    inner_cfg: &SinkhornConfig,
    tiles: &TileConfig,
) -> Result<LabelCostMatrix> {
    let mut all = classes(d1, "first")?;
    let v1 = all.len();
    all.extend(classes(d2, "second")?);
    let v = all.len();
    let sq = CostSpec::SquaredEuclidean;
    let selfs: Vec<f64> = all
        .par_iter()
        .map(|c| sinkhorn_solve(c, c, &sq, inner_cfg, tiles, &IoLedger::new()).map(|r| r.dual_cost))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..v).flat_map(|p| (p + 1..v).map(move |q| (p, q))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(p, q)| {
            sinkhorn_solve(&all[p], &all[q], &sq, inner_cfg, tiles, &IoLedger::new())
                .map(|r| (r.dual_cost - 0.5 * selfs[p] - 0.5 * selfs[q]).max(0.0))
        })
        .collect::<Result<_>>()?;
    let mut e = Matrix::zeros(v, v);
    for (&(p, q), &w) in pairs.iter().zip(&values) {
        e.set(p, q, w);
        e.set(q, p, w);
    }
    LabelCostMatrix::new(e, v1, v - v1)
}

struct Terms {
    cross: SolveReport,
    self_src: SolveReport,
    self_tgt: SolveReport,
}

#[allow(clippy::too_many_arguments)]
fn solve_terms(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    w: &LabelCostMatrix,
    lambda1: f64,
    lambda2: f64,
    cfg: &SinkhornConfig,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<(Terms, [CostSpec; 3])> {
    let costs = w.costs(lambda1, lambda2);
    let cross = sinkhorn_solve(src, tgt, &costs[0], cfg, tiles, ledger)?;
    let self_src = sinkhorn_solve(src, src, &costs[1], cfg, tiles, ledger)?;
    let self_tgt = sinkhorn_solve(tgt, tgt, &costs[2], cfg, tiles, ledger)?;
    Ok((
        Terms {
            cross,
            self_src,
            self_tgt,
        },
        costs,
    ))
}

/// `OT(μ, ν) - ½ OT(μ, μ) - ½ OT(ν, ν)` under the label-augmented cost. The target
/// labels are read with offset `V₁`.
#[allow(clippy::too_many_arguments)]
pub fn otdd_distance(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    w: &LabelCostMatrix,
    lambda1: f64,
    lambda2: f64,
    cfg: &SinkhornConfig,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<f64> {
    let (t, _) = solve_terms(src, tgt, w, lambda1, lambda2, cfg, tiles, ledger)?;
    Ok(t.cross.dual_cost - 0.5 * t.self_src.dual_cost - 0.5 * t.self_tgt.dual_cost)
}

/// One explicit Euler step of the gradient flow on the source features.
#[derive(Clone, Debug)]
pub struct FlowStep {
    /// Source dataset at the new feature locations (labels unchanged).
    pub source: DiscreteMeasure,
    /// Divergence at the points before the step.
    pub divergence: f64,
    pub gradient: Matrix,
}

/// `X ← X - step · ∇_X S`, where `∇_X S` combines the cross-term gradient with
/// both argument slots of the source self term.
#[allow(clippy::too_many_arguments)]
pub fn otdd_gradient_flow_step(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    w: &LabelCostMatrix,
    lambda1: f64,
    lambda2: f64,
    cfg: &SinkhornConfig,
    step: f64,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<FlowStep> {
    let (t, costs) = solve_terms(src, tgt, w, lambda1, lambda2, cfg, tiles, ledger)?;
    let divergence = t.cross.dual_cost - 0.5 * t.self_src.dual_cost - 0.5 * t.self_tgt.dual_cost;
    let g_cross = grad_source(src, tgt, &t.cross.potentials, &costs[0], tiles, ledger)?;
    let g_a = grad_source(src, src, &t.self_src.potentials, &costs[1], tiles, ledger)?;
    let g_b = grad_target(src, src, &t.self_src.potentials, &costs[1], tiles, ledger)?;
    let gradient = g_cross.add_scaled(-0.5, &g_a)?.add_scaled(-0.5, &g_b)?;
    let moved = src.points().add_scaled(-step, &gradient)?;
    Ok(FlowStep {
        source: src.with_points(moved)?,
        divergence,
        gradient,
    })
}

/// Pure-feature divergence, for comparison with [`otdd_distance`] at `λ₂ = 0`.
pub fn feature_divergence(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cfg: &SinkhornConfig,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<f64> {
    sinkhorn_divergence(src, tgt, &CostSpec::SquaredEuclidean, cfg, tiles, ledger)
}
