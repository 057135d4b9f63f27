//! First-order sensitivities of `OT_ε` with respect to point locations.
//!
//! All gradients use the induced marginals `r = P 1`, `c = Pᵀ 1` of the plan
//! generated from the given potentials, which keeps them consistent with the
//! plan even before Sinkhorn has fully converged.

use crate::config::TileConfig;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::measure::{CostSpec, DiscreteMeasure};
use crate::potentials::ShiftedPotentials;
use crate::stream::{IoLedger, Prepared, TransportKind};

fn nonzero(v: &[f64]) -> Result<()> {
    match v.iter().position(|&x| x <= 0.0) {
        Some(index) => Err(Error::ZeroMarginal { index }),
        None => Ok(()),
    }
}

/// `T = diag(r)⁻¹ P Y`: the plan-weighted mean of the targets for every source point.
pub fn barycentric_projection(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    p: &ShiftedPotentials,
    cost: &CostSpec,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<Matrix> {
    let prep = Prepared::<f64>::new(src, tgt, cost)?;
    let (r, _) = prep.marginals(p.f_hat(), p.g_hat(), p.eps(), tiles, ledger)?;
    nonzero(&r)?;
    let py = prep.plan_times(p, tgt.points(), TransportKind::Matrix, tiles, ledger)?;
    let inv: Vec<f64> = r.iter().map(|v| 1.0 / v).collect();
    py.scale_rows(&inv)
}

/// `∇_X OT_ε = 2λ₁ (diag(r) X - P Y)`.
pub fn grad_source(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    p: &ShiftedPotentials,
    cost: &CostSpec,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<Matrix> {
    let prep = Prepared::<f64>::new(src, tgt, cost)?;
    let (r, _) = prep.marginals(p.f_hat(), p.g_hat(), p.eps(), tiles, ledger)?;
    let py = prep.plan_times(p, tgt.points(), TransportKind::Matrix, tiles, ledger)?;
    src.points()
        .scale_rows(&r)?
        .add_scaled(-1.0, &py)
        .map(|g| g.scale(2.0 * cost.lambda1()))
}

/// `∇_Y OT_ε = 2λ₁ (diag(c) Y - Pᵀ X)`.
pub fn grad_target(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    p: &ShiftedPotentials,
    cost: &CostSpec,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<Matrix> {
    let prep = Prepared::<f64>::new(src, tgt, cost)?;
    let (_, c) = prep.marginals(p.f_hat(), p.g_hat(), p.eps(), tiles, ledger)?;
    let ptx = prep.plan_t_times(p, src.points(), TransportKind::Matrix, tiles, ledger)?;
    tgt.points()
        .scale_rows(&c)?
        .add_scaled(-1.0, &ptx)
        .map(|g| g.scale(2.0 * cost.lambda1()))
}
