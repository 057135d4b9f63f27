//! Streaming kernels: Sinkhorn half-steps and transport products computed tile by
//! tile with an online log-sum-exp, so the `n × m` cost, score and plan matrices are
//! never stored.
//!
//! Every operation takes an [`IoLedger`] and records the scalars it moves between
//! slow memory and its tile buffers; the `io_*` functions give the same counts in
//! closed form.

mod kernels;
mod ledger;

pub use kernels::RowStats;
pub use ledger::{
    io_apply_plan, io_apply_plan_adjoint, io_f_update, io_g_update, io_hadamard_transport,
    io_induced_marginals, io_symmetric_update, IoLedger, LedgerSnapshot,
};

pub(crate) use kernels::{score, Prepared};
pub(crate) use ledger::TransportKind;

use crate::config::TileConfig;
use crate::error::{check_len, Error, Result};
use crate::linalg::{Matrix, Real};
use crate::measure::{CostSpec, DiscreteMeasure};
use crate::potentials::ShiftedPotentials;

fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

fn check_potentials(p: &ShiftedPotentials, n: usize, m: usize) -> Result<()> {
    check_len("f_hat", n, p.f_hat().len())?;
    check_len("g_hat", m, p.g_hat().len())
}

impl<T: Real> Prepared<'_, T> {
    /// `f̂ ← -ε LSE_row(S_X(ĝ))`.
    pub(crate) fn f_step(&self, g_hat: &[T], eps: T, tiles: &TileConfig, ledger: &IoLedger) -> Result<Vec<T>> {
        let pass = self.forward(tiles.block_rows, tiles.block_cols, tiles.break_lse_rescale);
        let mut lse = pass.lse_rows(g_hat, eps, 0, ledger)?;
        lse.iter_mut().for_each(|v| *v = -eps * *v);
        Ok(lse)
    }

    /// `ĝ ← -ε LSE_row(S_Y(f̂))`.
    pub(crate) fn g_step(&self, f_hat: &[T], eps: T, tiles: &TileConfig, ledger: &IoLedger) -> Result<Vec<T>> {
        let pass = self.backward(tiles.block_rows, tiles.block_cols, tiles.break_lse_rescale);
        let mut lse = pass.lse_rows(f_hat, eps, 0, ledger)?;
        lse.iter_mut().for_each(|v| *v = -eps * *v);
        Ok(lse)
    }

    /// Both half-steps from the same pair, averaged with it.
    pub(crate) fn symmetric_step(
        &self,
        f_hat: &[T],
        g_hat: &[T],
        eps: T,
        tiles: &TileConfig,
        ledger: &IoLedger,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let half = T::from_f64(0.5);
        let fwd = self.forward(tiles.block_rows, tiles.block_cols, tiles.break_lse_rescale);
        let lse_f = fwd.lse_rows(g_hat, eps, 1, ledger)?;
        let bwd = self.backward(tiles.block_rows, tiles.block_cols, tiles.break_lse_rescale);
        let lse_g = bwd.lse_rows(f_hat, eps, 1, ledger)?;
        let f = f_hat
            .iter()
            .zip(&lse_f)
            .map(|(&old, &l)| half * old - half * eps * l)
            .collect();
        let g = g_hat
            .iter()
            .zip(&lse_g)
            .map(|(&old, &l)| half * old - half * eps * l)
            .collect();
        Ok((f, g))
    }
}

impl Prepared<'_, f64> {
    /// `r = a ⊙ exp((f̂ - f̂⁺)/ε)`, `c = b ⊙ exp((ĝ - ĝ⁺)/ε)` where `f̂⁺, ĝ⁺` are one
    /// half-step ahead; these are the row and column sums of the plan.
    pub(crate) fn marginals(
        &self,
        f_hat: &[f64],
        g_hat: &[f64],
        eps: f64,
        tiles: &TileConfig,
        ledger: &IoLedger,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let fwd = self.forward(tiles.block_rows, tiles.block_cols, tiles.break_lse_rescale);
        let lse_f = fwd.lse_rows(g_hat, eps, 2, ledger)?;
        let bwd = self.backward(tiles.block_rows, tiles.block_cols, tiles.break_lse_rescale);
        let lse_g = bwd.lse_rows(f_hat, eps, 2, ledger)?;
        let r = (0..self.n)
            .map(|i| fwd.rows.w[i] * (f_hat[i] / eps + lse_f[i]).exp())
            .collect::<Vec<_>>();
        let c = (0..self.m)
            .map(|j| bwd.rows.w[j] * (g_hat[j] / eps + lse_g[j]).exp())
            .collect::<Vec<_>>();
        if r.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("induced marginals".into()));
        }
        Ok((r, c))
    }

    pub(crate) fn plan_times(
        &self,
        p: &ShiftedPotentials,
        v: &Matrix,
        kind: TransportKind,
        tiles: &TileConfig,
        ledger: &IoLedger,
    ) -> Result<Matrix> {
        check_len("plan operand rows", self.m, v.rows())?;
        let pass = self.forward(tiles.block_rows, tiles.block_cols, tiles.break_lse_rescale);
        let out = pass.transport(p.f_hat(), p.g_hat(), p.eps(), v.as_slice(), v.cols(), None, kind, ledger)?;
        Matrix::from_vec(self.n, v.cols(), out)
    }

    pub(crate) fn plan_t_times(
        &self,
        p: &ShiftedPotentials,
        u: &Matrix,
        kind: TransportKind,
        tiles: &TileConfig,
        ledger: &IoLedger,
    ) -> Result<Matrix> {
        check_len("adjoint operand rows", self.n, u.rows())?;
        let pass = self.backward(tiles.block_rows, tiles.block_cols, tiles.break_lse_rescale);
        let out = pass.transport(p.g_hat(), p.f_hat(), p.eps(), u.as_slice(), u.cols(), None, kind, ledger)?;
        Matrix::from_vec(self.m, u.cols(), out)
    }

    pub(crate) fn hadamard_times(
        &self,
        p: &ShiftedPotentials,
        a: &Matrix,
        b: &Matrix,
        v: &Matrix,
        tiles: &TileConfig,
        ledger: &IoLedger,
    ) -> Result<Matrix> {
        check_len("hadamard left factor rows", self.n, a.rows())?;
        check_len("hadamard right factor rows", self.m, b.rows())?;
        check_len("hadamard factor rank", a.cols(), b.cols())?;
        check_len("hadamard operand rows", self.m, v.rows())?;
        let pass = self.forward(tiles.block_rows, tiles.block_cols, tiles.break_lse_rescale);
        let out = pass.transport(
            p.f_hat(),
            p.g_hat(),
            p.eps(),
            v.as_slice(),
            v.cols(),
            Some((a.as_slice(), b.as_slice(), a.cols())),
            TransportKind::Hadamard,
            ledger,
        )?;
        Matrix::from_vec(self.n, v.cols(), out)
    }
}

fn kind_for(p: usize) -> TransportKind {
    if p == 1 {
        TransportKind::Vector
    } else {
        TransportKind::Matrix
    }
}

/// One streamed `f̂` half-step at `eps`.
pub fn update_f_hat(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    g_hat: &[f64],
    cost: &CostSpec,
    eps: f64,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<Vec<f64>> {
    check_eps(eps)?;
    tiles.validate()?;
    check_len("g_hat", tgt.len(), g_hat.len())?;
    Prepared::<f64>::new(src, tgt, cost)?.f_step(g_hat, eps, tiles, ledger)
}

/// One streamed `ĝ` half-step at `eps`.
pub fn update_g_hat(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    f_hat: &[f64],
    cost: &CostSpec,
    eps: f64,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<Vec<f64>> {
    check_eps(eps)?;
    tiles.validate()?;
    check_len("f_hat", src.len(), f_hat.len())?;
    Prepared::<f64>::new(src, tgt, cost)?.g_step(f_hat, eps, tiles, ledger)
}

/// One symmetric iteration `(f̂, ĝ) ← ½(f̂, ĝ) + ½(f̂⁺, ĝ⁺)` from the same old pair.
pub fn symmetric_update(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    p: &ShiftedPotentials,
    cost: &CostSpec,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<ShiftedPotentials> {
    tiles.validate()?;
    check_potentials(p, src.len(), tgt.len())?;
    let prep = Prepared::<f64>::new(src, tgt, cost)?;
    let (f, g) = prep.symmetric_step(p.f_hat(), p.g_hat(), p.eps(), tiles, ledger)?;
    ShiftedPotentials::new(f, g, p.eps())
}

/// Row and column sums `(r, c)` of the plan induced by `p`.
pub fn induced_marginals(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    p: &ShiftedPotentials,
    cost: &CostSpec,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<(Vec<f64>, Vec<f64>)> {
    tiles.validate()?;
    check_potentials(p, src.len(), tgt.len())?;
    Prepared::<f64>::new(src, tgt, cost)?.marginals(p.f_hat(), p.g_hat(), p.eps(), tiles, ledger)
}

/// `P V` for `V ∈ ℝ^{m×p}`, with the plan generated on the fly from `p`.
pub fn apply_plan(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    p: &ShiftedPotentials,
    v: &Matrix,
    cost: &CostSpec,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<Matrix> {
    tiles.validate()?;
    check_potentials(p, src.len(), tgt.len())?;
    Prepared::<f64>::new(src, tgt, cost)?.plan_times(p, v, kind_for(v.cols()), tiles, ledger)
}

/// `Pᵀ U` for `U ∈ ℝ^{n×p}`.
pub fn apply_plan_adjoint(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    p: &ShiftedPotentials,
    u: &Matrix,
    cost: &CostSpec,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<Matrix> {
    tiles.validate()?;
    check_potentials(p, src.len(), tgt.len())?;
    Prepared::<f64>::new(src, tgt, cost)?.plan_t_times(p, u, kind_for(u.cols()), tiles, ledger)
}

/// `(P ⊙ A Bᵀ) V` with the weight tile `A_I B_Jᵀ` formed inside the kernel.
#[allow(clippy::too_many_arguments)]
pub fn apply_hadamard_transport(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    p: &ShiftedPotentials,
    a: &Matrix,
    b: &Matrix,
    v: &Matrix,
    cost: &CostSpec,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<Matrix> {
    tiles.validate()?;
    check_potentials(p, src.len(), tgt.len())?;
    Prepared::<f64>::new(src, tgt, cost)?.hadamard_times(p, a, b, v, tiles, ledger)
}
