//! Streaming Hessian–vector products of `OT_ε` with respect to the source points.
//!
//! For the squared Euclidean cost the Hessian splits into an explicit block-diagonal
//! term `E` and an implicit term `(1/ε) Rᵀ H† R` through the marginal system
//! `H = [[diag(r), P], [Pᵀ, diag(c)]]`. Both are applied without forming any
//! `n × m` matrix: the implicit part reduces to a damped Schur-complement solve
//! `(diag(c) - Pᵀ diag(r)⁻¹ P + τ I) w₂ = rhs` by conjugate gradients, where every
//! operator application is a pair of streamed transport–vector products.

mod cg;
mod lanczos;

pub use cg::{cg_solve, CgOutcome};
pub use lanczos::{lanczos_min_eig, LanczosConfig, LanczosEstimate};

use crate::config::TileConfig;
use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::measure::{CostSpec, DiscreteMeasure};
use crate::potentials::ShiftedPotentials;
use crate::stream::{IoLedger, Prepared, TransportKind};

/// Damping and CG settings for [`hvp_apply`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HvpConfig {
    /// Damping `τ` added to the Schur complement.
    pub tau: f64,
    /// Relative residual target `η` for CG.
    pub cg_tol: f64,
    /// CG iteration cap `K`.
    pub cg_max_iters: usize,
}

impl Default for HvpConfig {
    fn default() -> Self {
        HvpConfig {
            tau: 1e-5,
            cg_tol: 1e-6,
            cg_max_iters: 50,
        }
    }
}

impl HvpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::invalid("tau must be finite and non-negative"));
        }
        if !(self.cg_tol.is_finite() && self.cg_tol > 0.0) {
            return Err(Error::invalid("cg_tol must be positive"));
        }
        Ok(())
    }
}

/// One Hessian–vector product together with its CG diagnostics.
#[derive(Clone, Debug)]
pub struct HvpResult {
    pub value: Matrix,
    pub cg_iterations: usize,
    pub cg_relative_residual: f64,
    /// False when CG stopped at the iteration cap before reaching `cg_tol`.
    pub converged: bool,
}

fn fingerprint(src: &DiscreteMeasure, tgt: &DiscreteMeasure, p: &ShiftedPotentials) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: &[f64]| {
        for x in v {
            h ^= x.to_bits();
            h = h.wrapping_mul(PRIME);
        }
        h ^= v.len() as u64;
        h = h.wrapping_mul(PRIME);
    };
    eat(src.points().as_slice());
    eat(src.weights());
    eat(tgt.points().as_slice());
    eat(tgt.weights());
    eat(p.f_hat());
    eat(p.g_hat());
    eat(&[p.eps()]);
    h
}

/// Quantities shared by every HVP at fixed potentials: induced marginals and `P Y`.
#[derive(Clone, Debug)]
pub struct HvpWorkspace {
    potentials: ShiftedPotentials,
    r: Vec<f64>,
    c: Vec<f64>,
    py: Matrix,
    tag: u64,
}

const SQ: CostSpec = CostSpec::SquaredEuclidean;

impl HvpWorkspace {
    /// Computes the induced marginals and the cached transport–matrix product `P Y`.
    pub fn build(
        src: &DiscreteMeasure,
        tgt: &DiscreteMeasure,
        p: &ShiftedPotentials,
        tiles: &TileConfig,
        ledger: &IoLedger,
    ) -> Result<Self> {
        tiles.validate()?;
        check_len("f_hat", src.len(), p.f_hat().len())?;
        check_len("g_hat", tgt.len(), p.g_hat().len())?;
        let prep = Prepared::<f64>::new(src, tgt, &SQ)?;
        let (r, c) = prep.marginals(p.f_hat(), p.g_hat(), p.eps(), tiles, ledger)?;
        if let Some(index) = r.iter().chain(&c).position(|&v| v <= 0.0) {
            return Err(Error::ZeroMarginal { index });
        }
        let py = prep.plan_times(p, tgt.points(), TransportKind::Matrix, tiles, ledger)?;
        Ok(HvpWorkspace {
            potentials: p.clone(),
            r,
            c,
            py,
            tag: fingerprint(src, tgt, p),
        })
    }

    /// Whether this workspace was built for exactly these measures.
    pub fn is_valid_for(&self, src: &DiscreteMeasure, tgt: &DiscreteMeasure) -> bool {
        src.len() == self.r.len()
            && tgt.len() == self.c.len()
            && fingerprint(src, tgt, &self.potentials) == self.tag
    }

    pub fn potentials(&self) -> &ShiftedPotentials {
        &self.potentials
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.r
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.c
    }

    /// Cached `P Y`.
    pub fn plan_targets(&self) -> &Matrix {
        &self.py
    }

    fn eps(&self) -> f64 {
        self.potentials.eps()
    }

    fn check(&self, src: &DiscreteMeasure, tgt: &DiscreteMeasure) -> Result<()> {
        if !self.is_valid_for(src, tgt) {
            return Err(Error::StaleWorkspace);
        }
        Ok(())
    }
}

struct Ctx<'a> {
    prep: Prepared<'a, f64>,
    ws: &'a HvpWorkspace,
    tiles: &'a TileConfig,
    ledger: &'a IoLedger,
}

impl<'a> Ctx<'a> {
    fn new(
        src: &'a DiscreteMeasure,
        tgt: &'a DiscreteMeasure,
        ws: &'a HvpWorkspace,
        tiles: &'a TileConfig,
        ledger: &'a IoLedger,
    ) -> Result<Self> {
        tiles.validate()?;
        ws.check(src, tgt)?;
        Ok(Ctx {
            prep: Prepared::new(src, tgt, &SQ)?,
            ws,
            tiles,
            ledger,
        })
    }

    fn p(&self, v: &Matrix, kind: TransportKind) -> Result<Matrix> {
        self.prep.plan_times(&self.ws.potentials, v, kind, self.tiles, self.ledger)
    }

    fn pt(&self, u: &Matrix, kind: TransportKind) -> Result<Matrix> {
        self.prep.plan_t_times(&self.ws.potentials, u, kind, self.tiles, self.ledger)
    }

    fn p_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(v.len(), 1, v.to_vec())?;
        Ok(self.p(&m, TransportKind::Vector)?.into_vec())
    }

    fn pt_vec(&self, u: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(u.len(), 1, u.to_vec())?;
        Ok(self.pt(&m, TransportKind::Vector)?.into_vec())
    }

    /// `S_τ v = c ⊙ v - Pᵀ(diag(r)⁻¹ P v) + τ v`.
    fn schur(&self, v: &[f64], tau: f64) -> Result<Vec<f64>> {
        let pv = self.p_vec(v)?;
        let scaled: Vec<f64> = pv.iter().zip(&self.ws.r).map(|(a, r)| a / r).collect();
        let back = self.pt_vec(&scaled)?;
        Ok((0..v.len())
            .map(|j| self.ws.c[j] * v[j] - back[j] + tau * v[j])
            .collect())
    }

    fn explicit(&self, x: &Matrix, y: &Matrix, a: &Matrix) -> Result<Matrix> {
        let ws = self.ws;
        let u = x.row_dots(a)?;
        let up = ws.py.row_dots(a)?;
        let b5 = self.prep.hadamard_times(&ws.potentials, a, y, y, self.tiles, self.ledger)?;
        let k4 = 4.0 / ws.eps();
        let mut out = Matrix::zeros(a.rows(), a.cols());
        for i in 0..a.rows() {
            let (xi, pyi, ai, b5i) = (x.row(i), ws.py.row(i), a.row(i), b5.row(i));
            let ri = ws.r[i];
            for (t, o) in out.row_mut(i).iter_mut().enumerate() {
                let inner = ri * u[i] * xi[t] - u[i] * pyi[t] - up[i] * xi[t] + b5i[t];
                *o = 2.0 * ri * ai[t] - k4 * inner;
            }
        }
        Ok(out)
    }

    fn rhs(&self, x: &Matrix, y: &Matrix, a: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let ws = self.ws;
        let u = x.row_dots(a)?;
        let up = ws.py.row_dots(a)?;
        let pt_u = self.pt_vec(&u)?;
        let pt_a = self.pt(a, TransportKind::Matrix)?;
        let r1 = (0..a.rows()).map(|i| 2.0 * (ws.r[i] * u[i] - up[i])).collect();
        let r2 = (0..y.rows())
            .map(|j| 2.0 * (pt_u[j] - dot(pt_a.row(j), y.row(j))))
            .collect();
        Ok((r1, r2))
    }
}

fn check_direction(src: &DiscreteMeasure, a: &Matrix) -> Result<()> {
    check_len("direction rows", src.len(), a.rows())?;
    check_len("direction cols", src.dim(), a.cols())
}

/// Explicit term `E A = B₁ - (4/ε)(B₂ - B₃ - B₄ + B₅)`.
pub fn explicit_term(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    ws: &HvpWorkspace,
    a: &Matrix,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<Matrix> {
    check_direction(src, a)?;
    let ctx = Ctx::new(src, tgt, ws, tiles, ledger)?;
    ctx.explicit(src.points(), tgt.points(), a)
}

/// `(r₁, r₂) = R A`: `r₁ = 2(r ⊙ u - u_P)`, `r₂ = 2(Pᵀu - ⟨PᵀA, Y⟩)` with
/// `u = ⟨X, A⟩` and `u_P = ⟨P Y, A⟩` taken row-wise.
pub fn build_rhs(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    ws: &HvpWorkspace,
    a: &Matrix,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_direction(src, a)?;
    let ctx = Ctx::new(src, tgt, ws, tiles, ledger)?;
    ctx.rhs(src.points(), tgt.points(), a)
}

/// Damped Schur complement `S_τ v`.
pub fn schur_apply(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    ws: &HvpWorkspace,
    v: &[f64],
    tau: f64,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<Vec<f64>> {
    check_len("Schur operand", tgt.len(), v.len())?;
    let ctx = Ctx::new(src, tgt, ws, tiles, ledger)?;
    ctx.schur(v, tau)
}

/// `G = (1/ε) Rᵀ w + E A`, the Hessian of `OT_ε` applied to the direction `A ∈ ℝ^{n×d}`.
///
/// When CG stops at `cg_max_iters` the product is still returned, with
/// `converged = false`.
pub fn hvp_apply(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    ws: &HvpWorkspace,
    a: &Matrix,
    cfg: &HvpConfig,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<HvpResult> {
    cfg.validate()?;
    check_direction(src, a)?;
    let ctx = Ctx::new(src, tgt, ws, tiles, ledger)?;
    let (x, y) = (src.points(), tgt.points());
    let (n, d) = (x.rows(), x.cols());

    let (r1, r2) = ctx.rhs(x, y, a)?;
    let r1_scaled: Vec<f64> = r1.iter().zip(&ws.r).map(|(v, r)| v / r).collect();
    let back = ctx.pt_vec(&r1_scaled)?;
    let rhs: Vec<f64> = r2.iter().zip(&back).map(|(a, b)| a - b).collect();

    let cg = cg_solve(|v| ctx.schur(v, cfg.tau), &rhs, cfg.cg_tol, cfg.cg_max_iters)?;
    let w2 = cg.solution;
    let pw2 = ctx.p_vec(&w2)?;
    let w1: Vec<f64> = (0..n).map(|i| (r1[i] - pw2[i]) / ws.r[i]).collect();

    let w2y = y.scale_rows(&w2)?;
    let p_w2y = ctx.p(&w2y, TransportKind::Matrix)?;
    ledger.cached_reuse();

    let ea = ctx.explicit(x, y, a)?;
    let inv_eps = 1.0 / ws.eps();
    let mut g = Matrix::zeros(n, d);
    for i in 0..n {
        let (xi, pyi, pwi, eai) = (x.row(i), ws.py.row(i), p_w2y.row(i), ea.row(i));
        for (t, o) in g.row_mut(i).iter_mut().enumerate() {
            let rtw = 2.0 * (ws.r[i] * w1[i] * xi[t] - w1[i] * pyi[t] + pw2[i] * xi[t] - pwi[t]);
            *o = inv_eps * rtw + eai[t];
        }
    }
    if !g.is_finite() {
        return Err(Error::NonFinite("HVP".into()));
    }
    Ok(HvpResult {
        value: g,
        cg_iterations: cg.iterations,
        cg_relative_residual: cg.relative_residual,
        converged: cg.converged,
    })
}

/// Hessian–vector products for several directions at once.
///
/// Each direction gets its own CG solve, but the solves advance in lockstep so
/// every streamed pass serves all directions; the `(P ⊙ A Yᵀ) Y` term is formed
/// from the single product `P (Y ⊗ Y)`. Results agree with [`hvp_apply`] on each
/// direction up to rounding.
pub fn hvp_apply_many(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    ws: &HvpWorkspace,
    dirs: &[Matrix],
    cfg: &HvpConfig,
    tiles: &TileConfig,
    ledger: &IoLedger,
) -> Result<Vec<HvpResult>> {
    cfg.validate()?;
    for a in dirs {
        check_direction(src, a)?;
    }
    let k = dirs.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let ctx = Ctx::new(src, tgt, ws, tiles, ledger)?;
    let (x, y) = (src.points(), tgt.points());
    let (n, m, d) = (x.rows(), y.rows(), x.cols());
    let mm = TransportKind::Matrix;

    let mut u = Matrix::zeros(n, k);
    let mut up = Matrix::zeros(n, k);
    let mut stacked = Matrix::zeros(n, k * d);
    for (c, a) in dirs.iter().enumerate() {
        for i in 0..n {
            u.set(i, c, dot(x.row(i), a.row(i)));
            up.set(i, c, dot(ws.py.row(i), a.row(i)));
            stacked.row_mut(i)[c * d..(c + 1) * d].copy_from_slice(a.row(i));
        }
    }
    let pt_u = ctx.pt(&u, mm)?;
    let pt_a = ctx.pt(&stacked, mm)?;
    let mut r1 = Matrix::zeros(n, k);
    let mut r1s = Matrix::zeros(n, k);
    for i in 0..n {
        for c in 0..k {
            let v = 2.0 * (ws.r[i] * u.get(i, c) - up.get(i, c));
            r1.set(i, c, v);
            r1s.set(i, c, v / ws.r[i]);
        }
    }
    let back = ctx.pt(&r1s, mm)?;
    let mut rhs = Matrix::zeros(m, k);
    for j in 0..m {
        for c in 0..k {
            let r2 = 2.0 * (pt_u.get(j, c) - dot(&pt_a.row(j)[c * d..(c + 1) * d], y.row(j)));
            rhs.set(j, c, r2 - back.get(j, c));
        }
    }

    let schur_block = |v: &Matrix| -> Result<Matrix> {
        let mut pv = ctx.p(v, mm)?;
        for i in 0..n {
            let ri = ws.r[i];
            pv.row_mut(i).iter_mut().for_each(|e| *e /= ri);
        }
        let back = ctx.pt(&pv, mm)?;
        let mut out = Matrix::zeros(m, k);
        for j in 0..m {
            for c in 0..k {
                out.set(j, c, (ws.c[j] + cfg.tau) * v.get(j, c) - back.get(j, c));
            }
        }
        Ok(out)
    };
    let (w2, iters, rel) = cg::cg_solve_columns(schur_block, &rhs, cfg.cg_tol, cfg.cg_max_iters)?;
    let pw2 = ctx.p(&w2, mm)?;

    let mut w2y = Matrix::zeros(m, k * d);
    let mut yy = Matrix::zeros(m, d * d);
    for j in 0..m {
        let yj = y.row(j);
        for c in 0..k {
            let w = w2.get(j, c);
            for t in 0..d {
                w2y.set(j, c * d + t, w * yj[t]);
            }
        }
        for t in 0..d {
            for s in 0..d {
                yy.set(j, t * d + s, yj[t] * yj[s]);
            }
        }
    }
    let p_w2y = ctx.p(&w2y, mm)?;
    let p_yy = ctx.p(&yy, mm)?;
    ledger.cached_reuse();

    let inv_eps = 1.0 / ws.eps();
    let k4 = 4.0 / ws.eps();
    let mut out = Vec::with_capacity(k);
    for (c, a) in dirs.iter().enumerate() {
        let mut g = Matrix::zeros(n, d);
        for i in 0..n {
            let (xi, pyi, ai) = (x.row(i), ws.py.row(i), a.row(i));
            let ri = ws.r[i];
            let w1 = (r1.get(i, c) - pw2.get(i, c)) / ri;
            let m_i = p_yy.row(i);
            for t in 0..d {
                let b5 = dot(&m_i[t * d..(t + 1) * d], ai);
                let ea = 2.0 * ri * ai[t]
                    - k4 * (ri * u.get(i, c) * xi[t] - u.get(i, c) * pyi[t] - up.get(i, c) * xi[t] + b5);
                let rtw = 2.0
                    * (ri * w1 * xi[t] - w1 * pyi[t] + pw2.get(i, c) * xi[t] - p_w2y.get(i, c * d + t));
                g.set(i, t, inv_eps * rtw + ea);
            }
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("HVP".into()));
        }
        out.push(HvpResult {
            value: g,
            cg_iterations: iters[c],
            cg_relative_residual: rel[c],
            converged: rel[c] <= cfg.cg_tol,
        });
    }
    Ok(out)
}

/// `H_W v = Xᵀ 𝒯 (X v)` for a linear model `Y = X W`, with `v` a flattened
/// `d_in × d_out` matrix (row-major) and `data_hvp` applying `𝒯` in data space.
pub fn parameter_hvp<F>(design: &Matrix, d_out: usize, v: &[f64], mut data_hvp: F) -> Result<Vec<f64>>
where
    F: FnMut(&Matrix) -> Result<Matrix>,
{
    let d_in = design.cols();
    check_len("parameter direction", d_in * d_out, v.len())?;
    let vm = Matrix::from_vec(d_in, d_out, v.to_vec())?;
    let lifted = design.matmul(&vm)?;
    let g = data_hvp(&lifted)?;
    check_len("data-space HVP rows", design.rows(), g.rows())?;
    Ok(design.t_matmul(&g)?.into_vec())
}

/// The full `q × q` parameter Hessian `Xᵀ 𝒯 X` (`q = d_in d_out`), assembled from
/// one batched call over the `q` unit directions and symmetrised.
pub fn parameter_hessian<F>(design: &Matrix, d_out: usize, mut data_hvp_many: F) -> Result<Matrix>
where
    F: FnMut(&[Matrix]) -> Result<Vec<Matrix>>,
{
    let (n, d_in) = (design.rows(), design.cols());
    let q = d_in * d_out;
    let mut dirs = Vec::with_capacity(q);
    for a in 0..d_in {
        for b in 0..d_out {
            let mut dir = Matrix::zeros(n, d_out);
            for i in 0..n {
                dir.set(i, b, design.get(i, a));
            }
            dirs.push(dir);
        }
    }
    let outs = data_hvp_many(&dirs)?;
    check_len("batched HVP outputs", q, outs.len())?;
    let mut h = Matrix::zeros(q, q);
    for (col, g) in outs.iter().enumerate() {
        let proj = design.t_matmul(g)?;
        for (row, v) in proj.as_slice().iter().enumerate() {
            h.set(row, col, *v);
        }
    }
    let mut sym = Matrix::zeros(q, q);
    for i in 0..q {
        for j in 0..q {
            sym.set(i, j, 0.5 * (h.get(i, j) + h.get(j, i)));
        }
    }
    Ok(sym)
}
