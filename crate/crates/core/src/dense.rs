//! Brute-force reference backend.
//!
//! Everything here materialises `n × m` matrices and follows the textbook
//! formulas in unshifted form, so it can check the streaming code paths on
//! small problems. The Hessian is assembled explicitly and inverted with an
//! eigen-decomposition.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::config::{Schedule, SinkhornConfig};
use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::measure::{compensated_sum, CostSpec, DiscreteMeasure};
use crate::potentials::{shift_potentials, shifts, unshift_potentials, ShiftedPotentials};
use crate::solver::{annealing_start, violation, SolveReport};
use crate::stream::score;

/// Relative cut-off for eigenvalues treated as zero in the pseudoinverse.
pub const DEFAULT_PINV_THRESHOLD: f64 = 1e-10;

/// Materialised cost matrix `C_ij = C(x_i, y_j)`.
pub fn dense_cost(src: &DiscreteMeasure, tgt: &DiscreteMeasure, cost: &CostSpec) -> Result<Matrix> {
    cost.validate(src, tgt)?;
    let (n, m) = (src.len(), tgt.len());
    let mut c = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let li = src.labels().map(|l| l[i]);
            let lj = tgt.labels().map(|l| l[j]);
            c.set(i, j, cost.eval(src.points().row(i), tgt.points().row(j), li, lj));
        }
    }
    Ok(c)
}

/// Materialised score matrix `S_X(ĝ)`, entry for entry the values a streaming
/// `f̂` update folds into its log-sum-exp.
pub fn dense_scores(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    g_hat: &[f64],
    cost: &CostSpec,
    eps: f64,
) -> Result<Matrix> {
    cost.validate(src, tgt)?;
    check_len("g_hat", tgt.len(), g_hat.len())?;
    let two_l1 = 2.0 * cost.lambda1();
    let l2 = cost.lambda2();
    let inv_eps = 1.0 / eps;
    let mut s = Matrix::zeros(src.len(), tgt.len());
    for i in 0..src.len() {
        for j in 0..tgt.len() {
            let bias = g_hat[j] + eps * tgt.weights()[j].ln();
            let lab = match (cost.table(), src.labels(), tgt.labels()) {
                (Some(t), Some(li), Some(lj)) => l2 * t.lookup(li[i], lj[j]),
                _ => 0.0,
            };
            let xy = dot(src.points().row(i), tgt.points().row(j));
            s.set(i, j, score(two_l1, xy, bias, lab, inv_eps));
        }
    }
    Ok(s)
}

fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Budget guard for the dense backend.
#[derive(Clone, Copy, Debug)]
pub struct DenseBackend {
    pub byte_budget: Option<u64>,
}

impl DenseBackend {
    pub fn new(byte_budget: Option<u64>) -> Self {
        DenseBackend { byte_budget }
    }

    /// Bytes a dense solve holds at once: the cost matrix plus one scratch copy.
    pub fn required_bytes(n: usize, m: usize) -> u64 {
        2 * 8 * n as u64 * m as u64
    }

    pub fn check(&self, n: usize, m: usize) -> Result<()> {
        let required = Self::required_bytes(n, m);
        match self.byte_budget {
            Some(budget) if required > budget => Err(Error::MemoryBudget { required, budget }),
            _ => Ok(()),
        }
    }

    pub fn sinkhorn(
        &self,
        src: &DiscreteMeasure,
        tgt: &DiscreteMeasure,
        cost: &CostSpec,
        cfg: &SinkhornConfig,
    ) -> Result<SolveReport> {
        self.check(src.len(), tgt.len())?;
        dense_sinkhorn(src, tgt, cost, cfg)
    }
}

struct DenseState<'a> {
    c: Matrix,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    a: &'a [f64],
    b: &'a [f64],
}

impl DenseState<'_> {
    fn f_from(&self, g: &[f64], eps: f64) -> Vec<f64> {
        (0..self.c.rows())
            .map(|i| {
                let row = self.c.row(i);
                -eps * lse((0..row.len()).map(|j| (g[j] - row[j]) / eps + self.log_b[j]))
            })
            .collect()
    }

    fn g_from(&self, f: &[f64], eps: f64) -> Vec<f64> {
        (0..self.c.cols())
            .map(|j| {
                -eps * lse((0..self.c.rows()).map(|i| (f[i] - self.c.get(i, j)) / eps + self.log_a[i]))
            })
            .collect()
    }

    fn marginals(&self, f: &[f64], g: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.c.rows(), self.c.cols());
        let mut r = vec![0.0; n];
        let mut col = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                let p = self.a[i] * self.b[j] * ((f[i] + g[j] - self.c.get(i, j)) / eps).exp();
                r[i] += p;
                col[j] += p;
            }
        }
        (r, col)
    }
}

/// Sinkhorn on the materialised cost matrix, following the same schedule,
/// annealing and stopping rules as the streaming solver.
pub fn dense_sinkhorn(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &CostSpec,
    cfg: &SinkhornConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let st = DenseState {
        c: dense_cost(src, tgt, cost)?,
        log_a: src.weights().iter().map(|w| w.ln()).collect(),
        log_b: tgt.weights().iter().map(|w| w.ln()).collect(),
        a: src.weights(),
        b: tgt.weights(),
    };
    let mut f = vec![0.0; src.len()];
    let mut g = vec![0.0; tgt.len()];
    let seq = cfg.eps_sequence(annealing_start(src, tgt, cost));
    let monitor = cfg.marginal_tol > 0.0;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let check = |f: &[f64], g: &[f64], history: &mut Vec<f64>| {
        let (r, c) = st.marginals(f, g, cfg.eps);
        let v = violation(&r, &c, st.a, st.b);
        history.push(v);
        v <= cfg.marginal_tol
    };
    if monitor && seq.first() == Some(&cfg.eps) && check(&f, &g, &mut history) {
        converged = true;
    } else {
        for (k, &eps) in seq.iter().enumerate() {
            match cfg.schedule {
                Schedule::Alternating => {
                    f = st.f_from(&g, eps);
                    g = st.g_from(&f, eps);
                }
                Schedule::Symmetric => {
                    let nf = st.f_from(&g, eps);
                    let ng = st.g_from(&f, eps);
                    f = f.iter().zip(&nf).map(|(o, n)| 0.5 * o + 0.5 * n).collect();
                    g = g.iter().zip(&ng).map(|(o, n)| 0.5 * o + 0.5 * n).collect();
                }
            }
            if f.iter().chain(&g).any(|v| !v.is_finite()) {
                return Err(Error::Diverged { iteration: k + 1 });
            }
            iterations = k + 1;
            if monitor && eps == cfg.eps && check(&f, &g, &mut history) {
                converged = true;
                break;
            }
        }
    }
    let (r, c) = st.marginals(&f, &g, cfg.eps);
    let fa: Vec<f64> = f.iter().zip(st.a).map(|(x, w)| x * w).collect();
    let gb: Vec<f64> = g.iter().zip(st.b).map(|(x, w)| x * w).collect();
    let dual = compensated_sum(&fa) + compensated_sum(&gb) - cfg.eps * (compensated_sum(&r) - 1.0);
    let (alpha, beta) = shifts(src, tgt, cost)?;
    Ok(SolveReport {
        potentials: shift_potentials(&f, &g, &alpha, &beta, cfg.eps)?,
        iterations,
        marginal_violation: violation(&r, &c, st.a, st.b),
        dual_cost: dual,
        eps_history: seq[..iterations].to_vec(),
        violation_history: history,
        converged,
    })
}

/// Materialised plan `P_ij = a_i b_j exp((f_i + g_j - C_ij)/ε)`.
pub fn dense_plan(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    p: &ShiftedPotentials,
    cost: &CostSpec,
) -> Result<Matrix> {
    let c = dense_cost(src, tgt, cost)?;
    let (alpha, beta) = shifts(src, tgt, cost)?;
    let (f, g) = unshift_potentials(p, &alpha, &beta)?;
    let eps = p.eps();
    let mut plan = Matrix::zeros(src.len(), tgt.len());
    for i in 0..src.len() {
        for j in 0..tgt.len() {
            let v = src.weights()[i] * tgt.weights()[j] * ((f[i] + g[j] - c.get(i, j)) / eps).exp();
            plan.set(i, j, v);
        }
    }
    if !plan.is_finite() {
        return Err(Error::NonFinite("dense plan".into()));
    }
    Ok(plan)
}

/// Row sums of a plan.
pub fn row_sums(plan: &Matrix) -> Vec<f64> {
    (0..plan.rows()).map(|i| plan.row(i).iter().sum()).collect()
}

/// Column sums of a plan.
pub fn col_sums(plan: &Matrix) -> Vec<f64> {
    let mut c = vec![0.0; plan.cols()];
    for i in 0..plan.rows() {
        for (cj, v) in c.iter_mut().zip(plan.row(i)) {
            *cj += v;
        }
    }
    c
}

/// `∇_X = 2λ₁ (diag(P 1) X - P Y)`.
pub fn dense_gradient(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    plan: &Matrix,
    cost: &CostSpec,
) -> Result<Matrix> {
    check_len("plan rows", src.len(), plan.rows())?;
    check_len("plan cols", tgt.len(), plan.cols())?;
    let r = row_sums(plan);
    let py = plan.matmul(tgt.points())?;
    let rx = src.points().scale_rows(&r)?;
    Ok(rx.add_scaled(-1.0, &py)?.scale(2.0 * cost.lambda1()))
}

/// The pieces of the explicit Hessian, in dense form.
#[derive(Clone, Debug)]
pub struct DenseHessian {
    /// `(1/ε) Rᵀ H† R + E`, of size `nd × nd`, indexed `(k d + t, l d + s)`.
    pub matrix: DMatrix<f64>,
    /// `R ∈ ℝ^{(n+m) × nd}`.
    pub r: DMatrix<f64>,
    /// `H = [[diag(r), P], [Pᵀ, diag(c)]]`.
    pub h: DMatrix<f64>,
    /// Block-diagonal explicit term `E`.
    pub e: DMatrix<f64>,
    pub n: usize,
    pub d: usize,
}

/// Assembles the Hessian of `OT_ε` with respect to the source points for the
/// squared Euclidean cost, using the plan's own marginals.
pub fn dense_hessian(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    plan: &Matrix,
    eps: f64,
    pinv_threshold: f64,
) -> Result<DenseHessian> {
    let (n, m, d) = (src.len(), tgt.len(), src.dim());
    check_len("plan rows", n, plan.rows())?;
    check_len("plan cols", m, plan.cols())?;
    let r = row_sums(plan);
    let c = col_sums(plan);
    let x = src.points();
    let y = tgt.points();

    let mut rmat = DMatrix::<f64>::zeros(n + m, n * d);
    let mut e = DMatrix::<f64>::zeros(n * d, n * d);
    for k in 0..n {
        for j in 0..m {
            let pkj = plan.get(k, j);
            for t in 0..d {
                let bktj = 2.0 * (x.get(k, t) - y.get(j, t)) * pkj;
                rmat[(k, k * d + t)] += bktj;
                rmat[(n + j, k * d + t)] = bktj;
                for s in 0..d {
                    let outer = (x.get(k, t) - y.get(j, t)) * (x.get(k, s) - y.get(j, s));
                    e[(k * d + t, k * d + s)] -= 4.0 / eps * pkj * outer;
                }
            }
        }
        for t in 0..d {
            e[(k * d + t, k * d + t)] += 2.0 * r[k];
        }
    }

    let mut h = DMatrix::<f64>::zeros(n + m, n + m);
    for i in 0..n {
        h[(i, i)] = r[i];
        for j in 0..m {
            h[(i, n + j)] = plan.get(i, j);
            h[(n + j, i)] = plan.get(i, j);
        }
    }
    for j in 0..m {
        h[(n + j, n + j)] = c[j];
    }

    let h_pinv = pseudo_inverse(&h, pinv_threshold)?;
    let matrix = rmat.transpose() * (&h_pinv * &rmat) / eps + &e;
    Ok(DenseHessian {
        matrix,
        r: rmat,
        h,
        e,
        n,
        d,
    })
}

/// Symmetric pseudoinverse dropping eigenvalues below `threshold · λ_max`.
pub fn pseudo_inverse(a: &DMatrix<f64>, threshold: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = threshold * lmax;
    let inv = eig
        .eigenvalues
        .map(|l| if l.abs() > cut { 1.0 / l } else { 0.0 });
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&inv) * v.transpose())
}

/// `𝒯 A` with the dense Hessian, `A ∈ ℝ^{n×d}`.
pub fn dense_hvp(h: &DenseHessian, a: &Matrix) -> Result<Matrix> {
    check_len("direction rows", h.n, a.rows())?;
    check_len("direction cols", h.d, a.cols())?;
    let v = nalgebra::DVector::from_column_slice(a.as_slice());
    let out = &h.matrix * v;
    Matrix::from_vec(h.n, h.d, out.as_slice().to_vec())
}

/// Dense Schur complement `diag(c) - Pᵀ diag(r)⁻¹ P` of the plan's marginal system.
pub fn dense_schur(plan: &Matrix) -> Result<DMatrix<f64>> {
    let r = row_sums(plan);
    if let Some(i) = r.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroMarginal { index: i });
    }
    let c = col_sums(plan);
    let (n, m) = (plan.rows(), plan.cols());
    let p = DMatrix::from_row_slice(n, m, plan.as_slice());
    let mut scaled = p.clone();
    for i in 0..n {
        for j in 0..m {
            scaled[(i, j)] /= r[i];
        }
    }
    Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(c)) - p.transpose() * scaled)
}
