//! Restarted Lanczos for the smallest eigenvalue of a symmetric operator.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, norm2};
use crate::rng::Rng;

/// Settings for [`lanczos_min_eig`].
#[derive(Clone, Copy, Debug)]
pub struct LanczosConfig {
    /// Krylov subspace size per cycle.
    pub subspace: usize,
    /// Stop once the Ritz residual `‖A y - θ y‖` is at most `tol · max(1, |θ|)`.
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        LanczosConfig {
            subspace: 6,
            tol: 1e-6,
            max_restarts: 200,
            seed: 0x5eed,
        }
    }
}

/// Estimate of the smallest eigenvalue.
#[derive(Clone, Debug)]
pub struct LanczosEstimate {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub matvecs: usize,
    pub converged: bool,
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for v in basis {
            let h = dot(v, w);
            w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= h * vi);
        }
    }
}

fn random_unit(rng: &mut Rng, dim: usize, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        orthogonalize(&mut v, basis);
        let nv = norm2(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return Some(v);
        }
    }
    None
}

/// Smallest algebraic eigenvalue of the symmetric operator `matvec` on `ℝ^dim`.
///
/// Each cycle builds a Krylov basis of size `subspace` with full
/// reorthogonalisation and restarts from the current Ritz vector. A breakdown
/// (invariant subspace) continues with a fresh seeded random vector orthogonal to
/// the basis.
pub fn lanczos_min_eig<F>(mut matvec: F, dim: usize, cfg: &LanczosConfig) -> Result<LanczosEstimate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if dim == 0 || cfg.subspace == 0 {
        return Err(Error::invalid("Lanczos needs a positive dimension and subspace"));
    }
    let k = cfg.subspace.min(dim);
    let mut rng = Rng::new(cfg.seed);
    let mut start = random_unit(&mut rng, dim, &[]).expect("dim > 0");
    let mut matvecs = 0;
    let mut best: Option<LanczosEstimate> = None;
    for _ in 0..=cfg.max_restarts {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alphas = Vec::with_capacity(k);
        let mut betas = Vec::with_capacity(k);
        let mut tail = 0.0;
        for j in 0..k {
            let mut w = matvec(&basis[j])?;
            check_len("Lanczos operator output", dim, w.len())?;
            matvecs += 1;
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("Lanczos matvec".into()));
            }
            let a = dot(&basis[j], &w);
            alphas.push(a);
            orthogonalize(&mut w, &basis);
            let b = norm2(&w);
            if j + 1 == k {
                tail = b;
                break;
            }
            let scale = alphas.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            if b <= 1e-12 * scale {
                match random_unit(&mut rng, dim, &basis) {
                    Some(v) => {
                        betas.push(0.0);
                        basis.push(v);
                    }
                    None => break,
                }
            } else {
                betas.push(b);
                basis.push(w.iter().map(|x| x / b).collect());
            }
        }
        let m = alphas.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alphas[i];
            if i + 1 < m {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (idx, theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let s = eig.eigenvectors.column(idx);
        let mut y = vec![0.0; dim];
        for (i, v) in basis.iter().take(m).enumerate() {
            y.iter_mut().zip(v).for_each(|(yi, vi)| *yi += s[i] * vi);
        }
        let ny = norm2(&y);
        y.iter_mut().for_each(|v| *v /= ny);
        let residual = if m == dim { 0.0 } else { (tail * s[m - 1]).abs() };
        let est = LanczosEstimate {
            value: theta,
            vector: y.clone(),
            residual,
            matvecs,
            converged: residual <= cfg.tol * theta.abs().max(1.0),
        };
        if est.converged {
            return Ok(est);
        }
        best = Some(est);
        start = y;
    }
    Ok(best.expect("at least one cycle"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_op(a: &DMatrix<f64>) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + '_ {
        move |v: &[f64]| Ok((a * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec())
    }

    #[test]
    fn diagonal_operator() {
        let q = 40;
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(q, |i, _| (i + 1) as f64));
        let est = lanczos_min_eig(dense_op(&a), q, &LanczosConfig::default()).unwrap();
        assert!((est.value - 1.0).abs() < 1e-6, "{}", est.value);
    }

    #[test]
    fn negation_flips_the_estimate_of_the_extreme_end() {
        let q = 20;
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(q, |i, _| (i + 1) as f64));
        let neg = -a.clone();
        let lo = lanczos_min_eig(dense_op(&neg), q, &LanczosConfig::default()).unwrap();
        assert!((lo.value + q as f64).abs() < 1e-6);
    }

    #[test]
    fn seeded_symmetric_32_matches_dense_eig() {
        let mut rng = Rng::new(99);
        let g = DMatrix::from_fn(32, 32, |_, _| rng.normal());
        let a = (&g + g.transpose()) * 0.5;
        let exact = SymmetricEigen::new(a.clone()).eigenvalues.min();
        let cfg = LanczosConfig {
            tol: 1e-8,
            max_restarts: 2000,
            ..Default::default()
        };
        let est = lanczos_min_eig(dense_op(&a), 32, &cfg).unwrap();
        assert!((est.value - exact).abs() <= 1e-6, "{} vs {exact}", est.value);
    }

    #[test]
    fn small_dimension_is_exact_in_one_cycle() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        let est = lanczos_min_eig(dense_op(&a), 3, &LanczosConfig::default()).unwrap();
        assert!((est.value - (2.0 - 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(est.matvecs, 3);
    }
}
