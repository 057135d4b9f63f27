//! Unpreconditioned conjugate gradients.

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, norm2, Matrix};

/// Result of a CG solve.
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Achieved `‖b - A x‖ / ‖b‖` (recursive residual).
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` for a symmetric positive (semi)definite operator, starting from zero.
///
/// Stops when the relative residual reaches `tol` or after `max_iters` iterations; in
/// the latter case the last iterate is returned with `converged = false`.
pub fn cg_solve<F>(mut apply: F, rhs: &[f64], tol: f64, max_iters: usize) -> Result<CgOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let b_norm = norm2(rhs);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    if !b_norm.is_finite() {
        return Err(Error::NonFinite("CG right-hand side".into()));
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iters {
        let ap = apply(&p)?;
        check_len("CG operator output", n, ap.len())?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::NonFinite("CG curvature".into()));
        }
        iterations += 1;
        if pap <= 0.0 {
            // Direction of non-positive curvature: nothing more to gain.
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        rel = rr_new.sqrt() / b_norm;
        if !rel.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CG iterate".into()));
        }
        if rel <= tol {
            return Ok(CgOutcome {
                solution: x,
                iterations,
                relative_residual: rel,
                converged: true,
            });
        }
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    Ok(CgOutcome {
        solution: x,
        iterations,
        relative_residual: rel,
        converged: rel <= tol,
    })
}

/// Independent CG solves for every column of `rhs`, advanced in lockstep so each
/// iteration needs one operator application on a block of columns.
///
/// Columns that converge are frozen; the operator still sees them, which keeps the
/// block shape fixed.
pub(crate) fn cg_solve_columns<F>(
    mut apply: F,
    rhs: &Matrix,
    tol: f64,
    max_iters: usize,
) -> Result<(Matrix, Vec<usize>, Vec<f64>)>
where
    F: FnMut(&Matrix) -> Result<Matrix>,
{
    let (n, k) = (rhs.rows(), rhs.cols());
    let col_dot = |a: &Matrix, b: &Matrix| -> Vec<f64> {
        let mut s = vec![0.0; k];
        for i in 0..n {
            for (c, sc) in s.iter_mut().enumerate() {
                *sc += a.get(i, c) * b.get(i, c);
            }
        }
        s
    };
    let mut x = Matrix::zeros(n, k);
    let mut r = rhs.clone();
    let mut p = rhs.clone();
    let b_norm: Vec<f64> = col_dot(rhs, rhs).iter().map(|v| v.sqrt()).collect();
    let mut rr = col_dot(&r, &r);
    let mut active: Vec<bool> = b_norm.iter().map(|&b| b > 0.0).collect();
    let mut iters = vec![0usize; k];
    let mut rel: Vec<f64> = active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    for _ in 0..max_iters {
        if !active.iter().any(|&a| a) {
            break;
        }
        let ap = apply(&p)?;
        let pap = col_dot(&p, &ap);
        let mut alpha = vec![0.0; k];
        for c in 0..k {
            if !active[c] {
                continue;
            }
            iters[c] += 1;
            if !pap[c].is_finite() {
                return Err(Error::NonFinite("CG curvature".into()));
            }
            if pap[c] <= 0.0 {
                active[c] = false;
                continue;
            }
            alpha[c] = rr[c] / pap[c];
        }
        for i in 0..n {
            for c in 0..k {
                if alpha[c] != 0.0 {
                    x.set(i, c, x.get(i, c) + alpha[c] * p.get(i, c));
                    r.set(i, c, r.get(i, c) - alpha[c] * ap.get(i, c));
                }
            }
        }
        let rr_new = col_dot(&r, &r);
        for c in 0..k {
            if alpha[c] == 0.0 {
                continue;
            }
            rel[c] = rr_new[c].sqrt() / b_norm[c];
            if !rel[c].is_finite() {
                return Err(Error::NonFinite("CG iterate".into()));
            }
            if rel[c] <= tol {
                active[c] = false;
            }
            let beta = rr_new[c] / rr[c];
            for i in 0..n {
                p.set(i, c, r.get(i, c) + beta * p.get(i, c));
            }
            rr[c] = rr_new[c];
        }
    }
    Ok((x, iters, rel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use nalgebra::DMatrix;

    #[test]
    fn identity_operator_one_iteration() {
        let b = vec![1.0, -2.0, 3.0];
        let out = cg_solve(|v| Ok(v.to_vec()), &b, 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.solution, b);
    }

    #[test]
    fn zero_rhs_returns_zero_without_iterating() {
        let out = cg_solve(|v| Ok(v.to_vec()), &[0.0; 4], 1e-6, 10).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution, vec![0.0; 4]);
    }

    fn spd(seed: u64, n: usize) -> DMatrix<f64> {
        let mut rng = Rng::new(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.normal());
        &g * g.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn spd_8x8_matches_direct_solve() {
        let a = spd(11, 8);
        let mut rng = Rng::new(12);
        let b: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let direct = a.clone().lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        let out = cg_solve(
            |v| Ok((&a * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec()),
            &b,
            1e-14,
            100,
        )
        .unwrap();
        for (x, y) in out.solution.iter().zip(direct.iter()) {
            assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn non_finite_operator_errors() {
        let r = cg_solve(|v| Ok(v.iter().map(|_| f64::NAN).collect()), &[1.0, 1.0], 1e-6, 5);
        assert!(r.is_err());
    }

    #[test]
    fn lockstep_columns_match_single_solves() {
        let a = spd(3, 6);
        let mut rng = Rng::new(4);
        let rhs = rng.normal_matrix(6, 3, 1.0);
        let apply_block = |m: &Matrix| -> Result<Matrix> {
            let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
            let out = &a * dm;
            let mut res = Matrix::zeros(m.rows(), m.cols());
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    res.set(i, j, out[(i, j)]);
                }
            }
            Ok(res)
        };
        let (x, iters, _) = cg_solve_columns(apply_block, &rhs, 1e-12, 50).unwrap();
        for c in 0..3 {
            let single = cg_solve(
                |v| Ok((&a * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec()),
                &rhs.column(c),
                1e-12,
                50,
            )
            .unwrap();
            assert_eq!(single.iterations, iters[c]);
            for i in 0..6 {
                assert!((x.get(i, c) - single.solution[i]).abs() < 1e-12);
            }
        }
    }
}
