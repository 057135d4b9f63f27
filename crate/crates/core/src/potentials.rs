//! Shifted dual potentials `f̂ = f - α`, `ĝ = g - β`.

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::measure::{CostSpec, DiscreteMeasure};

/// Dual potentials with the squared norms subtracted, together with the `ε` they belong to.
///
/// For the squared Euclidean cost `α_i = ‖x_i‖²` and `β_j = ‖y_j‖²`; a label-augmented
/// cost scales both by `λ₁`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedPotentials {
    f_hat: Vec<f64>,
    g_hat: Vec<f64>,
    eps: f64,
}

impl ShiftedPotentials {
    pub fn new(f_hat: Vec<f64>, g_hat: Vec<f64>, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {eps}")));
        }
        if f_hat.iter().chain(&g_hat).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("shifted potentials".into()));
        }
        Ok(ShiftedPotentials { f_hat, g_hat, eps })
    }

    /// The shifted form of `f = g = 0`.
    pub fn zero_init(
        src: &DiscreteMeasure,
        tgt: &DiscreteMeasure,
        cost: &CostSpec,
        eps: f64,
    ) -> Result<Self> {
        let (alpha, beta) = shifts(src, tgt, cost)?;
        Self::new(
            alpha.iter().map(|a| -a).collect(),
            beta.iter().map(|b| -b).collect(),
            eps,
        )
    }

    pub fn f_hat(&self) -> &[f64] {
        &self.f_hat
    }

    pub fn g_hat(&self) -> &[f64] {
        &self.g_hat
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>, f64) {
        (self.f_hat, self.g_hat, self.eps)
    }
}

/// Row-wise squared norms `‖x_i‖²`.
pub fn squared_norms(points: &Matrix) -> Result<Vec<f64>> {
    let out: Vec<f64> = (0..points.rows())
        .map(|i| {
            let r = points.row(i);
            dot(r, r)
        })
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("squared norms".into()));
    }
    Ok(out)
}

/// The shifts `(α, β)` for a cost: squared norms scaled by `λ₁`.
pub fn shifts(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: &CostSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let l1 = cost.lambda1();
    let mut a = squared_norms(src.points())?;
    let mut b = squared_norms(tgt.points())?;
    a.iter_mut().for_each(|v| *v *= l1);
    b.iter_mut().for_each(|v| *v *= l1);
    Ok((a, b))
}

/// `(f̂ + α, ĝ + β)`.
pub fn unshift_potentials(
    p: &ShiftedPotentials,
    alpha: &[f64],
    beta: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("alpha", p.f_hat.len(), alpha.len())?;
    check_len("beta", p.g_hat.len(), beta.len())?;
    Ok((
        p.f_hat.iter().zip(alpha).map(|(f, a)| f + a).collect(),
        p.g_hat.iter().zip(beta).map(|(g, b)| g + b).collect(),
    ))
}

/// `(f - α, g - β)` as shifted potentials at `eps`.
pub fn shift_potentials(
    f: &[f64],
    g: &[f64],
    alpha: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<ShiftedPotentials> {
    check_len("alpha", f.len(), alpha.len())?;
    check_len("beta", g.len(), beta.len())?;
    ShiftedPotentials::new(
        f.iter().zip(alpha).map(|(f, a)| f - a).collect(),
        g.iter().zip(beta).map(|(g, b)| g - b).collect(),
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn squared_norms_of_simple_rows() {
        let x = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0], [1.0, -1.0]]).unwrap();
        assert_eq!(squared_norms(&x).unwrap(), vec![25.0, 0.0, 2.0]);
    }

    #[test]
    fn zero_init_is_negative_norms() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.0, 3.0], [1.0, 1.0]]).unwrap();
        let p = ShiftedPotentials::zero_init(
            &DiscreteMeasure::uniform(x).unwrap(),
            &DiscreteMeasure::uniform(y).unwrap(),
            &CostSpec::SquaredEuclidean,
            0.5,
        )
        .unwrap();
        assert_eq!(p.f_hat(), &[-5.0]);
        assert_eq!(p.g_hat(), &[-9.0, -2.0]);
    }

    #[test]
    fn rejects_bad_eps_and_nan() {
        assert!(ShiftedPotentials::new(vec![0.0], vec![0.0], 0.0).is_err());
        assert!(ShiftedPotentials::new(vec![f64::NAN], vec![0.0], 1.0).is_err());
    }

    proptest! {
        // One subtraction and one addition: the round trip is exact up to one rounding
        // of the larger operand.
        #[test]
        fn shift_round_trip(
            f in prop::collection::vec(-1e3f64..1e3, 1..20),
            a in prop::collection::vec(0.0f64..1e3, 20),
        ) {
            let n = f.len();
            let alpha = &a[..n];
            let p = shift_potentials(&f, &f, alpha, alpha, 0.1).unwrap();
            let (f2, g2) = unshift_potentials(&p, alpha, alpha).unwrap();
            for i in 0..n {
                let tol = 2.0 * f64::EPSILON * f[i].abs().max(alpha[i]);
                prop_assert!((f2[i] - f[i]).abs() <= tol);
                prop_assert!((g2[i] - f[i]).abs() <= tol);
            }
        }
    }
}
