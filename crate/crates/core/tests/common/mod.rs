#![allow(dead_code)]

use streamot::linalg::Matrix;
use streamot::measure::DiscreteMeasure;
use streamot::potentials::ShiftedPotentials;
use streamot::rng::Rng;

pub fn uniform_cloud(rng: &mut Rng, n: usize, d: usize) -> DiscreteMeasure {
    DiscreteMeasure::uniform(rng.normal_matrix(n, d, 1.0)).unwrap()
}

pub fn weighted_cloud(rng: &mut Rng, n: usize, d: usize) -> DiscreteMeasure {
    let x = rng.normal_matrix(n, d, 1.0);
    DiscreteMeasure::new(x, rng.simplex(n), None).unwrap()
}

pub fn pair(seed: u64, n: usize, m: usize, d: usize) -> (DiscreteMeasure, DiscreteMeasure) {
    let mut rng = Rng::new(seed);
    (weighted_cloud(&mut rng, n, d), weighted_cloud(&mut rng, m, d))
}

pub fn sqdist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Unshifted `f_i = -ε log Σ_j b_j exp((g_j - C_ij)/ε)` with squared Euclidean cost.
pub fn naive_f(src: &DiscreteMeasure, tgt: &DiscreteMeasure, g: &[f64], eps: f64) -> Vec<f64> {
    (0..src.len())
        .map(|i| {
            let terms: Vec<f64> = (0..tgt.len())
                .map(|j| {
                    tgt.weights()[j].ln() + (g[j] - sqdist(src.points().row(i), tgt.points().row(j))) / eps
                })
                .collect();
            -eps * lse(&terms)
        })
        .collect()
}

pub fn naive_g(src: &DiscreteMeasure, tgt: &DiscreteMeasure, f: &[f64], eps: f64) -> Vec<f64> {
    naive_f(tgt, src, f, eps)
}

/// `P_ij = a_i b_j exp((f_i + g_j - C_ij)/ε)` from unshifted potentials.
pub fn naive_plan(src: &DiscreteMeasure, tgt: &DiscreteMeasure, f: &[f64], g: &[f64], eps: f64) -> Matrix {
    let mut p = Matrix::zeros(src.len(), tgt.len());
    for i in 0..src.len() {
        for j in 0..tgt.len() {
            let c = sqdist(src.points().row(i), tgt.points().row(j));
            p.set(i, j, src.weights()[i] * tgt.weights()[j] * ((f[i] + g[j] - c) / eps).exp());
        }
    }
    p
}

pub fn norms(x: &Matrix) -> Vec<f64> {
    (0..x.rows()).map(|i| x.row(i).iter().map(|v| v * v).sum()).collect()
}

pub fn unshift(src: &DiscreteMeasure, tgt: &DiscreteMeasure, p: &ShiftedPotentials) -> (Vec<f64>, Vec<f64>) {
    let a = norms(src.points());
    let b = norms(tgt.points());
    (
        p.f_hat().iter().zip(&a).map(|(f, s)| f + s).collect(),
        p.g_hat().iter().zip(&b).map(|(g, s)| g + s).collect(),
    )
}

pub fn shift(src: &DiscreteMeasure, tgt: &DiscreteMeasure, f: &[f64], g: &[f64], eps: f64) -> ShiftedPotentials {
    let a = norms(src.points());
    let b = norms(tgt.points());
    ShiftedPotentials::new(
        f.iter().zip(&a).map(|(f, s)| f - s).collect(),
        g.iter().zip(&b).map(|(g, s)| g - s).collect(),
        eps,
    )
    .unwrap()
}

/// Alternating iterations of the naive half-steps from zero potentials.
pub fn naive_sinkhorn(src: &DiscreteMeasure, tgt: &DiscreteMeasure, eps: f64, iters: usize) -> (Vec<f64>, Vec<f64>) {
    let mut f = vec![0.0; src.len()];
    let mut g = vec![0.0; tgt.len()];
    for _ in 0..iters {
        f = naive_f(src, tgt, &g, eps);
        g = naive_g(src, tgt, &f, eps);
    }
    (f, g)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `max|a - b| / max(1, max|b|)`.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    max_abs_diff(a, b) / scale
}

pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}
