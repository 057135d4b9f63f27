//! Tiled passes over the implicit score matrix.
//!
//! A pass walks row blocks of one side and column tiles of the other, forms the
//! score tile on the fly and folds it into per-row running statistics. The score
//! matrix never exists in full.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, Real};
use crate::measure::{CostSpec, DiscreteMeasure};
use crate::stream::ledger::{IoLedger, TransportKind};

/// One score entry `(2λ₁ x·y + bias - λ₂W) / ε`, written once so every backend
/// that forms scores agrees bit for bit.
#[inline(always)]
pub(crate) fn score<T: Real>(two_l1: T, xy: T, bias: T, label_term: T, inv_eps: T) -> T {
    (two_l1 * xy + bias - label_term) * inv_eps
}

/// Per-row running maximum and rescaled sum of an online log-sum-exp.
#[derive(Clone, Debug)]
pub struct RowStats<T> {
    max: Vec<T>,
    sum: Vec<T>,
}

impl<T: Real> RowStats<T> {
    pub fn new(rows: usize) -> Self {
        RowStats {
            max: vec![T::neg_infinity(); rows],
            sum: vec![T::zero(); rows],
        }
    }

    /// Folds one tile of scores for `row` into the running statistics.
    #[inline]
    pub fn absorb(&mut self, row: usize, scores: &[T]) {
        self.absorb_with(row, scores, false)
    }

    #[inline]
    pub(crate) fn absorb_with(&mut self, row: usize, scores: &[T], broken: bool) {
        let tile_max = scores.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
        let m_old = self.max[row];
        let m_new = m_old.max(tile_max);
        let mut acc = T::zero();
        for &s in scores {
            acc = acc + (s - m_new).exp_flush();
        }
        let rescale = if broken { T::one() } else { (m_old - m_new).exp_flush() };
        self.sum[row] = self.sum[row] * rescale + acc;
        self.max[row] = m_new;
    }

    pub fn running_max(&self, row: usize) -> T {
        self.max[row]
    }

    /// `log Σ exp` over everything absorbed so far.
    pub fn lse(&self, row: usize) -> T {
        self.max[row] + self.sum[row].ln()
    }
}

/// Label table converted to the kernel precision.
struct Table<T> {
    entries: Vec<T>,
    size: usize,
    row_off: usize,
    col_off: usize,
}

/// Source and target data converted once to the kernel precision.
pub(crate) struct Prepared<'a, T: Real> {
    x: Cow<'a, [T]>,
    y: Cow<'a, [T]>,
    a: Vec<T>,
    b: Vec<T>,
    log_a: Vec<T>,
    log_b: Vec<T>,
    lx: Option<&'a [u32]>,
    ly: Option<&'a [u32]>,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    two_l1: T,
    l2: T,
    table: Option<Table<T>>,
}

/// One side of a pass.
#[derive(Clone, Copy)]
pub(crate) struct Side<'p, T> {
    pub pts: &'p [T],
    pub w: &'p [T],
    pub log_w: &'p [T],
    pub labels: Option<&'p [u32]>,
    pub len: usize,
}

/// Orientation of a pass: rows are reduced into, columns are streamed.
pub(crate) struct Pass<'p, T: Real> {
    pub rows: Side<'p, T>,
    pub cols: Side<'p, T>,
    d: usize,
    two_l1: T,
    l2: T,
    table: Option<&'p Table<T>>,
    transposed: bool,
    pub row_block: usize,
    pub col_block: usize,
    pub broken: bool,
}

impl<'a, T: Real> Prepared<'a, T> {
    pub fn new(src: &'a DiscreteMeasure, tgt: &'a DiscreteMeasure, cost: &CostSpec) -> Result<Self> {
        cost.validate(src, tgt)?;
        let to_t = |v: &[f64]| v.iter().map(|&x| T::from_f64(x)).collect::<Vec<T>>();
        let table = cost.table().map(|t| {
            let (row_off, col_off) = t.offsets();
            Table {
                entries: to_t(t.entries()),
                size: t.size(),
                row_off,
                col_off,
            }
        });
        Ok(Prepared {
            x: T::cow_from_f64(src.points().as_slice()),
            y: T::cow_from_f64(tgt.points().as_slice()),
            a: to_t(src.weights()),
            b: to_t(tgt.weights()),
            log_a: src.weights().iter().map(|w| T::from_f64(w.ln())).collect(),
            log_b: tgt.weights().iter().map(|w| T::from_f64(w.ln())).collect(),
            lx: table.as_ref().and(src.labels()),
            ly: table.as_ref().and(tgt.labels()),
            n: src.len(),
            m: tgt.len(),
            d: src.dim(),
            two_l1: T::from_f64(2.0 * cost.lambda1()),
            l2: T::from_f64(cost.lambda2()),
            table,
        })
    }

    /// Rows are source points, columns target points; tiles are `B_N × B_M`.
    pub fn forward(&self, row_block: usize, col_block: usize, broken: bool) -> Pass<'_, T> {
        Pass {
            rows: Side {
                pts: &self.x,
                w: &self.a,
                log_w: &self.log_a,
                labels: self.lx,
                len: self.n,
            },
            cols: Side {
                pts: &self.y,
                w: &self.b,
                log_w: &self.log_b,
                labels: self.ly,
                len: self.m,
            },
            d: self.d,
            two_l1: self.two_l1,
            l2: self.l2,
            table: self.table.as_ref(),
            transposed: false,
            row_block,
            col_block,
            broken,
        }
    }

    /// Rows are target points, columns source points.
    pub fn backward(&self, row_block: usize, col_block: usize, broken: bool) -> Pass<'_, T> {
        let f = self.forward(col_block, row_block, broken);
        Pass {
            rows: f.cols,
            cols: f.rows,
            transposed: true,
            ..f
        }
    }
}

impl<T: Real> Pass<'_, T> {
    fn labeled(&self) -> bool {
        self.table.is_some()
    }

    #[inline(always)]
    fn label_term(&self, row_label: u32, col_label: u32) -> T {
        match self.table {
            None => T::zero(),
            Some(t) => {
                let (li, lj) = if self.transposed {
                    (col_label, row_label)
                } else {
                    (row_label, col_label)
                };
                self.l2 * t.entries[(li as usize + t.row_off) * t.size + lj as usize + t.col_off]
            }
        }
    }

    /// Scores of rows `i0..i0+bn` against columns `j0..j0+bias.len()` into `tile`.
    fn fill_scores(&self, i0: usize, bn: usize, j0: usize, bias: &[T], inv_eps: T, tile: &mut [T]) {
        let d = self.d;
        let bm = bias.len();
        let cols = &self.cols.pts[j0 * d..(j0 + bm) * d];
        let labels = match (self.table, self.rows.labels, self.cols.labels) {
            (Some(_), Some(lr), Some(lc)) => Some((lr, lc)),
            _ => None,
        };
        for ii in 0..bn {
            let i = i0 + ii;
            let xi = &self.rows.pts[i * d..(i + 1) * d];
            let out = &mut tile[ii * bm..(ii + 1) * bm];
            match labels {
                None => {
                    for ((o, yj), &b) in out.iter_mut().zip(cols.chunks_exact(d)).zip(bias) {
                        *o = score(self.two_l1, dot(xi, yj), b, T::zero(), inv_eps);
                    }
                }
                Some((lr, lc)) => {
                    let li = lr[i];
                    for (jj, ((o, yj), &b)) in out.iter_mut().zip(cols.chunks_exact(d)).zip(bias).enumerate() {
                        let lab = self.label_term(li, lc[j0 + jj]);
                        *o = score(self.two_l1, dot(xi, yj), b, lab, inv_eps);
                    }
                }
            }
        }
    }

    fn fill_bias(&self, j0: usize, col_pot: &[T], eps: T, bias: &mut [T]) {
        for (jj, b) in bias.iter_mut().enumerate() {
            *b = col_pot[j0 + jj] + eps * self.cols.log_w[j0 + jj];
        }
    }

    /// Row-wise `log Σ_j exp(S_ij)` for the score matrix built from `col_pot`.
    ///
    /// `row_extra` is the number of additional per-row scalars the caller's variant
    /// reads (the old potential for a symmetric step, `f̂` and `a` for marginals).
    pub fn lse_rows(&self, col_pot: &[T], eps: T, row_extra: usize, ledger: &IoLedger) -> Result<Vec<T>> {
        let (nr, nc, d) = (self.rows.len, self.cols.len, self.d);
        let lab = self.labeled() as u64;
        let inv_eps = T::one() / eps;
        let mut out = vec![T::zero(); nr];
        out.par_chunks_mut(self.row_block)
            .enumerate()
            .for_each(|(bi, out_blk)| {
                let i0 = bi * self.row_block;
                let bn = out_blk.len();
                let cap = self.col_block.min(nc);
                let mut stats = RowStats::new(bn);
                let mut tile = vec![T::zero(); bn * cap];
                let mut bias = vec![T::zero(); cap];
                let mut loads = bn as u64 * (d as u64 + lab + row_extra as u64);
                let mut j0 = 0;
                while j0 < nc {
                    let bm = self.col_block.min(nc - j0);
                    loads += bm as u64 * (d as u64 + 2 + lab);
                    self.fill_bias(j0, col_pot, eps, &mut bias[..bm]);
                    self.fill_scores(i0, bn, j0, &bias[..bm], inv_eps, &mut tile[..bn * bm]);
                    for ii in 0..bn {
                        stats.absorb_with(ii, &tile[ii * bm..(ii + 1) * bm], self.broken);
                    }
                    j0 += bm;
                }
                for (ii, o) in out_blk.iter_mut().enumerate() {
                    *o = stats.lse(ii);
                }
                ledger.block(loads, bn as u64);
            });
        ledger.lse_pass();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("log-sum-exp reduction".into()));
        }
        Ok(out)
    }
}

impl Pass<'_, f64> {
    /// `out_i = w_i exp(row_pot_i/ε + m_i) O_i`, the streamed product of the plan
    /// (or its Hadamard product with `A Bᵀ`) with `values ∈ ℝ^{cols×p}`.
    #[allow(clippy::too_many_arguments)]
    pub fn transport(
        &self,
        row_pot: &[f64],
        col_pot: &[f64],
        eps: f64,
        values: &[f64],
        p: usize,
        hadamard: Option<(&[f64], &[f64], usize)>,
        kind: TransportKind,
        ledger: &IoLedger,
    ) -> Result<Vec<f64>> {
        let (nr, nc, d) = (self.rows.len, self.cols.len, self.d);
        let lab = self.labeled() as u64;
        let r = hadamard.map_or(0, |h| h.2);
        let inv_eps = 1.0 / eps;
        let mut out = vec![0.0; nr * p];
        if p == 0 {
            ledger.transport(kind);
            return Ok(out);
        }
        out.par_chunks_mut(self.row_block * p)
            .enumerate()
            .try_for_each(|(bi, out_blk)| -> Result<()> {
                let i0 = bi * self.row_block;
                let bn = out_blk.len() / p;
                let cap = self.col_block.min(nc);
                let mut tile = vec![0.0; bn * cap];
                let mut bias = vec![0.0; cap];
                let mut acc = vec![0.0; bn * p];
                let mut run_max = vec![f64::NEG_INFINITY; bn];
                let mut loads = bn as u64 * (d as u64 + 2 + r as u64 + lab);
                let mut j0 = 0;
                while j0 < nc {
                    let bm = self.col_block.min(nc - j0);
                    loads += bm as u64 * (d as u64 + 2 + p as u64 + r as u64 + lab);
                    self.fill_bias(j0, col_pot, eps, &mut bias[..bm]);
                    self.fill_scores(i0, bn, j0, &bias[..bm], inv_eps, &mut tile[..bn * bm]);
                    for ii in 0..bn {
                        let row = &tile[ii * bm..(ii + 1) * bm];
                        let tile_max = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
                        let m_old = run_max[ii];
                        let m_new = m_old.max(tile_max);
                        let o = &mut acc[ii * p..(ii + 1) * p];
                        if !self.broken {
                            let rescale = (m_old - m_new).exp_flush();
                            o.iter_mut().for_each(|v| *v *= rescale);
                        }
                        let ai = hadamard.map(|(ha, _, r)| &ha[(i0 + ii) * r..(i0 + ii + 1) * r]);
                        for (jj, &s) in row.iter().enumerate() {
                            let j = j0 + jj;
                            let mut w = (s - m_new).exp_flush();
                            if w == 0.0 {
                                continue;
                            }
                            if let (Some(ai), Some((_, hb, r))) = (ai, hadamard) {
                                w *= dot(ai, &hb[j * r..(j + 1) * r]);
                            }
                            let vj = &values[j * p..(j + 1) * p];
                            for (ov, v) in o.iter_mut().zip(vj) {
                                *ov += w * v;
                            }
                        }
                        run_max[ii] = m_new;
                    }
                    j0 += bm;
                }
                for ii in 0..bn {
                    let i = i0 + ii;
                    let fac = self.rows.w[i] * (row_pot[i] * inv_eps + run_max[ii]).exp();
                    if !fac.is_finite() {
                        return Err(Error::Overflow("transport prefactor"));
                    }
                    for k in 0..p {
                        out_blk[ii * p + k] = fac * acc[ii * p + k];
                    }
                }
                ledger.block(loads, (bn * p) as u64);
                Ok(())
            })?;
        ledger.transport(kind);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("transport product".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_stats_match_direct_lse() {
        let scores = [0.5f64, -3.0, 2.0, 1.25, 700.0, 699.0];
        let mut st = RowStats::new(1);
        st.absorb(0, &scores[..2]);
        st.absorb(0, &scores[2..5]);
        st.absorb(0, &scores[5..]);
        let m = 700.0f64;
        let direct = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        assert!((st.lse(0) - direct).abs() < 1e-13);
        assert_eq!(st.running_max(0), 700.0);
    }

    #[test]
    fn broken_rescale_changes_the_answer() {
        let scores = [0.0f64, 5.0];
        let mut good = RowStats::new(1);
        let mut bad = RowStats::new(1);
        for s in &scores {
            good.absorb_with(0, std::slice::from_ref(s), false);
            bad.absorb_with(0, std::slice::from_ref(s), true);
        }
        assert!((good.lse(0) - bad.lse(0)).abs() > 1e-3);
    }
}
