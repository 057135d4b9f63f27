//! Discrete measures and ground costs.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;

/// Weighted point cloud `μ = Σ a_i δ_{x_i}` with optional integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    points: Matrix,
    weights: Vec<f64>,
    labels: Option<Vec<u32>>,
}

/// Tolerance on `|Σ a_i - 1|` accepted by [`DiscreteMeasure::new`].
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

impl DiscreteMeasure {
    /// Validates and builds a measure. Weights must be strictly positive and sum to one.
    pub fn new(points: Matrix, weights: Vec<f64>, labels: Option<Vec<u32>>) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::invalid("a measure needs at least one point"));
        }
        if points.cols() == 0 {
            return Err(Error::invalid("points must have dimension at least 1"));
        }
        check_len("weights", points.rows(), weights.len())?;
        if let Some(l) = &labels {
            check_len("labels", points.rows(), l.len())?;
        }
        if let Some(k) = points.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "point coordinate {} (row {}) is not finite",
                k,
                k / points.cols()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid(format!(
                "weight {i} is {} but must be strictly positive",
                weights[i]
            )));
        }
        let total = compensated_sum(&weights);
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "weights sum to {total:.17}, expected 1"
            )));
        }
        Ok(DiscreteMeasure {
            points,
            weights,
            labels,
        })
    }

    /// Uniform weights `1/n`.
    pub fn uniform(points: Matrix) -> Result<Self> {
        let n = points.rows().max(1);
        Self::new(points, vec![1.0 / n as f64; n], None)
    }

    pub fn uniform_labeled(points: Matrix, labels: Vec<u32>) -> Result<Self> {
        let n = points.rows().max(1);
        Self::new(points, vec![1.0 / n as f64; n], Some(labels))
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// `1 + max label`, or 0 for an unlabeled measure.
    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map(|&m| m as usize + 1)
            .unwrap_or(0)
    }

    /// Same weights and labels on new point locations.
    pub fn with_points(&self, points: Matrix) -> Result<Self> {
        Self::new(points, self.weights.clone(), self.labels.clone())
    }

    /// Uniform measure on the points that carry `label`; `None` if the class is empty.
    pub fn class_subset(&self, label: u32) -> Option<DiscreteMeasure> {
        let labels = self.labels.as_ref()?;
        let rows: Vec<&[f64]> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| self.points.row(i))
            .collect();
        if rows.is_empty() {
            return None;
        }
        let pts = Matrix::from_rows(&rows).ok()?;
        DiscreteMeasure::uniform(pts).ok()
    }
}

pub(crate) fn compensated_sum(v: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for &x in v {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Symmetric class-to-class cost table with label offsets.
///
/// A lookup for source label `li` and target label `lj` reads
/// `W[li + row_offset, lj + col_offset]`, which lets one joint table serve the
/// cross term and both self terms of a debiased divergence.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTable {
    size: usize,
    entries: Arc<[f64]>,
    row_offset: usize,
    col_offset: usize,
}

impl LabelTable {
    pub fn new(size: usize, entries: Vec<f64>) -> Result<Self> {
        check_len("label table entries", size * size, entries.len())?;
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("label table has non-finite entries"));
        }
        Ok(LabelTable {
            size,
            entries: entries.into(),
            row_offset: 0,
            col_offset: 0,
        })
    }

    /// Same table, read with different offsets.
    pub fn with_offsets(&self, row_offset: usize, col_offset: usize) -> Self {
        LabelTable {
            size: self.size,
            entries: Arc::clone(&self.entries),
            row_offset,
            col_offset,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn offsets(&self) -> (usize, usize) {
        (self.row_offset, self.col_offset)
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `W[li + row_offset, lj + col_offset]`.
    #[inline]
    pub fn lookup(&self, li: u32, lj: u32) -> f64 {
        self.entries[(li as usize + self.row_offset) * self.size + lj as usize + self.col_offset]
    }
}

/// Ground cost between source and target points.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum CostSpec {
    /// `‖x - y‖²`.
    #[default]
    SquaredEuclidean,
    /// `λ₁‖x - y‖² + λ₂ W[ℓ(x), ℓ(y)]`.
    LabelAugmented {
        lambda1: f64,
        lambda2: f64,
        table: LabelTable,
    },
}

impl CostSpec {
    pub fn lambda1(&self) -> f64 {
        match self {
            CostSpec::SquaredEuclidean => 1.0,
            CostSpec::LabelAugmented { lambda1, .. } => *lambda1,
        }
    }

    pub fn lambda2(&self) -> f64 {
        match self {
            CostSpec::SquaredEuclidean => 0.0,
            CostSpec::LabelAugmented { lambda2, .. } => *lambda2,
        }
    }

    pub fn table(&self) -> Option<&LabelTable> {
        match self {
            CostSpec::SquaredEuclidean => None,
            CostSpec::LabelAugmented { table, .. } => Some(table),
        }
    }

    /// Checks that the cost can be evaluated between `src` and `tgt`.
    pub fn validate(&self, src: &DiscreteMeasure, tgt: &DiscreteMeasure) -> Result<()> {
        check_len("point dimension", src.dim(), tgt.dim())?;
        if let CostSpec::LabelAugmented {
            lambda1,
            lambda2,
            table,
        } = self
        {
            if !(lambda1.is_finite() && *lambda1 > 0.0) {
                return Err(Error::invalid("lambda1 must be positive"));
            }
            if !(lambda2.is_finite() && *lambda2 >= 0.0) {
                return Err(Error::invalid("lambda2 must be non-negative"));
            }
            let (ro, co) = table.offsets();
            for (side, m, off) in [("source", src, ro), ("target", tgt, co)] {
                let labels = m.labels().ok_or_else(|| {
                    Error::invalid(format!("label-augmented cost needs {side} labels"))
                })?;
                if let Some(&l) = labels.iter().find(|&&l| l as usize + off >= table.size()) {
                    return Err(Error::invalid(format!(
                        "{side} label {l} with offset {off} is outside the {}x{} label table",
                        table.size(),
                        table.size()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Pointwise cost `C(x_i, y_j)` evaluated directly.
    pub fn eval(&self, x: &[f64], y: &[f64], li: Option<u32>, lj: Option<u32>) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        match self {
            CostSpec::SquaredEuclidean => sq,
            CostSpec::LabelAugmented {
                lambda1,
                lambda2,
                table,
            } => {
                let w = match (li, lj) {
                    (Some(a), Some(b)) => table.lookup(a, b),
                    _ => 0.0,
                };
                lambda1 * sq + lambda2 * w
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn rejects_zero_weight() {
        let err = DiscreteMeasure::new(pts(&[[0.0, 0.0], [1.0, 1.0]]), vec![1.0, 0.0], None);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_unnormalised_weights() {
        let err = DiscreteMeasure::new(pts(&[[0.0, 0.0], [1.0, 1.0]]), vec![0.5, 0.6], None);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_nan_point() {
        let err = DiscreteMeasure::uniform(pts(&[[0.0, f64::NAN]]));
        assert!(err.is_err());
    }

    #[test]
    fn rejects_label_length_mismatch() {
        let err = DiscreteMeasure::uniform_labeled(pts(&[[0.0, 0.0], [1.0, 1.0]]), vec![0]);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn label_lookup_applies_offsets() {
        let t = LabelTable::new(3, (0..9).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.lookup(1, 2), 5.0);
        let shifted = t.with_offsets(0, 1);
        assert_eq!(shifted.lookup(1, 1), 5.0);
    }

    #[test]
    fn validate_catches_out_of_range_labels() {
        let t = LabelTable::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let cost = CostSpec::LabelAugmented {
            lambda1: 1.0,
            lambda2: 1.0,
            table: t.with_offsets(0, 1),
        };
        let a = DiscreteMeasure::uniform_labeled(pts(&[[0.0, 0.0]]), vec![0]).unwrap();
        let b = DiscreteMeasure::uniform_labeled(pts(&[[0.0, 0.0]]), vec![1]).unwrap();
        assert!(cost.validate(&a, &b).is_err());
        assert!(cost.validate(&a, &a).is_ok());
    }

    #[test]
    fn class_subset_is_uniform() {
        let m = DiscreteMeasure::uniform_labeled(
            pts(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
            vec![1, 0, 1],
        )
        .unwrap();
        let c = m.class_subset(1).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.weights(), &[0.5, 0.5]);
        assert_eq!(c.points().row(1), &[2.0, 0.0]);
        assert!(m.class_subset(7).is_none());
    }
}
