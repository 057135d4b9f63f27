//! Solver and tiling configuration.

use crate::error::{Error, Result};

/// Row-block and column-tile sizes for the streaming kernels.
///
/// Passes that reduce over target points use `block_rows` (`B_N`) source rows per
/// block and `block_cols` (`B_M`) target columns per tile; the mirrored passes swap
/// the two roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileConfig {
    pub block_rows: usize,
    pub block_cols: usize,
    pub(crate) break_lse_rescale: bool,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            block_rows: 64,
            block_cols: 64,
            break_lse_rescale: false,
        }
    }
}

impl TileConfig {
    pub fn new(block_rows: usize, block_cols: usize) -> Result<Self> {
        if block_rows == 0 || block_cols == 0 {
            return Err(Error::invalid("tile sizes must be at least 1"));
        }
        Ok(TileConfig {
            block_rows,
            block_cols,
            break_lse_rescale: false,
        })
    }

    /// Negative control for the tiling tests: the online log-sum-exp skips the
    /// `exp(m_old - m_new)` rescaling of its running sum, which makes results depend
    /// on the tile shape.
    pub fn with_broken_lse_rescaling(mut self) -> Self {
        self.break_lse_rescale = true;
        self
    }

    pub fn lse_rescaling_broken(&self) -> bool {
        self.break_lse_rescale
    }

    /// Scalars of fast memory one f-update tile needs: `B_M d + B_N d + B_M + 2 B_N`.
    pub fn fast_memory_scalars(&self, dim: usize) -> usize {
        self.block_cols * dim + self.block_rows * dim + self.block_cols + 2 * self.block_rows
    }

    /// Whether a tile fits in `capacity` scalars of fast memory. Informational only.
    pub fn fits_fast_memory(&self, dim: usize, capacity: usize) -> bool {
        self.fast_memory_scalars(dim) <= capacity
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.block_rows == 0 || self.block_cols == 0 {
            return Err(Error::invalid("tile sizes must be at least 1"));
        }
        Ok(())
    }
}

/// Order of the two half-steps within one Sinkhorn iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Schedule {
    /// `f̂` from the old `ĝ`, then `ĝ` from the new `f̂`.
    #[default]
    Alternating,
    /// Both half-steps from the same old pair, averaged with it.
    Symmetric,
}

impl Schedule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Schedule::Alternating => "alt",
            Schedule::Symmetric => "sym",
        }
    }
}

/// Arithmetic precision of the Sinkhorn iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl Precision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        }
    }
}

/// Configuration of a Sinkhorn solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornConfig {
    /// Target regularisation.
    pub eps: f64,
    pub schedule: Schedule,
    /// Hard cap on the number of iterations, annealing included.
    pub max_iters: usize,
    /// Stop once `‖r - a‖₁ + ‖c - b‖₁` drops to this value at the target `eps`.
    /// Zero runs a fixed number of iterations.
    pub marginal_tol: f64,
    /// Geometric annealing factor in `(0, 1]`; 1 disables annealing.
    pub eps_scaling: f64,
    /// Iterations at the target `eps` after annealing reaches it.
    pub extra_iters: usize,
    pub precision: Precision,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            eps: 0.1,
            schedule: Schedule::Alternating,
            max_iters: 100,
            marginal_tol: 0.0,
            eps_scaling: 1.0,
            extra_iters: 0,
            precision: Precision::Double,
        }
    }
}

impl SinkhornConfig {
    pub fn with_eps(eps: f64) -> Self {
        SinkhornConfig {
            eps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.marginal_tol.is_finite() && self.marginal_tol >= 0.0) {
            return Err(Error::invalid("marginal_tol must be finite and non-negative"));
        }
        if !(self.eps_scaling > 0.0 && self.eps_scaling <= 1.0) {
            return Err(Error::invalid("eps_scaling must lie in (0, 1]"));
        }
        Ok(())
    }

    /// The `ε` used at each iteration.
    ///
    /// With annealing, the sequence starts at `start_eps` (the squared diameter of the
    /// joint cloud), shrinks geometrically until it reaches `eps`, then holds for
    /// `extra_iters` more iterations. The result never exceeds `max_iters` entries.
    pub fn eps_sequence(&self, start_eps: f64) -> Vec<f64> {
        let mut seq = Vec::new();
        if self.eps_scaling < 1.0 {
            let mut e = start_eps;
            while e > self.eps && seq.len() < self.max_iters {
                seq.push(e);
                e *= self.eps_scaling;
            }
            let hold = 1 + self.extra_iters;
            for _ in 0..hold {
                if seq.len() >= self.max_iters {
                    break;
                }
                seq.push(self.eps);
            }
        } else {
            seq.resize(self.max_iters, self.eps);
        }
        seq
    }
}
