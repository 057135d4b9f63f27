//! Slow-to-fast memory traffic counters and their closed forms.

use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

use crate::config::TileConfig;

/// Thread-safe counters filled in by the streaming kernels.
///
/// Traffic is counted in scalars moved between slow memory and the on-chip tile
/// buffers of the two-level memory model.
#[derive(Debug, Default)]
pub struct IoLedger {
    slow_to_fast: AtomicU64,
    fast_to_slow: AtomicU64,
    kernel_invocations: AtomicU64,
    lse_passes: AtomicU64,
    transport_vector: AtomicU64,
    transport_matrix: AtomicU64,
    hadamard_transport: AtomicU64,
    cached_reuses: AtomicU64,
}

/// Plain copy of an [`IoLedger`] at one moment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LedgerSnapshot {
    pub slow_to_fast: u64,
    pub fast_to_slow: u64,
    pub kernel_invocations: u64,
    pub lse_passes: u64,
    pub transport_vector: u64,
    pub transport_matrix: u64,
    pub hadamard_transport: u64,
    pub cached_reuses: u64,
}

impl LedgerSnapshot {
    /// Loads plus stores.
    pub fn io_scalars(&self) -> u64 {
        self.slow_to_fast + self.fast_to_slow
    }

    /// Counter-wise difference `self - earlier`.
    pub fn since(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        LedgerSnapshot {
            slow_to_fast: self.slow_to_fast - earlier.slow_to_fast,
            fast_to_slow: self.fast_to_slow - earlier.fast_to_slow,
            kernel_invocations: self.kernel_invocations - earlier.kernel_invocations,
            lse_passes: self.lse_passes - earlier.lse_passes,
            transport_vector: self.transport_vector - earlier.transport_vector,
            transport_matrix: self.transport_matrix - earlier.transport_matrix,
            hadamard_transport: self.hadamard_transport - earlier.hadamard_transport,
            cached_reuses: self.cached_reuses - earlier.cached_reuses,
        }
    }
}

/// Which transport counter a pass increments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum TransportKind {
    Vector,
    Matrix,
    Hadamard,
}

impl IoLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            slow_to_fast: self.slow_to_fast.load(Relaxed),
            fast_to_slow: self.fast_to_slow.load(Relaxed),
            kernel_invocations: self.kernel_invocations.load(Relaxed),
            lse_passes: self.lse_passes.load(Relaxed),
            transport_vector: self.transport_vector.load(Relaxed),
            transport_matrix: self.transport_matrix.load(Relaxed),
            hadamard_transport: self.hadamard_transport.load(Relaxed),
            cached_reuses: self.cached_reuses.load(Relaxed),
        }
    }

    pub fn reset(&self) {
        for c in [
            &self.slow_to_fast,
            &self.fast_to_slow,
            &self.kernel_invocations,
            &self.lse_passes,
            &self.transport_vector,
            &self.transport_matrix,
            &self.hadamard_transport,
            &self.cached_reuses,
        ] {
            c.store(0, Relaxed);
        }
    }

    pub(crate) fn block(&self, loads: u64, stores: u64) {
        self.slow_to_fast.fetch_add(loads, Relaxed);
        self.fast_to_slow.fetch_add(stores, Relaxed);
        self.kernel_invocations.fetch_add(1, Relaxed);
    }

    pub(crate) fn lse_pass(&self) {
        self.lse_passes.fetch_add(1, Relaxed);
    }

    pub(crate) fn transport(&self, kind: TransportKind) {
        let c = match kind {
            TransportKind::Vector => &self.transport_vector,
            TransportKind::Matrix => &self.transport_matrix,
            TransportKind::Hadamard => &self.hadamard_transport,
        };
        c.fetch_add(1, Relaxed);
    }

    pub(crate) fn cached_reuse(&self) {
        self.cached_reuses.fetch_add(1, Relaxed);
    }
}

fn blocks(len: usize, block: usize) -> u64 {
    len.div_ceil(block) as u64
}

/// Traffic of one `f̂` update: `n d + ⌈n/B_N⌉ m (d + 2) + n`.
///
/// With labels every row block also loads `ℓ_I` and every tile `ℓ_J`.
pub fn io_f_update(n: usize, m: usize, d: usize, tiles: &TileConfig, labeled: bool) -> u64 {
    let (n, m, d) = (n as u64, m as u64, d as u64);
    let l = labeled as u64;
    let t = blocks(n as usize, tiles.block_rows);
    n * (d + l) + t * m * (d + 2 + l) + n
}

/// Traffic of one `ĝ` update: `m d + ⌈m/B_M⌉ n (d + 2) + m`.
pub fn io_g_update(n: usize, m: usize, d: usize, tiles: &TileConfig, labeled: bool) -> u64 {
    let mirrored = TileConfig {
        block_rows: tiles.block_cols,
        block_cols: tiles.block_rows,
        ..*tiles
    };
    io_f_update(m, n, d, &mirrored, labeled)
}

/// Traffic of one symmetric iteration: both half-steps, each also reading the old potential.
pub fn io_symmetric_update(n: usize, m: usize, d: usize, tiles: &TileConfig, labeled: bool) -> u64 {
    io_f_update(n, m, d, tiles, labeled) + n as u64 + io_g_update(n, m, d, tiles, labeled) + m as u64
}

/// Traffic of computing both induced marginals: each half reads `f̂_I, a_I` (or `ĝ_J, b_J`) as well.
pub fn io_induced_marginals(n: usize, m: usize, d: usize, tiles: &TileConfig, labeled: bool) -> u64 {
    io_f_update(n, m, d, tiles, labeled) + io_g_update(n, m, d, tiles, labeled) + 2 * (n + m) as u64
}

/// Traffic of `P V` with `V ∈ ℝ^{m×p}`: `n(d+2) + ⌈n/B_N⌉ m (d+2+p) + n p`.
pub fn io_apply_plan(n: usize, m: usize, d: usize, p: usize, tiles: &TileConfig, labeled: bool) -> u64 {
    let (nn, mm, dd, pp) = (n as u64, m as u64, d as u64, p as u64);
    let l = labeled as u64;
    let t = blocks(n, tiles.block_rows);
    nn * (dd + 2 + l) + t * mm * (dd + 2 + pp + l) + nn * pp
}

/// Traffic of `Pᵀ U` with `U ∈ ℝ^{n×p}`: `m(d+2) + ⌈m/B_M⌉ n (d+2+p) + m p`.
pub fn io_apply_plan_adjoint(n: usize, m: usize, d: usize, p: usize, tiles: &TileConfig, labeled: bool) -> u64 {
    let mirrored = TileConfig {
        block_rows: tiles.block_cols,
        block_cols: tiles.block_rows,
        ..*tiles
    };
    io_apply_plan(m, n, d, p, &mirrored, labeled)
}

/// Traffic of `(P ⊙ A Bᵀ) V` with `A ∈ ℝ^{n×r}`, `B ∈ ℝ^{m×r}`, `V ∈ ℝ^{m×p}`:
/// `n(d+r+2) + ⌈n/B_N⌉ m (d+r+2+p) + n p`.
pub fn io_hadamard_transport(
    n: usize,
    m: usize,
    d: usize,
    r: usize,
    p: usize,
    tiles: &TileConfig,
    labeled: bool,
) -> u64 {
    let (nn, mm, dd, rr, pp) = (n as u64, m as u64, d as u64, r as u64, p as u64);
    let l = labeled as u64;
    let t = blocks(n, tiles.block_rows);
    nn * (dd + rr + 2 + l) + t * mm * (dd + rr + 2 + pp + l) + nn * pp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_update_formula_by_hand() {
        // n = 10, m = 7, d = 3, B_N = 4 -> three row blocks.
        let t = TileConfig::new(4, 5).unwrap();
        assert_eq!(io_f_update(10, 7, 3, &t, false), 30 + 3 * 7 * 5 + 10);
        assert_eq!(io_g_update(10, 7, 3, &t, false), 21 + 2 * 10 * 5 + 7);
    }

    #[test]
    fn snapshot_difference() {
        let l = IoLedger::new();
        l.block(10, 2);
        let a = l.snapshot();
        l.block(5, 1);
        l.transport(TransportKind::Vector);
        let diff = l.snapshot().since(&a);
        assert_eq!(diff.io_scalars(), 6);
        assert_eq!(diff.transport_vector, 1);
        assert_eq!(diff.kernel_invocations, 1);
        l.reset();
        assert_eq!(l.snapshot(), LedgerSnapshot::default());
    }
}
