//! Benchmark harness: timing, peak heap and IO counts of Sinkhorn solves over a size grid.

use std::io::Write;
use std::time::Instant;

use crate::alloc_track;
use crate::config::{Precision, Schedule, SinkhornConfig, TileConfig};
use crate::dense::DenseBackend;
use crate::error::{Error, Result};
use crate::measure::{CostSpec, DiscreteMeasure};
use crate::rng::Rng;
use crate::solver::sinkhorn_solve;
use crate::stream::IoLedger;

/// Fixed CSV header of [`BenchRecord`] rows.
pub const BENCH_HEADER: &str = "method,schedule,n,m,d,eps,iters,time_ms,peak_bytes,io_scalars,precision";

/// Marker written in the measurement columns of a run refused by the dense budget.
pub const OOM: &str = "OOM";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Stream,
    Dense,
}

impl Backend {
    pub fn as_str(&self) -> &'static str {
        match self {
            Backend::Stream => "stream",
            Backend::Dense => "dense",
        }
    }
}

/// Measurements of one run, or `None` for a refused dense run.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub iters: usize,
    pub time_ms: f64,
    pub peak_bytes: u64,
    /// Scalars moved between slow and fast memory; zero for the dense backend.
    pub io_scalars: u64,
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub method: Backend,
    pub schedule: Schedule,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub eps: f64,
    pub precision: Precision,
    pub result: Option<Measurement>,
}

impl BenchRecord {
    pub fn is_oom(&self) -> bool {
        self.result.is_none()
    }

    pub fn fields(&self) -> [String; 11] {
        let (iters, time, peak, io) = match &self.result {
            Some(r) => (
                r.iters.to_string(),
                format!("{:.3}", r.time_ms),
                r.peak_bytes.to_string(),
                r.io_scalars.to_string(),
            ),
            None => (OOM.into(), OOM.into(), OOM.into(), OOM.into()),
        };
        [
            self.method.as_str().into(),
            self.schedule.as_str().into(),
            self.n.to_string(),
            self.m.to_string(),
            self.d.to_string(),
            self.eps.to_string(),
            iters,
            time,
            peak,
            io,
            self.precision.as_str().into(),
        ]
    }
}

/// Grid and solver settings of a sweep.
#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub backends: Vec<Backend>,
    pub schedules: Vec<Schedule>,
    pub eps: f64,
    pub iters: usize,
    pub precision: Precision,
    pub tiles: TileConfig,
    /// Simulated memory limit of the dense backend.
    pub dense_budget: Option<u64>,
    pub seed: u64,
    /// Report zero time so output is reproducible byte for byte.
    pub deterministic: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![1000, 2000, 4000],
            dims: vec![16],
            backends: vec![Backend::Stream, Backend::Dense],
            schedules: vec![Schedule::Alternating],
            eps: 0.1,
            iters: 10,
            precision: Precision::Double,
            tiles: TileConfig::default(),
            dense_budget: Some(256 << 20),
            seed: 0,
            deterministic: false,
        }
    }
}

/// Seeded uniform clouds on `[0, 1]^d` with uniform weights.
pub fn bench_instance(n: usize, m: usize, d: usize, seed: u64) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let mut rng = Rng::new(seed);
    let x = rng.uniform_matrix(n, d);
    let y = rng.uniform_matrix(m, d);
    Ok((DiscreteMeasure::uniform(x)?, DiscreteMeasure::uniform(y)?))
}

/// Runs one backend on one instance.
pub fn bench_one(
    backend: Backend,
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cfg: &SinkhornConfig,
    tiles: &TileConfig,
    dense_budget: Option<u64>,
) -> Result<Option<Measurement>> {
    let ledger = IoLedger::new();
    let cost = CostSpec::SquaredEuclidean;
    let dense = DenseBackend::new(dense_budget);
    let start = Instant::now();
    let (report, peak) = alloc_track::measure_peak(|| match backend {
        Backend::Stream => sinkhorn_solve(src, tgt, &cost, cfg, tiles, &ledger),
        Backend::Dense => dense.sinkhorn(src, tgt, &cost, cfg),
    });
    let time_ms = start.elapsed().as_secs_f64() * 1e3;
    match report {
        Ok(r) => Ok(Some(Measurement {
            iters: r.iterations,
            time_ms,
            peak_bytes: peak as u64,
            io_scalars: ledger.snapshot().io_scalars(),
        })),
        Err(Error::MemoryBudget { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Sweeps the grid, calling `emit` after each row.
pub fn run_bench(cfg: &BenchConfig, mut emit: impl FnMut(&BenchRecord) -> Result<()>) -> Result<Vec<BenchRecord>> {
    cfg.tiles.validate()?;
    // Start the worker pool outside the measured region.
    rayon::broadcast(|_| ());
    let mut out = Vec::new();
    for &d in &cfg.dims {
        for &n in &cfg.sizes {
            let (src, tgt) = bench_instance(n, n, d, cfg.seed)?;
            for &backend in &cfg.backends {
                for &schedule in &cfg.schedules {
                    let solve = SinkhornConfig {
                        eps: cfg.eps,
                        schedule,
                        max_iters: cfg.iters,
                        precision: cfg.precision,
                        ..Default::default()
                    };
                    let mut result = bench_one(backend, &src, &tgt, &solve, &cfg.tiles, cfg.dense_budget)?;
                    if cfg.deterministic {
                        if let Some(r) = result.as_mut() {
                            r.time_ms = 0.0;
                        }
                    }
                    let rec = BenchRecord {
                        method: backend,
                        schedule,
                        n,
                        m: n,
                        d,
                        eps: cfg.eps,
                        precision: cfg.precision,
                        result,
                    };
                    emit(&rec)?;
                    out.push(rec);
                }
            }
        }
    }
    Ok(out)
}

/// CSV writer that emits the header before the first row.
pub struct BenchWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> BenchWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(BENCH_HEADER.split(','))?;
        Ok(BenchWriter { inner })
    }

    pub fn write(&mut self, rec: &BenchRecord) -> Result<()> {
        self.inner.write_record(rec.fields())?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_fixed() {
        let mut buf = Vec::new();
        BenchWriter::new(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{BENCH_HEADER}\n"));
    }

    #[test]
    fn oom_row_and_deterministic_rows() {
        let cfg = BenchConfig {
            sizes: vec![20, 40],
            dims: vec![2],
            iters: 3,
            dense_budget: Some(DenseBackend::required_bytes(20, 20)),
            deterministic: true,
            ..Default::default()
        };
        let rows = run_bench(&cfg, |_| Ok(())).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(!rows[1].is_oom());
        assert!(rows[3].is_oom());
        assert_eq!(rows[3].fields()[7], OOM);
        let stream = rows[0].result.as_ref().unwrap();
        assert_eq!(stream.iters, 3);
        assert_eq!(stream.time_ms, 0.0);
        assert!(stream.io_scalars > 0);
        let again = run_bench(&cfg, |_| Ok(())).unwrap();
        let strip = |r: &[BenchRecord]| -> Vec<_> {
            r.iter()
                .map(|x| {
                    let mut f = x.fields();
                    f[8].clear();
                    f
                })
                .collect()
        };
        assert_eq!(strip(&rows), strip(&again));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_slope(&x, &y) - 1.5).abs() < 1e-12);
    }
}
