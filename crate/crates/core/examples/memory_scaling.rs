//! Peak heap of streaming and dense solves as n grows, with the allocation
//! tracker installed as the global allocator.

use streamot::alloc_track::TrackingAllocator;
use streamot::bench::{log_log_slope, run_bench, Backend, BenchConfig, BenchWriter};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

fn main() -> streamot::Result<()> {
    let cfg = BenchConfig {
        sizes: vec![500, 1000, 2000, 4000],
        dims: vec![32],
        iters: 2,
        dense_budget: Some(96 << 20),
        ..Default::default()
    };
    let mut w = BenchWriter::new(std::io::stdout().lock())?;
    let rows = run_bench(&cfg, |r| w.write(r))?;
    for backend in [Backend::Stream, Backend::Dense] {
        let (x, y): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.method == backend)
            .filter_map(|r| r.result.as_ref().map(|m| (r.n as f64, m.peak_bytes as f64)))
            .unzip();
        if x.len() >= 2 {
            eprintln!("{} peak-bytes exponent: {:.2}", backend.as_str(), log_log_slope(&x, &y));
        }
    }
    Ok(())
}
