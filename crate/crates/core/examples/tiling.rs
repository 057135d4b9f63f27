//! The streamed half-step gives the same answer under any tiling, while its
//! traffic to slow memory depends on the row block size.

use streamot::config::TileConfig;
use streamot::linalg::rel_max_diff;
use streamot::measure::DiscreteMeasure;
use streamot::measure::CostSpec;
use streamot::rng::Rng;
use streamot::stream::{io_f_update, update_f_hat, IoLedger};

fn main() -> streamot::Result<()> {
    let (n, m, d) = (1000, 800, 16);
    let mut rng = Rng::new(3);
    let src = DiscreteMeasure::uniform(rng.normal_matrix(n, d, 1.0))?;
    let tgt = DiscreteMeasure::uniform(rng.normal_matrix(m, d, 1.0))?;
    let g: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
    let cost = CostSpec::SquaredEuclidean;
    let eps = 0.05;

    let reference = update_f_hat(&src, &tgt, &g, &cost, eps, &TileConfig::new(n, m)?, &IoLedger::new())?;
    println!("{:>5} {:>5} {:>12} {:>12} {:>10}", "B_N", "B_M", "io_scalars", "closed_form", "rel_err");
    for (bn, bm) in [(1, 800), (16, 16), (64, 32), (128, 128), (1000, 800)] {
        let tiles = TileConfig::new(bn, bm)?;
        let ledger = IoLedger::new();
        let f = update_f_hat(&src, &tgt, &g, &cost, eps, &tiles, &ledger)?;
        println!(
            "{bn:>5} {bm:>5} {:>12} {:>12} {:>10.1e}",
            ledger.snapshot().io_scalars(),
            io_f_update(n, m, d, &tiles, false),
            rel_max_diff(&f, &reference)
        );
    }

    let broken = TileConfig::new(16, 16)?.with_broken_lse_rescaling();
    let f = update_f_hat(&src, &tgt, &g, &cost, eps, &broken, &IoLedger::new())?;
    println!("without running-max rescaling: rel_err={:.1e}", rel_max_diff(&f, &reference));
    Ok(())
}
