//! Compare the streaming solver with the materialised reference, and show the
//! dense backend refusing a problem over its byte budget.

use streamot::config::{SinkhornConfig, TileConfig};
use streamot::dense::DenseBackend;
use streamot::linalg::rel_max_diff;
use streamot::measure::{CostSpec, DiscreteMeasure};
use streamot::rng::Rng;
use streamot::solver::sinkhorn_solve;
use streamot::stream::IoLedger;
use streamot::Error;

fn main() -> streamot::Result<()> {
    let cfg = SinkhornConfig {
        eps: 0.1,
        max_iters: 50,
        ..Default::default()
    };
    let cost = CostSpec::SquaredEuclidean;
    for d in [2, 8, 32] {
        let mut rng = Rng::new(d as u64);
        let src = DiscreteMeasure::uniform(rng.normal_matrix(256, d, 1.0))?;
        let tgt = DiscreteMeasure::uniform(rng.normal_matrix(256, d, 1.0))?;
        let s = sinkhorn_solve(&src, &tgt, &cost, &cfg, &TileConfig::default(), &IoLedger::new())?;
        let r = DenseBackend::new(None).sinkhorn(&src, &tgt, &cost, &cfg)?;
        println!(
            "d={d:<3} f: {:.2e}  g: {:.2e}  dual: {:.2e}",
            rel_max_diff(s.potentials.f_hat(), r.potentials.f_hat()),
            rel_max_diff(s.potentials.g_hat(), r.potentials.g_hat()),
            (s.dual_cost - r.dual_cost).abs()
        );
    }

    let budget = DenseBackend::new(Some(64 << 20));
    let mut rng = Rng::new(0);
    let big = DiscreteMeasure::uniform(rng.uniform_matrix(4000, 4))?;
    match budget.sinkhorn(&big, &big, &cost, &cfg) {
        Err(e @ Error::MemoryBudget { .. }) => println!("dense n=4000: {e}"),
        other => println!("dense n=4000: unexpected {:?}", other.map(|r| r.dual_cost)),
    }
    let s = sinkhorn_solve(&big, &big, &cost, &cfg, &TileConfig::default(), &IoLedger::new())?;
    println!("stream n=4000: dual={:.6e}", s.dual_cost);
    Ok(())
}
