//! Move a source cloud towards a target by descending the debiased divergence,
//! using streamed gradients.

use streamot::autodiff::{barycentric_projection, grad_source};
use streamot::config::{SinkhornConfig, TileConfig};
use streamot::measure::{CostSpec, DiscreteMeasure};
use streamot::rng::Rng;
use streamot::solver::{sinkhorn_divergence, sinkhorn_solve};
use streamot::stream::IoLedger;

fn main() -> streamot::Result<()> {
    let mut rng = Rng::new(11);
    let mut x = rng.normal_matrix(500, 2, 0.3);
    let mut y = rng.normal_matrix(400, 2, 0.5);
    for i in 0..400 {
        y.row_mut(i)[0] += 2.0;
    }
    let tgt = DiscreteMeasure::uniform(y)?;
    let cost = CostSpec::SquaredEuclidean;
    let tiles = TileConfig::default();
    let ledger = IoLedger::new();
    let cfg = SinkhornConfig {
        eps: 0.05,
        max_iters: 2000,
        marginal_tol: 1e-6,
        eps_scaling: 0.7,
        extra_iters: 5000,
        ..Default::default()
    };

    for step in 0..=40 {
        let src = DiscreteMeasure::uniform(x.clone())?;
        if step % 10 == 0 {
            let s = sinkhorn_divergence(&src, &tgt, &cost, &cfg, &tiles, &ledger)?;
            println!("step {step:>2}: divergence={s:.6}");
        }
        let cross = sinkhorn_solve(&src, &tgt, &cost, &cfg, &tiles, &ledger)?;
        let own = sinkhorn_solve(&src, &src, &cost, &cfg, &tiles, &ledger)?;
        let g_cross = grad_source(&src, &tgt, &cross.potentials, &cost, &tiles, &ledger)?;
        // The self term depends on X through both arguments; by symmetry that doubles the source gradient.
        let g_self = grad_source(&src, &src, &own.potentials, &cost, &tiles, &ledger)?;
        let grad = g_cross.add_scaled(-1.0, &g_self)?;
        // Gradients scale with the weights 1/n; rescale to move points at unit speed.
        x = x.add_scaled(-0.5 * src.len() as f64, &grad)?;
        if step == 40 {
            let t = barycentric_projection(&src, &tgt, &cross.potentials, &cost, &tiles, &ledger)?;
            println!("barycentric image of x_0: {:?} (x_0 = {:?})", t.row(0), x.row(0));
        }
    }
    Ok(())
}
