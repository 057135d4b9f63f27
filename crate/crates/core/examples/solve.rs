//! Solve entropic OT between two seeded clouds and inspect the result.

use streamot::config::{Schedule, SinkhornConfig, TileConfig};
use streamot::measure::{CostSpec, DiscreteMeasure};
use streamot::potentials::{shifts, unshift_potentials};
use streamot::rng::Rng;
use streamot::solver::sinkhorn_solve;
use streamot::stream::IoLedger;

fn main() -> streamot::Result<()> {
    let mut rng = Rng::new(7);
    let src = DiscreteMeasure::uniform(rng.normal_matrix(2000, 8, 1.0))?;
    let tgt = DiscreteMeasure::new(rng.uniform_matrix(1500, 8), rng.simplex(1500), None)?;
    let cost = CostSpec::SquaredEuclidean;
    let tiles = TileConfig::new(128, 64)?;

    for schedule in [Schedule::Alternating, Schedule::Symmetric] {
        let cfg = SinkhornConfig {
            eps: 0.05,
            schedule,
            max_iters: 5000,
            marginal_tol: 1e-8,
            eps_scaling: 0.7,
        extra_iters: 5000,
            ..Default::default()
        };
        let ledger = IoLedger::new();
        let rep = sinkhorn_solve(&src, &tgt, &cost, &cfg, &tiles, &ledger)?;
        println!(
            "{:<4} dual={:.10} iters={} violation={:.2e} converged={} io_scalars={}",
            schedule.as_str(),
            rep.dual_cost,
            rep.iterations,
            rep.marginal_violation,
            rep.converged,
            ledger.snapshot().io_scalars()
        );
        if schedule == Schedule::Alternating {
            let (alpha, beta) = shifts(&src, &tgt, &cost)?;
            let (f, g) = unshift_potentials(&rep.potentials, &alpha, &beta)?;
            println!("     f[0..3]={:?} g[0..3]={:?}", &f[..3], &g[..3]);
        }
    }
    Ok(())
}
