//! Matrix-free Hessian-vector products checked against the dense oracle, and the
//! smallest Hessian eigenvalue by Lanczos.

use streamot::config::{SinkhornConfig, TileConfig};
use streamot::dense::{dense_hessian, dense_hvp, dense_plan, DEFAULT_PINV_THRESHOLD};
use streamot::hvp::{hvp_apply, lanczos_min_eig, HvpConfig, HvpWorkspace, LanczosConfig};
use streamot::linalg::Matrix;
use streamot::measure::{CostSpec, DiscreteMeasure};
use streamot::rng::Rng;
use streamot::solver::sinkhorn_solve;
use streamot::stream::IoLedger;

fn main() -> streamot::Result<()> {
    let (n, d) = (64, 3);
    let mut rng = Rng::new(5);
    let src = DiscreteMeasure::new(rng.normal_matrix(n, d, 1.0), rng.simplex(n), None)?;
    let tgt = DiscreteMeasure::uniform(rng.normal_matrix(n, d, 1.0))?;
    let cost = CostSpec::SquaredEuclidean;
    let tiles = TileConfig::default();
    let cfg = SinkhornConfig {
        eps: 0.25,
        max_iters: 100_000,
        marginal_tol: 1e-11,
        ..Default::default()
    };
    let rep = sinkhorn_solve(&src, &tgt, &cost, &cfg, &tiles, &IoLedger::new())?;

    let plan = dense_plan(&src, &tgt, &rep.potentials, &cost)?;
    let dense = dense_hessian(&src, &tgt, &plan, cfg.eps, DEFAULT_PINV_THRESHOLD)?;
    let ledger = IoLedger::new();
    let ws = HvpWorkspace::build(&src, &tgt, &rep.potentials, &tiles, &ledger)?;
    let a = rng.normal_matrix(n, d, 1.0);
    let reference = dense_hvp(&dense, &a)?;
    for (tau, eta) in [(1e-5, 1e-6), (1e-7, 1e-7)] {
        let hcfg = HvpConfig {
            tau,
            cg_tol: eta,
            cg_max_iters: 10_000,
        };
        let before = ledger.snapshot();
        let h = hvp_apply(&src, &tgt, &ws, &a, &hcfg, &tiles, &ledger)?;
        let ops = ledger.snapshot().since(&before);
        let err = h.value.add_scaled(-1.0, &reference)?.frobenius_norm() / reference.frobenius_norm();
        println!(
            "tau={tau:.0e} eta={eta:.0e}: rel_err={err:.2e} cg_iters={} transport_vec={} transport_mat={} hadamard={}",
            h.cg_iterations, ops.transport_vector, ops.transport_matrix, ops.hadamard_transport
        );
    }

    let hcfg = HvpConfig::default();
    let est = lanczos_min_eig(
        |v| {
            let dir = Matrix::from_vec(n, d, v.to_vec())?;
            Ok(hvp_apply(&src, &tgt, &ws, &dir, &hcfg, &tiles, &ledger)?.value.into_vec())
        },
        n * d,
        &LanczosConfig::default(),
    )?;
    let eig = nalgebra::SymmetricEigen::new(dense.matrix.clone());
    let dense_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("lambda_min: lanczos={:.6e} dense={dense_min:.6e} matvecs={}", est.value, est.matvecs);
    Ok(())
}
