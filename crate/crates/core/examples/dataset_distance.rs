//! Labeled dataset distance: class-to-class table, distance, and a few steps of
//! gradient flow on the source features.

use streamot::config::{SinkhornConfig, TileConfig};
use streamot::linalg::Matrix;
use streamot::measure::DiscreteMeasure;
use streamot::otdd::{build_label_cost, otdd_distance, otdd_gradient_flow_step};
use streamot::rng::Rng;
use streamot::stream::IoLedger;

fn dataset(rng: &mut Rng, n: usize, classes: usize, centers: &[[f64; 2]]) -> streamot::Result<DiscreteMeasure> {
    let mut x = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.below(classes);
        labels.push(c as u32);
        for t in 0..2 {
            x.set(i, t, centers[c][t] + 0.3 * rng.normal());
        }
    }
    DiscreteMeasure::uniform_labeled(x, labels)
}

fn main() -> streamot::Result<()> {
    let mut rng = Rng::new(2);
    let d1 = dataset(&mut rng, 300, 3, &[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])?;
    let d2 = dataset(&mut rng, 250, 3, &[[1.0, 1.0], [3.0, 1.0], [1.0, 3.0]])?;
    let cfg = SinkhornConfig {
        eps: 0.1,
        max_iters: 5000,
        marginal_tol: 1e-7,
        eps_scaling: 0.7,
        extra_iters: 5000,
        ..Default::default()
    };
    let tiles = TileConfig::default();
    let ledger = IoLedger::new();

    let w = build_label_cost(&d1, &d2, &cfg, &tiles)?;
    let (v1, v2) = w.class_counts();
    println!("label cost table ({}x{}):", v1 + v2, v1 + v2);
    for p in 0..v1 + v2 {
        let row: Vec<String> = w.entries().row(p).iter().map(|v| format!("{v:7.3}")).collect();
        println!("  {}", row.join(" "));
    }
    for lambda2 in [0.0, 1.0] {
        let v = otdd_distance(&d1, &d2, &w, 1.0, lambda2, &cfg, &tiles, &ledger)?;
        println!("distance with lambda2={lambda2}: {v:.6}");
    }

    let mut cur = d1.clone();
    for step in 0..10 {
        let s = otdd_gradient_flow_step(&cur, &d2, &w, 1.0, 1.0, &cfg, 0.1 * cur.len() as f64, &tiles, &ledger)?;
        println!("flow step {step}: distance={:.6}", s.divergence);
        cur = s.source;
    }
    Ok(())
}
