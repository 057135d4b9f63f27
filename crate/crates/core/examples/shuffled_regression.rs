//! Linear regression from unmatched (shuffled) pairs: minimise OT(XW, Y) over W
//! with Adam, switching to Newton once the Hessian is positive definite.

use streamot::demo::{generate_problem, optimize_with, DemoConfig};

fn main() -> streamot::Result<()> {
    let cfg = DemoConfig {
        n: 400,
        d: 3,
        eps: 0.25,
        seed: 1,
        max_steps: 400,
        patience: 40,
        ..Default::default()
    };
    let problem = generate_problem(&cfg)?;
    println!("{:>4} {:>7} {:>12} {:>10} {:>10}", "step", "phase", "loss", "grad", "lambda_min");
    let out = optimize_with(&problem, &cfg, |row| {
        let lam = row.lambda_min.map(|v| format!("{v:10.3e}")).unwrap_or_default();
        println!("{:>4} {:>7} {:>12.6} {:>10.3e} {lam:>10}", row.step, row.phase.as_str(), row.loss, row.grad_norm);
    })
    .map_err(|f| f.error)?;
    println!("stopped: {}", out.stop.as_str());
    for i in 0..cfg.d {
        println!("W_hat {:?}   W* {:?}", out.w_hat.row(i), out.w_star.row(i));
    }
    Ok(())
}
