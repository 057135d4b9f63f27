//! Full acceptance suite, one line per criterion. Criterion 10 runs the
//! desk-scale regression demo and dominates the runtime.

use streamot::alloc_track::TrackingAllocator;
use streamot::parity::{run_suite, SuiteConfig, CHECK_NAMES};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

fn main() {
    let dir = std::env::temp_dir().join("streamot-acceptance");
    let mut cfg = SuiteConfig::default();
    cfg.demo.out_dir = Some(dir.clone());
    println!("running {} acceptance criteria", CHECK_NAMES.len());
    let results = run_suite(&cfg, |o| println!("{o}"));
    let failed: Vec<usize> = results.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!(
        "acceptance: {} of {} criteria passed; trajectories in {}",
        results.len() - failed.len(),
        CHECK_NAMES.len(),
        dir.display()
    );
    if results.len() != CHECK_NAMES.len() || !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
