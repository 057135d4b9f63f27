//! Write a labeled cloud in the binary format and as CSV, then read both back.

use streamot::io::{decode, encode, read_point_cloud, write_point_cloud, Dtype};
use streamot::measure::DiscreteMeasure;
use streamot::rng::Rng;

fn main() -> streamot::Result<()> {
    let mut rng = Rng::new(8);
    let x = rng.normal_matrix(100, 4, 1.0);
    let labels = (0..100).map(|_| rng.below(5) as u32).collect();
    let cloud = DiscreteMeasure::uniform_labeled(x, labels)?;

    let dir = std::env::temp_dir();
    let bin = dir.join("streamot_example.fsk");
    let csv = dir.join("streamot_example.csv");
    write_point_cloud(&cloud, &bin, Dtype::F64)?;
    write_point_cloud(&cloud, &csv, Dtype::F64)?;
    let from_bin = read_point_cloud(&bin)?;
    let from_csv = read_point_cloud(&csv)?;
    println!("binary: {} bytes, exact={}", std::fs::metadata(&bin)?.len(), from_bin.points() == cloud.points());
    println!("csv: labels match={}", from_csv.labels() == cloud.labels());

    let single = encode(&cloud, Dtype::F32);
    println!("f32 encoding: {} bytes", single.len());
    match decode(&single[..single.len() - 3]) {
        Err(e) => println!("truncated: {e}"),
        Ok(_) => println!("truncated file unexpectedly decoded"),
    }
    Ok(())
}
