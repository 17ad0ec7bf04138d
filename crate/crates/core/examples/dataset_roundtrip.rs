//! Generate a labeled dataset and prove the binary format round-trips.
//!
//! Run with: cargo run --release --example dataset_roundtrip

use msdesign::dataset::{self, Dataset};

fn main() -> anyhow::Result<()> {
    let ds = dataset::generate(200, 42);
    let dir = std::env::temp_dir();
    let path = dir.join("msdesign_example.msds");
    ds.save(&path)?;

    let bytes = std::fs::read(&path)?;
    println!("wrote {} records ({} bytes) to {}", ds.records.len(), bytes.len(), path.display());

    let back = Dataset::load(&path)?;
    assert_eq!(back.to_bytes(), bytes, "round trip must be byte-identical");
    println!("re-encoded file is byte-identical");

    let (train, test) = back.split(0.9);
    println!("split 0.9 -> {} train / {} test", train.len(), test.len());

    let r = &back.records[0];
    let dips = r.response.values().iter().filter(|&&v| v < 0.0).count();
    println!(
        "first record: {} metal cells, {} spectrum points below zero",
        r.pattern.levels().iter().filter(|&&l| l == 0).count(),
        dips
    );
    std::fs::remove_file(&path)?;
    Ok(())
}
