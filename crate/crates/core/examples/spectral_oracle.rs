//! Inspect the deterministic spectral oracle.
//!
//! Samples a few symmetric ternary patterns, prints their geometric features,
//! and dumps the 100-point reflection spectrum of the first one as CSV.
//!
//! Run with: cargo run --release --example spectral_oracle

use msdesign::oracle::{self, frequency_ghz, simulate};
use msdesign::pattern::random_pattern;

fn main() {
    for seed in 0..4u64 {
        let p = random_pattern(seed);
        let f = oracle::features(&p);
        let r = simulate(&p);
        let min = r.values().iter().cloned().fold(f64::INFINITY, f64::min);
        println!(
            "seed {seed}: fill {:.3}  edges {:.3}  radial {:.3}  deepest dip {min:.3}",
            f.fill, f.edges, f.radial
        );
    }

    let p = random_pattern(0);
    println!("\npattern (seed 0):\n{}", p.to_text());
    println!("frequency_ghz,reflection");
    let r = simulate(&p);
    for (i, v) in r.values().iter().enumerate() {
        println!("{:.4},{v:.6}", frequency_ghz(i));
    }
}
