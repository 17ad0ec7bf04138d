//! Scoring designs: MAE, accuracy, and R² over a batch.
//!
//! Builds a batch of (target, achieved) spectrum pairs with known error and
//! walks through the aggregate report, including the two R² conventions.
//!
//! Run with: cargo run --release --example design_metrics

use msdesign::metrics::{self, DesignEval, R2Mode};
use msdesign::oracle::simulate;
use msdesign::pattern::random_pattern;

fn main() -> anyhow::Result<()> {
    // Pair each target spectrum with the spectrum of a slightly different
    // pattern, as an imperfect inverse design would.
    let evals: Vec<DesignEval> = (0..50)
        .map(|i| {
            let target = simulate(&random_pattern(i));
            let achieved = simulate(&random_pattern(i + 1000));
            DesignEval::new(&target, &achieved)
        })
        .collect();

    let report = metrics::report(&evals)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    println!(
        "\nR2 against each target's own mean: {:.4}",
        metrics::r2(&evals, R2Mode::Mean)?.0
    );
    println!(
        "R2 with literal 1 - mse/var pairing: {:.4}",
        metrics::r2(&evals, R2Mode::Literal)?.0
    );

    // An accuracy of 1 - MAE/2 maps the [-1, 1] spectrum range onto [0, 1].
    println!("\nper-design accuracy of the first five:");
    for e in &evals[..5] {
        println!("  MAE {:.4} -> ACC {:.4}", e.mae, 1.0 - e.mae / 2.0);
    }
    Ok(())
}
