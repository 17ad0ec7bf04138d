//! Simulated-annealing baseline over the quadrant grid.
//!
//! Optimizes one quadrant cell at a time against the exact oracle objective
//! and prints how the accepted/best objective falls as the temperature cools.
//!
//! Run with: cargo run --release --example annealing_baseline

use msdesign::annealing::{final_evaluate, sa_design, SaConfig};
use msdesign::oracle::simulate;
use msdesign::pattern::random_pattern;

fn main() {
    // Target: the spectrum of a known pattern, so a perfect run could reach 0.
    let target = simulate(&random_pattern(5));

    let cfg = SaConfig { max_moves: 1500, seed: 11, ..SaConfig::default() };
    let mut objective = |p: &msdesign::pattern::TernaryPattern| simulate(p).mae(&target);
    let (best, trace) = sa_design(&mut objective, &cfg);

    println!("initial objective {:.4}", trace.init_j);
    for m in trace.moves.iter().step_by(250) {
        println!(
            "move {:>4}: T {:.4}  J {:.4}  best {:.4}",
            m.mv, m.t, m.j, m.best_j
        );
    }
    let last = trace.moves.last().unwrap();
    println!("final best objective {:.4} after {} moves", last.best_j, trace.moves.len());
    println!("oracle check of returned design: {:.4}", final_evaluate(&best, &target));
}
