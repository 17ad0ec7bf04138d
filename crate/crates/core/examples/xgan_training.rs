//! Short adversarial training run of the conditional generator.
//!
//! Trains a quick surrogate first (the generator's spectral critic is a frozen
//! surrogate), then runs a handful of generator/critic steps and prints the
//! loss curve. Scaled down to finish in about a minute; real runs use the
//! config defaults.
//!
//! Run with: cargo run --release --example xgan_training

use msdesign::autodiff::Tape;
use msdesign::config::TrainConfig;
use msdesign::dataset;
use msdesign::gan::train_xgan;
use msdesign::surrogate::train_surrogate;

fn main() {
    let cfg = TrainConfig {
        samples: 256,
        surrogate_epochs: 1,
        gan_steps: 10,
        gan_batch: 8,
        n_critic: 2,
        ..TrainConfig::default()
    };
    let ds = dataset::generate(cfg.samples, cfg.data_seed);
    let (train, test) = ds.split(cfg.split);

    let mut tape: Tape<f32> = Tape::new();
    let (surrogate, s_report) = train_surrogate(&mut tape, train, test, &cfg);
    println!("surrogate ready: held-out L1 {:.4}", s_report.test_l1.last().unwrap());

    let (gen, _disc, report) = train_xgan(&mut tape, train, &surrogate, &cfg);
    for s in &report.steps {
        println!(
            "step {}: L_G {:.4} (adv {:.4} + fit {:.4})  L_D {:.4} (penalty {:.4})",
            s.step, s.l_g, s.sinkhorn_g, s.l1_term, s.l_d, s.penalty
        );
    }

    // Every emitted pattern satisfies the ternary + rotation invariants by
    // construction; show one conditioned on the first held-out spectrum.
    let z = msdesign::gan::attempt_noise(7, 0);
    let p = gen.generate(&mut tape, &test[0].response, &z);
    println!("\nsample conditioned on a held-out target:\n{}", p.to_text());
}
