//! Sample-until-good inverse design with a trained generator.
//!
//! With no arguments this trains a scaled-down generator from scratch and
//! designs for a few held-out targets. Given a dataset and a generator
//! checkpoint it scores best-of-N designs over held-out targets against the
//! random-pattern baseline:
//!
//!   cargo run --release --example inverse_design
//!   cargo run --release --example inverse_design -- data.msds gen.msnn [targets] [attempts]

use msdesign::autodiff::Tape;
use msdesign::config::TrainConfig;
use msdesign::dataset::{self, Dataset};
use msdesign::oracle::SpectralResponse;
use msdesign::pipeline;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut tape: Tape<f32> = Tape::new();

    let (gen, targets, attempts) = if let [data, ckpt, rest @ ..] = args.as_slice() {
        let ds = Dataset::load(data.as_ref())?;
        let (_, held_out) = ds.split(0.9);
        let n: usize = rest.first().map_or(20, |s| s.parse().expect("target count"));
        let attempts: usize = rest.get(1).map_or(16, |s| s.parse().expect("attempt count"));
        let targets: Vec<SpectralResponse> =
            held_out.iter().take(n).map(|r| r.response.clone()).collect();
        (pipeline::load_generator(&mut tape, ckpt.as_ref())?, targets, attempts)
    } else {
        let cfg = TrainConfig {
            samples: 256,
            surrogate_epochs: 1,
            gan_steps: 30,
            gan_batch: 8,
            n_critic: 2,
            ..TrainConfig::default()
        };
        let ds = dataset::generate(cfg.samples, cfg.data_seed);
        let (train, test) = ds.split(cfg.split);
        let (surrogate, _) = msdesign::surrogate::train_surrogate(&mut tape, train, test, &cfg);
        let (gen, _, _) = msdesign::gan::train_xgan(&mut tape, train, &surrogate, &cfg);
        let targets: Vec<SpectralResponse> =
            test.iter().take(5).map(|r| r.response.clone()).collect();
        (gen, targets, 16)
    };

    // tau = 0 can never be met, so every target exhausts its attempt budget
    // and keeps the best candidate.
    let designs = pipeline::design_batch(&gen, &mut tape, &targets, 0.0, attempts, 900);
    let patterns: Vec<_> = designs.iter().map(|(p, _)| p.clone()).collect();
    let (report, _) = pipeline::evaluate_oracle(&patterns, &targets)?;
    println!(
        "generator best-of-{attempts} over {} targets: MAE_ave {:.4}  ACC_ave {:.4}  ACC_min {:.4}",
        targets.len(),
        report.mae_ave,
        report.acc_ave,
        report.acc_min
    );

    let random = pipeline::random_design_batch(&targets, attempts, 901);
    let rnd_patterns: Vec<_> = random.iter().map(|(p, _)| p.clone()).collect();
    let (rnd, _) = pipeline::evaluate_oracle(&rnd_patterns, &targets)?;
    println!(
        "random best-of-{attempts} baseline:            MAE_ave {:.4}  ACC_ave {:.4}  ACC_min {:.4}",
        rnd.mae_ave, rnd.acc_ave, rnd.acc_min
    );
    Ok(())
}
