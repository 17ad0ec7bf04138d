//! Train the spectral surrogate on a small synthetic dataset.
//!
//! Uses a reduced sample count and epoch budget so the example finishes in
//! seconds; the library defaults train the same network for longer.
//!
//! Run with: cargo run --release --example surrogate_training

use msdesign::autodiff::Tape;
use msdesign::config::TrainConfig;
use msdesign::dataset;
use msdesign::surrogate::train_surrogate;

fn main() {
    let cfg = TrainConfig { samples: 512, surrogate_epochs: 3, ..TrainConfig::default() };
    let ds = dataset::generate(cfg.samples, cfg.data_seed);
    let (train, test) = ds.split(cfg.split);
    println!("training on {} samples, validating on {}", train.len(), test.len());

    let mut tape: Tape<f32> = Tape::new();
    let (_model, report) = train_surrogate(&mut tape, train, test, &cfg);

    for (epoch, (tr, te)) in report.train_l1.iter().zip(&report.test_l1).enumerate() {
        println!("epoch {epoch}: train L1 {tr:.4}  test L1 {te:.4}");
    }
    println!(
        "held-out MAE_ave {:.4}  ACC_ave {:.4}  R2 {:.4}",
        report.final_mae_ave, report.final_acc_ave, report.final_r2
    );
}
