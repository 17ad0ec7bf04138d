//! Verify reverse-mode gradients against central finite differences.
//!
//! Builds a small graph mixing a convolution, batch statistics, and a dense
//! head, then compares every input gradient with a finite-difference probe.
//!
//! Run with: cargo run --release --example gradient_check

use msdesign::gradcheck;

fn main() {
    // A 2-sample, 1-channel, 4x4 input, a 2-channel 3x3 kernel, and a dense
    // layer mapping the flattened activations to one score per sample.
    let inputs = vec![
        (vec![2, 1, 4, 4], (0..32).map(|i| 0.1 * i as f64 - 1.5).collect()),
        (vec![2, 1, 3, 3], (0..18).map(|i| 0.07 * i as f64 - 0.6).collect()),
        (vec![32, 1], (0..32).map(|i| 0.05 * i as f64 - 0.8).collect()),
    ];

    let report = gradcheck::check(&inputs, 1e-4, |tape, vars| {
        let [x, w, head] = [vars[0], vars[1], vars[2]];
        let y = tape.conv2d(x, w, 1, 1); // [2, 2, 4, 4]
        let y = tape.leaky_relu(y, 0.2);
        let flat = tape.reshape(y, &[2, 32]);
        let score = tape.matmul(flat, head); // [2, 1]
        tape.mean_all(score)
    });

    println!(
        "checked {} coordinates, max relative error {:.3e}",
        report.coords, report.max_rel_err
    );
    assert!(report.max_rel_err < 1e-3, "gradient check failed");
    println!("reverse-mode gradients agree with finite differences");
}
