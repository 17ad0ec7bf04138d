//! Central finite-difference gradient checking.
//!
//! The check re-runs the forward pass at perturbed inputs and never touches
//! the reverse sweep, so it stays an independent oracle for `backward`.

use crate::autodiff::{Tape, Var};

/// Result of a gradient check: worst relative error over all coordinates.
#[derive(Debug, Clone, Copy)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub coords: usize,
}

/// Compare reverse-mode gradients against central differences.
///
/// `build` must construct the scalar loss from leaves created with the given
/// values; it is called once for the backward pass and twice per coordinate
/// for the finite differences. Relative error is |ad - fd| / max(1, |fd|).
pub fn check<F>(inputs: &[(Vec<usize>, Vec<f64>)], step: f64, build: F) -> CheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let ad_grads: Vec<Vec<f64>> = {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|(shape, data)| tape.leaf(shape, data.clone(), true))
            .collect();
        let loss = build(&mut tape, &vars);
        tape.backward(loss);
        vars.iter()
            .map(|&v| {
                tape.grad(v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
            })
            .collect()
    };

    let eval = |values: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(values)
            .map(|((shape, _), data)| tape.leaf(shape, data.clone(), false))
            .collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss)[0]
    };

    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let mut max_rel_err: f64 = 0.0;
    let mut coords = 0usize;
    for ti in 0..values.len() {
        for ci in 0..values[ti].len() {
            let orig = values[ti][ci];
            values[ti][ci] = orig + step;
            let up = eval(&values);
            values[ti][ci] = orig - step;
            let down = eval(&values);
            values[ti][ci] = orig;
            let fd = (up - down) / (2.0 * step);
            let ad = ad_grads[ti][ci];
            let rel = (ad - fd).abs() / fd.abs().max(1.0);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            coords += 1;
        }
    }
    CheckReport { max_rel_err, coords }
}
