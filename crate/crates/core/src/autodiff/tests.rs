use super::*;
use crate::gradcheck;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

#[test]
fn tanh_at_zero() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(&[1], vec![0.0], true);
    let y = t.tanh(x);
    assert_eq!(t.value(y)[0], 0.0);
    let loss = t.sum_all(y);
    t.backward(loss);
    assert_eq!(t.grad(x).unwrap()[0], 1.0);
}

#[test]
fn prelu_negative_branch() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(&[1], vec![-2.0], true);
    let a = t.leaf(&[1], vec![0.25], true);
    let y = t.prelu(x, a);
    assert_eq!(t.value(y)[0], -0.5);
    let loss = t.sum_all(y);
    t.backward(loss);
    assert_eq!(t.grad(x).unwrap()[0], 0.25);
    assert_eq!(t.grad(a).unwrap()[0], -2.0);
}

#[test]
fn square_gradient_via_mul() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(&[1], vec![3.0], true);
    let y = t.mul(x, x);
    let loss = t.sum_all(y);
    t.backward(loss);
    assert_eq!(t.grad(x).unwrap()[0], 6.0);
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut t = Tape::<f64>::new();
    let eye = t.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
    let x = t.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let y = t.matmul(eye, x);
    assert_eq!(t.value(y), t.value(x));
    let ones = t.constant(&[2, 1], vec![1.0, 1.0]);
    let z = t.matmul(x, ones);
    assert_eq!(t.value(z), &[3.0, 7.0]);
}

#[test]
fn matmul_inner_dim_mismatch_errors() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(&[2, 3], vec![0.0; 6]);
    let b = t.constant(&[2, 2], vec![0.0; 4]);
    assert!(matches!(t.try_matmul(a, b, false, false), Err(AdError::Dimension(_))));
}

#[test]
fn elementwise_shape_mismatch_errors() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(&[2], vec![0.0; 2]);
    let b = t.constant(&[3], vec![0.0; 3]);
    assert!(matches!(t.try_add(a, b), Err(AdError::Dimension(_))));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(&[3], vec![5.0, -1.0, 2.0], true);
    let loss = t.sum_all(x);
    t.backward(loss);
    assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn reuse_accumulates() {
    let mut t = Tape::<f64>::new();
    let z = t.leaf(&[1], vec![4.0], true);
    let s = t.add(z, z);
    let loss = t.sum_all(s);
    t.backward(loss);
    assert_eq!(t.grad(z).unwrap()[0], 2.0);
}

#[test]
fn backward_twice_doubles_gradients() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(&[2], vec![1.0, 2.0], true);
    let y = t.mul(x, x);
    let loss = t.sum_all(y);
    t.backward(loss);
    let g1 = t.grad(x).unwrap().to_vec();
    t.backward(loss);
    let g2 = t.grad(x).unwrap().to_vec();
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn non_scalar_backward_is_contract_error() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(&[2], vec![1.0, 2.0], true);
    assert!(matches!(t.try_backward(x), Err(AdError::Contract(_))));
}

#[test]
fn off_path_grad_absent() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(&[2], vec![1.0, 2.0], true);
    let y = t.leaf(&[2], vec![3.0, 4.0], true);
    let loss = t.sum_all(x);
    t.backward(loss);
    assert!(t.grad(y).is_none());
}

#[test]
fn random_graph_matches_finite_differences() {
    // Five-op graph mixing matmul, tanh, mul, add, reductions.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a = rand_vec(&mut rng, 12);
    let b = rand_vec(&mut rng, 12);
    let c = rand_vec(&mut rng, 9);
    let report = gradcheck::check(
        &[(vec![3, 4], a), (vec![4, 3], b), (vec![3, 3], c)],
        1e-3,
        |t, vars| {
            let m = t.matmul(vars[0], vars[1]);
            let h = t.tanh(m);
            let p = t.mul(h, vars[2]);
            let q = t.add(p, vars[2]);
            t.mean_all(q)
        },
    );
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn grad_of_sum_matmul_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_vec(&mut rng, 6);
    let y = rand_vec(&mut rng, 8);
    let report = gradcheck::check(&[(vec![3, 2], x), (vec![2, 4], y)], 1e-5, |t, vars| {
        let z = t.matmul(vars[0], vars[1]);
        t.sum_all(z)
    });
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn elementwise_ops_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_vec(&mut rng, 16);
    let y = rand_vec(&mut rng, 16);
    let report = gradcheck::check(&[(vec![4, 4], x), (vec![4, 4], y)], 1e-3, |t, vars| {
        let s = t.sub(vars[0], vars[1]);
        let l = t.leaky_relu(s, 0.2);
        let h = t.tanh(l);
        let a = t.abs(h);
        let e = t.exp(vars[1]);
        let d = t.div(a, e);
        t.mean_all(d)
    });
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn clamp_is_identity_inside_zero_outside() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(&[3], vec![-2.0, 0.3, 2.0], true);
    let y = t.clamp(x, -1.0, 1.0);
    assert_eq!(t.value(y), &[-1.0, 0.3, 1.0]);
    let loss = t.sum_all(y);
    t.backward(loss);
    assert_eq!(t.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
}

#[test]
fn conv2d_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_vec(&mut rng, 2 * 2 * 5 * 5);
    let w = rand_vec(&mut rng, 3 * 2 * 3 * 3);
    let report = gradcheck::check(
        &[(vec![2, 2, 5, 5], x), (vec![3, 2, 3, 3], w)],
        1e-4,
        |t, vars| {
            let y = t.conv2d(vars[0], vars[1], 2, 1);
            let z = t.tanh(y);
            t.mean_all(z)
        },
    );
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn conv2d_back_input_op_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = rand_vec(&mut rng, 1 * 2 * 3 * 3);
    let w = rand_vec(&mut rng, 2 * 1 * 3 * 3);
    let report = gradcheck::check(
        &[(vec![1, 2, 3, 3], g), (vec![2, 1, 3, 3], w)],
        1e-4,
        |t, vars| {
            let gx = t.conv2d_back_input(vars[0], vars[1], 2, 1, 6, 6);
            let z = t.mul(gx, gx);
            t.sum_all(z)
        },
    );
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn softmax_rows_sum_to_one_and_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = rand_vec(&mut rng, 12);
    {
        let mut t = Tape::<f64>::new();
        let v = t.leaf(&[3, 4], x.clone(), false);
        let s = t.softmax(v);
        for row in t.value(s).chunks(4) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
    let w = rand_vec(&mut rng, 12);
    let report = gradcheck::check(&[(vec![3, 4], x), (vec![3, 4], w)], 1e-4, |t, vars| {
        let s = t.softmax(vars[0]);
        let p = t.mul(s, vars[1]);
        t.sum_all(p)
    });
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn permute_concat_slice_roundtrip_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = rand_vec(&mut rng, 24);
    let y = rand_vec(&mut rng, 12);
    let report = gradcheck::check(
        &[(vec![2, 3, 4], x), (vec![2, 3, 2], y)],
        1e-4,
        |t, vars| {
            let p = t.permute(vars[0], &[0, 2, 1]); // [2,4,3]
            let p2 = t.permute(p, &[0, 2, 1]); // back to [2,3,4]
            let cat = t.concat(&[p2, vars[1]], 2); // [2,3,6]
            let sl = t.slice(cat, 2, 1, 3);
            let sq = t.mul(sl, sl);
            t.mean_all(sq)
        },
    );
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn batched_matmul_with_transposes_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
        let a = rand_vec(&mut rng, 2 * 3 * 4);
        let b = rand_vec(&mut rng, 2 * 3 * 4);
        let sa = if ta { vec![2, 4, 3] } else { vec![2, 3, 4] };
        let sb = if tb { vec![2, 5, 4] } else { vec![2, 4, 5] };
        let b2 = rand_vec(&mut rng, 2 * 4 * 5);
        let report = gradcheck::check(&[(sa, a), (sb, b2)], 1e-4, |t, vars| {
            let z = t.matmul_t(vars[0], vars[1], ta, tb);
            let z2 = t.mul(z, z);
            t.mean_all(z2)
        });
        assert!(report.max_rel_err < 1e-3, "ta={ta} tb={tb} {report:?}");
        let _ = b;
    }
}

#[test]
fn pixel_shuffle_shape_and_grads() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(&[1, 4, 8, 8], (0..256).map(|i| i as f64).collect(), false);
    let y = t.pixel_shuffle(x, 2);
    assert_eq!(t.shape(y), &[1, 1, 16, 16]);
    let sx: f64 = t.value(x).iter().sum();
    let sy: f64 = t.value(y).iter().sum();
    assert_eq!(sx, sy);

    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let data = rand_vec(&mut rng, 1 * 8 * 4 * 4);
    let report = gradcheck::check(&[(vec![1, 8, 4, 4], data)], 1e-4, |t, vars| {
        let y = t.pixel_shuffle(vars[0], 2);
        let z = t.mul(y, y);
        t.sum_all(z)
    });
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn pixel_shuffle_rejects_bad_channels() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(&[1, 3, 4, 4], vec![0.0; 48]);
    assert!(t.try_pixel_shuffle(x, 2).is_err());
}

#[test]
fn pixel_shuffle_matches_bruteforce_indexing() {
    // Independent loop: out[b, c, y*r+dy, x*r+dx] = in[b, (c*r+dy)*r+dx, y, x].
    let (b, c, r, h, w) = (2, 3, 2, 3, 3);
    let n = b * c * r * r * h * w;
    let data: Vec<f64> = (0..n).map(|i| (i * 7 % 101) as f64).collect();
    let mut t = Tape::<f64>::new();
    let x = t.leaf(&[b, c * r * r, h, w], data.clone(), false);
    let y = t.pixel_shuffle(x, r);
    let yv = t.value(y);
    for bi in 0..b {
        for ci in 0..c {
            for yy in 0..h * r {
                for xx in 0..w * r {
                    let (py, dy) = (yy / r, yy % r);
                    let (px, dx) = (xx / r, xx % r);
                    let cin = (ci * r + dy) * r + dx;
                    let expect = data[((bi * c * r * r + cin) * h + py) * w + px];
                    let got = yv[((bi * c + ci) * (h * r) + yy) * (w * r) + xx];
                    assert_eq!(expect, got);
                }
            }
        }
    }
}

#[test]
fn mirror_quad_grads_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let data = rand_vec(&mut rng, 2 * 3 * 3);
    let report = gradcheck::check(&[(vec![2, 1, 3, 3], data)], 1e-4, |t, vars| {
        let y = t.mirror_quad(vars[0]);
        let z = t.mul(y, y);
        t.mean_all(z)
    });
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn round_ternary_st_forward_rounds_backward_passes_through() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(&[5], vec![0.2, 0.3, 0.8, 0.25, 0.75], true);
    let y = t.round_ternary_st(x);
    assert_eq!(t.value(y), &[0.0, 0.5, 1.0, 0.5, 1.0]);
    let loss = t.sum_all(y);
    t.backward(loss);
    assert_eq!(t.grad(x).unwrap(), &[1.0; 5]);
}

#[test]
fn straight_through_equals_identity_swap() {
    // Same graph with rounding swapped for identity gives the same gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let data: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..1.0)).collect();
    let grad_with = |rounded: bool| -> Vec<f64> {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&[3, 3], data.clone(), true);
        let y = if rounded { t.round_ternary_st(x) } else { x };
        let s = t.scale(y, 3.0);
        let loss = t.mean_all(s);
        t.backward(loss);
        t.grad(x).unwrap().to_vec()
    };
    assert_eq!(grad_with(true), grad_with(false));
}

#[test]
fn batch_norm_normalizes_and_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n = 4 * 3 * 2 * 2;
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&[4, 3, 2, 2], data.clone(), false);
        let gamma = t.constant(&[3], vec![1.0; 3]);
        let beta = t.constant(&[3], vec![0.0; 3]);
        let (y, _, _) = t.batch_norm(x, gamma, beta, 1e-5);
        // per-channel mean ~0, var ~1
        let yv = t.value(y);
        for c in 0..3 {
            let mut vals = Vec::new();
            for b in 0..4 {
                vals.extend_from_slice(&yv[(b * 3 + c) * 4..(b * 3 + c + 1) * 4]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / vals.len() as f64;
            assert!(mean.abs() < 1e-4, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }
    let gamma: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..1.5)).collect();
    let beta: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let report = gradcheck::check(
        &[(vec![4, 3, 2, 2], data), (vec![3], gamma), (vec![3], beta)],
        1e-4,
        |t, vars| {
            let (y, _, _) = t.batch_norm(vars[0], vars[1], vars[2], 1e-5);
            let z = t.mul(y, y);
            t.mean_all(z)
        },
    );
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn scale_rows_cols_and_biases_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let x = rand_vec(&mut rng, 12);
    let r = rand_vec(&mut rng, 3);
    let c = rand_vec(&mut rng, 4);
    let report = gradcheck::check(
        &[(vec![3, 4], x), (vec![3], r), (vec![4], c)],
        1e-4,
        |t, vars| {
            let a = t.scale_rows(vars[0], vars[1]);
            let b = t.scale_cols(a, vars[2]);
            t.mean_all(b)
        },
    );
    assert!(report.max_rel_err < 1e-3, "{report:?}");

    let x4 = rand_vec(&mut rng, 2 * 3 * 2 * 2);
    let bias = rand_vec(&mut rng, 3);
    let report = gradcheck::check(
        &[(vec![2, 3, 2, 2], x4), (vec![3], bias)],
        1e-4,
        |t, vars| {
            let y = t.add_channel_bias(vars[0], vars[1]);
            let z = t.mul(y, y);
            t.mean_all(z)
        },
    );
    assert!(report.max_rel_err < 1e-3, "{report:?}");

    let x2 = rand_vec(&mut rng, 2 * 6);
    let bias2 = rand_vec(&mut rng, 6);
    let report = gradcheck::check(&[(vec![2, 6], x2), (vec![6], bias2)], 1e-4, |t, vars| {
        let y = t.add_batch_bias(vars[0], vars[1]);
        let z = t.mul(y, y);
        t.mean_all(z)
    });
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn forward_values_deterministic_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = rand_vec(&mut rng, 16);
        let w = rand_vec(&mut rng, 16);
        let mut t = Tape::<f64>::new();
        let xv = t.leaf(&[4, 4], x, false);
        let wv = t.leaf(&[4, 4], w, false);
        let y = t.matmul(xv, wv);
        let h = t.tanh(y);
        t.value(h).to_vec()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn reset_to_mark_keeps_params() {
    let mut t = Tape::<f64>::new();
    let p = t.leaf(&[2], vec![1.0, 2.0], true);
    t.mark();
    for _ in 0..3 {
        t.reset();
        let y = t.mul(p, p);
        let loss = t.sum_all(y);
        t.backward(loss);
        assert_eq!(t.grad(p).unwrap(), &[2.0, 4.0]);
    }
    assert_eq!(t.len(), 3);
}
