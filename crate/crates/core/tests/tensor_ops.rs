mod common;

use common::gradcheck::{self, project};
use common::{random_tensor, rng, separated_tensor};
use mqnowcast::tensor::{Tape, Tensor};
use mqnowcast::Error;
use proptest::prelude::*;

fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape.to_vec(), v).unwrap()
}

fn ones(shape: &[usize]) -> Tensor<f64> {
    Tensor::full(shape.to_vec(), 1.0)
}

fn zeros(shape: &[usize]) -> Tensor<f64> {
    Tensor::zeros(shape.to_vec())
}

fn identity_kernel(k: usize, c: usize, size: usize, depthwise: bool) -> Tensor<f64> {
    let shape = if depthwise { vec![c, 1, size, size] } else { vec![k, c, size, size] };
    let mut w = Tensor::zeros(shape);
    let mid = size / 2;
    if depthwise {
        for ch in 0..c {
            w.values_mut()[(ch * size + mid) * size + mid] = 1.0;
        }
    } else {
        for ch in 0..k.min(c) {
            w.values_mut()[((ch * c + ch) * size + mid) * size + mid] = 1.0;
        }
    }
    w
}

#[test]
fn conv2d_all_ones_center_is_nine() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(ones(&[1, 1, 3, 3]), false);
    let w = tape.leaf(ones(&[1, 1, 3, 3]), false);
    let b = tape.leaf(zeros(&[1]), false);
    let y = tape.conv2d(x, w, b, 1, 1).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 3, 3]);
    assert_eq!(tape.values(y)[4], 9.0);
    // corners see four ones
    assert_eq!(tape.values(y)[0], 4.0);
}

#[test]
fn conv2d_identity_kernel_is_identity() {
    let mut r = rng(1);
    let xin: Tensor<f64> = random_tensor(&mut r, &[2, 3, 5, 4], -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(xin.clone(), false);
    let w = tape.leaf(identity_kernel(3, 3, 3, false), false);
    let b = tape.leaf(zeros(&[3]), false);
    let y = tape.conv2d(x, w, b, 1, 1).unwrap();
    assert_eq!(tape.values(y), xin.values());
}

#[test]
fn conv2d_output_size_and_channel_mismatch() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(zeros(&[1, 2, 7, 6]), false);
    let w = tape.leaf(zeros(&[4, 2, 3, 3]), false);
    let b = tape.leaf(zeros(&[4]), false);
    let y = tape.conv2d(x, w, b, 1, 2).unwrap();
    // floor((7 + 2 - 3)/2) + 1 = 4, floor((6 + 2 - 3)/2) + 1 = 3
    assert_eq!(tape.shape(y), &[1, 4, 4, 3]);

    let bad = tape.leaf(zeros(&[4, 3, 3, 3]), false);
    assert!(matches!(tape.conv2d(x, bad, b, 1, 1), Err(Error::Dimension(_))));
}

#[test]
fn depthwise_zero_channel_gives_bias() {
    let mut r = rng(2);
    let mut xin: Tensor<f64> = random_tensor(&mut r, &[1, 2, 4, 4], -1.0, 1.0);
    for v in &mut xin.values_mut()[16..] {
        *v = 0.0;
    }
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(xin, false);
    let w = tape.leaf(random_tensor(&mut r, &[2, 1, 3, 3], -1.0, 1.0), false);
    let b = tape.leaf(t(&[2], vec![0.3, -0.7]), false);
    let y = tape.depthwise_conv2d(x, w, b, 1).unwrap();
    assert!(tape.values(y)[16..].iter().all(|&v| v == -0.7));
}

#[test]
fn depthwise_identity_adds_bias() {
    let mut r = rng(3);
    let xin: Tensor<f64> = random_tensor(&mut r, &[2, 3, 4, 6], -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(xin.clone(), false);
    let w = tape.leaf(identity_kernel(3, 3, 3, true), false);
    let b = tape.leaf(t(&[3], vec![1.0, 2.0, 3.0]), false);
    let y = tape.depthwise_conv2d(x, w, b, 1).unwrap();
    for (i, (&o, &v)) in tape.values(y).iter().zip(xin.values()).enumerate() {
        let c = (i / 24) % 3;
        assert_eq!(o, v + (c + 1) as f64);
    }
}

#[test]
fn depthwise_channel_mismatch_is_dimension_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(zeros(&[1, 2, 4, 4]), false);
    let w = tape.leaf(zeros(&[3, 1, 3, 3]), false);
    let b = tape.leaf(zeros(&[3]), false);
    assert!(matches!(tape.depthwise_conv2d(x, w, b, 1), Err(Error::Dimension(_))));
}

#[test]
fn pointwise_identity_and_channel_sum() {
    let mut r = rng(4);
    let xin: Tensor<f64> = random_tensor(&mut r, &[2, 3, 3, 3], -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(xin.clone(), false);
    let eye = tape.leaf(identity_kernel(3, 3, 1, false), false);
    let b = tape.leaf(zeros(&[3]), false);
    let y = tape.pointwise_conv2d(x, eye, b).unwrap();
    assert_eq!(tape.values(y), xin.values());

    let w1 = tape.leaf(ones(&[1, 3, 1, 1]), false);
    let b1 = tape.leaf(zeros(&[1]), false);
    let s = tape.pointwise_conv2d(x, w1, b1).unwrap();
    let xv = xin.values();
    for n in 0..2 {
        for p in 0..9 {
            let expect = 0.0 + xv[(n * 3) * 9 + p] + xv[(n * 3 + 1) * 9 + p] + xv[(n * 3 + 2) * 9 + p];
            assert_eq!(tape.values(s)[n * 9 + p], expect);
        }
    }
}

#[test]
fn pointwise_matches_conv2d_one_by_one_bitwise() {
    let mut r = rng(5);
    for _ in 0..5 {
        let xin: Tensor<f32> = random_tensor(&mut r, &[3, 5, 6, 7], -2.0, 2.0);
        let win: Tensor<f32> = random_tensor(&mut r, &[4, 5, 1, 1], -1.0, 1.0);
        let bin: Tensor<f32> = random_tensor(&mut r, &[4], -1.0, 1.0);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(xin, false);
        let w = tape.leaf(win, false);
        let b = tape.leaf(bin, false);
        let a = tape.pointwise_conv2d(x, w, b).unwrap();
        let c = tape.conv2d(x, w, b, 0, 1).unwrap();
        assert_eq!(tape.values(a), tape.values(c));
    }
}

#[test]
fn max_pool_window_and_tie_break() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]), false);
    let y = tape.max_pool2(x).unwrap();
    assert_eq!(tape.values(y), &[4.0]);

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::full(vec![1, 1, 4, 4], 2.5), true);
    let y = tape.max_pool2(x).unwrap();
    assert!(tape.values(y).iter().all(|&v| v == 2.5));
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    let g = tape.grad(x).unwrap();
    let expect = [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    assert_eq!(g, &expect);
}

#[test]
fn max_pool_rejects_odd_sizes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(zeros(&[1, 1, 3, 4]), false);
    assert!(matches!(tape.max_pool2(x), Err(Error::Dimension(_))));
}

#[test]
fn upsample_constants_and_single_pixel() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::full(vec![2, 3, 3, 5], -1.25), false);
    let y = tape.bilinear_upsample2(x).unwrap();
    assert_eq!(tape.shape(y), &[2, 3, 6, 10]);
    assert!(tape.values(y).iter().all(|&v| v == -1.25));

    let x = tape.leaf(t(&[1, 1, 1, 1], vec![0.7]), false);
    let y = tape.bilinear_upsample2(x).unwrap();
    assert_eq!(tape.values(y), &[0.7; 4]);
}

#[test]
fn concat_shapes_and_empty_identity() {
    let mut r = rng(6);
    let a: Tensor<f64> = random_tensor(&mut r, &[1, 2, 4, 4], -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let va = tape.leaf(a.clone(), false);
    let vb = tape.leaf(random_tensor(&mut r, &[1, 3, 4, 4], -1.0, 1.0), false);
    let c = tape.concat_channels(va, vb).unwrap();
    assert_eq!(tape.shape(c), &[1, 5, 4, 4]);

    let empty = tape.leaf(zeros(&[1, 0, 4, 4]), false);
    let same = tape.concat_channels(va, empty).unwrap();
    assert_eq!(tape.values(same), a.values());

    let wrong = tape.leaf(zeros(&[1, 1, 4, 2]), false);
    assert!(matches!(tape.concat_channels(va, wrong), Err(Error::Dimension(_))));
}

#[test]
fn leaky_relu_values_and_monotone() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[2], vec![5.0, -2.0]), false);
    let y = tape.leaky_relu(x, 0.01).unwrap();
    assert_eq!(tape.values(y), &[5.0, -0.02]);

    let mut r = rng(7);
    let xs: Tensor<f64> = random_tensor(&mut r, &[1000], -10.0, 10.0);
    let mut sorted = xs.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let x = tape.leaf(Tensor::from_vec(vec![1000], sorted).unwrap(), false);
    let y = tape.leaky_relu(x, 0.01).unwrap();
    assert!(tape.values(y).windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn sigmoid_center_and_saturation() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::from_vec(vec![3], vec![0.0f32, 1e30, -1e30]).unwrap(), false);
    let y = tape.sigmoid(x).unwrap();
    let v = tape.values(y);
    assert_eq!(v[0], 0.5);
    assert!(v[1] < 1.0 && v[1].is_finite());
    assert!(v[2] > 0.0 && v[2].is_finite());
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(ones(&[1, 1, 2, 2]), true);
    let y = tape.square(x).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
}

#[test]
fn backward_sum_and_sum_of_squares() {
    let mut r = rng(8);
    let xin: Tensor<f64> = random_tensor(&mut r, &[2, 3], -3.0, 3.0);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(xin.clone(), true);
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|&g| g == 1.0));

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(xin.clone(), true);
    let sq = tape.square(x).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    for (&g, &v) in tape.grad(x).unwrap().iter().zip(xin.values()) {
        assert_eq!(g, 2.0 * v);
    }
    // a second call without zeroing accumulates
    tape.backward(s).unwrap();
    for (&g, &v) in tape.grad(x).unwrap().iter().zip(xin.values()) {
        assert_eq!(g, 4.0 * v);
    }
    tape.zero_grad();
    assert!(tape.grad(x).is_none());
}

#[test]
fn overflow_is_an_error() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::from_vec(vec![1], vec![3e38f32]).unwrap(), false);
    let y = tape.scale(x, 10.0).unwrap_err();
    assert!(matches!(y, Error::NonFinite { .. }));
}

#[test]
fn separable_filter_equals_depthwise_then_pointwise() {
    let mut r = rng(9);
    for _ in 0..5 {
        let xin: Tensor<f64> = random_tensor(&mut r, &[2, 3, 6, 6], -1.0, 1.0);
        let dw: Tensor<f64> = random_tensor(&mut r, &[3, 1, 3, 3], -1.0, 1.0);
        let pw: Tensor<f64> = random_tensor(&mut r, &[4, 3, 1, 1], -1.0, 1.0);
        // full kernel W[k,c] = P[k,c] * D[c]
        let mut full = vec![0.0; 4 * 3 * 9];
        for k in 0..4 {
            for c in 0..3 {
                for tap in 0..9 {
                    full[(k * 3 + c) * 9 + tap] = pw.values()[k * 3 + c] * dw.values()[c * 9 + tap];
                }
            }
        }
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(xin, false);
        let d = tape.leaf(dw, false);
        let p = tape.leaf(pw, false);
        let zc = tape.leaf(zeros(&[3]), false);
        let zk = tape.leaf(zeros(&[4]), false);
        let wf = tape.leaf(t(&[4, 3, 3, 3], full), false);
        let sep = tape.depthwise_conv2d(x, d, zc, 1).unwrap();
        let sep = tape.pointwise_conv2d(sep, p, zk).unwrap();
        let direct = tape.conv2d(x, wf, zk, 1, 1).unwrap();
        for (&a, &b) in tape.values(sep).iter().zip(tape.values(direct)) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-12));
        }
    }
}

#[test]
fn operations_are_deterministic() {
    let build = || {
        let mut r = rng(10);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(random_tensor(&mut r, &[2, 3, 8, 8], -1.0, 1.0), false);
        let w = tape.leaf(random_tensor(&mut r, &[3, 1, 3, 3], -1.0, 1.0), false);
        let b = tape.leaf(random_tensor(&mut r, &[3], -1.0, 1.0), false);
        let y = tape.depthwise_conv2d(x, w, b, 1).unwrap();
        let y = tape.max_pool2(y).unwrap();
        let y = tape.bilinear_upsample2(y).unwrap();
        let y = tape.sigmoid(y).unwrap();
        tape.values(y).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(build(), build());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_ops_are_homogeneous(seed in 0u64..1000, alpha in -4.0f64..4.0) {
        let mut r = rng(seed);
        let xin: Tensor<f64> = random_tensor(&mut r, &[1, 2, 3, 4], -1.0, 1.0);
        let other: Tensor<f64> = random_tensor(&mut r, &[1, 1, 3, 4], -1.0, 1.0);
        let win: Tensor<f64> = random_tensor(&mut r, &[3, 2, 1, 1], -1.0, 1.0);
        let scaled = Tensor::from_vec(xin.shape().to_vec(), xin.values().iter().map(|v| v * alpha).collect()).unwrap();
        let other_scaled = Tensor::from_vec(other.shape().to_vec(), other.values().iter().map(|v| v * alpha).collect()).unwrap();

        let run = |x: &Tensor<f64>, o: &Tensor<f64>| {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(x.clone(), false);
            let o = tape.leaf(o.clone(), false);
            let w = tape.leaf(win.clone(), false);
            let b = tape.leaf(zeros(&[3]), false);
            let up = tape.bilinear_upsample2(x).unwrap();
            let cat = tape.concat_channels(x, o).unwrap();
            let pw = tape.pointwise_conv2d(x, w, b).unwrap();
            [up, cat, pw].map(|v| tape.values(v).to_vec())
        };
        let base = run(&xin, &other);
        let sc = run(&scaled, &other_scaled);
        for (b, s) in base.iter().zip(&sc) {
            for (&bv, &sv) in b.iter().zip(s) {
                prop_assert!((alpha * bv - sv).abs() <= 1e-12 * (1.0 + sv.abs()));
            }
        }
    }
}

// ---- finite-difference checks ---------------------------------------------

const H64: f64 = 1e-6;
const FLOOR64: f64 = 1e-6;
const H32: f64 = 1e-3;
// f32 rounding at h = 1e-3 leaves ~1e-3 of absolute noise in every central
// difference, so 32-bit checks use the normwise relative error.
const FLOOR32: f64 = 1.0;

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut r = rng(11);
    for _ in 0..3 {
        let inputs: Vec<Tensor<f64>> = vec![
            random_tensor(&mut r, &[2, 3, 5, 5], -1.0, 1.0),
            random_tensor(&mut r, &[4, 3, 3, 3], -1.0, 1.0),
            random_tensor(&mut r, &[4], -1.0, 1.0),
        ];
        let proj = random_tensor(&mut r, &[2 * 4 * 5 * 5], -1.0, 1.0);
        let report = gradcheck::check(&inputs, &[true, true, true], H64, FLOOR64, |tape, v| {
            let y = tape.conv2d(v[0], v[1], v[2], 1, 1)?;
            project(tape, y, &proj)
        });
        assert!(report.max_rel_err < 1e-4, "{report:?}");

        // 32-bit with the ±1e-3 perturbation
        let inputs32: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast()).collect();
        let proj32 = proj.cast::<f32>();
        let report = gradcheck::check(&inputs32, &[true, true, true], H32, FLOOR32, |tape, v| {
            let y = tape.conv2d(v[0], v[1], v[2], 1, 1)?;
            project(tape, y, &proj32)
        });
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }
}

#[test]
fn strided_conv2d_gradients() {
    let mut r = rng(12);
    let inputs: Vec<Tensor<f64>> = vec![
        random_tensor(&mut r, &[1, 2, 7, 6], -1.0, 1.0),
        random_tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0),
        random_tensor(&mut r, &[3], -1.0, 1.0),
    ];
    let proj = random_tensor(&mut r, &[3 * 4 * 3], -1.0, 1.0);
    let report = gradcheck::check(&inputs, &[true, true, true], H64, FLOOR64, |tape, v| {
        let y = tape.conv2d(v[0], v[1], v[2], 1, 2)?;
        project(tape, y, &proj)
    });
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn depthwise_and_pointwise_gradients() {
    let mut r = rng(13);
    let inputs: Vec<Tensor<f64>> = vec![
        random_tensor(&mut r, &[2, 3, 5, 4], -1.0, 1.0),
        random_tensor(&mut r, &[3, 1, 3, 3], -1.0, 1.0),
        random_tensor(&mut r, &[3], -1.0, 1.0),
        random_tensor(&mut r, &[2, 3, 1, 1], -1.0, 1.0),
        random_tensor(&mut r, &[2], -1.0, 1.0),
    ];
    let proj = random_tensor(&mut r, &[2 * 2 * 5 * 4], -1.0, 1.0);
    let report = gradcheck::check(&inputs, &[true; 5], H64, FLOOR64, |tape, v| {
        let y = tape.depthwise_conv2d(v[0], v[1], v[2], 1)?;
        let y = tape.pointwise_conv2d(y, v[3], v[4])?;
        project(tape, y, &proj)
    });
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn pooling_upsampling_concat_gradients() {
    let mut r = rng(14);
    let inputs: Vec<Tensor<f64>> = vec![
        separated_tensor(&mut r, &[2, 2, 4, 6], 0.05),
        random_tensor(&mut r, &[2, 3, 2, 3], -1.0, 1.0),
    ];
    let proj = random_tensor(&mut r, &[2 * 5 * 4 * 6], -1.0, 1.0);
    let report = gradcheck::check(&inputs, &[true, true], H64, FLOOR64, |tape, v| {
        let pooled = tape.max_pool2(v[0])?;
        let cat = tape.concat_channels(pooled, v[1])?;
        let up = tape.bilinear_upsample2(cat)?;
        project(tape, up, &proj)
    });
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn activation_and_gating_gradients() {
    let mut r = rng(15);
    // keep inputs away from the leaky-relu kink
    let mut x: Tensor<f64> = random_tensor(&mut r, &[1, 3, 4, 4], 0.05, 2.0);
    for (i, v) in x.values_mut().iter_mut().enumerate() {
        if i % 2 == 0 {
            *v = -*v;
        }
    }
    let inputs: Vec<Tensor<f64>> = vec![
        x,
        random_tensor(&mut r, &[1, 3, 1, 1], -2.0, 2.0),
        separated_tensor(&mut r, &[1, 3, 4, 4], 0.05),
    ];
    let proj = random_tensor(&mut r, &[3 * 16], -1.0, 1.0);
    let report = gradcheck::check(&inputs, &[true, true, true], H64, FLOOR64, |tape, v| {
        let a = tape.leaky_relu(v[0], 0.01)?;
        let gate = tape.sigmoid(v[1])?;
        let gated = tape.mul(a, gate)?;
        let pooled = tape.channel_mean_max(v[2])?;
        let avg = tape.global_avg_pool(v[2])?;
        let sp = tape.select_channels(pooled, &[1])?;
        let y = tape.mul(gated, sp)?;
        let y = tape.mul(y, avg)?;
        project(tape, y, &proj)
    });
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

/// Direct quadruple loop with explicit bounds checks.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = x.dims4().unwrap();
    let [k, _, kh, kw] = w.dims4().unwrap();
    let (oh, ow) = (h + 2 * pad + 1 - kh, wd + 2 * pad + 1 - kw);
    let mut out = vec![0.0; n * k * oh * ow];
    for b in 0..n {
        for o in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for a in 0..kh {
                            for bb in 0..kw {
                                let (ii, jj) = (i as isize + a as isize - pad as isize, j as isize + bb as isize - pad as isize);
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                    continue;
                                }
                                s += x.values()[((b * c + ci) * h + ii as usize) * wd + jj as usize]
                                    * w.values()[((o * c + ci) * kh + a) * kw + bb];
                            }
                        }
                    }
                    out[((b * k + o) * oh + i) * ow + j] = s;
                }
            }
        }
    }
    out
}

#[test]
fn kernel_larger_than_input_matches_naive_loop() {
    let mut r = rng(31);
    for (h, w) in [(1, 1), (2, 2), (2, 3), (4, 4)] {
        let x = random_tensor::<f64>(&mut r, &[1, 2, h, w], -1.0, 1.0);
        let wt = random_tensor::<f64>(&mut r, &[1, 2, 7, 7], -1.0, 1.0);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x.clone(), true), tape.leaf(wt.clone(), true), tape.leaf(zeros(&[1]), true));
        let y = tape.conv2d(xv, wv, bv, 3, 1).unwrap();
        let expect = naive_conv(&x, &wt, 3);
        for (a, b) in tape.values(y).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(xv).unwrap().iter().all(|g| g.is_finite()));
    }
}
