use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::gradcheck::gradcheck;
use super::*;
use crate::error::Error;
use crate::rng::{rng_for, Rng};
use crate::tensor::Tensor;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Direct nested-loop cross-correlation.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = *x.shape() else { panic!() };
    let [f, _, k, _] = *w.shape() else { panic!() };
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::new();
    for s in 0..n {
        for fi in 0..f {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[fi];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()
                                    [((s * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((fi * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Scalar probe `Σ op(x) ⊙ r` with a fixed random `r`.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> crate::Result<Var> {
    let mut rng = rng_for(seed, &[99]);
    let r = randn(&mut rng, g.shape(out));
    let r = g.leaf(r);
    let m = g.mul(out, r)?;
    g.sum(m)
}

fn one_hot(rng: &mut Rng, n: usize, k: usize, inner: usize) -> Tensor<f64> {
    let mut t = vec![0.0; n * k * inner];
    for b in 0..n {
        for i in 0..inner {
            let j = rng.random_range(0..k);
            t[(b * k + j) * inner + i] = 1.0;
        }
    }
    let shape: Vec<usize> = if inner == 1 {
        vec![n, k]
    } else {
        vec![n, k, inner, 1]
    };
    Tensor::new(&shape, t).unwrap()
}

#[test]
fn conv_identity_kernel_returns_input() {
    let mut rng = rng_for(1, &[]);
    let x = randn(&mut rng, &[2, 1, 4, 5]);
    let mut g = Graph::<f64>::new();
    let xv = g.leaf(x.clone());
    let w = g.leaf(Tensor::from_f64(&[1, 1, 1, 1], &[1.0]).unwrap());
    let b = g.leaf(Tensor::zeros(&[1]));
    let y = g.conv2d(xv, w, b, 1, Padding::Same).unwrap();
    assert_eq!(g.data(y), x.data());
}

#[test]
fn conv_constant_field_interior_is_nine_c() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::full(&[1, 1, 5, 5], 0.7));
    let w = g.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
    let b = g.leaf(Tensor::zeros(&[1]));
    let y = g.conv2d(x, w, b, 1, Padding::Same).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 5, 5]);
    assert!((g.data(y)[2 * 5 + 2] - 6.3).abs() < 1e-12);
    // corner sees 4 of 9 taps through zero padding
    assert!((g.data(y)[0] - 2.8).abs() < 1e-12);
}

#[test]
fn conv_matches_direct_loop_oracle() {
    let mut rng = rng_for(2, &[]);
    for (stride, padding, pad) in [
        (1, Padding::Same, 1),
        (1, Padding::Valid, 0),
        (2, Padding::Same, 1),
        (2, Padding::Valid, 0),
    ] {
        let x = randn(&mut rng, &[1, 2, 4, 5]);
        let w = randn(&mut rng, &[3, 2, 3, 3]);
        let b = randn(&mut rng, &[3]);
        let expected = conv_oracle(&x, &w, b.data(), stride, pad);
        let mut g = Graph::<f64>::new();
        let (xv, wv, bv) = (g.leaf(x), g.leaf(w), g.leaf(b));
        let y = g.conv2d(xv, wv, bv, stride, padding).unwrap();
        assert_eq!(g.data(y).len(), expected.len());
        for (a, e) in g.data(y).iter().zip(&expected) {
            assert!((a - e).abs() <= 1e-10, "stride {stride}: {a} vs {e}");
        }
    }
}

#[test]
fn conv_rejects_mismatched_channels_and_even_kernels() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.leaf(Tensor::zeros(&[1, 3, 3, 3]));
    let b = g.leaf(Tensor::zeros(&[1]));
    assert!(matches!(
        g.conv2d(x, w, b, 1, Padding::Same),
        Err(Error::Shape { .. })
    ));
    let w2 = g.leaf(Tensor::zeros(&[1, 2, 2, 2]));
    assert!(g.conv2d(x, w2, b, 1, Padding::Same).is_err());
}

#[test]
fn batchnorm_train_normalizes_each_channel() {
    let mut rng = rng_for(3, &[]);
    let x = randn(&mut rng, &[3, 2, 4, 4])
        .data()
        .iter()
        .map(|v| 5.0 + 3.0 * v)
        .collect();
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::new(&[3, 2, 4, 4], x).unwrap());
    let gamma = g.leaf(Tensor::full(&[2], 1.0));
    let beta = g.leaf(Tensor::zeros(&[2]));
    let stats = BatchNormStats::new(2);
    let (y, _) = g
        .batchnorm2d(
            x,
            gamma,
            beta,
            &stats,
            BatchNormMode::Train { momentum: 0.9 },
            0.0,
        )
        .unwrap();
    let y = g.data(y);
    for ch in 0..2 {
        let vals: Vec<f64> = (0..3)
            .flat_map(|b| y[(b * 2 + ch) * 16..(b * 2 + ch + 1) * 16].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        assert!(
            m.abs() < 1e-6 && (v - 1.0).abs() < 1e-6,
            "channel {ch}: mean {m} var {v}"
        );
    }
}

#[test]
fn batchnorm_affine_rescale_and_running_update() {
    let xs = [-1.0, 1.0, -1.0, 1.0];
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_f64(&[1, 1, 2, 2], &xs).unwrap());
    let gamma = g.leaf(Tensor::from_f64(&[1], &[2.0]).unwrap());
    let beta = g.leaf(Tensor::from_f64(&[1], &[3.0]).unwrap());
    let running = BatchNormStats {
        mean: vec![0.5],
        var: vec![2.0],
    };
    let (y, upd) = g
        .batchnorm2d(
            x,
            gamma,
            beta,
            &running,
            BatchNormMode::Train { momentum: 0.9 },
            0.0,
        )
        .unwrap();
    for (o, i) in g.data(y).iter().zip(xs) {
        assert!((o - (2.0 * i + 3.0)).abs() < 1e-12);
    }
    // batch mean 0, batch variance 1
    let upd = upd.unwrap();
    assert!((upd.mean[0] - (0.9 * 0.5 + 0.1 * 0.0)).abs() < 1e-15);
    assert!((upd.var[0] - (0.9 * 2.0 + 0.1 * 1.0)).abs() < 1e-15);
}

#[test]
fn batchnorm_eval_uses_running_stats_and_degenerate_batch_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_f64(&[1, 1, 1, 1], &[4.0]).unwrap());
    let gamma = g.leaf(Tensor::full(&[1], 1.0));
    let beta = g.leaf(Tensor::zeros(&[1]));
    let running = BatchNormStats {
        mean: vec![2.0],
        var: vec![4.0],
    };
    let err = g.batchnorm2d(
        x,
        gamma,
        beta,
        &running,
        BatchNormMode::Train { momentum: 0.9 },
        1e-5,
    );
    assert!(matches!(err, Err(Error::DegenerateBatch { count: 1, .. })));
    let (y, upd) = g
        .batchnorm2d(x, gamma, beta, &running, BatchNormMode::Eval, 0.0)
        .unwrap();
    assert!(upd.is_none());
    assert!((g.data(y)[0] - 1.0).abs() < 1e-12);
}

#[test]
fn relu_maxpool_softmax_definitions() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_f64(&[2], &[-1.0, 2.0]).unwrap());
    let r = g.relu(x).unwrap();
    assert_eq!(g.data(r), &[0.0, 2.0]);

    let x = g.leaf(Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let p = g.maxpool2d(x).unwrap();
    assert_eq!(g.data(p), &[4.0]);

    let x = g.leaf(Tensor::zeros(&[1, 4]));
    let s = g.softmax(x).unwrap();
    assert_eq!(g.data(s), &[0.25; 4]);

    let odd = g.leaf(Tensor::zeros(&[1, 1, 3, 2]));
    assert!(g.maxpool2d(odd).is_err());
}

#[test]
fn maxpool_tie_routes_gradient_to_first_maximum() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(
        Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 5.0, 5.0, 5.0])
            .unwrap()
            .with_requires_grad(true),
    );
    let p = g.maxpool2d(x).unwrap();
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn softmax_rows_sum_to_one_for_extreme_logits() {
    let mut rng = rng_for(4, &[]);
    let x: Vec<f64> = (0..2 * 5 * 3 * 3)
        .map(|_| 200.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::new(&[2, 5, 3, 3], x).unwrap());
    let s = g.softmax(x).unwrap();
    let y = g.data(s);
    for b in 0..2 {
        for i in 0..9 {
            let total: f64 = (0..5).map(|k| y[(b * 5 + k) * 9 + i]).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn cross_entropy_reference_values() {
    let mut g = Graph::<f64>::new();
    let p = g.leaf(Tensor::full(&[1, 4, 2, 2], 0.25));
    let mut t = vec![0.0; 16];
    for i in 0..4 {
        t[(i % 4) * 4 + i] = 1.0;
    }
    let t = Tensor::new(&[1, 4, 2, 2], t).unwrap();
    let l = g.cross_entropy(p, &t).unwrap();
    assert!((g.data(l)[0] - 4f64.ln()).abs() < 1e-12);
    assert!((g.data(l)[0] - 1.386294).abs() < 1e-6);

    let exact = g.leaf(t.clone());
    let l = g.cross_entropy(exact, &t).unwrap();
    assert_eq!(g.data(l)[0], 0.0);

    let bad = Tensor::full(&[1, 4, 2, 2], 0.5);
    assert!(matches!(
        g.cross_entropy(p, &bad),
        Err(Error::NotOneHot { .. })
    ));
}

#[test]
fn cross_entropy_matches_direct_summation() {
    let mut rng = rng_for(5, &[]);
    let logits = randn(&mut rng, &[2, 4, 3, 3]);
    let t = one_hot(&mut rng, 2, 4, 9).reshape(&[2, 4, 3, 3]).unwrap();
    let mut g = Graph::<f64>::new();
    let z = g.leaf(logits);
    let p = g.softmax(z).unwrap();
    let l = g.cross_entropy(p, &t).unwrap();
    let probs = g.data(p).to_vec();
    let mut expected = 0.0;
    for b in 0..2 {
        for i in 0..9 {
            for k in 0..4 {
                let idx = (b * 4 + k) * 9 + i;
                expected -= t.data()[idx] * probs[idx].ln();
            }
        }
    }
    expected /= 18.0;
    assert!((g.data(l)[0] - expected).abs() < 1e-10);
}

#[test]
fn soft_dice_reference_values() {
    let mut g = Graph::<f64>::new();
    // two classes, foreground target (1,1,0,0), p = 0.5 everywhere
    let t = Tensor::from_f64(&[1, 2, 1, 4], &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    let p = g.leaf(Tensor::full(&[1, 2, 1, 4], 0.5));
    let l = g.soft_dice_loss(p, &t).unwrap();
    let direct = 1.0 - (2.0 * 1.0 + DICE_EPS) / (2.0 + 2.0 + DICE_EPS);
    assert!((g.data(l)[0] - direct).abs() < 1e-15);
    assert!((g.data(l)[0] - 0.5).abs() < 1e-6);

    let perfect = g.leaf(t.clone());
    let l = g.soft_dice_loss(perfect, &t).unwrap();
    assert!(g.data(l)[0].abs() < 1e-5);

    // all mass on background while the target is foreground
    let wrong = g.leaf(Tensor::from_f64(&[1, 2, 1, 2], &[1.0, 1.0, 0.0, 0.0]).unwrap());
    let tf = Tensor::from_f64(&[1, 2, 1, 2], &[0.0, 0.0, 1.0, 1.0]).unwrap();
    let l = g.soft_dice_loss(wrong, &tf).unwrap();
    assert!((g.data(l)[0] - 1.0).abs() < 1e-5);
}

#[test]
fn backward_on_linear_and_quadratic_losses() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(
        Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0])
            .unwrap()
            .with_requires_grad(true),
    );
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

    let mut g = Graph::<f64>::new();
    let x = g.leaf(
        Tensor::from_f64(&[2], &[1.0, 2.0])
            .unwrap()
            .with_requires_grad(true),
    );
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_and_zeroes_unreachable() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(
        Tensor::from_f64(&[2], &[1.0, 2.0])
            .unwrap()
            .with_requires_grad(true),
    );
    let unused = g.leaf(
        Tensor::from_f64(&[3], &[1.0, 2.0, 3.0])
            .unwrap()
            .with_requires_grad(true),
    );
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss { .. })));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(unused).unwrap(), &[0.0; 3]);
}

#[test]
fn gradient_accumulates_over_uses() {
    let mut rng = rng_for(6, &[]);
    let x0 = randn(&mut rng, &[1, 2, 4, 4]).with_requires_grad(true);
    let w0 = randn(&mut rng, &[2, 2, 3, 3]);
    let single = |twice: bool| {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(x0.clone());
        let w = g.leaf(w0.clone());
        let b = g.leaf(Tensor::zeros(&[2]));
        let y1 = g.conv2d(x, w, b, 1, Padding::Same).unwrap();
        let s1 = g.sum(y1).unwrap();
        let loss = if twice {
            let y2 = g.conv2d(x, w, b, 1, Padding::Same).unwrap();
            let s2 = g.sum(y2).unwrap();
            g.add(s1, s2).unwrap()
        } else {
            s1
        };
        g.backward(loss).unwrap();
        g.grad(x).unwrap().to_vec()
    };
    let once = single(false);
    let both = single(true);
    for (a, b) in once.iter().zip(&both) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }

    // elementwise-linear uses accumulate exactly
    let linear = |fa: f64, fb: Option<f64>| {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(x0.clone());
        let a = g.scale(x, fa).unwrap();
        let mut loss = g.sum(a).unwrap();
        if let Some(fb) = fb {
            let b = g.scale(x, fb).unwrap();
            let sb = g.sum(b).unwrap();
            loss = g.add(loss, sb).unwrap();
        }
        g.backward(loss).unwrap();
        g.grad(x).unwrap().to_vec()
    };
    let (ga, gb, gab) = (
        linear(0.3, None),
        linear(-1.7, None),
        linear(0.3, Some(-1.7)),
    );
    for i in 0..ga.len() {
        assert_eq!(ga[i] + gb[i], gab[i]);
    }
}

#[test]
fn detach_blocks_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(
        Tensor::from_f64(&[2], &[1.0, 2.0])
            .unwrap()
            .with_requires_grad(true),
    );
    let d = g.detach(x);
    let sq = g.mul(d, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
    assert!(g.grad(d).is_none());
}

#[test]
fn backward_is_bit_deterministic() {
    let mut rng = rng_for(7, &[]);
    let x0 = randn(&mut rng, &[2, 3, 6, 6]);
    let w0 = randn(&mut rng, &[4, 3, 3, 3]);
    let run = || {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(x0.clone());
        let w = g.leaf(w0.clone().with_requires_grad(true));
        let b = g.leaf(Tensor::zeros(&[4]));
        let y = g.conv2d(x, w, b, 1, Padding::Same).unwrap();
        let r = g.relu(y).unwrap();
        let p = g.maxpool2d(r).unwrap();
        let l = project(&mut g, p, 1).unwrap();
        g.backward(l).unwrap();
        g.grad(w).unwrap().to_vec()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn assert_gradcheck<F>(inputs: &[Tensor<f64>], build: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> crate::Result<Var>,
{
    let errs = gradcheck(inputs, H, build).unwrap();
    for (i, e) in errs.iter().enumerate() {
        assert!(*e < TOL, "input {i}: relative error {e}");
    }
}

#[test]
fn finite_differences_conv2d() {
    let mut rng = rng_for(10, &[]);
    for (stride, pad) in [(1, Padding::Same), (2, Padding::Same), (1, Padding::Valid)] {
        let ins = [
            randn(&mut rng, &[2, 2, 5, 6]),
            randn(&mut rng, &[3, 2, 3, 3]),
            randn(&mut rng, &[3]),
        ];
        assert_gradcheck(&ins, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
            project(g, y, 1)
        });
    }
}

#[test]
fn finite_differences_batchnorm() {
    let mut rng = rng_for(11, &[]);
    let ins = [
        randn(&mut rng, &[2, 3, 3, 4]),
        randn(&mut rng, &[3]),
        randn(&mut rng, &[3]),
    ];
    for mode in [BatchNormMode::Train { momentum: 0.9 }, BatchNormMode::Eval] {
        let stats = BatchNormStats {
            mean: vec![0.1, -0.2, 0.3],
            var: vec![1.5, 0.7, 2.0],
        };
        assert_gradcheck(&ins, |g, v| {
            let (y, _) = g.batchnorm2d(v[0], v[1], v[2], &stats, mode, 1e-5)?;
            project(g, y, 2)
        });
    }
}

#[test]
fn finite_differences_pooling_and_activations() {
    let mut rng = rng_for(12, &[]);
    let x = [randn(&mut rng, &[2, 3, 4, 6])];
    assert_gradcheck(&x, |g, v| {
        let y = g.relu(v[0])?;
        project(g, y, 3)
    });
    assert_gradcheck(&x, |g, v| {
        let y = g.maxpool2d(v[0])?;
        project(g, y, 4)
    });
    assert_gradcheck(&x, |g, v| {
        let y = g.upsample_nearest2x(v[0])?;
        project(g, y, 5)
    });
    assert_gradcheck(&x, |g, v| {
        let y = g.global_avg_pool(v[0])?;
        project(g, y, 6)
    });
    assert_gradcheck(&x, |g, v| {
        let y = g.softmax(v[0])?;
        project(g, y, 7)
    });
}

#[test]
fn finite_differences_dense_and_concat() {
    let mut rng = rng_for(13, &[]);
    let ins = [
        randn(&mut rng, &[3, 2, 2, 2]),
        randn(&mut rng, &[4, 8]),
        randn(&mut rng, &[4]),
    ];
    assert_gradcheck(&ins, |g, v| {
        let y = g.dense(v[0], v[1], v[2])?;
        project(g, y, 8)
    });
    let ins = [
        randn(&mut rng, &[2, 3, 2, 2]),
        randn(&mut rng, &[2, 1, 2, 2]),
    ];
    assert_gradcheck(&ins, |g, v| {
        let y = g.concat(v[0], v[1])?;
        project(g, y, 9)
    });
}

#[test]
fn finite_differences_losses() {
    let mut rng = rng_for(14, &[]);
    let logits = [randn(&mut rng, &[2, 4, 3, 3])];
    let t = one_hot(&mut rng, 2, 4, 9).reshape(&[2, 4, 3, 3]).unwrap();
    assert_gradcheck(&logits, |g, v| {
        let p = g.softmax(v[0])?;
        g.cross_entropy(p, &t)
    });
    assert_gradcheck(&logits, |g, v| {
        let p = g.softmax(v[0])?;
        g.soft_dice_loss(p, &t)
    });
}
