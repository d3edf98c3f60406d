mod common;

use common::grad_cases::{self, attention_inputs, attention_weights as weights, Case};
use common::{max_grad_error, random, rng};
use prefallkd::tensor::{multi_head_attention, BatchNormStats, Mode, Tape, Tensor, Var};
use rand::Rng;

const TOL: f64 = 1e-4;
const TRIALS: u64 = 5;

fn check_all(cases: fn(u64) -> Vec<Case>) {
    for t in 0..TRIALS {
        for c in cases(t) {
            let e = max_grad_error(&*c.f, &c.inputs);
            assert!(e < TOL, "{} (trial {t}): max relative error {e:e}", c.name);
        }
    }
}

#[test]
fn grad_elementwise() {
    check_all(grad_cases::elementwise);
}

#[test]
fn grad_shape_ops() {
    check_all(grad_cases::shape_ops);
}

#[test]
fn grad_matmul_variants() {
    check_all(grad_cases::matmuls);
}

#[test]
fn grad_sum_of_product_is_other_operand() {
    let mut r = rng(7);
    let a = random(&mut r, &[3, 4]);
    let b = random(&mut r, &[3, 4]);
    let mut tape = Tape::new();
    let va = tape.leaf(a.clone(), true);
    let vb = tape.leaf(b.clone(), true);
    let p = tape.mul(va, vb).unwrap();
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(va).unwrap().data(), b.data());
    assert_eq!(tape.grad(vb).unwrap().data(), a.data());
    let e = max_grad_error(
        &|tp, v| {
            let p = tp.mul(v[0], v[1]).unwrap();
            tp.sum(p)
        },
        &[a, b],
    );
    assert!(e < TOL);
}

#[test]
fn grad_softmax_family_and_norms() {
    check_all(grad_cases::softmax_and_norms);
}

#[test]
fn grad_prelu_conv_pool_dropout() {
    check_all(grad_cases::conv_family);
}

#[test]
fn grad_attention() {
    check_all(grad_cases::attention);
}

#[test]
fn attention_examples() {
    let mut r = rng(1);
    let d = 4;
    let params = attention_inputs(&mut r, d, 6);

    // one token: the weight is 1 and the output is the projected value
    let mut tape = Tape::new();
    let x = tape.leaf(random(&mut r, &[1, 1, d]), false);
    let v: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), false)).collect();
    let o = multi_head_attention(&mut tape, x, &weights(&v), 3).unwrap();
    assert!(tape.value(o.attention).data().iter().all(|&w| (w - 1.0).abs() < 1e-15));
    let vp = tape.linear(x, v[4], v[5]).unwrap();
    let want = tape.linear(vp, v[6], v[7]).unwrap();
    for (a, b) in tape.value(o.output).data().iter().zip(tape.value(want).data()) {
        assert!((a - b).abs() < 1e-12);
    }

    // identical keys: uniform weights, output is the projected mean value
    let mut p = params.clone();
    p[2] = Tensor::zeros(vec![d, 6]);
    let mut tape = Tape::new();
    let x = tape.leaf(random(&mut r, &[1, 2, d]), false);
    let v: Vec<Var> = p.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let o = multi_head_attention(&mut tape, x, &weights(&v), 3).unwrap();
    assert!(tape.value(o.attention).data().iter().all(|&w| (w - 0.5).abs() < 1e-15));
    let vals = tape.linear(x, v[4], v[5]).unwrap();
    let m = tape.value(vals).data().to_vec();
    let mean: Vec<f64> = (0..6).map(|j| 0.5 * (m[j] + m[6 + j])).collect();
    let mean = tape.leaf(Tensor::new(vec![1, 1, 6], mean).unwrap(), false);
    let want = tape.linear(mean, v[6], v[7]).unwrap();
    let out = tape.value(o.output).data();
    for tok in 0..2 {
        for j in 0..d {
            assert!((out[tok * d + j] - tape.value(want).data()[j]).abs() < 1e-12);
        }
    }

    // rows sum to one
    let mut tape = Tape::new();
    let x = tape.leaf(random(&mut r, &[2, 5, d]), false);
    let v: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let o = multi_head_attention(&mut tape, x, &weights(&v), 3).unwrap();
    for row in tape.value(o.attention).data().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    let mut tape = Tape::new();
    let v: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let empty = tape.leaf(Tensor::zeros(vec![1, 1, d]), false);
    let empty = tape.narrow(empty, 1, 0, 0);
    if let Ok(e) = empty {
        assert!(multi_head_attention(&mut tape, e, &weights(&v), 3).is_err());
    }
}

#[test]
fn softmax_identities() {
    let mut r = rng(11);
    for _ in 0..20 {
        let x = random(&mut r, &[4, 7]);
        let scaled = Tensor::new(vec![4, 7], x.data().iter().map(|v| v * 30.0).collect()).unwrap();
        let mut tape = Tape::new();
        let a = tape.leaf(scaled, false);
        let s = tape.softmax(a).unwrap();
        let l = tape.log_softmax(a).unwrap();
        for row in tape.value(s).data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for (p, lp) in tape.value(s).data().iter().zip(tape.value(l).data()) {
            assert!((p - lp.exp()).abs() < 1e-12);
        }
    }
}

#[test]
fn layer_norm_shift_invariance() {
    let mut r = rng(12);
    let x = random(&mut r, &[3, 8]);
    let shifted = Tensor::new(vec![3, 8], x.data().iter().map(|v| v + 5.25).collect()).unwrap();
    let mut tape = Tape::new();
    let g = tape.leaf(random(&mut r, &[8]), false);
    let b = tape.leaf(random(&mut r, &[8]), false);
    let xa = tape.leaf(x, false);
    let xb = tape.leaf(shifted, false);
    let ya = tape.layer_norm(xa, g, b, 1e-5).unwrap();
    let yb = tape.layer_norm(xb, g, b, 1e-5).unwrap();
    for (p, q) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
        assert!((p - q).abs() < 1e-9);
    }
}

#[test]
fn batch_norm_training_statistics() {
    let mut r = rng(13);
    let (n, c, inner) = (6, 3, 10);
    let x = Tensor::new(
        vec![n, c, inner],
        (0..n * c * inner)
            .map(|i| r.random_range(-2.0..5.0) * (1 + i % c) as f64)
            .collect(),
    )
    .unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(x, false);
    let g = tape.leaf(Tensor::full(vec![c], 1.0), false);
    let b = tape.leaf(Tensor::zeros(vec![c]), false);
    let (y, upd) = tape
        .batch_norm(xv, g, b, &BatchNormStats::new(c), Mode::Train, 0.1, 1e-5)
        .unwrap();
    let y = tape.value(y).data();
    for ch in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|i| y[(i * c + ch) * inner..(i * c + ch + 1) * inner].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-3, "variance {v}");
    }
    assert!(upd.is_some());
}

#[test]
fn conv_is_linear() {
    let mut r = rng(14);
    let x = random(&mut r, &[2, 2, 5, 4]);
    let y = random(&mut r, &[2, 2, 5, 4]);
    let (a, b) = (0.7, -1.3);
    let k = random(&mut r, &[3, 2, 3, 3]);
    let mix = Tensor::new(
        x.shape().to_vec(),
        x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
    )
    .unwrap();
    let mut tape = Tape::new();
    let kv = tape.leaf(k, false);
    let zero = tape.leaf(Tensor::zeros(vec![3]), false);
    let conv = |tape: &mut Tape<f64>, t: Tensor<f64>| {
        let v = tape.leaf(t, false);
        let o = tape.conv2d(v, kv, zero).unwrap();
        tape.value(o).data().to_vec()
    };
    let cx = conv(&mut tape, x);
    let cy = conv(&mut tape, y);
    let cm = conv(&mut tape, mix);
    for i in 0..cm.len() {
        assert!((cm[i] - (a * cx[i] + b * cy[i])).abs() < 1e-10);
    }
}

#[test]
fn dropout_statistics() {
    let n = 1_000_000;
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::full(vec![n], 1.0), false);
    let y = tape.dropout(x, 0.1, Mode::Train, &mut rng(15)).unwrap();
    let v = tape.value(y).data();
    let zeros = v.iter().filter(|&&z| z == 0.0).count() as f64 / n as f64;
    assert!((zeros - 0.1).abs() < 0.002, "zero fraction {zeros}");
    let mean = v.iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    assert_eq!(tape.dropout(x, 0.0, Mode::Train, &mut rng(0)).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.5, Mode::Eval, &mut rng(0)).unwrap(), x);
    assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng(0)).is_err());
}

#[test]
fn backward_contract() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(vec![1], vec![3.0]).unwrap(), true);
    let y = tape.mul(x, x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[12.0]);
    let v = tape.leaf(Tensor::zeros(vec![2]), true);
    assert!(tape.backward(v).is_err());
    assert!(Tape::<f64>::new().backward(y).is_err());
}

#[test]
fn tape_is_deterministic() {
    let run = || {
        let mut r = rng(16);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(random(&mut r, &[2, 3, 6, 4]).cast(), true);
        let k = tape.leaf(random(&mut r, &[4, 3, 3, 3]).cast(), true);
        let b = tape.leaf(Tensor::zeros(vec![4]), true);
        let c = tape.conv2d(x, k, b).unwrap();
        let d = tape.dropout(c, 0.2, Mode::Train, &mut rng(3)).unwrap();
        let p = tape.maxpool2d(d, (1, 2)).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        (tape.value(p).clone(), tape.grad(x).unwrap(), tape.grad(k).unwrap())
    };
    assert_eq!(run(), run());
}
