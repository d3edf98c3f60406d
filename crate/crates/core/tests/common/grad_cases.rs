//! Finite-difference cases shared by the primitive tests and the
//! acceptance sweep.

use prefallkd::models::{ModelSpec, ModelState, ParamVars};
use prefallkd::tensor::{multi_head_attention, AttentionWeights, BatchNormStats, Mode, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{random, random_away_from_zero, rng, weighted_sum, H};

pub type Scalar = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

pub struct Case {
    pub name: String,
    pub f: Scalar,
    pub inputs: Vec<Tensor<f64>>,
}

fn case(
    name: impl Into<String>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Var + 'static,
    inputs: Vec<Tensor<f64>>,
) -> Case {
    Case {
        name: name.into(),
        f: Box::new(f),
        inputs,
    }
}

/// Random extents in `1..=max`.
pub fn dims(seed: u64, n: usize, max: usize) -> Vec<usize> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(1..=max)).collect()
}

pub fn elementwise(t: u64) -> Vec<Case> {
    let mut r = rng(t);
    let s = dims(t, 3, 4);
    let a = random(&mut r, &s);
    let b = random(&mut r, &s);
    let tail = random(&mut r, &s[1..]);
    let pos = Tensor::new(s.clone(), a.data().iter().map(|x| x.abs() + 0.2).collect()).unwrap();
    let away = random_away_from_zero(&mut r, &s);
    vec![
        case(
            "add",
            move |tp, v| {
                let y = tp.add(v[0], v[1]).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![a.clone(), b.clone()],
        ),
        case(
            "add broadcast",
            move |tp, v| {
                let y = tp.add(v[0], v[1]).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![a.clone(), tail],
        ),
        case(
            "mul",
            move |tp, v| {
                let y = tp.mul(v[0], v[1]).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![a.clone(), b],
        ),
        case(
            "scale",
            move |tp, v| {
                let y = tp.scale(v[0], -1.7);
                weighted_sum(tp, y, t)
            },
            vec![a.clone()],
        ),
        case(
            "add_scalar",
            move |tp, v| {
                let y = tp.add_scalar(v[0], 0.3);
                weighted_sum(tp, y, t)
            },
            vec![a.clone()],
        ),
        case(
            "exp",
            move |tp, v| {
                let y = tp.exp(v[0]);
                weighted_sum(tp, y, t)
            },
            vec![a.clone()],
        ),
        case(
            "ln",
            move |tp, v| {
                let y = tp.ln(v[0]);
                weighted_sum(tp, y, t)
            },
            vec![pos.clone()],
        ),
        case(
            "powf",
            move |tp, v| {
                let y = tp.powf(v[0], 2.5);
                weighted_sum(tp, y, t)
            },
            vec![pos],
        ),
        case(
            "clamp_min",
            move |tp, v| {
                let y = tp.clamp_min(v[0], 0.0);
                weighted_sum(tp, y, t)
            },
            vec![away],
        ),
        case(
            "gelu",
            move |tp, v| {
                let y = tp.gelu(v[0]);
                weighted_sum(tp, y, t)
            },
            vec![a.clone()],
        ),
        case("sum", |tp, v| tp.sum(v[0]), vec![a.clone()]),
        case("mean", |tp, v| tp.mean(v[0]), vec![a]),
    ]
}

pub fn shape_ops(t: u64) -> Vec<Case> {
    let mut r = rng(100 + t);
    let s = dims(100 + t, 3, 4);
    let a = random(&mut r, &s);
    let flat = [s.iter().product::<usize>()];
    let mut s2 = s.clone();
    s2[1] += 1;
    let b = random(&mut r, &s2);
    let one = random(&mut r, &[1, s[1], s[2]]);
    let m = random(&mut r, &[s[0], 3]);
    let idx: Vec<usize> = (0..s[0]).map(|i| i % 3).collect();
    let len = s2[1] - 1;
    vec![
        case(
            "reshape",
            move |tp, v| {
                let y = tp.reshape(v[0], &flat).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![a.clone()],
        ),
        case(
            "permute",
            move |tp, v| {
                let y = tp.permute(v[0], &[2, 0, 1]).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![a.clone()],
        ),
        case(
            "concat",
            move |tp, v| {
                let y = tp.concat(v[0], v[1], 1).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![a, b.clone()],
        ),
        case(
            "narrow",
            move |tp, v| {
                let y = tp.narrow(v[0], 1, 1, len).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![b],
        ),
        case(
            "expand_batch",
            move |tp, v| {
                let y = tp.expand_batch(v[0], 3).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![one],
        ),
        case(
            "pick",
            move |tp, v| {
                let y = tp.pick(v[0], &idx).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![m],
        ),
    ]
}

pub fn matmuls(t: u64) -> Vec<Case> {
    let mut r = rng(200 + t);
    let d = dims(200 + t, 4, 5);
    let (bt, m, k, n) = (d[0], d[1], d[2], d[3]);
    let mut out = Vec::new();
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let sa = if ta { [bt, k, m] } else { [bt, m, k] };
        let sb = if tb { [bt, n, k] } else { [bt, k, n] };
        let inputs = vec![random(&mut r, &sa), random(&mut r, &sb)];
        out.push(case(
            format!("matmul ta={ta} tb={tb}"),
            move |tp, v| {
                let y = tp.matmul(v[0], v[1], ta, tb).unwrap();
                weighted_sum(tp, y, t)
            },
            inputs,
        ));
    }
    let inputs = vec![
        random(&mut r, &[bt, m, k]),
        random(&mut r, &[k, n]),
        random(&mut r, &[n]),
    ];
    out.push(case(
        "linear",
        move |tp, v| {
            let y = tp.linear(v[0], v[1], v[2]).unwrap();
            weighted_sum(tp, y, t)
        },
        inputs,
    ));
    out
}

pub fn softmax_and_norms(t: u64) -> Vec<Case> {
    let mut r = rng(300 + t);
    let s = dims(300 + t, 3, 5);
    let a = random(&mut r, &s);
    let d = s[2].max(2);
    let ln = vec![
        random(&mut r, &[s[0], s[1], d]),
        random(&mut r, &[d]),
        random(&mut r, &[d]),
    ];
    let c = s[1];
    let bn = vec![
        random(&mut r, &[s[0] + 1, c, 3, 2]),
        random(&mut r, &[c]),
        random(&mut r, &[c]),
    ];
    let mut out = vec![
        case(
            "softmax",
            move |tp, v| {
                let y = tp.softmax(v[0]).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![a.clone()],
        ),
        case(
            "log_softmax",
            move |tp, v| {
                let y = tp.log_softmax(v[0]).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![a],
        ),
        case(
            "layer_norm",
            move |tp, v| {
                let y = tp.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                weighted_sum(tp, y, t)
            },
            ln,
        ),
    ];
    for mode in [Mode::Train, Mode::Eval] {
        let stats = BatchNormStats::new(c);
        out.push(case(
            format!("batch_norm {mode:?}"),
            move |tp, v| {
                let (y, _) = tp.batch_norm(v[0], v[1], v[2], &stats, mode, 0.1, 1e-5).unwrap();
                weighted_sum(tp, y, t)
            },
            bn.clone(),
        ));
    }
    out
}

pub fn conv_family(t: u64) -> Vec<Case> {
    let mut r = rng(400 + t);
    let d = dims(400 + t, 4, 4);
    let (n, cin, h, w) = (d[0], d[1], d[2] + 1, d[3] + 1);
    let x = random_away_from_zero(&mut r, &[n, cin, h, w]);
    let alpha = random(&mut r, &[cin]);
    let cout = 1 + (t as usize % 3);
    let conv = vec![
        random(&mut r, &[n, cin, h, w]),
        random(&mut r, &[cout, cin, 3, 3]),
        random(&mut r, &[cout]),
    ];
    // distinct values spaced well beyond the finite-difference step
    let len = n * cin * h * w;
    let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
    for i in (1..len).rev() {
        vals.swap(i, r.random_range(0..=i));
    }
    let spaced = Tensor::new(vec![n, cin, h, w], vals).unwrap();
    vec![
        case(
            "prelu",
            move |tp, v| {
                let y = tp.prelu(v[0], v[1]).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![x, alpha],
        ),
        case(
            "conv2d",
            move |tp, v| {
                let y = tp.conv2d(v[0], v[1], v[2]).unwrap();
                weighted_sum(tp, y, t)
            },
            conv,
        ),
        case(
            "maxpool (1,2)",
            move |tp, v| {
                let y = tp.maxpool2d(v[0], (1, 2)).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![spaced.clone()],
        ),
        case(
            "maxpool (2,2)",
            move |tp, v| {
                let y = tp.maxpool2d(v[0], (2, 2)).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![spaced.clone()],
        ),
        case(
            "dropout",
            move |tp, v| {
                let mut mask_rng = rng(99);
                let y = tp.dropout(v[0], 0.3, Mode::Train, &mut mask_rng).unwrap();
                weighted_sum(tp, y, t)
            },
            vec![spaced],
        ),
    ]
}

pub fn attention_inputs(r: &mut ChaCha8Rng, d: usize, inner: usize) -> Vec<Tensor<f64>> {
    vec![
        random(r, &[d, inner]),
        random(r, &[inner]),
        random(r, &[d, inner]),
        random(r, &[inner]),
        random(r, &[d, inner]),
        random(r, &[inner]),
        random(r, &[inner, d]),
        random(r, &[d]),
    ]
}

pub fn attention_weights(v: &[Var]) -> AttentionWeights {
    AttentionWeights {
        wq: v[0],
        bq: v[1],
        wk: v[2],
        bk: v[3],
        wv: v[4],
        bv: v[5],
        wo: v[6],
        bo: v[7],
    }
}

pub fn attention(t: u64) -> Vec<Case> {
    let mut r = rng(500 + t);
    let dd = dims(500 + t, 2, 4);
    let heads = 1 + (t as usize % 3);
    let d = 4;
    let mut inputs = vec![random(&mut r, &[dd[0], dd[1], d])];
    inputs.extend(attention_inputs(&mut r, d, heads * 2));
    vec![case(
        "multi_head_attention",
        move |tp, v| {
            let o = multi_head_attention(tp, v[0], &attention_weights(&v[1..]), heads).unwrap();
            weighted_sum(tp, o.output, t)
        },
        inputs,
    )]
}

/// Every primitive case for one trial.
pub fn all_primitives(t: u64) -> Vec<Case> {
    [
        elementwise(t),
        shape_ops(t),
        matmuls(t),
        softmax_and_norms(t),
        conv_family(t),
        attention(t),
    ]
    .into_iter()
    .flatten()
    .collect()
}

/// Weighted sum of the log-probabilities, in training mode with a fixed
/// dropout stream so every evaluation sees the same mask.
fn model_loss(spec: &ModelSpec, st: &ModelState<f64>, x: &[f64]) -> (Tape<f64>, ParamVars, Var) {
    let mut tape = Tape::new();
    let vars = st.register(&mut tape, true);
    let out = spec
        .forward(&mut tape, st, &vars, x, Mode::Train, &mut rng(99))
        .unwrap();
    let b = x.len() / 450;
    let w = Tensor::new(vec![b, 2], (0..2 * b).map(|i| 0.3 + 0.1 * i as f64).collect()).unwrap();
    let w = tape.constant(w);
    let p = tape.mul(out.log_probs, w).unwrap();
    let loss = tape.sum(p);
    (tape, vars, loss)
}

/// Largest relative error over `checks` random parameter entries of a
/// freshly initialised model.
pub fn model_spot_check(spec: &ModelSpec, seed: u64, checks: usize) -> f64 {
    let mut st: ModelState<f64> = spec.build(&mut rng(seed)).unwrap();
    st.set_mode(Mode::Train);
    let mut r = rng(seed + 1);
    let x: Vec<f64> = (0..3 * 450).map(|_| r.random_range(-2.0..2.0)).collect();
    let (mut tape, vars, loss) = model_loss(spec, &st, &x);
    tape.backward(loss).unwrap();
    let names: Vec<String> = st.params.keys().cloned().collect();
    let mut r = rng(seed + 2);
    let mut worst: f64 = 0.0;
    for _ in 0..checks {
        let name = &names[r.random_range(0..names.len())];
        let i = r.random_range(0..st.params[name].len());
        let analytic = tape.grad(vars.get(name)).unwrap().data()[i];
        let eval = |delta: f64| {
            let mut s = st.clone();
            s.params.get_mut(name).unwrap().data_mut()[i] += delta;
            let (t, _, l) = model_loss(spec, &s, &x);
            t.value(l).item()
        };
        let numeric = (eval(H) - eval(-H)) / (2.0 * H);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}
