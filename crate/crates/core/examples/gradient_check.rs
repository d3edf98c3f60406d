//! Compares tape gradients with central differences on a small
//! conv -> PReLU -> maxpool -> linear -> log-softmax chain, in f64.

use prefallkd::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn net(tape: &mut Tape<f64>, v: &[Var]) -> prefallkd::Result<Var> {
    let h = tape.conv2d(v[0], v[1], v[2])?;
    let h = tape.prelu(h, v[3])?;
    let h = tape.maxpool2d(h, (1, 2))?;
    let h = tape.reshape(h, &[2, 4 * 6 * 2])?;
    let z = tape.linear(h, v[4], v[5])?;
    let lp = tape.log_softmax(z)?;
    let picked = tape.pick(lp, &[0, 1])?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0))
}

fn loss(inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let l = net(&mut tape, &v).unwrap();
    tape.value(l).item()
}

fn main() -> prefallkd::Result<()> {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let inputs = vec![
        random(&mut r, &[2, 1, 6, 4]),
        random(&mut r, &[4, 1, 3, 3]),
        random(&mut r, &[4]),
        random(&mut r, &[4]),
        random(&mut r, &[48, 2]),
        random(&mut r, &[2]),
    ];
    let names = ["x", "conv.w", "conv.b", "prelu.a", "fc.w", "fc.b"];

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let l = net(&mut tape, &vars)?;
    tape.backward(l)?;
    println!("loss {:.6}", tape.value(l).item());

    for (k, name) in names.iter().enumerate() {
        let g = tape.grad(vars[k]).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..inputs[k].len() {
            let mut p = inputs.clone();
            p[k].data_mut()[i] += H;
            let mut m = inputs.clone();
            m[k].data_mut()[i] -= H;
            let numeric = (loss(&p) - loss(&m)) / (2.0 * H);
            let a = g.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        println!("{name:<8} {:>4} entries  max rel err {worst:.2e}", inputs[k].len());
    }
    Ok(())
}
