//! Reverse-mode gradients of every primitive against central finite
//! differences (h = 1e-5) on random inputs in [-1, 1].

use fedpaw_tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap().with_grad(true)
}

/// Projects a tensor-valued output onto fixed random weights so every output
/// element contributes to the scalar.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.shape(out).to_vec();
    if shape.is_empty() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let w = tape.constant(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let p = tape.mul(out, w);
    tape.sum(p)
}

fn eval(inputs: &[Tensor], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars);
    let loss = project(&mut tape, out, 99);
    tape.value(loss)[0]
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn check(name: &str, shapes: &[&[usize]], build: &Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars);
    let loss = project(&mut tape, out, 99);
    let grads = tape.backward(loss).unwrap();

    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).expect("leaf gradient").to_vec();
        for j in 0..input.numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * H);
            let e = rel_err(analytic[j], numeric);
            assert!(
                e < TOL,
                "{name}: input {i} element {j}: analytic {} numeric {numeric} rel {e}",
                analytic[j]
            );
        }
    }
}

#[test]
fn matmul() {
    check("matmul", &[&[3, 4], &[4, 2]], &|t, v| t.matmul(v[0], v[1]));
}

#[test]
fn elementwise() {
    check("add", &[&[2, 3], &[2, 3]], &|t, v| t.add(v[0], v[1]));
    check("sub", &[&[2, 3], &[2, 3]], &|t, v| t.sub(v[0], v[1]));
    check("mul", &[&[2, 3], &[2, 3]], &|t, v| t.mul(v[0], v[1]));
    check("square", &[&[5]], &|t, v| t.mul(v[0], v[0]));
    check("scale", &[&[4]], &|t, v| t.scale(v[0], -2.5));
    check("add_bias", &[&[3, 4], &[4]], &|t, v| t.add_bias(v[0], v[1]));
}

#[test]
fn activations() {
    check("sigmoid", &[&[3, 3]], &|t, v| t.sigmoid(v[0]));
    check("tanh", &[&[3, 3]], &|t, v| t.tanh(v[0]));
    check("softmax", &[&[2, 3, 4]], &|t, v| t.softmax_last(v[0]));
}

#[test]
fn reductions_and_loss() {
    check("sum", &[&[2, 3]], &|t, v| t.sum(v[0]));
    check("mean", &[&[2, 3]], &|t, v| t.mean(v[0]));
    check("mse", &[&[2, 3], &[2, 3]], &|t, v| t.mse(v[0], v[1]));
}

#[test]
fn shape_ops() {
    check("slice", &[&[3, 6]], &|t, v| t.slice_last(v[0], 2, 3));
    check("concat", &[&[3, 2], &[3, 4]], &|t, v| t.concat_last(&[v[0], v[1]]));
    check("stack", &[&[2, 3], &[2, 3]], &|t, v| t.stack(&[v[0], v[1]]));
    check("select", &[&[3, 2, 2]], &|t, v| t.select(v[0], 1));
    check("reshape", &[&[2, 6]], &|t, v| t.reshape(v[0], &[3, 4]));
    check("permute", &[&[2, 3, 4]], &|t, v| t.permute(v[0], &[1, 2, 0]));
}

#[test]
fn batched_matmul() {
    check("bmm", &[&[2, 3, 4], &[2, 4, 5]], &|t, v| t.bmm(v[0], v[1], false));
    check("bmm_nt", &[&[2, 3, 4], &[2, 5, 4]], &|t, v| t.bmm(v[0], v[1], true));
}

#[test]
fn composite_lstm_like_cell() {
    // gates -> sigmoid/tanh -> state update, the shape of one recurrent step
    check("cell", &[&[2, 3], &[3, 8], &[8], &[2, 2]], &|t, v| {
        let z = t.matmul(v[0], v[1]);
        let z = t.add_bias(z, v[2]);
        let s = t.slice_last(z, 0, 6);
        let s = t.sigmoid(s);
        let i = t.slice_last(s, 0, 2);
        let f = t.slice_last(s, 2, 2);
        let o = t.slice_last(s, 4, 2);
        let g = t.slice_last(z, 6, 2);
        let g = t.tanh(g);
        let fc = t.mul(f, v[3]);
        let ig = t.mul(i, g);
        let c = t.add(fc, ig);
        let tc = t.tanh(c);
        t.mul(o, tc)
    });
}

#[test]
fn matmul_add() {
    check("matmul_add", &[&[3, 2], &[3, 4], &[4, 2]], &|t, v| t.matmul_add(v[0], v[1], v[2]));
}

#[test]
fn fused_lstm_cell() {
    check("lstm_cell", &[&[2, 12], &[2, 3]], &|t, v| t.lstm_cell(v[0], Some(v[1])));
    check("lstm_cell_zero_state", &[&[3, 8]], &|t, v| t.lstm_cell(v[0], None));
}

#[test]
fn fused_cell_matches_unfused() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = random(&mut rng, &[2, 8]);
    let c = random(&mut rng, &[2, 2]);
    let mut tape = Tape::new();
    let (zv, cv) = (tape.leaf(&z), tape.leaf(&c));
    let fused = tape.lstm_cell(zv, Some(cv));
    let sig = tape.slice_last(zv, 0, 6);
    let sig = tape.sigmoid(sig);
    let (i, f, o) = (tape.slice_last(sig, 0, 2), tape.slice_last(sig, 2, 2), tape.slice_last(sig, 4, 2));
    let g = tape.slice_last(zv, 6, 2);
    let g = tape.tanh(g);
    let fc = tape.mul(f, cv);
    let ig = tape.mul(i, g);
    let cn = tape.add(fc, ig);
    let tc = tape.tanh(cn);
    let h = tape.mul(o, tc);
    let both = tape.concat_last(&[h, cn]);
    for (a, b) in tape.value(fused).iter().zip(tape.value(both)) {
        assert!((a - b).abs() < 1e-15);
    }
}
