//! Multi-head scaled dot-product self-attention over `[steps, batch, D]`.

use fedpaw_tensor::{Tape, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
    pub w_o: Var,
    pub b_o: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// `[steps, batch, D]`, same shape as the input.
    pub output: Var,
    /// Attention probabilities `[batch * heads, steps, steps]`.
    pub weights: Var,
}

fn split_heads(tape: &mut Tape, x: Var, steps: usize, batch: usize, heads: usize, dh: usize) -> Var {
    let x = tape.reshape(x, &[steps, batch, heads, dh]);
    let x = tape.permute(x, &[1, 2, 0, 3]);
    tape.reshape(x, &[batch * heads, steps, dh])
}

/// Per head `softmax(Q K^T / sqrt(d_head)) V`, heads concatenated and passed
/// through the output projection.
pub fn multi_head_attention(
    tape: &mut Tape,
    params: &AttentionParams,
    input: Var,
    num_heads: usize,
) -> Result<AttentionOutput> {
    let shape = tape.shape(input).to_vec();
    if shape.len() != 3 {
        return Err(Error::Contract(format!(
            "attention input must be [steps, batch, D], got {shape:?}"
        )));
    }
    let (steps, batch, d) = (shape[0], shape[1], shape[2]);
    if num_heads == 0 || d % num_heads != 0 {
        return Err(Error::Contract(format!(
            "hidden size {d} not divisible by {num_heads} heads"
        )));
    }
    let dh = d / num_heads;

    let flat = tape.reshape(input, &[steps * batch, d]);
    let mut project = |w: Var, b: Var| {
        let p = tape.matmul(flat, w);
        let p = tape.add_bias(p, b);
        split_heads(tape, p, steps, batch, num_heads, dh)
    };
    let q = project(params.w_q, params.b_q);
    let k = project(params.w_k, params.b_k);
    let v = project(params.w_v, params.b_v);

    let scores = tape.bmm(q, k, true);
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = tape.softmax_last(scores);
    let ctx = tape.bmm(weights, v, false);

    let ctx = tape.reshape(ctx, &[batch, num_heads, steps, dh]);
    let ctx = tape.permute(ctx, &[2, 0, 1, 3]);
    let ctx = tape.reshape(ctx, &[steps * batch, d]);
    let out = tape.matmul(ctx, params.w_o);
    let out = tape.add_bias(out, params.b_o);
    let output = tape.reshape(out, &[steps, batch, d]);
    if !tape.is_finite(output) {
        return Err(Error::Numeric {
            layer: "attention".into(),
        });
    }
    Ok(AttentionOutput { output, weights })
}
