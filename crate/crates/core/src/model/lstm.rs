//! Stacked LSTM over time-major sequences `[steps, batch, features]`.
//!
//! Gate columns of the fused weight matrices are ordered input, forget,
//! output, candidate so the three sigmoid gates form one contiguous slice.

use fedpaw_tensor::{Tape, Var};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};

/// Tape handles of one LSTM level: `w_ih [in, 4D]`, `w_hh [D, 4D]`,
/// `bias [4D]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmLevel {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct LstmOutput {
    /// Top-level hidden state per step, `[steps, batch, D]`.
    pub outputs: Var,
    /// Final `(h, c)` of every level, each `[batch, D]`.
    pub finals: Vec<(Var, Var)>,
}

/// Inverted dropout applied between stack levels.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn RngCore,
}

pub(crate) fn dropout_mask(rate: f64, len: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect()
}

/// Runs `levels` over `input`, returning per-step outputs and final states.
///
/// `init` supplies initial `(h, c)` per level; missing levels start at zero.
pub fn lstm_stack_forward(
    tape: &mut Tape,
    levels: &[LstmLevel],
    input: Var,
    expected_steps: usize,
    init: &[(Var, Var)],
    mut dropout: Option<Dropout<'_>>,
) -> Result<LstmOutput> {
    let shape = tape.shape(input).to_vec();
    if shape.len() != 3 {
        return Err(Error::Contract(format!(
            "LSTM input must be [steps, batch, features], got {shape:?}"
        )));
    }
    let (steps, batch) = (shape[0], shape[1]);
    if steps != expected_steps {
        return Err(Error::Contract(format!(
            "sequence length {steps} does not match configured length {expected_steps}"
        )));
    }

    let mut seq = input;
    let mut finals = Vec::with_capacity(levels.len());
    for (li, level) in levels.iter().enumerate() {
        let in_dim = *tape.shape(seq).last().unwrap();
        let gates4 = tape.shape(level.bias)[0];
        let hidden = gates4 / 4;
        if tape.shape(level.w_ih) != [in_dim, gates4] {
            return Err(Error::Contract(format!(
                "level {li}: w_ih shape {:?} does not accept {in_dim} inputs",
                tape.shape(level.w_ih)
            )));
        }

        // Input projections for every step in one product.
        let flat = tape.reshape(seq, &[steps * batch, in_dim]);
        let proj = tape.matmul(flat, level.w_ih);
        let proj = tape.add_bias(proj, level.bias);
        let proj = tape.reshape(proj, &[steps, batch, gates4]);

        let mut state = init.get(li).copied();
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let z = tape.select(proj, t);
            let z = match state {
                Some((h, _)) => tape.matmul_add(z, h, level.w_hh),
                None => z,
            };
            let hc = tape.lstm_cell(z, state.map(|(_, c)| c));
            let h = tape.slice_last(hc, 0, hidden);
            let c = tape.slice_last(hc, hidden, hidden);
            hs.push(h);
            state = Some((h, c));
        }
        let (h, c) = state.expect("at least one step");
        debug_assert_eq!(tape.shape(h), [batch, hidden]);
        finals.push((h, c));

        seq = tape.stack(&hs);
        if !tape.is_finite(seq) {
            return Err(Error::Numeric {
                layer: format!("lstm level {li}"),
            });
        }
        if li + 1 < levels.len() {
            if let Some(d) = dropout.as_mut() {
                if d.rate > 0.0 {
                    let n = steps * batch * hidden;
                    let mask = dropout_mask(d.rate, n, d.rng);
                    let mask = tape.constant(vec![steps, batch, hidden], mask);
                    seq = tape.mul(seq, mask);
                }
            }
        }
    }
    Ok(LstmOutput {
        outputs: seq,
        finals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedpaw_tensor::Tensor;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn level(tape: &mut Tape, w_ih: Vec<f64>, w_hh: Vec<f64>, bias: Vec<f64>, inp: usize) -> LstmLevel {
        let h4 = bias.len();
        LstmLevel {
            w_ih: tape.leaf(&Tensor::new(vec![inp, h4], w_ih).unwrap()),
            w_hh: tape.leaf(&Tensor::new(vec![h4 / 4, h4], w_hh).unwrap()),
            bias: tape.leaf(&Tensor::new(vec![h4], bias).unwrap()),
        }
    }

    #[test]
    fn zero_input_zero_params_gives_zero_states() {
        let mut tape = Tape::new();
        let first = level(&mut tape, vec![0.0; 3 * 8], vec![0.0; 2 * 8], vec![0.0; 8], 3);
        let second = level(&mut tape, vec![0.0; 2 * 8], vec![0.0; 2 * 8], vec![0.0; 8], 2);
        let x = tape.constant(vec![4, 2, 3], vec![0.0; 24]);
        let out = lstm_stack_forward(&mut tape, &[first, second], x, 4, &[], None).unwrap();
        assert!(tape.value(out.outputs).iter().all(|&v| v == 0.0));
        for (h, c) in out.finals {
            assert!(tape.value(h).iter().chain(tape.value(c)).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_unit_cell_matches_hand_evaluation() {
        // weights per gate (i, f, o, g): input weight, bias
        let (wi, wf, wo, wg) = (0.5, -0.3, 0.8, 1.2);
        let (bi, bf, bo, bg) = (0.1, 1.0, -0.2, 0.05);
        let (ui, uf, uo, ug) = (0.3, 0.2, -0.4, 0.7);
        let x0 = 0.9;
        let x1 = -0.4;

        let mut tape = Tape::new();
        let lv = level(&mut tape, vec![wi, wf, wo, wg], vec![ui, uf, uo, ug], vec![bi, bf, bo, bg], 1);
        let x = tape.constant(vec![2, 1, 1], vec![x0, x1]);
        let out = lstm_stack_forward(&mut tape, &[lv], x, 2, &[], None).unwrap();

        // step 0 from zero state
        let i = sig(wi * x0 + bi);
        let o = sig(wo * x0 + bo);
        let g = (wg * x0 + bg).tanh();
        let c0 = i * g;
        let h0 = o * c0.tanh();
        // step 1
        let i = sig(wi * x1 + ui * h0 + bi);
        let f = sig(wf * x1 + uf * h0 + bf);
        let o = sig(wo * x1 + uo * h0 + bo);
        let g = (wg * x1 + ug * h0 + bg).tanh();
        let c1 = f * c0 + i * g;
        let h1 = o * c1.tanh();

        let hs = tape.value(out.outputs);
        assert!((hs[0] - h0).abs() < 1e-15);
        assert!((hs[1] - h1).abs() < 1e-15);
        assert!((tape.value(out.finals[0].1)[0] - c1).abs() < 1e-15);
    }

    #[test]
    fn rejects_wrong_sequence_length() {
        let mut tape = Tape::new();
        let lv = level(&mut tape, vec![0.0; 4], vec![0.0; 4], vec![0.0; 4], 1);
        let x = tape.constant(vec![3, 1, 1], vec![0.0; 3]);
        assert!(matches!(
            lstm_stack_forward(&mut tape, &[lv], x, 5, &[], None),
            Err(Error::Contract(_))
        ));
    }
}
