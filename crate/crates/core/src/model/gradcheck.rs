use fedpaw_tensor::Tape;

use super::{batch_input, mse_loss, SpeedModel};
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub failed: usize,
    pub max_rel_error: f64,
}

/// Denominator floor so parameters with vanishing gradient compare on an
/// absolute scale.
const FLOOR: f64 = 1e-6;

/// Eval-mode MSE of `model` on row-major `windows` against `targets`.
pub fn loss_of(model: &SpeedModel, windows: &[&[f64]], targets: &[f64]) -> Result<f64> {
    let (loss, _) = loss_and_grads(model, windows, targets, false)?;
    Ok(loss)
}

fn loss_and_grads(
    model: &SpeedModel,
    windows: &[&[f64]],
    targets: &[f64],
    grads: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let cfg = model.config();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let x = tape.constant(
        vec![cfg.history, windows.len(), cfg.input_dim],
        batch_input(windows, cfg.history, cfg.input_dim),
    );
    let pred = model.forward(&mut tape, &vars, x, false, None)?;
    let y = tape.constant(vec![windows.len(), cfg.horizon], targets.to_vec());
    let loss = mse_loss(&mut tape, pred, y)?;
    let value = tape.value(loss)[0];
    if !grads {
        return Ok((value, Vec::new()));
    }
    let mut g = tape.backward(loss)?;
    let out = vars
        .iter()
        .zip(model.params().tensors())
        .map(|(v, t)| g.take(*v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    Ok((value, out))
}

/// Checks every parameter of `model` with step `h`; a parameter fails when
/// `|a - n| / max(|a|, |n|, 1e-6)` reaches `tol`.
pub fn gradient_check(model: &SpeedModel, windows: &[&[f64]], targets: &[f64], h: f64, tol: f64) -> Result<GradCheck> {
    let mut m = model.clone();
    m.params_mut().set_requires_grad(true);
    let (_, analytic) = loss_and_grads(&m, windows, targets, true)?;
    let mut report = GradCheck {
        checked: 0,
        failed: 0,
        max_rel_error: 0.0,
    };
    for (i, a_t) in analytic.iter().enumerate() {
        for (j, &a) in a_t.iter().enumerate() {
            let orig = m.params().tensor(i).data()[j];
            m.params_mut().tensor_mut(i).data_mut()[j] = orig + h;
            let up = loss_of(&m, windows, targets)?;
            m.params_mut().tensor_mut(i).data_mut()[j] = orig - h;
            let down = loss_of(&m, windows, targets)?;
            m.params_mut().tensor_mut(i).data_mut()[j] = orig;
            let n = (up - down) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(FLOOR);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= tol {
                report.failed += 1;
            }
        }
    }
    Ok(report)
}
