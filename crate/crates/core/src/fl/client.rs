use fedpaw_tensor::{Adam, ParamSet, Tape};
use rand::seq::SliceRandom;
use rand::RngCore;

use super::config::{FlConfig, Method};
use crate::dataset::ClientDataset;
use crate::error::{Error, Result};
use crate::model::{batch_input, mse_loss, SpeedModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    /// Mean batch loss in normalised target units, proximal term included.
    pub mean_loss: f64,
    pub batches: usize,
}

/// One round of local optimisation starting from `received`.
///
/// `model` and `optimizer` are updated in place; the returned parameters are
/// the model after training. FedProx adds `mu/2 * |theta - received|^2` to
/// every batch loss.
pub fn local_train(
    model: &mut SpeedModel,
    optimizer: &mut Adam,
    data: &ClientDataset,
    received: &ParamSet,
    config: &FlConfig,
    rng: &mut dyn RngCore,
) -> Result<TrainStats> {
    model.set_params(received.clone())?;
    model.params_mut().set_requires_grad(true);
    if data.train.is_empty() {
        return Ok(TrainStats {
            mean_loss: 0.0,
            batches: 0,
        });
    }
    let (steps, dim, horizon) = (model.config().history, model.config().input_dim, model.config().horizon);
    let prox = config.method == Method::FedProx && config.prox_mu > 0.0;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut total = 0.0;
    let mut batches = 0;
    for _ in 0..config.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let windows: Vec<&[f64]> = chunk.iter().map(|&i| data.train[i].x.as_slice()).collect();
            let target: Vec<f64> = chunk.iter().flat_map(|&i| data.train[i].y.iter().copied()).collect();

            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let x = tape.constant(vec![steps, chunk.len(), dim], batch_input(&windows, steps, dim));
            let pred = match model.forward(&mut tape, &vars, x, true, Some(&mut *rng)) {
                Ok(p) => p,
                Err(Error::Numeric { .. }) => {
                    return Err(Error::Diverged {
                        client: data.client,
                        batch: batches,
                    })
                }
                Err(e) => return Err(e),
            };
            let y = tape.constant(vec![chunk.len(), horizon], target);
            let loss = mse_loss(&mut tape, pred, y)?;
            let mut value = tape.value(loss)[0];
            let mut grads = tape.backward(loss)?;

            let params = model.params_mut();
            for (i, var) in vars.iter().enumerate() {
                let mut g = grads
                    .take(*var)
                    .unwrap_or_else(|| vec![0.0; params.tensor(i).numel()]);
                if prox {
                    let anchor = received.tensor(i).data();
                    let theta = params.tensor(i).data();
                    for ((g, t), a) in g.iter_mut().zip(theta).zip(anchor) {
                        let d = t - a;
                        *g += config.prox_mu * d;
                        value += 0.5 * config.prox_mu * d * d;
                    }
                }
                params.tensor_mut(i).set_grad(g)?;
            }
            if !value.is_finite() || !params.tensors().all(|t| t.grad().is_some_and(|g| g.iter().all(|v| v.is_finite()))) {
                return Err(Error::Diverged {
                    client: data.client,
                    batch: batches,
                });
            }
            optimizer.step(params, config.lr)?;
            params.clear_grads();
            total += value;
            batches += 1;
        }
    }
    Ok(TrainStats {
        mean_loss: total / batches as f64,
        batches,
    })
}
