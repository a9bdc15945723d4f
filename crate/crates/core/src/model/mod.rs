//! Speed predictor: LSTM encoder, multi-head self-attention, LSTM decoder and
//! a linear head mapping each decoder step to one speed.
//!
//! Aggregation layers, input side first: encoder levels `1..=E`, attention
//! `E + 1`, decoder levels `E + 2..=E + 1 + D`, then the head. The plain
//! LSTM variant has encoder levels followed by the head.

mod attention;
mod config;
mod gradcheck;
mod lstm;

use std::fs;
use std::path::Path;

use fedpaw_tensor::{ParamEntry, ParamSet, Tape, Tensor, Var};
use rand::{Rng, RngCore};

pub use attention::{multi_head_attention, AttentionOutput, AttentionParams};
pub use config::{ModelConfig, ModelKind};
pub use gradcheck::{gradient_check, loss_of, GradCheck};
pub use lstm::{lstm_stack_forward, Dropout, LstmLevel, LstmOutput};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct LstmSlots {
    w_ih: usize,
    w_hh: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<LstmSlots>,
    attention: Option<[usize; 8]>,
    decoder: Vec<LstmSlots>,
    head_w: usize,
    head_b: usize,
}

/// Parameter shapes in entry order, with the fan-in used for initialization.
fn blueprint(config: &ModelConfig) -> (Vec<(usize, String, Vec<usize>, usize)>, Layout) {
    let d = config.hidden_dim;
    let mut specs = Vec::new();
    let mut push = |layer: usize, name: String, shape: Vec<usize>, fan_in: usize| {
        specs.push((layer, name, shape, fan_in));
        specs.len() - 1
    };
    let lstm_level = |push: &mut dyn FnMut(usize, String, Vec<usize>, usize) -> usize,
                          layer: usize,
                          prefix: &str,
                          in_dim: usize| LstmSlots {
        w_ih: push(layer, format!("{prefix}.w_ih"), vec![in_dim, 4 * d], in_dim),
        w_hh: push(layer, format!("{prefix}.w_hh"), vec![d, 4 * d], d),
        bias: push(layer, format!("{prefix}.bias"), vec![4 * d], d),
    };

    let mut layer = 0;
    let mut encoder = Vec::new();
    for l in 0..config.encoder_layers {
        layer += 1;
        let in_dim = if l == 0 { config.input_dim } else { d };
        encoder.push(lstm_level(&mut push, layer, &format!("encoder.{l}"), in_dim));
    }
    let (attention, decoder, head_out) = match config.kind {
        ModelKind::Seq2seqAttention => {
            layer += 1;
            let mut slots = [0; 8];
            for (j, name) in ["q", "k", "v", "o"].iter().enumerate() {
                slots[2 * j] = push(layer, format!("attention.w_{name}"), vec![d, d], d);
                slots[2 * j + 1] = push(layer, format!("attention.b_{name}"), vec![d], d);
            }
            let mut decoder = Vec::new();
            for l in 0..config.decoder_layers {
                layer += 1;
                decoder.push(lstm_level(&mut push, layer, &format!("decoder.{l}"), d));
            }
            (Some(slots), decoder, 1)
        }
        ModelKind::PlainLstm => (None, Vec::new(), config.horizon),
    };
    layer += 1;
    let head_w = push(layer, "head.w".into(), vec![d, head_out], d);
    let head_b = push(layer, "head.b".into(), vec![head_out], d);
    (
        specs,
        Layout {
            encoder,
            attention,
            decoder,
            head_w,
            head_b,
        },
    )
}

fn dropout_of<'a>(rate: f64, rng: &'a mut Option<&mut dyn RngCore>) -> Option<Dropout<'a>> {
    rng.as_mut().map(|r| Dropout { rate, rng: &mut **r })
}

/// Model parameters together with the configuration that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedModel {
    config: ModelConfig,
    params: ParamSet,
}

/// Time-major batch input `[M, B, input_dim]` built from row-major windows.
pub fn batch_input(windows: &[&[f64]], steps: usize, input_dim: usize) -> Vec<f64> {
    let b = windows.len();
    let mut out = vec![0.0; steps * b * input_dim];
    for (bi, w) in windows.iter().enumerate() {
        debug_assert_eq!(w.len(), steps * input_dim);
        for t in 0..steps {
            let dst = (t * b + bi) * input_dim;
            out[dst..dst + input_dim].copy_from_slice(&w[t * input_dim..(t + 1) * input_dim]);
        }
    }
    out
}

impl SpeedModel {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization with LSTM
    /// forget-gate biases set to 1.
    pub fn new(config: ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let (specs, layout) = blueprint(&config);
        let forget_bias: Vec<usize> = layout
            .encoder
            .iter()
            .chain(&layout.decoder)
            .map(|s| s.bias)
            .collect();
        let mut entries = Vec::with_capacity(specs.len());
        for (idx, (layer, name, shape, fan_in)) in specs.into_iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let mut data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            if forget_bias.contains(&idx) {
                data[d..2 * d].iter_mut().for_each(|v| *v = 1.0);
            }
            entries.push(ParamEntry {
                layer,
                name,
                tensor: Tensor::new(shape, data)?.with_grad(true),
            });
        }
        Ok(Self {
            config,
            params: ParamSet::new(entries)?,
        })
    }

    /// All-zero parameters, used as a structural template.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (specs, _) = blueprint(&config);
        let entries = specs
            .into_iter()
            .map(|(layer, name, shape, _)| {
                Ok(ParamEntry {
                    layer,
                    name,
                    tensor: Tensor::zeros(&shape)?.with_grad(true),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            params: ParamSet::new(entries)?,
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let template = Self::zeroed(config.clone())?;
        template.params.check_congruent(&params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        self.params.check_congruent(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    /// Records the parameters as tape leaves, in entry order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors().map(|t| tape.leaf(t)).collect()
    }

    /// Forward pass over a time-major input `[M, B, input_dim]`, returning
    /// predictions `[B, H]`. Dropout is active only when `training` and an
    /// RNG is supplied.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        input: Var,
        training: bool,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let cfg = &self.config;
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} bound parameters for a model with {}",
                vars.len(),
                self.params.len()
            )));
        }
        let shape = tape.shape(input).to_vec();
        if shape.len() != 3 || shape[2] != cfg.input_dim {
            return Err(Error::Contract(format!(
                "input shape {shape:?} does not match [M, B, {}]",
                cfg.input_dim
            )));
        }
        let batch = shape[1];
        let (_, layout) = blueprint(cfg);
        let level = |s: &LstmSlots| LstmLevel {
            w_ih: vars[s.w_ih],
            w_hh: vars[s.w_hh],
            bias: vars[s.bias],
        };
        let encoder: Vec<LstmLevel> = layout.encoder.iter().map(level).collect();
        let mut rng = if training { rng } else { None };
        let rate = cfg.dropout;

        let enc = lstm_stack_forward(tape, &encoder, input, cfg.history, &[], dropout_of(rate, &mut rng))?;

        let pred = match layout.attention {
            Some(a) => {
                let attn = AttentionParams {
                    w_q: vars[a[0]],
                    b_q: vars[a[1]],
                    w_k: vars[a[2]],
                    b_k: vars[a[3]],
                    w_v: vars[a[4]],
                    b_v: vars[a[5]],
                    w_o: vars[a[6]],
                    b_o: vars[a[7]],
                };
                let ctx = multi_head_attention(tape, &attn, enc.outputs, cfg.num_heads)?;
                let decoder: Vec<LstmLevel> = layout.decoder.iter().map(level).collect();
                let dec = lstm_stack_forward(
                    tape,
                    &decoder,
                    ctx.output,
                    cfg.horizon,
                    &enc.finals,
                    dropout_of(rate, &mut rng),
                )?;
                let d = cfg.hidden_dim;
                let flat = tape.reshape(dec.outputs, &[cfg.horizon * batch, d]);
                let y = tape.matmul(flat, vars[layout.head_w]);
                let y = tape.add_bias(y, vars[layout.head_b]);
                let y = tape.reshape(y, &[cfg.horizon, batch]);
                tape.permute(y, &[1, 0])
            }
            None => {
                let (h_last, _) = *enc.finals.last().expect("encoder has levels");
                let y = tape.matmul(h_last, vars[layout.head_w]);
                tape.add_bias(y, vars[layout.head_b])
            }
        };
        if !tape.is_finite(pred) {
            return Err(Error::Numeric {
                layer: "head".into(),
            });
        }
        Ok(pred)
    }

    /// Eval-mode predictions for row-major windows `[M x input_dim]`.
    pub fn predict(&self, windows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let cfg = &self.config;
        let want = cfg.history * cfg.input_dim;
        if let Some(w) = windows.iter().find(|w| w.len() != want) {
            return Err(Error::Contract(format!(
                "window has {} values, expected {want}",
                w.len()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(
            vec![cfg.history, windows.len(), cfg.input_dim],
            batch_input(windows, cfg.history, cfg.input_dim),
        );
        let y = self.forward(&mut tape, &vars, x, false, None)?;
        Ok(tape.value(y).chunks(cfg.horizon).map(<[f64]>::to_vec).collect())
    }

    /// Writes `<stem>.fpaw` (parameters) and `<stem>.json` (configuration).
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let bin = stem.with_extension("fpaw");
        let json = stem.with_extension("json");
        self.params.save(&bin)?;
        let cfg = serde_json::to_string_pretty(&self.config)?;
        fs::write(&json, cfg).map_err(|e| Error::io(&json, e))
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        let json = stem.with_extension("json");
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        let params = ParamSet::load(stem.with_extension("fpaw"))?;
        Self::from_params(config, params)
    }
}

/// Mean squared error between `[B, H]` predictions and targets.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::Contract(format!(
            "prediction shape {:?} vs target shape {:?}",
            tape.shape(pred),
            tape.shape(target)
        )));
    }
    Ok(tape.mse(pred, target))
}
