use fedpaw::model::{gradient_check, ModelConfig, ModelKind, SpeedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        input_dim: 4,
        hidden_dim: 8,
        encoder_layers: 2,
        decoder_layers: 2,
        num_heads: 2,
        dropout: 0.0,
        history: 3,
        horizon: 3,
    }
}

fn check(kind: ModelKind, seed: u64) {
    let cfg = tiny(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SpeedModel::new(cfg.clone(), &mut rng).unwrap();
    let x: Vec<f64> = (0..cfg.history * cfg.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..cfg.horizon).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = gradient_check(&model, &[x.as_slice()], &y, 1e-5, 1e-4).unwrap();
    assert_eq!(r.checked, model.num_params());
    assert_eq!(r.failed, 0, "max relative error {}", r.max_rel_error);
}

#[test]
fn seq2seq_gradients_match_finite_differences() {
    check(ModelKind::Seq2seqAttention, 1);
}

#[test]
fn plain_lstm_gradients_match_finite_differences() {
    check(ModelKind::PlainLstm, 2);
}
