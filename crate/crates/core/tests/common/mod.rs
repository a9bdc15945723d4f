#![allow(dead_code)]

use fedpaw::dataset::{default_profiles, generate_synthetic_client, ClientDataset, FeatureGroup};
use fedpaw::model::ModelConfig;
use fedpaw::ClientId;
use fedpaw_tensor::{ParamEntry, ParamSet, Tensor};
use rand::Rng;

pub fn tiny_model(group: FeatureGroup, horizon: usize) -> ModelConfig {
    let mut m = ModelConfig::for_horizon(group.input_dim(horizon), horizon).with_hidden(8);
    m.num_heads = 2;
    m.encoder_layers = 1;
    m.decoder_layers = 1;
    m.dropout = 0.0;
    m
}

/// Short synthetic traces for `n` clients with distinct drivers.
pub fn toy_datasets(n: usize, duration_s: usize, horizon: usize, group: FeatureGroup) -> Vec<ClientDataset> {
    default_profiles(n, 11)
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let recs = generate_synthetic_client(p, duration_s, horizon, 100 + i as u64).unwrap();
            ClientDataset::build(ClientId(i as u32), &recs, group, horizon).unwrap()
        })
        .collect()
}

/// Layer sizes of a random small ParamSet: 1 to 3 layers, each split into
/// one or two tensors, at most 8 values per layer.
pub fn random_layout(rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let layers = rng.gen_range(1..=3);
    let mut out = Vec::new();
    for l in 1..=layers {
        let total = rng.gen_range(1..=8);
        if total > 1 && rng.gen_bool(0.5) {
            let a = rng.gen_range(1..total);
            out.push((l, a));
            out.push((l, total - a));
        } else {
            out.push((l, total));
        }
    }
    out
}

pub fn random_set(rng: &mut impl Rng, layout: &[(usize, usize)]) -> ParamSet {
    let entries = layout
        .iter()
        .enumerate()
        .map(|(i, &(layer, n))| ParamEntry {
            layer,
            name: format!("t{i}"),
            tensor: Tensor::from_vec((0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap(),
        })
        .collect();
    ParamSet::new(entries).unwrap()
}

/// Flat values with their layer index.
pub fn flat(p: &ParamSet) -> Vec<(usize, f64)> {
    p.entries()
        .iter()
        .flat_map(|e| e.tensor.data().iter().map(move |&v| (e.layer, v)))
        .collect()
}

pub fn brute_fedavg(locals: &[(f64, &ParamSet)]) -> Vec<f64> {
    let total: f64 = locals.iter().map(|(k, _)| k).sum();
    let n = flat(locals[0].1).len();
    (0..n)
        .map(|q| {
            let num: f64 = locals.iter().map(|(k, p)| k * flat(p)[q].1).sum();
            num / total
        })
        .collect()
}

pub fn max_layer(p: &ParamSet) -> usize {
    p.entries().iter().map(|e| e.layer).max().unwrap()
}

/// Difference measure over the values whose layer is among the top `p`.
pub fn brute_diff(locals: &[(f64, &ParamSet)], global: &ParamSet, p: usize) -> Vec<(usize, f64)> {
    let total: f64 = locals.iter().map(|(k, _)| k).sum();
    let lmax = max_layer(global);
    let g = flat(global);
    g.iter()
        .enumerate()
        .filter(|(_, (l, _))| *l + p > lmax)
        .map(|(q, &(l, gv))| {
            let m: f64 = locals
                .iter()
                .map(|(k, loc)| {
                    let d = flat(loc)[q].1 - gv;
                    k / total * d * d
                })
                .sum();
            (l, m)
        })
        .collect()
}

pub fn brute_normalize(m: &[(usize, f64)]) -> Vec<f64> {
    m.iter()
        .map(|&(l, v)| {
            let same: Vec<f64> = m.iter().filter(|(k, _)| *k == l).map(|(_, v)| *v).collect();
            let lo = same.iter().cloned().fold(f64::MAX, f64::min);
            let hi = same.iter().cloned().fold(f64::MIN, f64::max);
            if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                0.0
            }
        })
        .collect()
}

/// Eq-style mixing on flat values: lower layers global, top layers blended.
pub fn brute_personalized(global: &ParamSet, local: &ParamSet, w: &[f64], p: usize) -> Vec<f64> {
    let lmax = max_layer(global);
    let mut wi = w.iter();
    flat(global)
        .iter()
        .zip(flat(local))
        .map(|(&(l, g), (_, x))| if l + p > lmax { g + (x - g) * wi.next().unwrap() } else { g })
        .collect()
}
