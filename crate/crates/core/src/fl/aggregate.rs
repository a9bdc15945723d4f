//! Server-side aggregation: weighted averaging, the difference measure, its
//! per-layer normalisation and personalized mixing.

use fedpaw_tensor::ParamSet;

use crate::error::{Error, Result};
use crate::ClientId;

/// One uploaded local model with its data-size weight.
#[derive(Debug, Clone, Copy)]
pub struct Contribution<'a> {
    pub client: ClientId,
    pub k: f64,
    pub params: &'a ParamSet,
}

/// Contributions in client-id order with renormalised weights.
fn ordered<'a>(contribs: &[Contribution<'a>]) -> Result<Vec<(f64, &'a ParamSet)>> {
    if contribs.is_empty() {
        return Err(Error::Empty("no sampled clients to aggregate".into()));
    }
    let mut sorted = contribs.to_vec();
    sorted.sort_by_key(|c| c.client);
    if let Some(w) = sorted.windows(2).find(|w| w[0].client == w[1].client) {
        return Err(Error::Contract(format!("client {} uploaded twice", w[0].client)));
    }
    let first = sorted[0].params;
    for c in &sorted[1..] {
        first.check_congruent(c.params)?;
    }
    if let Some(c) = sorted.iter().find(|c| !(c.k.is_finite() && c.k > 0.0)) {
        return Err(Error::Contract(format!("client {} has weight {}", c.client, c.k)));
    }
    let total: f64 = sorted.iter().map(|c| c.k).sum();
    Ok(sorted.into_iter().map(|c| (c.k / total, c.params)).collect())
}

/// Sample-size weighted mean of the uploaded models.
pub fn fedavg_aggregate(contribs: &[Contribution<'_>]) -> Result<ParamSet> {
    let terms = ordered(contribs)?;
    let (w0, p0) = terms[0];
    let mut out = p0.clone();
    for t in out.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= w0);
    }
    for &(w, p) in &terms[1..] {
        for (o, src) in out.tensors_mut().zip(p.tensors()) {
            for (o, s) in o.data_mut().iter_mut().zip(src.data()) {
                *o += w * s;
            }
        }
    }
    Ok(out)
}

/// Weighted squared deviation of the local models from `global`, restricted
/// to the output-side `p` layers (renumbered `1..=p`).
pub fn compute_diff_measure(
    contribs: &[Contribution<'_>],
    global: &ParamSet,
    p: usize,
) -> Result<ParamSet> {
    let terms = ordered(contribs)?;
    global.check_congruent(terms[0].1)?;
    let start = global.top_start(p)?;
    let first = global.entries().iter().position(|e| e.layer >= start).unwrap_or(0);
    let mut out = global.top_layers(p)?.zeros_like();
    for (w, local) in terms {
        for (j, m) in out.tensors_mut().enumerate() {
            let g = global.tensor(first + j).data();
            let l = local.tensor(first + j).data();
            for ((m, g), l) in m.data_mut().iter_mut().zip(g).zip(l) {
                let d = l - g;
                *m += w * d * d;
            }
        }
    }
    Ok(out)
}

/// Min-max scales every layer (all of its tensors pooled) onto `[0, 1]`. A
/// layer with no spread maps to all zeros.
pub fn normalize_layerwise(m: &ParamSet) -> ParamSet {
    let mut out = m.clone();
    for group in m.layer_groups() {
        let vals = group.iter().flat_map(|&i| m.tensor(i).data().iter().copied());
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let range = hi - lo;
        for &i in &group {
            for v in out.tensor_mut(i).data_mut() {
                *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
            }
        }
    }
    out
}

/// Per-layer weight summary used in round logs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeightStats {
    pub layer: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// True when every weight in the layer is identical.
    pub degenerate: bool,
}

pub fn weight_stats(w: &ParamSet) -> Vec<WeightStats> {
    w.layer_groups()
        .into_iter()
        .enumerate()
        .map(|(l, group)| {
            let vals: Vec<f64> = group
                .iter()
                .flat_map(|&i| w.tensor(i).data().iter().copied())
                .collect();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            WeightStats {
                layer: l + 1,
                min,
                max,
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                degenerate: min == max,
            }
        })
        .collect()
}

/// Lower layers copied from `global`; the top `p` layers move from the
/// global value toward `local` by the element weight in `w`.
pub fn personalized_aggregate(
    global: &ParamSet,
    local: &ParamSet,
    w: &ParamSet,
    p: usize,
) -> Result<ParamSet> {
    global.check_congruent(local)?;
    let top = global.top_layers(p)?;
    top.check_congruent(w)?;
    if let Some(bad) = w.values().find(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract(format!("aggregation weight {bad} outside [0, 1]")));
    }
    let start = global.top_start(p)?;
    let first = global.entries().iter().position(|e| e.layer >= start).unwrap_or(0);
    let mut out = global.clone();
    for (j, wt) in w.tensors().enumerate() {
        let l = local.tensor(first + j).data();
        let o = out.tensor_mut(first + j).data_mut();
        for ((o, &l), &w) in o.iter_mut().zip(l).zip(wt.data()) {
            let g = *o;
            *o = if w == 0.0 {
                g
            } else if w == 1.0 {
                l
            } else {
                (g + (l - g) * w).clamp(g.min(l), g.max(l))
            };
        }
    }
    Ok(out)
}
