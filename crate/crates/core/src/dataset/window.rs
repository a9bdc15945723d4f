use super::features::Feature;
use super::record::DrivingRecord;
use crate::error::{Error, Result};

/// One supervised example: `history` feature rows ending at `end`, and the
/// target speeds of the following `horizon` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Row-major `[history, features]`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Timestamp of the last input row.
    pub end: u32,
}

impl Window {
    /// First timestamp read by the input rows.
    pub fn input_start(&self, history: usize) -> u32 {
        self.end + 1 - history as u32
    }

    /// Last timestamp read by the targets.
    pub fn target_end(&self, horizon: usize) -> u32 {
        self.end + horizon as u32
    }
}

/// Slides a window over every contiguous stretch of `records`.
///
/// A window is dropped when the target vehicle stands still for its whole
/// span from the last input row to the last target (parking). Windows never
/// bridge a gap in timestamps.
pub fn build_windows(
    records: &[DrivingRecord],
    features: &[Feature],
    history: usize,
    horizon: usize,
) -> Result<Vec<Window>> {
    if history != horizon {
        return Err(Error::Contract(format!(
            "history length {history} must equal horizon {horizon}"
        )));
    }
    if history == 0 {
        return Err(Error::Contract("history length must be positive".into()));
    }
    let needs_future = features
        .iter()
        .filter_map(|f| match f {
            Feature::LightFuture(j) => Some(*j),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    if let Some(r) = records.iter().find(|r| r.light_future.len() < needs_future) {
        return Err(Error::Validation(format!(
            "t={}: {} future signal states, features need {needs_future}",
            r.t,
            r.light_future.len()
        )));
    }

    let span = history + horizon;
    let mut out = Vec::new();
    let mut seg_start = 0;
    while seg_start < records.len() {
        let mut seg_end = seg_start + 1;
        while seg_end < records.len() && records[seg_end].t == records[seg_end - 1].t + 1 {
            seg_end += 1;
        }
        let seg = &records[seg_start..seg_end];
        if seg.len() >= span {
            for s in 0..=seg.len() - span {
                let k = s + history - 1;
                if seg[k..=k + horizon].iter().all(|r| r.v_target == 0.0) {
                    continue;
                }
                let mut x = Vec::with_capacity(history * features.len());
                for r in &seg[s..=k] {
                    x.extend(features.iter().map(|f| f.value(r)));
                }
                let y = seg[k + 1..=k + horizon].iter().map(|r| r.v_target).collect();
                out.push(Window { x, y, end: seg[k].t });
            }
        }
        seg_start = seg_end;
    }
    Ok(out)
}

/// Record index splitting a trace chronologically at `train_fraction`.
pub fn split_point(len: usize, train_fraction: f64) -> usize {
    ((len as f64 * train_fraction).round() as usize).min(len)
}
