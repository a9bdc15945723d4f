use serde::{Deserialize, Serialize};

use super::features::Feature;
use super::window::Window;
use crate::error::{Error, Result};

/// Per-feature z-score statistics fitted on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub continuous: Vec<bool>,
    /// Features whose training variance was zero; their scale is 1.
    pub degenerate: Vec<bool>,
}

impl NormStats {
    /// Fits on every input row of `windows`. Target speed must be column 0,
    /// its statistics scale the targets too.
    pub fn fit(windows: &[Window], features: &[Feature]) -> Result<Self> {
        let d = features.len();
        if features.first() != Some(&Feature::TargetSpeed) {
            return Err(Error::Contract("target speed must be feature 0".into()));
        }
        if windows.is_empty() {
            return Err(Error::Empty("no training windows to fit normalisation".into()));
        }
        let mut mean = vec![0.0; d];
        let mut count = 0usize;
        for w in windows {
            for row in w.x.chunks(d) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
                count += 1;
            }
        }
        let n = count as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for w in windows {
            for row in w.x.chunks(d) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let continuous: Vec<bool> = features.iter().map(|f| f.is_continuous()).collect();
        let mut degenerate = vec![false; d];
        let mut std = vec![1.0; d];
        let mut means = vec![0.0; d];
        for i in 0..d {
            if !continuous[i] {
                continue;
            }
            let s = (var[i] / n).sqrt();
            means[i] = mean[i];
            if s > 1e-12 {
                std[i] = s;
            } else {
                degenerate[i] = true;
            }
        }
        Ok(NormStats {
            mean: means,
            std,
            continuous,
            degenerate,
        })
    }

    pub fn apply(&self, w: &mut Window) {
        let d = self.mean.len();
        for row in w.x.chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        for y in &mut w.y {
            *y = self.scale_target(*y);
        }
    }

    pub fn scale_target(&self, y: f64) -> f64 {
        (y - self.mean[0]) / self.std[0]
    }

    pub fn unscale_target(&self, y: f64) -> f64 {
        y * self.std[0] + self.mean[0]
    }
}
