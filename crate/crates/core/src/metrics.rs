//! Test-set error in m/s, physics baselines and best-round tracking.

use serde::{Deserialize, Serialize};

use crate::dataset::{ClientDataset, Window};
use crate::error::{Error, Result};
use crate::model::SpeedModel;
use crate::ClientId;

const EVAL_BATCH: usize = 256;

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Empty(format!(
            "need equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    let mse = pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Constant velocity: every future step repeats the last observed speed.
pub fn cv_predict(history: &[f64], horizon: usize) -> Vec<f64> {
    let last = history.last().copied().unwrap_or(0.0);
    vec![last; horizon]
}

/// Constant acceleration from the last two speeds, never below zero.
pub fn ca_predict(history: &[f64], horizon: usize) -> Vec<f64> {
    match history {
        [.., prev, last] => {
            let a = last - prev;
            (1..=horizon).map(|h| (last + h as f64 * a).max(0.0)).collect()
        }
        _ => cv_predict(history, horizon),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    CV,
    CA,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client: ClientId,
    pub mae: f64,
    pub rmse: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub round: usize,
    pub method: String,
    pub per_client: Vec<ClientMetrics>,
    /// Clients left out because they had no test windows.
    pub excluded: Vec<ClientId>,
    pub mean_mae: f64,
    pub mean_rmse: f64,
}

impl EvalReport {
    fn from_clients(round: usize, method: String, per_client: Vec<ClientMetrics>, excluded: Vec<ClientId>) -> Result<Self> {
        if per_client.is_empty() {
            return Err(Error::Empty("no client has test windows".into()));
        }
        let n = per_client.len() as f64;
        let mean_mae = per_client.iter().map(|c| c.mae).sum::<f64>() / n;
        let mean_rmse = per_client.iter().map(|c| c.rmse).sum::<f64>() / n;
        Ok(EvalReport {
            round,
            method,
            per_client,
            excluded,
            mean_mae,
            mean_rmse,
        })
    }
}

fn score(pred: &[f64], data: &ClientDataset) -> Result<ClientMetrics> {
    let target: Vec<f64> = data
        .test
        .iter()
        .flat_map(|w| w.y.iter().map(|&y| data.stats.unscale_target(y)))
        .collect();
    Ok(ClientMetrics {
        client: data.client,
        mae: mae(pred, &target)?,
        rmse: rmse(pred, &target)?,
        windows: data.test.len(),
    })
}

/// Test-set speed predictions of `model` for one client, in m/s.
pub fn predict_test(model: &SpeedModel, data: &ClientDataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.test.len() * data.horizon);
    for chunk in data.test.chunks(EVAL_BATCH) {
        let windows: Vec<&[f64]> = chunk.iter().map(|w| w.x.as_slice()).collect();
        for row in model.predict(&windows)? {
            out.extend(row.into_iter().map(|y| data.stats.unscale_target(y)));
        }
    }
    Ok(out)
}

/// Evaluates each client's own model on its test windows. `models` pairs
/// with `clients` by position.
pub fn evaluate(models: &[&SpeedModel], clients: &[ClientDataset], round: usize, method: &str) -> Result<EvalReport> {
    if models.len() != clients.len() {
        return Err(Error::Contract(format!(
            "{} models for {} clients",
            models.len(),
            clients.len()
        )));
    }
    let mut per_client = Vec::new();
    let mut excluded = Vec::new();
    for (model, data) in models.iter().zip(clients) {
        if data.test.is_empty() {
            excluded.push(data.client);
            continue;
        }
        let pred = predict_test(model, data)?;
        per_client.push(score(&pred, data)?);
    }
    EvalReport::from_clients(round, method.to_string(), per_client, excluded)
}

/// Observed target speeds of a window's input rows, in m/s.
pub fn speed_history(w: &Window, data: &ClientDataset) -> Vec<f64> {
    let d = data.input_dim();
    w.x.chunks(d).map(|row| data.stats.unscale_target(row[0])).collect()
}

pub fn evaluate_baseline(kind: Baseline, clients: &[ClientDataset]) -> Result<EvalReport> {
    let mut per_client = Vec::new();
    let mut excluded = Vec::new();
    for data in clients {
        if data.test.is_empty() {
            excluded.push(data.client);
            continue;
        }
        let pred: Vec<f64> = data
            .test
            .iter()
            .flat_map(|w| {
                let h = speed_history(w, data);
                match kind {
                    Baseline::CV => cv_predict(&h, data.horizon),
                    Baseline::CA => ca_predict(&h, data.horizon),
                }
            })
            .collect();
        per_client.push(score(&pred, data)?);
    }
    EvalReport::from_clients(0, format!("{kind:?}"), per_client, excluded)
}

/// Keeps the round with the lowest mean test MAE and counts rounds since.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestTracker {
    pub best: Option<EvalReport>,
    pub since_best: usize,
    /// Rounds without improvement before stopping; `None` never stops.
    pub patience: Option<usize>,
}

impl BestTracker {
    pub fn new(patience: Option<usize>) -> Self {
        BestTracker {
            best: None,
            since_best: 0,
            patience,
        }
    }

    /// Returns true when `report` becomes the new best.
    pub fn update(&mut self, report: &EvalReport) -> bool {
        let better = self.best.as_ref().is_none_or(|b| report.mean_mae < b.mean_mae);
        if better {
            self.best = Some(report.clone());
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        better
    }

    pub fn best_mae(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.mean_mae)
    }

    pub fn should_stop(&self) -> bool {
        self.patience.is_some_and(|p| self.since_best >= p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_examples() {
        assert_eq!(mae(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert!((rmse(&[1.0, 3.0], &[0.0, 0.0]).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&[2.0], &[2.0]).unwrap(), 0.0);
        assert!(mae(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_error_equalises_metrics() {
        let y = [0.5, 2.0, 7.0];
        let p: Vec<f64> = y.iter().map(|v| v - 1.5).collect();
        assert!((mae(&p, &y).unwrap() - 1.5).abs() < 1e-12);
        assert!((rmse(&p, &y).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn baselines() {
        assert_eq!(cv_predict(&[1.0, 5.0], 5), vec![5.0; 5]);
        assert_eq!(ca_predict(&[3.0, 4.0, 5.0], 5), vec![6.0, 7.0, 8.0, 9.0, 10.0]);
        assert_eq!(ca_predict(&[2.0, 0.0], 3), vec![0.0; 3]);
    }

    fn report(round: usize, m: f64) -> EvalReport {
        EvalReport::from_clients(
            round,
            "x".into(),
            vec![ClientMetrics {
                client: ClientId(0),
                mae: m,
                rmse: m,
                windows: 1,
            }],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn tracker_patience() {
        let mut t = BestTracker::new(Some(2));
        assert!(t.update(&report(0, 3.0)));
        assert!(!t.update(&report(1, 3.0)));
        assert!(t.update(&report(2, 2.0)));
        assert!(!t.update(&report(3, 2.5)));
        assert!(!t.should_stop());
        assert!(!t.update(&report(4, 2.1)));
        assert!(t.should_stop());
        assert_eq!(t.best.as_ref().unwrap().round, 2);
    }
}
