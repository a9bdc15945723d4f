use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::generate::{load_corpus, read_json, write_json};
use crate::dataset::{ClientDataset, DrivingRecord, FeatureGroup};
use crate::error::{Error, Result};
use crate::fl::{FlConfig, Method, Participation, RoundOutcome, Simulation};
use crate::metrics::{evaluate, evaluate_baseline, Baseline, BestTracker, ClientMetrics, EvalReport};
use crate::model::{ModelConfig, SpeedModel};
use crate::ClientId;

pub const RUNS_DIR: &str = "runs";
pub const RUN_CONFIG: &str = "config.json";
pub const ROUND_LOG: &str = "rounds.jsonl";
pub const METRICS: &str = "metrics.csv";
pub const RESULT: &str = "result.json";
pub const BASELINES: &str = "baselines.json";
pub const RUN_MANIFEST: &str = "manifest.json";

/// One cell of the experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub id: String,
    pub group: FeatureGroup,
    pub horizon: usize,
    pub rho: Participation,
    pub method: Method,
    /// Warm-up rounds and personalized layers; FedPAW only.
    pub warmup: Option<usize>,
    pub pa_layers: Option<usize>,
    pub seed_index: usize,
    pub seed: u64,
}

/// Everything needed to re-execute one run on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: RunSpec,
    pub model: ModelConfig,
    pub fl: FlConfig,
    pub patience: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub id: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub rounds_run: usize,
    pub best_round: Option<usize>,
    pub best_mae: Option<f64>,
    pub best_rmse: Option<f64>,
    pub best_per_client: Vec<ClientMetrics>,
    pub wall_s: f64,
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    #[serde(flatten)]
    pub outcome: RoundOutcome,
    pub test_mae_mean: f64,
    pub test_rmse_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub cv: EvalReport,
    pub ca: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub status: Option<RunStatus>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub jobs: usize,
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct MatrixSummary {
    pub results: Vec<RunResult>,
    /// Runs skipped because a completed result already existed.
    pub skipped: usize,
}

impl MatrixSummary {
    pub fn all_completed(&self) -> bool {
        self.results.iter().all(|r| r.status == RunStatus::Completed)
    }
}

/// Run seed from the master seed, horizon, join ratio and repetition. The
/// method is left out so every method sees the same sampling and data order.
pub fn run_seed(master: u64, horizon: usize, rho: &Participation, seed_index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((horizon as u64).to_le_bytes());
    h.update(rho.to_string().as_bytes());
    h.update((seed_index as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn run_id(spec: &RunSpec) -> String {
    let mut id = format!(
        "{}_h{}_rho{}_{}",
        spec.group.to_string().to_lowercase(),
        spec.horizon,
        spec.rho,
        spec.method.to_string().to_lowercase()
    );
    if let (Some(r), Some(p)) = (spec.warmup, spec.pa_layers) {
        let _ = write!(id, "_r{r}_p{p}");
    }
    let _ = write!(id, "_s{}", spec.seed_index);
    id
}

/// The full cartesian matrix in a fixed order.
pub fn expand_matrix(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut out = Vec::new();
    for &group in &cfg.corpus.feature_groups {
        for &horizon in &cfg.corpus.horizons {
            for &rho in &cfg.fl.rho {
                for &method in &cfg.fl.methods {
                    let variants: Vec<(Option<usize>, Option<usize>)> = if method == Method::FedPAW {
                        cfg.fl
                            .warmup
                            .iter()
                            .flat_map(|&r| cfg.pa_layers(horizon).into_iter().map(move |p| (Some(r), Some(p))))
                            .collect()
                    } else {
                        vec![(None, None)]
                    };
                    for (warmup, pa_layers) in variants {
                        for seed_index in 0..cfg.seeds {
                            let mut spec = RunSpec {
                                id: String::new(),
                                group,
                                horizon,
                                rho,
                                method,
                                warmup,
                                pa_layers,
                                seed_index,
                                seed: run_seed(cfg.master_seed, horizon, &rho, seed_index),
                            };
                            spec.id = run_id(&spec);
                            out.push(spec);
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn run_config(cfg: &ExperimentConfig, spec: &RunSpec) -> RunConfig {
    let model = cfg.model_config(spec.group, spec.horizon);
    let warmup = spec.warmup.unwrap_or(cfg.fl.warmup[0]);
    let pa = spec.pa_layers.unwrap_or_else(|| cfg.pa_layers(spec.horizon)[0]);
    RunConfig {
        spec: spec.clone(),
        fl: cfg.fl_config(spec.method, spec.rho, warmup, pa),
        model,
        patience: cfg.patience,
    }
}

pub fn runs_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_root().join(RUNS_DIR)
}

fn build_datasets(records: &[(ClientId, Vec<DrivingRecord>)], group: FeatureGroup, horizon: usize) -> Result<Vec<ClientDataset>> {
    records
        .iter()
        .map(|(id, r)| ClientDataset::build(*id, r, group, horizon))
        .collect()
}

/// Executes every run of the matrix. Failed runs are recorded and the
/// remaining runs still execute.
pub fn run_matrix(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<MatrixSummary> {
    cfg.validate()?;
    let records = load_corpus(cfg)?;
    let specs = expand_matrix(cfg);
    let root = runs_dir(cfg);
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;

    let mut data: BTreeMap<(FeatureGroup, usize), Vec<ClientDataset>> = BTreeMap::new();
    for s in &specs {
        if !data.contains_key(&(s.group, s.horizon)) {
            data.insert((s.group, s.horizon), build_datasets(&records, s.group, s.horizon)?);
        }
    }

    let mut pending = Vec::new();
    let mut results: Vec<Option<RunResult>> = vec![None; specs.len()];
    let mut skipped = 0;
    for (i, s) in specs.iter().enumerate() {
        let result_path = root.join(&s.id).join(RESULT);
        if opts.resume {
            if let Ok(r) = read_json::<RunResult>(&result_path) {
                if r.status == RunStatus::Completed {
                    results[i] = Some(r);
                    skipped += 1;
                    continue;
                }
            }
        }
        pending.push(i);
    }

    let manifest = Mutex::new(
        specs
            .iter()
            .zip(&results)
            .map(|(s, r)| ManifestEntry {
                id: s.id.clone(),
                status: r.as_ref().map(|r| r.status),
            })
            .collect::<Vec<_>>(),
    );
    write_json(&root.join(RUN_MANIFEST), &*manifest.lock().expect("manifest lock"))?;

    let next = AtomicUsize::new(0);
    let done = Mutex::new(Vec::new());
    let jobs = opts.jobs.max(1).min(pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(k) else { break };
                let spec = &specs[i];
                let rc = run_config(cfg, spec);
                let datasets = data[&(spec.group, spec.horizon)].clone();
                let result = execute_run(&rc, datasets, &root.join(&spec.id))
                    .unwrap_or_else(|e| failed(&spec.id, &e, 0, 0.0));
                let mut m = manifest.lock().expect("manifest lock");
                m[i].status = Some(result.status);
                let _ = write_json(&root.join(RUN_MANIFEST), &*m);
                drop(m);
                done.lock().expect("results lock").push((i, result));
            });
        }
    });
    for (i, r) in done.into_inner().expect("results lock") {
        results[i] = Some(r);
    }
    Ok(MatrixSummary {
        results: results.into_iter().map(|r| r.expect("every run has a result")).collect(),
        skipped,
    })
}

fn failed(id: &str, e: &Error, rounds_run: usize, wall_s: f64) -> RunResult {
    RunResult {
        id: id.to_string(),
        status: if matches!(e, Error::Diverged { .. }) {
            RunStatus::Diverged
        } else {
            RunStatus::Failed
        },
        error: Some(e.to_string()),
        rounds_run,
        best_round: None,
        best_mae: None,
        best_rmse: None,
        best_per_client: Vec::new(),
        wall_s,
    }
}

/// Runs one configuration into `dir`, replacing anything already there.
pub fn execute_run(rc: &RunConfig, datasets: Vec<ClientDataset>, dir: &Path) -> Result<RunResult> {
    let start = Instant::now();
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(RUN_CONFIG), rc)?;

    let baselines = Baselines {
        cv: evaluate_baseline(Baseline::CV, &datasets)?,
        ca: evaluate_baseline(Baseline::CA, &datasets)?,
    };
    write_json(&dir.join(BASELINES), &baselines)?;

    let spec = &rc.spec;
    let mut eval_data = datasets.clone();
    eval_data.sort_by_key(|d| d.client);
    let mut sim = Simulation::new(rc.model.clone(), rc.fl.clone(), datasets, spec.seed)?;
    let method = spec.method.to_string();
    // Both logs are appended round by round so an interrupted run leaves its progress behind.
    let log_path = dir.join(ROUND_LOG);
    let metrics_path = dir.join(METRICS);
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    metrics
        .write_all(b"seed,method,horizon,rho,round,client_id,mae,rmse\n")
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut tracker = BestTracker::new((rc.patience > 0).then_some(rc.patience));
    let mut best_models: Option<Vec<SpeedModel>> = None;
    let mut rounds_run = 0;
    let mut outcome_err = None;

    for _ in 0..rc.fl.rounds {
        let outcome = match sim.run_round() {
            Ok(o) => o,
            Err(e) => {
                outcome_err = Some(e);
                break;
            }
        };
        rounds_run += 1;
        let models: Vec<&SpeedModel> = sim.clients().iter().map(|c| &c.model).collect();
        let report = evaluate(&models, &eval_data, outcome.t, &method)?;
        let mut rows = String::new();
        for c in &report.per_client {
            let _ = writeln!(
                rows,
                "{},{},{},{},{},{},{},{}",
                spec.seed_index, method, spec.horizon, spec.rho, outcome.t, c.client, c.mae, c.rmse
            );
        }
        metrics.write_all(rows.as_bytes()).map_err(|e| Error::io(&metrics_path, e))?;
        let record = RoundRecord {
            outcome,
            test_mae_mean: report.mean_mae,
            test_rmse_mean: report.mean_rmse,
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        log.write_all(line.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
        if tracker.update(&report) {
            best_models = Some(models.into_iter().cloned().collect());
        }
        if tracker.should_stop() {
            break;
        }
    }

    if let Some(models) = &best_models {
        let best_dir = dir.join("best");
        fs::create_dir_all(&best_dir).map_err(|e| Error::io(&best_dir, e))?;
        for (m, c) in models.iter().zip(sim.clients()) {
            m.save(best_dir.join(format!("client_{:02}", c.id().0)))?;
        }
        sim.global_model()?.save(best_dir.join("global_last"))?;
    }

    let wall_s = start.elapsed().as_secs_f64();
    let result = match outcome_err {
        Some(e) => failed(&spec.id, &e, rounds_run, wall_s),
        None => {
            let best = tracker.best.as_ref();
            RunResult {
                id: spec.id.clone(),
                status: RunStatus::Completed,
                error: None,
                rounds_run,
                best_round: best.map(|b| b.round),
                best_mae: best.map(|b| b.mean_mae),
                best_rmse: best.map(|b| b.mean_rmse),
                best_per_client: best.map(|b| b.per_client.clone()).unwrap_or_default(),
                wall_s,
            }
        }
    };
    write_json(&dir.join(RESULT), &result)?;
    Ok(result)
}

/// Parses a round log.
pub fn read_round_log(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
