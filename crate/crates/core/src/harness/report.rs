use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::generate::read_json;
use super::run::{
    read_round_log, Baselines, RoundRecord, RunConfig, RunResult, RunStatus, BASELINES, RESULT, ROUND_LOG,
    RUN_CONFIG,
};
use crate::error::{Error, Result};

pub const SUMMARY: &str = "summary.csv";
pub const CURVES: &str = "curves.csv";
pub const ACCOUNTING: &str = "accounting.csv";
pub const BASELINE_TABLE: &str = "baselines.csv";
pub const INCOMPLETE: &str = "incomplete.txt";

/// A finished run loaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub result: RunResult,
    pub rounds: Vec<RoundRecord>,
    pub baselines: Option<Baselines>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub runs: Vec<LoadedRun>,
    /// Directories that are missing files or did not complete.
    pub incomplete: Vec<(PathBuf, String)>,
    pub summary_csv: String,
    pub curves_csv: String,
    pub accounting_csv: String,
    pub baselines_csv: String,
}

/// Sample mean and standard deviation; the deviation of one sample is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn is_run_dir(p: &Path) -> bool {
    p.join(RUN_CONFIG).exists() || p.join(RESULT).exists()
}

/// Expands each argument into run directories: a run directory stays as
/// is, any other directory contributes its subdirectories.
pub fn collect_run_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if is_run_dir(p) || !p.is_dir() {
            out.push(p.clone());
            continue;
        }
        let mut children: Vec<PathBuf> = fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|c| c.is_dir())
            .collect();
        children.sort();
        out.extend(children);
    }
    Ok(out)
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config: RunConfig = read_json(&dir.join(RUN_CONFIG))?;
    let result: RunResult = read_json(&dir.join(RESULT))?;
    let rounds = read_round_log(&dir.join(ROUND_LOG))?;
    let baselines = read_json(&dir.join(BASELINES)).ok();
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        config,
        result,
        rounds,
        baselines,
    })
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

pub fn build_report(paths: &[PathBuf]) -> Result<Report> {
    let mut runs = Vec::new();
    let mut incomplete = Vec::new();
    for dir in collect_run_dirs(paths)? {
        match load_run(&dir) {
            Ok(r) if r.result.status == RunStatus::Completed => runs.push(r),
            Ok(r) => {
                let why = r.result.error.clone().unwrap_or_else(|| format!("{:?}", r.result.status));
                incomplete.push((dir, why));
            }
            Err(e) => incomplete.push((dir, e.to_string())),
        }
    }
    runs.sort_by(|a, b| a.config.spec.id.cmp(&b.config.spec.id));

    // Runs differing only in seed index are pooled into one summary row.
    let mut groups: BTreeMap<String, Vec<&LoadedRun>> = BTreeMap::new();
    for r in &runs {
        let s = &r.config.spec;
        let key = format!(
            "{},{},{},{},{},{}",
            s.group,
            s.horizon,
            s.rho,
            s.method,
            opt(s.warmup),
            opt(s.pa_layers)
        );
        groups.entry(key).or_default().push(r);
    }
    let mut summary = String::from(
        "group,horizon,rho,method,warmup,pa_layers,seeds,mae_mean,mae_std,rmse_mean,rmse_std,best_round_mean\n",
    );
    for (key, members) in &groups {
        let mae: Vec<f64> = members.iter().filter_map(|r| r.result.best_mae).collect();
        let rmse: Vec<f64> = members.iter().filter_map(|r| r.result.best_rmse).collect();
        let best: Vec<f64> = members.iter().filter_map(|r| r.result.best_round.map(|b| b as f64)).collect();
        if mae.is_empty() {
            continue;
        }
        let (mm, ms) = mean_std(&mae);
        let (rm, rs) = mean_std(&rmse);
        let (bm, _) = mean_std(&best);
        let _ = writeln!(
            summary,
            "{key},{},{mm:.6},{ms:.6},{rm:.6},{rs:.6},{bm:.1}",
            members.len()
        );
    }

    let max_rounds = runs.iter().map(|r| r.rounds.len()).max().unwrap_or(0);
    let mut curves = String::from("round");
    for r in &runs {
        let _ = write!(curves, ",{}", r.config.spec.id);
    }
    curves.push('\n');
    for t in 0..max_rounds {
        let _ = write!(curves, "{t}");
        for r in &runs {
            match r.rounds.get(t) {
                Some(rec) => {
                    let _ = write!(curves, ",{:.6}", rec.test_mae_mean);
                }
                None => curves.push(','),
            }
        }
        curves.push('\n');
    }

    let mut accounting = String::from(
        "run,method,rounds,total_s,s_per_iter,params_per_client_per_iter,params_per_iter_mean\n",
    );
    for r in &runs {
        let n = r.rounds.len().max(1) as f64;
        let total_s = r.rounds.iter().map(|x| x.outcome.wall_ms).sum::<f64>() / 1e3;
        let per_client = r.rounds.first().map_or(0, |x| x.outcome.params_per_client);
        let transferred = r.rounds.iter().map(|x| x.outcome.params_transferred as f64).sum::<f64>() / n;
        let _ = writeln!(
            accounting,
            "{},{},{},{total_s:.3},{:.4},{per_client},{transferred:.1}",
            r.config.spec.id,
            r.config.spec.method,
            r.rounds.len(),
            total_s / n
        );
    }

    let mut base_rows: BTreeMap<String, String> = BTreeMap::new();
    for r in &runs {
        if let Some(b) = &r.baselines {
            let s = &r.config.spec;
            for rep in [&b.cv, &b.ca] {
                base_rows.entry(format!("{},{},{}", s.group, s.horizon, rep.method)).or_insert_with(|| {
                    format!("{:.6},{:.6}", rep.mean_mae, rep.mean_rmse)
                });
            }
        }
    }
    let mut baselines = String::from("group,horizon,baseline,mae,rmse\n");
    for (k, v) in &base_rows {
        let _ = writeln!(baselines, "{k},{v}");
    }

    Ok(Report {
        runs,
        incomplete,
        summary_csv: summary,
        curves_csv: curves,
        accounting_csv: accounting,
        baselines_csv: baselines,
    })
}

impl Report {
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut listing = String::new();
        for (d, why) in &self.incomplete {
            let _ = writeln!(listing, "{}\t{why}", d.display());
        }
        for (name, text) in [
            (SUMMARY, &self.summary_csv),
            (CURVES, &self.curves_csv),
            (ACCOUNTING, &self.accounting_csv),
            (BASELINE_TABLE, &self.baselines_csv),
            (INCOMPLETE, &listing),
        ] {
            let p = out.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
