//! Config-driven experiment matrix: corpus generation, runs and reports.
//!
//! Layout under the output root:
//!
//! ```text
//! corpus/client_XX.csv, corpus/manifest.json
//! runs/manifest.json
//! runs/<id>/{config.json, rounds.jsonl, metrics.csv, baselines.json, result.json, best/}
//! report/{summary.csv, curves.csv, accounting.csv, baselines.csv, incomplete.txt}
//! ```

mod config;
mod generate;
mod report;
mod run;

pub use config::{default_pa_layers, CorpusConfig, CorpusSource, ExperimentConfig, FlSection, ModelSection, OUT_ENV};
pub use generate::{client_seed, corpus_dir, generate, load_corpus, CorpusClient, CorpusManifest, CORPUS_DIR, MANIFEST};
pub use report::{
    build_report, collect_run_dirs, mean_std, LoadedRun, Report, ACCOUNTING, BASELINE_TABLE, CURVES, INCOMPLETE,
    SUMMARY,
};
pub use run::{
    execute_run, expand_matrix, read_round_log, run_config, run_matrix, run_seed, runs_dir, Baselines,
    ManifestEntry, MatrixSummary, RoundRecord, RunConfig, RunOptions, RunResult, RunSpec, RunStatus, BASELINES,
    METRICS, RESULT, ROUND_LOG, RUNS_DIR, RUN_CONFIG, RUN_MANIFEST,
};
