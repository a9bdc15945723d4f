use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{CorpusSource, ExperimentConfig};
use crate::dataset::{default_profiles, generate_synthetic_client, load_csv, save_csv, DrivingRecord, DriverProfile};
use crate::error::{Error, Result};
use crate::ClientId;

pub const CORPUS_DIR: &str = "corpus";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusClient {
    pub client: ClientId,
    pub file: String,
    pub seed: u64,
    pub rows: usize,
    pub profile: DriverProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub duration_s: usize,
    /// Number of future signal columns written per row.
    pub horizon: usize,
    pub clients: Vec<CorpusClient>,
}

/// Generation seed of client `i`.
pub fn client_seed(corpus_seed: u64, i: usize) -> u64 {
    corpus_seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn corpus_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_root().join(CORPUS_DIR)
}

/// Writes one CSV per synthetic client plus the manifest.
pub fn generate(cfg: &ExperimentConfig, force: bool) -> Result<CorpusManifest> {
    cfg.validate()?;
    let c = &cfg.corpus;
    if c.source != CorpusSource::Synthetic {
        return Err(Error::Config("only synthetic corpora are generated".into()));
    }
    let dir = corpus_dir(cfg);
    if dir.join(MANIFEST).exists() && !force {
        return Err(Error::Exists(dir.display().to_string()));
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let profiles = c.profiles.clone().unwrap_or_else(|| default_profiles(c.clients, c.seed));
    let horizon = cfg.max_horizon();
    let mut clients = Vec::with_capacity(profiles.len());
    for (i, profile) in profiles.into_iter().enumerate() {
        let seed = client_seed(c.seed, i);
        let records = generate_synthetic_client(&profile, c.duration_s, horizon, seed)?;
        let file = format!("client_{i:02}.csv");
        let id = ClientId(i as u32);
        let rows = records.len();
        save_csv(&dir.join(&file), &[(id, records)])?;
        clients.push(CorpusClient {
            client: id,
            file,
            seed,
            rows,
            profile,
        });
    }
    let manifest = CorpusManifest {
        seed: c.seed,
        duration_s: c.duration_s,
        horizon,
        clients,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Records of every client, in client order.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Vec<(ClientId, Vec<DrivingRecord>)>> {
    let c = &cfg.corpus;
    let mut out = match c.source {
        CorpusSource::Synthetic => {
            let dir = corpus_dir(cfg);
            let manifest: CorpusManifest = read_json(&dir.join(MANIFEST))?;
            if manifest.horizon < cfg.max_horizon() {
                return Err(Error::Config(format!(
                    "corpus has {} future signal columns, config needs {}",
                    manifest.horizon,
                    cfg.max_horizon()
                )));
            }
            let mut all = Vec::new();
            for cl in &manifest.clients {
                all.extend(load_csv(&dir.join(&cl.file), &HashMap::new())?);
            }
            all
        }
        CorpusSource::Csv => {
            let path = c.csv_path.as_ref().ok_or_else(|| Error::Config("csv_path missing".into()))?;
            let map = c.column_map.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            load_csv(path, &map)?
        }
    };
    out.sort_by_key(|(id, _)| *id);
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Validation(format!("client {} appears in several files", w[0].0)));
    }
    Ok(out)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
