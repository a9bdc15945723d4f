use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DriverProfile, FeatureGroup};
use crate::error::{Error, Result};
use crate::fl::{FlConfig, Method, Participation};
use crate::model::{ModelConfig, ModelKind};

/// Environment variable overriding `output_dir`.
pub const OUT_ENV: &str = "FEDPAW_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub source: CorpusSource,
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_duration")]
    pub duration_s: usize,
    #[serde(default = "default_corpus_seed")]
    pub seed: u64,
    /// Explicit driver profiles; generated from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<Vec<DriverProfile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub column_map: BTreeMap<String, String>,
    #[serde(default = "default_groups")]
    pub feature_groups: Vec<FeatureGroup>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    /// Encoder and decoder depth; per-horizon default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlSection {
    pub methods: Vec<Method>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_rho")]
    pub rho: Vec<Participation>,
    #[serde(default = "default_warmup")]
    pub warmup: Vec<usize>,
    /// Personalized layer counts; 2 for H <= 5 and 4 otherwise when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pa_layers: Option<Vec<usize>>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_mu")]
    pub prox_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub master_seed: u64,
    /// Number of repetitions per configuration.
    pub seeds: usize,
    /// Rounds without test improvement before stopping; 0 disables.
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub model: ModelSection,
    pub fl: FlSection,
}

fn default_clients() -> usize {
    10
}
fn default_duration() -> usize {
    3600
}
fn default_corpus_seed() -> u64 {
    7
}
fn default_groups() -> Vec<FeatureGroup> {
    vec![FeatureGroup::FG6]
}
fn default_horizons() -> Vec<usize> {
    vec![5]
}
fn default_rounds() -> usize {
    300
}
fn default_rho() -> Vec<Participation> {
    vec![Participation::Fixed(1.0)]
}
fn default_warmup() -> Vec<usize> {
    vec![1]
}
fn default_lr() -> f64 {
    0.005
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    1
}
fn default_mu() -> f64 {
    0.01
}
fn default_patience() -> usize {
    30
}

/// Personalized layer count used when the config leaves it open.
pub fn default_pa_layers(horizon: usize) -> usize {
    if horizon <= 5 {
        2
    } else {
        4
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Output root, honouring the environment override.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn max_horizon(&self) -> usize {
        self.corpus.horizons.iter().copied().max().unwrap_or(0)
    }

    pub fn model_config(&self, group: FeatureGroup, horizon: usize) -> ModelConfig {
        let mut m = ModelConfig::for_horizon(group.input_dim(horizon), horizon);
        m.kind = self.model.kind;
        if let Some(h) = self.model.hidden {
            m.hidden_dim = h;
        }
        if let Some(h) = self.model.heads {
            m.num_heads = h;
        }
        if let Some(l) = self.model.levels {
            m.encoder_layers = l;
            m.decoder_layers = l;
        }
        if let Some(d) = self.model.dropout {
            m.dropout = d;
        }
        m
    }

    pub fn pa_layers(&self, horizon: usize) -> Vec<usize> {
        self.fl
            .pa_layers
            .clone()
            .unwrap_or_else(|| vec![default_pa_layers(horizon)])
    }

    pub fn fl_config(&self, method: Method, rho: Participation, warmup: usize, pa_layers: usize) -> FlConfig {
        FlConfig {
            method,
            rounds: self.fl.rounds,
            rho,
            warmup,
            pa_layers,
            lr: self.fl.lr,
            batch_size: self.fl.batch_size,
            local_epochs: self.fl.local_epochs,
            prox_mu: self.fl.prox_mu,
        }
    }

    /// Checks every setting of the matrix before any work starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let c = &self.corpus;
        if c.clients == 0 {
            return bad("corpus.clients must be at least 1".into());
        }
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if c.feature_groups.is_empty() || c.horizons.is_empty() {
            return bad("feature_groups and horizons must be non-empty".into());
        }
        if c.horizons.contains(&0) {
            return bad("horizons must be positive".into());
        }
        match c.source {
            CorpusSource::Synthetic => {
                if c.duration_s < 20 * self.max_horizon() {
                    return bad(format!(
                        "duration_s {} too short for horizon {}",
                        c.duration_s,
                        self.max_horizon()
                    ));
                }
                if let Some(p) = &c.profiles {
                    if p.len() != c.clients {
                        return bad(format!("{} profiles for {} clients", p.len(), c.clients));
                    }
                    p.iter().try_for_each(DriverProfile::validate)?;
                }
            }
            CorpusSource::Csv => {
                if c.csv_path.is_none() {
                    return bad("csv corpus needs csv_path".into());
                }
            }
        }
        let f = &self.fl;
        if f.methods.is_empty() || f.rho.is_empty() || f.warmup.is_empty() {
            return bad("methods, rho and warmup must be non-empty".into());
        }
        if matches!(&f.pa_layers, Some(p) if p.is_empty()) {
            return bad("pa_layers must be non-empty when given".into());
        }
        for &g in &c.feature_groups {
            for &h in &c.horizons {
                let m = self.model_config(g, h);
                m.validate()?;
                for &method in &f.methods {
                    for &rho in &f.rho {
                        for &r in &f.warmup {
                            for p in self.pa_layers(h) {
                                self.fl_config(method, rho, r, p).validate(m.layer_count())?;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
