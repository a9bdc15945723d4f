use std::time::Instant;

use fedpaw_tensor::{Adam, AdamConfig, ParamSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{
    compute_diff_measure, fedavg_aggregate, normalize_layerwise, personalized_aggregate,
    weight_stats, Contribution, WeightStats,
};
use super::client::{local_train, TrainStats};
use super::config::{FlConfig, Method};
use super::sample_clients;
use crate::dataset::ClientDataset;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SpeedModel};
use crate::ClientId;

/// RNG for client `client` in round `t`; streams never overlap across
/// rounds, clients or the server.
pub fn client_rng(seed: u64, t: usize, client: ClientId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((t as u64) << 32) | (u64::from(client.0) + 1));
    rng
}

pub fn server_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((t as u64) << 32);
    rng
}

/// Stream used once to draw the initial global model.
fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub data: ClientDataset,
    /// Share of all training windows held by this client.
    pub k: f64,
    /// Model currently held by the client.
    pub model: SpeedModel,
    pub optimizer: Adam,
    /// Latest model this client uploaded, kept by the server for mixing.
    pub last_upload: Option<ParamSet>,
}

impl ClientState {
    pub fn id(&self) -> ClientId {
        self.data.client
    }
}

#[derive(Debug, Clone)]
pub struct RoundState {
    /// Rounds completed so far.
    pub t: usize,
    pub global: ParamSet,
    /// Aggregation weights over the top layers from the latest round.
    pub weights: Option<ParamSet>,
    pub sampled: Vec<ClientId>,
}

/// Everything the server learned in one round, ready for logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub t: usize,
    pub method: Method,
    pub sampled: Vec<ClientId>,
    pub train_loss_mean: f64,
    pub wall_ms: f64,
    pub params_transferred: u64,
    pub params_per_client: u64,
    pub w_stats: Option<Vec<WeightStats>>,
}

pub struct Simulation {
    fl: FlConfig,
    model_config: ModelConfig,
    seed: u64,
    clients: Vec<ClientState>,
    state: RoundState,
}

impl Simulation {
    /// Draws the initial global model from `seed` and hands it to every
    /// client. Clients are ordered by id.
    pub fn new(model_config: ModelConfig, fl: FlConfig, mut datasets: Vec<ClientDataset>, seed: u64) -> Result<Self> {
        model_config.validate()?;
        fl.validate(model_config.layer_count())?;
        if datasets.is_empty() {
            return Err(Error::Empty("simulation needs at least one client".into()));
        }
        datasets.sort_by_key(|d| d.client);
        if let Some(w) = datasets.windows(2).find(|w| w[0].client == w[1].client) {
            return Err(Error::Config(format!("duplicate client id {}", w[0].client)));
        }
        if let Some(d) = datasets.iter().find(|d| d.input_dim() != model_config.input_dim) {
            return Err(Error::Config(format!(
                "client {} has {} features, model expects {}",
                d.client,
                d.input_dim(),
                model_config.input_dim
            )));
        }
        let total: usize = datasets.iter().map(|d| d.train.len()).sum();
        if total == 0 {
            return Err(Error::Empty("no client has training windows".into()));
        }
        let global = SpeedModel::new(model_config.clone(), &mut init_rng(seed))?;
        let clients = datasets
            .into_iter()
            .map(|data| ClientState {
                k: data.train.len() as f64 / total as f64,
                optimizer: Adam::new(AdamConfig::default(), global.params()),
                model: global.clone(),
                last_upload: None,
                data,
            })
            .collect();
        Ok(Simulation {
            state: RoundState {
                t: 0,
                global: global.into_params(),
                weights: None,
                sampled: Vec::new(),
            },
            fl,
            model_config,
            seed,
            clients,
        })
    }

    pub fn config(&self) -> &FlConfig {
        &self.fl
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_config
    }

    pub fn state(&self) -> &RoundState {
        &self.state
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn global_model(&self) -> Result<SpeedModel> {
        SpeedModel::from_params(self.model_config.clone(), self.state.global.clone())
    }

    /// One full round: sample, train locally, aggregate, mix and
    /// distribute. On error no state changes.
    pub fn run_round(&mut self) -> Result<RoundOutcome> {
        let start = Instant::now();
        let t = self.state.t;
        let fl = &self.fl;
        let sampled_idx = sample_clients(self.clients.len(), &fl.rho, &mut server_rng(self.seed, t));

        let seed = self.seed;
        let trained: Vec<Result<(usize, SpeedModel, Adam, TrainStats)>> = sampled_idx
            .par_iter()
            .map(|&i| {
                let c = &self.clients[i];
                let mut model = c.model.clone();
                let mut opt = c.optimizer.clone();
                let received = c.model.params().clone();
                let mut rng = client_rng(seed, t, c.id());
                let stats = local_train(&mut model, &mut opt, &c.data, &received, fl, &mut rng)?;
                Ok((i, model, opt, stats))
            })
            .collect();
        let trained = trained.into_iter().collect::<Result<Vec<_>>>()?;

        let contribs: Vec<Contribution<'_>> = trained
            .iter()
            .map(|(i, m, _, _)| Contribution {
                client: self.clients[*i].id(),
                k: self.clients[*i].k,
                params: m.params(),
            })
            .collect();
        let global = fedavg_aggregate(&contribs)?;
        let p = fl.pa_layers;
        let weights = match fl.method {
            Method::FedPAW if t >= fl.warmup => {
                Some(normalize_layerwise(&compute_diff_measure(&contribs, &global, p)?))
            }
            Method::FedPAW => Some(global.top_layers(p)?.zeros_like()),
            _ => None,
        };
        drop(contribs);

        // Stage every client's next model before touching any state.
        let mut uploads: Vec<Option<ParamSet>> = self.clients.iter().map(|c| c.last_upload.clone()).collect();
        let mut optimizers: Vec<Option<Adam>> = vec![None; self.clients.len()];
        let mut loss_sum = 0.0;
        for (i, model, opt, stats) in trained {
            loss_sum += stats.mean_loss;
            uploads[i] = Some(model.into_params());
            optimizers[i] = Some(opt);
        }
        let next: Vec<ParamSet> = uploads
            .iter()
            .map(|u| match (&weights, u) {
                (Some(w), Some(local)) => personalized_aggregate(&global, local, w, p),
                _ => Ok(global.clone()),
            })
            .collect::<Result<_>>()?;

        let sampled: Vec<ClientId> = sampled_idx.iter().map(|&i| self.clients[i].id()).collect();
        for (((c, params), upload), opt) in self.clients.iter_mut().zip(next).zip(uploads).zip(optimizers) {
            c.model.set_params(params)?;
            c.last_upload = upload;
            if let Some(o) = opt {
                c.optimizer = o;
            }
        }
        let sigma = global.num_params() as u64;
        let w_stats = weights.as_ref().map(weight_stats);
        self.state = RoundState {
            t: t + 1,
            global,
            weights,
            sampled: sampled.clone(),
        };
        Ok(RoundOutcome {
            t,
            method: fl.method,
            train_loss_mean: loss_sum / sampled.len() as f64,
            params_transferred: 2 * sigma * sampled.len() as u64,
            params_per_client: 2 * sigma,
            sampled,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            w_stats,
        })
    }
}
