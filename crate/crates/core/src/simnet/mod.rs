//! Fog topology orchestration.
//!
//! Fog clients `1..=K` train from the current global model on their shard;
//! the cloud server (device id 0) authorizes every submission against the
//! registry, waits for all of them, fuses the accepted updates, appends one
//! block for the round and pushes the chain back to every client replica.

mod heterogeneity;
mod report;
mod timing;

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use heterogeneity::heterogeneity;
pub use report::{reports_csv, RoundReport, REPORT_COLUMNS};
pub use timing::{sample_update_times, UpdateTimeModel, UpdateTimes};

use crate::dataset::{make_shards, Dataset, DatasetError, ShardMode, ShardPlan};
use crate::fedcore::{federated_fuse, FedError, LocalUpdate, ScalingPolicy};
use crate::ledger::{self, Authorization, Chain, DeviceRegistry, LedgerError, UpdateRecord};
use crate::neuralnet::{
    evaluate, init_weights, train_local, weight_digest, Architecture, NetError, TrainConfig,
    TrainHistory, WeightSet,
};

/// Device id of the cloud server.
pub const SERVER_ID: u64 = 0;

/// Offsets from the base seed for each consumer of randomness.
pub mod seeds {
    pub const INIT: u64 = 0;
    pub const SHARDS: u64 = 1;
    pub const UPDATE_TIMES: u64 = 2;
    /// Client `k` trains with `base + TRAIN + k + ROUND_STRIDE * (round - 1)`.
    pub const TRAIN: u64 = 100;
    pub const ROUND_STRIDE: u64 = 1 << 32;
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("heterogeneity needs at least 2 workers, got {0}")]
    TooFewWorkers(usize),
    #[error("update time of worker {index} is not positive")]
    NonPositiveTime { index: usize },
    #[error("client {client} failed in round {round}: {source}")]
    Training {
        client: u64,
        round: u64,
        #[source]
        source: NetError,
    },
    #[error("no authorized updates in round {0}")]
    NoAcceptedUpdates(u64),
    #[error(transparent)]
    Network(#[from] NetError),
    #[error(transparent)]
    Fusion(#[from] FedError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn default_clients() -> usize {
    10
}
fn default_rounds() -> usize {
    1
}
fn default_epochs() -> usize {
    10
}
fn default_batch() -> usize {
    8
}
fn default_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_boost() -> f64 {
    2.0
}

/// Full parameterization of one simulated deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_boost")]
    pub boost: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub partition: ShardMode,
    /// Registry contents; `None` trusts the server and clients `1..=K`.
    #[serde(default)]
    pub trusted_ids: Option<Vec<u64>>,
    /// Untrusted devices that submit every round.
    #[serde(default)]
    pub intruder_ids: Vec<u64>,
    #[serde(default)]
    pub update_times: UpdateTimeModel,
    /// Every client trains with the same seed instead of `base + client_id`.
    #[serde(default)]
    pub identical_client_seeds: bool,
    /// Use wall-clock training durations as update times. Not reproducible.
    #[serde(default)]
    pub measured_times: bool,
    /// Train clients on the rayon pool. Results do not depend on this.
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn yes() -> bool {
    true
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            clients: default_clients(),
            rounds: default_rounds(),
            epochs: default_epochs(),
            batch: default_batch(),
            lr: default_lr(),
            momentum: default_momentum(),
            boost: default_boost(),
            seed: 0,
            partition: ShardMode::Replicate,
            trusted_ids: None,
            intruder_ids: Vec::new(),
            update_times: UpdateTimeModel::default(),
            identical_client_seeds: false,
            measured_times: false,
            parallel: true,
        }
    }
}

impl SimConfig {
    pub fn client_ids(&self) -> impl Iterator<Item = u64> {
        1..=self.clients as u64
    }

    pub fn registry(&self) -> DeviceRegistry {
        match &self.trusted_ids {
            Some(ids) => DeviceRegistry::new(ids.iter().copied()),
            None => DeviceRegistry::new(std::iter::once(SERVER_ID).chain(self.client_ids())),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.clients == 0 {
            return bad("clients must be at least 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be at least 1".into());
        }
        if !(self.boost.is_finite() && self.boost >= 1.0) {
            return bad(format!("boost must be >= 1, got {}", self.boost));
        }
        let trusted = self.registry();
        let intruders: BTreeSet<u64> = self.intruder_ids.iter().copied().collect();
        if let Some(id) = intruders.iter().find(|id| trusted.trusted().contains(id)) {
            return bad(format!("device {id} is both trusted and an intruder"));
        }
        if let Some(id) = intruders
            .iter()
            .find(|&&id| id >= 1 && id <= self.clients as u64)
        {
            return bad(format!("intruder id {id} collides with a fog client id"));
        }
        self.update_times.validate()
    }

    pub fn train_config(&self, client_id: u64, round: u64) -> TrainConfig {
        let base = self.seed.wrapping_add(seeds::TRAIN);
        let client = if self.identical_client_seeds {
            0
        } else {
            client_id
        };
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            momentum: self.momentum,
            seed: base
                .wrapping_add(client)
                .wrapping_add(seeds::ROUND_STRIDE.wrapping_mul(round - 1)),
        }
    }
}

/// Everything that persists between rounds.
#[derive(Debug, Clone)]
pub struct SimState {
    arch: Architecture,
    test: Dataset<f32>,
    shards: Vec<Dataset<f32>>,
    global: WeightSet<f32>,
    chain: Chain,
    replicas: Vec<Chain>,
    registry: DeviceRegistry,
    completed_rounds: u64,
}

impl SimState {
    pub fn new(
        config: &SimConfig,
        arch: Architecture,
        train: &Dataset<f32>,
        test: Dataset<f32>,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let shards = make_shards(
            train,
            &ShardPlan {
                mode: config.partition,
                client_count: config.clients,
                seed: config.seed.wrapping_add(seeds::SHARDS),
            },
        )?;
        let global = init_weights(&arch, config.seed.wrapping_add(seeds::INIT));
        let chain = ledger::new_chain();
        Ok(Self {
            replicas: vec![ledger::replicate(&chain); config.clients],
            arch,
            test,
            shards,
            global,
            chain,
            registry: config.registry(),
            completed_rounds: 0,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn global(&self) -> &WeightSet<f32> {
        &self.global
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    /// Ledger copy held by fog client `client_id`.
    pub fn replica(&self, client_id: u64) -> Option<&Chain> {
        self.replicas.get((client_id as usize).checked_sub(1)?)
    }

    pub fn completed_rounds(&self) -> u64 {
        self.completed_rounds
    }
}

struct ClientResult {
    update: LocalUpdate,
    history: TrainHistory,
    seconds: f64,
}

fn train_client(
    state: &SimState,
    config: &SimConfig,
    client_id: u64,
    round: u64,
) -> Result<ClientResult, SimError> {
    let wrap = |source| SimError::Training {
        client: client_id,
        round,
        source,
    };
    let shard = &state.shards[client_id as usize - 1];
    let started = Instant::now();
    let (weights, history) = train_local(
        &state.arch,
        &state.global,
        shard,
        &state.test,
        &config.train_config(client_id, round),
    )
    .map_err(wrap)?;
    let seconds = started.elapsed().as_secs_f64();
    let accuracy = evaluate(&state.arch, &weights, &state.test)
        .map_err(wrap)?
        .accuracy;
    Ok(ClientResult {
        update: LocalUpdate {
            client_id,
            round,
            weights,
            reported_accuracy: accuracy,
        },
        history,
        seconds,
    })
}

/// One synchronous round: local training, authorization, barrier, fusion,
/// ledger append, replica sync and global evaluation.
pub fn run_round(state: &mut SimState, config: &SimConfig) -> Result<RoundReport, SimError> {
    if state.shards.len() != config.clients {
        return Err(SimError::Config(format!(
            "state holds {} clients, config {}",
            state.shards.len(),
            config.clients
        )));
    }
    let round = state.completed_rounds + 1;
    let ids: Vec<u64> = config.client_ids().collect();
    let results: Vec<ClientResult> = if config.parallel {
        ids.par_iter()
            .map(|&k| train_client(state, config, k, round))
            .collect::<Result<_, _>>()?
    } else {
        ids.iter()
            .map(|&k| train_client(state, config, k, round))
            .collect::<Result<_, _>>()?
    };

    // Intruders replay the current global model; they never get past the
    // registry, so their payload is irrelevant beyond being well formed.
    let mut submissions: Vec<LocalUpdate> = results.iter().map(|r| r.update.clone()).collect();
    for &id in &config.intruder_ids {
        submissions.push(LocalUpdate {
            client_id: id,
            round,
            weights: state.global.clone(),
            reported_accuracy: 1.0,
        });
    }

    let mut accepted = Vec::with_capacity(submissions.len());
    let mut rejected = 0usize;
    for s in submissions {
        match state.registry.authorize(s.client_id) {
            Authorization::Accept => accepted.push(s),
            Authorization::Reject => rejected += 1,
        }
    }
    if accepted.is_empty() {
        return Err(SimError::NoAcceptedUpdates(round));
    }
    accepted.sort_by_key(|u| u.client_id);

    let (global, factors) = federated_fuse(
        &accepted,
        &ScalingPolicy {
            boost: config.boost,
        },
    )?;
    let records: Vec<UpdateRecord> = accepted
        .iter()
        .zip(&factors)
        .map(|(u, &f)| UpdateRecord {
            client_id: u.client_id,
            round,
            weight_digest: weight_digest(&u.weights),
            reported_accuracy: u.reported_accuracy,
            factor: Some(f),
        })
        .collect();
    let chain = ledger::append_block(&state.chain, records)?;
    let replicas = state
        .replicas
        .iter()
        .map(|r| ledger::reconcile(r, &chain))
        .collect::<Result<Vec<_>, _>>()?;

    let global_eval = evaluate(&state.arch, &global, &state.test)?;

    let workers = config.clients;
    let update_times = if config.measured_times {
        UpdateTimes::new(
            results
                .iter()
                .map(|r| r.seconds.max(f64::MIN_POSITIVE))
                .collect(),
        )?
    } else {
        sample_update_times(
            &config.update_times,
            workers,
            config.seed.wrapping_add(seeds::UPDATE_TIMES),
            round,
        )?
    };
    let heterogeneity = if workers >= 2 {
        Some(update_times.heterogeneity()?)
    } else {
        None
    };

    let local_accuracies: Vec<f64> = results.iter().map(|r| r.update.reported_accuracy).collect();
    let avg_local_accuracy = local_accuracies.iter().sum::<f64>() / local_accuracies.len() as f64;

    state.global = global;
    state.chain = chain;
    state.replicas = replicas;
    state.completed_rounds = round;

    Ok(RoundReport {
        round,
        client_count: config.clients,
        client_ids: ids,
        local_accuracies,
        avg_local_accuracy,
        global_accuracy: global_eval.accuracy,
        factor_ids: accepted.iter().map(|u| u.client_id).collect(),
        factors,
        chain_tip_index: state.chain.tip().map(|b| b.index).unwrap_or(0),
        chain_len: state.chain.len(),
        rejected,
        heterogeneity,
        update_times: update_times.as_slice().to_vec(),
        confusion: global_eval,
        histories: results.into_iter().map(|r| r.history).collect(),
        local_weights: accepted.into_iter().map(|u| u.weights).collect(),
    })
}

/// All rounds for one client count.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub clients: usize,
    pub reports: Vec<RoundReport>,
    pub chain: Chain,
    pub global: WeightSet<f32>,
}

/// Runs `config.rounds` rounds from a fresh state for every client count in
/// `sweep`. Each entry retrains from the same initial model.
pub fn run_experiment(
    config: &SimConfig,
    arch: &Architecture,
    train: &Dataset<f32>,
    test: &Dataset<f32>,
    sweep: &[usize],
) -> Result<Vec<ExperimentRun>, SimError> {
    if sweep.is_empty() {
        return Err(SimError::Config("empty client-count sweep".into()));
    }
    let mut runs = Vec::with_capacity(sweep.len());
    for &clients in sweep {
        let cfg = SimConfig {
            clients,
            ..config.clone()
        };
        let mut state = SimState::new(&cfg, arch.clone(), train, test.clone())?;
        let mut reports = Vec::with_capacity(cfg.rounds);
        for _ in 0..cfg.rounds {
            reports.push(run_round(&mut state, &cfg)?);
        }
        runs.push(ExperimentRun {
            clients,
            reports,
            chain: state.chain,
            global: state.global,
        });
    }
    Ok(runs)
}
