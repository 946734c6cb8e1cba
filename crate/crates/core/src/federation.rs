//! The federated training loop.
//!
//! Each round every participating client copies the global model, runs
//! `local_steps` PDGD interactions on uniformly sampled training queries and
//! submits `local - global`. The server applies the FedAvg rule
//!
//! ```text
//! M_{t+1} = M_t + sum_i (n_i / sum_j n_j) * dM_i
//! ```
//!
//! At rounds `1, 1 + dt, 1 + 2dt, ...` every client also keeps a copy of the
//! update it submitted; unlearning replays those later.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AdversaryError, Scenario};
use crate::clicksim::ClickModelParams;
use crate::dataset::FeatureDataset;
use crate::evaluation::{evaluate_model, EvalError, EvalPoint, Phase};
use crate::pdgd::{pdgd_update, PdgdConfig, PdgdError};
use crate::ranker::{DimensionMismatch, LinearRanker, ModelDelta};
use crate::rng::{substream, Stream};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid federation config: {0}")]
    Config(String),
    #[error("training set has no queries")]
    EmptyTrainSet,
    #[error("nothing to aggregate")]
    NoUpdates,
    #[error("aggregation weight must be positive and finite, got {0}")]
    InvalidWeight(f64),
    #[error("client {client}: {source}")]
    Client {
        client: usize,
        #[source]
        source: PdgdError,
    },
    #[error(transparent)]
    Pdgd(#[from] PdgdError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    /// Size of the client pool.
    pub num_clients: usize,
    /// Local PDGD interactions per client per round (`n_i`).
    pub local_steps: usize,
    /// Global rounds (`T`).
    pub global_rounds: usize,
    /// History interval (`dt`).
    pub delta_t: usize,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 10,
            local_steps: 5,
            global_rounds: 10_000,
            delta_t: 10,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        let bad = |m: &str| Err(FederationError::Config(m.to_string()));
        if self.num_clients < 2 {
            return bad("at least two clients are required");
        }
        if self.local_steps < 1 {
            return bad("local_steps must be at least 1");
        }
        if self.global_rounds < 1 {
            return bad("global_rounds must be at least 1");
        }
        if self.delta_t < 1 {
            return bad("delta_t must be at least 1");
        }
        Ok(())
    }

    /// `ceil(T / dt)`: records each client stores.
    pub fn stored_records(&self) -> usize {
        self.global_rounds.div_ceil(self.delta_t)
    }

    /// Whether round `t` (1-based) is a history round.
    pub fn is_history_round(&self, round: usize) -> bool {
        (round - 1).is_multiple_of(self.delta_t)
    }
}

/// Data and user model shared by every client of one run.
#[derive(Clone, Copy, Debug)]
pub struct SimulationEnv<'a> {
    pub train: &'a FeatureDataset,
    pub test: &'a FeatureDataset,
    pub pdgd: PdgdConfig,
    pub click_model: &'a ClickModelParams,
    /// Evaluate every this many rounds; round 0 and the last round are
    /// always evaluated.
    pub eval_every: usize,
}

impl SimulationEnv<'_> {
    pub(crate) fn should_eval(&self, round: usize, last: usize) -> bool {
        round == 0 || round == last || (self.eval_every > 0 && round.is_multiple_of(self.eval_every))
    }

    pub(crate) fn eval_point(&self, phase: Phase, round: usize, model: &LinearRanker) -> Result<EvalPoint, EvalError> {
        Ok(EvalPoint {
            phase,
            round,
            ndcg10: evaluate_model(model, self.test)?.mean_ndcg,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// 1-based global round.
    pub round: usize,
    pub delta: ModelDelta,
}

#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_id: usize,
    pub local_ranker: LinearRanker,
    pub local_steps: usize,
    pub history: Vec<UpdateRecord>,
}

impl ClientState {
    pub fn new(client_id: usize, num_features: usize, local_steps: usize) -> Self {
        Self {
            client_id,
            local_ranker: LinearRanker::zeros(num_features),
            local_steps,
            history: Vec::new(),
        }
    }
}

/// Resets the client to `global`, runs `steps` interactions on uniformly
/// sampled training queries and returns `local - global`.
pub fn local_round<R: Rng + ?Sized>(
    client: &mut ClientState,
    global: &LinearRanker,
    train: &FeatureDataset,
    steps: usize,
    pdgd: &PdgdConfig,
    click_model: &ClickModelParams,
    rng: &mut R,
) -> Result<ModelDelta, FederationError> {
    if train.is_empty() {
        return Err(FederationError::EmptyTrainSet);
    }
    let wrap = |source| FederationError::Client {
        client: client.client_id,
        source,
    };
    let mut local = global.clone();
    for _ in 0..steps {
        let q = &train.queries()[rng.gen_range(0..train.len())];
        local = pdgd_update(&local, q, pdgd, click_model, rng).map_err(wrap)?;
    }
    let delta = ModelDelta::between(&local, global)?;
    client.local_ranker = local;
    Ok(delta)
}

/// FedAvg: `global + sum_i (w_i / sum w) * delta_i`, summed per coordinate
/// left to right in the order given.
pub fn aggregate(global: &LinearRanker, updates: &[(ModelDelta, f64)]) -> Result<LinearRanker, FederationError> {
    if updates.is_empty() {
        return Err(FederationError::NoUpdates);
    }
    let mut total = 0.0;
    for (delta, w) in updates {
        if !(*w > 0.0 && w.is_finite()) {
            return Err(FederationError::InvalidWeight(*w));
        }
        if delta.dim() != global.dim() {
            return Err(DimensionMismatch {
                expected: global.dim(),
                actual: delta.dim(),
            }
            .into());
        }
        total += w;
    }
    let fractions: Vec<f64> = updates.iter().map(|(_, w)| w / total).collect();
    let weights = global
        .weights()
        .iter()
        .enumerate()
        .map(|(f, g)| {
            let mut acc = 0.0;
            for ((delta, _), frac) in updates.iter().zip(&fractions) {
                acc += frac * delta.values()[f];
            }
            g + acc
        })
        .collect();
    Ok(LinearRanker::from_weights(weights))
}

#[derive(Debug, Default)]
struct ClientHistory {
    records: Vec<UpdateRecord>,
    reads: AtomicUsize,
}

impl Clone for ClientHistory {
    fn clone(&self) -> Self {
        Self {
            records: self.records.clone(),
            reads: AtomicUsize::new(self.reads.load(Ordering::Relaxed)),
        }
    }
}

/// Stored updates of every client, with per-client read counters so tests
/// can prove which clients' records a procedure touched.
#[derive(Clone, Debug, Default)]
pub struct HistoryStore {
    delta_t: usize,
    global_rounds: usize,
    clients: BTreeMap<usize, ClientHistory>,
}

impl HistoryStore {
    pub fn new(delta_t: usize, global_rounds: usize) -> Self {
        Self {
            delta_t,
            global_rounds,
            clients: BTreeMap::new(),
        }
    }

    pub fn delta_t(&self) -> usize {
        self.delta_t
    }

    pub fn global_rounds(&self) -> usize {
        self.global_rounds
    }

    pub fn insert(&mut self, client: usize, records: Vec<UpdateRecord>) {
        self.clients.insert(
            client,
            ClientHistory {
                records,
                reads: AtomicUsize::new(0),
            },
        );
    }

    pub fn push(&mut self, client: usize, record: UpdateRecord) {
        self.clients.entry(client).or_default().records.push(record);
    }

    pub fn client_ids(&self) -> Vec<usize> {
        self.clients.keys().copied().collect()
    }

    pub fn len(&self, client: usize) -> usize {
        self.clients.get(&client).map_or(0, |h| h.records.len())
    }

    /// The `index`-th stored record of `client` (0-based). Counts as a read.
    pub fn record(&self, client: usize, index: usize) -> Option<&UpdateRecord> {
        let h = self.clients.get(&client)?;
        h.reads.fetch_add(1, Ordering::Relaxed);
        h.records.get(index)
    }

    pub fn read_count(&self, client: usize) -> usize {
        self.clients.get(&client).map_or(0, |h| h.reads.load(Ordering::Relaxed))
    }

    /// The history that would have been stored with the coarser interval
    /// `delta_t`, which must be a multiple of the current one.
    pub fn resample(&self, delta_t: usize) -> Option<HistoryStore> {
        if delta_t == 0 || !delta_t.is_multiple_of(self.delta_t) {
            return None;
        }
        let mut out = HistoryStore::new(delta_t, self.global_rounds);
        for (&c, h) in &self.clients {
            let records = h
                .records
                .iter()
                .filter(|r| (r.round - 1) % delta_t == 0)
                .cloned()
                .collect();
            out.insert(c, records);
        }
        Some(out)
    }

    /// Every stored record in `(client, record)` order, for persistence.
    /// Not counted as reads.
    pub fn export(&self) -> impl Iterator<Item = (usize, &UpdateRecord)> {
        self.clients
            .iter()
            .flat_map(|(&c, h)| h.records.iter().map(move |r| (c, r)))
    }
}

/// Bookkeeping for the efficiency comparison.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCounters {
    /// Global aggregations performed.
    pub aggregations: usize,
    /// Local steps each client runs per round.
    pub local_steps: usize,
    /// PDGD interactions per client id.
    pub local_updates: BTreeMap<usize, usize>,
    /// Client-to-server uploads per client id.
    pub uploads: BTreeMap<usize, usize>,
    /// Records stored per client id (training only).
    pub stored_records: BTreeMap<usize, usize>,
    /// Values in each stored record.
    pub values_per_record: usize,
    /// Fresh updates too short to calibrate (unlearning only).
    pub degenerate_calibrations: usize,
}

impl EfficiencyCounters {
    pub fn total_local_updates(&self) -> usize {
        self.local_updates.values().sum()
    }
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub model: LinearRanker,
    pub histories: HistoryStore,
    pub eval_points: Vec<EvalPoint>,
    pub counters: EfficiencyCounters,
    /// What each client submitted at each round, when tracing was requested.
    pub submissions: Option<Vec<Vec<(usize, ModelDelta)>>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainingOptions {
    /// Keep every submitted update (memory-heavy; for tests and diagnostics).
    pub trace_submissions: bool,
}

pub fn run_training(
    config: &FederationConfig,
    env: &SimulationEnv<'_>,
    scenario: &Scenario,
) -> Result<TrainingOutcome, FederationError> {
    run_training_with(config, env, scenario, TrainingOptions::default())
}

pub fn run_training_with(
    config: &FederationConfig,
    env: &SimulationEnv<'_>,
    scenario: &Scenario,
    options: TrainingOptions,
) -> Result<TrainingOutcome, FederationError> {
    config.validate()?;
    env.pdgd.validate()?;
    if env.train.is_empty() {
        return Err(FederationError::EmptyTrainSet);
    }
    let nf = env.train.num_features();
    let mut clients: Vec<ClientState> = scenario
        .participants()
        .into_iter()
        .map(|id| ClientState::new(id, nf, config.local_steps))
        .collect();

    let mut global = LinearRanker::zeros(nf);
    let mut counters = EfficiencyCounters {
        local_steps: config.local_steps,
        values_per_record: nf,
        ..Default::default()
    };
    let mut eval_points = vec![env.eval_point(Phase::Train, 0, &global)?];
    let mut submissions = options.trace_submissions.then(Vec::new);
    let last = config.global_rounds;

    for round in 1..=last {
        let record = config.is_history_round(round);
        let g = &global;
        let submitted: Vec<(usize, ModelDelta)> = clients
            .par_iter_mut()
            .map(|client| {
                let mut rng = substream(config.seed, Stream::Train, &[client.client_id as u64, round as u64]);
                let delta = local_round(
                    client,
                    g,
                    env.train,
                    client.local_steps,
                    &env.pdgd,
                    env.click_model,
                    &mut rng,
                )?;
                let sent = scenario.submit(client.client_id, delta, g)?;
                if record {
                    client.history.push(UpdateRecord {
                        round,
                        delta: sent.clone(),
                    });
                }
                Ok((client.client_id, sent))
            })
            .collect::<Result<_, FederationError>>()?;

        let weighted: Vec<(ModelDelta, f64)> = submitted
            .iter()
            .map(|(_, d)| (d.clone(), config.local_steps as f64))
            .collect();
        global = aggregate(&global, &weighted)?;

        counters.aggregations += 1;
        for (id, _) in &submitted {
            *counters.local_updates.entry(*id).or_default() += config.local_steps;
            *counters.uploads.entry(*id).or_default() += 1;
        }
        if let Some(s) = submissions.as_mut() {
            s.push(submitted);
        }
        if env.should_eval(round, last) {
            eval_points.push(env.eval_point(Phase::Train, round, &global)?);
        }
    }

    let mut histories = HistoryStore::new(config.delta_t, config.global_rounds);
    for c in clients {
        counters.stored_records.insert(c.client_id, c.history.len());
        histories.insert(c.client_id, c.history);
    }
    Ok(TrainingOutcome {
        model: global,
        histories,
        eval_points,
        counters,
        submissions,
    })
}
