//! Removing one client from a trained federation by calibrated replay.
//!
//! Starting again from the zero model, the remaining clients replay the
//! history rounds `1, 1 + dt, 1 + 2dt, ...`. At replay iteration `j` each
//! client runs a short local round (`n'_i < n_i` steps) and rescales the
//! fresh update to the length of what it stored at round `1 + (j - 1) dt`:
//!
//! ```text
//! dM_unlearn = ||dM_stored|| * dM_fresh / ||dM_fresh||
//! ```
//!
//! The calibrated updates are aggregated with FedAvg. The departing client's
//! stored records are never read.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{EvalPoint, Phase};
use crate::federation::{
    aggregate, local_round, ClientState, EfficiencyCounters, FederationConfig, FederationError, HistoryStore,
    SimulationEnv,
};
use crate::ranker::{DimensionMismatch, LinearRanker, ModelDelta};
use crate::rng::{substream, Stream};

pub const DEFAULT_EPSILON_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum UnlearnError {
    #[error("invalid unlearning config: {0}")]
    Config(String),
    #[error("fresh update norm {norm:e} is below the degeneracy threshold")]
    DegenerateDirection { norm: f64 },
    #[error("no stored history to replay")]
    EmptyHistory,
    #[error("no client remains after removing client {0}")]
    NoRemainingClients(usize),
    #[error("client {client}: expected {expected} stored records, found {found}")]
    HistoryLengthMismatch {
        client: usize,
        expected: usize,
        found: usize,
    },
    #[error("client {client}: record {index} is for round {found}, expected round {expected}")]
    HistoryRoundMismatch {
        client: usize,
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error(transparent)]
    Federation(#[from] FederationError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    /// Local steps per replay iteration (`n'_i`).
    pub local_steps: usize,
    /// Must match the interval used while training.
    pub delta_t: usize,
    /// Fresh updates shorter than this contribute nothing.
    pub epsilon_norm: f64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            local_steps: 3,
            delta_t: 10,
            epsilon_norm: DEFAULT_EPSILON_NORM,
        }
    }
}

impl UnlearnConfig {
    /// Checks `1 <= n'_i < n_i` and that the intervals agree.
    pub fn validate(&self, training: &FederationConfig) -> Result<(), UnlearnError> {
        if self.local_steps < 1 || self.local_steps >= training.local_steps {
            return Err(UnlearnError::Config(format!(
                "unlearning local steps must satisfy 1 <= n' < n = {}, got {}",
                training.local_steps, self.local_steps
            )));
        }
        if self.delta_t != training.delta_t {
            return Err(UnlearnError::Config(format!(
                "delta_t {} differs from the training interval {}",
                self.delta_t, training.delta_t
            )));
        }
        if !(self.epsilon_norm > 0.0 && self.epsilon_norm.is_finite()) {
            return Err(UnlearnError::Config("epsilon_norm must be positive".into()));
        }
        Ok(())
    }

    /// `ceil(T / dt)`.
    pub fn unlearn_rounds(&self, global_rounds: usize) -> usize {
        global_rounds.div_ceil(self.delta_t)
    }
}

/// Rescales `fresh` to the L2 length of `stored`.
pub fn calibrate(stored: &ModelDelta, fresh: &ModelDelta, epsilon_norm: f64) -> Result<ModelDelta, UnlearnError> {
    if stored.dim() != fresh.dim() {
        return Err(DimensionMismatch {
            expected: stored.dim(),
            actual: fresh.dim(),
        }
        .into());
    }
    let step = stored.norm();
    if step == 0.0 {
        return Ok(ModelDelta::zeros(stored.dim()));
    }
    let len = fresh.norm();
    if len.is_nan() || len < epsilon_norm {
        return Err(UnlearnError::DegenerateDirection { norm: len });
    }
    Ok(fresh.scaled(step / len))
}

#[derive(Clone, Debug)]
pub struct UnlearnOutcome {
    pub model: LinearRanker,
    pub eval_points: Vec<EvalPoint>,
    pub counters: EfficiencyCounters,
}

/// Rebuilds the global model without `removed`, replaying the remaining
/// clients' stored history. `training` is the configuration the history was
/// recorded under.
pub fn run_unlearning(
    histories: &HistoryStore,
    removed: usize,
    config: &UnlearnConfig,
    training: &FederationConfig,
    env: &SimulationEnv<'_>,
) -> Result<UnlearnOutcome, UnlearnError> {
    config.validate(training)?;
    env.pdgd.validate().map_err(FederationError::from)?;
    if histories.delta_t() != config.delta_t {
        return Err(UnlearnError::Config(format!(
            "history was stored every {} rounds, config says {}",
            histories.delta_t(),
            config.delta_t
        )));
    }
    let rounds = config.unlearn_rounds(histories.global_rounds());
    if rounds == 0 {
        return Err(UnlearnError::EmptyHistory);
    }
    let remaining: Vec<usize> = histories.client_ids().into_iter().filter(|&c| c != removed).collect();
    if remaining.is_empty() {
        return Err(UnlearnError::NoRemainingClients(removed));
    }
    for &c in &remaining {
        let found = histories.len(c);
        if found != rounds {
            return Err(UnlearnError::HistoryLengthMismatch {
                client: c,
                expected: rounds,
                found,
            });
        }
    }

    let nf = env.train.num_features();
    let mut clients: Vec<ClientState> = remaining
        .iter()
        .map(|&id| ClientState::new(id, nf, config.local_steps))
        .collect();
    let mut global = LinearRanker::zeros(nf);
    let mut counters = EfficiencyCounters {
        local_steps: config.local_steps,
        values_per_record: nf,
        ..Default::default()
    };
    let mut eval_points = vec![env
        .eval_point(Phase::Unlearn, 0, &global)
        .map_err(FederationError::from)?];

    for j in 1..=rounds {
        let expected_round = 1 + (j - 1) * config.delta_t;
        let g = &global;
        let calibrated: Vec<(usize, Option<ModelDelta>)> = clients
            .par_iter_mut()
            .map(|client| {
                let id = client.client_id;
                let mut rng = substream(training.seed, Stream::Unlearn, &[id as u64, j as u64]);
                let fresh = local_round(
                    client,
                    g,
                    env.train,
                    config.local_steps,
                    &env.pdgd,
                    env.click_model,
                    &mut rng,
                )?;
                let stored = histories.record(id, j - 1).expect("length checked above");
                if stored.round != expected_round {
                    return Err(UnlearnError::HistoryRoundMismatch {
                        client: id,
                        index: j - 1,
                        expected: expected_round,
                        found: stored.round,
                    });
                }
                match calibrate(&stored.delta, &fresh, config.epsilon_norm) {
                    Ok(d) => Ok((id, Some(d))),
                    Err(UnlearnError::DegenerateDirection { .. }) => Ok((id, None)),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_, UnlearnError>>()?;

        let weighted: Vec<(ModelDelta, f64)> = calibrated
            .iter()
            .map(|(_, d)| {
                let d = d.clone().unwrap_or_else(|| ModelDelta::zeros(nf));
                (d, config.local_steps as f64)
            })
            .collect();
        global = aggregate(&global, &weighted)?;

        counters.aggregations += 1;
        for (id, d) in &calibrated {
            *counters.local_updates.entry(*id).or_default() += config.local_steps;
            *counters.uploads.entry(*id).or_default() += 1;
            if d.is_none() {
                counters.degenerate_calibrations += 1;
            }
        }
        if env.should_eval(j, rounds) {
            eval_points.push(
                env.eval_point(Phase::Unlearn, j, &global)
                    .map_err(FederationError::from)?,
            );
        }
    }

    Ok(UnlearnOutcome {
        model: global,
        eval_points,
        counters,
    })
}

/// Cost of unlearning relative to retraining from scratch, per client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub retrain_local_updates_per_client: usize,
    pub unlearn_local_updates_per_client: usize,
    /// `(n_i * T) / (n'_i * T_unlearn)`, i.e. `(n_i / n'_i) * dt`.
    pub local_update_reduction: f64,
    pub retrain_aggregations: usize,
    pub unlearn_aggregations: usize,
    /// `T / T_unlearn`, i.e. `dt`.
    pub communication_reduction: f64,
    pub stored_records_per_client: usize,
    pub values_per_record: usize,
}

/// Compares the counters of a training run with those of the unlearning run
/// that replayed it. Per-client figures are taken from the first client
/// present in both runs (all clients do the same amount of work).
pub fn efficiency_report(training: &EfficiencyCounters, unlearning: &EfficiencyCounters) -> EfficiencyReport {
    let client = unlearning
        .local_updates
        .keys()
        .find(|c| training.local_updates.contains_key(c))
        .copied();
    let per = |m: &std::collections::BTreeMap<usize, usize>| client.and_then(|c| m.get(&c)).copied().unwrap_or(0);
    let retrain = per(&training.local_updates);
    let unlearn = per(&unlearning.local_updates);
    EfficiencyReport {
        retrain_local_updates_per_client: retrain,
        unlearn_local_updates_per_client: unlearn,
        local_update_reduction: retrain as f64 / unlearn as f64,
        retrain_aggregations: training.aggregations,
        unlearn_aggregations: unlearning.aggregations,
        communication_reduction: training.aggregations as f64 / unlearning.aggregations as f64,
        stored_records_per_client: per(&training.stored_records),
        values_per_record: training.values_per_record,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{scenario_hooks, ScenarioConfig, ScenarioKind};
    use crate::clicksim::{builtin_model, ClickModelName, GradeScale};
    use crate::federation::{run_training, UpdateRecord};
    use crate::pdgd::PdgdConfig;
    use crate::synthetic::{generate, SyntheticConfig};
    use proptest::prelude::*;

    fn d(v: &[f64]) -> ModelDelta {
        ModelDelta::from_vec(v.to_vec())
    }

    #[test]
    fn calibrate_examples() {
        let stored = d(&[0.5, -1.5, 2.0]);
        assert_eq!(calibrate(&stored, &stored.scaled(3.0), 1e-12).unwrap(), stored);
        assert!(calibrate(&d(&[0.0, 0.0]), &d(&[3.0, 1.0]), 1e-12).unwrap().is_zero());
        assert!(calibrate(&d(&[0.0, 0.0]), &d(&[0.0, 0.0]), 1e-12).unwrap().is_zero());
        assert_eq!(
            calibrate(&d(&[3.0, 4.0]), &d(&[0.0, 2.0]), 1e-12).unwrap(),
            d(&[0.0, 5.0])
        );
        assert!(matches!(
            calibrate(&d(&[3.0, 4.0]), &d(&[0.0, 1e-14]), 1e-12),
            Err(UnlearnError::DegenerateDirection { .. })
        ));
        assert!(matches!(
            calibrate(&d(&[1.0]), &d(&[1.0, 2.0]), 1e-12),
            Err(UnlearnError::Dimension(_))
        ));
    }

    #[test]
    fn config_constraints() {
        let training = FederationConfig::default();
        assert!(UnlearnConfig::default().validate(&training).is_ok());
        for n in [0, 5, 6] {
            let c = UnlearnConfig {
                local_steps: n,
                ..Default::default()
            };
            assert!(c.validate(&training).is_err(), "{n}");
        }
        let one = FederationConfig {
            local_steps: 1,
            delta_t: 1,
            ..Default::default()
        };
        let c = UnlearnConfig {
            local_steps: 1,
            delta_t: 1,
            ..Default::default()
        };
        assert!(matches!(c.validate(&one), Err(UnlearnError::Config(_))));
        let c = UnlearnConfig {
            delta_t: 5,
            ..Default::default()
        };
        assert!(c.validate(&training).is_err());
        assert_eq!(
            UnlearnConfig {
                delta_t: 20,
                ..Default::default()
            }
            .unlearn_rounds(10_000),
            500
        );
        assert_eq!(UnlearnConfig::default().unlearn_rounds(10_000), 1000);
    }

    #[test]
    fn report_arithmetic() {
        let mut train = EfficiencyCounters {
            aggregations: 10_000,
            local_steps: 5,
            values_per_record: 46,
            ..Default::default()
        };
        let mut unlearn = EfficiencyCounters {
            aggregations: 1_000,
            local_steps: 3,
            ..Default::default()
        };
        for c in 0..10 {
            train.local_updates.insert(c, 50_000);
            train.stored_records.insert(c, 1_000);
        }
        for c in 0..9 {
            unlearn.local_updates.insert(c, 3_000);
        }
        let r = efficiency_report(&train, &unlearn);
        assert_eq!(r.retrain_local_updates_per_client, 50_000);
        assert_eq!(r.unlearn_local_updates_per_client, 3_000);
        assert!((r.local_update_reduction - 50.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.communication_reduction, 10.0);
        assert_eq!(r.stored_records_per_client, 1_000);
    }

    struct Fixture {
        train: crate::dataset::FeatureDataset,
        test: crate::dataset::FeatureDataset,
        model: crate::clicksim::ClickModelParams,
    }

    impl Fixture {
        fn new() -> Self {
            let (train, test) = generate(&SyntheticConfig::small(8));
            Self {
                train,
                test,
                model: builtin_model(ClickModelName::Perfect, GradeScale::ThreeLevel),
            }
        }

        fn env(&self) -> SimulationEnv<'_> {
            SimulationEnv {
                train: &self.train,
                test: &self.test,
                pdgd: PdgdConfig::default(),
                click_model: &self.model,
                eval_every: 5,
            }
        }
    }

    #[test]
    fn never_reads_the_removed_client() {
        let fx = Fixture::new();
        let training = FederationConfig {
            num_clients: 4,
            global_rounds: 40,
            delta_t: 10,
            seed: 3,
            ..Default::default()
        };
        let scenario = scenario_hooks(ScenarioConfig::new(ScenarioKind::NineHonestOneMalicious, 2), 4).unwrap();
        let trained = run_training(&training, &fx.env(), &scenario).unwrap();
        let histories = trained.histories.clone();
        let config = UnlearnConfig {
            local_steps: 2,
            delta_t: 10,
            ..Default::default()
        };
        let out = run_unlearning(&histories, 2, &config, &training, &fx.env()).unwrap();
        assert_eq!(histories.read_count(2), 0);
        for c in [0, 1, 3] {
            assert_eq!(histories.read_count(c), 4);
            assert_eq!(out.counters.local_updates[&c], 2 * 4);
        }
        assert!(!out.counters.local_updates.contains_key(&2));
        assert_eq!(out.counters.aggregations, 4);
        let rounds: Vec<_> = out.eval_points.iter().map(|p| p.round).collect();
        assert_eq!(rounds, [0, 4]);
        assert!(out.eval_points.iter().all(|p| p.phase == Phase::Unlearn));

        let again = run_unlearning(&trained.histories, 2, &config, &training, &fx.env()).unwrap();
        assert_eq!(again.model, out.model);
    }

    #[test]
    fn history_errors() {
        let fx = Fixture::new();
        let training = FederationConfig {
            num_clients: 3,
            global_rounds: 20,
            delta_t: 10,
            ..Default::default()
        };
        let config = UnlearnConfig {
            local_steps: 2,
            delta_t: 10,
            ..Default::default()
        };
        let rec = |round| UpdateRecord {
            round,
            delta: ModelDelta::zeros(fx.train.num_features()),
        };

        let mut short = HistoryStore::new(10, 20);
        short.insert(0, vec![rec(1), rec(11)]);
        short.insert(1, vec![rec(1)]);
        assert!(matches!(
            run_unlearning(&short, 2, &config, &training, &fx.env()),
            Err(UnlearnError::HistoryLengthMismatch {
                client: 1,
                expected: 2,
                found: 1
            })
        ));

        let mut misaligned = HistoryStore::new(10, 20);
        misaligned.insert(0, vec![rec(1), rec(12)]);
        assert!(matches!(
            run_unlearning(&misaligned, 2, &config, &training, &fx.env()),
            Err(UnlearnError::HistoryRoundMismatch { .. })
        ));

        let empty = HistoryStore::new(10, 0);
        assert!(matches!(
            run_unlearning(&empty, 2, &config, &training, &fx.env()),
            Err(UnlearnError::EmptyHistory)
        ));

        let mut only_removed = HistoryStore::new(10, 20);
        only_removed.insert(2, vec![rec(1), rec(11)]);
        assert!(matches!(
            run_unlearning(&only_removed, 2, &config, &training, &fx.env()),
            Err(UnlearnError::NoRemainingClients(2))
        ));
    }

    #[test]
    fn zero_history_yields_zero_model() {
        // Zero-length stored steps calibrate every fresh update to zero.
        let fx = Fixture::new();
        let training = FederationConfig {
            num_clients: 3,
            global_rounds: 20,
            delta_t: 10,
            ..Default::default()
        };
        let config = UnlearnConfig {
            local_steps: 2,
            delta_t: 10,
            ..Default::default()
        };
        let mut h = HistoryStore::new(10, 20);
        for c in 0..2 {
            let recs = [1, 11]
                .into_iter()
                .map(|round| UpdateRecord {
                    round,
                    delta: ModelDelta::zeros(fx.train.num_features()),
                })
                .collect();
            h.insert(c, recs);
        }
        let out = run_unlearning(&h, 2, &config, &training, &fx.env()).unwrap();
        assert_eq!(out.model, LinearRanker::zeros(fx.train.num_features()));
    }

    proptest! {
        #[test]
        fn calibration_preserves_norm_and_direction(
            a in prop::collection::vec(-100.0f64..100.0, 1..50),
            b in prop::collection::vec(-100.0f64..100.0, 50),
        ) {
            let b = &b[..a.len()];
            let (a, b) = (d(&a), d(b));
            prop_assume!(b.norm() > 1e-9);
            let c = calibrate(&a, &b, 1e-12).unwrap();
            prop_assert!((c.norm() - a.norm()).abs() <= 1e-9 * a.norm().max(f64::MIN_POSITIVE));
            let scale = a.norm() / b.norm();
            for (ci, bi) in c.values().iter().zip(b.values()) {
                prop_assert!((ci - scale * bi).abs() <= 1e-12 * (scale * bi).abs().max(1e-300));
            }
        }
    }
}
