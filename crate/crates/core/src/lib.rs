//! Federated online learning to rank (FOLTR) with client unlearning.
//!
//! A global linear ranker is trained from simulated click feedback spread
//! over a set of clients, using PDGD locally and FedAvg on the server. Every
//! `delta_t` rounds each client keeps a copy of its local update; those
//! stored updates later drive a short, norm-calibrated replay that rebuilds
//! the global model without one departing client.
//!
//! Forgetting is checked with a poisoning protocol: the departing client
//! submits sign-flipped, amplified updates during training, so a model that
//! has truly forgotten it should recover the effectiveness of a model that
//! never saw it.
//!
//! Module map:
//!
//! - [`dataset`]: LETOR/SVMLight parsing and fold layouts.
//! - [`synthetic`]: a seeded LETOR-like generator for desk-scale runs.
//! - [`ranker`]: the linear model and weight-space arithmetic.
//! - [`clicksim`]: cascade click simulation.
//! - [`pdgd`]: the local online update.
//! - [`federation`]: client rounds, FedAvg and history recording.
//! - [`unlearning`]: calibrated replay without the departing client.
//! - [`adversary`]: update poisoning and the scenario triple.
//! - [`evaluation`]: nDCG@k over held-out queries.
//! - [`experiment`]: configs, run logs, persistence and summaries.

pub mod adversary;
pub mod clicksim;
pub mod dataset;
pub mod evaluation;
pub mod experiment;
pub mod federation;
pub mod pdgd;
pub mod ranker;
pub mod rng;
pub mod synthetic;
pub mod unlearning;

pub use adversary::{poison_model, poison_update, Scenario, ScenarioConfig, ScenarioKind};
pub use clicksim::{builtin_model, simulate_session, ClickModelName, ClickModelParams, GradeScale};
pub use dataset::{DatasetKind, FeatureDataset, QueryGroup, SplitRole};
pub use evaluation::{dcg_at_k, evaluate_model, ndcg_at_k, EvalPoint, NdcgOutcome, Phase};
pub use federation::{aggregate, run_training, FederationConfig, HistoryStore, UpdateRecord};
pub use pdgd::{pdgd_update, PdgdConfig};
pub use ranker::{LinearRanker, ModelDelta};
pub use unlearning::{calibrate, efficiency_report, run_unlearning, UnlearnConfig};
