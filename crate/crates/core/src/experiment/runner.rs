use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::runlog::{read_history, write_history, write_run_log, RunLog, Timing};
use super::summary::{summarize, Summary};
use super::{DatasetSource, ExperimentConfig, ExperimentError};
use crate::adversary::{scenario_hooks, ScenarioKind};
use crate::clicksim::{builtin_model, ClickModelParams, GradeScale};
use crate::dataset::{iterate_folds, FeatureDataset};
use crate::evaluation::Phase;
use crate::federation::{
    run_training, EfficiencyCounters, FederationConfig, HistoryStore, SimulationEnv, TrainingOutcome,
};
use crate::rng::{derive_seed, Stream};
use crate::synthetic::generate;
use crate::unlearning::{efficiency_report, run_unlearning};

/// One train/test pair. Fold indices are 1-based.
#[derive(Clone, Debug)]
pub struct Split {
    pub fold: usize,
    pub train: FeatureDataset,
    pub test: FeatureDataset,
}

pub fn load_splits(source: &DatasetSource) -> Result<Vec<Split>, ExperimentError> {
    match source {
        DatasetSource::Letor { kind, root, .. } => iterate_folds(root, *kind, source.normalize())?
            .map(|f| {
                let f = f?;
                Ok(Split {
                    fold: f.index,
                    train: f.train,
                    test: f.test,
                })
            })
            .collect(),
        DatasetSource::Synthetic(cfg) => {
            let (train, test) = generate(cfg);
            Ok(vec![Split { fold: 1, train, test }])
        }
    }
}

/// Seed of repeat `repeat` under base seed `base`.
pub fn repeat_seed(base: u64, repeat: usize) -> u64 {
    derive_seed(base, Stream::Repeat, &[repeat as u64])
}

fn click_model(config: &ExperimentConfig, split: &Split) -> Result<ClickModelParams, ExperimentError> {
    let max = split.train.max_grade();
    let scale = GradeScale::for_max_grade(max)
        .ok_or_else(|| ExperimentError::Config(format!("no click model grade scale has maximum grade {max}")))?;
    Ok(builtin_model(config.click_model, scale))
}

/// The unlearning grid: `n'` values crossed with `dt` values.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub unlearn_steps: Vec<usize>,
    pub delta_ts: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            unlearn_steps: vec![1, 2, 3, 4],
            delta_ts: vec![5, 10, 20],
        }
    }
}

impl SweepGrid {
    fn history_interval(&self) -> usize {
        fn gcd(a: usize, b: usize) -> usize {
            if b == 0 {
                a
            } else {
                gcd(b, a % b)
            }
        }
        self.delta_ts.iter().copied().fold(0, gcd)
    }

    /// The per-cell unlearning configurations.
    fn cells(&self, config: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &dt in &self.delta_ts {
            for &steps in &self.unlearn_steps {
                let mut c = config.clone();
                c.scenario.kind = ScenarioKind::UnlearnNineHonestOneMalicious;
                c.federation.delta_t = dt;
                c.unlearn.delta_t = dt;
                c.unlearn.local_steps = steps;
                out.push(c);
            }
        }
        out
    }
}

/// Logs and histories produced by a run or a sweep, plus their summary.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub logs: Vec<RunLog>,
    /// Stored training history per `(fold, repeat)`.
    pub histories: BTreeMap<(usize, usize), HistoryStore>,
    pub summary: Summary,
}

struct Trained {
    log: RunLog,
    outcome: TrainingOutcome,
}

/// Trains `config`'s scenario (its training kind) on one split.
fn train(config: &ExperimentConfig, split: &Split, repeat: usize) -> Result<Trained, ExperimentError> {
    let seed = repeat_seed(config.federation.seed, repeat);
    let fed = FederationConfig {
        seed,
        ..config.federation
    };
    let params = click_model(config, split)?;
    let env = SimulationEnv {
        train: &split.train,
        test: &split.test,
        pdgd: config.pdgd,
        click_model: &params,
        eval_every: config.eval_every,
    };
    let kind = config.scenario.kind.training_kind();
    let scenario = scenario_hooks(config.scenario.with_kind(kind), fed.num_clients)?;
    let start = Instant::now();
    let outcome = run_training(&fed, &env, &scenario).map_err(|source| ExperimentError::Training {
        fold: split.fold,
        repeat,
        source,
    })?;
    let log = RunLog {
        config: config.clone(),
        fold: split.fold,
        repeat,
        seed,
        scenario: kind,
        eval_points: outcome.eval_points.clone(),
        counters: outcome.counters.clone(),
        efficiency: None,
        model: outcome.model.clone(),
        timings: vec![Timing {
            phase: Phase::Train,
            seconds: start.elapsed().as_secs_f64(),
        }],
    };
    Ok(Trained { log, outcome })
}

/// Replays `history` without the target client under `config.unlearn`.
fn unlearn(
    config: &ExperimentConfig,
    split: &Split,
    repeat: usize,
    history: &HistoryStore,
    training_counters: &EfficiencyCounters,
) -> Result<RunLog, ExperimentError> {
    let seed = repeat_seed(config.federation.seed, repeat);
    let fed = FederationConfig {
        seed,
        delta_t: config.unlearn.delta_t,
        ..config.federation
    };
    let params = click_model(config, split)?;
    let env = SimulationEnv {
        train: &split.train,
        test: &split.test,
        pdgd: config.pdgd,
        click_model: &params,
        eval_every: config.eval_every,
    };
    let start = Instant::now();
    let outcome =
        run_unlearning(history, config.scenario.target_client, &config.unlearn, &fed, &env).map_err(|source| {
            ExperimentError::Unlearning {
                fold: split.fold,
                repeat,
                source,
            }
        })?;
    Ok(RunLog {
        config: config.clone(),
        fold: split.fold,
        repeat,
        seed,
        scenario: ScenarioKind::UnlearnNineHonestOneMalicious,
        eval_points: outcome.eval_points,
        efficiency: Some(efficiency_report(training_counters, &outcome.counters)),
        counters: outcome.counters,
        model: outcome.model,
        timings: vec![Timing {
            phase: Phase::Unlearn,
            seconds: start.elapsed().as_secs_f64(),
        }],
    })
}

/// Runs `config`'s scenario on one split and repeat. The unlearning scenario
/// yields two logs: the `9h-1m` training run and the unlearning replay.
pub fn run_job(
    config: &ExperimentConfig,
    split: &Split,
    repeat: usize,
) -> Result<(Vec<RunLog>, HistoryStore), ExperimentError> {
    let Trained { log, outcome } = train(config, split, repeat)?;
    let mut logs = vec![log];
    if config.scenario.kind == ScenarioKind::UnlearnNineHonestOneMalicious {
        logs.push(unlearn(config, split, repeat, &outcome.histories, &outcome.counters)?);
    }
    Ok((logs, outcome.histories))
}

fn jobs(splits: &[Split], repeats: usize) -> Vec<(&Split, usize)> {
    splits.iter().flat_map(|s| (0..repeats).map(move |r| (s, r))).collect()
}

/// Runs every fold and repeat in parallel, then writes logs, histories and
/// summaries under `config.out_dir` when set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    let splits = load_splits(&config.dataset)?;
    let results: Vec<_> = jobs(&splits, config.repeats)
        .into_par_iter()
        .map(|(split, repeat)| run_job(config, split, repeat).map(|r| (split.fold, repeat, r)))
        .collect::<Result<_, _>>()?;

    let mut logs = Vec::new();
    let mut histories = BTreeMap::new();
    for (fold, repeat, (l, h)) in results {
        logs.extend(l);
        histories.insert((fold, repeat), h);
    }
    finish(config, logs, histories)
}

/// Trains `9h-0m` and `9h-1m` once per fold and repeat, then unlearns the
/// `9h-1m` history for every `(n', dt)` cell of `grid`. History is recorded
/// at the gcd of the `dt` values and thinned per cell, which gives the same
/// records a dedicated run at that `dt` would store.
pub fn run_sweep(config: &ExperimentConfig, grid: &SweepGrid) -> Result<ExperimentOutput, ExperimentError> {
    if grid.unlearn_steps.is_empty() || grid.delta_ts.is_empty() {
        return Err(ExperimentError::Config("sweep grid is empty".into()));
    }
    let cells = grid.cells(config);
    for c in &cells {
        c.validate()?;
    }
    let interval = grid.history_interval();
    let mut base = config.clone();
    base.federation.delta_t = interval;
    base.unlearn.delta_t = interval;
    base.scenario.kind = ScenarioKind::NineHonest;
    base.validate()?;

    let splits = load_splits(&config.dataset)?;
    let results: Vec<_> = jobs(&splits, config.repeats)
        .into_par_iter()
        .map(|(split, repeat)| -> Result<_, ExperimentError> {
            let baseline = train(&base, split, repeat)?;
            let poisoned = train(
                &base.clone().with_kind(ScenarioKind::NineHonestOneMalicious),
                split,
                repeat,
            )?;
            let mut logs = vec![baseline.log, poisoned.log];
            for cell in &cells {
                let dt = cell.unlearn.delta_t;
                let history = poisoned
                    .outcome
                    .histories
                    .resample(dt)
                    .expect("every dt is a multiple of the recording interval");
                let mut counters = poisoned.outcome.counters.clone();
                for c in history.client_ids() {
                    counters.stored_records.insert(c, history.len(c));
                }
                logs.push(unlearn(cell, split, repeat, &history, &counters)?);
            }
            Ok((split.fold, repeat, logs, poisoned.outcome.histories))
        })
        .collect::<Result<_, _>>()?;

    let mut logs = Vec::new();
    let mut histories = BTreeMap::new();
    for (fold, repeat, l, h) in results {
        logs.extend(l);
        histories.insert((fold, repeat), h);
    }
    finish(config, logs, histories)
}

impl ExperimentConfig {
    fn with_kind(mut self, kind: ScenarioKind) -> Self {
        self.scenario.kind = kind;
        self
    }
}

/// Unlearns from a history file written by an earlier run, for the given
/// fold and repeat of `config`.
pub fn unlearn_from_history(
    config: &ExperimentConfig,
    fold: usize,
    repeat: usize,
    history_path: &Path,
) -> Result<RunLog, ExperimentError> {
    let config = config.clone().with_kind(ScenarioKind::UnlearnNineHonestOneMalicious);
    config.validate()?;
    let history = read_history(history_path)?;
    let split = load_splits(&config.dataset)?
        .into_iter()
        .find(|s| s.fold == fold)
        .ok_or_else(|| ExperimentError::Config(format!("dataset has no fold {fold}")))?;
    // Training counters are implied by the configuration and the history.
    let fed = &config.federation;
    let mut counters = EfficiencyCounters {
        aggregations: history.global_rounds(),
        local_steps: fed.local_steps,
        values_per_record: split.train.num_features(),
        ..Default::default()
    };
    for c in history.client_ids() {
        counters
            .local_updates
            .insert(c, fed.local_steps * history.global_rounds());
        counters.uploads.insert(c, history.global_rounds());
        counters.stored_records.insert(c, history.len(c));
    }
    unlearn(&config, &split, repeat, &history, &counters)
}

fn finish(
    config: &ExperimentConfig,
    logs: Vec<RunLog>,
    histories: BTreeMap<(usize, usize), HistoryStore>,
) -> Result<ExperimentOutput, ExperimentError> {
    let summary = summarize(&logs)?;
    let out = ExperimentOutput {
        logs,
        histories,
        summary,
    };
    if let Some(dir) = &config.out_dir {
        write_outputs(dir, config, &out)?;
    }
    Ok(out)
}

fn write_outputs(dir: &Path, config: &ExperimentConfig, out: &ExperimentOutput) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let p = dir.join("config.toml");
    std::fs::write(&p, config.to_toml()?).map_err(|e| ExperimentError::io(&p, e))?;
    for log in &out.logs {
        write_run_log(&dir.join("runs").join(format!("{}.jsonl", log.file_stem())), log)?;
    }
    for ((fold, repeat), h) in &out.histories {
        write_history(&dir.join("histories").join(format!("f{fold}-r{repeat}.jsonl")), h)?;
    }
    out.summary.write_files(dir)
}
