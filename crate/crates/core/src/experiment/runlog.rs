//! Line-delimited JSON persistence. Every line is one self-describing record
//! tagged by its `record` field.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ExperimentError};
use crate::adversary::ScenarioKind;
use crate::evaluation::{EvalPoint, Phase};
use crate::federation::{EfficiencyCounters, HistoryStore, UpdateRecord};
use crate::ranker::{LinearRanker, ModelDelta};
use crate::unlearning::EfficiencyReport;

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub phase: Phase,
    pub seconds: f64,
}

/// Everything recorded about one trajectory: one training run, or one
/// unlearning replay.
#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    /// The experiment configuration as given, with the base seed.
    pub config: ExperimentConfig,
    pub fold: usize,
    pub repeat: usize,
    /// Seed actually used by this run, derived from the base seed and repeat.
    pub seed: u64,
    /// Which trajectory this is: a trained scenario, or `unlearn`.
    pub scenario: ScenarioKind,
    pub eval_points: Vec<EvalPoint>,
    pub counters: EfficiencyCounters,
    /// Unlearning runs only: the cost comparison with the training run.
    pub efficiency: Option<EfficiencyReport>,
    pub model: LinearRanker,
    pub timings: Vec<Timing>,
}

impl RunLog {
    pub fn final_ndcg(&self) -> Option<f64> {
        self.eval_points.last().map(|p| p.ndcg10)
    }

    /// The run with wall-clock timings removed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Vec::new(),
            ..self.clone()
        }
    }

    /// File stem naming the trajectory, fold and repeat.
    pub fn file_stem(&self) -> String {
        let label = match self.scenario {
            ScenarioKind::UnlearnNineHonestOneMalicious => format!(
                "unlearn-n{}-dt{}",
                self.config.unlearn.local_steps, self.config.unlearn.delta_t
            ),
            other => other.to_string(),
        };
        format!("{label}-f{}-r{}", self.fold, self.repeat)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub version: u32,
    pub config: ExperimentConfig,
    pub fold: usize,
    pub repeat: usize,
    pub seed: u64,
    pub scenario: ScenarioKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub weights: LinearRanker,
}

/// One line of a run log.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header(RunHeader),
    Eval(EvalPoint),
    Counters(EfficiencyCounters),
    Efficiency(EfficiencyReport),
    Model(ModelWeights),
    Timing(Timing),
}

impl LogRecord {
    /// Dispatches on the `record` tag by hand: serde's buffered tagged-enum
    /// path cannot read the integer-keyed maps of the counters.
    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        use serde::de::Error;
        use serde_json::from_value;
        let mut value: serde_json::Value = serde_json::from_str(line)?;
        let tag = value
            .as_object_mut()
            .and_then(|m| m.remove("record"))
            .and_then(|t| t.as_str().map(str::to_owned))
            .ok_or_else(|| serde_json::Error::custom("missing `record` tag"))?;
        Ok(match tag.as_str() {
            "header" => Self::Header(from_value(value)?),
            "eval" => Self::Eval(from_value(value)?),
            "counters" => Self::Counters(from_value(value)?),
            "efficiency" => Self::Efficiency(from_value(value)?),
            "model" => Self::Model(from_value(value)?),
            "timing" => Self::Timing(from_value(value)?),
            other => return Err(serde_json::Error::custom(format!("unknown record `{other}`"))),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum HistoryLine {
    Header {
        version: u32,
        delta_t: usize,
        global_rounds: usize,
    },
    Update {
        client_id: usize,
        round: usize,
        delta: ModelDelta,
    },
}

fn write_lines<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<(), ExperimentError> {
    let io = |e| ExperimentError::io(path, e);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut out, &r).map_err(|e| ExperimentError::io(path, e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

fn read_lines<T>(path: &Path, parse: impl Fn(&str) -> serde_json::Result<T>) -> Result<Vec<T>, ExperimentError> {
    let file = File::open(path).map_err(|e| ExperimentError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ExperimentError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse(&line).map_err(|e| ExperimentError::Format {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_run_log(path: &Path, log: &RunLog) -> Result<(), ExperimentError> {
    let mut records = vec![LogRecord::Header(RunHeader {
        version: FORMAT_VERSION,
        config: log.config.clone(),
        fold: log.fold,
        repeat: log.repeat,
        seed: log.seed,
        scenario: log.scenario,
    })];
    records.extend(log.eval_points.iter().copied().map(LogRecord::Eval));
    records.push(LogRecord::Counters(log.counters.clone()));
    if let Some(e) = &log.efficiency {
        records.push(LogRecord::Efficiency(e.clone()));
    }
    records.push(LogRecord::Model(ModelWeights {
        weights: log.model.clone(),
    }));
    records.extend(log.timings.iter().copied().map(LogRecord::Timing));
    write_lines(path, records)
}

pub fn read_run_log(path: &Path) -> Result<RunLog, ExperimentError> {
    let bad = |line: usize, reason: &str| ExperimentError::Format {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };
    let mut records = read_lines(path, LogRecord::parse)?.into_iter();
    let mut log = match records.next() {
        Some(LogRecord::Header(RunHeader {
            version,
            config,
            fold,
            repeat,
            seed,
            scenario,
        })) => {
            if version != FORMAT_VERSION {
                return Err(bad(1, &format!("unsupported run log version {version}")));
            }
            RunLog {
                config,
                fold,
                repeat,
                seed,
                scenario,
                eval_points: Vec::new(),
                counters: EfficiencyCounters::default(),
                efficiency: None,
                model: LinearRanker::zeros(0),
                timings: Vec::new(),
            }
        }
        _ => return Err(bad(1, "run log must start with a header record")),
    };
    for (i, rec) in records.enumerate() {
        match rec {
            LogRecord::Header(_) => return Err(bad(i + 2, "duplicate header record")),
            LogRecord::Eval(p) => log.eval_points.push(p),
            LogRecord::Counters(c) => log.counters = c,
            LogRecord::Efficiency(e) => log.efficiency = Some(e),
            LogRecord::Model(m) => log.model = m.weights,
            LogRecord::Timing(t) => log.timings.push(t),
        }
    }
    Ok(log)
}

pub fn write_history(path: &Path, history: &HistoryStore) -> Result<(), ExperimentError> {
    let header = HistoryLine::Header {
        version: FORMAT_VERSION,
        delta_t: history.delta_t(),
        global_rounds: history.global_rounds(),
    };
    let updates = history.export().map(|(client_id, r)| HistoryLine::Update {
        client_id,
        round: r.round,
        delta: r.delta.clone(),
    });
    write_lines(path, std::iter::once(header).chain(updates))
}

pub fn read_history(path: &Path) -> Result<HistoryStore, ExperimentError> {
    let bad = |line: usize, reason: String| ExperimentError::Format {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = read_lines(path, |l| serde_json::from_str::<HistoryLine>(l))?.into_iter();
    let mut store = match lines.next() {
        Some(HistoryLine::Header {
            version,
            delta_t,
            global_rounds,
        }) if version == FORMAT_VERSION => HistoryStore::new(delta_t, global_rounds),
        _ => return Err(bad(1, "history must start with a supported header record".into())),
    };
    for (i, line) in lines.enumerate() {
        match line {
            HistoryLine::Update {
                client_id,
                round,
                delta,
            } => store.push(client_id, UpdateRecord { round, delta }),
            HistoryLine::Header { .. } => return Err(bad(i + 2, "duplicate header record".into())),
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::DatasetSource;
    use crate::synthetic::SyntheticConfig;
    use std::collections::BTreeMap;

    fn sample_log() -> RunLog {
        RunLog {
            config: ExperimentConfig::new(DatasetSource::Synthetic(SyntheticConfig::small(1))),
            fold: 1,
            repeat: 2,
            seed: u64::MAX - 3,
            scenario: ScenarioKind::UnlearnNineHonestOneMalicious,
            eval_points: vec![
                EvalPoint {
                    phase: Phase::Unlearn,
                    round: 0,
                    ndcg10: 0.1,
                },
                EvalPoint {
                    phase: Phase::Unlearn,
                    round: 7,
                    ndcg10: 0.123_456_789_012_345_67,
                },
            ],
            counters: EfficiencyCounters {
                aggregations: 7,
                local_steps: 3,
                local_updates: BTreeMap::from([(0, 21), (4, 21)]),
                uploads: BTreeMap::from([(0, 7), (4, 7)]),
                stored_records: BTreeMap::new(),
                values_per_record: 6,
                degenerate_calibrations: 1,
            },
            efficiency: None,
            model: LinearRanker::from_weights(vec![1.0 / 3.0, -2e-300, 0.0]),
            timings: vec![Timing {
                phase: Phase::Unlearn,
                seconds: 0.5,
            }],
        }
    }

    #[test]
    fn run_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/run.jsonl");
        let log = sample_log();
        write_run_log(&path, &log).unwrap();
        assert_eq!(read_run_log(&path).unwrap(), log);
        assert_eq!(log.file_stem(), "unlearn-n3-dt10-f1-r2");

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().all(|l| l.starts_with("{\"record\":")));
    }

    #[test]
    fn history_round_trip() {
        let mut h = HistoryStore::new(10, 25);
        for c in [0, 3] {
            for round in [1, 11, 21] {
                h.push(
                    c,
                    UpdateRecord {
                        round,
                        delta: ModelDelta::from_vec(vec![round as f64 * 0.1, -(c as f64) / 7.0]),
                    },
                );
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.jsonl");
        write_history(&path, &h).unwrap();
        let back = read_history(&path).unwrap();
        assert_eq!((back.delta_t(), back.global_rounds()), (10, 25));
        assert_eq!(back.export().collect::<Vec<_>>(), h.export().collect::<Vec<_>>());
    }

    #[test]
    fn rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"record\":\"eval\",\"phase\":\"train\",\"round\":0,\"ndcg10\":0.1}\n",
        )
        .unwrap();
        assert!(matches!(
            read_run_log(&path),
            Err(ExperimentError::Format { line: 1, .. })
        ));
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(
            read_history(&path),
            Err(ExperimentError::Format { line: 1, .. })
        ));
        assert!(matches!(
            read_run_log(&dir.path().join("missing.jsonl")),
            Err(ExperimentError::Io { .. })
        ));
    }
}
