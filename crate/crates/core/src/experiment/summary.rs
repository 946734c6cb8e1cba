//! Averaging run logs into curves and final-score tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{ExperimentError, RunLog};
use crate::adversary::ScenarioKind;
use crate::clicksim::ClickModelName;
use crate::evaluation::Phase;

/// Identifies one averaged trajectory: a trained scenario, or one unlearning
/// cell `(n', dt)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    order: usize,
    /// Descending `n'` like the reference table; stored negated.
    neg_steps: i64,
    delta_t: usize,
}

fn group_key(log: &RunLog) -> GroupKey {
    let order = ScenarioKind::ALL
        .iter()
        .position(|k| *k == log.scenario)
        .unwrap_or(usize::MAX);
    if log.scenario == ScenarioKind::UnlearnNineHonestOneMalicious {
        GroupKey {
            order,
            neg_steps: -(log.config.unlearn.local_steps as i64),
            delta_t: log.config.unlearn.delta_t,
        }
    } else {
        GroupKey {
            order,
            neg_steps: 0,
            delta_t: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub scenario: ScenarioKind,
    pub unlearn_steps: Option<usize>,
    pub delta_t: Option<usize>,
    pub phase: Phase,
    pub round: usize,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinalRow {
    pub scenario: ScenarioKind,
    pub unlearn_steps: Option<usize>,
    pub delta_t: Option<usize>,
    pub mean: f64,
    pub std: f64,
    /// `(fold, repeat, final nDCG@10)` of every run, ordered by fold then
    /// repeat, so rows can be paired across scenarios.
    pub runs: Vec<(usize, usize, f64)>,
}

impl FinalRow {
    pub fn values(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.2).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub dataset: String,
    pub click_model: ClickModelName,
    pub curves: Vec<CurveRow>,
    pub finals: Vec<FinalRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_compatible(first: &RunLog, other: &RunLog) -> Result<(), ExperimentError> {
    let (a, b) = (&first.config, &other.config);
    let mismatch = |what: &str| {
        Err(ExperimentError::Summary(format!(
            "logs disagree on {what}: {} (fold {}, repeat {}) vs {} (fold {}, repeat {})",
            first.file_stem(),
            first.fold,
            first.repeat,
            other.file_stem(),
            other.fold,
            other.repeat
        )))
    };
    if a.dataset != b.dataset {
        return mismatch("the dataset");
    }
    if a.click_model != b.click_model {
        return mismatch("the click model");
    }
    let fa = (
        a.federation.num_clients,
        a.federation.local_steps,
        a.federation.global_rounds,
    );
    let fb = (
        b.federation.num_clients,
        b.federation.local_steps,
        b.federation.global_rounds,
    );
    if fa != fb {
        return mismatch("the federation size or length");
    }
    if a.pdgd != b.pdgd {
        return mismatch("the PDGD settings");
    }
    if a.scenario.z != b.scenario.z || a.scenario.target_client != b.scenario.target_client {
        return mismatch("the poisoning setup");
    }
    Ok(())
}

/// Averages logs per trajectory across folds and repeats. All logs must come
/// from the same dataset, click model, federation shape and PDGD settings;
/// within a trajectory every run must be evaluated at the same rounds.
pub fn summarize(logs: &[RunLog]) -> Result<Summary, ExperimentError> {
    let first = logs
        .first()
        .ok_or_else(|| ExperimentError::Summary("no run logs".into()))?;
    let mut groups: BTreeMap<GroupKey, Vec<&RunLog>> = BTreeMap::new();
    for log in logs {
        check_compatible(first, log)?;
        if log.eval_points.is_empty() {
            return Err(ExperimentError::Summary(format!(
                "{} has no evaluation points",
                log.file_stem()
            )));
        }
        groups.entry(group_key(log)).or_default().push(log);
    }

    let mut curves = Vec::new();
    let mut finals = Vec::new();
    for (key, mut runs) in groups {
        runs.sort_by_key(|l| (l.fold, l.repeat));
        let head = runs[0];
        let (unlearn_steps, delta_t) = if key.delta_t > 0 {
            (Some((-key.neg_steps) as usize), Some(key.delta_t))
        } else {
            (None, None)
        };
        for w in runs.windows(2) {
            if (w[0].fold, w[0].repeat) == (w[1].fold, w[1].repeat) {
                return Err(ExperimentError::Summary(format!(
                    "{} appears twice for fold {}, repeat {}",
                    head.scenario, w[0].fold, w[0].repeat
                )));
            }
        }
        let grid: Vec<(Phase, usize)> = head.eval_points.iter().map(|p| (p.phase, p.round)).collect();
        for r in &runs {
            if !r
                .eval_points
                .iter()
                .map(|p| (p.phase, p.round))
                .eq(grid.iter().copied())
            {
                return Err(ExperimentError::Summary(format!(
                    "{} runs were evaluated at different rounds",
                    head.file_stem()
                )));
            }
        }
        for (i, &(phase, round)) in grid.iter().enumerate() {
            let xs: Vec<f64> = runs.iter().map(|r| r.eval_points[i].ndcg10).collect();
            let (mean, std) = mean_std(&xs);
            curves.push(CurveRow {
                scenario: head.scenario,
                unlearn_steps,
                delta_t,
                phase,
                round,
                runs: xs.len(),
                mean,
                std,
            });
        }
        let finals_runs: Vec<(usize, usize, f64)> = runs
            .iter()
            .map(|r| (r.fold, r.repeat, r.final_ndcg().expect("checked non-empty")))
            .collect();
        let (mean, std) = mean_std(&finals_runs.iter().map(|r| r.2).collect::<Vec<_>>());
        finals.push(FinalRow {
            scenario: head.scenario,
            unlearn_steps,
            delta_t,
            mean,
            std,
            runs: finals_runs,
        });
    }
    Ok(Summary {
        dataset: first.config.dataset.to_string(),
        click_model: first.config.click_model,
        curves,
        finals,
    })
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

impl Summary {
    /// The final row of a trained scenario (not an unlearning cell).
    pub fn scenario(&self, kind: ScenarioKind) -> Option<&FinalRow> {
        self.finals.iter().find(|f| f.scenario == kind && f.delta_t.is_none())
    }

    pub fn unlearn_cell(&self, unlearn_steps: usize, delta_t: usize) -> Option<&FinalRow> {
        self.finals
            .iter()
            .find(|f| f.unlearn_steps == Some(unlearn_steps) && f.delta_t == Some(delta_t))
    }

    pub fn finals_tsv(&self) -> String {
        let mut s = String::from("dataset\tclick_model\tscenario\tunlearn_steps\tdelta_t\truns\tmean_ndcg10\tstd\n");
        for f in &self.finals {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                self.dataset,
                self.click_model,
                f.scenario,
                opt(f.unlearn_steps),
                opt(f.delta_t),
                f.runs.len(),
                f.mean,
                f.std
            );
        }
        s
    }

    pub fn curves_tsv(&self) -> String {
        let mut s = String::from("scenario\tunlearn_steps\tdelta_t\tphase\tround\truns\tmean_ndcg10\tstd\n");
        for c in &self.curves {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                c.scenario,
                opt(c.unlearn_steps),
                opt(c.delta_t),
                c.phase,
                c.round,
                c.runs,
                c.mean,
                c.std
            );
        }
        s
    }

    fn delta_ts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.finals.iter().filter_map(|f| f.delta_t).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Final scores with one row per ranker (`9h-0m`, then unlearning by
    /// descending `n'`) and one column per `dt`. The retrained baseline does
    /// not depend on `dt` and is repeated across columns.
    pub fn table_tsv(&self) -> String {
        let dts = self.delta_ts();
        let mut s = format!("{}\t{}", self.dataset, self.click_model);
        for dt in &dts {
            let _ = write!(s, "\tdt={dt}");
        }
        s.push('\n');
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        if let Some(b) = self.scenario(ScenarioKind::NineHonest) {
            s.push_str("\t9H-0M");
            for _ in &dts {
                let _ = write!(s, "\t{}", cell(Some(b.mean)));
            }
            s.push('\n');
        }
        let mut steps: Vec<usize> = self.finals.iter().filter_map(|f| f.unlearn_steps).collect();
        steps.sort_unstable_by(|a, b| b.cmp(a));
        steps.dedup();
        for n in steps {
            let _ = write!(s, "\tU(9H-1M), n'={n}");
            for &dt in &dts {
                let _ = write!(s, "\t{}", cell(self.unlearn_cell(n, dt).map(|f| f.mean)));
            }
            s.push('\n');
        }
        s
    }

    /// Writes `summary.tsv`, `curves.tsv`, `table.tsv` and `gap.tsv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        for (name, text) in [
            ("summary.tsv", self.finals_tsv()),
            ("curves.tsv", self.curves_tsv()),
            ("table.tsv", self.table_tsv()),
            ("gap.tsv", self.gap_tsv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| ExperimentError::io(&p, e))?;
        }
        Ok(())
    }

    /// `U(9H-1M) - 9H-0M` per unlearning cell; empty without a baseline.
    pub fn gap_tsv(&self) -> String {
        let mut s = String::from("unlearn_steps\tdelta_t\tunlearned\tretrained\tgap\n");
        if let Some(b) = self.scenario(ScenarioKind::NineHonest) {
            for f in self.finals.iter().filter(|f| f.delta_t.is_some()) {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{:.6}\t{:.6}\t{:+.6}",
                    opt(f.unlearn_steps),
                    opt(f.delta_t),
                    f.mean,
                    b.mean,
                    f.mean - b.mean
                );
            }
        }
        s
    }
}
