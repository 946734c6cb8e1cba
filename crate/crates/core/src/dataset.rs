//! LETOR/SVMLight learning-to-rank files.
//!
//! Each data line reads `<grade> qid:<id> <index>:<value> ... [# comment]`.
//! Feature indices are 1-based on disk and 0-based in memory; absent indices
//! are zero. Documents are grouped by query id in order of first appearance.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Grade = u8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason} at token `{token}`")]
    Parse {
        line: usize,
        token: String,
        reason: &'static str,
    },
    #[error("line {line}: feature index {index} exceeds the configured {num_features} features")]
    FeatureOutOfRange {
        line: usize,
        index: usize,
        num_features: usize,
    },
    #[error("line {line}: grade {grade} exceeds the maximum grade {max_grade}")]
    GradeOutOfRange {
        line: usize,
        grade: Grade,
        max_grade: Grade,
    },
    #[error("query `{query_id}`: {reason}")]
    InvalidGroup { query_id: String, reason: String },
    #[error("duplicate query id `{0}`")]
    DuplicateQuery(String),
    #[error("{0}: no data lines")]
    Empty(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing {missing}; a {kind} root must contain {expected}")]
    MissingFold {
        missing: PathBuf,
        kind: DatasetKind,
        expected: String,
    },
    #[error("unknown dataset kind `{0}` (expected mq2007, mslr10k, yahoo or istella)")]
    UnknownKind(String),
}

/// One parsed data line.
#[derive(Clone, Debug, PartialEq)]
pub struct LetorLine {
    pub relevance: Grade,
    pub query_id: String,
    /// 0-based feature index to value.
    pub features: BTreeMap<usize, f64>,
}

/// Parses a single LETOR line. `line_no` is only used in error messages.
pub fn parse_letor_line(line: &str, line_no: usize) -> Result<LetorLine, DatasetError> {
    let err = |token: &str, reason| DatasetError::Parse {
        line: line_no,
        token: token.to_string(),
        reason,
    };
    let data = match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    };
    let mut tokens = data.split_whitespace();

    let grade_tok = tokens.next().ok_or_else(|| err(line.trim(), "empty line"))?;
    let relevance: Grade = grade_tok
        .parse()
        .map_err(|_| err(grade_tok, "grade is not a non-negative integer"))?;

    let qid_tok = tokens.next().ok_or_else(|| err(grade_tok, "missing qid"))?;
    let query_id = match qid_tok.strip_prefix("qid:") {
        Some(id) if !id.is_empty() => id.to_string(),
        _ => return Err(err(qid_tok, "expected `qid:<id>`")),
    };

    let mut features = BTreeMap::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| err(tok, "expected `<index>:<value>`"))?;
        let idx: usize = idx.parse().map_err(|_| err(tok, "feature index is not an integer"))?;
        if idx == 0 {
            return Err(err(tok, "feature indices are 1-based"));
        }
        let val: f64 = val.parse().map_err(|_| err(tok, "feature value is not a number"))?;
        if !val.is_finite() {
            return Err(err(tok, "feature value is not finite"));
        }
        if features.insert(idx - 1, val).is_some() {
            return Err(err(tok, "duplicate feature index"));
        }
    }
    Ok(LetorLine {
        relevance,
        query_id,
        features,
    })
}

/// All documents of one query, as a dense row-major feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryGroup {
    query_id: String,
    num_features: usize,
    features: Vec<f64>,
    relevance: Vec<Grade>,
}

impl QueryGroup {
    pub fn new(
        query_id: impl Into<String>,
        num_features: usize,
        features: Vec<f64>,
        relevance: Vec<Grade>,
    ) -> Result<Self, DatasetError> {
        let query_id = query_id.into();
        let invalid = |reason: String| DatasetError::InvalidGroup {
            query_id: query_id.clone(),
            reason,
        };
        if num_features == 0 {
            return Err(invalid("zero features".into()));
        }
        if relevance.is_empty() {
            return Err(invalid("no documents".into()));
        }
        if features.len() != relevance.len() * num_features {
            return Err(invalid(format!(
                "{} feature values for {} documents of {} features",
                features.len(),
                relevance.len(),
                num_features
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite feature value".into()));
        }
        Ok(Self {
            query_id,
            num_features,
            features,
            relevance,
        })
    }

    /// Builds a group from per-document rows.
    pub fn from_rows(
        query_id: impl Into<String>,
        rows: &[Vec<f64>],
        relevance: Vec<Grade>,
    ) -> Result<Self, DatasetError> {
        let query_id = query_id.into();
        let num_features = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != num_features) {
            return Err(DatasetError::InvalidGroup {
                query_id,
                reason: format!("ragged rows ({} vs {num_features})", bad.len()),
            });
        }
        Self::new(query_id, num_features, rows.concat(), relevance)
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn num_docs(&self) -> usize {
        self.relevance.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    /// Feature row of document `doc`.
    pub fn doc(&self, doc: usize) -> &[f64] {
        let start = doc * self.num_features;
        &self.features[start..start + self.num_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.num_features)
    }

    pub fn grades(&self) -> &[Grade] {
        &self.relevance
    }

    pub fn max_grade(&self) -> Grade {
        self.relevance.iter().copied().max().unwrap_or(0)
    }

    /// Rescales every feature column to [0, 1] within this query. Constant
    /// columns become 0.
    pub fn normalize_min_max(&mut self) {
        let nf = self.num_features;
        for f in 0..nf {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for row in self.features.chunks_exact(nf) {
                lo = lo.min(row[f]);
                hi = hi.max(row[f]);
            }
            let range = hi - lo;
            for row in self.features.chunks_exact_mut(nf) {
                row[f] = if range > 0.0 { (row[f] - lo) / range } else { 0.0 };
            }
        }
    }

    /// Serializes the group back to LETOR lines. Zero-valued features are
    /// written explicitly so the dimensionality survives the round trip.
    pub fn to_letor_lines(&self) -> Vec<String> {
        self.rows()
            .zip(&self.relevance)
            .map(|(row, grade)| {
                let mut line = format!("{grade} qid:{}", self.query_id);
                for (i, v) in row.iter().enumerate() {
                    // `{}` on f64 prints the shortest representation that parses back exactly.
                    line.push_str(&format!(" {}:{}", i + 1, v));
                }
                line
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Test,
}

/// An immutable split: query groups in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    queries: Vec<QueryGroup>,
    num_features: usize,
    max_grade: Grade,
    split_role: SplitRole,
    normalized: bool,
}

impl FeatureDataset {
    pub fn new(
        queries: Vec<QueryGroup>,
        num_features: usize,
        max_grade: Grade,
        split_role: SplitRole,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashMap::with_capacity(queries.len());
        for q in &queries {
            if q.num_features() != num_features {
                return Err(DatasetError::InvalidGroup {
                    query_id: q.query_id.clone(),
                    reason: format!("{} features, dataset has {num_features}", q.num_features()),
                });
            }
            if q.max_grade() > max_grade {
                return Err(DatasetError::InvalidGroup {
                    query_id: q.query_id.clone(),
                    reason: format!("grade {} above maximum {max_grade}", q.max_grade()),
                });
            }
            if seen.insert(q.query_id.as_str(), ()).is_some() {
                return Err(DatasetError::DuplicateQuery(q.query_id.clone()));
            }
        }
        Ok(Self {
            queries,
            num_features,
            max_grade,
            split_role,
            normalized: false,
        })
    }

    pub fn queries(&self) -> &[QueryGroup] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn max_grade(&self) -> Grade {
        self.max_grade
    }

    pub fn split_role(&self) -> SplitRole {
        self.split_role
    }

    pub fn num_docs(&self) -> usize {
        self.queries.iter().map(QueryGroup::num_docs).sum()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Returns a copy with per-query min-max normalization applied.
    pub fn normalized(mut self) -> Self {
        if !self.normalized {
            self.queries.iter_mut().for_each(QueryGroup::normalize_min_max);
            self.normalized = true;
        }
        self
    }
}

/// Reads LETOR lines from any buffered reader. Blank and comment-only lines
/// are skipped. `source` names the input in errors.
pub fn read_dataset<R: BufRead>(
    reader: R,
    source: &str,
    num_features: usize,
    max_grade: Grade,
    split_role: SplitRole,
) -> Result<FeatureDataset, DatasetError> {
    struct Pending {
        id: String,
        features: Vec<f64>,
        relevance: Vec<Grade>,
    }
    let mut groups: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source_err| DatasetError::Io {
            path: source.to_string(),
            source: source_err,
        })?;
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parsed = parse_letor_line(&line, line_no)?;
        if parsed.relevance > max_grade {
            return Err(DatasetError::GradeOutOfRange {
                line: line_no,
                grade: parsed.relevance,
                max_grade,
            });
        }
        let slot = *index.entry(parsed.query_id.clone()).or_insert_with(|| {
            groups.push(Pending {
                id: parsed.query_id.clone(),
                features: Vec::new(),
                relevance: Vec::new(),
            });
            groups.len() - 1
        });
        let group = &mut groups[slot];
        let start = group.features.len();
        group.features.resize(start + num_features, 0.0);
        for (&idx, &val) in &parsed.features {
            if idx >= num_features {
                return Err(DatasetError::FeatureOutOfRange {
                    line: line_no,
                    index: idx + 1,
                    num_features,
                });
            }
            group.features[start + idx] = val;
        }
        group.relevance.push(parsed.relevance);
    }

    if groups.is_empty() {
        return Err(DatasetError::Empty(source.to_string()));
    }
    let queries = groups
        .into_iter()
        .map(|g| QueryGroup::new(g.id, num_features, g.features, g.relevance))
        .collect::<Result<Vec<_>, _>>()?;
    FeatureDataset::new(queries, num_features, max_grade, split_role)
}

pub fn load_dataset(
    path: &Path,
    num_features: usize,
    max_grade: Grade,
    split_role: SplitRole,
) -> Result<FeatureDataset, DatasetError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: name.clone(),
        source,
    })?;
    read_dataset(BufReader::new(file), &name, num_features, max_grade, split_role)
}

/// The four public benchmark collections and their published shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mq2007,
    Mslr10k,
    Yahoo,
    Istella,
}

impl DatasetKind {
    pub fn num_features(self) -> usize {
        match self {
            Self::Mq2007 => 46,
            Self::Mslr10k => 136,
            Self::Yahoo => 700,
            Self::Istella => 220,
        }
    }

    pub fn max_grade(self) -> Grade {
        match self {
            Self::Mq2007 => 2,
            _ => 4,
        }
    }

    pub fn fold_count(self) -> usize {
        match self {
            Self::Mq2007 | Self::Mslr10k => 5,
            Self::Yahoo | Self::Istella => 1,
        }
    }

    /// MQ2007 and Yahoo ship normalized features; MSLR and Istella are raw.
    pub fn default_normalize(self) -> bool {
        matches!(self, Self::Mslr10k | Self::Istella)
    }

    fn is_folded(self) -> bool {
        self.fold_count() > 1
    }

    fn expected_layout(self) -> String {
        if self.is_folded() {
            format!("Fold1..Fold{}/{{train,vali,test}}.txt", self.fold_count())
        } else {
            "{train,test}.txt".to_string()
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mq2007 => "mq2007",
            Self::Mslr10k => "mslr10k",
            Self::Yahoo => "yahoo",
            Self::Istella => "istella",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mq2007" => Ok(Self::Mq2007),
            "mslr10k" | "mslr-web10k" => Ok(Self::Mslr10k),
            "yahoo" => Ok(Self::Yahoo),
            "istella" | "istella-s" => Ok(Self::Istella),
            _ => Err(DatasetError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPaths {
    /// 1-based fold number.
    pub index: usize,
    pub train: PathBuf,
    pub test: PathBuf,
}

/// Resolves and checks the fold files under `root`. Validation files are
/// not used: training reads `train`, evaluation reads `test`.
pub fn fold_layout(root: &Path, kind: DatasetKind) -> Result<Vec<FoldPaths>, DatasetError> {
    let dirs: Vec<(usize, PathBuf)> = if kind.is_folded() {
        (1..=kind.fold_count())
            .map(|i| (i, root.join(format!("Fold{i}"))))
            .collect()
    } else {
        vec![(1, root.to_path_buf())]
    };
    dirs.into_iter()
        .map(|(index, dir)| {
            let paths = FoldPaths {
                index,
                train: dir.join("train.txt"),
                test: dir.join("test.txt"),
            };
            for p in [&paths.train, &paths.test] {
                if !p.is_file() {
                    return Err(DatasetError::MissingFold {
                        missing: p.clone(),
                        kind,
                        expected: kind.expected_layout(),
                    });
                }
            }
            Ok(paths)
        })
        .collect()
}

/// A loaded (train, test) pair.
#[derive(Clone, Debug)]
pub struct Fold {
    pub index: usize,
    pub train: FeatureDataset,
    pub test: FeatureDataset,
}

/// Loads one fold from resolved paths.
pub fn load_fold(paths: &FoldPaths, kind: DatasetKind, normalize: bool) -> Result<Fold, DatasetError> {
    let load = |p: &Path, role| {
        let ds = load_dataset(p, kind.num_features(), kind.max_grade(), role)?;
        Ok::<_, DatasetError>(if normalize { ds.normalized() } else { ds })
    };
    Ok(Fold {
        index: paths.index,
        train: load(&paths.train, SplitRole::Train)?,
        test: load(&paths.test, SplitRole::Test)?,
    })
}

/// Iterates folds in index order, loading each lazily. The layout is checked
/// up front, so a missing fold fails before anything is loaded.
pub fn iterate_folds(
    root: &Path,
    kind: DatasetKind,
    normalize: bool,
) -> Result<impl Iterator<Item = Result<Fold, DatasetError>>, DatasetError> {
    let layout = fold_layout(root, kind)?;
    Ok(layout.into_iter().map(move |p| load_fold(&p, kind, normalize)))
}
