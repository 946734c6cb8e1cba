//! Cascade click simulation.
//!
//! A simulated user scans the result page top-down, clicks each document
//! with a probability that depends only on its relevance grade, and after a
//! click ends the session with a grade-dependent stop probability.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Grade;

/// Longest result page a simulated user is shown.
pub const MAX_SERP_LEN: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum ClickError {
    #[error("unknown click model `{0}` (expected perfect, navigational or informational)")]
    UnknownModel(String),
    #[error("grade {grade} is outside the {scale} scale")]
    GradeOutOfScale { grade: Grade, scale: GradeScale },
    #[error("result page of {0} documents exceeds {MAX_SERP_LEN}")]
    SerpTooLong(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClickModelName {
    Perfect,
    Navigational,
    Informational,
}

impl ClickModelName {
    pub const ALL: [Self; 3] = [Self::Perfect, Self::Navigational, Self::Informational];
}

impl fmt::Display for ClickModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Perfect => "perfect",
            Self::Navigational => "navigational",
            Self::Informational => "informational",
        })
    }
}

impl FromStr for ClickModelName {
    type Err = ClickError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "perfect" | "per" => Ok(Self::Perfect),
            "navigational" | "nav" => Ok(Self::Navigational),
            "informational" | "inf" => Ok(Self::Informational),
            _ => Err(ClickError::UnknownModel(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeScale {
    /// Grades 0..=2 (MQ2007).
    ThreeLevel,
    /// Grades 0..=4.
    FiveLevel,
}

impl GradeScale {
    pub fn max_grade(self) -> Grade {
        match self {
            Self::ThreeLevel => 2,
            Self::FiveLevel => 4,
        }
    }

    pub fn for_max_grade(max_grade: Grade) -> Option<Self> {
        match max_grade {
            2 => Some(Self::ThreeLevel),
            4 => Some(Self::FiveLevel),
            _ => None,
        }
    }
}

impl fmt::Display for GradeScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ThreeLevel => "3-level",
            Self::FiveLevel => "5-level",
        })
    }
}

/// Per-grade click and stop probabilities, indexed by grade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickModelParams {
    pub name: ClickModelName,
    pub scale: GradeScale,
    /// `P(click | grade)`.
    pub click_prob: Vec<f64>,
    /// `P(stop | click, grade)`.
    pub stop_prob: Vec<f64>,
}

impl ClickModelParams {
    pub fn click_prob(&self, grade: Grade) -> Result<f64, ClickError> {
        self.click_prob
            .get(grade as usize)
            .copied()
            .ok_or(ClickError::GradeOutOfScale {
                grade,
                scale: self.scale,
            })
    }

    pub fn stop_prob(&self, grade: Grade) -> Result<f64, ClickError> {
        self.stop_prob
            .get(grade as usize)
            .copied()
            .ok_or(ClickError::GradeOutOfScale {
                grade,
                scale: self.scale,
            })
    }
}

/// The three standard instantiations. The 3-level variants are the ones used
/// for MQ2007.
pub fn builtin_model(name: ClickModelName, scale: GradeScale) -> ClickModelParams {
    use ClickModelName::*;
    use GradeScale::*;
    let (click, stop): (&[f64], &[f64]) = match (name, scale) {
        (Perfect, FiveLevel) => (&[0.0, 0.2, 0.4, 0.8, 1.0], &[0.0; 5]),
        (Perfect, ThreeLevel) => (&[0.0, 0.5, 1.0], &[0.0; 3]),
        (Navigational, FiveLevel) => (&[0.05, 0.3, 0.5, 0.7, 0.95], &[0.2, 0.3, 0.5, 0.7, 0.9]),
        (Navigational, ThreeLevel) => (&[0.05, 0.5, 0.95], &[0.2, 0.5, 0.9]),
        (Informational, FiveLevel) => (&[0.4, 0.6, 0.7, 0.8, 0.9], &[0.1, 0.2, 0.3, 0.4, 0.5]),
        (Informational, ThreeLevel) => (&[0.4, 0.7, 0.9], &[0.1, 0.3, 0.5]),
    };
    ClickModelParams {
        name,
        scale,
        click_prob: click.to_vec(),
        stop_prob: stop.to_vec(),
    }
}

/// Clicks of one session plus the position where the user stopped, if a
/// stop event ended it early.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionOutcome {
    pub clicks: Vec<bool>,
    pub stopped_at: Option<usize>,
}

/// Simulates one session over the grades of the displayed documents, in
/// display order. Returns one click flag per position.
pub fn simulate_session<R: Rng + ?Sized>(
    model: &ClickModelParams,
    serp_grades: &[Grade],
    rng: &mut R,
) -> Result<Vec<bool>, ClickError> {
    simulate_session_traced(model, serp_grades, rng).map(|o| o.clicks)
}

/// [`simulate_session`] that also reports the stop position.
pub fn simulate_session_traced<R: Rng + ?Sized>(
    model: &ClickModelParams,
    serp_grades: &[Grade],
    rng: &mut R,
) -> Result<SessionOutcome, ClickError> {
    if serp_grades.len() > MAX_SERP_LEN {
        return Err(ClickError::SerpTooLong(serp_grades.len()));
    }
    // Validate up front so an error never depends on where the user stopped.
    for &g in serp_grades {
        model.click_prob(g)?;
    }
    let mut clicks = vec![false; serp_grades.len()];
    for (pos, &grade) in serp_grades.iter().enumerate() {
        let g = grade as usize;
        if rng.gen::<f64>() < model.click_prob[g] {
            clicks[pos] = true;
            if rng.gen::<f64>() < model.stop_prob[g] {
                return Ok(SessionOutcome {
                    clicks,
                    stopped_at: Some(pos),
                });
            }
        }
    }
    Ok(SessionOutcome {
        clicks,
        stopped_at: None,
    })
}
