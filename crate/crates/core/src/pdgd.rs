//! Pairwise Differentiable Gradient Descent.
//!
//! One interaction samples a result page from the Plackett-Luce distribution
//! over `exp(score)`, simulates clicks on it, infers clicked-over-unclicked
//! preferences, and takes a gradient step on the debiased pairwise
//! preference probabilities:
//!
//! ```text
//! w <- w + lr * sum_{(i,j)} rho(i,j) * sigma(s_i, s_j) * (x_i - x_j)
//! sigma(s_i, s_j) = e^{s_i} e^{s_j} / (e^{s_i} + e^{s_j})^2
//! rho(i,j)        = P(R*) / (P(R) + P(R*))
//! ```
//!
//! where `R*` is the displayed list with `i` and `j` swapped and `P` is the
//! Plackett-Luce probability of the displayed prefix, with every candidate
//! not yet placed (shown or not) in the pool at each step.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clicksim::{simulate_session, ClickError, ClickModelParams, MAX_SERP_LEN};
use crate::dataset::QueryGroup;
use crate::ranker::{DimensionMismatch, LinearRanker};

#[derive(Debug, Error, PartialEq)]
pub enum PdgdError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error(transparent)]
    Click(#[from] ClickError),
    #[error("invalid PDGD config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdgdConfig {
    pub learning_rate: f64,
    pub serp_size: usize,
}

impl Default for PdgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            serp_size: MAX_SERP_LEN,
        }
    }
}

impl PdgdConfig {
    pub fn validate(&self) -> Result<(), PdgdError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PdgdError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(1..=MAX_SERP_LEN).contains(&self.serp_size) {
            return Err(PdgdError::Config(format!(
                "serp size must be in 1..={MAX_SERP_LEN}, got {}",
                self.serp_size
            )));
        }
        Ok(())
    }
}

/// Numerically safe `ln(e^a + e^b)`.
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Draws `min(k, n)` documents without replacement, each with probability
/// proportional to `exp(score)` among those not yet drawn.
pub fn sample_from_scores<R: Rng + ?Sized>(scores: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let n = scores.len();
    let take = k.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut shift = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = scores.iter().map(|s| (s - shift).exp()).collect();
    let mut out = Vec::with_capacity(take);

    while out.len() < take {
        if pool.len() == 1 {
            out.push(pool[0]);
            break;
        }
        // Once the dominant documents are gone the remaining weights can
        // underflow; re-centre on the best remaining score.
        let pool_max = pool.iter().map(|&d| scores[d]).fold(f64::NEG_INFINITY, f64::max);
        if shift - pool_max > 600.0 {
            shift = pool_max;
            for &d in &pool {
                weights[d] = (scores[d] - shift).exp();
            }
        }
        let total: f64 = pool.iter().map(|&d| weights[d]).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (slot, &d) in pool.iter().enumerate() {
            u -= weights[d];
            if u < 0.0 {
                pick = slot;
                break;
            }
        }
        out.push(pool.remove(pick));
    }
    out
}

/// Samples a result page for `group` under `ranker`.
pub fn sample_serp<R: Rng + ?Sized>(
    ranker: &LinearRanker,
    group: &QueryGroup,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>, DimensionMismatch> {
    Ok(sample_from_scores(&ranker.score_group(group)?, k, rng))
}

/// Log Plackett-Luce probability of drawing `displayed` as the first
/// `displayed.len()` documents from all of `scores`.
pub fn log_pl_probability(scores: &[f64], displayed: &[usize]) -> f64 {
    let mut placed = vec![false; scores.len()];
    let mut log_p = 0.0;
    for &d in displayed {
        let log_denom = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| !placed[*i])
            .fold(f64::NEG_INFINITY, |acc, (_, &s)| log_add_exp(acc, s));
        log_p += scores[d] - log_denom;
        placed[d] = true;
    }
    log_p
}

/// Clicked-over-unclicked preferences as `(winner, loser)` document ids.
///
/// A clicked document beats every unclicked document displayed above it and
/// the first unclicked document displayed after it.
pub fn infer_preferences(displayed: &[usize], clicks: &[bool]) -> Vec<(usize, usize)> {
    debug_assert_eq!(displayed.len(), clicks.len());
    let mut prefs = Vec::new();
    for (pos, &clicked) in clicks.iter().enumerate() {
        if !clicked {
            continue;
        }
        let winner = displayed[pos];
        prefs.extend((0..pos).filter(|&q| !clicks[q]).map(|q| (winner, displayed[q])));
        if let Some(q) = (pos + 1..clicks.len()).find(|&q| !clicks[q]) {
            prefs.push((winner, displayed[q]));
        }
    }
    prefs
}

/// Debiasing weight `P(R*) / (P(R) + P(R*))` for the pair `(doc_i, doc_j)`,
/// both of which must appear in `displayed`.
pub fn pair_debias_weight(scores: &[f64], displayed: &[usize], doc_i: usize, doc_j: usize) -> f64 {
    let pos_i = displayed.iter().position(|&d| d == doc_i);
    let pos_j = displayed.iter().position(|&d| d == doc_j);
    let (Some(pi), Some(pj)) = (pos_i, pos_j) else {
        panic!("pair ({doc_i}, {doc_j}) is not on the displayed list");
    };
    if pi == pj {
        return 0.5;
    }
    let (a, b) = (pi.min(pj), pi.max(pj));

    // Numerators of P(R) and P(R*) are identical; only the denominators at
    // steps a+1..=b differ. Accumulate both suffix sums in log space.
    let mut shown = vec![false; scores.len()];
    displayed.iter().for_each(|&d| shown[d] = true);
    let log_unshown = scores
        .iter()
        .zip(&shown)
        .filter(|(_, &s)| !s)
        .fold(f64::NEG_INFINITY, |acc, (&s, _)| log_add_exp(acc, s));

    let s_a = scores[displayed[a]];
    let mut log_suffix = log_unshown;
    let mut log_suffix_without_b = log_unshown;
    let mut log_ratio = 0.0; // ln P(R*) - ln P(R)
    for q in (a + 1..displayed.len()).rev() {
        let s_q = scores[displayed[q]];
        log_suffix = log_add_exp(log_suffix, s_q);
        if q != b {
            log_suffix_without_b = log_add_exp(log_suffix_without_b, s_q);
        }
        if q <= b {
            log_ratio += log_suffix - log_add_exp(log_suffix_without_b, s_a);
        }
    }
    1.0 / (1.0 + (-log_ratio).exp())
}

/// `e^{s_i} e^{s_j} / (e^{s_i} + e^{s_j})^2`, the derivative of the pairwise
/// softmax preference probability with respect to `s_i - s_j`.
pub fn pair_sigma(s_i: f64, s_j: f64) -> f64 {
    let d = s_i - s_j;
    1.0 / (2.0 + d.exp() + (-d).exp())
}

/// `sum rho * sigma * (x_i - x_j)` over `prefs`, using `scores` for both the
/// debiasing weights and the pairwise derivatives.
pub fn preference_gradient(
    group: &QueryGroup,
    scores: &[f64],
    displayed: &[usize],
    prefs: &[(usize, usize)],
) -> Vec<f64> {
    let mut grad = vec![0.0; group.num_features()];
    for &(i, j) in prefs {
        let weight = pair_debias_weight(scores, displayed, i, j) * pair_sigma(scores[i], scores[j]);
        for ((g, xi), xj) in grad.iter_mut().zip(group.doc(i)).zip(group.doc(j)) {
            *g += weight * (xi - xj);
        }
    }
    grad
}

/// Everything one interaction produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub ranker: LinearRanker,
    pub displayed: Vec<usize>,
    pub clicks: Vec<bool>,
    pub preferences: Vec<(usize, usize)>,
}

pub fn pdgd_interaction<R: Rng + ?Sized>(
    ranker: &LinearRanker,
    group: &QueryGroup,
    config: &PdgdConfig,
    model: &ClickModelParams,
    rng: &mut R,
) -> Result<Interaction, PdgdError> {
    let scores = ranker.score_group(group)?;
    let displayed = sample_from_scores(&scores, config.serp_size, rng);
    let grades: Vec<_> = displayed.iter().map(|&d| group.grades()[d]).collect();
    let clicks = simulate_session(model, &grades, rng)?;
    let preferences = infer_preferences(&displayed, &clicks);

    let mut updated = ranker.clone();
    if !preferences.is_empty() {
        let grad = preference_gradient(group, &scores, &displayed, &preferences);
        for (w, g) in updated.weights_mut().iter_mut().zip(&grad) {
            *w += config.learning_rate * g;
        }
    }
    Ok(Interaction {
        ranker: updated,
        displayed,
        clicks,
        preferences,
    })
}

/// One full interaction on `group`; returns the updated ranker.
pub fn pdgd_update<R: Rng + ?Sized>(
    ranker: &LinearRanker,
    group: &QueryGroup,
    config: &PdgdConfig,
    model: &ClickModelParams,
    rng: &mut R,
) -> Result<LinearRanker, PdgdError> {
    pdgd_interaction(ranker, group, config, model, rng).map(|i| i.ranker)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clicksim::{builtin_model, ClickModelName, GradeScale};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    /// Brute-force rho from two full Plackett-Luce list probabilities.
    fn rho_oracle(scores: &[f64], displayed: &[usize], i: usize, j: usize) -> f64 {
        let mut swapped = displayed.to_vec();
        let pi = swapped.iter().position(|&d| d == i).unwrap();
        let pj = swapped.iter().position(|&d| d == j).unwrap();
        swapped.swap(pi, pj);
        let p = log_pl_probability(scores, displayed).exp();
        let p_star = log_pl_probability(scores, &swapped).exp();
        p_star / (p + p_star)
    }

    #[test]
    fn single_document_serp() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_from_scores(&[3.5], 10, &mut rng), [0]);
        }
    }

    #[test]
    fn uniform_scores_give_uniform_orderings() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..n {
            *counts.entry(sample_from_scores(&[0.2; 3], 10, &mut rng)).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (order, c) in counts {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 6.0).abs() <= 0.01, "{order:?}: {f}");
        }
    }

    #[test]
    fn two_document_softmax_frequency() {
        // P([0, 1]) = e^{ln 2} / (e^{ln 2} + e^0) = 2/3.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let first = (0..n)
            .filter(|_| sample_from_scores(&[2f64.ln(), 0.0], 10, &mut rng) == [0, 1])
            .count();
        let f = first as f64 / n as f64;
        assert!((f - 2.0 / 3.0).abs() <= 0.01, "{f}");
    }

    #[test]
    fn sampling_survives_extreme_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores = [5000.0, -5000.0, -5001.0, 0.0];
        for _ in 0..200 {
            let s = sample_from_scores(&scores, 10, &mut rng);
            assert_eq!(s[..2], [0, 3]);
            let mut sorted = s.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, [0, 1, 2, 3]);
        }
    }

    #[test]
    fn preferences_by_rule() {
        let (a, b, c, d) = (10, 11, 12, 13);
        assert_eq!(infer_preferences(&[a, b, c], &[false, true, false]), [(b, a), (b, c)]);
        assert!(infer_preferences(&[a, b, c], &[false; 3]).is_empty());
        let mut p = infer_preferences(&[a, b, c, d], &[true, false, true, false]);
        p.sort_unstable();
        assert_eq!(p, [(a, b), (c, b), (c, d)]);
        // Next unclicked skips over clicked neighbours.
        assert_eq!(infer_preferences(&[a, b, c], &[true, true, false]), [(a, c), (b, c)]);
    }

    #[test]
    fn rho_symmetric_cases() {
        assert_eq!(pair_debias_weight(&[0.7; 5], &[4, 2, 0], 2, 0), 0.5);
        assert_eq!(pair_debias_weight(&[0.0; 3], &[0, 1, 2], 0, 2), 0.5);
        // Equal scores for the swapped pair: P(R) = P(R*).
        assert_eq!(pair_debias_weight(&[3.0, -1.0, 3.0, 0.5], &[0, 1, 2], 0, 2), 0.5);
    }

    #[test]
    fn rho_three_document_enumeration() {
        // scores (1, 0, 0), R = [0, 1, 2], pair (1, 2): swapping two
        // equal-score documents leaves the list probability unchanged.
        let scores = [1.0, 0.0, 0.0];
        let rho = pair_debias_weight(&scores, &[0, 1, 2], 1, 2);
        assert_eq!(rho, 0.5);
        // Pair (0, 1): P(R) = e/(e+2) * 1/2, P(R*) = 1/(e+2) * e/(e+1).
        let e = std::f64::consts::E;
        let p = e / (e + 2.0) * 0.5;
        let p_star = 1.0 / (e + 2.0) * e / (e + 1.0);
        let expected = p_star / (p + p_star);
        assert!((pair_debias_weight(&scores, &[0, 1, 2], 0, 1) - expected).abs() < 1e-15);
        assert!((pair_debias_weight(&scores, &[0, 1, 2], 1, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn sigma_is_bounded_and_safe() {
        assert_eq!(pair_sigma(0.0, 0.0), 0.25);
        assert_eq!(pair_sigma(1e6, -1e6), 0.0);
        assert!(pair_sigma(3.0, 1.0) > 0.0 && pair_sigma(3.0, 1.0) < 0.25);
        assert_eq!(pair_sigma(2.0, -1.0), pair_sigma(-1.0, 2.0));
    }

    #[test]
    fn zero_clicks_leave_weights_unchanged() {
        let g = QueryGroup::from_rows("q", &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]], vec![0, 0, 0]).unwrap();
        let model = builtin_model(ClickModelName::Perfect, GradeScale::ThreeLevel);
        let r = LinearRanker::from_weights(vec![0.3, -0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let out = pdgd_interaction(&r, &g, &PdgdConfig::default(), &model, &mut rng).unwrap();
            assert!(out.preferences.is_empty());
            assert_eq!(out.ranker, r);
        }
    }

    #[test]
    fn identical_features_do_not_move_weights() {
        let g = QueryGroup::from_rows("q", &[vec![0.4, 0.9], vec![0.4, 0.9]], vec![2, 0]).unwrap();
        let model = builtin_model(ClickModelName::Perfect, GradeScale::ThreeLevel);
        let r = LinearRanker::from_weights(vec![1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let out = pdgd_interaction(&r, &g, &PdgdConfig::default(), &model, &mut rng).unwrap();
        assert_eq!(out.preferences.len(), 1);
        assert_eq!(out.ranker, r);
    }

    #[test]
    fn single_pair_closed_form() {
        // Perfect 3-level user: grade 2 always clicked, grade 0 never, no
        // stops. Two documents give exactly one preference (0 over 1).
        let x0 = [0.5, 1.0, -0.25];
        let x1 = [0.25, -0.5, 0.75];
        let g = QueryGroup::from_rows("q", &[x0.to_vec(), x1.to_vec()], vec![2, 0]).unwrap();
        let model = builtin_model(ClickModelName::Perfect, GradeScale::ThreeLevel);
        let w = [0.2, -0.4, 0.6];
        let r = LinearRanker::from_weights(w.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = pdgd_interaction(&r, &g, &PdgdConfig::default(), &model, &mut rng).unwrap();
        assert_eq!(out.preferences, [(0, 1)]);

        let s0: f64 = w.iter().zip(&x0).map(|(a, b)| a * b).sum();
        let s1: f64 = w.iter().zip(&x1).map(|(a, b)| a * b).sum();
        // Full list of two from two: P(R) = softmax of the first pick.
        let (first, second) = (out.displayed[0], out.displayed[1]);
        let s = [s0, s1];
        let p_r = s[first].exp() / (s0.exp() + s1.exp());
        let p_star = s[second].exp() / (s0.exp() + s1.exp());
        let rho = p_star / (p_r + p_star);
        let sigma = s0.exp() * s1.exp() / (s0.exp() + s1.exp()).powi(2);
        for f in 0..3 {
            let expected = w[f] + 0.1 * rho * sigma * (x0[f] - x1[f]);
            assert!((out.ranker.weights()[f] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn config_validation() {
        assert!(PdgdConfig::default().validate().is_ok());
        assert!(PdgdConfig {
            learning_rate: 0.0,
            serp_size: 10
        }
        .validate()
        .is_err());
        assert!(PdgdConfig {
            learning_rate: 0.1,
            serp_size: 0
        }
        .validate()
        .is_err());
        assert!(PdgdConfig {
            learning_rate: 0.1,
            serp_size: 11
        }
        .validate()
        .is_err());
    }

    fn serp_case() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, usize, usize)> {
        (2usize..9).prop_flat_map(|n| {
            (
                prop::collection::vec(-4.0f64..4.0, n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                1..=n,
            )
                .prop_flat_map(|(scores, perm, len)| {
                    let len = len.max(2);
                    let shown = perm[..len].to_vec();
                    (Just(scores), Just(shown), 0..len, 0..len)
                })
                .prop_filter("distinct pair", |(_, _, a, b)| a != b)
                .prop_map(|(s, shown, a, b)| {
                    let (i, j) = (shown[a], shown[b]);
                    (s, shown, i, j)
                })
        })
    }

    proptest! {
        #[test]
        fn rho_matches_brute_force((scores, shown, i, j) in serp_case()) {
            let fast = pair_debias_weight(&scores, &shown, i, j);
            let slow = rho_oracle(&scores, &shown, i, j);
            prop_assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
            prop_assert!((0.0..=1.0).contains(&fast));
        }

        #[test]
        fn rho_complements_on_swapped_list((scores, shown, i, j) in serp_case()) {
            let mut swapped = shown.clone();
            let pi = swapped.iter().position(|&d| d == i).unwrap();
            let pj = swapped.iter().position(|&d| d == j).unwrap();
            swapped.swap(pi, pj);
            let total = pair_debias_weight(&scores, &shown, i, j) + pair_debias_weight(&scores, &swapped, j, i);
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn shift_invariance((scores, shown, i, j) in serp_case(), c in -500.0f64..500.0) {
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let a = pair_debias_weight(&scores, &shown, i, j);
            let b = pair_debias_weight(&shifted, &shown, i, j);
            prop_assert!((a - b).abs() < 1e-9);
            let la = log_pl_probability(&scores, &shown);
            let lb = log_pl_probability(&shifted, &shown);
            prop_assert!((la - lb).abs() < 1e-9);
        }
    }
}
