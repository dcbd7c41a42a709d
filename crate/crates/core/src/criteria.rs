//! The competing answers to "is the marble in the box" and "are all n
//! marbles in the box".
//!
//! * Scalar-product proximity: overlap of the product state with the
//!   all-IN eigenstate, `prod |alpha_i|^2`.
//! * PosR and its many-particle extension, the fuzzy link: a claim holds when
//!   its region carries at least `1 - p` of the squared amplitude. The fuzzy
//!   link positively asserts the negation when the region carries at most
//!   `p`. Between the two it is silent.
//! * Mass-density accessibility: the in-box and out-of-box masses over
//!   collapse outcomes, accessible when `variance / mean^2 < epsilon`.
//!
//! The counting anomaly is every marble passing PosR while the fuzzy link
//! asserts that not all of them are in the box. Accessibility of the in-box
//! mass only improves with `n`, so that criterion never shows it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::logprob::LogValue;
use crate::state_algebra::{term_log_coefficient, MarbleState, ProductState, Region, TermPattern};

/// Default accessibility cutoff for `R^2`.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Criterion {
    ScalarProduct,
    PosrFuzzyLink,
    MassAccessibility,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Claim {
    /// One marble lies in `region`.
    Marble { region: Region },
    /// Exactly the pattern's assignment of marbles to regions.
    Pattern { n: u64, in_count: u64 },
    /// All `n` marbles are in the box.
    AllIn { n: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionVerdict {
    pub criterion: Criterion,
    pub claim: Claim,
    /// `score >= threshold`
    pub holds: bool,
    /// The criterion asserts the negation: `score <= ln p`.
    pub refuted: bool,
    pub score: LogValue,
    pub threshold: LogValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "n", rename_all = "snake_case")]
pub enum AnomalyThreshold {
    /// Smallest `n` with `|alpha|^(2n) <= p`.
    At(u64),
    /// `|alpha|^2 = 1`: no number of marbles reaches the threshold.
    Never,
}

impl AnomalyThreshold {
    pub fn value(self) -> Option<u64> {
        match self {
            AnomalyThreshold::At(n) => Some(n),
            AnomalyThreshold::Never => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccessibilityReport {
    pub region: Region,
    /// Expected mass in the region, in marble masses.
    pub mean_mass: LogValue,
    pub variance: LogValue,
    /// `variance / mean_mass^2`; absent when the expected mass is zero.
    pub ratio_sq: Option<LogValue>,
    pub epsilon: f64,
    pub accessible: bool,
    /// The region holds no expected mass, so the ratio is undefined.
    pub vacuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerMarbleVerdict {
    /// Lowest index carrying this marble state.
    pub first_index: u64,
    /// Number of marbles sharing it.
    pub count: u64,
    pub verdict: CriterionVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnumerationReport {
    pub n: u64,
    pub p: f64,
    pub epsilon: f64,
    pub per_marble: Vec<PerMarbleVerdict>,
    pub all_in_fuzzy: CriterionVerdict,
    pub anomaly_threshold: AnomalyThreshold,
    pub scalar_product_log: LogValue,
    pub accessibility_in: AccessibilityReport,
    pub accessibility_out: AccessibilityReport,
    pub expected_in_mass: LogValue,
    /// Every marble passes PosR for IN, yet the fuzzy link refutes "all IN".
    pub anomaly_exhibited: bool,
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 0.5 {
        Ok(())
    } else {
        Err(Error::domain("p", format!("{p} not in (0, 0.5)")))
    }
}

fn verdict(criterion: Criterion, claim: Claim, score: LogValue, p: f64) -> CriterionVerdict {
    let threshold = LogValue::from_ln((-p).ln_1p());
    CriterionVerdict {
        criterion,
        claim,
        holds: score.cmp_value(threshold).is_ge(),
        refuted: score.cmp_value(LogValue::from_real(p)).is_le(),
        score,
        threshold,
    }
}

/// `prod_i |<in|psi_i>|^2`, the overlap with the all-IN eigenstate.
pub fn scalar_product_proximity(state: &ProductState) -> LogValue {
    term_log_coefficient(state, &TermPattern::all_in(state.n()))
        .expect("all-in pattern matches the state size")
}

/// PosR for one marble: `P(region) >= 1 - p`.
pub fn posr_verdict(marble: &MarbleState, region: Region, p: f64) -> Result<CriterionVerdict> {
    check_p(p)?;
    Ok(verdict(
        Criterion::PosrFuzzyLink,
        Claim::Marble { region },
        marble.log_prob(region),
        p,
    ))
}

/// Fuzzy link for a full region assignment: the product term's squared
/// coefficient against `1 - p`.
pub fn fuzzy_link_verdict(
    state: &ProductState,
    pattern: &TermPattern,
    p: f64,
) -> Result<CriterionVerdict> {
    check_p(p)?;
    let score = term_log_coefficient(state, pattern)?;
    let claim = if pattern.in_count() == state.n() {
        Claim::AllIn { n: state.n() }
    } else {
        Claim::Pattern {
            n: state.n(),
            in_count: pattern.in_count(),
        }
    };
    Ok(verdict(Criterion::PosrFuzzyLink, claim, score, p))
}

/// Smallest `n` with `n ln|alpha|^2 <= ln p`, evaluated with the same
/// arithmetic as [`fuzzy_link_verdict`] so the two agree at the boundary.
pub fn anomaly_threshold(log_alpha_sq: LogValue, p: f64) -> Result<AnomalyThreshold> {
    check_p(p)?;
    let la = log_alpha_sq.log_mag();
    if log_alpha_sq.sign() != crate::Sign::Positive || la > 0.0 {
        return Err(Error::domain("alpha_sq", "must lie in (0, 1]"));
    }
    if la == 0.0 {
        return Ok(AnomalyThreshold::Never);
    }
    let ln_p = p.ln();
    let reached = |n: u64| log_alpha_sq.powi(n).log_mag() <= ln_p;
    let mut n = (ln_p / la).ceil().max(1.0) as u64;
    while n > 1 && reached(n - 1) {
        n -= 1;
    }
    while !reached(n) {
        n += 1;
    }
    Ok(AnomalyThreshold::At(n))
}

/// Two-region coarse-grained mass model: marble `i` puts unit mass in the
/// box with probability `P_in(i)`, independently. Mean and variance of the
/// mass in `region` over collapse outcomes, and `R^2 = variance / mean^2`.
pub fn mass_accessibility(
    state: &ProductState,
    region: Region,
    epsilon: f64,
) -> Result<AccessibilityReport> {
    if !(epsilon > 0.0) {
        return Err(Error::domain("epsilon", format!("{epsilon} is not > 0")));
    }
    let mut mean_mass = LogValue::ZERO;
    let mut variance = LogValue::ZERO;
    for (marble, count) in state.groups() {
        let count = LogValue::from_real(count as f64);
        mean_mass = mean_mass + count * marble.log_prob(region);
        variance = variance + count * marble.log_prob_in() * marble.log_prob_out();
    }
    let ratio_sq = variance.checked_div(mean_mass.powi(2));
    let accessible = ratio_sq.is_some_and(|r| r.cmp_value(LogValue::from_real(epsilon)).is_lt());
    Ok(AccessibilityReport {
        region,
        mean_mass,
        variance,
        ratio_sq,
        epsilon,
        accessible,
        vacuous: ratio_sq.is_none(),
    })
}

/// Every criterion side by side for one product state.
pub fn enumeration_report(state: &ProductState, p: f64, epsilon: f64) -> Result<EnumerationReport> {
    check_p(p)?;
    let mut per_marble = Vec::new();
    let exceptions: Vec<u64> = state.exception_indices().collect();
    let groups = state.groups();
    let base_count = state.n() - exceptions.len() as u64;
    let first_base = (0..state.n()).find(|i| exceptions.binary_search(i).is_err());
    let mut exception_iter = exceptions.iter();
    for (marble, count) in groups {
        let first_index = if base_count > 0 && count == base_count && per_marble.is_empty() {
            first_base.expect("base marbles exist")
        } else {
            *exception_iter.next().expect("one group per exception")
        };
        per_marble.push(PerMarbleVerdict {
            first_index,
            count,
            verdict: posr_verdict(&marble, Region::In, p)?,
        });
    }
    let all_in_fuzzy = fuzzy_link_verdict(state, &TermPattern::all_in(state.n()), p)?;
    let accessibility_in = mass_accessibility(state, Region::In, epsilon)?;
    let accessibility_out = mass_accessibility(state, Region::Out, epsilon)?;
    let anomaly_exhibited = per_marble.iter().all(|m| m.verdict.holds) && all_in_fuzzy.refuted;
    Ok(EnumerationReport {
        n: state.n(),
        p,
        epsilon,
        anomaly_threshold: anomaly_threshold(state.base().log_prob_in(), p)?,
        scalar_product_log: scalar_product_proximity(state),
        expected_in_mass: accessibility_in.mean_mass,
        per_marble,
        all_in_fuzzy,
        accessibility_in,
        accessibility_out,
        anomaly_exhibited,
    })
}
