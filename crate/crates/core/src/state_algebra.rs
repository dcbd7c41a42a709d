//! Two-level marble states and n-marble product states.
//!
//! A marble is `alpha |in> + beta |out>` (or the mirror image with the large
//! amplitude on `|out>`). Amplitudes are real and nonnegative, so only the
//! squared magnitudes are kept, in log form. Product states are stored as a
//! base marble shared by every index plus a sparse map of exceptions, which
//! keeps homogeneous states with 10^9 marbles O(1) and still represents the
//! "one marble flipped out of the box" states exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logprob::{log_binomial, LogValue};

/// Largest `n` for which [`expand_terms`] enumerates all 2^n terms.
pub const EXPANSION_LIMIT: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Region {
    In,
    Out,
}

impl Region {
    pub fn opposite(self) -> Region {
        match self {
            Region::In => Region::Out,
            Region::Out => Region::In,
        }
    }
}

/// One marble: `|alpha|^2` on `dominant_region`, `|beta|^2` on the other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarbleState {
    log_alpha_sq: LogValue,
    log_beta_sq: LogValue,
    dominant_region: Region,
}

impl MarbleState {
    /// Marble with `|alpha|^2 = alpha_sq` in the box.
    pub fn new(alpha_sq: f64) -> Result<MarbleState> {
        if !(alpha_sq > 0.0 && alpha_sq <= 1.0) {
            return Err(Error::domain(
                "alpha_sq",
                format!("{alpha_sq} not in (0, 1]"),
            ));
        }
        Self::from_log_alpha_sq(LogValue::from_real(alpha_sq))
    }

    /// Marble with `|alpha|^2 = 1 - beta_sq`, keeping `beta_sq` exact.
    ///
    /// This is the constructor to use for the physically interesting states,
    /// where `alpha_sq` differs from one by far less than an ulp would allow
    /// to be recovered from `1 - alpha_sq`.
    pub fn from_one_minus(beta_sq: f64) -> Result<MarbleState> {
        if !(0.0..1.0).contains(&beta_sq) {
            return Err(Error::domain("beta_sq", format!("{beta_sq} not in [0, 1)")));
        }
        Ok(MarbleState {
            log_alpha_sq: LogValue::from_ln((-beta_sq).ln_1p()),
            log_beta_sq: LogValue::from_real(beta_sq),
            dominant_region: Region::In,
        })
    }

    pub fn from_log_alpha_sq(log_alpha_sq: LogValue) -> Result<MarbleState> {
        if log_alpha_sq.is_zero() || log_alpha_sq.sign() == crate::Sign::Negative {
            return Err(Error::domain("alpha_sq", "must be positive"));
        }
        let log_beta_sq = log_alpha_sq
            .one_minus()
            .map_err(|_| Error::domain("alpha_sq", "exceeds one"))?;
        Ok(MarbleState {
            log_alpha_sq,
            log_beta_sq,
            dominant_region: Region::In,
        })
    }

    /// Same amplitudes, with `|alpha|^2` placed on `region`.
    pub fn with_dominant_region(mut self, region: Region) -> MarbleState {
        self.dominant_region = region;
        self
    }

    /// Exchanges the roles of `|in>` and `|out>`.
    pub fn flipped(self) -> MarbleState {
        self.with_dominant_region(self.dominant_region.opposite())
    }

    pub fn log_alpha_sq(&self) -> LogValue {
        self.log_alpha_sq
    }

    pub fn log_beta_sq(&self) -> LogValue {
        self.log_beta_sq
    }

    pub fn dominant_region(&self) -> Region {
        self.dominant_region
    }

    /// `|alpha|^2 == |beta|^2`: neither region dominates.
    pub fn is_balanced(&self) -> bool {
        self.log_alpha_sq == self.log_beta_sq
    }

    /// `|alpha|^2 > |beta|^2`, i.e. the dominant-region label is meaningful.
    pub fn alpha_dominates(&self) -> bool {
        self.log_alpha_sq.cmp_value(self.log_beta_sq).is_gt()
    }

    /// Squared amplitude on `region`.
    pub fn log_prob(&self, region: Region) -> LogValue {
        if region == self.dominant_region {
            self.log_alpha_sq
        } else {
            self.log_beta_sq
        }
    }

    pub fn log_prob_in(&self) -> LogValue {
        self.log_prob(Region::In)
    }

    pub fn log_prob_out(&self) -> LogValue {
        self.log_prob(Region::Out)
    }
}

/// `n >= 1` non-interacting marbles in a product state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductState {
    n: u64,
    base: MarbleState,
    exceptions: BTreeMap<u64, MarbleState>,
}

impl ProductState {
    pub fn homogeneous(marble: MarbleState, n: u64) -> Result<ProductState> {
        if n == 0 {
            return Err(Error::domain(
                "n",
                "a product state needs at least one marble",
            ));
        }
        Ok(ProductState {
            n,
            base: marble,
            exceptions: BTreeMap::new(),
        })
    }

    pub fn from_marbles(marbles: &[MarbleState]) -> Result<ProductState> {
        let Some(&base) = marbles.first() else {
            return Err(Error::domain(
                "n",
                "a product state needs at least one marble",
            ));
        };
        let exceptions = marbles
            .iter()
            .enumerate()
            .filter(|(_, m)| **m != base)
            .map(|(i, m)| (i as u64, *m))
            .collect();
        Ok(ProductState {
            n: marbles.len() as u64,
            base,
            exceptions,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn is_homogeneous(&self) -> bool {
        self.exceptions.is_empty()
    }

    /// The marble shared by every index not listed as an exception.
    pub fn base(&self) -> MarbleState {
        self.base
    }

    pub fn marble(&self, index: u64) -> Result<MarbleState> {
        self.check_index(index)?;
        Ok(self.exceptions.get(&index).copied().unwrap_or(self.base))
    }

    /// Distinct marbles with their multiplicities: the base marble first
    /// (omitted if every index is an exception), then each exception.
    pub fn groups(&self) -> Vec<(MarbleState, u64)> {
        let base_count = self.n - self.exceptions.len() as u64;
        let mut out = Vec::with_capacity(self.exceptions.len() + 1);
        if base_count > 0 {
            out.push((self.base, base_count));
        }
        out.extend(self.exceptions.values().map(|m| (*m, 1)));
        out
    }

    /// Indices whose marble differs from [`ProductState::base`].
    pub fn exception_indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.exceptions.keys().copied()
    }

    /// All marbles in index order. Only sensible for small `n`.
    pub fn marbles(&self) -> Vec<MarbleState> {
        (0..self.n)
            .map(|i| self.exceptions.get(&i).copied().unwrap_or(self.base))
            .collect()
    }

    fn check_index(&self, index: u64) -> Result<()> {
        if index >= self.n {
            Err(Error::IndexOutOfRange { index, n: self.n })
        } else {
            Ok(())
        }
    }

    fn set(&mut self, index: u64, marble: MarbleState) {
        if marble == self.base {
            self.exceptions.remove(&index);
        } else {
            self.exceptions.insert(index, marble);
        }
        if self.exceptions.len() as u64 == self.n {
            let base = *self.exceptions.values().next().expect("n >= 1");
            self.base = base;
            self.exceptions.retain(|_, m| *m != base);
        }
    }
}

/// Assignment of every marble to a region: each marble sits in
/// `default_region` unless its index is listed in `toggled`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TermPattern {
    n: u64,
    default_region: Region,
    toggled: BTreeSet<u64>,
}

impl TermPattern {
    pub fn all_in(n: u64) -> TermPattern {
        TermPattern {
            n,
            default_region: Region::In,
            toggled: BTreeSet::new(),
        }
    }

    pub fn all_out(n: u64) -> TermPattern {
        TermPattern {
            n,
            default_region: Region::Out,
            toggled: BTreeSet::new(),
        }
    }

    /// Pattern with exactly the listed (0-based) indices IN.
    pub fn with_in_set(n: u64, in_set: impl IntoIterator<Item = u64>) -> Result<TermPattern> {
        let toggled: BTreeSet<u64> = in_set.into_iter().collect();
        if let Some(&bad) = toggled.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, n });
        }
        Ok(TermPattern {
            n,
            default_region: Region::Out,
            toggled,
        })
    }

    /// Pattern from the low `n` bits of `mask` (bit i set = marble i IN).
    pub fn from_mask(n: u64, mask: u64) -> TermPattern {
        debug_assert!(n <= 64);
        TermPattern {
            n,
            default_region: Region::Out,
            toggled: (0..n).filter(|i| mask >> i & 1 == 1).collect(),
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn region_of(&self, index: u64) -> Region {
        if self.toggled.contains(&index) {
            self.default_region.opposite()
        } else {
            self.default_region
        }
    }

    pub fn in_count(&self) -> u64 {
        match self.default_region {
            Region::In => self.n - self.toggled.len() as u64,
            Region::Out => self.toggled.len() as u64,
        }
    }
}

/// Squared-magnitude log-coefficient of one product term:
/// the sum over marbles of `ln P(marble i in its assigned region)`.
pub fn term_log_coefficient(state: &ProductState, pattern: &TermPattern) -> Result<LogValue> {
    if pattern.n != state.n {
        return Err(Error::domain(
            "pattern",
            format!(
                "pattern covers {} marbles, state has {}",
                pattern.n, state.n
            ),
        ));
    }
    // Base marbles: count how many sit in each region, then one power each.
    let base_toggled = pattern
        .toggled
        .iter()
        .filter(|i| !state.exceptions.contains_key(i))
        .count() as u64;
    let base_count = state.n - state.exceptions.len() as u64;
    let (base_default, base_other) = (base_count - base_toggled, base_toggled);
    let default = pattern.default_region;
    let mut total = state.base.log_prob(default).powi(base_default)
        * state.base.log_prob(default.opposite()).powi(base_other);
    for (&i, m) in &state.exceptions {
        total = total * m.log_prob(pattern.region_of(i));
    }
    Ok(total)
}

/// Every one of the 2^n product terms with its squared log-coefficient.
pub fn expand_terms(state: &ProductState) -> Result<Vec<(TermPattern, LogValue)>> {
    if state.n > EXPANSION_LIMIT {
        return Err(Error::ExpansionTooLarge {
            n: state.n,
            limit: EXPANSION_LIMIT,
        });
    }
    (0..1u64 << state.n)
        .map(|mask| {
            let pattern = TermPattern::from_mask(state.n, mask);
            let c = term_log_coefficient(state, &pattern)?;
            Ok((pattern, c))
        })
        .collect()
}

/// Probability that exactly `k` marbles are found IN.
pub fn outcome_count_distribution(state: &ProductState, k: u64) -> Result<LogValue> {
    if k > state.n {
        return Err(Error::domain(
            "k",
            format!("{k} exceeds the marble count {}", state.n),
        ));
    }
    combine_with_base(state, &exception_count_distribution(state), k)
}

/// The full count distribution `P(K = k)` for `k = 0..=n`.
pub fn count_distribution(state: &ProductState) -> Result<Vec<LogValue>> {
    let exceptions = exception_count_distribution(state);
    (0..=state.n)
        .map(|k| combine_with_base(state, &exceptions, k))
        .collect()
}

/// Convolves the exception-marble distribution with the binomial law of the
/// base marbles at total count `k`.
fn combine_with_base(state: &ProductState, exceptions: &[LogValue], k: u64) -> Result<LogValue> {
    let m = state.n - state.exceptions.len() as u64;
    let (p_in, p_out) = (state.base.log_prob_in(), state.base.log_prob_out());
    let lo = k.saturating_sub(m);
    let hi = k.min(exceptions.len() as u64 - 1);
    let mut total = LogValue::ZERO;
    for j in lo..=hi {
        let from_base = k - j;
        let binom = log_binomial(m, from_base)? * p_in.powi(from_base) * p_out.powi(m - from_base);
        total = total + exceptions[j as usize] * binom;
    }
    Ok(total)
}

/// Poisson-binomial distribution of the IN count among the exception marbles.
fn exception_count_distribution(state: &ProductState) -> Vec<LogValue> {
    let mut dist = vec![LogValue::ONE];
    for m in state.exceptions.values() {
        let (p_in, p_out) = (m.log_prob_in(), m.log_prob_out());
        let mut next = vec![LogValue::ZERO; dist.len() + 1];
        for (j, &d) in dist.iter().enumerate() {
            next[j] = next[j] + d * p_out;
            next[j + 1] = next[j + 1] + d * p_in;
        }
        dist = next;
    }
    dist
}

/// Copy of `state` with marble `index` (0-based) swapped into the opposite
/// dominant region.
pub fn flip_marble(state: &ProductState, index: u64) -> Result<ProductState> {
    let marble = state.marble(index)?;
    let mut out = state.clone();
    out.set(index, marble.flipped());
    Ok(out)
}
