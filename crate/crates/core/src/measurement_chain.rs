//! Monte Carlo of the operational counting protocol.
//!
//! Each marble `i` is correlated with its own apparatus `M_i`, and a global
//! apparatus `M` measures the count observable `O` with eigenvalues `0..=n`.
//! One trial runs: measure `O` (collapse onto the `k`-eigenspace), the
//! cascade collapse onto one configuration with exactly `k` marbles and `k`
//! apparatuses IN, then the resolution of `M`'s pointer, which carries a
//! small tail `delta` and can settle on a reading other than `k`.
//!
//! The `M_i` tails are taken to resolve together with the cascade, so the
//! marble count and the `M_i` count always agree. Every inconsistency comes
//! from the `M` pointer tail.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logprob::LogValue;
use crate::rng::{substream, SimRng};
use crate::state_algebra::{
    count_distribution, term_log_coefficient, MarbleState, ProductState, Region, TermPattern,
    EXPANSION_LIMIT,
};

/// Largest marble count a chain trial will simulate (each trial is O(n)).
pub const CHAIN_N_LIMIT: u64 = 1_000_000;

/// Where a mis-resolved `M` pointer lands.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipModel {
    /// Uniformly on one of the other `n` readings.
    #[default]
    Uniform,
    /// On `k - 1` or `k + 1` with equal weight (the only neighbour at the ends).
    Adjacent,
}

/// Order in which the collapses happen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollapseOrdering {
    /// `O` first, then the cascade onto one configuration.
    #[default]
    Sequential,
    /// Every marble/apparatus pair collapses on its own; `O` reads the result.
    Simultaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub n: u64,
    pub alpha_sq: f64,
    pub gamma_sq: f64,
    pub seed: u64,
    #[serde(default)]
    pub flip_model: FlipModel,
    #[serde(default)]
    pub ordering: CollapseOrdering,
}

impl ChainParams {
    pub fn new(n: u64, alpha_sq: f64, gamma_sq: f64, seed: u64) -> ChainParams {
        ChainParams {
            n,
            alpha_sq,
            gamma_sq,
            seed,
            flip_model: FlipModel::Uniform,
            ordering: CollapseOrdering::Sequential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > CHAIN_N_LIMIT {
            return Err(Error::domain(
                "n",
                format!("{} not in 1..={CHAIN_N_LIMIT}", self.n),
            ));
        }
        if !(self.alpha_sq > 0.0 && self.alpha_sq <= 1.0) {
            return Err(Error::domain(
                "alpha_sq",
                format!("{} not in (0, 1]", self.alpha_sq),
            ));
        }
        PointerTails::new(self.gamma_sq, self.flip_model).map(|_| ())
    }

    pub fn delta_sq(&self) -> f64 {
        1.0 - self.gamma_sq
    }

    pub fn state(&self) -> Result<ProductState> {
        self.validate()?;
        ProductState::homogeneous(MarbleState::new(self.alpha_sq)?, self.n)
    }
}

/// Result of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChainOutcome {
    pub n: u64,
    pub k_marbles_in: u64,
    pub k_apparatus_in: u64,
    pub o_reading: u64,
    pub consistent: bool,
}

impl ChainOutcome {
    fn new(n: u64, k_marbles_in: u64, k_apparatus_in: u64, o_reading: u64) -> ChainOutcome {
        ChainOutcome {
            n,
            k_marbles_in,
            k_apparatus_in,
            o_reading,
            consistent: k_marbles_in == k_apparatus_in && k_apparatus_in == o_reading,
        }
    }
}

#[derive(Debug, Clone)]
enum CountSampler {
    Binomial(Binomial),
    /// Cumulative count distribution plus, per `k`, the cumulative weights of
    /// the configurations in the `k`-eigenspace.
    Explicit {
        cdf: Vec<f64>,
        eigenspaces: Vec<Vec<(u64, f64)>>,
    },
}

/// Marbles perfectly correlated with their apparatuses. The amplitudes are
/// those of the marble state, so the state itself is the compact form.
#[derive(Debug, Clone)]
pub struct CorrelatedChain {
    state: ProductState,
    base_p_in: f64,
    sampler: CountSampler,
}

/// One term of the joint marble and apparatus expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTerm {
    pub marbles: TermPattern,
    /// Apparatus `M_i` reads IN exactly where marble `i` is in.
    pub apparatus: TermPattern,
    /// Eigenvalue of `O` for this term.
    pub o_value: u64,
    pub log_weight: LogValue,
}

pub fn correlate(state: &ProductState) -> Result<CorrelatedChain> {
    let n = state.n();
    if n > CHAIN_N_LIMIT {
        return Err(Error::domain("n", format!("{n} exceeds {CHAIN_N_LIMIT}")));
    }
    let sampler = if state.is_homogeneous() {
        let p = state.base().log_prob_in().to_real();
        CountSampler::Binomial(
            Binomial::new(n, p).map_err(|e| Error::domain("alpha_sq", e.to_string()))?,
        )
    } else {
        if n > EXPANSION_LIMIT {
            return Err(Error::ExpansionTooLarge {
                n,
                limit: EXPANSION_LIMIT,
            });
        }
        let mut cdf = Vec::with_capacity(n as usize + 1);
        let mut acc = 0.0;
        for w in count_distribution(state)? {
            acc += w.to_real();
            cdf.push(acc);
        }
        let mut eigenspaces = vec![Vec::new(); n as usize + 1];
        let mut totals = vec![0.0; n as usize + 1];
        for mask in 0..1u64 << n {
            let k = mask.count_ones() as usize;
            totals[k] += term_log_coefficient(state, &TermPattern::from_mask(n, mask))?.to_real();
            eigenspaces[k].push((mask, totals[k]));
        }
        CountSampler::Explicit { cdf, eigenspaces }
    };
    Ok(CorrelatedChain {
        state: state.clone(),
        base_p_in: state.base().log_prob_in().to_real(),
        sampler,
    })
}

impl CorrelatedChain {
    pub fn state(&self) -> &ProductState {
        &self.state
    }

    pub fn n(&self) -> u64 {
        self.state.n()
    }

    fn p_in_of(&self, index: u64) -> f64 {
        if self.state.is_homogeneous() {
            return self.base_p_in;
        }
        self.state
            .marble(index)
            .expect("index < n")
            .log_prob(Region::In)
            .to_real()
    }

    /// Born weight of each `O` eigenvalue.
    pub fn count_distribution(&self) -> Result<Vec<LogValue>> {
        count_distribution(&self.state)
    }

    /// All `2^n` joint terms, for `n <= EXPANSION_LIMIT`.
    pub fn joint_terms(&self) -> Result<Vec<JointTerm>> {
        let n = self.n();
        if n > EXPANSION_LIMIT {
            return Err(Error::ExpansionTooLarge {
                n,
                limit: EXPANSION_LIMIT,
            });
        }
        (0..1u64 << n)
            .map(|mask| {
                let marbles = TermPattern::from_mask(n, mask);
                Ok(JointTerm {
                    log_weight: term_log_coefficient(&self.state, &marbles)?,
                    o_value: marbles.in_count(),
                    apparatus: marbles.clone(),
                    marbles,
                })
            })
            .collect()
    }
}

/// Pointer tail model: `|~IN> = gamma |IN> + delta |OUT>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointerTails {
    pub gamma_sq: f64,
    pub delta_sq: f64,
    pub flip_model: FlipModel,
}

impl PointerTails {
    pub fn new(gamma_sq: f64, flip_model: FlipModel) -> Result<PointerTails> {
        if !(gamma_sq > 0.5 && gamma_sq <= 1.0) {
            return Err(Error::domain(
                "gamma_sq",
                format!("{gamma_sq} not in (0.5, 1]"),
            ));
        }
        Ok(PointerTails {
            gamma_sq,
            delta_sq: 1.0 - gamma_sq,
            flip_model,
        })
    }

    pub fn flip_probability(&self) -> f64 {
        self.delta_sq
    }
}

pub fn apply_pointer_tails(gamma_sq: f64, flip_model: FlipModel) -> Result<PointerTails> {
    PointerTails::new(gamma_sq, flip_model)
}

/// State right after `O` registered `k`: the normalized projection onto the
/// `k`-eigenspace of the correlated chain.
#[derive(Debug, Clone, Copy)]
pub struct PostMeasurement<'a> {
    pub chain: &'a CorrelatedChain,
    pub k: u64,
}

pub fn measure_o<'a>(chain: &'a CorrelatedChain, rng: &mut SimRng) -> PostMeasurement<'a> {
    let k = match &chain.sampler {
        CountSampler::Binomial(b) => b.sample(rng),
        CountSampler::Explicit { cdf, .. } => pick_cumulative(cdf, rng) as u64,
    };
    PostMeasurement { chain, k }
}

/// Index of the first cumulative weight above a uniform draw on `[0, total)`.
fn pick_cumulative(cumulative: &[f64], rng: &mut SimRng) -> usize {
    let total = *cumulative.last().expect("non-empty");
    let u = rng.random::<f64>() * total;
    cumulative
        .partition_point(|&c| c <= u)
        .min(cumulative.len() - 1)
}

/// One definite configuration after the cascade.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    /// Marbles in `|in>`, ascending.
    pub marbles_in: Vec<u64>,
    /// Apparatuses reading IN, ascending.
    pub apparatus_in: Vec<u64>,
    pub outcome: ChainOutcome,
}

impl Configuration {
    fn from_marbles(n: u64, marbles_in: Vec<u64>, o_reading: u64) -> Configuration {
        let apparatus_in = marbles_in.clone();
        let outcome = ChainOutcome::new(
            n,
            marbles_in.len() as u64,
            apparatus_in.len() as u64,
            o_reading,
        );
        Configuration {
            marbles_in,
            apparatus_in,
            outcome,
        }
    }
}

/// Collapse within the `k`-eigenspace onto one term. In the homogeneous case
/// all `C(n, k)` terms have equal weight, so the marbles IN form a uniform
/// random `k`-subset.
pub fn cascade_collapse(post: PostMeasurement<'_>, rng: &mut SimRng) -> Configuration {
    let n = post.chain.n();
    let marbles_in = match &post.chain.sampler {
        CountSampler::Binomial(_) => {
            let mut v: Vec<u64> = index::sample(rng, n as usize, post.k as usize)
                .into_iter()
                .map(|i| i as u64)
                .collect();
            v.sort_unstable();
            v
        }
        CountSampler::Explicit { eigenspaces, .. } => {
            let space = &eigenspaces[post.k as usize];
            let weights: Vec<f64> = space.iter().map(|&(_, c)| c).collect();
            let mask = space[pick_cumulative(&weights, rng)].0;
            (0..n).filter(|i| mask >> i & 1 == 1).collect()
        }
    };
    Configuration::from_marbles(n, marbles_in, post.k)
}

/// Each marble and its apparatus collapse independently; `O` then reads the
/// number of IN marbles.
pub fn collapse_simultaneously(chain: &CorrelatedChain, rng: &mut SimRng) -> Configuration {
    let n = chain.n();
    let marbles_in: Vec<u64> = (0..n)
        .filter(|&i| {
            let p = chain.p_in_of(i);
            rng.random_bool(p)
        })
        .collect();
    let k = marbles_in.len() as u64;
    Configuration::from_marbles(n, marbles_in, k)
}

/// Resolve `M`'s pointer: with probability `|delta|^2` it settles on a
/// reading other than the registered one.
pub fn resolve_pointer_with_tails(
    outcome: ChainOutcome,
    tails: &PointerTails,
    rng: &mut SimRng,
) -> ChainOutcome {
    if tails.delta_sq <= 0.0 || !rng.random_bool(tails.delta_sq) {
        return outcome;
    }
    let (n, k) = (outcome.n, outcome.o_reading);
    let reading = match tails.flip_model {
        FlipModel::Uniform => {
            let r = rng.random_range(0..n);
            if r < k {
                r
            } else {
                r + 1
            }
        }
        FlipModel::Adjacent => {
            if k == 0 {
                1
            } else if k == n || rng.random_bool(0.5) {
                k - 1
            } else {
                k + 1
            }
        }
    };
    ChainOutcome::new(n, outcome.k_marbles_in, outcome.k_apparatus_in, reading)
}

/// Probability that `M` disagrees with the collapsed marble count: `|delta|^2`
/// under either flip model, for every `k`.
pub fn mismatch_probability(params: &ChainParams) -> Result<LogValue> {
    params.validate()?;
    Ok(LogValue::from_real(params.delta_sq()))
}

/// One full trial.
pub fn run_trial(
    chain: &CorrelatedChain,
    tails: &PointerTails,
    ordering: CollapseOrdering,
    rng: &mut SimRng,
) -> ChainOutcome {
    let configuration = match ordering {
        CollapseOrdering::Sequential => cascade_collapse(measure_o(chain, rng), rng),
        CollapseOrdering::Simultaneous => collapse_simultaneously(chain, rng),
    };
    resolve_pointer_with_tails(configuration.outcome, tails, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub params: ChainParams,
    pub trials: u64,
    /// Trials per number of marbles collapsed IN, `k = 0..=n`.
    pub k_histogram: Vec<u64>,
    /// Trials per final reading of `M`.
    pub o_histogram: Vec<u64>,
    pub consistency_rate: f64,
    /// Trials where the marble count and the `M_i` count differ.
    pub count_disagreements: u64,
    /// Trials where `M` disagrees with the marble count.
    pub pointer_mismatches: u64,
    pub empirical_mismatch_rate: f64,
    /// Analytic mismatch probability.
    pub mismatch_log10: LogValue,
}

#[derive(Clone)]
struct Tally {
    k: Vec<u64>,
    o: Vec<u64>,
    consistent: u64,
    disagreements: u64,
    mismatches: u64,
}

impl Tally {
    fn new(n: u64) -> Tally {
        Tally {
            k: vec![0; n as usize + 1],
            o: vec![0; n as usize + 1],
            consistent: 0,
            disagreements: 0,
            mismatches: 0,
        }
    }

    fn record(mut self, o: ChainOutcome) -> Tally {
        self.k[o.k_marbles_in as usize] += 1;
        self.o[o.o_reading as usize] += 1;
        self.consistent += o.consistent as u64;
        self.disagreements += (o.k_marbles_in != o.k_apparatus_in) as u64;
        self.mismatches += (o.o_reading != o.k_marbles_in) as u64;
        self
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.k.iter_mut().zip(&other.k).for_each(|(a, b)| *a += b);
        self.o.iter_mut().zip(&other.o).for_each(|(a, b)| *a += b);
        self.consistent += other.consistent;
        self.disagreements += other.disagreements;
        self.mismatches += other.mismatches;
        self
    }
}

/// `trials` independent trials, trial `t` on substream `t` of `params.seed`.
pub fn run_chain(params: &ChainParams, trials: u64) -> Result<ChainSummary> {
    if trials == 0 {
        return Err(Error::domain("trials", "must be >= 1"));
    }
    let chain = correlate(&params.state()?)?;
    let tails = PointerTails::new(params.gamma_sq, params.flip_model)?;
    let n = params.n;
    let tally = (0..trials)
        .into_par_iter()
        .fold(
            || Tally::new(n),
            |acc, t| {
                let mut rng = substream(params.seed, t);
                acc.record(run_trial(&chain, &tails, params.ordering, &mut rng))
            },
        )
        .reduce(|| Tally::new(n), Tally::merge);
    Ok(ChainSummary {
        params: *params,
        trials,
        consistency_rate: tally.consistent as f64 / trials as f64,
        empirical_mismatch_rate: tally.mismatches as f64 / trials as f64,
        count_disagreements: tally.disagreements,
        pointer_mismatches: tally.mismatches,
        k_histogram: tally.k,
        o_histogram: tally.o,
        mismatch_log10: mismatch_probability(params)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logprob::log_binomial;
    use crate::rng::seeded;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn chain(alpha_sq: f64, n: u64) -> CorrelatedChain {
        correlate(&ProductState::homogeneous(MarbleState::new(alpha_sq).unwrap(), n).unwrap())
            .unwrap()
    }

    /// Pearson statistic and degrees of freedom, pooling bins with expected count < 5.
    fn chi_square(observed: &[u64], probs: &[f64], total: u64) -> (f64, usize) {
        let mut stat = 0.0;
        let mut bins = 0;
        let (mut po, mut pe) = (0.0, 0.0);
        for (&o, &p) in observed.iter().zip(probs) {
            po += o as f64;
            pe += p * total as f64;
            if pe >= 5.0 {
                stat += (po - pe).powi(2) / pe;
                bins += 1;
                po = 0.0;
                pe = 0.0;
            }
        }
        if pe > 0.0 {
            stat += (po - pe).powi(2) / pe;
            bins += 1;
        }
        (stat, bins - 1)
    }

    fn chi_square_passes(observed: &[u64], probs: &[f64], total: u64) -> bool {
        let (stat, dof) = chi_square(observed, probs, total);
        stat < ChiSquared::new(dof as f64).unwrap().inverse_cdf(0.99)
    }

    #[test]
    fn params_validation() {
        assert!(ChainParams::new(10, 0.9, 0.99, 1).validate().is_ok());
        assert!(ChainParams::new(10, 1.0, 1.0, 1).validate().is_ok());
        assert!(ChainParams::new(0, 0.9, 0.99, 1).validate().is_err());
        assert!(ChainParams::new(10, 0.0, 0.99, 1).validate().is_err());
        assert!(ChainParams::new(10, 0.9, 0.5, 1).validate().is_err());
        assert!(ChainParams::new(10, 0.9, 1.01, 1).validate().is_err());
    }

    #[test]
    fn correlation_keeps_count_distribution() {
        let s = ProductState::homogeneous(MarbleState::new(0.9).unwrap(), 6).unwrap();
        assert_eq!(
            correlate(&s).unwrap().count_distribution().unwrap(),
            count_distribution(&s).unwrap()
        );
    }

    #[test]
    fn two_marble_joint_expansion() {
        let terms = chain(0.9, 2).joint_terms().unwrap();
        assert_eq!(terms.len(), 4);
        for t in &terms {
            assert_eq!(t.marbles, t.apparatus);
            let expect = 0.9f64.powi(t.o_value as i32) * 0.1f64.powi(2 - t.o_value as i32);
            assert!((t.log_weight.to_real() - expect).abs() < 1e-15);
        }
        let mixed: Vec<_> = terms.iter().filter(|t| t.o_value == 1).collect();
        assert_eq!(mixed.len(), 2);
    }

    #[test]
    fn certain_marbles_are_all_in() {
        let c = chain(1.0, 7);
        let mut rng = seeded(3);
        for _ in 0..50 {
            let post = measure_o(&c, &mut rng);
            assert_eq!(post.k, 7);
            let conf = cascade_collapse(post, &mut rng);
            assert_eq!(conf.marbles_in, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn tail_probabilities() {
        assert_eq!(
            apply_pointer_tails(1.0, FlipModel::Uniform)
                .unwrap()
                .flip_probability(),
            0.0
        );
        let t = apply_pointer_tails(0.99, FlipModel::Uniform).unwrap();
        assert!((t.flip_probability() - 0.01).abs() < 1e-15);
        assert_eq!(t.gamma_sq + t.delta_sq, 1.0);
        assert!(mismatch_probability(&ChainParams::new(4, 0.9, 1.0, 0))
            .unwrap()
            .is_zero());
        let m = mismatch_probability(&ChainParams::new(4, 0.9, 0.99, 0)).unwrap();
        assert!((m.log_mag() - 0.01f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_marble_count_law() {
        let c = chain(0.9, 2);
        let mut rng = seeded(11);
        let mut hist = [0u64; 3];
        let trials = 100_000;
        for _ in 0..trials {
            hist[measure_o(&c, &mut rng).k as usize] += 1;
        }
        assert!(chi_square_passes(&hist, &[0.01, 0.18, 0.81], trials));
    }

    #[test]
    fn cascade_subsets_are_uniform() {
        let c = chain(0.7, 4);
        let mut rng = seeded(5);
        let mut counts = std::collections::BTreeMap::new();
        let mut total = 0u64;
        while total < 60_000 {
            let post = measure_o(&c, &mut rng);
            if post.k != 2 {
                continue;
            }
            *counts
                .entry(cascade_collapse(post, &mut rng).marbles_in)
                .or_insert(0u64) += 1;
            total += 1;
        }
        assert_eq!(counts.len(), 6);
        let observed: Vec<u64> = counts.values().copied().collect();
        assert!(chi_square_passes(&observed, &[1.0 / 6.0; 6], total));
    }

    #[test]
    fn heterogeneous_cascade_follows_term_weights() {
        let ms: Vec<_> = [0.9, 0.6, 0.8]
            .iter()
            .map(|&a| MarbleState::new(a).unwrap())
            .collect();
        let s = ProductState::from_marbles(&ms).unwrap();
        let c = correlate(&s).unwrap();
        let mut rng = seeded(9);
        let mut hist = [0u64; 8];
        let trials = 80_000;
        for _ in 0..trials {
            let conf = cascade_collapse(measure_o(&c, &mut rng), &mut rng);
            let mask: u64 = conf.marbles_in.iter().map(|i| 1 << i).sum();
            hist[mask as usize] += 1;
        }
        let probs: Vec<f64> = (0..8)
            .map(|m| {
                term_log_coefficient(&s, &TermPattern::from_mask(3, m))
                    .unwrap()
                    .to_real()
            })
            .collect();
        assert!(chi_square_passes(&hist, &probs, trials));
        let big = ProductState::from_marbles(&vec![ms[0]; 21]).unwrap();
        assert!(correlate(&flip(&big)).is_err());
    }

    fn flip(s: &ProductState) -> ProductState {
        crate::state_algebra::flip_marble(s, 0).unwrap()
    }

    #[test]
    fn no_tails_means_consistent() {
        let s = run_chain(&ChainParams::new(10, 0.9, 1.0, 42), 20_000).unwrap();
        assert_eq!(s.consistency_rate, 1.0);
        assert_eq!(s.pointer_mismatches, 0);
        assert_eq!(s.k_histogram, s.o_histogram);
    }

    #[test]
    fn mismatch_rate_and_count_law() {
        let p = ChainParams::new(10, 0.9, 0.99, 7);
        let trials = 100_000;
        let s = run_chain(&p, trials).unwrap();
        assert_eq!(s.count_disagreements, 0);
        let sigma = (0.01 * 0.99 / trials as f64).sqrt();
        assert!((s.empirical_mismatch_rate - 0.01).abs() < 3.0 * sigma);
        let probs: Vec<f64> = (0..=10)
            .map(|k| {
                (log_binomial(10, k).unwrap().log_mag()
                    + k as f64 * 0.9f64.ln()
                    + (10 - k) as f64 * 0.1f64.ln())
                .exp()
            })
            .collect();
        assert!(chi_square_passes(&s.k_histogram, &probs, trials));
        assert!((s.consistency_rate + s.empirical_mismatch_rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adjacent_flips_move_one_step() {
        let mut p = ChainParams::new(5, 0.6, 0.6, 1);
        p.flip_model = FlipModel::Adjacent;
        let c = correlate(&p.state().unwrap()).unwrap();
        let tails = PointerTails::new(p.gamma_sq, p.flip_model).unwrap();
        let mut rng = seeded(2);
        for _ in 0..5000 {
            let o = run_trial(&c, &tails, p.ordering, &mut rng);
            assert!(o.o_reading.abs_diff(o.k_marbles_in) <= 1);
            assert!(o.o_reading <= 5);
        }
    }

    #[test]
    fn ordering_does_not_change_the_count_law() {
        let mut p = ChainParams::new(6, 0.75, 0.95, 13);
        let seq = run_chain(&p, 60_000).unwrap();
        p.ordering = CollapseOrdering::Simultaneous;
        let sim = run_chain(&p, 60_000).unwrap();
        // two-sample chi-square on the pooled histograms
        let total: Vec<f64> = seq
            .k_histogram
            .iter()
            .zip(&sim.k_histogram)
            .map(|(a, b)| (a + b) as f64)
            .collect();
        let grand: f64 = total.iter().sum();
        let mut stat = 0.0;
        let mut dof = 0;
        for (i, &t) in total.iter().enumerate() {
            if t < 10.0 {
                continue;
            }
            dof += 1;
            for h in [&seq.k_histogram, &sim.k_histogram] {
                let e = t * 60_000.0 / grand;
                stat += (h[i] as f64 - e).powi(2) / e;
            }
        }
        assert!(stat < ChiSquared::new((dof - 1) as f64).unwrap().inverse_cdf(0.99));
        assert_eq!(sim.count_disagreements, 0);
        let sigma = (0.05 * 0.95 / 60_000f64).sqrt();
        assert!((sim.empirical_mismatch_rate - 0.05).abs() < 3.0 * sigma);
    }

    #[test]
    fn enumerated_mismatch_matches_analytic() {
        for model in [FlipModel::Uniform, FlipModel::Adjacent] {
            for n in 1..=8u64 {
                let mut p = ChainParams::new(n, 0.83, 0.97, 0);
                p.flip_model = model;
                let c = correlate(&p.state().unwrap()).unwrap();
                let delta_sq = p.delta_sq();
                let mut mismatch = 0.0;
                for term in c.joint_terms().unwrap() {
                    let k = term.o_value;
                    let w = term.log_weight.to_real();
                    for r in 0..=n {
                        let pr = match model {
                            FlipModel::Uniform => {
                                if r == k {
                                    1.0 - delta_sq
                                } else {
                                    delta_sq / n as f64
                                }
                            }
                            FlipModel::Adjacent => {
                                let neighbours = u64::from(k > 0) + u64::from(k < n);
                                if r == k {
                                    1.0 - delta_sq
                                } else if r.abs_diff(k) == 1 {
                                    delta_sq / neighbours as f64
                                } else {
                                    0.0
                                }
                            }
                        };
                        if r != k {
                            mismatch += w * pr;
                        }
                    }
                }
                let analytic = mismatch_probability(&p).unwrap().to_real();
                assert!((mismatch - analytic).abs() < 1e-15, "n={n} {model:?}");
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let p = ChainParams::new(12, 0.8, 0.9, 99);
        assert_eq!(run_chain(&p, 5000).unwrap(), run_chain(&p, 5000).unwrap());
        let other = ChainParams { seed: 100, ..p };
        assert_ne!(
            run_chain(&p, 5000).unwrap().k_histogram,
            run_chain(&other, 5000).unwrap().k_histogram
        );
    }

    #[test]
    fn summary_json_fields() {
        let s = run_chain(&ChainParams::new(3, 0.9, 1.0, 1), 10).unwrap();
        let v = serde_json::to_value(&s).unwrap();
        for key in [
            "k_histogram",
            "consistency_rate",
            "mismatch_log10",
            "params",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["mismatch_log10"]["sign"], 0);
        assert_eq!(v["params"]["flip_model"], "uniform");
    }
}
