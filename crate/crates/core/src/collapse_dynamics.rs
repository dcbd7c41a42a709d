//! Centre-of-mass collapse dynamics of a single macroscopic marble in one
//! dimension, CGS units throughout.
//!
//! The wavefunction stays Gaussian, `exp(-precision/2 (x - mean)^2)`, so a
//! localization ("hit") at `x0` with accuracy `alpha` is a closed-form update
//! of `(mean, precision)`. Hits arrive as a Poisson process with the rate
//! amplified by the nucleon count. Between hits the width may optionally grow
//! at the free-spreading rate, which is what produces the equilibrium width.

use std::f64::consts::PI;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logprob::{log_erfc, LogValue};
use crate::rng::{substream, SimRng};

/// Reduced Planck constant in erg s.
pub const HBAR_CGS: f64 = 1.0546e-27;

/// A precision this many times larger than `alpha` counts as "b >> alpha".
pub const WEAK_HIT_RATIO: f64 = 100.0;

/// Normalized Gaussian centre-of-mass state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianWavepacket {
    mean: f64,
    precision: f64,
    log_norm: LogValue,
}

impl GaussianWavepacket {
    pub fn new(mean: f64, precision: f64) -> Result<GaussianWavepacket> {
        if !(precision > 0.0 && precision.is_finite()) || !mean.is_finite() {
            return Err(Error::domain(
                "wavepacket",
                format!("need finite mean and positive precision, got ({mean}, {precision})"),
            ));
        }
        Ok(GaussianWavepacket {
            mean,
            precision,
            log_norm: LogValue::ONE,
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    /// `1 / precision`.
    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }

    /// Product of the hit-center densities of every hit applied so far,
    /// i.e. the probability density of this particular hit history.
    pub fn log_norm(&self) -> LogValue {
        self.log_norm
    }
}

/// Model constants. Defaults are the physical values for a 1 g marble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrwParams {
    /// Localization accuracy, cm^-2.
    pub alpha_loc: f64,
    /// Per-nucleon localization rate, s^-1.
    pub lambda_micro: f64,
    pub n_nucleons: f64,
    /// Mass in g.
    pub mass: f64,
    /// erg s
    pub hbar: f64,
}

impl Default for GrwParams {
    fn default() -> Self {
        GrwParams {
            alpha_loc: 1e10,
            lambda_micro: 1e-16,
            n_nucleons: 1e23,
            mass: 1.0,
            hbar: HBAR_CGS,
        }
    }
}

impl GrwParams {
    /// Parameters whose amplified rate is exactly `rate`.
    pub fn with_rate(self, rate: f64) -> GrwParams {
        GrwParams {
            lambda_micro: rate,
            n_nucleons: 1.0,
            ..self
        }
    }

    /// Dimensionless desk-scale parameters with the same balance structure
    /// as the physical ones: `t_regime = 10`, `equilibrium_width^2 = 1e-3`,
    /// about 1000 hits up to the regime time, and precision >> alpha there.
    pub fn desk() -> GrwParams {
        GrwParams {
            alpha_loc: 1.0,
            lambda_micro: 100.0,
            n_nucleons: 1.0,
            mass: 1.0,
            hbar: 1e-4 / (2.0 * PI),
        }
    }

    /// Everything strictly positive except the rate, which may be zero.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha_loc", self.alpha_loc),
            ("n_nucleons", self.n_nucleons),
            ("mass", self.mass),
            ("hbar", self.hbar),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(
                    name,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        if !(self.lambda_micro >= 0.0 && self.lambda_micro.is_finite()) {
            return Err(Error::domain(
                "lambda_micro",
                format!("must be nonnegative and finite, got {}", self.lambda_micro),
            ));
        }
        Ok(())
    }
}

/// Prefactor convention for the free-spreading rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpreadConvention {
    /// `4 pi^2 hbar^2 (a + lambda alpha t) t / m^2`.
    #[default]
    Verbatim,
    /// `4 hbar^2 (a + lambda alpha t) t / m^2`.
    Standard,
}

impl SpreadConvention {
    fn prefactor(self) -> f64 {
        match self {
            SpreadConvention::Verbatim => 4.0 * PI * PI,
            SpreadConvention::Standard => 4.0,
        }
    }
}

/// `lambda = N lambda_micro`.
pub fn amplified_rate(params: &GrwParams) -> f64 {
    params.n_nucleons * params.lambda_micro
}

/// State after a localization centred at `x0`: precisions add and the mean
/// becomes the precision-weighted average. `log_norm` picks up the density
/// of `x0`.
pub fn apply_hit(state: &GaussianWavepacket, x0: f64, alpha_loc: f64) -> GaussianWavepacket {
    let b = state.precision;
    let precision = b + alpha_loc;
    let mean = (b * state.mean + alpha_loc * x0) / precision;
    GaussianWavepacket {
        mean,
        precision,
        log_norm: state.log_norm * hit_center_log_density(state, x0, alpha_loc),
    }
}

/// Variance of the hit-center law for `state`: `(alpha + b) / (2 alpha b)`.
pub fn hit_center_variance(state: &GaussianWavepacket, alpha_loc: f64) -> f64 {
    let b = state.precision;
    (alpha_loc + b) / (2.0 * alpha_loc * b)
}

/// Density of a hit landing at `x0`: the squared norm of the hit-collapsed
/// state, which for a Gaussian is a normal density around the mean.
pub fn hit_center_log_density(state: &GaussianWavepacket, x0: f64, alpha_loc: f64) -> LogValue {
    let v = hit_center_variance(state, alpha_loc);
    let d = x0 - state.mean;
    LogValue::from_ln(-0.5 * (2.0 * PI * v).ln() - d * d / (2.0 * v))
}

pub fn sample_hit_center<R: Rng + ?Sized>(
    state: &GaussianWavepacket,
    alpha_loc: f64,
    rng: &mut R,
) -> f64 {
    let sd = hit_center_variance(state, alpha_loc).sqrt();
    Normal::new(state.mean, sd)
        .expect("hit-center spread is finite and positive")
        .sample(rng)
}

/// Poisson arrival times on `(0, duration]`, drawn lazily from exponential
/// inter-arrival gaps.
pub struct PoissonArrivals<'a, R: Rng + ?Sized> {
    gap: Option<Exp<f64>>,
    t: f64,
    duration: f64,
    rng: &'a mut R,
}

impl<'a, R: Rng + ?Sized> PoissonArrivals<'a, R> {
    pub fn new(rate: f64, duration: f64, rng: &'a mut R) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) || !(duration >= 0.0) {
            return Err(Error::domain(
                "poisson process",
                format!("need rate >= 0 and duration >= 0, got ({rate}, {duration})"),
            ));
        }
        let gap = (rate > 0.0).then(|| Exp::new(rate).expect("positive rate"));
        Ok(PoissonArrivals {
            gap,
            t: 0.0,
            duration,
            rng,
        })
    }
}

impl<R: Rng + ?Sized> Iterator for PoissonArrivals<'_, R> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let gap = self.gap.as_ref()?;
        let t = self.t + gap.sample(self.rng);
        if t > self.duration {
            self.gap = None;
            return None;
        }
        self.t = t;
        Some(t)
    }
}

pub fn sample_hit_times<R: Rng + ?Sized>(
    rate: f64,
    duration: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(PoissonArrivals::new(rate, duration, rng)?.collect())
}

/// `1 / (a + n alpha)`.
pub fn variance_after_hits(a: f64, hit_count: u64, alpha_loc: f64) -> f64 {
    1.0 / (a + hit_count as f64 * alpha_loc)
}

/// Free-spreading rate of the variance at time `t` for a packet that started
/// at precision `a` and has been narrowed at the mean hit rate since.
pub fn schrodinger_spread_rate(a: f64, t: f64, params: &GrwParams) -> f64 {
    spread_rate(
        SpreadConvention::Verbatim,
        a + amplified_rate(params) * params.alpha_loc * t,
        t,
        params,
    )
}

/// Spreading rate for an explicit current precision.
pub fn spread_rate(
    convention: SpreadConvention,
    precision: f64,
    t: f64,
    params: &GrwParams,
) -> f64 {
    convention.prefactor() * params.hbar * params.hbar * precision * t / (params.mass * params.mass)
}

/// Rate at which the mean hit rate shrinks the variance:
/// `alpha lambda / (a + alpha lambda t)^2`.
pub fn localization_shrink_rate(a: f64, t: f64, params: &GrwParams) -> f64 {
    let al = params.alpha_loc * amplified_rate(params);
    al / (a + al * t).powi(2)
}

/// Time at which the spreading rate catches up with the localization rate
/// (large-time form): `sqrt(m / (2 pi hbar lambda alpha))`.
pub fn regime_time(params: &GrwParams) -> f64 {
    (params.mass / (2.0 * PI * params.hbar * amplified_rate(params) * params.alpha_loc)).sqrt()
}

/// Width at the regime time: `(2 pi hbar / (m lambda alpha))^(1/4)`.
pub fn equilibrium_width(params: &GrwParams) -> f64 {
    (2.0 * PI * params.hbar / (params.mass * amplified_rate(params) * params.alpha_loc)).powf(0.25)
}

/// `1 / equilibrium_width^2`.
pub fn equilibrium_precision(params: &GrwParams) -> f64 {
    equilibrium_width(params).powi(-2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForcedDisplacement {
    /// Mean after all hits.
    pub mean: f64,
    pub shift: f64,
    /// `alpha lambda t / b`
    pub shift_factor: f64,
    /// Expected number of hits `lambda t`.
    pub hit_count: f64,
    /// False when `b >> alpha` does not hold and the linear shift law is
    /// not a good approximation.
    pub weak_hit_regime: bool,
}

/// Mean of a packet of precision `b` after every hit during `t` lands at
/// `x0`, to first order in `alpha / b`.
pub fn forced_displacement(
    mean: f64,
    b: f64,
    x0: f64,
    t: f64,
    params: &GrwParams,
) -> ForcedDisplacement {
    let hit_count = amplified_rate(params) * t;
    let shift_factor = params.alpha_loc * hit_count / b;
    let shift = shift_factor * (x0 - mean);
    ForcedDisplacement {
        mean: mean + shift,
        shift,
        shift_factor,
        hit_count,
        weak_hit_regime: b >= WEAK_HIT_RATIO * params.alpha_loc,
    }
}

/// Probability of a localization farther than `offset` from the centre of a
/// packet with the given precision, `erfc(offset sqrt(precision))`; with
/// precision `1e22` the argument is `1e11 * offset`.
///
/// This is the squared-amplitude weight of the packet beyond `offset` on
/// either side. The exact hit-center law of [`hit_center_variance`] is wider
/// (its variance tends to `1 / (2 alpha)` for sharp packets), so this is the
/// packet-tail estimate, not the hit-center tail.
pub fn tail_hit_log_probability(offset: f64, precision: f64) -> Result<LogValue> {
    if !(offset >= 0.0) || !(precision > 0.0) {
        return Err(Error::domain(
            "tail probability",
            format!("need offset >= 0 and precision > 0, got ({offset}, {precision})"),
        ));
    }
    Ok(log_erfc(offset * precision.sqrt()))
}

/// Upper bound on the log-probability that forced hits alone drag the
/// packet by `distance` within `duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DisplacementBound {
    /// Offset every hit must reach for the shift law to give `distance`.
    pub required_offset: f64,
    pub hit_count: f64,
    /// `hit_count * ln P(one hit beyond required_offset)`
    pub log_bound: LogValue,
}

pub fn displacement_log_bound(
    distance: f64,
    precision: f64,
    duration: f64,
    params: &GrwParams,
) -> Result<DisplacementBound> {
    let forced = forced_displacement(0.0, precision, 1.0, duration, params);
    if !(forced.shift_factor > 0.0) {
        return Err(Error::domain(
            "displacement bound",
            "no hits in the given duration",
        ));
    }
    let required_offset = distance.abs() / forced.shift_factor;
    let per_hit = tail_hit_log_probability(required_offset, precision)?;
    let log_bound = if per_hit.is_zero() {
        LogValue::ZERO
    } else {
        LogValue::from_ln(per_hit.log_mag() * forced.hit_count)
    };
    Ok(DisplacementBound {
        required_offset,
        hit_count: forced.hit_count,
        log_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryMode {
    HitsOnly,
    #[serde(rename = "hits+spread")]
    HitsAndSpread,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOptions {
    /// Total simulated time, s.
    pub duration: f64,
    /// Record spacing, s. Samples are taken at `k * sample_interval` plus the
    /// start and end points.
    pub sample_interval: f64,
    pub mode: TrajectoryMode,
    /// Largest RK4 step used for the spreading between hits, s.
    pub max_step: f64,
    pub convention: SpreadConvention,
}

impl TrajectoryOptions {
    /// Sensible defaults for a run of `duration` at hit rate `rate`: 100
    /// samples, and quadrature steps of a quarter of the mean hit spacing.
    pub fn for_duration(duration: f64, rate: f64, mode: TrajectoryMode) -> TrajectoryOptions {
        let max_step = if rate > 0.0 {
            0.25 / rate
        } else {
            duration / 64.0
        };
        TrajectoryOptions {
            duration,
            sample_interval: duration / 100.0,
            mode,
            max_step: if max_step > 0.0 { max_step } else { 1.0 },
            convention: SpreadConvention::Verbatim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::domain(
                "duration",
                format!("{} is not >= 0", self.duration),
            ));
        }
        if !(self.sample_interval > 0.0) {
            return Err(Error::domain(
                "sample_interval",
                format!("{} is not > 0", self.sample_interval),
            ));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::domain(
                "max_step",
                format!("{} is not > 0", self.max_step),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub hits: u64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    /// Substream index within the seed's family.
    pub stream: u64,
    pub mode: TrajectoryMode,
    pub samples: Vec<TrajectorySample>,
}

impl TrajectoryRecord {
    pub fn final_sample(&self) -> &TrajectorySample {
        self.samples
            .last()
            .expect("a trajectory always has its start sample")
    }

    /// CSV with header `t_s,hits,mean_cm,variance_cm2`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_s,hits,mean_cm,variance_cm2")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.16e},{},{:.16e},{:.16e}",
                s.t, s.hits, s.mean, s.variance
            )?;
        }
        Ok(())
    }
}

/// Event-driven trajectory on stream 0 of `seed`.
pub fn simulate_trajectory(
    initial: &GaussianWavepacket,
    params: &GrwParams,
    options: &TrajectoryOptions,
    seed: u64,
) -> Result<TrajectoryRecord> {
    simulate_stream(initial, params, options, seed, 0)
}

/// Independent trajectories `0..count`, run in parallel. Member `i` uses
/// substream `i` of `master_seed`, so member 0 equals
/// [`simulate_trajectory`] with the same seed.
pub fn run_ensemble(
    initial: &GaussianWavepacket,
    params: &GrwParams,
    options: &TrajectoryOptions,
    master_seed: u64,
    count: u64,
) -> Result<Vec<TrajectoryRecord>> {
    params.validate()?;
    options.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| simulate_stream(initial, params, options, master_seed, i))
        .collect()
}

fn simulate_stream(
    initial: &GaussianWavepacket,
    params: &GrwParams,
    options: &TrajectoryOptions,
    seed: u64,
    stream: u64,
) -> Result<TrajectoryRecord> {
    params.validate()?;
    options.validate()?;
    let mut rng = substream(seed, stream);
    let samples = Simulation::new(*initial, *params, *options).run(&mut rng)?;
    Ok(TrajectoryRecord {
        seed,
        stream,
        mode: options.mode,
        samples,
    })
}

struct Simulation {
    state: GaussianWavepacket,
    initial_precision: f64,
    params: GrwParams,
    options: TrajectoryOptions,
    t: f64,
    hits: u64,
    samples: Vec<TrajectorySample>,
}

impl Simulation {
    fn new(initial: GaussianWavepacket, params: GrwParams, options: TrajectoryOptions) -> Self {
        Simulation {
            state: initial,
            initial_precision: initial.precision,
            params,
            options,
            t: 0.0,
            hits: 0,
            samples: Vec::new(),
        }
    }

    fn run(mut self, rng: &mut SimRng) -> Result<Vec<TrajectorySample>> {
        let duration = self.options.duration;
        let interval = self.options.sample_interval;
        let rate = amplified_rate(&self.params);
        self.record();
        let mut next_sample = 1u64;
        // The arrival stream and the hit centers share the generator, so hit
        // times are pulled one at a time.
        let gap = (rate > 0.0).then(|| Exp::new(rate).expect("positive rate"));
        loop {
            let t_hit = match &gap {
                Some(g) => self.t + g.sample(rng),
                None => f64::INFINITY,
            };
            let horizon = t_hit.min(duration);
            loop {
                let ts = next_sample as f64 * interval;
                if ts > horizon || ts >= duration {
                    break;
                }
                self.advance_to(ts);
                self.record();
                next_sample += 1;
            }
            if t_hit > duration {
                self.advance_to(duration);
                if self.samples.last().map(|s| s.t) != Some(duration) {
                    self.record();
                }
                break;
            }
            self.advance_to(t_hit);
            let x0 = sample_hit_center(&self.state, self.params.alpha_loc, rng);
            self.state = apply_hit(&self.state, x0, self.params.alpha_loc);
            self.hits += 1;
            if self.options.mode == TrajectoryMode::HitsOnly {
                self.state.precision =
                    self.initial_precision + self.hits as f64 * self.params.alpha_loc;
            }
        }
        Ok(self.samples)
    }

    fn record(&mut self) {
        self.samples.push(TrajectorySample {
            t: self.t,
            hits: self.hits,
            mean: self.state.mean,
            variance: self.state.variance(),
        });
    }

    /// Moves time forward, integrating `d var/dt = K t / var` with RK4 in
    /// spreading mode.
    fn advance_to(&mut self, t_end: f64) {
        if t_end <= self.t {
            return;
        }
        if self.options.mode == TrajectoryMode::HitsAndSpread {
            let k = spread_rate(self.options.convention, 1.0, 1.0, &self.params);
            let span = t_end - self.t;
            let steps = (span / self.options.max_step).ceil().max(1.0) as u64;
            let h = span / steps as f64;
            let f = |t: f64, v: f64| k * t / v;
            let mut v = self.state.variance();
            for i in 0..steps {
                let t = self.t + i as f64 * h;
                let k1 = f(t, v);
                let k2 = f(t + 0.5 * h, v + 0.5 * h * k1);
                let k3 = f(t + 0.5 * h, v + 0.5 * h * k2);
                let k4 = f(t + h, v + h * k3);
                v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            self.state.precision = 1.0 / v;
        }
        self.t = t_end;
    }
}
