//! Run configuration: flat key-value settings from a file and the command
//! line, resolved against defaults into one concrete [`Resolved`] record.
//!
//! Precedence per key is flag > file > default. A file may be TOML or a JSON
//! report previously written by this tool, whose `config` object is read
//! back so the run can be repeated.

use std::path::Path;

use clap::{Args, ValueEnum};
use grw_core::collapse_dynamics::{
    GaussianWavepacket, GrwParams, SpreadConvention, TrajectoryMode, TrajectoryOptions,
};
use grw_core::criteria::{anomaly_threshold, AnomalyThreshold};
use grw_core::measurement_chain::{ChainParams, CollapseOrdering, FlipModel};
use grw_core::state_algebra::{MarbleState, ProductState};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

fn parse_named<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// Every setting, each optional. Field names are the file keys; the flags
/// are the kebab-case forms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Master random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Localization accuracy alpha, cm^-2.
    #[arg(long, global = true)]
    pub alpha_loc: Option<f64>,
    /// Per-nucleon hit rate, s^-1.
    #[arg(long, global = true)]
    pub lambda_micro: Option<f64>,
    #[arg(long, global = true)]
    pub n_nucleons: Option<f64>,
    /// Mass, g.
    #[arg(long, global = true)]
    pub mass: Option<f64>,
    /// Reduced Planck constant, erg s.
    #[arg(long, global = true)]
    pub hbar: Option<f64>,
    /// Total hit rate, s^-1. Replaces lambda_micro and n_nucleons.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,

    /// Initial packet centre, cm.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub initial_mean: Option<f64>,
    /// Initial packet precision, cm^-2.
    #[arg(long, global = true)]
    pub initial_precision: Option<f64>,
    /// Simulated time, s.
    #[arg(long, global = true)]
    pub duration: Option<f64>,
    /// Spacing of recorded samples, s.
    #[arg(long, global = true)]
    pub sample_interval: Option<f64>,
    /// Largest integration step between hits, s.
    #[arg(long, global = true)]
    pub max_step: Option<f64>,
    /// hits-only or hits+spread.
    #[arg(long, global = true, value_parser = parse_named::<TrajectoryMode>)]
    pub mode: Option<TrajectoryMode>,
    /// Spreading prefactor convention: verbatim or standard.
    #[arg(long, global = true, value_parser = parse_named::<SpreadConvention>)]
    pub convention: Option<SpreadConvention>,
    /// Number of trajectories.
    #[arg(long, global = true)]
    pub ensemble: Option<u64>,

    /// Time over which forced hits act, s.
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Distance of a single far hit from the packet centre, cm.
    #[arg(long, global = true)]
    pub hit_offset: Option<f64>,
    /// Displacement whose probability is bounded, cm.
    #[arg(long, global = true)]
    pub distance: Option<f64>,

    /// Number of marbles.
    #[arg(long, global = true)]
    pub n: Option<u64>,
    /// Probability of a marble being in the box.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_sq: Option<f64>,
    /// Probability of a marble being out of the box (precise near alpha_sq = 1).
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_sq: Option<f64>,
    /// Tolerance of the amplitude-proportion criterion, in (0, 0.5).
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Accessibility cutoff on the variance-to-mean-squared ratio.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Marble counts to sweep, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub n_grid: Option<Vec<u64>>,
    /// Points in the automatic sweep grid.
    #[arg(long, global = true)]
    pub sweep_points: Option<u32>,

    /// Pointer fidelity |gamma|^2, in (0.5, 1].
    #[arg(long, global = true)]
    pub gamma_sq: Option<f64>,
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// uniform or adjacent.
    #[arg(long, global = true, value_parser = parse_named::<FlipModel>)]
    pub flip_model: Option<FlipModel>,
    /// sequential or simultaneous.
    #[arg(long, global = true, value_parser = parse_named::<CollapseOrdering>)]
    pub ordering: Option<CollapseOrdering>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr; $($f:ident),* $(,)?) => {
        Settings { $($f: $hi.$f.or($lo.$f),)* }
    };
}

impl Settings {
    /// `self` where set, otherwise `lower`. The marble amplitude is one
    /// setting given either way, so setting either form hides both forms
    /// below; the same holds for `rate` against the rate components.
    pub fn over(self, lower: Settings) -> Settings {
        let mut lower = lower;
        if self.alpha_sq.is_some() || self.beta_sq.is_some() {
            lower.alpha_sq = None;
            lower.beta_sq = None;
        }
        if self.lambda_micro.is_some() || self.n_nucleons.is_some() {
            lower.rate = None;
        }
        overlay!(self, lower;
            seed, format, alpha_loc, lambda_micro, n_nucleons, mass, hbar, rate,
            initial_mean, initial_precision, duration, sample_interval, max_step, mode,
            convention, ensemble, horizon, hit_offset, distance, n, alpha_sq, beta_sq, p,
            epsilon, n_grid, sweep_points, gamma_sq, trials, flip_model, ordering,
        )
    }

    pub fn load(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Settings::parse(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// TOML, or JSON: either a bare settings object or a report carrying one
    /// under `config`.
    pub fn parse(text: &str) -> Result<Settings, String> {
        if text.trim_start().starts_with('{') {
            let mut value: serde_json::Value =
                serde_json::from_str(text).map_err(|e| e.to_string())?;
            if let Some(config) = value.get_mut("config") {
                value = config.take();
            }
            serde_json::from_value(value).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }
}

/// Every setting with a concrete value. Serialized into each report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub format: Format,
    pub alpha_loc: f64,
    pub lambda_micro: f64,
    pub n_nucleons: f64,
    pub mass: f64,
    pub hbar: f64,
    pub initial_mean: f64,
    pub initial_precision: f64,
    pub duration: f64,
    pub sample_interval: f64,
    pub max_step: f64,
    pub mode: TrajectoryMode,
    pub convention: SpreadConvention,
    pub ensemble: u64,
    pub horizon: f64,
    pub hit_offset: f64,
    pub distance: f64,
    pub n: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_sq: Option<f64>,
    pub p: f64,
    pub epsilon: f64,
    pub n_grid: Vec<u64>,
    pub sweep_points: u32,
    pub gamma_sq: f64,
    pub trials: u64,
    pub flip_model: FlipModel,
    pub ordering: CollapseOrdering,
}

pub const DEFAULT_BETA_SQ: f64 = 1e-9;

impl Resolved {
    pub fn from_settings(s: Settings) -> Result<Resolved, CliError> {
        let physical = GrwParams::default();
        let mut grw = GrwParams {
            alpha_loc: s.alpha_loc.unwrap_or(physical.alpha_loc),
            lambda_micro: s.lambda_micro.unwrap_or(physical.lambda_micro),
            n_nucleons: s.n_nucleons.unwrap_or(physical.n_nucleons),
            mass: s.mass.unwrap_or(physical.mass),
            hbar: s.hbar.unwrap_or(physical.hbar),
        };
        if let Some(rate) = s.rate {
            grw = grw.with_rate(rate);
        }
        grw.validate().map_err(CliError::from_domain)?;
        let rate = grw.lambda_micro * grw.n_nucleons;

        let duration = s.duration.unwrap_or(1e-5);
        let mode = s.mode.unwrap_or(TrajectoryMode::HitsAndSpread);
        let auto = TrajectoryOptions::for_duration(duration, rate, mode);
        let (alpha_sq, beta_sq) = match (s.alpha_sq, s.beta_sq) {
            (Some(_), Some(_)) => {
                return Err(CliError::config("set only one of alpha_sq and beta_sq"))
            }
            (None, None) => (None, Some(DEFAULT_BETA_SQ)),
            other => other,
        };

        let mut r = Resolved {
            seed: s.seed.unwrap_or(0),
            format: s.format.unwrap_or_default(),
            alpha_loc: grw.alpha_loc,
            lambda_micro: grw.lambda_micro,
            n_nucleons: grw.n_nucleons,
            mass: grw.mass,
            hbar: grw.hbar,
            initial_mean: s.initial_mean.unwrap_or(0.0),
            initial_precision: s.initial_precision.unwrap_or(1e22),
            duration,
            sample_interval: s.sample_interval.unwrap_or(auto.sample_interval),
            max_step: s.max_step.unwrap_or(auto.max_step),
            mode,
            convention: s.convention.unwrap_or_default(),
            ensemble: s.ensemble.unwrap_or(1),
            horizon: s.horizon.unwrap_or(86_400.0),
            hit_offset: s.hit_offset.unwrap_or(1e14),
            distance: s.distance.unwrap_or(10.0),
            n: s.n.unwrap_or(10),
            alpha_sq,
            beta_sq,
            p: s.p.unwrap_or(0.4),
            epsilon: s.epsilon.unwrap_or(1e-6),
            n_grid: Vec::new(),
            sweep_points: s.sweep_points.unwrap_or(24),
            gamma_sq: s.gamma_sq.unwrap_or(0.99),
            trials: s.trials.unwrap_or(100_000),
            flip_model: s.flip_model.unwrap_or_default(),
            ordering: s.ordering.unwrap_or_default(),
        };
        r.validate()?;
        r.n_grid = match s.n_grid {
            Some(grid) => grid,
            None => r.auto_grid()?,
        };
        if r.n_grid.is_empty() || r.n_grid.contains(&0) {
            return Err(CliError::config(
                "n_grid needs at least one entry, all >= 1",
            ));
        }
        Ok(r)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.initial_packet()?;
        self.trajectory_options()
            .validate()
            .map_err(CliError::from_domain)?;
        if self.ensemble == 0 || self.trials == 0 || self.n == 0 || self.sweep_points < 2 {
            return Err(CliError::config(
                "ensemble, trials and n must be >= 1, sweep_points >= 2",
            ));
        }
        for (name, v) in [
            ("horizon", self.horizon),
            ("hit_offset", self.hit_offset),
            ("distance", self.distance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        let state = self.product_state(1)?;
        anomaly_threshold(state.base().log_prob_in(), self.p).map_err(CliError::from_domain)?;
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(CliError::config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn grw_params(&self) -> GrwParams {
        GrwParams {
            alpha_loc: self.alpha_loc,
            lambda_micro: self.lambda_micro,
            n_nucleons: self.n_nucleons,
            mass: self.mass,
            hbar: self.hbar,
        }
    }

    pub fn initial_packet(&self) -> Result<GaussianWavepacket, CliError> {
        GaussianWavepacket::new(self.initial_mean, self.initial_precision)
            .map_err(CliError::from_domain)
    }

    pub fn trajectory_options(&self) -> TrajectoryOptions {
        TrajectoryOptions {
            duration: self.duration,
            sample_interval: self.sample_interval,
            mode: self.mode,
            max_step: self.max_step,
            convention: self.convention,
        }
    }

    pub fn marble(&self) -> Result<MarbleState, CliError> {
        match (self.alpha_sq, self.beta_sq) {
            (Some(a), _) => MarbleState::new(a),
            (None, Some(b)) => MarbleState::from_one_minus(b),
            (None, None) => MarbleState::from_one_minus(DEFAULT_BETA_SQ),
        }
        .map_err(CliError::from_domain)
    }

    pub fn product_state(&self, n: u64) -> Result<ProductState, CliError> {
        ProductState::homogeneous(self.marble()?, n).map_err(CliError::from_domain)
    }

    pub fn chain_params(&self) -> ChainParams {
        let alpha_sq = match (self.alpha_sq, self.beta_sq) {
            (Some(a), _) => a,
            (None, b) => 1.0 - b.unwrap_or(DEFAULT_BETA_SQ),
        };
        ChainParams {
            n: self.n,
            alpha_sq,
            gamma_sq: self.gamma_sq,
            seed: self.seed,
            flip_model: self.flip_model,
            ordering: self.ordering,
        }
    }

    pub fn threshold(&self) -> Result<AnomalyThreshold, CliError> {
        anomaly_threshold(self.marble()?.log_prob_in(), self.p).map_err(CliError::from_domain)
    }

    /// Log-spaced counts from 1 to a few times the anomaly threshold, plus the
    /// threshold and the count just below it.
    fn auto_grid(&self) -> Result<Vec<u64>, CliError> {
        let threshold = self.threshold()?;
        let top = match threshold {
            AnomalyThreshold::At(n) => n.saturating_mul(4).max(10),
            AnomalyThreshold::Never => 1_000_000_000_000,
        };
        let steps = self.sweep_points - 1;
        let mut grid: Vec<u64> = (0..=steps)
            .map(|i| (top as f64).powf(i as f64 / steps as f64).round().max(1.0) as u64)
            .collect();
        if let AnomalyThreshold::At(n) = threshold {
            grid.push(n);
            if n > 1 {
                grid.push(n - 1);
            }
        }
        grid.sort_unstable();
        grid.dedup();
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_physical() {
        let r = Resolved::from_settings(Settings::default()).unwrap();
        assert_eq!(r.grw_params(), GrwParams::default());
        assert_eq!(r.beta_sq, Some(DEFAULT_BETA_SQ));
        assert_eq!(r.format, Format::Json);
        assert!(r.n_grid.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file = Settings::parse("seed = 5\nn = 40\np = 0.2\n").unwrap();
        let flags = Settings {
            n: Some(7),
            ..Settings::default()
        };
        let r = Resolved::from_settings(flags.over(file)).unwrap();
        assert_eq!((r.seed, r.n, r.p, r.gamma_sq), (5, 7, 0.2, 0.99));
    }

    #[test]
    fn amplitude_forms_shadow_each_other() {
        let file = Settings::parse("beta_sq = 1e-3").unwrap();
        let flags = Settings {
            alpha_sq: Some(0.9),
            ..Settings::default()
        };
        let r = Resolved::from_settings(flags.over(file)).unwrap();
        assert_eq!((r.alpha_sq, r.beta_sq), (Some(0.9), None));
        let both = Settings::parse("beta_sq = 1e-3\nalpha_sq = 0.5").unwrap();
        assert!(Resolved::from_settings(both).is_err());
    }

    #[test]
    fn rate_folds_into_components() {
        let r = Resolved::from_settings(Settings::parse("rate = 0").unwrap()).unwrap();
        assert_eq!((r.lambda_micro, r.n_nucleons), (0.0, 1.0));
    }

    #[test]
    fn embedded_config_round_trips() {
        let r = Resolved::from_settings(
            Settings::parse("seed = 3\nalpha_sq = 0.999\nmode = \"hits-only\"").unwrap(),
        )
        .unwrap();
        let report = serde_json::json!({ "command": "x", "config": r });
        let again = Resolved::from_settings(Settings::parse(&report.to_string()).unwrap()).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "p = 0.6",
            "alpha_sq = 0.0",
            "epsilon = 0.0",
            "mass = -1.0",
            "bogus = 1",
        ] {
            let parsed = Settings::parse(text);
            assert!(
                parsed.is_err() || Resolved::from_settings(parsed.unwrap()).is_err(),
                "{text}"
            );
        }
    }

    #[test]
    fn auto_grid_straddles_threshold() {
        let r =
            Resolved::from_settings(Settings::parse("beta_sq = 1e-3\np = 0.4").unwrap()).unwrap();
        assert!(r.n_grid.contains(&915) && r.n_grid.contains(&916));
        let never = Resolved::from_settings(Settings::parse("alpha_sq = 1.0").unwrap()).unwrap();
        assert_eq!(never.threshold().unwrap(), AnomalyThreshold::Never);
    }
}
