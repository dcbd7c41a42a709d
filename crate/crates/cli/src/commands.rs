//! The subcommands. Each turns a resolved configuration into the full text
//! of its report.

use std::fmt::Write as _;

use grw_core::collapse_dynamics::{
    amplified_rate, apply_hit, displacement_log_bound, equilibrium_precision, equilibrium_width,
    forced_displacement, localization_shrink_rate, regime_time, run_ensemble, spread_rate,
    tail_hit_log_probability, DisplacementBound, ForcedDisplacement, TrajectoryRecord,
};
use grw_core::criteria::{enumeration_report, AnomalyThreshold, EnumerationReport};
use grw_core::logprob::log_binomial;
use grw_core::measurement_chain::{run_chain, ChainSummary};
use grw_core::{LogValue, Sign};
use serde::Serialize;

use crate::config::{Format, Resolved};
use crate::error::CliError;

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    config: &'a Resolved,
    #[serde(flatten)]
    body: T,
}

fn json_report<T: Serialize>(
    command: &str,
    config: &Resolved,
    body: T,
) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(&Report {
        command,
        config,
        body,
    })
    .map_err(|e| CliError::runtime(format!("serializing report: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Leading `#` lines of a CSV report: the command and its configuration.
fn csv_preamble(command: &str, config: &Resolved) -> String {
    format!(
        "# command={command}\n# config={}\n",
        serde_json::to_string(config).expect("config serializes")
    )
}

/// `sign,log10_mag` cells; zero renders as `0,-inf`.
fn log_cells(v: Option<LogValue>) -> String {
    match v {
        None => ",".to_owned(),
        Some(v) => match v.log10_mag() {
            Some(m) => format!("{},{m:e}", v.sign().as_i8()),
            None => format!("{},-inf", Sign::Zero.as_i8()),
        },
    }
}

#[derive(Serialize)]
struct Analytics {
    amplified_rate_per_s: f64,
    regime_time_s: f64,
    equilibrium_width_cm: f64,
    equilibrium_precision_per_cm2: f64,
}

impl Analytics {
    fn of(config: &Resolved) -> Analytics {
        let params = config.grw_params();
        Analytics {
            amplified_rate_per_s: amplified_rate(&params),
            regime_time_s: regime_time(&params),
            equilibrium_width_cm: equilibrium_width(&params),
            equilibrium_precision_per_cm2: equilibrium_precision(&params),
        }
    }

    fn csv_lines(&self) -> String {
        format!(
            "# amplified_rate_per_s={:e}\n# regime_time_s={:e}\n# equilibrium_width_cm={:e}\n# equilibrium_precision_per_cm2={:e}\n",
            self.amplified_rate_per_s, self.regime_time_s, self.equilibrium_width_cm, self.equilibrium_precision_per_cm2
        )
    }
}

#[derive(Serialize)]
struct TrajectoryBody {
    analytics: Analytics,
    trajectories: Vec<TrajectoryRecord>,
}

pub fn trajectory(config: &Resolved) -> Result<String, CliError> {
    let records = run_ensemble(
        &config.initial_packet()?,
        &config.grw_params(),
        &config.trajectory_options(),
        config.seed,
        config.ensemble,
    )?;
    let analytics = Analytics::of(config);
    match config.format {
        Format::Json => json_report(
            "trajectory",
            config,
            TrajectoryBody {
                analytics,
                trajectories: records,
            },
        ),
        Format::Csv => {
            let mut out = csv_preamble("trajectory", config) + &analytics.csv_lines();
            out.push_str("member,t_s,hits,mean_cm,variance_cm2\n");
            for r in &records {
                for s in &r.samples {
                    writeln!(
                        out,
                        "{},{:.16e},{},{:.16e},{:.16e}",
                        r.stream, s.t, s.hits, s.mean, s.variance
                    )
                    .unwrap();
                }
            }
            Ok(out)
        }
    }
}

#[derive(Serialize)]
struct FarHit {
    offset_cm: f64,
    mean_after_cm: f64,
    precision_after_per_cm2: f64,
    /// Density of the hit-centre law at that point.
    log_density: LogValue,
    /// Squared-amplitude weight of the packet beyond the offset.
    tail_log_probability: LogValue,
}

#[derive(Serialize)]
struct BalancePoint {
    t_s: f64,
    spread_rate: f64,
    shrink_rate: f64,
}

#[derive(Serialize)]
struct EquilibriumBody {
    analytics: Analytics,
    forced_displacement: ForcedDisplacement,
    far_hit: FarHit,
    displacement_bound: Option<DisplacementBound>,
    rate_balance: Vec<BalancePoint>,
}

/// Variance growth from spreading against shrinkage from the mean hit rate,
/// from a flat start, on a log grid around the regime time.
fn rate_balance(config: &Resolved) -> Vec<BalancePoint> {
    let params = config.grw_params();
    let t_regime = regime_time(&params);
    if !t_regime.is_finite() {
        return Vec::new();
    }
    let al = amplified_rate(&params) * params.alpha_loc;
    (0..=60)
        .map(|i| {
            let t = t_regime * 10f64.powf(-3.0 + i as f64 / 10.0);
            BalancePoint {
                t_s: t,
                spread_rate: spread_rate(config.convention, al * t, t, &params),
                shrink_rate: localization_shrink_rate(0.0, t, &params),
            }
        })
        .collect()
}

pub fn equilibrium(config: &Resolved) -> Result<String, CliError> {
    let params = config.grw_params();
    let packet = config.initial_packet()?;
    let b = config.initial_precision;
    let x0 = config.initial_mean + config.hit_offset;
    let hit = apply_hit(&packet, x0, params.alpha_loc);
    let body = EquilibriumBody {
        analytics: Analytics::of(config),
        forced_displacement: forced_displacement(
            config.initial_mean,
            b,
            x0,
            config.horizon,
            &params,
        ),
        far_hit: FarHit {
            offset_cm: config.hit_offset,
            mean_after_cm: hit.mean(),
            precision_after_per_cm2: hit.precision(),
            log_density: hit.log_norm(),
            tail_log_probability: tail_hit_log_probability(config.hit_offset, b)?,
        },
        displacement_bound: displacement_log_bound(config.distance, b, config.horizon, &params)
            .ok(),
        rate_balance: rate_balance(config),
    };
    match config.format {
        Format::Json => json_report("equilibrium", config, body),
        Format::Csv => {
            let mut out = csv_preamble("equilibrium", config) + &body.analytics.csv_lines();
            let f = &body.forced_displacement;
            writeln!(
                out,
                "# forced_shift_factor={:e}\n# forced_hit_count={:e}",
                f.shift_factor, f.hit_count
            )
            .unwrap();
            writeln!(
                out,
                "# far_hit_mean_after_cm={:e}",
                body.far_hit.mean_after_cm
            )
            .unwrap();
            writeln!(
                out,
                "# far_hit_tail_log10_mag={}",
                log_cells(Some(body.far_hit.tail_log_probability))
            )
            .unwrap();
            out.push_str("t_s,spread_rate_cm2_per_s,shrink_rate_cm2_per_s\n");
            for p in &body.rate_balance {
                writeln!(out, "{:e},{:e},{:e}", p.t_s, p.spread_rate, p.shrink_rate).unwrap();
            }
            Ok(out)
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    n: u64,
    at_threshold: bool,
    per_marble_holds: bool,
    all_in_holds: bool,
    all_in_refuted: bool,
    scalar_product_log: LogValue,
    ratio_sq_in: Option<LogValue>,
    accessible_in: bool,
    anomaly_exhibited: bool,
}

#[derive(Serialize)]
struct SweepBody {
    anomaly_threshold: AnomalyThreshold,
    rows: Vec<SweepRow>,
}

pub fn anomaly_sweep(config: &Resolved) -> Result<String, CliError> {
    let threshold = config.threshold()?;
    let rows = config
        .n_grid
        .iter()
        .map(|&n| {
            let r = enumeration_report(&config.product_state(n)?, config.p, config.epsilon)?;
            Ok(SweepRow {
                n,
                at_threshold: threshold == AnomalyThreshold::At(n),
                per_marble_holds: r.per_marble.iter().all(|m| m.verdict.holds),
                all_in_holds: r.all_in_fuzzy.holds,
                all_in_refuted: r.all_in_fuzzy.refuted,
                scalar_product_log: r.scalar_product_log,
                ratio_sq_in: r.accessibility_in.ratio_sq,
                accessible_in: r.accessibility_in.accessible,
                anomaly_exhibited: r.anomaly_exhibited,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    match config.format {
        Format::Json => json_report(
            "anomaly-sweep",
            config,
            SweepBody {
                anomaly_threshold: threshold,
                rows,
            },
        ),
        Format::Csv => {
            let mut out = csv_preamble("anomaly-sweep", config);
            writeln!(
                out,
                "# anomaly_threshold={}",
                threshold.value().map_or("never".into(), |n| n.to_string())
            )
            .unwrap();
            out.push_str(
                "n,at_threshold,per_marble_holds,all_in_holds,all_in_refuted,proximity_sign,proximity_log10_mag,\
                 ratio_sq_in_sign,ratio_sq_in_log10_mag,accessible_in,anomaly_exhibited\n",
            );
            for r in &rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    r.n,
                    r.at_threshold,
                    r.per_marble_holds,
                    r.all_in_holds,
                    r.all_in_refuted,
                    log_cells(Some(r.scalar_product_log)),
                    log_cells(r.ratio_sq_in),
                    r.accessible_in,
                    r.anomaly_exhibited
                )
                .unwrap();
            }
            Ok(out)
        }
    }
}

pub fn accessibility(config: &Resolved) -> Result<String, CliError> {
    let report: EnumerationReport =
        enumeration_report(&config.product_state(config.n)?, config.p, config.epsilon)?;
    match config.format {
        Format::Json => json_report("accessibility", config, report),
        Format::Csv => {
            let mut out = csv_preamble("accessibility", config);
            writeln!(
                out,
                "# expected_in_mass={}",
                log_cells(Some(report.expected_in_mass))
            )
            .unwrap();
            out.push_str(
                "region,mean_mass_sign,mean_mass_log10_mag,variance_sign,variance_log10_mag,\
                 ratio_sq_sign,ratio_sq_log10_mag,accessible,vacuous\n",
            );
            for a in [&report.accessibility_in, &report.accessibility_out] {
                let region = serde_json::to_value(a.region).expect("region serializes");
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    region.as_str().unwrap_or_default(),
                    log_cells(Some(a.mean_mass)),
                    log_cells(Some(a.variance)),
                    log_cells(a.ratio_sq),
                    a.accessible,
                    a.vacuous
                )
                .unwrap();
            }
            Ok(out)
        }
    }
}

#[derive(Serialize)]
struct ChainBody {
    #[serde(flatten)]
    summary: ChainSummary,
    /// Born weight of each count, for comparison with `k_histogram`.
    expected_k_distribution: Vec<f64>,
}

pub fn chain(config: &Resolved) -> Result<String, CliError> {
    let params = config.chain_params();
    params.validate().map_err(CliError::from_domain)?;
    let summary = run_chain(&params, config.trials)?;
    let (n, a) = (params.n, params.alpha_sq);
    let expected = (0..=n)
        .map(|k| {
            let binom = log_binomial(n, k)?;
            Ok(
                (binom * LogValue::from_real(a).powi(k) * LogValue::from_real(1.0 - a).powi(n - k))
                    .to_real(),
            )
        })
        .collect::<Result<Vec<f64>, grw_core::Error>>()?;
    match config.format {
        Format::Json => json_report(
            "chain",
            config,
            ChainBody {
                summary,
                expected_k_distribution: expected,
            },
        ),
        Format::Csv => {
            let mut out = csv_preamble("chain", config);
            writeln!(out, "# trials={}", summary.trials).unwrap();
            writeln!(out, "# consistency_rate={:e}", summary.consistency_rate).unwrap();
            writeln!(
                out,
                "# empirical_mismatch_rate={:e}",
                summary.empirical_mismatch_rate
            )
            .unwrap();
            writeln!(
                out,
                "# mismatch={}",
                log_cells(Some(summary.mismatch_log10))
            )
            .unwrap();
            writeln!(out, "# count_disagreements={}", summary.count_disagreements).unwrap();
            out.push_str("k,marbles_in_trials,o_reading_trials,expected_probability\n");
            for (k, p) in expected.iter().enumerate() {
                writeln!(
                    out,
                    "{k},{},{},{p:e}",
                    summary.k_histogram[k], summary.o_histogram[k]
                )
                .unwrap();
            }
            Ok(out)
        }
    }
}
