//! Point and probabilistic forecast scores: MAE, MAPE, CRPS (quadrature and
//! closed form), coverage between bounds, and seasonal reports.
//!
//! Means are accumulated with [`sorted_sum`], so every score is
//! bit-identical under a common permutation of its inputs.

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{std_normal_cdf, std_normal_pdf};
use crate::numeric::{sorted_mean, sorted_sum};

pub const DEFAULT_MAPE_FLOOR_KW: f64 = 0.1;
/// Default MAPE denominator floor relative to the mean absolute observation.
pub const DEFAULT_MAPE_FLOOR_REL: f64 = 0.1;

/// Gaussian CRPS quadrature: half-width in σ and step as a fraction of σ.
pub const GAUSSIAN_BOUND_SIGMAS: f64 = 10.0;
pub const GAUSSIAN_STEP_FRACTION: f64 = 1e-3;

const CDF_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("no points to evaluate")]
    Empty,
    #[error("predictive CDF decreases or leaves [0, 1] near y = {at}")]
    NonMonotoneCdf { at: f64 },
    #[error("sigma must be positive and finite, got {0}")]
    NonpositiveSigma(f64),
    #[error("invalid quadrature: {0}")]
    InvalidQuadrature(String),
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), MetricsError> {
    if expected != got {
        return Err(MetricsError::LengthMismatch { what, expected, got });
    }
    Ok(())
}

fn mean_of(mut terms: Vec<f64>) -> Result<f64, MetricsError> {
    sorted_mean(&mut terms).ok_or(MetricsError::Empty)
}

pub fn mae(pred: &[f64], obs: &[f64]) -> Result<f64, MetricsError> {
    check_len("obs", pred.len(), obs.len())?;
    mean_of(pred.iter().zip(obs).map(|(p, o)| (p - o).abs()).collect())
}

/// Mean absolute percentage error with denominators floored at `floor_kw`.
pub fn mape(pred: &[f64], obs: &[f64], floor_kw: f64) -> Result<f64, MetricsError> {
    check_len("obs", pred.len(), obs.len())?;
    mean_of(
        pred.iter()
            .zip(obs)
            .map(|(p, o)| (p - o).abs() / o.abs().max(floor_kw) * 100.0)
            .collect(),
    )
}

/// Integration window for [`crps_integral`]. Outside `[lo, hi]` the CDF is
/// treated as saturated (0 below, 1 above).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Quadrature {
    pub fn gaussian(mu: f64, sigma: f64) -> Self {
        Self {
            lo: mu - GAUSSIAN_BOUND_SIGMAS * sigma,
            hi: mu + GAUSSIAN_BOUND_SIGMAS * sigma,
            step: GAUSSIAN_STEP_FRACTION * sigma,
        }
    }
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        x
    } else if x == 0.0 {
        f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// `∫_{-∞}^{y} F² + ∫_{y}^{∞} (1 − F)²` by composite Simpson.
///
/// The domain is cut at `y_obs` and at every entry of `breakpoints`; panel
/// endpoints on a cut are evaluated one ulp inside the panel, so CDFs with
/// jumps at the breakpoints integrate exactly.
pub fn crps_integral<F: Fn(f64) -> f64>(
    cdf: F,
    y_obs: f64,
    quad: &Quadrature,
    breakpoints: &[f64],
) -> Result<f64, MetricsError> {
    let Quadrature { lo, hi, step } = *quad;
    if !(lo < hi) || !(step > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(MetricsError::InvalidQuadrature(format!(
            "bounds [{lo}, {hi}] with step {step}"
        )));
    }
    let mut knots = vec![lo, hi];
    knots.extend(
        std::iter::once(y_obs)
            .chain(breakpoints.iter().copied())
            .filter(|b| *b > lo && *b < hi),
    );
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    let mut prev_f = 0.0;
    let mut segments = Vec::with_capacity(knots.len());
    for pair in knots.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let below = b <= y_obs;
        let mut panels = ((b - a) / step).ceil().max(2.0) as usize;
        panels += panels % 2;
        let h = (b - a) / panels as f64;
        let mut acc = 0.0;
        for k in 0..=panels {
            let x = match k {
                0 => next_up(a),
                k if k == panels => next_down(b),
                k => a + h * k as f64,
            };
            let f = cdf(x);
            if !(f >= prev_f - CDF_TOLERANCE) || !(-CDF_TOLERANCE..=1.0 + CDF_TOLERANCE).contains(&f) {
                return Err(MetricsError::NonMonotoneCdf { at: x });
            }
            prev_f = f;
            let g = if below { f * f } else { (1.0 - f) * (1.0 - f) };
            let w = if k == 0 || k == panels {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * g;
        }
        segments.push(acc * h / 3.0);
    }
    // Saturated tails: F = 0 on [y, lo) contributes (1 - 0)², F = 1 on (hi, y] contributes 1².
    if y_obs < lo {
        segments.push(lo - y_obs);
    }
    if y_obs > hi {
        segments.push(y_obs - hi);
    }
    Ok(sorted_sum(&mut segments))
}

/// [`crps_integral`] of a Gaussian over μ ± 10σ with step σ/1000.
pub fn crps_integral_gaussian(mu: f64, sigma: f64, y_obs: f64) -> Result<f64, MetricsError> {
    check_sigma(sigma)?;
    crps_integral(
        |x| std_normal_cdf((x - mu) / sigma),
        y_obs,
        &Quadrature::gaussian(mu, sigma),
        &[],
    )
}

fn check_sigma(sigma: f64) -> Result<(), MetricsError> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(MetricsError::NonpositiveSigma(sigma))
    }
}

/// Closed-form CRPS of `N(mu, sigma²)` against `y_obs`.
pub fn crps_gaussian(mu: f64, sigma: f64, y_obs: f64) -> Result<f64, MetricsError> {
    check_sigma(sigma)?;
    let z = (y_obs - mu) / sigma;
    Ok(sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - 1.0 / PI.sqrt()))
}

/// Mean per-step Gaussian CRPS.
pub fn crps_avg(mu: &[f64], sigma: &[f64], obs: &[f64]) -> Result<f64, MetricsError> {
    check_len("sigma", mu.len(), sigma.len())?;
    check_len("obs", mu.len(), obs.len())?;
    let terms = mu
        .iter()
        .zip(sigma)
        .zip(obs)
        .map(|((&m, &s), &y)| crps_gaussian(m, s, y))
        .collect::<Result<Vec<_>, _>>()?;
    mean_of(terms)
}

/// Percentage of observations strictly inside `μ ± σ`.
pub fn pbb(mu: &[f64], sigma: &[f64], obs: &[f64]) -> Result<f64, MetricsError> {
    pbb_z(mu, sigma, obs, 1.0)
}

/// Percentage of observations strictly inside `μ ± zσ`.
pub fn pbb_z(mu: &[f64], sigma: &[f64], obs: &[f64], z: f64) -> Result<f64, MetricsError> {
    check_len("sigma", mu.len(), sigma.len())?;
    check_len("obs", mu.len(), obs.len())?;
    if mu.is_empty() {
        return Err(MetricsError::Empty);
    }
    let inside = mu
        .iter()
        .zip(sigma)
        .zip(obs)
        .filter(|((&m, &s), &y)| m - z * s < y && y < m + z * s)
        .count();
    Ok(100.0 * inside as f64 / mu.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seasons {
    pub winter_months: Vec<u32>,
    pub summer_months: Vec<u32>,
}

impl Default for Seasons {
    fn default() -> Self {
        Self {
            winter_months: vec![12, 1, 2],
            summer_months: vec![6, 7, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    pub mape_floor_kw: f64,
    /// MAPE denominators are also floored at this fraction of the mean
    /// absolute observation, so the floor scales with the series.
    pub mape_floor_rel: f64,
    pub seasons: Seasons,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            mape_floor_kw: DEFAULT_MAPE_FLOOR_KW,
            mape_floor_rel: DEFAULT_MAPE_FLOOR_REL,
            seasons: Seasons::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub mae_kw: f64,
    pub mape_pct: f64,
    pub pbb_pct: f64,
    pub crps: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub overall: usize,
    pub winter: usize,
    pub summer: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Which data the report covers, e.g. `test`.
    pub split: String,
    pub overall: MetricBlock,
    /// `null` when no point falls in the season.
    pub winter: Option<MetricBlock>,
    pub summer: Option<MetricBlock>,
    pub counts: Counts,
    /// Effective MAPE denominator floor after scaling.
    pub mape_floor_kw: f64,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

fn block(mu: &[f64], sigma: &[f64], obs: &[f64], floor_kw: f64) -> Result<MetricBlock, MetricsError> {
    Ok(MetricBlock {
        mae_kw: mae(mu, obs)?,
        mape_pct: mape(mu, obs, floor_kw)?,
        pbb_pct: pbb(mu, sigma, obs)?,
        crps: crps_avg(mu, sigma, obs)?,
    })
}

fn subset(idx: &[usize], v: &[f64]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Overall, winter and summer metric blocks for aligned point forecasts.
pub fn seasonal_report(
    mu: &[f64],
    sigma: &[f64],
    obs: &[f64],
    timestamps: &[NaiveDateTime],
    split: &str,
    opts: &ReportOptions,
) -> Result<EvalReport, MetricsError> {
    check_len("sigma", mu.len(), sigma.len())?;
    check_len("obs", mu.len(), obs.len())?;
    check_len("timestamps", mu.len(), timestamps.len())?;
    let mean_abs = obs.iter().map(|o| o.abs()).sum::<f64>() / obs.len().max(1) as f64;
    let floor = opts.mape_floor_kw.max(opts.mape_floor_rel * mean_abs);
    let overall = block(mu, sigma, obs, floor)?;
    let season_block = |months: &[u32]| -> Result<(Option<MetricBlock>, usize), MetricsError> {
        let idx: Vec<usize> = (0..mu.len())
            .filter(|&i| months.contains(&timestamps[i].month()))
            .collect();
        if idx.is_empty() {
            return Ok((None, 0));
        }
        let b = block(&subset(&idx, mu), &subset(&idx, sigma), &subset(&idx, obs), floor)?;
        Ok((Some(b), idx.len()))
    };
    let (winter, n_winter) = season_block(&opts.seasons.winter_months)?;
    let (summer, n_summer) = season_block(&opts.seasons.summer_months)?;
    Ok(EvalReport {
        split: split.to_string(),
        overall,
        winter,
        summer,
        counts: Counts {
            overall: mu.len(),
            winter: n_winter,
            summer: n_summer,
        },
        mape_floor_kw: floor,
        config: serde_json::Value::Null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn mae_and_mape_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(mae(&[1.0], &[]), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(mae(&[], &[]), Err(MetricsError::Empty)));
        assert!((mape(&[1.1], &[1.0], 0.1).unwrap() - 10.0).abs() < 1e-12);
        assert!((mape(&[0.05], &[0.0], 0.1).unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(mape(&[2.0], &[2.0], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn step_cdf_reduces_to_absolute_error() {
        for &(mu, y) in &[(0.3, 1.7), (2.0, -1.25), (0.5, 0.5)] {
            let q = Quadrature {
                lo: -5.0,
                hi: 5.0,
                step: 0.01,
            };
            let c = crps_integral(|x| if x >= mu { 1.0 } else { 0.0 }, y, &q, &[mu]).unwrap();
            assert!((c - f64::abs(mu - y)).abs() < 1e-12, "{c}");
        }
    }

    #[test]
    fn standard_gaussian_at_mean() {
        let analytic = (2f64.sqrt() - 1.0) / PI.sqrt();
        let q = crps_integral_gaussian(0.0, 1.0, 0.0).unwrap();
        let c = crps_gaussian(0.0, 1.0, 0.0).unwrap();
        assert!((q - analytic).abs() < 1e-10);
        assert!((c - analytic).abs() < 1e-14);
        assert!((c - 0.2337).abs() < 1e-4);
    }

    #[test]
    fn tails_outside_bounds_are_saturated() {
        let c = crps_integral_gaussian(0.0, 0.1, 20.0).unwrap();
        assert!((c - crps_gaussian(0.0, 0.1, 20.0).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn decreasing_cdf_is_rejected() {
        let q = Quadrature {
            lo: 0.0,
            hi: 1.0,
            step: 0.1,
        };
        assert!(matches!(
            crps_integral(|x| 1.0 - x, 0.5, &q, &[]),
            Err(MetricsError::NonMonotoneCdf { .. })
        ));
        assert!(matches!(crps_gaussian(0.0, 0.0, 1.0), Err(MetricsError::NonpositiveSigma(_))));
    }

    #[test]
    fn pbb_strict_bounds() {
        assert_eq!(pbb(&[1.0, 2.0], &[0.5, 0.5], &[1.0, 2.0]).unwrap(), 100.0);
        assert_eq!(pbb(&[1.0, 2.0], &[0.5, 0.5], &[1.5, 2.0]).unwrap(), 50.0);
        assert_eq!(pbb_z(&[0.0], &[1.0], &[1.5], 2.0).unwrap(), 100.0);
    }

    fn ts(y: i32, m: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, 10).unwrap().and_hms_opt(12, 0, 0).unwrap()
    }

    #[test]
    fn hand_fixture_report() {
        // two January points and two July points
        let t = [ts(2020, 1), ts(2020, 1), ts(2020, 7), ts(2020, 7)];
        let mu = [1.0, 2.0, 3.0, 4.0];
        let sigma = [1.0; 4];
        let obs = [1.5, 2.0, 2.0, 4.0];
        let r = seasonal_report(&mu, &sigma, &obs, &t, "test", &ReportOptions::default()).unwrap();
        assert_eq!(
            r.counts,
            Counts {
                overall: 4,
                winter: 2,
                summer: 2
            }
        );
        let w = r.winter.clone().unwrap();
        let s = r.summer.clone().unwrap();
        assert!((w.mae_kw - 0.25).abs() < 1e-15);
        assert!((s.mae_kw - 0.5).abs() < 1e-15);
        assert!((r.overall.mae_kw - 0.375).abs() < 1e-15);
        assert!((w.mape_pct - (0.5 / 1.5 * 100.0) / 2.0).abs() < 1e-12);
        // July point 3 vs 2 sits exactly on the lower bound: excluded
        assert_eq!(s.pbb_pct, 50.0);
        assert_eq!(w.pbb_pct, 100.0);

        let json = serde_json::to_value(&r).unwrap();
        for key in ["mae_kw", "mape_pct", "pbb_pct", "crps"] {
            assert!(json["overall"][key].is_number());
            assert!(json["winter"][key].is_number());
        }
        assert_eq!(json["counts"]["summer"], 2);
    }

    #[test]
    fn single_season_data() {
        let t = [ts(2021, 1), ts(2021, 1), ts(2021, 2)];
        let r = seasonal_report(&[1.0; 3], &[0.2; 3], &[1.1, 0.9, 1.3], &t, "x", &ReportOptions::default()).unwrap();
        assert_eq!(r.winter.as_ref(), Some(&r.overall));
        assert_eq!(r.summer, None);
        assert_eq!(r.counts.summer, 0);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["summer"].is_null());
    }

    #[test]
    fn mape_floor_scales_with_series() {
        let t = [ts(2021, 4); 3];
        let obs = [100.0, 0.5, 200.0];
        let mu = [110.0, 10.5, 200.0];
        let r = seasonal_report(&mu, &[1.0; 3], &obs, &t, "x", &ReportOptions::default()).unwrap();
        // floor is 10% of the mean |obs| of 100.1667
        let floor = 0.1 * (300.5 / 3.0);
        assert!((r.mape_floor_kw - floor).abs() < 1e-12);
        let want = (10.0 + 10.0 / floor * 100.0) / 3.0;
        assert!((r.overall.mape_pct - want).abs() < 1e-9);
        let abs_only = ReportOptions {
            mape_floor_rel: 0.0,
            ..ReportOptions::default()
        };
        let r = seasonal_report(&mu, &[1.0; 3], &obs, &t, "x", &abs_only).unwrap();
        assert_eq!(r.mape_floor_kw, DEFAULT_MAPE_FLOOR_KW);
    }
}
