//! Forecast distributions, Monte-Carlo aggregation and interval bands.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::bayes::nll_step;
use super::BlstmError;

/// Standard normal quantiles for the supported two-sided levels.
const Z50: f64 = 0.674_489_750_196_081_7;
const Z95: f64 = 1.959_963_984_540_054;
const Z99: f64 = 2.575_829_303_548_900_4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntervalLevel {
    P50,
    /// The `μ ± σ` band.
    P68,
    P95,
    P99,
}

/// `Exact` uses normal quantiles; `Rounded` widens the 95% band to exactly 2σ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMode {
    #[default]
    Exact,
    Rounded,
}

impl IntervalLevel {
    pub const ALL: [IntervalLevel; 4] = [Self::P50, Self::P68, Self::P95, Self::P99];

    pub fn from_percent(level: u32) -> Result<Self, BlstmError> {
        match level {
            50 => Ok(Self::P50),
            68 => Ok(Self::P68),
            95 => Ok(Self::P95),
            99 => Ok(Self::P99),
            other => Err(BlstmError::BadLevel(other)),
        }
    }

    pub fn percent(self) -> u32 {
        match self {
            Self::P50 => 50,
            Self::P68 => 68,
            Self::P95 => 95,
            Self::P99 => 99,
        }
    }

    pub fn z(self, mode: IntervalMode) -> f64 {
        match (self, mode) {
            (Self::P50, _) => Z50,
            (Self::P68, _) => 1.0,
            (Self::P95, IntervalMode::Exact) => Z95,
            (Self::P95, IntervalMode::Rounded) => 2.0,
            (Self::P99, _) => Z99,
        }
    }
}

/// Per-step mean and standard deviation in kW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastDistribution {
    pub timestamps: Vec<NaiveDateTime>,
    pub mu_pred: Vec<f64>,
    pub sigma_pred: Vec<f64>,
    pub mc_samples_used: usize,
}

/// Output of one Monte-Carlo pass.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberForecast {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ForecastDistribution {
    pub fn horizon(&self) -> usize {
        self.mu_pred.len()
    }

    /// `(lower, upper)` bands `μ ± zσ`.
    pub fn interval(&self, level: IntervalLevel, mode: IntervalMode) -> (Vec<f64>, Vec<f64>) {
        let z = level.z(mode);
        self.mu_pred
            .iter()
            .zip(&self.sigma_pred)
            .map(|(m, s)| (m - z * s, m + z * s))
            .unzip()
    }

    /// Band for a level given in percent.
    pub fn interval_percent(&self, level: u32, mode: IntervalMode) -> Result<(Vec<f64>, Vec<f64>), BlstmError> {
        Ok(self.interval(IntervalLevel::from_percent(level)?, mode))
    }
}

/// Mixture moments of equally weighted Gaussian members:
/// `μ = mean μ_i`, `σ² = mean σ_i² + var(μ_i)` (population variance).
pub fn aggregate_members(members: &[MemberForecast]) -> Result<(Vec<f64>, Vec<f64>), BlstmError> {
    let first = members.first().ok_or(BlstmError::BadMcSamples(0))?;
    let h = first.mu.len();
    let k = members.len() as f64;
    let mut mu = vec![0.0; h];
    let mut sigma = vec![0.0; h];
    for t in 0..h {
        let m = members.iter().map(|e| e.mu[t]).sum::<f64>() / k;
        let aleatoric = members.iter().map(|e| e.sigma[t] * e.sigma[t]).sum::<f64>() / k;
        let epistemic = members.iter().map(|e| (e.mu[t] - m).powi(2)).sum::<f64>() / k;
        mu[t] = m;
        sigma[t] = (aleatoric + epistemic).sqrt();
    }
    Ok((mu, sigma))
}

/// `Σ_t [ln σ_t + (y_t − μ_t)² / (2σ_t²)]` with σ floored at 1e-6 kW.
pub fn gaussian_nll(forecast: &ForecastDistribution, y_obs: &[f64]) -> Result<f64, BlstmError> {
    if y_obs.len() != forecast.horizon() {
        return Err(BlstmError::LengthMismatch {
            expected: forecast.horizon(),
            got: y_obs.len(),
        });
    }
    Ok(forecast
        .mu_pred
        .iter()
        .zip(&forecast.sigma_pred)
        .zip(y_obs)
        .map(|((&m, &s), &y)| nll_step(m, 2.0 * s.ln(), y, super::SIGMA_FLOOR_KW).0)
        .sum())
}
