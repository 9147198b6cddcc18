//! Synthetic site generator.
//!
//! Weather (temperature, humidity, cloud cover, wind direction) comes from a
//! stream keyed by `weather_seed`, so many sites can share one climate while
//! their demand noise differs. Demand combines a two-peak diurnal profile, a
//! weekend factor, heating/cooling driven by temperature and AR(1) noise.
//! Solar is a daylight bell scaled by season and cloud, then rescaled so the
//! record hits the requested penetration.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::{
    DataError, Series, SiteRecord, APPARENT_POWER, HUMIDITY, NET_LOAD, SOLAR_PV, TEMPERATURE, WIND_DIRECTION,
};
use crate::nn::sigmoid;
use crate::rng::Rng;

const STEPS_PER_DAY: usize = 96;
const YEAR_DAYS: f64 = 365.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub days: usize,
    pub solar_penetration_target: f64,
    #[serde(default = "default_base_load")]
    pub base_load_kw: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    /// Expected appliance switch-ons per step at the daily demand peak.
    #[serde(default = "default_event_rate")]
    pub event_rate: f64,
    /// Mean appliance draw as a fraction of the base load.
    #[serde(default = "default_event_scale")]
    pub event_scale: f64,
    pub seed: u64,
    /// Seed of the shared weather stream; defaults to `seed`.
    #[serde(default)]
    pub weather_seed: Option<u64>,
    /// First timestamp; defaults to 2020-01-01T00:00:00.
    #[serde(default)]
    pub start: Option<NaiveDateTime>,
}

fn default_base_load() -> f64 {
    1.5
}

fn default_noise_sd() -> f64 {
    0.1
}

fn default_event_rate() -> f64 {
    0.1
}

fn default_event_scale() -> f64 {
    0.6
}

impl SynthConfig {
    pub fn new(days: usize, solar_penetration_target: f64, seed: u64) -> Self {
        Self {
            days,
            solar_penetration_target,
            base_load_kw: default_base_load(),
            noise_sd: default_noise_sd(),
            event_rate: default_event_rate(),
            event_scale: default_event_scale(),
            seed,
            weather_seed: None,
            start: None,
        }
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.start.unwrap_or_else(|| {
            NaiveDate::from_ymd_opt(2020, 1, 1)
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .expect("valid date")
        })
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let p = self.solar_penetration_target;
        if !(p < 1.0) {
            return Err(DataError::InfeasiblePenetration(p));
        }
        if p < 0.0 {
            return Err(DataError::InvalidConfig(format!("solar_penetration_target {p} is negative")));
        }
        if self.days == 0 {
            return Err(DataError::InvalidConfig("days must be at least 1".into()));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(DataError::InvalidConfig(format!("noise_sd {} must be >= 0", self.noise_sd)));
        }
        if !(0.0..=1.0).contains(&self.event_rate) || !(self.event_scale >= 0.0) || !self.event_scale.is_finite() {
            return Err(DataError::InvalidConfig(format!(
                "event_rate {} must be in [0, 1] and event_scale {} >= 0",
                self.event_rate, self.event_scale
            )));
        }
        if !(self.base_load_kw > 0.0) || !self.base_load_kw.is_finite() {
            return Err(DataError::InvalidConfig(format!(
                "base_load_kw {} must be positive",
                self.base_load_kw
            )));
        }
        Ok(())
    }
}

struct Weather {
    temp: Vec<f64>,
    rh: Vec<f64>,
    cloud: Vec<f64>,
    wind: Vec<f64>,
}

fn day_of_year(t: &NaiveDateTime) -> f64 {
    t.ordinal0() as f64 + hour_of_day(t) / 24.0
}

fn hour_of_day(t: &NaiveDateTime) -> f64 {
    t.hour() as f64 + t.minute() as f64 / 60.0
}

/// Seasonal phase in [-1, 1]: -1 around the winter solstice, +1 in summer.
fn season(doy: f64) -> f64 {
    -(2.0 * PI * (doy + 10.0) / YEAR_DAYS).cos()
}

fn weather(times: &[NaiveDateTime], seed: u64) -> Weather {
    let root = Rng::new(seed);
    let mut r_temp = root.fork(1);
    let mut r_cloud_day = root.fork(2);
    let mut r_cloud = root.fork(3);
    let mut r_rh = root.fork(4);
    let mut r_wind = root.fork(5);

    let n = times.len();
    let mut w = Weather {
        temp: Vec::with_capacity(n),
        rh: Vec::with_capacity(n),
        cloud: Vec::with_capacity(n),
        wind: Vec::with_capacity(n),
    };
    // Slow temperature anomaly with a stationary sd of about 4 °C.
    let (phi_t, sd_t): (f64, f64) = (0.998, 4.0);
    let mut anomaly = sd_t * r_temp.normal();
    let mut cloud_day = r_cloud_day.normal();
    let mut cloud_fast = 0.0;
    let mut rh_noise = 0.0;
    let mut wind = 360.0 * r_wind.uniform();
    let mut day = times.first().map(|t| t.date());

    for t in times {
        if Some(t.date()) != day {
            day = Some(t.date());
            cloud_day = 0.6 * cloud_day + 0.8 * r_cloud_day.normal();
        }
        let doy = day_of_year(t);
        let hour = hour_of_day(t);
        let s = season(doy);
        anomaly = phi_t * anomaly + sd_t * (1.0 - phi_t * phi_t).sqrt() * r_temp.normal();
        let base = 11.0 + 9.0 * s;
        let diurnal = 5.0 * (2.0 * PI * (hour - 9.0) / 24.0).sin();
        let temp = base + diurnal + anomaly;

        cloud_fast = 0.95 * cloud_fast + 0.3 * r_cloud.normal();
        let cloud = sigmoid(1.2 * cloud_day - 0.8 * s + cloud_fast - 0.3);

        rh_noise = 0.97 * rh_noise + 1.5 * r_rh.normal();
        let rh = (65.0 + 25.0 * (cloud - 0.5) - 1.5 * (diurnal + anomaly) + rh_noise).clamp(5.0, 100.0);

        wind = (wind + 3.0 * r_wind.normal()).rem_euclid(360.0);

        w.temp.push(temp);
        w.rh.push(rh);
        w.cloud.push(cloud);
        w.wind.push(wind);
    }
    w
}

/// Normalised daily demand profile with morning and evening peaks.
fn demand_shape(hour: f64) -> f64 {
    let bump = |centre: f64, width: f64| {
        // wrap around midnight
        let d = (hour - centre + 36.0).rem_euclid(24.0) - 12.0;
        (-(d / width).powi(2)).exp()
    };
    0.65 + 0.35 * bump(7.5, 1.5) + 0.7 * bump(19.0, 2.2) - 0.2 * bump(3.5, 2.5)
}

/// Clear-sky generation shape in [0, 1] before cloud attenuation.
fn clear_sky(doy: f64, hour: f64) -> f64 {
    let s = season(doy);
    let day_len = 12.0 + 3.5 * s;
    let x = (hour - (12.5 - day_len / 2.0)) / day_len;
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    let amplitude = 0.55 + 0.45 * s;
    amplitude * (PI * x).sin().powf(1.5)
}

pub fn synth_site(cfg: &SynthConfig) -> Result<SiteRecord, DataError> {
    cfg.validate()?;
    let n = cfg.days * STEPS_PER_DAY;
    let times = SiteRecord::grid(cfg.start_time(), n);
    let w = weather(&times, cfg.weather_seed.unwrap_or(cfg.seed));

    let root = Rng::new(cfg.seed);
    let mut r_site = root.fork(11);
    let mut r_noise = root.fork(12);
    let mut r_events = root.fork(13);
    // Per-site habits: a shifted daily rhythm and a thermal sensitivity.
    let shift = 0.5 * r_site.normal();
    let heat = 0.06 * (1.0 + 0.2 * r_site.normal()).max(0.2);
    let cool = 0.08 * (1.0 + 0.2 * r_site.normal()).max(0.2);

    let phi: f64 = 0.85;
    let innovation = cfg.noise_sd * (1.0 - phi * phi).sqrt();
    let mut noise = cfg.noise_sd * r_noise.normal();
    // Appliance events: switch-ons follow the daily rhythm, each draws an
    // exponential load for a geometric number of steps (mean 3).
    let mut events: Vec<(f64, usize)> = Vec::new();
    let peak = (0..STEPS_PER_DAY)
        .map(|k| demand_shape(k as f64 / 4.0))
        .fold(f64::MIN, f64::max);

    let mut demand = Vec::with_capacity(n);
    let mut bell = Vec::with_capacity(n);
    for (i, t) in times.iter().enumerate() {
        let hour = hour_of_day(t);
        let weekly = match t.weekday().num_days_from_monday() {
            5 | 6 => 1.08,
            _ => 1.0,
        };
        let temp = w.temp[i];
        let thermal = heat * (16.0 - temp).max(0.0) + cool * (temp - 22.0).max(0.0);
        noise = phi * noise + innovation * r_noise.normal();
        let shape = demand_shape(hour - shift);
        events.retain_mut(|(_, left)| {
            *left -= 1;
            *left > 0
        });
        if r_events.uniform() < cfg.event_rate * shape / peak {
            let kw = -cfg.event_scale * cfg.base_load_kw * (1.0 - r_events.uniform()).ln();
            let mut steps = 1;
            while r_events.uniform() < 2.0 / 3.0 {
                steps += 1;
            }
            events.push((kw, steps));
        }
        let appliances: f64 = events.iter().map(|(kw, _)| kw).sum();
        let d = cfg.base_load_kw * (shape * weekly + thermal) + appliances + noise;
        demand.push(d.max(0.05 * cfg.base_load_kw));
        bell.push(clear_sky(day_of_year(t), hour) * (1.0 - 0.75 * w.cloud[i]));
    }

    let total_demand: f64 = demand.iter().sum();
    let total_bell: f64 = bell.iter().sum();
    let scale = if total_bell > 0.0 {
        cfg.solar_penetration_target * total_demand / total_bell
    } else {
        0.0
    };
    let solar: Vec<f64> = bell.iter().map(|b| scale * b).collect();
    let net: Vec<f64> = demand.iter().zip(&solar).map(|(d, s)| d - s).collect();
    let kva: Vec<f64> = net.iter().zip(&demand).map(|(y, d)| y.hypot(0.3 * d)).collect();

    let mut series = BTreeMap::new();
    series.insert(NET_LOAD.to_string(), Series::new(net));
    series.insert(SOLAR_PV.to_string(), Series::new(solar));
    series.insert(TEMPERATURE.to_string(), Series::new(w.temp));
    series.insert(HUMIDITY.to_string(), Series::new(w.rh));
    series.insert(APPARENT_POWER.to_string(), Series::new(kva));
    series.insert(WIND_DIRECTION.to_string(), Series::new(w.wind));
    SiteRecord::new(format!("synth-{}", cfg.seed), times, series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::solar_penetration;

    #[test]
    fn zero_target_means_no_solar() {
        let s = synth_site(&SynthConfig::new(3, 0.0, 1)).unwrap();
        assert!(s.solar_pv().unwrap().values().iter().all(|&v| v == 0.0));
        assert_eq!(solar_penetration(&s).unwrap(), 0.0);
    }

    #[test]
    fn penetration_target_is_hit() {
        let s = synth_site(&SynthConfig::new(365, 0.5, 7)).unwrap();
        let p = solar_penetration(&s).unwrap();
        assert!((0.49..=0.51).contains(&p), "{p}");
        let s = synth_site(&SynthConfig::new(60, 0.36, 3)).unwrap();
        assert!((solar_penetration(&s).unwrap() - 0.36).abs() <= 0.01);
    }

    #[test]
    fn deterministic_and_weather_shared() {
        let a = synth_site(&SynthConfig::new(5, 0.2, 9)).unwrap();
        assert_eq!(a, synth_site(&SynthConfig::new(5, 0.2, 9)).unwrap());

        let mut c1 = SynthConfig::new(5, 0.2, 1);
        let mut c2 = SynthConfig::new(5, 0.2, 2);
        c1.weather_seed = Some(42);
        c2.weather_seed = Some(42);
        let (s1, s2) = (synth_site(&c1).unwrap(), synth_site(&c2).unwrap());
        assert_eq!(s1.series(TEMPERATURE), s2.series(TEMPERATURE));
        assert_ne!(s1.net_load(), s2.net_load());
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(
            synth_site(&SynthConfig::new(2, 1.0, 1)),
            Err(DataError::InfeasiblePenetration(_))
        ));
        assert!(synth_site(&SynthConfig::new(0, 0.1, 1)).is_err());
        let mut c = SynthConfig::new(1, 0.1, 1);
        c.noise_sd = -1.0;
        assert!(synth_site(&c).is_err());
        let mut c = SynthConfig::new(1, 0.1, 1);
        c.event_rate = 1.5;
        assert!(synth_site(&c).is_err());
    }

    #[test]
    fn appliance_events_add_site_noise() {
        let mut quiet = SynthConfig::new(14, 0.0, 5);
        quiet.event_rate = 0.0;
        let busy = SynthConfig::new(14, 0.0, 5);
        let (a, b) = (synth_site(&quiet).unwrap(), synth_site(&busy).unwrap());
        let extra: Vec<f64> = b.net_load().values().iter().zip(a.net_load().values()).map(|(x, y)| x - y).collect();
        assert!(extra.iter().all(|&v| v >= -1e-12));
        let mean = extra.iter().sum::<f64>() / extra.len() as f64;
        assert!(mean > 0.05 && mean < 0.5, "{mean}");
    }

    #[test]
    fn winter_is_colder_and_solar_is_daytime_only() {
        let s = synth_site(&SynthConfig::new(365, 0.3, 5)).unwrap();
        let temp = s.series(TEMPERATURE).unwrap().values();
        let jan: f64 = temp[..31 * 96].iter().sum::<f64>() / (31.0 * 96.0);
        let jul: f64 = temp[182 * 96..213 * 96].iter().sum::<f64>() / (31.0 * 96.0);
        assert!(jul > jan + 8.0, "jan {jan} jul {jul}");
        let solar = s.solar_pv().unwrap().values();
        for (t, v) in s.timestamps().iter().zip(solar) {
            if t.hour() < 4 || t.hour() >= 22 {
                assert_eq!(*v, 0.0);
            }
        }
    }
}
