//! Site time series: ingestion, synthesis, aggregation, masking, and the
//! windowing / splitting / normalization that feeds the models.

mod csv_io;
mod synth;
mod window;

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDateTime};
use thiserror::Error;

use crate::numeric::sorted_sum;

pub use csv_io::{load_csv, parse_timestamp, read_csv, write_csv, CsvSchema, TIMESTAMP_FORMAT};
pub use synth::{synth_site, SynthConfig};
pub use window::{
    denormalize, interleaved_split, normalize, window, ChannelStats, NormStats, SplitSpec, WindowSample,
    WindowSpec, WindowedDataset,
};

pub const NET_LOAD: &str = "net_load_kw";
pub const SOLAR_PV: &str = "solar_pv_kw";
pub const TEMPERATURE: &str = "temp_c";
pub const HUMIDITY: &str = "rh_pct";
pub const APPARENT_POWER: &str = "apparent_kva";
pub const WIND_DIRECTION: &str = "wind_deg";

/// Auxiliary columns understood by the CSV dialect, in file order.
pub const AUX_CHANNELS: [&str; 4] = [TEMPERATURE, HUMIDITY, APPARENT_POWER, WIND_DIRECTION];

pub const CADENCE_MINUTES: i64 = 15;

pub fn cadence() -> Duration {
    Duration::minutes(CADENCE_MINUTES)
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("unparseable timestamp `{value}` on data row {row}")]
    UnparseableTimestamp { row: usize, value: String },
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(NaiveDateTime),
    #[error("irregular cadence: gap from {from} to {to} is not a multiple of {CADENCE_MINUTES} minutes")]
    IrregularCadence { from: NaiveDateTime, to: NaiveDateTime },
    #[error("solar penetration target {0} is infeasible (must lie in [0, 1))")]
    InfeasiblePenetration(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("site has no solar_pv channel")]
    NoSolarChannel,
    #[error("total consumption is zero")]
    ZeroConsumption,
    #[error("sites share no common timestamps")]
    EmptyOverlap,
    #[error("site `{0}` is not on the common 15-minute grid")]
    MisalignedGrid(String),
    #[error("series of length {len} is too short, need at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("interval is outside the series range: {0}")]
    OutOfRange(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("net-load channel is constant and cannot be normalized")]
    ConstantTarget,
    #[error("channel layout mismatch: {0}")]
    ChannelMismatch(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

/// One named series with its missing-value mask. Masked entries hold 0.0
/// and must never be read as data.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl Series {
    pub fn new(values: Vec<f64>) -> Self {
        let missing = vec![false; values.len()];
        Self { values, missing }
    }

    pub fn with_mask(mut values: Vec<f64>, missing: Vec<bool>) -> Result<Self, DataError> {
        if values.len() != missing.len() {
            return Err(DataError::LengthMismatch(format!(
                "{} values vs {} mask entries",
                values.len(),
                missing.len()
            )));
        }
        for (v, &m) in values.iter_mut().zip(&missing) {
            if m {
                *v = 0.0;
            }
        }
        Ok(Self { values, missing })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        (!self.missing[i]).then(|| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    fn mask(&mut self, i: usize) {
        self.missing[i] = true;
        self.values[i] = 0.0;
    }
}

/// Timestamped multi-channel series for one site (or an aggregate) on a
/// fixed 15-minute grid. Always holds a `net_load_kw` series.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteRecord {
    site_id: String,
    timestamps: Vec<NaiveDateTime>,
    series: BTreeMap<String, Series>,
}

impl SiteRecord {
    /// Validates the grid and the series lengths.
    pub fn new(
        site_id: impl Into<String>,
        timestamps: Vec<NaiveDateTime>,
        series: BTreeMap<String, Series>,
    ) -> Result<Self, DataError> {
        for pair in timestamps.windows(2) {
            if pair[1] - pair[0] != cadence() {
                return Err(DataError::IrregularCadence {
                    from: pair[0],
                    to: pair[1],
                });
            }
        }
        if !series.contains_key(NET_LOAD) {
            return Err(DataError::MissingColumn(NET_LOAD.to_string()));
        }
        for (name, s) in &series {
            if s.len() != timestamps.len() {
                return Err(DataError::LengthMismatch(format!(
                    "channel `{name}` has {} values for {} timestamps",
                    s.len(),
                    timestamps.len()
                )));
            }
        }
        Ok(Self {
            site_id: site_id.into(),
            timestamps,
            series,
        })
    }

    /// Regular grid of `n` steps starting at `start`.
    pub fn grid(start: NaiveDateTime, n: usize) -> Vec<NaiveDateTime> {
        (0..n).map(|i| start + cadence() * i as i32).collect()
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn set_site_id(&mut self, id: impl Into<String>) {
        self.site_id = id.into();
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.get(name)
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn net_load(&self) -> &Series {
        &self.series[NET_LOAD]
    }

    pub fn solar_pv(&self) -> Option<&Series> {
        self.series.get(SOLAR_PV)
    }

    /// Index of `t` on the grid, if it lies on it.
    pub fn index_of(&self, t: NaiveDateTime) -> Option<usize> {
        let first = *self.timestamps.first()?;
        let minutes = (t - first).num_minutes();
        if minutes < 0 || minutes % CADENCE_MINUTES != 0 || (t - first).num_seconds() % 60 != 0 {
            return None;
        }
        let idx = (minutes / CADENCE_MINUTES) as usize;
        (idx < self.len()).then_some(idx)
    }

    /// Copy restricted to `[start, end)` grid indices.
    pub fn slice(&self, start: usize, end: usize) -> SiteRecord {
        let series = self
            .series
            .iter()
            .map(|(k, s)| {
                (
                    k.clone(),
                    Series {
                        values: s.values[start..end].to_vec(),
                        missing: s.missing[start..end].to_vec(),
                    },
                )
            })
            .collect();
        SiteRecord {
            site_id: self.site_id.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            series,
        }
    }

    /// Replaces a value and clears its mask.
    pub fn set_value(&mut self, channel: &str, i: usize, v: f64) -> Result<(), DataError> {
        let s = self
            .series
            .get_mut(channel)
            .ok_or_else(|| DataError::UnknownChannel(channel.to_string()))?;
        s.values[i] = v;
        s.missing[i] = false;
        Ok(())
    }
}

/// Fraction of consumed energy supplied by behind-the-meter solar:
/// `Σ solar / Σ (net_load + solar)` over steps where both are observed.
pub fn solar_penetration(site: &SiteRecord) -> Result<f64, DataError> {
    let solar = site.solar_pv().ok_or(DataError::NoSolarChannel)?;
    let net = site.net_load();
    let (mut gen, mut consumption) = (0.0, 0.0);
    for i in 0..site.len() {
        if let (Some(y), Some(s)) = (net.get(i), solar.get(i)) {
            gen += s;
            consumption += y + s;
        }
    }
    if consumption <= 0.0 {
        return Err(DataError::ZeroConsumption);
    }
    Ok(gen / consumption)
}

/// Aggregates sites over their common time range. Net-load and solar are
/// summed over observed contributions; other channels are averaged. A step
/// is masked only when no site observed it.
pub fn aggregate(sites: &[SiteRecord]) -> Result<SiteRecord, DataError> {
    let first = sites.first().ok_or(DataError::EmptyOverlap)?;
    let anchor = *first.timestamps.first().ok_or(DataError::EmptyOverlap)?;
    let mut start = anchor;
    let mut end = *first.timestamps.last().unwrap();
    for s in sites {
        let (Some(&a), Some(&b)) = (s.timestamps.first(), s.timestamps.last()) else {
            return Err(DataError::EmptyOverlap);
        };
        if (a - anchor).num_seconds() % (CADENCE_MINUTES * 60) != 0 {
            return Err(DataError::MisalignedGrid(s.site_id.clone()));
        }
        start = start.max(a);
        end = end.min(b);
    }
    if start > end {
        return Err(DataError::EmptyOverlap);
    }
    let n = ((end - start).num_minutes() / CADENCE_MINUTES) as usize + 1;
    let offsets: Vec<usize> = sites.iter().map(|s| s.index_of(start).expect("aligned")).collect();

    let any_solar = sites.iter().any(|s| s.solar_pv().is_some());
    let mut names: Vec<&str> = sites.iter().flat_map(|s| s.channel_names()).collect();
    names.sort_unstable();
    names.dedup();

    let mut series = BTreeMap::new();
    let mut buf = Vec::with_capacity(sites.len());
    for name in names {
        let additive = name == NET_LOAD || name == SOLAR_PV;
        if name == SOLAR_PV && !any_solar {
            continue;
        }
        let mut values = vec![0.0; n];
        let mut missing = vec![false; n];
        for i in 0..n {
            buf.clear();
            for (site, &off) in sites.iter().zip(&offsets) {
                match site.series(name) {
                    Some(s) => {
                        if let Some(v) = s.get(off + i) {
                            buf.push(v);
                        }
                    }
                    // A site without BTM generation contributes zero solar.
                    None if name == SOLAR_PV => buf.push(0.0),
                    None => {}
                }
            }
            if buf.is_empty() {
                missing[i] = true;
            } else {
                let count = buf.len() as f64;
                let total = sorted_sum(&mut buf);
                values[i] = if additive { total } else { total / count };
            }
        }
        series.insert(name.to_string(), Series::with_mask(values, missing)?);
    }
    let site_id = if sites.len() == 1 {
        first.site_id.clone()
    } else {
        format!("aggregate-{}", sites.len())
    };
    SiteRecord::new(site_id, SiteRecord::grid(start, n), series)
}

/// Returns a copy with `channels` masked over `[start, start + duration_steps)`.
pub fn mask_measurements(
    site: &SiteRecord,
    start: NaiveDateTime,
    duration_steps: usize,
    channels: &[&str],
) -> Result<SiteRecord, DataError> {
    let mut out = site.clone();
    if duration_steps == 0 {
        return Ok(out);
    }
    let i0 = site
        .index_of(start)
        .ok_or_else(|| DataError::OutOfRange(format!("{start} is not on the series grid")))?;
    if i0 + duration_steps > site.len() {
        return Err(DataError::OutOfRange(format!(
            "{duration_steps} steps from {start} run past the end of the series"
        )));
    }
    for name in channels {
        let s = out
            .series
            .get_mut(*name)
            .ok_or_else(|| DataError::UnknownChannel(name.to_string()))?;
        for i in i0..i0 + duration_steps {
            s.mask(i);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn t0() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    fn constant_site(id: &str, n: usize, net: f64, solar: Option<f64>, temp: f64) -> SiteRecord {
        let mut series = BTreeMap::new();
        series.insert(NET_LOAD.to_string(), Series::new(vec![net; n]));
        if let Some(s) = solar {
            series.insert(SOLAR_PV.to_string(), Series::new(vec![s; n]));
        }
        series.insert(TEMPERATURE.to_string(), Series::new(vec![temp; n]));
        SiteRecord::new(id, SiteRecord::grid(t0(), n), series).unwrap()
    }

    #[test]
    fn penetration_cases() {
        let zero = constant_site("a", 8, 2.0, Some(0.0), 10.0);
        assert_eq!(solar_penetration(&zero).unwrap(), 0.0);
        let half = constant_site("b", 8, 1.0, Some(1.0), 10.0);
        assert_eq!(solar_penetration(&half).unwrap(), 0.5);
        let none = constant_site("c", 8, 1.0, None, 10.0);
        assert!(matches!(solar_penetration(&none), Err(DataError::NoSolarChannel)));
        let empty = constant_site("d", 8, 0.0, Some(0.0), 10.0);
        assert!(matches!(solar_penetration(&empty), Err(DataError::ZeroConsumption)));
    }

    #[test]
    fn aggregate_identity_and_additivity() {
        let a = constant_site("a", 10, 1.0, Some(0.5), 10.0);
        assert_eq!(aggregate(std::slice::from_ref(&a)).unwrap(), a);

        let b = constant_site("b", 10, 2.0, Some(0.25), 20.0);
        let agg = aggregate(&[a, b]).unwrap();
        assert!(agg.net_load().values().iter().all(|&v| v == 3.0));
        assert!(agg.solar_pv().unwrap().values().iter().all(|&v| v == 0.75));
        assert!(agg.series(TEMPERATURE).unwrap().values().iter().all(|&v| v == 15.0));
    }

    #[test]
    fn aggregate_restricts_to_overlap_and_partial_masks() {
        let a = constant_site("a", 10, 1.0, None, 10.0);
        let b = constant_site("b", 10, 2.0, None, 10.0).slice(4, 10);
        let b = mask_measurements(&b, b.timestamps()[0], 1, &[NET_LOAD]).unwrap();
        let agg = aggregate(&[a.clone(), b]).unwrap();
        assert_eq!(agg.len(), 6);
        assert_eq!(agg.timestamps()[0], a.timestamps()[4]);
        // first step only site `a` observed
        assert_eq!(agg.net_load().get(0), Some(1.0));
        assert_eq!(agg.net_load().get(1), Some(3.0));

        let c = constant_site("c", 3, 1.0, None, 1.0);
        let d = constant_site("d", 12, 1.0, None, 1.0).slice(5, 12);
        assert!(matches!(aggregate(&[c, d]), Err(DataError::EmptyOverlap)));
    }

    #[test]
    fn masking_rules() {
        let site = constant_site("a", 400, 1.0, Some(0.2), 5.0);
        let start = site.timestamps()[10];
        assert_eq!(mask_measurements(&site, start, 0, &[NET_LOAD]).unwrap(), site);

        let masked = mask_measurements(&site, start, 288, &[NET_LOAD]).unwrap();
        assert_eq!(masked.net_load().masked_count(), 288);
        assert_eq!(masked.series(TEMPERATURE).unwrap().masked_count(), 0);
        let twice = mask_measurements(&masked, start, 288, &[NET_LOAD]).unwrap();
        assert_eq!(twice, masked);

        assert!(matches!(
            mask_measurements(&site, site.timestamps()[300], 288, &[NET_LOAD]),
            Err(DataError::OutOfRange(_))
        ));
        assert!(matches!(
            mask_measurements(&site, start, 1, &["nope"]),
            Err(DataError::UnknownChannel(_))
        ));
    }

    #[test]
    fn record_validation() {
        let mut series = BTreeMap::new();
        series.insert(NET_LOAD.to_string(), Series::new(vec![1.0; 3]));
        let ts = vec![t0(), t0() + Duration::minutes(15), t0() + Duration::minutes(45)];
        assert!(matches!(
            SiteRecord::new("x", ts, series.clone()),
            Err(DataError::IrregularCadence { .. })
        ));
        assert!(matches!(
            SiteRecord::new("x", SiteRecord::grid(t0(), 4), series),
            Err(DataError::LengthMismatch(_))
        ));
    }
}
