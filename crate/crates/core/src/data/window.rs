//! Sliding windows, interleaved block splitting and z-score normalization.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{DataError, SiteRecord, NET_LOAD, SOLAR_PV};
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub t_win: usize,
    pub horizon: usize,
    pub stride: usize,
    /// Auxiliary channels stacked after net-load, in order.
    pub channel_order: Vec<String>,
    #[serde(default)]
    pub include_solar: bool,
}

impl WindowSpec {
    pub fn new(t_win: usize, horizon: usize, stride: usize, channel_order: &[&str]) -> Self {
        Self {
            t_win,
            horizon,
            stride,
            channel_order: channel_order.iter().map(|s| s.to_string()).collect(),
            include_solar: false,
        }
    }

    /// Input channels in stacking order; net-load is always first.
    pub fn input_channels(&self) -> Vec<String> {
        let mut out = vec![NET_LOAD.to_string()];
        if self.include_solar {
            out.push(SOLAR_PV.to_string());
        }
        for c in &self.channel_order {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.t_win == 0 || self.horizon == 0 || self.stride == 0 {
            return Err(DataError::InvalidConfig(format!(
                "t_win, horizon and stride must be >= 1 (got {}, {}, {})",
                self.t_win, self.horizon, self.stride
            )));
        }
        Ok(())
    }

    /// Number of windows a series of length `len` yields before exclusion.
    pub fn window_count(&self, len: usize) -> usize {
        if len < self.t_win + self.horizon {
            0
        } else {
            (len - self.t_win - self.horizon) / self.stride + 1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// Position in the full (pre-exclusion) window enumeration.
    pub ordinal: usize,
    /// Grid index of the first input step.
    pub start: usize,
    /// Timestamp of the first target step.
    pub anchor: NaiveDateTime,
    /// Channel-major `[channels × t_win]`.
    pub input: Vec<f64>,
    /// Net-load over the horizon.
    pub target: Vec<f64>,
}

impl WindowSample {
    pub fn channel<'a>(&'a self, c: usize, t_win: usize) -> &'a [f64] {
        &self.input[c * t_win..(c + 1) * t_win]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub channels: Vec<String>,
    pub t_win: usize,
    pub horizon: usize,
    pub stride: usize,
    pub samples: Vec<WindowSample>,
    /// Windows enumerated before masked ones were excluded.
    pub windows_total: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn input_tensor(&self, i: usize) -> Tensor {
        Tensor::matrix(self.n_channels(), self.t_win, self.samples[i].input.clone())
            .expect("sample layout matches channels × t_win")
    }

    fn with_samples(&self, samples: Vec<WindowSample>) -> Self {
        Self {
            channels: self.channels.clone(),
            t_win: self.t_win,
            horizon: self.horizon,
            stride: self.stride,
            samples,
            windows_total: self.windows_total,
        }
    }
}

pub fn window(site: &SiteRecord, spec: &WindowSpec) -> Result<WindowedDataset, DataError> {
    spec.validate()?;
    let len = site.len();
    let needed = spec.t_win + spec.horizon;
    if len < needed {
        return Err(DataError::SeriesTooShort { len, needed });
    }
    let channels = spec.input_channels();
    let series = channels
        .iter()
        .map(|c| site.series(c).ok_or_else(|| DataError::UnknownChannel(c.clone())))
        .collect::<Result<Vec<_>, _>>()?;

    // Prefix count of steps where any input channel is masked, and of
    // masked net-load steps, for O(1) exclusion checks.
    let mut bad_input = vec![0usize; len + 1];
    let mut bad_target = vec![0usize; len + 1];
    let net = site.net_load();
    for i in 0..len {
        let any = series.iter().any(|s| s.missing()[i]);
        bad_input[i + 1] = bad_input[i] + usize::from(any);
        bad_target[i + 1] = bad_target[i] + usize::from(net.missing()[i]);
    }

    let total = spec.window_count(len);
    let mut samples = Vec::new();
    for ordinal in 0..total {
        let s = ordinal * spec.stride;
        let e = s + spec.t_win;
        let h = e + spec.horizon;
        if bad_input[e] != bad_input[s] || bad_target[h] != bad_target[e] {
            continue;
        }
        let mut input = Vec::with_capacity(channels.len() * spec.t_win);
        for ser in &series {
            input.extend_from_slice(&ser.values()[s..e]);
        }
        samples.push(WindowSample {
            ordinal,
            start: s,
            anchor: site.timestamps()[e],
            input,
            target: net.values()[e..h].to_vec(),
        });
    }
    Ok(WindowedDataset {
        channels,
        t_win: spec.t_win,
        horizon: spec.horizon,
        stride: spec.stride,
        samples,
        windows_total: total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_blocks: usize,
    pub test_blocks: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_blocks: 3,
            test_blocks: 1,
        }
    }
}

impl SplitSpec {
    pub fn is_train(&self, ordinal: usize) -> bool {
        ordinal % (self.train_blocks + self.test_blocks) < self.train_blocks
    }
}

/// Assigns windows to train/test in repeating blocks by window ordinal.
pub fn interleaved_split(
    ds: &WindowedDataset,
    spec: &SplitSpec,
) -> Result<(WindowedDataset, WindowedDataset), DataError> {
    if spec.train_blocks == 0 || spec.test_blocks == 0 {
        return Err(DataError::InvalidConfig("train_blocks and test_blocks must be >= 1".into()));
    }
    if ds.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let (train, test): (Vec<_>, Vec<_>) = ds.samples.iter().cloned().partition(|s| spec.is_train(s.ordinal));
    Ok((ds.with_samples(train), ds.with_samples(test)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Normalized channels in stacking order.
    pub channels: Vec<ChannelStats>,
    /// Constant channels removed from the inputs.
    pub dropped: Vec<String>,
}

impl NormStats {
    pub fn get(&self, name: &str) -> Option<&ChannelStats> {
        self.channels.iter().find(|c| c.name == name)
    }

    /// Statistics applied to targets (those of net-load).
    pub fn target(&self) -> &ChannelStats {
        self.get(NET_LOAD).expect("net-load stats are always present")
    }

    pub fn to_kw(&self, v: f64) -> f64 {
        let t = self.target();
        v * t.std + t.mean
    }

    pub fn from_kw(&self, v: f64) -> f64 {
        let t = self.target();
        (v - t.mean) / t.std
    }
}

fn compute_stats(ds: &WindowedDataset) -> Result<NormStats, DataError> {
    if ds.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut channels = Vec::new();
    let mut dropped = Vec::new();
    let count = (ds.len() * ds.t_win) as f64;
    for (c, name) in ds.channels.iter().enumerate() {
        let mean = ds.samples.iter().map(|s| s.channel(c, ds.t_win).iter().sum::<f64>()).sum::<f64>() / count;
        let var = ds
            .samples
            .iter()
            .map(|s| s.channel(c, ds.t_win).iter().map(|v| (v - mean).powi(2)).sum::<f64>())
            .sum::<f64>()
            / count;
        let std = var.sqrt();
        if std > 1e-12 * mean.abs().max(1.0) {
            channels.push(ChannelStats {
                name: name.clone(),
                mean,
                std,
            });
        } else if name == NET_LOAD {
            return Err(DataError::ConstantTarget);
        } else {
            log::warn!("channel `{name}` is constant over the training data and is dropped");
            dropped.push(name.clone());
        }
    }
    Ok(NormStats { channels, dropped })
}

/// Z-scores inputs and targets. With `stats = None` the statistics are
/// computed from `ds` and returned; constant channels are dropped.
pub fn normalize(ds: &WindowedDataset, stats: Option<&NormStats>) -> Result<(WindowedDataset, NormStats), DataError> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => compute_stats(ds)?,
    };
    let mut idx = Vec::with_capacity(stats.channels.len());
    for cs in &stats.channels {
        let i = ds
            .channels
            .iter()
            .position(|c| *c == cs.name)
            .ok_or_else(|| DataError::ChannelMismatch(format!("dataset lacks channel `{}`", cs.name)))?;
        idx.push(i);
    }
    if let Some(extra) = ds
        .channels
        .iter()
        .find(|c| stats.get(c).is_none() && !stats.dropped.contains(c))
    {
        return Err(DataError::ChannelMismatch(format!("no statistics for channel `{extra}`")));
    }
    let target = stats.target().clone();
    let t_win = ds.t_win;
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let mut input = Vec::with_capacity(idx.len() * t_win);
            for (cs, &i) in stats.channels.iter().zip(&idx) {
                input.extend(s.channel(i, t_win).iter().map(|v| (v - cs.mean) / cs.std));
            }
            WindowSample {
                input,
                target: s.target.iter().map(|v| (v - target.mean) / target.std).collect(),
                ..s.clone()
            }
        })
        .collect();
    let out = WindowedDataset {
        channels: stats.channels.iter().map(|c| c.name.clone()).collect(),
        t_win,
        horizon: ds.horizon,
        stride: ds.stride,
        samples,
        windows_total: ds.windows_total,
    };
    Ok((out, stats))
}

/// Inverse of [`normalize`] for the channels that were kept.
pub fn denormalize(ds: &WindowedDataset, stats: &NormStats) -> Result<WindowedDataset, DataError> {
    if ds.channels.len() != stats.channels.len()
        || ds.channels.iter().zip(&stats.channels).any(|(a, b)| *a != b.name)
    {
        return Err(DataError::ChannelMismatch("dataset channels differ from the statistics".into()));
    }
    let target = stats.target();
    let t_win = ds.t_win;
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let mut input = Vec::with_capacity(s.input.len());
            for (c, cs) in stats.channels.iter().enumerate() {
                input.extend(s.channel(c, t_win).iter().map(|v| v * cs.std + cs.mean));
            }
            WindowSample {
                input,
                target: s.target.iter().map(|v| v * target.std + target.mean).collect(),
                ..s.clone()
            }
        })
        .collect();
    Ok(ds.with_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{mask_measurements, Series, TEMPERATURE};
    use chrono::NaiveDate;
    use std::collections::BTreeMap;

    fn ramp_site(n: usize) -> SiteRecord {
        let t0 = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let mut series = BTreeMap::new();
        series.insert(NET_LOAD.to_string(), Series::new((0..n).map(|i| i as f64).collect()));
        series.insert(TEMPERATURE.to_string(), Series::new((0..n).map(|i| (i * i) as f64).collect()));
        SiteRecord::new("r", SiteRecord::grid(t0, n), series).unwrap()
    }

    #[test]
    fn window_counts_match_enumeration() {
        let site = ramp_site(10);
        let spec = WindowSpec::new(4, 2, 1, &[TEMPERATURE]);
        let ds = window(&site, &spec).unwrap();
        let brute = (0..10).filter(|s| s + 4 + 2 <= 10).count();
        assert_eq!(ds.len(), brute);
        assert_eq!(ds.len(), 5);
        let first = &ds.samples[0];
        assert_eq!(first.input, vec![0.0, 1.0, 2.0, 3.0, 0.0, 1.0, 4.0, 9.0]);
        assert_eq!(first.target, vec![4.0, 5.0]);
        assert_eq!(first.anchor, site.timestamps()[4]);

        let exact = window(&ramp_site(6), &spec).unwrap();
        assert_eq!(exact.len(), 1);
        assert!(matches!(
            window(&ramp_site(5), &spec),
            Err(DataError::SeriesTooShort { len: 5, needed: 6 })
        ));
    }

    #[test]
    fn masked_windows_are_excluded() {
        let site = ramp_site(12);
        let spec = WindowSpec::new(4, 2, 1, &[TEMPERATURE]);
        let masked = mask_measurements(&site, site.timestamps()[4], 1, &[TEMPERATURE]).unwrap();
        let ds = window(&masked, &spec).unwrap();
        // temperature is input-only: index 4 poisons windows whose input covers it
        let expected: Vec<usize> = (0..7).filter(|s| !(*s..s + 4).contains(&4)).collect();
        assert_eq!(ds.samples.iter().map(|s| s.start).collect::<Vec<_>>(), expected);

        let masked = mask_measurements(&site, site.timestamps()[4], 1, &[NET_LOAD]).unwrap();
        let ds = window(&masked, &spec).unwrap();
        let expected: Vec<usize> = (0..7).filter(|s| !(*s..s + 6).contains(&4)).collect();
        assert_eq!(ds.samples.iter().map(|s| s.start).collect::<Vec<_>>(), expected);
        assert_eq!(ds.windows_total, 7);
    }

    #[test]
    fn split_examples() {
        let spec = WindowSpec::new(1, 1, 1, &[]);
        let ds = window(&ramp_site(9), &spec).unwrap();
        assert_eq!(ds.len(), 8);
        let (tr, te) = interleaved_split(&ds, &SplitSpec::default()).unwrap();
        let ords = |d: &WindowedDataset| d.samples.iter().map(|s| s.ordinal + 1).collect::<Vec<_>>();
        assert_eq!(ords(&tr), vec![1, 2, 3, 5, 6, 7]);
        assert_eq!(ords(&te), vec![4, 8]);

        let one = window(&ramp_site(2), &spec).unwrap();
        let (tr, te) = interleaved_split(&one, &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 0));

        let ten = window(&ramp_site(11), &spec).unwrap();
        let alt = SplitSpec {
            train_blocks: 1,
            test_blocks: 1,
        };
        let (tr, te) = interleaved_split(&ten, &alt).unwrap();
        assert_eq!(ords(&tr), vec![1, 3, 5, 7, 9]);
        assert_eq!(ords(&te), vec![2, 4, 6, 8, 10]);
    }

    #[test]
    fn two_point_zscore_and_constant_drop() {
        let t0 = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let mut series = BTreeMap::new();
        series.insert(NET_LOAD.to_string(), Series::new(vec![0.0, 2.0, 0.0]));
        series.insert(TEMPERATURE.to_string(), Series::new(vec![5.0; 3]));
        let site = SiteRecord::new("z", SiteRecord::grid(t0, 3), series).unwrap();
        let ds = window(&site, &WindowSpec::new(1, 1, 1, &[TEMPERATURE])).unwrap();
        let (norm, stats) = normalize(&ds, None).unwrap();
        assert_eq!(stats.dropped, vec![TEMPERATURE.to_string()]);
        assert_eq!(norm.channels, vec![NET_LOAD.to_string()]);
        assert_eq!(norm.samples[0].input, vec![-1.0]);
        assert_eq!(norm.samples[1].input, vec![1.0]);
        // the test split reuses the stats and keeps its own mean
        let (test, _) = normalize(&ds, Some(&stats)).unwrap();
        assert_eq!(test, norm);
    }

    #[test]
    fn constant_target_is_an_error() {
        let t0 = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let mut series = BTreeMap::new();
        series.insert(NET_LOAD.to_string(), Series::new(vec![1.0; 4]));
        let site = SiteRecord::new("c", SiteRecord::grid(t0, 4), series).unwrap();
        let ds = window(&site, &WindowSpec::new(2, 1, 1, &[])).unwrap();
        assert!(matches!(normalize(&ds, None), Err(DataError::ConstantTarget)));
    }
}
