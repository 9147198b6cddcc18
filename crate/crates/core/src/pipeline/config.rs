//! Pipeline configuration, read from TOML. Every table rejects unknown keys
//! and the whole configuration is validated before any stage runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::autoencoder::AeConfig;
use crate::blstm::{BlstmConfig, IntervalMode};
use crate::data::{
    CsvSchema, SplitSpec, SynthConfig, WindowSpec, APPARENT_POWER, HUMIDITY, NET_LOAD, SOLAR_PV, TEMPERATURE,
    WIND_DIRECTION,
};
use crate::kpf::KpfConfig;
use crate::metrics::{ReportOptions, Seasons, DEFAULT_MAPE_FLOOR_KW, DEFAULT_MAPE_FLOOR_REL};

const KNOWN_CHANNELS: [&str; 6] = [NET_LOAD, SOLAR_PV, TEMPERATURE, HUMIDITY, APPARENT_POWER, WIND_DIRECTION];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: String,
    /// Canonical channel name to file header, for renamed columns.
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
}

fn default_timestamp_column() -> String {
    "timestamp".to_string()
}

impl CsvSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            timestamp_column: default_timestamp_column(),
            columns: BTreeMap::new(),
        }
    }

    pub fn schema(&self) -> CsvSchema {
        let mut schema = CsvSchema {
            timestamp: self.timestamp_column.clone(),
            ..CsvSchema::default()
        };
        for (channel, header) in &self.columns {
            schema = schema.with_column(channel, header);
        }
        schema
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthConfig),
    Csv(CsvSource),
}

impl Default for DataSource {
    fn default() -> Self {
        Self::Synth(SynthConfig::new(90, 0.2, 1))
    }
}

/// Window geometry for one forecast horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowShape {
    pub t_win: usize,
    pub horizon: usize,
    pub stride: usize,
}

// Strides are multiples of 16 steps: under a 3/1 interleave this keeps the
// test anchors at times of day that also occur among training anchors.
impl WindowShape {
    pub const FIFTEEN_MINUTE: WindowShape = WindowShape {
        t_win: 48,
        horizon: 1,
        stride: 16,
    };
    pub const DAY_AHEAD: WindowShape = WindowShape {
        t_win: 480,
        horizon: 96,
        stride: 16,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub t_win: usize,
    pub horizon: usize,
    pub stride: usize,
    pub channels: Vec<String>,
    pub include_solar: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            t_win: 480,
            horizon: 96,
            stride: 16,
            channels: vec![TEMPERATURE.into(), HUMIDITY.into(), WIND_DIRECTION.into()],
            include_solar: false,
        }
    }
}

impl WindowConfig {
    pub fn spec(&self) -> WindowSpec {
        WindowSpec {
            t_win: self.t_win,
            horizon: self.horizon,
            stride: self.stride,
            channel_order: self.channels.clone(),
            include_solar: self.include_solar,
        }
    }

    pub fn shape(&self) -> WindowShape {
        WindowShape {
            t_win: self.t_win,
            horizon: self.horizon,
            stride: self.stride,
        }
    }

    pub fn with_shape(&self, shape: WindowShape) -> Self {
        Self {
            t_win: shape.t_win,
            horizon: shape.horizon,
            stride: shape.stride,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mape_floor_kw: f64,
    pub mape_floor_rel: f64,
    pub seasons: Seasons,
    pub interval_mode: IntervalMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mape_floor_kw: DEFAULT_MAPE_FLOOR_KW,
            mape_floor_rel: DEFAULT_MAPE_FLOOR_REL,
            seasons: Seasons::default(),
            interval_mode: IntervalMode::Exact,
        }
    }
}

impl EvalConfig {
    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            mape_floor_kw: self.mape_floor_kw,
            mape_floor_rel: self.mape_floor_rel,
            seasons: self.seasons.clone(),
        }
    }
}

/// How masked net-load inputs are filled during rolling forecasts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputation {
    /// The model's own predicted mean.
    PredictedMean,
    /// Multiple imputation: each of `paths` fills a block with its own
    /// forecast at one drawn quantile, `μ + σ·z`; bands come from the mixture
    /// over paths.
    #[default]
    PredictiveSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenetrationSweep {
    pub levels: Vec<f64>,
    pub windows: Vec<WindowShape>,
    pub days: usize,
}

impl Default for PenetrationSweep {
    fn default() -> Self {
        Self {
            levels: vec![0.0, 0.10, 0.20, 0.36, 0.50],
            windows: vec![WindowShape::FIFTEEN_MINUTE, WindowShape::DAY_AHEAD],
            days: 365,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationSweep {
    pub site_counts: Vec<usize>,
    /// Individual sites trained for comparison (the first ones generated).
    pub individual_sites: usize,
    /// Per-site penetration targets are spread over this range.
    pub penetration_range: [f64; 2],
    pub days: usize,
    pub weather_seed: u64,
    pub window: WindowShape,
}

impl Default for AggregationSweep {
    fn default() -> Self {
        Self {
            site_counts: vec![10, 40, 100],
            individual_sites: 5,
            penetration_range: [0.1, 0.3],
            days: 90,
            weather_seed: 7,
            window: WindowShape::DAY_AHEAD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissingStudy {
    pub mask_steps: usize,
    /// First masked step; defaults to the last midnight leaving room for
    /// the whole mask.
    pub mask_start: Option<NaiveDateTime>,
    pub imputation: Imputation,
    /// Imputation paths under `predictive_sample`.
    pub paths: usize,
}

impl Default for MissingStudy {
    fn default() -> Self {
        Self {
            mask_steps: 288,
            mask_start: None,
            imputation: Imputation::PredictiveSample,
            paths: 16,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub penetration: PenetrationSweep,
    pub aggregation: AggregationSweep,
    pub missing: MissingStudy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSource,
    pub window: WindowConfig,
    pub split: SplitSpec,
    pub ae: AeConfig,
    pub kpf: KpfConfig,
    pub blstm: BlstmConfig,
    pub eval: EvalConfig,
    pub experiment: ExperimentConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data: DataSource::default(),
            window: WindowConfig::default(),
            split: SplitSpec::default(),
            ae: AeConfig::default(),
            kpf: KpfConfig::default(),
            blstm: BlstmConfig::default(),
            eval: EvalConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

fn check_shape(what: &str, s: &WindowShape) -> Result<(), PipelineError> {
    if s.t_win == 0 || s.horizon == 0 || s.stride == 0 {
        return Err(invalid(format!("{what}: t_win, horizon and stride must be >= 1")));
    }
    Ok(())
}

fn check_days(what: &str, days: usize, shape: &WindowShape, split: &SplitSpec) -> Result<(), PipelineError> {
    let len = days * 96;
    let windows = if len < shape.t_win + shape.horizon {
        0
    } else {
        (len - shape.t_win - shape.horizon) / shape.stride + 1
    };
    if windows < split.train_blocks + split.test_blocks {
        return Err(invalid(format!(
            "{what}: {days} days yield {windows} windows of {}+{} steps; need at least {}",
            shape.t_win,
            shape.horizon,
            split.train_blocks + split.test_blocks
        )));
    }
    Ok(())
}

fn check_recent(what: &str, recent_steps: usize, t_win: usize) -> Result<(), PipelineError> {
    if recent_steps > t_win {
        return Err(invalid(format!("{what}: recent_steps {recent_steps} exceeds t_win {t_win}")));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| invalid(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Rejects anything a later stage would reject.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let w = &self.window;
        check_shape("window", &w.shape())?;
        for c in &w.channels {
            if !KNOWN_CHANNELS.contains(&c.as_str()) {
                return Err(invalid(format!("window: unknown channel `{c}`")));
            }
        }
        if self.split.train_blocks == 0 || self.split.test_blocks == 0 {
            return Err(invalid("split: train_blocks and test_blocks must be >= 1"));
        }
        let in_channels = w.spec().input_channels().len();
        self.ae
            .validate(in_channels, w.t_win)
            .map_err(|e| invalid(format!("ae: {e}")))?;
        if self.kpf.gamma == 0 {
            return Err(invalid("kpf: gamma must be >= 1"));
        }
        if self.kpf.prior_dim == Some(0) {
            return Err(invalid("kpf: prior_dim must be >= 1"));
        }
        self.blstm.validate().map_err(|e| invalid(format!("blstm: {e}")))?;
        check_recent("blstm", self.blstm.recent_steps, w.t_win)?;
        let floor = self.eval.mape_floor_kw;
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(invalid("eval: mape_floor_kw must be positive"));
        }
        let rel = self.eval.mape_floor_rel;
        if !(0.0..=1.0).contains(&rel) {
            return Err(invalid("eval: mape_floor_rel must be in [0, 1]"));
        }
        let seasons = &self.eval.seasons;
        for m in seasons.winter_months.iter().chain(&seasons.summer_months) {
            if !(1..=12).contains(m) {
                return Err(invalid(format!("eval: month {m} out of range")));
            }
        }
        if let DataSource::Synth(s) = &self.data {
            s.validate().map_err(|e| invalid(format!("data: {e}")))?;
            check_days("data", s.days, &w.shape(), &self.split)?;
        }
        if let DataSource::Csv(c) = &self.data {
            for k in c.columns.keys() {
                if !KNOWN_CHANNELS.contains(&k.as_str()) {
                    return Err(invalid(format!("data: unknown channel `{k}`")));
                }
            }
        }
        self.validate_experiments()
    }

    fn validate_experiments(&self) -> Result<(), PipelineError> {
        let p = &self.experiment.penetration;
        if p.levels.is_empty() || p.windows.is_empty() {
            return Err(invalid("experiment.penetration: levels and windows must be non-empty"));
        }
        for &l in &p.levels {
            if !(0.0..1.0).contains(&l) {
                return Err(invalid(format!("experiment.penetration: level {l} outside [0, 1)")));
            }
        }
        for s in &p.windows {
            self.check_model_shape("experiment.penetration", s, p.days)?;
        }
        let a = &self.experiment.aggregation;
        if a.site_counts.is_empty() || a.site_counts.contains(&0) || a.individual_sites == 0 {
            return Err(invalid("experiment.aggregation: site counts must be >= 1"));
        }
        let [lo, hi] = a.penetration_range;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(invalid("experiment.aggregation: penetration_range must satisfy 0 <= lo <= hi < 1"));
        }
        self.check_model_shape("experiment.aggregation", &a.window, a.days)?;
        if self.experiment.missing.mask_steps == 0 {
            return Err(invalid("experiment.missing: mask_steps must be >= 1"));
        }
        if self.experiment.missing.paths == 0 {
            return Err(invalid("experiment.missing: paths must be >= 1"));
        }
        Ok(())
    }

    fn check_model_shape(&self, what: &str, shape: &WindowShape, days: usize) -> Result<(), PipelineError> {
        check_shape(what, shape)?;
        let in_channels = self.window.with_shape(*shape).spec().input_channels().len();
        self.ae
            .validate(in_channels, shape.t_win)
            .map_err(|e| invalid(format!("{what}: ae: {e}")))?;
        check_recent(what, self.blstm.recent_steps, shape.t_win)?;
        if days == 0 {
            return Err(invalid(format!("{what}: days must be >= 1")));
        }
        check_days(what, days, shape, &self.split)
    }
}
