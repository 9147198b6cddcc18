//! Three-stage pipeline (autoencoder, particle sampler, variational LSTM),
//! evaluation, run manifests and the experiment drivers behind the CLI.

mod config;
mod experiments;
mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDateTime;
use thiserror::Error;

use crate::autoencoder::{train_ae, AeError, ConvAutoencoder};
use crate::blstm::{
    train_blstm, BayesianLstm, BlstmError, ForecastDistribution, IntervalLevel, IntervalMode, SequenceExample,
    TargetScale,
};
use crate::data::{
    interleaved_split, load_csv, normalize, synth_site, window, DataError, NormStats, NET_LOAD, SiteRecord, WindowSpec,
    WindowedDataset,
};
use crate::kpf::{KpfError, KpfModel};
use crate::metrics::{pbb_z, seasonal_report, EvalReport, MetricsError, ReportOptions};
use crate::nn::{Checkpoint, CheckpointError, Tensor};
use crate::rng::Rng;

pub use config::{
    AggregationSweep, CsvSource, DataSource, EvalConfig, ExperimentConfig, Imputation, MissingStudy,
    PenetrationSweep, PipelineConfig, WindowConfig, WindowShape,
};
pub use experiments::{
    aggregation_experiment, aggregation_sites, median_individual_mape, missing_experiment, penetration_experiment,
    write_aggregation_csv, write_missing_csv, write_penetration_csv, AggregationRow, MissingOutcome, MissingRow,
    PenetrationRow,
};
pub use manifest::{write_json_atomic, RunManifest, StageTiming};

/// File name of the checkpoint manifest inside a run directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MANIFEST_FILE: &str = "manifest.json";

const STREAM_AE: u64 = 1;
const STREAM_BLSTM: u64 = 2;
const STREAM_FORECAST: u64 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `data`: {0}")]
    Data(#[from] DataError),
    #[error("stage `data`: input window at index {index} has a missing `{channel}` value")]
    MaskedInput { channel: String, index: usize },
    #[error("stage `autoencoder`: {0}")]
    Autoencoder(#[from] AeError),
    #[error("stage `kpf`: {0}")]
    Kpf(#[from] KpfError),
    #[error("stage `blstm`: {0}")]
    Blstm(#[from] BlstmError),
    #[error("stage `evaluate`: {0}")]
    Metrics(#[from] MetricsError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 config, 3 data, 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) | Self::MaskedInput { .. } => 3,
            Self::Autoencoder(AeError::DivergentTraining { .. }) | Self::Blstm(BlstmError::DivergentTraining { .. }) => 4,
            _ => 1,
        }
    }
}

/// Seed for one stage, derived from the run seed.
pub fn stage_seed(seed: u64, stream: u64) -> u64 {
    Rng::new(seed).fork(stream).next_u64()
}

/// Loads or synthesizes the configured site.
pub fn load_site(source: &DataSource) -> Result<SiteRecord, PipelineError> {
    match source {
        DataSource::Synth(s) => Ok(synth_site(s)?),
        DataSource::Csv(c) => Ok(load_csv(&c.path, &c.schema())?),
    }
}

/// The last `k` normalized net-load values of a channel-major input window.
fn recent_targets(norm: &NormStats, input: &[f64], t_win: usize, k: usize) -> Vec<f64> {
    let c = norm
        .channels
        .iter()
        .position(|cs| cs.name == NET_LOAD)
        .expect("net-load is always an input channel");
    input[c * t_win + t_win - k..(c + 1) * t_win].to_vec()
}

/// Everything needed to forecast: window geometry, input statistics and the
/// three trained stages.
#[derive(Clone, Debug)]
pub struct Forecaster {
    pub window: WindowSpec,
    pub norm: NormStats,
    pub ae: ConvAutoencoder,
    pub kpf: KpfModel,
    pub blstm: BayesianLstm,
}

impl Forecaster {
    pub fn t_win(&self) -> usize {
        self.window.t_win
    }

    pub fn horizon(&self) -> usize {
        self.window.horizon
    }

    /// Scalars stored in the autoencoder and forecaster sections.
    pub fn weight_count(&self) -> usize {
        self.ae.param_count() + 2 * self.blstm.param_count()
    }

    /// Distribution for a normalized channel-major input window.
    pub fn forecast_normalized(
        &self,
        input: Vec<f64>,
        anchor: NaiveDateTime,
        rng: &mut Rng,
    ) -> Result<ForecastDistribution, PipelineError> {
        let x = Tensor::matrix(self.norm.channels.len(), self.t_win(), input).map_err(AeError::from)?;
        let latent = self.ae.encode(&x)?.into_data();
        let recent = recent_targets(&self.norm, x.data(), self.t_win(), self.blstm.config().recent_steps);
        Ok(self.blstm.forecast(&latent, &recent, &self.kpf, anchor, rng)?)
    }

    /// Normalized input window ending just before `anchor_idx`.
    pub fn site_input(&self, site: &SiteRecord, anchor_idx: usize) -> Result<Vec<f64>, PipelineError> {
        let t_win = self.t_win();
        if anchor_idx < t_win || anchor_idx > site.len() {
            return Err(DataError::OutOfRange(format!(
                "anchor {anchor_idx} needs {t_win} preceding steps within {} rows",
                site.len()
            ))
            .into());
        }
        let start = anchor_idx - t_win;
        let mut input = Vec::with_capacity(self.norm.channels.len() * t_win);
        for cs in &self.norm.channels {
            let series = site
                .series(&cs.name)
                .ok_or_else(|| DataError::UnknownChannel(cs.name.clone()))?;
            for i in start..anchor_idx {
                let v = series.get(i).ok_or_else(|| PipelineError::MaskedInput {
                    channel: cs.name.clone(),
                    index: i,
                })?;
                input.push((v - cs.mean) / cs.std);
            }
        }
        Ok(input)
    }

    /// Forecast for the horizon starting at grid index `anchor_idx`.
    pub fn forecast_at(
        &self,
        site: &SiteRecord,
        anchor_idx: usize,
        rng: &mut Rng,
    ) -> Result<ForecastDistribution, PipelineError> {
        let input = self.site_input(site, anchor_idx)?;
        let anchor = site.timestamps()[anchor_idx - 1] + crate::data::cadence();
        self.forecast_normalized(input, anchor, rng)
    }

    /// One forecast per window of a raw (kW) dataset; window `k` uses its own
    /// stream keyed by its ordinal.
    pub fn forecast_dataset(
        &self,
        raw: &WindowedDataset,
        seed: u64,
    ) -> Result<Vec<ForecastDistribution>, PipelineError> {
        let (ds, _) = normalize(raw, Some(&self.norm))?;
        let base = Rng::new(seed).fork(STREAM_FORECAST);
        ds.samples
            .iter()
            .map(|s| self.forecast_normalized(s.input.clone(), s.anchor, &mut base.fork(s.ordinal as u64)))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, PipelineError> {
        let mut ck = Checkpoint::new();
        self.ae.save(&mut ck, "ae")?;
        self.kpf.save(&mut ck, "kpf")?;
        self.blstm.save(&mut ck, "blstm")?;
        ck.insert_meta("norm", &self.norm)?;
        ck.insert_meta("window", &self.window)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, PipelineError> {
        Ok(Self {
            window: ck.meta("window")?,
            norm: ck.meta("norm")?,
            ae: ConvAutoencoder::load(ck, "ae")?,
            kpf: KpfModel::load(ck, "kpf")?,
            blstm: BayesianLstm::load(ck, "blstm")?,
        })
    }

    /// Writes `checkpoint.json` and `checkpoint.bin` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let path = dir.join(CHECKPOINT_FILE);
        self.to_checkpoint()?.save(&path)?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        Self::from_checkpoint(&Checkpoint::load(&dir.join(CHECKPOINT_FILE))?)
    }
}

/// Byproducts of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Raw (kW) windows of each split.
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    pub timings: Vec<StageTiming>,
    pub ae_loss_trace: Vec<f64>,
    pub ae_loss_trend_ok: bool,
    /// Reconstruction MSE on the normalized test windows.
    pub ae_holdout_mse: f64,
    pub blstm_loss_trace: Vec<f64>,
    pub kl_weight: f64,
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &str, f: impl FnOnce() -> Result<T, PipelineError>) -> Result<T, PipelineError> {
    let t0 = Instant::now();
    let out = f()?;
    timings.push(StageTiming {
        stage: stage.to_string(),
        seconds: t0.elapsed().as_secs_f64(),
    });
    Ok(out)
}

/// Windows and splits `site`, then trains the autoencoder on the training
/// inputs, fits the sampler on all encoded training windows and trains the
/// forecaster on (latent, sample) → target pairs.
pub fn train_pipeline(site: &SiteRecord, cfg: &PipelineConfig) -> Result<(Forecaster, TrainOutcome), PipelineError> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let spec = cfg.window.spec();
    let (train, test, train_n, norm) = timed(&mut timings, "data", || {
        let ds = window(site, &spec)?;
        let (train, test) = interleaved_split(&ds, &cfg.split)?;
        if train.is_empty() || test.is_empty() {
            return Err(DataError::EmptyDataset.into());
        }
        let (train_n, norm) = normalize(&train, None)?;
        Ok((train, test, train_n, norm))
    })?;
    let ae = timed(&mut timings, "autoencoder", || {
        Ok(train_ae(&train_n, &cfg.ae, stage_seed(cfg.seed, STREAM_AE))?)
    })?;
    let (test_n, _) = normalize(&test, Some(&norm))?;
    let ae_holdout_mse = ae.mean_reconstruction_mse(&test_n)?;
    let latents = ae.encode_dataset(&train_n)?;
    let kpf = timed(&mut timings, "kpf", || Ok(KpfModel::fit(&latents, &cfg.kpf)?))?;
    let target = norm.target();
    let scale = TargetScale {
        mean: target.mean,
        std: target.std,
    };
    let examples: Vec<SequenceExample> = train_n
        .samples
        .iter()
        .zip(latents)
        .map(|(s, latent)| SequenceExample {
            latent,
            recent: recent_targets(&norm, &s.input, spec.t_win, cfg.blstm.recent_steps),
            anchor: s.anchor,
            target: s.target.clone(),
        })
        .collect();
    let (blstm, report) = timed(&mut timings, "blstm", || {
        Ok(train_blstm(&examples, &kpf, scale, &cfg.blstm, stage_seed(cfg.seed, STREAM_BLSTM))?)
    })?;
    let forecaster = Forecaster {
        window: spec,
        norm,
        ae: ae.model,
        kpf,
        blstm,
    };
    let outcome = TrainOutcome {
        train,
        test,
        timings,
        ae_loss_trace: ae.loss_trace,
        ae_loss_trend_ok: ae.loss_trend_ok,
        ae_holdout_mse,
        blstm_loss_trace: report.loss_trace,
        kl_weight: report.kl_weight,
    };
    Ok((forecaster, outcome))
}

/// Flattened forecasts over a split with their report.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub timestamps: Vec<NaiveDateTime>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub obs: Vec<f64>,
}

impl Evaluation {
    /// Percentage of observations strictly inside `μ ± zσ`.
    pub fn coverage(&self, z: f64) -> Result<f64, PipelineError> {
        Ok(pbb_z(&self.mu, &self.sigma, &self.obs, z)?)
    }

    pub fn coverage_level(&self, level: IntervalLevel, mode: IntervalMode) -> Result<f64, PipelineError> {
        self.coverage(level.z(mode))
    }
}

/// Forecasts every window of `raw` and scores all horizon steps.
pub fn evaluate(
    f: &Forecaster,
    raw: &WindowedDataset,
    split: &str,
    seed: u64,
    opts: &ReportOptions,
) -> Result<Evaluation, PipelineError> {
    if raw.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    let forecasts = f.forecast_dataset(raw, seed)?;
    let n = forecasts.len() * f.horizon();
    let (mut timestamps, mut mu, mut sigma, mut obs) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (fc, s) in forecasts.iter().zip(&raw.samples) {
        timestamps.extend_from_slice(&fc.timestamps);
        mu.extend_from_slice(&fc.mu_pred);
        sigma.extend_from_slice(&fc.sigma_pred);
        obs.extend_from_slice(&s.target);
    }
    let report = seasonal_report(&mu, &sigma, &obs, &timestamps, split, opts)?;
    Ok(Evaluation {
        report,
        timestamps,
        mu,
        sigma,
        obs,
    })
}

/// Forecast table: `timestamp, mu_kw, sigma_kw` and the 50/95/99% bands.
pub fn write_forecast_csv<W: std::io::Write>(
    fc: &ForecastDistribution,
    mode: IntervalMode,
    w: W,
) -> Result<(), PipelineError> {
    let csv_err = |e: csv::Error| PipelineError::Data(e.into());
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["timestamp", "mu_kw", "sigma_kw", "lo50", "hi50", "lo95", "hi95", "lo99", "hi99"])
        .map_err(csv_err)?;
    let bands: Vec<(Vec<f64>, Vec<f64>)> = [IntervalLevel::P50, IntervalLevel::P95, IntervalLevel::P99]
        .into_iter()
        .map(|l| fc.interval(l, mode))
        .collect();
    for t in 0..fc.horizon() {
        let mut rec = vec![
            fc.timestamps[t].format(crate::data::TIMESTAMP_FORMAT).to_string(),
            format!("{:.6}", fc.mu_pred[t]),
            format!("{:.6}", fc.sigma_pred[t]),
        ];
        for (lo, hi) in &bands {
            rec.push(format!("{:.6}", lo[t]));
            rec.push(format!("{:.6}", hi[t]));
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush().map_err(|e| csv_err(e.into()))
}
