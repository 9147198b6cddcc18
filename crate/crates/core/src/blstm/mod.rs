//! Variational (Bayes-by-Backprop) LSTM forecaster.
//!
//! Every weight of the recurrent cell and of the output head carries a
//! factorized Gaussian posterior. A sequence-to-sequence unroll over the
//! forecast horizon consumes, at each step, the standardized encoder latent
//! of the input window, one latent sample from the kernel particle filter and
//! (optionally) the time of day of the target step. The head emits a mean and
//! a log-variance per step. Forecasts average `mc_samples` weight draws.

mod bayes;
mod forecast;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::cadence;
use crate::kpf::{KpfError, KpfModel};
use crate::nn::{
    lstm_step, lstm_step_backward, Adam, AdamConfig, CheckpointError, LstmState, LstmStepCache, LstmWeights,
    NnError, Tensor,
};
use crate::nn::Checkpoint;
use crate::rng::Rng;

pub use bayes::{kl_gaussian, nll_step, sample_weights, BayesianWeight, SampledWeights};
pub use forecast::{aggregate_members, gaussian_nll, ForecastDistribution, IntervalLevel, IntervalMode, MemberForecast};

/// Smallest predictive standard deviation, in kW.
pub const SIGMA_FLOOR_KW: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BlstmError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unsupported interval level {0}%; expected 50, 68, 95 or 99")]
    BadLevel(u32),
    #[error("need at least one Monte-Carlo sample, got {0}")]
    BadMcSamples(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid forecaster config: {0}")]
    InvalidConfig(String),
    #[error("no training sequences")]
    EmptyTraining,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergentTraining { epoch: usize, loss: f64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Kpf(#[from] KpfError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlstmConfig {
    pub hidden: usize,
    /// Append sin/cos of the target step's time of day to every input.
    pub time_features: bool,
    /// Most recent observed targets appended to every input.
    pub recent_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub prior_sigma: f64,
    /// Initial unconstrained scale; `softplus(-5) ≈ 0.0067`.
    pub init_rho: f64,
    /// KL weight per batch; `None` means `1 / batches_per_epoch`.
    pub kl_weight: Option<f64>,
    /// Weight draws averaged per training batch.
    pub train_mc: usize,
    /// Weight draws averaged per forecast.
    pub mc_samples: usize,
}

impl Default for BlstmConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            time_features: true,
            recent_steps: 1,
            epochs: 60,
            batch_size: 16,
            lr: 3e-3,
            prior_sigma: 1.0,
            init_rho: -5.0,
            kl_weight: None,
            train_mc: 1,
            mc_samples: 30,
        }
    }
}

impl BlstmConfig {
    pub fn validate(&self) -> Result<(), BlstmError> {
        let bad = |m: &str| Err(BlstmError::InvalidConfig(m.to_string()));
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.prior_sigma > 0.0 && self.prior_sigma.is_finite()) {
            return bad("prior_sigma must be positive");
        }
        if !self.init_rho.is_finite() {
            return bad("init_rho must be finite");
        }
        if matches!(self.kl_weight, Some(w) if !(w >= 0.0 && w.is_finite())) {
            return bad("kl_weight must be non-negative");
        }
        if self.train_mc == 0 {
            return Err(BlstmError::BadMcSamples(0));
        }
        if self.mc_samples == 0 {
            return Err(BlstmError::BadMcSamples(0));
        }
        Ok(())
    }
}

/// Source of latent samples fed alongside the encoder latent.
pub trait LatentSampler {
    fn dim(&self) -> usize;
    fn draw(&self, m: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>, BlstmError>;
}

impl LatentSampler for KpfModel {
    fn dim(&self) -> usize {
        self.latent_dim()
    }

    fn draw(&self, m: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>, BlstmError> {
        Ok(self.sample(m, rng)?.rows)
    }
}

/// Replays a fixed set of rows cyclically, ignoring the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedSampler {
    pub rows: Vec<Vec<f64>>,
}

impl LatentSampler for FixedSampler {
    fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn draw(&self, m: usize, _rng: &mut Rng) -> Result<Vec<Vec<f64>>, BlstmError> {
        if self.rows.is_empty() {
            return Err(BlstmError::EmptyTraining);
        }
        Ok((0..m).map(|i| self.rows[i % self.rows.len()].clone()).collect())
    }
}

/// Affine map from model units to kW.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub fn to_kw(&self, v: f64) -> f64 {
        self.mean + self.std * v
    }

    pub fn from_kw(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// One training pair: encoder latent, latest observed targets, first target
/// timestamp and the target trajectory, all targets in model units.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceExample {
    pub latent: Vec<f64>,
    pub recent: Vec<f64>,
    pub anchor: NaiveDateTime,
    pub target: Vec<f64>,
}

/// Fully assembled per-step inputs with their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSequence {
    pub inputs: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

/// Terms of the minibatch free energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeEnergy {
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
}

/// `[sin, cos]` of the time of day.
pub fn time_features(t: NaiveDateTime) -> [f64; 2] {
    let minutes = f64::from(t.hour() * 60 + t.minute()) + f64::from(t.second()) / 60.0;
    let phase = std::f64::consts::TAU * minutes / 1440.0;
    [phase.sin(), phase.cos()]
}

#[derive(Clone, Debug, PartialEq)]
pub struct BayesianLstm {
    cfg: BlstmConfig,
    latent_dim: usize,
    sample_dim: usize,
    horizon: usize,
    weights: BayesianWeight,
    latent_shift: Vec<f64>,
    latent_scale: Vec<f64>,
    target: TargetScale,
}

struct Layout {
    lstm_w: usize,
    lstm_b: usize,
    head_w: usize,
}

impl BayesianLstm {
    /// Fresh model with Glorot-style means, forget bias 1 and constant `ρ`.
    pub fn new(
        cfg: BlstmConfig,
        latent_dim: usize,
        sample_dim: usize,
        horizon: usize,
        target: TargetScale,
        rng: &mut Rng,
    ) -> Result<Self, BlstmError> {
        cfg.validate()?;
        if horizon == 0 {
            return Err(BlstmError::InvalidConfig("horizon must be positive".into()));
        }
        if !(target.std > 0.0 && target.std.is_finite() && target.mean.is_finite()) {
            return Err(BlstmError::InvalidConfig("target scale must be finite and positive".into()));
        }
        let h = cfg.hidden;
        let d = Self::input_width(&cfg, latent_dim, sample_dim);
        if d == 0 {
            return Err(BlstmError::InvalidConfig("model has no inputs".into()));
        }
        let n = Self::count(d, h);
        let mut mu = vec![0.0; n];
        let lstm_w = 4 * h * (d + h);
        let a = (6.0 / (d + 2 * h) as f64).sqrt();
        for v in &mut mu[..lstm_w] {
            *v = a * (2.0 * rng.uniform() - 1.0);
        }
        for v in &mut mu[lstm_w + h..lstm_w + 2 * h] {
            *v = 1.0;
        }
        let head = lstm_w + 4 * h;
        let a = (6.0 / (h + 2) as f64).sqrt() * 0.1;
        for v in &mut mu[head..head + 2 * h] {
            *v = a * (2.0 * rng.uniform() - 1.0);
        }
        let weights = BayesianWeight::new(Tensor::vector(mu), Tensor::vector(vec![cfg.init_rho; n]))?;
        Ok(Self {
            cfg,
            latent_dim,
            sample_dim,
            horizon,
            weights,
            latent_shift: vec![0.0; latent_dim],
            latent_scale: vec![1.0; latent_dim],
            target,
        })
    }

    fn input_width(cfg: &BlstmConfig, latent_dim: usize, sample_dim: usize) -> usize {
        latent_dim + sample_dim + cfg.recent_steps + if cfg.time_features { 2 } else { 0 }
    }

    fn count(input_dim: usize, hidden: usize) -> usize {
        LstmWeights::weight_count(input_dim, hidden) + 2 * hidden + 2
    }

    fn layout(&self) -> Layout {
        let h = self.cfg.hidden;
        let lstm_w = 4 * h * (self.input_dim() + h);
        Layout {
            lstm_w,
            lstm_b: lstm_w + 4 * h,
            head_w: lstm_w + 4 * h,
        }
    }

    pub fn config(&self) -> &BlstmConfig {
        &self.cfg
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn sample_dim(&self) -> usize {
        self.sample_dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn input_dim(&self) -> usize {
        Self::input_width(&self.cfg, self.latent_dim, self.sample_dim)
    }

    pub fn target_scale(&self) -> TargetScale {
        self.target
    }

    /// Number of posterior means (one per weight).
    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &BayesianWeight {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut BayesianWeight {
        &mut self.weights
    }

    /// Sets the affine standardization applied to latents and samples.
    pub fn set_latent_scaler(&mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<(), BlstmError> {
        if shift.len() != self.latent_dim || scale.len() != self.latent_dim {
            return Err(BlstmError::LengthMismatch {
                expected: self.latent_dim,
                got: shift.len().min(scale.len()),
            });
        }
        if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(BlstmError::InvalidConfig("latent scale must be positive".into()));
        }
        self.latent_shift = shift;
        self.latent_scale = scale;
        Ok(())
    }

    fn sigma_floor(&self) -> f64 {
        SIGMA_FLOOR_KW / self.target.std
    }

    fn scaled(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.latent_shift)
            .zip(&self.latent_scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Per-step inputs for one window.
    pub fn prepare_inputs(
        &self,
        latent: &[f64],
        sample: &[f64],
        recent: &[f64],
        anchor: NaiveDateTime,
    ) -> Result<Vec<Vec<f64>>, BlstmError> {
        if recent.len() != self.cfg.recent_steps {
            return Err(BlstmError::LengthMismatch {
                expected: self.cfg.recent_steps,
                got: recent.len(),
            });
        }
        if latent.len() != self.latent_dim {
            return Err(BlstmError::LengthMismatch {
                expected: self.latent_dim,
                got: latent.len(),
            });
        }
        if sample.len() != self.sample_dim {
            return Err(BlstmError::LengthMismatch {
                expected: self.sample_dim,
                got: sample.len(),
            });
        }
        let mut base = self.scaled(latent);
        if self.sample_dim == self.latent_dim {
            base.extend(self.scaled(sample));
        } else {
            base.extend_from_slice(sample);
        }
        base.extend_from_slice(recent);
        Ok((0..self.horizon)
            .map(|t| {
                let mut x = base.clone();
                if self.cfg.time_features {
                    x.extend(time_features(anchor + cadence() * t as i32));
                }
                x
            })
            .collect())
    }

    pub fn prepare(
        &self,
        example: &SequenceExample,
        sample: &[f64],
    ) -> Result<PreparedSequence, BlstmError> {
        if example.target.len() != self.horizon {
            return Err(BlstmError::LengthMismatch {
                expected: self.horizon,
                got: example.target.len(),
            });
        }
        Ok(PreparedSequence {
            inputs: self.prepare_inputs(&example.latent, sample, &example.recent, example.anchor)?,
            target: example.target.clone(),
        })
    }

    /// Head outputs `(mean, ln σ²)` in model units for concrete weights.
    pub fn run(&self, theta: &[f64], inputs: &[Vec<f64>]) -> Result<Vec<(f64, f64)>, BlstmError> {
        Ok(self.unroll(theta, inputs)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn unroll(
        &self,
        theta: &[f64],
        inputs: &[Vec<f64>],
    ) -> Result<(Vec<(f64, f64)>, Vec<LstmStepCache>, Vec<Vec<f64>>), BlstmError> {
        if theta.len() != self.param_count() {
            return Err(BlstmError::LengthMismatch {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        let h = self.cfg.hidden;
        let l = self.layout();
        let cell = LstmWeights::new(&theta[..l.lstm_w], &theta[l.lstm_w..l.lstm_b], self.input_dim(), h)?;
        let hw = &theta[l.head_w..l.head_w + 2 * h];
        let hb = &theta[l.head_w + 2 * h..];
        let mut state = LstmState::zeros(h);
        let mut out = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        let mut hs = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (next, cache) = lstm_step(&state, x, &cell)?;
            let m = hb[0] + crate::nn::dot(&hw[..h], &next.h);
            let s = hb[1] + crate::nn::dot(&hw[h..], &next.h);
            out.push((m, s));
            caches.push(cache);
            hs.push(next.h.clone());
            state = next;
        }
        Ok((out, caches, hs))
    }

    /// Negative log-likelihood of one sequence under concrete weights;
    /// adds `dNLL/dθ` into `dtheta` and returns per-step input gradients.
    pub fn sequence_grad(
        &self,
        theta: &[f64],
        seq: &PreparedSequence,
        dtheta: &mut [f64],
    ) -> Result<(f64, Vec<Vec<f64>>), BlstmError> {
        let (out, caches, hs) = self.unroll(theta, &seq.inputs)?;
        if seq.target.len() != out.len() {
            return Err(BlstmError::LengthMismatch {
                expected: out.len(),
                got: seq.target.len(),
            });
        }
        let h = self.cfg.hidden;
        let l = self.layout();
        let floor = self.sigma_floor();
        let cell = LstmWeights::new(&theta[..l.lstm_w], &theta[l.lstm_w..l.lstm_b], self.input_dim(), h)?;
        let hw = &theta[l.head_w..l.head_w + 2 * h];
        let (gw, rest) = dtheta.split_at_mut(l.lstm_w);
        let (gb, ghead) = rest.split_at_mut(4 * h);
        let (ghw, ghb) = ghead.split_at_mut(2 * h);

        let mut nll = 0.0;
        let mut dxs = vec![Vec::new(); out.len()];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for t in (0..out.len()).rev() {
            let (m, s) = out[t];
            let (loss, dm, ds) = nll_step(m, s, seq.target[t], floor);
            nll += loss;
            ghb[0] += dm;
            ghb[1] += ds;
            let mut dh = dh_next.clone();
            for j in 0..h {
                ghw[j] += dm * hs[t][j];
                ghw[h + j] += ds * hs[t][j];
                dh[j] += dm * hw[j] + ds * hw[h + j];
            }
            let g = lstm_step_backward(&caches[t], &dh, &dc_next, &cell, gw, gb);
            dh_next = g.dh_prev;
            dc_next = g.dc_prev;
            dxs[t] = g.dx;
        }
        Ok((nll, dxs))
    }

    /// Minibatch free energy `kl_weight · KL + mean_k Σ_seq NLL(θ_k)` for the
    /// given noise draws. Gradients accumulate into the posterior parameters.
    pub fn free_energy(
        &mut self,
        batch: &[PreparedSequence],
        noise: &[Vec<f64>],
        kl_weight: f64,
    ) -> Result<FreeEnergy, BlstmError> {
        if noise.is_empty() {
            return Err(BlstmError::BadMcSamples(0));
        }
        let n = self.param_count();
        let share = 1.0 / noise.len() as f64;
        let mut nll = 0.0;
        for eps in noise {
            if eps.len() != n {
                return Err(BlstmError::LengthMismatch { expected: n, got: eps.len() });
            }
            let theta = self.weights.theta(eps);
            let mut dtheta = vec![0.0; n];
            for seq in batch {
                nll += share * self.sequence_grad(&theta, seq, &mut dtheta)?.0;
            }
            self.weights.backprop(&dtheta, eps, share);
        }
        let kl = kl_gaussian(&self.weights, self.cfg.prior_sigma);
        self.weights.kl_backward(self.cfg.prior_sigma, kl_weight);
        Ok(FreeEnergy {
            nll,
            kl,
            total: kl_weight * kl + nll,
        })
    }

    /// One Monte-Carlo member per sample row, each with a fresh weight draw.
    pub fn members(
        &self,
        latent: &[f64],
        samples: &[Vec<f64>],
        recent: &[f64],
        anchor: NaiveDateTime,
        rng: &mut Rng,
    ) -> Result<Vec<MemberForecast>, BlstmError> {
        let floor = self.sigma_floor();
        samples
            .iter()
            .map(|sample| {
                let inputs = self.prepare_inputs(latent, sample, recent, anchor)?;
                let theta = sample_weights(&self.weights, rng).theta;
                let out = self.run(&theta, &inputs)?;
                let mu = out.iter().map(|&(m, _)| self.target.to_kw(m)).collect();
                let sigma = out
                    .iter()
                    .map(|&(_, s)| self.target.std * (0.5 * s).exp().max(floor))
                    .collect();
                Ok(MemberForecast { mu, sigma })
            })
            .collect()
    }

    /// Predictive distribution in kW from `mc_samples` weight and latent draws.
    pub fn forecast(
        &self,
        latent: &[f64],
        recent: &[f64],
        sampler: &dyn LatentSampler,
        anchor: NaiveDateTime,
        rng: &mut Rng,
    ) -> Result<ForecastDistribution, BlstmError> {
        self.forecast_with(latent, recent, sampler, anchor, self.cfg.mc_samples, rng)
    }

    pub fn forecast_with(
        &self,
        latent: &[f64],
        recent: &[f64],
        sampler: &dyn LatentSampler,
        anchor: NaiveDateTime,
        mc_samples: usize,
        rng: &mut Rng,
    ) -> Result<ForecastDistribution, BlstmError> {
        if mc_samples == 0 {
            return Err(BlstmError::BadMcSamples(0));
        }
        let samples = sampler.draw(mc_samples, rng)?;
        let members = self.members(latent, &samples, recent, anchor, rng)?;
        let (mu_pred, sigma_pred) = aggregate_members(&members)?;
        Ok(ForecastDistribution {
            timestamps: (0..self.horizon).map(|t| anchor + cadence() * t as i32).collect(),
            mu_pred,
            sigma_pred,
            mc_samples_used: mc_samples,
        })
    }

    pub fn save(&self, ck: &mut Checkpoint, section: &str) -> Result<(), BlstmError> {
        ck.insert(format!("{section}.mu"), self.weights.mu.value.clone());
        ck.insert(format!("{section}.rho"), self.weights.rho.value.clone());
        ck.insert_meta(format!("{section}.config"), &self.cfg)?;
        ck.insert_meta(
            format!("{section}.dims"),
            &[self.latent_dim, self.sample_dim, self.horizon],
        )?;
        ck.insert_meta(format!("{section}.latent_shift"), &self.latent_shift)?;
        ck.insert_meta(format!("{section}.latent_scale"), &self.latent_scale)?;
        ck.insert_meta(format!("{section}.target"), &self.target)?;
        Ok(())
    }

    pub fn load(ck: &Checkpoint, section: &str) -> Result<Self, BlstmError> {
        let cfg: BlstmConfig = ck.meta(&format!("{section}.config"))?;
        let [latent_dim, sample_dim, horizon]: [usize; 3] = ck.meta(&format!("{section}.dims"))?;
        let target: TargetScale = ck.meta(&format!("{section}.target"))?;
        let mut model = Self::new(cfg, latent_dim, sample_dim, horizon, target, &mut Rng::new(0))?;
        let mu = ck.get(&format!("{section}.mu"))?.clone();
        let rho = ck.get(&format!("{section}.rho"))?.clone();
        if mu.len() != model.param_count() || rho.len() != model.param_count() {
            return Err(CheckpointError::Manifest(format!(
                "{section}: expected {} weights, found mu {} rho {}",
                model.param_count(),
                mu.len(),
                rho.len()
            ))
            .into());
        }
        model.weights = BayesianWeight::new(mu, rho)?;
        model.set_latent_scaler(
            ck.meta(&format!("{section}.latent_shift"))?,
            ck.meta(&format!("{section}.latent_scale"))?,
        )?;
        Ok(model)
    }
}

/// Loss history of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Free energy summed over the batches of each epoch.
    pub loss_trace: Vec<f64>,
    pub kl_weight: f64,
}

/// Population mean and standard deviation per latent coordinate; constant
/// coordinates get scale 1.
pub fn latent_scaler(latents: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let Some(first) = latents.first() else {
        return (Vec::new(), Vec::new());
    };
    let n = latents.len() as f64;
    let k = first.len();
    let mut shift = vec![0.0; k];
    let mut scale = vec![1.0; k];
    for j in 0..k {
        let mut col: Vec<f64> = latents.iter().map(|r| r[j]).collect();
        let mean = crate::numeric::sorted_sum(&mut col) / n;
        let mut dev: Vec<f64> = latents.iter().map(|r| (r[j] - mean).powi(2)).collect();
        let sd = (crate::numeric::sorted_sum(&mut dev) / n).sqrt();
        shift[j] = mean;
        if sd > 1e-12 {
            scale[j] = sd;
        }
    }
    (shift, scale)
}

/// Trains a fresh model. Each epoch draws one latent sample per training
/// sequence from `sampler`, shuffles, and takes one Adam step per batch with
/// `train_mc` weight draws.
pub fn train_blstm(
    examples: &[SequenceExample],
    sampler: &dyn LatentSampler,
    target: TargetScale,
    cfg: &BlstmConfig,
    seed: u64,
) -> Result<(BayesianLstm, TrainReport), BlstmError> {
    let first = examples.first().ok_or(BlstmError::EmptyTraining)?;
    let horizon = first.target.len();
    let root = Rng::new(seed);
    let mut model = BayesianLstm::new(
        cfg.clone(),
        first.latent.len(),
        sampler.dim(),
        horizon,
        target,
        &mut root.fork(0),
    )?;
    let latents: Vec<Vec<f64>> = examples.iter().map(|e| e.latent.clone()).collect();
    let (shift, scale) = latent_scaler(&latents);
    model.set_latent_scaler(shift, scale)?;

    let batches = examples.len().div_ceil(cfg.batch_size);
    let kl_weight = cfg.kl_weight.unwrap_or(1.0 / batches as f64);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = root.fork(1 + epoch as u64);
        let samples = sampler.draw(examples.len(), &mut rng)?;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| model.prepare(&examples[i], &samples[i]))
                .collect::<Result<Vec<_>, _>>()?;
            let noise: Vec<Vec<f64>> = (0..cfg.train_mc).map(|_| rng.normal_vec(model.param_count())).collect();
            let fe = model.free_energy(&batch, &noise, kl_weight)?;
            if !fe.total.is_finite() {
                return Err(BlstmError::DivergentTraining { epoch, loss: fe.total });
            }
            epoch_loss += fe.total;
            let w = &mut model.weights;
            adam.step(&mut [&mut w.mu, &mut w.rho], 1.0);
        }
        log::debug!("blstm epoch {epoch}: free energy {epoch_loss:.4}");
        loss_trace.push(epoch_loss);
    }
    Ok((model, TrainReport { loss_trace, kl_weight }))
}
