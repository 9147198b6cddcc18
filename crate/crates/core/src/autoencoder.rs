//! 1-D convolutional autoencoder over stacked input windows.
//!
//! Encoder: strided conv layers, flatten, dense to the latent vector
//! (linear). Decoder: dense back to the last feature map (ReLU), then
//! transposed convs mirroring the encoder, and the final layer is linear.
//! Encoder windows are aligned to the end of each input so the most recent
//! sample always reaches the code.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{NormStats, WindowedDataset};
use crate::nn::{
    conv1d, conv1d_backward, conv1d_out_len, conv1d_transpose, conv1d_transpose_backward,
    conv1d_transpose_out_len, glorot, Activation, Adam, AdamConfig, Checkpoint, CheckpointError, ConvGeometry,
    Dense, NnError, Parameter, Tensor,
};
use crate::numeric::sorted_sum;
use crate::rng::Rng;

/// Width of the epoch windows used by the loss-trend check.
pub const TREND_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum AeError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergentTraining { epoch: usize, loss: f64 },
    #[error("invalid autoencoder config: {0}")]
    InvalidConfig(String),
    #[error("input has shape {got:?}, model expects [{channels}, {t_win}]")]
    InputShape {
        got: Vec<usize>,
        channels: usize,
        t_win: usize,
    },
    #[error("latent vector has length {got}, model expects {expected}")]
    LatentShape { expected: usize, got: usize },
    #[error("need at least 3 samples for correlation, got {0}")]
    InsufficientSamples(usize),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
}

impl ConvLayerSpec {
    pub const fn new(channels: usize, kernel: usize, stride: usize, padding: usize, activation: Activation) -> Self {
        Self {
            channels,
            kernel,
            stride,
            padding,
            activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    pub latent_dim: usize,
    /// Encoder conv stack; the decoder mirrors it.
    pub encoder: Vec<ConvLayerSpec>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        let layer = |c| ConvLayerSpec::new(c, 5, 4, 0, Activation::Relu);
        Self {
            latent_dim: 20,
            encoder: vec![layer(8), layer(16), layer(16)],
            epochs: 40,
            batch_size: 16,
            lr: 2e-3,
        }
    }
}

/// One transposed-conv layer of the mirrored decoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub geom: ConvGeometry,
    pub output_padding: usize,
    pub activation: Activation,
}

/// End-aligned geometry of one encoder layer on a length-`t` input: the left
/// padding is the smallest value at least the layer's `padding` for which the last window
/// ends on the last input sample, and the right end is never padded.
fn layer_geometry(l: &ConvLayerSpec, t: usize) -> Option<ConvGeometry> {
    if l.stride == 0 || l.kernel == 0 {
        return None;
    }
    let mut pad_left = l.padding.max(l.kernel.saturating_sub(t));
    while (t + pad_left - l.kernel) % l.stride != 0 {
        pad_left += 1;
    }
    Some(ConvGeometry {
        stride: l.stride,
        pad_left,
        pad_right: 0,
    })
}

/// Per-layer geometry and feature-map lengths through the encoder; the
/// lengths start with `t_win`.
fn encoder_plan(cfg: &AeConfig, t_win: usize) -> Result<(Vec<ConvGeometry>, Vec<usize>), AeError> {
    let mut lens = vec![t_win];
    let mut geoms = Vec::with_capacity(cfg.encoder.len());
    for (i, l) in cfg.encoder.iter().enumerate() {
        let t = *lens.last().unwrap();
        let fit = layer_geometry(l, t).and_then(|g| Some((g, conv1d_out_len(t, l.kernel, g)?)));
        let (geom, next) = fit.ok_or_else(|| {
            AeError::InvalidConfig(format!(
                "encoder layer {i}: kernel {} with stride {} does not fit length {t}",
                l.kernel, l.stride
            ))
        })?;
        geoms.push(geom);
        lens.push(next);
    }
    Ok((geoms, lens))
}

impl AeConfig {
    pub fn validate(&self, in_channels: usize, t_win: usize) -> Result<(), AeError> {
        if self.latent_dim == 0 {
            return Err(AeError::InvalidConfig("latent_dim must be >= 1".into()));
        }
        if self.encoder.is_empty() {
            return Err(AeError::InvalidConfig("encoder needs at least one conv layer".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(AeError::InvalidConfig("batch_size and lr must be positive".into()));
        }
        if in_channels == 0 || t_win == 0 {
            return Err(AeError::InvalidConfig("input must have channels and length".into()));
        }
        if let Some(l) = self.encoder.iter().find(|l| l.channels == 0 || l.kernel == 0 || l.stride == 0) {
            return Err(AeError::InvalidConfig(format!("degenerate conv layer {l:?}")));
        }
        self.decoder_spec(in_channels, t_win).map(|_| ())
    }

    /// The mirrored decoder for a `[in_channels, t_win]` input.
    pub fn decoder_spec(&self, in_channels: usize, t_win: usize) -> Result<Vec<DeconvLayerSpec>, AeError> {
        let (geoms, lens) = encoder_plan(self, t_win)?;
        let mut out = Vec::with_capacity(self.encoder.len());
        for i in (0..self.encoder.len()).rev() {
            let l = &self.encoder[i];
            let out_channels = if i == 0 { in_channels } else { self.encoder[i - 1].channels };
            let base = conv1d_transpose_out_len(lens[i + 1], l.kernel, geoms[i]).unwrap_or(0);
            let target = lens[i];
            if base > target || target - base >= l.stride {
                return Err(AeError::InvalidConfig(format!(
                    "decoder cannot restore length {target} from {} with stride {}",
                    lens[i + 1],
                    l.stride
                )));
            }
            out.push(DeconvLayerSpec {
                in_channels: l.channels,
                out_channels,
                kernel: l.kernel,
                geom: geoms[i],
                output_padding: target - base,
                activation: if i == 0 { Activation::Identity } else { l.activation },
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    kernels: Parameter,
    bias: Parameter,
    geom: ConvGeometry,
    activation: Activation,
}

#[derive(Clone, Debug)]
struct DeconvLayer {
    kernels: Parameter,
    bias: Parameter,
    geom: ConvGeometry,
    output_padding: usize,
    activation: Activation,
}

/// Activations kept for the backward pass of one sample.
struct Cache {
    /// Input of every encoder layer plus the final encoder map.
    enc: Vec<Tensor>,
    latent: Tensor,
    hidden: Tensor,
    /// Input of every decoder layer plus the reconstruction.
    dec: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct ConvAutoencoder {
    cfg: AeConfig,
    in_channels: usize,
    t_win: usize,
    enc: Vec<ConvLayer>,
    enc_dense: Dense,
    dec_dense: Dense,
    dec: Vec<DeconvLayer>,
    /// `[channels, length]` of the last encoder map.
    code_shape: [usize; 2],
}

impl ConvAutoencoder {
    pub fn new(cfg: &AeConfig, in_channels: usize, t_win: usize, rng: &mut Rng) -> Result<Self, AeError> {
        cfg.validate(in_channels, t_win)?;
        let (geoms, lens) = encoder_plan(cfg, t_win)?;
        let mut enc = Vec::new();
        let mut c_in = in_channels;
        for (l, &geom) in cfg.encoder.iter().zip(&geoms) {
            let (fi, fo) = (c_in * l.kernel, l.channels * l.kernel);
            enc.push(ConvLayer {
                kernels: Parameter::new(glorot(rng, &[l.channels, c_in, l.kernel], fi, fo)),
                bias: Parameter::new(Tensor::zeros(&[l.channels])),
                geom,
                activation: l.activation,
            });
            c_in = l.channels;
        }
        let code_shape = [c_in, *lens.last().unwrap()];
        let flat = code_shape[0] * code_shape[1];
        let latent = cfg.latent_dim;
        let enc_dense = Dense::new(glorot(rng, &[latent, flat], flat, latent), Tensor::zeros(&[latent]));
        let dec_dense = Dense::new(glorot(rng, &[flat, latent], latent, flat), Tensor::zeros(&[flat]));
        let dec = cfg
            .decoder_spec(in_channels, t_win)?
            .into_iter()
            .map(|d| DeconvLayer {
                kernels: Parameter::new(glorot(
                    rng,
                    &[d.in_channels, d.out_channels, d.kernel],
                    d.in_channels * d.kernel,
                    d.out_channels * d.kernel,
                )),
                bias: Parameter::new(Tensor::zeros(&[d.out_channels])),
                geom: d.geom,
                output_padding: d.output_padding,
                activation: d.activation,
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            in_channels,
            t_win,
            enc,
            enc_dense,
            dec_dense,
            dec,
            code_shape,
        })
    }

    pub fn config(&self) -> &AeConfig {
        &self.cfg
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn t_win(&self) -> usize {
        self.t_win
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn params(&self) -> Vec<&Parameter> {
        let mut v = Vec::new();
        for l in &self.enc {
            v.push(&l.kernels);
            v.push(&l.bias);
        }
        v.extend([&self.enc_dense.w, &self.enc_dense.b, &self.dec_dense.w, &self.dec_dense.b]);
        for l in &self.dec {
            v.push(&l.kernels);
            v.push(&l.bias);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = Vec::new();
        for l in &mut self.enc {
            v.push(&mut l.kernels);
            v.push(&mut l.bias);
        }
        v.extend(self.enc_dense.params_mut());
        v.extend(self.dec_dense.params_mut());
        for l in &mut self.dec {
            v.push(&mut l.kernels);
            v.push(&mut l.bias);
        }
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.enc.len() {
            v.push(format!("enc.{i}.kernels"));
            v.push(format!("enc.{i}.bias"));
        }
        v.extend(["enc_dense.w", "enc_dense.b", "dec_dense.w", "dec_dense.b"].map(String::from));
        for i in 0..self.dec.len() {
            v.push(format!("dec.{i}.kernels"));
            v.push(format!("dec.{i}.bias"));
        }
        v
    }

    fn check_input(&self, x: &Tensor) -> Result<(), AeError> {
        if x.shape() != [self.in_channels, self.t_win] {
            return Err(AeError::InputShape {
                got: x.shape().to_vec(),
                channels: self.in_channels,
                t_win: self.t_win,
            });
        }
        Ok(())
    }

    fn encode_cached(&self, x: &Tensor) -> Result<(Vec<Tensor>, Tensor), AeError> {
        let mut maps = vec![x.clone()];
        for l in &self.enc {
            let y = conv1d(maps.last().unwrap(), &l.kernels.value, Some(&l.bias.value), l.geom)?;
            maps.push(l.activation.apply(&y));
        }
        let flat = maps.last().unwrap().clone().reshape(vec![self.code_shape[0] * self.code_shape[1]])?;
        let latent = self.enc_dense.forward(&flat)?;
        Ok((maps, latent))
    }

    fn decode_cached(&self, z: &Tensor) -> Result<(Tensor, Vec<Tensor>), AeError> {
        let hidden = Activation::Relu.apply(&self.dec_dense.forward(z)?);
        let mut maps = vec![hidden.clone().reshape(self.code_shape.to_vec())?];
        for l in &self.dec {
            let y = conv1d_transpose(
                maps.last().unwrap(),
                &l.kernels.value,
                Some(&l.bias.value),
                l.geom,
                l.output_padding,
            )?;
            maps.push(l.activation.apply(&y));
        }
        Ok((hidden, maps))
    }

    /// Latent vector of one `[channels, t_win]` window.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor, AeError> {
        self.check_input(x)?;
        Ok(self.encode_cached(x)?.1)
    }

    /// Reconstruction `[channels, t_win]` of a latent vector.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor, AeError> {
        if z.len() != self.latent_dim() {
            return Err(AeError::LatentShape {
                expected: self.latent_dim(),
                got: z.len(),
            });
        }
        let z = Tensor::vector(z.data().to_vec());
        let (_, mut maps) = self.decode_cached(&z)?;
        Ok(maps.pop().unwrap())
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor, AeError> {
        let z = self.encode(x)?;
        self.decode(&z)
    }

    /// Mean squared reconstruction error of one window.
    pub fn reconstruction_mse(&self, x: &Tensor) -> Result<f64, AeError> {
        let r = self.reconstruct(x)?;
        Ok(mse(r.data(), x.data()))
    }

    fn forward(&self, x: &Tensor) -> Result<Cache, AeError> {
        let (enc, latent) = self.encode_cached(x)?;
        let (hidden, dec) = self.decode_cached(&latent)?;
        Ok(Cache {
            enc,
            latent,
            hidden,
            dec,
        })
    }

    /// Accumulates parameter gradients of `loss` given `dL/d(reconstruction)`.
    fn backward(&mut self, cache: &Cache, grad_out: Tensor) -> Result<(), AeError> {
        let mut g = grad_out;
        for (i, l) in self.dec.iter_mut().enumerate().rev() {
            let y = &cache.dec[i + 1];
            let gpre = l.activation.backward(y, &g);
            g = conv1d_transpose_backward(
                &cache.dec[i],
                &l.kernels.value,
                &gpre,
                l.geom,
                &mut l.kernels.grad,
                Some(&mut l.bias.grad),
            )?;
        }
        let g_hidden = Activation::Relu.backward(&cache.hidden, &g.reshape(vec![cache.hidden.len()])?);
        let g_latent = self.dec_dense.backward(&cache.latent, &g_hidden)?;
        let code = cache.enc.last().unwrap();
        let flat = code.clone().reshape(vec![code.len()])?;
        let g_flat = self.enc_dense.backward(&flat, &g_latent)?;
        let mut g = g_flat.reshape(code.shape().to_vec())?;
        for (i, l) in self.enc.iter_mut().enumerate().rev() {
            let gpre = l.activation.backward(&cache.enc[i + 1], &g);
            g = conv1d_backward(
                &cache.enc[i],
                &l.kernels.value,
                &gpre,
                l.geom,
                &mut l.kernels.grad,
                Some(&mut l.bias.grad),
            )?;
        }
        Ok(())
    }

    /// Loss of one window and, accumulated into the parameters, its gradient.
    pub fn loss_and_grad(&mut self, x: &Tensor) -> Result<f64, AeError> {
        self.check_input(x)?;
        let cache = self.forward(x)?;
        let recon = cache.dec.last().unwrap();
        let n = recon.len() as f64;
        let loss = mse(recon.data(), x.data());
        let grad: Vec<f64> = recon.data().iter().zip(x.data()).map(|(r, t)| 2.0 * (r - t) / n).collect();
        self.backward(&cache, Tensor::new(recon.shape().to_vec(), grad)?)?;
        Ok(loss)
    }

    /// All parameters in a fixed order, for optimizers and gradient checks.
    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.params_mut()
    }

    pub fn save(&self, ck: &mut Checkpoint, section: &str) -> Result<(), AeError> {
        for (name, p) in self.param_names().iter().zip(self.params()) {
            ck.insert(format!("{section}.{name}"), p.value.clone());
        }
        ck.insert_meta(format!("{section}.config"), &self.cfg)?;
        ck.insert_meta(format!("{section}.in_channels"), &self.in_channels)?;
        ck.insert_meta(format!("{section}.t_win"), &self.t_win)?;
        Ok(())
    }

    pub fn load(ck: &Checkpoint, section: &str) -> Result<Self, AeError> {
        let cfg: AeConfig = ck.meta(&format!("{section}.config"))?;
        let in_channels: usize = ck.meta(&format!("{section}.in_channels"))?;
        let t_win: usize = ck.meta(&format!("{section}.t_win"))?;
        let mut model = Self::new(&cfg, in_channels, t_win, &mut Rng::new(0))?;
        let names = model.param_names();
        for (name, p) in names.iter().zip(model.params_mut()) {
            let t = ck.get(&format!("{section}.{name}"))?;
            if t.shape() != p.value.shape() {
                return Err(CheckpointError::Manifest(format!(
                    "{section}.{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    p.value.shape()
                ))
                .into());
            }
            *p = Parameter::new(t.clone());
        }
        Ok(model)
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// A trained autoencoder with the statistics its inputs were normalized by.
#[derive(Clone, Debug)]
pub struct TrainedAe {
    pub model: ConvAutoencoder,
    pub norm: Option<NormStats>,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    /// False when some 5-epoch window mean rose above the previous one.
    pub loss_trend_ok: bool,
}

impl TrainedAe {
    pub fn encode(&self, x: &Tensor) -> Result<Tensor, AeError> {
        self.model.encode(x)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor, AeError> {
        self.model.decode(z)
    }

    /// Encodes every sample of `ds`.
    pub fn encode_dataset(&self, ds: &WindowedDataset) -> Result<Vec<Vec<f64>>, AeError> {
        (0..ds.len())
            .map(|i| Ok(self.model.encode(&ds.input_tensor(i))?.into_data()))
            .collect()
    }

    /// Mean reconstruction MSE over `ds`.
    pub fn mean_reconstruction_mse(&self, ds: &WindowedDataset) -> Result<f64, AeError> {
        if ds.is_empty() {
            return Err(AeError::EmptyDataset);
        }
        let mut errs = (0..ds.len())
            .map(|i| self.model.reconstruction_mse(&ds.input_tensor(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(sorted_sum(&mut errs) / ds.len() as f64)
    }
}

/// True when the epoch-window means of `trace` never increase.
pub fn loss_trend_ok(trace: &[f64], window: usize) -> bool {
    let means: Vec<f64> = trace
        .chunks(window)
        .filter(|c| c.len() == window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect();
    means.windows(2).all(|w| w[1] <= w[0])
}

/// Mini-batch Adam on mean squared reconstruction error.
pub fn train_ae(ds: &WindowedDataset, cfg: &AeConfig, seed: u64) -> Result<TrainedAe, AeError> {
    if ds.is_empty() {
        return Err(AeError::EmptyDataset);
    }
    let root = Rng::new(seed);
    let mut model = ConvAutoencoder::new(cfg, ds.n_channels(), ds.t_win, &mut root.fork(0))?;
    let inputs: Vec<Tensor> = (0..ds.len()).map(|i| ds.input_tensor(i)).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut shuffle = root.fork(1 + epoch as u64);
        shuffle.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for &i in batch {
                epoch_loss += model.loss_and_grad(&inputs[i])?;
            }
            let mut params = model.params_mut();
            adam.step(&mut params, 1.0 / batch.len() as f64);
        }
        let mean = epoch_loss / inputs.len() as f64;
        if !mean.is_finite() {
            return Err(AeError::DivergentTraining { epoch, loss: mean });
        }
        log::debug!("ae epoch {epoch}: loss {mean:.5}");
        trace.push(mean);
    }
    let trend = loss_trend_ok(&trace, TREND_WINDOW);
    if !trend {
        log::warn!("autoencoder loss trend rose across {TREND_WINDOW}-epoch windows");
    }
    Ok(TrainedAe {
        model,
        norm: None,
        loss_trace: trace,
        loss_trend_ok: trend,
    })
}

/// Pearson correlations between latent coordinates and channel window means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCorrelation {
    pub channels: Vec<String>,
    /// `matrix[k][c]`: latent coordinate `k` against channel `c`.
    pub matrix: Vec<Vec<f64>>,
    /// Latent coordinates with zero variance (their row is reported as 0).
    pub degenerate_latents: Vec<usize>,
    /// Channels whose window means have zero variance.
    pub degenerate_channels: Vec<usize>,
}

impl LatentCorrelation {
    pub fn degenerate(&self) -> bool {
        !self.degenerate_latents.is_empty() || !self.degenerate_channels.is_empty()
    }

    /// Largest |correlation| of any latent coordinate with channel `c`.
    pub fn max_abs_for_channel(&self, c: usize) -> f64 {
        self.matrix.iter().map(|row| row[c].abs()).fold(0.0, f64::max)
    }
}

fn centered(values: &[f64]) -> (Vec<f64>, f64) {
    let mut tmp = values.to_vec();
    let mean = sorted_sum(&mut tmp) / values.len() as f64;
    let c: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let mut sq: Vec<f64> = c.iter().map(|v| v * v).collect();
    (c, sorted_sum(&mut sq))
}

pub fn latent_correlation(ae: &ConvAutoencoder, ds: &WindowedDataset) -> Result<LatentCorrelation, AeError> {
    if ds.len() < 3 {
        return Err(AeError::InsufficientSamples(ds.len()));
    }
    let latents = (0..ds.len())
        .map(|i| Ok(ae.encode(&ds.input_tensor(i))?.into_data()))
        .collect::<Result<Vec<_>, AeError>>()?;
    let c_count = ds.n_channels();
    let means: Vec<Vec<f64>> = (0..c_count)
        .map(|c| {
            ds.samples
                .iter()
                .map(|s| {
                    let mut w = s.channel(c, ds.t_win).to_vec();
                    sorted_sum(&mut w) / ds.t_win as f64
                })
                .collect()
        })
        .collect();
    let chans: Vec<(Vec<f64>, f64)> = means.iter().map(|m| centered(m)).collect();
    let degenerate_channels: Vec<usize> = (0..c_count).filter(|&c| !(chans[c].1 > 0.0)).collect();
    let mut degenerate_latents = Vec::new();
    let mut matrix = Vec::with_capacity(ae.latent_dim());
    for k in 0..ae.latent_dim() {
        let col: Vec<f64> = latents.iter().map(|z| z[k]).collect();
        let (zc, zss) = centered(&col);
        if !(zss > 0.0) {
            degenerate_latents.push(k);
            matrix.push(vec![0.0; c_count]);
            continue;
        }
        let row = chans
            .iter()
            .map(|(xc, xss)| {
                if !(*xss > 0.0) {
                    return 0.0;
                }
                let mut prod: Vec<f64> = zc.iter().zip(xc).map(|(a, b)| a * b).collect();
                (sorted_sum(&mut prod) / (zss * xss).sqrt()).clamp(-1.0, 1.0)
            })
            .collect();
        matrix.push(row);
    }
    Ok(LatentCorrelation {
        channels: ds.channels.clone(),
        matrix,
        degenerate_latents,
        degenerate_channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> AeConfig {
        AeConfig {
            latent_dim: 3,
            encoder: vec![
                ConvLayerSpec::new(3, 3, 2, 1, Activation::Relu),
                ConvLayerSpec::new(4, 3, 2, 1, Activation::Relu),
            ],
            epochs: 1,
            batch_size: 1,
            lr: 1e-2,
        }
    }

    #[test]
    fn default_lengths_and_budget() {
        let cfg = AeConfig::default();
        assert_eq!(encoder_plan(&cfg, 480).unwrap().1, vec![480, 120, 30, 8]);
        assert_eq!(encoder_plan(&cfg, 48).unwrap().1, vec![48, 12, 3, 1]);
        let ae = ConvAutoencoder::new(&cfg, 4, 480, &mut Rng::new(0)).unwrap();
        assert!(ae.param_count() < 12_000, "{}", ae.param_count());
        let x = Tensor::zeros(&[4, 480]);
        assert_eq!(ae.encode(&x).unwrap().len(), 20);
        assert_eq!(ae.reconstruct(&x).unwrap().shape(), &[4, 480]);
        let short = ConvAutoencoder::new(&cfg, 2, 48, &mut Rng::new(0)).unwrap();
        assert_eq!(short.reconstruct(&Tensor::zeros(&[2, 48])).unwrap().shape(), &[2, 48]);
    }

    #[test]
    fn encoder_windows_end_on_last_sample() {
        let cfg = AeConfig::default();
        for t_win in [48, 96, 480] {
            let (geoms, lens) = encoder_plan(&cfg, t_win).unwrap();
            for (i, (g, l)) in geoms.iter().zip(&cfg.encoder).enumerate() {
                let last_start = (lens[i + 1] - 1) * g.stride;
                assert_eq!(last_start + l.kernel - g.pad_left, lens[i], "layer {i} of {t_win}");
            }
        }
    }

    #[test]
    fn decoder_mirrors_encoder() {
        let cfg = AeConfig::default();
        let dec = cfg.decoder_spec(4, 480).unwrap();
        assert_eq!(dec.iter().map(|d| d.output_padding).collect::<Vec<_>>(), vec![0, 0, 0]);
        assert_eq!(dec.last().unwrap().out_channels, 4);
        assert_eq!(dec.last().unwrap().activation, Activation::Identity);
    }

    #[test]
    fn rejects_bad_input_shapes() {
        let ae = ConvAutoencoder::new(&small_cfg(), 2, 16, &mut Rng::new(0)).unwrap();
        assert!(matches!(ae.encode(&Tensor::zeros(&[2, 15])), Err(AeError::InputShape { .. })));
        assert!(matches!(ae.decode(&Tensor::zeros(&[4])), Err(AeError::LatentShape { .. })));
        assert!(ae.decode(&Tensor::zeros(&[3])).unwrap().all_finite());
    }

    #[test]
    fn one_step_reduces_single_sample_error() {
        let mut rng = Rng::new(5);
        let x = Tensor::new(vec![2, 16], rng.normal_vec(32)).unwrap();
        let mut ae = ConvAutoencoder::new(&small_cfg(), 2, 16, &mut Rng::new(1)).unwrap();
        let before = ae.reconstruction_mse(&x).unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(1e-2));
        ae.loss_and_grad(&x).unwrap();
        adam.step(&mut ae.params_mut(), 1.0);
        assert!(ae.reconstruction_mse(&x).unwrap() < before);
    }

    #[test]
    fn trend_check() {
        assert!(loss_trend_ok(&[5.0, 4.0, 6.0, 3.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0], 5));
        assert!(!loss_trend_ok(&[1.0; 5].iter().chain(&[2.0; 5]).copied().collect::<Vec<_>>(), 5));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let ae = ConvAutoencoder::new(&small_cfg(), 2, 16, &mut Rng::new(3)).unwrap();
        let mut ck = Checkpoint::new();
        ae.save(&mut ck, "ae").unwrap();
        let back = ConvAutoencoder::load(&ck, "ae").unwrap();
        let x = Tensor::new(vec![2, 16], Rng::new(8).normal_vec(32)).unwrap();
        assert_eq!(ae.encode(&x).unwrap(), back.encode(&x).unwrap());
        assert_eq!(ck.scalar_count("ae"), ae.param_count());
    }
}
