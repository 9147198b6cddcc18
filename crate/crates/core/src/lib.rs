//! Probabilistic net-load forecasting: a 1-D convolutional autoencoder
//! compresses input windows, a kernel particle sampler draws neighbouring
//! latent codes, and a variational LSTM turns both into Gaussian forecasts.
//! Data handling, scoring and the experiment pipeline live alongside.

pub mod autoencoder;
pub mod blstm;
pub mod data;
pub mod kpf;
pub mod metrics;
pub mod nn;
pub mod numeric;
pub mod pipeline;
pub mod rng;

pub use autoencoder::{AeConfig, ConvAutoencoder};
pub use blstm::{BayesianLstm, BlstmConfig, ForecastDistribution, IntervalLevel, IntervalMode};
pub use data::{SiteRecord, SplitSpec, SynthConfig, WindowSpec, WindowedDataset};
pub use kpf::{KpfConfig, KpfModel};
pub use metrics::{EvalReport, ReportOptions};
pub use pipeline::{Forecaster, PipelineConfig, PipelineError};
pub use rng::Rng;
