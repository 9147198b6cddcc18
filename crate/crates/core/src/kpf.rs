//! Kernel Perron-Frobenius sampler over an encoded training set.
//!
//! Fitting stores the encoded rows `X_e`, the Gram matrix `K` under
//! `k(x, y) = exp(-‖x − y‖ / 2)` and the materialized inverse
//! `(K + nI)^{-1}`. Sampling pushes Gaussian prior draws through the kernel
//! embedding and returns, per requested sample, the L1-normalized
//! combination of the `gamma` training rows with the largest weights.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Checkpoint, CheckpointError, Tensor};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum KpfError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("gamma {gamma} must lie in [1, {n}]")]
    BadGamma { gamma: usize, n: usize },
    #[error("K + nI is not positive definite")]
    SingularSystem,
    #[error("no encoded training rows")]
    EmptyTraining,
    #[error("prior dimension must be at least 1")]
    BadPriorDim,
    #[error("sample count must be at least {min}, got {got}")]
    BadCount { min: usize, got: usize },
    #[error("selected weights for sample {0} sum to zero in absolute value")]
    DegenerateWeights(usize),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Distance used in the kernel exponent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelNorm {
    /// `exp(-‖x − y‖ / 2)`.
    #[default]
    Euclidean,
    /// `exp(-‖x − y‖² / 2)`, the classic RBF.
    SquaredEuclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KpfConfig {
    /// Neighbourhood size: training rows combined per sample.
    pub gamma: usize,
    /// Dimension of the prior draws; `None` uses the latent dimension.
    pub prior_dim: Option<usize>,
    pub kernel: KernelNorm,
}

impl Default for KpfConfig {
    fn default() -> Self {
        Self {
            gamma: 10,
            prior_dim: None,
            kernel: KernelNorm::Euclidean,
        }
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn kernel_value(x: &[f64], y: &[f64], norm: KernelNorm) -> f64 {
    let d2 = squared_distance(x, y);
    match norm {
        KernelNorm::Euclidean => (-d2.sqrt() / 2.0).exp(),
        KernelNorm::SquaredEuclidean => (-d2 / 2.0).exp(),
    }
}

/// `exp(-‖x − y‖₂ / 2)` with the norm not squared.
pub fn gaussian_kernel(x: &[f64], y: &[f64]) -> Result<f64, KpfError> {
    if x.len() != y.len() {
        return Err(KpfError::DimMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(kernel_value(x, y, KernelNorm::Euclidean))
}

/// Kernel matrix between the rows of `a` and the rows of `b`.
fn cross_kernel(a: &[Vec<f64>], b: &[Vec<f64>], norm: KernelNorm) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kernel_value(&a[i], &b[j], norm))
}

fn gram(rows: &[Vec<f64>], norm: KernelNorm) -> DMatrix<f64> {
    let n = rows.len();
    let mut k = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in 0..i {
            let v = kernel_value(&rows[i], &rows[j], norm);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[derive(Clone, Debug, PartialEq)]
pub struct KpfModel {
    encoded: Vec<Vec<f64>>,
    gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    gamma: usize,
    prior_dim: usize,
    kernel: KernelNorm,
}

/// Samples from one call together with the recombination that built them.
#[derive(Clone, Debug, PartialEq)]
pub struct KpfSamples {
    /// `m` rows of latent dimension.
    pub rows: Vec<Vec<f64>>,
    /// Selected training indices per sample, in descending weight order.
    pub selected: Vec<Vec<usize>>,
    /// Weights after L1 normalization, aligned with `selected`.
    pub weights: Vec<Vec<f64>>,
    /// True if any selected weight was negative.
    pub negative_weights: bool,
}

impl KpfModel {
    pub fn fit(encoded: &[Vec<f64>], cfg: &KpfConfig) -> Result<Self, KpfError> {
        let n = encoded.len();
        let d = encoded.first().ok_or(KpfError::EmptyTraining)?.len();
        if let Some(row) = encoded.iter().find(|r| r.len() != d) {
            return Err(KpfError::DimMismatch {
                expected: d,
                got: row.len(),
            });
        }
        if cfg.gamma == 0 || cfg.gamma > n {
            return Err(KpfError::BadGamma { gamma: cfg.gamma, n });
        }
        let prior_dim = cfg.prior_dim.unwrap_or(d);
        if prior_dim == 0 {
            return Err(KpfError::BadPriorDim);
        }
        let gram = gram(encoded, cfg.kernel);
        let gram_inv = regularized_inverse(&gram)?;
        Ok(Self {
            encoded: encoded.to_vec(),
            gram,
            gram_inv,
            gamma: cfg.gamma,
            prior_dim,
            kernel: cfg.kernel,
        })
    }

    pub fn n(&self) -> usize {
        self.encoded.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoded[0].len()
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn prior_dim(&self) -> usize {
        self.prior_dim
    }

    pub fn kernel(&self) -> KernelNorm {
        self.kernel
    }

    pub fn encoded(&self) -> &[Vec<f64>] {
        &self.encoded
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `(K + nI)^{-1}`.
    pub fn gram_inv(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    /// Draws `n` prior vectors `z`, then `m` prior vectors `w`, and samples.
    pub fn sample(&self, m: usize, rng: &mut Rng) -> Result<KpfSamples, KpfError> {
        if m == 0 {
            return Err(KpfError::BadCount { min: 1, got: 0 });
        }
        let p = self.prior_dim;
        let z: Vec<Vec<f64>> = (0..self.n()).map(|_| rng.normal_vec(p)).collect();
        let w: Vec<Vec<f64>> = (0..m).map(|_| rng.normal_vec(p)).collect();
        self.sample_with_draws(&z, &w)
    }

    /// Sampling with explicit prior draws: `z` has `n` rows, `w` one row
    /// per requested sample, both of length `prior_dim`.
    pub fn sample_with_draws(&self, z: &[Vec<f64>], w: &[Vec<f64>]) -> Result<KpfSamples, KpfError> {
        let n = self.n();
        if z.len() != n {
            return Err(KpfError::DimMismatch {
                expected: n,
                got: z.len(),
            });
        }
        if w.is_empty() {
            return Err(KpfError::BadCount { min: 1, got: 0 });
        }
        for row in z.iter().chain(w) {
            if row.len() != self.prior_dim {
                return Err(KpfError::DimMismatch {
                    expected: self.prior_dim,
                    got: row.len(),
                });
            }
        }
        let l = cross_kernel(z, z, self.kernel);
        let v = cross_kernel(z, w, self.kernel);
        // L · (K_inv · V): two n×n by n×m products.
        let s = &l * (&self.gram_inv * &v);

        let d = self.latent_dim();
        let mut out = KpfSamples {
            rows: Vec::with_capacity(w.len()),
            selected: Vec::with_capacity(w.len()),
            weights: Vec::with_capacity(w.len()),
            negative_weights: false,
        };
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for j in 0..w.len() {
            let col = s.column(j);
            order.clear();
            order.extend(0..n);
            // Descending weight, lower index first on ties.
            order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
            let ind = &order[..self.gamma];
            let l1: f64 = ind.iter().map(|&i| col[i].abs()).sum();
            if !(l1 > 0.0) || !l1.is_finite() {
                return Err(KpfError::DegenerateWeights(j));
            }
            let mut row = vec![0.0; d];
            let mut weights = Vec::with_capacity(self.gamma);
            for &i in ind {
                let wt = col[i] / l1;
                out.negative_weights |= col[i] < 0.0;
                for (r, x) in row.iter_mut().zip(&self.encoded[i]) {
                    *r += x * wt;
                }
                weights.push(wt);
            }
            out.rows.push(row);
            out.selected.push(ind.to_vec());
            out.weights.push(weights);
        }
        Ok(out)
    }

    /// Per-coordinate summary of `m` generated samples.
    pub fn latent_distribution(&self, m: usize, rng: &mut Rng) -> Result<LatentDistribution, KpfError> {
        if m < 2 {
            return Err(KpfError::BadCount { min: 2, got: m });
        }
        let samples = self.sample(m, rng)?;
        let d = self.latent_dim();
        let mut per_dim: Vec<Vec<f64>> = (0..d).map(|k| samples.rows.iter().map(|r| r[k]).collect()).collect();
        for v in &mut per_dim {
            v.sort_by(f64::total_cmp);
        }
        let (lo, hi) = (0..d)
            .map(|k| {
                let col = self.encoded.iter().map(|r| r[k]);
                (
                    col.clone().fold(f64::INFINITY, f64::min),
                    col.fold(f64::NEG_INFINITY, f64::max),
                )
            })
            .unzip();
        Ok(LatentDistribution {
            sorted: per_dim,
            training_min: lo,
            training_max: hi,
            negative_weights: samples.negative_weights,
        })
    }

    pub fn save(&self, ck: &mut Checkpoint, section: &str) -> Result<(), KpfError> {
        let (n, d) = (self.n(), self.latent_dim());
        let flat: Vec<f64> = self.encoded.iter().flatten().copied().collect();
        ck.insert(format!("{section}.x_e"), Tensor::new(vec![n, d], flat).expect("n×d"));
        let inv: Vec<f64> = self.gram_inv.transpose().iter().copied().collect();
        ck.insert(format!("{section}.k_inv"), Tensor::new(vec![n, n], inv).expect("n×n"));
        ck.insert_meta(format!("{section}.gamma"), &self.gamma)?;
        ck.insert_meta(format!("{section}.prior_dim"), &self.prior_dim)?;
        ck.insert_meta(format!("{section}.kernel"), &self.kernel)?;
        Ok(())
    }

    /// Restores a saved model; the Gram matrix is recomputed from `X_e`.
    pub fn load(ck: &Checkpoint, section: &str) -> Result<Self, KpfError> {
        let x = ck.get(&format!("{section}.x_e"))?;
        let inv = ck.get(&format!("{section}.k_inv"))?;
        let (n, d) = match x.shape() {
            [n, d] => (*n, *d),
            other => {
                return Err(CheckpointError::Manifest(format!("{section}.x_e has shape {other:?}")).into())
            }
        };
        if inv.shape() != [n, n] {
            return Err(CheckpointError::Manifest(format!("{section}.k_inv has shape {:?}", inv.shape())).into());
        }
        let encoded: Vec<Vec<f64>> = x.data().chunks(d.max(1)).map(<[f64]>::to_vec).collect();
        let kernel: KernelNorm = ck.meta(&format!("{section}.kernel"))?;
        Ok(Self {
            gram: gram(&encoded, kernel),
            gram_inv: DMatrix::from_row_slice(n, n, inv.data()),
            encoded,
            gamma: ck.meta(&format!("{section}.gamma"))?,
            prior_dim: ck.meta(&format!("{section}.prior_dim"))?,
            kernel,
        })
    }
}

/// `(K + nI)^{-1}` through a Cholesky factorization.
fn regularized_inverse(k: &DMatrix<f64>) -> Result<DMatrix<f64>, KpfError> {
    let n = k.nrows();
    let a = k + DMatrix::identity(n, n) * n as f64;
    let chol = a.cholesky().ok_or(KpfError::SingularSystem)?;
    Ok(chol.inverse())
}

/// Sorted generated values per latent coordinate plus the training range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentDistribution {
    /// `sorted[k]` holds the `m` generated values of coordinate `k`.
    pub sorted: Vec<Vec<f64>>,
    pub training_min: Vec<f64>,
    pub training_max: Vec<f64>,
    pub negative_weights: bool,
}

impl LatentDistribution {
    pub fn dims(&self) -> usize {
        self.sorted.len()
    }

    pub fn count(&self) -> usize {
        self.sorted.first().map_or(0, Vec::len)
    }

    /// Linear-interpolated quantile of coordinate `k`.
    pub fn quantile(&self, k: usize, q: f64) -> f64 {
        let v = &self.sorted[k];
        let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
        let (i, frac) = (pos.floor() as usize, pos.fract());
        if i + 1 < v.len() {
            v[i] * (1.0 - frac) + v[i + 1] * frac
        } else {
            v[i]
        }
    }

    pub fn mean(&self, k: usize) -> f64 {
        self.sorted[k].iter().sum::<f64>() / self.count() as f64
    }

    pub fn std(&self, k: usize) -> f64 {
        let m = self.mean(k);
        (self.sorted[k].iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.count() as f64).sqrt()
    }

    /// True if every generated coordinate lies in the training range.
    pub fn within_training_range(&self) -> bool {
        (0..self.dims()).all(|k| {
            let v = &self.sorted[k];
            v[0] >= self.training_min[k] - 1e-12 && v[v.len() - 1] <= self.training_max[k] + 1e-12
        })
    }

    /// Equal-width histogram of coordinate `k` over its own range.
    pub fn histogram(&self, k: usize, bins: usize) -> Vec<usize> {
        let v = &self.sorted[k];
        let (lo, hi) = (v[0], v[v.len() - 1]);
        let mut counts = vec![0; bins.max(1)];
        let width = (hi - lo) / counts.len() as f64;
        for x in v {
            let b = if width > 0.0 {
                (((x - lo) / width) as usize).min(counts.len() - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(rng: &mut Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| rng.normal_vec(d)).collect()
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(gaussian_kernel(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        assert!((gaussian_kernel(&[0.0], &[2.0]).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!(gaussian_kernel(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn fit_small_cases() {
        let m = KpfModel::fit(&[vec![0.4, 2.0]], &KpfConfig { gamma: 1, ..Default::default() }).unwrap();
        assert_eq!(m.gram()[(0, 0)], 1.0);
        assert!((m.gram_inv()[(0, 0)] - 0.5).abs() < 1e-15);

        let m = KpfModel::fit(&[vec![1.0], vec![1.0]], &KpfConfig { gamma: 2, ..Default::default() }).unwrap();
        let expect = [[3.0 / 8.0, -1.0 / 8.0], [-1.0 / 8.0, 3.0 / 8.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m.gram()[(i, j)], 1.0);
                assert!((m.gram_inv()[(i, j)] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bad_gamma_and_empty() {
        let x = vec![vec![0.0]; 3];
        assert!(matches!(
            KpfModel::fit(&x, &KpfConfig { gamma: 4, ..Default::default() }),
            Err(KpfError::BadGamma { .. })
        ));
        assert!(matches!(
            KpfModel::fit(&x, &KpfConfig { gamma: 0, ..Default::default() }),
            Err(KpfError::BadGamma { .. })
        ));
        assert!(matches!(KpfModel::fit(&[], &KpfConfig::default()), Err(KpfError::EmptyTraining)));
    }

    #[test]
    fn single_row_is_reproduced_exactly() {
        let x = vec![vec![0.25, -3.0, 7.5]];
        let m = KpfModel::fit(&x, &KpfConfig { gamma: 1, ..Default::default() }).unwrap();
        let s = m.sample(4, &mut Rng::new(1)).unwrap();
        assert!(s.rows.iter().all(|r| *r == x[0]));
    }

    #[test]
    fn equal_weights_give_the_mean() {
        // identical prior draws make every entry of each column equal
        let mut rng = Rng::new(2);
        let x = rows(&mut rng, 4, 3);
        let m = KpfModel::fit(&x, &KpfConfig { gamma: 4, prior_dim: Some(2), ..Default::default() }).unwrap();
        let z = vec![vec![0.1, 0.2]; 4];
        let out = m.sample_with_draws(&z, &[vec![0.5, -0.5]]).unwrap();
        for k in 0..3 {
            let mean = x.iter().map(|r| r[k]).sum::<f64>() / 4.0;
            assert!((out.rows[0][k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_within_gamma() {
        let mut rng = Rng::new(3);
        let x = rows(&mut rng, 12, 5);
        let m = KpfModel::fit(&x, &KpfConfig { gamma: 3, ..Default::default() }).unwrap();
        let a = m.sample(6, &mut Rng::new(9)).unwrap();
        let b = m.sample(6, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        for (sel, w) in a.selected.iter().zip(&a.weights) {
            assert_eq!(sel.len(), 3);
            assert!((w.iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = Rng::new(4);
        let x = rows(&mut rng, 6, 3);
        let m = KpfModel::fit(&x, &KpfConfig { gamma: 2, prior_dim: Some(1), ..Default::default() }).unwrap();
        let mut ck = Checkpoint::new();
        m.save(&mut ck, "kpf").unwrap();
        let back = KpfModel::load(&ck, "kpf").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn latent_distribution_summary() {
        let m = KpfModel::fit(&[vec![1.0, 2.0]], &KpfConfig { gamma: 1, ..Default::default() }).unwrap();
        let dist = m.latent_distribution(5, &mut Rng::new(0)).unwrap();
        assert_eq!(dist.count(), 5);
        assert_eq!(dist.std(0), 0.0);
        assert_eq!(dist.quantile(1, 0.5), 2.0);
        assert!(dist.within_training_range());
        assert!(m.latent_distribution(1, &mut Rng::new(0)).is_err());
    }
}
