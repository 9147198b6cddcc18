//! Property tests over the public API.

mod common;

use std::collections::BTreeSet;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use netcast::blstm::{aggregate_members, ForecastDistribution, IntervalLevel, IntervalMode, MemberForecast};
use netcast::data::{aggregate, interleaved_split, window, Series, SiteRecord, SplitSpec, WindowSpec, NET_LOAD};
use netcast::kpf::{KernelNorm, KpfConfig, KpfModel};
use netcast::metrics::{crps_gaussian, pbb_z};
use netcast::nn::{conv1d, conv1d_transpose, softplus, softplus_inv, ConvGeometry, Tensor};
use netcast::pipeline::{PipelineConfig, WindowShape};
use proptest::prelude::*;

use common::naive_kpf_sample;

fn start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2021, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

fn ramp_site(id: &str, values: Vec<f64>) -> SiteRecord {
    let n = values.len();
    SiteRecord::new(
        id,
        SiteRecord::grid(start(), n),
        [(NET_LOAD.to_string(), Series::new(values))].into_iter().collect(),
    )
    .unwrap()
}

fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    lo..hi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_in_order(windows in 1usize..60, train in 1usize..5, test in 1usize..4) {
        let site = ramp_site("p", (0..windows + 2).map(|i| i as f64).collect());
        let ds = window(&site, &WindowSpec::new(2, 1, 1, &[])).unwrap();
        prop_assert_eq!(ds.len(), windows);
        let spec = SplitSpec { train_blocks: train, test_blocks: test };
        let (tr, te) = interleaved_split(&ds, &spec).unwrap();
        let a: Vec<usize> = tr.samples.iter().map(|s| s.ordinal).collect();
        let b: Vec<usize> = te.samples.iter().map(|s| s.ordinal).collect();
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(b.windows(2).all(|w| w[0] < w[1]));
        let all: BTreeSet<usize> = a.iter().chain(&b).copied().collect();
        prop_assert_eq!(all.len(), windows);
        let period = train + test;
        let expected_train = train * (windows / period) + (windows % period).min(train);
        prop_assert_eq!(a.len(), expected_train);
        prop_assert!(b.iter().all(|o| o % period >= train));
    }

    #[test]
    fn sampler_matches_oracle_on_random_sizes(
        n in 1usize..9,
        m in 1usize..5,
        d in 1usize..4,
        gamma_frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut rng = netcast::rng::Rng::new(seed);
        let encoded: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(d)).collect();
        let gamma = 1 + ((n - 1) as f64 * gamma_frac) as usize;
        let cfg = KpfConfig { gamma, prior_dim: None, kernel: KernelNorm::Euclidean };
        let model = KpfModel::fit(&encoded, &cfg).unwrap();
        let z: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(d)).collect();
        let w: Vec<Vec<f64>> = (0..m).map(|_| rng.normal_vec(d)).collect();
        let got = model.sample_with_draws(&z, &w).unwrap();
        let want = naive_kpf_sample(&encoded, &z, &w, gamma);
        for (a, b) in got.rows.iter().zip(&want) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn crps_is_nonnegative_and_shift_invariant(
        mu in finite(-50.0, 50.0),
        sigma in finite(1e-3, 20.0),
        y in finite(-50.0, 50.0),
        shift in finite(-100.0, 100.0),
    ) {
        let c = crps_gaussian(mu, sigma, y).unwrap();
        prop_assert!(c >= 0.0);
        let shifted = crps_gaussian(mu + shift, sigma, y + shift).unwrap();
        prop_assert!((c - shifted).abs() <= 1e-9 * (1.0 + c));
        prop_assert!(c <= (mu - y).abs() + sigma);
    }

    #[test]
    fn coverage_grows_with_band(
        rows in prop::collection::vec((finite(-5.0, 5.0), finite(0.01, 3.0), finite(-8.0, 8.0)), 1..40),
        z1 in finite(0.0, 3.0),
        dz in finite(0.0, 3.0),
    ) {
        let mu: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let sigma: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let obs: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let a = pbb_z(&mu, &sigma, &obs, z1).unwrap();
        let b = pbb_z(&mu, &sigma, &obs, z1 + dz).unwrap();
        prop_assert!((0.0..=100.0).contains(&a));
        prop_assert!(a <= b);
    }

    #[test]
    fn bands_nest(
        rows in prop::collection::vec((finite(-50.0, 50.0), finite(1e-6, 10.0)), 1..20),
        rounded in any::<bool>(),
    ) {
        let mode = if rounded { IntervalMode::Rounded } else { IntervalMode::Exact };
        let fc = ForecastDistribution {
            timestamps: SiteRecord::grid(start(), rows.len()),
            mu_pred: rows.iter().map(|r| r.0).collect(),
            sigma_pred: rows.iter().map(|r| r.1).collect(),
            mc_samples_used: 1,
        };
        let (lo50, hi50) = fc.interval(IntervalLevel::P50, mode);
        let (lo95, hi95) = fc.interval(IntervalLevel::P95, mode);
        let (lo99, hi99) = fc.interval(IntervalLevel::P99, mode);
        for t in 0..rows.len() {
            prop_assert!(lo99[t] <= lo95[t] && lo95[t] <= lo50[t] && lo50[t] <= hi50[t]);
            prop_assert!(hi50[t] <= hi95[t] && hi95[t] <= hi99[t]);
        }
    }

    #[test]
    fn mixture_is_at_least_as_wide_as_mean_member(
        members in prop::collection::vec(prop::collection::vec((finite(-5.0, 5.0), finite(0.01, 2.0)), 3), 1..6),
    ) {
        let ms: Vec<MemberForecast> = members
            .iter()
            .map(|m| MemberForecast { mu: m.iter().map(|r| r.0).collect(), sigma: m.iter().map(|r| r.1).collect() })
            .collect();
        let (mu, sigma) = aggregate_members(&ms).unwrap();
        let k = ms.len() as f64;
        for t in 0..3 {
            let mean_mu = ms.iter().map(|m| m.mu[t]).sum::<f64>() / k;
            let mean_var = ms.iter().map(|m| m.sigma[t].powi(2)).sum::<f64>() / k;
            prop_assert!((mu[t] - mean_mu).abs() <= 1e-12);
            prop_assert!(sigma[t] * sigma[t] >= mean_var - 1e-12);
        }
        let mut rev = ms.clone();
        rev.reverse();
        let (mu_r, sigma_r) = aggregate_members(&rev).unwrap();
        for t in 0..3 {
            prop_assert!((mu[t] - mu_r[t]).abs() <= 1e-12 && (sigma[t] - sigma_r[t]).abs() <= 1e-12);
        }
    }

    #[test]
    fn aggregation_ignores_site_order(
        loads in prop::collection::vec(prop::collection::vec(finite(-3.0, 10.0), 12), 1..6),
        rot in 0usize..6,
    ) {
        let sites: Vec<SiteRecord> = loads.iter().enumerate().map(|(i, v)| ramp_site(&format!("s{i}"), v.clone())).collect();
        let mut rotated = sites.clone();
        let r = rot % rotated.len();
        rotated.rotate_left(r);
        let a = aggregate(&sites).unwrap();
        let b = aggregate(&rotated).unwrap();
        for (x, y) in a.net_load().values().iter().zip(b.net_load().values()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        for (t, x) in a.net_load().values().iter().enumerate() {
            let sum: f64 = loads.iter().map(|v| v[t]).sum();
            prop_assert!((x - sum).abs() <= 1e-9);
        }
    }

    #[test]
    fn conv_lengths_follow_geometry(
        t in 1usize..40,
        k in 1usize..6,
        stride in 1usize..4,
        pad_left in 0usize..4,
        pad_right in 0usize..4,
    ) {
        prop_assume!(t + pad_left + pad_right >= k);
        let geom = ConvGeometry { stride, pad_left, pad_right };
        let x = Tensor::new(vec![1, t], vec![1.0; t]).unwrap();
        let kern = Tensor::new(vec![2, 1, k], vec![0.5; 2 * k]).unwrap();
        let y = conv1d(&x, &kern, None, geom).unwrap();
        prop_assert_eq!(y.shape(), &[2, (t + pad_left + pad_right - k) / stride + 1][..]);
        let back_kern = Tensor::new(vec![2, 1, k], vec![0.5; 2 * k]).unwrap();
        let out_len = (y.shape()[1] - 1) * stride + k;
        if out_len > pad_left + pad_right {
            let z = conv1d_transpose(&y, &back_kern, None, geom, 0).unwrap();
            prop_assert_eq!(z.shape(), &[1, out_len - pad_left - pad_right][..]);
        }
    }

    #[test]
    fn softplus_round_trips(x in finite(-30.0, 30.0)) {
        let s = softplus(x);
        prop_assert!(s > 0.0);
        prop_assert!((softplus_inv(s) - x).abs() <= 1e-8 * (1.0 + x.abs()));
    }

    #[test]
    fn broken_window_configs_are_rejected(zero in 0usize..3) {
        let mut cfg = PipelineConfig::default();
        match zero {
            0 => cfg.window.t_win = 0,
            1 => cfg.window.horizon = 0,
            _ => cfg.window.stride = 0,
        }
        prop_assert!(cfg.validate().is_err());
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    assert!(PipelineConfig::from_toml_str("seed = 3\n").is_ok());
    assert!(PipelineConfig::from_toml_str("sead = 3\n").is_err());
    assert!(PipelineConfig::from_toml_str("[window]\nt_wim = 48\n").is_err());
}

#[test]
fn default_config_round_trips_through_toml() {
    let cfg = PipelineConfig::default();
    let back = PipelineConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn default_strides_put_test_anchors_at_trained_times_of_day() {
    for shape in [WindowShape::FIFTEEN_MINUTE, WindowShape::DAY_AHEAD] {
        let n = 30 * 96;
        let site = ramp_site("tod", vec![0.0; n]);
        let ds = window(&site, &WindowSpec::new(shape.t_win, shape.horizon, shape.stride, &[])).unwrap();
        let (train, test) = interleaved_split(&ds, &SplitSpec::default()).unwrap();
        let minute = |s: &netcast::data::WindowSample| {
            let t = s.anchor;
            t.hour() * 60 + t.minute()
        };
        let seen: BTreeSet<u32> = train.samples.iter().map(minute).collect();
        assert!(test.samples.iter().all(|s| seen.contains(&minute(s))));
    }
}
