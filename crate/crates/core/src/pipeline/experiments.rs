//! Experiment drivers: penetration sweep, aggregation sweep and the
//! missing-measurement rolling study.

use std::io::Write;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::{
    evaluate, stage_seed, train_pipeline, DataSource, Forecaster, Imputation, MissingStudy, PipelineConfig,
    PipelineError, STREAM_FORECAST,
};
use crate::blstm::{aggregate_members, ForecastDistribution, IntervalLevel, IntervalMode, MemberForecast};
use crate::data::{aggregate, mask_measurements, solar_penetration, synth_site, SiteRecord, SynthConfig, NET_LOAD};
use crate::metrics::{EvalReport, MetricBlock};
use crate::rng::Rng;

const STREAM_CELLS: u64 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenetrationRow {
    pub site_id: String,
    pub penetration_target_pct: f64,
    pub penetration_pct: f64,
    pub horizon: usize,
    pub t_win: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationRow {
    /// `aggregate` or `individual`.
    pub kind: String,
    pub site_id: String,
    pub n_sites: usize,
    pub penetration_pct: f64,
    pub report: EvalReport,
}

fn cell_config(cfg: &PipelineConfig, shape: super::WindowShape, cell: u64) -> PipelineConfig {
    PipelineConfig {
        window: cfg.window.with_shape(shape),
        seed: Rng::new(cfg.seed).fork(STREAM_CELLS).fork(cell).next_u64(),
        ..cfg.clone()
    }
}

fn run_cell(site: &SiteRecord, cfg: &PipelineConfig) -> Result<EvalReport, PipelineError> {
    let (f, outcome) = train_pipeline(site, cfg)?;
    let ev = evaluate(
        &f,
        &outcome.test,
        "test",
        stage_seed(cfg.seed, STREAM_FORECAST),
        &cfg.eval.report_options(),
    )?;
    Ok(ev.report)
}

fn synth_template(cfg: &PipelineConfig) -> SynthConfig {
    match &cfg.data {
        DataSource::Synth(s) => s.clone(),
        DataSource::Csv(_) => SynthConfig::new(90, 0.0, cfg.seed),
    }
}

/// One model per (penetration level, window shape). Synthetic sites share
/// weather and demand noise so levels differ only in solar. With a CSV data
/// source the configured site is evaluated once per window shape instead.
pub fn penetration_experiment(cfg: &PipelineConfig) -> Result<Vec<PenetrationRow>, PipelineError> {
    cfg.validate()?;
    let sweep = &cfg.experiment.penetration;
    let sites: Vec<(f64, SiteRecord)> = match &cfg.data {
        DataSource::Csv(_) => {
            let site = super::load_site(&cfg.data)?;
            vec![(f64::NAN, site)]
        }
        DataSource::Synth(_) => {
            let base = synth_template(cfg);
            sweep
                .levels
                .iter()
                .map(|&level| {
                    let s = SynthConfig {
                        days: sweep.days,
                        solar_penetration_target: level,
                        weather_seed: Some(base.weather_seed.unwrap_or(base.seed)),
                        ..base.clone()
                    };
                    Ok((level, synth_site(&s)?))
                })
                .collect::<Result<_, PipelineError>>()?
        }
    };
    let mut rows = Vec::new();
    for (i, (level, site)) in sites.iter().enumerate() {
        let measured = solar_penetration(site).unwrap_or(0.0);
        for (j, shape) in sweep.windows.iter().enumerate() {
            let cell = cell_config(cfg, *shape, (i * sweep.windows.len() + j) as u64);
            log::info!("penetration cell {:.0}% / horizon {}", level * 100.0, shape.horizon);
            let report = run_cell(site, &cell)?;
            rows.push(PenetrationRow {
                site_id: site.site_id().to_string(),
                penetration_target_pct: 100.0 * level,
                penetration_pct: 100.0 * measured,
                horizon: shape.horizon,
                t_win: shape.t_win,
                report,
            });
        }
    }
    Ok(rows)
}

/// Synthetic sites for the aggregation sweep: one shared weather stream,
/// per-site demand noise, penetration and base load spread deterministically.
pub fn aggregation_sites(cfg: &PipelineConfig) -> Result<Vec<SiteRecord>, PipelineError> {
    let a = &cfg.experiment.aggregation;
    let base = synth_template(cfg);
    let n = a.site_counts.iter().copied().max().unwrap_or(0).max(a.individual_sites);
    let [lo, hi] = a.penetration_range;
    (0..n)
        .map(|i| {
            let u = (i as f64 * 0.618_033_988_749_895).fract();
            let v = (i as f64 * 0.754_877_666_246_692_7).fract();
            let s = SynthConfig {
                days: a.days,
                solar_penetration_target: lo + (hi - lo) * u,
                base_load_kw: base.base_load_kw * (0.6 + 0.8 * v),
                seed: base.seed.wrapping_add(1000 + i as u64),
                weather_seed: Some(a.weather_seed),
                ..base.clone()
            };
            Ok(synth_site(&s)?)
        })
        .collect()
}

/// Aggregates of the first `N` sites for each configured `N`, plus the
/// first `individual_sites` sites on their own, all trained identically.
pub fn aggregation_experiment(cfg: &PipelineConfig) -> Result<Vec<AggregationRow>, PipelineError> {
    cfg.validate()?;
    let a = &cfg.experiment.aggregation;
    let sites = aggregation_sites(cfg)?;
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &n in &a.site_counts {
        let agg = aggregate(&sites[..n])?;
        log::info!("aggregation cell: {n} sites");
        let report = run_cell(&agg, &cell_config(cfg, a.window, cell))?;
        cell += 1;
        rows.push(AggregationRow {
            kind: "aggregate".into(),
            site_id: agg.site_id().to_string(),
            n_sites: n,
            penetration_pct: 100.0 * solar_penetration(&agg).unwrap_or(0.0),
            report,
        });
    }
    for site in sites.iter().take(a.individual_sites) {
        log::info!("aggregation cell: individual {}", site.site_id());
        let report = run_cell(site, &cell_config(cfg, a.window, cell))?;
        cell += 1;
        rows.push(AggregationRow {
            kind: "individual".into(),
            site_id: site.site_id().to_string(),
            n_sites: 1,
            penetration_pct: 100.0 * solar_penetration(site).unwrap_or(0.0),
            report,
        });
    }
    Ok(rows)
}

/// Median overall MAPE of the individual rows (mean of the middle pair for
/// even counts).
pub fn median_individual_mape(rows: &[AggregationRow]) -> Option<f64> {
    let mut v: Vec<f64> = rows
        .iter()
        .filter(|r| r.kind == "individual")
        .map(|r| r.report.overall.mape_pct)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { (v[k / 2 - 1] + v[k / 2]) / 2.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingRow {
    pub timestamp: NaiveDateTime,
    /// 1-based rolling block (a day for day-ahead models).
    pub block: usize,
    pub observed_kw: f64,
    pub mu_missing: f64,
    pub sigma_missing: f64,
    pub lo95_missing: f64,
    pub hi95_missing: f64,
    pub mu_complete: f64,
    pub sigma_complete: f64,
    pub lo95_complete: f64,
    pub hi95_complete: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingOutcome {
    pub mask_start: NaiveDateTime,
    pub mask_steps: usize,
    pub imputation: Imputation,
    pub paths: usize,
    pub interval_mode: IntervalMode,
    /// Mean 95% band width per block, with and without measurements.
    pub block_width_missing: Vec<f64>,
    pub block_width_complete: Vec<f64>,
    /// Share of steps where the complete band is no wider than the missing one.
    pub complete_not_wider_fraction: f64,
    pub rows: Vec<MissingRow>,
}

fn default_mask_start(site: &SiteRecord, t_win: usize, steps: usize) -> Option<usize> {
    let ts = site.timestamps();
    (t_win..=site.len().checked_sub(steps)?)
        .rev()
        .find(|&i| ts[i].hour() == 0 && ts[i].minute() == 0)
}

/// Masks net-load for `mask_steps` from the mask start and forecasts through
/// the gap in rolling fashion, filling masked inputs from the model's own
/// forecasts (one path of means, or several sampled paths whose forecasts
/// are pooled); meteorological channels stay observed. The same anchors are
/// forecast from complete data with identical random streams.
pub fn missing_experiment(
    f: &Forecaster,
    site: &SiteRecord,
    study: &MissingStudy,
    mode: IntervalMode,
    seed: u64,
) -> Result<MissingOutcome, PipelineError> {
    let t0 = match study.mask_start {
        Some(t) => site
            .index_of(t)
            .ok_or_else(|| PipelineError::Config(format!("mask_start {t} is not on the site grid")))?,
        None => default_mask_start(site, f.t_win(), study.mask_steps).ok_or_else(|| {
            PipelineError::Config("record too short for the masked period after one input window".into())
        })?,
    };
    if t0 < f.t_win() || t0 + study.mask_steps > site.len() {
        return Err(PipelineError::Config(format!(
            "masked period [{t0}, {}) needs {} preceding steps within {} rows",
            t0 + study.mask_steps,
            f.t_win(),
            site.len()
        )));
    }
    let masked = mask_measurements(site, site.timestamps()[t0], study.mask_steps, &[NET_LOAD])?;
    let n_paths = match study.imputation {
        Imputation::PredictedMean => 1,
        Imputation::PredictiveSample => study.paths,
    };
    let mut paths = vec![masked; n_paths];
    let h = f.horizon();
    let blocks = study.mask_steps.div_ceil(h);
    let base = Rng::new(seed).fork(STREAM_FORECAST);
    let z = IntervalLevel::P95.z(mode);
    let mut rows = Vec::with_capacity(study.mask_steps);
    let mut width_missing = vec![0.0; blocks];
    let mut width_complete = vec![0.0; blocks];
    let mut counts = vec![0usize; blocks];
    let mut not_wider = 0usize;
    for k in 0..blocks {
        let anchor = t0 + k * h;
        let complete: ForecastDistribution = f.forecast_at(site, anchor, &mut base.fork(anchor as u64))?;
        // Every path reuses the complete run's stream, so paths that still
        // agree with the observations reproduce it exactly.
        let per_path = paths
            .iter()
            .map(|p| {
                let fc = f.forecast_at(p, anchor, &mut base.fork(anchor as u64))?;
                Ok(MemberForecast {
                    mu: fc.mu_pred,
                    sigma: fc.sigma_pred,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let (mu_missing, sigma_missing) = aggregate_members(&per_path)?;
        let end = (anchor + h).min(t0 + study.mask_steps);
        for (j, (path, fc)) in paths.iter_mut().zip(&per_path).enumerate() {
            let z_path = match study.imputation {
                Imputation::PredictedMean => 0.0,
                Imputation::PredictiveSample => base.fork(anchor as u64).fork(1 + j as u64).normal(),
            };
            for (step, i) in (anchor..end).enumerate() {
                let fill = fc.mu[step] + fc.sigma[step] * z_path;
                path.set_value(NET_LOAD, i, fill)?;
            }
        }
        for (step, i) in (anchor..end).enumerate() {
            let (mm, sm) = (mu_missing[step], sigma_missing[step]);
            let (mc, sc) = (complete.mu_pred[step], complete.sigma_pred[step]);
            let (wm, wc) = (2.0 * z * sm, 2.0 * z * sc);
            width_missing[k] += wm;
            width_complete[k] += wc;
            counts[k] += 1;
            if wc <= wm {
                not_wider += 1;
            }
            rows.push(MissingRow {
                timestamp: site.timestamps()[i],
                block: k + 1,
                observed_kw: site.net_load().get(i).unwrap_or(f64::NAN),
                mu_missing: mm,
                sigma_missing: sm,
                lo95_missing: mm - z * sm,
                hi95_missing: mm + z * sm,
                mu_complete: mc,
                sigma_complete: sc,
                lo95_complete: mc - z * sc,
                hi95_complete: mc + z * sc,
            });
        }
    }
    for k in 0..blocks {
        width_missing[k] /= counts[k] as f64;
        width_complete[k] /= counts[k] as f64;
    }
    Ok(MissingOutcome {
        mask_start: site.timestamps()[t0],
        mask_steps: study.mask_steps,
        imputation: study.imputation,
        paths: n_paths,
        interval_mode: mode,
        block_width_missing: width_missing,
        block_width_complete: width_complete,
        complete_not_wider_fraction: not_wider as f64 / rows.len() as f64,
        rows,
    })
}

fn block_cells(b: Option<&MetricBlock>) -> [String; 4] {
    match b {
        Some(b) => [
            format!("{:.6}", b.mae_kw),
            format!("{:.6}", b.mape_pct),
            format!("{:.6}", b.pbb_pct),
            format!("{:.6}", b.crps),
        ],
        None => Default::default(),
    }
}

const METRIC_HEADERS: [&str; 12] = [
    "mae_kw",
    "mape_pct",
    "pbb_pct",
    "crps",
    "winter_mae_kw",
    "winter_mape_pct",
    "winter_pbb_pct",
    "winter_crps",
    "summer_mae_kw",
    "summer_mape_pct",
    "summer_pbb_pct",
    "summer_crps",
];

fn report_cells(r: &EvalReport) -> Vec<String> {
    let mut out = Vec::with_capacity(12);
    out.extend(block_cells(Some(&r.overall)));
    out.extend(block_cells(r.winter.as_ref()));
    out.extend(block_cells(r.summer.as_ref()));
    out
}

fn csv_err(e: csv::Error) -> PipelineError {
    PipelineError::Data(e.into())
}

/// Table with one row per (penetration, horizon) cell.
pub fn write_penetration_csv<W: Write>(rows: &[PenetrationRow], w: W) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["site_id", "penetration_target_pct", "penetration_pct", "horizon", "t_win", "n_points"];
    header.extend(METRIC_HEADERS);
    out.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.site_id.clone(),
            format!("{:.2}", r.penetration_target_pct),
            format!("{:.4}", r.penetration_pct),
            r.horizon.to_string(),
            r.t_win.to_string(),
            r.report.counts.overall.to_string(),
        ];
        rec.extend(report_cells(&r.report));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush().map_err(|e| PipelineError::Data(csv::Error::from(e).into()))
}

/// Table with one row per aggregate or individual site.
pub fn write_aggregation_csv<W: Write>(rows: &[AggregationRow], w: W) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["kind", "site_id", "n_sites", "penetration_pct", "n_points"];
    header.extend(METRIC_HEADERS);
    out.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.kind.clone(),
            r.site_id.clone(),
            r.n_sites.to_string(),
            format!("{:.4}", r.penetration_pct),
            r.report.counts.overall.to_string(),
        ];
        rec.extend(report_cells(&r.report));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush().map_err(|e| PipelineError::Data(csv::Error::from(e).into()))
}

/// Per-step overlay of the missing and complete runs.
pub fn write_missing_csv<W: Write>(outcome: &MissingOutcome, w: W) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "timestamp",
        "block",
        "observed_kw",
        "mu_missing",
        "sigma_missing",
        "lo95_missing",
        "hi95_missing",
        "mu_complete",
        "sigma_complete",
        "lo95_complete",
        "hi95_complete",
    ])
    .map_err(csv_err)?;
    for r in &outcome.rows {
        let f = |v: f64| format!("{v:.6}");
        out.write_record([
            r.timestamp.format(crate::data::TIMESTAMP_FORMAT).to_string(),
            r.block.to_string(),
            f(r.observed_kw),
            f(r.mu_missing),
            f(r.sigma_missing),
            f(r.lo95_missing),
            f(r.hi95_missing),
            f(r.mu_complete),
            f(r.sigma_complete),
            f(r.lo95_complete),
            f(r.hi95_complete),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| PipelineError::Data(csv::Error::from(e).into()))
}
