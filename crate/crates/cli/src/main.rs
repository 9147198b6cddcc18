//! `netcast` command-line driver: synthesize data, train, forecast, evaluate
//! and run the experiment sweeps. Outputs are CSV and JSON under `--out`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use netcast::blstm::IntervalMode;
use netcast::data::{interleaved_split, parse_timestamp, window, write_csv, DataError, WindowedDataset};
use netcast::pipeline::{
    aggregation_experiment, evaluate, load_site, median_individual_mape, missing_experiment, penetration_experiment,
    stage_seed, train_pipeline, write_aggregation_csv, write_forecast_csv, write_json_atomic, write_missing_csv,
    write_penetration_csv, CsvSource, DataSource, Forecaster, PipelineConfig, PipelineError, RunManifest, StageTiming,
    WindowShape, MANIFEST_FILE,
};
use netcast::rng::Rng;
use serde_json::json;

const STREAM_FORECAST: u64 = 3;

#[derive(Parser, Debug)]
#[command(name = "netcast", version, about = "Probabilistic net-load forecasting")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file; built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Site CSV to use instead of the configured data source.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the configured synthetic site as CSV.
    Synth,
    /// Train all three stages and evaluate the test split.
    Train {
        /// Window geometry preset; the configured window otherwise.
        #[arg(long, value_enum)]
        shape: Option<Shape>,
    },
    /// Forecast one horizon from a trained checkpoint.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        /// First forecast step (`YYYY-MM-DD HH:MM:SS`); defaults to the step
        /// after the last record.
        #[arg(long)]
        anchor: Option<String>,
        /// Interval quantiles: exact normal or the rounded `2σ` reading of 95%.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Score a trained checkpoint on a split of the configured data.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Run one of the experiment sweeps.
    Experiment {
        #[arg(value_enum)]
        name: Experiment,
        /// Trained day-ahead checkpoint for `missing`; trained on the fly otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Shape {
    FifteenMinute,
    DayAhead,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Exact,
    Rounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Experiment {
    Penetration,
    Aggregation,
    Missing,
}

fn config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(data) = &common.data {
        cfg.data = DataSource::Csv(CsvSource::new(data));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| PipelineError::io(path, e))
}

fn timed<T>(
    timings: &mut Vec<StageTiming>,
    stage: &str,
    f: impl FnOnce() -> Result<T, PipelineError>,
) -> Result<T, PipelineError> {
    let t0 = Instant::now();
    let out = f()?;
    timings.push(StageTiming {
        stage: stage.into(),
        seconds: t0.elapsed().as_secs_f64(),
    });
    Ok(out)
}

fn cmd_synth(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let mut m = RunManifest::new("synth", cfg);
    let site = timed(&mut m.stage_timings, "synth", || load_site(&cfg.data))?;
    let path = cfg.output_dir.join("site.csv");
    write_csv(&site, create(&path)?)?;
    m.summary = json!({ "site_id": site.site_id(), "steps": site.len(), "csv": path });
    m.finish(&cfg.output_dir.join(MANIFEST_FILE))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(cfg: &PipelineConfig, shape: Option<Shape>) -> Result<(), PipelineError> {
    let cfg = match shape {
        Some(s) => PipelineConfig {
            window: cfg.window.with_shape(match s {
                Shape::FifteenMinute => WindowShape::FIFTEEN_MINUTE,
                Shape::DayAhead => WindowShape::DAY_AHEAD,
            }),
            ..cfg.clone()
        },
        None => cfg.clone(),
    };
    cfg.validate()?;
    let mut m = RunManifest::new("train", &cfg);
    let site = timed(&mut m.stage_timings, "data", || load_site(&cfg.data))?;
    let (f, outcome) = train_pipeline(&site, &cfg)?;
    m.stage_timings.extend(outcome.timings.iter().cloned());
    let ev = timed(&mut m.stage_timings, "evaluate", || {
        evaluate(
            &f,
            &outcome.test,
            "test",
            stage_seed(cfg.seed, STREAM_FORECAST),
            &cfg.eval.report_options(),
        )
    })?;
    let ck = f.save(&cfg.output_dir)?;
    m.checkpoint = Some(ck.display().to_string());
    m.summary = json!({
        "weights": f.weight_count(),
        "train_windows": outcome.train.len(),
        "test_windows": outcome.test.len(),
        "ae_final_loss": outcome.ae_loss_trace.last(),
        "ae_holdout_mse": outcome.ae_holdout_mse,
        "blstm_final_loss": outcome.blstm_loss_trace.last(),
        "kl_weight": outcome.kl_weight,
        "pbb_2sigma_pct": ev.coverage(2.0)?,
    });
    m.metrics = Some(ev.report);
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml_string()?)
        .map_err(|e| PipelineError::io(&cfg.output_dir, e))?;
    m.finish(&cfg.output_dir.join(MANIFEST_FILE))?;
    info!("checkpoint written to {}", ck.display());
    Ok(())
}

fn cmd_forecast(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    anchor: Option<&str>,
    mode: Option<Mode>,
) -> Result<(), PipelineError> {
    let f = Forecaster::load(checkpoint)?;
    let site = load_site(&cfg.data)?;
    let idx = match anchor {
        None => site.len(),
        Some(s) => {
            let t = parse_timestamp(s).ok_or_else(|| PipelineError::Config(format!("cannot parse anchor `{s}`")))?;
            site.index_of(t)
                .ok_or_else(|| PipelineError::Config(format!("anchor {t} is not on the site grid")))?
        }
    };
    let mode = match mode {
        Some(Mode::Exact) => IntervalMode::Exact,
        Some(Mode::Rounded) => IntervalMode::Rounded,
        None => cfg.eval.interval_mode,
    };
    let mut rng = Rng::new(stage_seed(cfg.seed, STREAM_FORECAST)).fork(idx as u64);
    let fc = f.forecast_at(&site, idx, &mut rng)?;
    let path = cfg.output_dir.join("forecast.csv");
    write_forecast_csv(&fc, mode, create(&path)?)?;
    info!("wrote {} rows to {}", fc.horizon(), path.display());
    Ok(())
}

fn split_windows(cfg: &PipelineConfig, f: &Forecaster, split: Split) -> Result<WindowedDataset, PipelineError> {
    let site = load_site(&cfg.data)?;
    let ds = window(&site, &f.window)?;
    if split == Split::All {
        return Ok(ds);
    }
    let (train, test) = interleaved_split(&ds, &cfg.split)?;
    Ok(if split == Split::Train { train } else { test })
}

fn cmd_evaluate(cfg: &PipelineConfig, checkpoint: &Path, split: Split) -> Result<(), PipelineError> {
    let f = Forecaster::load(checkpoint)?;
    let label = match split {
        Split::Train => "train",
        Split::Test => "test",
        Split::All => "all",
    };
    let ds = split_windows(cfg, &f, split)?;
    if ds.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    let ev = evaluate(&f, &ds, label, stage_seed(cfg.seed, STREAM_FORECAST), &cfg.eval.report_options())?;
    let path = cfg.output_dir.join(format!("eval_{label}.json"));
    write_json_atomic(&path, &ev.report)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_experiment(cfg: &PipelineConfig, name: Experiment, checkpoint: Option<&Path>) -> Result<(), PipelineError> {
    let out = &cfg.output_dir;
    match name {
        Experiment::Penetration => {
            let mut m = RunManifest::new("experiment penetration", cfg);
            let rows = timed(&mut m.stage_timings, "sweep", || penetration_experiment(cfg))?;
            write_penetration_csv(&rows, create(&out.join("penetration.csv"))?)?;
            write_json_atomic(&out.join("penetration.json"), &rows)?;
            m.summary = json!({ "rows": rows.len() });
            m.finish(&out.join(MANIFEST_FILE))?;
        }
        Experiment::Aggregation => {
            let mut m = RunManifest::new("experiment aggregation", cfg);
            let rows = timed(&mut m.stage_timings, "sweep", || aggregation_experiment(cfg))?;
            write_aggregation_csv(&rows, create(&out.join("aggregation.csv"))?)?;
            write_json_atomic(&out.join("aggregation.json"), &rows)?;
            m.summary = json!({ "rows": rows.len(), "median_individual_mape_pct": median_individual_mape(&rows) });
            m.finish(&out.join(MANIFEST_FILE))?;
        }
        Experiment::Missing => {
            let mut m = RunManifest::new("experiment missing", cfg);
            let site = load_site(&cfg.data)?;
            let f = match checkpoint {
                Some(dir) => Forecaster::load(dir)?,
                None => {
                    let day_ahead = PipelineConfig {
                        window: cfg.window.with_shape(WindowShape::DAY_AHEAD),
                        ..cfg.clone()
                    };
                    let (f, outcome) = train_pipeline(&site, &day_ahead)?;
                    m.stage_timings.extend(outcome.timings.iter().cloned());
                    m.checkpoint = Some(f.save(&out.join("model"))?.display().to_string());
                    f
                }
            };
            let study = &cfg.experiment.missing;
            let outcome = timed(&mut m.stage_timings, "missing", || {
                missing_experiment(
                    &f,
                    &site,
                    study,
                    cfg.eval.interval_mode,
                    stage_seed(cfg.seed, STREAM_FORECAST),
                )
            })?;
            write_missing_csv(&outcome, create(&out.join("missing.csv"))?)?;
            let meta = json!({
                "mask_start": outcome.mask_start,
                "mask_steps": outcome.mask_steps,
                "imputation": outcome.imputation,
                "paths": outcome.paths,
                "interval_mode": outcome.interval_mode,
                "block_width_missing": outcome.block_width_missing,
                "block_width_complete": outcome.block_width_complete,
                "complete_not_wider_fraction": outcome.complete_not_wider_fraction,
            });
            write_json_atomic(&out.join("missing.json"), &meta)?;
            m.summary = meta;
            m.finish(&out.join(MANIFEST_FILE))?;
        }
    }
    info!("results written under {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = config(&cli.common)?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Train { shape } => cmd_train(&cfg, shape),
        Command::Forecast {
            checkpoint,
            anchor,
            mode,
        } => cmd_forecast(&cfg, &checkpoint, anchor.as_deref(), mode),
        Command::Evaluate { checkpoint, split } => cmd_evaluate(&cfg, &checkpoint, split),
        Command::Experiment { name, checkpoint } => cmd_experiment(&cfg, name, checkpoint.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
