use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use ndarray::{Array2, Axis};

use mdmixer::baselines::Baseline;
use mdmixer::checkpoint;
use mdmixer::data::{self, make_windows, prepare_splits, PreparedSplits, SplitSpec, SynthChannel};
use mdmixer::evaluation::{
    aggregate_seeds, evaluate, export_amwg, export_granularity_forecasts, write_heatmap_csv,
    write_metrics_csv, write_summary_csv, MetricRow, AMWG_EXPORT_WINDOWS,
};
use mdmixer::model::MdMixer;
use mdmixer::training::{gradcheck, gradcheck_forecaster, probe_batch, train_with, Forecaster, GradcheckReport, TrainHyper};
use mdmixer::Error;

use crate::config::{ModelKind, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("dataset {}: {source}", path.display())]
    Dataset { path: PathBuf, source: Error },
    #[error("{0}")]
    Usage(String),
    #[error("gradient check failed: max relative error {max_rel_err:e} >= tolerance {tol:e}")]
    GradcheckFailed { max_rel_err: f64, tol: f64 },
}

impl CliError {
    /// 2: bad config, data, shapes or arguments. 3: divergence. 1: anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Dataset { .. } | CliError::Usage(_) => 2,
            CliError::GradcheckFailed { .. } => 1,
            CliError::Core(e) => match e {
                Error::Diverged { .. } | Error::NonFinite { .. } => 3,
                Error::Io { .. } => 1,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

enum Net {
    Mixer(MdMixer),
    Base(Baseline),
}

/// Loaded, split and standardized data plus the resolved config.
struct Prepared {
    cfg: RunConfig,
    splits: PreparedSplits,
}

fn load_data(mut cfg: RunConfig) -> CliResult<Prepared> {
    let path = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::Usage("config does not name a dataset (key `dataset`)".into()))?;
    let frame = data::load_csv(&path).map_err(|source| CliError::Dataset { path: path.clone(), source })?;
    match cfg.channels {
        Some(c) if c != frame.channels() => {
            return Err(Error::config(
                "channels",
                format!("config says {c} but {} has {} channels", path.display(), frame.channels()),
            )
            .into())
        }
        _ => cfg.channels = Some(frame.channels()),
    }
    let spec = SplitSpec::new(cfg.split, cfg.model.lookback, cfg.model.horizon)?;
    let splits = prepare_splits(&frame, &spec).map_err(|source| CliError::Dataset { path, source })?;
    Ok(Prepared { cfg, splits })
}

fn build(cfg: &RunConfig, channels: usize) -> CliResult<Net> {
    Ok(match cfg.model_kind {
        ModelKind::MdMixer => Net::Mixer(MdMixer::new(cfg.model_config(channels))?),
        ModelKind::Baseline(_) => Net::Base(Baseline::new(cfg.baseline_config(channels))?),
    })
}

fn out_dir(cfg: &RunConfig, out: Option<&Path>) -> CliResult<PathBuf> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.clone());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    write(&dir.join("config.txt"), &cfg.render())
}

fn checkpoint_meta(cfg: &RunConfig, seed: u64, best_epoch: usize) -> Vec<(String, String)> {
    vec![
        ("model".into(), cfg.model_kind.to_string()),
        ("dataset".into(), cfg.dataset_name.clone()),
        ("seed".into(), seed.to_string()),
        ("lookback".into(), cfg.model.lookback.to_string()),
        ("horizon".into(), cfg.model.horizon.to_string()),
        ("channels".into(), cfg.channels.unwrap_or(0).to_string()),
        ("best_epoch".into(), best_epoch.to_string()),
    ]
}

fn train_seed<M>(model: &M, p: &Prepared, seed: u64, dir: &Path) -> CliResult<MetricRow>
where
    M: Forecaster<f32>,
{
    let cfg = &p.cfg;
    let (t, f) = (cfg.model.lookback, cfg.model.horizon);
    let train_w = make_windows(&p.splits.train, t, f)?;
    let val_w = make_windows(&p.splits.val, t, f)?;
    let test_w = make_windows(&p.splits.test, t, f)?;
    let hyper = TrainHyper { seed, ..cfg.hyper };
    let (params, report) = train_with(model, &train_w, &val_w, &hyper, |r| {
        eprintln!(
            "seed {seed} epoch {:>3}  train_loss {:.6}  val_mse {:.6}  val_mae {:.6}",
            r.epoch, r.train_loss, r.val_mse, r.val_mae
        );
    })?;
    eprintln!(
        "seed {seed}: best epoch {} (val_mse {:.6}) in {:.1}s",
        report.best_epoch, report.best_val_mse, report.wall_clock_secs
    );

    let seed_dir = dir.join(format!("seed_{seed}"));
    checkpoint::save(seed_dir.join("checkpoint"), &params, &checkpoint_meta(cfg, seed, report.best_epoch))?;
    write(&seed_dir.join("report.csv"), &report.to_csv())?;
    write(&seed_dir.join("summary.txt"), &report.summary())?;
    let row = evaluate(model, &params, &test_w, &cfg.dataset_name, seed, cfg.eval_batch_size)?;
    write_metrics_csv(std::slice::from_ref(&row), seed_dir.join("metrics.csv"))?;
    Ok(row)
}

fn train_dispatch(net: &Net, p: &Prepared, seed: u64, dir: &Path) -> CliResult<MetricRow> {
    match net {
        Net::Mixer(m) => train_seed(m, p, seed, dir),
        Net::Base(b) => train_seed(b, p, seed, dir),
    }
}

pub fn train(cfg: RunConfig, out: Option<&Path>) -> CliResult<()> {
    let p = load_data(cfg)?;
    let net = build(&p.cfg, p.cfg.channels.expect("resolved"))?;
    let dir = out_dir(&p.cfg, out)?;
    echo_config(&p.cfg, &dir)?;

    let rows: Vec<MetricRow> = if p.cfg.parallel_seeds {
        thread::scope(|s| {
            let handles: Vec<_> = p
                .cfg
                .seeds
                .iter()
                .map(|&seed| {
                    let (net, p, dir) = (&net, &p, &dir);
                    s.spawn(move || train_dispatch(net, p, seed, dir))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect::<CliResult<Vec<_>>>()
        })?
    } else {
        p.cfg.seeds.iter().map(|&seed| train_dispatch(&net, &p, seed, &dir)).collect::<CliResult<_>>()?
    };

    write_metrics_csv(&rows, dir.join("metrics.csv"))?;
    let summary = aggregate_seeds(&rows);
    write_summary_csv(&summary, dir.join("summary.csv"))?;
    for s in &summary {
        println!(
            "{} F={} over {} seed(s): mse {:.4} ± {:.4}  mae {:.4} ± {:.4}",
            s.dataset, s.horizon, s.runs, s.mse, s.mse_std, s.mae, s.mae_std
        );
    }
    Ok(())
}

fn load_params<M: Forecaster<f32>>(model: &M, ckpt: &Path) -> CliResult<(M::Params, u64)> {
    let mut params = model.init(0);
    let manifest = checkpoint::load_into(ckpt, &mut params)?;
    let seed = manifest.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    Ok((params, seed))
}

fn eval_with<M: Forecaster<f32>>(model: &M, p: &Prepared, ckpt: &Path) -> CliResult<MetricRow> {
    let (params, seed) = load_params(model, ckpt)?;
    let test_w = make_windows(&p.splits.test, p.cfg.model.lookback, p.cfg.model.horizon)?;
    Ok(evaluate(model, &params, &test_w, &p.cfg.dataset_name, seed, p.cfg.eval_batch_size)?)
}

pub fn eval(cfg: RunConfig, ckpt: &Path, out: Option<&Path>) -> CliResult<()> {
    let p = load_data(cfg)?;
    let net = build(&p.cfg, p.cfg.channels.expect("resolved"))?;
    let row = match &net {
        Net::Mixer(m) => eval_with(m, &p, ckpt)?,
        Net::Base(b) => eval_with(b, &p, ckpt)?,
    };
    let dir = out_dir(&p.cfg, out)?;
    echo_config(&p.cfg, &dir)?;
    write_metrics_csv(std::slice::from_ref(&row), dir.join("metrics.csv"))?;
    println!("{} F={} seed {}: mse {:.6}  mae {:.6}", row.dataset, row.horizon, row.seed, row.mse, row.mae);
    Ok(())
}

fn forecast_csv(p: &Prepared, pred: &Array2<f64>, actual: &Array2<f64>) -> String {
    let names = &p.splits.test.channel_names;
    let pred = p.splits.stats.restore(pred.view());
    let actual = p.splits.stats.restore(actual.view());
    let mut s = String::from("step");
    for n in names {
        s.push_str(&format!(",{n},{n}_actual"));
    }
    s.push('\n');
    for step in 0..pred.nrows() {
        s.push_str(&step.to_string());
        for c in 0..names.len() {
            s.push_str(&format!(",{},{}", pred[[step, c]], actual[[step, c]]));
        }
        s.push('\n');
    }
    s
}

pub fn forecast(cfg: RunConfig, ckpt: &Path, window: usize, out: Option<&Path>) -> CliResult<()> {
    let p = load_data(cfg)?;
    let net = build(&p.cfg, p.cfg.channels.expect("resolved"))?;
    let test_w = make_windows(&p.splits.test, p.cfg.model.lookback, p.cfg.model.horizon)?;
    if window >= test_w.len() {
        return Err(CliError::Usage(format!(
            "window {window} out of range: the test split has {} windows",
            test_w.len()
        )));
    }
    let dir = out_dir(&p.cfg, out)?;
    echo_config(&p.cfg, &dir)?;
    let (x, y) = test_w.batch::<f32>(&[window]);
    let actual = y.index_axis(Axis(0), 0).mapv(f64::from);

    let pred = match &net {
        Net::Mixer(m) => {
            let (params, _) = load_params(m, ckpt)?;
            let output = m.forward(x.view(), &params)?;
            export_granularity_forecasts(&output, 0, dir.join("granularity"))?;
            let gate = output.gate_weights.index_axis(Axis(0), 0).mapv(f64::from);
            write_heatmap_csv(&gate, dir.join("amwg.csv"))?;
            output.final_forecast.index_axis(Axis(0), 0).mapv(f64::from)
        }
        Net::Base(b) => {
            let (params, _) = load_params(b, ckpt)?;
            b.forward(x.view(), &params)?.index_axis(Axis(0), 0).mapv(f64::from)
        }
    };
    write(&dir.join("forecast.csv"), &forecast_csv(&p, &pred, &actual))?;
    println!("wrote forecast for test window {window} to {}", dir.display());
    Ok(())
}

pub fn export_weights(cfg: RunConfig, ckpt: &Path, out: Option<&Path>) -> CliResult<()> {
    let p = load_data(cfg)?;
    let Net::Mixer(model) = build(&p.cfg, p.cfg.channels.expect("resolved"))? else {
        return Err(CliError::Usage(format!("model `{}` has no weighting gate", p.cfg.model_kind)));
    };
    let (params, _) = load_params(&model, ckpt)?;
    let test_w = make_windows(&p.splits.test, p.cfg.model.lookback, p.cfg.model.horizon)?;
    let weights = export_amwg(&model, &params, &test_w, AMWG_EXPORT_WINDOWS)?;
    let dir = out_dir(&p.cfg, out)?;
    echo_config(&p.cfg, &dir)?;
    write_heatmap_csv(&weights, dir.join("amwg_heatmap.csv"))?;
    for (i, row) in weights.outer_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        println!("head {} (G={}): {}", i + 1, model.schedule()[i], cells.join(" "));
    }
    Ok(())
}

fn baseline_gradcheck(cfg: &RunConfig, model: &Baseline, seed: u64) -> CliResult<GradcheckReport> {
    let params = model.init_params::<f64>(seed);
    let (x, y) = probe_batch(&cfg.model_config(model.config().channels), seed.wrapping_add(1));
    Ok(gradcheck_forecaster(model, &params, x.view(), y.view(), cfg.gradcheck_step, cfg.gradcheck_tol)?)
}

pub fn gradcheck_cmd(mut cfg: RunConfig, seed: u64, out: Option<&Path>) -> CliResult<()> {
    let channels = match (cfg.channels, &cfg.dataset) {
        (Some(c), _) => c,
        (None, Some(_)) => load_data(cfg.clone())?.cfg.channels.expect("resolved"),
        (None, None) => {
            return Err(CliError::Usage("gradcheck needs `channels` or a `dataset` to infer it from".into()))
        }
    };
    cfg.channels = Some(channels);
    let report = match build(&cfg, channels)? {
        Net::Mixer(_) => gradcheck(&cfg.model_config(channels), seed, cfg.gradcheck_step, cfg.gradcheck_tol)?,
        Net::Base(b) => baseline_gradcheck(&cfg, &b, seed)?,
    };
    let worst = report.worst.as_ref().map(|(n, i)| format!("{n}[{i}]")).unwrap_or_default();
    let text = format!(
        "max_rel_err={:e}\nchecked={}\nworst={worst}\ntolerance={:e}\npassed={}\n",
        report.max_rel_err, report.checked, report.tolerance, report.passed
    );
    print!("{text}");
    if let Some(out) = out {
        let dir = out_dir(&cfg, Some(out))?;
        echo_config(&cfg, &dir)?;
        write(&dir.join("gradcheck.txt"), &text)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::GradcheckFailed { max_rel_err: report.max_rel_err, tol: report.tolerance })
    }
}

/// Named synthetic datasets.
pub fn synth_channels(preset: &str) -> CliResult<Vec<SynthChannel>> {
    let ch = |period, amplitude, slope, noise_std| SynthChannel { period, amplitude, slope, noise_std };
    match preset {
        "two_scale" => Ok(vec![ch(192.0, 1.0, 0.0, 0.05), ch(6.0, 1.0, 0.0, 0.05)]),
        "multiscale" => Ok(vec![
            ch(24.0, 1.0, 0.0005, 0.1),
            ch(168.0, 2.0, 0.0, 0.1),
            ch(12.0, 0.5, -0.0002, 0.1),
            ch(96.0, 1.0, 0.001, 0.2),
        ]),
        "sinusoid" => Ok(vec![ch(16.0, 1.0, 0.0, 0.0)]),
        other => Err(CliError::Usage(format!(
            "unknown preset '{other}' (expected two_scale, multiscale or sinusoid)"
        ))),
    }
}

pub fn synth(preset: &str, length: usize, seed: u64, out: &Path) -> CliResult<()> {
    let frame = data::synth_multiscale(length, &synth_channels(preset)?, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    data::write_csv(&frame, out)?;
    println!("wrote {length} rows x {} channels to {}", frame.channels(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(Error::Diverged { epoch: 1, batch: 2 }).exit_code(), 3);
        assert_eq!(CliError::from(Error::config("heads", "bad")).exit_code(), 2);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::GradcheckFailed { max_rel_err: 1.0, tol: 1e-4 }.exit_code(), 1);
    }

    #[test]
    fn presets_exist() {
        for p in ["two_scale", "multiscale", "sinusoid"] {
            assert!(!synth_channels(p).unwrap().is_empty());
        }
        assert!(synth_channels("noise").is_err());
    }
}
