//! Metrics, multi-seed aggregation and interpretability exports.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView, Dimension, Zip};

use crate::data::Windows;
use crate::model::{ForecastOutput, MdMixer, ParamSet};
use crate::training::{score, Forecaster};
use crate::{Error, Result, Scalar};

/// Windows averaged by [`export_amwg`] when the caller passes no limit.
pub const AMWG_EXPORT_WINDOWS: usize = 256;

fn paired<T: Scalar, D: Dimension>(
    y: &ArrayView<'_, T, D>,
    target: &ArrayView<'_, T, D>,
    mut f: impl FnMut(f64),
) -> Result<usize> {
    if y.shape() != target.shape() {
        return Err(Error::shape("metric", target.shape(), y.shape()));
    }
    Zip::from(y).and(target).for_each(|&a, &b| f(a.as_f64() - b.as_f64()));
    Ok(y.len())
}

pub fn mse<T: Scalar, D: Dimension>(y: ArrayView<'_, T, D>, target: ArrayView<'_, T, D>) -> Result<f64> {
    let mut acc = 0.0;
    let n = paired(&y, &target, |e| acc += e * e)?;
    Ok(acc / n as f64)
}

pub fn mae<T: Scalar, D: Dimension>(y: ArrayView<'_, T, D>, target: ArrayView<'_, T, D>) -> Result<f64> {
    let mut acc = 0.0;
    let n = paired(&y, &target, |e| acc += e.abs())?;
    Ok(acc / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub dataset: String,
    pub horizon: usize,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
}

/// Scores every window in order; errors are accumulated elementwise with
/// uniform weight.
pub fn evaluate<T: Scalar, M: Forecaster<T>>(
    model: &M,
    params: &M::Params,
    windows: &Windows<'_>,
    dataset: &str,
    seed: u64,
    batch_size: usize,
) -> Result<MetricRow> {
    if windows.is_empty() {
        return Err(Error::SegmentTooShort { segment: "test", len: 0, need: 1 });
    }
    if windows.lookback() != model.lookback() || windows.horizon() != model.horizon() {
        return Err(Error::shape(
            "windows",
            (model.lookback(), model.horizon()),
            (windows.lookback(), windows.horizon()),
        ));
    }
    let (mse, mae) = score(model, params, windows, batch_size.max(1))?;
    Ok(MetricRow {
        dataset: dataset.to_string(),
        horizon: model.horizon(),
        seed,
        mse,
        mae,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedSummary {
    pub dataset: String,
    pub horizon: usize,
    pub runs: usize,
    pub mse: f64,
    pub mse_std: f64,
    pub mae: f64,
    pub mae_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population std per `(dataset, horizon)`, in first-seen order.
pub fn aggregate_seeds(rows: &[MetricRow]) -> Vec<SeedSummary> {
    let mut keys: Vec<(&str, usize)> = Vec::new();
    for r in rows {
        let key = (r.dataset.as_str(), r.horizon);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(dataset, horizon)| {
            let group: Vec<&MetricRow> =
                rows.iter().filter(|r| r.dataset == dataset && r.horizon == horizon).collect();
            let (mse, mse_std) = mean_std(&group.iter().map(|r| r.mse).collect::<Vec<_>>());
            let (mae, mae_std) = mean_std(&group.iter().map(|r| r.mae).collect::<Vec<_>>());
            SeedSummary {
                dataset: dataset.to_string(),
                horizon,
                runs: group.len(),
                mse,
                mse_std,
                mae,
                mae_std,
            }
        })
        .collect()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))
}

fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// `dataset,horizon,seed,mse,mae`
pub fn write_metrics_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    write_rows(
        path.as_ref(),
        &header(&["dataset", "horizon", "seed", "mse", "mae"]),
        rows.iter().map(|r| {
            vec![r.dataset.clone(), r.horizon.to_string(), r.seed.to_string(), r.mse.to_string(), r.mae.to_string()]
        }),
    )
}

/// `dataset,horizon,runs,mse,mae,mse_std,mae_std`
pub fn write_summary_csv(rows: &[SeedSummary], path: impl AsRef<Path>) -> Result<()> {
    write_rows(
        path.as_ref(),
        &header(&["dataset", "horizon", "runs", "mse", "mae", "mse_std", "mae_std"]),
        rows.iter().map(|r| {
            vec![
                r.dataset.clone(),
                r.horizon.to_string(),
                r.runs.to_string(),
                r.mse.to_string(),
                r.mae.to_string(),
                r.mse_std.to_string(),
                r.mae_std.to_string(),
            ]
        }),
    )
}

/// Gate weights averaged over the first `min(limit, len)` windows.
///
/// Rows are heads from coarse to fine, columns are channels.
pub fn export_amwg<T: Scalar>(
    model: &MdMixer,
    params: &ParamSet<T>,
    windows: &Windows<'_>,
    limit: usize,
) -> Result<Array2<f64>> {
    let n = windows.len().min(limit);
    if n == 0 {
        return Err(Error::SegmentTooShort { segment: "export", len: 0, need: 1 });
    }
    let (h, c) = (model.heads(), model.config().channels);
    let mut sum = Array2::<f64>::zeros((h, c));
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(64) {
        let (x, _) = windows.batch::<T>(chunk);
        let out = model.forward(x.view(), params)?;
        for w in out.gate_weights.outer_iter() {
            Zip::from(&mut sum).and(&w).for_each(|s, &v| *s += v.as_f64());
        }
    }
    Ok(sum / n as f64)
}

/// Heatmap CSV: header `channel_0..channel_{C-1}`, one row per head.
pub fn write_heatmap_csv(weights: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let names: Vec<String> = (0..weights.ncols()).map(|c| format!("channel_{c}")).collect();
    write_rows(
        path.as_ref(),
        &names,
        weights.outer_iter().map(|row| row.iter().map(|v| v.to_string()).collect()),
    )
}

/// Writes `head_{i}.csv` (1-based, coarse to fine) and `final.csv` for one
/// sample of `output` into `dir`. Columns: `kind,step,channel_0..`; head
/// files hold `raw` rows (length `G_i`) followed by `upsampled` rows
/// (length `F`).
pub fn export_granularity_forecasts<T: Scalar>(
    output: &ForecastOutput<T>,
    sample: usize,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let (b, _, c) = output.final_forecast.dim();
    if sample >= b {
        return Err(Error::shape("export sample", format!("< {b}"), sample));
    }
    let mut cols = header(&["kind", "step"]);
    cols.extend((0..c).map(|k| format!("channel_{k}")));
    let rows_of = |kind: &'static str, series: ndarray::ArrayView2<'_, T>| -> Vec<Vec<String>> {
        series
            .outer_iter()
            .enumerate()
            .map(|(step, row)| {
                let mut r = vec![kind.to_string(), step.to_string()];
                r.extend(row.iter().map(|v| v.as_f64().to_string()));
                r
            })
            .collect()
    };

    let mut written = Vec::new();
    for (i, (raw, up)) in output.per_granularity.iter().zip(&output.upsampled).enumerate() {
        let path = dir.join(format!("head_{}.csv", i + 1));
        let mut rows = rows_of("raw", raw.index_axis(ndarray::Axis(0), sample));
        rows.extend(rows_of("upsampled", up.index_axis(ndarray::Axis(0), sample)));
        write_rows(&path, &cols, rows)?;
        written.push(path);
    }
    let path = dir.join("final.csv");
    write_rows(&path, &cols, rows_of("final", output.final_forecast.index_axis(ndarray::Axis(0), sample)))?;
    written.push(path);
    Ok(written)
}
