//! Dataset ingestion, standardization, chronological splitting and sliding windows.

use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result, Scalar};

/// Floor applied to dataset-level standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Raw multivariate series: `T_total × C` values plus row timestamps and channel names.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame {
    pub values: Array2<f64>,
    pub timestamps: Vec<String>,
    pub channel_names: Vec<String>,
}

impl SeriesFrame {
    pub fn new(
        values: Array2<f64>,
        timestamps: Vec<String>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::shape("series frame", "non-empty", (rows, cols)));
        }
        if timestamps.len() != rows {
            return Err(Error::shape("series frame timestamps", rows, timestamps.len()));
        }
        if channel_names.len() != cols {
            return Err(Error::shape("series frame channels", cols, channel_names.len()));
        }
        Ok(Self {
            values,
            timestamps,
            channel_names,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `[start, end)` as a new frame.
    pub fn slice_rows(&self, start: usize, end: usize) -> SeriesFrame {
        SeriesFrame {
            values: self.values.slice(s![start..end, ..]).to_owned(),
            timestamps: self.timestamps[start..end].to_vec(),
            channel_names: self.channel_names.clone(),
        }
    }
}

/// Loads an ETT-style CSV: header row, first column timestamp, remaining columns numeric.
///
/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesFrame> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    parse_csv(&text, path)
}

fn parse_csv(text: &str, path: &Path) -> Result<SeriesFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 1,
            reason: e.to_string(),
        })?
        .clone();
    if header.len() < 2 {
        return Err(Error::MalformedRow {
            row: 1,
            reason: format!("expected a timestamp column and at least one value column, found {} columns", header.len()),
        });
    }
    let channel_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let channels = channel_names.len();

    let mut timestamps = Vec::new();
    let mut flat = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if record.len() != channels + 1 {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {} fields, found {}", channels + 1, record.len()),
            });
        }
        timestamps.push(record[0].to_string());
        for (c, cell) in record.iter().skip(1).enumerate() {
            let value: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    column: channel_names[c].clone(),
                    row,
                })?;
            flat.push(value);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let values = Array2::from_shape_vec((timestamps.len(), channels), flat)
        .expect("row lengths validated");
    SeriesFrame::new(values, timestamps, channel_names)
}

/// Writes a frame back out in the same CSV layout `load_csv` reads.
pub fn write_csv(frame: &SeriesFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("date");
    for name in &frame.channel_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (ts, row) in frame.timestamps.iter().zip(frame.values.rows()) {
        out.push_str(ts);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-channel mean and population standard deviation of a training frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit(values: ArrayView2<'_, f64>) -> Self {
        let n = values.nrows() as f64;
        let mut mean = Vec::with_capacity(values.ncols());
        let mut std = Vec::with_capacity(values.ncols());
        for col in values.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt().max(STD_FLOOR));
        }
        Self { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Maps standardized values back to the original scale.
    pub fn restore(&self, values: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = values.to_owned();
        for (c, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.std[c] + self.mean[c]);
        }
        out
    }
}

/// Z-scores every channel, fitting the statistics on `frame` when none are given.
pub fn standardize(frame: &SeriesFrame, stats: Option<&ChannelStats>) -> (SeriesFrame, ChannelStats) {
    let stats = stats
        .cloned()
        .unwrap_or_else(|| ChannelStats::fit(frame.values.view()));
    let mut values = frame.values.clone();
    for (c, mut col) in values.columns_mut().into_iter().enumerate() {
        let (m, sd) = (stats.mean[c], stats.std[c]);
        col.mapv_inplace(|v| (v - m) / sd);
    }
    (
        SeriesFrame {
            values,
            timestamps: frame.timestamps.clone(),
            channel_names: frame.channel_names.clone(),
        },
        stats,
    )
}

/// Split ratios plus the window geometry that the segments must accommodate.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub lookback: usize,
    pub horizon: usize,
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], lookback: usize, horizon: usize) -> Result<Self> {
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::config("split", "ratios must be finite and nonnegative"));
        }
        let sum: f64 = ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::config("split", format!("ratios must sum to 1, got {sum}")));
        }
        if lookback == 0 || horizon == 0 {
            return Err(Error::config("split", "lookback and horizon must be positive"));
        }
        Ok(Self {
            ratios,
            lookback,
            horizon,
        })
    }

    /// Train/val boundary `b1` and val/test boundary `b2`.
    pub fn boundaries(&self, total: usize) -> (usize, usize) {
        // The epsilon absorbs representation error in products such as 0.6 · 17420.
        let n = total as f64;
        let b1 = (self.ratios[0] * n + 1e-9).floor() as usize;
        let b2 = ((self.ratios[0] + self.ratios[1]) * n + 1e-9).floor() as usize;
        (b1.min(total), b2.min(total))
    }
}

/// Row ranges of the three segments (val/test extend back by the lookback).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: (usize, usize),
    pub val: (usize, usize),
    pub test: (usize, usize),
}

pub fn split_ranges(total: usize, spec: &SplitSpec) -> Result<SplitRanges> {
    let (b1, b2) = spec.boundaries(total);
    let need = spec.lookback + spec.horizon;
    let check = |segment: &'static str, start: Option<usize>, end: usize| -> Result<(usize, usize)> {
        match start {
            Some(start) if end >= start && end - start >= need => Ok((start, end)),
            Some(start) => Err(Error::SegmentTooShort {
                segment,
                len: end.saturating_sub(start),
                need,
            }),
            None => Err(Error::SegmentTooShort {
                segment,
                len: end,
                need,
            }),
        }
    };
    let train = check("train", Some(0), b1)?;
    let val = check("val", b1.checked_sub(spec.lookback), b2)?;
    let test = check("test", b2.checked_sub(spec.lookback), total)?;
    Ok(SplitRanges { train, val, test })
}

/// Chronological train/val/test split; no rows are reordered.
pub fn chronological_split(
    frame: &SeriesFrame,
    spec: &SplitSpec,
) -> Result<(SeriesFrame, SeriesFrame, SeriesFrame)> {
    let r = split_ranges(frame.len(), spec)?;
    Ok((
        frame.slice_rows(r.train.0, r.train.1),
        frame.slice_rows(r.val.0, r.val.1),
        frame.slice_rows(r.test.0, r.test.1),
    ))
}

/// Chronologically split segments standardized with train-segment statistics.
#[derive(Clone, Debug)]
pub struct PreparedSplits {
    pub train: SeriesFrame,
    pub val: SeriesFrame,
    pub test: SeriesFrame,
    pub stats: ChannelStats,
}

pub fn prepare_splits(frame: &SeriesFrame, spec: &SplitSpec) -> Result<PreparedSplits> {
    let (train, val, test) = chronological_split(frame, spec)?;
    let (train, stats) = standardize(&train, None);
    let (val, _) = standardize(&val, Some(&stats));
    let (test, _) = standardize(&test, Some(&stats));
    Ok(PreparedSplits { train, val, test, stats })
}

/// Dense stride-1 supervised windows over one frame.
#[derive(Clone, Copy, Debug)]
pub struct Windows<'a> {
    frame: &'a SeriesFrame,
    lookback: usize,
    horizon: usize,
}

/// One supervised window: input rows `[start, start+T)`, target rows `[start+T, start+T+F)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
}

pub fn make_windows(frame: &SeriesFrame, lookback: usize, horizon: usize) -> Result<Windows<'_>> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::config("window", "lookback and horizon must be positive"));
    }
    if frame.len() < lookback + horizon {
        return Err(Error::SegmentTooShort {
            segment: "window",
            len: frame.len(),
            need: lookback + horizon,
        });
    }
    Ok(Windows {
        frame,
        lookback,
        horizon,
    })
}

impl<'a> Windows<'a> {
    pub fn len(&self) -> usize {
        self.frame.len() - self.lookback - self.horizon + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn channels(&self) -> usize {
        self.frame.channels()
    }

    pub fn iter(&self) -> impl Iterator<Item = Window> + '_ {
        (0..self.len()).map(|start| Window { start })
    }

    pub fn input(&self, index: usize) -> ArrayView2<'a, f64> {
        let frame: &'a SeriesFrame = self.frame;
        frame.values.slice(s![index..index + self.lookback, ..])
    }

    pub fn target(&self, index: usize) -> ArrayView2<'a, f64> {
        let t0 = index + self.lookback;
        let frame: &'a SeriesFrame = self.frame;
        frame.values.slice(s![t0..t0 + self.horizon, ..])
    }

    /// Stacks the selected windows into `(B × T × C, B × F × C)` tensors.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> (Array3<T>, Array3<T>) {
        let c = self.channels();
        let mut x = Array3::zeros((indices.len(), self.lookback, c));
        let mut y = Array3::zeros((indices.len(), self.horizon, c));
        for (b, &idx) in indices.iter().enumerate() {
            x.slice_mut(s![b, .., ..])
                .zip_mut_with(&self.input(idx), |dst, &src| *dst = T::of(src));
            y.slice_mut(s![b, .., ..])
                .zip_mut_with(&self.target(idx), |dst, &src| *dst = T::of(src));
        }
        (x, y)
    }

    /// Sequential batches of at most `batch_size` windows; the last may be short.
    pub fn sequential_batches(&self, batch_size: usize) -> Vec<Vec<usize>> {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}

/// One synthetic channel: `amplitude·sin(2πt/period) + slope·t + N(0, noise_std²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthChannel {
    pub period: f64,
    pub amplitude: f64,
    pub slope: f64,
    pub noise_std: f64,
}

pub fn synth_multiscale(n: usize, channels: &[SynthChannel], seed: u64) -> Result<SeriesFrame> {
    if n == 0 || channels.is_empty() {
        return Err(Error::config("synth", "need n ≥ 1 and at least one channel"));
    }
    if let Some(ch) = channels.iter().find(|ch| ch.period.is_nan() || ch.period < 2.0) {
        return Err(Error::config("synth", format!("period must be ≥ 2, got {}", ch.period)));
    }
    if channels.iter().any(|ch| ch.noise_std.is_nan() || ch.noise_std < 0.0) {
        return Err(Error::config("synth", "noise std must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array2::zeros((n, channels.len()));
    for (c, ch) in channels.iter().enumerate() {
        let noise = Normal::new(0.0, ch.noise_std).expect("validated std");
        for t in 0..n {
            let tf = t as f64;
            let mut v = ch.amplitude * (2.0 * std::f64::consts::PI * tf / ch.period).sin() + ch.slope * tf;
            if ch.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            values[[t, c]] = v;
        }
    }
    let timestamps = (0..n).map(|t| t.to_string()).collect();
    let names = (0..channels.len()).map(|c| format!("ch{c}")).collect();
    SeriesFrame::new(values, timestamps, names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn parse(text: &str) -> Result<SeriesFrame> {
        parse_csv(text, Path::new("inline.csv"))
    }

    #[test]
    fn minimal_csv() {
        let f = parse("date,a\n2020-01-01,1.0\n2020-01-02,2.0").unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.channels(), 1);
        assert_eq!(f.values, array![[1.0], [2.0]]);
        assert_eq!(f.timestamps, vec!["2020-01-01", "2020-01-02"]);
        assert_eq!(f.channel_names, vec!["a"]);
    }

    #[test]
    fn non_numeric_cell_names_column_and_row() {
        let err = parse("date,a\n2020-01-01,abc\n").unwrap_err();
        assert_eq!(err.to_string(), "non-numeric value, column 'a', row 2");
        let err = parse("date,a,b\n1,1,2\n2,3,\n").unwrap_err();
        assert_eq!(err.to_string(), "non-numeric value, column 'b', row 3");
        assert!(matches!(parse("date,a\n1,NaN\n"), Err(Error::NonNumeric { .. })));
    }

    #[test]
    fn malformed_and_empty() {
        let err = parse("date,a,b\n1,1,2\n2,3\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 3, .. }), "{err}");
        assert!(matches!(parse("date,a\n"), Err(Error::EmptyFile(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(load_csv(&p), Err(Error::EmptyFile(_))));
    }

    #[test]
    fn standardize_population_std() {
        let f = SeriesFrame::new(array![[1.0], [2.0], [3.0]], vec!["a".into(), "b".into(), "c".into()], vec!["x".into()]).unwrap();
        let (z, stats) = standardize(&f, None);
        assert_abs_diff_eq!(stats.mean[0], 2.0);
        assert_abs_diff_eq!(stats.std[0], 0.816496580927726, epsilon = 1e-12);
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (v, e) in z.values.iter().zip(expect) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-12);
        }
        let (same, _) = standardize(&f, Some(&ChannelStats::identity(1)));
        assert_eq!(same.values, f.values);
    }

    #[test]
    fn standardize_constant_channel() {
        let f = SeriesFrame::new(array![[5.0], [5.0]], vec!["a".into(), "b".into()], vec!["x".into()]).unwrap();
        let (z, stats) = standardize(&f, None);
        assert_eq!(z.values, array![[0.0], [0.0]]);
        assert_eq!(stats.std[0], STD_FLOOR);
    }

    #[test]
    fn split_boundaries_ett() {
        let spec = SplitSpec::new([0.6, 0.2, 0.2], 96, 96).unwrap();
        assert_eq!(spec.boundaries(17420), (10452, 13936));
    }

    #[test]
    fn split_711() {
        let spec = SplitSpec::new([0.7, 0.1, 0.2], 10, 5).unwrap();
        let r = split_ranges(100, &spec).unwrap();
        assert_eq!(r.train, (0, 70));
        assert_eq!(r.val, (60, 80));
        assert_eq!(r.test, (70, 100));
    }

    #[test]
    fn split_degenerate_ratio() {
        let spec = SplitSpec::new([1.0, 0.0, 0.0], 4, 2).unwrap();
        let err = split_ranges(10, &spec).unwrap_err();
        assert!(err.to_string().starts_with("val segment too short"), "{err}");
    }

    #[test]
    fn split_rejects_bad_ratios() {
        assert!(SplitSpec::new([0.5, 0.2, 0.2], 4, 2).is_err());
        assert!(SplitSpec::new([1.2, -0.2, 0.0], 4, 2).is_err());
    }

    fn ramp(n: usize) -> SeriesFrame {
        let values = Array2::from_shape_fn((n, 2), |(t, c)| (t * 10 + c) as f64);
        SeriesFrame::new(values, (0..n).map(|t| t.to_string()).collect(), vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn windows_enumeration() {
        let f = ramp(10);
        let w = make_windows(&f, 4, 2).unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(w.input(0).column(0).to_vec(), vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(w.target(0).column(0).to_vec(), vec![40.0, 50.0]);
        assert_eq!(w.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        let (x, y) = w.batch::<f32>(&[4, 0]);
        assert_eq!(x.dim(), (2, 4, 2));
        assert_eq!(y[[0, 1, 1]], 91.0);
        assert_eq!(x[[1, 3, 0]], 30.0);

        assert_eq!(make_windows(&ramp(6), 4, 2).unwrap().len(), 1);
        assert!(make_windows(&ramp(5), 4, 2).is_err());
    }

    #[test]
    fn sequential_batches_last_short() {
        let f = ramp(20);
        let w = make_windows(&f, 4, 2).unwrap();
        let batches = w.sequential_batches(6);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![6, 6, 3]);
    }

    #[test]
    fn synth_sinusoid_and_ramp() {
        let f = synth_multiscale(64, &[SynthChannel { period: 16.0, amplitude: 1.0, slope: 0.0, noise_std: 0.0 }], 1).unwrap();
        assert_eq!(f.values[[4, 0]], 1.0);
        let f = synth_multiscale(10, &[SynthChannel { period: 16.0, amplitude: 0.0, slope: 0.5, noise_std: 0.0 }], 1).unwrap();
        for t in 0..10 {
            assert_eq!(f.values[[t, 0]], 0.5 * t as f64);
        }
    }

    #[test]
    fn synth_deterministic() {
        let spec = [
            SynthChannel { period: 24.0, amplitude: 1.0, slope: 0.01, noise_std: 0.3 },
            SynthChannel { period: 5.0, amplitude: 2.0, slope: 0.0, noise_std: 0.1 },
        ];
        let a = synth_multiscale(200, &spec, 9).unwrap();
        let b = synth_multiscale(200, &spec, 9).unwrap();
        let c = synth_multiscale(200, &spec, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(synth_multiscale(10, &[SynthChannel { period: 1.0, amplitude: 1.0, slope: 0.0, noise_std: 0.0 }], 0).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let f = synth_multiscale(30, &[SynthChannel { period: 7.0, amplitude: 1.3, slope: 0.1, noise_std: 0.2 }], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_csv(&f, &p).unwrap();
        let g = load_csv(&p).unwrap();
        assert_eq!(g.values, f.values);
        assert_eq!(g.channel_names, f.channel_names);
    }

    #[test]
    fn prepared_splits_use_train_statistics() {
        let values = Array2::from_shape_fn((40, 2), |(t, c)| (t * (c + 1)) as f64);
        let frame = SeriesFrame::new(
            values,
            (0..40).map(|t| t.to_string()).collect(),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let spec = SplitSpec::new([0.5, 0.25, 0.25], 4, 2).unwrap();
        let p = prepare_splits(&frame, &spec).unwrap();
        assert_eq!(p.train.len(), 20);
        assert_eq!(p.val.len(), 14);
        assert_eq!(p.test.len(), 14);
        let fitted = ChannelStats::fit(frame.slice_rows(0, 20).values.view());
        assert_eq!(p.stats, fitted);
        // the first val row is train row 16, standardized with train stats
        assert_abs_diff_eq!(p.val.values[[0, 1]], p.train.values[[16, 1]], epsilon = 1e-12);
    }
}
