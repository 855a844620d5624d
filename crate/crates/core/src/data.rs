//! Series construction, CSV ingestion, chronological splits, z-scoring,
//! rolling windows and mini-batching.
//!
//! CSV layout: UTF-8, comma separated, one header row. The first column is a
//! timestamp (any string, ignored for modeling); every other column is a
//! decimal feature.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::rng::SeededRng;
use crate::{Error, Result};

/// A `T × K` block of observations plus the per-feature statistics that were
/// used to standardize it (mean 0 / std 1 for raw data).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub values: Matrix,
    pub timestamps: Vec<String>,
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Row index of `values[0]` in the series this segment was cut from.
    pub offset: usize,
}

impl SeriesDataset {
    pub fn new(values: Matrix, timestamps: Vec<String>, feature_names: Vec<String>) -> Result<Self> {
        let (t, k) = values.shape();
        if timestamps.len() != t {
            return Err(Error::data(format!("{} timestamps for {t} rows", timestamps.len())));
        }
        if feature_names.len() != k {
            return Err(Error::data(format!(
                "{} feature names for {k} columns",
                feature_names.len()
            )));
        }
        Ok(Self {
            values,
            timestamps,
            feature_names,
            mean: vec![0.0; k],
            std: vec![1.0; k],
            offset: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn features(&self) -> usize {
        self.values.cols()
    }

    /// Keeps a single feature column (univariate mode).
    pub fn select_feature(&self, name: &str) -> Result<Self> {
        let k = self
            .feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::data(format!("no feature column named {name:?}")))?;
        Ok(self.select_column(k))
    }

    /// Keeps only the last column, the conventional forecasting target.
    pub fn select_last_feature(&self) -> Self {
        self.select_column(self.features() - 1)
    }

    fn select_column(&self, k: usize) -> Self {
        let values = Matrix::from_fn(self.len(), 1, |r, _| self.values[(r, k)]);
        Self {
            values,
            timestamps: self.timestamps.clone(),
            feature_names: vec![self.feature_names[k].clone()],
            mean: vec![self.mean[k]],
            std: vec![self.std[k]],
            offset: self.offset,
        }
    }

    /// Maps standardized values back to the original scale.
    pub fn destandardize(&self, values: &Matrix) -> Matrix {
        let k = self.features();
        Matrix::from_fn(values.rows(), values.cols(), |r, c| {
            values[(r, c)] * self.std[c % k] + self.mean[c % k]
        })
    }

    fn segment(&self, start: usize, end: usize) -> Self {
        Self {
            values: self.values.slice_rows(start, end),
            timestamps: self.timestamps[start..end].to_vec(),
            feature_names: self.feature_names.clone(),
            mean: self.mean.clone(),
            std: self.std.clone(),
            offset: self.offset + start,
        }
    }
}

/// `f(t) = 2 sin(2πt/32) + sin(2πt/48) + σ z_t`, `z_t ~ N(0, 1)`.
pub fn synth_value(t: usize, sigma: f64, z: f64) -> f64 {
    let t = t as f64;
    2.0 * (2.0 * PI * t / 32.0).sin() + (2.0 * PI * t / 48.0).sin() + sigma * z
}

/// Sine-mixture series with Gaussian noise, one feature named `value`.
///
/// A standard normal is drawn for every step even when `sigma == 0`, so the
/// noise stream does not depend on the noise level.
pub fn synth_series(length: usize, sigma: f64, seed: u64) -> Result<SeriesDataset> {
    if length < 1 {
        return Err(Error::config("length must be ≥ 1"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config("sigma must be a finite non-negative number"));
    }
    let mut rng = SeededRng::new(seed);
    let data = (0..length)
        .map(|t| synth_value(t, sigma, rng.standard_normal()))
        .collect();
    let values = Matrix::from_vec(length, 1, data)?;
    let timestamps = (0..length).map(|t| t.to_string()).collect();
    SeriesDataset::new(values, timestamps, vec!["value".into()])
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string())
}

/// Parses the dataset CSV format from any reader; `source` labels errors.
pub fn read_csv(reader: impl std::io::Read, source: &str) -> Result<SeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("{source}: cannot read header: {e}")))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::data(format!(
            "{source}: need a timestamp column and at least one feature column"
        )));
    }
    let width = headers.len();
    let feature_names: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();

    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // Line numbers are 1-based and count the header.
        let line = i + 2;
        let rec = rec.map_err(|e| Error::data(format!("{source}: line {line}: {e}")))?;
        if rec.len() != width {
            return Err(Error::data(format!(
                "{source}: line {line}: ragged row with {} fields, expected {width}",
                rec.len()
            )));
        }
        timestamps.push(rec[0].to_string());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::data(format!(
                    "{source}: line {line}, column {} ({}): cannot parse {cell:?} as a number",
                    c + 1,
                    &headers[c]
                ))
            })?;
            data.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::data(format!("{source}: empty dataset")));
    }
    let values = Matrix::from_vec(timestamps.len(), width - 1, data)?;
    SeriesDataset::new(values, timestamps, feature_names)
}

pub fn write_csv(dataset: &SeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let wrap = |e: csv::Error| Error::data(format!("{}: {e}", path.display()));
    let mut header = vec!["timestamp".to_string()];
    header.extend(dataset.feature_names.iter().cloned());
    w.write_record(&header).map_err(wrap)?;
    for r in 0..dataset.len() {
        let mut row = vec![dataset.timestamps[r].clone()];
        row.extend(dataset.values.row(r).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Chronological train/validation/test proportions given as integer parts,
/// e.g. `6:2:2`.
///
/// Segment lengths are `floor(T·train/S)` and `floor(T·val/S)`; the test
/// segment takes the remaining rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl SplitSpec {
    pub fn new(train: u32, val: u32, test: u32) -> Result<Self> {
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::config("split parts must all be positive"));
        }
        Ok(Self { train, val, test })
    }

    /// 6:2:2, the ETT convention.
    pub fn ett() -> Self {
        Self {
            train: 6,
            val: 2,
            test: 2,
        }
    }

    /// 7:1:2, used for every other dataset.
    pub fn standard() -> Self {
        Self {
            train: 7,
            val: 1,
            test: 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::config(format!("split {s:?} must look like 6:2:2")));
        }
        let p = |x: &str| {
            x.trim()
                .parse::<u32>()
                .map_err(|_| Error::config(format!("bad split part {x:?}")))
        };
        Self::new(p(parts[0])?, p(parts[1])?, p(parts[2])?)
    }

    pub fn lengths(&self, total: usize) -> (usize, usize, usize) {
        let sum = (self.train + self.val + self.test) as usize;
        let train = total * self.train as usize / sum;
        let val = total * self.val as usize / sum;
        (train, val, total - train - val)
    }
}

impl std::fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: SeriesDataset,
    pub val: SeriesDataset,
    pub test: SeriesDataset,
    pub warnings: Vec<String>,
}

/// Cuts the raw series chronologically and z-scores all three segments with
/// statistics (population std) taken from the train segment alone.
///
/// A constant train feature gets std 1, which leaves it centred at zero.
pub fn split_and_standardize(dataset: &SeriesDataset, spec: SplitSpec) -> Result<Splits> {
    let (n_train, n_val) = checked_lengths(dataset, spec)?;
    let mut raw = dataset.clone();
    raw.mean = vec![0.0; dataset.features()];
    raw.std = vec![1.0; dataset.features()];

    let k = dataset.features();
    let mut mean = vec![0.0; k];
    let mut std = vec![0.0; k];
    let mut warnings = Vec::new();
    for c in 0..k {
        let col: Vec<f64> = (0..n_train).map(|r| dataset.values[(r, c)]).collect();
        let m = col.iter().sum::<f64>() / n_train as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n_train as f64;
        mean[c] = m;
        std[c] = if var > 0.0 {
            var.sqrt()
        } else {
            let msg = format!(
                "feature {:?} is constant on the train segment; std clamped to 1",
                dataset.feature_names[c]
            );
            log::warn!("{msg}");
            warnings.push(msg);
            1.0
        };
    }
    raw.values = Matrix::from_fn(dataset.len(), k, |r, c| (dataset.values[(r, c)] - mean[c]) / std[c]);
    raw.mean = mean;
    raw.std = std;

    Ok(Splits {
        train: raw.segment(0, n_train),
        val: raw.segment(n_train, n_train + n_val),
        test: raw.segment(n_train + n_val, dataset.len()),
        warnings,
    })
}

/// Chronological split without rescaling (mean 0, std 1 recorded).
pub fn split_raw(dataset: &SeriesDataset, spec: SplitSpec) -> Result<Splits> {
    let (n_train, n_val) = checked_lengths(dataset, spec)?;
    let mut raw = dataset.clone();
    raw.mean = vec![0.0; dataset.features()];
    raw.std = vec![1.0; dataset.features()];
    Ok(Splits {
        train: raw.segment(0, n_train),
        val: raw.segment(n_train, n_train + n_val),
        test: raw.segment(n_train + n_val, dataset.len()),
        warnings: Vec::new(),
    })
}

fn checked_lengths(dataset: &SeriesDataset, spec: SplitSpec) -> Result<(usize, usize)> {
    let (n_train, n_val, _) = spec.lengths(dataset.len());
    if n_train == 0 {
        return Err(Error::data(format!(
            "series of length {} leaves an empty train segment under {spec}",
            dataset.len()
        )));
    }
    Ok((n_train, n_val))
}

/// One rolling-forecast sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    /// `L × K` observations ending at `origin`.
    pub past: Matrix,
    /// `M × K` observations starting at `origin + 1`.
    pub future: Matrix,
    /// Absolute row index (in the unsplit series) of the last past row.
    pub origin: usize,
}

pub fn window_count(segment_len: usize, input_len: usize, output_len: usize) -> usize {
    (segment_len + 1).saturating_sub(input_len + output_len)
}

/// Stride-1 rolling windows entirely inside `segment`.
///
/// A segment shorter than `L + M` yields no windows (with a logged warning).
pub fn windowize(segment: &SeriesDataset, input_len: usize, output_len: usize) -> Vec<WindowPair> {
    let n = window_count(segment.len(), input_len, output_len);
    if n == 0 {
        log::warn!(
            "segment of length {} is shorter than L+M = {}; no windows",
            segment.len(),
            input_len + output_len
        );
        return Vec::new();
    }
    (0..n)
        .map(|s| WindowPair {
            past: segment.values.slice_rows(s, s + input_len),
            future: segment.values.slice_rows(s + input_len, s + input_len + output_len),
            origin: segment.offset + s + input_len - 1,
        })
        .collect()
}

/// Splits `0..count` into consecutive batches of `batch_size`, keeping the
/// final short batch. With `shuffle` the index order is permuted first.
pub fn batches(count: usize, batch_size: usize, shuffle: Option<&mut SeededRng>) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be ≥ 1"));
    }
    let mut order: Vec<usize> = (0..count).collect();
    if let Some(rng) = shuffle {
        rng.shuffle(&mut order);
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, k: usize) -> SeriesDataset {
        let values = Matrix::from_fn(t, k, |r, c| (r * 10 + c) as f64);
        SeriesDataset::new(
            values,
            (0..t).map(|i| format!("t{i}")).collect(),
            (0..k).map(|i| format!("f{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn synth_hand_values() {
        let ds = synth_series(200, 0.0, 1).unwrap();
        assert_eq!(ds.values[(0, 0)], 0.0);
        let expected = 2.0 + 3f64.sqrt() / 2.0;
        assert!((ds.values[(8, 0)] - expected).abs() < 1e-12);
        assert!((ds.values[(8, 0)] - 2.8660).abs() < 1e-4);
    }

    #[test]
    fn noiseless_synth_has_period_96() {
        let ds = synth_series(300, 0.0, 4).unwrap();
        for t in 0..(300 - 96) {
            assert!((ds.values[(t, 0)] - ds.values[(t + 96, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn synth_rejects_zero_length() {
        let err = synth_series(0, 0.5, 1).unwrap_err();
        assert!(err.to_string().contains("length must be ≥ 1"));
    }

    #[test]
    fn synth_deterministic() {
        assert_eq!(synth_series(50, 0.5, 3).unwrap(), synth_series(50, 0.5, 3).unwrap());
        assert_ne!(synth_series(50, 0.5, 3).unwrap(), synth_series(50, 0.5, 4).unwrap());
    }

    #[test]
    fn csv_well_formed() {
        let text = "date,a,b\n2020-01-01,1.0,2\n2020-01-02,3,4.5\n2020-01-03,-1,0\n";
        let ds = read_csv(text.as_bytes(), "mem").unwrap();
        assert_eq!((ds.len(), ds.features()), (3, 2));
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        assert_eq!(ds.values[(1, 1)], 4.5);
        assert_eq!(ds.timestamps[2], "2020-01-03");
    }

    #[test]
    fn csv_header_only_is_empty_dataset() {
        let err = read_csv("date,a\n".as_bytes(), "mem").unwrap_err();
        assert!(err.to_string().contains("empty dataset"));
    }

    #[test]
    fn csv_bad_cell_reports_row_and_column() {
        let err = read_csv("date,a,b\nx,1,2\ny,3,oops\n".as_bytes(), "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("column 3"), "{msg}");
    }

    #[test]
    fn csv_ragged_row_rejected() {
        let err = read_csv("date,a,b\nx,1,2\ny,3\n".as_bytes(), "mem").unwrap_err();
        assert!(err.to_string().contains("ragged"));
    }

    #[test]
    fn csv_write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let ds = synth_series(30, 0.5, 2).unwrap();
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn split_lengths_six_two_two() {
        let ds = ramp(10, 1);
        let s = split_and_standardize(&ds, SplitSpec::ett()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert_eq!((s.val.offset, s.test.offset), (6, 8));
    }

    #[test]
    fn train_segment_is_z_scored() {
        let ds = synth_series(500, 0.5, 9).unwrap();
        let s = split_and_standardize(&ds, SplitSpec::standard()).unwrap();
        let col = s.train.values.as_slice();
        let n = col.len() as f64;
        let m = col.iter().sum::<f64>() / n;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        assert!(m.abs() < 1e-9);
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_feature_standardizes_to_zero_with_warning() {
        let values = Matrix::from_fn(10, 2, |r, c| if c == 0 { 5.0 } else { r as f64 });
        let ds = SeriesDataset::new(
            values,
            (0..10).map(|i| i.to_string()).collect(),
            vec!["c".into(), "r".into()],
        )
        .unwrap();
        let s = split_and_standardize(&ds, SplitSpec::ett()).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert!(s.warnings[0].contains("\"c\""));
        for seg in [&s.train, &s.val, &s.test] {
            assert!((0..seg.len()).all(|r| seg.values[(r, 0)] == 0.0));
        }
    }

    #[test]
    fn destandardize_round_trip() {
        let ds = synth_series(100, 0.3, 5).unwrap();
        let s = split_and_standardize(&ds, SplitSpec::standard()).unwrap();
        let back = s.test.destandardize(&s.test.values);
        for r in 0..s.test.len() {
            assert!((back[(r, 0)] - ds.values[(s.test.offset + r, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn window_counting_and_indexing() {
        let ds = ramp(10, 1);
        let w = windowize(&ds, 4, 2);
        assert_eq!(w.len(), 5);
        assert_eq!(w[0].past.as_slice(), &[0.0, 10.0, 20.0, 30.0]);
        assert_eq!(w[0].future.as_slice(), &[40.0, 50.0]);
        assert_eq!(w[0].origin, 3);
        for (s, pair) in w.iter().enumerate() {
            let joined: Vec<f64> = pair
                .past
                .as_slice()
                .iter()
                .chain(pair.future.as_slice())
                .copied()
                .collect();
            assert_eq!(joined, ds.values.slice_rows(s, s + 6).into_vec());
        }
    }

    #[test]
    fn short_segment_yields_no_windows() {
        assert!(windowize(&ramp(5, 1), 4, 2).is_empty());
    }

    #[test]
    fn batch_sizes_keep_final_short_batch() {
        let b = batches(100, 32, None).unwrap();
        let sizes: Vec<usize> = b.iter().map(|x| x.len()).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
        let flat: Vec<usize> = b.into_iter().flatten().collect();
        assert_eq!(flat, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn shuffled_batches_reproducible() {
        let a = batches(50, 8, Some(&mut SeededRng::new(3))).unwrap();
        let b = batches(50, 8, Some(&mut SeededRng::new(3))).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, batches(50, 8, None).unwrap());
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(batches(10, 0, None).is_err());
    }

    #[test]
    fn raw_split_keeps_values() {
        let ds = synth_series(50, 0.3, 2).unwrap();
        let s = split_raw(&ds, SplitSpec::standard()).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 50);
        assert_eq!(s.test.values[(0, 0)], ds.values[(s.test.offset, 0)]);
        assert_eq!(s.val.destandardize(&s.val.values), s.val.values);
    }
}
