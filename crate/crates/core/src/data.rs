//! CSV ingestion with benchmark split conventions, forecasting windows,
//! metrics, and the built-in synthetic datasets used by the self tests.

use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at row {row}, column {col}: {msg}")]
    ParseError { row: usize, col: usize, msg: String },
    #[error("dataset too short: {rows} rows < lookback {lookback} + horizon {horizon}")]
    TooShort { rows: usize, lookback: usize, horizon: usize },
    #[error("split sizes {0} exceed {1} rows")]
    BadSplit(usize, usize),
    #[error("empty dataset")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// 7:1:2 by rows.
    Ratio,
    /// ETT-hourly absolute sizes (8545, 2881, 2881).
    Ett,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// In-memory dataset: row-major (rows x channels) values plus the split
/// row counts.
#[derive(Debug, Clone)]
pub struct DatasetFrame {
    pub name: String,
    pub values: Vec<f64>,
    pub rows: usize,
    pub channels: usize,
    pub timestamps: Option<Vec<String>>,
    pub split_sizes: (usize, usize, usize),
}

impl DatasetFrame {
    pub fn new(
        name: &str,
        values: Vec<f64>,
        rows: usize,
        channels: usize,
        split: SplitKind,
    ) -> Result<Self, DataError> {
        assert_eq!(values.len(), rows * channels);
        if rows == 0 || channels == 0 {
            return Err(DataError::Empty);
        }
        let split_sizes = split_rows(rows, split)?;
        Ok(DatasetFrame {
            name: name.to_string(),
            values,
            rows,
            channels,
            timestamps: None,
            split_sizes,
        })
    }

    pub fn value(&self, row: usize, chan: usize) -> f64 {
        self.values[row * self.channels + chan]
    }

    /// Row range (start, len) of a split; validation follows train,
    /// test follows validation.
    pub fn split_range(&self, split: Split) -> (usize, usize) {
        let (tr, va, te) = self.split_sizes;
        match split {
            Split::Train => (0, tr),
            Split::Val => (tr, va),
            Split::Test => (tr + va, te),
        }
    }
}

fn split_rows(rows: usize, kind: SplitKind) -> Result<(usize, usize, usize), DataError> {
    match kind {
        SplitKind::Ratio => {
            let train = rows * 7 / 10;
            let test = rows * 2 / 10;
            let val = rows - train - test;
            Ok((train, val, test))
        }
        SplitKind::Ett => {
            let (train, val, test) = (8545, 2881, 2881);
            if train + val + test > rows {
                return Err(DataError::BadSplit(train + val + test, rows));
            }
            Ok((train, val, test))
        }
    }
}

/// Load a header-prefixed CSV; a leading timestamp column is auto-detected
/// when its first data cell does not parse as a float.
pub fn load_csv(path: &Path, split: SplitKind) -> Result<DatasetFrame, DataError> {
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Empty)?;
    let n_cols = header.split(',').count();
    if n_cols == 0 {
        return Err(DataError::Empty);
    }
    let mut values = Vec::new();
    let mut timestamps = Vec::new();
    let mut skip_first: Option<bool> = None;
    let mut rows = 0;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_cols {
            return Err(DataError::ParseError {
                row: line_no + 1,
                col: cells.len(),
                msg: format!("expected {n_cols} cells, found {}", cells.len()),
            });
        }
        let skip = *skip_first
            .get_or_insert_with(|| cells[0].trim().parse::<f64>().is_err());
        if skip {
            timestamps.push(cells[0].trim().to_string());
        }
        let start = usize::from(skip);
        for (c, cell) in cells.iter().enumerate().skip(start) {
            let v: f64 = cell.trim().parse().map_err(|_| DataError::ParseError {
                row: line_no + 1,
                col: c + 1,
                msg: format!("non-numeric cell {:?}", cell.trim()),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::Empty);
    }
    let skip = skip_first.unwrap_or(false);
    let channels = n_cols - usize::from(skip);
    if channels == 0 {
        return Err(DataError::Empty);
    }
    let mut frame = DatasetFrame::new(&name, values, rows, channels, split)?;
    if skip {
        frame.timestamps = Some(timestamps);
    }
    Ok(frame)
}

/// Stride-1 forecasting windows of a split: `count = split_rows - L - H + 1`
/// for every split. Train windows live entirely inside the split (the first
/// input starts at row 0); validation and test windows anchor their targets
/// at the split start and reach back into the preceding split for lookback.
pub fn windows(
    frame: &DatasetFrame,
    lookback: usize,
    horizon: usize,
    split: Split,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, DataError> {
    assert!(horizon > 0, "horizon must be positive");
    assert!(lookback > 0, "lookback must be positive");
    let (start, len) = frame.split_range(split);
    if len < lookback + horizon {
        return Err(DataError::TooShort { rows: len, lookback, horizon });
    }
    let count = len - lookback - horizon + 1;
    let d = frame.channels;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let target_start = match split {
            Split::Train => start + i + lookback,
            Split::Val | Split::Test => start + i,
        };
        let input_start = target_start - lookback;
        let input = frame.values[input_start * d..target_start * d].to_vec();
        let target = frame.values[target_start * d..(target_start + horizon) * d].to_vec();
        out.push((input, target));
    }
    Ok(out)
}

/// Element means of squared and absolute errors.
pub fn metrics(pred: &[f64], target: &[f64]) -> (f64, f64) {
    assert_eq!(pred.len(), target.len(), "metric shape mismatch");
    assert!(!pred.is_empty());
    let mut mse = 0.0;
    let mut mae = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        mse += d * d;
        mae += d.abs();
    }
    let n = pred.len() as f64;
    (mse / n, mae / n)
}

fn gaussian(rng: &mut StdRng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Multichannel sine mixture with per-channel periods and phases; the CI
/// stand-in for a smooth forecastable series.
pub fn gen_sine(rows: usize, channels: usize, seed: u64) -> DatasetFrame {
    let mut rng = StdRng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..channels)
        .map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI))
        .collect();
    let periods: Vec<f64> = (0..channels).map(|d| 24.0 + 8.0 * d as f64).collect();
    let mut values = Vec::with_capacity(rows * channels);
    for t in 0..rows {
        for d in 0..channels {
            let w = 2.0 * std::f64::consts::PI / periods[d];
            values.push((w * t as f64 + phases[d]).sin());
        }
    }
    DatasetFrame::new("sine", values, rows, channels, SplitKind::Ratio).unwrap()
}

/// Stationary ARMA(2,1) channels driven by seeded Gaussian noise.
pub fn gen_arma(rows: usize, channels: usize, seed: u64) -> DatasetFrame {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut values = vec![0.0; rows * channels];
    for d in 0..channels {
        let mut x1 = 0.0;
        let mut x2 = 0.0;
        let mut e1 = 0.0;
        for t in 0..rows {
            let e = 0.5 * gaussian(&mut rng);
            let x = 0.75 * x1 - 0.25 * x2 + e + 0.3 * e1;
            values[t * channels + d] = x;
            x2 = x1;
            x1 = x;
            e1 = e;
        }
    }
    DatasetFrame::new("arma", values, rows, channels, SplitKind::Ratio).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!(
            "timessm-data-{}-{}.csv",
            std::process::id(),
            content.len()
        ));
        std::fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn ratio_split_ten_rows() {
        let frame = DatasetFrame::new("t", vec![0.0; 20], 10, 2, SplitKind::Ratio).unwrap();
        assert_eq!(frame.split_sizes, (7, 1, 2));
    }

    #[test]
    fn timestamp_column_skipped() {
        let path = write_temp("date,a,b\n2020-01-01,1.0,2.0\n2020-01-02,3.0,4.0\n");
        let frame = load_csv(&path, SplitKind::Ratio).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(frame.channels, 2);
        assert_eq!(frame.rows, 2);
        assert_eq!(frame.value(1, 0), 3.0);
        assert_eq!(frame.timestamps.as_ref().unwrap()[0], "2020-01-01");
    }

    #[test]
    fn numeric_first_column_kept() {
        let path = write_temp("a,b\n1.0,2.0\n3.0,4.0\n");
        let frame = load_csv(&path, SplitKind::Ratio).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(frame.channels, 2);
        assert!(frame.timestamps.is_none());
    }

    #[test]
    fn bad_cell_reports_row_and_col() {
        let path = write_temp("a,b\n1.0,2.0\n3.0,oops\n");
        let err = load_csv(&path, SplitKind::Ratio).unwrap_err();
        std::fs::remove_file(&path).ok();
        match err {
            DataError::ParseError { row, col, .. } => {
                assert_eq!(row, 3);
                assert_eq!(col, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ett_split_applies_absolute_sizes() {
        let rows = 8545 + 2881 + 2881 + 100;
        let frame =
            DatasetFrame::new("ett", vec![0.0; rows], rows, 1, SplitKind::Ett).unwrap();
        assert_eq!(frame.split_sizes, (8545, 2881, 2881));
    }

    #[test]
    fn ett_split_rejects_short_data() {
        assert!(matches!(
            DatasetFrame::new("ett", vec![0.0; 100], 100, 1, SplitKind::Ett),
            Err(DataError::BadSplit(_, _))
        ));
    }

    #[test]
    fn window_count_formula() {
        // 200 rows in one split, L=96, H=96 -> 9 windows
        let mut frame =
            DatasetFrame::new("t", vec![0.0; 200], 200, 1, SplitKind::Ratio).unwrap();
        frame.split_sizes = (200, 0, 0);
        let w = windows(&frame, 96, 96, Split::Train).unwrap();
        assert_eq!(w.len(), 9);
    }

    #[test]
    fn first_train_window_starts_at_row_zero() {
        let values: Vec<f64> = (0..100).map(|v| v as f64).collect();
        let frame = DatasetFrame::new("t", values, 100, 1, SplitKind::Ratio).unwrap();
        let w = windows(&frame, 8, 4, Split::Train).unwrap();
        assert_eq!(w[0].0[0], 0.0);
        assert_eq!(w[0].1[0], 8.0);
    }

    #[test]
    fn val_windows_reach_back_for_lookback() {
        let values: Vec<f64> = (0..100).map(|v| v as f64).collect();
        let frame = DatasetFrame::new("t", values, 100, 1, SplitKind::Ratio).unwrap();
        let (val_start, val_len) = frame.split_range(Split::Val);
        let w = windows(&frame, 4, 2, Split::Val).unwrap();
        assert_eq!(w.len(), val_len - 4 - 2 + 1);
        // first target sits at the split boundary, lookback behind it
        assert_eq!(w[0].1[0], val_start as f64);
        assert_eq!(w[0].0[0], (val_start - 4) as f64);
    }

    #[test]
    fn too_short_split_rejected() {
        let frame = DatasetFrame::new("t", vec![0.0; 50], 50, 1, SplitKind::Ratio).unwrap();
        assert!(matches!(
            windows(&frame, 96, 96, Split::Train),
            Err(DataError::TooShort { .. })
        ));
    }

    #[test]
    fn metrics_trivial_cases() {
        let t = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(metrics(&t, &t), (0.0, 0.0));
        let p: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        assert_eq!(metrics(&p, &t), (1.0, 1.0));
        let alt: Vec<f64> = t
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert_eq!(metrics(&alt, &t), (1.0, 1.0));
    }

    #[test]
    fn metrics_match_brute_force() {
        let mut rng = StdRng::seed_from_u64(51);
        let p: Vec<f64> = (0..200).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..200).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (mse, mae) = metrics(&p, &t);
        let mut ref_mse = 0.0;
        let mut ref_mae = 0.0;
        for i in 0..p.len() {
            ref_mse += (p[i] - t[i]).powi(2);
            ref_mae += (p[i] - t[i]).abs();
        }
        ref_mse /= p.len() as f64;
        ref_mae /= p.len() as f64;
        assert!((mse - ref_mse).abs() < 1e-12);
        assert!((mae - ref_mae).abs() < 1e-12);
    }

    #[test]
    fn synthetic_generators_deterministic() {
        let a = gen_sine(50, 3, 7);
        let b = gen_sine(50, 3, 7);
        assert_eq!(a.values, b.values);
        let c = gen_arma(50, 2, 7);
        let d = gen_arma(50, 2, 7);
        assert_eq!(c.values, d.values);
        assert!(c.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn split_determinism() {
        let path = write_temp("a\n1.0\n2.0\n3.0\n4.0\n5.0\n6.0\n7.0\n8.0\n9.0\n10.0\n");
        let f1 = load_csv(&path, SplitKind::Ratio).unwrap();
        let f2 = load_csv(&path, SplitKind::Ratio).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(f1.values, f2.values);
        assert_eq!(f1.split_sizes, f2.split_sizes);
    }
}
