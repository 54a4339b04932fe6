//! Trace preprocessing: per-signal min-max scaling, rolling-window
//! subsequences, chronological train/validation split and mini-batches.
//!
//! One scaler belongs to one message id and is fitted on training records
//! only; everything downstream (validation, test, detection) reuses it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::SignalRecord;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {k} records to build a window, got {n}")]
    TooShort { n: usize, k: usize },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("split fraction must be in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("split leaves the training partition empty")]
    EmptyTrain,
    #[error("batch size must be at least 1")]
    BadBatchSize,
}

/// Observed per-signal extrema of one message id's training records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingParams {
    pub fn signal_count(&self) -> usize {
        self.min.len()
    }
}

/// A rolling window of `k` consecutive scaled signal vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsequence {
    /// k rows of f scaled values each.
    pub rows: Vec<Vec<f64>>,
    /// Index of the window's last record in the source record slice.
    pub end_index: usize,
}

impl Subsequence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.rows.first().map(|r| r.len()).unwrap_or(0)
    }
}

/// Fit per-signal min/max on training records of a single message id.
pub fn fit_scaler(train_records: &[SignalRecord]) -> Result<ScalingParams, DatasetError> {
    let first = train_records.first().ok_or(DatasetError::EmptyInput)?;
    let f = first.values.len();
    let mut min = vec![f64::INFINITY; f];
    let mut max = vec![f64::NEG_INFINITY; f];
    for rec in train_records {
        if rec.values.len() != f {
            return Err(DatasetError::DimensionMismatch {
                expected: f,
                got: rec.values.len(),
            });
        }
        for (i, &v) in rec.values.iter().enumerate() {
            min[i] = min[i].min(v);
            max[i] = max[i].max(v);
        }
    }
    Ok(ScalingParams { min, max })
}

/// Map values into [0, 1] using the fitted extrema.
///
/// Constant signals (min == max) map to 0.0; out-of-range values clamp, so
/// attack spikes at test time stay bounded but still far from normal.
pub fn scale(values: &[f64], params: &ScalingParams) -> Result<Vec<f64>, DatasetError> {
    if values.len() != params.signal_count() {
        return Err(DatasetError::DimensionMismatch {
            expected: params.signal_count(),
            got: values.len(),
        });
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let span = params.max[i] - params.min[i];
            if span == 0.0 {
                0.0
            } else {
                ((v - params.min[i]) / span).clamp(0.0, 1.0)
            }
        })
        .collect())
}

/// Inverse of [`scale`] for non-degenerate signals; constant signals map
/// back to their single observed value.
pub fn unscale(values: &[f64], params: &ScalingParams) -> Result<Vec<f64>, DatasetError> {
    if values.len() != params.signal_count() {
        return Err(DatasetError::DimensionMismatch {
            expected: params.signal_count(),
            got: values.len(),
        });
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &v)| params.min[i] + v * (params.max[i] - params.min[i]))
        .collect())
}

/// Scale every record of one id, preserving order.
pub fn scale_records(
    records: &[SignalRecord],
    params: &ScalingParams,
) -> Result<Vec<Vec<f64>>, DatasetError> {
    records.iter().map(|r| scale(&r.values, params)).collect()
}

/// Rolling windows of size `k`, stride 1: exactly n−k+1 subsequences.
pub fn make_subsequences(
    scaled: &[Vec<f64>],
    k: usize,
) -> Result<Vec<Subsequence>, DatasetError> {
    if k < 1 {
        return Err(DatasetError::TooShort { n: scaled.len(), k });
    }
    let n = scaled.len();
    if n < k {
        return Err(DatasetError::TooShort { n, k });
    }
    Ok((0..=n - k)
        .map(|start| Subsequence {
            rows: scaled[start..start + k].to_vec(),
            end_index: start + k - 1,
        })
        .collect())
}

/// Chronological split: first ⌊fraction·n⌋ subsequences train, the rest
/// validate. No shuffling — overlapping windows would leak otherwise.
pub fn split_train_val(
    subsequences: Vec<Subsequence>,
    fraction: f64,
) -> Result<(Vec<Subsequence>, Vec<Subsequence>), DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::BadFraction(fraction));
    }
    if subsequences.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let n = subsequences.len();
    let cut = (fraction * n as f64).floor() as usize;
    if cut == 0 {
        return Err(DatasetError::EmptyTrain);
    }
    let mut train = subsequences;
    let val = train.split_off(cut);
    Ok((train, val))
}

/// Group consecutive subsequences into batches of at most `batch_size`;
/// the final batch may be short.
pub fn make_batches(
    subsequences: &[Subsequence],
    batch_size: usize,
) -> Result<Vec<&[Subsequence]>, DatasetError> {
    if batch_size < 1 {
        return Err(DatasetError::BadBatchSize);
    }
    Ok(subsequences.chunks(batch_size).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(values: Vec<f64>) -> SignalRecord {
        SignalRecord {
            timestamp: 0.0,
            message_id: 1,
            values,
            label: Some(0),
        }
    }

    #[test]
    fn fit_single_record_min_equals_max() {
        let params = fit_scaler(&[rec(vec![3.5, -1.0])]).unwrap();
        assert_eq!(params.min, vec![3.5, -1.0]);
        assert_eq!(params.max, vec![3.5, -1.0]);
    }

    #[test]
    fn fit_two_records() {
        let params = fit_scaler(&[rec(vec![0.0]), rec(vec![10.0])]).unwrap();
        assert_eq!((params.min[0], params.max[0]), (0.0, 10.0));
    }

    #[test]
    fn fit_empty_errors() {
        assert!(matches!(fit_scaler(&[]), Err(DatasetError::EmptyInput)));
    }

    #[test]
    fn fit_matches_linear_scan_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let records: Vec<SignalRecord> = (0..1000)
            .map(|_| rec((0..3).map(|_| rng.gen_range(-50.0..50.0)).collect()))
            .collect();
        let params = fit_scaler(&records).unwrap();
        for i in 0..3 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for r in &records {
                if r.values[i] < lo {
                    lo = r.values[i];
                }
                if r.values[i] > hi {
                    hi = r.values[i];
                }
            }
            assert_eq!(params.min[i], lo);
            assert_eq!(params.max[i], hi);
        }
    }

    #[test]
    fn scale_midpoint_and_endpoints() {
        let params = ScalingParams { min: vec![0.0], max: vec![10.0] };
        assert_eq!(scale(&[5.0], &params).unwrap(), vec![0.5]);
        assert_eq!(scale(&[0.0], &params).unwrap(), vec![0.0]);
        assert_eq!(scale(&[10.0], &params).unwrap(), vec![1.0]);
    }

    #[test]
    fn scale_constant_signal_maps_to_zero() {
        let params = ScalingParams { min: vec![4.0], max: vec![4.0] };
        assert_eq!(scale(&[4.0], &params).unwrap(), vec![0.0]);
        assert_eq!(scale(&[123.0], &params).unwrap(), vec![0.0]);
    }

    #[test]
    fn scale_clamps_out_of_range() {
        let params = ScalingParams { min: vec![0.0], max: vec![1.0] };
        assert_eq!(scale(&[-5.0], &params).unwrap(), vec![0.0]);
        assert_eq!(scale(&[7.0], &params).unwrap(), vec![1.0]);
    }

    #[test]
    fn scale_dimension_mismatch_errors() {
        let params = ScalingParams { min: vec![0.0], max: vec![1.0] };
        assert!(scale(&[0.1, 0.2], &params).is_err());
    }

    #[test]
    fn scale_unscale_round_trip() {
        let params = ScalingParams { min: vec![-3.0, 2.0], max: vec![5.0, 12.0] };
        for v in [[-3.0, 2.0], [1.0, 7.5], [5.0, 12.0]] {
            let back = unscale(&scale(&v, &params).unwrap(), &params).unwrap();
            for (a, b) in back.iter().zip(&v) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    fn rows(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64]).collect()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_subsequences(&rows(5), 3).unwrap().len(), 3);
        assert_eq!(make_subsequences(&rows(4), 4).unwrap().len(), 1);
        assert_eq!(make_subsequences(&rows(20), 20).unwrap().len(), 1);
    }

    #[test]
    fn window_shorter_than_k_errors() {
        assert!(matches!(
            make_subsequences(&rows(2), 3),
            Err(DatasetError::TooShort { n: 2, k: 3 })
        ));
    }

    #[test]
    fn windows_slide_by_one_and_track_end_index() {
        let subs = make_subsequences(&rows(5), 3).unwrap();
        assert_eq!(subs[0].rows, vec![vec![0.0], vec![1.0], vec![2.0]]);
        assert_eq!(subs[1].rows, vec![vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(subs[0].end_index, 2);
        assert_eq!(subs[2].end_index, 4);
    }

    fn subs(n: usize) -> Vec<Subsequence> {
        make_subsequences(&rows(n + 2), 3).unwrap()
    }

    #[test]
    fn split_85_15() {
        let (train, val) = split_train_val(subs(100), 0.85).unwrap();
        assert_eq!((train.len(), val.len()), (85, 15));
    }

    #[test]
    fn split_half() {
        let (train, val) = split_train_val(subs(20), 0.5).unwrap();
        assert_eq!((train.len(), val.len()), (10, 10));
    }

    #[test]
    fn split_single_subsequence_rejected() {
        assert!(matches!(
            split_train_val(subs(1), 0.85),
            Err(DatasetError::EmptyTrain)
        ));
    }

    #[test]
    fn split_is_chronological() {
        let (train, val) = split_train_val(subs(10), 0.5).unwrap();
        assert_eq!(train.last().unwrap().end_index + 1, val[0].end_index);
    }

    #[test]
    fn batch_counts() {
        let s = subs(256);
        assert_eq!(make_batches(&s, 128).unwrap().len(), 2);
        let s = subs(1);
        let b = make_batches(&s, 128).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 1);
        let s = subs(130);
        let b = make_batches(&s, 128).unwrap();
        assert_eq!(b[0].len(), 128);
        assert_eq!(b[1].len(), 2);
    }

    #[test]
    fn batch_size_zero_rejected() {
        assert!(make_batches(&subs(4), 0).is_err());
    }
}
