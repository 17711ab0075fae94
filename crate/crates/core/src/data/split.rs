use chrono::NaiveDateTime;

use super::{DataError, RawDataset};
use crate::numerics::Tensor;

/// Half-open range of time slices `start .. start + len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRange {
    pub start: usize,
    pub len: usize,
}

impl SplitRange {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Splits {
    pub train: SplitRange,
    pub val: SplitRange,
    pub test: SplitRange,
}

/// Contiguous 60/20/20 split by time; the test split takes the remainder.
pub fn chronological_split(total: usize) -> Result<Splits, DataError> {
    if total < 24 {
        return Err(DataError::TooShort {
            what: "dataset",
            len: total,
            needed: 24,
        });
    }
    let train = total * 6 / 10;
    let val = total * 2 / 10;
    Ok(Splits {
        train: SplitRange { start: 0, len: train },
        val: SplitRange { start: train, len: val },
        test: SplitRange {
            start: train + val,
            len: total - train - val,
        },
    })
}

/// History start index of every window lying wholly inside `split`.
pub fn window_starts(split: SplitRange, history: usize, horizon: usize, stride: usize) -> Result<Vec<usize>, DataError> {
    let span = history + horizon;
    if split.len < span {
        return Err(DataError::TooShort {
            what: "split",
            len: split.len,
            needed: span,
        });
    }
    Ok((split.start..=split.end() - span).step_by(stride.max(1)).collect())
}

/// One history/future pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBatch {
    /// First slice of the history.
    pub start: usize,
    /// `[H, N]`
    pub history: Tensor<f64>,
    /// `[F, N]`
    pub future: Tensor<f64>,
    /// Time of the last history slice.
    pub last_timestamp: NaiveDateTime,
}

impl RawDataset {
    pub fn window(&self, start: usize, history: usize, horizon: usize) -> ForecastBatch {
        ForecastBatch {
            start,
            history: self.slice_rows(start, history),
            future: self.slice_rows(start + history, horizon),
            last_timestamp: self.timestamp(start + history - 1),
        }
    }
}

/// Lazily materialised windows over `split`.
pub fn windows(ds: &RawDataset, split: SplitRange, history: usize, horizon: usize, stride: usize) -> Result<impl Iterator<Item = ForecastBatch> + '_, DataError> {
    Ok(window_starts(split, history, horizon, stride)?
        .into_iter()
        .map(move |s| ds.window(s, history, horizon)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::GeoPoint;
    use proptest::prelude::*;

    #[test]
    fn split_lengths() {
        let s = chronological_split(100).unwrap();
        assert_eq!((s.train.len, s.val.len, s.test.len), (60, 20, 20));
        let s = chronological_split(35040).unwrap();
        assert_eq!((s.train.len, s.val.len, s.test.len), (21024, 7008, 7008));
        assert_eq!(s.val.start, 21024);
        assert!(chronological_split(23).is_err());
    }

    #[test]
    fn window_counts() {
        let r = |len| SplitRange { start: 0, len };
        assert_eq!(window_starts(r(24), 12, 12, 1).unwrap().len(), 1);
        assert_eq!(window_starts(r(30), 12, 12, 1).unwrap().len(), 7);
        assert!(window_starts(r(23), 12, 12, 1).is_err());
    }

    #[test]
    fn future_follows_history() {
        let t = 40;
        let values = Tensor::new(vec![t, 2], (0..2 * t).map(|i| (i / 2) as f64).collect()).unwrap();
        let pts = vec![GeoPoint::new(0, 0.0, 0.0), GeoPoint::new(1, 1.0, 1.0)];
        let start = NaiveDateTime::parse_from_str("2020-03-02T00:00:00", "%Y-%m-%dT%H:%M:%S").unwrap();
        let ds = RawDataset::new(values, pts, start, 5).unwrap();
        let w: Vec<_> = windows(&ds, SplitRange { start: 0, len: 30 }, 12, 12, 1).unwrap().collect();
        assert_eq!(w.len(), 7);
        assert_eq!(w[0].future.get(&[0, 0]), 12.0);
        assert_eq!(w[0].history.get(&[11, 1]), 11.0);
        assert_eq!(w[0].last_timestamp, ds.timestamp(11));
    }

    proptest! {
        #[test]
        fn windows_never_cross_splits(total in 24usize..2000, h in 1usize..13, f in 1usize..13) {
            let s = chronological_split(total).unwrap();
            for r in [s.train, s.val, s.test] {
                if let Ok(starts) = window_starts(r, h, f, 1) {
                    prop_assert_eq!(starts.len(), r.len - h - f + 1);
                    for st in starts {
                        prop_assert!(st >= r.start && st + h + f <= r.end());
                    }
                }
            }
            prop_assert_eq!(s.train.len + s.val.len + s.test.len, total);
        }
    }
}
