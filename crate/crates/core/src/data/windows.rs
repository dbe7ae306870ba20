use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{DataError, Field, SensorSet};
use crate::diff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Fractions of windows assigned to each contiguous block, in time order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), DataError> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(*p >= 0.0))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
            || self.train == 0.0
        {
            return Err(DataError::Parameter(format!(
                "invalid split fractions {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Window index ranges of the three blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn new(count: usize, f: SplitFractions) -> Result<Self, DataError> {
        f.validate()?;
        let a = (count as f64 * f.train).floor() as usize;
        let b = ((count as f64 * (f.train + f.validation)).floor() as usize).clamp(a, count);
        Ok(Self {
            train: 0..a,
            validation: a..b,
            test: b..count,
        })
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Validation => self.validation.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

/// Lag windows over a field: window `b` reads the sensor rows of frames
/// `[b, b+L)` and targets frame `b+L−1`, for `b` in `0..T−L`.
///
/// Windows are materialized on demand from the stored sensor series, so
/// window `b+1` is window `b` shifted by one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    /// `T×S` sensor readings.
    pub sensor_series: Tensor,
    /// `T×N` full frames.
    pub frames: Tensor,
    pub sensors: SensorSet,
    pub lag: usize,
    pub splits: Splits,
}

impl WindowedDataset {
    pub fn new(
        field: &Field,
        sensors: &SensorSet,
        lag: usize,
        fractions: SplitFractions,
    ) -> Result<Self, DataError> {
        let t = field.frames();
        if lag == 0 || t <= lag {
            return Err(DataError::LagTooLong { frames: t, lag });
        }
        if sensors.is_empty() {
            return Err(DataError::Sensors("no sensors".into()));
        }
        if let Some(&bad) = sensors.indices.iter().find(|&&i| i >= field.points()) {
            return Err(DataError::Sensors(format!(
                "index {bad} outside 0..{}",
                field.points()
            )));
        }
        let s = sensors.len();
        let mut series = Vec::with_capacity(t * s);
        for r in 0..t {
            let row = field.data.row(r);
            series.extend(sensors.indices.iter().map(|&i| row[i]));
        }
        Ok(Self {
            sensor_series: Tensor::matrix(t, s, series),
            frames: field.data.clone(),
            sensors: sensors.clone(),
            lag,
            splits: Splits::new(t - lag, fractions)?,
        })
    }

    /// Number of windows, `T − L`.
    pub fn len(&self) -> usize {
        self.frames.rows() - self.lag
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sensor_count(&self) -> usize {
        self.sensor_series.cols()
    }

    pub fn points(&self) -> usize {
        self.frames.cols()
    }

    /// Frame index targeted by window `b`.
    pub fn target_frame(&self, b: usize) -> usize {
        b + self.lag - 1
    }

    /// `L×S` readings of window `b`.
    pub fn window(&self, b: usize) -> Tensor {
        let s = self.sensor_count();
        Tensor::matrix(
            self.lag,
            s,
            self.sensor_series.data()[b * s..(b + self.lag) * s].to_vec(),
        )
    }

    /// Windows stacked time-major: row `l·B + j` holds step `l` of
    /// `starts[j]`, the layout the encoder consumes.
    pub fn batch_inputs(&self, starts: &[usize]) -> Tensor {
        let s = self.sensor_count();
        let mut data = Vec::with_capacity(self.lag * starts.len() * s);
        for l in 0..self.lag {
            for &b in starts {
                data.extend_from_slice(self.sensor_series.row(b + l));
            }
        }
        Tensor::matrix(self.lag * starts.len(), s, data)
    }

    /// `B×N` target frames of the given windows.
    pub fn batch_targets(&self, starts: &[usize]) -> Tensor {
        let n = self.points();
        let mut data = Vec::with_capacity(starts.len() * n);
        for &b in starts {
            data.extend_from_slice(self.frames.row(self.target_frame(b)));
        }
        Tensor::matrix(starts.len(), n, data)
    }

    /// Window starts `b` in `split` such that `b..b+chain` all lie in the
    /// split, optionally followed by a repeat of the last `duplicate_tail`
    /// fraction of them.
    pub fn chain_starts(&self, split: Split, chain: usize, duplicate_tail: f64) -> Vec<usize> {
        let r = self.splits.range(split);
        let span = chain.max(1) - 1;
        let mut starts: Vec<usize> = if r.end > r.start + span {
            (r.start..r.end - span).collect()
        } else {
            Vec::new()
        };
        if duplicate_tail > 0.0 {
            let extra = ((starts.len() as f64) * duplicate_tail.min(1.0)).round() as usize;
            let tail = starts[starts.len() - extra..].to_vec();
            starts.extend(tail);
        }
        starts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_field(t: usize, n: usize) -> Field {
        Field::new(
            Tensor::matrix(t, n, (0..t * n).map(|i| i as f64).collect()),
            None,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn window_count_and_alignment() {
        let f = ramp_field(100, 6);
        let s = SensorSet::new(vec![1, 4], 6, None).unwrap();
        let ds = WindowedDataset::new(&f, &s, 52, SplitFractions::default()).unwrap();
        assert_eq!(ds.len(), 48);
        for b in [0, 17, 47] {
            let w = ds.window(b);
            for l in 0..52 {
                assert_eq!(w.at(l, 0), f.data.at(b + l, 1));
                assert_eq!(w.at(l, 1), f.data.at(b + l, 4));
            }
            assert_eq!(ds.batch_targets(&[b]).data(), f.data.row(b + 51));
        }
        assert!(matches!(
            WindowedDataset::new(&f, &s, 100, SplitFractions::default()),
            Err(DataError::LagTooLong { .. })
        ));
    }

    #[test]
    fn adjacent_windows_shift_by_one_frame() {
        let f = ramp_field(30, 4);
        let s = SensorSet::new(vec![0, 2, 3], 4, None).unwrap();
        let ds = WindowedDataset::new(&f, &s, 5, SplitFractions::default()).unwrap();
        for b in 0..ds.len() - 1 {
            let (a, c) = (ds.window(b), ds.window(b + 1));
            assert_eq!(&a.data()[3..], &c.data()[..c.numel() - 3]);
        }
    }

    #[test]
    fn overlapping_windows_rebuild_the_series() {
        let f = ramp_field(40, 3);
        let s = SensorSet::new(vec![0, 1, 2], 3, None).unwrap();
        let ds = WindowedDataset::new(&f, &s, 7, SplitFractions::default()).unwrap();
        let mut rebuilt = vec![f64::NAN; 40 * 3];
        for b in 0..ds.len() {
            let w = ds.window(b);
            for l in 0..7 {
                for c in 0..3 {
                    let slot = &mut rebuilt[(b + l) * 3 + c];
                    assert!(slot.is_nan() || *slot == w.at(l, c));
                    *slot = w.at(l, c);
                }
            }
        }
        // every frame but the last is covered
        assert_eq!(&rebuilt[..39 * 3], &f.data.data()[..39 * 3]);
        let targets: Vec<usize> = (0..ds.len()).map(|b| ds.target_frame(b)).collect();
        assert_eq!(targets, (6..39).collect::<Vec<_>>());
    }

    #[test]
    fn batch_layout_is_time_major() {
        let f = ramp_field(10, 2);
        let s = SensorSet::new(vec![1], 2, None).unwrap();
        let ds = WindowedDataset::new(&f, &s, 3, SplitFractions::default()).unwrap();
        let x = ds.batch_inputs(&[0, 4]);
        assert_eq!(x.data(), &[1.0, 9.0, 3.0, 11.0, 5.0, 13.0]);
    }

    #[test]
    fn contiguous_splits() {
        let sp = Splits::new(100, SplitFractions::default()).unwrap();
        assert_eq!((sp.train, sp.validation, sp.test), (0..70, 70..80, 80..100));
        let bad = SplitFractions {
            train: 0.5,
            validation: 0.1,
            test: 0.1,
        };
        assert!(Splits::new(10, bad).is_err());
    }

    #[test]
    fn chain_starts_stay_inside_the_split() {
        let f = ramp_field(110, 2);
        let s = SensorSet::new(vec![0], 2, None).unwrap();
        let ds = WindowedDataset::new(&f, &s, 10, SplitFractions::default()).unwrap();
        let starts = ds.chain_starts(Split::Train, 2, 0.0);
        assert_eq!(starts, (0..69).collect::<Vec<_>>());
        let dup = ds.chain_starts(Split::Train, 2, 0.1);
        assert_eq!(dup.len(), 69 + 7);
        assert_eq!(&dup[69..], &starts[62..]);
        assert_eq!(
            ds.chain_starts(Split::Validation, 4, 0.0),
            (70..77).collect::<Vec<_>>()
        );
    }
}
