use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Field};
use crate::rng::{rng_for, streams};

/// Strictly increasing spatial indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSet {
    pub indices: Vec<usize>,
    /// Seed the set was drawn with; `None` for user-supplied placements.
    pub seed: Option<u64>,
}

impl SensorSet {
    pub fn new(mut indices: Vec<usize>, n: usize, seed: Option<u64>) -> Result<Self, DataError> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(DataError::Sensors("duplicate index".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(DataError::Sensors(format!("index {bad} outside 0..{n}")));
        }
        Ok(Self { indices, seed })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

fn is_constant(field: &Field, col: usize) -> bool {
    let first = field.data.at(0, col);
    (1..field.frames()).all(|r| field.data.at(r, col) == first)
}

/// Uniform sample of `count` locations without replacement. With
/// `drop_constant`, locations whose value never changes are not eligible.
pub fn select_sensors(
    field: &Field,
    count: usize,
    seed: u64,
    drop_constant: bool,
) -> Result<SensorSet, DataError> {
    let n = field.points();
    let eligible: Vec<usize> = (0..n)
        .filter(|&c| !drop_constant || !is_constant(field, c))
        .collect();
    if count > eligible.len() {
        return Err(DataError::TooManySensors {
            requested: count,
            available: eligible.len(),
        });
    }
    let mut rng = rng_for(seed, streams::SENSORS);
    let picked = rand::seq::index::sample(&mut rng, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    SensorSet::new(picked, n, Some(seed))
}

/// One 0-based index per line; blank lines and `#` comments are skipped.
pub fn read_sensor_csv(path: impl AsRef<Path>, n: usize) -> Result<SensorSet, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut indices = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let idx = line.parse::<usize>().map_err(|_| {
            DataError::Sensors(format!(
                "{}:{}: not an index: {line:?}",
                path.display(),
                line_no + 1
            ))
        })?;
        indices.push(idx);
    }
    SensorSet::new(indices, n, None)
}

pub fn write_sensor_csv(sensors: &SensorSet, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let text: String = sensors.indices.iter().map(|i| format!("{i}\n")).collect();
    fs::write(path, text).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn field_with_constant_columns(t: usize, n: usize, constant: &[usize]) -> Field {
        let mut data = Tensor::zeros(&[t, n]);
        for r in 0..t {
            for c in 0..n {
                let v = if constant.contains(&c) {
                    0.5
                } else {
                    (r * n + c) as f64
                };
                data.set(r, c, v);
            }
        }
        Field::new(data, None, 1.0).unwrap()
    }

    #[test]
    fn exhaustive_and_deterministic() {
        let f = field_with_constant_columns(4, 30, &[]);
        let all = select_sensors(&f, 30, 9, false).unwrap();
        assert_eq!(all.indices, (0..30).collect::<Vec<_>>());
        assert_eq!(
            select_sensors(&f, 7, 9, false).unwrap(),
            select_sensors(&f, 7, 9, false).unwrap()
        );
        assert_ne!(
            select_sensors(&f, 7, 9, false).unwrap(),
            select_sensors(&f, 7, 10, false).unwrap()
        );
    }

    #[test]
    fn filtering_keeps_exactly_the_varying_columns() {
        let constant: Vec<usize> = (0..40).step_by(4).collect();
        let f = field_with_constant_columns(5, 40, &constant);
        let s = select_sensors(&f, 30, 1, true).unwrap();
        let expected: Vec<usize> = (0..40).filter(|c| !constant.contains(c)).collect();
        assert_eq!(s.indices, expected);
        assert!(matches!(
            select_sensors(&f, 31, 1, true),
            Err(DataError::TooManySensors {
                requested: 31,
                available: 30
            })
        ));
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = SensorSet::new(vec![5, 1, 9], 10, None).unwrap();
        assert_eq!(s.indices, vec![1, 5, 9]);
        write_sensor_csv(&s, &path).unwrap();
        assert_eq!(read_sensor_csv(&path, 10).unwrap(), s);
        assert!(read_sensor_csv(&path, 9).is_err());
        fs::write(&path, "1\n1\n").unwrap();
        assert!(read_sensor_csv(&path, 10).is_err());
        fs::write(&path, "# header\n\n3\nx\n").unwrap();
        assert!(read_sensor_csv(&path, 10)
            .unwrap_err()
            .to_string()
            .contains(":4:"));
    }
}
