//! Per-slot z-score normalization fitted on a training split.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NormalizeError {
    #[error("schema mismatch: expected {expected} slots, found {found}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("cannot fit normalization on an empty training set")]
    EmptyTrain,
}

/// Per-slot mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(train: &[Vec<f64>]) -> Result<Self, NormalizeError> {
        let first = train.first().ok_or(NormalizeError::EmptyTrain)?;
        let d = first.len();
        for v in train {
            check(d, v)?;
        }
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for v in train {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for v in train {
            for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, NormalizeError> {
        check(self.dim(), v)?;
        Ok(v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { 0.0 })
            .collect())
    }

    pub fn apply_all(&self, vs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NormalizeError> {
        vs.iter().map(|v| self.apply(v)).collect()
    }

    /// Inverse of [`apply`](Self::apply). Zero-std slots map back to their mean.
    pub fn invert(&self, z: &[f64]) -> Result<Vec<f64>, NormalizeError> {
        check(self.dim(), z)?;
        Ok(z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| if *s > 0.0 { z * s + m } else { *m })
            .collect())
    }
}

fn check(expected: usize, v: &[f64]) -> Result<(), NormalizeError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(NormalizeError::SchemaMismatch {
            expected,
            found: v.len(),
        })
    }
}

/// Fit on `train` and normalize `apply_to`.
pub fn normalize_features(
    train: &[Vec<f64>],
    apply_to: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, NormStats), NormalizeError> {
    let stats = NormStats::fit(train)?;
    Ok((stats.apply_all(apply_to)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_train() {
        let (out, stats) = normalize_features(&[vec![0.0], vec![2.0]], &[vec![1.0]]).unwrap();
        assert_eq!(out, vec![vec![0.0]]);
        assert_eq!(stats.mean, vec![1.0]);
        assert_eq!(stats.std, vec![1.0]);
    }

    #[test]
    fn constant_slot_is_zero() {
        let train = vec![vec![3.0, 1.0], vec![3.0, 2.0]];
        let (out, _) = normalize_features(&train, &train).unwrap();
        assert!(out.iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn wrong_length_is_schema_mismatch() {
        let err = normalize_features(&[vec![1.0, 2.0]], &[vec![1.0]]).unwrap_err();
        assert_eq!(
            err,
            NormalizeError::SchemaMismatch {
                expected: 2,
                found: 1
            }
        );
        assert_eq!(normalize_features(&[], &[]).unwrap_err(), NormalizeError::EmptyTrain);
    }

    proptest! {
        #[test]
        fn round_trip(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..20)) {
            let stats = NormStats::fit(&rows).unwrap();
            for r in &rows {
                let back = stats.invert(&stats.apply(r).unwrap()).unwrap();
                for ((b, x), s) in back.iter().zip(r).zip(&stats.std) {
                    if *s > 0.0 {
                        prop_assert!((b - x).abs() <= 1e-9 * (1.0 + x.abs()));
                    }
                }
            }
        }
    }
}
