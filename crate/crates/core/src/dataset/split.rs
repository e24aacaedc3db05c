//! Seeded train / calibration / test partitioning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ClassLabel, Dataset, DatasetError};
use crate::seed::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            calibration: 0.2,
            test: 0.2,
            stratified: true,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, f) in [
            ("train", self.train),
            ("calibration", self.calibration),
            ("test", self.test),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(DatasetError::InvalidSplit(format!(
                    "{name} fraction {f} is outside (0, 1)"
                )));
            }
        }
        let sum = self.train + self.calibration + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidSplit(format!(
                "fractions sum to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

/// Indices into the source dataset. The three sets are disjoint and cover it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Panics if any index is shared between parts.
    pub fn assert_disjoint(&self, n: usize) {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.calibration).chain(&self.test) {
            assert!(!seen[i], "sample {i} appears in more than one split part");
            seen[i] = true;
        }
    }
}

fn cut(
    mut group: Vec<usize>,
    spec: &SplitSpec,
    seed: u64,
    out: &mut SplitIndices,
) -> Result<(), DatasetError> {
    let n = group.len();
    if n < 3 {
        return Err(DatasetError::InsufficientData(format!(
            "{n} samples cannot fill train, calibration and test"
        )));
    }
    group.shuffle(&mut rng(seed));
    let n_cal = ((spec.calibration * n as f64).round() as usize).max(1);
    let n_test = ((spec.test * n as f64).round() as usize).max(1);
    if n_cal + n_test >= n {
        return Err(DatasetError::InsufficientData(format!(
            "{n} samples leave no training data"
        )));
    }
    let (cal, rest) = group.split_at(n_cal);
    let (test, train) = rest.split_at(n_test);
    out.calibration.extend_from_slice(cal);
    out.test.extend_from_slice(test);
    out.train.extend_from_slice(train);
    Ok(())
}

/// Partition sample indices. Samples are ordered by `design_id` before
/// shuffling, so the result does not depend on dataset order.
pub fn split_indices(d: &Dataset, spec: &SplitSpec) -> Result<SplitIndices, DatasetError> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d.samples()[a].design_id.cmp(&d.samples()[b].design_id));
    let mut out = SplitIndices {
        train: Vec::new(),
        calibration: Vec::new(),
        test: Vec::new(),
    };
    if spec.stratified {
        for class in ClassLabel::ALL {
            let group: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| d.samples()[i].label == class)
                .collect();
            cut(group, spec, crate::seed::derive_seed(spec.seed, class.as_str()), &mut out)
                .map_err(|e| DatasetError::InsufficientData(format!("class {class}: {e}")))?;
        }
    } else {
        cut(order, spec, spec.seed, &mut out)?;
    }
    Ok(out)
}

pub fn stratified_split(
    d: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Dataset, Dataset), DatasetError> {
    let s = split_indices(d, spec)?;
    Ok((d.subset(&s.train), d.subset(&s.calibration), d.subset(&s.test)))
}
