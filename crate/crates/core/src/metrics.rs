//! Probabilistic forecast metrics for P(TI): Brier score and skill, Murphy
//! decomposition, calibration curve, ROC-AUC and the radar summary.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

use crate::dataset::ClassLabel;

/// Normalizing constant for the radar axes: the Brier score of a constant
/// 0.5 forecast.
pub const NO_SKILL_BRIER: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no forecasts")]
    EmptyInput,
    #[error("ROC-AUC needs at least one positive and one negative outcome")]
    OneClassOnly,
    #[error("length mismatch: {0} probabilities, {1} outcomes")]
    LengthMismatch(usize, usize),
    #[error("invalid forecast: {0}")]
    Invalid(String),
}

/// Predicted probabilities of the positive class with 0/1 outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbForecast {
    p: Vec<f64>,
    o: Vec<bool>,
}

impl ProbForecast {
    pub fn new(p: Vec<f64>, o: Vec<bool>) -> Result<Self, MetricsError> {
        if p.len() != o.len() {
            return Err(MetricsError::LengthMismatch(p.len(), o.len()));
        }
        if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(MetricsError::Invalid(format!("probability {x} outside [0, 1]")));
        }
        Ok(Self { p, o })
    }

    /// Forecasts of P(TI) against true labels.
    pub fn from_labels(p: Vec<f64>, truths: &[ClassLabel]) -> Result<Self, MetricsError> {
        Self::new(p, truths.iter().map(|t| *t == ClassLabel::TI).collect())
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn outcomes(&self) -> &[bool] {
        &self.o
    }

    fn nonempty(&self) -> Result<(), MetricsError> {
        if self.p.is_empty() {
            Err(MetricsError::EmptyInput)
        } else {
            Ok(())
        }
    }

    fn base_rate(&self) -> f64 {
        self.o.iter().filter(|o| **o).count() as f64 / self.len() as f64
    }
}

fn outcome(o: bool) -> f64 {
    if o {
        1.0
    } else {
        0.0
    }
}

pub fn brier_score(f: &ProbForecast) -> Result<f64, MetricsError> {
    f.nonempty()?;
    let sum: f64 = f
        .p
        .iter()
        .zip(&f.o)
        .map(|(p, o)| (p - outcome(*o)).powi(2))
        .sum();
    Ok(sum / f.len() as f64)
}

/// 1 − BS / (ō(1 − ō)); `None` when all outcomes are one class.
pub fn brier_skill_score(f: &ProbForecast) -> Result<Option<f64>, MetricsError> {
    let bs = brier_score(f)?;
    let o = f.base_rate();
    let reference = o * (1.0 - o);
    Ok((reference > 0.0).then(|| 1.0 - bs / reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrierDecomposition {
    pub reliability: f64,
    pub resolution: f64,
    pub uncertainty: f64,
    pub refinement_loss: f64,
}

/// Murphy decomposition with one group per distinct forecast value, so that
/// BS = reliability − resolution + uncertainty holds exactly.
pub fn brier_decomposition(f: &ProbForecast) -> Result<BrierDecomposition, MetricsError> {
    f.nonempty()?;
    let n = f.len() as f64;
    let o_bar = f.base_rate();
    let mut groups: BTreeMap<u64, (f64, usize, usize)> = BTreeMap::new();
    for (p, o) in f.p.iter().zip(&f.o) {
        // +0.0 and -0.0 are the same forecast.
        let key = (p + 0.0).to_bits();
        let g = groups.entry(key).or_insert((*p, 0, 0));
        g.1 += 1;
        g.2 += usize::from(*o);
    }
    let (mut rel, mut res) = (0.0, 0.0);
    for (p, count, pos) in groups.into_values() {
        let w = count as f64 / n;
        let ok = pos as f64 / count as f64;
        rel += w * (p - ok).powi(2);
        res += w * (ok - o_bar).powi(2);
    }
    let unc = o_bar * (1.0 - o_bar);
    // Round-off can push resolution a few ulps past uncertainty.
    let res = res.min(unc);
    Ok(BrierDecomposition {
        reliability: rel,
        resolution: res,
        uncertainty: unc,
        refinement_loss: unc - res,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_pred: Option<f64>,
    /// `None` for an empty bin.
    pub obs_freq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationCurve {
    /// Sharpness histogram: forecast count per bin.
    pub fn histogram(&self) -> Vec<usize> {
        self.bins.iter().map(|b| b.count).collect()
    }

    /// CSV with columns bin_low, bin_high, count, mean_pred, obs_freq; empty
    /// bins leave the last two cells blank.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_low,bin_high,count,mean_pred,obs_freq")?;
        let cell = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
        for b in &self.bins {
            writeln!(
                w,
                "{:?},{:?},{},{},{}",
                b.low,
                b.high,
                b.count,
                cell(b.mean_pred),
                cell(b.obs_freq)
            )?;
        }
        Ok(())
    }
}

/// `bins` equal-width bins on [0, 1]; each bin is [low, high) except the
/// last, which is closed.
pub fn calibration_curve(f: &ProbForecast, bins: usize) -> Result<CalibrationCurve, MetricsError> {
    f.nonempty()?;
    if bins < 2 {
        return Err(MetricsError::Invalid("need at least two bins".into()));
    }
    let mut acc = vec![(0usize, 0.0f64, 0usize); bins];
    for (p, o) in f.p.iter().zip(&f.o) {
        let k = ((p * bins as f64).floor() as usize).min(bins - 1);
        acc[k].0 += 1;
        acc[k].1 += p;
        acc[k].2 += usize::from(*o);
    }
    Ok(CalibrationCurve {
        bins: acc
            .into_iter()
            .enumerate()
            .map(|(k, (count, sum, pos))| CalibrationBin {
                low: k as f64 / bins as f64,
                high: (k + 1) as f64 / bins as f64,
                count,
                mean_pred: (count > 0).then(|| sum / count as f64),
                obs_freq: (count > 0).then(|| pos as f64 / count as f64),
            })
            .collect(),
    })
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half.
pub fn roc_auc(f: &ProbForecast) -> Result<f64, MetricsError> {
    let mut idx: Vec<usize> = (0..f.len()).collect();
    idx.sort_by(|&a, &b| f.p[a].total_cmp(&f.p[b]));
    let pos_total = f.o.iter().filter(|o| **o).count();
    let neg_total = f.len() - pos_total;
    if pos_total == 0 || neg_total == 0 {
        return Err(MetricsError::OneClassOnly);
    }
    // Twice the U statistic, in integers.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && f.p[idx[j]] == f.p[idx[i]] {
            j += 1;
        }
        let pos = idx[i..j].iter().filter(|&&k| f.o[k]).count() as u128;
        let neg = (j - i) as u128 - pos;
        twice_u += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * pos_total as u128 * neg_total as u128) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC curve: one point per distinct score (predict positive when
/// p ≥ threshold), starting from (0, 0) at an infinite threshold.
pub fn roc_points(f: &ProbForecast) -> Result<Vec<RocPoint>, MetricsError> {
    let pos_total = f.o.iter().filter(|o| **o).count();
    let neg_total = f.len() - pos_total;
    if pos_total == 0 || neg_total == 0 {
        return Err(MetricsError::OneClassOnly);
    }
    let mut idx: Vec<usize> = (0..f.len()).collect();
    idx.sort_by(|&a, &b| f.p[b].total_cmp(&f.p[a]));
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let t = f.p[idx[i]];
        while i < idx.len() && f.p[idx[i]] == t {
            if f.o[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint {
            threshold: t,
            tpr: tp as f64 / pos_total as f64,
            fpr: fp as f64 / neg_total as f64,
        });
    }
    Ok(out)
}

pub fn write_roc_csv<W: Write>(points: &[RocPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "threshold,tpr,fpr")?;
    for p in points {
        writeln!(w, "{:?},{:?},{:?}", p.threshold, p.tpr, p.fpr)?;
    }
    Ok(())
}

pub const RADAR_LABELS: [&str; 5] = ["auc", "resolution", "refinement_loss", "brier", "brier_skill"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarVector {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
    /// Mapping applied per axis, recorded with the values.
    pub mapping: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub n: usize,
    pub brier: f64,
    /// `None` when the outcomes are all one class.
    pub brier_skill: Option<f64>,
    pub reliability: f64,
    pub resolution: f64,
    pub uncertainty: f64,
    pub refinement_loss: f64,
    /// `None` when the outcomes are all one class.
    pub roc_auc: Option<f64>,
    pub calibration: CalibrationCurve,
    pub radar: RadarVector,
    /// Point-prediction accuracy, when point predictions were supplied.
    pub accuracy: Option<f64>,
    /// True-positive rate of point predictions for TI.
    pub sensitivity: Option<f64>,
}

/// Map the bundle onto [0, 1] axes: auc as-is, brier and refinement loss
/// via 1 − min(1, x / 0.25), resolution via min(1, x / 0.25), skill clamped.
/// A missing AUC maps to 0.5 and a missing skill score to 0.
pub fn radar_export(b: &MetricsBundle) -> RadarVector {
    let loss = |x: f64| 1.0 - (x / NO_SKILL_BRIER).min(1.0);
    let values = vec![
        b.roc_auc.unwrap_or(0.5),
        (b.resolution / NO_SKILL_BRIER).clamp(0.0, 1.0),
        loss(b.refinement_loss).clamp(0.0, 1.0),
        loss(b.brier).clamp(0.0, 1.0),
        b.brier_skill.unwrap_or(0.0).clamp(0.0, 1.0),
    ];
    let mapping = [
        ("auc", "identity; undefined -> 0.5".to_string()),
        ("resolution", format!("min(1, x / {NO_SKILL_BRIER})")),
        ("refinement_loss", format!("1 - min(1, x / {NO_SKILL_BRIER})")),
        ("brier", format!("1 - min(1, x / {NO_SKILL_BRIER})")),
        ("brier_skill", "clamp(x, 0, 1); undefined -> 0".to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    RadarVector {
        labels: RADAR_LABELS.iter().map(|s| s.to_string()).collect(),
        values,
        mapping,
    }
}

/// Every metric for one forecast set. `points` are optional point
/// predictions aligned with the forecasts.
pub fn metrics_bundle(
    f: &ProbForecast,
    points: Option<&[ClassLabel]>,
    bins: usize,
) -> Result<MetricsBundle, MetricsError> {
    let brier = brier_score(f)?;
    let d = brier_decomposition(f)?;
    let auc = match roc_auc(f) {
        Ok(a) => Some(a),
        Err(MetricsError::OneClassOnly) => None,
        Err(e) => return Err(e),
    };
    let (accuracy, sensitivity) = match points {
        Some(pts) => {
            if pts.len() != f.len() {
                return Err(MetricsError::LengthMismatch(f.len(), pts.len()));
            }
            let hits = pts
                .iter()
                .zip(&f.o)
                .filter(|(p, o)| (**p == ClassLabel::TI) == **o)
                .count();
            let positives = f.o.iter().filter(|o| **o).count();
            let tp = pts
                .iter()
                .zip(&f.o)
                .filter(|(p, o)| **o && **p == ClassLabel::TI)
                .count();
            (
                Some(hits as f64 / f.len() as f64),
                (positives > 0).then(|| tp as f64 / positives as f64),
            )
        }
        None => (None, None),
    };
    let mut b = MetricsBundle {
        n: f.len(),
        brier,
        brier_skill: brier_skill_score(f)?,
        reliability: d.reliability,
        resolution: d.resolution,
        uncertainty: d.uncertainty,
        refinement_loss: d.refinement_loss,
        roc_auc: auc,
        calibration: calibration_curve(f, bins)?,
        radar: RadarVector {
            labels: Vec::new(),
            values: Vec::new(),
            mapping: BTreeMap::new(),
        },
        accuracy,
        sensitivity,
    };
    b.radar = radar_export(&b);
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn fc(p: &[f64], o: &[u8]) -> ProbForecast {
        ProbForecast::new(p.to_vec(), o.iter().map(|x| *x == 1).collect()).unwrap()
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier_score(&fc(&[1.0, 0.0], &[1, 0])).unwrap(), 0.0);
        assert_eq!(brier_score(&fc(&[0.5, 0.5], &[1, 0])).unwrap(), 0.25);
        let b = brier_score(&fc(&[0.8, 0.3, 0.6], &[1, 0, 1])).unwrap();
        assert!((b - 0.29 / 3.0).abs() < 1e-15);
        assert_eq!(brier_score(&fc(&[], &[])), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn skill_examples() {
        assert_eq!(brier_skill_score(&fc(&[0.5; 4], &[1, 0, 1, 0])).unwrap(), Some(0.0));
        assert_eq!(brier_skill_score(&fc(&[1.0, 0.0], &[1, 0])).unwrap(), Some(1.0));
        assert_eq!(brier_skill_score(&fc(&[0.7, 0.2], &[1, 1])).unwrap(), None);
    }

    #[test]
    fn decomposition_examples() {
        let d = brier_decomposition(&fc(&[0.5; 4], &[1, 0, 1, 0])).unwrap();
        assert_eq!((d.reliability, d.resolution, d.uncertainty, d.refinement_loss), (0.0, 0.0, 0.25, 0.25));
        let d = brier_decomposition(&fc(&[1.0, 0.0, 1.0], &[1, 0, 1])).unwrap();
        assert_eq!(d.reliability, 0.0);
        assert!((d.resolution - d.uncertainty).abs() < 1e-15);
        assert!(d.refinement_loss.abs() < 1e-15);
        // Groups {0.2: outcomes 0,1} and {0.8: outcomes 1,1}; ō = 0.75.
        let f = fc(&[0.2, 0.2, 0.8, 0.8], &[0, 1, 1, 1]);
        let d = brier_decomposition(&f).unwrap();
        let rel = 0.5 * (0.2f64 - 0.5).powi(2) + 0.5 * (0.8f64 - 1.0).powi(2);
        let res = 0.5 * (0.5f64 - 0.75).powi(2) + 0.5 * (1.0f64 - 0.75).powi(2);
        assert!((d.reliability - rel).abs() < 1e-15);
        assert!((d.resolution - res).abs() < 1e-15);
        assert!((d.uncertainty - 0.1875).abs() < 1e-15);
        let bs = brier_score(&f).unwrap();
        assert!((d.reliability - d.resolution + d.uncertainty - bs).abs() < 1e-12);
    }

    #[test]
    fn calibration_examples() {
        let c = calibration_curve(&fc(&[0.05, 0.15], &[0, 1]), 10).unwrap();
        assert_eq!(c.bins.len(), 10);
        assert_eq!((c.bins[0].mean_pred, c.bins[0].obs_freq), (Some(0.05), Some(0.0)));
        assert_eq!((c.bins[1].mean_pred, c.bins[1].obs_freq), (Some(0.15), Some(1.0)));
        assert_eq!(c.bins[5].obs_freq, None);
        let c = calibration_curve(&fc(&[0.41, 0.42, 0.43], &[0, 1, 1]), 10).unwrap();
        assert_eq!(c.histogram().iter().filter(|n| **n > 0).count(), 1);
        assert_eq!(c.histogram()[4], 3);
        // p = 1 falls in the closed last bin.
        let c = calibration_curve(&fc(&[1.0], &[1]), 4).unwrap();
        assert_eq!(c.bins[3].count, 1);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bin_low,bin_high,count,mean_pred,obs_freq\n0.0,0.25,0,,\n"));
    }

    #[test]
    fn calibrated_draws_are_calibrated() {
        let mut r = crate::seed::rng(3);
        let p: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        let o: Vec<bool> = p.iter().map(|p| r.random::<f64>() < *p).collect();
        let c = calibration_curve(&ProbForecast::new(p, o).unwrap(), 10).unwrap();
        for b in c.bins.iter().filter(|b| b.count >= 100) {
            assert!((b.obs_freq.unwrap() - b.mean_pred.unwrap()).abs() < 0.05);
        }
        assert_eq!(c.histogram().iter().sum::<usize>(), 10_000);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&fc(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
        assert_eq!(roc_auc(&fc(&[0.3; 6], &[1, 0, 1, 0, 0, 1])).unwrap(), 0.5);
        assert_eq!(roc_auc(&fc(&[0.8, 0.4, 0.6, 0.2], &[1, 1, 0, 0])).unwrap(), 0.75);
        assert_eq!(roc_auc(&fc(&[0.8, 0.4], &[1, 1])), Err(MetricsError::OneClassOnly));
    }

    #[test]
    fn roc_points_end_at_one_one() {
        let pts = roc_points(&fc(&[0.8, 0.4, 0.6, 0.2], &[1, 1, 0, 0])).unwrap();
        assert_eq!(pts.first().map(|p| (p.tpr, p.fpr)), Some((0.0, 0.0)));
        assert_eq!(pts.last().map(|p| (p.tpr, p.fpr)), Some((1.0, 1.0)));
        assert_eq!(pts.len(), 5);
    }

    #[test]
    fn radar_examples() {
        let perfect = metrics_bundle(&fc(&[1.0, 0.0, 1.0, 0.0], &[1, 0, 1, 0]), None, 10).unwrap();
        assert_eq!(perfect.radar.values, vec![1.0; 5]);
        let flat = metrics_bundle(&fc(&[0.5; 4], &[1, 0, 1, 0]), None, 10).unwrap();
        assert_eq!(flat.radar.values[3], 0.0);
        assert_eq!(flat.radar.values[1], 0.0);
        let f = fc(&[0.2, 0.2, 0.8, 0.8], &[0, 1, 1, 1]);
        let b = metrics_bundle(&f, None, 10).unwrap();
        // Hand decomposition: BS = 0.19, resolution = 0.0625, refinement =
        // 0.125. AUC by brute-force pairs.
        let auc = {
            let (p, o) = (f.probs(), f.outcomes());
            let mut s = 0.0;
            let mut n = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    if o[i] && !o[j] {
                        n += 1.0;
                        s += if p[i] > p[j] { 1.0 } else if p[i] == p[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            s / n
        };
        let expected = [auc, 0.0625 / 0.25, 1.0 - 0.125 / 0.25, 1.0 - 0.19 / 0.25, 0.0];
        for (got, want) in b.radar.values.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    proptest! {
        #[test]
        fn decomposition_identity_and_bounds(pairs in prop::collection::vec((0u8..=10, any::<bool>()), 1..60)) {
            let p: Vec<f64> = pairs.iter().map(|(k, _)| f64::from(*k) / 10.0).collect();
            let o: Vec<bool> = pairs.iter().map(|(_, o)| *o).collect();
            let f = ProbForecast::new(p, o).unwrap();
            let d = brier_decomposition(&f).unwrap();
            let bs = brier_score(&f).unwrap();
            prop_assert!((d.reliability - d.resolution + d.uncertainty - bs).abs() <= 1e-12);
            prop_assert!(d.resolution >= 0.0 && d.resolution <= d.uncertainty);
            prop_assert!(d.uncertainty <= 0.25);
            prop_assert!((0.0..=0.25).contains(&d.refinement_loss));
        }

        #[test]
        fn brier_permutation_invariant(pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..40)) {
            let mut rev = pairs.clone();
            rev.reverse();
            let mk = |v: &[(f64, bool)]| ProbForecast::new(v.iter().map(|x| x.0).collect(), v.iter().map(|x| x.1).collect()).unwrap();
            prop_assert!((brier_score(&mk(&pairs)).unwrap() - brier_score(&mk(&rev)).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn bins_sum_to_n(p in prop::collection::vec(0.0f64..=1.0, 1..100), b in 2usize..30) {
            let o = vec![false; p.len()];
            let n = p.len();
            let c = calibration_curve(&ProbForecast::new(p, o).unwrap(), b).unwrap();
            prop_assert_eq!(c.histogram().iter().sum::<usize>(), n);
        }
    }
}
