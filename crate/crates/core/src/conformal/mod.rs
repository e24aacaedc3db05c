//! Mondrian (label-conditional) inductive conformal prediction: nonconformity
//! scores, per-class calibration tables, p-values, p-value combination and
//! prediction regions.

pub mod stats;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dataset::ClassLabel;
use crate::mlp::{MlpError, Scorer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConformalError {
    #[error("no calibration examples for class {0}")]
    EmptyClass(ClassLabel),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Scorer(#[from] MlpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    #[default]
    Fisher,
    Stouffer,
    BonferroniMin,
    ArithmeticMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConformalConfig {
    pub confidence: f64,
    pub combiner: Combiner,
    pub smoothing: bool,
    pub ensemble_size: usize,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self {
            confidence: 0.9,
            combiner: Combiner::Fisher,
            smoothing: true,
            ensemble_size: 1,
        }
    }
}

impl ConformalConfig {
    pub fn validate(&self) -> Result<(), ConformalError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(ConformalError::Argument(format!(
                "confidence {} is outside (0, 1)",
                self.confidence
            )));
        }
        if self.ensemble_size == 0 {
            return Err(ConformalError::Argument("ensemble_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Σ_t (1 − p_t(y | x)) over the scorer ensemble.
pub fn nonconformity<S: Scorer>(scorers: &[S], x: &[f64], y: ClassLabel) -> Result<f64, ConformalError> {
    if scorers.is_empty() {
        return Err(ConformalError::Argument("at least one scorer is required".into()));
    }
    let mut ns = 0.0;
    for s in scorers {
        ns += 1.0 - s.predict_proba(x)?[y.index()];
    }
    Ok(ns.max(0.0))
}

/// Sorted calibration scores per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub modality: String,
    #[serde(rename = "TF")]
    pub tf: Vec<f64>,
    #[serde(rename = "TI")]
    pub ti: Vec<f64>,
}

impl CalibrationTable {
    /// Build from (score, true label) pairs. Both classes must be present.
    pub fn from_scores(
        modality: impl Into<String>,
        scores: impl IntoIterator<Item = (f64, ClassLabel)>,
    ) -> Result<Self, ConformalError> {
        let mut per: BTreeMap<ClassLabel, Vec<f64>> = BTreeMap::new();
        for (s, y) in scores {
            if !(s.is_finite() && s >= 0.0) {
                return Err(ConformalError::Argument(format!("invalid score {s}")));
            }
            per.entry(y).or_default().push(s);
        }
        let mut take = |c: ClassLabel| -> Result<Vec<f64>, ConformalError> {
            let mut v = per.remove(&c).ok_or(ConformalError::EmptyClass(c))?;
            v.sort_by(f64::total_cmp);
            Ok(v)
        };
        Ok(Self {
            modality: modality.into(),
            tf: take(ClassLabel::TF)?,
            ti: take(ClassLabel::TI)?,
        })
    }

    pub fn scores(&self, class: ClassLabel) -> &[f64] {
        match class {
            ClassLabel::TF => &self.tf,
            ClassLabel::TI => &self.ti,
        }
    }

    pub fn count(&self, class: ClassLabel) -> usize {
        self.scores(class).len()
    }

    /// Conformal p-value of `score` against the calibration scores of
    /// `class`. Unsmoothed: (#{α ≥ s} + 1) / (n + 1). Smoothed:
    /// (#{α > s} + τ (#{α = s} + 1)) / (n + 1).
    pub fn p_value(
        &self,
        score: f64,
        class: ClassLabel,
        smoothing: bool,
        tau: f64,
    ) -> Result<f64, ConformalError> {
        let a = self.scores(class);
        let n = a.len();
        if n == 0 {
            return Err(ConformalError::EmptyClass(class));
        }
        let below = a.partition_point(|x| *x < score);
        let at_or_below = a.partition_point(|x| *x <= score);
        let ge = n - below;
        let gt = n - at_or_below;
        let eq = at_or_below - below;
        let p = if smoothing {
            (gt as f64 + tau * (eq + 1) as f64) / (n + 1) as f64
        } else {
            (ge + 1) as f64 / (n + 1) as f64
        };
        // τ = 0 with no ties would give exactly 0; keep p in (0, 1].
        Ok(p.max(f64::MIN_POSITIVE))
    }
}

/// Calibrate scorers on a held-out split.
pub fn calibrate<S: Scorer>(
    scorers: &[S],
    xs: &[Vec<f64>],
    ys: &[ClassLabel],
    modality: &str,
) -> Result<CalibrationTable, ConformalError> {
    if xs.len() != ys.len() {
        return Err(ConformalError::LengthMismatch(xs.len(), ys.len()));
    }
    let scores = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| nonconformity(scorers, x, *y).map(|s| (s, *y)))
        .collect::<Result<Vec<_>, _>>()?;
    CalibrationTable::from_scores(modality, scores)
}

/// Combine one p-value per modality. N = 1 returns the input.
pub fn combine_p_values(ps: &[f64], combiner: Combiner) -> Result<f64, ConformalError> {
    if ps.is_empty() {
        return Err(ConformalError::Argument("no p-values to combine".into()));
    }
    if let Some(p) = ps.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(ConformalError::Argument(format!("p-value {p} is outside (0, 1]")));
    }
    if ps.len() == 1 {
        return Ok(ps[0]);
    }
    let n = ps.len() as f64;
    let p = match combiner {
        Combiner::Fisher => {
            let stat: f64 = -2.0 * ps.iter().map(|p| p.ln()).sum::<f64>();
            stats::chi2_sf_even(stat, ps.len())
        }
        Combiner::Stouffer => {
            let z: f64 = ps.iter().map(|p| -stats::probit(*p)).sum::<f64>() / n.sqrt();
            stats::normal_sf(z)
        }
        Combiner::BonferroniMin => {
            let m = ps.iter().copied().fold(f64::INFINITY, f64::min);
            (n * m).min(1.0)
        }
        Combiner::ArithmeticMean => (2.0 * ps.iter().sum::<f64>() / n).min(1.0),
    };
    Ok(p.clamp(f64::MIN_POSITIVE, 1.0))
}

/// Per-class p-values, indexed by [`ClassLabel::index`]. Serialized as
/// `{"TF": .., "TI": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPValues {
    #[serde(rename = "TF")]
    pub tf: f64,
    #[serde(rename = "TI")]
    pub ti: f64,
}

impl ClassPValues {
    pub fn new(p: [f64; 2]) -> Self {
        Self { tf: p[0], ti: p[1] }
    }

    pub fn get(&self, c: ClassLabel) -> f64 {
        match c {
            ClassLabel::TF => self.tf,
            ClassLabel::TI => self.ti,
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.tf, self.ti]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRegion {
    pub labels: Vec<ClassLabel>,
    pub p_values: ClassPValues,
    pub confidence: f64,
    pub empty: bool,
    pub uncertain: bool,
}

impl PredictionRegion {
    pub fn contains(&self, c: ClassLabel) -> bool {
        self.labels.contains(&c)
    }
}

/// Labels whose combined p-value exceeds 1 − E.
pub fn prediction_region(p: ClassPValues, confidence: f64) -> PredictionRegion {
    let threshold = 1.0 - confidence;
    let labels: Vec<ClassLabel> = ClassLabel::ALL
        .into_iter()
        .filter(|c| p.get(*c) > threshold)
        .collect();
    PredictionRegion {
        empty: labels.is_empty(),
        uncertain: labels.len() > 1,
        labels,
        p_values: p,
        confidence,
    }
}

/// Label with the highest p-value; ties go to TI.
pub fn point_prediction(p: ClassPValues) -> ClassLabel {
    if p.tf > p.ti {
        ClassLabel::TF
    } else {
        ClassLabel::TI
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub error_rate: f64,
    /// Keyed by class; `None` when the class has no samples.
    pub per_class_error_rate: BTreeMap<ClassLabel, Option<f64>>,
    pub avg_region_size: f64,
    pub empty_fraction: f64,
    pub uncertain_fraction: f64,
}

pub fn region_stats(
    regions: &[PredictionRegion],
    truths: &[ClassLabel],
) -> Result<RegionStats, ConformalError> {
    if regions.len() != truths.len() {
        return Err(ConformalError::LengthMismatch(regions.len(), truths.len()));
    }
    if regions.is_empty() {
        return Err(ConformalError::Argument("no regions".into()));
    }
    let n = regions.len() as f64;
    let mut errors = 0usize;
    let mut per = [(0usize, 0usize); 2];
    for (r, t) in regions.iter().zip(truths) {
        let miss = !r.contains(*t);
        errors += usize::from(miss);
        per[t.index()].0 += usize::from(miss);
        per[t.index()].1 += 1;
    }
    let frac = |f: &dyn Fn(&PredictionRegion) -> bool| regions.iter().filter(|r| f(r)).count() as f64 / n;
    Ok(RegionStats {
        error_rate: errors as f64 / n,
        per_class_error_rate: ClassLabel::ALL
            .into_iter()
            .map(|c| {
                let (e, total) = per[c.index()];
                (c, (total > 0).then(|| e as f64 / total as f64))
            })
            .collect(),
        avg_region_size: regions.iter().map(|r| r.labels.len()).sum::<usize>() as f64 / n,
        empty_fraction: frac(&|r| r.empty),
        uncertain_fraction: frac(&|r| r.uncertain),
    })
}
