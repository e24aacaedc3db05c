//! Labeled multimodal datasets: loading, merging, splitting and synthesis.

mod io;
mod split;
mod synth;

pub use io::{
    load_graph_jsonl, load_multimodal_jsonl, load_tabular_csv, parse_graph_jsonl,
    parse_multimodal_jsonl, parse_tabular_csv, write_graph_jsonl, write_multimodal_jsonl,
    write_tabular_csv, GraphLine,
};
pub use split::{split_indices, stratified_split, SplitIndices, SplitSpec};
pub use synth::{synth_generate, synth_partial_signal, SynthDesign};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    TF,
    TI,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::TF, ClassLabel::TI];

    /// Output index in a two-class probability vector.
    pub fn index(self) -> usize {
        match self {
            ClassLabel::TF => 0,
            ClassLabel::TI => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            ClassLabel::TF
        } else {
            ClassLabel::TI
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::TF => "TF",
            ClassLabel::TI => "TI",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "TF" => Ok(ClassLabel::TF),
            "TI" => Ok(ClassLabel::TI),
            other => Err(format!("unknown label `{other}` (expected TF or TI)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Tabular,
    Graph,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Tabular, Modality::Graph];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Tabular => "tabular",
            Modality::Graph => "graph",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Generated,
    ImputedPartial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub design_id: String,
    pub label: ClassLabel,
    pub modalities: BTreeMap<Modality, Vec<f64>>,
    pub missing: BTreeSet<Modality>,
    pub provenance: Provenance,
}

impl LabeledSample {
    pub fn new(design_id: impl Into<String>, label: ClassLabel) -> Self {
        Self {
            design_id: design_id.into(),
            label,
            modalities: BTreeMap::new(),
            missing: BTreeSet::new(),
            provenance: Provenance::Real,
        }
    }

    pub fn with(mut self, modality: Modality, v: Vec<f64>) -> Self {
        self.missing.remove(&modality);
        self.modalities.insert(modality, v);
        self
    }

    pub fn get(&self, modality: Modality) -> Option<&[f64]> {
        self.modalities.get(&modality).map(Vec::as_slice)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("label conflict for design `{0}`")]
    LabelConflict(String),
    #[error("duplicate design id `{0}`")]
    DuplicateId(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("schema mismatch for {modality}: expected {expected} slots, found {found}")]
    SchemaMismatch {
        modality: Modality,
        expected: usize,
        found: usize,
    },
    #[error("both datasets carry the {0} modality")]
    ModalityConflict(Modality),
    #[error("design `{design_id}` is missing the {modality} modality")]
    MissingModality {
        design_id: String,
        modality: Modality,
    },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

impl DatasetError {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        DatasetError::Format {
            line,
            message: message.into(),
        }
    }
}

/// Samples over a fixed set of modalities with one schema width each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    schemas: BTreeMap<Modality, usize>,
    ids: HashSet<String>,
}

impl Dataset {
    pub fn new(schemas: BTreeMap<Modality, usize>) -> Self {
        Self {
            samples: Vec::new(),
            schemas,
            ids: HashSet::new(),
        }
    }

    pub fn single(modality: Modality, width: usize) -> Self {
        Self::new(BTreeMap::from([(modality, width)]))
    }

    pub fn schemas(&self) -> &BTreeMap<Modality, usize> {
        &self.schemas
    }

    pub fn schema(&self, modality: Modality) -> Option<usize> {
        self.schemas.get(&modality).copied()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Counts indexed by [`ClassLabel::index`].
    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for s in &self.samples {
            c[s.label.index()] += 1;
        }
        c
    }

    /// Append a sample. Modalities of the schema that the sample lacks are
    /// recorded as missing.
    pub fn push(&mut self, mut s: LabeledSample) -> Result<(), DatasetError> {
        if self.ids.contains(&s.design_id) {
            return Err(DatasetError::DuplicateId(s.design_id));
        }
        for (m, v) in &s.modalities {
            let expected = self.schemas.get(m).copied();
            match expected {
                Some(w) if w == v.len() => {}
                Some(w) => {
                    return Err(DatasetError::SchemaMismatch {
                        modality: *m,
                        expected: w,
                        found: v.len(),
                    })
                }
                None => {
                    return Err(DatasetError::SchemaMismatch {
                        modality: *m,
                        expected: 0,
                        found: v.len(),
                    })
                }
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(DatasetError::format(
                    0,
                    format!("non-finite value in design `{}`", s.design_id),
                ));
            }
        }
        s.missing = self
            .schemas
            .keys()
            .filter(|m| !s.modalities.contains_key(m))
            .copied()
            .collect();
        self.ids.insert(s.design_id.clone());
        self.samples.push(s);
        Ok(())
    }

    pub fn from_samples(
        schemas: BTreeMap<Modality, usize>,
        samples: impl IntoIterator<Item = LabeledSample>,
    ) -> Result<Self, DatasetError> {
        let mut d = Self::new(schemas);
        for s in samples {
            d.push(s)?;
        }
        Ok(d)
    }

    /// Sub-dataset of the given indices, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut d = Dataset::new(self.schemas.clone());
        for &i in idx {
            let s = self.samples[i].clone();
            d.ids.insert(s.design_id.clone());
            d.samples.push(s);
        }
        d
    }

    /// Fill a missing modality of sample `i` and mark it imputed.
    pub fn impute(&mut self, i: usize, modality: Modality, v: Vec<f64>) -> Result<(), DatasetError> {
        let width = self.schema(modality).unwrap_or(0);
        if v.len() != width {
            return Err(DatasetError::SchemaMismatch {
                modality,
                expected: width,
                found: v.len(),
            });
        }
        let s = &mut self.samples[i];
        s.modalities.insert(modality, v);
        s.missing.remove(&modality);
        s.provenance = Provenance::ImputedPartial;
        Ok(())
    }

    pub fn missing_count(&self) -> usize {
        self.samples.iter().map(|s| s.missing.len()).sum()
    }

    /// Vectors and labels of one modality, failing on the first sample that
    /// lacks it.
    pub fn matrix(&self, modality: Modality) -> Result<(Vec<Vec<f64>>, Vec<ClassLabel>), DatasetError> {
        let mut xs = Vec::with_capacity(self.len());
        let mut ys = Vec::with_capacity(self.len());
        for s in &self.samples {
            let v = s.get(modality).ok_or_else(|| DatasetError::MissingModality {
                design_id: s.design_id.clone(),
                modality,
            })?;
            xs.push(v.to_vec());
            ys.push(s.label);
        }
        Ok((xs, ys))
    }
}

/// Outer join of two single-modality datasets on `design_id`.
pub fn merge_modalities(a: &Dataset, b: &Dataset) -> Result<Dataset, DatasetError> {
    let mut schemas = a.schemas.clone();
    for (m, w) in &b.schemas {
        if schemas.insert(*m, *w).is_some() {
            return Err(DatasetError::ModalityConflict(*m));
        }
    }
    let mut by_id: BTreeMap<&str, LabeledSample> = BTreeMap::new();
    for s in a.samples.iter().chain(b.samples.iter()) {
        match by_id.get_mut(s.design_id.as_str()) {
            Some(existing) => {
                if existing.label != s.label {
                    return Err(DatasetError::LabelConflict(s.design_id.clone()));
                }
                for (m, v) in &s.modalities {
                    existing.modalities.insert(*m, v.clone());
                }
                if s.provenance != Provenance::Real {
                    existing.provenance = s.provenance;
                }
            }
            None => {
                by_id.insert(&s.design_id, s.clone());
            }
        }
    }
    Dataset::from_samples(schemas, by_id.into_values())
}
