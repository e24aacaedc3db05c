//! File formats: tabular CSV, graph JSON-lines and multimodal JSON-lines.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{ClassLabel, Dataset, DatasetError, LabeledSample, Modality, Provenance};
use crate::features::{extract_graph_features, DataFlowGraph, DfgNode, GRAPH_SLOTS};

fn parse_label(cell: &str, line: usize) -> Result<Option<ClassLabel>, DatasetError> {
    if cell.trim() == "?" {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|e| DatasetError::format(line, e))
}

/// Read a tabular CSV. Every column other than `design_id` and `label` is a
/// numeric feature. Rows labeled `?` are skipped.
pub fn parse_tabular_csv<R: Read>(reader: R) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::format(1, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(DatasetError::format(1, "missing header row"));
    }
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| DatasetError::format(1, "header has no `label` column"))?;
    let id_col = headers.iter().position(|h| h.trim() == "design_id");
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_col && Some(i) != id_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(DatasetError::format(1, "header has no feature columns"));
    }
    let mut d = Dataset::single(Modality::Tabular, feature_cols.len());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(row + 2, |p| p.line() as usize);
            DatasetError::format(line, e.to_string())
        })?;
        let line = rec.position().map_or(row + 2, |p| p.line() as usize);
        let Some(label) = parse_label(&rec[label_col], line)? else {
            continue;
        };
        let mut v = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let cell = rec[c].trim();
            let x: f64 = cell.parse().map_err(|_| {
                DatasetError::format(line, format!("non-numeric cell `{cell}` in column `{}`", &headers[c]))
            })?;
            if !x.is_finite() {
                return Err(DatasetError::format(line, format!("non-finite cell `{cell}`")));
            }
            v.push(x);
        }
        let id = match id_col {
            Some(c) => rec[c].trim().to_string(),
            None => format!("row{row}"),
        };
        d.push(LabeledSample::new(id, label).with(Modality::Tabular, v))
            .map_err(|e| DatasetError::format(line, e.to_string()))?;
    }
    Ok(d)
}

pub fn load_tabular_csv(path: &Path) -> Result<Dataset, DatasetError> {
    parse_tabular_csv(File::open(path)?)
}

/// Write a tabular CSV. Rows with no label are written as `?`. Floats use
/// the shortest representation that parses back to the same value.
pub fn write_tabular_csv<W: Write>(
    writer: W,
    columns: &[&str],
    rows: &[(String, Option<ClassLabel>, Vec<f64>)],
) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["design_id"];
    header.extend_from_slice(columns);
    header.push("label");
    w.write_record(&header).map_err(csv_io)?;
    for (id, label, v) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(v.iter().map(|x| format!("{x:?}")));
        rec.push(label.map_or("?".to_string(), |l| l.to_string()));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> DatasetError {
    DatasetError::Io(std::io::Error::other(e.to_string()))
}

/// One line of a graph JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphLine {
    pub design_id: String,
    pub nodes: Vec<DfgNode>,
    pub edges: Vec<(Value, Value)>,
    pub label: String,
}

fn id_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl GraphLine {
    pub fn from_graph(design_id: &str, g: &DataFlowGraph, label: Option<ClassLabel>) -> Self {
        let rec = g.to_record();
        Self {
            design_id: design_id.to_string(),
            nodes: rec.nodes,
            edges: rec
                .edges
                .into_iter()
                .map(|(s, d)| (Value::String(s), Value::String(d)))
                .collect(),
            label: label.map_or("?".to_string(), |l| l.to_string()),
        }
    }

    pub fn graph(&self) -> Result<DataFlowGraph, crate::features::GraphError> {
        let edges: Vec<(String, String)> = self
            .edges
            .iter()
            .map(|(s, d)| (id_text(s), id_text(d)))
            .collect();
        DataFlowGraph::from_parts(self.nodes.clone(), &edges)
    }
}

fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
}

/// Read a graph JSON-lines file, converting each graph to its structural
/// feature vector. Blank lines and `?` labels are skipped.
pub fn parse_graph_jsonl<R: BufRead>(reader: R) -> Result<Dataset, DatasetError> {
    let mut d = Dataset::single(Modality::Graph, GRAPH_SLOTS.len());
    for (line, text) in lines(reader) {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let g: GraphLine =
            serde_json::from_str(&text).map_err(|e| DatasetError::format(line, e.to_string()))?;
        let Some(label) = parse_label(&g.label, line)? else {
            continue;
        };
        let graph = g
            .graph()
            .map_err(|e| DatasetError::format(line, e.to_string()))?;
        let v = extract_graph_features(&graph).to_vec();
        d.push(LabeledSample::new(g.design_id, label).with(Modality::Graph, v))
            .map_err(|e| DatasetError::format(line, e.to_string()))?;
    }
    Ok(d)
}

pub fn load_graph_jsonl(path: &Path) -> Result<Dataset, DatasetError> {
    parse_graph_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_graph_jsonl<W: Write>(mut w: W, graphs: &[GraphLine]) -> Result<(), DatasetError> {
    for g in graphs {
        let line = serde_json::to_string(g).map_err(|e| DatasetError::Io(e.into()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MultiLine {
    design_id: String,
    label: ClassLabel,
    tabular: Option<Vec<f64>>,
    graph: Option<Vec<f64>>,
    provenance: Provenance,
}

/// Read a multimodal JSON-lines dataset. Schema widths are taken from the
/// first sample carrying each modality.
pub fn parse_multimodal_jsonl<R: BufRead>(reader: R) -> Result<Dataset, DatasetError> {
    let mut parsed = Vec::new();
    let mut schemas = BTreeMap::new();
    for (line, text) in lines(reader) {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let m: MultiLine =
            serde_json::from_str(&text).map_err(|e| DatasetError::format(line, e.to_string()))?;
        if let Some(v) = &m.tabular {
            schemas.entry(Modality::Tabular).or_insert(v.len());
        }
        if let Some(v) = &m.graph {
            schemas.entry(Modality::Graph).or_insert(v.len());
        }
        parsed.push((line, m));
    }
    let mut d = Dataset::new(schemas);
    for (line, m) in parsed {
        let mut s = LabeledSample::new(m.design_id, m.label);
        s.provenance = m.provenance;
        if let Some(v) = m.tabular {
            s = s.with(Modality::Tabular, v);
        }
        if let Some(v) = m.graph {
            s = s.with(Modality::Graph, v);
        }
        d.push(s)
            .map_err(|e| DatasetError::format(line, e.to_string()))?;
    }
    Ok(d)
}

pub fn load_multimodal_jsonl(path: &Path) -> Result<Dataset, DatasetError> {
    parse_multimodal_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_multimodal_jsonl<W: Write>(mut w: W, d: &Dataset) -> Result<(), DatasetError> {
    for s in d.samples() {
        let line = MultiLine {
            design_id: s.design_id.clone(),
            label: s.label,
            tabular: s.modalities.get(&Modality::Tabular).cloned(),
            graph: s.modalities.get(&Modality::Graph).cloned(),
            provenance: s.provenance,
        };
        let text = serde_json::to_string(&line).map_err(|e| DatasetError::Io(e.into()))?;
        writeln!(w, "{text}")?;
    }
    Ok(())
}
