//! Feature extraction for the two modalities: tabular code-branching counts
//! and data-flow-graph structure.

mod graph;
mod normalize;
mod tabular;

pub use graph::{
    build_dataflow_graph, condensed_longest_path, extract_graph_features, DataFlowGraph, DfgNode,
    DfgNodeKind, GraphError, GraphFeatures, GraphRecord, GRAPH_SLOTS,
};
pub use normalize::{normalize_features, NormStats, NormalizeError};
pub use tabular::{extract_branching_features, TabularFeatures, TABULAR_SLOTS};
