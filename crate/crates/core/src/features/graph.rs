//! Data-flow graph construction and structural graph features.
//!
//! One signal node per declared signal, one operator node per expression
//! operator occurrence, one constant node per literal occurrence or
//! parameter, and one mux node per (conditional statement, written signal)
//! pair. Edges point from operands to consumers. Node ids are prefixed with
//! the module name so multi-module units do not collide.

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

use crate::rtl::{AstNode, DesignAst, Diagnostic, Direction, ModuleDecl, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfgNodeKind {
    Signal,
    Operator,
    Constant,
    Mux,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfgNode {
    pub id: String,
    pub kind: DfgNodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("edge endpoint `{0}` is not a node")]
    UnknownEndpoint(String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
}

/// Directed data-flow graph. Edges hold indices into `nodes`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DataFlowGraph {
    nodes: Vec<DfgNode>,
    edges: Vec<(usize, usize)>,
}

/// Serialized form: edges by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub nodes: Vec<DfgNode>,
    pub edges: Vec<(String, String)>,
}

impl DataFlowGraph {
    pub fn nodes(&self) -> &[DfgNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn has_edge(&self, src: &str, dst: &str) -> bool {
        match (self.index_of(src), self.index_of(dst)) {
            (Some(s), Some(d)) => self.edges.contains(&(s, d)),
            _ => false,
        }
    }

    /// Build from nodes and id-addressed edges, checking the invariants.
    /// Duplicate edges are collapsed.
    pub fn from_parts(
        nodes: Vec<DfgNode>,
        edges: &[(String, String)],
    ) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for (s, d) in edges {
            let si = *index
                .get(s)
                .ok_or_else(|| GraphError::UnknownEndpoint(s.clone()))?;
            let di = *index
                .get(d)
                .ok_or_else(|| GraphError::UnknownEndpoint(d.clone()))?;
            if si == di {
                return Err(GraphError::SelfLoop(s.clone()));
            }
            if seen.insert((si, di)) {
                out.push((si, di));
            }
        }
        Ok(Self { nodes, edges: out })
    }

    pub fn to_record(&self) -> GraphRecord {
        GraphRecord {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|&(s, d)| (self.nodes[s].id.clone(), self.nodes[d].id.clone()))
                .collect(),
        }
    }
}

struct Builder<'a> {
    nodes: Vec<DfgNode>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    edge_set: HashSet<(usize, usize)>,
    warnings: Vec<Diagnostic>,
    ast: &'a DesignAst,
    // Per-module state.
    prefix: String,
    counter: usize,
}

impl<'a> Builder<'a> {
    fn add_node(&mut self, id: String, kind: DfgNodeKind) -> usize {
        if let Some(&i) = self.index.get(&id) {
            return i;
        }
        let i = self.nodes.len();
        self.index.insert(id.clone(), i);
        self.nodes.push(DfgNode { id, kind });
        i
    }

    fn fresh(&mut self, tag: &str, kind: DfgNodeKind) -> usize {
        self.counter += 1;
        let id = format!("{}.{}{}", self.prefix, tag, self.counter);
        self.add_node(id, kind)
    }

    fn edge(&mut self, src: usize, dst: usize) {
        if src != dst && self.edge_set.insert((src, dst)) {
            self.edges.push((src, dst));
        }
    }

    fn signal(&mut self, name: &str) -> usize {
        let id = format!("{}.{}", self.prefix, name);
        if let Some(&i) = self.index.get(&id) {
            return i;
        }
        let unresolved = format!("{}.?{}", self.prefix, name);
        if let Some(&i) = self.index.get(&unresolved) {
            return i;
        }
        self.warnings.push(Diagnostic::new(
            0,
            0,
            format!("unresolved signal `{name}` in module `{}`", self.prefix),
        ));
        self.add_node(unresolved, DfgNodeKind::Signal)
    }

    fn module(&mut self, m: &ModuleDecl) {
        self.prefix = m.name.clone();
        self.counter = 0;
        for name in m.signal_names() {
            self.add_node(format!("{}.{}", m.name, name), DfgNodeKind::Signal);
        }
        for name in m.constant_names() {
            self.add_node(format!("{}.{}", m.name, name), DfgNodeKind::Constant);
        }
        for item in &m.items {
            match item.kind {
                NodeKind::Assign => {
                    let src = self.expr(&item.children[1]);
                    for (t, idx) in self.targets(&item.children[0]) {
                        self.edge(src, t);
                        for i in idx {
                            self.edge(i, t);
                        }
                    }
                }
                NodeKind::AlwaysBlock => {
                    let drives = self.stmt(&item.children[0]);
                    for (t, srcs) in drives {
                        for s in srcs {
                            self.edge(s, t);
                        }
                    }
                }
                NodeKind::Instance => self.instance(item),
                _ => {}
            }
        }
    }

    /// Node whose value an expression produces.
    fn expr(&mut self, e: &AstNode) -> usize {
        match e.kind {
            NodeKind::Literal => self.fresh("const", DfgNodeKind::Constant),
            NodeKind::SignalRef => {
                let base = self.signal(e.attr("name").unwrap_or(""));
                let dynamic: Vec<&AstNode> = e
                    .children
                    .iter()
                    .filter(|c| c.kind != NodeKind::Literal)
                    .collect();
                if dynamic.is_empty() {
                    base
                } else {
                    let op = self.fresh("op_index", DfgNodeKind::Operator);
                    self.edge(base, op);
                    for c in dynamic {
                        let s = self.expr(c);
                        self.edge(s, op);
                    }
                    op
                }
            }
            NodeKind::Ternary => {
                let mux = self.fresh("mux", DfgNodeKind::Mux);
                for c in &e.children {
                    let s = self.expr(c);
                    self.edge(s, mux);
                }
                mux
            }
            NodeKind::BinaryOp | NodeKind::UnaryOp => {
                let tag = format!("op_{}_", op_name(e.attr("op").unwrap_or("")));
                let op = self.fresh(&tag, DfgNodeKind::Operator);
                for c in &e.children {
                    let s = self.expr(c);
                    self.edge(s, op);
                }
                op
            }
            NodeKind::Concat | NodeKind::Replication | NodeKind::Call => {
                let tag = match e.kind {
                    NodeKind::Concat => "op_concat",
                    NodeKind::Replication => "op_repl",
                    _ => "op_call",
                };
                let op = self.fresh(tag, DfgNodeKind::Operator);
                for c in &e.children {
                    let s = self.expr(c);
                    self.edge(s, op);
                }
                op
            }
            _ => self.fresh("const", DfgNodeKind::Constant),
        }
    }

    /// Written signals of an lvalue, each with the sources of any dynamic
    /// index expressions.
    fn targets(&mut self, lhs: &AstNode) -> Vec<(usize, Vec<usize>)> {
        match lhs.kind {
            NodeKind::Concat => lhs.children.iter().flat_map(|c| self.targets(c)).collect(),
            NodeKind::Target | NodeKind::SignalRef => {
                let t = self.signal(lhs.attr("name").unwrap_or(""));
                let idx = lhs
                    .children
                    .iter()
                    .filter(|c| c.kind != NodeKind::Literal)
                    .map(|c| self.expr(c))
                    .collect();
                vec![(t, idx)]
            }
            _ => Vec::new(),
        }
    }

    /// Signals written by a statement and the nodes driving them.
    fn stmt(&mut self, s: &AstNode) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        match s.kind {
            NodeKind::BlockingAssign | NodeKind::NonblockingAssign => {
                let src = self.expr(&s.children[1]);
                for (t, idx) in self.targets(&s.children[0]) {
                    let e = out.entry(t).or_default();
                    e.push(src);
                    e.extend(idx);
                }
            }
            NodeKind::Block => {
                for c in &s.children {
                    merge(&mut out, self.stmt(c));
                }
            }
            NodeKind::IfStmt => {
                let cond = self.expr(&s.children[0]);
                let mut branches = BTreeMap::new();
                for b in &s.children[1..] {
                    merge(&mut branches, self.stmt(b));
                }
                self.muxes(cond, branches, &mut out);
            }
            NodeKind::CaseStmt => {
                let subject = self.expr(&s.children[0]);
                let mut branches = BTreeMap::new();
                for item in &s.children[1..] {
                    if let Some(body) = item.children.last() {
                        merge(&mut branches, self.stmt(body));
                    }
                }
                self.muxes(subject, branches, &mut out);
            }
            NodeKind::Loop => {
                // Loop conditions are not modelled; init, step and body are.
                let parts: Vec<&AstNode> = match s.attr("loop") {
                    Some("for") => vec![&s.children[0], &s.children[2], &s.children[3]],
                    _ => s.children.last().into_iter().collect(),
                };
                for p in parts {
                    merge(&mut out, self.stmt(p));
                }
            }
            _ => {}
        }
        out
    }

    fn muxes(
        &mut self,
        cond: usize,
        branches: BTreeMap<usize, Vec<usize>>,
        out: &mut BTreeMap<usize, Vec<usize>>,
    ) {
        for (target, srcs) in branches {
            let mux = self.fresh("mux", DfgNodeKind::Mux);
            self.edge(cond, mux);
            for s in srcs {
                self.edge(s, mux);
            }
            out.entry(target).or_default().push(mux);
        }
    }

    fn instance(&mut self, inst: &AstNode) {
        let name = inst.attr("name").unwrap_or("inst").to_string();
        let id = format!("{}.inst_{}", self.prefix, name);
        let node = self.add_node(id, DfgNodeKind::Operator);
        let callee = inst
            .attr("module")
            .and_then(|m| self.ast.module(m))
            .cloned();
        let mut position = 0usize;
        for conn in &inst.children {
            if conn.attr("param").is_some() {
                continue;
            }
            let Some(expr) = conn.children.first() else {
                position += 1;
                continue;
            };
            let direction = callee.as_ref().and_then(|m| match conn.attr("name") {
                Some(p) => m.port(p).and_then(|p| p.direction),
                None => m.ports.get(position).and_then(|p| p.direction),
            });
            position += 1;
            match direction {
                Some(Direction::Output) => {
                    for (t, idx) in self.targets(expr) {
                        self.edge(node, t);
                        for i in idx {
                            self.edge(i, t);
                        }
                    }
                }
                _ => {
                    let s = self.expr(expr);
                    self.edge(s, node);
                }
            }
        }
    }
}

fn merge(into: &mut BTreeMap<usize, Vec<usize>>, from: BTreeMap<usize, Vec<usize>>) {
    for (k, v) in from {
        into.entry(k).or_default().extend(v);
    }
}

fn op_name(op: &str) -> &'static str {
    match op {
        "&" => "and",
        "|" => "or",
        "^" => "xor",
        "~^" | "^~" => "xnor",
        "~&" => "nand",
        "~|" => "nor",
        "~" => "not",
        "!" => "lnot",
        "&&" => "land",
        "||" => "lor",
        "+" => "add",
        "-" => "sub",
        "*" => "mul",
        "/" => "div",
        "%" => "mod",
        "**" => "pow",
        "==" | "===" => "eq",
        "!=" | "!==" => "ne",
        "<" => "lt",
        "<=" => "le",
        ">" => "gt",
        ">=" => "ge",
        "<<" | "<<<" => "shl",
        ">>" | ">>>" => "shr",
        _ => "op",
    }
}

/// Build the data-flow graph of a whole unit. Returns the graph and warnings
/// for references to undeclared signals (which become `module.?name` nodes).
pub fn build_dataflow_graph(ast: &DesignAst) -> (DataFlowGraph, Vec<Diagnostic>) {
    let mut b = Builder {
        nodes: Vec::new(),
        index: HashMap::new(),
        edges: Vec::new(),
        edge_set: HashSet::new(),
        warnings: Vec::new(),
        ast,
        prefix: String::new(),
        counter: 0,
    };
    for m in &ast.modules {
        b.module(m);
    }
    (
        DataFlowGraph {
            nodes: b.nodes,
            edges: b.edges,
        },
        b.warnings,
    )
}

pub const GRAPH_SLOTS: [&str; 10] = [
    "node_count",
    "edge_count",
    "density",
    "mean_in_degree",
    "max_in_degree",
    "mean_out_degree",
    "max_out_degree",
    "mux_count",
    "operator_count",
    "longest_path_len",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GraphFeatures(pub [f64; 10]);

impl GraphFeatures {
    pub fn get(&self, slot: &str) -> Option<f64> {
        GRAPH_SLOTS.iter().position(|s| *s == slot).map(|i| self.0[i])
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }
}

/// Longest path, in edges, of the graph after collapsing each strongly
/// connected component to a single vertex.
pub fn condensed_longest_path(g: &DataFlowGraph) -> usize {
    let n = g.node_count();
    if n == 0 {
        return 0;
    }
    let mut pg: DiGraph<(), ()> = DiGraph::with_capacity(n, g.edge_count());
    for _ in 0..n {
        pg.add_node(());
    }
    for &(s, d) in g.edges() {
        pg.add_edge(NodeIndex::new(s), NodeIndex::new(d), ());
    }
    // Tarjan yields components in reverse topological order.
    let sccs = tarjan_scc(&pg);
    let mut comp = vec![0usize; n];
    for (ci, c) in sccs.iter().enumerate() {
        for v in c {
            comp[v.index()] = ci;
        }
    }
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); sccs.len()];
    for &(s, d) in g.edges() {
        let (cs, cd) = (comp[s], comp[d]);
        if cs != cd {
            succ[cs].push(cd);
        }
    }
    // Every successor component has a smaller index, so ascending order
    // visits successors first.
    let mut longest = vec![0usize; sccs.len()];
    for ci in 0..sccs.len() {
        longest[ci] = succ[ci]
            .iter()
            .map(|&d| longest[d] + 1)
            .max()
            .unwrap_or(0);
    }
    longest.into_iter().max().unwrap_or(0)
}

pub fn extract_graph_features(g: &DataFlowGraph) -> GraphFeatures {
    let n = g.node_count();
    let e = g.edge_count();
    if n == 0 {
        return GraphFeatures::default();
    }
    let mut indeg = vec![0usize; n];
    let mut outdeg = vec![0usize; n];
    for &(s, d) in g.edges() {
        outdeg[s] += 1;
        indeg[d] += 1;
    }
    let pairs = (n * (n - 1)).max(1);
    let count = |k: DfgNodeKind| g.nodes().iter().filter(|x| x.kind == k).count() as f64;
    GraphFeatures([
        n as f64,
        e as f64,
        e as f64 / pairs as f64,
        e as f64 / n as f64,
        indeg.iter().copied().max().unwrap_or(0) as f64,
        e as f64 / n as f64,
        outdeg.iter().copied().max().unwrap_or(0) as f64,
        count(DfgNodeKind::Mux),
        count(DfgNodeKind::Operator),
        condensed_longest_path(g) as f64,
    ])
}
