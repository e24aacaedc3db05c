//! Design AST for the supported Verilog subset.
//!
//! Statements and expressions share one generic [`AstNode`] shape
//! (`kind`, `attrs`, `children`) so the tree serializes to a stable JSON dump
//! and feature extractors can walk it without a visitor per node type.
//! Module headers (ports, declarations) are typed.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use super::Diagnostic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Assign,
    AlwaysBlock,
    IfStmt,
    CaseStmt,
    CaseItem,
    Loop,
    Ternary,
    BinaryOp,
    UnaryOp,
    Instance,
    NonblockingAssign,
    BlockingAssign,
    SignalRef,
    Literal,
    /// `begin ... end`
    Block,
    /// `{a, b}`
    Concat,
    /// `{n{a}}`; children are the count and the replicated concat.
    Replication,
    /// Left-hand side of an assignment: a written signal.
    Target,
    /// Function or system-function call in an expression.
    Call,
    /// One connection in a module instantiation.
    PortConn,
}

impl NodeKind {
    pub const ALL: [NodeKind; 20] = [
        NodeKind::Assign,
        NodeKind::AlwaysBlock,
        NodeKind::IfStmt,
        NodeKind::CaseStmt,
        NodeKind::CaseItem,
        NodeKind::Loop,
        NodeKind::Ternary,
        NodeKind::BinaryOp,
        NodeKind::UnaryOp,
        NodeKind::Instance,
        NodeKind::NonblockingAssign,
        NodeKind::BlockingAssign,
        NodeKind::SignalRef,
        NodeKind::Literal,
        NodeKind::Block,
        NodeKind::Concat,
        NodeKind::Replication,
        NodeKind::Target,
        NodeKind::Call,
        NodeKind::PortConn,
    ];

    /// Node kinds that represent control-flow branching.
    pub fn is_branching(self) -> bool {
        matches!(
            self,
            NodeKind::IfStmt
                | NodeKind::CaseStmt
                | NodeKind::CaseItem
                | NodeKind::Loop
                | NodeKind::Ternary
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Assign => "assign",
            NodeKind::AlwaysBlock => "always_block",
            NodeKind::IfStmt => "if_stmt",
            NodeKind::CaseStmt => "case_stmt",
            NodeKind::CaseItem => "case_item",
            NodeKind::Loop => "loop",
            NodeKind::Ternary => "ternary",
            NodeKind::BinaryOp => "binary_op",
            NodeKind::UnaryOp => "unary_op",
            NodeKind::Instance => "instance",
            NodeKind::NonblockingAssign => "nonblocking_assign",
            NodeKind::BlockingAssign => "blocking_assign",
            NodeKind::SignalRef => "signal_ref",
            NodeKind::Literal => "literal",
            NodeKind::Block => "block",
            NodeKind::Concat => "concat",
            NodeKind::Replication => "replication",
            NodeKind::Target => "target",
            NodeKind::Call => "call",
            NodeKind::PortConn => "port_conn",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One AST node. Attribute keys in use:
///
/// * `op`: operator symbol (`binary_op`, `unary_op`)
/// * `name`: signal, target, instance, call or port name
/// * `select`: `bit` or `part` on signal refs/targets with index children
/// * `value`: literal text
/// * `sensitivity`: normalized event list of an always block (`*`, `posedge clk or negedge rst`, ...)
/// * `always`: the always keyword used
/// * `case`: `case`, `casez` or `casex`
/// * `default`: `true` on a default case item
/// * `loop`: `for`, `while`, `repeat` or `forever`
/// * `module`: instantiated module name
/// * `label`: optional `begin : label`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn new(kind: NodeKind) -> Self {
        Self {
            kind,
            attrs: BTreeMap::new(),
            children: Vec::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<String>) -> Self {
        self.attrs.insert(key.to_string(), value.into());
        self
    }

    pub fn with_children(mut self, children: Vec<AstNode>) -> Self {
        self.children = children;
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    /// Pre-order traversal over this node and its descendants.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a AstNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Input,
    Output,
    Inout,
}

impl Direction {
    pub fn keyword(self) -> &'static str {
        match self {
            Direction::Input => "input",
            Direction::Output => "output",
            Direction::Inout => "inout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Wire,
    Reg,
    Integer,
    Parameter,
    Localparam,
    Genvar,
}

impl NetKind {
    pub fn keyword(self) -> &'static str {
        match self {
            NetKind::Wire => "wire",
            NetKind::Reg => "reg",
            NetKind::Integer => "integer",
            NetKind::Parameter => "parameter",
            NetKind::Localparam => "localparam",
            NetKind::Genvar => "genvar",
        }
    }

    pub fn is_constant(self) -> bool {
        matches!(self, NetKind::Parameter | NetKind::Localparam | NetKind::Genvar)
    }
}

/// `[msb:lsb]`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Range {
    pub msb: AstNode,
    pub lsb: AstNode,
}

impl Range {
    /// Bit width when both bounds are plain decimal literals.
    pub fn width(&self) -> Option<u64> {
        let msb = literal_value(&self.msb)?;
        let lsb = literal_value(&self.lsb)?;
        Some(msb.abs_diff(lsb) + 1)
    }
}

fn literal_value(node: &AstNode) -> Option<u64> {
    if node.kind != NodeKind::Literal {
        return None;
    }
    node.attr("value")?.replace('_', "").parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    /// `None` for a non-ANSI header whose direction was never declared.
    pub direction: Option<Direction>,
    pub net: Option<NetKind>,
    pub signed: bool,
    pub range: Option<Range>,
}

impl Port {
    pub fn width(&self) -> Option<u64> {
        match &self.range {
            Some(r) => r.width(),
            None => Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declaration {
    pub name: String,
    pub kind: NetKind,
    pub signed: bool,
    pub range: Option<Range>,
    /// Unpacked array dimension (`reg [7:0] mem [0:15]`).
    pub array: Option<Range>,
    /// Parameter value.
    pub value: Option<AstNode>,
}

impl Declaration {
    pub fn width(&self) -> Option<u64> {
        match (&self.range, self.kind) {
            (Some(r), _) => r.width(),
            (None, NetKind::Integer) => Some(32),
            (None, _) => Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleDecl {
    pub name: String,
    /// ANSI-style header (`module m(input a, ...)`).
    pub ansi: bool,
    pub params: Vec<Declaration>,
    pub ports: Vec<Port>,
    pub declarations: Vec<Declaration>,
    pub items: Vec<AstNode>,
}

impl ModuleDecl {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ansi: true,
            params: Vec::new(),
            ports: Vec::new(),
            declarations: Vec::new(),
            items: Vec::new(),
        }
    }

    pub fn port(&self, name: &str) -> Option<&Port> {
        self.ports.iter().find(|p| p.name == name)
    }

    pub fn declaration(&self, name: &str) -> Option<&Declaration> {
        self.params
            .iter()
            .chain(&self.declarations)
            .find(|d| d.name == name)
    }

    /// Names of all declared data signals: ports, then non-constant
    /// declarations that do not shadow a port. First occurrence order.
    pub fn signal_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for p in &self.ports {
            if !names.contains(&p.name.as_str()) {
                names.push(&p.name);
            }
        }
        for d in &self.declarations {
            if !d.kind.is_constant() && !names.contains(&d.name.as_str()) {
                names.push(&d.name);
            }
        }
        names
    }

    pub fn constant_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .chain(&self.declarations)
            .filter(|d| d.kind.is_constant())
            .map(|d| d.name.as_str())
            .collect()
    }

    pub fn is_declared(&self, name: &str) -> bool {
        self.port(name).is_some() || self.declaration(name).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DesignAst {
    pub modules: Vec<ModuleDecl>,
    /// Unresolved references, skipped constructs, stripped directives.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Diagnostic>,
}

impl DesignAst {
    pub fn module(&self, name: &str) -> Option<&ModuleDecl> {
        self.modules.iter().find(|m| m.name == name)
    }

    /// Total number of [`AstNode`]s across all modules, including nodes
    /// hanging off ranges and parameter values.
    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }

    /// Pre-order walk over every [`AstNode`] in the unit: module items, then
    /// expression nodes held by ranges and parameter values.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a AstNode)) {
        for m in &self.modules {
            for d in m.params.iter().chain(&m.declarations) {
                walk_decl(d, f);
            }
            for p in &m.ports {
                if let Some(r) = &p.range {
                    r.msb.walk(f);
                    r.lsb.walk(f);
                }
            }
            for item in &m.items {
                item.walk(f);
            }
        }
    }

    /// Walk only module items (statements and their expressions), skipping
    /// declaration headers.
    pub fn walk_items<'a>(&'a self, f: &mut impl FnMut(&'a AstNode)) {
        for m in &self.modules {
            for item in &m.items {
                item.walk(f);
            }
        }
    }

    /// Stable pretty JSON dump of the AST (keys in declaration order,
    /// attribute maps sorted).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("AST serializes")
    }
}

fn walk_decl<'a>(d: &'a Declaration, f: &mut impl FnMut(&'a AstNode)) {
    for r in d.range.iter().chain(&d.array) {
        r.msb.walk(f);
        r.lsb.walk(f);
    }
    if let Some(v) = &d.value {
        v.walk(f);
    }
}
