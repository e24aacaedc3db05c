//! Verilog front end: lexer, parser, AST and printer for the subset needed
//! by the feature extractors.
//!
//! Supported: `module`/`endmodule`, ANSI and non-ANSI port lists,
//! parameters, `wire`/`reg`/`integer` declarations, continuous `assign`,
//! `always` blocks with `posedge`/`negedge`/level sensitivity, `if`/`else`,
//! `case`/`casez`/`casex`, `for`/`while`/`repeat`/`forever` loops, ternary,
//! unary and binary expressions, concatenation and module instantiation.

mod ast;
mod lexer;
mod parser;
mod printer;

pub use ast::{
    AstNode, Declaration, DesignAst, Direction, ModuleDecl, NetKind, NodeKind, Port, Range,
};
pub use lexer::{tokenize, tokenize_tolerant, LexError, Lexed, Token, TokenKind, KEYWORDS};
pub use printer::{expr_to_string, print_design};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// A located warning. Line and column are 0 when no position applies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: u32,
    pub column: u32,
    pub message: String,
}

impl Diagnostic {
    pub fn new(line: u32, column: u32, message: impl Into<String>) -> Self {
        Self {
            line,
            column,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "{}:{}: {}", self.line, self.column, self.message)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    Strict,
    #[default]
    Tolerant,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at line {line}, column {column}: expected {}, found `{found}`", expected.join(" | "))]
pub struct ParseError {
    pub line: u32,
    pub column: u32,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrontendError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Parse a token stream into a design AST.
pub fn parse_source(tokens: &[Token], mode: ParseMode) -> Result<DesignAst, ParseError> {
    parser::Parser::new(tokens, mode).parse_unit()
}

/// Lex and parse source text. Strict mode rejects illegal characters and
/// unsupported constructs; tolerant mode skips them with warnings.
pub fn parse(source: &str, mode: ParseMode) -> Result<DesignAst, FrontendError> {
    let lexed = lexer::lex(source, mode == ParseMode::Strict)?;
    let mut ast = parse_source(&lexed.tokens, mode)?;
    let mut warnings = lexed.warnings;
    warnings.append(&mut ast.warnings);
    ast.warnings = warnings;
    Ok(ast)
}

/// Count of every node kind in the unit (zero entries included). The counts
/// sum to [`DesignAst::node_count`].
pub fn ast_stats(ast: &DesignAst) -> BTreeMap<NodeKind, usize> {
    let mut counts: BTreeMap<NodeKind, usize> = NodeKind::ALL.iter().map(|k| (*k, 0)).collect();
    ast.walk(&mut |n| *counts.entry(n.kind).or_default() += 1);
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "module m(input a, output y); assign y = a; endmodule";

    fn strict(src: &str) -> DesignAst {
        parse(src, ParseMode::Strict).unwrap_or_else(|e| panic!("{e}\n{src}"))
    }

    fn if_depth(n: &AstNode) -> usize {
        let own = usize::from(n.kind == NodeKind::IfStmt);
        own + n.children.iter().map(if_depth).max().unwrap_or(0)
    }

    #[test]
    fn minimal_module() {
        let ast = strict(MINIMAL);
        assert_eq!(ast.modules.len(), 1);
        let m = &ast.modules[0];
        assert_eq!(m.name, "m");
        assert_eq!(m.ports.len(), 2);
        assert_eq!(m.ports[0].direction, Some(Direction::Input));
        assert_eq!(m.items.len(), 1);
        assert_eq!(m.items[0].kind, NodeKind::Assign);
        assert!(ast.warnings.is_empty());
    }

    #[test]
    fn nested_if_chain_has_depth_three() {
        let ast = strict(
            "module m(input a, input b, input c, input clk, output reg x);
               always @(posedge clk) if (a) if (b) if (c) x = 1;
             endmodule",
        );
        let always = &ast.modules[0].items[0];
        assert_eq!(always.kind, NodeKind::AlwaysBlock);
        assert_eq!(always.attr("sensitivity"), Some("posedge clk"));
        assert_eq!(if_depth(always), 3);
        assert_eq!(ast_stats(&ast)[&NodeKind::IfStmt], 3);
    }

    #[test]
    fn malformed_port_list_errors_at_semicolon() {
        let err = parse("module m(; endmodule", ParseMode::Strict).unwrap_err();
        let FrontendError::Parse(e) = err else {
            panic!("expected parse error")
        };
        assert_eq!(e.found, ";");
        assert_eq!((e.line, e.column), (1, 10));
        // Tolerant mode cannot recover a broken header either.
        assert!(parse("module m(; endmodule", ParseMode::Tolerant).is_err());
    }

    #[test]
    fn stats_for_minimal_module() {
        let ast = strict(MINIMAL);
        let stats = ast_stats(&ast);
        assert_eq!(stats[&NodeKind::Assign], 1);
        assert_eq!(stats[&NodeKind::SignalRef], 1);
        assert_eq!(stats[&NodeKind::Target], 1);
        assert_eq!(stats.values().sum::<usize>(), ast.node_count());
        assert_eq!(ast.node_count(), 3);
    }

    #[test]
    fn stats_for_empty_module() {
        let ast = strict("module e; endmodule");
        let stats = ast_stats(&ast);
        assert!(stats
            .iter()
            .filter(|(k, _)| k.is_branching())
            .all(|(_, v)| *v == 0));
        assert_eq!(stats.values().sum::<usize>(), 0);
    }

    #[test]
    fn non_ansi_ports_and_declarations() {
        let ast = strict(
            "module cnt(clk, rst, q);
               parameter W = 4;
               input clk, rst;
               output [W-1:0] q;
               reg [W-1:0] q;
               always @(posedge clk or negedge rst)
                 if (!rst) q <= 0; else q <= q + 1'b1;
             endmodule",
        );
        let m = &ast.modules[0];
        assert!(!m.ansi);
        assert_eq!(m.port("q").unwrap().direction, Some(Direction::Output));
        assert_eq!(m.declaration("W").unwrap().kind, NetKind::Parameter);
        assert_eq!(
            m.items[0].attr("sensitivity"),
            Some("posedge clk or negedge rst")
        );
        assert!(ast.warnings.is_empty(), "{:?}", ast.warnings);
    }

    #[test]
    fn case_loop_ternary_instance() {
        let ast = strict(
            "module top #(parameter N = 8) (input clk, input [1:0] op, input [N-1:0] a, b, output reg [N-1:0] r, output p);
               integer i;
               reg acc;
               wire t = a[0] ^ b[0];
               sub #(.W(N)) u0 (.x(a), .y(), .z(p));
               always @(*) begin
                 case (op)
                   2'b00: r = a + b;
                   2'b01, 2'b10: r = a - b;
                   default: r = {N{1'b0}};
                 endcase
                 acc = 0;
                 for (i = 0; i < N; i = i + 1) acc = acc ^ a[i];
                 r[N-1 -: 2] = t ? {a[1], acc} : b[3:2];
               end
             endmodule",
        );
        let stats = ast_stats(&ast);
        assert_eq!(stats[&NodeKind::CaseStmt], 1);
        assert_eq!(stats[&NodeKind::CaseItem], 3);
        assert_eq!(stats[&NodeKind::Loop], 1);
        assert_eq!(stats[&NodeKind::Ternary], 1);
        assert_eq!(stats[&NodeKind::Instance], 1);
        assert_eq!(stats[&NodeKind::Assign], 1);
        assert_eq!(stats[&NodeKind::Replication], 1);
        // `sub` is not defined here; its ports are not signals of `top`.
        assert!(ast.warnings.is_empty(), "{:?}", ast.warnings);
    }

    #[test]
    fn unresolved_reference_is_a_warning() {
        let ast = strict("module m(output y); assign y = ghost; endmodule");
        assert_eq!(ast.warnings.len(), 1);
        assert!(ast.warnings[0].message.contains("ghost"));
    }

    #[test]
    fn tolerant_mode_skips_unsupported_items() {
        let src = "`timescale 1ns/1ps
            module m(input clk, output reg q);
              initial begin q = 0; $display(\"hi\"); end
              function f; input x; f = x; endfunction
              always @(posedge clk) begin
                $display(\"tick\");
                q <= ~q;
              end
            endmodule";
        assert!(parse(src, ParseMode::Strict).is_err());
        let ast = parse(src, ParseMode::Tolerant).unwrap();
        let m = &ast.modules[0];
        assert_eq!(m.items.len(), 1);
        let stats = ast_stats(&ast);
        assert_eq!(stats[&NodeKind::NonblockingAssign], 1);
        assert!(ast.warnings.len() >= 4);
    }

    #[test]
    fn duplicate_module_names() {
        let src = "module a; endmodule module a; endmodule";
        assert!(parse(src, ParseMode::Strict).is_err());
        let ast = parse(src, ParseMode::Tolerant).unwrap();
        assert_eq!(ast.modules.len(), 1);
    }

    #[test]
    fn garbage_is_a_parse_error_even_when_tolerant() {
        assert!(parse("this is not verilog", ParseMode::Tolerant).is_err());
        assert!(parse("", ParseMode::Strict).unwrap().modules.is_empty());
    }

    #[test]
    fn case_without_items_is_rejected() {
        let src = "module m(input a); always @(*) case (a) endcase endmodule";
        assert!(parse(src, ParseMode::Tolerant).is_err());
    }

    #[test]
    fn json_dump_has_stable_shape() {
        let ast = strict(MINIMAL);
        let json = ast.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let item = &v["modules"][0]["items"][0];
        assert_eq!(item["kind"], "assign");
        assert_eq!(item["children"][1]["kind"], "signal_ref");
        assert_eq!(item["children"][1]["attrs"]["name"], "a");
        assert_eq!(json, strict(MINIMAL).to_json());
    }

    #[test]
    fn print_then_parse_is_identity() {
        let src = "module top #(parameter N = 8, parameter M = 2) (input clk, input [1:0] op, input signed [N-1:0] a, output reg [N-1:0] r);
               localparam K = N * 2;
               reg [7:0] mem [0:15];
               wire w = &a | op[0];
               always @(posedge clk) begin : seq
                 if (op == 2'b11) r <= -a; else if (op[1]) r <= mem[op][3:0]; else begin end
                 casez (op) 2'b1?: r <= {2{a[3:0]}}; default: ; endcase
                 while (r > 0) r <= r >> 1;
               end
               inv u1 (a[0], w);
             endmodule
             module inv(input x, output y); assign y = ~x; endmodule";
        let ast = parse(src, ParseMode::Tolerant).unwrap();
        let printed = print_design(&ast);
        let again = parse(&printed, ParseMode::Strict).unwrap_or_else(|e| panic!("{e}\n{printed}"));
        assert_eq!(ast.modules, again.modules, "\n{printed}");
    }
}
