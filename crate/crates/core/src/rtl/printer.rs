//! Verilog pretty-printer for [`DesignAst`].
//!
//! Binary operators are always parenthesized, so re-parsing the output
//! reproduces the tree exactly.

use std::fmt::Write;

use super::ast::*;

pub fn print_design(ast: &DesignAst) -> String {
    let mut out = String::new();
    for (i, m) in ast.modules.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_module(&mut out, m);
    }
    out
}

fn range_str(r: &Option<Range>) -> String {
    match r {
        Some(r) => format!(
            " [{}:{}]",
            expr_to_string(&r.msb),
            expr_to_string(&r.lsb)
        ),
        None => String::new(),
    }
}

fn param_str(d: &Declaration) -> String {
    let mut s = String::from(d.kind.keyword());
    if d.signed {
        s.push_str(" signed");
    }
    s.push_str(&range_str(&d.range));
    let value = d.value.as_ref().map(expr_to_string).unwrap_or_default();
    let _ = write!(s, " {} = {}", d.name, value);
    s
}

fn port_head(p: &Port) -> String {
    let mut s = String::from(p.direction.map(Direction::keyword).unwrap_or("input"));
    if let Some(net) = p.net {
        s.push(' ');
        s.push_str(net.keyword());
    }
    if p.signed {
        s.push_str(" signed");
    }
    s.push_str(&range_str(&p.range));
    s
}

fn print_module(out: &mut String, m: &ModuleDecl) {
    let _ = write!(out, "module {}", m.name);
    if !m.params.is_empty() {
        let ps: Vec<String> = m.params.iter().map(param_str).collect();
        let _ = write!(out, " #({})", ps.join(", "));
    }
    if m.ansi {
        let ps: Vec<String> = m
            .ports
            .iter()
            .map(|p| format!("{} {}", port_head(p), p.name))
            .collect();
        let _ = writeln!(out, "({});", ps.join(", "));
    } else {
        let ps: Vec<&str> = m.ports.iter().map(|p| p.name.as_str()).collect();
        let _ = writeln!(out, "({});", ps.join(", "));
        for p in &m.ports {
            if p.direction.is_some() {
                let _ = writeln!(out, "  {} {};", port_head(p), p.name);
            }
        }
    }
    for d in &m.declarations {
        if d.kind.is_constant() && d.kind != NetKind::Genvar {
            let _ = writeln!(out, "  {};", param_str(d));
        } else {
            let mut s = String::from(d.kind.keyword());
            if d.signed {
                s.push_str(" signed");
            }
            s.push_str(&range_str(&d.range));
            let _ = write!(s, " {}", d.name);
            s.push_str(&range_str(&d.array));
            let _ = writeln!(out, "  {s};");
        }
    }
    for item in &m.items {
        print_item(out, item);
    }
    out.push_str("endmodule\n");
}

fn print_item(out: &mut String, n: &AstNode) {
    match n.kind {
        NodeKind::Assign => {
            let _ = writeln!(
                out,
                "  assign {} = {};",
                expr_to_string(&n.children[0]),
                expr_to_string(&n.children[1])
            );
        }
        NodeKind::AlwaysBlock => {
            let kw = n.attr("always").unwrap_or("always");
            let _ = write!(out, "  {kw}");
            if let Some(s) = n.attr("sensitivity") {
                if s == "*" {
                    out.push_str(" @(*)");
                } else {
                    let _ = write!(out, " @({s})");
                }
            }
            out.push('\n');
            print_stmt(out, &n.children[0], 2);
        }
        NodeKind::Instance => {
            let params: Vec<&AstNode> = n
                .children
                .iter()
                .filter(|c| c.attr("param").is_some())
                .collect();
            let conns: Vec<&AstNode> = n
                .children
                .iter()
                .filter(|c| c.attr("param").is_none())
                .collect();
            let _ = write!(out, "  {}", n.attr("module").unwrap_or(""));
            if !params.is_empty() {
                let ps: Vec<String> = params.iter().map(|c| conn_str(c)).collect();
                let _ = write!(out, " #({})", ps.join(", "));
            }
            let cs: Vec<String> = conns.iter().map(|c| conn_str(c)).collect();
            let _ = writeln!(out, " {} ({});", n.attr("name").unwrap_or(""), cs.join(", "));
        }
        _ => print_stmt(out, n, 1),
    }
}

fn conn_str(c: &AstNode) -> String {
    let inner = c.children.first().map(expr_to_string).unwrap_or_default();
    match c.attr("name") {
        Some(name) => format!(".{name}({inner})"),
        None => inner,
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn print_stmt(out: &mut String, n: &AstNode, level: usize) {
    match n.kind {
        NodeKind::Block => {
            indent(out, level);
            out.push_str("begin");
            if let Some(l) = n.attr("label") {
                let _ = write!(out, " : {l}");
            }
            out.push('\n');
            for c in &n.children {
                print_stmt(out, c, level + 1);
            }
            indent(out, level);
            out.push_str("end\n");
        }
        NodeKind::IfStmt => {
            indent(out, level);
            let _ = writeln!(out, "if ({})", expr_to_string(&n.children[0]));
            print_stmt(out, &n.children[1], level + 1);
            if let Some(e) = n.children.get(2) {
                indent(out, level);
                out.push_str("else\n");
                print_stmt(out, e, level + 1);
            }
        }
        NodeKind::CaseStmt => {
            indent(out, level);
            let kw = n.attr("case").unwrap_or("case");
            let _ = writeln!(out, "{kw} ({})", expr_to_string(&n.children[0]));
            for item in &n.children[1..] {
                indent(out, level + 1);
                let (labels, body) = item.children.split_at(item.children.len() - 1);
                if item.attr("default").is_some() {
                    out.push_str("default:\n");
                } else {
                    let ls: Vec<String> = labels.iter().map(expr_to_string).collect();
                    let _ = writeln!(out, "{}:", ls.join(", "));
                }
                print_stmt(out, &body[0], level + 2);
            }
            indent(out, level);
            out.push_str("endcase\n");
        }
        NodeKind::Loop => {
            indent(out, level);
            match n.attr("loop").unwrap_or("for") {
                "for" => {
                    let _ = writeln!(
                        out,
                        "for ({}; {}; {})",
                        assign_str(&n.children[0]),
                        expr_to_string(&n.children[1]),
                        assign_str(&n.children[2])
                    );
                    print_stmt(out, &n.children[3], level + 1);
                }
                "forever" => {
                    out.push_str("forever\n");
                    print_stmt(out, &n.children[0], level + 1);
                }
                kw => {
                    let _ = writeln!(out, "{kw} ({})", expr_to_string(&n.children[0]));
                    print_stmt(out, &n.children[1], level + 1);
                }
            }
        }
        NodeKind::BlockingAssign | NodeKind::NonblockingAssign => {
            indent(out, level);
            let _ = writeln!(out, "{};", assign_str(n));
        }
        _ => {
            indent(out, level);
            let _ = writeln!(out, "// unprintable {}", n.kind);
        }
    }
}

fn assign_str(n: &AstNode) -> String {
    let op = if n.kind == NodeKind::NonblockingAssign {
        "<="
    } else {
        "="
    };
    format!(
        "{} {op} {}",
        expr_to_string(&n.children[0]),
        expr_to_string(&n.children[1])
    )
}

fn selects_str(n: &AstNode) -> String {
    let Some(kinds) = n.attr("select") else {
        return String::new();
    };
    let mut s = String::new();
    let mut idx = n.children.iter();
    for kind in kinds.split(',') {
        match kind {
            "bit" => {
                let i = idx.next().map(expr_to_string).unwrap_or_default();
                let _ = write!(s, "[{i}]");
            }
            k => {
                let a = idx.next().map(expr_to_string).unwrap_or_default();
                let b = idx.next().map(expr_to_string).unwrap_or_default();
                let sep = match k {
                    "plus" => " +: ",
                    "minus" => " -: ",
                    _ => ":",
                };
                let _ = write!(s, "[{a}{sep}{b}]");
            }
        }
    }
    s
}

/// Render an expression (or assignment target) as Verilog text.
pub fn expr_to_string(n: &AstNode) -> String {
    match n.kind {
        NodeKind::Literal => n.attr("value").unwrap_or("0").to_string(),
        NodeKind::SignalRef | NodeKind::Target => {
            format!("{}{}", n.attr("name").unwrap_or(""), selects_str(n))
        }
        NodeKind::BinaryOp => format!(
            "({} {} {})",
            expr_to_string(&n.children[0]),
            n.attr("op").unwrap_or("?"),
            expr_to_string(&n.children[1])
        ),
        NodeKind::UnaryOp => format!(
            "{}({})",
            n.attr("op").unwrap_or(""),
            expr_to_string(&n.children[0])
        ),
        NodeKind::Ternary => format!(
            "({} ? {} : {})",
            expr_to_string(&n.children[0]),
            expr_to_string(&n.children[1]),
            expr_to_string(&n.children[2])
        ),
        NodeKind::Concat => {
            let parts: Vec<String> = n.children.iter().map(expr_to_string).collect();
            format!("{{{}}}", parts.join(", "))
        }
        NodeKind::Replication => format!(
            "{{{}{}}}",
            expr_to_string(&n.children[0]),
            expr_to_string(&n.children[1])
        ),
        NodeKind::Call => {
            let args: Vec<String> = n.children.iter().map(expr_to_string).collect();
            format!("{}({})", n.attr("name").unwrap_or(""), args.join(", "))
        }
        _ => String::new(),
    }
}
