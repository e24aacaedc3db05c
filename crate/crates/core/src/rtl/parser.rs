//! Recursive descent parser producing a [`DesignAst`].
//!
//! Expressions use precedence climbing. In tolerant mode, module items and
//! statements outside the supported subset are skipped (balanced over
//! `begin`/`end` style brackets) and reported as warnings; in strict mode
//! they are errors.

use std::collections::BTreeSet;

use super::ast::*;
use super::lexer::{Token, TokenKind};
use super::{Diagnostic, ParseError, ParseMode};

pub(crate) struct Parser<'t> {
    toks: &'t [Token],
    pos: usize,
    mode: ParseMode,
    warnings: Vec<Diagnostic>,
}

type PResult<T> = Result<T, ParseError>;

const DIRECTIONS: &[&str] = &["input", "output", "inout"];
const ALWAYS_KEYWORDS: &[&str] = &["always", "always_ff", "always_comb", "always_latch"];
const UNARY_OPS: &[&str] = &["+", "-", "!", "~", "&", "~&", "|", "~|", "^", "~^", "^~"];

fn binary_power(op: &str) -> Option<u8> {
    Some(match op {
        "||" => 2,
        "&&" => 3,
        "|" => 4,
        "^" | "^~" | "~^" => 5,
        "&" => 6,
        "==" | "!=" | "===" | "!==" => 7,
        "<" | "<=" | ">" | ">=" => 8,
        "<<" | ">>" | "<<<" | ">>>" => 9,
        "+" | "-" => 10,
        "*" | "/" | "%" => 11,
        "**" => 12,
        _ => return None,
    })
}

const TERNARY_POWER: u8 = 1;
const UNARY_POWER: u8 = 13;

impl<'t> Parser<'t> {
    pub(crate) fn new(toks: &'t [Token], mode: ParseMode) -> Self {
        Self {
            toks,
            pos: 0,
            mode,
            warnings: Vec::new(),
        }
    }

    // ---- token helpers -------------------------------------------------

    fn peek(&self) -> Option<&'t Token> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, off: usize) -> Option<&'t Token> {
        self.toks.get(self.pos + off)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn next(&mut self) -> Option<&'t Token> {
        let t = self.toks.get(self.pos)?;
        self.pos += 1;
        Some(t)
    }

    fn at_punct(&self, p: &str) -> bool {
        self.peek().is_some_and(|t| t.is_punct(p))
    }

    fn at_op(&self, p: &str) -> bool {
        self.peek().is_some_and(|t| t.is_op(p))
    }

    fn at_kw(&self, k: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(k))
    }

    fn at_any_kw(&self, ks: &[&str]) -> bool {
        self.peek()
            .is_some_and(|t| t.kind == TokenKind::Keyword && ks.contains(&t.text.as_str()))
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.at_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        if self.at_kw(k) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let expected = expected.iter().map(|s| s.to_string()).collect();
        match self.peek() {
            Some(t) => ParseError {
                line: t.line,
                column: t.column,
                expected,
                found: t.text.clone(),
            },
            None => {
                let (line, column) = self
                    .toks
                    .last()
                    .map(|t| (t.line, t.column + t.text.len() as u32))
                    .unwrap_or((1, 1));
                ParseError {
                    line,
                    column,
                    expected,
                    found: "end of input".into(),
                }
            }
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<&'t Token> {
        if self.at_punct(p) {
            Ok(self.next().expect("peeked"))
        } else {
            Err(self.error(&[p]))
        }
    }

    fn expect_op(&mut self, p: &str) -> PResult<&'t Token> {
        if self.at_op(p) {
            Ok(self.next().expect("peeked"))
        } else {
            Err(self.error(&[p]))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<&'t Token> {
        if self.at_kw(k) {
            Ok(self.next().expect("peeked"))
        } else {
            Err(self.error(&[k]))
        }
    }

    fn expect_ident(&mut self) -> PResult<String> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.pos += 1;
                Ok(t.text.clone())
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn warn_at(&mut self, tok: Option<&Token>, message: String) {
        let (line, column) = tok.map(|t| (t.line, t.column)).unwrap_or((1, 1));
        self.warnings.push(Diagnostic::new(line, column, message));
    }

    fn tolerant(&self) -> bool {
        self.mode == ParseMode::Tolerant
    }

    // ---- top level -----------------------------------------------------

    pub(crate) fn parse_unit(mut self) -> PResult<DesignAst> {
        let mut modules: Vec<ModuleDecl> = Vec::new();
        let mut skipped_top = false;
        while !self.at_end() {
            if self.at_kw("module") || self.at_kw("macromodule") {
                let name_tok = self.peek_at(1);
                let m = self.parse_module()?;
                if modules.iter().any(|x| x.name == m.name) {
                    if self.tolerant() {
                        self.warn_at(name_tok, format!("duplicate module `{}` dropped", m.name));
                        continue;
                    }
                    let t = name_tok.expect("module name token");
                    return Err(ParseError {
                        line: t.line,
                        column: t.column,
                        expected: vec!["unique module name".into()],
                        found: m.name,
                    });
                }
                modules.push(m);
            } else if self.tolerant() {
                let t = self.next();
                if !skipped_top {
                    self.warn_at(t, "skipped tokens outside of a module".into());
                    skipped_top = true;
                }
            } else {
                return Err(self.error(&["module"]));
            }
        }
        if modules.is_empty() && !self.toks.is_empty() {
            // Nothing recognisable in a non-empty file.
            self.pos = 0;
            return Err(self.error(&["module"]));
        }
        let mut ast = DesignAst {
            modules,
            warnings: self.warnings,
        };
        check_references(&mut ast);
        Ok(ast)
    }

    fn parse_module(&mut self) -> PResult<ModuleDecl> {
        self.next(); // module
        let name = self.expect_ident()?;
        let mut m = ModuleDecl::new(name);
        if self.eat_punct("#") {
            self.expect_punct("(")?;
            m.params = self.parse_param_header()?;
        }
        if self.eat_punct("(") {
            self.parse_port_list(&mut m)?;
        }
        self.expect_punct(";")?;
        loop {
            if self.eat_kw("endmodule") {
                break;
            }
            if self.at_end() {
                return Err(self.error(&["endmodule"]));
            }
            self.parse_module_item(&mut m)?;
        }
        Ok(m)
    }

    fn parse_param_header(&mut self) -> PResult<Vec<Declaration>> {
        let mut params = Vec::new();
        if self.eat_punct(")") {
            return Ok(params);
        }
        let mut kind = NetKind::Parameter;
        let mut signed = false;
        let mut range = None;
        loop {
            if self.eat_kw("parameter") {
                kind = NetKind::Parameter;
                signed = false;
                range = None;
            } else if self.eat_kw("localparam") {
                kind = NetKind::Localparam;
                signed = false;
                range = None;
            }
            if self.eat_kw("integer") {
                range = None;
            }
            if self.eat_kw("signed") {
                signed = true;
            }
            if self.at_punct("[") {
                range = Some(self.parse_range()?);
            }
            let name = self.expect_ident()?;
            self.expect_op("=")?;
            let value = self.parse_expr()?;
            params.push(Declaration {
                name,
                kind,
                signed,
                range: range.clone(),
                array: None,
                value: Some(value),
            });
            if self.eat_punct(",") {
                continue;
            }
            self.expect_punct(")")?;
            return Ok(params);
        }
    }

    fn parse_port_list(&mut self, m: &mut ModuleDecl) -> PResult<()> {
        if self.eat_punct(")") {
            return Ok(());
        }
        if self.at_any_kw(DIRECTIONS) {
            m.ansi = true;
            let mut current: Option<(Direction, Option<NetKind>, bool, Option<Range>)> = None;
            loop {
                if self.at_any_kw(DIRECTIONS) {
                    let dir = self.parse_direction();
                    let net = self.parse_net_kind();
                    let signed = self.eat_kw("signed");
                    let range = if self.at_punct("[") {
                        Some(self.parse_range()?)
                    } else {
                        None
                    };
                    current = Some((dir, net, signed, range));
                }
                let Some((dir, net, signed, range)) = current.clone() else {
                    return Err(self.error(&["input", "output", "inout"]));
                };
                let name = self.expect_ident()?;
                m.ports.push(Port {
                    name,
                    direction: Some(dir),
                    net,
                    signed,
                    range,
                });
                if self.eat_punct(",") {
                    continue;
                }
                self.expect_punct(")")?;
                return Ok(());
            }
        }
        m.ansi = false;
        loop {
            let name = self.expect_ident()?;
            m.ports.push(Port {
                name,
                direction: None,
                net: None,
                signed: false,
                range: None,
            });
            if self.eat_punct(",") {
                continue;
            }
            self.expect_punct(")")?;
            return Ok(());
        }
    }

    fn parse_direction(&mut self) -> Direction {
        let t = self.next().expect("direction keyword");
        match t.text.as_str() {
            "input" => Direction::Input,
            "output" => Direction::Output,
            _ => Direction::Inout,
        }
    }

    fn parse_net_kind(&mut self) -> Option<NetKind> {
        if self.eat_kw("wire") || self.eat_kw("tri") {
            Some(NetKind::Wire)
        } else if self.eat_kw("reg") {
            Some(NetKind::Reg)
        } else if self.eat_kw("integer") {
            Some(NetKind::Integer)
        } else {
            None
        }
    }

    fn parse_range(&mut self) -> PResult<Range> {
        self.expect_punct("[")?;
        let msb = self.parse_expr()?;
        self.expect_punct(":")?;
        let lsb = self.parse_expr()?;
        self.expect_punct("]")?;
        Ok(Range { msb, lsb })
    }

    // ---- module items --------------------------------------------------

    fn parse_module_item(&mut self, m: &mut ModuleDecl) -> PResult<()> {
        let Some(tok) = self.peek() else {
            return Err(self.error(&["endmodule"]));
        };
        match tok.kind {
            TokenKind::Keyword => match tok.text.as_str() {
                "input" | "output" | "inout" => self.parse_port_decl(m),
                "wire" | "reg" | "integer" | "tri" | "supply0" | "supply1" => {
                    self.parse_net_decl(m)
                }
                "parameter" | "localparam" => self.parse_param_decl(m),
                "genvar" => {
                    self.next();
                    loop {
                        let name = self.expect_ident()?;
                        m.declarations.push(Declaration {
                            name,
                            kind: NetKind::Genvar,
                            signed: false,
                            range: None,
                            array: None,
                            value: None,
                        });
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                    self.expect_punct(";")?;
                    Ok(())
                }
                "assign" => self.parse_continuous_assign(m),
                k if ALWAYS_KEYWORDS.contains(&k) => {
                    let node = self.parse_always()?;
                    m.items.push(node);
                    Ok(())
                }
                _ => self.unsupported_item(),
            },
            TokenKind::Identifier
                if self
                    .peek_at(1)
                    .is_some_and(|t| t.kind == TokenKind::Identifier || t.is_punct("#")) =>
            {
                self.parse_instances(m)
            }
            TokenKind::Punctuation if tok.text == ";" => {
                self.next();
                Ok(())
            }
            _ => self.unsupported_item(),
        }
    }

    fn unsupported_item(&mut self) -> PResult<()> {
        if !self.tolerant() {
            return Err(self.error(&["module item"]));
        }
        let start = self.peek();
        self.warn_at(
            start,
            format!(
                "skipped unsupported module item starting with `{}`",
                start.map(|t| t.text.as_str()).unwrap_or("")
            ),
        );
        self.skip_balanced();
        Ok(())
    }

    /// Skip one construct: up to a `;` at nesting depth zero, or through the
    /// keyword that closes the opener it started with. Stops before
    /// `endmodule`.
    fn skip_balanced(&mut self) {
        let mut depth: i32 = 0;
        let mut consumed = 0usize;
        while let Some(t) = self.peek() {
            if t.is_keyword("endmodule") {
                if consumed == 0 {
                    // Never stall on the closing keyword.
                    self.next();
                }
                return;
            }
            self.next();
            consumed += 1;
            let text = t.text.as_str();
            match t.kind {
                TokenKind::Keyword => match text {
                    "begin" | "case" | "casez" | "casex" | "fork" | "function" | "task"
                    | "generate" | "specify" => depth += 1,
                    "end" | "endcase" | "join" | "endfunction" | "endtask" | "endgenerate"
                    | "endspecify" => {
                        depth -= 1;
                        if depth <= 0 {
                            // `end else ...` continues the construct.
                            if !self.at_kw("else") {
                                return;
                            }
                            depth = 0;
                        }
                    }
                    _ => {}
                },
                TokenKind::Punctuation => match text {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => depth -= 1,
                    ";" if depth <= 0 && !self.at_kw("else") => return,
                    _ => {}
                },
                _ => {}
            }
        }
    }

    fn parse_port_decl(&mut self, m: &mut ModuleDecl) -> PResult<()> {
        let start = self.peek();
        let dir = self.parse_direction();
        let net = self.parse_net_kind();
        let signed = self.eat_kw("signed");
        let range = if self.at_punct("[") {
            Some(self.parse_range()?)
        } else {
            None
        };
        loop {
            let name_tok = self.peek();
            let name = self.expect_ident()?;
            match m.ports.iter_mut().find(|p| p.name == name) {
                Some(p) if !m.ansi => {
                    p.direction = Some(dir);
                    p.net = net;
                    p.signed = signed;
                    p.range = range.clone();
                }
                _ => {
                    if !self.tolerant() {
                        let t = name_tok.expect("port name");
                        return Err(ParseError {
                            line: t.line,
                            column: t.column,
                            expected: vec!["port listed in the module header".into()],
                            found: name,
                        });
                    }
                    self.warn_at(start, format!("port declaration `{name}` ignored"));
                }
            }
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(";")?;
        Ok(())
    }

    fn parse_net_decl(&mut self, m: &mut ModuleDecl) -> PResult<()> {
        let kw = self.next().expect("net keyword");
        let kind = match kw.text.as_str() {
            "reg" => NetKind::Reg,
            "integer" => NetKind::Integer,
            _ => NetKind::Wire,
        };
        let signed = self.eat_kw("signed");
        let range = if self.at_punct("[") {
            Some(self.parse_range()?)
        } else {
            None
        };
        loop {
            let name = self.expect_ident()?;
            let array = if self.at_punct("[") {
                Some(self.parse_range()?)
            } else {
                None
            };
            if self.at_op("=") {
                self.next();
                let value = self.parse_expr()?;
                if kind == NetKind::Wire {
                    // Net declaration assignment.
                    m.items.push(AstNode::new(NodeKind::Assign).with_children(vec![
                        AstNode::new(NodeKind::Target).with_attr("name", name.clone()),
                        value,
                    ]));
                }
                // Variable initializers on reg/integer are simulation-only.
            }
            m.declarations.push(Declaration {
                name,
                kind,
                signed,
                range: range.clone(),
                array,
                value: None,
            });
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(";")?;
        Ok(())
    }

    fn parse_param_decl(&mut self, m: &mut ModuleDecl) -> PResult<()> {
        let kw = self.next().expect("parameter keyword");
        let kind = if kw.text == "localparam" {
            NetKind::Localparam
        } else {
            NetKind::Parameter
        };
        self.eat_kw("integer");
        let signed = self.eat_kw("signed");
        let range = if self.at_punct("[") {
            Some(self.parse_range()?)
        } else {
            None
        };
        loop {
            let name = self.expect_ident()?;
            self.expect_op("=")?;
            let value = self.parse_expr()?;
            m.declarations.push(Declaration {
                name,
                kind,
                signed,
                range: range.clone(),
                array: None,
                value: Some(value),
            });
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(";")?;
        Ok(())
    }

    fn skip_delay(&mut self) -> PResult<()> {
        if self.eat_punct("#") {
            if self.eat_punct("(") {
                self.parse_expr()?;
                self.expect_punct(")")?;
            } else {
                self.parse_primary()?;
            }
        }
        Ok(())
    }

    fn parse_continuous_assign(&mut self, m: &mut ModuleDecl) -> PResult<()> {
        self.next(); // assign
        self.skip_delay()?;
        loop {
            let lhs = self.parse_lvalue()?;
            self.expect_op("=")?;
            let rhs = self.parse_expr()?;
            m.items
                .push(AstNode::new(NodeKind::Assign).with_children(vec![lhs, rhs]));
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(";")?;
        Ok(())
    }

    fn parse_always(&mut self) -> PResult<AstNode> {
        let kw = self.next().expect("always keyword");
        let mut node = AstNode::new(NodeKind::AlwaysBlock).with_attr("always", kw.text.clone());
        if self.at_punct("@") {
            let sens = self.parse_event_control()?;
            node = node.with_attr("sensitivity", sens);
        } else {
            self.skip_delay()?;
        }
        let body = self.parse_stmt_or_empty()?;
        node.children.push(body);
        Ok(node)
    }

    /// Parses `@*`, `@(*)`, `@name` or `@(ev or ev, ...)` and returns the
    /// normalized sensitivity text.
    fn parse_event_control(&mut self) -> PResult<String> {
        self.expect_punct("@")?;
        if self.at_op("*") {
            self.next();
            return Ok("*".into());
        }
        if !self.eat_punct("(") {
            let name = self.expect_ident()?;
            return Ok(name);
        }
        if self.at_op("*") && self.peek_at(1).is_some_and(|t| t.is_punct(")")) {
            self.next();
            self.next();
            return Ok("*".into());
        }
        let mut events = Vec::new();
        loop {
            let edge = if self.eat_kw("posedge") {
                "posedge "
            } else if self.eat_kw("negedge") {
                "negedge "
            } else {
                ""
            };
            let e = self.parse_expr()?;
            events.push(format!("{edge}{}", super::printer::expr_to_string(&e)));
            if self.eat_kw("or") || self.eat_punct(",") {
                continue;
            }
            self.expect_punct(")")?;
            break;
        }
        Ok(events.join(" or "))
    }

    fn parse_instances(&mut self, m: &mut ModuleDecl) -> PResult<()> {
        let module = self.expect_ident()?;
        let mut params = Vec::new();
        if self.eat_punct("#") {
            self.expect_punct("(")?;
            params = self.parse_connections(true)?;
        }
        loop {
            let name = self.expect_ident()?;
            if self.at_punct("[") {
                // Instance arrays are flattened to a single instance.
                self.parse_range()?;
            }
            self.expect_punct("(")?;
            let mut children = params.clone();
            children.extend(self.parse_connections(false)?);
            m.items.push(
                AstNode::new(NodeKind::Instance)
                    .with_attr("module", module.clone())
                    .with_attr("name", name)
                    .with_children(children),
            );
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(";")?;
        Ok(())
    }

    /// Connection list after the opening `(`; consumes the closing `)`.
    fn parse_connections(&mut self, param: bool) -> PResult<Vec<AstNode>> {
        let mut conns = Vec::new();
        if self.eat_punct(")") {
            return Ok(conns);
        }
        loop {
            let mut conn = AstNode::new(NodeKind::PortConn);
            if param {
                conn = conn.with_attr("param", "true");
            }
            if self.eat_punct(".") {
                let port = self.expect_ident()?;
                conn = conn.with_attr("name", port);
                self.expect_punct("(")?;
                if !self.at_punct(")") {
                    conn.children.push(self.parse_expr()?);
                }
                self.expect_punct(")")?;
            } else {
                conn.children.push(self.parse_expr()?);
            }
            conns.push(conn);
            if self.eat_punct(",") {
                continue;
            }
            self.expect_punct(")")?;
            return Ok(conns);
        }
    }

    // ---- statements ----------------------------------------------------

    fn parse_stmt_or_empty(&mut self) -> PResult<AstNode> {
        Ok(self
            .parse_stmt()?
            .unwrap_or_else(|| AstNode::new(NodeKind::Block)))
    }

    /// `None` when an unsupported statement was skipped in tolerant mode.
    fn parse_stmt(&mut self) -> PResult<Option<AstNode>> {
        let Some(tok) = self.peek() else {
            return Err(self.error(&["statement"]));
        };
        match tok.kind {
            TokenKind::Keyword => match tok.text.as_str() {
                "begin" => self.parse_block().map(Some),
                "if" => self.parse_if().map(Some),
                "case" | "casez" | "casex" => self.parse_case().map(Some),
                "for" => self.parse_for().map(Some),
                "while" | "repeat" => {
                    let kw = self.next().expect("loop keyword");
                    self.expect_punct("(")?;
                    let cond = self.parse_expr()?;
                    self.expect_punct(")")?;
                    let body = self.parse_stmt_or_empty()?;
                    Ok(Some(
                        AstNode::new(NodeKind::Loop)
                            .with_attr("loop", kw.text.clone())
                            .with_children(vec![cond, body]),
                    ))
                }
                "forever" => {
                    self.next();
                    let body = self.parse_stmt_or_empty()?;
                    Ok(Some(
                        AstNode::new(NodeKind::Loop)
                            .with_attr("loop", "forever")
                            .with_children(vec![body]),
                    ))
                }
                _ => self.unsupported_stmt(),
            },
            TokenKind::Punctuation if tok.text == ";" => {
                self.next();
                Ok(Some(AstNode::new(NodeKind::Block)))
            }
            TokenKind::Punctuation if tok.text == "#" => {
                self.skip_delay()?;
                self.parse_stmt()
            }
            TokenKind::Punctuation if tok.text == "@" => {
                if !self.tolerant() {
                    return Err(self.error(&["statement"]));
                }
                self.warn_at(Some(tok), "skipped procedural event control".into());
                self.parse_event_control()?;
                self.parse_stmt()
            }
            TokenKind::Identifier if !tok.text.starts_with('$') => {
                // Assignment, or a task call we do not model.
                let save = self.pos;
                match self.parse_assignment() {
                    Ok(node) => {
                        self.expect_punct(";")?;
                        Ok(Some(node))
                    }
                    Err(e) => {
                        if !self.tolerant() {
                            return Err(e);
                        }
                        self.pos = save;
                        self.unsupported_stmt()
                    }
                }
            }
            TokenKind::Punctuation if tok.text == "{" => {
                let node = self.parse_assignment()?;
                self.expect_punct(";")?;
                Ok(Some(node))
            }
            _ => self.unsupported_stmt(),
        }
    }

    fn unsupported_stmt(&mut self) -> PResult<Option<AstNode>> {
        if !self.tolerant() {
            return Err(self.error(&["statement"]));
        }
        let start = self.peek();
        if start.is_some_and(|t| t.is_keyword("end") || t.is_keyword("endmodule")) {
            return Err(self.error(&["statement"]));
        }
        self.warn_at(
            start,
            format!(
                "skipped unsupported statement starting with `{}`",
                start.map(|t| t.text.as_str()).unwrap_or("")
            ),
        );
        self.skip_balanced();
        Ok(None)
    }

    fn parse_assignment(&mut self) -> PResult<AstNode> {
        let lhs = self.parse_lvalue()?;
        let kind = if self.at_op("=") {
            NodeKind::BlockingAssign
        } else if self.at_op("<=") {
            NodeKind::NonblockingAssign
        } else {
            return Err(self.error(&["=", "<="]));
        };
        self.next();
        self.skip_delay()?;
        let rhs = self.parse_expr()?;
        Ok(AstNode::new(kind).with_children(vec![lhs, rhs]))
    }

    fn parse_block(&mut self) -> PResult<AstNode> {
        self.expect_kw("begin")?;
        let mut node = AstNode::new(NodeKind::Block);
        if self.eat_punct(":") {
            let label = self.expect_ident()?;
            node = node.with_attr("label", label);
        }
        loop {
            if self.eat_kw("end") {
                if self.at_punct(":") {
                    self.next();
                    self.expect_ident()?;
                }
                return Ok(node);
            }
            if self.at_end() {
                return Err(self.error(&["end"]));
            }
            if let Some(s) = self.parse_stmt()? {
                node.children.push(s);
            }
        }
    }

    fn parse_if(&mut self) -> PResult<AstNode> {
        self.expect_kw("if")?;
        self.expect_punct("(")?;
        let cond = self.parse_expr()?;
        self.expect_punct(")")?;
        let then = self.parse_stmt_or_empty()?;
        let mut children = vec![cond, then];
        if self.eat_kw("else") {
            children.push(self.parse_stmt_or_empty()?);
        }
        Ok(AstNode::new(NodeKind::IfStmt).with_children(children))
    }

    fn parse_case(&mut self) -> PResult<AstNode> {
        let kw = self.next().expect("case keyword");
        self.expect_punct("(")?;
        let subject = self.parse_expr()?;
        self.expect_punct(")")?;
        let mut node = AstNode::new(NodeKind::CaseStmt)
            .with_attr("case", kw.text.clone())
            .with_children(vec![subject]);
        loop {
            if self.at_kw("endcase") {
                if node.children.len() == 1 {
                    return Err(self.error(&["case item"]));
                }
                self.next();
                return Ok(node);
            }
            if self.at_end() {
                return Err(self.error(&["endcase"]));
            }
            let mut item = AstNode::new(NodeKind::CaseItem);
            if self.eat_kw("default") {
                item = item.with_attr("default", "true");
                self.eat_punct(":");
            } else {
                loop {
                    item.children.push(self.parse_expr()?);
                    if !self.eat_punct(",") {
                        break;
                    }
                }
                self.expect_punct(":")?;
            }
            item.children.push(self.parse_stmt_or_empty()?);
            node.children.push(item);
        }
    }

    fn parse_for(&mut self) -> PResult<AstNode> {
        self.expect_kw("for")?;
        self.expect_punct("(")?;
        let init = self.parse_assignment()?;
        self.expect_punct(";")?;
        let cond = self.parse_expr()?;
        self.expect_punct(";")?;
        let step = self.parse_assignment()?;
        self.expect_punct(")")?;
        let body = self.parse_stmt_or_empty()?;
        Ok(AstNode::new(NodeKind::Loop)
            .with_attr("loop", "for")
            .with_children(vec![init, cond, step, body]))
    }

    // ---- expressions ---------------------------------------------------

    fn parse_lvalue(&mut self) -> PResult<AstNode> {
        if self.eat_punct("{") {
            let mut parts = Vec::new();
            loop {
                parts.push(self.parse_lvalue()?);
                if self.eat_punct(",") {
                    continue;
                }
                self.expect_punct("}")?;
                return Ok(AstNode::new(NodeKind::Concat).with_children(parts));
            }
        }
        let name = self.expect_ident()?;
        let node = AstNode::new(NodeKind::Target).with_attr("name", name);
        self.parse_selects(node)
    }

    fn parse_selects(&mut self, mut node: AstNode) -> PResult<AstNode> {
        let mut kinds: Vec<&str> = Vec::new();
        while self.eat_punct("[") {
            let first = self.parse_expr()?;
            if self.eat_punct(":") {
                let second = self.parse_expr()?;
                node.children.push(first);
                node.children.push(second);
                kinds.push("part");
            } else if self.at_op("+") || self.at_op("-") {
                // Indexed part-select `[base +: width]`.
                let sign = self.next().expect("sign").text.clone();
                self.expect_punct(":")?;
                let width = self.parse_expr()?;
                node.children.push(first);
                node.children.push(width);
                kinds.push(if sign == "+" { "plus" } else { "minus" });
            } else {
                node.children.push(first);
                kinds.push("bit");
            }
            self.expect_punct("]")?;
        }
        if !kinds.is_empty() {
            node = node.with_attr("select", kinds.join(","));
        }
        Ok(node)
    }

    pub(crate) fn parse_expr(&mut self) -> PResult<AstNode> {
        self.parse_expr_bp(0)
    }

    fn parse_expr_bp(&mut self, min_bp: u8) -> PResult<AstNode> {
        let mut lhs = self.parse_unary()?;
        while let Some(tok) = self.peek() {
            if tok.kind != TokenKind::Operator {
                break;
            }
            if tok.text == "?" {
                if TERNARY_POWER < min_bp {
                    break;
                }
                self.next();
                let then = self.parse_expr_bp(0)?;
                self.expect_punct(":")?;
                // Right associative.
                let other = self.parse_expr_bp(TERNARY_POWER)?;
                lhs = AstNode::new(NodeKind::Ternary).with_children(vec![lhs, then, other]);
                continue;
            }
            if (tok.text == "+" || tok.text == "-")
                && self.peek_at(1).is_some_and(|t| t.is_punct(":"))
            {
                // `[base +: width]`
                break;
            }
            let Some(bp) = binary_power(&tok.text) else { break };
            if bp <= min_bp {
                break;
            }
            self.next();
            let rhs = self.parse_expr_bp(bp)?;
            lhs = AstNode::new(NodeKind::BinaryOp)
                .with_attr("op", tok.text.clone())
                .with_children(vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> PResult<AstNode> {
        if let Some(tok) = self.peek() {
            if tok.kind == TokenKind::Operator && UNARY_OPS.contains(&tok.text.as_str()) {
                self.next();
                let operand = self.parse_expr_bp(UNARY_POWER)?;
                return Ok(AstNode::new(NodeKind::UnaryOp)
                    .with_attr("op", tok.text.clone())
                    .with_children(vec![operand]));
            }
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> PResult<AstNode> {
        let Some(tok) = self.peek() else {
            return Err(self.error(&["expression"]));
        };
        match tok.kind {
            TokenKind::Number => {
                self.next();
                Ok(AstNode::new(NodeKind::Literal).with_attr("value", tok.text.clone()))
            }
            TokenKind::Identifier => {
                self.next();
                if self.at_punct("(") {
                    self.next();
                    let mut args = Vec::new();
                    if !self.eat_punct(")") {
                        loop {
                            args.push(self.parse_expr()?);
                            if self.eat_punct(",") {
                                continue;
                            }
                            self.expect_punct(")")?;
                            break;
                        }
                    }
                    return Ok(AstNode::new(NodeKind::Call)
                        .with_attr("name", tok.text.clone())
                        .with_children(args));
                }
                if tok.text.starts_with('$') {
                    // `$time` and friends without arguments.
                    return Ok(AstNode::new(NodeKind::Literal).with_attr("value", tok.text.clone()));
                }
                let node = AstNode::new(NodeKind::SignalRef).with_attr("name", tok.text.clone());
                self.parse_selects(node)
            }
            TokenKind::Punctuation if tok.text == "(" => {
                self.next();
                let e = self.parse_expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            TokenKind::Punctuation if tok.text == "{" => {
                self.next();
                let first = self.parse_expr()?;
                if self.at_punct("{") {
                    self.next();
                    let mut parts = Vec::new();
                    loop {
                        parts.push(self.parse_expr()?);
                        if self.eat_punct(",") {
                            continue;
                        }
                        self.expect_punct("}")?;
                        break;
                    }
                    self.expect_punct("}")?;
                    let inner = AstNode::new(NodeKind::Concat).with_children(parts);
                    return Ok(AstNode::new(NodeKind::Replication).with_children(vec![first, inner]));
                }
                let mut parts = vec![first];
                while self.eat_punct(",") {
                    parts.push(self.parse_expr()?);
                }
                self.expect_punct("}")?;
                Ok(AstNode::new(NodeKind::Concat).with_children(parts))
            }
            _ => Err(self.error(&["expression"])),
        }
    }
}

/// Record a warning for every read or written name that is not declared in
/// its module. Function-call names are not signals and are ignored.
fn check_references(ast: &mut DesignAst) {
    let mut warnings = Vec::new();
    for m in &ast.modules {
        let mut seen = BTreeSet::new();
        for item in &m.items {
            item.walk(&mut |n| {
                if matches!(n.kind, NodeKind::SignalRef | NodeKind::Target) {
                    if let Some(name) = n.attr("name") {
                        if !m.is_declared(name) && seen.insert(name.to_string()) {
                            warnings.push(Diagnostic::new(
                                0,
                                0,
                                format!("unresolved reference `{name}` in module `{}`", m.name),
                            ));
                        }
                    }
                }
            });
        }
    }
    ast.warnings.extend(warnings);
}
