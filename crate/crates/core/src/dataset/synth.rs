//! Seeded synthetic Verilog corpus with planted trigger idioms.
//!
//! Trojan-free designs are random compositions of ordinary blocks
//! (counters, case ALUs, FSMs, shift registers, loops, muxes, helper
//! instances). Some carry benign comparator logic so the classes overlap.
//! Trojan-infected designs add one or two trigger/payload idioms: a
//! rare-value comparator or counter that gates an extra payload assignment.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write;

use super::{ClassLabel, Dataset, LabeledSample, Modality};
use crate::features::{
    build_dataflow_graph, extract_branching_features, extract_graph_features, GRAPH_SLOTS,
    TABULAR_SLOTS,
};
use crate::rtl::{parse, ParseMode};
use crate::seed::{derive_seed, rng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthDesign {
    pub design_id: String,
    pub label: ClassLabel,
    pub source: String,
}

struct Gen {
    rng: ChaCha8Rng,
    width: usize,
    ports: Vec<String>,
    decls: Vec<String>,
    body: Vec<String>,
    helpers: Vec<String>,
    data: Vec<String>,
    n: usize,
}

impl Gen {
    fn id(&mut self, stem: &str) -> String {
        self.n += 1;
        format!("{stem}{}", self.n)
    }

    fn pick(&mut self) -> String {
        self.data.choose(&mut self.rng).cloned().unwrap_or_default()
    }

    fn bit(&mut self) -> String {
        let s = self.pick();
        let i = self.rng.random_range(0..self.width);
        format!("{s}[{i}]")
    }

    fn hex(&mut self, bits: usize) -> String {
        let v: u64 = self.rng.random::<u64>() & ((1u64 << bits) - 1);
        format!("{bits}'h{v:X}")
    }

    fn w(&self) -> String {
        format!("[{}:0]", self.width - 1)
    }

    fn counter(&mut self) {
        let c = self.id("cnt");
        let w = self.w();
        self.ports.push(format!("output reg {w} {c}"));
        let en = self.bit();
        let mut s = format!("  always @(posedge clk) begin\n    if (rst) {c} <= 0;\n");
        if self.rng.random_bool(0.5) {
            let _ = writeln!(s, "    else if ({en}) {c} <= {c} + 1;");
        } else {
            let _ = writeln!(s, "    else {c} <= {c} + 1;");
        }
        s.push_str("  end");
        self.body.push(s);
    }

    fn alu(&mut self) {
        let op = self.id("op");
        let r = self.id("alu");
        let bits = self.rng.random_range(2..=3);
        let w = self.w();
        self.ports.push(format!("input [{}:0] {op}", bits - 1));
        self.ports.push(format!("output reg {w} {r}"));
        let items = self.rng.random_range(2..(1 << bits));
        let mut s = format!("  always @(*) begin\n    case ({op})\n");
        let ops = ["+", "-", "&", "|", "^"];
        for k in 0..items {
            let (a, b) = (self.pick(), self.pick());
            let o = ops[self.rng.random_range(0..ops.len())];
            let _ = writeln!(s, "      {bits}'d{k}: {r} = {a} {o} {b};");
        }
        let a = self.pick();
        let _ = writeln!(s, "      default: {r} = {a};");
        s.push_str("    endcase\n  end");
        self.body.push(s);
    }

    fn fsm(&mut self) {
        let st = self.id("st");
        let busy = self.id("busy");
        self.decls.push(format!("reg [1:0] {st};"));
        self.ports.push(format!("output {busy}"));
        let (x, y) = (self.bit(), self.bit());
        let mut s = format!("  always @(posedge clk) begin\n    if (rst) {st} <= 2'd0;\n    else case ({st})\n");
        let _ = writeln!(s, "      2'd0: if ({x}) {st} <= 2'd1;");
        let _ = writeln!(s, "      2'd1: {st} <= 2'd2;");
        let _ = writeln!(s, "      2'd2: if ({y}) {st} <= 2'd0; else {st} <= 2'd3;");
        let _ = writeln!(s, "      default: {st} <= 2'd0;");
        s.push_str("    endcase\n  end");
        self.body.push(s);
        self.body.push(format!("  assign {busy} = ({st} != 2'd0);"));
    }

    fn shift(&mut self) {
        let sr = self.id("sr");
        let so = self.id("so");
        let depth = self.rng.random_range(3..9);
        self.decls.push(format!("reg [{}:0] {sr};", depth - 1));
        self.ports.push(format!("output {so}"));
        let b = self.bit();
        self.body.push(format!(
            "  always @(posedge clk) {sr} <= {{{sr}[{}:0], {b}}};",
            depth - 2
        ));
        self.body.push(format!("  assign {so} = {sr}[{}];", depth - 1));
    }

    fn parity(&mut self) {
        let p = self.id("par");
        let i = self.id("i");
        let a = self.pick();
        self.decls.push(format!("integer {i};"));
        self.ports.push(format!("output reg {p}"));
        self.body.push(format!(
            "  always @(*) begin\n    {p} = 0;\n    for ({i} = 0; {i} < {w}; {i} = {i} + 1) {p} = {p} ^ {a}[{i}];\n  end",
            w = self.width
        ));
    }

    fn mux(&mut self) {
        let m = self.id("m");
        let w = self.w();
        self.ports.push(format!("output {w} {m}"));
        let sel = self.bit();
        let (a, b, c) = (self.pick(), self.pick(), self.pick());
        self.body.push(format!("  assign {m} = {sel} ? {a} : ({b} & {c});"));
    }

    fn datapath(&mut self) {
        let s = self.id("s");
        let w = self.w();
        self.ports.push(format!("output {w} {s}"));
        let (a, b, c) = (self.pick(), self.pick(), self.pick());
        let k = self.rng.random_range(1..4);
        self.body.push(format!("  assign {s} = ({a} + {b}) ^ ({c} >> {k});"));
    }

    fn helper(&mut self) {
        let name = self.id("helper");
        let u = self.id("u");
        let out = self.id("h");
        let w = self.w();
        self.helpers.push(format!(
            "module {name}(input {w} x, input {w} y, output {w} z);\n  assign z = x ^ ~y;\nendmodule\n"
        ));
        self.ports.push(format!("output {w} {out}"));
        let (a, b) = (self.pick(), self.pick());
        self.body.push(format!("  {name} {u} (.x({a}), .y({b}), .z({out}));"));
    }

    /// Benign comparator logic that resembles a trigger.
    fn decoy(&mut self) {
        let f = self.id("flag");
        self.ports.push(format!("output reg {f}"));
        let a = self.pick();
        let k = self.hex(self.width.min(8));
        self.body.push(format!(
            "  always @(posedge clk) begin\n    if (rst) {f} <= 0;\n    else if ({a}[{}:0] == {k}) {f} <= 1;\n  end",
            self.width.min(8) - 1
        ));
    }

    fn trojan_comparator(&mut self) {
        let trig = self.id("trig");
        let leak = self.id("leak");
        let w = self.w();
        let (a, b) = (self.pick(), self.pick());
        let k1 = self.hex(self.width);
        let k2 = self.hex(4);
        self.decls.push(format!("wire {trig};"));
        self.ports.push(format!("output {w} {leak}"));
        self.body.push(format!(
            "  assign {trig} = ({a} == {k1}) && ({b}[3:0] == {k2});"
        ));
        let secret = self.pick();
        self.body.push(format!("  assign {leak} = {trig} ? ~{secret} : {secret};"));
    }

    fn trojan_timebomb(&mut self) {
        let tc = self.id("tc");
        let armed = self.id("armed");
        let leak = self.id("leak");
        self.decls.push(format!("reg [15:0] {tc};"));
        self.decls.push(format!("reg {armed};"));
        self.ports.push(format!("output reg {leak}"));
        let a = self.pick();
        let k = self.hex(self.width);
        let limit = self.hex(16);
        let b = self.bit();
        self.body.push(format!(
            "  always @(posedge clk) begin\n    if (rst) begin\n      {tc} <= 0;\n      {armed} <= 0;\n    end else begin\n      if ({a} == {k}) {tc} <= {tc} + 1;\n      if ({tc} == {limit}) {armed} <= 1;\n    end\n  end"
        ));
        self.body.push(format!(
            "  always @(posedge clk) if ({armed}) {leak} <= {b}; else {leak} <= 0;"
        ));
    }

    fn trojan_sequence(&mut self) {
        let st = self.id("seq");
        let hit = self.id("hit");
        let leak = self.id("leak");
        let w = self.w();
        self.decls.push(format!("reg [1:0] {st};"));
        self.decls.push(format!("wire {hit};"));
        self.ports.push(format!("output {w} {leak}"));
        let a = self.pick();
        let (k0, k1, k2) = (self.hex(self.width), self.hex(self.width), self.hex(self.width));
        self.body.push(format!(
            "  always @(posedge clk) begin\n    if (rst) {st} <= 2'd0;\n    else case ({st})\n      2'd0: if ({a} == {k0}) {st} <= 2'd1;\n      2'd1: if ({a} == {k1}) {st} <= 2'd2; else {st} <= 2'd0;\n      2'd2: if ({a} == {k2}) {st} <= 2'd3; else {st} <= 2'd0;\n      default: {st} <= {st};\n    endcase\n  end"
        ));
        self.body.push(format!("  assign {hit} = ({st} == 2'd3);"));
        let (x, y) = (self.pick(), self.pick());
        self.body.push(format!("  assign {leak} = {hit} ? ({x} ^ {y}) : {x};"));
    }

    fn render(&self, name: &str) -> String {
        let mut s = String::new();
        for h in &self.helpers {
            s.push_str(h);
            s.push('\n');
        }
        let _ = writeln!(s, "module {name}(");
        let ports: Vec<String> = self.ports.iter().map(|p| format!("  {p}")).collect();
        let _ = writeln!(s, "{}\n);", ports.join(",\n"));
        for d in &self.decls {
            let _ = writeln!(s, "  {d}");
        }
        for b in &self.body {
            let _ = writeln!(s, "{b}");
        }
        s.push_str("endmodule\n");
        s
    }
}

fn design(seed: u64, name: &str, trojan: bool) -> String {
    let mut r = rng(seed);
    let width = [4usize, 8, 8, 16][r.random_range(0..4)];
    let n_data = r.random_range(2..5);
    let mut g = Gen {
        rng: r,
        width,
        ports: vec!["input clk".into(), "input rst".into()],
        decls: Vec::new(),
        body: Vec::new(),
        helpers: Vec::new(),
        data: Vec::new(),
        n: 0,
    };
    for _ in 0..n_data {
        let d = g.id("d");
        g.ports.push(format!("input [{}:0] {d}", width - 1));
        g.data.push(d);
    }
    let blocks = g.rng.random_range(2..7);
    for _ in 0..blocks {
        match g.rng.random_range(0..8) {
            0 => g.counter(),
            1 => g.alu(),
            2 => g.fsm(),
            3 => g.shift(),
            4 => g.parity(),
            5 => g.mux(),
            6 => g.datapath(),
            _ => g.helper(),
        }
    }
    if g.rng.random_bool(0.3) {
        g.decoy();
    }
    if trojan {
        let idioms = if g.rng.random_bool(0.25) { 2 } else { 1 };
        for _ in 0..idioms {
            match g.rng.random_range(0..3) {
                0 => g.trojan_comparator(),
                1 => g.trojan_timebomb(),
                _ => g.trojan_sequence(),
            }
        }
    }
    g.render(name)
}

/// Generate `n_designs` Verilog sources, `round(n_designs * trojan_rate)` of
/// them (at least one of each class) with a planted trigger, and featurize
/// them into a two-modality dataset.
///
/// # Panics
///
/// Panics if `n_designs < 2` or `trojan_rate` is outside (0, 1).
pub fn synth_generate(n_designs: usize, trojan_rate: f64, seed: u64) -> (Vec<SynthDesign>, Dataset) {
    assert!(n_designs >= 2, "need at least two designs");
    assert!(trojan_rate > 0.0 && trojan_rate < 1.0, "trojan_rate must be in (0, 1)");
    let n_ti = ((n_designs as f64 * trojan_rate).round() as usize).clamp(1, n_designs - 1);
    let mut order: Vec<usize> = (0..n_designs).collect();
    order.shuffle(&mut rng(derive_seed(seed, "synth-labels")));
    let mut is_ti = vec![false; n_designs];
    for &i in &order[..n_ti] {
        is_ti[i] = true;
    }
    let mut designs = Vec::with_capacity(n_designs);
    let mut d = Dataset::new(BTreeMap::from([
        (Modality::Tabular, TABULAR_SLOTS.len()),
        (Modality::Graph, GRAPH_SLOTS.len()),
    ]));
    for (i, &ti) in is_ti.iter().enumerate() {
        let design_id = format!("design_{i:04}");
        let source = design(derive_seed(seed, &design_id), &design_id, ti);
        let ast = parse(&source, ParseMode::Strict)
            .unwrap_or_else(|e| panic!("generated design does not parse: {e}\n{source}"));
        let label = if ti { ClassLabel::TI } else { ClassLabel::TF };
        let tab = extract_branching_features(&ast).to_vec();
        let graph = extract_graph_features(&build_dataflow_graph(&ast).0).to_vec();
        d.push(
            LabeledSample::new(design_id.clone(), label)
                .with(Modality::Tabular, tab)
                .with(Modality::Graph, graph),
        )
        .expect("generated ids are unique");
        designs.push(SynthDesign {
            design_id,
            label,
            source,
        });
    }
    (designs, d)
}

/// Numeric two-modality dataset where each modality sees the label through
/// its own independent noise. The first `informative` slots of each
/// modality are shifted by ±`shift`/2 with the label; the rest is noise.
/// Labels alternate, so the classes are balanced.
pub fn synth_partial_signal(n: usize, shift: f64, informative: usize, seed: u64) -> Dataset {
    let normal = rand_distr::StandardNormal;
    let mut r = rng(derive_seed(seed, "partial-signal"));
    let mut d = Dataset::new(BTreeMap::from([
        (Modality::Tabular, TABULAR_SLOTS.len()),
        (Modality::Graph, GRAPH_SLOTS.len()),
    ]));
    for i in 0..n {
        let label = ClassLabel::from_index(i % 2);
        let sign = if label == ClassLabel::TI { 0.5 } else { -0.5 };
        let mut draw = |width: usize| -> Vec<f64> {
            (0..width)
                .map(|k| {
                    let z: f64 = r.sample(normal);
                    if k < informative {
                        z + sign * shift
                    } else {
                        z
                    }
                })
                .collect()
        };
        let tab = draw(TABULAR_SLOTS.len());
        let graph = draw(GRAPH_SLOTS.len());
        d.push(
            LabeledSample::new(format!("ps_{i:04}"), label)
                .with(Modality::Tabular, tab)
                .with(Modality::Graph, graph),
        )
        .expect("ids are unique");
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_half_trojan_all_parse() {
        let (designs, d) = synth_generate(20, 0.5, 1);
        assert_eq!(designs.len(), 20);
        assert_eq!(d.class_counts(), [10, 10]);
        for s in &designs {
            let ast = parse(&s.source, ParseMode::Strict).unwrap();
            assert!(ast.warnings.is_empty(), "{:?}\n{}", ast.warnings, s.source);
            let (_, w) = build_dataflow_graph(&ast);
            assert!(w.is_empty(), "{w:?}\n{}", s.source);
        }
    }

    #[test]
    fn ten_percent_of_hundred() {
        let (_, d) = synth_generate(100, 0.1, 4);
        assert_eq!(d.class_counts(), [90, 10]);
    }

    #[test]
    fn trojans_raise_mean_if_count() {
        let (_, d) = synth_generate(200, 0.5, 3);
        let mut sums = [0.0; 2];
        let counts = d.class_counts();
        for s in d.samples() {
            sums[s.label.index()] += s.get(Modality::Tabular).unwrap()[0];
        }
        assert!(sums[1] / counts[1] as f64 > sums[0] / counts[0] as f64);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_generate(12, 0.3, 8).0, synth_generate(12, 0.3, 8).0);
        assert_ne!(synth_generate(12, 0.3, 8).0, synth_generate(12, 0.3, 9).0);
    }
}
