//! Code-branching features computed from the design AST.

use serde::{Deserialize, Serialize};

use crate::rtl::{AstNode, DesignAst, NodeKind};

/// Column names, in file order.
pub const TABULAR_SLOTS: [&str; 12] = [
    "if_count",
    "else_count",
    "case_count",
    "case_item_count",
    "loop_count",
    "ternary_count",
    "always_count",
    "assign_count",
    "instance_count",
    "signal_count",
    "max_if_nesting_depth",
    "branch_density",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TabularFeatures(pub [f64; 12]);

impl TabularFeatures {
    pub fn get(&self, slot: &str) -> Option<f64> {
        TABULAR_SLOTS
            .iter()
            .position(|s| *s == slot)
            .map(|i| self.0[i])
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }
}

fn if_depth(n: &AstNode) -> usize {
    let own = usize::from(n.kind == NodeKind::IfStmt);
    own + n.children.iter().map(if_depth).max().unwrap_or(0)
}

/// Count branching constructs over every module of the unit.
pub fn extract_branching_features(ast: &DesignAst) -> TabularFeatures {
    let (mut ifs, mut elses, mut cases, mut items, mut loops, mut ternaries) = (0, 0, 0, 0, 0, 0);
    let (mut always, mut assigns, mut instances) = (0, 0, 0);
    ast.walk_items(&mut |n| match n.kind {
        NodeKind::IfStmt => {
            ifs += 1;
            if n.children.len() == 3 {
                elses += 1;
            }
        }
        NodeKind::CaseStmt => cases += 1,
        NodeKind::CaseItem => items += 1,
        NodeKind::Loop => loops += 1,
        NodeKind::Ternary => ternaries += 1,
        NodeKind::AlwaysBlock => always += 1,
        NodeKind::Assign => assigns += 1,
        NodeKind::Instance => instances += 1,
        _ => {}
    });
    let signals: usize = ast.modules.iter().map(|m| m.signal_names().len()).sum();
    let depth = ast
        .modules
        .iter()
        .flat_map(|m| m.items.iter())
        .map(if_depth)
        .max()
        .unwrap_or(0);
    let density = (ifs + cases + ternaries) as f64 / (assigns + always).max(1) as f64;
    TabularFeatures([
        ifs as f64,
        elses as f64,
        cases as f64,
        items as f64,
        loops as f64,
        ternaries as f64,
        always as f64,
        assigns as f64,
        instances as f64,
        signals as f64,
        depth as f64,
        density,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rtl::{parse, ParseMode};

    fn features(src: &str) -> TabularFeatures {
        extract_branching_features(&parse(src, ParseMode::Strict).unwrap())
    }

    #[test]
    fn if_else_in_always() {
        let f = features(
            "module d(input clk, input en, input d, output reg q);
               always @(posedge clk) if (en) q <= d; else q <= 0;
             endmodule",
        );
        assert_eq!(f.get("if_count"), Some(1.0));
        assert_eq!(f.get("else_count"), Some(1.0));
        assert_eq!(f.get("always_count"), Some(1.0));
        assert_eq!(f.get("case_count"), Some(0.0));
        assert_eq!(f.get("signal_count"), Some(4.0));
        assert_eq!(f.get("max_if_nesting_depth"), Some(1.0));
        // (1 if + 0 case + 0 ternary) / (0 assign + 1 always)
        assert_eq!(f.get("branch_density"), Some(1.0));
    }

    #[test]
    fn empty_module_is_all_zero() {
        assert_eq!(features("module e; endmodule").0, [0.0; 12]);
        assert_eq!(extract_branching_features(&DesignAst::default()).0, [0.0; 12]);
    }

    #[test]
    fn nested_if_depth() {
        let f = features(
            "module n(input a, input b, input c, input clk, output reg x);
               always @(posedge clk) if (a) if (b) if (c) x <= 1;
             endmodule",
        );
        assert_eq!(f.get("max_if_nesting_depth"), Some(3.0));
        assert_eq!(f.get("if_count"), Some(3.0));
        assert_eq!(f.get("else_count"), Some(0.0));
    }

    #[test]
    fn density_counts_cases_and_ternaries() {
        let f = features(
            "module t(input [1:0] s, input a, input b, output y, output reg z);
               assign y = s[0] ? a : b;
               always @(*) case (s) 2'd0: z = a; default: z = b; endcase
             endmodule",
        );
        assert_eq!(f.get("ternary_count"), Some(1.0));
        assert_eq!(f.get("case_item_count"), Some(2.0));
        assert_eq!(f.get("branch_density"), Some(1.0));
    }

    #[test]
    fn adding_an_if_increments_exactly_one_slot_family() {
        let before = features(
            "module m(input clk, input a, output reg q);
               always @(posedge clk) begin q <= a; end
             endmodule",
        );
        let after = features(
            "module m(input clk, input a, output reg q);
               always @(posedge clk) begin q <= a; if (a) q <= 1'b0; end
             endmodule",
        );
        assert_eq!(after.get("if_count").unwrap(), before.get("if_count").unwrap() + 1.0);
        for (b, a) in before.0.iter().zip(after.0.iter()) {
            assert!(a >= b);
        }
    }
}
