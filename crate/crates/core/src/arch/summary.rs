//! Per-stage architecture table (input, operator, k, C, C/R, groups, output).

use std::fmt::Write as _;

use serde::Serialize;

use super::spec::{ArchSpec, Plan};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    /// `[C, H, W]`
    pub input: [usize; 3],
    pub operator: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub c: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_r: Option<usize>,
    pub groups: Vec<usize>,
    pub stride: usize,
    pub output: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn new(spec: &ArchSpec) -> Result<Self> {
        let plan = spec.validate()?;
        Ok(Summary { name: spec.name.clone(), rows: rows(spec, &plan) })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.name);
        let _ = writeln!(s, "{:<14} {:<22} {:>3} {:>5} {:>5} {:<8} {:>2} {:<14}", "input", "operator", "k", "C", "C/R", "groups", "s", "output");
        for r in &self.rows {
            let dims = |d: [usize; 3]| format!("{}x{}x{}", d[0], d[1], d[2]);
            let opt = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
            let groups = if r.groups.is_empty() {
                "-".to_string()
            } else {
                format!("({})", r.groups.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(","))
            };
            let _ = writeln!(
                s,
                "{:<14} {:<22} {:>3} {:>5} {:>5} {:<8} {:>2} {:<14}",
                dims(r.input),
                r.operator,
                opt(r.k),
                r.c,
                opt(r.c_r),
                groups,
                r.stride,
                dims(r.output)
            );
        }
        s
    }
}

fn rows(spec: &ArchSpec, plan: &Plan) -> Vec<SummaryRow> {
    let (h, w) = plan.input;
    let st = &plan.stem;
    let mut rows = vec![SummaryRow {
        input: [3, h, w],
        operator: "stem".into(),
        k: Some(3),
        c: st.out_c,
        c_r: Some(st.mid_c),
        groups: spec.stem.groups.to_vec(),
        stride: 2,
        output: [st.out_c, st.out_hw.0, st.out_hw.1],
    }];
    for b in &plan.blocks {
        let mut op = b.spec.kind.label().to_string();
        if b.spec.upsample {
            op.push_str(" +up");
        }
        if b.spec.attention {
            op.push_str(" +attn");
        }
        rows.push(SummaryRow {
            input: [b.in_c, b.in_hw.0, b.in_hw.1],
            operator: op,
            k: Some(b.spec.k),
            c: b.out_c,
            c_r: Some(b.mid_c),
            groups: b.spec.groups.clone(),
            stride: b.spec.stride,
            output: [b.out_c, b.out_hw.0, b.out_hw.1],
        });
    }
    let c = plan.out_c();
    let (oh, ow) = plan.out_hw();
    if let Some(cls) = &spec.classifier {
        let head = |input: [usize; 3], operator: &str, c: usize| SummaryRow {
            input,
            operator: operator.into(),
            k: None,
            c,
            c_r: None,
            groups: Vec::new(),
            stride: 1,
            output: [c, 1, 1],
        };
        rows.push(head([c, oh, ow], "avg-pool", c));
        rows.push(head([c, 1, 1], "fc", cls.hidden));
        rows.push(head([cls.hidden, 1, 1], "fc + softmax", cls.classes));
    }
    if let Some(hm) = &spec.heatmap {
        rows.push(SummaryRow {
            input: [c, oh, ow],
            operator: "heatmap conv".into(),
            k: Some(1),
            c: hm.keypoints,
            c_r: None,
            groups: vec![1],
            stride: 1,
            output: [hm.keypoints, oh, ow],
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m1_has_twelve_rows_ending_in_classifier() {
        let s = Summary::new(&ArchSpec::builtin("M1").unwrap()).unwrap();
        assert_eq!(s.rows.len(), 12);
        assert_eq!(s.rows.last().unwrap().operator, "fc + softmax");
        assert_eq!(s.rows.last().unwrap().output, [1000, 1, 1]);
        assert!(s.to_table().lines().count() == 14);
    }

    #[test]
    fn keypoint_head_ends_at_quarter_resolution() {
        let s = Summary::new(&ArchSpec::builtin("M2-kp").unwrap()).unwrap();
        assert_eq!(s.rows.last().unwrap().output, [17, 64, 48]);
    }
}
