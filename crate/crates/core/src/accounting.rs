//! Analytic MAdds and parameter ledgers.
//!
//! `madds` counts multiply-accumulates of weighted layers (convolutions and
//! fully connected layers, including Shift-Max hyper-functions). Adds-only
//! and data-dependent elementwise work (pooling, Shift-Max application,
//! skip adds, upsampling) goes to a separate `elementwise` column. Params
//! count trainable scalars, batch-norm affine terms included.

use std::fmt::Write as _;

use serde::Serialize;

use crate::arch::{Act, ConvBn, Conv, DwStage, Layer, MicroBlock, Network, Stem};
use crate::error::{dim_err, Error, Result};
use crate::kernels::ConvGeom;
use crate::probe::count_macs;
use crate::shiftmax::{shift_max_cost_parts, shift_max_params, ShiftMaxConfig};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Section {
    Stem,
    Block,
    Attention,
    Classifier,
    Heatmap,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostEntry {
    pub name: String,
    pub kind: &'static str,
    pub section: Section,
    /// `[C, H, W]` of the entry's output.
    pub output: [usize; 3],
    pub madds: u64,
    pub elementwise: u64,
    pub params: u64,
    /// Placeholder layers that are not modeled (attention pass-through).
    pub excluded: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub madds: u64,
    pub elementwise: u64,
    pub params: u64,
}

impl Totals {
    fn add(&mut self, e: &CostEntry) {
        self.madds += e.madds;
        self.elementwise += e.elementwise;
        self.params += e.params;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub arch: String,
    pub input: [usize; 2],
    pub entries: Vec<CostEntry>,
}

impl CostReport {
    pub fn total(&self) -> Totals {
        self.total_excluding(&[])
    }

    /// Totals over entries whose section is not listed.
    pub fn total_excluding(&self, sections: &[Section]) -> Totals {
        let mut t = Totals::default();
        for e in self.entries.iter().filter(|e| !sections.contains(&e.section)) {
            t.add(e);
        }
        t
    }

    /// Sum over entries whose name starts with `prefix`.
    pub fn total_of(&self, prefix: &str) -> Totals {
        let mut t = Totals::default();
        for e in self.entries.iter().filter(|e| e.name == prefix || e.name.starts_with(&format!("{prefix}."))) {
            t.add(e);
        }
        t
    }

    pub fn entry(&self, name: &str) -> Option<&CostEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn excluded_names(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| e.excluded).map(|e| e.name.as_str()).collect()
    }

    /// Same report without the listed sections (what `--exclude` prints).
    pub fn without(&self, sections: &[Section]) -> CostReport {
        CostReport {
            arch: self.arch.clone(),
            input: self.input,
            entries: self.entries.iter().filter(|e| !sections.contains(&e.section)).cloned().collect(),
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} @ {}x{}", self.arch, self.input[0], self.input[1]);
        let _ = writeln!(
            s,
            "{:<28} {:<10} {:>16} {:>14} {:>14} {:>12}",
            "layer", "kind", "output", "madds", "elementwise", "params"
        );
        for e in &self.entries {
            let out = format!("{}x{}x{}", e.output[0], e.output[1], e.output[2]);
            let flag = if e.excluded { "  (excluded: pass-through)" } else { "" };
            let _ = writeln!(
                s,
                "{:<28} {:<10} {:>16} {:>14} {:>14} {:>12}{flag}",
                e.name, e.kind, out, e.madds, e.elementwise, e.params
            );
        }
        let t = self.total();
        let _ = writeln!(s, "{:<28} {:<10} {:>16} {:>14} {:>14} {:>12}", "total", "", "", t.madds, t.elementwise, t.params);
        for (label, sec) in [("without classifier", Section::Classifier), ("without heatmap conv", Section::Heatmap)] {
            if self.entries.iter().any(|e| e.section == sec) {
                let t = self.total_excluding(&[sec]);
                let _ = writeln!(s, "{:<28} {:<10} {:>16} {:>14} {:>14} {:>12}", label, "", "", t.madds, t.elementwise, t.params);
            }
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let layers: serde_json::Map<String, serde_json::Value> = self
            .entries
            .iter()
            .map(|e| (e.name.clone(), serde_json::to_value(e).expect("entry serializes")))
            .collect();
        serde_json::json!({
            "arch": self.arch,
            "input": self.input,
            "layers": layers,
            "total": self.total(),
            "total_without_classifier": self.total_excluding(&[Section::Classifier]),
            "total_without_heatmap": self.total_excluding(&[Section::Heatmap]),
            "excluded": self.excluded_names(),
        })
    }
}

/// Cost of a single layer: summed entries and the output shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub madds: u64,
    pub elementwise: u64,
    pub params: u64,
    pub output: Shape,
}

pub fn conv_madds(geom: &ConvGeom, in_c: usize, out_c: usize, out_h: usize, out_w: usize) -> u64 {
    (out_h * out_w) as u64 * (geom.kernel.0 * geom.kernel.1) as u64 * (in_c / geom.groups) as u64 * out_c as u64
}

pub fn conv_params(geom: &ConvGeom, in_c: usize, out_c: usize) -> u64 {
    (geom.kernel.0 * geom.kernel.1 * (in_c / geom.groups) * out_c) as u64
}

struct Ledger {
    entries: Vec<CostEntry>,
    section: Section,
}

impl Ledger {
    fn push(&mut self, name: String, kind: &'static str, out: Shape, madds: u64, elementwise: u64, params: u64) {
        self.entries.push(CostEntry {
            name,
            kind,
            section: self.section,
            output: [out.c, out.h, out.w],
            madds,
            elementwise,
            params,
            excluded: false,
        });
    }

    fn conv(&mut self, name: String, c: &Conv, x: Shape, norm: bool) -> Result<Shape> {
        if x.c != c.in_c {
            return Err(dim_err!("{name}: input has {} channels, conv expects {}", x.c, c.in_c));
        }
        let (h, w) = c.geom.output_hw(x.h, x.w)?;
        let out = Shape::new(1, c.out_c, h, w);
        let bn = if norm { 2 * c.out_c as u64 } else { 0 };
        let kind = if c.geom.groups == c.in_c && c.geom.groups > 1 {
            "depthwise"
        } else if c.geom.kernel == (1, 1) {
            "pointwise"
        } else {
            "conv"
        };
        self.push(name, kind, out, conv_madds(&c.geom, c.in_c, c.out_c, h, w), 0, conv_params(&c.geom, c.in_c, c.out_c) + bn);
        Ok(out)
    }

    fn conv_bn(&mut self, name: String, c: &ConvBn, x: Shape) -> Result<Shape> {
        self.conv(name, &c.conv, x, true)
    }

    fn act(&mut self, name: String, a: &Act, x: Shape) {
        match a {
            Act::Relu => self.push(name, "relu", x, 0, 0, 0),
            Act::ShiftMax(u) => {
                let (m, e, p) = shift_max_split(&u.cfg, x.h, x.w);
                self.push(name, "shift-max", x, m, e, p);
            }
        }
    }
}

/// `(madds, elementwise, params)` of a Shift-Max layer; madds + elementwise
/// equals [`crate::shiftmax::shift_max_cost`].
pub fn shift_max_split(cfg: &ShiftMaxConfig, h: usize, w: usize) -> (u64, u64, u64) {
    let parts = shift_max_cost_parts(cfg, h, w);
    (parts.generate, parts.pool + parts.apply, shift_max_params(cfg))
}

fn stem(l: &mut Ledger, s: &Stem, x: Shape) -> Result<Shape> {
    let y = l.conv_bn("stem.v".into(), &s.vertical, x)?;
    let y = l.conv_bn("stem.h".into(), &s.horizontal, y)?;
    l.push("stem.relu".into(), "relu", y, 0, 0, 0);
    Ok(y)
}

fn block(l: &mut Ledger, name: &str, b: &MicroBlock, x: Shape) -> Result<Shape> {
    let mut y = match &b.dw {
        DwStage::Factorized { vertical, horizontal } => {
            let v = l.conv_bn(format!("{name}.dw.v"), vertical, x)?;
            l.conv_bn(format!("{name}.dw.h"), horizontal, v)?
        }
        DwStage::Full(c) => l.conv_bn(format!("{name}.dw"), c, x)?,
    };
    l.act(format!("{name}.a1"), &b.a1, y);
    if b.plan.spec.upsample {
        y = y.with_hw(y.h * 2, y.w * 2);
        l.push(format!("{name}.upsample"), "upsample", y, 0, 4 * y.item() as u64, 0);
    }
    y = l.conv_bn(format!("{name}.squeeze"), &b.squeeze, y)?;
    l.act(format!("{name}.a2"), &b.a2, y);
    if let Some((expand, a3)) = &b.expand {
        if b.shuffle.is_some() {
            l.push(format!("{name}.shuffle"), "shuffle", y, 0, 0, 0);
        }
        y = l.conv_bn(format!("{name}.expand"), expand, y)?;
        l.act(format!("{name}.a3"), a3, y);
    }
    if b.plan.skip {
        l.push(format!("{name}.skip"), "add", y, 0, y.item() as u64, 0);
    }
    Ok(y)
}

fn layer(l: &mut Ledger, name: &str, layer: &Layer, x: Shape) -> Result<Shape> {
    match layer {
        Layer::Stem(s) => {
            l.section = Section::Stem;
            stem(l, s, x)
        }
        Layer::Block(b) => {
            l.section = Section::Block;
            block(l, name, b, x)
        }
        Layer::Attention { .. } => {
            l.section = Section::Attention;
            l.push(name.to_string(), "attention", x, 0, 0, 0);
            l.entries.last_mut().expect("just pushed").excluded = true;
            Ok(x)
        }
        Layer::Classifier(c) => {
            l.section = Section::Classifier;
            if x.c != c.in_c {
                return Err(dim_err!("classifier expects {} channels, got {}", c.in_c, x.c));
            }
            l.push(format!("{name}.pool"), "avg-pool", Shape::vector(1, x.c), 0, x.item() as u64, 0);
            let (ci, h, k) = (c.in_c as u64, c.hidden as u64, c.classes as u64);
            l.push(format!("{name}.fc1"), "fc", Shape::vector(1, c.hidden), ci * h, 0, ci * h + h);
            l.push(format!("{name}.fc2"), "fc", Shape::vector(1, c.classes), h * k, 0, h * k + k);
            Ok(Shape::vector(1, c.classes))
        }
        Layer::Heatmap(c) => {
            l.section = Section::Heatmap;
            l.conv(name.to_string(), c, x, false)
        }
    }
}

/// Cost of one layer on a `(1, C, H, W)` input.
pub fn count_layer(layer_: &Layer, input: Shape) -> Result<LayerCost> {
    let mut l = Ledger { entries: Vec::new(), section: Section::Block };
    let out = layer(&mut l, "layer", layer_, input.with_n(1))?;
    let mut t = Totals::default();
    for e in &l.entries {
        t.add(e);
    }
    Ok(LayerCost { madds: t.madds, elementwise: t.elementwise, params: t.params, output: out })
}

/// Full ledger for one image of size `h×w` (default: the architecture's input).
pub fn count_model<T: Real>(net: &Network<T>, input: Option<(usize, usize)>) -> Result<CostReport> {
    let (h, w) = input.unwrap_or(net.plan().input);
    if (h, w) != net.plan().input {
        let spec = net.spec().clone().with_input(h, w);
        let resized = Network::<f32>::new(&spec, net.variant(), 0)?;
        return count_model(&resized, None);
    }
    let mut l = Ledger { entries: Vec::new(), section: Section::Stem };
    let mut x = Shape::new(1, 3, h, w);
    for nl in net.layers() {
        x = layer(&mut l, &nl.name, &nl.layer, x)?;
    }
    Ok(CostReport { arch: net.spec().name.clone(), input: [h, w], entries: l.entries })
}

/// MACs actually executed by the conv and FC kernels on one inference pass.
pub fn empirical_madds_probe<T: Real>(net: &Network<T>, input: &Tensor<T>) -> Result<u64> {
    let (out, macs) = count_macs(|| net.infer(input));
    out?;
    Ok(macs)
}

/// Published budget for one architecture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Budget {
    pub name: &'static str,
    pub madds: f64,
    pub params: f64,
}

pub const BUDGETS: [Budget; 8] = [
    Budget { name: "M0", madds: 6.0e6, params: 1.8e6 },
    Budget { name: "M1", madds: 12.0e6, params: 2.4e6 },
    Budget { name: "M2", madds: 21.0e6, params: 3.3e6 },
    Budget { name: "M3", madds: 44.0e6, params: 4.5e6 },
    Budget { name: "M0-kp", madds: 77.7e6, params: 1.0e6 },
    Budget { name: "M1-kp", madds: 116.8e6, params: 1.8e6 },
    Budget { name: "M2-kp", madds: 163.2e6, params: 2.2e6 },
    Budget { name: "M3-kp", madds: 263.2e6, params: 4.0e6 },
];

/// Stem cost of M3 at 224×224.
pub const M3_STEM_MADDS: f64 = 1.5e6;

/// Relative tolerance of the whole-model budget comparison.
pub const BUDGET_TOLERANCE: f64 = 0.20;

pub fn budget_for(name: &str) -> Option<Budget> {
    BUDGETS.iter().copied().find(|b| b.name == name)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetCheck {
    pub arch: String,
    pub madds: u64,
    pub params: u64,
    pub target_madds: f64,
    pub target_params: f64,
    /// Relative deviations, `(value − target) / target`.
    pub madds_deviation: f64,
    pub params_deviation: f64,
    pub madds_ok: bool,
    pub params_ok: bool,
}

impl BudgetCheck {
    pub fn passed(&self) -> bool {
        self.madds_ok && self.params_ok
    }
}

/// Compares whole-model totals (classifier or heatmap conv included) with the
/// published budget within ±20%.
pub fn check_budget(report: &CostReport) -> Result<BudgetCheck> {
    let b = budget_for(&report.arch).ok_or_else(|| Error::UnknownArch(format!("no published budget for {}", report.arch)))?;
    let t = report.total();
    let md = (t.madds as f64 - b.madds) / b.madds;
    let pd = (t.params as f64 - b.params) / b.params;
    Ok(BudgetCheck {
        arch: report.arch.clone(),
        madds: t.madds,
        params: t.params,
        target_madds: b.madds,
        target_params: b.params,
        madds_deviation: md,
        params_deviation: pd,
        madds_ok: md.abs() <= BUDGET_TOLERANCE,
        params_ok: pd.abs() <= BUDGET_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ArchSpec, Variant};

    #[test]
    fn m3_stem() {
        let net = Network::<f32>::builtin("M3", 0).unwrap();
        let r = count_model(&net, None).unwrap();
        assert_eq!(r.entry("stem.v").unwrap().madds, 903_168);
        assert_eq!(r.entry("stem.h").unwrap().madds, 602_112);
        assert_eq!(r.total_of("stem").madds, 1_505_280);
        assert_eq!(r.entry("stem.h").unwrap().output, [16, 112, 112]);
    }

    #[test]
    fn analytic_params_match_the_store() {
        for name in crate::arch::BUILTIN_NAMES {
            let spec = ArchSpec::builtin(name).unwrap();
            for variant in [Variant::Micro, Variant::FullRank] {
                let net = Network::<f32>::new(&spec, variant, 0).unwrap();
                let r = count_model(&net, None).unwrap();
                assert_eq!(r.total().params, net.params().trainable_count(), "{name} {variant:?}");
            }
        }
    }

    #[test]
    fn totals_are_additive() {
        let net = Network::<f32>::builtin("M1", 0).unwrap();
        let r = count_model(&net, None).unwrap();
        let sum: u64 = r.entries.iter().map(|e| e.madds).sum();
        assert_eq!(r.total().madds, sum);
        let no_cls = r.total_excluding(&[Section::Classifier]);
        assert_eq!(no_cls.madds + r.total_of("classifier").madds, sum);
    }

    #[test]
    fn probe_matches_on_narrow_model() {
        let net = Network::<f32>::builtin("M0-narrow", 0).unwrap();
        let r = count_model(&net, None).unwrap();
        let x = Tensor::zeros(net.input_shape(1));
        assert_eq!(empirical_madds_probe(&net, &x).unwrap(), r.total().madds);
    }

    #[test]
    fn keypoint_attention_is_flagged() {
        let net = Network::<f32>::builtin("M0-kp", 0).unwrap();
        let r = count_model(&net, None).unwrap();
        assert_eq!(r.excluded_names().len(), 3);
        assert_eq!(r.entries.last().unwrap().output, [17, 64, 48]);
    }
}
