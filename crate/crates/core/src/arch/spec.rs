//! Declarative architecture descriptions.
//!
//! One `[[block]]` record per Micro-Block row with the table columns
//! `kind, k, c, c_r, groups`. For Micro-Block-A, `c` is the depthwise output
//! width and `c_r` the block output; for B and C, `c` is the block output and
//! `c_r` the bottleneck.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::shiftmax::{ShiftMaxConfig, DEFAULT_BRANCHES, DEFAULT_FUSIONS, DEFAULT_RANGE, DEFAULT_REDUCTION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    MicroA,
    MicroB,
    MicroC,
}

impl BlockKind {
    pub fn label(self) -> &'static str {
        match self {
            BlockKind::MicroA => "Micro-A",
            BlockKind::MicroB => "Micro-B",
            BlockKind::MicroC => "Micro-C",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    #[default]
    ShiftMax,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftMaxSpec {
    #[serde(default = "default_fusions")]
    pub fusions: usize,
    #[serde(default = "default_branches")]
    pub branches: usize,
    #[serde(default = "default_reduction")]
    pub reduction: usize,
    #[serde(default = "default_range")]
    pub range: f64,
}

fn default_fusions() -> usize {
    DEFAULT_FUSIONS
}
fn default_branches() -> usize {
    DEFAULT_BRANCHES
}
fn default_reduction() -> usize {
    DEFAULT_REDUCTION
}
fn default_range() -> f64 {
    DEFAULT_RANGE
}
fn default_stride() -> usize {
    1
}
fn default_dropout() -> f64 {
    0.05
}

impl Default for ShiftMaxSpec {
    fn default() -> Self {
        ShiftMaxSpec {
            fusions: DEFAULT_FUSIONS,
            branches: DEFAULT_BRANCHES,
            reduction: DEFAULT_REDUCTION,
            range: DEFAULT_RANGE,
        }
    }
}

impl ShiftMaxSpec {
    pub fn config(&self, channels: usize, groups: usize) -> Result<ShiftMaxConfig> {
        Ok(ShiftMaxConfig::new(channels, groups, self.fusions, self.branches)?
            .with_reduction(self.reduction)
            .with_range(self.range))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemSpec {
    /// Output channels.
    pub c: usize,
    /// Channels after the 3×1 conv.
    pub c_r: usize,
    /// `[G1, G2]`; G2 groups the 1×3 expansion.
    pub groups: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub k: usize,
    pub c: usize,
    pub c_r: usize,
    /// `[G1]` for Micro-A, `[G1, G2]` otherwise.
    pub groups: Vec<usize>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Depthwise channel multiplier override (A and B only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<usize>,
    /// ×2 bilinear upsampling after the depthwise stage.
    #[serde(default, skip_serializing_if = "is_false")]
    pub upsample: bool,
    /// Spatial attention slot after the block (identity pass-through).
    #[serde(default, skip_serializing_if = "is_false")]
    pub attention: bool,
    #[serde(default, skip_serializing_if = "is_default_act")]
    pub activation: ActivationKind,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_default_act(a: &ActivationKind) -> bool {
    *a == ActivationKind::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub hidden: usize,
    pub classes: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapSpec {
    pub keypoints: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    /// `[H, W]`
    pub input: [usize; 2],
    #[serde(default)]
    pub shift_max: ShiftMaxSpec,
    pub stem: StemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<HeatmapSpec>,
    #[serde(rename = "block")]
    pub blocks: Vec<BlockSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classification,
    Keypoints,
}

/// A block row with every derived width, group and resolution filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedBlock {
    pub index: usize,
    pub spec: BlockSpec,
    pub in_c: usize,
    /// Depthwise stage output width.
    pub dw_c: usize,
    /// Depthwise multiplier t.
    pub expansion: usize,
    pub mid_c: usize,
    pub out_c: usize,
    pub g1: usize,
    pub g2: Option<usize>,
    pub in_hw: (usize, usize),
    /// Resolution after the depthwise stage (before any upsampling).
    pub dw_hw: (usize, usize),
    pub out_hw: (usize, usize),
    pub skip: bool,
}

impl ResolvedBlock {
    pub fn label(&self) -> String {
        format!("block {} ({} k={} c={} c_r={})", self.index, self.spec.kind.label(), self.spec.k, self.spec.c, self.spec.c_r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedStem {
    pub mid_c: usize,
    pub out_c: usize,
    pub g2: usize,
    pub out_hw: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub input: (usize, usize),
    pub stem: ResolvedStem,
    pub blocks: Vec<ResolvedBlock>,
}

impl Plan {
    pub fn out_c(&self) -> usize {
        self.blocks.last().map_or(self.stem.out_c, |b| b.out_c)
    }

    pub fn out_hw(&self) -> (usize, usize) {
        self.blocks.last().map_or(self.stem.out_hw, |b| b.out_hw)
    }
}

/// Built-in architecture names.
pub const BUILTIN_NAMES: [&str; 9] = ["M0", "M1", "M2", "M3", "M0-kp", "M1-kp", "M2-kp", "M3-kp", "M0-narrow"];

/// The eight published architectures (the narrow toy config excluded).
pub const PUBLISHED_NAMES: [&str; 8] = ["M0", "M1", "M2", "M3", "M0-kp", "M1-kp", "M2-kp", "M3-kp"];

fn builtin_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "M0" => include_str!("../../configs/M0.toml"),
        "M1" => include_str!("../../configs/M1.toml"),
        "M2" => include_str!("../../configs/M2.toml"),
        "M3" => include_str!("../../configs/M3.toml"),
        "M0-kp" => include_str!("../../configs/M0-kp.toml"),
        "M1-kp" => include_str!("../../configs/M1-kp.toml"),
        "M2-kp" => include_str!("../../configs/M2-kp.toml"),
        "M3-kp" => include_str!("../../configs/M3-kp.toml"),
        "M0-narrow" => include_str!("../../configs/M0-narrow.toml"),
        _ => return None,
    })
}

fn conv_stride_out(len: usize, k: usize, s: usize) -> usize {
    (len + 2 * (k / 2) - k) / s + 1
}

fn divides(what: &str, g: usize, c: usize) -> Result<()> {
    if g == 0 || !c.is_multiple_of(g) {
        return Err(config_err!("{what}: groups {g} do not divide {c} channels"));
    }
    Ok(())
}

impl ArchSpec {
    pub fn builtin(name: &str) -> Result<ArchSpec> {
        let src = builtin_source(name).ok_or_else(|| Error::UnknownArch(name.to_string()))?;
        let spec = ArchSpec::from_toml(src)?;
        Ok(spec)
    }

    pub fn from_toml(src: &str) -> Result<ArchSpec> {
        let spec: ArchSpec = toml::from_str(src).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("arch spec serializes")
    }

    pub fn task(&self) -> Task {
        if self.heatmap.is_some() {
            Task::Keypoints
        } else {
            Task::Classification
        }
    }

    /// Output channels of the head: classes or keypoints.
    pub fn outputs(&self) -> usize {
        match (&self.classifier, &self.heatmap) {
            (Some(c), _) => c.classes,
            (None, Some(h)) => h.keypoints,
            (None, None) => 0,
        }
    }

    pub fn with_input(mut self, h: usize, w: usize) -> Self {
        self.input = [h, w];
        self
    }

    pub fn validate(&self) -> Result<Plan> {
        match (&self.classifier, &self.heatmap) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(config_err!("exactly one of [classifier] or [heatmap] is required"))
            }
            (Some(c), None) if c.hidden == 0 || c.classes == 0 || !(0.0..1.0).contains(&c.dropout) => {
                return Err(config_err!("classifier needs positive widths and dropout in [0, 1)"))
            }
            (None, Some(h)) if h.keypoints == 0 => return Err(config_err!("heatmap needs keypoints >= 1")),
            _ => {}
        }
        self.plan(self.input[0], self.input[1])
    }

    /// Resolves widths, groups and resolutions for an `h×w` input.
    pub fn plan(&self, h: usize, w: usize) -> Result<Plan> {
        if h < 2 || w < 2 {
            return Err(config_err!("input {h}x{w} is too small"));
        }
        let s = &self.stem;
        if s.c == 0 || s.c_r == 0 {
            return Err(config_err!("stem: channel counts must be positive"));
        }
        divides("stem 1x3 conv (input side)", s.groups[1], s.c_r)?;
        divides("stem 1x3 conv (output side)", s.groups[1], s.c)?;
        let stem = ResolvedStem {
            mid_c: s.c_r,
            out_c: s.c,
            g2: s.groups[1],
            out_hw: (conv_stride_out(h, 3, 2), conv_stride_out(w, 3, 2)),
        };
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let (mut in_c, mut hw) = (stem.out_c, stem.out_hw);
        for (index, b) in self.blocks.iter().enumerate() {
            let r = self
                .resolve_block(index, b, in_c, hw)
                .map_err(|e| {
                    let msg = match e {
                        Error::Config(m) => m,
                        other => other.to_string(),
                    };
                    config_err!("block {index} ({} k={} c={} c_r={}): {msg}", b.kind.label(), b.k, b.c, b.c_r)
                })?;
            in_c = r.out_c;
            hw = r.out_hw;
            blocks.push(r);
        }
        Ok(Plan { input: (h, w), stem, blocks })
    }

    fn resolve_block(&self, index: usize, b: &BlockSpec, in_c: usize, in_hw: (usize, usize)) -> Result<ResolvedBlock> {
        if b.k == 0 || b.k.is_multiple_of(2) {
            return Err(config_err!("kernel size must be odd"));
        }
        if b.c == 0 || b.c_r == 0 || b.stride == 0 {
            return Err(config_err!("widths and stride must be positive"));
        }
        let want = if b.kind == BlockKind::MicroA { 1 } else { 2 };
        if b.groups.len() != want {
            return Err(config_err!("expected {want} group values, got {}", b.groups.len()));
        }
        let g1 = b.groups[0];
        let g2 = b.groups.get(1).copied();
        let expansion = match b.kind {
            BlockKind::MicroC => {
                if b.expansion.is_some_and(|t| t != 1) {
                    return Err(config_err!("micro-c depthwise does not expand"));
                }
                1
            }
            _ => b.expansion.unwrap_or_else(|| ((b.c as f64 / in_c as f64).round() as usize).max(1)),
        };
        if expansion == 0 {
            return Err(config_err!("expansion must be >= 1"));
        }
        let dw_c = in_c * expansion;
        if b.kind == BlockKind::MicroA && dw_c != b.c {
            return Err(config_err!("depthwise width {dw_c} does not reach c={} from {in_c} channels", b.c));
        }
        let (mid_c, out_c) = match b.kind {
            BlockKind::MicroA => (b.c_r, b.c_r),
            _ => (b.c_r, b.c),
        };
        divides("squeeze conv (input side)", g1, dw_c)?;
        divides("squeeze conv (output side)", g1, mid_c)?;
        if let Some(g2) = g2 {
            divides("expand conv (input side)", g2, mid_c)?;
            divides("expand conv (output side)", g2, out_c)?;
        }
        let dw_hw = (conv_stride_out(in_hw.0, b.k, b.stride), conv_stride_out(in_hw.1, b.k, b.stride));
        let out_hw = if b.upsample { (dw_hw.0 * 2, dw_hw.1 * 2) } else { dw_hw };
        let skip = b.kind == BlockKind::MicroC && in_c == out_c && b.stride == 1 && !b.upsample;
        let block = ResolvedBlock {
            index,
            spec: b.clone(),
            in_c,
            dw_c,
            expansion,
            mid_c,
            out_c,
            g1,
            g2,
            in_hw,
            dw_hw,
            out_hw,
            skip,
        };
        if b.activation == ActivationKind::ShiftMax {
            for (c, g) in block.activation_groups() {
                self.shift_max.config(c, g)?;
            }
        }
        Ok(block)
    }
}

impl ResolvedBlock {
    /// `(channels, groups)` of A1, A2 and (B, C) A3.
    pub fn activation_groups(&self) -> Vec<(usize, usize)> {
        let mut v = vec![(self.dw_c, self.g1), (self.mid_c, self.g1)];
        if let Some(g2) = self.g2 {
            v.push((self.out_c, g2));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_parse_and_validate() {
        for name in BUILTIN_NAMES {
            let spec = ArchSpec::builtin(name).unwrap();
            assert_eq!(spec.name, name);
        }
        assert_eq!(ArchSpec::builtin("M9").unwrap_err().kind(), "unknown_arch");
    }

    #[test]
    fn toml_round_trip() {
        for name in BUILTIN_NAMES {
            let spec = ArchSpec::builtin(name).unwrap();
            assert_eq!(ArchSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        }
    }

    #[test]
    fn m1_stage_resolutions() {
        let plan = ArchSpec::builtin("M1").unwrap().validate().unwrap();
        assert_eq!(plan.stem.out_hw, (112, 112));
        let res: Vec<usize> = plan.blocks.iter().map(|b| b.out_hw.0).collect();
        assert_eq!(res, vec![56, 28, 28, 14, 14, 14, 7, 7]);
        assert_eq!(plan.blocks[0].out_c, 12);
        assert_eq!(plan.blocks[2].out_c, 144);
        assert_eq!(plan.blocks[2].in_c, 16);
        assert_eq!(plan.blocks[2].expansion, 9);
    }

    #[test]
    fn keypoint_head_resolutions() {
        let plan = ArchSpec::builtin("M3-kp").unwrap().validate().unwrap();
        let n = plan.blocks.len();
        assert_eq!(plan.blocks[n - 4].out_hw, (16, 12));
        assert_eq!(plan.blocks[n - 3].out_hw, (32, 24));
        assert_eq!(plan.blocks[n - 2].out_hw, (64, 48));
        assert_eq!(plan.blocks[n - 1].out_hw, (64, 48));
        assert_eq!(plan.blocks[n - 1].expansion, 1);
    }

    #[test]
    fn bad_groups_name_the_row() {
        let mut spec = ArchSpec::builtin("M1").unwrap();
        spec.blocks[3].groups = vec![5, 8];
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("block 3"), "{err}");
    }
}
