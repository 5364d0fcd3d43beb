//! Stem, Micro-Blocks A/B/C, heads and the published architectures.

pub mod network;
pub mod spec;
pub mod summary;

pub use network::{
    build_block, build_classifier, build_micro_a, build_micro_b, build_micro_c, build_stem, Act, Classifier, Conv,
    ConvBn, DwStage, Forward, Layer, MicroBlock, NamedLayer, Network, Norm, NormUpdate, Param, ParamId, ParamRole,
    ParamStore, ShiftMaxUnit, Stem, Variant,
};
pub use spec::{
    ActivationKind, ArchSpec, BlockKind, BlockSpec, ClassifierSpec, HeatmapSpec, Plan, ResolvedBlock, ResolvedStem,
    ShiftMaxSpec, StemSpec, Task, BUILTIN_NAMES, PUBLISHED_NAMES,
};
pub use summary::{Summary, SummaryRow};
