//! Confidence propagation clustering for object-detection post-processing.
//!
//! Candidate boxes are linked into an overlap graph. Each iteration, every
//! box receives a positive message from its weaker, closely overlapping
//! friends and a negative message from one stronger neighbor; all boxes
//! update together from the same score snapshot, so the work parallelizes
//! per box with results identical to a sequential run.
//!
//! The crate also carries the greedy baselines (NMS, Soft-NMS, SNMS-WFA), a
//! COCO-style evaluator, COCO file I/O, a seeded synthetic corpus generator
//! and naive reference implementations used as test oracles.

pub mod baselines;
pub mod cluster;
pub mod eval;
pub mod flat;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod messages;
pub mod method;
pub mod reference;

pub use baselines::{nms, snms_wfa, soft_nms, Selection, SoftMode, SoftNmsParams};
pub use cluster::{cp_cluster, propagate, propagate_traced, ClusterConfig, ClusterError, ConfigError};
pub use eval::{
    compare_methods, evaluate, ComparisonReport, DetectionSet, EvalError, EvalResult, GroundTruth,
    GroundTruthBox,
};
pub use geometry::{area, iou, BBox, BoxError};
pub use graph::{build_graph, NeighborGraph};
pub use messages::{MessageUpdate, ScoreSnapshot, SuppressionMatrix};
pub use method::{Method, MethodError, MethodSettings, METHOD_NAMES};
pub use reference::{reference_cp_cluster, reference_nms};
