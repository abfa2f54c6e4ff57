//! Shared workloads for the criterion benches.

use cpcluster::io::dense_workload;
use cpcluster::{BBox, ClusterConfig};

/// Workload sizes as `(boxes, clusters)`, about 20 boxes per cluster.
pub const SIZES: [(usize, usize); 3] = [(500, 25), (2000, 100), (10000, 500)];

pub fn workload(boxes: usize, clusters: usize) -> Vec<BBox> {
    dense_workload(boxes, clusters, 0)
}

/// Default CP settings with `iterations` steps and an alpha schedule of 1.0
/// followed by zeros. The threshold increment shrinks when needed to keep
/// the last threshold below 1.
pub fn cp_config(iterations: usize) -> ClusterConfig {
    let base = ClusterConfig::default();
    let steps = iterations.saturating_sub(1) as f64;
    let lambda = if base.theta0 + steps * base.lambda < 1.0 {
        base.lambda
    } else {
        (0.9 - base.theta0) / steps
    };
    ClusterConfig {
        lambda,
        iterations,
        alpha_schedule: (0..iterations).map(|t| if t == 0 { 1.0 } else { 0.0 }).collect(),
        ..base
    }
}
