//! Confidence propagation clustering.
//!
//! Each iteration thresholds the cached overlap graph at the current IOU
//! threshold, freezes the scores, computes every box's positive and
//! negative message from that snapshot, applies them together and raises the
//! threshold by `lambda`. Suppression counts persist across iterations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, BoxError};
use crate::graph::{graph_from_cache, IouCache};
use crate::messages::{compute_messages, MessageParams, MessageUpdate, ScoreSnapshot, SuppressionMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("theta0 must lie in [0, 1), got {0}")]
    Theta0(f64),
    #[error("lambda must be a finite value >= 0, got {0}")]
    Lambda(f64),
    #[error("theta_n must lie in (theta0, 1], got {theta_n} with theta0 {theta0}")]
    ThetaN { theta_n: f64, theta0: f64 },
    #[error("zeta must be at least 1")]
    Zeta,
    #[error("alpha schedule has {got} entries but iterations is {expected}")]
    AlphaLength { expected: usize, got: usize },
    #[error("alpha values must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("final threshold theta0 + (N-1)*lambda = {0} must stay below 1")]
    FinalTheta(f64),
    #[error("min_score must lie in [0, 1], got {0}")]
    MinScore(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("box at position {position}: {source}")]
    InvalidBox {
        position: usize,
        #[source]
        source: BoxError,
    },
    #[error("box index {0} appears more than once")]
    DuplicateIndex(usize),
}

/// Hyperparameters for [`cp_cluster`].
///
/// Defaults: `theta0 = 0.6`, `lambda = 0.2`, `theta_n = 0.8`, `zeta = 2`,
/// two iterations with `alpha = [1.0, 0.0]` (strongest suppressor first, then
/// the most overlapping one), `min_score = 0.001`, class-aware, sorted output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub theta0: f64,
    pub lambda: f64,
    pub theta_n: f64,
    pub zeta: u32,
    pub iterations: usize,
    pub alpha_schedule: Vec<f64>,
    pub min_score: f64,
    pub class_aware: bool,
    pub sort_output: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            theta0: 0.6,
            lambda: 0.2,
            theta_n: 0.8,
            zeta: 2,
            iterations: 2,
            alpha_schedule: vec![1.0, 0.0],
            min_score: 0.001,
            class_aware: true,
            sort_output: true,
        }
    }
}

impl ClusterConfig {
    /// Zero iterations is accepted here and leaves scores untouched.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&self.theta0) {
            return Err(ConfigError::Theta0(self.theta0));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ConfigError::Lambda(self.lambda));
        }
        if !(self.theta_n > self.theta0 && self.theta_n <= 1.0) {
            return Err(ConfigError::ThetaN {
                theta_n: self.theta_n,
                theta0: self.theta0,
            });
        }
        if self.zeta == 0 {
            return Err(ConfigError::Zeta);
        }
        if self.alpha_schedule.len() != self.iterations {
            return Err(ConfigError::AlphaLength {
                expected: self.iterations,
                got: self.alpha_schedule.len(),
            });
        }
        if let Some(&a) = self
            .alpha_schedule
            .iter()
            .find(|a| !(0.0..=1.0).contains(*a))
        {
            return Err(ConfigError::Alpha(a));
        }
        if self.iterations > 0 {
            let last = self.theta_at(self.iterations - 1);
            if last >= 1.0 {
                return Err(ConfigError::FinalTheta(last));
            }
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(ConfigError::MinScore(self.min_score));
        }
        Ok(())
    }

    /// IOU threshold of iteration `t` (0-based): `theta0 + t * lambda`.
    pub fn theta_at(&self, t: usize) -> f64 {
        self.theta0 + t as f64 * self.lambda
    }
}

/// State of one finished iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub theta: f64,
    pub alpha: f64,
    pub edges: usize,
    pub update: MessageUpdate,
    /// Scores after this iteration's update.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTrace {
    pub initial: Vec<f64>,
    pub iterations: Vec<IterationTrace>,
    pub suppression: SuppressionMatrix,
}

impl ClusterTrace {
    pub fn final_scores(&self) -> &[f64] {
        self.iterations
            .last()
            .map_or(&self.initial[..], |it| &it.scores[..])
    }
}

pub(crate) fn check_boxes(boxes: &[BBox]) -> Result<(), ClusterError> {
    for (position, b) in boxes.iter().enumerate() {
        b.validate()
            .map_err(|source| ClusterError::InvalidBox { position, source })?;
    }
    let mut seen: Vec<usize> = boxes.iter().map(|b| b.index).collect();
    seen.sort_unstable();
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(ClusterError::DuplicateIndex(w[0]));
    }
    Ok(())
}

/// Runs message passing and returns the updated scores in input order.
///
/// No filtering or sorting happens here.
pub fn propagate(boxes: &[BBox], config: &ClusterConfig) -> Result<Vec<f64>, ClusterError> {
    run(boxes, config, false).map(|(scores, _)| scores)
}

/// Like [`propagate`] but records every iteration.
pub fn propagate_traced(boxes: &[BBox], config: &ClusterConfig) -> Result<ClusterTrace, ClusterError> {
    run(boxes, config, true).map(|(_, trace)| trace.expect("tracing requested"))
}

fn run(
    boxes: &[BBox],
    config: &ClusterConfig,
    trace: bool,
) -> Result<(Vec<f64>, Option<ClusterTrace>), ClusterError> {
    config.validate()?;
    check_boxes(boxes)?;

    let n = boxes.len();
    let mut snapshot = ScoreSnapshot::from_boxes(boxes);
    let mut sup = SuppressionMatrix::new(n);
    let mut steps = Vec::new();
    let initial = trace.then(|| snapshot.scores().to_vec());

    if n > 0 && config.iterations > 0 {
        let cache = Arc::new(IouCache::build(boxes, config.class_aware));
        for (t, &alpha) in config.alpha_schedule.iter().enumerate() {
            let theta = config.theta_at(t);
            let graph = graph_from_cache(Arc::clone(&cache), theta);
            let params = MessageParams {
                alpha,
                theta_n: config.theta_n,
                zeta: config.zeta,
            };
            let update = compute_messages(&graph, &snapshot, &sup, params);
            let next = update.apply(&snapshot);
            sup.apply(&update.suppressor);
            if trace {
                steps.push(IterationTrace {
                    theta,
                    alpha,
                    edges: graph.edge_count(),
                    update,
                    scores: next.clone(),
                });
            }
            snapshot = ScoreSnapshot::new(next, Some(snapshot.ordinals().to_vec()));
        }
    }

    let scores = snapshot.into_scores();
    let trace = initial.map(|initial| ClusterTrace {
        initial,
        iterations: steps,
        suppression: sup,
    });
    Ok((scores, trace))
}

/// Sorts positions by descending score, ties by ascending box index.
pub fn rank_positions(boxes: &[BBox], positions: &mut [usize], scores: &[f64]) {
    positions.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(boxes[a].index.cmp(&boxes[b].index))
    });
}

/// Applies new scores, drops boxes below `min_score` and optionally sorts.
pub fn finalize(boxes: &[BBox], scores: &[f64], min_score: f64, sort: bool) -> Vec<BBox> {
    let mut keep: Vec<usize> = (0..boxes.len()).filter(|&i| scores[i] >= min_score).collect();
    if sort {
        rank_positions(boxes, &mut keep, scores);
    }
    keep.into_iter()
        .map(|i| BBox {
            score: scores[i],
            ..boxes[i]
        })
        .collect()
}

/// Confidence propagation clustering over one detection set.
///
/// Coordinates, classes and indices pass through untouched; only scores
/// change. Boxes scoring below `min_score` afterwards are dropped.
pub fn cp_cluster(boxes: &[BBox], config: &ClusterConfig) -> Result<Vec<BBox>, ClusterError> {
    let scores = propagate(boxes, config)?;
    Ok(finalize(boxes, &scores, config.min_score, config.sort_output))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_boxes() -> Vec<BBox> {
        vec![
            BBox::new(0.0, 0.0, 10.0, 10.0, 0.9, 0, 0).unwrap(),
            // IOU 70/100
            BBox::new(0.0, 0.0, 10.0, 7.0, 0.8, 0, 1).unwrap(),
        ]
    }

    #[test]
    fn defaults_are_valid() {
        ClusterConfig::default().validate().unwrap();
        assert_eq!(ClusterConfig::default().theta_at(1), 0.8);
    }

    #[test]
    fn two_box_trace() {
        let trace = propagate_traced(&two_boxes(), &ClusterConfig::default()).unwrap();
        let first = &trace.iterations[0];
        assert_eq!(first.edges, 1);
        assert_eq!(first.update.m_pos, vec![0.0, 0.0]);
        assert_eq!(first.update.suppressor, vec![None, Some(0)]);
        assert_eq!(first.update.m_neg[1], 0.8 * 0.7);
        let second = &trace.iterations[1];
        assert_eq!(second.edges, 0);
        assert_eq!(second.update.suppressor, vec![None, None]);
        assert_eq!(trace.suppression.get(0, 1), 1);

        let out = cp_cluster(&two_boxes(), &ClusterConfig::default()).unwrap();
        assert_eq!(out[0].score, 0.9);
        assert_eq!(out[1].score, 0.8 + 0.0 - 0.8 * 0.7);
        assert!((out[1].score - 0.24).abs() < 1e-15);
    }

    #[test]
    fn single_box_is_fixed_point() {
        let b = [BBox::new(1.0, 2.0, 3.0, 4.0, 0.37, 5, 0).unwrap()];
        assert_eq!(cp_cluster(&b, &ClusterConfig::default()).unwrap(), b.to_vec());
    }

    #[test]
    fn empty_input() {
        assert!(cp_cluster(&[], &ClusterConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn zero_iterations_is_identity_plus_filter() {
        let mut boxes = two_boxes();
        boxes[1].score = 0.0005;
        let cfg = ClusterConfig {
            iterations: 0,
            alpha_schedule: vec![],
            ..Default::default()
        };
        let out = cp_cluster(&boxes, &cfg).unwrap();
        assert_eq!(out, vec![boxes[0]]);
    }

    #[test]
    fn config_validation() {
        let bad = |f: fn(&mut ClusterConfig)| {
            let mut c = ClusterConfig::default();
            f(&mut c);
            c.validate().unwrap_err()
        };
        assert_eq!(bad(|c| c.theta0 = 1.0), ConfigError::Theta0(1.0));
        assert!(matches!(bad(|c| c.theta_n = 0.5), ConfigError::ThetaN { .. }));
        assert_eq!(bad(|c| c.zeta = 0), ConfigError::Zeta);
        assert!(matches!(bad(|c| c.iterations = 3), ConfigError::AlphaLength { .. }));
        assert!(matches!(
            bad(|c| {
                c.iterations = 3;
                c.alpha_schedule = vec![1.0, 0.0, 0.0];
            }),
            ConfigError::FinalTheta(_)
        ));
        assert_eq!(bad(|c| c.alpha_schedule[1] = 1.5), ConfigError::Alpha(1.5));
        assert_eq!(bad(|c| c.lambda = -0.1), ConfigError::Lambda(-0.1));
        assert_eq!(bad(|c| c.min_score = 2.0), ConfigError::MinScore(2.0));
    }

    #[test]
    fn rejects_bad_boxes() {
        let mut boxes = two_boxes();
        boxes[1].index = 0;
        assert_eq!(
            cp_cluster(&boxes, &ClusterConfig::default()),
            Err(ClusterError::DuplicateIndex(0))
        );
        let mut boxes = two_boxes();
        boxes[0].score = 1.2;
        assert!(matches!(
            cp_cluster(&boxes, &ClusterConfig::default()),
            Err(ClusterError::InvalidBox { position: 0, .. })
        ));
    }

    #[test]
    fn unsorted_output_keeps_input_order() {
        let mut boxes = two_boxes();
        boxes.reverse();
        let cfg = ClusterConfig {
            sort_output: false,
            ..Default::default()
        };
        let out = cp_cluster(&boxes, &cfg).unwrap();
        assert_eq!(out[0].index, 1);
        let sorted = cp_cluster(&boxes, &ClusterConfig::default()).unwrap();
        assert_eq!(sorted[0].index, 0);
    }

    #[test]
    fn class_aware_separates_classes() {
        let mut boxes = two_boxes();
        boxes[1].class_id = 1;
        let out = propagate(&boxes, &ClusterConfig::default()).unwrap();
        assert_eq!(out, vec![0.9, 0.8]);
        let agnostic = ClusterConfig {
            class_aware: false,
            ..Default::default()
        };
        assert_ne!(propagate(&boxes, &agnostic).unwrap()[1], 0.8);
    }
}
