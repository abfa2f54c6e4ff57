//! Greedy reference post-processors: hard NMS, Soft-NMS and Soft-NMS with
//! weaker-friends amplification.
//!
//! All three pick boxes one at a time in confidence order, so they are
//! sequential per detection set.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};
use crate::messages::aggregate;

/// Per-position result of a greedy pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Kept positions in selection order.
    pub order: Vec<usize>,
    /// Final score of every input position (the score at drop time for
    /// discarded boxes).
    pub scores: Vec<f64>,
    pub keep: Vec<bool>,
}

impl Selection {
    pub fn boxes(&self, input: &[BBox]) -> Vec<BBox> {
        self.order
            .iter()
            .map(|&i| BBox {
                score: self.scores[i],
                ..input[i]
            })
            .collect()
    }
}

#[inline]
fn ahead(boxes: &[BBox], scores: &[f64], j: usize, i: usize) -> bool {
    scores[j] > scores[i] || (scores[j] == scores[i] && boxes[j].index < boxes[i].index)
}

#[inline]
fn same_class(a: &BBox, b: &BBox, class_aware: bool) -> bool {
    !class_aware || a.class_id == b.class_id
}

pub fn nms_selection(boxes: &[BBox], theta: f64, class_aware: bool) -> Selection {
    let n = boxes.len();
    let scores: Vec<f64> = boxes.iter().map(|b| b.score).collect();
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(boxes[a].index.cmp(&boxes[b].index))
    });
    let mut suppressed = vec![false; n];
    let mut keep = vec![false; n];
    let mut order = Vec::new();
    for (k, &i) in ranked.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep[i] = true;
        order.push(i);
        for &j in &ranked[k + 1..] {
            if !suppressed[j]
                && same_class(&boxes[i], &boxes[j], class_aware)
                && iou(&boxes[i], &boxes[j]) > theta
            {
                suppressed[j] = true;
            }
        }
    }
    Selection {
        order,
        scores,
        keep,
    }
}

/// Greedy hard NMS. Kept boxes come back in descending score order.
pub fn nms(boxes: &[BBox], theta: f64, class_aware: bool) -> Vec<BBox> {
    nms_selection(boxes, theta, class_aware).boxes(boxes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftMode {
    /// `s * (1 - iou)` when `iou > theta`.
    #[default]
    Linear,
    /// `s * exp(-iou^2 / sigma)` for every remaining box.
    Gaussian,
}

impl FromStr for SoftMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(SoftMode::Linear),
            "gaussian" => Ok(SoftMode::Gaussian),
            other => Err(format!("unknown soft mode '{other}' (expected linear or gaussian)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftNmsParams {
    pub theta: f64,
    pub mode: SoftMode,
    pub sigma: f64,
    pub score_thresh: f64,
    pub class_aware: bool,
}

impl Default for SoftNmsParams {
    fn default() -> Self {
        SoftNmsParams {
            theta: 0.6,
            mode: SoftMode::Linear,
            sigma: 0.5,
            score_thresh: 0.001,
            class_aware: true,
        }
    }
}

impl SoftNmsParams {
    #[inline]
    fn decay(&self, score: f64, overlap: f64) -> f64 {
        match self.mode {
            SoftMode::Linear if overlap > self.theta => score * (1.0 - overlap),
            SoftMode::Linear => score,
            SoftMode::Gaussian => score * (-(overlap * overlap) / self.sigma).exp(),
        }
    }
}

pub fn soft_nms_selection(boxes: &[BBox], params: &SoftNmsParams) -> Selection {
    greedy_soft(boxes, params, None)
}

pub fn snms_wfa_selection(boxes: &[BBox], params: &SoftNmsParams, theta_n: f64) -> Selection {
    greedy_soft(boxes, params, Some(theta_n))
}

/// Soft-NMS. Boxes decayed below `score_thresh` are dropped; output is in
/// selection order.
pub fn soft_nms(boxes: &[BBox], params: &SoftNmsParams) -> Vec<BBox> {
    soft_nms_selection(boxes, params).boxes(boxes)
}

/// Soft-NMS where each selected box is first amplified by the positive
/// message of its current weaker friends (remaining same-class boxes with
/// IOU above `theta_n`), then suppresses them.
pub fn snms_wfa(boxes: &[BBox], params: &SoftNmsParams, theta_n: f64) -> Vec<BBox> {
    snms_wfa_selection(boxes, params, theta_n).boxes(boxes)
}

fn greedy_soft(boxes: &[BBox], params: &SoftNmsParams, friends_above: Option<f64>) -> Selection {
    let n = boxes.len();
    let mut scores: Vec<f64> = boxes.iter().map(|b| b.score).collect();
    let mut alive: Vec<usize> = (0..n).filter(|&i| scores[i] >= params.score_thresh).collect();
    let mut keep = vec![false; n];
    let mut order = Vec::new();

    while !alive.is_empty() {
        let mut at = 0;
        for k in 1..alive.len() {
            if ahead(boxes, &scores, alive[k], alive[at]) {
                at = k;
            }
        }
        let m = alive.remove(at);

        if let Some(theta_n) = friends_above {
            let mut count = 0usize;
            let mut best = f64::NEG_INFINITY;
            for &j in &alive {
                if same_class(&boxes[m], &boxes[j], params.class_aware)
                    && ahead(boxes, &scores, m, j)
                    && iou(&boxes[m], &boxes[j]) > theta_n
                {
                    count += 1;
                    best = best.max(scores[j]);
                }
            }
            if count > 0 {
                let boosted = scores[m] + aggregate(count, scores[m], best);
                debug_assert!(boosted <= 1.0);
                scores[m] = boosted;
            }
        }

        keep[m] = true;
        order.push(m);
        alive.retain(|&j| {
            if same_class(&boxes[m], &boxes[j], params.class_aware) {
                scores[j] = params.decay(scores[j], iou(&boxes[m], &boxes[j]));
            }
            scores[j] >= params.score_thresh
        });
    }

    Selection {
        order,
        scores,
        keep,
    }
}
