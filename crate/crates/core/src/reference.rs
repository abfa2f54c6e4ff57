//! Deliberately naive implementations used as test oracles.
//!
//! Nothing here shares code with the optimized paths beyond [`iou`] and
//! input validation: overlaps are recomputed on every access, neighbor sets
//! come from full pair scans, and suppression counts live in a dense matrix.
//! Intended for a few hundred boxes at most.

use crate::cluster::{check_boxes, ClusterConfig, ClusterError};
use crate::geometry::{iou, BBox};

/// Sequential single-threaded clustering with snapshot updates.
pub fn reference_propagate(boxes: &[BBox], config: &ClusterConfig) -> Result<Vec<f64>, ClusterError> {
    config.validate()?;
    check_boxes(boxes)?;
    let n = boxes.len();
    let mut scores: Vec<f64> = boxes.iter().map(|b| b.score).collect();
    let mut sup = vec![vec![0u32; n]; n];

    for t in 0..config.iterations {
        let theta = config.theta0 + t as f64 * config.lambda;
        let alpha = config.alpha_schedule[t];
        let old = scores.clone();
        let stronger = |j: usize, i: usize| {
            old[j] > old[i] || (old[j] == old[i] && boxes[j].index < boxes[i].index)
        };
        let linked = |i: usize, j: usize| {
            i != j
                && (!config.class_aware || boxes[i].class_id == boxes[j].class_id)
                && iou(&boxes[i], &boxes[j]) > theta
        };

        let mut chosen = vec![None; n];
        for i in 0..n {
            let friends: Vec<usize> = (0..n)
                .filter(|&j| linked(i, j) && iou(&boxes[i], &boxes[j]) > config.theta_n && stronger(i, j))
                .collect();
            let m_pos = if friends.is_empty() {
                0.0
            } else {
                let q = friends.len() as f64;
                let top = friends.iter().map(|&j| old[j]).fold(f64::NEG_INFINITY, f64::max);
                q / (q + 1.0) * (1.0 - old[i]) * top
            };

            let mut pick: Option<(usize, f64)> = None;
            for j in 0..n {
                if !(linked(i, j) && stronger(j, i) && sup[j][i] < config.zeta) {
                    continue;
                }
                let overlap = iou(&boxes[j], &boxes[i]);
                let by_score = if alpha == 0.0 {
                    0.0
                } else if old[i] == 0.0 {
                    f64::INFINITY
                } else {
                    alpha * old[j] / old[i]
                };
                let by_overlap = if alpha == 1.0 {
                    0.0
                } else if theta > 0.0 {
                    (1.0 - alpha) * overlap / theta
                } else {
                    f64::INFINITY
                };
                let t_ji = by_score + by_overlap;
                let replace = match pick {
                    None => true,
                    Some((b, bt)) => t_ji > bt || (t_ji == bt && boxes[j].index < boxes[b].index),
                };
                if replace {
                    pick = Some((j, t_ji));
                }
            }
            let m_neg = match pick {
                Some((j, _)) => old[i] * iou(&boxes[i], &boxes[j]),
                None => 0.0,
            };
            chosen[i] = pick.map(|(j, _)| j);
            scores[i] = old[i] + m_pos - m_neg;
            assert!(
                (0.0..=1.0).contains(&scores[i]),
                "reference score of box {i} left [0, 1]: {}",
                scores[i]
            );
        }
        for (i, c) in chosen.into_iter().enumerate() {
            if let Some(j) = c {
                sup[j][i] += 1;
            }
        }
    }
    Ok(scores)
}

/// Reference clustering with the same filtering and ordering contract as
/// [`crate::cluster::cp_cluster`].
pub fn reference_cp_cluster(boxes: &[BBox], config: &ClusterConfig) -> Result<Vec<BBox>, ClusterError> {
    let scores = reference_propagate(boxes, config)?;
    let mut out: Vec<BBox> = boxes
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s >= config.min_score)
        .map(|(b, &s)| BBox { score: s, ..*b })
        .collect();
    if config.sort_output {
        out.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.index.cmp(&b.index)));
    }
    Ok(out)
}

/// Exhaustive greedy NMS: repeatedly scan everything left for the best box,
/// keep it, and drop every same-class box overlapping it by more than
/// `theta`. Returns kept positions in selection order.
pub fn reference_nms(boxes: &[BBox], theta: f64, class_aware: bool) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..boxes.len()).collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = remaining[0];
        for &j in &remaining {
            let (a, b) = (&boxes[j], &boxes[best]);
            if a.score > b.score || (a.score == b.score && a.index < b.index) {
                best = j;
            }
        }
        kept.push(best);
        remaining.retain(|&j| {
            let same = !class_aware || boxes[j].class_id == boxes[best].class_id;
            j != best && !(same && iou(&boxes[j], &boxes[best]) > theta)
        });
    }
    kept
}
