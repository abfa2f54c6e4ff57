//! Positive and negative confidence messages.
//!
//! Everything here reads a frozen [`ScoreSnapshot`], so the messages for all
//! boxes of one iteration can be computed in any order, on any number of
//! threads, with identical results.
//!
//! "Stronger" and "weaker" use one total order: `j` is stronger than `i` iff
//! `score[j] > score[i]`, or the scores are equal and `j` has the smaller
//! box index.

use rayon::prelude::*;

use crate::geometry::BBox;
use crate::graph::NeighborGraph;

/// Scores frozen at the start of an iteration, plus the tie-break ordinals.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSnapshot {
    scores: Vec<f64>,
    ordinals: Vec<usize>,
}

impl ScoreSnapshot {
    pub fn from_boxes(boxes: &[BBox]) -> Self {
        ScoreSnapshot {
            scores: boxes.iter().map(|b| b.score).collect(),
            ordinals: boxes.iter().map(|b| b.index).collect(),
        }
    }

    /// `ordinals` defaults to positions when `None`.
    pub fn new(scores: Vec<f64>, ordinals: Option<Vec<usize>>) -> Self {
        let ordinals = ordinals.unwrap_or_else(|| (0..scores.len()).collect());
        assert_eq!(scores.len(), ordinals.len());
        assert!(
            scores.iter().all(|s| (0.0..=1.0).contains(s)),
            "snapshot scores must lie in [0, 1]"
        );
        ScoreSnapshot { scores, ordinals }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    #[inline]
    pub fn score(&self, i: usize) -> f64 {
        self.scores[i]
    }

    #[inline]
    pub fn ordinal(&self, i: usize) -> usize {
        self.ordinals[i]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn ordinals(&self) -> &[usize] {
        &self.ordinals
    }

    pub fn into_scores(self) -> Vec<f64> {
        self.scores
    }

    #[inline]
    pub fn is_stronger(&self, j: usize, i: usize) -> bool {
        let (sj, si) = (self.scores[j], self.scores[i]);
        sj > si || (sj == si && self.ordinals[j] < self.ordinals[i])
    }
}

/// `counts[j][i]`: how many iterations box `j` was chosen to suppress box `i`.
///
/// Stored by column, so column `i` is only ever touched by the worker that
/// owns box `i`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuppressionMatrix {
    columns: Vec<Vec<(usize, u32)>>,
}

impl SuppressionMatrix {
    pub fn new(n: usize) -> Self {
        SuppressionMatrix {
            columns: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, j: usize, i: usize) -> u32 {
        column_count(&self.columns[i], j)
    }

    /// Nonzero `(j, count)` entries of column `i`, in insertion order.
    pub fn column(&self, i: usize) -> &[(usize, u32)] {
        &self.columns[i]
    }

    pub fn increment(&mut self, j: usize, i: usize) {
        assert_ne!(j, i, "a box never suppresses itself");
        increment_column(&mut self.columns[i], j);
    }

    /// Applies one iteration's suppressor choices, one increment per box.
    pub fn apply(&mut self, suppressor: &[Option<usize>]) {
        assert_eq!(suppressor.len(), self.columns.len());
        self.columns
            .par_iter_mut()
            .zip(suppressor.par_iter())
            .enumerate()
            .for_each(|(i, (col, s))| {
                if let Some(j) = *s {
                    assert_ne!(j, i, "a box never suppresses itself");
                    increment_column(col, j);
                }
            });
    }

    /// Nonzero entries as `(j, i, count)`, ordered by `i` then `j`.
    pub fn entries(&self) -> Vec<(usize, usize, u32)> {
        let mut out = Vec::new();
        for (i, col) in self.columns.iter().enumerate() {
            let mut col = col.clone();
            col.sort_unstable();
            out.extend(col.into_iter().map(|(j, c)| (j, i, c)));
        }
        out
    }

    pub fn max_count(&self) -> u32 {
        self.columns
            .iter()
            .flat_map(|c| c.iter().map(|&(_, n)| n))
            .max()
            .unwrap_or(0)
    }
}

#[inline]
fn column_count(col: &[(usize, u32)], j: usize) -> u32 {
    col.iter().find(|(k, _)| *k == j).map_or(0, |&(_, c)| c)
}

fn increment_column(col: &mut Vec<(usize, u32)>, j: usize) {
    match col.iter_mut().find(|(k, _)| *k == j) {
        Some(entry) => entry.1 += 1,
        None => col.push((j, 1)),
    }
}

/// Messages produced for every box in one iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageUpdate {
    pub m_pos: Vec<f64>,
    pub m_neg: Vec<f64>,
    pub suppressor: Vec<Option<usize>>,
}

impl MessageUpdate {
    /// `snapshot + m_pos - m_neg`, in that evaluation order.
    pub fn apply(&self, snapshot: &ScoreSnapshot) -> Vec<f64> {
        snapshot
            .scores
            .iter()
            .zip(&self.m_pos)
            .zip(&self.m_neg)
            .enumerate()
            .map(|(i, ((&s, &p), &n))| {
                let next = s + p - n;
                assert!(
                    (0.0..=1.0).contains(&next),
                    "score of box {i} left [0, 1]: {s} + {p} - {n} = {next}"
                );
                next
            })
            .collect()
    }
}

/// Per-iteration message parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageParams {
    pub alpha: f64,
    pub theta_n: f64,
    pub zeta: u32,
}

/// Neighbors of `i` that are weaker than `i` and overlap it by more than
/// `theta_n`, in position order.
pub fn weaker_friends(
    i: usize,
    graph: &NeighborGraph,
    snapshot: &ScoreSnapshot,
    theta_n: f64,
) -> Vec<usize> {
    let mut out: Vec<usize> = graph
        .edges(i)
        .filter(|e| e.iou > theta_n && snapshot.is_stronger(i, e.to))
        .map(|e| e.to)
        .collect();
    out.sort_unstable();
    out
}

/// Weaker-friends aggregation: `Q/(Q+1) * (1 - s_i) * max friend score`.
pub fn positive_message(i: usize, friends: &[usize], snapshot: &ScoreSnapshot) -> f64 {
    if friends.is_empty() {
        return 0.0;
    }
    let best = friends
        .iter()
        .map(|&j| snapshot.score(j))
        .fold(f64::NEG_INFINITY, f64::max);
    aggregate(friends.len(), snapshot.score(i), best)
}

#[inline]
pub(crate) fn aggregate(count: usize, score: f64, best_friend: f64) -> f64 {
    let q = count as f64;
    q / (q + 1.0) * (1.0 - score) * best_friend
}

/// Neighbors of `i` that are stronger than `i`, in position order.
pub fn stronger_neighbors(i: usize, graph: &NeighborGraph, snapshot: &ScoreSnapshot) -> Vec<usize> {
    let mut out: Vec<usize> = graph
        .neighbors(i)
        .filter(|&j| snapshot.is_stronger(j, i))
        .collect();
    out.sort_unstable();
    out
}

/// How strongly `j` claims the right to suppress `i`:
/// `alpha * s_j / s_i + (1 - alpha) * iou(j, i) / theta`.
///
/// A zero `s_i` with positive `alpha` gives `+inf`: every stronger neighbor
/// dominates a box that has nothing left to lose.
pub fn negative_impact(
    j: usize,
    i: usize,
    snapshot: &ScoreSnapshot,
    graph: &NeighborGraph,
    alpha: f64,
    theta: f64,
) -> f64 {
    impact(
        alpha,
        snapshot.score(j),
        snapshot.score(i),
        graph.iou(j, i),
        theta,
    )
}

#[inline]
pub(crate) fn impact(alpha: f64, s_j: f64, s_i: f64, overlap: f64, theta: f64) -> f64 {
    let ratio = if alpha == 0.0 {
        0.0
    } else if s_i == 0.0 {
        f64::INFINITY
    } else {
        alpha * s_j / s_i
    };
    let near = if alpha == 1.0 {
        0.0
    } else if theta > 0.0 {
        (1.0 - alpha) * overlap / theta
    } else {
        f64::INFINITY
    };
    ratio + near
}

/// Picks the stronger neighbor with maximal impact among those that have
/// suppressed `i` fewer than `zeta` times, and returns `s_i * iou` with it.
///
/// Impact ties go to the smaller box index. Returns `(0.0, None)` when no
/// neighbor is eligible. The caller owns the `sup` increment.
pub fn negative_message(
    i: usize,
    graph: &NeighborGraph,
    snapshot: &ScoreSnapshot,
    sup: &SuppressionMatrix,
    zeta: u32,
    alpha: f64,
    theta: f64,
) -> (f64, Option<usize>) {
    let mut best: Option<(usize, f64, f64)> = None;
    for e in graph.edges(i) {
        let j = e.to;
        if !snapshot.is_stronger(j, i) || sup.get(j, i) >= zeta {
            continue;
        }
        let t = impact(alpha, snapshot.score(j), snapshot.score(i), e.iou, theta);
        if better(t, j, best.map(|(b, bt, _)| (b, bt)), snapshot) {
            best = Some((j, t, e.iou));
        }
    }
    match best {
        Some((j, _, overlap)) => (snapshot.score(i) * overlap, Some(j)),
        None => (0.0, None),
    }
}

#[inline]
fn better(t: f64, j: usize, current: Option<(usize, f64)>, snapshot: &ScoreSnapshot) -> bool {
    match current {
        None => true,
        Some((b, bt)) => t > bt || (t == bt && snapshot.ordinal(j) < snapshot.ordinal(b)),
    }
}

/// All messages for one iteration.
///
/// Positive and negative messages are gathered in a single pass over each
/// box's edges. Boxes are independent, so they are split across the rayon
/// pool. Every reduction is a count, a maximum or an arg-max with an
/// explicit tie rule, so edge order never affects the result.
pub fn compute_messages(
    graph: &NeighborGraph,
    snapshot: &ScoreSnapshot,
    sup: &SuppressionMatrix,
    params: MessageParams,
) -> MessageUpdate {
    let n = graph.n();
    assert_eq!(snapshot.len(), n);
    assert_eq!(sup.n(), n);
    let theta = graph.theta();

    let per_box: Vec<(f64, f64, Option<usize>)> = (0..n)
        .into_par_iter()
        .with_min_len(64)
        .map(|i| {
            let s_i = snapshot.score(i);
            let ord_i = snapshot.ordinal(i);
            let column = sup.column(i);
            let mut friends = 0usize;
            let mut best_friend = f64::NEG_INFINITY;
            let mut best: Option<(usize, f64)> = None;
            let mut best_iou = 0.0;
            for e in graph.edges(i) {
                let j = e.to;
                let s_j = snapshot.score(j);
                if s_j > s_i || (s_j == s_i && snapshot.ordinal(j) < ord_i) {
                    if column.is_empty() || column_count(column, j) < params.zeta {
                        let t = impact(params.alpha, s_j, s_i, e.iou, theta);
                        if better(t, j, best, snapshot) {
                            best = Some((j, t));
                            best_iou = e.iou;
                        }
                    }
                } else if e.iou > params.theta_n {
                    friends += 1;
                    best_friend = best_friend.max(s_j);
                }
            }
            let m_pos = if friends == 0 {
                0.0
            } else {
                aggregate(friends, s_i, best_friend)
            };
            match best {
                Some((j, _)) => (m_pos, s_i * best_iou, Some(j)),
                None => (m_pos, 0.0, None),
            }
        })
        .collect();

    let mut update = MessageUpdate {
        m_pos: Vec::with_capacity(n),
        m_neg: Vec::with_capacity(n),
        suppressor: Vec::with_capacity(n),
    };
    for (p, m, s) in per_box {
        update.m_pos.push(p);
        update.m_neg.push(m);
        update.suppressor.push(s);
    }
    update
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use approx::assert_relative_eq;

    /// Boxes sharing x-range [0, 10] whose height sets the IOU with box 0:
    /// box 0 is [0,0,10,10], a box [0,0,10,h] has IOU h/10.
    fn stack(first_score: f64, others: &[(f64, f64)]) -> Vec<BBox> {
        let mut v = vec![BBox::new(0.0, 0.0, 10.0, 10.0, first_score, 0, 0).unwrap()];
        for (k, &(overlap, score)) in others.iter().enumerate() {
            v.push(BBox::new(0.0, 0.0, 10.0, 10.0 * overlap, score, 0, k + 1).unwrap());
        }
        v
    }

    #[test]
    fn isolated_box_has_no_friends() {
        let boxes = stack(0.9, &[]);
        let g = build_graph(&boxes, 0.6, true);
        let snap = ScoreSnapshot::from_boxes(&boxes);
        assert!(weaker_friends(0, &g, &snap, 0.8).is_empty());
        assert!(stronger_neighbors(0, &g, &snap).is_empty());
    }

    #[test]
    fn weaker_friend_membership() {
        let boxes = stack(0.9, &[(0.85, 0.4), (0.85, 0.3), (0.70, 0.5)]);
        let g = build_graph(&boxes, 0.6, true);
        let snap = ScoreSnapshot::from_boxes(&boxes);
        assert_eq!(weaker_friends(0, &g, &snap, 0.8), vec![1, 2]);
    }

    #[test]
    fn equal_scores_break_ties_by_index() {
        let boxes = stack(0.6, &[(0.9, 0.6)]);
        let g = build_graph(&boxes, 0.6, true);
        let snap = ScoreSnapshot::from_boxes(&boxes);
        assert_eq!(weaker_friends(0, &g, &snap, 0.8), vec![1]);
        assert!(weaker_friends(1, &g, &snap, 0.8).is_empty());
        assert!(stronger_neighbors(0, &g, &snap).is_empty());
        assert_eq!(stronger_neighbors(1, &g, &snap), vec![0]);
    }

    #[test]
    fn positive_message_examples() {
        let snap = ScoreSnapshot::new(vec![0.5, 0.4, 0.3, 0.2], None);
        // 0.15 is not reachable in f64; the product rounds one ulp above
        let m = positive_message(0, &[1, 2, 3], &snap);
        assert_eq!(m, 3.0 / 4.0 * 0.5 * 0.4);
        assert!((m - 0.15).abs() < 1e-15);
        assert_eq!(positive_message(0, &[], &snap), 0.0);
        let saturated = ScoreSnapshot::new(vec![1.0, 0.9, 0.8], None);
        assert_eq!(positive_message(0, &[1, 2], &saturated), 0.0);
    }

    #[test]
    fn stronger_neighbor_filter() {
        let boxes = stack(0.4, &[(0.9, 0.8), (0.9, 0.7), (0.9, 0.2)]);
        let g = build_graph(&boxes, 0.6, true);
        let snap = ScoreSnapshot::from_boxes(&boxes);
        assert_eq!(stronger_neighbors(0, &g, &snap), vec![1, 2]);
        // the highest-scored box has nothing above it
        assert!(stronger_neighbors(1, &g, &snap).is_empty());
    }

    #[test]
    fn negative_impact_examples() {
        assert_relative_eq!(impact(1.0, 0.9, 0.3, 0.5, 0.6), 3.0, epsilon = 1e-12);
        assert_relative_eq!(impact(0.0, 0.9, 0.3, 0.72, 0.6), 1.2, epsilon = 1e-12);
        assert_relative_eq!(impact(0.5, 0.8, 0.4, 0.66, 0.6), 1.55, epsilon = 1e-12);
        assert_eq!(impact(1.0, 0.5, 0.0, 0.9, 0.6), f64::INFINITY);
        assert_relative_eq!(impact(0.0, 0.5, 0.0, 0.9, 0.6), 1.5, epsilon = 1e-12);
    }

    fn suppressor_fixture() -> Vec<BBox> {
        // b1: score 0.8, IOU 0.65; b2: score 0.7, IOU 0.75
        stack(0.4, &[(0.65, 0.8), (0.75, 0.7)])
    }

    #[test]
    fn suppressor_choice_follows_alpha() {
        let boxes = suppressor_fixture();
        let g = build_graph(&boxes, 0.6, true);
        let snap = ScoreSnapshot::from_boxes(&boxes);
        let sup = SuppressionMatrix::new(3);
        assert_eq!(
            negative_impact(1, 0, &snap, &g, 1.0, 0.6),
            0.8 / 0.4
        );
        assert_eq!(negative_message(0, &g, &snap, &sup, 2, 1.0, 0.6), (0.4 * 0.65, Some(1)));
        assert_eq!(negative_message(0, &g, &snap, &sup, 2, 0.0, 0.6), (0.4 * 0.75, Some(2)));
    }

    #[test]
    fn exhausted_suppressors_are_skipped() {
        let boxes = suppressor_fixture();
        let g = build_graph(&boxes, 0.6, true);
        let snap = ScoreSnapshot::from_boxes(&boxes);
        let mut sup = SuppressionMatrix::new(3);
        sup.increment(1, 0);
        assert_eq!(negative_message(0, &g, &snap, &sup, 1, 1.0, 0.6).1, Some(2));
        sup.increment(2, 0);
        assert_eq!(negative_message(0, &g, &snap, &sup, 1, 1.0, 0.6), (0.0, None));
        assert_eq!(negative_message(0, &g, &snap, &sup, 2, 1.0, 0.6).1, Some(1));
    }

    #[test]
    fn local_maximum_gets_no_negative_message() {
        let boxes = suppressor_fixture();
        let g = build_graph(&boxes, 0.6, true);
        let snap = ScoreSnapshot::from_boxes(&boxes);
        let sup = SuppressionMatrix::new(3);
        assert_eq!(negative_message(1, &g, &snap, &sup, 2, 1.0, 0.6), (0.0, None));
    }

    #[test]
    fn impact_ties_go_to_lower_index() {
        // two identical stronger neighbors
        let boxes = stack(0.3, &[(0.9, 0.8), (0.9, 0.8)]);
        let g = build_graph(&boxes, 0.6, true);
        let snap = ScoreSnapshot::from_boxes(&boxes);
        let sup = SuppressionMatrix::new(3);
        assert_eq!(negative_message(0, &g, &snap, &sup, 2, 0.0, 0.6).1, Some(1));
    }

    #[test]
    fn fused_pass_matches_individual_operations() {
        let boxes = stack(0.5, &[(0.85, 0.4), (0.9, 0.3), (0.7, 0.9), (0.95, 0.5)]);
        let g = build_graph(&boxes, 0.6, true);
        let snap = ScoreSnapshot::from_boxes(&boxes);
        let mut sup = SuppressionMatrix::new(boxes.len());
        sup.increment(3, 0);
        for alpha in [0.0, 0.5, 1.0] {
            let params = MessageParams { alpha, theta_n: 0.8, zeta: 1 };
            let u = compute_messages(&g, &snap, &sup, params);
            for i in 0..boxes.len() {
                let friends = weaker_friends(i, &g, &snap, 0.8);
                assert_eq!(u.m_pos[i], positive_message(i, &friends, &snap));
                let (m, s) = negative_message(i, &g, &snap, &sup, 1, alpha, 0.6);
                assert_eq!((u.m_neg[i], u.suppressor[i]), (m, s));
            }
        }
    }

    #[test]
    fn suppression_matrix_counts() {
        let mut sup = SuppressionMatrix::new(3);
        sup.apply(&[None, Some(0), Some(0)]);
        sup.apply(&[None, Some(0), Some(1)]);
        assert_eq!(sup.get(0, 1), 2);
        assert_eq!(sup.get(0, 2), 1);
        assert_eq!(sup.get(1, 2), 1);
        assert_eq!(sup.get(2, 1), 0);
        assert_eq!(sup.max_count(), 2);
        assert_eq!(sup.entries(), vec![(0, 1, 2), (0, 2, 1), (1, 2, 1)]);
    }
}
