//! Box-overlap graphs.
//!
//! Nodes are box positions in the input slice. Two boxes are adjacent when
//! they share a class (unless class handling is disabled) and their IOU is
//! strictly greater than the graph threshold. Connected components are never
//! materialized: messages only ever travel along single edges.

use std::sync::Arc;

use rayon::prelude::*;

use crate::geometry::{iou, BBox};

/// An adjacency entry: neighbor position plus the cached IOU of the pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: usize,
    pub iou: f64,
}

const SWEEP_CHUNK: usize = 256;

/// Pairwise IOUs for one detection set, stored sparsely.
///
/// Row `i` holds every `j != i` whose IOU with `i` is positive (and whose
/// class matches, when class-aware). Every pair not stored has IOU 0 (or
/// belongs to different classes), so this is an exact encoding of the dense
/// symmetric matrix.
///
/// Boxes are laid out in sweep order (by class, then `x1`), which is also
/// the order of entries within each row. Overlapping boxes end up close
/// together in memory, whatever their input positions.
#[derive(Debug, Clone, PartialEq)]
pub struct IouCache {
    slot: Vec<usize>,
    offsets: Vec<usize>,
    edges: Vec<Edge>,
    class_aware: bool,
}

impl IouCache {
    pub fn build(boxes: &[BBox], class_aware: bool) -> Self {
        let n = boxes.len();
        let mut groups: Vec<Vec<usize>> = if class_aware {
            let mut by_class = std::collections::BTreeMap::<u32, Vec<usize>>::new();
            for (i, b) in boxes.iter().enumerate() {
                by_class.entry(b.class_id).or_default().push(i);
            }
            by_class.into_values().collect()
        } else {
            vec![(0..n).collect()]
        };
        for g in groups.iter_mut() {
            g.sort_by(|&a, &b| boxes[a].x1.total_cmp(&boxes[b].x1).then(a.cmp(&b)));
        }
        let order: Vec<usize> = groups.concat();
        let mut slot = vec![0; n];
        for (m, &i) in order.iter().enumerate() {
            slot[i] = m;
        }
        // Coordinates in slot order, one array per field.
        let field = |f: fn(&BBox) -> f64| -> Vec<f64> { order.iter().map(|&i| f(&boxes[i])).collect() };
        let (xs1, xs2, ys1, ys2) = (field(|b| b.x1), field(|b| b.x2), field(|b| b.y1), field(|b| b.y2));

        // Sweep along x: once x1 of a later box reaches x2 of the current
        // one, no later box can intersect it. Each pair is found once, from
        // the box that comes first in sweep order. Work is split into
        // chunks of consecutive slots, each filling one flat buffer.
        let mut chunks = Vec::new();
        let mut group_start = 0;
        for g in &groups {
            let group_end = group_start + g.len();
            for start in (group_start..group_end).step_by(SWEEP_CHUNK) {
                chunks.push((start, (start + SWEEP_CHUNK).min(group_end), group_end));
            }
            group_start = group_end;
        }
        let forward: Vec<(Vec<Edge>, Vec<usize>)> = chunks
            .par_iter()
            .map(|&(start, end, group_end)| {
                let mut found = Vec::new();
                let mut counts = Vec::with_capacity(end - start);
                for k in start..end {
                    let (i, ax2, ay1, ay2) = (order[k], xs2[k], ys1[k], ys2[k]);
                    let before = found.len();
                    let stop = k + 1 + xs1[k + 1..group_end].partition_point(|&x| x < ax2);
                    for m in k + 1..stop {
                        if (ys1[m] < ay2) & (ay1 < ys2[m]) {
                            let j = order[m];
                            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                            let v = iou(&boxes[lo], &boxes[hi]);
                            if v > 0.0 {
                                found.push(Edge { to: j, iou: v });
                            }
                        }
                    }
                    counts.push(found.len() - before);
                }
                (found, counts)
            })
            .collect();

        let mut degree = vec![0usize; n];
        let mut m = 0;
        for (found, counts) in &forward {
            let mut at = 0;
            for &c in counts {
                degree[m] += c;
                for e in &found[at..at + c] {
                    degree[slot[e.to]] += 1;
                }
                at += c;
                m += 1;
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        // Row m first receives its partners from earlier slots, in slot
        // order, then its own forward list, so every row ends up sorted.
        let mut cursor = offsets[..n].to_vec();
        let mut edges = vec![Edge { to: 0, iou: 0.0 }; offsets[n]];
        let mut m = 0;
        for (found, counts) in forward {
            let mut at = 0;
            for c in counts {
                let i = order[m];
                for &e in &found[at..at + c] {
                    edges[cursor[m]] = e;
                    cursor[m] += 1;
                    let s = slot[e.to];
                    edges[cursor[s]] = Edge { to: i, iou: e.iou };
                    cursor[s] += 1;
                }
                at += c;
                m += 1;
            }
        }

        IouCache {
            slot,
            offsets,
            edges,
            class_aware,
        }
    }

    pub fn len(&self) -> usize {
        self.slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot.is_empty()
    }

    pub fn class_aware(&self) -> bool {
        self.class_aware
    }

    /// Cached IOU of `i` and `j`; 0 for cross-class pairs when class-aware.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = self.row(i);
        let target = self.slot[j];
        match row.binary_search_by_key(&target, |e| self.slot[e.to]) {
            Ok(k) => row[k].iou,
            Err(_) => 0.0,
        }
    }

    /// Overlapping partners of `i`, in sweep order.
    pub fn row(&self, i: usize) -> &[Edge] {
        let m = self.slot[i];
        &self.edges[self.offsets[m]..self.offsets[m + 1]]
    }

    /// Number of stored (ordered) pairs.
    pub fn nnz(&self) -> usize {
        self.edges.len()
    }
}

/// Adjacency over a detection set at a fixed IOU threshold.
///
/// A thresholded view of a shared [`IouCache`]; raising the threshold never
/// copies edges.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    cache: Arc<IouCache>,
    theta: f64,
}

impl NeighborGraph {
    pub fn n(&self) -> usize {
        self.cache.len()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn cache(&self) -> &IouCache {
        &self.cache
    }

    /// Neighbors of `i` with their IOUs, in cache row order.
    pub fn edges(&self, i: usize) -> impl Iterator<Item = &Edge> + '_ {
        let theta = self.theta;
        self.cache.row(i).iter().filter(move |e| e.iou > theta)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges(i).map(|e| e.to)
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.cache.get(i, j) > self.theta
    }

    pub fn iou(&self, i: usize, j: usize) -> f64 {
        self.cache.get(i, j)
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        (0..self.n()).map(|i| self.edges(i).count()).sum::<usize>() / 2
    }

    /// Undirected edges as `(lo, hi)` position pairs in ascending order.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            for e in self.edges(i) {
                if i < e.to {
                    out.push((i, e.to));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// The same overlaps at a new threshold.
    ///
    /// Intended for `theta >= self.theta()`, where the result is a subgraph.
    pub fn rebuild_with_theta(&self, theta: f64) -> NeighborGraph {
        debug_assert!(theta >= self.theta);
        graph_from_cache(Arc::clone(&self.cache), theta)
    }
}

/// Builds the overlap graph: `j` is adjacent to `i` iff they share a class
/// (when `class_aware`) and `iou(i, j) > theta`.
pub fn build_graph(boxes: &[BBox], theta: f64, class_aware: bool) -> NeighborGraph {
    graph_from_cache(Arc::new(IouCache::build(boxes, class_aware)), theta)
}

/// Thresholds an existing cache.
pub fn graph_from_cache(cache: Arc<IouCache>, theta: f64) -> NeighborGraph {
    NeighborGraph { cache, theta }
}
