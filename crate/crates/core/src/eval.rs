//! COCO-style box evaluation at desk scale.
//!
//! Greedy score-ordered matching, 101-point interpolated AP over the IOU
//! thresholds 0.50:0.05:0.95, and a method comparison driver. Crowd ground
//! truths are ignored outright (they neither match nor count), and there is
//! no per-image detection cap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};
use crate::method::{Method, MethodError};

/// Detections keyed by image id.
pub type DetectionSet = BTreeMap<u64, Vec<BBox>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class_id: u32,
    pub image_id: u64,
    pub crowd: bool,
}

impl GroundTruthBox {
    pub fn as_bbox(&self) -> BBox {
        BBox {
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
            score: 1.0,
            class_id: self.class_id,
            index: 0,
        }
    }
}

/// Ground truth for a set of images. Images may have no boxes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub images: BTreeSet<u64>,
    pub boxes: BTreeMap<u64, Vec<GroundTruthBox>>,
    pub categories: BTreeMap<u32, String>,
}

impl GroundTruth {
    pub fn boxes_for(&self, image_id: u64) -> &[GroundTruthBox] {
        self.boxes.get(&image_id).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.boxes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("detections reference images missing from the ground truth: {0:?}")]
    OrphanImages(Vec<u64>),
    #[error(transparent)]
    Method(#[from] MethodError),
}

/// The ten COCO thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

/// Greedy matching for one image and one class.
///
/// Detections are visited by descending score (box index breaks ties); each
/// takes the unmatched non-crowd ground truth of its class with the highest
/// IOU at or above `iou_thresh`. Returns `(detection position, matched gt
/// position)` in visiting order.
pub fn match_detections(
    dets: &[BBox],
    gts: &[GroundTruthBox],
    iou_thresh: f64,
) -> Vec<(usize, Option<usize>)> {
    let mut ranked: Vec<usize> = (0..dets.len()).collect();
    ranked.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].index.cmp(&dets[b].index))
    });
    let gt_boxes: Vec<BBox> = gts.iter().map(GroundTruthBox::as_bbox).collect();
    let mut taken = vec![false; gts.len()];
    ranked
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || gt.crowd || gt.class_id != dets[d].class_id {
                    continue;
                }
                let v = iou(&dets[d], &gt_boxes[g]);
                if v >= iou_thresh && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            (d, best.map(|(g, _)| g))
        })
        .collect()
}

/// One detection's outcome, pooled across images for AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredMatch {
    pub score: f64,
    pub image_id: u64,
    pub index: usize,
    pub true_positive: bool,
}

/// 101-point interpolated average precision.
///
/// `None` when there are neither ground truths nor detections (the class is
/// skipped); `Some(0.0)` when detections exist without ground truth.
pub fn average_precision(matches: &[ScoredMatch], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return if matches.is_empty() { None } else { Some(0.0) };
    }
    let mut ranked = matches.to_vec();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.image_id.cmp(&b.image_id))
            .then(a.index.cmp(&b.index))
    });

    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for m in &ranked {
        if m.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for k in (1..precision.len()).rev() {
        if precision[k] > precision[k - 1] {
            precision[k - 1] = precision[k];
        }
    }

    let mut sum = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let at = recall.partition_point(|&v| v < level);
        if at < precision.len() {
            sum += precision[at];
        }
    }
    Some(sum / 101.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub detections: usize,
    pub ground_truths: usize,
    /// True positives at each threshold.
    pub matched: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub thresholds: Vec<f64>,
    /// Class-averaged AP, aligned with `thresholds`.
    pub ap_per_threshold: Vec<f64>,
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Per-class AP at each threshold, for classes that were evaluated.
    pub per_class_ap: BTreeMap<u32, Vec<f64>>,
    pub counts: EvalCounts,
}

impl EvalResult {
    pub fn class_map(&self) -> BTreeMap<u32, f64> {
        self.per_class_ap
            .iter()
            .map(|(&c, aps)| (c, aps.iter().sum::<f64>() / aps.len() as f64))
            .collect()
    }
}

/// Evaluates detections against ground truth.
///
/// Every detection image must be declared in the ground truth.
pub fn evaluate(dets: &DetectionSet, gt: &GroundTruth) -> Result<EvalResult, EvalError> {
    let orphans: Vec<u64> = dets
        .keys()
        .copied()
        .filter(|id| !gt.images.contains(id))
        .collect();
    if !orphans.is_empty() {
        return Err(EvalError::OrphanImages(orphans));
    }

    let mut classes = BTreeSet::new();
    for b in dets.values().flatten() {
        classes.insert(b.class_id);
    }
    for g in gt.boxes.values().flatten() {
        classes.insert(g.class_id);
    }
    let classes: Vec<u32> = classes.into_iter().collect();
    let thresholds = iou_thresholds();

    // (class, threshold) -> (ap, true positives)
    let cells: Vec<(Option<f64>, usize)> = classes
        .par_iter()
        .flat_map_iter(|&c| thresholds.iter().map(move |&t| (c, t)))
        .map(|(c, t)| class_ap(dets, gt, c, t))
        .collect();

    let mut per_class_ap = BTreeMap::new();
    let mut ap_sums = [0.0; 10];
    let mut evaluated = 0usize;
    let mut matched = vec![0usize; thresholds.len()];
    for (ci, &c) in classes.iter().enumerate() {
        let row = &cells[ci * thresholds.len()..(ci + 1) * thresholds.len()];
        for (t, &(_, tp)) in row.iter().enumerate() {
            matched[t] += tp;
        }
        if row[0].0.is_none() {
            continue;
        }
        let aps: Vec<f64> = row.iter().map(|(ap, _)| ap.unwrap_or(0.0)).collect();
        for (sum, ap) in ap_sums.iter_mut().zip(&aps) {
            *sum += ap;
        }
        evaluated += 1;
        per_class_ap.insert(c, aps);
    }

    let ap_per_threshold: Vec<f64> = if evaluated == 0 {
        vec![0.0; thresholds.len()]
    } else {
        ap_sums.iter().map(|s| s / evaluated as f64).collect()
    };
    let map = ap_per_threshold.iter().sum::<f64>() / ap_per_threshold.len() as f64;
    Ok(EvalResult {
        thresholds: thresholds.to_vec(),
        ap50: ap_per_threshold[0],
        ap75: ap_per_threshold[5],
        map,
        ap_per_threshold,
        per_class_ap,
        counts: EvalCounts {
            detections: dets.values().map(Vec::len).sum(),
            ground_truths: gt.boxes.values().flatten().filter(|g| !g.crowd).count(),
            matched,
        },
    })
}

fn class_ap(dets: &DetectionSet, gt: &GroundTruth, class_id: u32, thresh: f64) -> (Option<f64>, usize) {
    let mut pooled = Vec::new();
    let mut num_gt = 0;
    for &image_id in &gt.images {
        let gts: Vec<GroundTruthBox> = gt
            .boxes_for(image_id)
            .iter()
            .filter(|g| g.class_id == class_id && !g.crowd)
            .copied()
            .collect();
        num_gt += gts.len();
        let Some(image_dets) = dets.get(&image_id) else {
            continue;
        };
        let own: Vec<BBox> = image_dets
            .iter()
            .filter(|b| b.class_id == class_id)
            .copied()
            .collect();
        for (d, m) in match_detections(&own, &gts, thresh) {
            pooled.push(ScoredMatch {
                score: own[d].score,
                image_id,
                index: own[d].index,
                true_positive: m.is_some(),
            });
        }
    }
    let tp = pooled.iter().filter(|m| m.true_positive).count();
    (average_precision(&pooled, num_gt), tp)
}

/// One row of a method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub params: serde_json::Value,
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Class id to mAP over the ten thresholds.
    pub per_class: BTreeMap<u32, f64>,
    pub wall_time_ms: f64,
}

impl ReportRow {
    pub fn new(method: &str, params: serde_json::Value, result: &EvalResult, wall_time_ms: f64) -> Self {
        ReportRow {
            method: method.to_string(),
            params,
            map: result.map,
            ap50: result.ap50,
            ap75: result.ap75,
            per_class: result.class_map(),
            wall_time_ms,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
}

impl ComparisonReport {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Plain-text table, metrics in percent.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>8} {:>11}", "method", "mAP", "AP50", "AP75", "time(ms)");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:>8.2} {:>8.2} {:>8.2} {:>11.2}",
                r.method,
                r.map * 100.0,
                r.ap50 * 100.0,
                r.ap75 * 100.0,
                r.wall_time_ms
            );
        }
        out
    }
}

/// Runs each method over every image, evaluates the result and times the
/// post-processing step.
pub fn compare_methods(
    raw: &DetectionSet,
    gt: &GroundTruth,
    methods: &[Method],
) -> Result<ComparisonReport, EvalError> {
    let mut rows = Vec::with_capacity(methods.len());
    for m in methods {
        let start = Instant::now();
        let processed = m.apply_all(raw)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        let result = evaluate(&processed, gt)?;
        rows.push(ReportRow::new(m.name(), m.params(), &result, elapsed));
    }
    Ok(ComparisonReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt_box(x1: f64, y1: f64, x2: f64, y2: f64) -> GroundTruthBox {
        GroundTruthBox {
            x1,
            y1,
            x2,
            y2,
            class_id: 0,
            image_id: 1,
            crowd: false,
        }
    }

    fn det(x1: f64, y1: f64, x2: f64, y2: f64, score: f64, index: usize) -> BBox {
        BBox::new(x1, y1, x2, y2, score, 0, index).unwrap()
    }

    fn sm(score: f64, index: usize, tp: bool) -> ScoredMatch {
        ScoredMatch {
            score,
            image_id: 1,
            index,
            true_positive: tp,
        }
    }

    #[test]
    fn thresholds() {
        let t = iou_thresholds();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[5], 0.75);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn single_pair_matching() {
        let gts = [gt_box(0.0, 0.0, 10.0, 10.0)];
        // IOU 0.6
        assert_eq!(match_detections(&[det(0.0, 0.0, 10.0, 6.0, 0.9, 0)], &gts, 0.5), vec![(0, Some(0))]);
        // IOU 0.4
        assert_eq!(match_detections(&[det(0.0, 0.0, 10.0, 4.0, 0.9, 0)], &gts, 0.5), vec![(0, None)]);
    }

    #[test]
    fn higher_score_wins_over_better_overlap() {
        let gts = [gt_box(0.0, 0.0, 10.0, 10.0)];
        let dets = [det(0.0, 0.0, 10.0, 6.0, 0.9, 0), det(0.0, 0.0, 10.0, 9.0, 0.8, 1)];
        assert_eq!(match_detections(&dets, &gts, 0.5), vec![(0, Some(0)), (1, None)]);
    }

    #[test]
    fn crowd_and_foreign_class_never_match() {
        let mut crowd = gt_box(0.0, 0.0, 10.0, 10.0);
        crowd.crowd = true;
        let mut other = gt_box(0.0, 0.0, 10.0, 10.0);
        other.class_id = 4;
        let dets = [det(0.0, 0.0, 10.0, 10.0, 0.9, 0)];
        assert_eq!(match_detections(&dets, &[crowd, other], 0.5), vec![(0, None)]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[sm(0.9, 0, true), sm(0.8, 1, true)], 2), Some(1.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        let ap = average_precision(&[sm(0.9, 0, true), sm(0.8, 1, false)], 2).unwrap();
        assert!((ap - 51.0 / 101.0).abs() < 1e-12);
        assert_eq!(average_precision(&[], 0), None);
        assert_eq!(average_precision(&[sm(0.5, 0, false)], 0), Some(0.0));
    }

    #[test]
    fn ap_uses_precision_envelope() {
        // FP, TP, TP with 2 gts: precision [0, 1/2, 2/3] -> envelope [2/3, 2/3, 2/3]
        let ap = average_precision(&[sm(0.9, 0, false), sm(0.8, 1, true), sm(0.7, 2, true)], 2).unwrap();
        assert!((ap - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ap_ignores_input_order() {
        let a = [sm(0.9, 0, true), sm(0.5, 1, false), sm(0.7, 2, true), sm(0.7, 3, false)];
        let mut b = a;
        b.reverse();
        assert_eq!(average_precision(&a, 4), average_precision(&b, 4));
    }

    fn tiny_gt() -> GroundTruth {
        let mut gt = GroundTruth::default();
        gt.images.extend([1, 2]);
        gt.boxes.insert(1, vec![gt_box(0.0, 0.0, 10.0, 10.0), gt_box(20.0, 20.0, 40.0, 40.0)]);
        gt
    }

    #[test]
    fn perfect_and_empty_detections() {
        let gt = tiny_gt();
        let perfect: DetectionSet = [(
            1,
            gt.boxes[&1]
                .iter()
                .enumerate()
                .map(|(k, g)| BBox { index: k, ..g.as_bbox() })
                .collect(),
        )]
        .into();
        let r = evaluate(&perfect, &gt).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.ap50, 1.0);
        assert_eq!(r.counts.matched, vec![2; 10]);
        let r = evaluate(&DetectionSet::new(), &gt).unwrap();
        assert_eq!(r.map, 0.0);
    }

    #[test]
    fn orphan_images_are_reported() {
        let dets: DetectionSet = [(7, vec![det(0.0, 0.0, 1.0, 1.0, 0.5, 0)])].into();
        assert_eq!(evaluate(&dets, &tiny_gt()), Err(EvalError::OrphanImages(vec![7])));
    }

    #[test]
    fn class_without_ground_truth_scores_zero() {
        let gt = tiny_gt();
        let mut stray = det(0.0, 0.0, 10.0, 10.0, 0.5, 0);
        stray.class_id = 9;
        let mut dets: DetectionSet = [(1, vec![stray])].into();
        dets.get_mut(&1).unwrap().extend(gt.boxes[&1].iter().enumerate().map(|(k, g)| BBox {
            index: k + 1,
            ..g.as_bbox()
        }));
        let r = evaluate(&dets, &gt).unwrap();
        assert_eq!(r.per_class_ap[&9], vec![0.0; 10]);
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn report_table_has_one_row_per_method() {
        let report = ComparisonReport {
            rows: vec![ReportRow {
                method: "nms".into(),
                params: serde_json::json!({}),
                map: 1.0,
                ap50: 1.0,
                ap75: 1.0,
                per_class: BTreeMap::new(),
                wall_time_ms: 0.5,
            }],
        };
        let table = report.render_table();
        assert_eq!(table.lines().count(), 2);
        assert!(table.contains("100.00"));
    }
}
