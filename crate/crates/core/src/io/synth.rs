//! Seeded synthetic detection corpora.
//!
//! Each ground-truth object gets a handful of jittered candidate boxes. Half
//! of them are tight (they overlap each other and the object strongly, the
//! weaker-friend clusters), the rest are loose. A candidate's score is the
//! object's confidence times its IOU with the object, plus Gaussian noise.
//! With probability `swap_prob` a random non-best candidate is lifted above
//! every other candidate of its object, so the highest-scored box is not the
//! best localized one.
//!
//! Every image draws from its own ChaCha stream keyed by the image id, so the
//! corpus is a pure function of the spec. Coordinates are snapped to a 1/16
//! pixel grid, which keeps the `[x, y, w, h]` file encoding exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::coco::{Annotation, Category, GroundTruthFile, ImageEntry};
use crate::eval::DetectionSet;
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{0}")]
    Invalid(String),
}

/// Two-parameter score model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    /// Standard deviation of additive score noise.
    pub noise: f64,
    /// Probability that an object's top-scored candidate is a redundant one.
    pub swap_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub images: usize,
    /// Inclusive range of objects per image.
    pub objects_per_image: (usize, usize),
    /// Inclusive range of candidates per object.
    pub redundancy: (usize, usize),
    /// Corner jitter standard deviation, pixels.
    pub coord_noise: f64,
    pub score_model: ScoreModel,
    pub classes: u32,
    pub image_size: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            images: 200,
            objects_per_image: (1, 6),
            redundancy: (4, 10),
            coord_noise: 4.0,
            score_model: ScoreModel {
                noise: 0.05,
                swap_prob: 0.3,
            },
            classes: 3,
            image_size: (640.0, 480.0),
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Invalid(m));
        if self.images == 0 {
            return fail("images must be positive".into());
        }
        for (name, (lo, hi)) in [("objects", self.objects_per_image), ("redundancy", self.redundancy)] {
            if lo == 0 || lo > hi {
                return fail(format!("{name} range {lo}..{hi} must be positive and ordered"));
            }
        }
        if !(self.coord_noise.is_finite() && self.coord_noise >= 0.0) {
            return fail(format!("noise must be finite and >= 0, got {}", self.coord_noise));
        }
        if !(self.score_model.noise.is_finite() && self.score_model.noise >= 0.0) {
            return fail(format!("score noise must be finite and >= 0, got {}", self.score_model.noise));
        }
        if !(0.0..=1.0).contains(&self.score_model.swap_prob) {
            return fail(format!("swap probability must lie in [0, 1], got {}", self.score_model.swap_prob));
        }
        if self.classes == 0 {
            return fail("classes must be positive".into());
        }
        if !(self.image_size.0 >= 128.0 && self.image_size.1 >= 128.0) {
            return fail("image size must be at least 128x128".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub detections: DetectionSet,
    pub ground_truth: GroundTruthFile,
}

#[inline]
fn snap(v: f64) -> f64 {
    (v * 16.0).round() / 16.0
}

struct ImageDraw {
    objects: Vec<BBox>,
    detections: Vec<BBox>,
}

fn draw_image(spec: &SynthSpec, image_id: u64) -> ImageDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(image_id);
    let (width, height) = spec.image_size;
    let jitter = |sigma: f64| Normal::new(0.0, sigma).expect("finite sigma");
    let score_noise = Normal::new(0.0, spec.score_model.noise).expect("finite noise");

    let wanted = rng.random_range(spec.objects_per_image.0..=spec.objects_per_image.1);
    let max_side = (width.min(height) / 2.0).min(192.0);
    let mut objects: Vec<BBox> = Vec::with_capacity(wanted);
    for _ in 0..wanted {
        let class_id = rng.random_range(1..=spec.classes);
        // same-class objects stay apart so a perfect detector is recoverable
        for _attempt in 0..50 {
            let w = snap(rng.random_range(32.0..max_side));
            let h = snap(rng.random_range(32.0..max_side));
            let x = snap(rng.random_range(0.0..width - w));
            let y = snap(rng.random_range(0.0..height - h));
            let b = BBox {
                x1: x,
                y1: y,
                x2: x + w,
                y2: y + h,
                score: 1.0,
                class_id,
                index: objects.len(),
            };
            if objects.iter().all(|o| o.class_id != class_id || iou(o, &b) <= 0.3) {
                objects.push(b);
                break;
            }
        }
    }

    let mut detections = Vec::new();
    for gt in &objects {
        let confidence = rng.random_range(0.55..1.0);
        let k = rng.random_range(spec.redundancy.0..=spec.redundancy.1);
        let tight = k.div_ceil(2);
        let mut cands: Vec<BBox> = Vec::with_capacity(k);
        for c in 0..k {
            let sigma = spec.coord_noise * if c < tight { 0.5 } else { 1.5 };
            let mut corner = |v: f64| {
                if sigma > 0.0 {
                    v + jitter(sigma).sample(&mut rng)
                } else {
                    v
                }
            };
            let x1 = snap(corner(gt.x1).clamp(0.0, width - 1.0));
            let y1 = snap(corner(gt.y1).clamp(0.0, height - 1.0));
            let x2 = snap(corner(gt.x2).clamp(x1 + 1.0, width));
            let y2 = snap(corner(gt.y2).clamp(y1 + 1.0, height));
            let mut b = BBox {
                x1,
                y1,
                x2,
                y2,
                score: 0.0,
                class_id: gt.class_id,
                index: 0,
            };
            let noise = if spec.score_model.noise > 0.0 {
                score_noise.sample(&mut rng)
            } else {
                0.0
            };
            b.score = (confidence * iou(&b, gt) + noise).clamp(0.02, 0.98);
            cands.push(b);
        }
        if k >= 2 && rng.random_bool(spec.score_model.swap_prob) {
            let best = (0..k)
                .max_by(|&a, &b| iou(&cands[a], gt).total_cmp(&iou(&cands[b], gt)).then(b.cmp(&a)))
                .expect("k >= 2");
            let mut other = rng.random_range(0..k - 1);
            if other >= best {
                other += 1;
            }
            let top = cands.iter().map(|b| b.score).fold(0.0, f64::max);
            cands[other].score = (top + rng.random_range(0.02..0.08)).min(0.99);
        }
        detections.extend(cands);
    }
    for (k, d) in detections.iter_mut().enumerate() {
        d.index = k;
    }
    ImageDraw { objects, detections }
}

/// Generates a detection corpus and its ground truth from `spec`.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Corpus, SynthError> {
    spec.validate()?;
    let ids: Vec<u64> = (1..=spec.images as u64).collect();
    let draws: Vec<ImageDraw> = ids.par_iter().map(|&id| draw_image(spec, id)).collect();

    let mut detections = DetectionSet::new();
    let mut annotations = Vec::new();
    for (&image_id, draw) in ids.iter().zip(draws) {
        for o in &draw.objects {
            annotations.push(Annotation {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id: o.class_id,
                bbox: o.to_xywh(),
                iscrowd: 0,
            });
        }
        if !draw.detections.is_empty() {
            detections.insert(image_id, draw.detections);
        }
    }
    let ground_truth = GroundTruthFile {
        images: ids.iter().map(|&id| ImageEntry { id }).collect(),
        categories: (1..=spec.classes)
            .map(|id| Category {
                id,
                name: format!("class{id}"),
            })
            .collect(),
        annotations,
    };
    Ok(Corpus {
        detections,
        ground_truth,
    })
}

/// A single-class, dense-overlap workload for timing: `clusters` groups of
/// roughly `boxes / clusters` jittered candidates laid out on a grid.
pub fn dense_workload(boxes: usize, clusters: usize, seed: u64) -> Vec<BBox> {
    let clusters = clusters.clamp(1, boxes.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (clusters as f64).sqrt().ceil() as usize;
    let jitter = Normal::new(0.0, 6.0).expect("finite sigma");
    (0..boxes)
        .map(|i| {
            let c = i % clusters;
            let (cx, cy) = ((c % side) as f64 * 160.0, (c / side) as f64 * 160.0);
            let x1 = snap(cx + jitter.sample(&mut rng));
            let y1 = snap(cy + jitter.sample(&mut rng));
            let x2 = snap((cx + 100.0 + jitter.sample(&mut rng)).max(x1 + 1.0));
            let y2 = snap((cy + 100.0 + jitter.sample(&mut rng)).max(y1 + 1.0));
            BBox {
                x1,
                y1,
                x2,
                y2,
                score: rng.random_range(0.05..1.0),
                class_id: 0,
                index: i,
            }
        })
        .collect()
}

/// A small random detection set for differential testing.
///
/// Up to `max_boxes` boxes over up to `max_classes` classes. The seed picks
/// an overlap regime (scattered, clustered around a few anchors, or a mix),
/// and some sets use coarse score levels so that exact score ties occur.
/// Box indices are a shuffled range, so they differ from positions.
pub fn random_detection_set(seed: u64, max_boxes: usize, max_classes: u32) -> Vec<BBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..=max_boxes);
    let classes = rng.random_range(1..=max_classes.max(1));
    let regime = rng.random_range(0..3u8);
    let coarse = rng.random_bool(0.3);
    let anchors: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(1..=4))
        .map(|_| {
            (
                rng.random_range(0.0..150.0),
                rng.random_range(0.0..150.0),
                rng.random_range(10.0..60.0),
                rng.random_range(10.0..60.0),
            )
        })
        .collect();
    let mut indices: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        indices.swap(k, rng.random_range(0..=k));
    }
    (0..n)
        .map(|k| {
            let clustered = match regime {
                0 => false,
                1 => true,
                _ => rng.random_bool(0.5),
            };
            let (x, y, w, h) = if clustered {
                let (ax, ay, aw, ah) = anchors[rng.random_range(0..anchors.len())];
                let j = aw.min(ah) * 0.15;
                (
                    ax + rng.random_range(-j..=j),
                    ay + rng.random_range(-j..=j),
                    aw + rng.random_range(-j..=j),
                    ah + rng.random_range(-j..=j),
                )
            } else {
                (
                    rng.random_range(0.0..200.0),
                    rng.random_range(0.0..200.0),
                    rng.random_range(1.0..60.0),
                    rng.random_range(1.0..60.0),
                )
            };
            let score = if coarse {
                f64::from(rng.random_range(1..=20u32)) / 20.0
            } else {
                rng.random_range(0.0..=1.0)
            };
            let (x1, y1) = (snap(x), snap(y));
            BBox {
                x1,
                y1,
                x2: snap(x + w).max(x1),
                y2: snap(y + h).max(y1),
                score,
                class_id: rng.random_range(0..classes),
                index: indices[k],
            }
        })
        .collect()
}
