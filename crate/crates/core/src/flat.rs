//! Array-in/array-out entry points for foreign-language wrappers.
//!
//! Inputs are borrowed flat slices (`n x 4` corner coordinates, `n` scores,
//! `n` class ids) and are never mutated. Outputs stay aligned with the input
//! positions: one score and one keep flag per box, no reordering.

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::baselines::SoftMode;
use crate::geometry::{BBox, BoxError};
use crate::method::{MethodError, MethodSettings};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlatError {
    #[error("boxes has {boxes} values, expected 4 x {scores} (one row per score)")]
    Shape { boxes: usize, scores: usize },
    #[error("classes has {classes} entries, expected {scores}")]
    ClassLength { classes: usize, scores: usize },
    #[error("class id {0} at row {1} is negative or too large")]
    ClassId(i64, usize),
    #[error("row {row}: {source}")]
    Box {
        row: usize,
        #[source]
        source: BoxError,
    },
    #[error("parameter '{name}': {reason}")]
    Param { name: String, reason: String },
    #[error(transparent)]
    Method(#[from] MethodError),
}

#[derive(Debug, Clone, Copy)]
pub struct FlatDetections<'a> {
    pub boxes: &'a [f64],
    pub scores: &'a [f64],
    pub classes: &'a [i64],
}

impl FlatDetections<'_> {
    pub fn to_boxes(&self) -> Result<Vec<BBox>, FlatError> {
        let n = self.scores.len();
        if self.boxes.len() != 4 * n {
            return Err(FlatError::Shape {
                boxes: self.boxes.len(),
                scores: n,
            });
        }
        if self.classes.len() != n {
            return Err(FlatError::ClassLength {
                classes: self.classes.len(),
                scores: n,
            });
        }
        (0..n)
            .map(|row| {
                let c = self.classes[row];
                let class_id = u32::try_from(c).map_err(|_| FlatError::ClassId(c, row))?;
                let r = &self.boxes[4 * row..4 * row + 4];
                BBox::new(r[0], r[1], r[2], r[3], self.scores[row], class_id, row)
                    .map_err(|source| FlatError::Box { row, source })
            })
            .collect()
    }
}

pub const PARAM_NAMES: [&str; 11] = [
    "iou_thresh",
    "iterations",
    "lambda_",
    "theta_n",
    "zeta",
    "alpha",
    "min_score",
    "threads",
    "sigma",
    "soft_mode",
    "class_agnostic",
];

fn bad(name: &str, reason: impl Into<String>) -> FlatError {
    FlatError::Param {
        name: name.to_string(),
        reason: reason.into(),
    }
}

fn number(name: &str, v: &Value) -> Result<f64, FlatError> {
    v.as_f64().ok_or_else(|| bad(name, "expected a number"))
}

fn count(name: &str, v: &Value) -> Result<u64, FlatError> {
    v.as_u64().ok_or_else(|| bad(name, "expected a non-negative integer"))
}

/// Settings from a key-value map, starting from the CLI defaults. Returns
/// the requested thread count alongside (0 = pool default). Without an
/// explicit `alpha`, the schedule is 1.0 followed by zeros, one entry per
/// iteration.
pub fn settings_from_params(params: &Map<String, Value>) -> Result<(MethodSettings, usize), FlatError> {
    let mut s = MethodSettings::default();
    let mut threads = 0usize;
    let mut alpha_given = false;
    for (name, v) in params {
        match name.as_str() {
            "iou_thresh" => s.cluster.theta0 = number(name, v)?,
            "iterations" => s.cluster.iterations = count(name, v)? as usize,
            "lambda_" => s.cluster.lambda = number(name, v)?,
            "theta_n" => s.cluster.theta_n = number(name, v)?,
            "zeta" => {
                s.cluster.zeta = u32::try_from(count(name, v)?).map_err(|_| bad(name, "too large"))?
            }
            "alpha" => {
                let list = v.as_array().ok_or_else(|| bad(name, "expected a list of numbers"))?;
                s.cluster.alpha_schedule = list.iter().map(|x| number(name, x)).collect::<Result<_, _>>()?;
                alpha_given = true;
            }
            "min_score" => s.cluster.min_score = number(name, v)?,
            "threads" => threads = count(name, v)? as usize,
            "sigma" => s.sigma = number(name, v)?,
            "soft_mode" => {
                let text = v.as_str().ok_or_else(|| bad(name, "expected a string"))?;
                s.soft_mode = text.parse::<SoftMode>().map_err(|e| bad(name, e))?;
            }
            "class_agnostic" => {
                s.cluster.class_aware = !v.as_bool().ok_or_else(|| bad(name, "expected a boolean"))?
            }
            other => return Err(bad(other, format!("unknown (valid: {})", PARAM_NAMES.join(", ")))),
        }
    }
    if !alpha_given {
        s.cluster.alpha_schedule = (0..s.cluster.iterations).map(|t| if t == 0 { 1.0 } else { 0.0 }).collect();
    }
    Ok((s, threads))
}

/// Runs one method over flat arrays. Returns per-row scores and keep flags.
pub fn cluster_arrays(
    dets: FlatDetections<'_>,
    method: &str,
    params: &Map<String, Value>,
) -> Result<(Vec<f64>, Vec<bool>), FlatError> {
    let boxes = dets.to_boxes()?;
    let (settings, threads) = settings_from_params(params)?;
    let m = settings.method(method)?;
    let run = || m.outcome(&boxes);
    let sel = if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| bad("threads", e.to_string()))?
            .install(run)?
    } else {
        run()?
    };
    Ok((sel.scores, sel.keep))
}

/// Version and parameter defaults, for introspection by wrappers.
pub fn describe() -> Value {
    let d = MethodSettings::default();
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "methods": crate::method::METHOD_NAMES,
        "defaults": {
            "iou_thresh": d.cluster.theta0,
            "iterations": d.cluster.iterations,
            "lambda_": d.cluster.lambda,
            "theta_n": d.cluster.theta_n,
            "zeta": d.cluster.zeta,
            "alpha": d.cluster.alpha_schedule,
            "min_score": d.cluster.min_score,
            "threads": 0,
            "sigma": d.sigma,
            "soft_mode": "linear",
            "class_agnostic": false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BOXES: [f64; 8] = [0.0, 0.0, 10.0, 10.0, 0.0, 0.0, 10.0, 7.0];
    const SCORES: [f64; 2] = [0.9, 0.8];
    const CLASSES: [i64; 2] = [0, 0];

    fn dets() -> FlatDetections<'static> {
        FlatDetections {
            boxes: &BOXES,
            scores: &SCORES,
            classes: &CLASSES,
        }
    }

    #[test]
    fn two_box_trace_through_arrays() {
        let (scores, keep) = cluster_arrays(dets(), "cp", &Map::new()).unwrap();
        assert_eq!(scores, vec![0.9, 0.8 - 0.8 * 0.7]);
        assert_eq!(keep, vec![true, true]);
    }

    #[test]
    fn nms_through_arrays() {
        let params: Map<String, Value> = [("iou_thresh".to_string(), json!(0.6))].into_iter().collect();
        let (scores, keep) = cluster_arrays(dets(), "nms", &params).unwrap();
        assert_eq!(scores, SCORES.to_vec());
        assert_eq!(keep, vec![true, false]);
    }

    #[test]
    fn empty_arrays() {
        let empty = FlatDetections {
            boxes: &[],
            scores: &[],
            classes: &[],
        };
        for m in crate::method::METHOD_NAMES {
            assert_eq!(cluster_arrays(empty, m, &Map::new()).unwrap(), (vec![], vec![]));
        }
    }

    #[test]
    fn validation_errors() {
        let short = FlatDetections {
            boxes: &BOXES[..7],
            ..dets()
        };
        assert!(matches!(cluster_arrays(short, "cp", &Map::new()), Err(FlatError::Shape { .. })));
        let params: Map<String, Value> = [("bogus".to_string(), json!(1))].into_iter().collect();
        assert!(matches!(cluster_arrays(dets(), "cp", &params), Err(FlatError::Param { .. })));
        assert!(matches!(
            cluster_arrays(dets(), "nope", &Map::new()),
            Err(FlatError::Method(MethodError::Unknown(_)))
        ));
        let neg = FlatDetections {
            classes: &[0, -1],
            ..dets()
        };
        assert_eq!(cluster_arrays(neg, "cp", &Map::new()), Err(FlatError::ClassId(-1, 1)));
    }

    #[test]
    fn thread_count_is_honored_and_irrelevant() {
        let params: Map<String, Value> = [("threads".to_string(), json!(3))].into_iter().collect();
        assert_eq!(
            cluster_arrays(dets(), "cp", &params).unwrap(),
            cluster_arrays(dets(), "cp", &Map::new()).unwrap()
        );
    }

    #[test]
    fn describe_lists_defaults() {
        let d = describe();
        assert_eq!(d["defaults"]["zeta"], 2);
        assert_eq!(d["defaults"]["alpha"], json!([1.0, 0.0]));
    }
}
