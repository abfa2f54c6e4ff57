//! One enum over every post-processing method, so callers (CLI, comparison
//! driver, array interface) dispatch the same way.

use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::baselines::{nms_selection, snms_wfa_selection, soft_nms_selection, Selection, SoftMode, SoftNmsParams};
use crate::cluster::{check_boxes, propagate, rank_positions, ClusterConfig, ClusterError};
use crate::eval::DetectionSet;
use crate::geometry::BBox;

pub const METHOD_NAMES: [&str; 4] = ["cp", "nms", "soft-nms", "snms-wfa"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MethodError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("unknown method '{0}' (valid: cp, nms, soft-nms, snms-wfa)")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Cp(ClusterConfig),
    Nms { theta: f64, class_aware: bool },
    SoftNms(SoftNmsParams),
    SnmsWfa { params: SoftNmsParams, theta_n: f64 },
}

/// Flag-level settings shared by all methods; mirrors the CLI.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSettings {
    pub cluster: ClusterConfig,
    pub soft_mode: SoftMode,
    pub sigma: f64,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings {
            cluster: ClusterConfig::default(),
            soft_mode: SoftMode::Linear,
            sigma: 0.5,
        }
    }
}

impl MethodSettings {
    fn soft(&self) -> SoftNmsParams {
        SoftNmsParams {
            theta: self.cluster.theta0,
            mode: self.soft_mode,
            sigma: self.sigma,
            score_thresh: self.cluster.min_score,
            class_aware: self.cluster.class_aware,
        }
    }

    pub fn method(&self, name: &str) -> Result<Method, MethodError> {
        let m = match name {
            "cp" => Method::Cp(self.cluster.clone()),
            "nms" => Method::Nms {
                theta: self.cluster.theta0,
                class_aware: self.cluster.class_aware,
            },
            "soft-nms" => Method::SoftNms(self.soft()),
            "snms-wfa" => Method::SnmsWfa {
                params: self.soft(),
                theta_n: self.cluster.theta_n,
            },
            other => return Err(MethodError::Unknown(other.to_string())),
        };
        m.validate()?;
        Ok(m)
    }
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Cp(_) => "cp",
            Method::Nms { .. } => "nms",
            Method::SoftNms(_) => "soft-nms",
            Method::SnmsWfa { .. } => "snms-wfa",
        }
    }

    pub fn params(&self) -> serde_json::Value {
        match self {
            Method::Cp(c) => serde_json::to_value(c).expect("config serializes"),
            Method::Nms { theta, class_aware } => json!({ "theta": theta, "class_aware": class_aware }),
            Method::SoftNms(p) => serde_json::to_value(p).expect("params serialize"),
            Method::SnmsWfa { params, theta_n } => {
                let mut v = serde_json::to_value(params).expect("params serialize");
                v["theta_n"] = json!(theta_n);
                v
            }
        }
    }

    pub fn validate(&self) -> Result<(), MethodError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(MethodError::Param(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        match self {
            Method::Cp(c) => c.validate().map_err(|e| MethodError::Cluster(e.into())),
            Method::Nms { theta, .. } => unit("theta", *theta),
            Method::SoftNms(p) => soft_checks(p, unit),
            Method::SnmsWfa { params, theta_n } => {
                soft_checks(params, unit)?;
                if *theta_n > params.theta && *theta_n <= 1.0 {
                    Ok(())
                } else {
                    Err(MethodError::Param(format!(
                        "theta_n must lie in (theta, 1], got {theta_n} with theta {}",
                        params.theta
                    )))
                }
            }
        }
    }

    /// Per-position outcome for one detection set. For `cp`, `order` is the
    /// kept boxes in output order (sorted when `sort_output` is set).
    pub fn outcome(&self, boxes: &[BBox]) -> Result<Selection, MethodError> {
        self.validate()?;
        if !matches!(self, Method::Cp(_)) {
            check_boxes(boxes)?;
        }
        Ok(match self {
            Method::Cp(c) => {
                let scores = propagate(boxes, c)?;
                let keep: Vec<bool> = scores.iter().map(|&s| s >= c.min_score).collect();
                let mut order: Vec<usize> = (0..boxes.len()).filter(|&i| keep[i]).collect();
                if c.sort_output {
                    rank_positions(boxes, &mut order, &scores);
                }
                Selection { order, scores, keep }
            }
            Method::Nms { theta, class_aware } => nms_selection(boxes, *theta, *class_aware),
            Method::SoftNms(p) => soft_nms_selection(boxes, p),
            Method::SnmsWfa { params, theta_n } => snms_wfa_selection(boxes, params, *theta_n),
        })
    }

    pub fn apply(&self, boxes: &[BBox]) -> Result<Vec<BBox>, MethodError> {
        Ok(self.outcome(boxes)?.boxes(boxes))
    }

    /// Processes each image independently; images are spread over the rayon
    /// pool and the result is independent of the thread count.
    pub fn apply_all(&self, dets: &DetectionSet) -> Result<DetectionSet, MethodError> {
        dets.par_iter()
            .map(|(&image, boxes)| self.apply(boxes).map(|out| (image, out)))
            .collect::<Result<Vec<_>, _>>()
            .map(|v| v.into_iter().collect())
    }
}

fn soft_checks(
    p: &SoftNmsParams,
    unit: impl Fn(&str, f64) -> Result<(), MethodError>,
) -> Result<(), MethodError> {
    unit("theta", p.theta)?;
    unit("score_thresh", p.score_thresh)?;
    if p.mode == SoftMode::Gaussian && (p.sigma <= 0.0 || p.sigma.is_nan()) {
        return Err(MethodError::Param(format!("sigma must be positive, got {}", p.sigma)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_build_every_method() {
        let s = MethodSettings::default();
        for name in METHOD_NAMES {
            assert_eq!(s.method(name).unwrap().name(), name);
        }
        assert_eq!(s.method("wbf"), Err(MethodError::Unknown("wbf".into())));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut s = MethodSettings {
            soft_mode: SoftMode::Gaussian,
            sigma: 0.0,
            ..Default::default()
        };
        assert!(matches!(s.method("soft-nms"), Err(MethodError::Param(_))));
        s.sigma = 0.5;
        s.cluster.zeta = 0;
        assert!(matches!(s.method("cp"), Err(MethodError::Cluster(_))));
    }

    #[test]
    fn params_are_structured() {
        let m = MethodSettings::default().method("snms-wfa").unwrap();
        let p = m.params();
        assert_eq!(p["theta_n"], 0.8);
        assert_eq!(p["mode"], "linear");
    }
}
