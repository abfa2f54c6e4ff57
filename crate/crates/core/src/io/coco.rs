//! COCO results and annotation files.
//!
//! Boxes are `[x, y, width, height]` on disk and corner format in memory.
//! Floats are written with shortest round-trip formatting and parsed back
//! exactly.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::eval::{DetectionSet, GroundTruth, GroundTruthBox};
use crate::geometry::BBox;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: expected a JSON array of detection records", path.display())]
    NotArray { path: PathBuf },
    #[error("{}: record {position}: {reason}", path.display())]
    Record {
        path: PathBuf,
        position: usize,
        reason: String,
    },
    #[error("{}: {reason}", path.display())]
    GroundTruth { path: PathBuf, reason: String },
}

/// One entry of a COCO results file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Abort on the first invalid record.
    #[default]
    Strict,
    /// Skip invalid records and report them.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordIssue {
    pub position: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedDetections {
    pub detections: DetectionSet,
    pub skipped: Vec<RecordIssue>,
}

fn check_record(value: &Value, per_image: &BTreeMap<u64, Vec<BBox>>) -> Result<(u64, BBox), String> {
    let rec: DetectionRecord = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
    let index = per_image.get(&rec.image_id).map_or(0, Vec::len);
    let b = BBox::from_xywh(rec.bbox, rec.score, rec.category_id, index).map_err(|e| e.to_string())?;
    Ok((rec.image_id, b))
}

/// Parses a results document. `path` only labels diagnostics.
pub fn parse_detections(text: &str, path: &Path, mode: LoadMode) -> Result<LoadedDetections, IoError> {
    let doc: Value = serde_json::from_str(text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let Value::Array(records) = doc else {
        return Err(IoError::NotArray {
            path: path.to_path_buf(),
        });
    };
    let mut out = LoadedDetections::default();
    for (position, value) in records.iter().enumerate() {
        match check_record(value, &out.detections) {
            Ok((image, b)) => out.detections.entry(image).or_default().push(b),
            Err(reason) if mode == LoadMode::Lenient => out.skipped.push(RecordIssue { position, reason }),
            Err(reason) => {
                return Err(IoError::Record {
                    path: path.to_path_buf(),
                    position,
                    reason,
                })
            }
        }
    }
    Ok(out)
}

/// Loads a COCO results file, grouping by image. Box indices follow file
/// order within each image.
pub fn load_detections(path: impl AsRef<Path>, mode: LoadMode) -> Result<LoadedDetections, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_detections(&text, path, mode)
}

/// Serializes detections one record per line, images ascending, boxes in
/// stored order.
pub fn write_detections(dets: &DetectionSet, w: &mut impl Write) -> std::io::Result<()> {
    let mut first = true;
    w.write_all(b"[")?;
    for (&image_id, boxes) in dets {
        for b in boxes {
            let rec = DetectionRecord {
                image_id,
                category_id: b.class_id,
                bbox: b.to_xywh(),
                score: b.score,
            };
            w.write_all(if first { b"\n" } else { b",\n" })?;
            first = false;
            serde_json::to_writer(&mut *w, &rec)?;
        }
    }
    w.write_all(if first { b"]\n" } else { b"\n]\n" })
}

pub fn save_detections(dets: &DetectionSet, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_detections(dets, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub iscrowd: u8,
}

/// The subset of a COCO annotation file used for box evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub images: Vec<ImageEntry>,
    pub categories: Vec<Category>,
    pub annotations: Vec<Annotation>,
}

impl GroundTruthFile {
    /// Checks references and converts to the evaluator's form.
    pub fn to_ground_truth(&self) -> Result<GroundTruth, String> {
        let images: BTreeSet<u64> = self.images.iter().map(|i| i.id).collect();
        let categories: BTreeMap<u32, String> =
            self.categories.iter().map(|c| (c.id, c.name.clone())).collect();
        let mut ids = HashSet::new();
        let mut boxes: BTreeMap<u64, Vec<GroundTruthBox>> = BTreeMap::new();
        for (k, a) in self.annotations.iter().enumerate() {
            if !ids.insert(a.id) {
                return Err(format!("annotation {k}: duplicate id {}", a.id));
            }
            if !images.contains(&a.image_id) {
                return Err(format!("annotation {k}: undeclared image_id {}", a.image_id));
            }
            if !categories.contains_key(&a.category_id) {
                return Err(format!("annotation {k}: undeclared category_id {}", a.category_id));
            }
            if a.iscrowd > 1 {
                return Err(format!("annotation {k}: iscrowd must be 0 or 1"));
            }
            let b = BBox::from_xywh(a.bbox, 1.0, a.category_id, 0)
                .map_err(|e| format!("annotation {k}: {e}"))?;
            boxes.entry(a.image_id).or_default().push(GroundTruthBox {
                x1: b.x1,
                y1: b.y1,
                x2: b.x2,
                y2: b.y2,
                class_id: a.category_id,
                image_id: a.image_id,
                crowd: a.iscrowd == 1,
            });
        }
        Ok(GroundTruth {
            images,
            boxes,
            categories,
        })
    }
}

pub fn parse_ground_truth(text: &str, path: &Path) -> Result<GroundTruth, IoError> {
    let file: GroundTruthFile = serde_json::from_str(text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    file.to_ground_truth().map_err(|reason| IoError::GroundTruth {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ground_truth(&text, path)
}

pub fn save_ground_truth(gt: &GroundTruthFile, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string(gt).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, mode: LoadMode) -> Result<LoadedDetections, IoError> {
        parse_detections(text, Path::new("dets.json"), mode)
    }

    #[test]
    fn converts_xywh_to_corners() {
        let got = parse(r#"[{"image_id":1,"category_id":3,"bbox":[10,20,30,40],"score":0.7}]"#, LoadMode::Strict)
            .unwrap();
        let b = got.detections[&1][0];
        assert_eq!((b.x1, b.y1, b.x2, b.y2, b.score, b.class_id), (10.0, 20.0, 40.0, 60.0, 0.7, 3));
    }

    #[test]
    fn empty_array() {
        assert!(parse("[]", LoadMode::Strict).unwrap().detections.is_empty());
    }

    #[test]
    fn indices_follow_file_order_per_image() {
        let text = r#"[
            {"image_id":1,"category_id":1,"bbox":[0,0,1,1],"score":0.5},
            {"image_id":2,"category_id":1,"bbox":[0,0,1,1],"score":0.5},
            {"image_id":1,"category_id":1,"bbox":[5,5,1,1],"score":0.5}
        ]"#;
        let got = parse(text, LoadMode::Strict).unwrap().detections;
        assert_eq!(got[&1].iter().map(|b| (b.index, b.x1)).collect::<Vec<_>>(), vec![(0, 0.0), (1, 5.0)]);
        assert_eq!(got[&2][0].index, 0);
    }

    #[test]
    fn strict_and_lenient_modes() {
        let text = r#"[
            {"image_id":1,"category_id":1,"bbox":[0,0,1,1],"score":0.5},
            {"image_id":1,"category_id":1,"bbox":[0,0,-1,1],"score":0.5},
            {"image_id":1,"category_id":1,"bbox":[0,0,1,1],"score":1.5},
            {"image_id":1,"bbox":[0,0,1,1],"score":0.5},
            {"image_id":1,"category_id":1,"bbox":[2,2,1,1],"score":0.25}
        ]"#;
        match parse(text, LoadMode::Strict) {
            Err(IoError::Record { position, .. }) => assert_eq!(position, 1),
            other => panic!("unexpected {other:?}"),
        }
        let got = parse(text, LoadMode::Lenient).unwrap();
        assert_eq!(got.skipped.iter().map(|s| s.position).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(got.detections[&1].len(), 2);
        assert_eq!(got.detections[&1][1].index, 1);
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(parse("{", LoadMode::Strict), Err(IoError::Json { .. })));
        assert!(matches!(parse("{}", LoadMode::Strict), Err(IoError::NotArray { .. })));
    }

    #[test]
    fn writes_xywh() {
        let dets: DetectionSet = [(4, vec![BBox::new(10.0, 20.0, 40.0, 60.0, 0.5, 2, 0).unwrap()])].into();
        let mut buf = Vec::new();
        write_detections(&dets, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "[\n{\"image_id\":4,\"category_id\":2,\"bbox\":[10.0,20.0,30.0,40.0],\"score\":0.5}\n]\n"
        );
        let mut empty = Vec::new();
        write_detections(&DetectionSet::new(), &mut empty).unwrap();
        assert_eq!(empty, b"[]\n");
        assert!(parse("[]\n", LoadMode::Strict).unwrap().detections.is_empty());
    }

    #[test]
    fn ground_truth_validation() {
        let ok = r#"{"images":[{"id":1}],"categories":[{"id":1,"name":"a"}],
            "annotations":[{"id":1,"image_id":1,"category_id":1,"bbox":[0,0,5,5],"iscrowd":1}]}"#;
        let gt = parse_ground_truth(ok, Path::new("gt.json")).unwrap();
        assert!(gt.boxes[&1][0].crowd);
        let dup = ok.replace("}]}", "},{\"id\":1,\"image_id\":1,\"category_id\":1,\"bbox\":[0,0,5,5]}]}");
        assert!(matches!(parse_ground_truth(&dup, Path::new("gt.json")), Err(IoError::GroundTruth { .. })));
        let orphan = ok.replace("\"image_id\":1", "\"image_id\":9");
        assert!(parse_ground_truth(&orphan, Path::new("gt.json")).is_err());
        let badcat = ok.replace("\"category_id\":1", "\"category_id\":2");
        assert!(parse_ground_truth(&badcat, Path::new("gt.json")).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_detections("/nonexistent/dets.json", LoadMode::Strict).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dets.json"));
    }

    // Coordinates on a 1/16 pixel grid keep the xywh conversion exact.
    fn arb_set() -> impl Strategy<Value = DetectionSet> {
        prop::collection::btree_map(
            0u64..20,
            prop::collection::vec((0u32..8192, 0u32..8192, 0u32..2048, 0u32..2048, 0.0..=1.0f64, 0u32..80), 0..6),
            0..5,
        )
        .prop_map(|m| {
            m.into_iter()
                .map(|(img, v)| {
                    let boxes = v
                        .into_iter()
                        .enumerate()
                        .map(|(k, (x, y, w, h, s, c))| {
                            let (x, y) = (x as f64 / 16.0, y as f64 / 16.0);
                            BBox::new(x, y, x + w as f64 / 16.0, y + h as f64 / 16.0, s, c, k).unwrap()
                        })
                        .collect();
                    (img, boxes)
                })
                .filter(|(_, b): &(u64, Vec<BBox>)| !b.is_empty())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(dets in arb_set()) {
            let mut buf = Vec::new();
            write_detections(&dets, &mut buf).unwrap();
            let back = parse(std::str::from_utf8(&buf).unwrap(), LoadMode::Strict).unwrap();
            prop_assert_eq!(back.detections, dets);
        }
    }
}
