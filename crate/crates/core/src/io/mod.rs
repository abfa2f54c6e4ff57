//! Detection and ground-truth files, plus seeded synthetic corpora.

mod coco;
mod synth;

pub use coco::{
    load_detections, load_ground_truth, parse_detections, parse_ground_truth, save_detections,
    save_ground_truth, write_detections, Annotation, Category, DetectionRecord, GroundTruthFile,
    ImageEntry, IoError, LoadMode, LoadedDetections, RecordIssue,
};
pub use synth::{dense_workload, generate_corpus, random_detection_set, Corpus, ScoreModel, SynthError, SynthSpec};
