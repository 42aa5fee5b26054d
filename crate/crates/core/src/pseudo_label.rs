//! Pseudo ground truth for the unlabeled target domain.
//!
//! Detections below the confidence threshold are dropped; the rest become
//! GT-format records (`flag = 1`, `class = 1`, `visibility = 1`) that the
//! mosaic sampler and any external trainer consume as ordinary labels.

use crate::mot_data::{self, Detection, DetectionFile, MotError, TrackRecord};
use crate::tracker::{self, TrackerConfig, TrackerError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum PseudoLabelError {
    #[error("confidence threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("min_box_area must be finite and >= 0, got {0}")]
    InvalidMinArea(f64),
    #[error(transparent)]
    Mot(#[from] MotError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error("sequence {name}: {source}")]
    Sequence {
        name: String,
        #[source]
        source: Box<PseudoLabelError>,
    },
    #[error("no detection files under {}", .0.display())]
    NoInputs(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoLabelConfig {
    pub confidence_threshold: f64,
    /// Take ids from the tracker instead of numbering boxes per frame.
    pub assign_ids: bool,
    pub min_box_area: f64,
    pub tracker: TrackerConfig,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.7,
            assign_ids: false,
            min_box_area: 0.0,
            tracker: TrackerConfig::default(),
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<(), PseudoLabelError> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(PseudoLabelError::InvalidThreshold(self.confidence_threshold));
        }
        if !(self.min_box_area.is_finite() && self.min_box_area >= 0.0) {
            return Err(PseudoLabelError::InvalidMinArea(self.min_box_area));
        }
        if self.assign_ids {
            self.tracker.validate()?;
        }
        Ok(())
    }
}

/// Keep detections with `confidence >= threshold`, in order.
pub fn filter_by_confidence(detections: &[Detection], threshold: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.confidence >= threshold)
        .copied()
        .collect()
}

fn label(frame: u32, track_id: u32, bbox: mot_data::BBox) -> TrackRecord {
    TrackRecord {
        frame,
        track_id,
        bbox,
        confidence: 1.0,
        class_id: 1,
        visibility: 1.0,
    }
}

/// Turn one sequence's detections into pseudo ground truth.
///
/// With `assign_ids` the tracker runs over the raw detections and its output
/// is filtered by the confidence of the detection each track last matched.
pub fn generate_pseudo_labels(
    detections: &DetectionFile,
    config: &PseudoLabelConfig,
    frame_count: Option<u32>,
) -> Result<Vec<TrackRecord>, PseudoLabelError> {
    config.validate()?;
    let area_ok = |b: &mot_data::BBox| b.area() >= config.min_box_area;
    let mut out: Vec<TrackRecord> = if config.assign_ids {
        tracker::track_detections(config.tracker, detections, frame_count)?
            .into_iter()
            .filter(|r| r.confidence >= config.confidence_threshold && area_ok(&r.bbox))
            .map(|r| label(r.frame, r.track_id, r.bbox))
            .collect()
    } else {
        let mut out = Vec::new();
        for (frame, dets) in detections.by_frame() {
            let kept = filter_by_confidence(&dets, config.confidence_threshold);
            for (id, d) in (1..).zip(kept.into_iter().filter(|d| area_ok(&d.bbox))) {
                out.push(label(frame, id, d.bbox));
            }
        }
        out
    };
    out.sort_by_key(|r| (r.frame, r.track_id));
    Ok(out)
}

/// Summary of one sequence written by [`generate_directory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelOutput {
    pub sequence: String,
    pub path: PathBuf,
    pub input_detections: usize,
    pub labels: usize,
}

/// Detection inputs under `det_dir`: MOT sequence directories with
/// `det/det.txt`, or flat `<seq>.txt` files.
pub fn detection_inputs(det_dir: &Path) -> Result<Vec<(String, PathBuf, Option<u32>)>, PseudoLabelError> {
    let mut inputs = Vec::new();
    for (name, dir) in mot_data::sequence_dirs(det_dir)? {
        let det = dir.join("det").join("det.txt");
        if det.is_file() {
            let info = mot_data::read_seqinfo_file(&dir.join("seqinfo.ini"))?;
            inputs.push((name, det, Some(info.frame_count)));
        }
    }
    if inputs.is_empty() {
        for (name, path) in mot_data::flat_text_files(det_dir)? {
            inputs.push((name, path, None));
        }
    }
    if inputs.is_empty() {
        return Err(PseudoLabelError::NoInputs(det_dir.to_path_buf()));
    }
    Ok(inputs)
}

/// Write `<out_dir>/<seq>.txt` for every detection input under `det_dir`.
pub fn generate_directory(
    det_dir: &Path,
    out_dir: &Path,
    config: &PseudoLabelConfig,
) -> Result<Vec<PseudoLabelOutput>, PseudoLabelError> {
    config.validate()?;
    let inputs = detection_inputs(det_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| MotError::io(out_dir, e))?;
    inputs
        .par_iter()
        .map(|(name, path, frame_count)| {
            let run = || -> Result<PseudoLabelOutput, PseudoLabelError> {
                let detections = mot_data::read_detections_file(path)?;
                let labels = generate_pseudo_labels(&detections, config, *frame_count)?;
                let out = out_dir.join(format!("{name}.txt"));
                mot_data::write_annotations_file(&out, &labels)?;
                log::info!("{name}: {} of {} detections kept", labels.len(), detections.detections.len());
                Ok(PseudoLabelOutput {
                    sequence: name.clone(),
                    path: out,
                    input_detections: detections.detections.len(),
                    labels: labels.len(),
                })
            };
            run().map_err(|e| PseudoLabelError::Sequence {
                name: name.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}
