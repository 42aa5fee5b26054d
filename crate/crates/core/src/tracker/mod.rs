//! Online tracking-by-detection with two-stage association.
//!
//! Every frame, all tracks are advanced by the Kalman motion model. High-score
//! detections are then matched to tentative, active and lost tracks on IoU
//! cost; the leftover low-score detections get a second chance against the
//! tentative and active tracks that are still unmatched. Unmatched high-score
//! detections above `new_track_thresh` open new tracks.

pub mod assignment;
pub mod kalman;

pub use assignment::{solve_assignment, Assignment, AssignmentError, CostMatrix};
pub use kalman::{KalmanConfig, KalmanError, KalmanFilter, KalmanState};

use crate::mot_data::{BBox, Detection, DetectionFile, MotError, TrackRecord};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TrackerError {
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
    #[error("frame {frame} is not after the last stepped frame {last}")]
    OutOfOrder { frame: u32, last: u32 },
    #[error("detection {index} belongs to frame {found}, expected {expected}")]
    FrameMismatch {
        index: usize,
        expected: u32,
        found: u32,
    },
    #[error("detection {index}: {source}")]
    InvalidDetection {
        index: usize,
        #[source]
        source: MotError,
    },
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("tracker config {path}: {message}")]
    ConfigFile { path: String, message: String },
}

/// Tracker hyperparameters; every field may be overridden from a JSON file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub high_thresh: f64,
    pub low_thresh: f64,
    /// Ceiling on `1 - IoU` for the high-score stage.
    pub match_thresh_high: f64,
    /// Ceiling on `1 - IoU` for the low-score stage.
    pub match_thresh_low: f64,
    pub new_track_thresh: f64,
    pub max_lost_frames: u32,
    pub kalman: KalmanConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            high_thresh: 0.6,
            low_thresh: 0.1,
            match_thresh_high: 0.8,
            match_thresh_low: 0.5,
            new_track_thresh: 0.7,
            max_lost_frames: 30,
            kalman: KalmanConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let bad = |m: &str| Err(TrackerError::InvalidConfig(m.to_string()));
        if !(0.0 <= self.low_thresh && self.low_thresh < self.high_thresh && self.high_thresh <= 1.0) {
            return bad("require 0 <= low_thresh < high_thresh <= 1");
        }
        if self.max_lost_frames < 1 {
            return bad("max_lost_frames must be >= 1");
        }
        let finite = [
            self.match_thresh_high,
            self.match_thresh_low,
            self.new_track_thresh,
            self.kalman.std_weight_position,
            self.kalman.std_weight_velocity,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("thresholds and noise weights must be finite");
        }
        if self.kalman.std_weight_position <= 0.0 || self.kalman.std_weight_velocity <= 0.0 {
            return bad("noise weights must be positive");
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, TrackerError> {
        let err = |message: String| TrackerError::ConfigFile {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let config: TrackerConfig = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Active,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u32,
    pub state: KalmanState,
    pub status: TrackStatus,
    pub last_confidence: f64,
    pub frames_since_update: u32,
    pub age: u32,
    last_box: BBox,
}

impl Track {
    /// Current box estimate; falls back to the last measurement if the motion
    /// model has produced a degenerate shape.
    pub fn bbox(&self) -> BBox {
        let b = self.state.bbox();
        if b.is_valid() {
            b
        } else {
            self.last_box
        }
    }
}

/// One tracking session over a single sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    filter: KalmanFilter,
    tracks: Vec<Track>,
    next_id: u32,
    last_frame: Option<u32>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        Ok(Self {
            config,
            filter: KalmanFilter::new(config.kalman),
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live tracks (tentative, active and lost) in id order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn check_input(&self, frame: u32, detections: &[Detection]) -> Result<(), TrackerError> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(TrackerError::OutOfOrder { frame, last });
            }
        }
        for (index, det) in detections.iter().enumerate() {
            if det.frame != frame {
                return Err(TrackerError::FrameMismatch {
                    index,
                    expected: frame,
                    found: det.frame,
                });
            }
            det.validate()
                .map_err(|source| TrackerError::InvalidDetection { index, source })?;
        }
        Ok(())
    }

    fn iou_cost(&self, track_idx: &[usize], dets: &[&Detection]) -> CostMatrix {
        CostMatrix::from_fn(track_idx.len(), dets.len(), |r, c| {
            1.0 - self.tracks[track_idx[r]].bbox().iou(&dets[c].bbox)
        })
    }

    fn apply_match(&mut self, track: usize, det: &Detection) -> Result<(), TrackerError> {
        let t = &mut self.tracks[track];
        t.state = self.filter.update(&t.state, &det.bbox)?;
        t.status = TrackStatus::Active;
        t.last_confidence = det.confidence;
        t.frames_since_update = 0;
        t.last_box = det.bbox;
        Ok(())
    }

    /// Process the detections of `frame` and return records for the tracks
    /// that were matched or born in this frame, ordered by id.
    ///
    /// `frame` must exceed every previously stepped frame. Skipped frames are
    /// bridged by one motion prediction per elapsed frame.
    pub fn step(
        &mut self,
        frame: u32,
        detections: &[Detection],
    ) -> Result<Vec<TrackRecord>, TrackerError> {
        self.check_input(frame, detections)?;
        let elapsed = self.last_frame.map_or(1, |last| frame - last);
        self.last_frame = Some(frame);

        for t in &mut self.tracks {
            if t.status == TrackStatus::Lost {
                t.state.mean[7] = 0.0;
            }
            for _ in 0..elapsed {
                t.state = self.filter.predict(&t.state)?;
            }
            t.frames_since_update += elapsed;
            t.age += elapsed;
        }

        let high: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.confidence >= self.config.high_thresh)
            .collect();
        let low: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.confidence >= self.config.low_thresh && d.confidence < self.config.high_thresh)
            .collect();

        // Stage 1: high-score detections against every live track.
        let pool: Vec<usize> = (0..self.tracks.len()).collect();
        let first = solve_assignment(&self.iou_cost(&pool, &high), self.config.match_thresh_high)?;
        for &(r, c) in &first.matches {
            self.apply_match(pool[r], high[c])?;
        }

        // Stage 2: low-score detections against still-unmatched non-lost tracks.
        let remaining: Vec<usize> = first
            .unmatched_rows
            .iter()
            .map(|&r| pool[r])
            .filter(|&i| self.tracks[i].status != TrackStatus::Lost)
            .collect();
        let second = solve_assignment(&self.iou_cost(&remaining, &low), self.config.match_thresh_low)?;
        for &(r, c) in &second.matches {
            self.apply_match(remaining[r], low[c])?;
        }

        // Unmatched tentative tracks die; unmatched active tracks become lost.
        let mut dead = vec![false; self.tracks.len()];
        for (i, t) in self.tracks.iter_mut().enumerate() {
            if t.frames_since_update == 0 {
                continue;
            }
            match t.status {
                TrackStatus::Tentative => dead[i] = true,
                TrackStatus::Active => t.status = TrackStatus::Lost,
                TrackStatus::Lost => {}
            }
            if t.frames_since_update > self.config.max_lost_frames {
                dead[i] = true;
            }
        }
        let mut i = 0;
        self.tracks.retain(|_| {
            let keep = !dead[i];
            i += 1;
            keep
        });

        for &c in &first.unmatched_cols {
            let det = high[c];
            if det.confidence < self.config.new_track_thresh {
                continue;
            }
            let track_id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track {
                track_id,
                state: self.filter.init(&det.bbox),
                status: TrackStatus::Tentative,
                last_confidence: det.confidence,
                frames_since_update: 0,
                age: 0,
                last_box: det.bbox,
            });
        }

        Ok(self
            .tracks
            .iter()
            .filter(|t| t.frames_since_update == 0)
            .map(|t| TrackRecord {
                frame,
                track_id: t.track_id,
                bbox: t.bbox(),
                confidence: t.last_confidence,
                class_id: 1,
                visibility: 1.0,
            })
            .collect())
    }
}

/// Track a whole sequence given `(frame, detections)` pairs in increasing frame order.
pub fn run_sequence<I>(config: TrackerConfig, frames: I) -> Result<Vec<TrackRecord>, TrackerError>
where
    I: IntoIterator<Item = (u32, Vec<Detection>)>,
{
    let mut tracker = Tracker::new(config)?;
    let mut out = Vec::new();
    for (frame, dets) in frames {
        out.extend(tracker.step(frame, &dets)?);
    }
    Ok(out)
}

/// Track a parsed detection file, stepping every frame from 1 to
/// `frame_count` (or to the last detected frame when no count is given).
pub fn track_detections(
    config: TrackerConfig,
    detections: &DetectionFile,
    frame_count: Option<u32>,
) -> Result<Vec<TrackRecord>, TrackerError> {
    let last = frame_count.unwrap_or(0).max(detections.max_frame());
    let mut by_frame = detections.by_frame();
    run_sequence(
        config,
        (1..=last).map(|f| (f, by_frame.remove(&f).unwrap_or_default())),
    )
}
