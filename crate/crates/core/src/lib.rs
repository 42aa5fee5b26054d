//! Tracking-by-detection and synthetic-to-real adaptation toolkit.
//!
//! The detector itself is external; this crate covers everything around it:
//! MOTChallenge file I/O, an online two-stage tracker, the HOTA / CLEAR / IDF1
//! metric suite, confidence-filtered pseudo-labels, cross-domain mosaic
//! sampling, checkpoint soups and EMA, and the round-by-round orchestration of
//! iterative pseudo-labeling.

pub mod metrics;
pub mod mosaic;
pub mod mot_data;
pub mod pipeline;
pub mod pseudo_label;
pub mod soup;
pub mod tracker;

pub use mot_data::{BBox, Detection, SequenceInfo, TrackRecord};
