//! Keyframe-based 3D streaming detection and tracking without the detector.
//!
//! Detections on keyframes (with co-occurrence probabilities and
//! keyframe-to-keyframe offsets) are propagated to the frames in between,
//! linked into tracks near-online, and scored with CLEAR MOT metrics.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod kitti_io;
pub mod metrics;
pub mod moi;
pub mod simulator;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::{BevBounds, Box3D, Pose, RectBEV};
pub use kinematics::{CoOccurrence, OffsetDelta, Velocity};
pub use moi::{Detection, KeyframePair, PropagationResult};
pub use tracker::{KeyframeDetection, SequenceInput, TemporalCue, Track, TrackState};
