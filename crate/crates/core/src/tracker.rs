//! Near-online sequence tracking.
//!
//! Keyframes are processed pair by pair: the second keyframe is moved into
//! the first keyframe's coordinates, the pair is propagated, every emitted
//! state is moved back into its own frame's coordinates, and the resulting
//! tracklets are linked to the previous pair's at the shared keyframe.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_bev, relative_pose, transform_box, BevBounds, Box3D, Pose, RectBEV};
use crate::kinematics::{
    correct_orientation, update_velocity, CoOccurrence, OffsetDelta, Velocity, VELOCITY_ALPHA,
};
use crate::moi::{
    extend_track, propagate, Detection, Direction, KeyframePair, PropagationResult, TrackletOrigin,
};

/// Minimum BEV IoU for linking tracklets across a shared keyframe.
pub const LINK_IOU_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub bbox: Box3D,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackStatus {
    Active,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub states: BTreeMap<usize, TrackState>,
    pub velocity: Velocity,
    pub status: TrackStatus,
}

impl Track {
    pub fn new(id: u64) -> Self {
        Self {
            id,
            states: BTreeMap::new(),
            velocity: Velocity::ZERO,
            status: TrackStatus::Active,
        }
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.states.keys().next().copied()
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.states.keys().next_back().copied()
    }

    pub fn is_contiguous(&self) -> bool {
        match (self.first_frame(), self.last_frame()) {
            (Some(a), Some(b)) => b - a + 1 == self.states.len(),
            _ => true,
        }
    }
}

/// Temporal-module output attached to a keyframe detection for one of its
/// two neighbouring pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalCue {
    pub co: CoOccurrence,
    pub offsets: OffsetDelta,
}

impl Default for TemporalCue {
    fn default() -> Self {
        Self {
            co: CoOccurrence::clamped(0.0),
            offsets: OffsetDelta::ZERO,
        }
    }
}

/// A detection on a keyframe.
///
/// `next` relates it to the following keyframe (offsets normalised by this
/// box, as a first-keyframe detection). `prev` relates it to the preceding
/// keyframe: its offsets, normalised by this box expressed in the preceding
/// keyframe's coordinates, lead back to where the object was.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeDetection {
    pub bbox: Box3D,
    pub score: f64,
    pub next: TemporalCue,
    pub prev: TemporalCue,
    /// Provenance id; not used by tracking.
    pub source: Option<u64>,
}

impl KeyframeDetection {
    fn as_first(&self, frame: usize) -> Detection {
        Detection {
            frame,
            bbox: self.bbox,
            score: self.score,
            co: self.next.co,
            offsets: self.next.offsets,
        }
    }

    fn as_second(&self, frame: usize) -> Detection {
        Detection {
            frame,
            bbox: self.bbox,
            score: self.score,
            co: self.prev.co,
            offsets: self.prev.offsets,
        }
    }
}

/// Keyframes of a sequence: multiples of `tau` plus the final frame, so that
/// a tail shorter than `tau` still forms a (shorter) pair.
pub fn keyframes(frames: usize, tau: usize) -> Vec<usize> {
    if frames == 0 || tau == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = (0..frames).step_by(tau).collect();
    if *out.last().unwrap() != frames - 1 {
        out.push(frames - 1);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    pub frames: usize,
    pub tau: usize,
    pub detections: BTreeMap<usize, Vec<KeyframeDetection>>,
    /// Ego-to-world pose per frame. Empty means a stationary ego.
    pub poses: BTreeMap<usize, Pose>,
    pub bounds: BevBounds,
}

impl SequenceInput {
    pub fn new(frames: usize, tau: usize) -> Self {
        Self {
            frames,
            tau,
            detections: BTreeMap::new(),
            poses: BTreeMap::new(),
            bounds: BevBounds::default(),
        }
    }

    pub fn keyframes(&self) -> Vec<usize> {
        keyframes(self.frames, self.tau)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::InvalidArgument("tau must be at least 1".into()));
        }
        let kfs = self.keyframes();
        for k in self.detections.keys() {
            if kfs.binary_search(k).is_err() {
                return Err(Error::FrameMismatch(format!(
                    "detections at frame {k}, which is not a keyframe (tau {}, {} frames)",
                    self.tau, self.frames
                )));
            }
        }
        if !self.poses.is_empty() {
            if let Some(k) = kfs.iter().find(|k| !self.poses.contains_key(k)) {
                return Err(Error::MissingPose(*k));
            }
        }
        Ok(())
    }

    fn pose(&self, frame: usize) -> Result<Pose> {
        if self.poses.is_empty() {
            return Ok(Pose::identity());
        }
        self.poses
            .get(&frame)
            .copied()
            .ok_or(Error::MissingPose(frame))
    }
}

/// Moves the second keyframe of a pair into the first keyframe's coordinates.
pub fn ego_compensate(pair: &KeyframePair, pose_t: &Pose, pose_next: &Pose) -> KeyframePair {
    let rel = relative_pose(pose_next, pose_t);
    let mut out = pair.clone();
    for d in &mut out.second {
        d.bbox = transform_box(&d.bbox, &rel);
    }
    out
}

/// Greedy one-to-one association by descending BEV IoU, ignoring pairs below `floor`.
fn greedy_link(a: &[RectBEV], b: &[RectBEV], floor: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, ra) in a.iter().enumerate() {
        for (j, rb) in b.iter().enumerate() {
            let iou = iou_bev(ra, rb);
            if iou >= floor {
                candidates.push((iou, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap_or(Ordering::Equal)
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

fn boundary(result: &PropagationResult, frame: usize, at_end: bool) -> (Vec<usize>, Vec<RectBEV>) {
    result
        .tracklets
        .iter()
        .enumerate()
        .filter(|(_, tl)| {
            if at_end {
                tl.end_frame() == frame
            } else {
                tl.start_frame() == frame
            }
        })
        .map(|(i, tl)| (i, tl.states[&frame].bbox.bev()))
        .unzip()
}

/// Links tracklets of two consecutive pairs at their shared keyframe.
///
/// Returns `(prev tracklet, next tracklet)` index pairs. Both results must
/// hold their boundary states in the same coordinates.
pub fn link_pairs(
    prev: &PropagationResult,
    next: &PropagationResult,
) -> Result<Vec<(usize, usize)>> {
    let k = prev.end_frame();
    if k != next.t {
        return Err(Error::FrameMismatch(format!(
            "previous pair ends at frame {k} but next pair starts at frame {}",
            next.t
        )));
    }
    let (prev_idx, prev_rects) = boundary(prev, k, true);
    let (next_idx, next_rects) = boundary(next, k, false);
    Ok(greedy_link(&prev_rects, &next_rects, LINK_IOU_FLOOR)
        .into_iter()
        .map(|(i, j)| (prev_idx[i], next_idx[j]))
        .collect())
}

/// Wall-clock time spent per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub moi: Duration,
    pub linking: Duration,
}

/// Moves every state of a pair result (currently in frame `t` coordinates)
/// into its own frame's coordinates.
fn localize(result: &mut PropagationResult, input: &SequenceInput, pose_t: &Pose) -> Result<()> {
    if input.poses.is_empty() {
        return Ok(());
    }
    let mut rel = BTreeMap::new();
    for f in result.t + 1..=result.end_frame() {
        rel.insert(f, relative_pose(pose_t, &input.pose(f)?));
    }
    for tl in &mut result.tracklets {
        for (f, d) in tl.states.iter_mut() {
            if let Some(r) = rel.get(f) {
                d.bbox = transform_box(&d.bbox, r);
            }
        }
    }
    result.refresh_per_frame();
    Ok(())
}

pub fn run_sequence(input: &SequenceInput) -> Result<Vec<Track>> {
    run_sequence_timed(input).map(|(tracks, _)| tracks)
}

/// [`run_sequence`] that also reports per-stage timings.
pub fn run_sequence_timed(input: &SequenceInput) -> Result<(Vec<Track>, StageTimings)> {
    input.validate()?;
    let mut timings = StageTimings::default();
    let kfs = input.keyframes();
    let empty = Vec::new();
    let dets_at = |k: usize| input.detections.get(&k).unwrap_or(&empty);

    let mut tracks: Vec<Track> = Vec::new();
    let open_track = |tracks: &mut Vec<Track>| {
        let id = tracks.len() as u64;
        tracks.push(Track::new(id));
        tracks.len() - 1
    };

    if kfs.len() == 1 {
        for d in dets_at(kfs[0]) {
            let ti = open_track(&mut tracks);
            tracks[ti].states.insert(
                kfs[0],
                TrackState {
                    bbox: d.bbox,
                    score: d.score,
                },
            );
        }
    }

    // Previous pair result and the track owning each of its tracklets.
    let mut prev: Option<(PropagationResult, Vec<usize>)> = None;

    for w in kfs.windows(2) {
        let (t, e) = (w[0], w[1]);
        let clock = Instant::now();
        let pose_t = input.pose(t)?;
        let pose_e = input.pose(e)?;
        let first: Vec<Detection> = dets_at(t).iter().map(|d| d.as_first(t)).collect();
        let second: Vec<Detection> = dets_at(e).iter().map(|d| d.as_second(e)).collect();
        let pair = ego_compensate(
            &KeyframePair::new(t, e - t, first, second)?,
            &pose_t,
            &pose_e,
        );

        // Velocity context: which existing track each first detection continues.
        let mut velocities = vec![Velocity::ZERO; pair.first.len()];
        if let Some((pr, owners)) = &prev {
            let (pidx, prects) = boundary(pr, t, true);
            let frects: Vec<RectBEV> = pair.first.iter().map(|d| d.bbox.bev()).collect();
            for (i, j) in greedy_link(&prects, &frects, LINK_IOU_FLOOR) {
                velocities[j] = tracks[owners[pidx[i]]].velocity;
            }
        }

        let mut result = propagate(&pair, &velocities)?;
        localize(&mut result, input, &pose_t)?;
        timings.moi += clock.elapsed();

        let clock = Instant::now();
        let links = match &prev {
            Some((pr, _)) => link_pairs(pr, &result)?,
            None => Vec::new(),
        };
        let mut owners = vec![usize::MAX; result.tracklets.len()];
        let mut continued = vec![false; tracks.len()];
        if let Some((_, prev_owners)) = &prev {
            for &(p, n) in &links {
                owners[n] = prev_owners[p];
                continued[prev_owners[p]] = true;
            }
            // Tracks that had a state on this keyframe but found no successor end here.
            for &o in prev_owners {
                if !continued[o] {
                    tracks[o].status = TrackStatus::Terminated;
                }
            }
        }
        for (n, tl) in result.tracklets.iter().enumerate() {
            if owners[n] == usize::MAX {
                owners[n] = open_track(&mut tracks);
            }
            let track = &mut tracks[owners[n]];
            for (f, d) in &tl.states {
                track.states.entry(*f).or_insert(TrackState {
                    bbox: d.bbox,
                    score: d.score,
                });
            }
            if let TrackletOrigin::Matched { first, .. } = tl.origin {
                let d = &pair.first[first];
                track.velocity = update_velocity(
                    &track.velocity,
                    &d.offsets,
                    pair.tau,
                    (d.bbox.w, d.bbox.l, d.bbox.ry),
                    VELOCITY_ALPHA,
                )?;
            }
        }
        timings.linking += clock.elapsed();
        prev = Some((result, owners));
    }

    let last_frame = input.frames.saturating_sub(1);
    for track in &mut tracks {
        let (Some(first), Some(last)) = (track.first_frame(), track.last_frame()) else {
            continue;
        };
        if last < last_frame {
            track.status = TrackStatus::Terminated;
            extend(track, input, last, Direction::Forward)?;
        } else {
            track.status = TrackStatus::Active;
        }
        if first > 0 {
            extend(track, input, first, Direction::Backward)?;
        }
        debug_assert!(track.is_contiguous());
    }
    Ok((tracks, timings))
}

fn extend(
    track: &mut Track,
    input: &SequenceInput,
    from: usize,
    direction: Direction,
) -> Result<()> {
    let anchor = track.states[&from];
    let boxes = extend_track(&anchor.bbox, &track.velocity, &input.bounds, direction);
    let pose_from = input.pose(from)?;
    for (k, mut b) in boxes.into_iter().enumerate() {
        let step = k + 1;
        let frame = match direction {
            Direction::Forward if from + step < input.frames => from + step,
            Direction::Backward if step <= from => from - step,
            _ => break,
        };
        b.ry = correct_orientation(anchor.bbox.ry, b.ry);
        if !input.poses.is_empty() {
            b = transform_box(&b, &relative_pose(&pose_from, &input.pose(frame)?));
        }
        track.states.insert(
            frame,
            TrackState {
                bbox: b,
                score: anchor.score,
            },
        );
    }
    Ok(())
}
