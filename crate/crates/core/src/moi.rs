//! Motion-based interpolation: propagates the detections of a keyframe pair to
//! every frame in between.
//!
//! For each first-keyframe detection (highest score first) the offsets are
//! decoded into a rectified box and matched against the unclaimed
//! second-keyframe detections by 3D IoU. A match is interpolated. An
//! unmatched detection whose co-occurrence gate is open is treated as a
//! mis-detection on the second keyframe and interpolated towards the box its
//! offsets predict; otherwise the object dies and the clip is filled by the
//! motion model. Leftover second-keyframe detections are handled the same way
//! backwards: rescued from their offsets, or born and back-filled.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_diff, in_bounds, iou_3d, normalize_angle, BevBounds, Box3D};
use crate::kinematics::{
    correct_orientation, decode_offsets, extrapolate, retract_offsets, CoOccurrence, OffsetDelta,
    Velocity,
};

/// Minimum 3D IoU for a rectified detection to claim a second-keyframe detection.
pub const MATCH_IOU_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub bbox: Box3D,
    pub score: f64,
    pub co: CoOccurrence,
    pub offsets: OffsetDelta,
}

impl Detection {
    pub fn new(
        frame: usize,
        bbox: Box3D,
        score: f64,
        co: CoOccurrence,
        offsets: OffsetDelta,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidArgument(format!(
                "score must lie in [0, 1], got {score}"
            )));
        }
        Ok(Self {
            frame,
            bbox,
            score,
            co,
            offsets,
        })
    }

    fn at(&self, frame: usize, bbox: Box3D, score: f64) -> Detection {
        Detection {
            frame,
            bbox,
            score,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframePair {
    pub t: usize,
    pub tau: usize,
    pub first: Vec<Detection>,
    pub second: Vec<Detection>,
}

impl KeyframePair {
    pub fn new(
        t: usize,
        tau: usize,
        first: Vec<Detection>,
        second: Vec<Detection>,
    ) -> Result<Self> {
        let pair = Self {
            t,
            tau,
            first,
            second,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::InvalidArgument("tau must be at least 1".into()));
        }
        if let Some(d) = self.first.iter().find(|d| d.frame != self.t) {
            return Err(Error::FrameMismatch(format!(
                "first keyframe is {} but a detection is at frame {}",
                self.t, d.frame
            )));
        }
        let end = self.t + self.tau;
        if let Some(d) = self.second.iter().find(|d| d.frame != end) {
            return Err(Error::FrameMismatch(format!(
                "second keyframe is {end} but a detection is at frame {}",
                d.frame
            )));
        }
        Ok(())
    }
}

/// How a tracklet came about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackletOrigin {
    Matched {
        first: usize,
        second: usize,
    },
    /// Missing on the second keyframe; end synthesised from offsets.
    RescuedForward {
        first: usize,
    },
    /// Track ends inside the clip; filled by the motion model.
    Death {
        first: usize,
    },
    /// Missing on the first keyframe; start synthesised from offsets.
    RescuedBackward {
        second: usize,
    },
    /// Track starts inside the clip; back-filled by the motion model.
    Birth {
        second: usize,
    },
}

/// One object's states within a keyframe clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub origin: TrackletOrigin,
    pub states: BTreeMap<usize, Detection>,
}

impl Tracklet {
    pub fn start_frame(&self) -> usize {
        *self
            .states
            .keys()
            .next()
            .expect("tracklets are never empty")
    }

    pub fn end_frame(&self) -> usize {
        *self
            .states
            .keys()
            .next_back()
            .expect("tracklets are never empty")
    }

    /// Index of the first-keyframe detection this tracklet grew from.
    pub fn first_index(&self) -> Option<usize> {
        match self.origin {
            TrackletOrigin::Matched { first, .. }
            | TrackletOrigin::RescuedForward { first }
            | TrackletOrigin::Death { first } => Some(first),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub t: usize,
    pub tau: usize,
    /// Every frame `t..=t+tau`, each with the detections emitted there.
    pub per_frame: BTreeMap<usize, Vec<Detection>>,
    pub matches: Vec<(usize, usize)>,
    /// Indices into the second keyframe.
    pub births: Vec<usize>,
    /// Indices into the first keyframe.
    pub deaths: Vec<usize>,
    pub rescued_forward: Vec<usize>,
    pub rescued_backward: Vec<usize>,
    pub tracklets: Vec<Tracklet>,
}

impl PropagationResult {
    pub fn end_frame(&self) -> usize {
        self.t + self.tau
    }

    /// Rebuilds `per_frame` from the tracklets, e.g. after their states were
    /// moved into another coordinate frame.
    pub fn refresh_per_frame(&mut self) {
        let mut per_frame: BTreeMap<usize, Vec<Detection>> = (self.t..=self.t + self.tau)
            .map(|f| (f, Vec::new()))
            .collect();
        for tl in &self.tracklets {
            for (f, d) in &tl.states {
                per_frame.entry(*f).or_default().push(*d);
            }
        }
        self.per_frame = per_frame;
    }
}

fn blend(a: &Box3D, b: &Box3D, w: f64) -> Box3D {
    Box3D {
        x: a.x + w * (b.x - a.x),
        y: a.y + w * (b.y - a.y),
        z: a.z + w * (b.z - a.z),
        w: a.w + w * (b.w - a.w),
        l: a.l + w * (b.l - a.l),
        h: a.h + w * (b.h - a.h),
        ry: normalize_angle(a.ry + w * angle_diff(b.ry, a.ry)),
    }
}

/// Boxes for the `tau - 1` frames strictly between `a` and `b`, blended
/// linearly; yaw follows the shorter arc.
pub fn interpolate(a: &Box3D, b: &Box3D, tau: usize) -> Vec<Box3D> {
    let t = tau as f64;
    (1..tau).map(|k| blend(a, b, k as f64 / t)).collect()
}

/// Interior detections between `a` (at frame `t`) and `b`, scores blended too.
fn interpolate_detections(
    src: &Detection,
    a: (&Box3D, f64),
    b: (&Box3D, f64),
    t: usize,
    tau: usize,
) -> Vec<Detection> {
    interpolate(a.0, b.0, tau)
        .into_iter()
        .enumerate()
        .map(|(i, bx)| {
            let k = i + 1;
            let score = a.1 + (k as f64 / tau as f64) * (b.1 - a.1);
            src.at(t + k, bx, score)
        })
        .collect()
}

fn best_match<'a>(
    rectified: &Box3D,
    pool: impl Iterator<Item = (usize, &'a Detection)>,
) -> Option<usize> {
    let mut best: Option<(f64, f64, usize)> = None;
    for (idx, d) in pool {
        let iou = iou_3d(rectified, &d.bbox);
        if iou < MATCH_IOU_FLOOR {
            continue;
        }
        let better = match best {
            None => true,
            Some((bi, bs, bidx)) => match iou.partial_cmp(&bi).unwrap_or(Ordering::Equal) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => d.score > bs || (d.score == bs && idx < bidx),
            },
        };
        if better {
            best = Some((iou, d.score, idx));
        }
    }
    best.map(|(_, _, idx)| idx)
}

/// Index of the pool detection with the highest 3D IoU against `rectified`,
/// if that IoU reaches [`MATCH_IOU_FLOOR`]. Ties go to the higher score, then
/// the lower index.
pub fn get_matched(rectified: &Box3D, pool: &[Detection]) -> Option<usize> {
    best_match(rectified, pool.iter().enumerate())
}

/// Runs the interpolation over one keyframe pair.
///
/// The second keyframe must already be expressed in the first keyframe's
/// coordinates. `velocities[i]` is the motion-model velocity of the track
/// owning `first[i]`; missing entries mean no history (zero velocity).
pub fn propagate(pair: &KeyframePair, velocities: &[Velocity]) -> Result<PropagationResult> {
    pair.validate()?;
    let t = pair.t;
    let tau = pair.tau;
    let end = t + tau;

    let mut order: Vec<usize> = (0..pair.first.len()).collect();
    order.sort_by(|&a, &b| {
        pair.first[b]
            .score
            .partial_cmp(&pair.first[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut remaining: Vec<bool> = vec![true; pair.second.len()];
    let mut result = PropagationResult {
        t,
        tau,
        per_frame: BTreeMap::new(),
        matches: Vec::new(),
        births: Vec::new(),
        deaths: Vec::new(),
        rescued_forward: Vec::new(),
        rescued_backward: Vec::new(),
        tracklets: Vec::new(),
    };

    for i in order {
        let d = &pair.first[i];
        let rectified = decode_offsets(&d.bbox, &d.offsets);
        let pool = pair
            .second
            .iter()
            .enumerate()
            .filter(|(j, _)| remaining[*j]);
        let mut states = BTreeMap::new();
        states.insert(t, *d);

        let origin = if let Some(j) = best_match(&rectified, pool) {
            remaining[j] = false;
            let other = &pair.second[j];
            let mut target = other.bbox;
            target.ry = correct_orientation(d.bbox.ry, target.ry);
            for s in interpolate_detections(d, (&d.bbox, d.score), (&target, other.score), t, tau) {
                states.insert(s.frame, s);
            }
            states.insert(end, other.at(end, target, other.score));
            result.matches.push((i, j));
            TrackletOrigin::Matched {
                first: i,
                second: j,
            }
        } else if d.co.co_occurs() {
            let mut target = rectified;
            target.ry = correct_orientation(d.bbox.ry, target.ry);
            for s in interpolate_detections(d, (&d.bbox, d.score), (&target, d.score), t, tau) {
                states.insert(s.frame, s);
            }
            states.insert(end, d.at(end, target, d.score));
            result.rescued_forward.push(i);
            TrackletOrigin::RescuedForward { first: i }
        } else {
            let v = velocities.get(i).copied().unwrap_or(Velocity::ZERO);
            let mut prev_ry = d.bbox.ry;
            for k in 1..tau {
                let mut b = extrapolate(&d.bbox, &v, k as i64);
                b.ry = correct_orientation(prev_ry, b.ry);
                prev_ry = b.ry;
                states.insert(t + k, d.at(t + k, b, d.score));
            }
            result.deaths.push(i);
            TrackletOrigin::Death { first: i }
        };
        result.tracklets.push(Tracklet { origin, states });
    }

    for (j, d) in pair.second.iter().enumerate() {
        if !remaining[j] {
            continue;
        }
        let mut states = BTreeMap::new();
        let origin = if d.co.co_occurs() {
            let mut start = retract_offsets(&d.bbox, &d.offsets);
            start.ry = correct_orientation(d.bbox.ry, start.ry);
            states.insert(t, d.at(t, start, d.score));
            for s in interpolate_detections(d, (&start, d.score), (&d.bbox, d.score), t, tau) {
                states.insert(s.frame, s);
            }
            result.rescued_backward.push(j);
            TrackletOrigin::RescuedBackward { second: j }
        } else {
            // A newborn track has no motion history.
            let v = Velocity::ZERO;
            for k in 1..tau {
                let b = extrapolate(&d.bbox, &v, -(k as i64));
                states.insert(end - k, d.at(end - k, b, d.score));
            }
            result.births.push(j);
            TrackletOrigin::Birth { second: j }
        };
        states.insert(end, *d);
        result.tracklets.push(Tracklet { origin, states });
    }

    result.refresh_per_frame();
    Ok(result)
}

/// Number of frames a track is extended past its last (or before its first) state.
pub const EXTENSION_FRAMES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// Up to [`EXTENSION_FRAMES`] motion-model boxes beyond `last_box`, stopping
/// at the first one whose center leaves `bounds`. Each box is orientation
/// corrected against its predecessor.
pub fn extend_track(
    last_box: &Box3D,
    v: &Velocity,
    bounds: &BevBounds,
    direction: Direction,
) -> Vec<Box3D> {
    let sign: i64 = match direction {
        Direction::Forward => 1,
        Direction::Backward => -1,
    };
    let mut out = Vec::with_capacity(EXTENSION_FRAMES);
    let mut prev_ry = last_box.ry;
    for k in 1..=EXTENSION_FRAMES as i64 {
        let mut b = extrapolate(last_box, v, sign * k);
        if !in_bounds(&b, bounds) {
            break;
        }
        b.ry = correct_orientation(prev_ry, b.ry);
        prev_ry = b.ry;
        out.push(b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::encode_offsets;
    use std::f64::consts::PI;

    fn bx(x: f64, z: f64, ry: f64) -> Box3D {
        Box3D::new(x, 1.0, z, 1.6, 3.9, 1.5, ry).unwrap()
    }

    fn det(frame: usize, b: Box3D, score: f64, p: f64, off: OffsetDelta) -> Detection {
        Detection::new(frame, b, score, CoOccurrence::new(p).unwrap(), off).unwrap()
    }

    #[test]
    fn interpolate_constant_and_linear() {
        let a = bx(0.0, 0.0, 0.2);
        let out = interpolate(&a, &a, 4);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|b| *b == a));
        assert!(interpolate(&a, &a, 1).is_empty());

        let b = bx(3.0, 3.0, 0.2);
        let out = interpolate(&a, &b, 3);
        assert!((out[0].x - 1.0).abs() < 1e-12 && (out[0].z - 1.0).abs() < 1e-12);
        assert!((out[1].x - 2.0).abs() < 1e-12 && (out[1].z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn interpolate_short_arc() {
        let a = bx(0.0, 0.0, 0.0);
        let corrected = correct_orientation(0.0, 3.0);
        let b = bx(0.0, 0.0, corrected);
        let mid = interpolate(&a, &b, 2)[0];
        assert!((mid.ry - (3.0 - PI) / 2.0).abs() < 1e-12);

        // Across the ±π seam the blend stays near π rather than sweeping through 0.
        let a = bx(0.0, 0.0, PI - 0.1);
        let b = bx(0.0, 0.0, -PI + 0.1);
        let mid = interpolate(&a, &b, 2)[0];
        assert!(mid.ry.abs() > PI - 1e-9);
    }

    #[test]
    fn get_matched_cases() {
        let r = bx(0.0, 10.0, 0.0);
        assert_eq!(get_matched(&r, &[]), None);

        let pool = vec![
            det(3, bx(5.0, 10.0, 0.0), 0.9, 1.0, OffsetDelta::ZERO),
            det(3, r, 0.5, 1.0, OffsetDelta::ZERO),
        ];
        assert_eq!(get_matched(&r, &pool), Some(1));

        // Below the floor nothing matches.
        let far = vec![det(3, bx(3.6, 10.0, 0.0), 0.9, 1.0, OffsetDelta::ZERO)];
        assert!(iou_3d(&r, &far[0].bbox) < MATCH_IOU_FLOOR);
        assert_eq!(get_matched(&r, &far), None);
    }

    #[test]
    fn get_matched_tie_break() {
        let r = bx(0.0, 10.0, 0.0);
        let left = det(3, r, 0.6, 1.0, OffsetDelta::ZERO);
        let right = det(3, r, 0.8, 1.0, OffsetDelta::ZERO);
        assert_eq!(get_matched(&r, &[left, right]), Some(1));
        let right_low = Detection {
            score: 0.6,
            ..right
        };
        assert_eq!(get_matched(&r, &[left, right_low]), Some(0));
    }

    #[test]
    fn frame_mismatch_rejected() {
        let d = det(1, bx(0.0, 10.0, 0.0), 0.9, 1.0, OffsetDelta::ZERO);
        assert!(KeyframePair::new(0, 3, vec![d], vec![]).is_err());
        assert!(KeyframePair::new(1, 3, vec![], vec![d]).is_err());
        assert!(KeyframePair::new(1, 0, vec![d], vec![]).is_err());
        let pair = KeyframePair {
            t: 0,
            tau: 3,
            first: vec![d],
            second: vec![],
        };
        assert!(matches!(
            propagate(&pair, &[]),
            Err(Error::FrameMismatch(_))
        ));
    }

    #[test]
    fn matched_pair_linear() {
        let a = bx(0.0, 10.0, -1.2);
        let b = bx(1.5, 13.0, -1.2);
        let one = CoOccurrence::new(1.0).unwrap();
        let off = encode_offsets(&a, &b, one);
        let pair = KeyframePair::new(
            0,
            3,
            vec![det(0, a, 0.9, 1.0, off)],
            vec![det(3, b, 0.8, 1.0, OffsetDelta::ZERO)],
        )
        .unwrap();
        let res = propagate(&pair, &[]).unwrap();
        assert_eq!(res.matches, vec![(0, 0)]);
        assert!(res.births.is_empty() && res.deaths.is_empty());
        assert_eq!(res.per_frame.len(), 4);
        let f1 = res.per_frame[&1][0];
        let f2 = res.per_frame[&2][0];
        assert!((f1.bbox.x - 0.5).abs() < 1e-12 && (f1.bbox.z - 11.0).abs() < 1e-12);
        assert!((f2.bbox.x - 1.0).abs() < 1e-12 && (f2.bbox.z - 12.0).abs() < 1e-12);
        assert!((f1.score - (0.9 - 0.1 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn one_to_one_matching() {
        // Two first detections both rectify onto the same single second box.
        let a = bx(0.0, 10.0, 0.0);
        let pair = KeyframePair::new(
            0,
            2,
            vec![
                det(0, a, 0.7, 0.0, OffsetDelta::ZERO),
                det(0, bx(0.2, 10.0, 0.0), 0.9, 0.0, OffsetDelta::ZERO),
            ],
            vec![det(2, a, 0.8, 0.0, OffsetDelta::ZERO)],
        )
        .unwrap();
        let res = propagate(&pair, &[]).unwrap();
        // Higher score goes first and claims the only candidate.
        assert_eq!(res.matches, vec![(1, 0)]);
        assert_eq!(res.deaths, vec![0]);
    }

    #[test]
    fn extension_cases() {
        let bounds = BevBounds::default();
        let last = bx(0.0, 35.0, 0.0);
        let out = extend_track(&last, &Velocity::ZERO, &bounds, Direction::Forward);
        assert_eq!(out, vec![last; 3]);

        let edge = bx(39.5, 35.0, 0.0);
        let v = Velocity {
            vx: 1.0,
            vz: 0.0,
            vry: 0.0,
        };
        assert!(extend_track(&edge, &v, &bounds, Direction::Forward).is_empty());
        assert_eq!(
            extend_track(&edge, &v, &bounds, Direction::Backward).len(),
            3
        );

        let v = Velocity {
            vx: 0.2,
            vz: 0.4,
            vry: 0.0,
        };
        let out = extend_track(&last, &v, &bounds, Direction::Forward);
        let expected = [(0.2, 35.4), (0.4, 35.8), (0.6, 36.2)];
        assert_eq!(out.len(), 3);
        for (b, (x, z)) in out.iter().zip(expected) {
            assert!((b.x - x).abs() < 1e-12 && (b.z - z).abs() < 1e-12);
        }
    }
}
