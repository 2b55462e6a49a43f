//! Seeded synthetic scenarios: ground-truth tracks plus the keyframe
//! detections, offsets and co-occurrence probabilities a trained detector
//! would emit.
//!
//! Everything is drawn from one `ChaCha8Rng` in a fixed order:
//!
//! 1. objects, by index: birth, death, `w`, `l`, `h`, bottom height, then
//!    speed, yaw rate and `(x, z, ry)` at birth, resampled together until the
//!    path stays in bounds and clear of earlier objects;
//! 2. per keyframe, per object alive there: center noise `(x, y, z)`, dims
//!    noise `(w, l, h)`, yaw noise, score, `next` and `prev` co-occurrence
//!    noise, drop draw;
//! 3. per keyframe: false-positive count, then per false positive `x`, `z`,
//!    `ry`, `w`, `l`, `h`, score, `next` and `prev` co-occurrence.
//!
//! Normal variates are always drawn, so zero noise consumes the same stream.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    angle_diff, in_bounds, intersection_area_bev, relative_pose, transform_box, BevBounds, Box3D,
    Pose,
};
use crate::kinematics::{yaw_scale, CoOccurrence, OffsetDelta};
use crate::tracker::{keyframes, KeyframeDetection, SequenceInput, TemporalCue, Track, TrackState};

const WIDTH_RANGE: [f64; 2] = [1.5, 1.9];
const LENGTH_RANGE: [f64; 2] = [3.5, 4.5];
const HEIGHT_RANGE: [f64; 2] = [1.4, 1.7];
const BOTTOM_RANGE: [f64; 2] = [1.5, 1.8];
const TRUE_SCORE_RANGE: [f64; 2] = [0.5, 1.0];
const FP_SCORE_RANGE: [f64; 2] = [0.0, 0.6];
const MIN_DIM: f64 = 0.1;
const MAX_PLACEMENT_ATTEMPTS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub frames: usize,
    pub tau: usize,
    pub n_objects: usize,
    /// Inclusive range of first frames.
    pub birth_range: [usize; 2],
    /// Inclusive range of last frames.
    pub death_range: [usize; 2],
    /// Meters per frame.
    pub speed_range: [f64; 2],
    /// Radians per frame.
    pub yaw_rate_range: [f64; 2],
    pub sigma_center: f64,
    pub sigma_dims: f64,
    pub sigma_yaw: f64,
    pub drop_prob: f64,
    /// Expected false positives per keyframe.
    pub fp_rate: f64,
    /// Standard deviation added to co-occurrence probabilities.
    pub co_noise: f64,
    pub seed: u64,
    /// `(object index, keyframe)` detections removed regardless of `drop_prob`.
    #[serde(default)]
    pub forced_drops: Vec<(usize, usize)>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            frames: 60,
            tau: 3,
            n_objects: 10,
            birth_range: [0, 0],
            death_range: [59, 59],
            speed_range: [0.2, 0.8],
            yaw_rate_range: [0.0, 0.0],
            sigma_center: 0.0,
            sigma_dims: 0.0,
            sigma_yaw: 0.0,
            drop_prob: 0.0,
            fp_rate: 0.0,
            co_noise: 0.0,
            seed: 0,
            forced_drops: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.tau == 0 {
            return bad("tau must be at least 1".into());
        }
        if self.frames < self.tau + 1 {
            return bad(format!(
                "frames ({}) must be at least tau + 1 ({})",
                self.frames,
                self.tau + 1
            ));
        }
        for (name, r) in [
            ("birth_range", self.birth_range),
            ("death_range", self.death_range),
        ] {
            if r[0] > r[1] {
                return bad(format!("{name} must satisfy min <= max, got {r:?}"));
            }
        }
        for (name, r) in [
            ("speed_range", self.speed_range),
            ("yaw_rate_range", self.yaw_rate_range),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return bad(format!("{name} must be finite with min <= max, got {r:?}"));
            }
        }
        if self.speed_range[0] < 0.0 {
            return bad("speed_range must be non-negative".into());
        }
        for (name, s) in [
            ("sigma_center", self.sigma_center),
            ("sigma_dims", self.sigma_dims),
            ("sigma_yaw", self.sigma_yaw),
            ("co_noise", self.co_noise),
            ("fp_rate", self.fp_rate),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {s}"));
            }
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return bad(format!(
                "drop_prob must lie in [0, 1], got {}",
                self.drop_prob
            ));
        }
        if self.birth_range[1] >= self.frames || self.death_range[1] >= self.frames {
            return Err(Error::InfeasibleConfig(format!(
                "birth {:?} / death {:?} ranges reach beyond frame {}",
                self.birth_range,
                self.death_range,
                self.frames - 1
            )));
        }
        if self.birth_range[0] > self.death_range[1] {
            return Err(Error::InfeasibleConfig(format!(
                "no object can be born ({:?}) before dying ({:?})",
                self.birth_range, self.death_range
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Ids are object indices.
    pub gt_tracks: Vec<Track>,
    /// Keyframe detections; `poses` is empty until [`apply_ego`].
    pub input: SequenceInput,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        // Still consume a draw so the stream does not depend on the range.
        let _: f64 = rng.random();
        return r[0];
    }
    rng.random_range(r[0]..r[1])
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct Path {
    birth: usize,
    boxes: Vec<Box3D>,
}

impl Path {
    fn at(&self, frame: usize) -> Option<&Box3D> {
        frame
            .checked_sub(self.birth)
            .and_then(|i| self.boxes.get(i))
    }
}

fn sample_path(
    rng: &mut ChaCha8Rng,
    cfg: &ScenarioConfig,
    bounds: &BevBounds,
    placed: &[Path],
) -> Result<Path> {
    let birth = rng.random_range(cfg.birth_range[0]..=cfg.birth_range[1]);
    let death_lo = cfg.death_range[0].max(birth);
    if death_lo > cfg.death_range[1] {
        return Err(Error::InfeasibleConfig(format!(
            "object born at frame {birth} has no admissible death frame in {:?}",
            cfg.death_range
        )));
    }
    let death = rng.random_range(death_lo..=cfg.death_range[1]);
    let w = uniform(rng, WIDTH_RANGE);
    let l = uniform(rng, LENGTH_RANGE);
    let h = uniform(rng, HEIGHT_RANGE);
    let y = uniform(rng, BOTTOM_RANGE) - h / 2.0;

    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let speed = uniform(rng, cfg.speed_range);
        let yaw_rate = uniform(rng, cfg.yaw_rate_range);
        let x0 = uniform(rng, bounds.x_range);
        let z0 = uniform(rng, bounds.z_range);
        let ry0 = rng.random_range(-PI..PI);
        let mut boxes = Vec::with_capacity(death - birth + 1);
        let (mut x, mut z) = (x0, z0);
        let mut ok = true;
        for k in 0..=death - birth {
            let heading = ry0 + yaw_rate * k as f64;
            let b = Box3D::new(x, y, z, w, l, h, heading)?;
            if !in_bounds(&b, bounds) {
                ok = false;
                break;
            }
            let f = birth + k;
            if placed
                .iter()
                .filter_map(|p| p.at(f))
                .any(|o| intersection_area_bev(&o.bev(), &b.bev()) > 0.0)
            {
                ok = false;
                break;
            }
            boxes.push(b);
            x += speed * heading.cos();
            z -= speed * heading.sin();
        }
        if ok {
            return Ok(Path { birth, boxes });
        }
    }
    Err(Error::InfeasibleConfig(format!(
        "could not place object {} inside the bounds after {MAX_PLACEMENT_ATTEMPTS} attempts",
        placed.len()
    )))
}

/// Per-detection draws of stage 2.
struct Noisy {
    bbox: Box3D,
    score: f64,
    co_next: f64,
    co_prev: f64,
    dropped: bool,
}

fn perturb(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig, b: &Box3D) -> Result<Box3D> {
    let (nx, ny, nz) = (normal(rng), normal(rng), normal(rng));
    let (nw, nl, nh) = (normal(rng), normal(rng), normal(rng));
    let nry = normal(rng);
    let sc = cfg.sigma_center;
    let sd = cfg.sigma_dims;
    Box3D::new(
        b.x + sc * nx,
        b.y + sc * ny,
        b.z + sc * nz,
        (b.w + sd * nw).max(MIN_DIM),
        (b.l + sd * nl).max(MIN_DIM),
        (b.h + sd * nh).max(MIN_DIM),
        b.ry + cfg.sigma_yaw * nry,
    )
}

/// Offsets from `from` to `to`, normalised by `reference`.
fn offsets_between(from: &Box3D, to: &Box3D, reference: &Box3D) -> OffsetDelta {
    OffsetDelta {
        dx: (to.x - from.x) / reference.w,
        dz: (to.z - from.z) / reference.l,
        dry: angle_diff(to.ry, from.ry) / yaw_scale(reference.ry),
    }
}

/// Generates a scenario in world coordinates (identity poses).
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let bounds = BevBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut paths: Vec<Path> = Vec::with_capacity(cfg.n_objects);
    for _ in 0..cfg.n_objects {
        let p = sample_path(&mut rng, cfg, &bounds, &paths)?;
        paths.push(p);
    }

    let kfs = keyframes(cfg.frames, cfg.tau);
    let mut noisy: BTreeMap<(usize, usize), Noisy> = BTreeMap::new();
    for &k in &kfs {
        for (i, p) in paths.iter().enumerate() {
            let Some(b) = p.at(k) else { continue };
            let bbox = perturb(&mut rng, cfg, b)?;
            let score = uniform(&mut rng, TRUE_SCORE_RANGE);
            let co_next = normal(&mut rng);
            let co_prev = normal(&mut rng);
            let u: f64 = rng.random();
            let dropped = u < cfg.drop_prob || cfg.forced_drops.contains(&(i, k));
            noisy.insert(
                (k, i),
                Noisy {
                    bbox,
                    score,
                    co_next,
                    co_prev,
                    dropped,
                },
            );
        }
    }

    let mut detections: BTreeMap<usize, Vec<KeyframeDetection>> = BTreeMap::new();
    for (ki, &k) in kfs.iter().enumerate() {
        let next_k = kfs.get(ki + 1).copied();
        let prev_k = ki.checked_sub(1).map(|j| kfs[j]);
        let mut row = Vec::new();
        for i in 0..paths.len() {
            let Some(n) = noisy.get(&(k, i)) else {
                continue;
            };
            let cue = |other: Option<usize>, noise: f64, forward: bool| -> TemporalCue {
                let partner = other.and_then(|o| noisy.get(&(o, i)));
                let base = if partner.is_some() { 1.0 } else { 0.0 };
                let offsets = match partner {
                    Some(p) if forward => offsets_between(&n.bbox, &p.bbox, &n.bbox),
                    Some(p) => offsets_between(&p.bbox, &n.bbox, &n.bbox),
                    None => OffsetDelta::ZERO,
                };
                TemporalCue {
                    co: CoOccurrence::clamped(base + cfg.co_noise * noise),
                    offsets,
                }
            };
            let next = cue(next_k, n.co_next, true);
            let prev = cue(prev_k, n.co_prev, false);
            if n.dropped {
                continue;
            }
            row.push(KeyframeDetection {
                bbox: n.bbox,
                score: n.score,
                next,
                prev,
                source: Some(i as u64),
            });
        }
        if !row.is_empty() {
            detections.insert(k, row);
        }
    }

    let mut next_source = cfg.n_objects as u64;
    for &k in &kfs {
        let count = if cfg.fp_rate > 0.0 {
            let d = Poisson::new(cfg.fp_rate)
                .map_err(|e| Error::InvalidArgument(format!("fp_rate: {e}")))?;
            d.sample(&mut rng) as usize
        } else {
            0
        };
        for _ in 0..count {
            let x = uniform(&mut rng, bounds.x_range);
            let z = uniform(&mut rng, bounds.z_range);
            let ry = rng.random_range(-PI..PI);
            let w = uniform(&mut rng, WIDTH_RANGE);
            let l = uniform(&mut rng, LENGTH_RANGE);
            let h = uniform(&mut rng, HEIGHT_RANGE);
            let score = uniform(&mut rng, FP_SCORE_RANGE);
            let co_next: f64 = rng.random();
            let co_prev: f64 = rng.random();
            let y = BOTTOM_RANGE[0] - h / 2.0;
            detections.entry(k).or_default().push(KeyframeDetection {
                bbox: Box3D::new(x, y, z, w, l, h, ry)?,
                score,
                next: TemporalCue {
                    co: CoOccurrence::clamped(co_next),
                    offsets: OffsetDelta::ZERO,
                },
                prev: TemporalCue {
                    co: CoOccurrence::clamped(co_prev),
                    offsets: OffsetDelta::ZERO,
                },
                source: Some(next_source),
            });
            next_source += 1;
        }
    }

    let gt_tracks = paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut t = Track::new(i as u64);
            for (j, b) in p.boxes.iter().enumerate() {
                t.states.insert(
                    p.birth + j,
                    TrackState {
                        bbox: *b,
                        score: 1.0,
                    },
                );
            }
            t
        })
        .collect();

    let mut input = SequenceInput::new(cfg.frames, cfg.tau);
    input.detections = detections;
    Ok(Scenario { gt_tracks, input })
}

/// Planar ego motion: constant forward speed and yaw rate, starting at the
/// world origin with zero heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoTrajectory {
    /// Meters per frame along the ego's forward (`+z`) axis.
    pub speed: f64,
    /// Radians per frame.
    pub yaw_rate: f64,
}

impl EgoTrajectory {
    /// Ego-to-world pose for frames `0..frames`.
    pub fn poses(&self, frames: usize) -> BTreeMap<usize, Pose> {
        let mut out = BTreeMap::new();
        let mut t = Vector3::zeros();
        for f in 0..frames {
            let yaw = self.yaw_rate * f as f64;
            out.insert(f, Pose::from_yaw(yaw, t));
            t += self.speed * Vector3::new(yaw.sin(), 0.0, yaw.cos());
        }
        out
    }
}

fn pose_or_identity(poses: &BTreeMap<usize, Pose>, f: usize) -> Pose {
    poses.get(&f).copied().unwrap_or_else(Pose::identity)
}

/// Re-expresses the displacement encoded by `cue` (relative to `reference`
/// in old coordinates) through `rel`, normalised by `new_reference`.
fn transform_cue(
    cue: &TemporalCue,
    reference: &Box3D,
    new_reference: &Box3D,
    rel: &Pose,
) -> TemporalCue {
    let o = &cue.offsets;
    let d = Vector3::new(o.dx * reference.w, 0.0, o.dz * reference.l);
    let d = rel.rotation() * d;
    let dyaw = o.dry * yaw_scale(reference.ry);
    TemporalCue {
        co: cue.co,
        offsets: OffsetDelta {
            dx: d.x / new_reference.w,
            dz: d.z / new_reference.l,
            dry: dyaw / yaw_scale(new_reference.ry),
        },
    }
}

/// Moves a scenario into the coordinates of a moving observer.
///
/// Every gt box and detection at frame `f` is re-expressed in frame `f`'s
/// ego coordinates and `input.poses` is filled for all frames, so the
/// tracker's ego compensation undoes the motion.
pub fn apply_ego(scenario: &Scenario, ego: &EgoTrajectory) -> Scenario {
    let frames = scenario.input.frames;
    let old = &scenario.input.poses;
    let new = ego.poses(frames);
    let rel = |f: usize| relative_pose(&pose_or_identity(old, f), &new[&f]);

    let gt_tracks = scenario
        .gt_tracks
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for (f, s) in t.states.iter_mut() {
                s.bbox = transform_box(&s.bbox, &rel(*f));
            }
            t
        })
        .collect();

    let kfs = scenario.input.keyframes();
    let mut detections = BTreeMap::new();
    for (ki, &k) in kfs.iter().enumerate() {
        let Some(dets) = scenario.input.detections.get(&k) else {
            continue;
        };
        let rel_k = rel(k);
        let prev_k = ki.checked_sub(1).map(|j| kfs[j]);
        let moved = dets
            .iter()
            .map(|d| {
                let bbox = transform_box(&d.bbox, &rel_k);
                let next = transform_cue(&d.next, &d.bbox, &bbox, &rel_k);
                let prev = match prev_k {
                    Some(p) => {
                        let old_ref = transform_box(
                            &d.bbox,
                            &relative_pose(&pose_or_identity(old, k), &pose_or_identity(old, p)),
                        );
                        let new_ref = transform_box(
                            &d.bbox,
                            &relative_pose(&pose_or_identity(old, k), &new[&p]),
                        );
                        transform_cue(&d.prev, &old_ref, &new_ref, &rel(p))
                    }
                    None => d.prev,
                };
                KeyframeDetection {
                    bbox,
                    next,
                    prev,
                    ..*d
                }
            })
            .collect();
        detections.insert(k, moved);
    }

    let mut input = scenario.input.clone();
    input.detections = detections;
    input.poses = new;
    Scenario { gt_tracks, input }
}
