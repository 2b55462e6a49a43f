//! Keyframe offset encoding and the constant-velocity motion model.
//!
//! Offsets express the displacement of an object between two keyframes,
//! normalised by the reference box: `x` by its width, `z` by its length and
//! the yaw by [`yaw_scale`] of its heading.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_diff, normalize_angle, Box3D};

/// Co-occurrence threshold above which an unmatched detection is treated as
/// a mis-detection on the other keyframe.
pub const P_CO_MAX: f64 = 0.5;

/// EMA weight of the previous velocity.
pub const VELOCITY_ALPHA: f64 = 0.8;

/// Floor on the magnitude of the yaw normaliser.
pub const MIN_YAW_SCALE: f64 = 0.1;

/// Normalised keyframe-to-keyframe displacement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OffsetDelta {
    pub dx: f64,
    pub dz: f64,
    pub dry: f64,
}

impl OffsetDelta {
    pub const ZERO: OffsetDelta = OffsetDelta {
        dx: 0.0,
        dz: 0.0,
        dry: 0.0,
    };

    pub fn new(dx: f64, dz: f64, dry: f64) -> Result<Self> {
        if !(dx.is_finite() && dz.is_finite() && dry.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "offsets must be finite: ({dx}, {dz}, {dry})"
            )));
        }
        Ok(Self { dx, dz, dry })
    }
}

/// Per-frame velocity in BEV.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Velocity {
    pub vx: f64,
    pub vz: f64,
    pub vry: f64,
}

impl Velocity {
    pub const ZERO: Velocity = Velocity {
        vx: 0.0,
        vz: 0.0,
        vry: 0.0,
    };
}

/// Probability that one object is present on both keyframes of a pair.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct CoOccurrence(f64);

impl CoOccurrence {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "co-occurrence must lie in [0, 1], got {p}"
            )));
        }
        Ok(Self(p))
    }

    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn clamped(p: f64) -> Self {
        if p.is_nan() {
            return Self(0.0);
        }
        Self(p.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Whether the pair gate is open (`p ≥ P_CO_MAX`).
    pub fn co_occurs(self) -> bool {
        self.0 >= P_CO_MAX
    }
}

/// Normaliser for yaw offsets: `sign(ry) · max(|ry|, 0.1)`, `sign(0) = +1`.
///
/// Keeps the heading-relative scale away from its singularity at zero.
pub fn yaw_scale(ry: f64) -> f64 {
    let sign = if ry < 0.0 { -1.0 } else { 1.0 };
    sign * ry.abs().max(MIN_YAW_SCALE)
}

/// Offset label from `b_t` to `b_next`, zero when the gate is closed.
pub fn encode_offsets(b_t: &Box3D, b_next: &Box3D, co: CoOccurrence) -> OffsetDelta {
    if !co.co_occurs() {
        return OffsetDelta::ZERO;
    }
    OffsetDelta {
        dx: (b_next.x - b_t.x) / b_t.w,
        dz: (b_next.z - b_t.z) / b_t.l,
        dry: angle_diff(b_next.ry, b_t.ry) / yaw_scale(b_t.ry),
    }
}

/// Applies offsets to a reference box. Inverse of [`encode_offsets`].
pub fn decode_offsets(d: &Box3D, delta: &OffsetDelta) -> Box3D {
    Box3D {
        x: d.x + d.w * delta.dx,
        z: d.z + d.l * delta.dz,
        ry: normalize_angle(d.ry + yaw_scale(d.ry) * delta.dry),
        ..*d
    }
}

/// Removes decoded offsets from a box, the backward counterpart of
/// [`decode_offsets`] where the offsets are normalised by `d` itself.
pub fn retract_offsets(d: &Box3D, delta: &OffsetDelta) -> Box3D {
    Box3D {
        x: d.x - d.w * delta.dx,
        z: d.z - d.l * delta.dz,
        ry: normalize_angle(d.ry - yaw_scale(d.ry) * delta.dry),
        ..*d
    }
}

/// Flips `det_ry` by π when it points against `track_ry` by more than π/2.
pub fn correct_orientation(track_ry: f64, det_ry: f64) -> f64 {
    if angle_diff(det_ry, track_ry).abs() > PI / 2.0 {
        // det + π and det - π are the same heading once wrapped.
        normalize_angle(det_ry + PI)
    } else {
        det_ry
    }
}

/// EMA velocity update from a matched detection's offsets over `tau` frames.
///
/// `dims` holds `(w, l, ry)` of the matched box, used to de-normalise.
pub fn update_velocity(
    v: &Velocity,
    delta: &OffsetDelta,
    tau: usize,
    dims: (f64, f64, f64),
    alpha: f64,
) -> Result<Velocity> {
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be at least 1".into()));
    }
    let t = tau as f64;
    let (w, l, ry) = dims;
    Ok(Velocity {
        vx: alpha * v.vx + (1.0 - alpha) * (delta.dx / t) * w,
        vz: alpha * v.vz + (1.0 - alpha) * (delta.dz / t) * l,
        vry: alpha * v.vry + (1.0 - alpha) * (delta.dry / t) * yaw_scale(ry),
    })
}

/// Moves a box `steps` frames along `v`; negative steps go back in time.
pub fn extrapolate(b: &Box3D, v: &Velocity, steps: i64) -> Box3D {
    let s = steps as f64;
    Box3D {
        x: b.x + s * v.vx,
        z: b.z + s * v.vz,
        ry: normalize_angle(b.ry + s * v.vry),
        ..*b
    }
}
