//! Text formats: KITTI tracking labels, per-frame pose matrices and the
//! keyframe detection file consumed by the tracker.
//!
//! All readers work line by line and report the 1-based line number of the
//! first malformed row. Label floats are written with 6 decimals.
//!
//! Detection file layout (whitespace separated, `#` starts a comment):
//!
//! ```text
//! format streamtrack-detections 1
//! sequence 0000
//! frames 60
//! tau 3
//! <keyframe> <source> <score> <x> <y> <z> <w> <l> <h> <ry> \
//!     <co_next> <dx_next> <dz_next> <dry_next> <co_prev> <dx_prev> <dz_prev> <dry_prev>
//! ```
//!
//! `y` is the vertical box center, `source` is a provenance id or `-1`.
//! Keyframes are multiples of `tau` or the final frame `frames - 1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, orthonormality_error, Box3D, Pose};
use crate::kinematics::{CoOccurrence, OffsetDelta};
use crate::tracker::{keyframes, KeyframeDetection, SequenceInput, TemporalCue, Track, TrackState};

pub const DONT_CARE: &str = "DontCare";

/// Tolerance on `|R·Rᵀ - I|` below which a pose row is re-orthonormalised
/// instead of rejected.
pub const POSE_ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occlusion {
    /// `-1`, used by `DontCare` rows.
    NotApplicable,
    FullyVisible,
    PartlyOccluded,
    LargelyOccluded,
    Unknown,
}

impl Occlusion {
    fn from_code(code: i64) -> Option<Self> {
        Some(match code {
            -1 => Occlusion::NotApplicable,
            0 => Occlusion::FullyVisible,
            1 => Occlusion::PartlyOccluded,
            2 => Occlusion::LargelyOccluded,
            3 => Occlusion::Unknown,
            _ => return None,
        })
    }

    pub fn code(self) -> i64 {
        match self {
            Occlusion::NotApplicable => -1,
            Occlusion::FullyVisible => 0,
            Occlusion::PartlyOccluded => 1,
            Occlusion::LargelyOccluded => 2,
            Occlusion::Unknown => 3,
        }
    }
}

/// One row of a KITTI tracking label file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub frame: usize,
    pub track_id: i64,
    pub category: String,
    pub truncated: f64,
    pub occluded: Occlusion,
    pub alpha: f64,
    pub bbox2d: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dims: [f64; 3],
    /// Bottom-face center in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRow {
    pub fn is_dont_care(&self) -> bool {
        self.category == DONT_CARE
    }

    pub fn to_box(&self) -> Result<Box3D> {
        let [h, w, l] = self.dims;
        let [x, y, z] = self.location;
        Box3D::new(x, y - h / 2.0, z, w, l, h, self.rotation_y)
    }

    pub fn from_state(frame: usize, track_id: i64, category: &str, state: &TrackState) -> Self {
        let b = &state.bbox;
        LabelRow {
            frame,
            track_id,
            category: category.to_string(),
            truncated: 0.0,
            occluded: Occlusion::FullyVisible,
            alpha: normalize_angle(b.ry - b.x.atan2(b.z)),
            bbox2d: [-1.0; 4],
            dims: [b.h, b.w, b.l],
            location: [b.x, b.y + b.h / 2.0, b.z],
            rotation_y: b.ry,
            score: Some(state.score),
        }
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, what: &str, line: usize) -> Result<T> {
    tok.parse::<T>()
        .map_err(|_| Error::parse(line, format!("field `{what}` is not a number: {tok:?}")))
}

fn parse_float(tok: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 = parse_num(tok, what, line)?;
    if !v.is_finite() {
        return Err(Error::parse(
            line,
            format!("field `{what}` is not finite: {tok:?}"),
        ));
    }
    Ok(v)
}

/// Parses one label line (without trailing newline).
pub fn parse_label_line(text: &str, line: usize) -> Result<LabelRow> {
    let f: Vec<&str> = text.split_whitespace().collect();
    if f.len() != 17 && f.len() != 18 {
        return Err(Error::parse(
            line,
            format!("expected 17 or 18 fields, found {}", f.len()),
        ));
    }
    let occ_code: i64 = parse_num(f[4], "occluded", line)?;
    let occluded = Occlusion::from_code(occ_code)
        .ok_or_else(|| Error::parse(line, format!("occlusion code {occ_code} out of range")))?;
    let num = |i: usize, what: &str| parse_float(f[i], what, line);
    let row = LabelRow {
        frame: parse_num(f[0], "frame", line)?,
        track_id: parse_num(f[1], "track_id", line)?,
        category: f[2].to_string(),
        truncated: num(3, "truncated")?,
        occluded,
        alpha: num(5, "alpha")?,
        bbox2d: [
            num(6, "bbox_left")?,
            num(7, "bbox_top")?,
            num(8, "bbox_right")?,
            num(9, "bbox_bottom")?,
        ],
        dims: [num(10, "height")?, num(11, "width")?, num(12, "length")?],
        location: [num(13, "x")?, num(14, "y")?, num(15, "z")?],
        rotation_y: num(16, "rotation_y")?,
        score: if f.len() == 18 {
            Some(num(17, "score")?)
        } else {
            None
        },
    };
    if !row.is_dont_care() {
        if row.dims.iter().any(|d| *d <= 0.0) {
            return Err(Error::parse(
                line,
                format!("non-positive dimensions {:?}", row.dims),
            ));
        }
        // 6-decimal rounding of ±π may overshoot slightly.
        if row.rotation_y.abs() > std::f64::consts::PI + 1e-6 {
            return Err(Error::parse(
                line,
                format!("rotation_y {} outside [-pi, pi]", row.rotation_y),
            ));
        }
        if occluded == Occlusion::NotApplicable {
            return Err(Error::parse(
                line,
                "occlusion -1 is reserved for DontCare rows",
            ));
        }
    }
    Ok(row)
}

/// Streaming reader over label rows; blank lines are skipped.
pub struct LabelReader<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> LabelReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            inner: reader.lines(),
            line: 0,
        }
    }
}

impl<R: BufRead> Iterator for LabelReader<R> {
    type Item = Result<LabelRow>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.inner.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(parse_label_line(&text, self.line));
        }
    }
}

pub fn parse_labels<R: BufRead>(reader: R) -> Result<Vec<LabelRow>> {
    LabelReader::new(reader).collect()
}

fn fmt_truncated(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.6}")
    }
}

pub fn format_label_row(r: &LabelRow) -> String {
    let mut s = format!(
        "{} {} {} {} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        r.frame,
        r.track_id,
        r.category,
        fmt_truncated(r.truncated),
        r.occluded.code(),
        r.alpha,
        r.bbox2d[0],
        r.bbox2d[1],
        r.bbox2d[2],
        r.bbox2d[3],
        r.dims[0],
        r.dims[1],
        r.dims[2],
        r.location[0],
        r.location[1],
        r.location[2],
        r.rotation_y,
    );
    if let Some(score) = r.score {
        let _ = write!(s, " {score:.6}");
    }
    s
}

pub fn write_label_rows(rows: &[LabelRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format_label_row(r));
        out.push('\n');
    }
    out
}

/// KITTI submission text for `tracks`, sorted by frame then id.
pub fn write_labels(tracks: &[Track], category: &str) -> String {
    let mut rows: Vec<LabelRow> = tracks
        .iter()
        .flat_map(|t| {
            t.states
                .iter()
                .map(move |(f, s)| LabelRow::from_state(*f, t.id as i64, category, s))
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.track_id));
    write_label_rows(&rows)
}

/// Groups labelled rows into tracks. `DontCare` rows and rows with a negative
/// id are skipped; `category` optionally restricts the class.
pub fn tracks_from_labels(rows: &[LabelRow], category: Option<&str>) -> Result<Vec<Track>> {
    let mut tracks: BTreeMap<i64, Track> = BTreeMap::new();
    for r in rows {
        if r.is_dont_care() || r.track_id < 0 {
            continue;
        }
        if category.is_some_and(|c| c != r.category) {
            continue;
        }
        let state = TrackState {
            bbox: r.to_box()?,
            score: r.score.unwrap_or(1.0),
        };
        tracks
            .entry(r.track_id)
            .or_insert_with(|| Track::new(r.track_id as u64))
            .states
            .insert(r.frame, state);
    }
    Ok(tracks.into_values().collect())
}

/// Adds overlay rows (e.g. hand-labelled missing objects) to `base`, skipping
/// any overlay row that has a base row on the same frame within `radius`
/// meters in BEV.
pub fn merge_label_overlay(base: &[LabelRow], overlay: &[LabelRow], radius: f64) -> Vec<LabelRow> {
    let mut out = base.to_vec();
    for o in overlay {
        let covered = base.iter().any(|b| {
            b.frame == o.frame && {
                let dx = b.location[0] - o.location[0];
                let dz = b.location[2] - o.location[2];
                (dx * dx + dz * dz).sqrt() <= radius
            }
        });
        if !covered {
            out.push(o.clone());
        }
    }
    out.sort_by_key(|r| (r.frame, r.track_id));
    out
}

/// Nearest rotation in the Frobenius sense.
fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Reads one `3×4` row-major pose per non-blank line; line `i` is frame `i`.
pub fn parse_poses<R: BufRead>(reader: R) -> Result<BTreeMap<usize, Pose>> {
    let mut out = BTreeMap::new();
    for (idx, text) in reader.lines().enumerate() {
        let text = text?;
        let line = idx + 1;
        if text.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = text
            .split_whitespace()
            .enumerate()
            .map(|(i, tok)| parse_float(tok, &format!("m{i}"), line))
            .collect::<Result<_>>()?;
        if vals.len() != 12 {
            return Err(Error::parse(
                line,
                format!("expected 12 numbers, found {}", vals.len()),
            ));
        }
        let rot = Matrix3::new(
            vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
        );
        let t = Vector3::new(vals[3], vals[7], vals[11]);
        let err = orthonormality_error(&rot);
        if err > POSE_ORTHO_TOL {
            return Err(Error::parse(
                line,
                format!("rotation is not orthonormal (max |RRᵀ-I| = {err:e})"),
            ));
        }
        if rot.determinant() < 0.0 {
            return Err(Error::parse(line, "rotation is a reflection"));
        }
        let pose = match Pose::new(rot, t) {
            Ok(p) => p,
            Err(_) => Pose::new(nearest_rotation(&rot), t)
                .map_err(|e| Error::parse(line, e.to_string()))?,
        };
        out.insert(out.len(), pose);
    }
    Ok(out)
}

/// `%.12e` as printed by C: `-1.234500000000e-03`.
fn fmt_exp(v: f64) -> String {
    let s = format!("{v:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Pose rows in frame order, 12 numbers each in C-style scientific notation
/// with 12 decimals.
pub fn write_poses(poses: &BTreeMap<usize, Pose>) -> String {
    let mut out = String::new();
    for p in poses.values() {
        let row: Vec<String> = p.to_row_major().iter().map(|v| fmt_exp(*v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Parsed detection file.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFile {
    pub sequence: String,
    pub frames: usize,
    pub tau: usize,
    pub detections: BTreeMap<usize, Vec<KeyframeDetection>>,
}

impl DetectionFile {
    pub fn into_sequence_input(self, poses: BTreeMap<usize, Pose>) -> SequenceInput {
        SequenceInput {
            frames: self.frames,
            tau: self.tau,
            detections: self.detections,
            poses,
            bounds: Default::default(),
        }
    }
}

const DETECTION_FORMAT: &str = "streamtrack-detections";

pub fn parse_detections<R: BufRead>(reader: R) -> Result<DetectionFile> {
    let mut sequence = None;
    let mut frames = None;
    let mut tau = None;
    let mut format_seen = false;
    let mut detections: BTreeMap<usize, Vec<KeyframeDetection>> = BTreeMap::new();
    let mut valid_keyframes: Option<Vec<usize>> = None;

    for (idx, text) in reader.lines().enumerate() {
        let text = text?;
        let line = idx + 1;
        let body = text.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let f: Vec<&str> = body.split_whitespace().collect();
        let first_is_number = f[0].parse::<usize>().is_ok();
        if !first_is_number {
            if valid_keyframes.is_some() {
                return Err(Error::parse(line, "header line after detection rows"));
            }
            match (f[0], f.len()) {
                ("format", 3) => {
                    if f[1] != DETECTION_FORMAT || f[2] != "1" {
                        return Err(Error::parse(
                            line,
                            format!("unsupported format {} {}", f[1], f[2]),
                        ));
                    }
                    format_seen = true;
                }
                ("sequence", 2) => sequence = Some(f[1].to_string()),
                ("frames", 2) => frames = Some(parse_num::<usize>(f[1], "frames", line)?),
                ("tau", 2) => {
                    let t = parse_num::<usize>(f[1], "tau", line)?;
                    if t == 0 {
                        return Err(Error::parse(line, "tau must be at least 1"));
                    }
                    tau = Some(t);
                }
                _ => return Err(Error::parse(line, format!("unknown header line {body:?}"))),
            }
            continue;
        }

        let kfs = match &valid_keyframes {
            Some(k) => k,
            None => {
                if !format_seen {
                    return Err(Error::parse(line, "missing `format` header"));
                }
                let (Some(fr), Some(t)) = (frames, tau) else {
                    return Err(Error::parse(
                        line,
                        "`frames` and `tau` must precede detection rows",
                    ));
                };
                valid_keyframes.insert(keyframes(fr, t))
            }
        };
        if f.len() != 18 {
            return Err(Error::parse(
                line,
                format!("expected 18 fields, found {}", f.len()),
            ));
        }
        let keyframe: usize = parse_num(f[0], "keyframe", line)?;
        if kfs.binary_search(&keyframe).is_err() {
            return Err(Error::parse(
                line,
                format!(
                    "frame {keyframe} is not a keyframe (multiples of tau {} or the final frame)",
                    tau.unwrap()
                ),
            ));
        }
        let source: i64 = parse_num(f[1], "source", line)?;
        let v: Vec<f64> = f[2..]
            .iter()
            .enumerate()
            .map(|(i, tok)| parse_float(tok, &format!("column {}", i + 3), line))
            .collect::<Result<_>>()?;
        let score = v[0];
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::parse(line, format!("score {score} outside [0, 1]")));
        }
        let bbox = Box3D::new(v[1], v[2], v[3], v[4], v[5], v[6], v[7])
            .map_err(|e| Error::parse(line, e.to_string()))?;
        let cue = |o: usize| -> Result<TemporalCue> {
            Ok(TemporalCue {
                co: CoOccurrence::new(v[o]).map_err(|e| Error::parse(line, e.to_string()))?,
                offsets: OffsetDelta::new(v[o + 1], v[o + 2], v[o + 3])
                    .map_err(|e| Error::parse(line, e.to_string()))?,
            })
        };
        detections
            .entry(keyframe)
            .or_default()
            .push(KeyframeDetection {
                bbox,
                score,
                next: cue(8)?,
                prev: cue(12)?,
                source: (source >= 0).then_some(source as u64),
            });
    }

    if !format_seen {
        return Err(Error::parse(0, "missing `format` header"));
    }
    let (Some(frames), Some(tau)) = (frames, tau) else {
        return Err(Error::parse(0, "missing `frames` or `tau` header"));
    };
    Ok(DetectionFile {
        sequence: sequence.unwrap_or_default(),
        frames,
        tau,
        detections,
    })
}

pub fn write_detections(file: &DetectionFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format {DETECTION_FORMAT} 1");
    let _ = writeln!(out, "sequence {}", file.sequence);
    let _ = writeln!(out, "frames {}", file.frames);
    let _ = writeln!(out, "tau {}", file.tau);
    let _ = writeln!(
        out,
        "# keyframe source score x y z w l h ry co_next dx_next dz_next dry_next co_prev dx_prev dz_prev dry_prev"
    );
    for (k, dets) in &file.detections {
        for d in dets {
            let b = &d.bbox;
            let source = d.source.map_or(-1, |s| s as i64);
            let vals = [
                d.score,
                b.x,
                b.y,
                b.z,
                b.w,
                b.l,
                b.h,
                b.ry,
                d.next.co.value(),
                d.next.offsets.dx,
                d.next.offsets.dz,
                d.next.offsets.dry,
                d.prev.co.value(),
                d.prev.offsets.dx,
                d.prev.offsets.dz,
                d.prev.offsets.dry,
            ];
            let _ = write!(out, "{k} {source}");
            for v in vals {
                let _ = write!(out, " {v:.9}");
            }
            out.push('\n');
        }
    }
    out
}
