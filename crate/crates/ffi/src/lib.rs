//! C ABI over `streamtrack`.
//!
//! Sequences and track sets are opaque handles created and released by this
//! library. Every fallible call returns an [`StStatus`]; on failure,
//! [`st_last_error`] gives a message for the calling thread. Panics never
//! cross the boundary and surface as `ST_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use streamtrack::geometry::{iou_3d, iou_bev};
use streamtrack::kitti_io::{
    parse_detections, parse_labels, parse_poses, tracks_from_labels, write_labels,
};
use streamtrack::metrics::{evaluate, EvalConfig};
use streamtrack::tracker::run_sequence;
use streamtrack::{
    Box3D, CoOccurrence, Error, KeyframeDetection, OffsetDelta, Pose, SequenceInput, TemporalCue,
    Track,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    MissingPose = 4,
    FrameMismatch = 5,
    EmptyGroundTruth = 6,
    Io = 7,
    OutOfRange = 8,
    Internal = 9,
}

/// Oriented box in camera coordinates; `y` is the vertical center.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StBox {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub ry: f64,
}

/// Co-occurrence probability and normalised offsets towards a neighbouring keyframe.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StCue {
    pub co: f64,
    pub dx: f64,
    pub dz: f64,
    pub dry: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StMotReport {
    pub mota: f64,
    pub motp: f64,
    pub mt: f64,
    pub ml: f64,
    pub ids: u64,
    pub fm: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub gt: u64,
    pub matches: u64,
}

/// Detections and poses of one sequence, filled before [`st_sequence_run`].
pub struct StSequence {
    input: SequenceInput,
}

/// Tracks produced by [`st_sequence_run`] or loaded from a label file.
pub struct StTracks {
    tracks: Vec<Track>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: StStatus, msg: impl Into<String>) -> StStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> StStatus {
    match e {
        Error::InvalidArgument(_) | Error::InfeasibleConfig(_) | Error::Config(_) => {
            StStatus::InvalidArgument
        }
        Error::Parse { .. } => StStatus::Parse,
        Error::MissingPose(_) => StStatus::MissingPose,
        Error::FrameMismatch(_) => StStatus::FrameMismatch,
        Error::EmptyGroundTruth => StStatus::EmptyGroundTruth,
        Error::EmptyTrajectory => StStatus::InvalidArgument,
        Error::Io(_) => StStatus::Io,
    }
}

fn from_error(e: Error) -> StStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f`, turning panics into `ST_STATUS_INTERNAL`.
fn guard(f: impl FnOnce() -> StStatus) -> StStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(StStatus::Internal, "internal panic"),
    }
}

macro_rules! deref {
    ($p:expr, $name:literal) => {
        match unsafe { $p.as_ref() } {
            Some(v) => v,
            None => return fail(StStatus::NullPointer, concat!("`", $name, "` is null")),
        }
    };
}

macro_rules! deref_mut {
    ($p:expr, $name:literal) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => return fail(StStatus::NullPointer, concat!("`", $name, "` is null")),
        }
    };
}

macro_rules! try_st {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return from_error(e),
        }
    };
}

fn to_box(b: &StBox) -> Result<Box3D, Error> {
    Box3D::new(b.x, b.y, b.z, b.w, b.l, b.h, b.ry)
}

fn from_box(b: &Box3D) -> StBox {
    StBox {
        x: b.x,
        y: b.y,
        z: b.z,
        w: b.w,
        l: b.l,
        h: b.h,
        ry: b.ry,
    }
}

fn to_cue(c: Option<&StCue>) -> Result<TemporalCue, Error> {
    match c {
        None => Ok(TemporalCue::default()),
        Some(c) => Ok(TemporalCue {
            co: CoOccurrence::new(c.co)?,
            offsets: OffsetDelta::new(c.dx, c.dz, c.dry)?,
        }),
    }
}

fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, StStatus> {
    if p.is_null() {
        return Err(fail(StStatus::NullPointer, format!("`{name}` is null")));
    }
    let s = unsafe { CStr::from_ptr(p) };
    s.to_str().map(PathBuf::from).map_err(|_| {
        fail(
            StStatus::InvalidArgument,
            format!("`{name}` is not valid UTF-8"),
        )
    })
}

fn open(path: &PathBuf) -> Result<BufReader<File>, Error> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn st_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn st_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Bird's-eye-view IoU of two boxes.
///
/// # Safety
/// `a`, `b` and `out` must be null or valid pointers.
#[no_mangle]
pub unsafe extern "C" fn st_box_iou_bev(
    a: *const StBox,
    b: *const StBox,
    out: *mut f64,
) -> StStatus {
    guard(|| {
        let a = try_st!(to_box(deref!(a, "a")));
        let b = try_st!(to_box(deref!(b, "b")));
        *deref_mut!(out, "out") = iou_bev(&a.bev(), &b.bev());
        StStatus::Ok
    })
}

/// 3D IoU of two boxes.
///
/// # Safety
/// `a`, `b` and `out` must be null or valid pointers.
#[no_mangle]
pub unsafe extern "C" fn st_box_iou_3d(
    a: *const StBox,
    b: *const StBox,
    out: *mut f64,
) -> StStatus {
    guard(|| {
        let a = try_st!(to_box(deref!(a, "a")));
        let b = try_st!(to_box(deref!(b, "b")));
        *deref_mut!(out, "out") = iou_3d(&a, &b);
        StStatus::Ok
    })
}

/// Creates an empty sequence of `frames` frames with keyframe stride `tau`.
///
/// # Safety
/// `out` must be null or a valid pointer; on success it receives a handle
/// to release with [`st_sequence_free`].
#[no_mangle]
pub unsafe extern "C" fn st_sequence_new(
    frames: usize,
    tau: usize,
    out: *mut *mut StSequence,
) -> StStatus {
    guard(|| {
        let out = deref_mut!(out, "out");
        if tau == 0 || frames == 0 {
            return fail(
                StStatus::InvalidArgument,
                "frames and tau must be at least 1",
            );
        }
        *out = Box::into_raw(Box::new(StSequence {
            input: SequenceInput::new(frames, tau),
        }));
        StStatus::Ok
    })
}

/// Loads a sequence from a detection file and an optional pose file
/// (`poses_path` may be null).
///
/// # Safety
/// Paths must be null or NUL-terminated; `out` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn st_sequence_load(
    detections_path: *const c_char,
    poses_path: *const c_char,
    out: *mut *mut StSequence,
) -> StStatus {
    guard(|| {
        let out = deref_mut!(out, "out");
        let det_path = match path_arg(detections_path, "detections_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let file = try_st!(open(&det_path)
            .and_then(parse_detections)
            .map_err(|e| e.with_source(&det_path.display().to_string())));
        let poses = if poses_path.is_null() {
            Default::default()
        } else {
            let p = match path_arg(poses_path, "poses_path") {
                Ok(p) => p,
                Err(s) => return s,
            };
            try_st!(open(&p)
                .and_then(parse_poses)
                .map_err(|e| e.with_source(&p.display().to_string())))
        };
        *out = Box::into_raw(Box::new(StSequence {
            input: file.into_sequence_input(poses),
        }));
        StStatus::Ok
    })
}

/// Releases a sequence. Null is ignored.
///
/// # Safety
/// `seq` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn st_sequence_free(seq: *mut StSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// Adds a detection on `keyframe`. `next` and `prev` may be null, meaning
/// no co-occurrence and zero offsets.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn st_sequence_add_detection(
    seq: *mut StSequence,
    keyframe: usize,
    bbox: *const StBox,
    score: f64,
    next: *const StCue,
    prev: *const StCue,
) -> StStatus {
    guard(|| {
        let seq = deref_mut!(seq, "seq");
        let bbox = try_st!(to_box(deref!(bbox, "bbox")));
        if !(0.0..=1.0).contains(&score) {
            return fail(
                StStatus::InvalidArgument,
                format!("score {score} outside [0, 1]"),
            );
        }
        if seq.input.keyframes().binary_search(&keyframe).is_err() {
            return fail(
                StStatus::FrameMismatch,
                format!("frame {keyframe} is not a keyframe of this sequence"),
            );
        }
        let next = try_st!(to_cue(next.as_ref()));
        let prev = try_st!(to_cue(prev.as_ref()));
        seq.input
            .detections
            .entry(keyframe)
            .or_default()
            .push(KeyframeDetection {
                bbox,
                score,
                next,
                prev,
                source: None,
            });
        StStatus::Ok
    })
}

/// Sets the ego-to-world pose of `frame` from 12 row-major numbers `[R | t]`.
/// Once any pose is set, every keyframe needs one.
///
/// # Safety
/// `seq` must be null or valid; `m` must be null or point to 12 doubles.
#[no_mangle]
pub unsafe extern "C" fn st_sequence_set_pose(
    seq: *mut StSequence,
    frame: usize,
    m: *const f64,
) -> StStatus {
    guard(|| {
        let seq = deref_mut!(seq, "seq");
        if m.is_null() {
            return fail(StStatus::NullPointer, "`m` is null");
        }
        if frame >= seq.input.frames {
            return fail(
                StStatus::OutOfRange,
                format!("frame {frame} beyond sequence end"),
            );
        }
        let vals: [f64; 12] = std::slice::from_raw_parts(m, 12)
            .try_into()
            .expect("length 12");
        let pose = try_st!(Pose::from_row_major(&vals));
        seq.input.poses.insert(frame, pose);
        StStatus::Ok
    })
}

/// Tracks the sequence.
///
/// # Safety
/// `seq` and `out` must be null or valid; on success `out` receives a handle
/// to release with [`st_tracks_free`].
#[no_mangle]
pub unsafe extern "C" fn st_sequence_run(
    seq: *const StSequence,
    out: *mut *mut StTracks,
) -> StStatus {
    guard(|| {
        let seq = deref!(seq, "seq");
        let out = deref_mut!(out, "out");
        let tracks = try_st!(run_sequence(&seq.input));
        *out = Box::into_raw(Box::new(StTracks { tracks }));
        StStatus::Ok
    })
}

/// Loads tracks from a KITTI tracking label file. `category` may be null to
/// keep every class except `DontCare`.
///
/// # Safety
/// Strings must be null or NUL-terminated; `out` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn st_tracks_load_kitti(
    path: *const c_char,
    category: *const c_char,
    out: *mut *mut StTracks,
) -> StStatus {
    guard(|| {
        let out = deref_mut!(out, "out");
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let category = if category.is_null() {
            None
        } else {
            match CStr::from_ptr(category).to_str() {
                Ok(c) => Some(c),
                Err(_) => return fail(StStatus::InvalidArgument, "`category` is not valid UTF-8"),
            }
        };
        let rows = try_st!(open(&path)
            .and_then(parse_labels)
            .map_err(|e| e.with_source(&path.display().to_string())));
        let tracks = try_st!(tracks_from_labels(&rows, category));
        *out = Box::into_raw(Box::new(StTracks { tracks }));
        StStatus::Ok
    })
}

/// Releases a track set. Null is ignored.
///
/// # Safety
/// `tracks` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn st_tracks_free(tracks: *mut StTracks) {
    if !tracks.is_null() {
        drop(Box::from_raw(tracks));
    }
}

/// Number of tracks; 0 for null.
///
/// # Safety
/// `tracks` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn st_tracks_count(tracks: *const StTracks) -> usize {
    tracks.as_ref().map_or(0, |t| t.tracks.len())
}

/// Id and number of states of track `index`.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn st_tracks_info(
    tracks: *const StTracks,
    index: usize,
    out_id: *mut u64,
    out_len: *mut usize,
) -> StStatus {
    guard(|| {
        let t = deref!(tracks, "tracks");
        let Some(track) = t.tracks.get(index) else {
            return fail(
                StStatus::OutOfRange,
                format!("track index {index} out of range"),
            );
        };
        *deref_mut!(out_id, "out_id") = track.id;
        *deref_mut!(out_len, "out_len") = track.states.len();
        StStatus::Ok
    })
}

/// State `state` (in frame order) of track `index`.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn st_tracks_state(
    tracks: *const StTracks,
    index: usize,
    state: usize,
    out_frame: *mut usize,
    out_box: *mut StBox,
    out_score: *mut f64,
) -> StStatus {
    guard(|| {
        let t = deref!(tracks, "tracks");
        let Some((frame, s)) = t
            .tracks
            .get(index)
            .and_then(|tr| tr.states.iter().nth(state))
        else {
            return fail(
                StStatus::OutOfRange,
                format!("state {state} of track {index} out of range"),
            );
        };
        *deref_mut!(out_frame, "out_frame") = *frame;
        *deref_mut!(out_box, "out_box") = from_box(&s.bbox);
        *deref_mut!(out_score, "out_score") = s.score;
        StStatus::Ok
    })
}

/// Writes tracks as KITTI tracking labels with a score column.
///
/// # Safety
/// Pointers must be null or valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn st_tracks_write_kitti(
    tracks: *const StTracks,
    path: *const c_char,
    category: *const c_char,
) -> StStatus {
    guard(|| {
        let t = deref!(tracks, "tracks");
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        if category.is_null() {
            return fail(StStatus::NullPointer, "`category` is null");
        }
        let Ok(category) = CStr::from_ptr(category).to_str() else {
            return fail(StStatus::InvalidArgument, "`category` is not valid UTF-8");
        };
        if category.is_empty() || category.contains(char::is_whitespace) {
            return fail(
                StStatus::InvalidArgument,
                "`category` must be one non-empty token",
            );
        }
        try_st!(
            std::fs::write(&path, write_labels(&t.tracks, category)).map_err(|e| Error::Io(
                std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
            ))
        );
        StStatus::Ok
    })
}

/// CLEAR MOT scores of `hyp` against `gt` with the default MT/ML thresholds.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn st_evaluate(
    gt: *const StTracks,
    hyp: *const StTracks,
    match_floor: f64,
    out: *mut StMotReport,
) -> StStatus {
    guard(|| {
        let gt = deref!(gt, "gt");
        let hyp = deref!(hyp, "hyp");
        let out = deref_mut!(out, "out");
        let cfg = try_st!(EvalConfig::new(match_floor, 0.8, 0.2));
        let r = try_st!(evaluate(&gt.tracks, &hyp.tracks, &cfg));
        *out = StMotReport {
            mota: r.mota,
            motp: r.motp,
            mt: r.mt,
            ml: r.ml,
            ids: r.ids as u64,
            fm: r.fm as u64,
            false_positives: r.fp as u64,
            false_negatives: r.fn_ as u64,
            gt: r.gt as u64,
            matches: r.matches as u64,
        };
        StStatus::Ok
    })
}
