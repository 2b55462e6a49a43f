//! Subcommand implementations behind the `streamtrack` binary.
//!
//! Run configs are flat `key = value` files. `schema_version` is required,
//! `#` starts a comment, ranges are written `lo,hi` and forced drops as
//! space-separated `object:keyframe` items. Unknown or repeated keys are
//! rejected.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::kitti_io::{
    parse_detections, parse_labels, parse_poses, tracks_from_labels, write_detections,
    write_labels, write_poses, DetectionFile,
};
use crate::metrics::{evaluate, EvalConfig, MotReport};
use crate::simulator::{apply_ego, generate, EgoTrajectory, Scenario, ScenarioConfig};
use crate::tracker::run_sequence_timed;

pub const SCHEMA_VERSION: u32 = 1;

pub const DETECTIONS_FILE: &str = "detections.txt";
pub const GT_FILE: &str = "gt_labels.txt";
pub const POSES_FILE: &str = "poses.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Category written to label files.
pub const CATEGORY: &str = "Car";

/// Exit status for an error: 2 for malformed input or config, 3 otherwise.
/// Usage errors (status 1) are reported by the argument parser.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } | Error::Config(_) => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub ego: EgoTrajectory,
    pub eval: EvalConfig,
}

const KEYS: &[&str] = &[
    "schema_version",
    "frames",
    "tau",
    "n_objects",
    "birth_range",
    "death_range",
    "speed_range",
    "yaw_rate_range",
    "sigma_center",
    "sigma_dims",
    "sigma_yaw",
    "drop_prob",
    "fp_rate",
    "co_noise",
    "seed",
    "forced_drops",
    "ego_speed",
    "ego_yaw_rate",
    "match_floor",
    "mt_threshold",
    "ml_threshold",
];

fn value<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(line, format!("`{key}`: cannot parse {v:?}")))
}

fn pair<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<[T; 2]> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| Error::parse(line, format!("`{key}`: expected `lo,hi`, got {v:?}")))?;
    Ok([value(key, a.trim(), line)?, value(key, b.trim(), line)?])
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let s = &mut cfg.scenario;
        let mut seen: Vec<&str> = Vec::new();
        let mut death_given = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| {
                Error::parse(line, format!("expected `key = value`, got {body:?}"))
            })?;
            let (k, v) = (k.trim(), v.trim());
            let Some(key) = KEYS.iter().copied().find(|known| *known == k) else {
                return Err(Error::parse(line, format!("unknown key `{k}`")));
            };
            if seen.contains(&key) {
                return Err(Error::parse(line, format!("key `{k}` given twice")));
            }
            seen.push(key);
            match key {
                "schema_version" => {
                    let ver: u32 = value(key, v, line)?;
                    if ver != SCHEMA_VERSION {
                        return Err(Error::parse(
                            line,
                            format!("unsupported schema_version {ver} (expected {SCHEMA_VERSION})"),
                        ));
                    }
                }
                "frames" => s.frames = value(key, v, line)?,
                "tau" => s.tau = value(key, v, line)?,
                "n_objects" => s.n_objects = value(key, v, line)?,
                "birth_range" => s.birth_range = pair(key, v, line)?,
                "death_range" => {
                    s.death_range = pair(key, v, line)?;
                    death_given = true;
                }
                "speed_range" => s.speed_range = pair(key, v, line)?,
                "yaw_rate_range" => s.yaw_rate_range = pair(key, v, line)?,
                "sigma_center" => s.sigma_center = value(key, v, line)?,
                "sigma_dims" => s.sigma_dims = value(key, v, line)?,
                "sigma_yaw" => s.sigma_yaw = value(key, v, line)?,
                "drop_prob" => s.drop_prob = value(key, v, line)?,
                "fp_rate" => s.fp_rate = value(key, v, line)?,
                "co_noise" => s.co_noise = value(key, v, line)?,
                "seed" => s.seed = value(key, v, line)?,
                "forced_drops" => {
                    s.forced_drops = v
                        .split_whitespace()
                        .map(|item| {
                            let (o, k) = item.split_once(':').ok_or_else(|| {
                                Error::parse(
                                    line,
                                    format!(
                                        "`forced_drops`: expected `object:keyframe`, got {item:?}"
                                    ),
                                )
                            })?;
                            Ok((value(key, o, line)?, value(key, k, line)?))
                        })
                        .collect::<Result<_>>()?;
                }
                "ego_speed" => cfg.ego.speed = value(key, v, line)?,
                "ego_yaw_rate" => cfg.ego.yaw_rate = value(key, v, line)?,
                "match_floor" => cfg.eval.match_floor = value(key, v, line)?,
                "mt_threshold" => cfg.eval.mt_threshold = value(key, v, line)?,
                "ml_threshold" => cfg.eval.ml_threshold = value(key, v, line)?,
                _ => unreachable!("key table and match arms agree"),
            }
        }
        if !seen.contains(&"schema_version") {
            return Err(Error::Config("missing `schema_version`".into()));
        }
        if !death_given {
            let last = cfg.scenario.frames.saturating_sub(1);
            cfg.scenario.death_range = [last, last];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.scenario.validate().map_err(wrap)?;
        self.eval.validate().map_err(wrap)?;
        if !(self.ego.speed.is_finite() && self.ego.yaw_rate.is_finite()) {
            return Err(Error::Config(
                "ego_speed and ego_yaw_rate must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_context(e, path))?;
        Self::parse(&text).map_err(|e| e.with_source(&path.display().to_string()))
    }

    /// Canonical text form; [`RunConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("schema_version", SCHEMA_VERSION.to_string());
        kv("frames", s.frames.to_string());
        kv("tau", s.tau.to_string());
        kv("n_objects", s.n_objects.to_string());
        kv(
            "birth_range",
            format!("{},{}", s.birth_range[0], s.birth_range[1]),
        );
        kv(
            "death_range",
            format!("{},{}", s.death_range[0], s.death_range[1]),
        );
        kv(
            "speed_range",
            format!("{},{}", s.speed_range[0], s.speed_range[1]),
        );
        kv(
            "yaw_rate_range",
            format!("{},{}", s.yaw_rate_range[0], s.yaw_rate_range[1]),
        );
        kv("sigma_center", s.sigma_center.to_string());
        kv("sigma_dims", s.sigma_dims.to_string());
        kv("sigma_yaw", s.sigma_yaw.to_string());
        kv("drop_prob", s.drop_prob.to_string());
        kv("fp_rate", s.fp_rate.to_string());
        kv("co_noise", s.co_noise.to_string());
        kv("seed", s.seed.to_string());
        if !s.forced_drops.is_empty() {
            let items: Vec<String> = s
                .forced_drops
                .iter()
                .map(|(o, k)| format!("{o}:{k}"))
                .collect();
            kv("forced_drops", items.join(" "));
        }
        kv("ego_speed", self.ego.speed.to_string());
        kv("ego_yaw_rate", self.ego.yaw_rate.to_string());
        kv("match_floor", self.eval.match_floor.to_string());
        kv("mt_threshold", self.eval.mt_threshold.to_string());
        kv("ml_threshold", self.eval.ml_threshold.to_string());
        out
    }

    /// Generates the scenario, moved into ego coordinates when the ego moves.
    pub fn scenario(&self) -> Result<Scenario> {
        let s = generate(&self.scenario)?;
        Ok(if self.ego == EgoTrajectory::default() {
            s
        } else {
            apply_ego(&s, &self.ego)
        })
    }
}

fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_context(e, path))
}

/// Writes every file or none: on failure, files written so far are removed.
fn write_all_or_nothing(files: &[(PathBuf, String)]) -> Result<()> {
    let mut written: Vec<&Path> = Vec::new();
    for (path, text) in files {
        if let Err(e) = fs::write(path, text) {
            let _ = fs::remove_file(path);
            for p in written {
                let _ = fs::remove_file(p);
            }
            return Err(io_context(e, path));
        }
        written.push(path);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub files: Vec<PathBuf>,
    pub detections: usize,
    pub gt_tracks: usize,
}

/// Writes a fixture directory: detections, gt labels, poses and a manifest
/// echoing the config.
pub fn simulate(cfg: &RunConfig, out_dir: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    let scenario = cfg.scenario()?;
    let frames = cfg.scenario.frames;
    let poses = if scenario.input.poses.is_empty() {
        EgoTrajectory::default().poses(frames)
    } else {
        scenario.input.poses.clone()
    };
    let det_file = DetectionFile {
        sequence: format!("{:04}", cfg.scenario.seed % 10_000),
        frames,
        tau: cfg.scenario.tau,
        detections: scenario.input.detections.clone(),
    };
    let manifest = format!(
        "streamtrack {}\nseed {}\nfiles {DETECTIONS_FILE} {GT_FILE} {POSES_FILE}\n# config\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.scenario.seed,
        cfg.to_text()
    );
    fs::create_dir_all(out_dir).map_err(|e| io_context(e, out_dir))?;
    let files = vec![
        (out_dir.join(DETECTIONS_FILE), write_detections(&det_file)),
        (
            out_dir.join(GT_FILE),
            write_labels(&scenario.gt_tracks, CATEGORY),
        ),
        (out_dir.join(POSES_FILE), write_poses(&poses)),
        (out_dir.join(MANIFEST_FILE), manifest),
    ];
    write_all_or_nothing(&files)?;
    Ok(SimulateSummary {
        files: files.into_iter().map(|(p, _)| p).collect(),
        detections: det_file.detections.values().map(Vec::len).sum(),
        gt_tracks: scenario.gt_tracks.len(),
    })
}

#[derive(Debug, Clone)]
pub struct TrackOptions {
    pub detections: PathBuf,
    pub poses: Option<PathBuf>,
    /// Must equal the detection file's `tau` when given.
    pub tau: Option<usize>,
    pub out: PathBuf,
    pub category: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSummary {
    pub frames: usize,
    pub tracks: usize,
    pub read: Duration,
    pub moi: Duration,
    pub linking: Duration,
}

impl TrackSummary {
    /// Frames per second of tracking (interpolation plus linking).
    pub fn fps(&self) -> f64 {
        effective_fps(self.frames, self.moi + self.linking)
    }

    pub fn timing_line(&self) -> String {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        format!(
            "frames={} tracks={} read_ms={:.3} moi_ms={:.3} linking_ms={:.3} fps={:.1}",
            self.frames,
            self.tracks,
            ms(self.read),
            ms(self.moi),
            ms(self.linking),
            self.fps()
        )
    }
}

fn effective_fps(frames: usize, elapsed: Duration) -> f64 {
    frames as f64 / elapsed.as_secs_f64().max(1e-9)
}

pub fn track(opts: &TrackOptions) -> Result<TrackSummary> {
    let t0 = Instant::now();
    let name = opts.detections.display().to_string();
    let file = parse_detections(open(&opts.detections)?).map_err(|e| e.with_source(&name))?;
    if let Some(tau) = opts.tau {
        if tau != file.tau {
            return Err(Error::InvalidArgument(format!(
                "--tau {tau} does not match tau {} in {name}",
                file.tau
            )));
        }
    }
    let poses = match &opts.poses {
        Some(p) => parse_poses(open(p)?).map_err(|e| e.with_source(&p.display().to_string()))?,
        None => Default::default(),
    };
    let frames = file.frames;
    let input = file.into_sequence_input(poses);
    let read = t0.elapsed();

    let (tracks, timings) = run_sequence_timed(&input)?;
    write_all_or_nothing(&[(opts.out.clone(), write_labels(&tracks, &opts.category))])?;
    Ok(TrackSummary {
        frames,
        tracks: tracks.len(),
        read,
        moi: timings.moi,
        linking: timings.linking,
    })
}

/// Evaluates a hypothesis label file against a ground-truth label file.
pub fn eval(gt: &Path, hyp: &Path, cfg: &EvalConfig, category: Option<&str>) -> Result<MotReport> {
    let load = |p: &Path| {
        let rows = parse_labels(open(p)?).map_err(|e| e.with_source(&p.display().to_string()))?;
        tracks_from_labels(&rows, category)
    };
    let gt_tracks = load(gt)?;
    let hyp_tracks = load(hyp)?;
    evaluate(&gt_tracks, &hyp_tracks, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub tau: usize,
    pub mota: f64,
    pub motp: f64,
    pub fps: f64,
}

fn sweep_point(base: &RunConfig, tau: usize, repeats: usize) -> Result<SweepRow> {
    let mut cfg = base.clone();
    cfg.scenario.tau = tau;
    cfg.validate()?;
    let scenario = cfg.scenario()?;
    let mut best: Option<Duration> = None;
    let mut tracks = Vec::new();
    for _ in 0..repeats.max(1) {
        let (t, timings) = run_sequence_timed(&scenario.input)?;
        let total = timings.moi + timings.linking;
        best = Some(best.map_or(total, |b| b.min(total)));
        tracks = t;
    }
    let report = evaluate(&scenario.gt_tracks, &tracks, &cfg.eval)?;
    Ok(SweepRow {
        tau,
        mota: report.mota,
        motp: report.motp,
        fps: effective_fps(cfg.scenario.frames, best.unwrap_or_default()),
    })
}

/// Simulates, tracks and evaluates `base` once per `tau`, keeping the fastest
/// of `repeats` tracking runs for the FPS column. Up to `jobs` points run
/// concurrently; rows come back in `taus` order.
pub fn sweep(
    base: &RunConfig,
    taus: &[usize],
    repeats: usize,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if taus.is_empty() {
        return Err(Error::InvalidArgument("empty tau list".into()));
    }
    if let Some(t) = taus.iter().find(|t| **t == 0) {
        return Err(Error::InvalidArgument(format!(
            "tau must be at least 1, got {t}"
        )));
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRow>>>> =
        Mutex::new((0..taus.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, taus.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= taus.len() {
                    break;
                }
                let row = sweep_point(base, taus[i], repeats);
                results
                    .lock()
                    .expect("no worker panics while holding the lock")[i] = Some(row);
            });
        }
    });
    results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every point was visited"))
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("tau,mota,motp,fps\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.3}", r.tau, r.mota, r.motp, r.fps);
    }
    out
}

/// Writes `text` to `path`, removing the file if the write fails.
pub fn write_output(path: &Path, text: &str) -> Result<()> {
    write_all_or_nothing(&[(path.to_path_buf(), text.to_string())])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let text = "schema_version = 1\nframes = 40 # short\ntau=2\nbirth_range = 0, 5\nforced_drops = 1:4 2:6\nego_speed = 0.5\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.scenario.frames, 40);
        assert_eq!(cfg.scenario.tau, 2);
        assert_eq!(cfg.scenario.birth_range, [0, 5]);
        assert_eq!(cfg.scenario.death_range, [39, 39]);
        assert_eq!(cfg.scenario.forced_drops, vec![(1, 4), (2, 6)]);
        assert_eq!(cfg.ego.speed, 0.5);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn config_rejections() {
        let err = RunConfig::parse("schema_version = 1\nfrmaes = 3\n").unwrap_err();
        assert_eq!(err.line(), Some(2));
        assert_eq!(exit_code(&err), 2);
        assert!(matches!(
            RunConfig::parse("frames = 30\n"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::parse("schema_version = 2\n").is_err());
        assert!(RunConfig::parse("schema_version = 1\ntau = 1\ntau = 2\n").is_err());
        assert!(RunConfig::parse("schema_version = 1\ndrop_prob = 2\n").is_err());
        assert!(RunConfig::parse("schema_version = 1\nframes\n").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::EmptyGroundTruth), 3);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
    }

    #[test]
    fn sweep_rejects_bad_tau_lists() {
        let cfg = RunConfig::default();
        assert!(sweep(&cfg, &[], 1, 1).is_err());
        assert!(sweep(&cfg, &[0], 1, 1).is_err());
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = [SweepRow {
            tau: 2,
            mota: 0.5,
            motp: 0.75,
            fps: 1000.0,
        }];
        assert_eq!(
            sweep_csv(&rows),
            "tau,mota,motp,fps\n2,0.500000,0.750000,1000.000\n"
        );
    }
}
