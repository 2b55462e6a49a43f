//! CLEAR MOT evaluation (MOTA, MOTP, MT, ML, IDS, FM) with BEV IoU matching.
//!
//! Per frame, correspondences from earlier frames are kept while their IoU
//! stays above the floor; the remaining boxes are assigned optimally with the
//! Hungarian method. Identity switches are counted when a ground-truth object
//! is matched on two consecutive frames of its lifespan to different
//! hypotheses. A fragmentation is counted each time a ground-truth object
//! that was matched before resumes being matched after an interruption or
//! under a different hypothesis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_bev, RectBEV};
use crate::tracker::Track;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub match_floor: f64,
    pub mt_threshold: f64,
    pub ml_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_floor: 0.5,
            mt_threshold: 0.8,
            ml_threshold: 0.2,
        }
    }
}

impl EvalConfig {
    pub fn new(match_floor: f64, mt_threshold: f64, ml_threshold: f64) -> Result<Self> {
        let cfg = Self {
            match_floor,
            mt_threshold,
            ml_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.match_floor > 0.0 && self.match_floor <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "match_floor must lie in (0, 1], got {}",
                self.match_floor
            )));
        }
        if !(0.0 <= self.ml_threshold
            && self.ml_threshold < self.mt_threshold
            && self.mt_threshold <= 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= ml_threshold < mt_threshold <= 1, got ml={} mt={}",
                self.ml_threshold, self.mt_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub mota: f64,
    pub motp: f64,
    pub mt: f64,
    pub ml: f64,
    pub ids: usize,
    pub fm: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Ground-truth boxes over all frames.
    pub gt: usize,
    pub matches: usize,
    pub iou_sum: f64,
    pub gt_tracks: usize,
    pub mt_count: usize,
    pub ml_count: usize,
}

impl MotReport {
    /// Builds a report from raw counts, deriving every ratio.
    #[allow(clippy::too_many_arguments)]
    pub fn from_counts(
        fp: usize,
        fn_: usize,
        ids: usize,
        fm: usize,
        gt: usize,
        matches: usize,
        iou_sum: f64,
        gt_tracks: usize,
        mt_count: usize,
        ml_count: usize,
    ) -> Result<Self> {
        if gt == 0 {
            return Err(Error::EmptyGroundTruth);
        }
        let ratio = |n: usize| {
            if gt_tracks == 0 {
                0.0
            } else {
                n as f64 / gt_tracks as f64
            }
        };
        Ok(Self {
            mota: 1.0 - (fn_ + fp + ids) as f64 / gt as f64,
            motp: if matches == 0 {
                0.0
            } else {
                iou_sum / matches as f64
            },
            mt: ratio(mt_count),
            ml: ratio(ml_count),
            ids,
            fm,
            fp,
            fn_,
            gt,
            matches,
            iou_sum,
            gt_tracks,
            mt_count,
            ml_count,
        })
    }

    /// Sums the counts of several reports (e.g. one per sequence) and
    /// recomputes the ratios.
    pub fn merge(reports: &[MotReport]) -> Result<Self> {
        let mut acc = (0, 0, 0, 0, 0, 0, 0.0, 0, 0, 0);
        for r in reports {
            acc.0 += r.fp;
            acc.1 += r.fn_;
            acc.2 += r.ids;
            acc.3 += r.fm;
            acc.4 += r.gt;
            acc.5 += r.matches;
            acc.6 += r.iou_sum;
            acc.7 += r.gt_tracks;
            acc.8 += r.mt_count;
            acc.9 += r.ml_count;
        }
        Self::from_counts(
            acc.0, acc.1, acc.2, acc.3, acc.4, acc.5, acc.6, acc.7, acc.8, acc.9,
        )
    }

    /// Flat `key value` lines, one metric per line.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mota {:.6}", self.mota);
        let _ = writeln!(s, "motp {:.6}", self.motp);
        let _ = writeln!(s, "mt {:.6}", self.mt);
        let _ = writeln!(s, "ml {:.6}", self.ml);
        let _ = writeln!(s, "ids {}", self.ids);
        let _ = writeln!(s, "fm {}", self.fm);
        let _ = writeln!(s, "fp {}", self.fp);
        let _ = writeln!(s, "fn {}", self.fn_);
        let _ = writeln!(s, "gt {}", self.gt);
        let _ = writeln!(s, "matches {}", self.matches);
        let _ = writeln!(s, "gt_tracks {}", self.gt_tracks);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serialisable")
    }
}

const FORBIDDEN: f64 = 1e6;

/// Minimum-cost assignment of rows to columns (`rows <= cols`), returning the
/// column chosen for each row. Shortest augmenting path with potentials.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-based arrays; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Optimal one-to-one assignment maximising first the number of pairs with
/// IoU at or above `floor`, then their total IoU.
fn optimal_assignment(iou: &[Vec<f64>], floor: f64) -> Vec<(usize, usize)> {
    let rows = iou.len();
    let cols = iou.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let cost_of = |v: f64| if v >= floor { 1.0 - v } else { FORBIDDEN };
    let transpose = rows > cols;
    let cost: Vec<Vec<f64>> = if transpose {
        (0..cols)
            .map(|c| (0..rows).map(|r| cost_of(iou[r][c])).collect())
            .collect()
    } else {
        iou.iter()
            .map(|row| row.iter().map(|&v| cost_of(v)).collect())
            .collect()
    };
    hungarian(&cost)
        .into_iter()
        .enumerate()
        .map(|(a, b)| if transpose { (b, a) } else { (a, b) })
        .filter(|&(r, c)| iou[r][c] >= floor)
        .collect()
}

/// One frame of CLEAR matching.
///
/// `prev_matches` maps ground-truth ids to the hypothesis id they were last
/// matched to. Returns `(gt index, hyp index)` pairs.
pub fn match_frame(
    gt_boxes: &[(u64, RectBEV)],
    hyp_boxes: &[(u64, RectBEV)],
    prev_matches: &BTreeMap<u64, u64>,
    floor: f64,
) -> Vec<(usize, usize)> {
    let mut gt_used = vec![false; gt_boxes.len()];
    let mut hyp_used = vec![false; hyp_boxes.len()];
    let mut out = Vec::new();

    for (gi, (gid, grect)) in gt_boxes.iter().enumerate() {
        let Some(hid) = prev_matches.get(gid) else {
            continue;
        };
        if let Some(hi) = hyp_boxes.iter().position(|(h, _)| h == hid) {
            if !hyp_used[hi] && iou_bev(grect, &hyp_boxes[hi].1) >= floor {
                gt_used[gi] = true;
                hyp_used[hi] = true;
                out.push((gi, hi));
            }
        }
    }

    let free_gt: Vec<usize> = (0..gt_boxes.len()).filter(|&i| !gt_used[i]).collect();
    let free_hyp: Vec<usize> = (0..hyp_boxes.len()).filter(|&i| !hyp_used[i]).collect();
    let iou: Vec<Vec<f64>> = free_gt
        .iter()
        .map(|&g| {
            free_hyp
                .iter()
                .map(|&h| iou_bev(&gt_boxes[g].1, &hyp_boxes[h].1))
                .collect()
        })
        .collect();
    for (r, c) in optimal_assignment(&iou, floor) {
        out.push((free_gt[r], free_hyp[c]));
    }
    out.sort_unstable();
    out
}

fn frame_boxes(tracks: &[Track]) -> BTreeMap<usize, Vec<(u64, RectBEV)>> {
    let mut out: BTreeMap<usize, Vec<(u64, RectBEV)>> = BTreeMap::new();
    for t in tracks {
        for (f, s) in &t.states {
            out.entry(*f).or_default().push((t.id, s.bbox.bev()));
        }
    }
    for v in out.values_mut() {
        v.sort_by_key(|(id, _)| *id);
    }
    out
}

#[derive(Default)]
struct GtHistory {
    last_hyp: Option<u64>,
    matched_prev: bool,
    matched_frames: usize,
    frames: usize,
}

pub fn evaluate(gt: &[Track], hyp: &[Track], cfg: &EvalConfig) -> Result<MotReport> {
    cfg.validate()?;
    let gt_frames = frame_boxes(gt);
    let hyp_frames = frame_boxes(hyp);
    let total_gt: usize = gt_frames.values().map(Vec::len).sum();
    if total_gt == 0 {
        return Err(Error::EmptyGroundTruth);
    }

    let frames: BTreeSet<usize> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();
    let empty = Vec::new();
    let mut history: BTreeMap<u64, GtHistory> = BTreeMap::new();
    let mut prev_matches: BTreeMap<u64, u64> = BTreeMap::new();
    let (mut fp, mut fn_, mut ids, mut fm, mut matches) = (0, 0, 0, 0, 0);
    let mut iou_sum = 0.0;

    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let h = hyp_frames.get(&f).unwrap_or(&empty);
        let assignment = match_frame(g, h, &prev_matches, cfg.match_floor);
        let mut matched_gt = vec![None; g.len()];
        for &(gi, hi) in &assignment {
            matched_gt[gi] = Some(hi);
            iou_sum += iou_bev(&g[gi].1, &h[hi].1);
        }
        matches += assignment.len();
        fp += h.len() - assignment.len();
        fn_ += g.len() - assignment.len();

        for (gi, (gid, _)) in g.iter().enumerate() {
            let hist = history.entry(*gid).or_default();
            hist.frames += 1;
            match matched_gt[gi] {
                Some(hi) => {
                    let hid = h[hi].0;
                    if let Some(last) = hist.last_hyp {
                        if hist.matched_prev && last != hid {
                            ids += 1;
                        }
                        if !hist.matched_prev || last != hid {
                            fm += 1;
                        }
                    }
                    hist.last_hyp = Some(hid);
                    hist.matched_prev = true;
                    hist.matched_frames += 1;
                    prev_matches.insert(*gid, hid);
                }
                None => hist.matched_prev = false,
            }
        }
    }

    let gt_tracks = history.len();
    let mut mt_count = 0;
    let mut ml_count = 0;
    for hist in history.values() {
        let ratio = hist.matched_frames as f64 / hist.frames as f64;
        if ratio >= cfg.mt_threshold {
            mt_count += 1;
        } else if ratio <= cfg.ml_threshold {
            ml_count += 1;
        }
    }
    MotReport::from_counts(
        fp, fn_, ids, fm, total_gt, matches, iou_sum, gt_tracks, mt_count, ml_count,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3D;
    use crate::tracker::TrackState;

    fn rect(x: f64, z: f64) -> RectBEV {
        RectBEV {
            x,
            z,
            w: 2.0,
            l: 2.0,
            ry: 0.0,
        }
    }

    fn track(id: u64, frames: &[usize], x: f64) -> Track {
        let mut t = Track::new(id);
        for &f in frames {
            t.states.insert(
                f,
                TrackState {
                    bbox: Box3D::new(x, 1.0, 10.0, 2.0, 2.0, 1.5, 0.0).unwrap(),
                    score: 1.0,
                },
            );
        }
        t
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn match_frame_basic() {
        let g = [(0, rect(0.0, 0.0))];
        let h = [(7, rect(0.1, 0.0))];
        assert_eq!(match_frame(&g, &h, &BTreeMap::new(), 0.5), vec![(0, 0)]);
    }

    #[test]
    fn continuity_dissolves_below_floor() {
        let g = [(0, rect(0.0, 0.0))];
        // Shift giving IoU ≈ 0.45.
        let s = 2.0 * (1.0 - 0.45) / 1.45;
        let h = [(7, rect(s, 0.0))];
        assert!((iou_bev(&g[0].1, &h[0].1) - 0.45).abs() < 1e-9);
        let prev = BTreeMap::from([(0, 7)]);
        assert!(match_frame(&g, &h, &prev, 0.5).is_empty());
    }

    #[test]
    fn continuity_beats_better_newcomer() {
        let g = [(0, rect(0.0, 0.0))];
        let h = [(7, rect(0.4, 0.0)), (8, rect(0.0, 0.0))];
        let prev = BTreeMap::from([(0, 7)]);
        assert_eq!(match_frame(&g, &h, &prev, 0.5), vec![(0, 0)]);
        assert_eq!(match_frame(&g, &h, &BTreeMap::new(), 0.5), vec![(0, 1)]);
    }

    #[test]
    fn hungarian_beats_greedy() {
        // Greedy would take the 0.9 pair and leave the other gt unmatched.
        // Brute force over both assignments: {g0-h0, g1-h1} is invalid
        // (g1-h1 below floor) while {g0-h1, g1-h0} matches both.
        let g = [(0, rect(0.0, 0.0)), (1, rect(0.6, 0.0))];
        let h = [(10, rect(0.1, 0.0)), (11, rect(-0.6, 0.0))];
        let ious: Vec<Vec<f64>> = g
            .iter()
            .map(|(_, a)| h.iter().map(|(_, b)| iou_bev(a, b)).collect())
            .collect();
        assert!(ious[1][1] < 0.5 && ious[0][1] >= 0.5 && ious[1][0] >= 0.5);
        assert!(ious[0][0] > ious[0][1] && ious[0][0] > ious[1][0]);
        assert_eq!(
            match_frame(&g, &h, &BTreeMap::new(), 0.5),
            vec![(0, 1), (1, 0)]
        );
    }

    #[test]
    fn perfect_tracker() {
        let gt = vec![track(0, &[0, 1, 2, 3], 0.0), track(1, &[1, 2], 10.0)];
        let r = evaluate(&gt, &gt, &EvalConfig::default()).unwrap();
        assert_eq!(r.mota, 1.0);
        assert_eq!(r.motp, 1.0);
        assert_eq!((r.ids, r.fm, r.fp, r.fn_), (0, 0, 0, 0));
        assert_eq!(r.mt, 1.0);
    }

    #[test]
    fn empty_hypothesis() {
        let gt = vec![track(0, &[0, 1, 2, 3], 0.0)];
        let r = evaluate(&gt, &[], &EvalConfig::default()).unwrap();
        assert_eq!(r.mota, 0.0);
        assert_eq!(r.fn_, 4);
        assert_eq!(r.ml, 1.0);
        assert_eq!(r.motp, 0.0);
    }

    #[test]
    fn identity_switch_hand_case() {
        let gt = vec![track(0, &[1, 2, 3, 4], 0.0)];
        let hyp = vec![track(100, &[1, 2], 0.0), track(200, &[3, 4], 0.0)];
        let r = evaluate(&gt, &hyp, &EvalConfig::default()).unwrap();
        assert_eq!((r.fn_, r.fp, r.ids, r.fm), (0, 0, 1, 1));
        assert_eq!(r.mota, 0.75);
    }

    #[test]
    fn gap_counts_fragment_not_switch() {
        let gt = vec![track(0, &[1, 2, 3, 4], 0.0)];
        let hyp = vec![track(100, &[1, 3, 4], 0.0)];
        let r = evaluate(&gt, &hyp, &EvalConfig::default()).unwrap();
        assert_eq!((r.fn_, r.ids, r.fm), (1, 0, 1));
    }

    #[test]
    fn empty_gt_is_an_error() {
        assert!(matches!(
            evaluate(&[], &[], &EvalConfig::default()),
            Err(Error::EmptyGroundTruth)
        ));
        assert!(EvalConfig::new(0.0, 0.8, 0.2).is_err());
        assert!(EvalConfig::new(0.5, 0.2, 0.8).is_err());
    }

    #[test]
    fn serialisation() {
        let gt = vec![track(0, &[0, 1], 0.0)];
        let r = evaluate(&gt, &gt, &EvalConfig::default()).unwrap();
        let kv = r.to_key_value();
        assert!(kv.starts_with("mota 1.000000\nmotp 1.000000\n"));
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["fn"], 0);
        assert_eq!(v["mota"], 1.0);
        let merged = MotReport::merge(&[r, r]).unwrap();
        assert_eq!(merged.gt, 4);
        assert_eq!(merged.mota, 1.0);
    }
}
