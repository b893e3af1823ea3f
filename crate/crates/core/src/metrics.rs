//! CLEAR-MOT and identity metrics, plus switch-detection average precision.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::hungarian;
use crate::mot::MotRow;
use crate::pipeline::local_peaks;
use crate::tracklet::iou;

pub const IOU_THRESHOLD: f64 = 0.5;
/// Trajectory coverage for mostly tracked / mostly lost.
pub const MT_RATIO: f64 = 0.8;
pub const ML_RATIO: f64 = 0.2;

const INFEASIBLE: f64 = 1e6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub idf1: f64,
    pub mota: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
    pub frag: usize,
    pub mt: usize,
    pub ml: usize,
    pub num_gt: usize,
    pub num_pred: usize,
}

impl EvalReport {
    fn finish(mut self) -> Self {
        let denom = 2 * self.idtp + self.idfp + self.idfn;
        self.idf1 = if denom == 0 { 0.0 } else { 2.0 * self.idtp as f64 / denom as f64 };
        self.mota = 1.0 - (self.fn_ + self.fp + self.ids) as f64 / self.num_gt.max(1) as f64;
        self
    }

    /// Pools counts of several sequences and recomputes the ratios.
    pub fn combine(parts: &[EvalReport]) -> EvalReport {
        let mut r = EvalReport::default();
        for p in parts {
            r.idtp += p.idtp;
            r.idfp += p.idfp;
            r.idfn += p.idfn;
            r.fp += p.fp;
            r.fn_ += p.fn_;
            r.ids += p.ids;
            r.frag += p.frag;
            r.mt += p.mt;
            r.ml += p.ml;
            r.num_gt += p.num_gt;
            r.num_pred += p.num_pred;
        }
        r.finish()
    }
}

fn by_frame(rows: &[MotRow]) -> BTreeMap<i64, Vec<usize>> {
    let mut m: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        m.entry(r.frame).or_default().push(i);
    }
    m
}

/// Optimal assignment maximizing the number of pairs with IoU ≥ `thr`,
/// then total IoU. Returns `(gt index, pred index)` pairs.
pub fn assign_frame(gt: &[MotRow], pred: &[MotRow], thr: f64) -> Vec<(usize, usize)> {
    let cost: Vec<Vec<f64>> = gt
        .iter()
        .map(|g| {
            pred.iter()
                .map(|p| {
                    let v = iou(&g.bbox, &p.bbox);
                    if v >= thr {
                        1.0 - v
                    } else {
                        INFEASIBLE
                    }
                })
                .collect()
        })
        .collect();
    hungarian::solve(&cost)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.filter(|&j| cost[i][j] < INFEASIBLE).map(|j| (i, j)))
        .collect()
}

/// Per-frame CLEAR correspondences as `(frame, gt id, pred id)`.
///
/// A ground-truth object keeps its previous partner when that prediction is
/// present and still overlaps by at least `thr`; the rest is assigned optimally.
pub fn match_frames(gt: &[MotRow], pred: &[MotRow], thr: f64) -> Vec<(i64, i64, i64)> {
    let gf = by_frame(gt);
    let pf = by_frame(pred);
    let mut last: HashMap<i64, i64> = HashMap::new();
    let mut out = Vec::new();
    for (&f, gi) in &gf {
        let pi: &[usize] = pf.get(&f).map_or(&[], Vec::as_slice);
        let mut g_used = vec![false; gi.len()];
        let mut p_used = vec![false; pi.len()];
        for (a, &g) in gi.iter().enumerate() {
            let Some(&prev) = last.get(&gt[g].id) else { continue };
            if let Some(b) = pi.iter().position(|&p| pred[p].id == prev) {
                if !p_used[b] && iou(&gt[g].bbox, &pred[pi[b]].bbox) >= thr {
                    g_used[a] = true;
                    p_used[b] = true;
                    out.push((f, gt[g].id, prev));
                }
            }
        }
        let rest_g: Vec<usize> = (0..gi.len()).filter(|&a| !g_used[a]).collect();
        let rest_p: Vec<usize> = (0..pi.len()).filter(|&b| !p_used[b]).collect();
        let gs: Vec<MotRow> = rest_g.iter().map(|&a| gt[gi[a]].clone()).collect();
        let ps: Vec<MotRow> = rest_p.iter().map(|&b| pred[pi[b]].clone()).collect();
        for (a, b) in assign_frame(&gs, &ps, thr) {
            out.push((f, gs[a].id, ps[b].id));
        }
        for &(ff, g, p) in out.iter().rev() {
            if ff != f {
                break;
            }
            last.insert(g, p);
        }
    }
    out
}

/// Frames per identity pair where both are present and overlap by ≥ `thr`.
fn pair_overlaps(gt: &[MotRow], pred: &[MotRow], thr: f64) -> HashMap<(i64, i64), usize> {
    let pf = by_frame(pred);
    let mut m = HashMap::new();
    for g in gt {
        if let Some(pi) = pf.get(&g.frame) {
            for &p in pi {
                if iou(&g.bbox, &pred[p].bbox) >= thr {
                    *m.entry((g.id, pred[p].id)).or_insert(0) += 1;
                }
            }
        }
    }
    m
}

fn ids_of(rows: &[MotRow]) -> Vec<i64> {
    let mut v: Vec<i64> = rows.iter().map(|r| r.id).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// `(idtp, idfp, idfn)` from the identity matching that maximizes true positives.
pub fn id_counts(gt: &[MotRow], pred: &[MotRow], thr: f64) -> (usize, usize, usize) {
    let overlap = pair_overlaps(gt, pred, thr);
    let (gi, pi) = (ids_of(gt), ids_of(pred));
    let cost: Vec<Vec<f64>> = gi
        .iter()
        .map(|g| pi.iter().map(|p| -(*overlap.get(&(*g, *p)).unwrap_or(&0) as f64)).collect())
        .collect();
    let idtp: usize = hungarian::solve(&cost)
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| overlap.get(&(gi[i], pi[j])).copied().unwrap_or(0)))
        .sum();
    (idtp, pred.len() - idtp, gt.len() - idtp)
}

pub fn idf1(gt: &[MotRow], pred: &[MotRow]) -> f64 {
    let (tp, fp, fn_) = id_counts(gt, pred, IOU_THRESHOLD);
    let d = 2 * tp + fp + fn_;
    if d == 0 {
        0.0
    } else {
        2.0 * tp as f64 / d as f64
    }
}

pub fn evaluate(gt: &[MotRow], pred: &[MotRow]) -> EvalReport {
    let matches = match_frames(gt, pred, IOU_THRESHOLD);
    let mut r = EvalReport {
        num_gt: gt.len(),
        num_pred: pred.len(),
        fp: pred.len() - matches.len(),
        fn_: gt.len() - matches.len(),
        ..Default::default()
    };
    let matched: HashMap<(i64, i64), i64> = matches.iter().map(|&(f, g, p)| ((f, g), p)).collect();
    let mut frames_of: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
    for g in gt {
        frames_of.entry(g.id).or_default().push(g.frame);
    }
    for (gid, mut frames) in frames_of {
        frames.sort_unstable();
        let mut last_pred: Option<i64> = None;
        let mut tracked_before = false;
        let mut prev_tracked = false;
        let mut covered = 0usize;
        for &f in &frames {
            match matched.get(&(f, gid)) {
                Some(&p) => {
                    covered += 1;
                    if last_pred.is_some_and(|q| q != p) {
                        r.ids += 1;
                    }
                    if tracked_before && !prev_tracked {
                        r.frag += 1;
                    }
                    last_pred = Some(p);
                    tracked_before = true;
                    prev_tracked = true;
                }
                None => prev_tracked = false,
            }
        }
        let ratio = covered as f64 / frames.len() as f64;
        if ratio >= MT_RATIO {
            r.mt += 1;
        } else if ratio <= ML_RATIO {
            r.ml += 1;
        }
    }
    let (tp, fp, fn_) = id_counts(gt, pred, IOU_THRESHOLD);
    r.idtp = tp;
    r.idfp = fp;
    r.idfn = fn_;
    r.finish()
}

pub fn mota(gt: &[MotRow], pred: &[MotRow]) -> f64 {
    evaluate(gt, pred).mota
}

/// Detected switch candidates: every local peak of each predicted mask,
/// with the peak value as confidence.
pub fn mask_peaks(masks: &[Vec<f32>]) -> Vec<(usize, usize, f32)> {
    let mut out = Vec::new();
    for (s, m) in masks.iter().enumerate() {
        for t in local_peaks(m) {
            out.push((s, t, m[t]));
        }
    }
    out
}

/// Average precision of scored detections `(sequence, position, confidence)`
/// against ground-truth switch positions; a detection is a true positive
/// when it lies within `tol` of a not yet matched switch of its sequence.
pub fn average_precision(detections: &[(usize, usize, f32)], gt: &[Vec<usize>], tol: usize) -> f64 {
    let total: usize = gt.iter().map(Vec::len).sum();
    if total == 0 || detections.is_empty() {
        return 0.0;
    }
    let mut order: Vec<&(usize, usize, f32)> = detections.iter().collect();
    order.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut used: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (k, &&(s, t, _)) in order.iter().enumerate() {
        let best = gt[s]
            .iter()
            .enumerate()
            .filter(|&(j, &g)| !used[s][j] && g.abs_diff(t) <= tol)
            .min_by_key(|&(j, &g)| (g.abs_diff(t), j))
            .map(|(j, _)| j);
        if let Some(j) = best {
            used[s][j] = true;
            tp += 1;
        }
        curve.push((tp as f64 / total as f64, tp as f64 / (k + 1) as f64));
    }
    // interpolate: precision at recall r is the best precision at recall ≥ r
    let mut ap = 0.0;
    let mut best = 0.0f64;
    let mut interp = vec![0.0; curve.len()];
    for i in (0..curve.len()).rev() {
        best = best.max(curve[i].1);
        interp[i] = best;
    }
    let mut prev_r = 0.0;
    for (i, &(r, _)) in curve.iter().enumerate() {
        ap += (r - prev_r) * interp[i];
        prev_r = r;
    }
    ap
}

/// Splitting AP of predicted masks against binary ground-truth masks.
pub fn splitting_ap(pred: &[Vec<f32>], gt: &[Vec<f32>], tol: usize) -> f64 {
    let switches: Vec<Vec<usize>> = gt
        .iter()
        .map(|m| m.iter().enumerate().filter(|(_, &v)| v >= 0.5).map(|(i, _)| i).collect())
        .collect();
    average_precision(&mask_peaks(pred), &switches, tol)
}
