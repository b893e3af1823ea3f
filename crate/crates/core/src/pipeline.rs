//! Inference: windowed splitting, tracklet graph and greedy regrouping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::connector::{Connector, TrackletEmbedding};
use crate::error::{Error, Result};
use crate::mot::{group_by_id, FeatureTable, MotRow};
use crate::splitter::Splitter;
use crate::tracklet::{SwitchMask, Tracklet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub delta_s: f64,
    pub delta_c: f64,
    pub delta_t: i64,
    pub window: usize,
    pub overlap: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            delta_s: 0.5,
            delta_c: 0.9,
            delta_t: 64,
            window: 65,
            overlap: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("pipeline config: {m}")));
        if !(self.delta_s > 0.0 && self.delta_s < 1.0) {
            return bad("delta_s must lie in (0, 1)");
        }
        if !(self.delta_c > 0.0 && self.delta_c <= 2.0) {
            return bad("delta_c must lie in (0, 2]");
        }
        if self.delta_t < 1 {
            return bad("delta_t must be at least 1");
        }
        if self.window < 3 {
            return bad("window must be at least 3");
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad("overlap must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        ((self.window as f64 * (1.0 - self.overlap)).floor() as usize).max(1)
    }
}

/// Start offsets of the sliding windows over `n` frames.
pub fn window_starts(n: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut starts = vec![0];
    let mut s = 0;
    while s + window < n {
        s += stride;
        starts.push(s);
    }
    starts
}

/// Full-length predicted mask; overlapping window predictions are averaged.
pub fn windowed_mask(frames: &[Vec<f32>], splitter: &Splitter<f32>, cfg: &PipelineConfig) -> Result<SwitchMask> {
    let n = frames.len();
    if n < 2 {
        return Err(Error::InvalidArgument("windowed_mask needs at least two frames".into()));
    }
    let t = splitter.cfg.window;
    let mut sum = vec![0.0f64; n - 1];
    let mut count = vec![0u32; n - 1];
    for s in window_starts(n, t, cfg.stride()) {
        let e = (s + t).min(n);
        let out = splitter.predict_window(&frames[s..e])?;
        for (i, &v) in out.m_hat.values.iter().enumerate() {
            sum[s + i] += v as f64;
            count[s + i] += 1;
        }
    }
    SwitchMask::predicted(sum.iter().zip(&count).map(|(s, &c)| (s / c as f64) as f32).collect())
}

/// Local maxima: `m[t] > m[t-1]` and `m[t] ≥ m[t+1]`, missing neighbours ignored.
pub fn local_peaks(m: &[f32]) -> Vec<usize> {
    (0..m.len())
        .filter(|&t| (t == 0 || m[t] > m[t - 1]) && (t + 1 == m.len() || m[t] >= m[t + 1]))
        .collect()
}

pub fn pick_peaks(mask: &SwitchMask, delta_s: f64) -> Vec<usize> {
    local_peaks(&mask.values)
        .into_iter()
        .filter(|&t| mask.values[t] as f64 > delta_s)
        .collect()
}

/// Cuts after each position `t`; segments partition the tracklet in order.
pub fn split_at(t: &Tracklet, positions: &[usize]) -> Result<Vec<Tracklet>> {
    let n = t.len();
    if positions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("split positions must be strictly increasing".into()));
    }
    if positions.last().is_some_and(|&p| p + 1 >= n) {
        return Err(Error::InvalidArgument(format!("split position out of range for length {n}")));
    }
    let mut out = Vec::with_capacity(positions.len() + 1);
    let mut lo = 0;
    for &p in positions {
        out.push(t.slice(lo, p + 1));
        lo = p + 1;
    }
    out.push(t.slice(lo, n));
    Ok(out)
}

/// Concatenates segments back into one tracklet.
pub fn concat(parts: &[Tracklet]) -> Result<Tracklet> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
    let mut t = Tracklet {
        features: Vec::new(),
        frames: Vec::new(),
        boxes: Vec::new(),
        source_id: first.source_id,
    };
    for p in parts {
        t.features.extend(p.features.iter().cloned());
        t.frames.extend(&p.frames);
        t.boxes.extend(&p.boxes);
    }
    t.validate()?;
    Ok(t)
}

/// Minimal frame distance between two sorted frame lists, `None` if they share a frame.
pub fn min_gap(a: &[i64], b: &[i64]) -> Option<i64> {
    let (a0, a1) = (a[0], *a.last().unwrap());
    let (b0, b1) = (b[0], *b.last().unwrap());
    if a1 < b0 {
        return Some(b0 - a1);
    }
    if b1 < a0 {
        return Some(a0 - b1);
    }
    let (mut i, mut j) = (0, 0);
    let mut best = i64::MAX;
    while i < a.len() && j < b.len() {
        let d = a[i] - b[j];
        if d == 0 {
            return None;
        }
        best = best.min(d.abs());
        if d < 0 {
            i += 1;
        } else {
            j += 1;
        }
    }
    Some(best)
}

/// Edge condition: disjoint frame sets with minimal gap ≤ `delta_t`.
pub fn compatible(a: &[i64], b: &[i64], delta_t: i64) -> bool {
    matches!(min_gap(a, b), Some(g) if g <= delta_t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletGraph {
    /// Sorted frame indices per vertex.
    pub frames: Vec<Vec<i64>>,
    /// Vertex pairs `(u, w)` with `u < w`.
    pub edges: Vec<(usize, usize)>,
    pub delta_t: i64,
}

pub fn build_graph(frames: Vec<Vec<i64>>, delta_t: i64) -> TrackletGraph {
    let mut edges = Vec::new();
    for u in 0..frames.len() {
        for w in u + 1..frames.len() {
            if !frames[u].is_empty() && !frames[w].is_empty() && compatible(&frames[u], &frames[w], delta_t) {
                edges.push((u, w));
            }
        }
    }
    TrackletGraph { frames, edges, delta_t }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn disjoint(a: &[i64], b: &[i64]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => return false,
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    true
}

fn merge_sorted(a: &[i64], b: &[i64]) -> Vec<i64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Ordering key of an edge: distance, then earlier start frame, then vertex indices.
pub fn edge_key(graph: &TrackletGraph, (u, w): (usize, usize), d: f64) -> (f64, i64, usize, usize) {
    let start = graph.frames[u][0].min(graph.frames[w][0]);
    (d, start, u.min(w), u.max(w))
}

/// Bottom-up merging along edges in ascending embedding distance. An edge
/// with distance `< delta_c` merges its clusters when every vertex pair across
/// them satisfies the edge condition (disjoint frames, gap ≤ `delta_t`).
/// Returns a cluster label per vertex, numbered by first vertex.
pub fn greedy_group(graph: &TrackletGraph, distance: impl Fn(usize, usize) -> f64, delta_c: f64) -> Vec<usize> {
    let n = graph.frames.len();
    let mut cand: Vec<((f64, i64, usize, usize), (usize, usize))> = graph
        .edges
        .iter()
        .map(|&e| (edge_key(graph, e, distance(e.0, e.1)), e))
        .filter(|(k, _)| k.0 < delta_c)
        .collect();
    cand.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0).then((a.0 .1, a.0 .2, a.0 .3).cmp(&(b.0 .1, b.0 .2, b.0 .3))));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut frames: Vec<Vec<i64>> = graph.frames.clone();
    let mut vertices: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
    for (_, (u, w)) in cand {
        let (ru, rw) = (find(&mut parent, u), find(&mut parent, w));
        if ru == rw || !disjoint(&frames[ru], &frames[rw]) {
            continue;
        }
        let near = vertices[ru].iter().all(|&a| {
            vertices[rw]
                .iter()
                .all(|&b| compatible(&graph.frames[a], &graph.frames[b], graph.delta_t))
        });
        if !near {
            continue;
        }
        let (keep, drop) = (ru.min(rw), ru.max(rw));
        frames[keep] = merge_sorted(&frames[ru], &frames[rw]);
        frames[drop].clear();
        let moved = std::mem::take(&mut vertices[drop]);
        vertices[keep].extend(moved);
        parent[drop] = keep;
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = vec![0; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        out[v] = label[r];
    }
    out
}

/// Embedding of an arbitrarily long tracklet: sequences longer than
/// `2 * window` are embedded in overlapping windows and averaged.
pub fn embed_tracklet(connector: &Connector<f32>, frames: &[Vec<f32>], window: usize, overlap: f64) -> Result<TrackletEmbedding> {
    let n = frames.len();
    if n <= 2 * window {
        return connector.embed(frames);
    }
    let stride = ((window as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let parts = window_starts(n, window, stride)
        .into_iter()
        .map(|s| connector.embed(&frames[s..(s + window).min(n)]))
        .collect::<Result<Vec<_>>>()?;
    TrackletEmbedding::average(&parts)
}

/// Intermediate results of a boost run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostTrace {
    /// Segments after splitting, as row indices into the input.
    pub segments: Vec<Vec<usize>>,
    /// Cluster label per segment.
    pub clusters: Vec<usize>,
}

/// Splits input tracks at predicted switches (when a splitter is given),
/// regroups the pieces by embedding (when a connector is given), and
/// relabels rows with 1-based cluster ids. Boxes pass through untouched.
pub fn boost(
    rows: &[MotRow],
    features: &FeatureTable,
    splitter: Option<&Splitter<f32>>,
    connector: Option<&Connector<f32>>,
    cfg: &PipelineConfig,
) -> Result<(Vec<MotRow>, BoostTrace)> {
    cfg.validate()?;
    let mut segments: Vec<Vec<usize>> = Vec::new();
    let mut seg_feats: Vec<Vec<Vec<f32>>> = Vec::new();
    for (_, idx) in group_by_id(rows) {
        let feats = idx
            .iter()
            .map(|&i| features.lookup(&rows[i]).cloned())
            .collect::<Result<Vec<_>>>()?;
        let cuts = match splitter {
            Some(s) if idx.len() >= 2 => pick_peaks(&windowed_mask(&feats, s, cfg)?, cfg.delta_s),
            _ => Vec::new(),
        };
        let mut lo = 0;
        for hi in cuts.into_iter().map(|p| p + 1).chain(std::iter::once(idx.len())) {
            segments.push(idx[lo..hi].to_vec());
            seg_feats.push(feats[lo..hi].to_vec());
            lo = hi;
        }
    }
    let clusters = match connector {
        Some(c) if !segments.is_empty() => {
            let emb = seg_feats
                .iter()
                .map(|f| embed_tracklet(c, f, cfg.window, cfg.overlap))
                .collect::<Result<Vec<_>>>()?;
            let frames: Vec<Vec<i64>> = segments.iter().map(|s| s.iter().map(|&i| rows[i].frame).collect()).collect();
            let graph = build_graph(frames, cfg.delta_t);
            greedy_group(&graph, |u, w| emb[u].distance(&emb[w]), cfg.delta_c)
        }
        _ => (0..segments.len()).collect(),
    };
    // number clusters by their earliest frame, then by first segment
    let mut first: BTreeMap<usize, (i64, usize)> = BTreeMap::new();
    for (si, s) in segments.iter().enumerate() {
        let f = s.iter().map(|&i| rows[i].frame).min().unwrap();
        let e = first.entry(clusters[si]).or_insert((f, si));
        *e = (*e).min((f, si));
    }
    let mut order: Vec<(i64, usize, usize)> = first.iter().map(|(&c, &(f, s))| (f, s, c)).collect();
    order.sort_unstable();
    let mut new_id = vec![0i64; order.len()];
    for (k, &(_, _, c)) in order.iter().enumerate() {
        new_id[c] = k as i64 + 1;
    }
    let mut out = Vec::with_capacity(rows.len());
    for (si, s) in segments.iter().enumerate() {
        for &i in s {
            let mut r = rows[i].clone();
            r.id = new_id[clusters[si]];
            out.push(r);
        }
    }
    out.sort_by_key(|r| (r.frame, r.id));
    Ok((out, BoostTrace { segments, clusters }))
}
