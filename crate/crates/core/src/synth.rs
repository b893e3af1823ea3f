//! Synthetic scenes, detector noise, an IOU tracker and labelled corpora.
//!
//! A scene is a set of identities with piecewise-linear motion and a
//! drifting appearance vector. Detections are jittered ground-truth boxes
//! with misses, occlusions and false positives; the IOU tracker links them
//! into tracklets that keep the hidden ground-truth identity per frame.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::connector::ConnectorSample;
use crate::error::{Error, Result};
use crate::mot::{FeatureTable, MotRow};
use crate::rng::{self, Stream};
use crate::splitter::SplitterWindow;
use crate::tracklet::{iou, BBox, SwitchMask, Tracklet, BOX_FEATURES, BOX_FEATURE_RANGE};

/// Identity value carried by false-positive detections.
pub const FALSE_POSITIVE: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: f64,
    pub height: f64,
    pub frames: usize,
    pub identities: usize,
    /// Box centers stay this fraction of the image size away from the edges.
    pub margin: f64,
    /// Vertical range of box centers as fractions of the image height.
    pub band: (f64, f64),
    pub speed: (f64, f64),
    /// Maximum heading deviation from horizontal, radians.
    pub max_heading: f64,
    /// Per-frame probability of picking a new velocity.
    pub turn_prob: f64,
    pub box_height: (f64, f64),
    pub aspect: f64,
    pub appearance_dim: usize,
    pub drift_std: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 1920.0,
            height: 1080.0,
            frames: 300,
            identities: 16,
            margin: 0.05,
            band: (0.55, 0.65),
            speed: (1.0, 4.0),
            max_heading: 0.15,
            turn_prob: 0.01,
            box_height: (170.0, 210.0),
            aspect: 0.4,
            appearance_dim: 32,
            drift_std: 0.02,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("scene config: {m}")));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("image size must be positive");
        }
        if !(0.0..0.5).contains(&self.margin) {
            return bad("margin must lie in [0, 0.5)");
        }
        if self.identities == 0 {
            return bad("identities must be at least 1");
        }
        if self.frames < 2 {
            return bad("frames must be at least 2");
        }
        if !(0.0 <= self.band.0 && self.band.0 <= self.band.1 && self.band.1 <= 1.0) {
            return bad("band must satisfy 0 ≤ lo ≤ hi ≤ 1");
        }
        if !(self.speed.0 >= 0.0 && self.speed.1 >= self.speed.0) {
            return bad("speed range is invalid");
        }
        if !(self.box_height.0 > 0.0 && self.box_height.1 >= self.box_height.0) || !(self.aspect > 0.0) {
            return bad("box size range is invalid");
        }
        let max_w = self.box_height.1 * self.aspect;
        if max_w > 0.4 * self.width || self.box_height.1 > 0.4 * self.height {
            return bad("boxes must be smaller than 40% of the image");
        }
        if !(0.0..=1.0).contains(&self.turn_prob) || !(self.drift_std >= 0.0) {
            return bad("turn probability or drift is out of range");
        }
        if self.appearance_dim == 0 {
            return bad("appearance_dim must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityTrack {
    /// Ground-truth identity, starting at 1.
    pub id: i64,
    /// First frame (1-based); the span is contiguous.
    pub start: i64,
    pub boxes: Vec<BBox>,
    /// Anchor plus accumulated drift, one vector per frame of the span.
    pub appearance: Vec<Vec<f32>>,
}

impl IdentityTrack {
    pub fn end(&self) -> i64 {
        self.start + self.boxes.len() as i64 - 1
    }

    pub fn at(&self, frame: i64) -> Option<usize> {
        (frame >= self.start && frame <= self.end()).then(|| (frame - self.start) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGroundTruth {
    pub width: f64,
    pub height: f64,
    pub frames: usize,
    pub identities: Vec<IdentityTrack>,
}

impl SceneGroundTruth {
    pub fn identity(&self, id: i64) -> Option<&IdentityTrack> {
        self.identities.iter().find(|t| t.id == id)
    }

    /// Ground-truth rows in MOTChallenge layout.
    pub fn to_rows(&self) -> Vec<MotRow> {
        let mut rows = Vec::new();
        for t in &self.identities {
            for (i, b) in t.boxes.iter().enumerate() {
                rows.push(MotRow::new(t.start + i as i64, t.id, *b, 1.0));
            }
        }
        rows.sort_by_key(|r| (r.frame, r.id));
        crate::mot::reindex(&mut rows);
        rows
    }

    /// Mirrors every box and trajectory about the vertical center line.
    pub fn flip_horizontal(&mut self) {
        for t in &mut self.identities {
            for b in &mut t.boxes {
                b.x = self.width - b.x - b.w;
            }
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn random_velocity<R: Rng>(rng: &mut R, cfg: &SceneConfig) -> (f64, f64) {
    let speed = uniform(rng, cfg.speed.0, cfg.speed.1);
    let heading = uniform(rng, -cfg.max_heading, cfg.max_heading);
    let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    (dir * speed * heading.cos(), speed * heading.sin())
}

/// Builds a scene with `cfg.identities` objects over `cfg.frames` frames.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SceneGroundTruth> {
    generate_scene_indexed(seed, 0, cfg)
}

/// Same as [`generate_scene`] on the synthesis substream `index`.
pub fn generate_scene_indexed(seed: u64, index: u32, cfg: &SceneConfig) -> Result<SceneGroundTruth> {
    cfg.validate()?;
    let mut rng = rng::substream(seed, Stream::Synth, index);
    let l = cfg.frames as i64;
    let (mx, my) = (cfg.margin * cfg.width, cfg.margin * cfg.height);
    let mut identities = Vec::with_capacity(cfg.identities);
    for id in 1..=cfg.identities as i64 {
        let start = if cfg.identities == 1 || rng.random_bool(0.5) {
            1
        } else {
            rng.random_range(1..=(l / 2).max(1))
        };
        let remaining = l - start + 1;
        let min_len = (l / 3).clamp(2, remaining);
        let len = rng.random_range(min_len..=remaining);
        let h = uniform(&mut rng, cfg.box_height.0, cfg.box_height.1);
        let w = h * cfg.aspect;
        let (lo_x, hi_x) = (mx.max(w / 2.0), (cfg.width - mx).min(cfg.width - w / 2.0));
        let lo_y = my.max(h / 2.0).max(cfg.band.0 * cfg.height);
        let hi_y = (cfg.height - my).min(cfg.height - h / 2.0).min(cfg.band.1 * cfg.height).max(lo_y);
        let mut cx = uniform(&mut rng, lo_x, hi_x);
        let mut cy = uniform(&mut rng, lo_y, hi_y);
        let mut vel = random_velocity(&mut rng, cfg);
        let mut app: Vec<f64> = (0..cfg.appearance_dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut boxes = Vec::with_capacity(len as usize);
        let mut appearance = Vec::with_capacity(len as usize);
        for _ in 0..len {
            boxes.push(BBox::new(cx - w / 2.0, cy - h / 2.0, w, h));
            appearance.push(app.iter().map(|&v| v as f32).collect());
            if rng.random_bool(cfg.turn_prob) {
                vel = random_velocity(&mut rng, cfg);
            }
            cx += vel.0;
            cy += vel.1;
            if cx < lo_x || cx > hi_x {
                vel.0 = -vel.0;
                cx = cx.clamp(lo_x, hi_x);
            }
            if cy < lo_y || cy > hi_y {
                vel.1 = -vel.1;
                cy = cy.clamp(lo_y, hi_y);
            }
            for a in &mut app {
                let step: f64 = rng.sample::<f64, _>(StandardNormal).clamp(-3.0, 3.0);
                *a += cfg.drift_std * step;
            }
        }
        identities.push(IdentityTrack {
            id,
            start,
            boxes,
            appearance,
        });
    }
    Ok(SceneGroundTruth {
        width: cfg.width,
        height: cfg.height,
        frames: cfg.frames,
        identities,
    })
}

/// Number of pairwise crossings: sign changes of the horizontal center
/// offset between two identities on consecutive shared frames while their
/// boxes overlap.
pub fn count_crossings(scene: &SceneGroundTruth) -> usize {
    let ids = &scene.identities;
    let mut n = 0;
    for a in 0..ids.len() {
        for b in a + 1..ids.len() {
            let (ta, tb) = (&ids[a], &ids[b]);
            let lo = ta.start.max(tb.start);
            let hi = ta.end().min(tb.end());
            let mut prev: Option<f64> = None;
            for f in lo..=hi {
                let (ba, bb) = (&ta.boxes[ta.at(f).unwrap()], &tb.boxes[tb.at(f).unwrap()]);
                let d = ba.center().0 - bb.center().0;
                if let Some(p) = prev {
                    if d != 0.0 && p != 0.0 && (d > 0.0) != (p > 0.0) && ba.intersection(bb) > 0.0 {
                        n += 1;
                    }
                }
                if d != 0.0 {
                    prev = Some(d);
                }
            }
        }
    }
    n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Box jitter standard deviation as a fraction of box size.
    pub jitter: f64,
    pub miss_prob: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    /// Per-frame probability that a visible identity starts an occlusion.
    pub occlusion_rate: f64,
    pub occlusion_frames: (usize, usize),
    /// Probability of missing a box that is covered by a nearer one (IoU > 0.3).
    pub occluded_miss_prob: f64,
    /// Mirror each scene horizontally with probability 1/2.
    pub flip: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            jitter: 0.03,
            miss_prob: 0.02,
            fp_rate: 0.05,
            occlusion_rate: 0.005,
            occlusion_frames: (3, 15),
            occluded_miss_prob: 0.3,
            flip: false,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            jitter: 0.0,
            miss_prob: 0.0,
            fp_rate: 0.0,
            occlusion_rate: 0.0,
            occlusion_frames: (3, 15),
            occluded_miss_prob: 0.0,
            flip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.miss_prob, self.occlusion_rate, self.occluded_miss_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("noise probabilities must lie in [0, 1]".into()));
        }
        if !(self.jitter >= 0.0) || !(self.fp_rate >= 0.0) {
            return Err(Error::InvalidArgument("jitter and false-positive rate must be non-negative".into()));
        }
        let (lo, hi) = self.occlusion_frames;
        if lo < 1 || hi < lo {
            return Err(Error::InvalidArgument("occlusion durations must satisfy 1 ≤ lo ≤ hi".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: i64,
    pub bbox: BBox,
    /// Hidden ground-truth identity, or [`FALSE_POSITIVE`].
    pub gt_id: i64,
}

/// Detections per frame (index `f - 1` for frame `f`).
pub fn detect(scene: &SceneGroundTruth, noise: &NoiseConfig, seed: u64, index: u32) -> Result<Vec<Vec<Detection>>> {
    noise.validate()?;
    let mut rng = rng::substream(seed, Stream::Synth, index.wrapping_add(1 << 31));
    let mut out: Vec<Vec<Detection>> = vec![Vec::new(); scene.frames];
    let mut occluded_until = vec![i64::MIN; scene.identities.len()];
    let jitter = Normal::new(0.0, noise.jitter.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for f in 1..=scene.frames as i64 {
        let present: Vec<(usize, BBox)> = scene
            .identities
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.at(f).map(|k| (i, t.boxes[k])))
            .collect();
        for &(i, b) in &present {
            if f <= occluded_until[i] {
                continue;
            }
            if rng.random_bool(noise.occlusion_rate) {
                let (lo, hi) = noise.occlusion_frames;
                occluded_until[i] = f + rng.random_range(lo..=hi) as i64 - 1;
                continue;
            }
            let behind = present
                .iter()
                .any(|&(j, o)| j != i && o.y + o.h > b.y + b.h && iou(&o, &b) > 0.3);
            if behind && rng.random_bool(noise.occluded_miss_prob) {
                continue;
            }
            if rng.random_bool(noise.miss_prob) {
                continue;
            }
            let mut d = b;
            if noise.jitter > 0.0 {
                d.x += jitter.sample(&mut rng) * b.w;
                d.y += jitter.sample(&mut rng) * b.h;
                d.w = (b.w * (1.0 + jitter.sample(&mut rng))).max(1.0);
                d.h = (b.h * (1.0 + jitter.sample(&mut rng))).max(1.0);
            }
            out[(f - 1) as usize].push(Detection {
                frame: f,
                bbox: d,
                gt_id: scene.identities[i].id,
            });
        }
        let mut n_fp = noise.fp_rate.floor() as usize;
        if rng.random_bool(noise.fp_rate.fract()) {
            n_fp += 1;
        }
        for _ in 0..n_fp {
            let h = uniform(&mut rng, 0.05, 0.25) * scene.height;
            let w = 0.4 * h;
            let x = uniform(&mut rng, 0.0, scene.width - w);
            let y = uniform(&mut rng, 0.0, scene.height - h);
            out[(f - 1) as usize].push(Detection {
                frame: f,
                bbox: BBox::new(x, y, w, h),
                gt_id: FALSE_POSITIVE,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IouTrackerConfig {
    pub threshold: f64,
    /// Largest frame difference over which a track may continue.
    pub max_gap: i64,
}

impl Default for IouTrackerConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            max_gap: 3,
        }
    }
}

impl IouTrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument("IOU threshold must lie in (0, 1)".into()));
        }
        if self.max_gap < 1 {
            return Err(Error::InvalidArgument("max_gap must be at least 1".into()));
        }
        Ok(())
    }
}

/// A tracker output run with the hidden identity of each detection.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedTracklet {
    pub track_id: i64,
    pub frames: Vec<i64>,
    pub boxes: Vec<BBox>,
    pub gt_ids: Vec<i64>,
}

impl AnnotatedTracklet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Greedy IOU tracker. In every frame, candidate (track, detection) pairs
/// with IoU ≥ θ are accepted in descending IoU order; leftover detections
/// start new tracks. Track ids are assigned from 1 in creation order.
pub fn iou_track(frames: &[Vec<Detection>], cfg: &IouTrackerConfig) -> Result<Vec<AnnotatedTracklet>> {
    cfg.validate()?;
    let mut tracks: Vec<AnnotatedTracklet> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for dets in frames {
        let Some(f) = dets.first().map(|d| d.frame) else {
            continue;
        };
        active.retain(|&t| f - tracks[t].frames.last().unwrap() <= cfg.max_gap);
        let mut pairs = Vec::new();
        for (ai, &t) in active.iter().enumerate() {
            let last = tracks[t].boxes.last().unwrap();
            for (di, d) in dets.iter().enumerate() {
                let v = iou(last, &d.bbox);
                if v >= cfg.threshold {
                    pairs.push((v, ai, di));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; active.len()];
        let mut det_used = vec![false; dets.len()];
        for (_, ai, di) in pairs {
            if track_used[ai] || det_used[di] {
                continue;
            }
            track_used[ai] = true;
            det_used[di] = true;
            let t = &mut tracks[active[ai]];
            t.frames.push(f);
            t.boxes.push(dets[di].bbox);
            t.gt_ids.push(dets[di].gt_id);
        }
        for (di, d) in dets.iter().enumerate() {
            if !det_used[di] {
                tracks.push(AnnotatedTracklet {
                    track_id: tracks.len() as i64 + 1,
                    frames: vec![f],
                    boxes: vec![d.bbox],
                    gt_ids: vec![d.gt_id],
                });
                active.push(tracks.len() - 1);
            }
        }
    }
    Ok(tracks)
}

/// Binary switch labels: entry `t` is 1 iff the identity changes between `t` and `t+1`.
pub fn label_switch_mask(gt_ids: &[i64]) -> Result<SwitchMask> {
    if gt_ids.is_empty() {
        return Err(Error::InvalidArgument("cannot label an empty tracklet".into()));
    }
    SwitchMask::ground_truth(gt_ids.windows(2).map(|w| if w[0] != w[1] { 1.0 } else { 0.0 }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Total per-frame dimension `K`, appearance plus four box values.
    pub dim: usize,
    pub obs_noise: f64,
    /// Weight given to the appearance of the identity covering most of the
    /// detection box, scaled by the covered fraction.
    pub blend: f64,
    /// Appearance is averaged over `±smooth_radius` neighbouring detections
    /// of the tracklet, like a clip-level re-id descriptor.
    pub smooth_radius: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            dim: 36,
            obs_noise: 0.05,
            blend: 0.0,
            smooth_radius: 2,
        }
    }
}

const BEHIND_WEIGHT: f64 = 0.25;

/// Per-frame feature vectors of an annotated tracklet.
pub fn make_features<R: Rng>(
    t: &AnnotatedTracklet,
    scene: &SceneGroundTruth,
    cfg: &FeatureConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f32>>> {
    let k = cfg.dim;
    if k < BOX_FEATURES + 1 {
        return Err(Error::InvalidArgument("feature dimension must be at least 5".into()));
    }
    let a = k - BOX_FEATURES;
    if scene.identities.iter().any(|i| i.appearance.first().is_some_and(|v| v.len() != a)) {
        return Err(Error::InvalidArgument(format!(
            "feature dimension {k} does not match scene appearance dimension"
        )));
    }
    let noise = Normal::new(0.0, cfg.obs_noise.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(t.len());
    for ((&f, b), &gid) in t.frames.iter().zip(&t.boxes).zip(&t.gt_ids) {
        let v: Vec<f64> = match scene.identity(gid).and_then(|s| s.at(f).map(|k| (s, k))) {
            Some((s, idx)) => {
                let own = &s.appearance[idx];
                let depth = s.boxes[idx].y + s.boxes[idx].h;
                let area = b.area().max(1e-9);
                // share of the detection box covered by another identity,
                // discounted when that identity is behind this one
                let other = scene
                    .identities
                    .iter()
                    .filter(|o| o.id != gid)
                    .filter_map(|o| {
                        let j = o.at(f)?;
                        let ob = &o.boxes[j];
                        let front = if ob.y + ob.h > depth { 1.0 } else { BEHIND_WEIGHT };
                        Some((front * ob.intersection(b) / area, &o.appearance[j]))
                    })
                    .filter(|(v, _)| *v > 0.0)
                    .max_by(|x, y| x.0.total_cmp(&y.0));
                match other {
                    Some((cover, oa)) if cfg.blend > 0.0 => {
                        let w = (cfg.blend * cover).min(1.0);
                        own.iter().zip(oa).map(|(&p, &q)| (1.0 - w) * p as f64 + w * q as f64).collect()
                    }
                    _ => own.iter().map(|&p| p as f64).collect(),
                }
            }
            None => (0..a).map(|_| rng.sample(StandardNormal)).collect(),
        };
        raw.push(v);
    }
    let r = cfg.smooth_radius;
    let mut out = Vec::with_capacity(t.len());
    for (i, b) in t.boxes.iter().enumerate() {
        let (lo, hi) = (i.saturating_sub(r), (i + r + 1).min(t.len()));
        let mut v = vec![0.0f64; a];
        for x in &raw[lo..hi] {
            v.iter_mut().zip(x).for_each(|(s, &x)| *s += x);
        }
        let n = (hi - lo) as f64;
        let mut row: Vec<f32> = v
            .iter()
            .map(|&x| {
                let e = if cfg.obs_noise > 0.0 { noise.sample(rng) } else { 0.0 };
                (x / n + e) as f32
            })
            .collect();
        let (blo, bhi) = BOX_FEATURE_RANGE;
        row.extend(b.normalized(scene.width, scene.height).iter().map(|x| x.clamp(blo, bhi)));
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub tracker: IouTrackerConfig,
    pub features: FeatureConfig,
    /// IOU thresholds cycled across training sequences.
    pub train_thresholds: Vec<f64>,
    pub train_sequences: usize,
    pub test_sequences: usize,
    /// Splitter window length `T` used to cut training windows.
    pub window: usize,
    /// Shortest single-identity run kept as a connector sample.
    pub min_sample_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            noise: NoiseConfig::default(),
            tracker: IouTrackerConfig::default(),
            features: FeatureConfig::default(),
            train_thresholds: vec![0.3, 0.5, 0.7],
            train_sequences: 8,
            test_sequences: 2,
            window: 65,
            min_sample_len: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.noise.validate()?;
        self.tracker.validate()?;
        for &t in &self.train_thresholds {
            IouTrackerConfig { threshold: t, ..self.tracker }.validate()?;
        }
        if self.features.dim != self.scene.appearance_dim + BOX_FEATURES {
            return Err(Error::InvalidArgument(format!(
                "features.dim must equal scene.appearance_dim + {BOX_FEATURES}"
            )));
        }
        if self.window < 3 {
            return Err(Error::InvalidArgument("window must be at least 3".into()));
        }
        if self.min_sample_len < 1 {
            return Err(Error::InvalidArgument("min_sample_len must be positive".into()));
        }
        Ok(())
    }

    pub fn threshold_for(&self, index: u32) -> f64 {
        if self.train_thresholds.is_empty() {
            self.tracker.threshold
        } else {
            self.train_thresholds[index as usize % self.train_thresholds.len()]
        }
    }
}

/// One simulated sequence: ground truth, tracker output and features.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub scene: SceneGroundTruth,
    /// Detector output per frame, before tracking.
    pub detections: Vec<Vec<Detection>>,
    pub tracklets: Vec<AnnotatedTracklet>,
    /// `features[i][j]` belongs to frame `tracklets[i].frames[j]`.
    pub features: Vec<Vec<Vec<f32>>>,
}

impl Sequence {
    pub fn tracklet(&self, i: usize) -> Result<Tracklet> {
        let t = &self.tracklets[i];
        Tracklet::new(self.features[i].clone(), t.frames.clone(), t.boxes.clone(), t.track_id)
    }

    /// Tracker output rows plus the matching feature sidecar.
    pub fn tracker_output(&self) -> (Vec<MotRow>, FeatureTable) {
        let mut keyed = Vec::new();
        for (t, feats) in self.tracklets.iter().zip(&self.features) {
            for ((&f, b), x) in t.frames.iter().zip(&t.boxes).zip(feats) {
                keyed.push((MotRow::new(f, t.track_id, *b, 1.0), x));
            }
        }
        keyed.sort_by_key(|(r, _)| (r.frame, r.id));
        let mut rows: Vec<MotRow> = keyed.iter().map(|(r, _)| r.clone()).collect();
        crate::mot::reindex(&mut rows);
        let mut table = FeatureTable::new();
        for (r, (_, x)) in rows.iter().zip(&keyed) {
            table.insert(r.frame, r.index, (*x).clone());
        }
        (rows, table)
    }

    pub fn gt_rows(&self) -> Vec<MotRow> {
        self.scene.to_rows()
    }

    /// Number of identity changes inside tracklets.
    pub fn switch_count(&self) -> usize {
        self.tracklets
            .iter()
            .map(|t| t.gt_ids.windows(2).filter(|w| w[0] != w[1]).count())
            .sum()
    }
}

/// Simulates sequence `index` of a corpus with IOU threshold `theta`.
pub fn generate_sequence(seed: u64, index: u32, cfg: &SynthConfig, theta: f64) -> Result<Sequence> {
    cfg.validate()?;
    let mut scene = generate_scene_indexed(seed, index, &cfg.scene)?;
    let mut rng = rng::substream(seed, Stream::Synth, index.wrapping_add(1 << 30));
    if cfg.noise.flip && rng.random_bool(0.5) {
        scene.flip_horizontal();
    }
    let dets = detect(&scene, &cfg.noise, seed, index)?;
    let tracker = IouTrackerConfig {
        threshold: theta,
        ..cfg.tracker
    };
    let tracklets = iou_track(&dets, &tracker)?;
    let features = tracklets
        .iter()
        .map(|t| make_features(t, &scene, &cfg.features, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        scene,
        detections: dets,
        tracklets,
        features,
    })
}

/// Training sequences use substreams `0..n` and cycle the training thresholds.
pub fn training_sequences(seed: u64, cfg: &SynthConfig) -> Result<Vec<Sequence>> {
    (0..cfg.train_sequences as u32)
        .map(|i| generate_sequence(seed, i, cfg, cfg.threshold_for(i)))
        .collect()
}

/// Test sequences use a disjoint substream range and the tracker's own threshold.
pub fn test_sequences(seed: u64, cfg: &SynthConfig) -> Result<Vec<Sequence>> {
    (0..cfg.test_sequences as u32)
        .map(|i| generate_sequence(seed, 1_000_000 + i, cfg, cfg.tracker.threshold))
        .collect()
}

/// Cuts every tracklet of length ≥ 2 into windows of at most `window`
/// frames with stride `window / 2`.
pub fn splitter_windows(seqs: &[Sequence], window: usize) -> Result<Vec<SplitterWindow>> {
    let stride = (window / 2).max(1);
    let mut out = Vec::new();
    for s in seqs {
        for (t, feats) in s.tracklets.iter().zip(&s.features) {
            let n = t.len();
            if n < 2 {
                continue;
            }
            let mut start = 0;
            loop {
                let end = (start + window).min(n);
                let mask = label_switch_mask(&t.gt_ids[start..end])?;
                out.push(SplitterWindow {
                    features: feats[start..end].to_vec(),
                    frames: t.frames[start..end].to_vec(),
                    m_star: mask.values,
                });
                if end == n {
                    break;
                }
                start += stride;
            }
        }
    }
    Ok(out)
}

/// Single-identity runs of length ≥ `min_len`, labelled with an identity
/// unique across sequences (`sequence * 100_000 + gt_id`).
pub fn connector_samples(seqs: &[Sequence], min_len: usize, first_sequence: u64) -> Vec<ConnectorSample> {
    let mut out = Vec::new();
    for (si, s) in seqs.iter().enumerate() {
        for (t, feats) in s.tracklets.iter().zip(&s.features) {
            let mut lo = 0;
            while lo < t.len() {
                let mut hi = lo + 1;
                while hi < t.len() && t.gt_ids[hi] == t.gt_ids[lo] {
                    hi += 1;
                }
                let gid = t.gt_ids[lo];
                if gid != FALSE_POSITIVE && hi - lo >= min_len {
                    out.push(ConnectorSample {
                        features: feats[lo..hi].to_vec(),
                        frames: t.frames[lo..hi].to_vec(),
                        identity: (first_sequence + si as u64) * 100_000 + gid as u64,
                    });
                }
                lo = hi;
            }
        }
    }
    out
}

/// Summary counts of a generated corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sequences: usize,
    pub tracklets: usize,
    pub tracklets_with_switch: usize,
    pub switches: usize,
    pub detections: usize,
}

pub fn corpus_stats(seqs: &[Sequence]) -> CorpusStats {
    let mut s = CorpusStats {
        sequences: seqs.len(),
        ..Default::default()
    };
    for q in seqs {
        s.tracklets += q.tracklets.len();
        s.switches += q.switch_count();
        s.detections += q.tracklets.iter().map(AnnotatedTracklet::len).sum::<usize>();
        s.tracklets_with_switch += q
            .tracklets
            .iter()
            .filter(|t| t.gt_ids.windows(2).any(|w| w[0] != w[1]))
            .count();
    }
    s
}

/// Per-identity ground-truth trajectories keyed by id, for quick lookups.
pub fn gt_index(scene: &SceneGroundTruth) -> BTreeMap<i64, &IdentityTrack> {
    scene.identities.iter().map(|t| (t.id, t)).collect()
}
