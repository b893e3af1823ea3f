//! Identity-switch localization with stacked dilated temporal convolutions.
//!
//! A pointwise stem lifts the `K×T` window to `C` channels. Each block applies
//! a kernel-3 dilated convolution, a pointwise convolution and a ReLU, and adds
//! its input back. Per-boundary features (means of adjacent frames) feed two
//! fully connected heads: the switch probability `m̂` (sigmoid) and the label
//! smoothing width `σ̂` (softplus).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::params::{ParamId, ParamStore};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tracklet::{MaskKind, SwitchMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitterConfig {
    pub num_blocks: usize,
    pub channels: usize,
    pub window: usize,
    pub feature_dim: usize,
    /// Lower clamp `ε` for the smoothing width.
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    /// Dilations assigned to blocks, repeated cyclically.
    pub dilation_cycle: Vec<usize>,
}

impl Default for SplitterConfig {
    fn default() -> Self {
        Self {
            num_blocks: 24,
            channels: 64,
            window: 65,
            feature_dim: 36,
            sigma_lo: 0.001,
            sigma_hi: 10.0,
            dilation_cycle: vec![1, 2, 4, 8],
        }
    }
}

impl SplitterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("splitter config: {m}")));
        if self.num_blocks < 1 {
            return bad("num_blocks must be at least 1");
        }
        if self.window < 3 {
            return bad("window must be at least 3");
        }
        if self.channels < 1 {
            return bad("channels must be positive");
        }
        if self.feature_dim < 5 {
            return bad("feature_dim must be at least 5");
        }
        if !(self.sigma_lo > 0.0) || !(self.sigma_hi > self.sigma_lo) {
            return bad("need 0 < sigma_lo < sigma_hi");
        }
        if self.dilation_cycle.is_empty() || self.dilation_cycle.contains(&0) {
            return bad("dilations must be positive");
        }
        Ok(())
    }

    pub fn dilation(&self, block: usize) -> usize {
        self.dilation_cycle[block % self.dilation_cycle.len()]
    }

    /// Frames visible to one output position: `1 + 2 Σ dilation`.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * (0..self.num_blocks).map(|b| self.dilation(b)).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitterOutput {
    pub m_hat: SwitchMask,
    pub sigma_hat: Vec<f32>,
}

#[derive(Debug, Clone)]
struct BlockIds {
    dconv_w: ParamId,
    dconv_b: ParamId,
    pconv_w: ParamId,
    pconv_b: ParamId,
}

#[derive(Debug, Clone)]
struct SplitterIds {
    stem_w: ParamId,
    stem_b: ParamId,
    blocks: Vec<BlockIds>,
    mask_w: ParamId,
    mask_b: ParamId,
    sigma_w: ParamId,
    sigma_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Splitter<S: Scalar> {
    pub cfg: SplitterConfig,
    pub params: ParamStore<S>,
    ids: SplitterIds,
}

impl<S: Scalar> Splitter<S> {
    /// Fan-in uniform weights, zero biases.
    pub fn new(cfg: SplitterConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, Stream::Init);
        let (k, c) = (cfg.feature_dim, cfg.channels);
        let mut p = ParamStore::new();
        p.add_fan_in("stem.weight", &[c, k], k, &mut rng);
        p.add_zeros("stem.bias", &[c]);
        for b in 0..cfg.num_blocks {
            p.add_fan_in(format!("block.{b}.dconv.weight"), &[c, c, 3], 3 * c, &mut rng);
            p.add_zeros(format!("block.{b}.dconv.bias"), &[c]);
            p.add_fan_in(format!("block.{b}.pconv.weight"), &[c, c], c, &mut rng);
            p.add_zeros(format!("block.{b}.pconv.bias"), &[c]);
        }
        p.add_fan_in("head.mask.weight", &[1, c], c, &mut rng);
        p.add_zeros("head.mask.bias", &[1]);
        p.add_fan_in("head.sigma.weight", &[1, c], c, &mut rng);
        p.add_zeros("head.sigma.bias", &[1]);
        Self::from_params(p, cfg)
    }

    /// Rebuilds a model from stored parameters. Architecture sizes are taken
    /// from the tensors; `cfg` supplies window, clamps and dilations.
    pub fn from_params(params: ParamStore<S>, mut cfg: SplitterConfig) -> Result<Self> {
        let stem_w = params.require("stem.weight")?;
        let &[c, k] = params.value(stem_w).shape() else {
            return Err(Error::Checkpoint("stem.weight must be a matrix".into()));
        };
        let mut blocks = Vec::new();
        while let Some(dconv_w) = params.find(&format!("block.{}.dconv.weight", blocks.len())) {
            let b = blocks.len();
            blocks.push(BlockIds {
                dconv_w,
                dconv_b: params.require(&format!("block.{b}.dconv.bias"))?,
                pconv_w: params.require(&format!("block.{b}.pconv.weight"))?,
                pconv_b: params.require(&format!("block.{b}.pconv.bias"))?,
            });
        }
        cfg.channels = c;
        cfg.feature_dim = k;
        cfg.num_blocks = blocks.len();
        cfg.validate()?;
        let ids = SplitterIds {
            stem_w,
            stem_b: params.require("stem.bias")?,
            blocks,
            mask_w: params.require("head.mask.weight")?,
            mask_b: params.require("head.mask.bias")?,
            sigma_w: params.require("head.sigma.weight")?,
            sigma_b: params.require("head.sigma.bias")?,
        };
        let expect = |id: ParamId, shape: &[usize]| -> Result<()> {
            let got = params.value(id).shape();
            if got != shape {
                return Err(Error::Checkpoint(format!(
                    "`{}` has shape {got:?}, expected {shape:?}",
                    params.get(id).name
                )));
            }
            Ok(())
        };
        expect(ids.stem_b, &[c])?;
        for b in &ids.blocks {
            expect(b.dconv_w, &[c, c, 3])?;
            expect(b.dconv_b, &[c])?;
            expect(b.pconv_w, &[c, c])?;
            expect(b.pconv_b, &[c])?;
        }
        expect(ids.mask_w, &[1, c])?;
        expect(ids.sigma_w, &[1, c])?;
        expect(ids.mask_b, &[1])?;
        expect(ids.sigma_b, &[1])?;
        Ok(Self { cfg, params, ids })
    }

    /// Builds the forward pass for `x: K×T`, returning `(m̂, σ̂)` as `1×(T-1)`.
    pub fn forward(&self, g: &mut Graph<S>, x: Var) -> Result<(Var, Var)> {
        let (k, t) = g.value(x).dims2("splitter_forward")?;
        if k != self.cfg.feature_dim {
            return Err(Error::Shape {
                op: "splitter_forward",
                detail: format!("feature dim {k}, model expects {}", self.cfg.feature_dim),
            });
        }
        if t < 2 {
            return Err(Error::Shape {
                op: "splitter_forward",
                detail: "need at least two frames".into(),
            });
        }
        let p = &self.params;
        let ids = &self.ids;
        let w = g.param(p, ids.stem_w);
        let b = g.param(p, ids.stem_b);
        let h = g.matmul(w, x)?;
        let mut h = g.bias_cols(h, b)?;
        for (i, blk) in ids.blocks.iter().enumerate() {
            let dw = g.param(p, blk.dconv_w);
            let db = g.param(p, blk.dconv_b);
            let pw = g.param(p, blk.pconv_w);
            let pb = g.param(p, blk.pconv_b);
            let y = g.conv1d(h, dw, self.cfg.dilation(i))?;
            let y = g.bias_cols(y, db)?;
            let y = g.matmul(pw, y)?;
            let y = g.bias_cols(y, pb)?;
            let y = g.relu(y)?;
            h = g.add(h, y)?;
        }
        let boundary = g.pair_mean_cols(h)?;
        let mw = g.param(p, ids.mask_w);
        let mb = g.param(p, ids.mask_b);
        let m = g.matmul(mw, boundary)?;
        let m = g.bias_cols(m, mb)?;
        let m = g.sigmoid(m)?;
        let sw = g.param(p, ids.sigma_w);
        let sb = g.param(p, ids.sigma_b);
        let s = g.matmul(sw, boundary)?;
        let s = g.bias_cols(s, sb)?;
        let s = g.softplus(s)?;
        Ok((m, s))
    }

    /// Forward pass on a feature matrix of any length `T ≥ 2`.
    pub fn predict(&self, features: &Tensor<S>) -> Result<SplitterOutput> {
        let mut g = Graph::new();
        let x = g.input(features.clone(), false)?;
        let (m, s) = self.forward(&mut g, x)?;
        let m_hat = g.value(m).data().iter().map(|v| v.as_f64() as f32).collect();
        let sigma_hat = g.value(s).data().iter().map(|v| v.as_f64() as f32).collect();
        Ok(SplitterOutput {
            m_hat: SwitchMask::predicted(m_hat)?,
            sigma_hat,
        })
    }

    /// Prediction over a window of at most `cfg.window` frames, padded by
    /// frame replication; returns the masks for the real boundaries only.
    pub fn predict_window(&self, frames: &[Vec<f32>]) -> Result<SplitterOutput> {
        let padded = pad_window(frames, self.cfg.window)?;
        let x = padded.matrix::<S>()?;
        let out = self.predict(&x)?;
        let r = padded.real_boundaries();
        Ok(SplitterOutput {
            m_hat: SwitchMask::predicted(out.m_hat.values[r.clone()].to_vec())?,
            sigma_hat: out.sigma_hat[r].to_vec(),
        })
    }
}

/// `min(Σ_τ m*_τ exp(-(τ-t)²/σ̃_τ²), 1)` for already clamped widths `σ̃`.
pub fn smooth_labels(m_star: &SwitchMask, sigma_tilde: &[f64]) -> Result<Vec<f64>> {
    if m_star.len() != sigma_tilde.len() {
        return Err(Error::Shape {
            op: "smooth_labels",
            detail: format!("mask length {} vs sigma length {}", m_star.len(), sigma_tilde.len()),
        });
    }
    if sigma_tilde.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("smoothing widths must be positive".into()));
    }
    let m: Vec<f64> = m_star.values.iter().map(|&v| v as f64).collect();
    Ok(crate::autograd::smooth_labels_f64(&m, sigma_tilde, f64::MIN_POSITIVE, f64::INFINITY))
}

/// Adaptive Gaussian-smoothed squared error on graph variables.
pub fn splitter_loss<S: Scalar>(
    g: &mut Graph<S>,
    m_hat: Var,
    sigma_hat: Var,
    m_star: &[f64],
    valid: &[bool],
    cfg: &SplitterConfig,
) -> Result<Var> {
    g.smooth_mse(m_hat, sigma_hat, m_star, valid, cfg.sigma_lo, cfg.sigma_hi)
}

/// Unsmoothed squared error against the binary mask.
pub fn baseline_hard_loss<S: Scalar>(g: &mut Graph<S>, m_hat: Var, m_star: &[f64], valid: &[bool]) -> Result<Var> {
    g.hard_mse(m_hat, m_star, valid)
}

/// [`splitter_loss`] on plain outputs, every boundary counted.
pub fn splitter_loss_value(out: &SplitterOutput, m_star: &SwitchMask, cfg: &SplitterConfig) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let n = out.m_hat.len();
    let m = g.input(vec_tensor(&out.m_hat.values)?, false)?;
    let s = g.input(vec_tensor(&out.sigma_hat)?, false)?;
    let target: Vec<f64> = m_star.values.iter().map(|&v| v as f64).collect();
    let l = splitter_loss(&mut g, m, s, &target, &vec![true; n], cfg)?;
    Ok(g.value(l).data()[0])
}

pub fn baseline_hard_loss_value(out: &SplitterOutput, m_star: &SwitchMask) -> Result<f64> {
    if out.m_hat.len() != m_star.len() {
        return Err(Error::Shape {
            op: "baseline_hard_loss",
            detail: "length mismatch".into(),
        });
    }
    Ok(out
        .m_hat
        .values
        .iter()
        .zip(&m_star.values)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum())
}

fn vec_tensor(v: &[f32]) -> Result<Tensor<f64>> {
    Tensor::new(vec![1, v.len().max(1)], v.iter().map(|&x| x as f64).collect())
}

/// A window padded to a fixed length by replicating its first and last frames.
#[derive(Debug, Clone)]
pub struct PaddedWindow {
    pub frames: Vec<Vec<f32>>,
    /// Position of the first real frame.
    pub offset: usize,
    /// Number of real frames.
    pub len: usize,
}

impl PaddedWindow {
    pub fn matrix<S: Scalar>(&self) -> Result<Tensor<S>> {
        crate::tracklet::feature_matrix(&self.frames)
    }

    /// Boundary indices (into the padded mask) lying between two real frames.
    pub fn real_boundaries(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len.saturating_sub(1)
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        let r = self.real_boundaries();
        (0..self.frames.len() - 1).map(|b| r.contains(&b)).collect()
    }

    /// Places a real-boundary mask into padded coordinates; padding gets 0.
    pub fn pad_mask(&self, m: &[f32]) -> Vec<f64> {
        let mut out = vec![0.0; self.frames.len() - 1];
        for (i, &v) in m.iter().enumerate() {
            out[self.offset + i] = v as f64;
        }
        out
    }
}

/// Centers `frames` in a window of length `window`; shorter inputs are padded
/// with copies of the first frame before and the last frame after.
pub fn pad_window(frames: &[Vec<f32>], window: usize) -> Result<PaddedWindow> {
    let n = frames.len();
    if n == 0 || n > window {
        return Err(Error::InvalidArgument(format!("window of {n} frames does not fit length {window}")));
    }
    let front = (window - n) / 2;
    let back = window - n - front;
    let mut out = Vec::with_capacity(window);
    out.extend(std::iter::repeat_n(frames[0].clone(), front));
    out.extend(frames.iter().cloned());
    out.extend(std::iter::repeat_n(frames[n - 1].clone(), back));
    Ok(PaddedWindow {
        frames: out,
        offset: front,
        len: n,
    })
}

/// One training window: per-frame features and the switch mask over its boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitterWindow {
    pub features: Vec<Vec<f32>>,
    pub frames: Vec<i64>,
    pub m_star: Vec<f32>,
}

impl SplitterWindow {
    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if n < 2 || self.features.len() != n || self.m_star.len() != n - 1 {
            return Err(Error::InvalidArgument(format!(
                "window with {n} frames, {} feature rows and {} mask entries",
                self.features.len(),
                self.m_star.len()
            )));
        }
        if self.m_star.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("m_star must be binary".into()));
        }
        Ok(())
    }

    pub fn has_switch(&self) -> bool {
        self.m_star.iter().any(|&v| v > 0.5)
    }

    pub fn ground_truth(&self) -> SwitchMask {
        SwitchMask {
            values: self.m_star.clone(),
            kind: MaskKind::GroundTruth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitterLossKind {
    /// Adaptive Gaussian-smoothed labels.
    Adaptive,
    /// Binary labels, plain squared error.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitterTrainConfig {
    pub iterations: u64,
    pub lr: f64,
    pub batch_size: usize,
    /// Share of each batch drawn from windows that contain a switch.
    pub positive_fraction: f64,
    pub loss: SplitterLossKind,
    /// Not serialized; runs take it from the global seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SplitterTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 60_000,
            lr: 0.001,
            batch_size: 8,
            positive_fraction: 0.5,
            loss: SplitterLossKind::Adaptive,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitterTraining {
    pub model: Splitter<f32>,
    /// Mean per-window loss of every iteration.
    pub losses: Vec<f64>,
}

/// Window loss on a graph; a window longer than the model window is cropped at `crop`.
fn window_loss<S: Scalar>(
    model: &Splitter<S>,
    g: &mut Graph<S>,
    w: &SplitterWindow,
    crop: usize,
    kind: SplitterLossKind,
) -> Result<Var> {
    let t = model.cfg.window;
    let hi = (crop + t).min(w.frames.len());
    let padded = pad_window(&w.features[crop..hi], t)?;
    let x = g.input(padded.matrix()?, false)?;
    let (m, s) = model.forward(g, x)?;
    let target = padded.pad_mask(&w.m_star[crop..hi - 1]);
    let valid = padded.valid_mask();
    match kind {
        SplitterLossKind::Adaptive => splitter_loss(g, m, s, &target, &valid, &model.cfg),
        SplitterLossKind::Hard => baseline_hard_loss(g, m, &target, &valid),
    }
}

/// Mean per-window loss of `model` over `windows`.
pub fn evaluate_loss<S: Scalar>(model: &Splitter<S>, windows: &[SplitterWindow], kind: SplitterLossKind) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset("no evaluation windows".into()));
    }
    let mut total = 0.0;
    for w in windows {
        let mut g = Graph::new();
        let l = window_loss(model, &mut g, w, 0, kind)?;
        total += g.value(l).data()[0].as_f64();
    }
    Ok(total / windows.len() as f64)
}

pub fn train_splitter(
    dataset: &[SplitterWindow],
    cfg: &SplitterConfig,
    train: &SplitterTrainConfig,
) -> Result<SplitterTraining> {
    let model = Splitter::<f32>::new(cfg.clone(), train.seed)?;
    train_splitter_from(model, dataset, train)
}

/// Continues training an existing model.
pub fn train_splitter_from(
    model: Splitter<f32>,
    dataset: &[SplitterWindow],
    train: &SplitterTrainConfig,
) -> Result<SplitterTraining> {
    train_splitter_observed(model, dataset, train, |_, _, _| {})
}

/// Training loop that calls `observe(iteration, model, batch_loss)` after every step.
pub fn train_splitter_observed(
    mut model: Splitter<f32>,
    dataset: &[SplitterWindow],
    train: &SplitterTrainConfig,
    mut observe: impl FnMut(u64, &Splitter<f32>, f64),
) -> Result<SplitterTraining> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("splitter training set is empty".into()));
    }
    for w in dataset {
        w.validate()?;
        if w.features[0].len() != model.cfg.feature_dim {
            return Err(Error::InvalidArgument(format!(
                "window feature dim {} does not match model {}",
                w.features[0].len(),
                model.cfg.feature_dim
            )));
        }
    }
    if train.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let positives: Vec<usize> = (0..dataset.len()).filter(|&i| dataset[i].has_switch()).collect();
    let negatives: Vec<usize> = (0..dataset.len()).filter(|&i| !dataset[i].has_switch()).collect();
    let mut rng = rng::stream(train.seed, Stream::Batch);
    let mut opt = OptimizerState::new(&model.params, train.lr, train.iterations);
    let mut losses = Vec::with_capacity(train.iterations as usize);
    for it in 0..train.iterations {
        model.params.zero_grads();
        let mut g = Graph::new();
        let mut terms = Vec::with_capacity(train.batch_size);
        for _ in 0..train.batch_size {
            let from_pos = !positives.is_empty()
                && (negatives.is_empty() || rng.random_bool(train.positive_fraction.clamp(0.0, 1.0)));
            let pool = if from_pos { &positives } else { &negatives };
            let w = &dataset[pool[rng.random_range(0..pool.len())]];
            let slack = w.frames.len().saturating_sub(model.cfg.window);
            let crop = if slack > 0 { rng.random_range(0..=slack) } else { 0 };
            terms.push(window_loss(&model, &mut g, w, crop, train.loss)?);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t)?;
        }
        let loss = g.scale(total, 1.0 / train.batch_size as f32)?;
        let value = g.value(loss).data()[0] as f64;
        losses.push(value);
        g.backward(loss)?.accumulate_into(&mut model.params);
        opt.step(&mut model.params)?;
        observe(it, &model, value);
    }
    Ok(SplitterTraining { model, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SplitterConfig {
        SplitterConfig {
            num_blocks: 3,
            channels: 4,
            window: 9,
            feature_dim: 6,
            ..SplitterConfig::default()
        }
    }

    fn zero_heads(model: &mut Splitter<f64>) {
        for name in ["head.mask.weight", "head.sigma.weight"] {
            let id = model.params.require(name).unwrap();
            model.params.get_mut(id).value.data_mut().fill(0.0);
        }
    }

    #[test]
    fn zero_heads_give_constant_outputs() {
        let mut model = Splitter::<f64>::new(tiny_cfg(), 3).unwrap();
        zero_heads(&mut model);
        let x = Tensor::new(vec![6, 9], (0..54).map(|v| (v as f64).sin()).collect()).unwrap();
        let out = model.predict(&x).unwrap();
        assert_eq!(out.m_hat.len(), 8);
        assert_eq!(out.sigma_hat.len(), 8);
        assert!(out.m_hat.values.iter().all(|&v| v == 0.5));
        let sp0 = 2f64.ln() as f32;
        assert!(out.sigma_hat.iter().all(|&v| (v - sp0).abs() < 1e-7));
    }

    #[test]
    fn default_receptive_field_covers_window() {
        let cfg = SplitterConfig::default();
        // 6 cycles of (1+2+4+8) → 1 + 2·90
        assert_eq!(cfg.receptive_field(), 181);
        assert!(cfg.receptive_field() >= cfg.window);
    }

    #[test]
    fn rejects_wrong_feature_dim() {
        let model = Splitter::<f32>::new(tiny_cfg(), 0).unwrap();
        assert!(model.predict(&Tensor::zeros(&[5, 9])).is_err());
    }

    #[test]
    fn smooth_label_cases() {
        let zeros = SwitchMask::ground_truth(vec![0.0; 10]).unwrap();
        assert!(smooth_labels(&zeros, &[2.0; 10]).unwrap().iter().all(|&v| v == 0.0));

        let mut m = vec![0.0; 10];
        m[5] = 1.0;
        let one = SwitchMask::ground_truth(m).unwrap();
        let l = smooth_labels(&one, &[2.0; 10]).unwrap();
        assert_eq!(l[5], 1.0);
        assert!((l[6] - (-0.25f64).exp()).abs() < 1e-12);
        assert!((l[3] - (-1f64).exp()).abs() < 1e-12);

        let mut m = vec![0.0; 12];
        m[5] = 1.0;
        m[6] = 1.0;
        let two = SwitchMask::ground_truth(m).unwrap();
        let l = smooth_labels(&two, &[10.0; 12]).unwrap();
        assert_eq!(l[5], 1.0);
        assert_eq!(l[6], 1.0);
        assert!(l.iter().all(|&v| (0.0..=1.0).contains(&v)));

        assert!(smooth_labels(&two, &[1.0; 3]).is_err());
    }

    #[test]
    fn tiny_sigma_reproduces_hard_mask() {
        let mut m = vec![0.0; 20];
        m[4] = 1.0;
        m[11] = 1.0;
        let mask = SwitchMask::ground_truth(m.clone()).unwrap();
        let l = smooth_labels(&mask, &[0.001; 20]).unwrap();
        for (a, b) in l.iter().zip(&m) {
            assert!((a - *b as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn loss_examples() {
        let cfg = SplitterConfig::default();
        let half = SplitterOutput {
            m_hat: SwitchMask::predicted(vec![0.5; 64]).unwrap(),
            sigma_hat: vec![1.0; 64],
        };
        let zeros = SwitchMask::ground_truth(vec![0.0; 64]).unwrap();
        assert_eq!(splitter_loss_value(&half, &zeros, &cfg).unwrap(), 16.0);

        let mut one = vec![0.0; 64];
        one[10] = 1.0;
        let one = SwitchMask::ground_truth(one).unwrap();
        assert_eq!(baseline_hard_loss_value(&half, &one).unwrap(), 16.0);

        // prediction equal to its own smoothed labels has zero loss
        let sig = vec![3.0f64; 64];
        let labels = smooth_labels(&one, &sig).unwrap();
        let exact = SplitterOutput {
            m_hat: SwitchMask::predicted(labels.iter().map(|&v| v as f32).collect()).unwrap(),
            sigma_hat: vec![3.0; 64],
        };
        assert!(splitter_loss_value(&exact, &one, &cfg).unwrap() < 1e-12);

        // at σ̃ = ε the smoothed loss collapses to the hard loss
        let tiny = SplitterOutput {
            m_hat: half.m_hat.clone(),
            sigma_hat: vec![1e-6; 64],
        };
        let a = splitter_loss_value(&tiny, &one, &cfg).unwrap();
        let b = baseline_hard_loss_value(&tiny, &one).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn padding_replicates_ends() {
        let frames: Vec<Vec<f32>> = (0..3).map(|i| vec![i as f32; 5]).collect();
        let p = pad_window(&frames, 8).unwrap();
        assert_eq!(p.offset, 2);
        assert_eq!(p.frames.len(), 8);
        assert_eq!(p.frames[0], frames[0]);
        assert_eq!(p.frames[7], frames[2]);
        assert_eq!(p.real_boundaries(), 2..4);
        assert_eq!(p.pad_mask(&[1.0, 0.0]), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(pad_window(&frames, 2).is_err());
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let cfg = tiny_cfg();
        let w = SplitterWindow {
            features: vec![vec![0.1; 6]; 5],
            frames: (0..5).collect(),
            m_star: vec![0.0, 1.0, 0.0, 0.0],
        };
        let train = SplitterTrainConfig {
            iterations: 0,
            seed: 9,
            ..Default::default()
        };
        let out = train_splitter(&[w], &cfg, &train).unwrap();
        let init = Splitter::<f32>::new(cfg, 9).unwrap();
        assert_eq!(out.model.params, init.params);
        assert!(train_splitter(&[], &tiny_cfg(), &train).is_err());
    }
}
