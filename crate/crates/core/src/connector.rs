//! Tracklet embedding with a multi-head self-attention encoder.
//!
//! Features enter as `K×T` and are handled internally as `T×D` rows (one row
//! per frame). Every encoder layer is MSA → residual + layer norm →
//! feed-forward (D → 2D → D, ReLU) → residual + layer norm. No positional
//! encoding is used, so the pooled embedding ignores frame order.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::params::{ParamId, ParamStore};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tracklet::feature_matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConnectorConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub feature_dim: usize,
    /// Triplet margin `α`.
    pub margin: f64,
    /// Weight `λ` of the triplet term.
    pub lambda: f64,
    /// Classifier width; the number of training identities.
    pub num_classes: usize,
}

impl Default for ConnectorConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 4,
            model_dim: 64,
            feature_dim: 36,
            margin: 0.2,
            lambda: 0.5,
            num_classes: 1,
        }
    }
}

impl ConnectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("connector config: {m}")));
        if self.layers < 1 || self.heads < 1 || self.model_dim < 1 {
            return bad("layers, heads and model_dim must be positive");
        }
        if self.model_dim % self.heads != 0 {
            return bad("model_dim must be divisible by heads");
        }
        if self.feature_dim < 5 {
            return bad("feature_dim must be at least 5");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.num_classes < 1 {
            return bad("num_classes must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub heads: Vec<HeadParams>,
    pub wo: ParamId,
    pub ln1: (ParamId, ParamId),
    pub ff1: (ParamId, ParamId),
    pub ff2: (ParamId, ParamId),
    pub ln2: (ParamId, ParamId),
}

/// Unit-norm tracklet embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletEmbedding {
    pub h: Vec<f32>,
}

impl TrackletEmbedding {
    pub fn distance(&self, other: &TrackletEmbedding) -> f64 {
        self.h
            .iter()
            .zip(&other.h)
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Mean of several embeddings, renormalized.
    pub fn average(parts: &[TrackletEmbedding]) -> Result<TrackletEmbedding> {
        let d = parts.first().map_or(0, |p| p.h.len());
        let mut acc = vec![0.0f64; d];
        for p in parts {
            acc.iter_mut().zip(&p.h).for_each(|(a, &v)| *a += v as f64);
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-12) {
            return Err(Error::Degenerate("averaged embedding has zero norm".into()));
        }
        Ok(TrackletEmbedding {
            h: acc.iter().map(|v| (v / norm) as f32).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Connector<S: Scalar> {
    pub cfg: ConnectorConfig,
    pub params: ParamStore<S>,
    input: (ParamId, ParamId),
    layers: Vec<EncoderLayerParams>,
    classifier: ParamId,
}

/// Intermediate tensors of one encoder pass.
pub struct EncoderTrace {
    /// Final layer output, `T×D`.
    pub z: Var,
    /// Attention matrices per layer and head, each `T×T`.
    pub attention: Vec<Vec<Var>>,
}

impl<S: Scalar> Connector<S> {
    pub fn new(cfg: ConnectorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, Stream::Init);
        let (k, d, dh) = (cfg.feature_dim, cfg.model_dim, cfg.head_dim());
        let mut p = ParamStore::new();
        p.add_fan_in("input.weight", &[k, d], k, &mut rng);
        p.add_zeros("input.bias", &[d]);
        for l in 0..cfg.layers {
            for h in 0..cfg.heads {
                for w in ["wq", "wk", "wv"] {
                    p.add_fan_in(format!("layer.{l}.attn.head.{h}.{w}"), &[d, dh], d, &mut rng);
                }
            }
            p.add_fan_in(format!("layer.{l}.attn.wo"), &[d, d], d, &mut rng);
            p.add_full(format!("layer.{l}.ln1.gain"), &[d], S::one());
            p.add_zeros(format!("layer.{l}.ln1.bias"), &[d]);
            p.add_fan_in(format!("layer.{l}.ff1.weight"), &[d, 2 * d], d, &mut rng);
            p.add_zeros(format!("layer.{l}.ff1.bias"), &[2 * d]);
            p.add_fan_in(format!("layer.{l}.ff2.weight"), &[2 * d, d], 2 * d, &mut rng);
            p.add_zeros(format!("layer.{l}.ff2.bias"), &[d]);
            p.add_full(format!("layer.{l}.ln2.gain"), &[d], S::one());
            p.add_zeros(format!("layer.{l}.ln2.bias"), &[d]);
        }
        p.add_fan_in("classifier.weight", &[d, cfg.num_classes], d, &mut rng);
        Self::from_params(p, cfg)
    }

    /// Rebuilds a model from stored parameters; sizes, layer and head counts
    /// come from the tensors, `cfg` supplies the loss settings.
    pub fn from_params(params: ParamStore<S>, mut cfg: ConnectorConfig) -> Result<Self> {
        let iw = params.require("input.weight")?;
        let &[k, d] = params.value(iw).shape() else {
            return Err(Error::Checkpoint("input.weight must be a matrix".into()));
        };
        let mut layers = Vec::new();
        while params.find(&format!("layer.{}.attn.wo", layers.len())).is_some() {
            let l = layers.len();
            let mut heads = Vec::new();
            while let Some(wq) = params.find(&format!("layer.{l}.attn.head.{}.wq", heads.len())) {
                let h = heads.len();
                heads.push(HeadParams {
                    wq,
                    wk: params.require(&format!("layer.{l}.attn.head.{h}.wk"))?,
                    wv: params.require(&format!("layer.{l}.attn.head.{h}.wv"))?,
                });
            }
            let pair = |a: &str, b: &str| -> Result<(ParamId, ParamId)> {
                Ok((params.require(&format!("layer.{l}.{a}"))?, params.require(&format!("layer.{l}.{b}"))?))
            };
            layers.push(EncoderLayerParams {
                heads,
                wo: params.require(&format!("layer.{l}.attn.wo"))?,
                ln1: pair("ln1.gain", "ln1.bias")?,
                ff1: pair("ff1.weight", "ff1.bias")?,
                ff2: pair("ff2.weight", "ff2.bias")?,
                ln2: pair("ln2.gain", "ln2.bias")?,
            });
        }
        let classifier = params.require("classifier.weight")?;
        let &[cd, c] = params.value(classifier).shape() else {
            return Err(Error::Checkpoint("classifier.weight must be a matrix".into()));
        };
        if cd != d || layers.is_empty() || layers.iter().any(|l| l.heads.len() != layers[0].heads.len()) {
            return Err(Error::Checkpoint("inconsistent connector parameters".into()));
        }
        cfg.feature_dim = k;
        cfg.model_dim = d;
        cfg.layers = layers.len();
        cfg.heads = layers[0].heads.len();
        cfg.num_classes = c;
        cfg.validate()?;
        let dh = cfg.head_dim();
        for l in &layers {
            for h in &l.heads {
                for id in [h.wq, h.wk, h.wv] {
                    if params.value(id).shape() != [d, dh] {
                        return Err(Error::Checkpoint("attention projection shape mismatch".into()));
                    }
                }
            }
        }
        Ok(Self {
            cfg,
            input: (iw, params.require("input.bias")?),
            params,
            layers,
            classifier,
        })
    }

    /// Encoder pass for `x: K×T`.
    pub fn encode(&self, g: &mut Graph<S>, x: Var) -> Result<EncoderTrace> {
        let (k, _) = g.value(x).dims2("encoder_forward")?;
        if k != self.cfg.feature_dim {
            return Err(Error::Shape {
                op: "encoder_forward",
                detail: format!("feature dim {k}, model expects {}", self.cfg.feature_dim),
            });
        }
        let p = &self.params;
        let rows = g.transpose(x)?;
        let w = g.param(p, self.input.0);
        let b = g.param(p, self.input.1);
        let z = g.matmul(rows, w)?;
        let mut z = g.bias_rows(z, b)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut outs = Vec::with_capacity(layer.heads.len());
            let mut maps = Vec::with_capacity(layer.heads.len());
            for head in &layer.heads {
                let (wq, wk, wv) = (g.param(p, head.wq), g.param(p, head.wk), g.param(p, head.wv));
                let (sa, a) = attend(g, z, wq, wk, wv)?;
                outs.push(sa);
                maps.push(a);
            }
            let cat = g.concat_cols(&outs)?;
            let wo = g.param(p, layer.wo);
            let msa = g.matmul(cat, wo)?;
            let r = g.add(z, msa)?;
            let (lg, lb) = (g.param(p, layer.ln1.0), g.param(p, layer.ln1.1));
            let y = g.layer_norm_rows(r, lg, lb)?;
            let (w1, b1) = (g.param(p, layer.ff1.0), g.param(p, layer.ff1.1));
            let (w2, b2) = (g.param(p, layer.ff2.0), g.param(p, layer.ff2.1));
            let f = g.matmul(y, w1)?;
            let f = g.bias_rows(f, b1)?;
            let f = g.relu(f)?;
            let f = g.matmul(f, w2)?;
            let f = g.bias_rows(f, b2)?;
            let r = g.add(y, f)?;
            let (lg, lb) = (g.param(p, layer.ln2.0), g.param(p, layer.ln2.1));
            z = g.layer_norm_rows(r, lg, lb)?;
            attention.push(maps);
        }
        Ok(EncoderTrace { z, attention })
    }

    /// Pooled, normalized embedding `1×D` and class logits `1×C`.
    pub fn head(&self, g: &mut Graph<S>, z: Var) -> Result<(Var, Var)> {
        let pooled = g.mean_rows(z)?;
        let h = g.l2_normalize_rows(pooled)?;
        let wc = g.param(&self.params, self.classifier);
        let logits = g.matmul(h, wc)?;
        Ok((h, logits))
    }

    /// `z_L` as `D×T`.
    pub fn encoder_forward(&self, features: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let x = g.input(features.clone(), false)?;
        let trace = self.encode(&mut g, x)?;
        g.value(trace.z).transpose()
    }

    pub fn embed_matrix(&self, features: &Tensor<S>) -> Result<TrackletEmbedding> {
        let mut g = Graph::new();
        let x = g.input(features.clone(), false)?;
        let trace = self.encode(&mut g, x)?;
        let (h, _) = self.head(&mut g, trace.z)?;
        Ok(TrackletEmbedding {
            h: g.value(h).data().iter().map(|v| v.as_f64() as f32).collect(),
        })
    }

    pub fn embed(&self, frames: &[Vec<f32>]) -> Result<TrackletEmbedding> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("cannot embed an empty tracklet".into()));
        }
        self.embed_matrix(&feature_matrix(frames)?)
    }

    /// Number of scalar parameters in the attention projections of all layers.
    pub fn attention_param_count(&self) -> usize {
        (0..self.layers.len())
            .map(|l| self.params.count_with_prefix(&format!("layer.{l}.attn.")))
            .sum()
    }
}

/// One self-attention head on `x: T×D` rows; returns `(A v, A)`.
fn attend<S: Scalar>(g: &mut Graph<S>, x: Var, wq: Var, wk: Var, wv: Var) -> Result<(Var, Var)> {
    let dh = g.value(wq).cols();
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, S::of(1.0 / (dh as f64).sqrt()))?;
    let a = g.softmax_rows(scores)?;
    let out = g.matmul(a, v)?;
    Ok((out, a))
}

/// Single-head self-attention on `x: D×T` with projections `D×D_h`; returns `D_h×T`.
pub fn self_attention<S: Scalar>(x: &Tensor<S>, wq: &Tensor<S>, wk: &Tensor<S>, wv: &Tensor<S>) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let xv = g.input(x.clone(), false)?;
    let rows = g.transpose(xv)?;
    let q = g.input(wq.clone(), false)?;
    let k = g.input(wk.clone(), false)?;
    let v = g.input(wv.clone(), false)?;
    let (out, _) = attend(&mut g, rows, q, k, v)?;
    g.value(out).transpose()
}

/// `L_xent + λ · L_triplet` on graph variables: `emb` is `N×D`, `logits` `N×C`.
pub fn connector_loss<S: Scalar>(
    g: &mut Graph<S>,
    emb: Var,
    logits: Var,
    labels: &[usize],
    cfg: &ConnectorConfig,
) -> Result<Var> {
    let trip = g.batch_hard_triplet(emb, labels, cfg.margin)?;
    let xent = g.cross_entropy(logits, labels)?;
    let weighted = g.scale(trip, S::of(cfg.lambda))?;
    g.add(xent, weighted)
}

/// A single-identity tracklet used for connector training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorSample {
    pub features: Vec<Vec<f32>>,
    pub frames: Vec<i64>,
    pub identity: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConnectorTrainConfig {
    pub iterations: u64,
    pub lr: f64,
    /// Identities per batch.
    pub p: usize,
    /// Samples per identity.
    pub s: usize,
    /// Longest frame run fed per sample; longer tracklets are randomly cropped.
    pub max_frames: usize,
    /// Not serialized; runs take it from the global seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ConnectorTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 120_000,
            lr: 0.0001,
            p: 8,
            s: 4,
            max_frames: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConnectorTraining {
    pub model: Connector<f32>,
    pub losses: Vec<f64>,
    /// Identity value for each classifier row.
    pub classes: Vec<u64>,
}

/// Groups sample indices by identity, in identity order.
pub fn by_identity(dataset: &[ConnectorSample]) -> BTreeMap<u64, Vec<usize>> {
    let mut m: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.iter().enumerate() {
        m.entry(s.identity).or_default().push(i);
    }
    m
}

fn crop<'a, R: Rng>(rng: &mut R, s: &'a ConnectorSample, max: usize) -> &'a [Vec<f32>] {
    let n = s.features.len();
    if n <= max {
        return &s.features;
    }
    let len = rng.random_range(max.div_ceil(2)..=max);
    let start = rng.random_range(0..=n - len);
    &s.features[start..start + len]
}

/// Trains from a fresh initialization; `cfg.num_classes` is set to the number
/// of identities in `dataset`.
pub fn train_connector(
    dataset: &[ConnectorSample],
    cfg: &ConnectorConfig,
    train: &ConnectorTrainConfig,
) -> Result<ConnectorTraining> {
    let groups = by_identity(dataset);
    if groups.len() < 2 {
        return Err(Error::EmptyDataset("connector training needs at least two identities".into()));
    }
    if train.p < 2 || train.s < 1 {
        return Err(Error::InvalidArgument("batches need p ≥ 2 identities and s ≥ 1 samples".into()));
    }
    for s in dataset {
        if s.features.is_empty() || s.features[0].len() != cfg.feature_dim {
            return Err(Error::InvalidArgument("sample feature dimension mismatch".into()));
        }
    }
    let classes: Vec<u64> = groups.keys().copied().collect();
    let cfg = ConnectorConfig {
        num_classes: classes.len(),
        ..cfg.clone()
    };
    let mut model = Connector::<f32>::new(cfg, train.seed)?;
    let members: Vec<&Vec<usize>> = groups.values().collect();
    let mut rng = rng::stream(train.seed, Stream::Batch);
    let mut opt = OptimizerState::new(&model.params, train.lr, train.iterations);
    let mut losses = Vec::with_capacity(train.iterations as usize);
    let p = train.p.min(classes.len());
    for _ in 0..train.iterations {
        model.params.zero_grads();
        let chosen = rand::seq::index::sample(&mut rng, classes.len(), p).into_vec();
        let mut g = Graph::new();
        let mut embs = Vec::with_capacity(p * train.s);
        let mut logits = Vec::with_capacity(p * train.s);
        let mut labels = Vec::with_capacity(p * train.s);
        for &c in &chosen {
            for _ in 0..train.s {
                let idx = members[c][rng.random_range(0..members[c].len())];
                let frames = crop(&mut rng, &dataset[idx], train.max_frames);
                let x = g.input(feature_matrix(frames)?, false)?;
                let trace = model.encode(&mut g, x)?;
                let (h, l) = model.head(&mut g, trace.z)?;
                embs.push(h);
                logits.push(l);
                labels.push(c);
            }
        }
        let e = g.concat_rows(&embs)?;
        let l = g.concat_rows(&logits)?;
        let loss = connector_loss(&mut g, e, l, &labels, &model.cfg)?;
        losses.push(g.value(loss).data()[0] as f64);
        g.backward(loss)?.accumulate_into(&mut model.params);
        opt.step(&mut model.params)?;
    }
    Ok(ConnectorTraining { model, losses, classes })
}

/// Fraction of sampled triplets `(a, p, n)` with `d(a,p) < d(a,n)`.
pub fn triplet_satisfaction(embeddings: &[(u64, TrackletEmbedding)], samples: usize, seed: u64) -> Result<f64> {
    let mut ids: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, (id, _)) in embeddings.iter().enumerate() {
        ids.entry(*id).or_default().push(i);
    }
    let anchors: Vec<&Vec<usize>> = ids.values().filter(|v| v.len() >= 2).collect();
    if anchors.is_empty() || ids.len() < 2 {
        return Err(Error::EmptyDataset("need identities with two samples and at least two identities".into()));
    }
    let mut rng = rng::stream(seed, Stream::Eval);
    let mut good = 0usize;
    for _ in 0..samples {
        let grp = anchors[rng.random_range(0..anchors.len())];
        let pick = rand::seq::index::sample(&mut rng, grp.len(), 2).into_vec();
        let (a, p) = (grp[pick[0]], grp[pick[1]]);
        let n = loop {
            let n = rng.random_range(0..embeddings.len());
            if embeddings[n].0 != embeddings[a].0 {
                break n;
            }
        };
        let dap = embeddings[a].1.distance(&embeddings[p].1);
        let dan = embeddings[a].1.distance(&embeddings[n].1);
        if dap < dan {
            good += 1;
        }
    }
    Ok(good as f64 / samples.max(1) as f64)
}
