//! Boxes, tracklets and switch masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Axis-aligned box in absolute pixels, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn intersection(&self, o: &BBox) -> f64 {
        let ix = (self.x + self.w).min(o.x + o.w) - self.x.max(o.x);
        let iy = (self.y + self.h).min(o.y + o.h) - self.y.max(o.y);
        ix.max(0.0) * iy.max(0.0)
    }

    /// `(cx/W, cy/H, w/W, h/H)`
    pub fn normalized(&self, img_w: f64, img_h: f64) -> [f32; 4] {
        let (cx, cy) = self.center();
        [
            (cx / img_w) as f32,
            (cy / img_h) as f32,
            (self.w / img_w) as f32,
            (self.h / img_h) as f32,
        ]
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub const BOX_FEATURES: usize = 4;
/// Accepted range of the normalized box features.
pub const BOX_FEATURE_RANGE: (f32, f32) = (0.0, 1.5);

/// A temporally ordered run of detections carrying one tracker identity.
///
/// `features[t]` holds `K` values per frame: appearance first, then the four
/// normalized box parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub features: Vec<Vec<f32>>,
    pub frames: Vec<i64>,
    pub boxes: Vec<BBox>,
    pub source_id: i64,
}

impl Tracklet {
    pub fn new(features: Vec<Vec<f32>>, frames: Vec<i64>, boxes: Vec<BBox>, source_id: i64) -> Result<Self> {
        let t = Self {
            features,
            frames,
            boxes,
            source_id,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if n == 0 {
            return Err(Error::InvalidArgument("tracklet has no frames".into()));
        }
        if self.features.len() != n || self.boxes.len() != n {
            return Err(Error::InvalidArgument("features, frames and boxes differ in length".into()));
        }
        if self.frames.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("frames must be strictly increasing".into()));
        }
        let k = self.features[0].len();
        if k < BOX_FEATURES + 1 {
            return Err(Error::InvalidArgument(format!("feature dimension {k} < 5")));
        }
        for f in &self.features {
            if f.len() != k {
                return Err(Error::InvalidArgument("ragged feature vectors".into()));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite feature".into()));
            }
            let (lo, hi) = BOX_FEATURE_RANGE;
            if f[k - BOX_FEATURES..].iter().any(|&v| v < lo || v > hi) {
                return Err(Error::InvalidArgument(format!(
                    "normalized box features outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn start(&self) -> i64 {
        self.frames[0]
    }

    pub fn end(&self) -> i64 {
        *self.frames.last().expect("non-empty tracklet")
    }

    /// Sub-tracklet over positions `[lo, hi)`.
    pub fn slice(&self, lo: usize, hi: usize) -> Tracklet {
        Tracklet {
            features: self.features[lo..hi].to_vec(),
            frames: self.frames[lo..hi].to_vec(),
            boxes: self.boxes[lo..hi].to_vec(),
            source_id: self.source_id,
        }
    }
}

/// Feature matrix `K×T` from per-frame vectors.
pub fn feature_matrix<S: Scalar>(features: &[Vec<f32>]) -> Result<Tensor<S>> {
    let t = features.len();
    let k = features.first().map_or(0, Vec::len);
    let mut data = vec![S::zero(); k * t];
    for (j, col) in features.iter().enumerate() {
        if col.len() != k {
            return Err(Error::InvalidArgument("ragged feature vectors".into()));
        }
        for (i, &v) in col.iter().enumerate() {
            data[i * t + j] = S::of(v as f64);
        }
    }
    Tensor::new(vec![k, t], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    GroundTruth,
    Predicted,
}

/// Per-boundary switch indicator: entry `t` sits between positions `t` and `t+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchMask {
    pub values: Vec<f32>,
    pub kind: MaskKind,
}

impl SwitchMask {
    pub fn ground_truth(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("ground-truth mask entries must be 0 or 1".into()));
        }
        Ok(Self {
            values,
            kind: MaskKind::GroundTruth,
        })
    }

    pub fn predicted(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument("predicted mask entries must lie in [0, 1]".into()));
        }
        Ok(Self {
            values,
            kind: MaskKind::Predicted,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count_switches(&self) -> usize {
        self.values.iter().filter(|&&v| v >= 0.5).count()
    }
}
