//! Tracklet post-processing for multi-object tracking.
//!
//! Tracker output is cut at predicted identity switches by a dilated temporal
//! convolution network ([`splitter`]) and the pieces are regrouped through
//! embeddings from a self-attention encoder ([`connector`]). [`synth`] builds
//! labelled training corpora, [`pipeline`] runs inference, and [`metrics`]
//! scores the result.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the
//! precision used for training (`f32`) and for gradient checks (`f64`).

pub mod autograd;
pub mod checkpoint;
pub mod connector;
pub mod error;
pub mod gradcheck;
pub mod hungarian;
pub mod metrics;
pub mod mot;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod splitter;
pub mod synth;
pub mod tensor;
pub mod tracklet;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = autograd::Graph<f32>;
pub type Graph64 = autograd::Graph<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
