//! Cross-subject EEG emotion recognition on channel graphs.
//!
//! Raw 14-channel recordings are cut into one-second epochs and turned into
//! per-band differential-entropy features. Channels are connected through a
//! learnable adjacency initialized from normalized mutual information. Node
//! features are aggregated by simple graph convolution, and a per-node domain
//! classifier behind a gradient-reversal layer both aligns subjects and scores
//! how transferable each node is. That score becomes an attention weight for
//! the emotion classifier. Evaluation is leave-one-subject-out.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiation.

pub mod dataio;
pub mod features;
pub mod graph;
pub mod model;
pub mod montage;
pub mod report;
mod scalar;
pub mod train;

pub use scalar::Scalar;

pub type RawRecording = dataio::RawRecording<f64>;
pub type Epoch = dataio::Epoch<f64>;
pub type FeatureSample = dataio::FeatureSample<f64>;
pub type AdjacencyState = graph::AdjacencyState<f64>;
pub type PropagationMatrix = graph::PropagationMatrix<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type ForwardTrace = model::ForwardTrace<f64>;
pub type Gradients = train::Gradients<f64>;
pub type DomainBatch<'a> = train::DomainBatch<'a, f64>;
