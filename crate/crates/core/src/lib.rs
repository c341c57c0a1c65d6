//! Gaussians of interest: semantic 3D Gaussian fields with a trainable
//! codebook and a hyperplane-refined open-vocabulary query.

pub(crate) mod binio;
pub mod error;
pub mod cli;
pub mod eval;
pub mod image;
pub mod kmeans;
pub mod osh;
pub mod ply;
pub mod query;
pub mod raster;
pub mod scene;
pub mod synth;
pub mod tfcc;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{FeatureMap, Mask};
pub use osh::{Hyperplane, OshConfig};
pub use query::{open_vocab_query, Action, MaskSource, QueryOptions, QueryResult};
pub use raster::{rasterize, render, render_backward, Rasterization, RenderOutput};
pub use scene::{Camera, Gaussian, Scene};
pub use tfcc::{Codebook, Decoder, LossWeights};
pub use trainer::{train_semantic_field, TrainConfig, TrainedModel};
