//! Cross-lingual stance detection with translation-based data augmentation
//! and a label-balanced latent separability objective.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the type for common use.

pub mod augmentation;
pub mod corpus;
pub mod evalharness;
pub mod model;
pub mod objectives;
pub mod scalar;
pub mod textprep;
pub mod translation;

pub use corpus::{Corpus, Lang, StanceExample, StanceLabel};
pub use scalar::Scalar;

pub type StanceModel32 = model::StanceModel<f32>;
pub type StanceModel64 = model::StanceModel<f64>;
pub type LanguageModel32 = model::LanguageModel<f32>;
pub type LanguageModel64 = model::LanguageModel<f64>;
pub type LatentBatch32 = model::LatentBatch<f32>;
pub type LatentBatch64 = model::LatentBatch<f64>;
