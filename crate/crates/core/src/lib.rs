pub mod checkpoint;
pub mod clicklog;
pub mod critic;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numkernel;
pub mod oracle;
pub mod pgm;
pub mod policy;
pub mod scalar;
pub mod seqnet;
pub mod train;

pub use error::{Error, Result};
pub use model::ClickModel;
pub use scalar::Scalar;

/// Double-precision generator.
pub type Generator = policy::Generator<f64>;
/// Double-precision discriminator.
pub type Discriminator = critic::Discriminator<f64>;
pub type Generator32 = policy::Generator<f32>;
pub type Discriminator32 = critic::Discriminator<f32>;
