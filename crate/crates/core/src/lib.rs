//! Frame synthesis from an implicit dynamics solver, latent-manifold frame
//! interpolation with an adversarial variational autoencoder, conditional
//! GAN enhancement and image-fidelity metrics.

pub mod avae;
pub mod cgan;
pub mod dynamics;
mod error;
pub mod imaging;
pub mod metrics;
pub mod reconstruction;

pub use error::{CoreError, Result};
