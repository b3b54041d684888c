//! Disassembled object representations.
//!
//! A convolutional double autoencoder whose latent code is split into one
//! part per object category. Resetting a part to the code of an empty image
//! removes that object from the decoded scene.

pub mod error;
pub mod experiments;
pub mod latent;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod seeds;
pub mod synthdata;
pub mod training;

pub use error::{Result, UdorError};
