//! Numerical toolkit for frequency-localized red/blue cone waves on a
//! periodic torus: disk localization, wave-packet (tube) decompositions,
//! wave tables and quilts, bilinear norm experiments, and null-form
//! multiplier calculus.

pub mod acceptance;
pub mod bilinear;
pub mod domain;
pub mod error;
pub mod geometry;
pub mod experiment;
pub mod localization;
pub mod nullform;
pub mod packets;
pub mod sampling;
pub mod wave;

pub use domain::TorusDomain;
pub use error::{ConewaveError, Result};
pub use wave::{make_wave, Color, FrequencyAtom, Wave};
