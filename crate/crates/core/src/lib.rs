//! Spherical-harmonic lighting estimation, skin-tone bias analysis and
//! mitigation on a seeded synthetic portrait corpus.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod debias;
pub mod embedding_analysis;
pub mod error;
pub mod image_io;
pub mod light_estimation;
pub mod magnitude_scaling;
pub mod par;
pub mod sh_lighting;
pub mod skin_tone;
pub mod synthetic_faces;

mod numeric;

pub use error::{Error, Result};
pub use sh_lighting::{ShCoeffs, SH_COUNT};
pub use skin_tone::SkinTone;
