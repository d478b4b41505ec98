//! Two-image panorama stitching with multiple candidate registrations and
//! multi-label seam selection.

pub mod blend;
pub mod config;
pub mod correspond;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod pipeline;
pub mod registration;
pub mod seam;
pub mod solver;
pub mod synth;

pub use error::{Result, StitchError};
