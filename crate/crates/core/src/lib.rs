//! Desk-scale long-document reading comprehension: a toy encoder, a
//! dual-attention paragraph reader with dynamic top-K masking, a cascaded
//! long/short answer predictor, page-level inference and a synthetic
//! data pipeline.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod predictor;
pub mod reader;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
