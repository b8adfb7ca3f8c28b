//! Depth-sensitive RGB-D salient object detection with a searchable
//! multi-modal fusion network.
//!
//! The pipeline: [`depth`] splits a raw depth map into region masks, the
//! [`dsam`] blocks use them to re-weight RGB backbone features, [`fusion`]
//! wires searchable [`cells`] between the two backbone pyramids, [`search`]
//! learns the cell architecture and [`train`] retrains the discrete network.
//! [`metrics`] scores saliency maps.

pub mod backbone;
pub mod cells;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod depth;
pub mod dsam;
pub mod error;
pub mod fusion;
pub mod genotype;
pub mod metrics;
pub mod model;
mod nn;
pub mod search;
pub mod train;

pub use error::{Error, Result};
pub use sod_autograd as autograd;
