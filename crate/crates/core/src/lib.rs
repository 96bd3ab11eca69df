pub mod averages;
pub mod cli;
pub mod error;
pub mod harness;
pub mod inference;
pub mod model;
pub mod moments;
pub mod poly;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
pub use model::{ModelKappa, ModelParams, ModelTheta};
pub use poly::{PolySpec, XPoly};
pub use tree::{CellId, Fate, LineageTree, Pole, SubtreeCounts, Triple};
