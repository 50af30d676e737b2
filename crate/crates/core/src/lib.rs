pub mod classifier;
pub mod encoder;
pub mod error;
pub mod numerics;
pub mod optim;
mod paramfile;

pub use error::{PlexError, Result};
pub mod datasetgen;
pub mod eval;
pub mod explainers;
pub mod plex;
pub mod synthetic;
