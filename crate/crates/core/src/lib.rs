pub mod cli;
pub mod cohort;
pub mod csvio;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod kernel;
mod linalg;
pub mod objective;
pub mod report;
pub mod ricciflow;
pub mod svg;
pub mod transport;
pub mod verify;

pub use cohort::{Cohort, Embedding};
pub use error::{Result, SosmError};
