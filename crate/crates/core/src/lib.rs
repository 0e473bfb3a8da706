//! Rule mining, bottleneck diagnosis and rule-augmented configuration tuning.

pub mod diagnosis;
pub mod error;
pub mod hypothesis;
pub mod io;
pub mod mapping;
pub mod mining;
pub mod model;
pub mod registry;
pub mod rulebook;
pub mod simulator;
pub mod tuner;

pub use error::{Error, Result};
