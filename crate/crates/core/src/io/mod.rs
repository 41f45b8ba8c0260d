//! File formats: tensor checkpoints and annotation statistics.

mod annotations;
mod checkpoint;

pub use annotations::*;
pub use checkpoint::*;
