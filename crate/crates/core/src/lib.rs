//! Lineage-guided optimal transport between single-cell timepoints: a
//! transport network trained adversarially with a transport cost and a
//! supervised pairing loss, an entropic Sinkhorn baseline, and the
//! evaluation pieces around them.

pub mod data;
pub mod evalstats;
pub mod math;
pub mod nets;
pub mod pipeline;
pub mod preprocess;
pub mod sinkhorn;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
