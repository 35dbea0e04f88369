pub mod error;
pub mod linalg;
pub mod par;

pub use error::{Error, Result};
pub mod stdata;
pub mod stgraph;
pub mod scan;
pub mod cylinder;
pub mod gmrf;
pub mod simulate;
pub mod metrics;
pub mod report;
pub mod riskmodel;
