pub mod cpg;
pub mod error;
pub mod gp;
pub mod harness;
mod hyper;
pub mod kinematics;
pub mod linalg;
pub mod mtgp;
pub mod optimizer;
pub mod params;
pub mod plant;
pub mod sampling;
pub mod signal;

pub use error::{Error, Result};
