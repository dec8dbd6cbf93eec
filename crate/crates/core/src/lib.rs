pub mod agents;
pub mod density;
pub mod dist;
pub mod env;
pub mod error;
pub mod exact_pg;
pub mod harness;
pub mod linalg;
pub mod mdp;
pub mod rng;

pub use error::{Error, Result};
