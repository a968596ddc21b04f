pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod subspace;
pub mod synthdata;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
