pub mod ad;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod hmc;
pub mod io;
pub mod model;
pub mod models;
pub mod space;
pub mod studies;
pub mod stump;

pub use error::{Error, Result};
