pub mod cli;
pub mod discretization;
pub mod error;
pub mod model;
pub mod mosco;
pub mod solver;

pub use discretization::{Grid, GridFunction};
pub use error::{Error, Result};
