pub mod error;
pub mod expr;
pub mod quadrature;
pub mod special;
pub mod diffusion;
pub mod fundamental;
pub mod cost;
pub mod problem;
pub mod greens;
pub mod roots;
pub mod audit;
pub mod solvers;
pub mod asymptotics;
pub mod simulate;

pub use error::{Error, Result};
