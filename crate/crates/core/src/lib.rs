//! Solution formulas, a probabilistic representation and noise-driven
//! well-posedness experiments for Tricomi-type equations
//! `u_tt = t^α u_xx` with data `u(0,x) = 0`, `u_t(0,x) = φ(x)`.

pub mod error;
pub mod cli;
pub mod fixed_point;
pub mod lab;
pub mod noise;
pub mod quadrature;
pub mod solvers;
pub mod specialfn;
pub mod tricomi;

pub use error::{Error, ErrorClass, Result};
