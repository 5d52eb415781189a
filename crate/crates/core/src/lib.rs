pub mod error;
pub mod expr;
pub mod ode;
pub mod quadrature;
pub mod real;
pub mod special;
pub mod diffusion;
pub mod sturm_liouville;
pub mod first_passage;
pub mod omega;
pub mod drawdown;
pub mod monte_carlo;

pub use error::{Error, Result};

pub type Diffusion = diffusion::DiffusionSpec<f64>;
pub type Weight = diffusion::AreaWeight<f64>;
