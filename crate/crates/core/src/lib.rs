//! Simulation and estimation of shift-variant field distortion.
//!
//! Images are modeled as a Fredholm integral of the object against a kernel
//! built from one reference PSF whose arguments are warped by polynomial
//! distortion functions `f(u,v,x,y)` and `g(u,v,x,y)`:
//!
//! ```text
//! I(u,v) = ∬ p(u - x + f, v - y + g) O(x,y) dx dy
//! ```
//!
//! The crate renders such images for point-source scenes, models and inverts
//! the sensor's pixel-integration sampling, and recovers distortion
//! coefficients from observations by bounded nonlinear least squares.

pub mod commands;
pub mod config;
pub mod distortion;
pub mod estimate;
pub mod fgrid;
pub mod grid;
pub mod optimize;
pub mod psf;
pub mod quadrature;
pub mod sampling;
pub mod simulate;

pub use distortion::{DistortionPolynomial, MonomialTerm, PolynomialBasis, ThetaVector};
pub use grid::{PointSource, PointSourceScene, ScalarField};
pub use sampling::SamplingMatrix;
