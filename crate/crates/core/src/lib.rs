//! Polynomial atomization of logarithmic potentials in the plane and its
//! homogeneous lift to circled sets in C².
//!
//! The pipeline runs bottom-up: a [`potential::PlanarMeasure`] is split into
//! equal-mass rectangles ([`equipartition`]), each rectangle becomes a zero of
//! a polynomial ([`atomizer`]), the resulting one-variable pair is lifted to
//! homogeneous polynomials on C² ([`homlift`]), and the common level set
//! `{P = Q = 1}` carries the discrete Monge-Ampère measure ([`mamass`]).

pub mod cpoly;
pub mod grid;
pub mod potential;
pub mod equipartition;
pub mod atomizer;
pub mod homlift;
pub mod mamass;
pub mod classical;

pub use num_complex::Complex64;
