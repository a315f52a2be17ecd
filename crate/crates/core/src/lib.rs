//! Certified robustness toolkit for time-series classification.
//!
//! The pipeline: train a small 1D-CNN under Gaussian noise and random input
//! masks ([`smoothing`]), certify the smoothed classifier by Monte Carlo
//! voting with a Rényi-divergence radius bound ([`certmath`]), stress the
//! result with a PGD-ℓ2 attacker ([`attacks`]), and aggregate metrics
//! ([`evalkit`]). Every random choice is derived from named seeds so runs
//! reproduce bit-for-bit.

pub mod attacks;
pub mod certmath;
pub mod evalkit;
pub mod masks;
pub mod nnkit;
pub mod seeds;
pub mod smoothing;
pub mod tsdata;
