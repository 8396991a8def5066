//! Spectral analysis of one-hidden-layer network Jacobians.
//!
//! The library is organized around the reference-Jacobian picture of
//! gradient descent: an SVD of a fixed matrix splits the output space into
//! an information span (large singular values) and a nuisance complement,
//! and everything else — linearized dynamics, kernel estimation, synthetic
//! data models, generalization-bound formulas — is expressed against that
//! split.
//!
//! * [`spectral`] — dense SVD, subspace splits, truncated pseudoinverses,
//!   early-stopping quantities, PSD square roots.
//! * [`shallownet`] — the network `f(x) = V phi(W x)`, its Jacobian
//!   (dense and matrix-free), and full-batch gradient descent.
//! * [`ntk`] — Monte-Carlo multiclass tangent-kernel estimation and
//!   concentration/perturbation diagnostics.
//! * [`lindyn`] — closed-form linearized dynamics and the coupled
//!   original-vs-linearized harness.
//! * [`data`] — corrupted linear model, Gaussian mixtures, label
//!   corruption, classification error.
//! * [`bounds`] — generalization-bound evaluators and alignment metrics.

pub mod bounds;
pub mod data;
pub mod lindyn;
pub mod ntk;
pub mod shallownet;
pub mod spectral;
