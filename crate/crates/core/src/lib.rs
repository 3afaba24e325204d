//! Conductivity imaging from the magnitude of one interior current density.
//!
//! The crate reconstructs `σ` in `−∇·(σ∇u) = 0` from `a = σ|∇u|` and the
//! boundary voltage `g`. The main route trains a tanh network `u_θ` to
//! minimize a Monte Carlo estimate of the relaxed weighted least-gradient
//! energy
//!
//! ```text
//! L_γ(u) = ∫_Ω a ψ(|∇u|) dx + γ ∫_∂Ω a ψ(|u − g|) ds
//! ```
//!
//! and then reads off `σ = a / |∇u_θ|`. The classical alternating scheme
//! (solve the forward problem, update `σ = a/|∇u|`, repeat) is provided as a
//! baseline.
//!
//! Modules, bottom up:
//!
//! - [`field`]: grids on the unit square, phantoms, interpolation, metrics, file I/O
//! - [`forward`]: finite-volume forward solver, data synthesis, noise
//! - [`autodiff`]: scalar reverse-mode tape
//! - [`network`]: the feedforward ansatz, its batched derivatives, and bound checks
//! - [`loss`]: samplers, Huber smoothing, empirical and quadrature losses
//! - [`optim`]: ADAM and the training loop
//! - [`recon`]: denoising, network reconstruction, the iterative baseline, run output

pub mod autodiff;
pub mod error;
pub mod field;
pub mod forward;
pub mod loss;
pub mod network;
pub mod optim;
pub mod recon;
pub mod rng;

pub use error::{Error, Result};

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/loss.md")]
    mod loss {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
