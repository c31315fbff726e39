//! # bregdiv
//!
//! Learnable divergences between distributions, built from a max-affine
//! convex functional whose affine pieces are the heads of a neural network.
//!
//! A [`BranchedNet`] with `K` heads defines
//!
//! ```text
//! φ(p)    = max_c ( E_p[w_c] + b_c )
//! D(p, q) = ( E_p[w_{p*}] + b_{p*} ) − ( E_p[w_{q*}] + b_{q*} )
//! ```
//!
//! which is a functional Bregman divergence: nonnegative, zero at `p = q`,
//! generally asymmetric. The symmetric special cases (moment matching
//! between mean embeddings, deep squared Euclidean, Mahalanobis, PSD-kernel
//! double sums) live alongside it in [`divergence`].
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`nn`] | dense layers, branched nets, reverse-mode gradients, optimizers, gradient oracle |
//! | [`divergence`] | the divergence catalog and the distribution types |
//! | [`losses`] | contrastive/triplet losses, pair/triplet mining, the metric training loop |
//! | [`clustering`] | distributional Bregman k-means, Gaussian-KL k-means, k-NN, RI/ARI |
//! | [`datagen`] | ring-of-Gaussians generator and grouped-CSV I/O |
//! | [`generation`] | adversarial generator training against a two-head divergence |
//!
//! ## Quick start
//!
//! ```
//! use bregdiv::nn::{Activation, DenseLayer, Mlp};
//! use bregdiv::{deep_bregman, BranchedNet, EmpiricalDist};
//!
//! // Two affine pieces on the real line: φ(x) = max(x, −x) = |x|.
//! let head = |w: f64| Mlp::new(1, vec![DenseLayer::new(1, 1, Activation::Identity, vec![w], vec![0.0])?]);
//! let net = BranchedNet::new(Mlp::identity(1)?, vec![head(1.0)?, head(-1.0)?])?;
//!
//! let p = EmpiricalDist::dirac(&[2.0])?;
//! let q = EmpiricalDist::dirac(&[-3.0])?;
//! assert_eq!(deep_bregman(&net, &p, &q)?, 4.0);
//! assert_eq!(deep_bregman(&net, &q, &p)?, 6.0);
//! # Ok::<(), bregdiv::Error>(())
//! ```
//!
//! The `book/` directory next to this crate walks through each concept with
//! runnable snippets; those snippets are compiled as doctests of this crate.

pub mod clustering;
pub mod datagen;
pub mod divergence;
mod error;
pub mod generation;
pub mod losses;
pub mod nn;
pub mod par;
pub mod rng;
pub mod tensor;

pub use divergence::{
    deep_bregman, deep_bregman_grad, deep_euclidean, gaussian_kl, mahalanobis, moment_matching,
    phi_value, psd_kernel_divergence, Divergence, EmpiricalDist, GaussianDist, PhiEval,
};
pub use error::{Error, Result};
pub use nn::{BranchedNet, GradientBuffer};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/divergences.md")]
    mod divergences {}
    #[doc = include_str!("../../../book/src/symmetric.md")]
    mod symmetric {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/generation.md")]
    mod generation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
