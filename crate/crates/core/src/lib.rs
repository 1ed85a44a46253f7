//! Core library for graph-based two-step retrosynthesis prediction.
//!
//! Given a product molecule, the pipeline ranks candidate reaction centers
//! (new bonds, bond-order changes, or single atoms losing a fragment),
//! derives synthons by undoing the predicted edits, and completes each
//! synthon into reactants by sequentially attaching bond/ring substructures
//! under a beam search. Everything learns on top of a small dense-tensor
//! engine with reverse-mode automatic differentiation.
//!
//! The crate is `no_std` + `alloc`; IO, file formats and the CLI live in the
//! companion `retrograph` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod brics;
pub mod center;
pub mod chem;
pub mod encoder;
pub mod eval;
pub mod infer;
pub mod reaction;
pub mod rng;
pub mod synthon;
pub mod tensor;

#[cfg(feature = "testgen")]
pub mod gen;

/// Scalar type used by every tensor and score in the crate.
pub type Float = f64;

/// Math shim: `std` float intrinsics when available, `libm` otherwise.
pub(crate) mod num {
    use crate::Float;

    #[cfg(feature = "std")]
    #[inline]
    pub fn exp(x: Float) -> Float {
        x.exp()
    }
    #[cfg(not(feature = "std"))]
    #[inline]
    pub fn exp(x: Float) -> Float {
        libm::exp(x)
    }

    #[cfg(feature = "std")]
    #[inline]
    pub fn ln(x: Float) -> Float {
        x.ln()
    }
    #[cfg(not(feature = "std"))]
    #[inline]
    pub fn ln(x: Float) -> Float {
        libm::log(x)
    }

    #[cfg(feature = "std")]
    #[inline]
    pub fn sqrt(x: Float) -> Float {
        x.sqrt()
    }
    #[cfg(not(feature = "std"))]
    #[inline]
    pub fn sqrt(x: Float) -> Float {
        libm::sqrt(x)
    }

    #[cfg(feature = "std")]
    #[inline]
    pub fn ln_1p(x: Float) -> Float {
        x.ln_1p()
    }
    #[cfg(not(feature = "std"))]
    #[inline]
    pub fn ln_1p(x: Float) -> Float {
        libm::log1p(x)
    }

    #[cfg(feature = "std")]
    #[inline]
    pub fn powi(x: Float, n: i32) -> Float {
        x.powi(n)
    }
    #[cfg(not(feature = "std"))]
    #[inline]
    pub fn powi(x: Float, n: i32) -> Float {
        libm::pow(x, n as Float)
    }
}
