//! Factorization of a Lévy jump diffusion at its running maximum over a
//! phase-type time horizon.
//!
//! The library computes the joint law of the running supremum, the terminal
//! position, the phase in which the supremum is attained, and the terminal
//! phase of a Brownian motion with two-sided phase-type compound-Poisson
//! jumps, observed up to an independent phase-type distributed horizon.
//! The computation goes through four stages, each a module of its own:
//!
//! * [`ph`] — phase-type representations, their validation, and the
//!   time-reversal constructions that produce the second factor.
//! * [`fluid`] — the fluid embedding of the jump diffusion into a
//!   terminating Markov-modulated Brownian motion (jumps levelled out at
//!   unit slope in fictitious time).
//! * [`passage`] — first-passage generators of the fluid model, solved
//!   spectrally with an ordered-Schur fallback for defective spectra.
//! * [`factorization`] — assembly of the factorization tables (constants
//!   `c_k`, `r_k`, the reversed representation) and evaluation of the
//!   sup/inf/joint densities, with optional exponential discounting.
//!
//! Two independent oracles back the pipeline: [`bm_erlang`] evaluates the
//! closed-form recursion for pure Brownian motion over an Erlang horizon,
//! and [`mc`] simulates paths with exact Brownian-bridge maxima.
//!
//! All numeric code is generic over the scalar type through the [`Scalar`]
//! trait; `f64` is the intended precision and the concrete aliases at the
//! crate root use it.

pub mod bm_erlang;
pub mod error;
pub mod factorization;
pub mod fluid;
pub mod linalg;
pub mod mc;
pub mod passage;
pub mod ph;

pub use error::{Error, Result};

/// Scalar type the numerics are generic over: a real field with the usual
/// elementary functions plus conversion from `f64` constants.
///
/// Implemented by `f32` and `f64`. Tolerances fixed by the library are
/// expressed as `f64` constants and converted; purely roundoff-driven
/// guards additionally scale with the type's epsilon so that `f32`
/// instantiations remain usable.
pub trait Scalar: nalgebra::RealField + Copy + num_traits::FromPrimitive {}

impl<T> Scalar for T where T: nalgebra::RealField + Copy + num_traits::FromPrimitive {}

/// Converts an `f64` constant into a `T`.
pub(crate) fn real<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant not representable in scalar type")
}

/// Machine epsilon of the scalar type.
pub(crate) fn epsilon<T: Scalar>() -> T {
    <T as approx::AbsDiffEq>::default_epsilon()
}

/// Roundoff-scaled guard: `max(floor, mult * epsilon)`.
///
/// `floor` is the tolerance at `f64` precision; wider-epsilon types get the
/// scaled value instead so validation does not spuriously reject.
pub(crate) fn roundoff_tol<T: Scalar>(floor: f64, mult: f64) -> T {
    let scaled = epsilon::<T>() * real::<T>(mult);
    let fixed = real::<T>(floor);
    if scaled > fixed {
        scaled
    } else {
        fixed
    }
}

pub type PhaseType = ph::PhaseTypeRep<f64>;
pub type Reversal = ph::ReversalResult<f64>;
pub type JumpDiffusion = fluid::JumpDiffusionModel<f64>;
pub type Fluid = fluid::FluidModel<f64>;
pub type Passage = passage::PassageOperator<f64>;
pub type Factorization = factorization::FactorizationTables<f64>;
pub type BmErlang = bm_erlang::BmErlangWeights<f64>;
