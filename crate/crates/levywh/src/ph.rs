//! Phase-type representations and their time reversals.
//!
//! A phase-type law is the absorption time of a terminating Markov jump
//! process with initial distribution `α` and sub-generator `T`; the exit
//! rate vector is `t = −T·1`. Construction validates the sign pattern,
//! invertibility of `T`, and irreducibility of `T + t·α` (reducible
//! representations are rejected rather than repaired).
//!
//! Three reversal constructions are provided. All of them produce a
//! representation of the same law whose phase process runs backwards:
//!
//! * [`PhaseTypeRep::reverse_standard`] — reversal with respect to the
//!   representation's own initial vector,
//!   `α* = tᵀΔ_ν`, `T* = Δ_ν⁻¹ Tᵀ Δ_ν`, `t* = Δ_ν⁻¹ αᵀ` with
//!   `ν = −α T⁻¹`.
//! * [`PhaseTypeRep::reverse_general`] — the same construction run from
//!   any other admissible initial vector `α̂` (any `α̂` keeping
//!   `T + t·α̂` irreducible gives a valid reversal).
//! * [`PhaseTypeRep::reverse_stationary`] — the self-dual reversal fixing
//!   `α* = α` and `t* = t`, built from the stationary law of `T + Δ_t`;
//!   it requires `T + Δ_t` irreducible and therefore rejects e.g. Erlang.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{guarded_inverse, one_norm};
use crate::{real, roundoff_tol, Scalar};

/// Entries of `T + t·α` at or below this threshold do not count as edges of
/// the phase graph, and the sparsity relations of the reversal are stated
/// at the same threshold.
pub const ZERO_PATTERN_TOL: f64 = 1e-14;

/// Condition-number cap for inverting `T`.
pub const CONDITION_LIMIT: f64 = 1e12;

/// A validated phase-type representation `(α, T)` with derived exit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTypeRep<T: Scalar> {
    initial: DVector<T>,
    generator: DMatrix<T>,
    exit: DVector<T>,
}

/// Outcome of a time reversal: the reversed pieces in closed form plus the
/// occupation vector they were built from.
///
/// `alpha_star`, `generator_star` and `exit_star` are evaluated entry by
/// entry from the defining formulas, so the sparsity relations
/// `T_ij = 0 ⇔ T*_ji = 0`, `t_i = 0 ⇔ α*_i = 0`, `α_i = 0 ⇔ t*_i = 0`
/// hold exactly, not merely to roundoff.
#[derive(Debug, Clone)]
pub struct ReversalResult<T: Scalar> {
    alpha_star: DVector<T>,
    generator_star: DMatrix<T>,
    exit_star: DVector<T>,
    nu: DVector<T>,
}

impl<T: Scalar> ReversalResult<T> {
    pub fn alpha_star(&self) -> &DVector<T> {
        &self.alpha_star
    }

    pub fn generator_star(&self) -> &DMatrix<T> {
        &self.generator_star
    }

    pub fn exit_star(&self) -> &DVector<T> {
        &self.exit_star
    }

    /// Occupation vector `ν = −α T⁻¹` (or `π/(π·t)` for the stationary
    /// reversal): expected time spent in each phase before absorption.
    pub fn nu(&self) -> &DVector<T> {
        &self.nu
    }

    /// Packages the reversed pair `(α*, T*)` as a validated representation.
    pub fn to_rep(&self) -> Result<PhaseTypeRep<T>> {
        PhaseTypeRep::new(self.alpha_star.clone(), self.generator_star.clone())
    }
}

impl<T: Scalar> PhaseTypeRep<T> {
    /// Validates `(α, T)` and computes the exit vector.
    pub fn new(initial: DVector<T>, generator: DMatrix<T>) -> Result<Self> {
        let n = generator.nrows();
        if generator.ncols() != n {
            return Err(Error::Dimension(format!(
                "sub-generator must be square, got {}x{}",
                n,
                generator.ncols()
            )));
        }
        if n == 0 {
            return Err(Error::Dimension(
                "representation needs at least one phase".into(),
            ));
        }
        if initial.len() != n {
            return Err(Error::Dimension(format!(
                "initial vector length {} does not match {} phases",
                initial.len(),
                n
            )));
        }
        for v in initial.iter().chain(generator.iter()) {
            if !v.is_finite() {
                return Err(Error::Domain("non-finite entry".into()));
            }
        }
        check_probability_vector(&initial, "alpha")?;

        let scale = {
            let nrm = one_norm(&generator);
            if nrm > T::one() {
                nrm
            } else {
                T::one()
            }
        };
        let row_tol = roundoff_tol::<T>(1e-12, 64.0) * scale;
        let mut exit = DVector::zeros(n);
        for i in 0..n {
            if generator[(i, i)] >= T::zero() {
                return Err(Error::NotSubGenerator(format!(
                    "diagonal entry T[{i}][{i}] must be negative"
                )));
            }
            let mut row_sum = T::zero();
            for j in 0..n {
                if i != j && generator[(i, j)] < T::zero() {
                    return Err(Error::NotSubGenerator(format!(
                        "off-diagonal entry T[{i}][{j}] is negative"
                    )));
                }
                row_sum += generator[(i, j)];
            }
            if row_sum > row_tol {
                return Err(Error::NotSubGenerator(format!(
                    "row {i} of T has positive sum"
                )));
            }
            exit[i] = if row_sum < T::zero() {
                -row_sum
            } else {
                T::zero()
            };
        }

        // invertibility of T, condition-guarded
        guarded_inverse(&generator, real::<T>(CONDITION_LIMIT))
            .map_err(|_| Error::Singular("sub-generator T is numerically singular".into()))?;

        // irreducibility of T + t·alpha via strong connectivity
        let tol = real::<T>(ZERO_PATTERN_TOL);
        let adj = |i: usize, j: usize| generator[(i, j)] + exit[i] * initial[j] > tol;
        if !strongly_connected(n, adj) {
            return Err(Error::Reducible(
                "T + t*alpha is not irreducible; eliminate unreachable or dead phases first".into(),
            ));
        }

        Ok(PhaseTypeRep {
            initial,
            generator,
            exit,
        })
    }

    /// Single phase: exponential with the given rate.
    pub fn exponential(rate: T) -> Result<Self> {
        if rate <= T::zero() {
            return Err(Error::Domain("rate must be positive".into()));
        }
        Self::new(
            DVector::from_element(1, T::one()),
            DMatrix::from_element(1, 1, -rate),
        )
    }

    /// Erlang with `stages` phases of common `rate`, started in phase 0.
    pub fn erlang(stages: usize, rate: T) -> Result<Self> {
        if stages == 0 {
            return Err(Error::Dimension("Erlang needs at least one stage".into()));
        }
        if rate <= T::zero() {
            return Err(Error::Domain("rate must be positive".into()));
        }
        let gen = DMatrix::from_fn(stages, stages, |i, j| {
            if i == j {
                -rate
            } else if j == i + 1 {
                rate
            } else {
                T::zero()
            }
        });
        let mut alpha = DVector::zeros(stages);
        alpha[0] = T::one();
        Self::new(alpha, gen)
    }

    /// Generalized Coxian: phase `i` exits at rate `rates[i]`, terminating
    /// with probability `exit_probs[i]` and otherwise moving to `i+1`.
    /// The last exit probability must be 1. `initial` must put positive
    /// mass on phase 0, otherwise the chain is reducible.
    pub fn generalized_coxian(rates: &[T], exit_probs: &[T], initial: DVector<T>) -> Result<Self> {
        let n = rates.len();
        if n == 0 || exit_probs.len() != n {
            return Err(Error::Dimension("rates/exit_probs length mismatch".into()));
        }
        let one = T::one();
        if (exit_probs[n - 1] - one).abs() > real::<T>(ZERO_PATTERN_TOL) {
            return Err(Error::Domain(
                "last Coxian exit probability must be 1".into(),
            ));
        }
        for (i, (&r, &p)) in rates.iter().zip(exit_probs.iter()).enumerate() {
            if r <= T::zero() {
                return Err(Error::Domain(format!("rate {i} must be positive")));
            }
            if p < T::zero() || p > one {
                return Err(Error::Domain(format!("exit probability {i} outside [0,1]")));
            }
        }
        let gen = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -rates[i]
            } else if j == i + 1 {
                rates[i] * (one - exit_probs[i])
            } else {
                T::zero()
            }
        });
        Self::new(initial, gen)
    }

    /// Standard Coxian: generalized Coxian started in phase 0.
    pub fn coxian(rates: &[T], exit_probs: &[T]) -> Result<Self> {
        let mut alpha = DVector::zeros(rates.len());
        if !rates.is_empty() {
            alpha[0] = T::one();
        }
        Self::generalized_coxian(rates, exit_probs, alpha)
    }

    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    pub fn initial(&self) -> &DVector<T> {
        &self.initial
    }

    pub fn generator(&self) -> &DMatrix<T> {
        &self.generator
    }

    /// Exit rate vector `t = −T·1`.
    pub fn exit(&self) -> &DVector<T> {
        &self.exit
    }

    /// `P(τ ≤ x) = 1 − α e^{Tx} 1`.
    pub fn cdf(&self, x: T) -> Result<T> {
        if x < T::zero() {
            return Err(Error::Domain("cdf argument must be nonnegative".into()));
        }
        let e = (self.generator.clone() * x).exp();
        let tail = (self.initial.transpose() * e).sum();
        let one = T::one();
        let v = one - tail;
        Ok(v.clamp(T::zero(), one))
    }

    /// Laplace transform `E e^{−δτ} = α (δI − T)⁻¹ t`.
    pub fn laplace(&self, delta: T) -> Result<T> {
        if delta < T::zero() {
            return Err(Error::Domain("discount rate must be nonnegative".into()));
        }
        let n = self.dim();
        let m = DMatrix::identity(n, n) * delta - &self.generator;
        let lu = nalgebra::linalg::LU::new(m);
        let sol = lu
            .solve(&self.exit)
            .ok_or_else(|| Error::Singular("delta*I - T is singular".into()))?;
        Ok(self.initial.dot(&sol))
    }

    /// Mean horizon `E τ = ν·1`.
    pub fn mean(&self) -> Result<T> {
        Ok(self.occupation()?.sum())
    }

    /// Occupation vector `ν = −α T⁻¹`, strictly positive for a validated
    /// representation.
    pub fn occupation(&self) -> Result<DVector<T>> {
        self.occupation_from(&self.initial)
    }

    fn occupation_from(&self, alpha: &DVector<T>) -> Result<DVector<T>> {
        let lu = nalgebra::linalg::LU::new(self.generator.transpose());
        let nu = lu
            .solve(&(-alpha))
            .ok_or_else(|| Error::Singular("T is singular".into()))?;
        Ok(nu)
    }

    /// Time reversal with respect to the representation's own `α`.
    pub fn reverse_standard(&self) -> Result<ReversalResult<T>> {
        self.reverse_from(&self.initial)
    }

    /// Time reversal computed from an alternative initial vector `α̂`.
    /// Requires `T + t·α̂` irreducible; the representation's own `α` is
    /// untouched.
    pub fn reverse_general(&self, alpha_hat: &DVector<T>) -> Result<ReversalResult<T>> {
        if alpha_hat.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "alpha_hat length {} does not match {} phases",
                alpha_hat.len(),
                self.dim()
            )));
        }
        check_probability_vector(alpha_hat, "alpha_hat")?;
        let tol = real::<T>(ZERO_PATTERN_TOL);
        let adj = |i: usize, j: usize| self.generator[(i, j)] + self.exit[i] * alpha_hat[j] > tol;
        if !strongly_connected(self.dim(), adj) {
            return Err(Error::Reducible(
                "T + t*alpha_hat is not irreducible; alpha_hat is not admissible".into(),
            ));
        }
        self.reverse_from(alpha_hat)
    }

    fn reverse_from(&self, alpha: &DVector<T>) -> Result<ReversalResult<T>> {
        let n = self.dim();
        let nu = self.occupation_from(alpha)?;
        for i in 0..n {
            if nu[i] <= T::zero() {
                return Err(Error::Singular(format!(
                    "occupation vector has non-positive entry at phase {i}"
                )));
            }
        }
        let alpha_star = DVector::from_fn(n, |i, _| self.exit[i] * nu[i]);
        let generator_star = DMatrix::from_fn(n, n, |i, j| self.generator[(j, i)] * nu[j] / nu[i]);
        let exit_star = DVector::from_fn(n, |i, _| alpha[i] / nu[i]);
        Ok(ReversalResult {
            alpha_star,
            generator_star,
            exit_star,
            nu,
        })
    }

    /// The reversal that leaves `α` and `t` fixed, built from the
    /// stationary distribution `π` of the conservative generator
    /// `T + Δ_t`: `α* = πΔ_t/(π·t)`, `T* = Δ_π⁻¹ Tᵀ Δ_π`, `t* = t`.
    ///
    /// Errors with [`Error::Reducible`] when `T + Δ_t` is not irreducible
    /// (adding `Δ_t` only touches the diagonal, so this is strong
    /// connectivity of the off-diagonal pattern of `T` itself); the Erlang
    /// chain is the canonical rejected case.
    pub fn reverse_stationary(&self) -> Result<ReversalResult<T>> {
        let n = self.dim();
        let tol = real::<T>(ZERO_PATTERN_TOL);
        let adj = |i: usize, j: usize| self.generator[(i, j)] > tol;
        if !strongly_connected(n, adj) {
            return Err(Error::Reducible("T + Delta_t is not irreducible".into()));
        }
        // stationary law: pi (T + Delta_t) = 0, pi·1 = 1
        let mut m = (self.generator.clone()
            + DMatrix::from_fn(n, n, |i, j| if i == j { self.exit[i] } else { T::zero() }))
        .transpose();
        for j in 0..n {
            m[(n - 1, j)] = T::one();
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = T::one();
        let lu = nalgebra::linalg::LU::new(m);
        let pi = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("stationary system is singular".into()))?;
        for i in 0..n {
            if pi[i] <= T::zero() {
                return Err(Error::Singular(format!(
                    "stationary vector has non-positive entry at phase {i}"
                )));
            }
        }
        let pi_t = pi.dot(&self.exit);
        if pi_t <= T::zero() {
            return Err(Error::Singular("stationary exit mass vanishes".into()));
        }
        let alpha_star = DVector::from_fn(n, |i, _| pi[i] * self.exit[i] / pi_t);
        let generator_star = DMatrix::from_fn(n, n, |i, j| self.generator[(j, i)] * pi[j] / pi[i]);
        Ok(ReversalResult {
            alpha_star,
            generator_star,
            exit_star: self.exit.clone(),
            nu: pi / pi_t,
        })
    }
}

fn check_probability_vector<T: Scalar>(v: &DVector<T>, name: &str) -> Result<()> {
    let mut sum = T::zero();
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() || x < T::zero() {
            return Err(Error::InvalidDistribution(format!(
                "{name}[{i}] must be a nonnegative finite number"
            )));
        }
        sum += x;
    }
    if (sum - T::one()).abs() > roundoff_tol::<T>(1e-12, 64.0) {
        return Err(Error::InvalidDistribution(format!("{name} must sum to 1")));
    }
    Ok(())
}

/// Strong connectivity of the directed graph given by `edge(i, j)`:
/// one forward and one backward search from node 0.
fn strongly_connected(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let connected = if forward { edge(i, j) } else { edge(j, i) };
                if i != j && connected && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn erlang2() -> PhaseTypeRep<f64> {
        PhaseTypeRep::erlang(2, 1.0).unwrap()
    }

    #[test]
    fn validates_erlang_and_exponential() {
        let e = erlang2();
        assert_eq!(e.dim(), 2);
        assert_eq!(e.exit().as_slice(), &[0.0, 1.0]);
        let x = PhaseTypeRep::exponential(2.0).unwrap();
        assert_eq!(x.exit()[0], 2.0);
    }

    #[test]
    fn rejects_unreachable_phase() {
        // phase 0 unreachable once started in phase 1
        let alpha = DVector::from_vec(vec![0.0, 1.0]);
        let gen = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        assert!(matches!(
            PhaseTypeRep::new(alpha, gen),
            Err(Error::Reducible(_))
        ));
    }

    #[test]
    fn rejects_bad_sign_patterns() {
        let alpha = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            PhaseTypeRep::new(alpha.clone(), DMatrix::from_element(1, 1, 1.0)),
            Err(Error::NotSubGenerator(_))
        ));
        let gen = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -1.0]);
        assert!(matches!(
            PhaseTypeRep::new(DVector::from_vec(vec![1.0, 0.0]), gen),
            Err(Error::NotSubGenerator(_))
        ));
    }

    #[test]
    fn rejects_substochastic_alpha() {
        let alpha = DVector::from_vec(vec![0.5, 0.25]);
        let gen = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0]);
        assert!(matches!(
            PhaseTypeRep::new(alpha, gen),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn cdf_matches_closed_forms() {
        let e = erlang2();
        // Erlang(2,1): F(x) = 1 - e^{-x}(1+x)
        assert!((e.cdf(1.0).unwrap() - (1.0 - 2.0 * (-1.0f64).exp())).abs() < 1e-14);
        assert!((e.cdf(3.5).unwrap() - (1.0 - (1.0 + 3.5) * (-3.5f64).exp())).abs() < 1e-13);
        let x = PhaseTypeRep::exponential(2.0).unwrap();
        assert_eq!(x.cdf(0.0).unwrap(), 0.0);
        assert!(x.cdf(40.0).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn laplace_matches_closed_forms() {
        let x = PhaseTypeRep::<f64>::exponential(3.0).unwrap();
        assert!((x.laplace(0.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((x.laplace(1.5).unwrap() - 3.0 / 4.5).abs() < 1e-14);
        let e = PhaseTypeRep::erlang(2, 2.0).unwrap();
        assert!((e.laplace(0.7).unwrap() - (2.0f64 / 2.7).powi(2)).abs() < 1e-14);
        // strictly decreasing in delta
        let l0 = e.laplace(0.0).unwrap();
        let l1 = e.laplace(0.3).unwrap();
        let l2 = e.laplace(0.9).unwrap();
        assert!(l0 > l1 && l1 > l2);
    }

    #[test]
    fn erlang_reversal_starts_in_last_phase() {
        let rev = erlang2().reverse_standard().unwrap();
        assert_eq!(rev.alpha_star().as_slice(), &[0.0, 1.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, -1.0]);
        assert!((rev.generator_star() - expected).amax() < 1e-15);
        assert_eq!(rev.exit_star().as_slice(), &[1.0, 0.0]);
        assert_eq!(rev.nu().as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn exponential_reversal_is_identity() {
        let x = PhaseTypeRep::<f64>::exponential(2.5).unwrap();
        let rev = x.reverse_standard().unwrap();
        assert!((rev.alpha_star()[0] - 1.0).abs() < 1e-15);
        assert!((rev.generator_star()[(0, 0)] + 2.5).abs() < 1e-15);
    }

    #[test]
    fn general_reversal_with_uniform_start() {
        let e = erlang2();
        let hat = DVector::from_vec(vec![0.5, 0.5]);
        let rev = e.reverse_general(&hat).unwrap();
        assert_eq!(rev.nu().as_slice(), &[0.5, 1.0]);
        assert_eq!(rev.alpha_star().as_slice(), &[0.0, 1.0]);
        // exit possible from both phases of the reversed chain
        assert!(rev.exit_star().iter().all(|&t| t > 0.0));
        assert_eq!(rev.exit_star().as_slice(), &[1.0, 0.5]);
        // alpha_hat equal to alpha reproduces the standard reversal
        let same = e.reverse_general(e.initial()).unwrap();
        let std = e.reverse_standard().unwrap();
        assert!((same.generator_star() - std.generator_star()).amax() < 1e-15);
    }

    #[test]
    fn general_reversal_equals_standard_reversal_of_the_restarted_chain() {
        let alpha = DVector::from_vec(vec![0.3, 0.2, 0.5]);
        let gen = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.5, 0.4, -1.5, 0.6, 0.2, 0.9, -1.6]);
        let rep = PhaseTypeRep::new(alpha, gen.clone()).unwrap();
        let hat = DVector::from_vec(vec![0.1, 0.6, 0.3]);
        let via_general = rep.reverse_general(&hat).unwrap();
        let via_standard = PhaseTypeRep::new(hat, gen)
            .unwrap()
            .reverse_standard()
            .unwrap();
        assert!((via_general.alpha_star() - via_standard.alpha_star()).amax() < 1e-14);
        assert!((via_general.generator_star() - via_standard.generator_star()).amax() < 1e-14);
        assert!((via_general.exit_star() - via_standard.exit_star()).amax() < 1e-14);
    }

    #[test]
    fn general_reversal_rejects_inadmissible_start() {
        let e = erlang2();
        let hat = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(e.reverse_general(&hat), Err(Error::Reducible(_))));
    }

    #[test]
    fn stationary_reversal_on_erlang_is_reducible() {
        assert!(matches!(
            erlang2().reverse_stationary(),
            Err(Error::Reducible(_))
        ));
    }

    #[test]
    fn stationary_reversal_is_a_fixed_point() {
        let alpha = DVector::from_vec(vec![0.4, 0.6]);
        let gen = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.5, -1.5]);
        let rep = PhaseTypeRep::new(alpha, gen).unwrap();
        let rev = rep.reverse_stationary().unwrap();
        assert!((rev.exit_star() - rep.exit()).amax() < 1e-15);
        // re-reversing the output by the standard construction returns it unchanged
        let rep2 = rev.to_rep().unwrap();
        let rev2 = rep2.reverse_standard().unwrap();
        assert!((rev2.alpha_star() - rep2.initial()).amax() < 1e-12);
        assert!((rev2.generator_star() - rep2.generator()).amax() < 1e-12);
        // same law
        for i in 0..20 {
            let x = 0.3 * i as f64;
            assert!((rep.cdf(x).unwrap() - rep2.cdf(x).unwrap()).abs() < 1e-12);
        }
        // exponential is trivially fixed
        let a = PhaseTypeRep::<f64>::exponential(1.3).unwrap();
        let r = a.reverse_stationary().unwrap();
        assert!((r.generator_star()[(0, 0)] + 1.3).abs() < 1e-15);
    }

    #[test]
    fn coxian_reversal_matches_closed_form() {
        let rates = [2.0, 1.0, 3.0];
        let ps = [0.3, 0.5, 1.0];
        let cox = PhaseTypeRep::coxian(&rates, &ps).unwrap();
        let rev = cox.reverse_standard().unwrap();
        for i in 0..3 {
            let expect = ps[i] * ps.iter().take(i).map(|p| 1.0 - p).product::<f64>();
            assert!((rev.alpha_star()[i] - expect).abs() < 1e-13);
            for j in 0..3 {
                let expect_t = if j == i {
                    -rates[i]
                } else if j + 1 == i {
                    rates[i]
                } else {
                    0.0
                };
                assert!((rev.generator_star()[(i, j)] - expect_t).abs() < 1e-13);
            }
        }
        // termination always occurs in phase 0 of the reversed chain
        assert!(rev.exit_star()[0] > 0.0);
        assert_eq!(rev.exit_star()[1], 0.0);
        assert_eq!(rev.exit_star()[2], 0.0);
    }

    #[test]
    fn single_precision_instantiation_works() {
        let e = PhaseTypeRep::<f32>::erlang(2, 1.0).unwrap();
        let rev = e.reverse_standard().unwrap();
        assert_eq!(rev.alpha_star().as_slice(), &[0.0f32, 1.0]);
        let cdf = e.cdf(1.0).unwrap();
        assert!((cdf - (1.0 - 2.0 * (-1.0f32).exp())).abs() < 1e-5);
        assert!((e.laplace(0.5).unwrap() - (1.0f32 / 1.5).powi(2)).abs() < 1e-5);
    }

    prop_compose! {
        fn arb_rep()(n in 1usize..5)(
            n in Just(n),
            off in proptest::collection::vec(0.1f64..2.0, n * n),
            exits in proptest::collection::vec(0.0f64..1.5, n),
            amass in proptest::collection::vec(0.05f64..1.0, n),
        ) -> PhaseTypeRep<f64> {
            let mut gen = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                let mut row = 0.0;
                for j in 0..n {
                    if i != j {
                        gen[(i, j)] = off[i * n + j];
                        row += off[i * n + j];
                    }
                }
                let exit = exits[i] + if i == n - 1 { 0.2 } else { 0.0 };
                gen[(i, i)] = -(row + exit);
            }
            let total: f64 = amass.iter().sum();
            let alpha = DVector::from_iterator(n, amass.iter().map(|a| a / total));
            PhaseTypeRep::new(alpha, gen).expect("dense random rep is valid")
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reversal_is_an_involution(rep in arb_rep()) {
            let rev = rep.reverse_standard().unwrap();
            let back = rev.to_rep().unwrap().reverse_standard().unwrap();
            prop_assert!((back.alpha_star() - rep.initial()).amax() < 1e-12);
            prop_assert!((back.generator_star() - rep.generator()).amax() < 1e-12);
            prop_assert!((back.exit_star() - rep.exit()).amax() < 1e-12);
        }

        #[test]
        fn reversal_preserves_the_law(rep in arb_rep()) {
            let rev = rep.reverse_standard().unwrap().to_rep().unwrap();
            let horizon = 5.0 * rep.mean().unwrap();
            for i in 0..20 {
                let x = horizon * (i as f64 + 1.0) / 20.0;
                prop_assert!((rep.cdf(x).unwrap() - rev.cdf(x).unwrap()).abs() < 1e-10);
            }
        }

        #[test]
        fn laplace_total_mass_and_monotonicity(rep in arb_rep()) {
            prop_assert!((rep.laplace(0.0).unwrap() - 1.0).abs() < 1e-10);
            let l1 = rep.laplace(0.1).unwrap();
            let l2 = rep.laplace(0.5).unwrap();
            let l3 = rep.laplace(2.0).unwrap();
            prop_assert!(1.0 > l1 && l1 > l2 && l2 > l3 && l3 > 0.0);
        }
    }
}
