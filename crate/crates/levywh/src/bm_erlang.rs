//! Closed-form factor densities for Brownian motion over an Erlang horizon.
//!
//! For BM(μ, σ²) observed up to an Erlang(n, λ) horizon, the maximum
//! restricted to the event "the maximum is attained in stage k" is a
//! mixture of Erlang(i, λ₊) laws, i ≤ k, and symmetrically for the
//! minimum with rate λ₋; the mixture weights satisfy a two-family
//! recursion driven by the probabilities θ± that one exponential exceeds
//! the other. This module evaluates that recursion and the resulting
//! sup/inf/joint densities. It is completely independent of the matrix
//! pipeline and serves as its cross-validation oracle on the BM-Erlang
//! family.
//!
//! Stage indices in the public API are 0-based (`k ∈ 0..stages`).

use crate::error::{Error, Result};
use crate::{real, Scalar};

/// Weight tables of the BM-Erlang recursion.
#[derive(Debug, Clone)]
pub struct BmErlangWeights<T: Scalar> {
    stages: usize,
    rate: T,
    mu: T,
    sigma2: T,
    lambda_plus: T,
    lambda_minus: T,
    theta_plus: T,
    theta_minus: T,
    // triangular: p_bar[k][i] is the weight of Erlang(i+1, λ₊) in the
    // maximum over the first k+1 stages, restricted to attainment in the
    // last of them
    p_bar: Vec<Vec<T>>,
    p_under: Vec<Vec<T>>,
    q_bar: Vec<T>,
    q_under: Vec<T>,
    // ln(j!) for j = 0..stages, for overflow-free Erlang densities
    ln_factorial: Vec<T>,
}

/// Fills the weight tables for `stages ≥ 1`, `rate > 0`, `sigma2 > 0`.
pub fn compute_weights<T: Scalar>(
    stages: usize,
    rate: T,
    mu: T,
    sigma2: T,
) -> Result<BmErlangWeights<T>> {
    if stages == 0 {
        return Err(Error::Domain("need at least one Erlang stage".into()));
    }
    if !(rate > T::zero()) || !(sigma2 > T::zero()) {
        return Err(Error::Domain("rate and sigma2 must be positive".into()));
    }
    let ratio = mu / sigma2;
    let root = (ratio * ratio + real::<T>(2.0) * rate / sigma2).sqrt();
    let lambda_plus = -ratio + root;
    let lambda_minus = ratio + root;
    let theta_plus = lambda_minus / (lambda_plus + lambda_minus);
    let theta_minus = lambda_plus / (lambda_plus + lambda_minus);

    let mut theta_plus_pow = vec![T::one(); stages + 1];
    let mut theta_minus_pow = vec![T::one(); stages + 1];
    for j in 1..=stages {
        theta_plus_pow[j] = theta_plus_pow[j - 1] * theta_plus;
        theta_minus_pow[j] = theta_minus_pow[j - 1] * theta_minus;
    }

    let mut p_bar: Vec<Vec<T>> = vec![vec![T::one()]];
    let mut p_under: Vec<Vec<T>> = vec![vec![T::one()]];
    // exceed[d] = probability that a fresh exponential exceeds the d-stage
    // mixture on the opposite side; depends only on completed rows
    let mut exceed_plus = vec![T::zero(); stages + 1];
    let mut exceed_minus = vec![T::zero(); stages + 1];
    let fill_exceed = |d: usize,
                       p_bar: &[Vec<T>],
                       p_under: &[Vec<T>],
                       exceed_plus: &mut Vec<T>,
                       exceed_minus: &mut Vec<T>| {
        let mut sp = T::zero();
        let mut sm = T::zero();
        for j in 1..=d {
            sp += p_under[d - 1][j - 1] * theta_plus_pow[j];
            sm += p_bar[d - 1][j - 1] * theta_minus_pow[j];
        }
        exceed_plus[d] = sp;
        exceed_minus[d] = sm;
    };
    fill_exceed(1, &p_bar, &p_under, &mut exceed_plus, &mut exceed_minus);

    for k in 1..stages {
        let mut row_bar = vec![T::zero(); k + 1];
        let mut row_under = vec![T::zero(); k + 1];
        for i in 1..=k {
            let mut sb = T::zero();
            let mut su = T::zero();
            for l in (i - 1)..k {
                sb += p_bar[l][i - 1] * exceed_plus[k - l];
                su += p_under[l][i - 1] * exceed_minus[k - l];
            }
            row_bar[i] = sb;
            row_under[i] = su;
        }
        p_bar.push(row_bar);
        p_under.push(row_under);
        fill_exceed(k + 1, &p_bar, &p_under, &mut exceed_plus, &mut exceed_minus);
    }

    let q_bar: Vec<T> = p_bar
        .iter()
        .map(|row| row.iter().fold(T::zero(), |a, &b| a + b))
        .collect();
    let q_under: Vec<T> = p_under
        .iter()
        .map(|row| row.iter().fold(T::zero(), |a, &b| a + b))
        .collect();

    let mut ln_factorial = vec![T::zero(); stages + 1];
    for j in 1..=stages {
        ln_factorial[j] = ln_factorial[j - 1] + real::<T>(j as f64).ln();
    }

    Ok(BmErlangWeights {
        stages,
        rate,
        mu,
        sigma2,
        lambda_plus,
        lambda_minus,
        theta_plus,
        theta_minus,
        p_bar,
        p_under,
        q_bar,
        q_under,
        ln_factorial,
    })
}

impl<T: Scalar> BmErlangWeights<T> {
    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn rate(&self) -> T {
        self.rate
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    /// Decay rate of the maximum: positive root of `½σ²z² + μz − λ`.
    pub fn lambda_plus(&self) -> T {
        self.lambda_plus
    }

    /// Decay rate of the negated minimum.
    pub fn lambda_minus(&self) -> T {
        self.lambda_minus
    }

    pub fn theta_plus(&self) -> T {
        self.theta_plus
    }

    pub fn theta_minus(&self) -> T {
        self.theta_minus
    }

    /// Weight of Erlang(i+1, λ₊) in the maximum over stages `0..=k`,
    /// restricted to attainment in stage `k` (0-based, `i ≤ k`).
    pub fn p_bar(&self, i: usize, k: usize) -> T {
        self.p_bar[k][i]
    }

    pub fn p_under(&self, i: usize, k: usize) -> T {
        self.p_under[k][i]
    }

    /// Total weight `Σᵢ p̄(i; k)`.
    pub fn q_bar(&self, k: usize) -> T {
        self.q_bar[k]
    }

    pub fn q_under(&self, k: usize) -> T {
        self.q_under[k]
    }

    /// `P(stage at the supremum = k)` over the full horizon.
    pub fn phase_at_sup(&self, k: usize) -> Result<T> {
        self.check_stage(k)?;
        Ok(self.q_under[self.stages - 1 - k] * self.q_bar[k])
    }

    fn check_stage(&self, k: usize) -> Result<()> {
        if k >= self.stages {
            return Err(Error::IndexOutOfRange(format!(
                "stage {k} out of range for {} stages",
                self.stages
            )));
        }
        Ok(())
    }

    /// Erlang(shape, rho) density via logs; `shape` is 1-based.
    fn erlang_pdf(&self, shape: usize, rho: T, x: T) -> T {
        if x == T::zero() {
            return if shape == 1 { rho } else { T::zero() };
        }
        let sh = real::<T>(shape as f64);
        let shm1 = real::<T>((shape - 1) as f64);
        (sh * rho.ln() + shm1 * x.ln() - rho * x - self.ln_factorial[shape - 1]).exp()
    }

    /// Density of `(X̄_τ ∈ dx, J_σ̄ = k)`: the defective law of the
    /// maximum on the event that it is attained in stage `k`.
    pub fn sup_density(&self, x: T, k: usize) -> Result<T> {
        self.check_stage(k)?;
        if x < T::zero() {
            return Err(Error::Domain("sup density needs x >= 0".into()));
        }
        let mut mix = T::zero();
        for i in 0..=k {
            mix += self.p_bar[k][i] * self.erlang_pdf(i + 1, self.lambda_plus, x);
        }
        Ok(self.q_under[self.stages - 1 - k] * mix)
    }

    /// Density of `(−X̲_τ ∈ dx, J_σ̲ = k)`, mirror of [`Self::sup_density`].
    pub fn inf_density(&self, x: T, k: usize) -> Result<T> {
        self.check_stage(k)?;
        if x < T::zero() {
            return Err(Error::Domain("inf density needs x >= 0".into()));
        }
        let mut mix = T::zero();
        for i in 0..=k {
            mix += self.p_under[k][i] * self.erlang_pdf(i + 1, self.lambda_minus, x);
        }
        Ok(self.q_bar[self.stages - 1 - k] * mix)
    }

    /// Density of `(X̄_τ ∈ dx, X̄_τ − X_τ ∈ dy, J_σ̄ = k)`: the two mixture
    /// factors multiply, the drawdown factor running over the remaining
    /// stages in reverse order.
    pub fn joint_density(&self, x: T, y: T, k: usize) -> Result<T> {
        self.check_stage(k)?;
        if x < T::zero() || y < T::zero() {
            return Err(Error::Domain("joint density needs x, y >= 0".into()));
        }
        let mut up = T::zero();
        for i in 0..=k {
            up += self.p_bar[k][i] * self.erlang_pdf(i + 1, self.lambda_plus, x);
        }
        let rev = self.stages - 1 - k;
        let mut down = T::zero();
        for i in 0..=rev {
            down += self.p_under[rev][i] * self.erlang_pdf(i + 1, self.lambda_minus, y);
        }
        Ok(up * down)
    }
}
