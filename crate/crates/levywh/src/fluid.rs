//! Fluid embedding of a jump diffusion into a terminating Markov-modulated
//! Brownian motion.
//!
//! Jumps are levelled out: while an up-jump of size `y` happens instantly
//! in real time, the embedded fluid traverses it at slope +1 in fictitious
//! time, modulated by the jump's own phase process (slope −1 for down
//! jumps). The horizon clock only ticks in the Brownian phases, so the
//! killing rate is `t_i` there and zero in all jump phases, and the total
//! maximum of the fluid equals the maximum of the original process.
//!
//! Phase layout of the embedding: the `n` Brownian phases first (one per
//! horizon phase), then the `n·n⁺` up-jump phases grouped by horizon
//! phase, then the `n·n⁻` down-jump phases. With this order, extending a
//! horizon vector "by trailing zeros" is a literal concatenation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ph::PhaseTypeRep;
use crate::Scalar;

/// Brownian motion with drift plus independent two-sided compound-Poisson
/// jumps whose sizes are phase-type distributed.
#[derive(Debug, Clone)]
pub struct JumpDiffusionModel<T: Scalar> {
    mu: T,
    sigma2: T,
    up: Option<(T, PhaseTypeRep<T>)>,
    down: Option<(T, PhaseTypeRep<T>)>,
}

impl<T: Scalar> JumpDiffusionModel<T> {
    /// `up`/`down` pair a Poisson intensity with the jump-size law; absent
    /// means no jumps in that direction (intensity zero).
    pub fn new(
        mu: T,
        sigma2: T,
        up: Option<(T, PhaseTypeRep<T>)>,
        down: Option<(T, PhaseTypeRep<T>)>,
    ) -> Result<Self> {
        if !(sigma2 > T::zero()) {
            return Err(Error::Domain("variance sigma2 must be positive".into()));
        }
        if !mu.is_finite() {
            return Err(Error::Domain("drift mu must be finite".into()));
        }
        for (name, side) in [("up", &up), ("down", &down)] {
            if let Some((rate, _)) = side {
                if !(*rate > T::zero()) {
                    return Err(Error::Domain(format!(
                        "{name}-jump intensity must be positive; omit the side instead"
                    )));
                }
            }
        }
        Ok(JumpDiffusionModel {
            mu,
            sigma2,
            up,
            down,
        })
    }

    pub fn pure_brownian(mu: T, sigma2: T) -> Result<Self> {
        Self::new(mu, sigma2, None, None)
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    pub fn up_jumps(&self) -> Option<(T, &PhaseTypeRep<T>)> {
        self.up.as_ref().map(|(r, p)| (*r, p))
    }

    pub fn down_jumps(&self) -> Option<(T, &PhaseTypeRep<T>)> {
        self.down.as_ref().map(|(r, p)| (*r, p))
    }

    /// The model of `−X`: drift negated, jump sides swapped.
    pub fn sign_flipped(&self) -> Self {
        JumpDiffusionModel {
            mu: -self.mu,
            sigma2: self.sigma2,
            up: self.down.clone(),
            down: self.up.clone(),
        }
    }
}

/// Role of a fluid phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluidPhase {
    /// Real time runs; the horizon is in phase `horizon`.
    Brownian { horizon: usize },
    /// Levelling an up-jump that started in horizon phase `horizon`; the
    /// jump's own phase process is in `stage`.
    UpJump { horizon: usize, stage: usize },
    /// Levelling a down-jump.
    DownJump { horizon: usize, stage: usize },
}

/// Terminating Markov-modulated Brownian motion: phase generator with the
/// killing folded into deficient row sums, per-phase drift and variance,
/// and the mask of phases in which real time runs.
#[derive(Debug, Clone)]
pub struct FluidModel<T: Scalar> {
    generator: DMatrix<T>,
    drift: DVector<T>,
    variance: DVector<T>,
    real_time: Vec<bool>,
    labels: Vec<FluidPhase>,
    horizon_phases: usize,
}

impl<T: Scalar> FluidModel<T> {
    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &DMatrix<T> {
        &self.generator
    }

    pub fn drift(&self) -> &DVector<T> {
        &self.drift
    }

    pub fn variance(&self) -> &DVector<T> {
        &self.variance
    }

    pub fn real_time(&self) -> &[bool] {
        &self.real_time
    }

    pub fn labels(&self) -> &[FluidPhase] {
        &self.labels
    }

    /// Number of horizon phases `n` (= number of Brownian phases).
    pub fn horizon_phases(&self) -> usize {
        self.horizon_phases
    }

    /// Killing rates `−Q·1`.
    pub fn killing(&self) -> DVector<T> {
        let m = self.dim();
        DVector::from_fn(m, |i, _| -self.generator.row(i).sum())
    }

    /// Flat indices of phases that can sit at a new running maximum:
    /// positive variance or positive drift.
    pub fn up_phase_indices(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&p| self.variance[p] > T::zero() || self.drift[p] > T::zero())
            .collect()
    }
}

/// Builds the fluid embedding of `model` killed at the phase-type
/// `horizon`.
pub fn embed<T: Scalar>(model: &JumpDiffusionModel<T>, horizon: &PhaseTypeRep<T>) -> FluidModel<T> {
    let n = horizon.dim();
    let n_up = model.up_jumps().map_or(0, |(_, p)| p.dim());
    let n_down = model.down_jumps().map_or(0, |(_, p)| p.dim());
    let m = n * (1 + n_up + n_down);

    let up_base = n;
    let down_base = n + n * n_up;
    let up_idx = |i: usize, j: usize| up_base + i * n_up + j;
    let down_idx = |i: usize, j: usize| down_base + i * n_down + j;

    let mut q = DMatrix::<T>::zeros(m, m);
    let mut drift = DVector::from_element(m, T::zero());
    let mut variance = DVector::from_element(m, T::zero());
    let mut real_time = vec![false; m];
    let mut labels = Vec::with_capacity(m);

    for i in 0..n {
        labels.push(FluidPhase::Brownian { horizon: i });
        drift[i] = model.mu();
        variance[i] = model.sigma2();
        real_time[i] = true;
        for k in 0..n {
            q[(i, k)] = horizon.generator()[(i, k)];
        }
        if let Some((lam, ph)) = model.up_jumps() {
            q[(i, i)] -= lam;
            for j in 0..n_up {
                q[(i, up_idx(i, j))] = lam * ph.initial()[j];
            }
        }
        if let Some((lam, ph)) = model.down_jumps() {
            q[(i, i)] -= lam;
            for j in 0..n_down {
                q[(i, down_idx(i, j))] = lam * ph.initial()[j];
            }
        }
    }
    if let Some((_, ph)) = model.up_jumps() {
        for i in 0..n {
            for j in 0..n_up {
                let row = up_idx(i, j);
                labels.push(FluidPhase::UpJump {
                    horizon: i,
                    stage: j,
                });
                drift[row] = T::one();
                for k in 0..n_up {
                    q[(row, up_idx(i, k))] = ph.generator()[(j, k)];
                }
                q[(row, i)] = ph.exit()[j];
            }
        }
    }
    if let Some((_, ph)) = model.down_jumps() {
        for i in 0..n {
            for j in 0..n_down {
                let row = down_idx(i, j);
                labels.push(FluidPhase::DownJump {
                    horizon: i,
                    stage: j,
                });
                drift[row] = -T::one();
                for k in 0..n_down {
                    q[(row, down_idx(i, k))] = ph.generator()[(j, k)];
                }
                q[(row, i)] = ph.exit()[j];
            }
        }
    }

    FluidModel {
        generator: q,
        drift,
        variance,
        real_time,
        labels,
        horizon_phases: n,
    }
}

/// Embedding of `−X` with the same horizon: first passage of `X` over
/// negative levels becomes upward passage of this model.
pub fn embed_negated<T: Scalar>(
    model: &JumpDiffusionModel<T>,
    horizon: &PhaseTypeRep<T>,
) -> FluidModel<T> {
    embed(&model.sign_flipped(), horizon)
}
