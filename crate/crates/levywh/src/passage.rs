//! First-passage generators of the fluid model.
//!
//! The phase observed as the fluid first crosses each upward level forms a
//! terminating Markov chain in the level variable; its sub-generator `U`
//! satisfies `Φ(x) = e^{Ux}`, where `Φ(x)_{ik}` is the probability
//! (discounted at rate `δ` over real time when requested) of first
//! crossing level `x` in up-phase `k`, starting at level 0 in up-phase
//! `i`. Up-phases are those with positive variance or positive drift;
//! for the standard embedding that is `n(n⁺+1)` of them, Brownian phases
//! first.
//!
//! `U` is assembled spectrally: `(z, h)` solves the quadratic pencil
//! `(½z²Δ_v − zΔ_d + Q(δ)) h = 0` exactly when `e^{zx} h` is harmonic for
//! the level process of the *negated* fluid, so the stable roots
//! (`Re z < 0`) are precisely the eigenvalues of `U` and there are as many
//! of them as up-phases. The pencil is linearized to an ordinary
//! eigenproblem by adjoining `g = z·h` on the variance phases. When the
//! eigenvector basis is defective or ill-conditioned (an Erlang horizon
//! makes every Brownian phase share one quadratic), the stable invariant
//! subspace of an ordered real Schur form replaces it.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fluid::FluidModel;
use crate::linalg::{guarded_inverse, guarded_inverse_c, RealSchur};
use crate::{real, Scalar};

/// Roots with real part within this distance of the imaginary axis are
/// rejected; with killing present they cannot occur and signal a broken
/// input or failed conditioning.
pub const STABILITY_MARGIN: f64 = 1e-10;

/// Condition cap on the stacked up-phase eigenvector (or Schur basis)
/// matrix beyond which it counts as numerically singular.
pub const BASIS_CONDITION_LIMIT: f64 = 1e10;

/// Stricter internal routing threshold: above this condition number the
/// eigenvector assembly would lose more than ~1e-10 to roundoff, so
/// [`compute_passage`] prefers the invariant-subspace fallback even
/// though the basis is not yet singular in the [`BASIS_CONDITION_LIMIT`]
/// sense.
const ROUTING_CONDITION_LIMIT: f64 = 1e6;

/// Tolerance for negative off-diagonals / exit rates of the assembled `U`;
/// violations within the slack are clamped to zero.
pub const SUBGENERATOR_SLACK: f64 = 1e-9;

/// First-passage operator: `U` (possibly discounted), the undiscounted
/// exit-rate vector `u`, and the map from operator rows to flat fluid
/// phases.
///
/// The density of the maximum pairs the discounted kernel with the
/// *undiscounted* exit rates, so `exit` always comes from the `δ = 0`
/// solve regardless of `delta`.
#[derive(Debug, Clone)]
pub struct PassageOperator<T: Scalar> {
    matrix: DMatrix<T>,
    exit: DVector<T>,
    up_index: Vec<usize>,
    delta: T,
}

impl<T: Scalar> PassageOperator<T> {
    /// Number of up-phases.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The (sub-generator) first-passage matrix `U(δ)`.
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    /// Undiscounted exit rates `u = −U(0)·1`.
    pub fn exit_rates(&self) -> &DVector<T> {
        &self.exit
    }

    /// Flat fluid-phase index of each operator row.
    pub fn up_index(&self) -> &[usize] {
        &self.up_index
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// Crossing kernel `e^{Ux}`.
    pub fn kernel(&self, x: T) -> DMatrix<T> {
        (self.matrix.clone() * x).exp()
    }
}

/// Stable eigenpairs of the first-passage pencil: `values[j]` with the
/// pencil eigenvector `vectors[.., j]` over all fluid phases. Conjugate
/// pairs appear as consecutive columns.
#[derive(Debug, Clone)]
pub struct SpectralSolution<T: Scalar> {
    pub values: Vec<Complex<T>>,
    pub vectors: DMatrix<Complex<T>>,
}

/// Companion linearization of the up-passage pencil with killing raised by
/// `δ` on real-time phases.
fn companion<T: Scalar>(fluid: &FluidModel<T>, delta: T) -> Result<DMatrix<T>> {
    let m = fluid.dim();
    let mut variance_rows = Vec::new();
    for p in 0..m {
        if fluid.variance()[p] > T::zero() {
            variance_rows.push(p);
        } else if fluid.drift()[p] == T::zero() {
            return Err(Error::Domain(format!(
                "phase {p} has zero variance and zero drift"
            )));
        }
    }
    let nv = variance_rows.len();
    let mut gpos = vec![usize::MAX; m];
    for (idx, &p) in variance_rows.iter().enumerate() {
        gpos[p] = m + idx;
    }
    let mut a = DMatrix::<T>::zeros(m + nv, m + nv);
    let two = real::<T>(2.0);
    for p in 0..m {
        let killed = |q: usize| {
            let mut v = fluid.generator()[(p, q)];
            if q == p && fluid.real_time()[p] {
                v -= delta;
            }
            v
        };
        if fluid.variance()[p] > T::zero() {
            a[(p, gpos[p])] = T::one();
            let row = gpos[p];
            let f = two / fluid.variance()[p];
            for q in 0..m {
                a[(row, q)] = -f * killed(q);
            }
            a[(row, gpos[p])] = f * fluid.drift()[p];
        } else {
            let d = fluid.drift()[p];
            for q in 0..m {
                a[(p, q)] = killed(q) / d;
            }
        }
    }
    Ok(a)
}

fn classify<T: Scalar>(schur: &RealSchur<T>, expected: usize) -> Result<()> {
    let margin = real::<T>(STABILITY_MARGIN);
    let mut stable = 0usize;
    for (s, sz) in schur.blocks() {
        let lam = schur.block_eigenvalue(s, sz);
        if lam.re.abs() <= margin {
            return Err(Error::DefectiveSpectrum(
                "pencil root within margin of the imaginary axis".into(),
            ));
        }
        if lam.re < T::zero() {
            stable += sz;
        }
    }
    if stable != expected {
        return Err(Error::DefectiveSpectrum(format!(
            "expected {expected} stable pencil roots, found {stable}"
        )));
    }
    Ok(())
}

/// Stable eigenpairs extracted by back-substitution, with the up-phase
/// basis condition check.
fn stable_eigenpairs<T: Scalar>(
    schur: &RealSchur<T>,
    fluid_dim: usize,
    up: &[usize],
    cond_limit: T,
) -> Result<(Vec<Complex<T>>, DMatrix<Complex<T>>)> {
    let r = up.len();
    let zero = Complex::new(T::zero(), T::zero());
    let mut values = Vec::with_capacity(r);
    let mut vectors = DMatrix::from_element(fluid_dim, r, zero);
    let mut col = 0usize;
    for (s, sz) in schur.blocks() {
        let lam = schur.block_eigenvalue(s, sz);
        if !(lam.re < T::zero()) {
            continue;
        }
        let (lam, v) = schur.eigenvector_at(s, sz);
        for dup in 0..sz {
            if col >= r {
                return Err(Error::DefectiveSpectrum(
                    "more stable eigenvectors than up-phases".into(),
                ));
            }
            for i in 0..fluid_dim {
                vectors[(i, col)] = if dup == 0 { v[i] } else { v[i].conj() };
            }
            values.push(if dup == 0 { lam } else { lam.conj() });
            col += 1;
        }
    }
    if col != r {
        return Err(Error::DefectiveSpectrum(format!(
            "expected {r} stable eigenvectors, found {col}"
        )));
    }
    // the up-phase restriction must form a usable basis
    let h_up = DMatrix::from_fn(r, r, |i, j| vectors[(up[i], j)]);
    guarded_inverse_c(&h_up, cond_limit).map_err(|_| {
        Error::DefectiveSpectrum(
            "up-phase eigenvector matrix is singular or ill-conditioned".into(),
        )
    })?;
    Ok((values, vectors))
}

fn assemble_from_eigenpairs<T: Scalar>(
    values: &[Complex<T>],
    vectors: &DMatrix<Complex<T>>,
    up: &[usize],
    cond_limit: T,
) -> Result<DMatrix<T>> {
    let r = up.len();
    let h_up = DMatrix::from_fn(r, r, |i, j| vectors[(up[i], j)]);
    let h_inv = guarded_inverse_c(&h_up, cond_limit).map_err(|_| {
        Error::DefectiveSpectrum(
            "up-phase eigenvector matrix is singular or ill-conditioned".into(),
        )
    })?;
    let mut scaled = h_up;
    for j in 0..r {
        for i in 0..r {
            scaled[(i, j)] *= values[j];
        }
    }
    let u_c = scaled * h_inv;
    let mut u = DMatrix::<T>::zeros(r, r);
    let mut worst_imag = T::zero();
    let mut scale = T::one();
    for i in 0..r {
        for j in 0..r {
            u[(i, j)] = u_c[(i, j)].re;
            let im = u_c[(i, j)].im.abs();
            if im > worst_imag {
                worst_imag = im;
            }
            let re = u_c[(i, j)].re.abs();
            if re > scale {
                scale = re;
            }
        }
    }
    if worst_imag > real::<T>(1e-8) * scale {
        return Err(Error::DefectiveSpectrum(
            "assembled U has a non-negligible imaginary part".into(),
        ));
    }
    Ok(u)
}

/// Fallback that needs no diagonalizability: order the Schur form so the
/// stable group leads, then conjugate the leading block through the
/// up-phase rows of the invariant-subspace basis.
fn assemble_from_invariant_subspace<T: Scalar>(
    mut schur: RealSchur<T>,
    up: &[usize],
) -> Result<DMatrix<T>> {
    let r = up.len();
    let lead = schur.reorder_selected_first(&|z: Complex<T>| z.re < T::zero())?;
    if lead != r {
        return Err(Error::DefectiveSpectrum(format!(
            "stable invariant subspace has dimension {lead}, expected {r}"
        )));
    }
    let w_up = DMatrix::from_fn(r, r, |i, j| schur.q[(up[i], j)]);
    let s = schur.t.view((0, 0), (r, r)).into_owned();
    let w_inv = guarded_inverse(&w_up, real::<T>(BASIS_CONDITION_LIMIT)).map_err(|_| {
        Error::DefectiveSpectrum("up-phase rows of the Schur basis are ill-conditioned".into())
    })?;
    Ok(w_up * s * w_inv)
}

/// Clamps roundoff-level sign violations and derives the exit rates so
/// that `U·1 + u = 0` holds exactly.
fn finalize_subgenerator<T: Scalar>(mut u: DMatrix<T>) -> Result<(DMatrix<T>, DVector<T>)> {
    let r = u.nrows();
    let slack = real::<T>(SUBGENERATOR_SLACK);
    for i in 0..r {
        for j in 0..r {
            if i != j && u[(i, j)] < T::zero() {
                if u[(i, j)] < -slack {
                    return Err(Error::DefectiveSpectrum(format!(
                        "assembled U has off-diagonal {:?} at ({i},{j})",
                        u[(i, j)]
                    )));
                }
                u[(i, j)] = T::zero();
            }
        }
    }
    for _ in 0..4 {
        let mut adjusted = false;
        for i in 0..r {
            let rs: T = u.row(i).sum();
            if rs > slack {
                return Err(Error::DefectiveSpectrum(format!(
                    "assembled U has positive row sum {rs:?} at row {i}"
                )));
            }
            if rs > T::zero() {
                u[(i, i)] -= rs;
                adjusted = true;
            }
        }
        if !adjusted {
            break;
        }
    }
    let mut exit = DVector::zeros(r);
    for i in 0..r {
        let rs: T = u.row(i).sum();
        exit[i] = if rs < T::zero() { -rs } else { T::zero() };
    }
    Ok((u, exit))
}

fn solve_first_passage<T: Scalar>(
    fluid: &FluidModel<T>,
    delta: T,
    up: &[usize],
) -> Result<(DMatrix<T>, DVector<T>)> {
    let a = companion(fluid, delta)?;
    let schur = RealSchur::compute(a)?;
    classify(&schur, up.len())?;
    let routing = real::<T>(ROUTING_CONDITION_LIMIT);
    let by_eigenvectors = stable_eigenpairs(&schur, fluid.dim(), up, routing)
        .and_then(|(vals, vecs)| assemble_from_eigenpairs(&vals, &vecs, up, routing))
        .and_then(finalize_subgenerator);
    match by_eigenvectors {
        Ok(out) => Ok(out),
        Err(Error::DefectiveSpectrum(_)) | Err(Error::Singular(_)) => {
            assemble_from_invariant_subspace(schur, up).and_then(finalize_subgenerator)
        }
        Err(e) => Err(e),
    }
}

/// Computes the first-passage operator of `fluid`, discounted at rate
/// `delta` over real time. The exit rates always come from the
/// undiscounted solve.
pub fn compute_passage<T: Scalar>(fluid: &FluidModel<T>, delta: T) -> Result<PassageOperator<T>> {
    if delta < T::zero() {
        return Err(Error::Domain("discount rate must be nonnegative".into()));
    }
    let up = fluid.up_phase_indices();
    if up.is_empty() {
        return Err(Error::NoUpPhases);
    }
    let (matrix0, exit0) = solve_first_passage(fluid, T::zero(), &up)?;
    let matrix = if delta > T::zero() {
        solve_first_passage(fluid, delta, &up)?.0
    } else {
        matrix0
    };
    Ok(PassageOperator {
        matrix,
        exit: exit0,
        up_index: up,
        delta,
    })
}

/// Stable eigenpairs of the up-passage pencil. Errors with
/// [`Error::DefectiveSpectrum`] when the stable root count differs from
/// the number of up-phases, a root sits on the axis, or the up-phase
/// eigenvector matrix is too ill-conditioned to use — the condition under
/// which [`compute_passage`] switches to its invariant-subspace fallback.
pub fn spectral_solve<T: Scalar>(fluid: &FluidModel<T>, delta: T) -> Result<SpectralSolution<T>> {
    if delta < T::zero() {
        return Err(Error::Domain("discount rate must be nonnegative".into()));
    }
    let up = fluid.up_phase_indices();
    if up.is_empty() {
        return Err(Error::NoUpPhases);
    }
    let a = companion(fluid, delta)?;
    let schur = RealSchur::compute(a)?;
    classify(&schur, up.len())?;
    let (values, vectors) =
        stable_eigenpairs(&schur, fluid.dim(), &up, real::<T>(BASIS_CONDITION_LIMIT))?;
    Ok(SpectralSolution { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::{embed, embed_negated, JumpDiffusionModel};
    use crate::ph::PhaseTypeRep;

    /// Positive root of ½σ²z² + μz − rate = 0 (decay rate of the maximum).
    fn lambda_plus(mu: f64, sigma2: f64, rate: f64) -> f64 {
        -mu / sigma2 + (mu * mu / (sigma2 * sigma2) + 2.0 * rate / sigma2).sqrt()
    }

    fn bm(mu: f64, sigma2: f64) -> JumpDiffusionModel<f64> {
        JumpDiffusionModel::pure_brownian(mu, sigma2).unwrap()
    }

    #[test]
    fn driftless_unit_case_is_explicit() {
        let fl = embed(&bm(0.0, 1.0), &PhaseTypeRep::exponential(0.5).unwrap());
        let op = compute_passage(&fl, 0.0).unwrap();
        assert_eq!(op.dim(), 1);
        assert!((op.matrix()[(0, 0)] + 1.0).abs() < 1e-12);
        assert!((op.exit_rates()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discounting_keeps_undiscounted_exit_rates() {
        let (mu, sigma2, rate, delta) = (0.4, 1.5, 0.9, 0.35);
        let fl = embed(&bm(mu, sigma2), &PhaseTypeRep::exponential(rate).unwrap());
        let op = compute_passage(&fl, delta).unwrap();
        assert!((op.matrix()[(0, 0)] + lambda_plus(mu, sigma2, rate + delta)).abs() < 1e-12);
        assert!((op.exit_rates()[0] - lambda_plus(mu, sigma2, rate)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_case_has_symmetric_roots() {
        let fl = embed(&bm(0.0, 2.0), &PhaseTypeRep::exponential(1.0).unwrap());
        let sol = spectral_solve(&fl, 0.0).unwrap();
        assert_eq!(sol.values.len(), 1);
        assert!((sol.values[0].re + (2.0f64 * 1.0 / 2.0).sqrt()).abs() < 1e-12);
        assert!(sol.values[0].im.abs() < 1e-14);
    }

    #[test]
    fn one_up_jump_phase_has_two_stable_roots() {
        let up = PhaseTypeRep::exponential(2.0).unwrap();
        let model = JumpDiffusionModel::new(0.2, 1.0, Some((0.5, up)), None).unwrap();
        let fl = embed(&model, &PhaseTypeRep::exponential(1.0).unwrap());
        let sol = spectral_solve(&fl, 0.0).unwrap();
        assert_eq!(sol.values.len(), 2);
        assert!(sol.values.iter().all(|z| z.re < 0.0));
        let op = compute_passage(&fl, 0.0).unwrap();
        assert_eq!(op.dim(), 2);
        // sub-generator recovery: row sums plus exits vanish
        for i in 0..2 {
            let resid: f64 = op.matrix().row(i).sum() + op.exit_rates()[i];
            assert!(resid.abs() < 1e-15);
        }
    }

    #[test]
    fn erlang_horizon_needs_the_schur_fallback() {
        let horizon = PhaseTypeRep::erlang(3, 1.0).unwrap();
        let fl = embed(&bm(0.0, 1.0), &horizon);
        assert!(matches!(
            spectral_solve(&fl, 0.0),
            Err(Error::DefectiveSpectrum(_))
        ));
        let op = compute_passage(&fl, 0.0).unwrap();
        let lp = lambda_plus(0.0, 1.0, 1.0);
        for i in 0..3 {
            assert!(
                (op.matrix()[(i, i)] + lp).abs() < 1e-9,
                "diagonal {} = {}",
                i,
                op.matrix()[(i, i)]
            );
            // the stage at first passage only moves forward
            for k in 0..i {
                assert!(op.matrix()[(i, k)].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kernel_satisfies_the_semigroup_property() {
        let up = PhaseTypeRep::erlang(2, 3.0).unwrap();
        let down = PhaseTypeRep::exponential(1.5).unwrap();
        let model = JumpDiffusionModel::new(-0.2, 0.8, Some((0.4, up)), Some((0.7, down))).unwrap();
        let horizon = PhaseTypeRep::new(
            nalgebra::DVector::from_vec(vec![0.6, 0.4]),
            nalgebra::DMatrix::from_row_slice(2, 2, &[-1.2, 0.5, 0.3, -0.9]),
        )
        .unwrap();
        let fl = embed(&model, &horizon);
        let op = compute_passage(&fl, 0.0).unwrap();
        assert_eq!(op.dim(), 2 * (1 + 2));
        for (x, y) in [(0.3, 1.1), (0.9, 0.4), (1.7, 1.9)] {
            let lhs = op.kernel(x + y);
            let rhs = op.kernel(x) * op.kernel(y);
            assert!((lhs - rhs).amax() < 1e-10);
        }
    }

    #[test]
    fn undiscounted_crossing_mass_is_one() {
        let up = PhaseTypeRep::exponential(2.5).unwrap();
        let model = JumpDiffusionModel::new(0.1, 1.0, Some((0.3, up)), None).unwrap();
        let horizon = PhaseTypeRep::erlang(2, 1.0).unwrap();
        let fl = embed(&model, &horizon);
        let op = compute_passage(&fl, 0.0).unwrap();
        let r = op.dim();
        let mut alpha_ext = DVector::<f64>::zeros(r);
        for i in 0..2 {
            alpha_ext[i] = horizon.initial()[i];
        }
        let lu = nalgebra::linalg::LU::new(op.matrix().transpose());
        let m = lu.solve(&(-alpha_ext)).unwrap();
        let total: f64 = m.dot(op.exit_rates());
        assert!((total - 1.0).abs() < 1e-8, "total = {total}");
    }

    #[test]
    fn crossing_mass_is_monotone_in_delta() {
        let model = bm(0.15, 1.2);
        let horizon = PhaseTypeRep::erlang(2, 0.8).unwrap();
        let fl = embed(&model, &horizon);
        let mut last = [f64::INFINITY; 2];
        for delta in [0.0, 0.3, 0.8] {
            let op = compute_passage(&fl, delta).unwrap();
            let mut alpha_ext = DVector::<f64>::zeros(op.dim());
            alpha_ext[0] = 1.0;
            let lu = nalgebra::linalg::LU::new(op.matrix().transpose());
            let m = lu.solve(&(-alpha_ext)).unwrap();
            for k in 0..op.dim() {
                let ck = m[k] * op.exit_rates()[k];
                assert!(ck <= last[k] + 1e-12);
                last[k] = ck;
            }
        }
    }

    #[test]
    fn downward_operator_has_down_phase_count() {
        let up = PhaseTypeRep::erlang(2, 3.0).unwrap();
        let down = PhaseTypeRep::exponential(1.0).unwrap();
        let model = JumpDiffusionModel::new(0.3, 1.0, Some((0.5, up)), Some((0.25, down))).unwrap();
        let horizon = PhaseTypeRep::erlang(2, 1.0).unwrap();
        let fl = embed_negated(&model, &horizon);
        let op = compute_passage(&fl, 0.0).unwrap();
        assert_eq!(op.dim(), 2 * (1 + 1));
    }

    #[test]
    fn single_precision_solve_matches_the_closed_form() {
        let model = JumpDiffusionModel::<f32>::pure_brownian(0.0, 1.0).unwrap();
        let horizon = PhaseTypeRep::<f32>::exponential(0.5).unwrap();
        let op = compute_passage(&embed(&model, &horizon), 0.0f32).unwrap();
        assert!((op.matrix()[(0, 0)] + 1.0).abs() < 1e-5);
        assert!((op.exit_rates()[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rejects_negative_delta_and_empty_models() {
        let fl = embed(&bm(0.0, 1.0), &PhaseTypeRep::exponential(1.0).unwrap());
        assert!(matches!(compute_passage(&fl, -0.1), Err(Error::Domain(_))));
    }
}
