//! Dense linear-algebra support on top of nalgebra.
//!
//! Adds the pieces the first-passage solver needs that nalgebra does not
//! expose: condition-guarded inversion, eigenvector extraction from a real
//! Schur form by back-substitution, and reordering of the Schur form so
//! that a selected group of eigenvalues occupies the leading block (direct
//! swapping of adjacent diagonal blocks through a small Sylvester solve).

use nalgebra::{Complex, ComplexField, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::{epsilon, real, Scalar};

/// Maximum absolute column sum.
pub fn one_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    let mut best = T::zero();
    for j in 0..m.ncols() {
        let mut s = T::zero();
        for i in 0..m.nrows() {
            s += m[(i, j)].abs();
        }
        if s > best {
            best = s;
        }
    }
    best
}

fn one_norm_c<T: Scalar>(m: &DMatrix<Complex<T>>) -> T {
    let mut best = T::zero();
    for j in 0..m.ncols() {
        let mut s = T::zero();
        for i in 0..m.nrows() {
            s += m[(i, j)].modulus();
        }
        if s > best {
            best = s;
        }
    }
    best
}

/// Inverse with a 1-norm condition guard: errors when `‖m‖₁‖m⁻¹‖₁` exceeds
/// `cond_limit` or the factorization breaks down.
pub fn guarded_inverse<T: Scalar>(m: &DMatrix<T>, cond_limit: T) -> Result<DMatrix<T>> {
    let norm = one_norm(m);
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix is numerically singular".into()))?;
    let cond = norm * one_norm(&inv);
    if !(cond < cond_limit) {
        return Err(Error::Singular(format!(
            "condition estimate {cond:?} exceeds limit {cond_limit:?}"
        )));
    }
    Ok(inv)
}

/// Complex variant of [`guarded_inverse`].
pub fn guarded_inverse_c<T: Scalar>(
    m: &DMatrix<Complex<T>>,
    cond_limit: T,
) -> Result<DMatrix<Complex<T>>> {
    let norm = one_norm_c(m);
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("complex matrix is numerically singular".into()))?;
    let cond = norm * one_norm_c(&inv);
    if !(cond < cond_limit) {
        return Err(Error::Singular(format!(
            "condition estimate {cond:?} exceeds limit {cond_limit:?}"
        )));
    }
    Ok(inv)
}

/// Real Schur decomposition `A = Q T Qᵀ` with `Q` orthogonal and `T`
/// quasi-upper-triangular. After construction every 2x2 diagonal block
/// carries a complex-conjugate eigenvalue pair; real pairs are split into
/// 1x1 blocks.
#[derive(Debug, Clone)]
pub struct RealSchur<T: Scalar> {
    pub q: DMatrix<T>,
    pub t: DMatrix<T>,
}

impl<T: Scalar> RealSchur<T> {
    pub fn compute(a: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Dimension("Schur input must be square".into()));
        }
        let max_iter = 500 * n.max(2) * n.max(2);
        let schur = nalgebra::linalg::Schur::try_new(a, epsilon::<T>(), max_iter)
            .ok_or_else(|| Error::DefectiveSpectrum("QR iteration did not converge".into()))?;
        let (q, t) = schur.unpack();
        let mut out = RealSchur { q, t };
        out.clean();
        out.split_real_blocks();
        Ok(out)
    }

    fn dim(&self) -> usize {
        self.t.nrows()
    }

    /// Forces the quasi-triangular structure: everything below the first
    /// subdiagonal is set to zero, and subdiagonal entries at roundoff
    /// level relative to the neighbouring diagonal are dropped.
    fn clean(&mut self) {
        let n = self.dim();
        let scale = self.t.amax();
        let eps = epsilon::<T>();
        for i in 2..n {
            for j in 0..(i - 1) {
                self.t[(i, j)] = T::zero();
            }
        }
        for i in 1..n {
            let local = self.t[(i - 1, i - 1)].abs() + self.t[(i, i)].abs();
            let tol = eps * if local > scale * eps { local } else { scale };
            if self.t[(i, i - 1)].abs() <= tol {
                self.t[(i, i - 1)] = T::zero();
            }
        }
    }

    /// Rotates every 2x2 diagonal block with real eigenvalues into upper
    /// triangular form, so that remaining 2x2 blocks are genuine complex
    /// pairs.
    fn split_real_blocks(&mut self) {
        let n = self.dim();
        let mut i = 0;
        while i + 1 < n {
            if self.t[(i + 1, i)] == T::zero() {
                i += 1;
                continue;
            }
            let (a, b) = (self.t[(i, i)], self.t[(i, i + 1)]);
            let (c, d) = (self.t[(i + 1, i)], self.t[(i + 1, i + 1)]);
            let disc = (a - d) * (a - d) + real::<T>(4.0) * b * c;
            if disc < T::zero() {
                i += 2;
                continue;
            }
            let half = real::<T>(0.5);
            let lam1 = (a + d) * half + disc.sqrt() * half;
            // eigenvector of the block for lam1, from whichever row is better scaled
            let (u0, u1) = if b.abs() >= c.abs() && b != T::zero() {
                (b, lam1 - a)
            } else {
                (lam1 - d, c)
            };
            let nrm = (u0 * u0 + u1 * u1).sqrt();
            if nrm == T::zero() {
                // already effectively diagonal
                self.t[(i + 1, i)] = T::zero();
                i += 1;
                continue;
            }
            let (co, si) = (u0 / nrm, u1 / nrm);
            // similarity by the rotation whose first column is the eigenvector
            for j in 0..n {
                let (x, y) = (self.t[(i, j)], self.t[(i + 1, j)]);
                self.t[(i, j)] = co * x + si * y;
                self.t[(i + 1, j)] = -si * x + co * y;
            }
            for r in 0..n {
                let (x, y) = (self.t[(r, i)], self.t[(r, i + 1)]);
                self.t[(r, i)] = co * x + si * y;
                self.t[(r, i + 1)] = -si * x + co * y;
            }
            for r in 0..self.q.nrows() {
                let (x, y) = (self.q[(r, i)], self.q[(r, i + 1)]);
                self.q[(r, i)] = co * x + si * y;
                self.q[(r, i + 1)] = -si * x + co * y;
            }
            self.t[(i + 1, i)] = T::zero();
            i += 2;
        }
    }

    /// Diagonal block layout as `(start, size)` pairs.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let n = self.dim();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            if i + 1 < n && self.t[(i + 1, i)] != T::zero() {
                out.push((i, 2));
                i += 2;
            } else {
                out.push((i, 1));
                i += 1;
            }
        }
        out
    }

    /// Representative eigenvalue of the block at `start` (nonnegative
    /// imaginary part for complex pairs).
    pub fn block_eigenvalue(&self, start: usize, size: usize) -> Complex<T> {
        if size == 1 {
            return Complex::new(self.t[(start, start)], T::zero());
        }
        let (a, b) = (self.t[(start, start)], self.t[(start, start + 1)]);
        let (c, d) = (self.t[(start + 1, start)], self.t[(start + 1, start + 1)]);
        let half = real::<T>(0.5);
        let disc = (a - d) * (a - d) + real::<T>(4.0) * b * c;
        if disc < T::zero() {
            Complex::new((a + d) * half, (-disc).sqrt() * half)
        } else {
            // should not happen after split_real_blocks; report the larger root
            Complex::new((a + d) * half + disc.sqrt() * half, T::zero())
        }
    }

    /// Eigenvalues in diagonal order, conjugate pairs listed (+ω, −ω).
    pub fn eigenvalues(&self) -> Vec<Complex<T>> {
        let mut out = Vec::with_capacity(self.dim());
        for (s, sz) in self.blocks() {
            let lam = self.block_eigenvalue(s, sz);
            out.push(lam);
            if sz == 2 {
                out.push(lam.conj());
            }
        }
        out
    }

    /// Reorders the Schur form so that blocks selected by `pick` come
    /// first, preserving `A = Q T Qᵀ`. Returns the size of the leading
    /// selected group.
    pub fn reorder_selected_first(&mut self, pick: &dyn Fn(Complex<T>) -> bool) -> Result<usize> {
        loop {
            self.split_real_blocks();
            let blocks = self.blocks();
            let flags: Vec<bool> = blocks
                .iter()
                .map(|&(s, sz)| pick(self.block_eigenvalue(s, sz)))
                .collect();
            let mut swapped = false;
            for w in 0..blocks.len().saturating_sub(1) {
                if !flags[w] && flags[w + 1] {
                    let (s1, p) = blocks[w];
                    let (_, q) = blocks[w + 1];
                    self.swap_adjacent(s1, p, q)?;
                    swapped = true;
                    break;
                }
            }
            if !swapped {
                break;
            }
        }
        let mut count = 0;
        for (s, sz) in self.blocks() {
            if pick(self.block_eigenvalue(s, sz)) {
                count += sz;
            } else {
                break;
            }
        }
        Ok(count)
    }

    /// Exchanges the adjacent diagonal blocks at `s1` (sizes `p`, then `q`)
    /// by the direct-swap method: solve `A11 X − X A22 = A12`, take an
    /// orthonormal basis of the column space of `[−X; I]`, and apply the
    /// resulting orthogonal similarity.
    fn swap_adjacent(&mut self, s1: usize, p: usize, q: usize) -> Result<()> {
        let n = self.dim();
        let s = p + q;
        let a11 = self.t.view((s1, s1), (p, p)).into_owned();
        let a12 = self.t.view((s1, s1 + p), (p, q)).into_owned();
        let a22 = self.t.view((s1 + p, s1 + p), (q, q)).into_owned();

        // Kronecker form of the Sylvester equation, column-major vec.
        let mut k = DMatrix::<T>::zeros(p * q, p * q);
        let mut rhs = DVector::<T>::zeros(p * q);
        for col in 0..q {
            for row in 0..p {
                let ridx = col * p + row;
                for rr in 0..p {
                    k[(ridx, col * p + rr)] += a11[(row, rr)];
                }
                for cc in 0..q {
                    k[(ridx, cc * p + row)] -= a22[(cc, col)];
                }
                rhs[ridx] = a12[(row, col)];
            }
        }
        let lu = nalgebra::linalg::LU::new(k);
        let xvec = lu.solve(&rhs).ok_or_else(|| {
            Error::DefectiveSpectrum("eigenvalue swap: Sylvester solve failed".into())
        })?;
        let mut x = DMatrix::<T>::zeros(p, q);
        for col in 0..q {
            for row in 0..p {
                x[(row, col)] = xvec[col * p + row];
            }
        }

        // Square matrix whose first q columns span col([−X; I]).
        let mut m = DMatrix::<T>::zeros(s, s);
        for col in 0..q {
            for row in 0..p {
                m[(row, col)] = -x[(row, col)];
            }
            m[(p + col, col)] = T::one();
        }
        for col in 0..p {
            m[(col, q + col)] = T::one();
        }
        let g = nalgebra::linalg::QR::new(m).q();

        let block = self.t.view((s1, s1), (s, s)).into_owned();
        let mut rotated = g.transpose() * &block * &g;

        let blknorm = {
            let f = block.norm();
            if f > T::one() {
                f
            } else {
                T::one()
            }
        };
        let mut resid = T::zero();
        for row in q..s {
            for col in 0..q {
                resid += rotated[(row, col)].abs();
                rotated[(row, col)] = T::zero();
            }
        }
        if resid > real::<T>(1e-7) * blknorm {
            return Err(Error::DefectiveSpectrum(
                "eigenvalue swap rejected: residual too large".into(),
            ));
        }
        self.t.view_mut((s1, s1), (s, s)).copy_from(&rotated);

        if s1 + s < n {
            let right = self.t.view((s1, s1 + s), (s, n - s1 - s)).into_owned();
            self.t
                .view_mut((s1, s1 + s), (s, n - s1 - s))
                .copy_from(&(g.transpose() * right));
        }
        if s1 > 0 {
            let above = self.t.view((0, s1), (s1, s)).into_owned();
            self.t.view_mut((0, s1), (s1, s)).copy_from(&(above * &g));
        }
        let qcols = self.q.view((0, s1), (self.q.nrows(), s)).into_owned();
        self.q
            .view_mut((0, s1), (self.q.nrows(), s))
            .copy_from(&(qcols * &g));
        Ok(())
    }

    /// Eigenvector for the block at `start` by back-substitution through
    /// the quasi-triangular form, mapped back to the original basis.
    /// Returns the eigenvalue with nonnegative imaginary part; for a
    /// complex pair the conjugate eigenvector is the conjugate of the
    /// returned one.
    ///
    /// Near-singular pivots (repeated eigenvalues) are perturbed to
    /// roundoff level, as in the classic EISPACK back-substitution; the
    /// caller is expected to detect the resulting ill-conditioning.
    pub fn eigenvector_at(&self, start: usize, size: usize) -> (Complex<T>, DVector<Complex<T>>) {
        let n = self.dim();
        let tnorm = {
            let a = self.t.amax();
            if a > T::zero() {
                a
            } else {
                T::one()
            }
        };
        let tiny = epsilon::<T>() * tnorm;
        let zero = Complex::new(T::zero(), T::zero());
        let lam = self.block_eigenvalue(start, size);
        let mut y = vec![zero; n];
        let last = start + size - 1;
        if size == 1 {
            y[start] = Complex::new(T::one(), T::zero());
        } else {
            let (a, b) = (self.t[(start, start)], self.t[(start, start + 1)]);
            let (c, d) = (self.t[(start + 1, start)], self.t[(start + 1, start + 1)]);
            // null vector of (B − λI)
            let (u, v) = if b.abs() >= c.abs() && b != T::zero() {
                (Complex::new(b, T::zero()), lam - Complex::new(a, T::zero()))
            } else {
                (lam - Complex::new(d, T::zero()), Complex::new(c, T::zero()))
            };
            y[start] = u;
            y[start + 1] = v;
        }

        let mut j = start as isize - 1;
        while j >= 0 {
            let jj = j as usize;
            let coupled = jj > 0 && self.t[(jj, jj - 1)] != T::zero();
            if coupled {
                let (i0, i1) = (jj - 1, jj);
                let mut r0 = zero;
                let mut r1 = zero;
                for l in (i1 + 1)..=last {
                    r0 += y[l] * self.t[(i0, l)];
                    r1 += y[l] * self.t[(i1, l)];
                }
                let t00 = Complex::new(self.t[(i0, i0)], T::zero()) - lam;
                let t01 = Complex::new(self.t[(i0, i1)], T::zero());
                let t10 = Complex::new(self.t[(i1, i0)], T::zero());
                let t11 = Complex::new(self.t[(i1, i1)], T::zero()) - lam;
                let mut det = t00 * t11 - t01 * t10;
                if det.modulus() < tiny * tiny {
                    det = Complex::new(tiny * tiny, T::zero());
                }
                y[i0] = (-r0 * t11 + r1 * t01) / det;
                y[i1] = (-r1 * t00 + r0 * t10) / det;
                j -= 2;
            } else {
                let mut r = zero;
                for l in (jj + 1)..=last {
                    r += y[l] * self.t[(jj, l)];
                }
                let mut piv = Complex::new(self.t[(jj, jj)], T::zero()) - lam;
                if piv.modulus() < tiny {
                    piv = Complex::new(tiny, T::zero());
                }
                y[jj] = -r / piv;
                j -= 1;
            }
        }

        // back to the original basis and normalize
        let mut v = DVector::from_element(n, zero);
        for i in 0..n {
            let mut acc = zero;
            for l in 0..=last {
                acc += y[l] * self.q[(i, l)];
            }
            v[i] = acc;
        }
        let mut scale = T::zero();
        for i in 0..n {
            let m = v[i].modulus();
            if m > scale {
                scale = m;
            }
        }
        if scale > T::zero() {
            for i in 0..n {
                v[i] /= Complex::new(scale, T::zero());
            }
        }
        (lam, v)
    }
}
