//! Dense complex linear algebra for the Gaussian formalism: Pfaffians of
//! antisymmetric matrices, LU determinants and inverses, and low-rank
//! determinant-ratio updates for the Monte Carlo kernel.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>` (column-major); the hot
//! kernels run on raw column slices.

use crate::error::Error;
use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = nalgebra::DVector<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Replace `m` by its antisymmetric part (m − mᵀ)/2.
pub fn antisymmetrize(m: &mut CMat) {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    for j in 0..n {
        for i in 0..j {
            let avg = (m[(i, j)] - m[(j, i)]) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = -avg;
        }
        m[(j, j)] = ZERO;
    }
}

/// Largest |m + mᵀ| entry, as an antisymmetry defect measure.
pub fn antisymmetry_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] + m[(j, i)]).norm());
        }
    }
    worst
}

/// Pfaffian of a complex antisymmetric matrix via Parlett–Reid
/// tridiagonalization with partial pivoting. Exact permutation-sign
/// tracking; returns 0 for (numerically) singular input.
pub fn pfaffian(a: &CMat) -> Result<Complex64, Error> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Linalg("pfaffian requires a square matrix".into()));
    }
    if n % 2 != 0 {
        return Err(Error::Linalg(format!(
            "pfaffian requires even dimension, got {n}"
        )));
    }
    if n == 0 {
        return Ok(ONE);
    }
    // Work on a column-major copy.
    let mut m: Vec<Complex64> = a.as_slice().to_vec();
    let mut pf = ONE;

    for k in (0..n - 1).step_by(2) {
        // Pivot: largest |m[i, k]| for i > k.
        let mut p = k + 1;
        let mut best = m[k + 1 + k * n].norm();
        for i in k + 2..n {
            let v = m[i + k * n].norm();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return Ok(ZERO);
        }
        if p != k + 1 {
            // Swap rows and columns p ↔ k+1; each transposition flips the sign.
            for j in 0..n {
                m.swap(k + 1 + j * n, p + j * n);
            }
            for i in 0..n {
                m.swap(i + (k + 1) * n, i + p * n);
            }
            pf = -pf;
        }
        let pivot = m[k + 1 + k * n];
        // The Pfaffian collects the superdiagonal entries A[k, k+1] = −pivot.
        pf *= -pivot;
        if k + 2 >= n {
            break;
        }
        // Gauss multipliers for rows below k+1.
        let taus: Vec<Complex64> = (k + 2..n).map(|i| m[i + k * n] / pivot).collect();
        // Congruence update: rows/cols i ← i − τ_i (row/col k+1).
        for j in k + 1..n {
            let col_kp1 = m[k + 1 + j * n];
            if col_kp1 != ZERO {
                for (off, &tau) in taus.iter().enumerate() {
                    m[k + 2 + off + j * n] -= tau * col_kp1;
                }
            }
        }
        for (off, &tau) in taus.iter().enumerate() {
            if tau != ZERO {
                let j = k + 2 + off;
                let base_j = j * n;
                let base_k = (k + 1) * n;
                for i in k + 1..n {
                    let v = m[i + base_k];
                    if v != ZERO {
                        m[i + base_j] -= tau * v;
                    }
                }
            }
        }
    }
    Ok(pf)
}

/// LU factorization with partial pivoting of a square complex matrix.
pub struct LuFactor {
    n: usize,
    lu: Vec<Complex64>,
    piv: Vec<usize>,
    swaps_odd: bool,
    singular: bool,
}

impl LuFactor {
    pub fn new(a: &CMat) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let mut lu: Vec<Complex64> = a.as_slice().to_vec();
        let mut piv = Vec::with_capacity(n);
        let mut swaps_odd = false;
        let mut singular = false;
        for j in 0..n {
            let mut p = j;
            let mut best = lu[j + j * n].norm();
            for i in j + 1..n {
                let v = lu[i + j * n].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv.push(p);
            if best == 0.0 {
                singular = true;
                continue;
            }
            if p != j {
                for c in 0..n {
                    lu.swap(j + c * n, p + c * n);
                }
                swaps_odd = !swaps_odd;
            }
            let pivot = lu[j + j * n];
            for i in j + 1..n {
                lu[i + j * n] /= pivot;
            }
            for c in j + 1..n {
                let ujc = lu[j + c * n];
                if ujc != ZERO {
                    let base = c * n;
                    for i in j + 1..n {
                        let l = lu[i + j * n];
                        if l != ZERO {
                            lu[i + base] -= l * ujc;
                        }
                    }
                }
            }
        }
        LuFactor {
            n,
            lu,
            piv,
            swaps_odd,
            singular,
        }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn determinant(&self) -> Complex64 {
        if self.singular {
            return ZERO;
        }
        let mut det = if self.swaps_odd { -ONE } else { ONE };
        for j in 0..self.n {
            det *= self.lu[j + j * self.n];
        }
        det
    }

    /// Determinant in log form: (log |det|, unit phase). Avoids
    /// under/overflow for large matrices.
    pub fn log_determinant(&self) -> (f64, Complex64) {
        if self.singular {
            return (f64::NEG_INFINITY, ONE);
        }
        let mut log_abs = 0.0;
        let mut phase = if self.swaps_odd { -ONE } else { ONE };
        for j in 0..self.n {
            let d = self.lu[j + j * self.n];
            log_abs += d.norm().ln();
            phase *= d / d.norm();
        }
        (log_abs, phase)
    }

    /// Solve A x = b in place for each column of `b`.
    pub fn solve_in_place(&self, b: &mut CMat) {
        let n = self.n;
        assert_eq!(b.nrows(), n);
        let cols = b.ncols();
        let bs = b.as_mut_slice();
        for c in 0..cols {
            let col = &mut bs[c * n..(c + 1) * n];
            for j in 0..n {
                col.swap(j, self.piv[j]);
            }
            // Forward: L y = Pb (unit lower).
            for j in 0..n {
                let y = col[j];
                if y != ZERO {
                    for i in j + 1..n {
                        let l = self.lu[i + j * n];
                        if l != ZERO {
                            col[i] -= l * y;
                        }
                    }
                }
            }
            // Backward: U x = y.
            for j in (0..n).rev() {
                let x = col[j] / self.lu[j + j * n];
                col[j] = x;
                if x != ZERO {
                    for i in 0..j {
                        let u = self.lu[i + j * n];
                        if u != ZERO {
                            col[i] -= u * x;
                        }
                    }
                }
            }
        }
    }

    pub fn inverse(&self) -> Result<CMat, Error> {
        if self.singular {
            return Err(Error::Linalg("matrix is singular".into()));
        }
        let mut inv = CMat::identity(self.n, self.n);
        self.solve_in_place(&mut inv);
        Ok(inv)
    }
}

pub fn determinant(a: &CMat) -> Complex64 {
    LuFactor::new(a).determinant()
}

/// (log |det A|, unit phase of det A).
pub fn log_det(a: &CMat) -> (f64, Complex64) {
    LuFactor::new(a).log_determinant()
}

fn one_norm(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse with a 1-norm condition estimate; rejects condition > 1e12.
pub fn inverse(a: &CMat) -> Result<CMat, Error> {
    let lu = LuFactor::new(a);
    let inv = lu.inverse()?;
    let condition = one_norm(a) * one_norm(&inv);
    if !condition.is_finite() || condition > 1e12 {
        return Err(Error::NearSingular { condition });
    }
    Ok(inv)
}

/// Cached inverse of a square matrix supporting rank-k row updates
/// A → A + E_S·V (rows `S` incremented by the k×n matrix `V`), with
/// determinant ratios by the matrix determinant lemma and Woodbury
/// inverse updates. Refreshes from scratch every `recompute_interval`
/// applied updates.
pub struct UpdatableInverse {
    a: CMat,
    inv: CMat,
    updates_since_refresh: usize,
    pub recompute_interval: usize,
    log_det_abs: f64,
    det_phase: Complex64,
}

impl UpdatableInverse {
    pub fn new(a: CMat, recompute_interval: usize) -> Result<Self, Error> {
        let lu = LuFactor::new(&a);
        let inv = lu.inverse()?;
        let (log_det_abs, det_phase) = lu.log_determinant();
        Ok(UpdatableInverse {
            a,
            inv,
            updates_since_refresh: 0,
            recompute_interval,
            log_det_abs,
            det_phase,
        })
    }

    pub fn matrix(&self) -> &CMat {
        &self.a
    }

    pub fn inverse(&self) -> &CMat {
        &self.inv
    }

    pub fn log_det(&self) -> (f64, Complex64) {
        (self.log_det_abs, self.det_phase)
    }

    /// det(A + E_S V)/det(A) without modifying the cache.
    ///
    /// `rows` lists the |S| affected row indices; `v` is |S|×n.
    pub fn block_det_ratio(&self, rows: &[usize], v: &CMat) -> Complex64 {
        let k = rows.len();
        let n = self.a.nrows();
        debug_assert_eq!(v.nrows(), k);
        debug_assert_eq!(v.ncols(), n);
        // M = I_k + V · A⁻¹[:, S]; V rows are typically sparse.
        let mut m = CMat::identity(k, k);
        let inv = self.inv.as_slice();
        for c in 0..n {
            let mut any = false;
            for ii in 0..k {
                if v[(ii, c)] != ZERO {
                    any = true;
                    break;
                }
            }
            if !any {
                continue;
            }
            for (jj, &sj) in rows.iter().enumerate() {
                let a_inv = inv[c + sj * n];
                if a_inv != ZERO {
                    for ii in 0..k {
                        m[(ii, jj)] += v[(ii, c)] * a_inv;
                    }
                }
            }
        }
        LuFactor::new(&m).determinant()
    }

    /// Apply the row update to the cached matrix and inverse. Returns the
    /// determinant ratio. When the staleness counter reaches the recompute
    /// interval, the factorization is refreshed from scratch instead.
    pub fn apply_row_update(&mut self, rows: &[usize], v: &CMat) -> Result<Complex64, Error> {
        let ratio = self.block_det_ratio(rows, v);
        let k = rows.len();
        assert!(k <= 16, "row updates limited to rank 16");
        let n = self.a.nrows();
        // Update the stored matrix.
        for (ii, &si) in rows.iter().enumerate() {
            for c in 0..n {
                self.a[(si, c)] += v[(ii, c)];
            }
        }
        self.updates_since_refresh += 1;
        if self.updates_since_refresh >= self.recompute_interval || ratio.norm() < 1e-280 {
            self.refresh()?;
            return Ok(ratio);
        }
        // Woodbury: A'⁻¹ = A⁻¹ − A⁻¹ E_S M⁻¹ V A⁻¹ with M = I + V A⁻¹ E_S.
        let mut m = CMat::identity(k, k);
        let mut va_inv = CMat::zeros(k, n); // V·A⁻¹
        {
            let inv = self.inv.as_slice();
            for d in 0..n {
                let mut nonzero = [false; 16];
                let mut any = false;
                for ii in 0..k {
                    let nz = v[(ii, d)] != ZERO;
                    nonzero[ii] = nz;
                    any |= nz;
                }
                if !any {
                    continue;
                }
                for c in 0..n {
                    let a_inv = inv[d + c * n];
                    if a_inv != ZERO {
                        for ii in 0..k {
                            if nonzero[ii] {
                                va_inv[(ii, c)] += v[(ii, d)] * a_inv;
                            }
                        }
                    }
                }
            }
        }
        for (jj, &sj) in rows.iter().enumerate() {
            for ii in 0..k {
                m[(ii, jj)] += va_inv[(ii, sj)];
            }
        }
        let m_lu = LuFactor::new(&m);
        if m_lu.is_singular() {
            self.refresh()?;
            return Ok(ratio);
        }
        let mut m_inv_va = va_inv;
        m_lu.solve_in_place(&mut m_inv_va); // M⁻¹ V A⁻¹, k×n
        // A⁻¹[:, S] (n×k), copied before mutation.
        let mut ainv_s = CMat::zeros(n, k);
        for (jj, &sj) in rows.iter().enumerate() {
            for i in 0..n {
                ainv_s[(i, jj)] = self.inv[(i, sj)];
            }
        }
        let inv_slice = self.inv.as_mut_slice();
        let s_slice = ainv_s.as_slice();
        for c in 0..n {
            let col = &mut inv_slice[c * n..(c + 1) * n];
            for ii in 0..k {
                let w = m_inv_va[(ii, c)];
                if w != ZERO {
                    let s_col = &s_slice[ii * n..(ii + 1) * n];
                    for (ci, si) in col.iter_mut().zip(s_col) {
                        *ci -= si * w;
                    }
                }
            }
        }
        let (dlog, dphase) = (ratio.norm().ln(), ratio / ratio.norm());
        self.log_det_abs += dlog;
        self.det_phase *= dphase;
        Ok(ratio)
    }

    /// Recompute the inverse and log-determinant from the stored matrix.
    pub fn refresh(&mut self) -> Result<(), Error> {
        let lu = LuFactor::new(&self.a);
        self.inv = lu.inverse()?;
        let (l, p) = lu.log_determinant();
        self.log_det_abs = l;
        self.det_phase = p;
        self.updates_since_refresh = 0;
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn random_antisymmetric(n: usize, rng: &mut impl rand::Rng) -> CMat {
    let mut m = CMat::zeros(n, n);
    for j in 0..n {
        for i in 0..j {
            let v = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            m[(i, j)] = v;
            m[(j, i)] = -v;
        }
    }
    m
}
