//! Dense complex linear algebra for small Hilbert spaces (d ≲ 16).
//!
//! Matrices are square, row-major, stored as `Complex<T>`. The engines work
//! on flat state vectors, so the hot-path kernels here take raw slices of
//! length `d * d`; [`CMatrix`] is the owned type used at API boundaries.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_traits::{One, Zero};

use crate::scalar::{czero, Real, C};

#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix<T: Real> {
    dim: usize,
    data: Vec<C<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![czero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = C::one();
        }
        m
    }

    /// Builds a matrix from row-major data; `data.len()` must be a perfect square.
    pub fn from_row_major(data: Vec<C<T>>) -> Option<Self> {
        let dim = (data.len() as f64).sqrt().round() as usize;
        (dim * dim == data.len()).then_some(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<C<T>>]) -> Option<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        Some(Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Option<Self> {
        let rows: Vec<Vec<C<T>>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C::new(T::of(x), T::zero())).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn diagonal(diag: &[C<T>]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C<T>] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out.data[j * d + i] = self.data[i * d + j].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: C<T>) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    pub fn trace(&self) -> C<T> {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn apply(&self, v: &[C<T>]) -> Vec<C<T>> {
        let mut out = vec![czero(); self.dim];
        matvec(self.dim, &self.data, v, &mut out);
        out
    }

    /// Largest elementwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        max_abs_diff(&self.data, &other.data)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, z| m.max(z.norm()))
    }

    /// Largest elementwise deviation of `self - self†`.
    pub fn hermiticity_deviation(&self) -> T {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn trace_norm(&self) -> T {
        trace_norm(self.dim, &self.data)
    }

    pub fn singular_values(&self) -> Vec<T> {
        singular_values(self.dim, &self.data)
    }

    /// Eigenvalues in ascending order, assuming the matrix is Hermitian.
    pub fn hermitian_eigenvalues(&self) -> Vec<T> {
        hermitian_eigenvalues(self.dim, &self.data)
    }

    /// `⟨v|A|v⟩` without normalization.
    pub fn sandwich(&self, v: &[C<T>]) -> C<T> {
        inner(v, &self.apply(v))
    }
}

impl<T: Real> Index<(usize, usize)> for CMatrix<T> {
    type Output = C<T>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C<T> {
        &self.data[i * self.dim + j]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<T> {
        &mut self.data[i * self.dim + j]
    }
}

impl<T: Real> Mul for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn mul(self, rhs: Self) -> CMatrix<T> {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let mut out = CMatrix::zeros(self.dim);
        mul_into(self.dim, &self.data, &rhs.data, &mut out.data);
        out
    }
}

impl<T: Real> Add for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn add(self, rhs: Self) -> CMatrix<T> {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        CMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl<T: Real> Sub for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn sub(self, rhs: Self) -> CMatrix<T> {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        CMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Slice kernels
// ---------------------------------------------------------------------------

/// `out = a * b`.
#[inline]
pub(crate) fn mul_into<T: Real>(d: usize, a: &[C<T>], b: &[C<T>], out: &mut [C<T>]) {
    for i in 0..d {
        let row = &mut out[i * d..(i + 1) * d];
        row.iter_mut().for_each(|x| *x = czero());
        for k in 0..d {
            let aik = a[i * d + k];
            if aik.is_zero() {
                continue;
            }
            let brow = &b[k * d..(k + 1) * d];
            for (o, &bkj) in row.iter_mut().zip(brow) {
                *o = *o + aik * bkj;
            }
        }
    }
}

/// `out += s * (a * b - b * a)`.
#[inline]
pub(crate) fn commutator_acc<T: Real>(d: usize, s: C<T>, a: &[C<T>], b: &[C<T>], out: &mut [C<T>]) {
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            let bik = b[i * d + k];
            if aik.is_zero() && bik.is_zero() {
                continue;
            }
            let aik = aik * s;
            let bik = bik * s;
            for j in 0..d {
                out[i * d + j] = out[i * d + j] + aik * b[k * d + j] - bik * a[k * d + j];
            }
        }
    }
}

/// `out += s * a * b`.
#[inline]
pub(crate) fn mul_acc<T: Real>(d: usize, s: C<T>, a: &[C<T>], b: &[C<T>], out: &mut [C<T>]) {
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik.is_zero() {
                continue;
            }
            let aik = aik * s;
            for j in 0..d {
                out[i * d + j] = out[i * d + j] + aik * b[k * d + j];
            }
        }
    }
}

#[inline]
pub(crate) fn axpy<T: Real>(s: C<T>, x: &[C<T>], y: &mut [C<T>]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + s * xi;
    }
}

#[inline]
pub(crate) fn matvec<T: Real>(d: usize, a: &[C<T>], x: &[C<T>], out: &mut [C<T>]) {
    for i in 0..d {
        out[i] = a[i * d..(i + 1) * d]
            .iter()
            .zip(x)
            .fold(czero(), |acc, (&aij, &xj)| acc + aij * xj);
    }
}

/// `⟨a|b⟩`, conjugate-linear in the first argument.
#[inline]
pub fn inner<T: Real>(a: &[C<T>], b: &[C<T>]) -> C<T> {
    a.iter()
        .zip(b)
        .fold(czero(), |acc, (x, &y)| acc + x.conj() * y)
}

#[inline]
pub fn norm_sqr<T: Real>(v: &[C<T>]) -> T {
    v.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
}

#[inline]
pub(crate) fn is_zero_slice<T: Real>(x: &[C<T>]) -> bool {
    x.iter().all(|z| z.is_zero())
}

pub(crate) fn max_abs_diff<T: Real>(a: &[C<T>], b: &[C<T>]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (x, y)| m.max((x - y).norm()))
}

// ---------------------------------------------------------------------------
// Decompositions
// ---------------------------------------------------------------------------

const MAX_SWEEPS: usize = 80;

/// Singular values of a square matrix by one-sided (Hestenes) Jacobi.
///
/// Columns are rotated pairwise until mutually orthogonal; the singular
/// values are then the column norms. Small singular values come out with
/// absolute accuracy ~ eps·‖A‖, unlike routes through `A†A`.
pub fn singular_values<T: Real>(d: usize, a: &[C<T>]) -> Vec<T> {
    // column-major working copy
    let mut cols: Vec<Vec<C<T>>> = (0..d)
        .map(|j| (0..d).map(|i| a[i * d + j]).collect())
        .collect();
    let eps = T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..d {
            for q in (p + 1)..d {
                let alpha = norm_sqr(&cols[p]);
                let beta = norm_sqr(&cols[q]);
                let g = inner(&cols[p], &cols[q]);
                let gabs = g.norm();
                if gabs.is_zero() || gabs <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = g / gabs;
                let zeta = (beta - alpha) / (gabs + gabs);
                let sign = if zeta >= T::zero() {
                    T::one()
                } else {
                    -T::one()
                };
                let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let cs = T::one() / (T::one() + t * t).sqrt();
                let sn = cs * t;
                let (left, right) = cols.split_at_mut(q);
                let cp = &mut left[p];
                let cq = &mut right[0];
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let yq = *y * phase.conj();
                    let xp = *x;
                    *x = xp * cs - yq * sn;
                    *y = xp * sn + yq * cs;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<T> = cols.iter().map(|c| norm_sqr(c).sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Trace norm `Tr √(A†A)`, the sum of singular values.
pub fn trace_norm<T: Real>(d: usize, a: &[C<T>]) -> T {
    if is_zero_slice(a) {
        return T::zero();
    }
    singular_values(d, a).into_iter().sum()
}

/// Eigenvalues (ascending) of a Hermitian matrix.
///
/// Uses the real symmetric embedding `[[Re A, -Im A], [Im A, Re A]]`, whose
/// spectrum is that of `A` with every eigenvalue doubled, diagonalized by
/// cyclic Jacobi rotations.
pub fn hermitian_eigenvalues<T: Real>(d: usize, a: &[C<T>]) -> Vec<T> {
    let n = 2 * d;
    let mut s = vec![T::zero(); n * n];
    for i in 0..d {
        for j in 0..d {
            // symmetrize so slight non-Hermiticity does not break Jacobi
            let z = (a[i * d + j] + a[j * d + i].conj()) * T::of(0.5);
            s[i * n + j] = z.re;
            s[(i + d) * n + (j + d)] = z.re;
            s[(i + d) * n + j] = z.im;
            s[i * n + (j + d)] = -z.im;
        }
    }
    for _ in 0..MAX_SWEEPS {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| s[i * n + j] * s[i * n + j])
            .sum();
        let diag: T = (0..n).map(|i| s[i * n + i] * s[i * n + i]).sum();
        if off <= T::epsilon() * T::epsilon() * diag || off.is_zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = s[p * n + q];
                if apq.is_zero() {
                    continue;
                }
                let theta = (s[q * n + q] - s[p * n + p]) / (apq + apq);
                let sign = if theta >= T::zero() {
                    T::one()
                } else {
                    -T::one()
                };
                let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
                let cs = T::one() / (t * t + T::one()).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let skp = s[k * n + p];
                    let skq = s[k * n + q];
                    s[k * n + p] = cs * skp - sn * skq;
                    s[k * n + q] = sn * skp + cs * skq;
                }
                for k in 0..n {
                    let spk = s[p * n + k];
                    let sqk = s[q * n + k];
                    s[p * n + k] = cs * spk - sn * sqk;
                    s[q * n + k] = sn * spk + cs * sqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| s[i * n + i]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev.into_iter().step_by(2).collect()
}
