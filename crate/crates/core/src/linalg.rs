//! Small dense square-matrix kernels.
//!
//! Everything here works on [`Matrix`], a row-major `d × d` real matrix.
//! The target dimensions are tiny (`d ≤ 6` for all analysis), so the
//! routines favour clarity and determinism over blocking or SIMD.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `d × d` real matrix with row-major storage.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    d: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = self.data.chunks(self.d.max(1)).collect();
        f.debug_struct("Matrix").field("d", &self.d).field("rows", &rows).finish()
    }
}

impl Matrix {
    pub fn zeros(d: usize) -> Self {
        Self { d, data: vec![0.0; d * d] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major entries. Fails unless `entries.len() == d*d`
    /// and every entry is finite.
    pub fn from_row_major(d: usize, entries: Vec<f64>) -> Result<Self> {
        if d == 0 || entries.len() != d * d {
            return Err(Error::Shape(format!(
                "expected {} entries for d={d}, got {}",
                d * d,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { d, data: entries })
    }

    /// Convenience constructor for literal matrices in tests and examples.
    ///
    /// Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let d = rows.len();
        let mut data = Vec::with_capacity(d * d);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), d, "row length must equal the number of rows");
            data.extend_from_slice(r);
        }
        Self { d, data }
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                data.push(f(i, j));
            }
        }
        Self { d, data }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<f64>]) -> Self {
        let d = cols.len();
        Self::from_fn(d, |i, j| cols[j][i])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.d).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        for (i, &v) in col.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.d).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.d, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { d: self.d, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Matrix) {
        debug_assert_eq!(self.d, other.d);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius inner product `tr(selfᵀ other)`.
    pub fn dot(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.d, other.d);
        let d = self.d;
        let mut out = Matrix::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        out
    }

    /// Symmetric part `(x + xᵀ)/2`.
    pub fn symmetrize(&self) -> Matrix {
        Self::from_fn(self.d, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.d + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.d + j]
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn vnorm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// ---------------------------------------------------------------------------
// Determinant and adjugate
// ---------------------------------------------------------------------------

/// Determinant. Closed cofactor formulas for `d ≤ 3`, partial-pivot LU otherwise.
pub fn det(x: &Matrix) -> f64 {
    let a = x.as_slice();
    match x.dim() {
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        _ => det_lu(x),
    }
}

/// Determinant as the signed product of LU pivots (partial pivoting).
pub fn det_lu(x: &Matrix) -> f64 {
    let d = x.dim();
    let mut a = x.as_slice().to_vec();
    let mut sign = 1.0;
    for c in 0..d {
        let mut p = c;
        let mut best = a[c * d + c].abs();
        for r in c + 1..d {
            let v = a[r * d + c].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if p != c {
            for j in 0..d {
                a.swap(c * d + j, p * d + j);
            }
            sign = -sign;
        }
        let piv = a[c * d + c];
        for r in c + 1..d {
            let f = a[r * d + c] / piv;
            if f != 0.0 {
                for j in c..d {
                    a[r * d + j] -= f * a[c * d + j];
                }
            }
        }
    }
    (0..d).fold(sign, |acc, i| acc * a[i * d + i])
}

fn minor(x: &Matrix, row: usize, col: usize) -> Matrix {
    let d = x.dim();
    let mut data = Vec::with_capacity((d - 1) * (d - 1));
    for i in (0..d).filter(|&i| i != row) {
        for j in (0..d).filter(|&j| j != col) {
            data.push(x[(i, j)]);
        }
    }
    Matrix { d: d - 1, data }
}

/// Adjugate (transposed cofactor matrix): `x · adj x = det(x) I`.
pub fn adjugate(x: &Matrix) -> Matrix {
    let d = x.dim();
    match d {
        1 => Matrix::identity(1),
        2 => Matrix::from_rows(&[[x[(1, 1)], -x[(0, 1)]], [-x[(1, 0)], x[(0, 0)]]]),
        _ => {
            let mut adj = Matrix::zeros(d);
            for i in 0..d {
                for j in 0..d {
                    let s = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    // cofactor C_ij lands at adj[j][i]
                    adj[(j, i)] = s * det(&minor(x, i, j));
                }
            }
            adj
        }
    }
}

/// `x^{-⊤} = adj(x)ᵀ / det x`; `None` when `x` is singular.
pub fn inverse_transpose(x: &Matrix) -> Option<Matrix> {
    let dx = det(x);
    if dx == 0.0 || !dx.is_finite() {
        return None;
    }
    Some(adjugate(x).transpose().scale(1.0 / dx))
}

pub fn inverse(x: &Matrix) -> Option<Matrix> {
    inverse_transpose(x).map(|m| m.transpose())
}

// ---------------------------------------------------------------------------
// QR
// ---------------------------------------------------------------------------

/// Orthogonal `q` and upper-triangular `r` with positive diagonal, `x = q r`.
#[derive(Debug, Clone, PartialEq)]
pub struct QrFactors {
    pub q: Matrix,
    pub r: Matrix,
}

impl QrFactors {
    /// Checks the factor invariants against the source matrix `x`.
    pub fn check(&self, x: &Matrix) -> std::result::Result<(), String> {
        let d = x.dim();
        let qtq = &self.q.transpose() * &self.q;
        let orth = (&qtq - &Matrix::identity(d)).norm();
        if orth > 1e-10 * d as f64 {
            return Err(format!("‖QᵀQ − I‖ = {orth:e}"));
        }
        for i in 0..d {
            if !(self.r[(i, i)] > 0.0) {
                return Err(format!("R[{i},{i}] = {} not positive", self.r[(i, i)]));
            }
            for j in 0..i {
                if self.r[(i, j)] != 0.0 {
                    return Err(format!("R[{i},{j}] = {} below diagonal", self.r[(i, j)]));
                }
            }
        }
        let recon = (&(&self.q * &self.r) - x).norm();
        if recon > 1e-10 * (1.0 + x.norm()) {
            return Err(format!("‖QR − x‖ = {recon:e}"));
        }
        Ok(())
    }
}

/// Classical Gram–Schmidt QR, column by column:
/// `u_j = x_j − Σ_{i<j} ⟨q_i, x_j⟩ q_i`, `q_j = u_j/|u_j|`, `R_ij = ⟨q_i, x_j⟩`.
///
/// This is deliberately the textbook variant; perturbation bounds on the QR
/// map are stated for exactly this procedure. Classical Gram–Schmidt loses
/// orthogonality like `ε·κ(x)²` in floating point, so the recurrence is
/// carried out in double-double arithmetic and only the final factors are
/// rounded to `f64`.
pub fn gram_schmidt_qr(x: &Matrix) -> Result<QrFactors> {
    let d = x.dim();
    let tol = 1e-12 * x.norm();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j)).collect();
    let mut qs: Vec<Vec<Dd>> = Vec::with_capacity(d);
    let mut r = Matrix::zeros(d);
    for (j, xj) in cols.iter().enumerate() {
        let mut u: Vec<Dd> = xj.iter().map(|&v| Dd::from(v)).collect();
        for (i, qi) in qs.iter().enumerate() {
            let rij = qi.iter().zip(xj).fold(Dd::ZERO, |acc, (q, &v)| acc.add(q.mul_f64(v)));
            r[(i, j)] = rij.value();
            for (uk, qk) in u.iter_mut().zip(qi) {
                *uk = uk.sub(rij.mul(*qk));
            }
        }
        let nu = u.iter().fold(Dd::ZERO, |acc, v| acc.add(v.mul(*v))).sqrt();
        if !(nu.value() > tol) || nu.value() == 0.0 {
            return Err(Error::SingularInput { column: j, norm: nu.value() });
        }
        r[(j, j)] = nu.value();
        qs.push(u.into_iter().map(|v| v.div(nu)).collect());
    }
    let q: Vec<Vec<f64>> = qs.iter().map(|c| c.iter().map(|v| v.value()).collect()).collect();
    Ok(QrFactors { q: Matrix::from_columns(&q), r })
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn value(self) -> f64 {
        self.hi + self.lo
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd { hi: s, lo: (a - (s - bb)) + (b - bb) }
    }

    fn quick(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd { hi: s, lo: b - (s - a) }
    }

    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, o.hi);
        let t = Dd::two_sum(self.lo, o.lo);
        let u = Dd::quick(s.hi, s.lo + t.hi);
        Dd::quick(u.hi, u.lo + t.lo)
    }

    fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Dd::quick(p, e + (self.hi * o.lo + self.lo * o.hi))
    }

    fn mul_f64(self, v: f64) -> Dd {
        self.mul(Dd::from(v))
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul_f64(q1));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul_f64(q2));
        let q3 = r.hi / o.hi;
        Dd::quick(q1, q2).add(Dd::from(q3))
    }

    fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        // one Newton step on the f64 root
        let s = self.hi.sqrt();
        let e = self.sub(Dd::from(s).mul(Dd::from(s)));
        Dd::quick(s, e.hi / (2.0 * s))
    }
}

/// Modified Gram–Schmidt with one reorthogonalisation pass.
///
/// Numerically hardened QR for simulators (Haar sampling and the like);
/// results agree with [`gram_schmidt_qr`] in exact arithmetic.
pub fn stable_qr(x: &Matrix) -> Result<QrFactors> {
    let d = x.dim();
    let tol = 1e-14 * x.norm();
    let mut qs: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut r = Matrix::zeros(d);
    for j in 0..d {
        let mut u = x.column(j);
        for _pass in 0..2 {
            for (i, qi) in qs.iter().enumerate() {
                let c = dot(qi, &u);
                r[(i, j)] += c;
                for (uk, qk) in u.iter_mut().zip(qi) {
                    *uk -= c * qk;
                }
            }
        }
        let nu = vnorm(&u);
        if !(nu > tol) {
            return Err(Error::SingularInput { column: j, norm: nu });
        }
        r[(j, j)] = nu;
        qs.push(u.into_iter().map(|v| v / nu).collect());
    }
    Ok(QrFactors { q: Matrix::from_columns(&qs), r })
}

// ---------------------------------------------------------------------------
// SVD and symmetric eigenproblems
// ---------------------------------------------------------------------------

/// Nonincreasing singular values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularValues(pub Vec<f64>);

impl SingularValues {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Full decomposition `x = u · diag(sigma) · vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: SingularValues,
    pub v: Matrix,
}

impl Svd {
    /// Best approximation of rank at most `k` (Eckart–Young).
    pub fn truncate(&self, k: usize) -> Matrix {
        let d = self.u.dim();
        Matrix::from_fn(d, |i, j| {
            (0..k.min(d)).map(|l| self.u[(i, l)] * self.sigma.0[l] * self.v[(j, l)]).sum()
        })
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD with a fixed cyclic sweep order.
pub fn svd(x: &Matrix) -> Svd {
    let d = x.dim();
    let mut a: Vec<Vec<f64>> = (0..d).map(|j| x.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale = x.norm();
    let thresh = 1e-12 * scale;
    if scale > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..d {
                for q in p + 1..d {
                    let alpha = dot(&a[p], &a[p]);
                    let beta = dot(&a[q], &a[q]);
                    let gamma = dot(&a[p], &a[q]);
                    if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt()
                        || gamma.abs() <= thresh * thresh
                    {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for col in [&mut a, &mut v] {
                        for k in 0..d {
                            let ap = col[p][k];
                            let aq = col[q][k];
                            col[p][k] = c * ap - s * aq;
                            col[q][k] = s * ap + c * aq;
                        }
                    }
                }
            }
            if !rotated {
                break;
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    let norms: Vec<f64> = a.iter().map(|c| vnorm(c)).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let sigma: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(d);
    for &i in &order {
        let n = norms[i];
        if n > 0.0 {
            ucols.push(a[i].iter().map(|v| v / n).collect());
        } else {
            ucols.push(vec![0.0; d]);
        }
    }
    complete_orthonormal(&mut ucols);
    let vcols: Vec<Vec<f64>> = order.iter().map(|&i| v[i].clone()).collect();
    Svd {
        u: Matrix::from_columns(&ucols),
        sigma: SingularValues(sigma),
        v: Matrix::from_columns(&vcols),
    }
}

/// Replaces zero columns by unit vectors orthogonal to the rest.
fn complete_orthonormal(cols: &mut [Vec<f64>]) {
    let d = cols.len();
    for j in 0..d {
        if vnorm(&cols[j]) > 0.5 {
            continue;
        }
        for e in 0..d {
            let mut u = vec![0.0; d];
            u[e] = 1.0;
            for _ in 0..2 {
                for (i, c) in cols.iter().enumerate() {
                    if i == j || vnorm(c) < 0.5 {
                        continue;
                    }
                    let p = dot(c, &u);
                    for (uk, ck) in u.iter_mut().zip(c) {
                        *uk -= p * ck;
                    }
                }
            }
            let n = vnorm(&u);
            if n > 1e-6 {
                cols[j] = u.into_iter().map(|x| x / n).collect();
                break;
            }
        }
    }
}

pub fn singular_values(x: &Matrix) -> SingularValues {
    svd(x).sigma
}

/// `p_i(σ₁,…,σ_d)`, with `p_0 = 1`.
pub fn elementary_symmetric(sigma: &SingularValues, i: usize) -> Result<f64> {
    let d = sigma.len();
    if i > d {
        return Err(Error::IndexOutOfRange { index: i as i64, lo: 0, hi: d as i64 });
    }
    Ok(elementary_symmetric_all(sigma.as_slice())[i])
}

/// All elementary symmetric polynomials `p_0..=p_d` of `values`.
pub fn elementary_symmetric_all(values: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; values.len() + 1];
    e[0] = 1.0;
    for (n, &s) in values.iter().enumerate() {
        for j in (1..=n + 1).rev() {
            e[j] += s * e[j - 1];
        }
    }
    e
}

/// Frobenius distance from `x` to the matrices of rank at most `k`.
pub fn distance_to_rank_stratum(x: &Matrix, k: usize) -> Result<f64> {
    let d = x.dim();
    if k >= d {
        return Err(Error::IndexOutOfRange { index: k as i64, lo: 0, hi: d as i64 - 1 });
    }
    let s = singular_values(x);
    Ok(s.0[k..].iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (ascending) and the matching orthonormal eigenvectors
/// as columns.
pub fn symmetric_eigen(z: &Matrix) -> (Vec<f64>, Matrix) {
    let d = z.dim();
    let mut a = z.symmetrize();
    let mut v = Matrix::identity(d);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off <= 1e-30 * a.dot(&a) || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let vals = order.iter().map(|&i| a[(i, i)]).collect();
    let vecs = Matrix::from_fn(d, |r, c| v[(r, order[c])]);
    (vals, vecs)
}

/// `V diag(f(λ)) Vᵀ` for a symmetric eigendecomposition.
pub fn spectral_map(vals: &[f64], vecs: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let d = vecs.dim();
    let fv: Vec<f64> = vals.iter().map(|&l| f(l)).collect();
    Matrix::from_fn(d, |i, j| (0..d).map(|k| vecs[(i, k)] * fv[k] * vecs[(j, k)]).sum())
}

/// Symmetric positive semidefinite square root.
///
/// Eigenvalues down to `−1e-6·‖z‖` are treated as rounding noise and clamped
/// to zero.
pub fn psd_sqrt(z: &Matrix) -> Result<Matrix> {
    let nz = z.norm();
    let asym = (z - &z.transpose()).max_abs();
    if asym > 1e-10 * (1.0 + nz) {
        return Err(Error::NotSymmetric(asym));
    }
    let (vals, vecs) = symmetric_eigen(z);
    if let Some(&min) = vals.first() {
        if min < -1e-6 * nz {
            return Err(Error::NotPsd(min));
        }
    }
    Ok(spectral_map(&vals, &vecs, |l| l.max(0.0).sqrt()))
}

/// Projects a symmetric matrix onto the PSD cone by clamping negative
/// eigenvalues. Returns the projection and the total clamped magnitude.
pub fn psd_project(z: &Matrix) -> (Matrix, f64) {
    let (vals, vecs) = symmetric_eigen(z);
    let clamped: f64 = vals.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
    if clamped == 0.0 {
        return (z.symmetrize(), 0.0);
    }
    (spectral_map(&vals, &vecs, |l| l.max(0.0)), clamped)
}
