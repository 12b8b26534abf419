//! Rotation group geometry.
//!
//! Matrices use the inner product `A·B = ½ Tr(AᵀB)`, for which rotations
//! have unit norm. Quaternions are stored as `(x, y, z, t)` for
//! `q = x + i y + j z + k t`.

use crate::{lit, Error, Real, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

/// Tolerance used by [`horn_check`].
pub const HORN_TOL: f64 = 1e-10;
/// Below this angle the rotation axis is not defined.
pub const AXIS_ANGLE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Matrix3<T> {
    pub fn new(m: [[T; 3]; 3]) -> Self {
        Matrix3 { m }
    }

    pub fn zero() -> Self {
        Matrix3 {
            m: [[T::zero(); 3]; 3],
        }
    }

    pub fn identity() -> Self {
        Self::from_diag([T::one(); 3])
    }

    pub fn from_diag(d: [T; 3]) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            out.m[i][i] = d[i];
        }
        out
    }

    pub fn from_columns(c: [[T; 3]; 3]) -> Self {
        Matrix3 { m: c }.transpose()
    }

    pub fn diag(&self) -> [T; 3] {
        [self.m[0][0], self.m[1][1], self.m[2][2]]
    }

    pub fn column(&self, j: usize) -> [T; 3] {
        [self.m[0][j], self.m[1][j], self.m[2][j]]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[j][i];
            }
        }
        out
    }

    pub fn trace(&self) -> T {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    pub fn det(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `½ Tr(AᵀB)`.
    pub fn dot(&self, other: &Self) -> T {
        let mut s = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                s = s + self.m[i][j] * other.m[i][j];
            }
        }
        s * lit(0.5)
    }

    /// Norm induced by [`Matrix3::dot`].
    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    /// Plain Frobenius norm, `sqrt(Σ m_ij²)`.
    pub fn frobenius(&self) -> T {
        (self.dot(self) * lit(2.0)).sqrt()
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for row in out.m.iter_mut() {
            for x in row.iter_mut() {
                *x = *x * s;
            }
        }
        out
    }

    pub fn sym(&self) -> Self {
        (*self + self.transpose()).scale(lit(0.5))
    }

    pub fn skew(&self) -> Self {
        (*self - self.transpose()).scale(lit(0.5))
    }

    pub fn mul_vec(&self, v: [T; 3]) -> [T; 3] {
        let mut out = [T::zero(); 3];
        for i in 0..3 {
            out[i] = self.m[i][0] * v[0] + self.m[i][1] * v[1] + self.m[i][2] * v[2];
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut e = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                e = e.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        e
    }

    /// Largest entry of `|MᵀM - I|`.
    pub fn orthogonality_defect(&self) -> T {
        (self.transpose() * *self).max_abs_diff(&Self::identity())
    }

    /// Row-major entries.
    pub fn entries(&self) -> [T; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_entries(e: [T; 9]) -> Self {
        Matrix3 {
            m: [[e[0], e[1], e[2]], [e[3], e[4], e[5]], [e[6], e[7], e[8]]],
        }
    }

    pub fn cast<U: Real>(&self) -> Matrix3<U> {
        let mut out = Matrix3::<U>::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = U::from(self.m[i][j]).unwrap();
            }
        }
        out
    }
}

impl<T: Real> Add for Matrix3<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = out.m[i][j] + rhs.m[i][j];
            }
        }
        out
    }
}

impl<T: Real> Sub for Matrix3<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<T: Real> Neg for Matrix3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

impl<T: Real> Mul for Matrix3<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = T::zero();
                for k in 0..3 {
                    s = s + self.m[i][k] * rhs.m[k][j];
                }
                out.m[i][j] = s;
            }
        }
        out
    }
}

fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3<T: Real>(a: [T; 3]) -> T {
    dot3(a, a).sqrt()
}

fn scale3<T: Real>(a: [T; 3], s: T) -> [T; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Cross product matrix `[n]ₓ`, so that `[n]ₓ v = n × v`.
pub fn hat<T: Real>(n: [T; 3]) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new([[z, -n[2], n[1]], [n[2], z, -n[0]], [-n[1], n[0], z]])
}

/// A matrix known to be orthogonal with determinant one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rotation3<T>(Matrix3<T>);

impl<T: Real> Rotation3<T> {
    pub fn identity() -> Self {
        Rotation3(Matrix3::identity())
    }

    /// Accepts `m` if `|mᵀm - I| ≤ tol` entrywise and `det m > 0`.
    pub fn from_matrix(m: Matrix3<T>, tol: T) -> Result<Self> {
        let defect = m.orthogonality_defect();
        if defect > tol || m.det() <= T::zero() {
            let d = defect.to_f64().unwrap_or(f64::NAN);
            return Err(Error::NotRotation(if m.det() <= T::zero() { f64::INFINITY } else { d }));
        }
        Ok(Rotation3(m))
    }

    /// Wraps `m` without checking it.
    pub fn from_matrix_unchecked(m: Matrix3<T>) -> Self {
        Rotation3(m)
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn compose(&self, other: &Self) -> Self {
        Rotation3(self.0 * other.0)
    }

    pub fn inverse(&self) -> Self {
        Rotation3(self.0.transpose())
    }

    /// Rodrigues formula `I + sinθ [n]ₓ + (1 - cosθ)[n]ₓ²` for a unit axis.
    pub fn from_axis_angle(axis: [T; 3], theta: T) -> Self {
        let n = scale3(axis, T::one() / norm3(axis));
        let k = hat(n);
        let k2 = k * k;
        Rotation3(Matrix3::identity() + k.scale(theta.sin()) + k2.scale(T::one() - theta.cos()))
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> T {
        let m = &self.0.m;
        let v = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
        let s = norm3(v) * lit(0.5);
        let c = (self.0.trace() - T::one()) * lit(0.5);
        s.atan2(c)
    }

    /// Axis and angle with `θ ∈ [0, π]`.
    ///
    /// For `θ < 1e-8` the axis is undefined: `e₁` is returned with the
    /// degenerate flag. Near `θ = π` the axis comes from the symmetric part
    /// and its sign is fixed so that the first nonzero component is positive.
    pub fn axis_angle(&self) -> AxisAngle<T> {
        let m = &self.0.m;
        let v = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
        let theta = self.angle();
        let eps: T = lit(AXIS_ANGLE_EPS);
        let pi: T = lit(std::f64::consts::PI);
        if theta < eps {
            return AxisAngle {
                axis: [T::one(), T::zero(), T::zero()],
                angle: theta,
                degenerate: true,
            };
        }
        if theta < lit(std::f64::consts::FRAC_PI_2) {
            let n = scale3(v, T::one() / norm3(v));
            return AxisAngle {
                axis: n,
                angle: theta,
                degenerate: false,
            };
        }
        // n nᵀ = (A + Aᵀ - 2cosθ I) / (2(1 - cosθ))
        let c = theta.cos();
        let s = self.0.sym();
        let denom = T::one() - c;
        let mut nn = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == j { c } else { T::zero() };
                nn[i][j] = (s.m[i][j] - delta) / denom;
            }
        }
        let k = (0..3)
            .max_by(|&a, &b| nn[a][a].partial_cmp(&nn[b][b]).unwrap())
            .unwrap();
        let mut n = [nn[0][k], nn[1][k], nn[2][k]];
        n = scale3(n, T::one() / norm3(n));
        let sign_from_skew = pi - theta >= eps && dot3(n, v) < T::zero();
        let sign_canonical = pi - theta < eps && first_nonzero_negative(&n);
        if sign_from_skew || sign_canonical {
            n = scale3(n, -T::one());
        }
        AxisAngle {
            axis: n,
            angle: theta,
            degenerate: false,
        }
    }

    /// `Φ(q)` for a unit quaternion.
    pub fn from_quaternion(q: &Quaternion<T>) -> Self {
        let q = q.normalized();
        let [x, y, z, t] = q.c;
        let two: T = lit(2.0);
        Rotation3(Matrix3::new([
            [x * x + y * y - z * z - t * t, two * (y * z - x * t), two * (x * z + y * t)],
            [two * (x * t + y * z), x * x - y * y + z * z - t * t, two * (z * t - x * y)],
            [two * (y * t - x * z), two * (x * y + z * t), x * x - y * y - z * z + t * t],
        ]))
    }

    /// `Φ⁻¹(A)`: the pair `±q` with `Φ(q) = A`.
    pub fn quaternion_class(&self) -> QuaternionClass<T> {
        let m = &self.0.m;
        let tr = self.0.trace();
        let quarter: T = lit(0.25);
        let half: T = lit(0.5);
        let one = T::one();
        let cand = [tr, m[0][0], m[1][1], m[2][2]];
        let k = (0..4)
            .max_by(|&a, &b| cand[a].partial_cmp(&cand[b]).unwrap())
            .unwrap();
        let c = match k {
            0 => {
                let x = half * (one + tr).sqrt();
                let f = quarter / x;
                [x, (m[2][1] - m[1][2]) * f, (m[0][2] - m[2][0]) * f, (m[1][0] - m[0][1]) * f]
            }
            1 => {
                let y = half * (one + m[0][0] - m[1][1] - m[2][2]).sqrt();
                let f = quarter / y;
                [(m[2][1] - m[1][2]) * f, y, (m[0][1] + m[1][0]) * f, (m[0][2] + m[2][0]) * f]
            }
            2 => {
                let z = half * (one - m[0][0] + m[1][1] - m[2][2]).sqrt();
                let f = quarter / z;
                [(m[0][2] - m[2][0]) * f, (m[0][1] + m[1][0]) * f, z, (m[1][2] + m[2][1]) * f]
            }
            _ => {
                let t = half * (one - m[0][0] - m[1][1] + m[2][2]).sqrt();
                let f = quarter / t;
                [(m[1][0] - m[0][1]) * f, (m[0][2] + m[2][0]) * f, (m[1][2] + m[2][1]) * f, t]
            }
        };
        QuaternionClass::new(Quaternion { c }.normalized())
    }

    pub fn cast<U: Real>(&self) -> Rotation3<U> {
        Rotation3(self.0.cast())
    }
}

fn first_nonzero_negative<T: Real>(v: &[T]) -> bool {
    let tol: T = lit(1e-12);
    v.iter()
        .find(|x| x.abs() > tol)
        .map(|x| *x < T::zero())
        .unwrap_or(false)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle<T> {
    pub axis: [T; 3],
    pub angle: T,
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion<T> {
    pub c: [T; 4],
}

impl<T: Real> Quaternion<T> {
    pub fn new(x: T, y: T, z: T, t: T) -> Self {
        Quaternion { c: [x, y, z, t] }
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        (0..4).fold(T::zero(), |s, i| s + self.c[i] * other.c[i])
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quaternion {
            c: self.c.map(|x| x / n),
        }
    }

    pub fn neg(&self) -> Self {
        Quaternion {
            c: self.c.map(|x| -x),
        }
    }

    /// Hamilton product.
    pub fn mul(&self, o: &Self) -> Self {
        let [a1, b1, c1, d1] = self.c;
        let [a2, b2, c2, d2] = o.c;
        Quaternion {
            c: [
                a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
                a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
                a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
                a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
            ],
        }
    }
}

/// Unit quaternion modulo sign, stored with its first coordinate of
/// magnitude above `1e-12` made positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuaternionClass<T> {
    q: Quaternion<T>,
}

impl<T: Real> QuaternionClass<T> {
    pub fn new(q: Quaternion<T>) -> Self {
        let q = q.normalized();
        let q = if first_nonzero_negative(&q.c) { q.neg() } else { q };
        QuaternionClass { q }
    }

    pub fn representative(&self) -> Quaternion<T> {
        self.q
    }
}

/// Symmetric 4×4 matrix, full storage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Symmetric4<T> {
    pub s: [[T; 4]; 4],
}

impl<T: Real> Symmetric4<T> {
    pub fn from_diag(d: [T; 4]) -> Self {
        let mut s = [[T::zero(); 4]; 4];
        for i in 0..4 {
            s[i][i] = d[i];
        }
        Symmetric4 { s }
    }

    /// `q·Sq`.
    pub fn quad_form(&self, q: &Quaternion<T>) -> T {
        let mut acc = T::zero();
        for i in 0..4 {
            for j in 0..4 {
                acc = acc + q.c[i] * self.s[i][j] * q.c[j];
            }
        }
        acc
    }

    pub fn trace(&self) -> T {
        (0..4).fold(T::zero(), |a, i| a + self.s[i][i])
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut e = T::zero();
        for i in 0..4 {
            for j in 0..4 {
                e = e.max((self.s[i][j] - o.s[i][j]).abs());
            }
        }
        e
    }

    /// `q ⊗ q - ¼ I₄`.
    pub fn from_quaternion_outer(q: &Quaternion<T>) -> Self {
        let mut s = [[T::zero(); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                s[i][j] = q.c[i] * q.c[j];
            }
            s[i][i] = s[i][i] - lit(0.25);
        }
        Symmetric4 { s }
    }
}

/// The linear map `φ` with `½ J·Φ(q) = q·φ(J)q`.
pub fn phi<T: Real>(j: &Matrix3<T>) -> Symmetric4<T> {
    let m = &j.m;
    let (j11, j12, j13) = (m[0][0], m[0][1], m[0][2]);
    let (j21, j22, j23) = (m[1][0], m[1][1], m[1][2]);
    let (j31, j32, j33) = (m[2][0], m[2][1], m[2][2]);
    let q: T = lit(0.25);
    let s12 = (j32 - j23) * q;
    let s13 = (j13 - j31) * q;
    let s14 = (j21 - j12) * q;
    let s23 = (j12 + j21) * q;
    let s24 = (j13 + j31) * q;
    let s34 = (j23 + j32) * q;
    Symmetric4 {
        s: [
            [(j11 + j22 + j33) * q, s12, s13, s14],
            [s12, (j11 - j22 - j33) * q, s23, s24],
            [s13, s23, (-j11 + j22 - j33) * q, s34],
            [s14, s24, s34, (-j11 - j22 + j33) * q],
        ],
    }
}

/// Inverse of [`phi`] on traceless symmetric 4×4 matrices.
pub fn phi_inverse<T: Real>(s: &Symmetric4<T>) -> Result<Matrix3<T>> {
    let a = &s.s;
    let scale = a
        .iter()
        .flatten()
        .fold(T::one(), |acc, x| acc.max(x.abs()));
    let tol = scale * lit::<T>(1e3) * T::epsilon();
    for i in 0..4 {
        for j in 0..i {
            if (a[i][j] - a[j][i]).abs() > tol {
                return Err(Error::InvalidArgument("matrix is not symmetric".into()));
            }
        }
    }
    if s.trace().abs() > tol {
        return Err(Error::InvalidArgument("matrix is not traceless".into()));
    }
    let two: T = lit(2.0);
    Ok(Matrix3::new([
        [two * (a[0][0] + a[1][1]), two * (a[1][2] - a[0][3]), two * (a[0][2] + a[1][3])],
        [two * (a[0][3] + a[1][2]), two * (a[0][0] + a[2][2]), two * (a[2][3] - a[0][1])],
        [two * (a[1][3] - a[0][2]), two * (a[0][1] + a[2][3]), two * (a[0][0] + a[3][3])],
    ]))
}

/// `φ(diag d)` as a diagonal of length four.
pub fn phi_diag<T: Real>(d: [T; 3]) -> [T; 4] {
    let q: T = lit(0.25);
    [
        (d[0] + d[1] + d[2]) * q,
        (d[0] - d[1] - d[2]) * q,
        (-d[0] + d[1] - d[2]) * q,
        (-d[0] - d[1] + d[2]) * q,
    ]
}

/// Inverse of [`phi_diag`].
pub fn phi_diag_inverse<T: Real>(s: [T; 4]) -> [T; 3] {
    let two: T = lit(2.0);
    [two * (s[0] + s[1]), two * (s[0] + s[2]), two * (s[0] + s[3])]
}

/// Diagonal factor of a special SVD.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diag3<T> {
    pub d: [T; 3],
}

impl<T: Real> Diag3<T> {
    pub fn new(d: [T; 3]) -> Self {
        Diag3 { d }
    }

    /// `d₁ ≥ d₂ ≥ |d₃|` up to `tol`.
    pub fn in_cone(&self, tol: T) -> bool {
        let [d1, d2, d3] = self.d;
        d1 + tol >= d2 && d2 + tol >= d3.abs()
    }

    pub fn matrix(&self) -> Matrix3<T> {
        Matrix3::from_diag(self.d)
    }
}

/// `M = P D Q` with `P, Q ∈ SO(3)` and `d₁ ≥ d₂ ≥ |d₃|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecialSvd<T> {
    pub p: Rotation3<T>,
    pub d: Diag3<T>,
    pub q: Rotation3<T>,
}

impl<T: Real> SpecialSvd<T> {
    pub fn reconstruct(&self) -> Matrix3<T> {
        *self.p.matrix() * self.d.matrix() * *self.q.matrix()
    }

    /// `P Q`, the rotation of the polar decomposition when `det M > 0`.
    pub fn rotation(&self) -> Rotation3<T> {
        self.p.compose(&self.q)
    }
}

fn jacobi_tol<T: Real>() -> T {
    lit::<T>(1e-14).max(T::epsilon() * lit(4.0))
}

/// Special singular value decomposition by one-sided Jacobi rotations.
pub fn ssvd<T: Real>(mat: &Matrix3<T>) -> SpecialSvd<T> {
    let tol = jacobi_tol::<T>();
    let mut a = *mat;
    let mut v = Matrix3::<T>::identity();
    for _sweep in 0..100 {
        let mut rotated = false;
        for &(i, j) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let mut alpha = T::zero();
            let mut beta = T::zero();
            let mut gamma = T::zero();
            for k in 0..3 {
                alpha = alpha + a.m[k][i] * a.m[k][i];
                beta = beta + a.m[k][j] * a.m[k][j];
                gamma = gamma + a.m[k][i] * a.m[k][j];
            }
            if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (lit::<T>(2.0) * gamma);
            let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
            let c = T::one() / (T::one() + t * t).sqrt();
            let s = c * t;
            for k in 0..3 {
                let (x, y) = (a.m[k][i], a.m[k][j]);
                a.m[k][i] = c * x - s * y;
                a.m[k][j] = s * x + c * y;
                let (x, y) = (v.m[k][i], v.m[k][j]);
                v.m[k][i] = c * x - s * y;
                v.m[k][j] = s * x + c * y;
            }
        }
        if !rotated {
            break;
        }
    }

    let cols = [a.column(0), a.column(1), a.column(2)];
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| norm3(cols[y]).partial_cmp(&norm3(cols[x])).unwrap());
    let c = order.map(|k| cols[k]);
    let vc = order.map(|k| v.column(k));

    let s1 = norm3(c[0]);
    let tiny = T::min_positive_value().sqrt();
    let u1 = if s1 > tiny {
        scale3(c[0], T::one() / s1)
    } else {
        [T::one(), T::zero(), T::zero()]
    };
    let s2 = norm3(c[1]);
    let u2 = {
        let proj = dot3(u1, c[1]);
        let w = [c[1][0] - proj * u1[0], c[1][1] - proj * u1[1], c[1][2] - proj * u1[2]];
        let nw = norm3(w);
        if s2 > tol * s1 && nw > tiny {
            scale3(w, T::one() / nw)
        } else {
            any_orthogonal(u1)
        }
    };
    let u3 = cross(u1, u2);
    let mut s3 = dot3(u3, c[2]);

    let mut vm = Matrix3::from_columns(vc);
    if vm.det() < T::zero() {
        for k in 0..3 {
            vm.m[k][2] = -vm.m[k][2];
        }
        s3 = -s3;
    }
    let p = Matrix3::from_columns([u1, u2, u3]);
    SpecialSvd {
        p: Rotation3(p),
        d: Diag3 { d: [s1, s2, s3] },
        q: Rotation3(vm.transpose()),
    }
}

fn any_orthogonal<T: Real>(u: [T; 3]) -> [T; 3] {
    let k = (0..3)
        .min_by(|&a, &b| u[a].abs().partial_cmp(&u[b].abs()).unwrap())
        .unwrap();
    let mut e = [T::zero(); 3];
    e[k] = T::one();
    let w = cross(u, e);
    scale3(w, T::one() / norm3(w))
}

/// Rotation factor `M (MᵀM)^{-1/2}` of the polar decomposition.
pub fn polar_rotation<T: Real>(m: &Matrix3<T>) -> Result<Rotation3<T>> {
    let det = m.det();
    if det.abs() < lit(1e-12) {
        return Err(Error::Singular(det.to_f64().unwrap_or(0.0)));
    }
    if det < T::zero() {
        return Err(Error::ImproperOrthogonal);
    }
    Ok(ssvd(m).rotation())
}

/// Haar-distributed rotation: a uniform point on S³ pushed through `Φ`.
pub fn haar_sample<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Rotation3<T>
where
    StandardNormal: Distribution<T>,
{
    loop {
        let c: [T; 4] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let q = Quaternion { c };
        if q.norm() > lit(1e-12) {
            return Rotation3::from_quaternion(&q);
        }
    }
}

/// Whether a diagonal `(x, y, z)` lies in the tetrahedron of diagonals of
/// rotation matrices.
pub fn horn_check<T: Real>(d: [T; 3]) -> bool {
    let tol: T = lit(HORN_TOL);
    let m1 = -T::one() - tol;
    let [x, y, z] = d;
    x + y + z >= m1 && x - y - z >= m1 && -x + y - z >= m1 && -x - y + z >= m1
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi.
/// Returns ascending eigenvalues and the eigenvectors as columns.
pub fn sym_eigen<T: Real>(mat: &Matrix3<T>) -> ([T; 3], Matrix3<T>) {
    let tol = jacobi_tol::<T>();
    let mut a = mat.sym();
    let mut v = Matrix3::<T>::identity();
    for _sweep in 0..100 {
        let off = (a.m[0][1] * a.m[0][1] + a.m[0][2] * a.m[0][2] + a.m[1][2] * a.m[1][2]).sqrt();
        let scale = a.frobenius();
        if off <= tol * scale || off == T::zero() {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            if a.m[p][q] == T::zero() {
                continue;
            }
            let theta = (a.m[q][q] - a.m[p][p]) / (lit::<T>(2.0) * a.m[p][q]);
            let t = theta.signum() / (theta.abs() + (T::one() + theta * theta).sqrt());
            let c = T::one() / (T::one() + t * t).sqrt();
            let s = t * c;
            let mut r = Matrix3::<T>::identity();
            r.m[p][p] = c;
            r.m[q][q] = c;
            r.m[p][q] = s;
            r.m[q][p] = -s;
            a = r.transpose() * a * r;
            a.m[p][q] = T::zero();
            a.m[q][p] = T::zero();
            v = v * r;
        }
    }
    let vals = a.diag();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| vals[x].partial_cmp(&vals[y]).unwrap());
    let vecs = order.map(|k| v.column(k));
    (order.map(|k| vals[k]), Matrix3::from_columns(vecs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rot_strategy() -> impl Strategy<Value = Rotation3<f64>> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("nonzero", |c| c.iter().map(|x| x * x).sum::<f64>() > 1e-3)
            .prop_map(|c| Rotation3::from_quaternion(&Quaternion { c }))
    }

    fn mat_strategy() -> impl Strategy<Value = Matrix3<f64>> {
        prop::array::uniform9(-3.0f64..3.0).prop_map(Matrix3::from_entries)
    }

    #[test]
    fn rodrigues_quarter_turn() {
        let r = Rotation3::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let want = Matrix3::new([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(r.matrix().max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn rotations_have_unit_norm() {
        let r = Rotation3::from_axis_angle([1.0, 2.0, -0.5], 1.1);
        assert!((r.matrix().norm() - 1.5f64.sqrt()).abs() < 1e-14);
        assert!((Matrix3::<f64>::identity().norm() - 1.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn small_angle_is_degenerate() {
        let aa = Rotation3::<f64>::identity().axis_angle();
        assert!(aa.degenerate);
        assert_eq!(aa.axis, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn half_turn_axis_is_canonical() {
        let n = [-0.6f64, 0.0, 0.8];
        let r = Rotation3::from_axis_angle(n, std::f64::consts::PI);
        let aa = r.axis_angle();
        assert!((aa.axis[0] - 0.6).abs() < 1e-12 && (aa.axis[2] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn ssvd_of_reflection() {
        // det < 0: the sign goes into d3
        let m = Matrix3::<f64>::from_diag([1.0, 1.0, -1.0]);
        let s = ssvd(&m);
        assert!((s.d.d[2] + 1.0).abs() < 1e-14);
        assert!(s.reconstruct().max_abs_diff(&m) < 1e-14);
    }

    #[test]
    fn ssvd_of_rank_one() {
        let m = Matrix3::<f64>::new([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [-1.0, -2.0, -3.0]]);
        let s = ssvd(&m);
        assert!(s.reconstruct().max_abs_diff(&m) < 1e-12);
        assert!(s.d.d[1].abs() < 1e-12 && s.d.d[2].abs() < 1e-12);
        assert!(s.p.matrix().orthogonality_defect() < 1e-14);
        assert!(s.p.matrix().det() > 0.0 && s.q.matrix().det() > 0.0);
    }

    #[test]
    fn ssvd_of_zero() {
        let s = ssvd(&Matrix3::<f64>::zero());
        assert_eq!(s.d.d, [0.0; 3]);
    }

    #[test]
    fn polar_of_singular_errors() {
        let m = Matrix3::<f64>::from_diag([1.0, 1.0, 0.0]);
        assert!(matches!(polar_rotation(&m), Err(Error::Singular(_))));
        let m = Matrix3::<f64>::from_diag([1.0, 1.0, -1.0]);
        assert!(matches!(polar_rotation(&m), Err(Error::ImproperOrthogonal)));
    }

    #[test]
    fn polar_matches_inverse_square_root() {
        // M (MᵀM)^{-1/2} through the eigen-decomposition of MᵀM
        let m = Matrix3::<f64>::new([[2.0, 0.3, -0.1], [0.5, 1.5, 0.2], [0.1, -0.4, 1.0]]);
        let (vals, vecs) = sym_eigen(&(m.transpose() * m));
        let inv_sqrt = vecs * Matrix3::from_diag(vals.map(|x| 1.0 / x.sqrt())) * vecs.transpose();
        let want = m * inv_sqrt;
        let got = polar_rotation(&m).unwrap();
        assert!(got.matrix().max_abs_diff(&want) < 1e-13);
    }

    #[test]
    fn phi_inverse_rejects_trace() {
        let s = Symmetric4::from_diag([1.0f64, 0.0, 0.0, 0.0]);
        assert!(phi_inverse(&s).is_err());
    }

    #[test]
    fn phi_diag_matches_general() {
        let d = [0.7f64, -0.2, 1.3];
        let g = phi(&Matrix3::from_diag(d));
        let s = phi_diag(d);
        for i in 0..4 {
            assert_eq!(g.s[i][i], s[i]);
        }
        let back = phi_diag_inverse(s);
        for i in 0..3 {
            assert!((back[i] - d[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn haar_samples_are_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let r: Rotation3<f64> = haar_sample(&mut rng);
            assert!(r.matrix().orthogonality_defect() < 1e-14);
            assert!((r.matrix().det() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn f32_geometry() {
        let m = Matrix3::<f32>::new([[1.0, 0.2, 0.0], [0.1, 2.0, 0.3], [0.0, -0.2, 0.5]]);
        let s = ssvd(&m);
        assert!(s.reconstruct().max_abs_diff(&m) < 1e-5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r: Rotation3<f32> = haar_sample(&mut rng);
        assert!(r.matrix().orthogonality_defect() < 1e-6);
    }

    proptest! {
        #[test]
        fn rodrigues_roundtrip(
            n in prop::array::uniform3(-1.0f64..1.0).prop_filter("axis", |n| n.iter().map(|x| x*x).sum::<f64>() > 1e-2),
            theta in 1e-6f64..(std::f64::consts::PI - 1e-6),
        ) {
            let len = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            let n = n.map(|x| x / len);
            let r = Rotation3::from_axis_angle(n, theta);
            let aa = r.axis_angle();
            prop_assert!(!aa.degenerate);
            prop_assert!((aa.angle - theta).abs() < 1e-12);
            for i in 0..3 {
                prop_assert!((aa.axis[i] - n[i]).abs() < 1e-9);
            }
            let back = Rotation3::from_axis_angle(aa.axis, aa.angle);
            prop_assert!(back.matrix().max_abs_diff(r.matrix()) < 1e-12);
            prop_assert!((r.matrix().trace() - (1.0 + 2.0 * theta.cos())).abs() < 1e-12);
        }

        #[test]
        fn quaternion_roundtrip(r in rot_strategy()) {
            let q = r.quaternion_class().representative();
            let back = Rotation3::from_quaternion(&q);
            prop_assert!(back.matrix().max_abs_diff(r.matrix()) < 1e-12);
        }

        #[test]
        fn quaternion_sign_is_forgotten(c in prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("nonzero", |c| c.iter().map(|x| x*x).sum::<f64>() > 1e-3)) {
            let q = Quaternion { c };
            let a = Rotation3::from_quaternion(&q);
            let b = Rotation3::from_quaternion(&q.neg());
            prop_assert!(a.matrix().max_abs_diff(b.matrix()) < 1e-15);
            prop_assert_eq!(QuaternionClass::new(q), QuaternionClass::new(q.neg()));
        }

        #[test]
        fn quaternion_product_is_composition(
            a in prop::array::uniform4(-1.0f64..1.0).prop_filter("n", |c| c.iter().map(|x| x*x).sum::<f64>() > 1e-3),
            b in prop::array::uniform4(-1.0f64..1.0).prop_filter("n", |c| c.iter().map(|x| x*x).sum::<f64>() > 1e-3),
        ) {
            let qa = Quaternion { c: a }.normalized();
            let qb = Quaternion { c: b }.normalized();
            let lhs = Rotation3::from_quaternion(&qa.mul(&qb));
            let rhs = Rotation3::from_quaternion(&qa).compose(&Rotation3::from_quaternion(&qb));
            prop_assert!(lhs.matrix().max_abs_diff(rhs.matrix()) < 1e-12);
        }

        #[test]
        fn phi_identities(j in mat_strategy(), c in prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("nonzero", |c| c.iter().map(|x| x*x).sum::<f64>() > 1e-3)) {
            let q = Quaternion { c }.normalized();
            let a = Rotation3::from_quaternion(&q);
            let lhs = 0.5 * j.dot(a.matrix());
            let rhs = phi(&j).quad_form(&q);
            prop_assert!((lhs - rhs).abs() < 1e-12);
            let outer = Symmetric4::from_quaternion_outer(&q);
            prop_assert!(phi(a.matrix()).max_abs_diff(&outer) < 1e-12);
            let back = phi_inverse(&phi(&j)).unwrap();
            prop_assert!(back.max_abs_diff(&j) < 1e-12);
        }

        #[test]
        fn ssvd_reconstructs(m in mat_strategy()) {
            let s = ssvd(&m);
            let [d1, d2, d3] = s.d.d;
            prop_assert!(d1 >= d2 && d2 >= d3.abs());
            prop_assert!(s.reconstruct().max_abs_diff(&m) < 1e-10);
            prop_assert!(s.p.matrix().orthogonality_defect() < 1e-13);
            prop_assert!(s.q.matrix().orthogonality_defect() < 1e-13);
            prop_assert!((s.p.matrix().det() - 1.0).abs() < 1e-13);
            prop_assert!((s.q.matrix().det() - 1.0).abs() < 1e-13);
            prop_assert!((d1 * d2 * d3 - m.det()).abs() < 1e-10 * (1.0 + m.det().abs()));
        }

        #[test]
        fn ssvd_diagonal_is_unique(m in mat_strategy(), r1 in rot_strategy(), r2 in rot_strategy()) {
            let a = ssvd(&m).d.d;
            let b = ssvd(&(*r1.matrix() * m * *r2.matrix())).d.d;
            for i in 0..3 {
                prop_assert!((a[i] - b[i]).abs() < 1e-10);
            }
        }

        #[test]
        fn polar_is_rotation_and_symmetric(m in mat_strategy()) {
            prop_assume!(m.det() > 1e-3);
            let r = polar_rotation(&m).unwrap();
            prop_assert!(r.matrix().orthogonality_defect() < 1e-12);
            let s = r.matrix().transpose() * m;
            prop_assert!(s.skew().max_abs_diff(&Matrix3::zero()) < 1e-10);
        }

        #[test]
        fn rotation_diagonals_in_tetrahedron(r in rot_strategy()) {
            prop_assert!(horn_check(r.matrix().diag()));
        }

        #[test]
        fn sym_eigen_decomposes(m in mat_strategy()) {
            let s = m.sym();
            let (vals, vecs) = sym_eigen(&s);
            let back = vecs * Matrix3::from_diag(vals) * vecs.transpose();
            prop_assert!(back.max_abs_diff(&s) < 1e-12);
            prop_assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
        }
    }
}
