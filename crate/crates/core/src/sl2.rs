//! Exact 2x2 linear algebra for sl(2,R) and SL(2,R): closed-form
//! exponentials and logarithms, spectral classification, eigen-directions,
//! line rotations, and the two norms (operator norm and frame max-norm)
//! used by the perturbation machinery.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

/// Trace band half-width separating elliptic/hyperbolic from parabolic.
pub const TOL_CLS: f64 = 1e-9;
/// Determinant tolerance tagged on unimodular matrices.
pub const TOL_DET: f64 = 1e-9;
/// Angular tolerance below which two lines count as coincident.
pub const TOL_ANG: f64 = 1e-12;
/// Logarithm domain radius: `log_unimodular` requires `||S - I|| <= DELTA_LOG`.
pub const DELTA_LOG: f64 = 0.5;
/// Below this |det Q| the exponential switches to its quadratic series.
const EXP_SERIES_CUTOFF: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Sl2Error {
    #[error("matrix outside logarithm domain (||S-I|| = {norm:.3e}, trace = {trace:.6})")]
    OutOfLogDomain { norm: f64, trace: f64 },
    #[error("matrix is not hyperbolic (trace = {trace:.9})")]
    NotHyperbolic { trace: f64 },
    #[error("splitting directions are degenerate (angle = {angle:.3e})")]
    DegenerateSplitting { angle: f64 },
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Element of sl(2,R): the matrix [[a, b], [c, -a]]. Tracelessness is held
/// by construction, not by checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracelessMatrix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl TracelessMatrix {
    pub const ZERO: Self = Self { a: 0.0, b: 0.0, c: 0.0 };

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    /// Rotation generator [[0, -xi], [xi, 0]]; exp of it is `rotation(xi)`.
    pub fn rotation_generator(xi: f64) -> Self {
        Self::new(0.0, -xi, xi)
    }

    pub fn det(&self) -> f64 {
        -(self.a * self.a + self.b * self.c)
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        [[self.a, self.b], [self.c, -self.a]]
    }

    pub fn op_norm(&self) -> f64 {
        op_norm2(&self.entries())
    }

    pub fn apply(&self, v: (f64, f64)) -> (f64, f64) {
        (self.a * v.0 + self.b * v.1, self.c * v.0 - self.a * v.1)
    }

    /// Conjugation g . Q . g^{-1}; stays traceless.
    pub fn conjugate_by(&self, g: &UnimodularMatrix) -> Self {
        let m = mat_mul(&mat_mul(&g.entries(), &self.entries()), &g.inverse().entries());
        // tr(g Q g^-1) = 0 exactly in the algebra; drop the rounding residue
        // symmetrically so the traceless representation stays faithful.
        let a = 0.5 * (m[0][0] - m[1][1]);
        Self::new(a, m[0][1], m[1][0])
    }

    /// Pull the traceless part out of a general 2x2 matrix; returns the
    /// projection and the trace that was removed.
    pub fn project(m: &[[f64; 2]; 2]) -> (Self, f64) {
        let tr = m[0][0] + m[1][1];
        let a = 0.5 * (m[0][0] - m[1][1]);
        (Self::new(a, m[0][1], m[1][0]), tr)
    }
}

impl Add for TracelessMatrix {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.a + rhs.a, self.b + rhs.b, self.c + rhs.c)
    }
}

impl Sub for TracelessMatrix {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.a - rhs.a, self.b - rhs.b, self.c - rhs.c)
    }
}

impl Mul<f64> for TracelessMatrix {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.a * s, self.b * s, self.c * s)
    }
}

impl Neg for TracelessMatrix {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.a, -self.b, -self.c)
    }
}

/// Element of SL(2,R), stored by entries. The determinant is maintained to
/// `TOL_DET` by the producers (closed-form exponentials, renormalized
/// integrators); `det` and `is_unimodular` expose the actual value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnimodularMatrix {
    pub m: [[f64; 2]; 2],
}

impl UnimodularMatrix {
    pub const IDENTITY: Self = Self { m: [[1.0, 0.0], [0.0, 1.0]] };

    pub fn new(m11: f64, m12: f64, m21: f64, m22: f64) -> Self {
        Self { m: [[m11, m12], [m21, m22]] }
    }

    pub fn from_entries(m: [[f64; 2]; 2]) -> Self {
        Self { m }
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        self.m
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn is_unimodular(&self, tol: f64) -> bool {
        (self.det() - 1.0).abs() <= tol
    }

    /// Exact inverse for determinant-one matrices: [[d, -b], [-c, a]].
    pub fn inverse(&self) -> Self {
        Self::new(self.m[1][1], -self.m[0][1], -self.m[1][0], self.m[0][0])
    }

    pub fn apply(&self, v: (f64, f64)) -> (f64, f64) {
        (
            self.m[0][0] * v.0 + self.m[0][1] * v.1,
            self.m[1][0] * v.0 + self.m[1][1] * v.1,
        )
    }

    pub fn op_norm(&self) -> f64 {
        op_norm2(&self.m)
    }

    /// Rescale so the determinant is exactly one again (integrator use).
    pub fn renormalize_det(&self) -> Self {
        let d = self.det();
        let s = 1.0 / d.sqrt();
        Self::new(self.m[0][0] * s, self.m[0][1] * s, self.m[1][0] * s, self.m[1][1] * s)
    }

    pub fn sub_matrix(&self, rhs: &Self) -> [[f64; 2]; 2] {
        [
            [self.m[0][0] - rhs.m[0][0], self.m[0][1] - rhs.m[0][1]],
            [self.m[1][0] - rhs.m[1][0], self.m[1][1] - rhs.m[1][1]],
        ]
    }

    /// Distance to the identity in operator norm.
    pub fn dist_to_identity(&self) -> f64 {
        op_norm2(&self.sub_matrix(&Self::IDENTITY))
    }
}

impl Mul for UnimodularMatrix {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::from_entries(mat_mul(&self.m, &rhs.m))
    }
}

impl fmt::Display for UnimodularMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{:.6}, {:.6}], [{:.6}, {:.6}]]",
            self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1]
        )
    }
}

/// A line through the origin, represented by its angle in [0, pi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    angle: f64,
}

impl Direction {
    pub fn from_angle(angle: f64) -> Self {
        Self { angle: reduce_mod_pi(angle) }
    }

    pub fn from_vector(x: f64, y: f64) -> Self {
        Self::from_angle(y.atan2(x))
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// Unit representative of the line.
    pub fn unit_vector(&self) -> (f64, f64) {
        (self.angle.cos(), self.angle.sin())
    }

    /// Acute angle between two lines, in [0, pi/2].
    pub fn angle_to(&self, other: &Direction) -> f64 {
        let d = (self.angle - other.angle).abs() % PI;
        d.min(PI - d)
    }
}

/// Angle folded into [0, pi).
pub fn reduce_mod_pi(angle: f64) -> f64 {
    let mut a = angle % PI;
    if a < 0.0 {
        a += PI;
    }
    // The remainder of a negative angle can round to exactly pi.
    if a >= PI {
        a -= PI;
    }
    a
}

/// Signed difference `to - from` between lines, folded into (-pi/2, pi/2].
pub fn signed_angle_gap(from: f64, to: f64) -> f64 {
    let mut d = reduce_mod_pi(to - from);
    if d > PI / 2.0 {
        d -= PI;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectralKind {
    Elliptic,
    Hyperbolic,
    Parabolic,
}

/// Spectral class of a unimodular matrix together with the trace that
/// produced it. Parabolic is the explicit band |tr| in [2 - TOL_CLS, 2 + TOL_CLS].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralClass {
    pub kind: SpectralKind,
    pub trace: f64,
}

impl SpectralClass {
    pub fn is_elliptic(&self) -> bool {
        self.kind == SpectralKind::Elliptic
    }
    pub fn is_hyperbolic(&self) -> bool {
        self.kind == SpectralKind::Hyperbolic
    }
    pub fn is_parabolic(&self) -> bool {
        self.kind == SpectralKind::Parabolic
    }
}

// ---------------------------------------------------------------------------
// Raw 2x2 helpers
// ---------------------------------------------------------------------------

pub fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Largest singular value of a 2x2 matrix, closed form. Scales out huge
/// entries first so squaring cannot overflow.
pub fn op_norm2(m: &[[f64; 2]; 2]) -> f64 {
    let scale = m[0][0]
        .abs()
        .max(m[0][1].abs())
        .max(m[1][0].abs())
        .max(m[1][1].abs());
    if scale == 0.0 {
        return 0.0;
    }
    if !scale.is_finite() {
        return f64::INFINITY;
    }
    let inv = 1.0 / scale;
    let (a, b, c, d) = (m[0][0] * inv, m[0][1] * inv, m[1][0] * inv, m[1][1] * inv);
    let e = 0.5 * (a + d);
    let f = 0.5 * (a - d);
    let g = 0.5 * (c + b);
    let h = 0.5 * (c - b);
    let q = (e * e + h * h).sqrt();
    let r = (f * f + g * g).sqrt();
    scale * (q + r)
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Closed-form exponential of a traceless matrix.
///
/// Branches on det Q = -(a^2 + bc): real eigenvalues give the cosh/sinh
/// form, imaginary give cos/sin, and |det Q| below the series cutoff uses
/// I + Q + Q^2/2 to avoid 0/0.
pub fn exp_traceless(q: &TracelessMatrix) -> UnimodularMatrix {
    let det = q.det();
    let (cos_part, sin_part) = if det.abs() < EXP_SERIES_CUTOFF {
        // Q^2 = -det(Q) I for traceless Q, so the series truncates exactly.
        (1.0 - 0.5 * det, 1.0)
    } else if det < 0.0 {
        let alpha = (-det).sqrt();
        (alpha.cosh(), alpha.sinh() / alpha)
    } else {
        let omega = det.sqrt();
        (omega.cos(), omega.sin() / omega)
    };
    UnimodularMatrix::new(
        cos_part + sin_part * q.a,
        sin_part * q.b,
        sin_part * q.c,
        cos_part - sin_part * q.a,
    )
}

/// Principal logarithm of a unimodular matrix near the identity.
///
/// Requires `||S - I|| <= DELTA_LOG` and `tr S > -2`; the caller is expected
/// to shrink its perturbation when this fails.
pub fn log_unimodular(s: &UnimodularMatrix) -> Result<TracelessMatrix, Sl2Error> {
    let dist = s.dist_to_identity();
    let tr = s.trace();
    if dist > DELTA_LOG || tr <= -2.0 {
        return Err(Sl2Error::OutOfLogDomain { norm: dist, trace: tr });
    }
    Ok(log_unimodular_unchecked(s))
}

/// Logarithm without the domain guard; valid for any S with tr S > -2
/// whose traceless part N satisfies S = (tr/2) I + N. Used internally where
/// matrices are hyperbolic but far from the identity.
pub fn log_unimodular_unchecked(s: &UnimodularMatrix) -> TracelessMatrix {
    let u = 0.5 * s.trace();
    // S = u I + N with N traceless; S = exp(f(u)^-1 N) by the same branch
    // structure as exp_traceless.
    let factor = if (u - 1.0).abs() < 1e-8 {
        // Both branches expand to 1 - (u - 1)/3 + O((u-1)^2).
        1.0 - (u - 1.0) / 3.0
    } else if u > 1.0 {
        let alpha = u.acosh();
        alpha / alpha.sinh()
    } else {
        let omega = u.acos();
        omega / omega.sin()
    };
    let a = 0.5 * (s.m[0][0] - s.m[1][1]);
    TracelessMatrix::new(factor * a, factor * s.m[0][1], factor * s.m[1][0])
}

/// Classify by |trace| against 2 with the `TOL_CLS` band.
pub fn classify(s: &UnimodularMatrix) -> SpectralClass {
    let trace = s.trace();
    let kind = if trace.abs() < 2.0 - TOL_CLS {
        SpectralKind::Elliptic
    } else if trace.abs() > 2.0 + TOL_CLS {
        SpectralKind::Hyperbolic
    } else {
        SpectralKind::Parabolic
    };
    SpectralClass { kind, trace }
}

/// Unstable/stable eigen-directions and the expansion rate sigma > 1 of a
/// hyperbolic unimodular matrix. S v_u = +/- sigma v_u and
/// S v_s = +/- sigma^{-1} v_s, the sign being that of the trace.
pub fn eigen_splitting(s: &UnimodularMatrix) -> Result<(Direction, Direction, f64), Sl2Error> {
    if !classify(s).is_hyperbolic() {
        return Err(Sl2Error::NotHyperbolic { trace: s.trace() });
    }
    let tr = s.trace();
    let at = tr.abs();
    // sigma + 1/sigma = |tr|; for huge traces the discriminant would
    // overflow, but sigma = |tr| - 1/|tr| to machine precision there.
    let sigma = if at > 1e15 { at } else { 0.5 * (at + (at * at - 4.0).sqrt()) };
    let sign = if tr >= 0.0 { 1.0 } else { -1.0 };
    let lam_u = sign * sigma;
    let lam_s = sign / sigma;
    let nu = eigen_direction(s, lam_u);
    let ns = eigen_direction(s, lam_s);
    Ok((nu, ns, sigma))
}

/// Eigen-direction of S for eigenvalue lambda, scale-invariant form.
fn eigen_direction(s: &UnimodularMatrix, lambda: f64) -> Direction {
    let scale = s.m[0][0]
        .abs()
        .max(s.m[0][1].abs())
        .max(s.m[1][0].abs())
        .max(s.m[1][1].abs())
        .max(lambda.abs())
        .max(1e-300);
    let inv = 1.0 / scale;
    let (a, b, c, d) = (s.m[0][0] * inv, s.m[0][1] * inv, s.m[1][0] * inv, s.m[1][1] * inv);
    let l = lambda * inv;
    // (S - lambda I) v = 0: v is orthogonal to each row; pick the better
    // conditioned candidate.
    let v1 = (b, l - a);
    let v2 = (l - d, c);
    let n1 = v1.0 * v1.0 + v1.1 * v1.1;
    let n2 = v2.0 * v2.0 + v2.1 * v2.1;
    let v = if n1 >= n2 { v1 } else { v2 };
    Direction::from_vector(v.0, v.1)
}

/// Signed rotation angle theta in (-pi/2, pi/2] with R_theta . nu = ns as
/// lines. Zero gaps (coincident lines) are rejected.
pub fn signed_rotation_between(nu: &Direction, ns: &Direction) -> Result<f64, Sl2Error> {
    let theta = signed_angle_gap(nu.angle(), ns.angle());
    if theta.abs() < TOL_ANG {
        return Err(Sl2Error::DegenerateSplitting { angle: theta.abs() });
    }
    Ok(theta)
}

/// The rotation matrix R_xi.
pub fn rotation(xi: f64) -> UnimodularMatrix {
    let (s, c) = xi.sin_cos();
    UnimodularMatrix::new(c, -s, s, c)
}

/// Operator norm of a matrix written from the `src` frame to the `dst`
/// frame as the maximum absolute entry. Frames are ordered pairs of
/// directions; both must be non-degenerate.
pub fn max_norm_in_frame(
    m: &[[f64; 2]; 2],
    src_frame: (&Direction, &Direction),
    dst_frame: (&Direction, &Direction),
) -> Result<f64, Sl2Error> {
    let t = matrix_in_frames(m, src_frame, dst_frame)?;
    Ok(t[0][0].abs().max(t[0][1].abs()).max(t[1][0].abs()).max(t[1][1].abs()))
}

/// Rewrite `m` with inputs in the basis of unit vectors of `src_frame` and
/// outputs in that of `dst_frame`.
pub fn matrix_in_frames(
    m: &[[f64; 2]; 2],
    src_frame: (&Direction, &Direction),
    dst_frame: (&Direction, &Direction),
) -> Result<[[f64; 2]; 2], Sl2Error> {
    let src_angle = src_frame.0.angle_to(src_frame.1);
    let dst_angle = dst_frame.0.angle_to(dst_frame.1);
    if src_angle <= TOL_ANG || dst_angle <= TOL_ANG {
        return Err(Sl2Error::DegenerateSplitting { angle: src_angle.min(dst_angle) });
    }
    let (u1, u2) = (src_frame.0.unit_vector(), src_frame.1.unit_vector());
    let (v1, v2) = (dst_frame.0.unit_vector(), dst_frame.1.unit_vector());
    let p_src = [[u1.0, u2.0], [u1.1, u2.1]];
    let p_dst_det = v1.0 * v2.1 - v1.1 * v2.0;
    let p_dst_inv = [
        [v2.1 / p_dst_det, -v2.0 / p_dst_det],
        [-v1.1 / p_dst_det, v1.0 / p_dst_det],
    ];
    Ok(mat_mul(&p_dst_inv, &mat_mul(m, &p_src)))
}

/// Compose a hyperbolic matrix with the rotation taking its unstable
/// eigen-direction onto its stable one; returns the rotation angle, the
/// product, and the product's classification (elliptic away from
/// degenerate angles).
pub fn ellipticize_check(
    a: &UnimodularMatrix,
) -> Result<(f64, UnimodularMatrix, SpectralClass), Sl2Error> {
    let (nu, ns, _sigma) = eigen_splitting(a)?;
    let theta = signed_rotation_between(&nu, &ns)?;
    let b = *a * rotation(theta);
    Ok((theta, b, classify(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn assert_mat_eq(m: &UnimodularMatrix, expect: [[f64; 2]; 2], tol: f64) {
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (m.m[i][j] - expect[i][j]).abs() <= tol,
                    "entry ({i},{j}): {} vs {}",
                    m.m[i][j],
                    expect[i][j]
                );
            }
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = exp_traceless(&TracelessMatrix::ZERO);
        assert_mat_eq(&e, [[1.0, 0.0], [0.0, 1.0]], 0.0);
    }

    #[test]
    fn exp_of_diagonal() {
        let e = exp_traceless(&TracelessMatrix::new(1.0, 0.0, 0.0));
        assert_mat_eq(&e, [[1.0f64.exp(), 0.0], [0.0, (-1.0f64).exp()]], 1e-15);
    }

    #[test]
    fn exp_of_rotation_generator() {
        let e = exp_traceless(&TracelessMatrix::rotation_generator(PI / 2.0));
        assert_mat_eq(&e, [[0.0, -1.0], [1.0, 0.0]], 1e-15);
    }

    #[test]
    fn log_of_identity_is_zero() {
        let q = log_unimodular(&UnimodularMatrix::IDENTITY).unwrap();
        assert_eq!(q, TracelessMatrix::ZERO);
    }

    #[test]
    fn log_of_small_rotation() {
        let q = log_unimodular(&rotation(0.1)).unwrap();
        assert_abs_diff_eq!(q.a, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.b, -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(q.c, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn log_of_diagonal_round_trips() {
        let s = UnimodularMatrix::new(1.2, 0.0, 0.0, 1.0 / 1.2);
        let q = log_unimodular(&s).unwrap();
        let back = exp_traceless(&q);
        assert_mat_eq(&back, s.m, 1e-12);
        assert_abs_diff_eq!(q.a, 1.2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_rejects_far_matrices() {
        let s = UnimodularMatrix::new(3.0, 0.0, 0.0, 1.0 / 3.0);
        assert!(matches!(log_unimodular(&s), Err(Sl2Error::OutOfLogDomain { .. })));
    }

    #[test]
    fn classify_examples() {
        assert!(classify(&UnimodularMatrix::new(2.0, 0.0, 0.0, 0.5)).is_hyperbolic());
        assert!(classify(&rotation(PI / 4.0)).is_elliptic());
        assert!(classify(&UnimodularMatrix::new(1.0, 1.0, 0.0, 1.0)).is_parabolic());
    }

    #[test]
    fn eigen_splitting_diagonal() {
        let (nu, ns, sigma) = eigen_splitting(&UnimodularMatrix::new(2.0, 0.0, 0.0, 0.5)).unwrap();
        assert_abs_diff_eq!(nu.angle(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ns.angle(), PI / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sigma, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn eigen_splitting_golden_mean() {
        // Characteristic polynomial oracle for [[2,1],[1,1]]:
        // lambda^2 - 3 lambda + 1 = 0, sigma = (3 + sqrt 5)/2, and the
        // unstable eigenvector solves (2 - sigma) x + y = 0.
        let s = UnimodularMatrix::new(2.0, 1.0, 1.0, 1.0);
        let sigma_oracle = 0.5 * (3.0 + 5.0f64.sqrt());
        let nu_oracle = Direction::from_vector(1.0, sigma_oracle - 2.0);
        let ns_oracle = Direction::from_vector(1.0, 1.0 / sigma_oracle - 2.0);
        let (nu, ns, sigma) = eigen_splitting(&s).unwrap();
        assert_abs_diff_eq!(sigma, sigma_oracle, epsilon = 1e-12);
        assert!(nu.angle_to(&nu_oracle) < 1e-12);
        assert!(ns.angle_to(&ns_oracle) < 1e-12);
    }

    #[test]
    fn eigen_splitting_symmetric_example() {
        // [[2,3],[1,2]]: eigenvalues 2 +/- sqrt 3, eigenvectors (sqrt3, +/-1).
        let s = UnimodularMatrix::new(2.0, 3.0, 1.0, 2.0);
        let (nu, ns, sigma) = eigen_splitting(&s).unwrap();
        assert_abs_diff_eq!(sigma, 2.0 + 3.0f64.sqrt(), epsilon = 1e-12);
        assert!(nu.angle_to(&Direction::from_angle(PI / 6.0)) < 1e-12);
        assert!(ns.angle_to(&Direction::from_angle(-PI / 6.0)) < 1e-12);
    }

    #[test]
    fn signed_rotation_examples() {
        let horizontal = Direction::from_angle(0.0);
        let vertical = Direction::from_angle(PI / 2.0);
        assert_abs_diff_eq!(
            signed_rotation_between(&horizontal, &vertical).unwrap(),
            PI / 2.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            signed_rotation_between(&horizontal, &Direction::from_angle(0.3)).unwrap(),
            0.3,
            epsilon = 1e-15
        );
        // Mod-pi reduction oracle: 3.0 - 0.2 - pi.
        assert_abs_diff_eq!(
            signed_rotation_between(&Direction::from_angle(0.2), &Direction::from_angle(3.0))
                .unwrap(),
            3.0 - 0.2 - PI,
            epsilon = 1e-14
        );
        assert!(matches!(
            signed_rotation_between(&horizontal, &Direction::from_angle(0.0)),
            Err(Sl2Error::DegenerateSplitting { .. })
        ));
    }

    #[test]
    fn rotation_values() {
        assert_mat_eq(&rotation(0.0), [[1.0, 0.0], [0.0, 1.0]], 0.0);
        assert_abs_diff_eq!(rotation(PI).trace(), -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rotation(PI / 3.0).trace(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn norms_on_diagonal_matrix() {
        let m = [[3.0, 0.0], [0.0, 1.0 / 3.0]];
        let ortho = (Direction::from_angle(0.0), Direction::from_angle(PI / 2.0));
        assert_abs_diff_eq!(op_norm2(&m), 3.0, epsilon = 1e-14);
        let mn = max_norm_in_frame(&m, (&ortho.0, &ortho.1), (&ortho.0, &ortho.1)).unwrap();
        assert_abs_diff_eq!(mn, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn norms_on_rotation() {
        let r = rotation(PI / 2.0);
        let ortho = (Direction::from_angle(0.0), Direction::from_angle(PI / 2.0));
        assert_abs_diff_eq!(r.op_norm(), 1.0, epsilon = 1e-14);
        let mn = max_norm_in_frame(&r.m, (&ortho.0, &ortho.1), (&ortho.0, &ortho.1)).unwrap();
        assert_abs_diff_eq!(mn, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn max_norm_of_identity_matches_basis_change() {
        // Direct basis-change computation: I written from frame (0, theta)
        // to the orthogonal frame.
        let src = (Direction::from_angle(0.0), Direction::from_angle(0.7));
        let dst = (Direction::from_angle(0.0), Direction::from_angle(PI / 2.0));
        let id = [[1.0, 0.0], [0.0, 1.0]];
        let t = matrix_in_frames(&id, (&src.0, &src.1), (&dst.0, &dst.1)).unwrap();
        // Columns of T are the unit vectors of the source frame.
        assert_abs_diff_eq!(t[0][0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(t[1][0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(t[0][1], 0.7f64.cos(), epsilon = 1e-14);
        assert_abs_diff_eq!(t[1][1], 0.7f64.sin(), epsilon = 1e-14);
    }

    #[test]
    fn ellipticize_diagonal() {
        let a = UnimodularMatrix::new(2.0, 0.0, 0.0, 0.5);
        let (theta, b, cls) = ellipticize_check(&a).unwrap();
        assert_abs_diff_eq!(theta, PI / 2.0, epsilon = 1e-14);
        assert_mat_eq(&b, [[0.0, -2.0], [0.5, 0.0]], 1e-14);
        assert!(cls.is_elliptic());
    }

    #[test]
    fn ellipticize_golden_mean() {
        let a = UnimodularMatrix::new(2.0, 1.0, 1.0, 1.0);
        let (_, b, cls) = ellipticize_check(&a).unwrap();
        assert!(cls.is_elliptic(), "trace was {}", b.trace());
    }

    #[test]
    fn ellipticize_extreme_diagonal() {
        // tr(A R_{pi/2}) = 0 for diagonal A, at any scale.
        let a = UnimodularMatrix::new(1e6, 0.0, 0.0, 1e-6);
        let (theta, b, cls) = ellipticize_check(&a).unwrap();
        assert_abs_diff_eq!(theta, PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.trace(), 0.0, epsilon = 1e-9);
        assert!(cls.is_elliptic());
    }

    #[test]
    fn ellipticize_rejects_elliptic() {
        assert!(matches!(
            ellipticize_check(&rotation(0.3)),
            Err(Sl2Error::NotHyperbolic { .. })
        ));
    }

    proptest! {
        #[test]
        fn exp_has_unit_determinant(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
            let e = exp_traceless(&TracelessMatrix::new(a, b, c));
            prop_assert!((e.det() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn log_exp_round_trip(a in -0.2f64..0.2, b in -0.2f64..0.2, c in -0.2f64..0.2) {
            let s = exp_traceless(&TracelessMatrix::new(a, b, c));
            prop_assume!(s.dist_to_identity() <= DELTA_LOG);
            let q = log_unimodular(&s).unwrap();
            let back = exp_traceless(&q);
            let residual = op_norm2(&back.sub_matrix(&s));
            prop_assert!(residual <= 1e-10, "residual {residual}");
        }

        #[test]
        fn rot_lemma_on_random_hyperbolic(
            abs_trace in 2.0f64 + 1e-6..100.0,
            u_angle in 0.0f64..PI,
            gap in prop::sample::select(vec![-1.0f64, 1.0]).prop_flat_map(|sign| {
                (1e-3f64..(PI / 2.0)).prop_map(move |g| sign * g)
            }),
            negate in proptest::bool::ANY,
        ) {
            let m = crate::sampling::hyperbolic_from_parts(abs_trace, u_angle, gap, negate);
            let (_, b, cls) = ellipticize_check(&m).unwrap();
            prop_assert!(cls.is_elliptic(), "trace {} not strictly elliptic", b.trace());
        }

        #[test]
        fn max_norm_inequalities(
            a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, d in -5.0f64..5.0,
            su in 0.0f64..PI, sgap in 0.05f64..(PI / 2.0),
            du in 0.0f64..PI, dgap in 0.05f64..(PI / 2.0),
        ) {
            let m = [[a, b], [c, d]];
            let src = (Direction::from_angle(su), Direction::from_angle(su + sgap));
            let dst = (Direction::from_angle(du), Direction::from_angle(du + dgap));
            let theta = sgap.min(dgap);
            let op = op_norm2(&m);
            let mx = max_norm_in_frame(&m, (&src.0, &src.1), (&dst.0, &dst.1)).unwrap();
            prop_assert!(op <= 4.0 / theta.sin() * mx + 1e-12);
            prop_assert!(mx <= op / theta.sin() + 1e-12);
        }

        #[test]
        fn eigen_direction_is_invariant(
            abs_trace in 2.0f64 + 1e-4..50.0,
            u_angle in 0.0f64..PI,
            gap in 1e-2f64..(PI / 2.0),
        ) {
            let m = crate::sampling::hyperbolic_from_parts(abs_trace, u_angle, gap, false);
            let (nu, ns, _) = eigen_splitting(&m).unwrap();
            for d in [nu, ns] {
                let v = d.unit_vector();
                let image = m.apply(v);
                let image_dir = Direction::from_vector(image.0, image.1);
                prop_assert!(d.angle_to(&image_dir) < 1e-9);
            }
        }
    }
}
