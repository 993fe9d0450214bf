//! Closed-form calculus for the drift matrix `Q = alpha*I + beta*A`,
//! `A = [[0,1],[1,0]]`, on the stationarity region `alpha > |beta|`.
//!
//! Every matrix function of `Q` is evaluated through the fixed spectral
//! decomposition `Q = P diag(alpha+beta, alpha-beta) P^-1` with
//! `P = [[1,1],[1,-1]]`, `P^-1 = P/2`; no general-purpose eigensolver is
//! involved anywhere in the crate.

use crate::error::{Error, Result};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// A plain 2-vector (state, parameter increment, score, ...).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    /// Outer product `v v'`, symmetric by construction.
    pub fn outer_sq(self) -> Mat2 {
        let off = self.x * self.y;
        Mat2::new(self.x * self.x, off, off, self.y * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.x, self.y)
    }
}

/// A dense 2x2 matrix with row-major named entries.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Mat2 {
    pub fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat2 { a11, a12, a21, a22 }
    }

    pub fn identity() -> Self {
        Mat2::new(1.0, 0.0, 0.0, 1.0)
    }

    pub fn zero() -> Self {
        Mat2::new(0.0, 0.0, 0.0, 0.0)
    }

    /// The exchange matrix `A = [[0,1],[1,0]]` coupling the two coordinates.
    pub fn exchange() -> Self {
        Mat2::new(0.0, 1.0, 1.0, 0.0)
    }

    /// Symmetric matrix `M(x) = x1*I + x2*A = [[x1,x2],[x2,x1]]`; the
    /// derivative of `Q(theta) x` with respect to `theta`.
    pub fn coeff_matrix(x: Vec2) -> Self {
        Mat2::new(x.x, x.y, x.y, x.x)
    }

    pub fn transpose(self) -> Self {
        Mat2::new(self.a11, self.a21, self.a12, self.a22)
    }

    pub fn det(self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn trace(self) -> f64 {
        self.a11 + self.a22
    }

    pub fn scale(self, s: f64) -> Self {
        Mat2::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }

    /// Closed-form inverse; `None` when the determinant is zero or not finite.
    pub fn inverse(self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Mat2::new(self.a22 / d, -self.a12 / d, -self.a21 / d, self.a11 / d))
    }

    pub fn frob_norm(self) -> f64 {
        (self.a11 * self.a11 + self.a12 * self.a12 + self.a21 * self.a21 + self.a22 * self.a22)
            .sqrt()
    }

    pub fn is_symmetric(self, tol: f64) -> bool {
        (self.a12 - self.a21).abs() <= tol
    }

    /// Entrywise symmetrization `(M + M')/2`.
    pub fn symmetrize(self) -> Mat2 {
        let off = 0.5 * (self.a12 + self.a21);
        Mat2::new(self.a11, off, off, self.a22)
    }

    /// Eigenvalues of the symmetrized matrix, smallest first.
    pub fn sym_eigenvalues(self) -> (f64, f64) {
        let m = self.symmetrize();
        let mean = 0.5 * (m.a11 + m.a22);
        let rad = (0.5 * (m.a11 - m.a22)).hypot(m.a12);
        (mean - rad, mean + rad)
    }

    /// `B C B'` for symmetric `C`, with the result exactly symmetric:
    /// the off-diagonal entry is computed once and mirrored.
    pub fn sandwich(self, c: Mat2) -> Mat2 {
        let cb_t = c * self.transpose();
        let m11 = self.a11 * cb_t.a11 + self.a12 * cb_t.a21;
        let m12 = self.a11 * cb_t.a12 + self.a12 * cb_t.a22;
        let m22 = self.a21 * cb_t.a12 + self.a22 * cb_t.a22;
        Mat2::new(m11, m12, m12, m22)
    }

    pub fn is_finite(self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a21.is_finite() && self.a22.is_finite()
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a11 + o.a11, self.a12 + o.a12, self.a21 + o.a21, self.a22 + o.a22)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a11 - o.a11, self.a12 - o.a12, self.a21 - o.a21, self.a22 - o.a22)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * o.a11 + self.a12 * o.a21,
            self.a11 * o.a12 + self.a12 * o.a22,
            self.a21 * o.a11 + self.a22 * o.a21,
            self.a21 * o.a12 + self.a22 * o.a22,
        )
    }
}

impl Mul<Vec2> for Mat2 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        Vec2::new(self.a11 * v.x + self.a12 * v.y, self.a21 * v.x + self.a22 * v.y)
    }
}

impl fmt::Display for Mat2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{:.6}, {:.6}], [{:.6}, {:.6}]]",
            self.a11, self.a12, self.a21, self.a22
        )
    }
}

/// Eigenvalues of `Q(theta)`, both strictly positive on the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectral {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Spectral {
    /// Rebuilds `Q` as the literal triple product `P diag(l1,l2) P^-1`
    /// with `P = [[1,1],[1,-1]]`. Exists as an independent route for
    /// checking the direct construction in [`Theta::drift_matrix`].
    pub fn reconstruct(self) -> Mat2 {
        let p = Mat2::new(1.0, 1.0, 1.0, -1.0);
        let p_inv = Mat2::new(0.5, 0.5, 0.5, -0.5);
        let d = Mat2::new(self.lambda1, 0.0, 0.0, self.lambda2);
        p * d * p_inv
    }
}

/// Drift parameter `theta = (alpha, beta)`; construction enforces the
/// stationarity condition `alpha > |beta|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    alpha: f64,
    beta: f64,
}

impl Theta {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) || alpha <= beta.abs() {
            return Err(Error::ParameterDomain { alpha, beta });
        }
        Ok(Theta { alpha, beta })
    }

    pub fn alpha(self) -> f64 {
        self.alpha
    }

    pub fn beta(self) -> f64 {
        self.beta
    }

    pub fn as_vec(self) -> Vec2 {
        Vec2::new(self.alpha, self.beta)
    }

    /// `Q(theta) = alpha*I + beta*A`, directly assembled.
    pub fn drift_matrix(self) -> Mat2 {
        Mat2::new(self.alpha, self.beta, self.beta, self.alpha)
    }

    /// Eigenvalues `(alpha + beta, alpha - beta)` of `Q(theta)`.
    pub fn spectral(self) -> Spectral {
        Spectral { lambda1: self.alpha + self.beta, lambda2: self.alpha - self.beta }
    }

    /// Applies a scalar function to `Q` through its spectral decomposition:
    /// `f(Q) = [[(f1+f2)/2, (f1-f2)/2], [(f1-f2)/2, (f1+f2)/2]]` where
    /// `fi = f(lambda_i)`.
    pub fn matrix_fn(self, f: impl Fn(f64) -> f64) -> Mat2 {
        let s = self.spectral();
        let f1 = f(s.lambda1);
        let f2 = f(s.lambda2);
        let diag = 0.5 * (f1 + f2);
        let off = 0.5 * (f1 - f2);
        Mat2::new(diag, off, off, diag)
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(alpha={}, beta={})", self.alpha, self.beta)
    }
}

/// Positive forecasting horizon `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon(f64);

impl Horizon {
    pub fn new(h: f64) -> Result<Self> {
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::Domain(format!("horizon must be positive and finite, got {h}")));
        }
        Ok(Horizon(h))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// One-step transition law of the process over a time step `dt`:
/// `X_{t+dt} | X_t ~ N(drift * X_t, noise_cov)`.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    pub drift: Mat2,
    pub noise_cov: Mat2,
}

/// Transition drift `exp(-Q dt)` and noise covariance
/// `(Q^-1/2)(I - exp(-2 Q dt))` for a step of length `dt >= 0`.
/// `dt = 0` is the degenerate step `(I, 0)`.
pub fn transition(theta: Theta, dt: f64) -> Result<Transition> {
    if !dt.is_finite() || dt < 0.0 {
        return Err(Error::Grid(format!("step must be nonnegative and finite, got dt={dt}")));
    }
    let drift = theta.matrix_fn(|l| (-l * dt).exp());
    // (1 - exp(-2 l dt)) / (2 l) per eigenvalue, via exp_m1 to keep
    // precision for small l*dt.
    let noise_cov = theta.matrix_fn(|l| -(-2.0 * l * dt).exp_m1() / (2.0 * l));
    Ok(Transition { drift, noise_cov })
}

/// Stationary covariance `Q^-1 / 2`.
pub fn stationary_cov(theta: Theta) -> Mat2 {
    theta.matrix_fn(|l| 0.5 / l)
}

/// Conditional-mean forecast `r(x) = exp(-hQ) x` of `X_{t+h}` given `X_t = x`.
pub fn regression(theta: Theta, h: Horizon, x: Vec2) -> Vec2 {
    theta.matrix_fn(|l| (-h.value() * l).exp()) * x
}

/// Jacobian of the forecast with respect to `theta`:
/// `-h exp(-hQ) M(x)` with `M(x) = [[x1,x2],[x2,x1]]`.
pub fn regression_jacobian(theta: Theta, h: Horizon, x: Vec2) -> Mat2 {
    let e = theta.matrix_fn(|l| (-h.value() * l).exp());
    (e * Mat2::coeff_matrix(x)).scale(-h.value())
}

/// Per-unit-time Fisher information of the drift parameter, `I(theta) = Q^-1`.
pub fn fisher_info(theta: Theta) -> Mat2 {
    theta.matrix_fn(|l| 1.0 / l)
}

/// Local-asymptotic-minimax bound for the normalized plug-in prediction
/// risk: `h^2 exp(-2hQ)`.
pub fn efficiency_bound(theta: Theta, h: Horizon) -> Mat2 {
    let hv = h.value();
    theta.matrix_fn(|l| hv * hv * (-2.0 * hv * l).exp())
}

/// `E[M(X) V M(X)']` for `X` drawn from the stationary law and symmetric `V`:
/// `m1*V + c*(VA + AV) + m2*AVA` with `m1 = m2 = alpha/(2(alpha^2-beta^2))`
/// and `c = -beta/(2(alpha^2-beta^2))`.
pub fn mvm_moment(theta: Theta, v: Mat2) -> Mat2 {
    let det = theta.alpha() * theta.alpha() - theta.beta() * theta.beta();
    let m = 0.5 * theta.alpha() / det;
    let c = -0.5 * theta.beta() / det;
    let a = Mat2::exchange();
    let va_av = v * a + a * v;
    let ava = a * v * a;
    v.scale(m) + va_av.scale(c) + ava.scale(m)
}

/// Limit of the normalized prediction risk when the estimator has
/// asymptotic covariance `V`: `h^2 exp(-hQ) E[M(X) V M(X)'] exp(-hQ)`.
/// With `V = I(theta)^-1 = Q` this collapses to [`efficiency_bound`].
pub fn qer_limit(theta: Theta, h: Horizon, v: Mat2) -> Mat2 {
    let hv = h.value();
    let e = theta.matrix_fn(|l| (-hv * l).exp());
    e.sandwich(mvm_moment(theta, v)).scale(hv * hv)
}

/// Scalar analogue for one decoupled channel `dY = -lambda Y dt + sigma dB`:
/// normalized risk limit `h^2 exp(-2 h lambda) * sigma^2/(2 lambda) * v`.
pub fn scalar_qer_limit(lambda: f64, h: f64, sigma2: f64, v: f64) -> f64 {
    debug_assert!(lambda > 0.0 && h >= 0.0 && sigma2 >= 0.0);
    h * h * (-2.0 * h * lambda).exp() * sigma2 / (2.0 * lambda) * v
}

/// Transition-operator reparameterization `xi = (eta, gamma)
/// = (exp(-h(alpha+beta)), exp(-h(alpha-beta)))`, the pair of eigenvalues of
/// `exp(-hQ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReparamXi {
    pub eta: f64,
    pub gamma: f64,
}

/// Jacobian `d(xi)/d(theta) = -h [[eta, eta], [gamma, -gamma]]`.
pub fn xi_jacobian(theta: Theta, h: Horizon) -> Mat2 {
    let s = theta.spectral();
    let hv = h.value();
    let eta = (-hv * s.lambda1).exp();
    let gamma = (-hv * s.lambda2).exp();
    Mat2::new(eta, eta, gamma, -gamma).scale(-hv)
}

/// The reparameterized point `xi` together with its inverse Fisher
/// information `2 h^2 diag(lambda1 e^{-2h lambda1}, lambda2 e^{-2h lambda2})`,
/// the asymptotic covariance attainable for estimating `xi`.
pub fn xi_fisher_inv(theta: Theta, h: Horizon) -> (ReparamXi, Mat2) {
    let s = theta.spectral();
    let hv = h.value();
    let eta = (-hv * s.lambda1).exp();
    let gamma = (-hv * s.lambda2).exp();
    let inv = Mat2::new(
        2.0 * hv * hv * s.lambda1 * eta * eta,
        0.0,
        0.0,
        2.0 * hv * hv * s.lambda2 * gamma * gamma,
    );
    (ReparamXi { eta, gamma }, inv)
}

/// Axis-aligned parameter box contained in the stationarity region;
/// membership of all four corners is enforced at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaBox {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ThetaBox {
    pub fn new(alpha_min: f64, alpha_max: f64, beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(alpha_min <= alpha_max && beta_min <= beta_max) {
            return Err(Error::Domain(format!(
                "empty parameter box: alpha in [{alpha_min}, {alpha_max}], beta in [{beta_min}, {beta_max}]"
            )));
        }
        let b = ThetaBox { alpha_min, alpha_max, beta_min, beta_max };
        for (a, be) in b.corner_coords() {
            Theta::new(a, be)?;
        }
        Ok(b)
    }

    /// A degenerate box holding a single point.
    pub fn singleton(theta: Theta) -> Self {
        ThetaBox {
            alpha_min: theta.alpha(),
            alpha_max: theta.alpha(),
            beta_min: theta.beta(),
            beta_max: theta.beta(),
        }
    }

    fn corner_coords(self) -> [(f64, f64); 4] {
        [
            (self.alpha_min, self.beta_min),
            (self.alpha_min, self.beta_max),
            (self.alpha_max, self.beta_min),
            (self.alpha_max, self.beta_max),
        ]
    }

    pub fn corners(self) -> [Theta; 4] {
        self.corner_coords()
            .map(|(a, b)| Theta { alpha: a, beta: b })
    }

    pub fn contains(self, theta: Theta) -> bool {
        theta.alpha() >= self.alpha_min
            && theta.alpha() <= self.alpha_max
            && theta.beta() >= self.beta_min
            && theta.beta() <= self.beta_max
    }
}

/// Uniform Lipschitz envelope of the forecast map over a parameter box:
/// `l(x) = sqrt(2) h ||P||_F^2 max_corner ||exp(-h D)||_F ||x||`, so that
/// `||r(x; theta) - r(x; theta')|| <= l(x) ||theta - theta'||` for all
/// `theta, theta'` in the box. The Frobenius norm of the spectral factor is
/// monotone in both `alpha` and `|beta|`, so the maximum over the box is
/// attained at a corner.
pub fn lipschitz_envelope(b: ThetaBox, h: Horizon, x: Vec2) -> f64 {
    let hv = h.value();
    let p_frob_sq = 4.0;
    let max_exp_frob = b
        .corners()
        .iter()
        .map(|t| {
            let s = t.spectral();
            ((-2.0 * hv * s.lambda1).exp() + (-2.0 * hv * s.lambda2).exp()).sqrt()
        })
        .fold(0.0_f64, f64::max);
    std::f64::consts::SQRT_2 * hv * p_frob_sq * max_exp_frob * x.norm()
}

/// Both sides of the outer-product perturbation inequality
/// `||(u-v)(u-v)' - (w-v)(w-v)'||_F <= ||u-w||^2 + 2 ||u-w|| ||w-v||`,
/// returned as `(lhs, rhs)`.
pub fn outer_diff_bound(u: Vec2, v: Vec2, w: Vec2) -> (f64, f64) {
    let lhs = ((u - v).outer_sq() - (w - v).outer_sq()).frob_norm();
    let d = (u - w).norm();
    (lhs, d * d + 2.0 * d * (w - v).norm())
}

/// Loewner order test `A <= B` up to Monte Carlo rounding: the smallest
/// eigenvalue of the symmetrized difference must exceed
/// `-1e-10 * (1 + ||B - A||_F)`.
pub fn lowner_le(a: Mat2, b: Mat2) -> bool {
    let d = b - a;
    let tol = 1e-10 * (1.0 + d.frob_norm());
    d.sym_eigenvalues().0 >= -tol
}

/// Distance in units in the last place between two finite doubles,
/// saturating at `u64::MAX` for mixed-sign or non-finite input.
pub fn ulp_distance(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    if !a.is_finite() || !b.is_finite() {
        return u64::MAX;
    }
    // Map bit patterns to a line monotone in the float ordering.
    fn key(x: f64) -> i64 {
        let b = x.to_bits() as i64;
        if b >= 0 {
            b
        } else {
            i64::MIN - b
        }
    }
    let d = (key(a) as i128 - key(b) as i128).unsigned_abs();
    u64::try_from(d).unwrap_or(u64::MAX)
}
