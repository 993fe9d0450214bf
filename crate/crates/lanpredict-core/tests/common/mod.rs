//! Helpers shared by the integration test binaries.

use lanpredict_core::Mat2;

/// Matrix exponential by scaling and squaring with a Taylor core.
///
/// Deliberately avoids the spectral decomposition the library uses, so the
/// two routes are independent: the argument is scaled until its norm is
/// below 2^-5, the series is summed to order 16 (remainder ~1e-40, far
/// below machine precision), and the result is squared back up. Each
/// squaring costs a few ulps, so oracle agreement is checked at 1e-12.
pub fn expm_taylor(m: Mat2) -> Mat2 {
    let norm = m.frob_norm();
    let squarings = if norm > 0.0 { (norm.log2() + 5.0).ceil().max(0.0) as u32 } else { 0 };
    let a = m.scale(0.5f64.powi(squarings as i32));
    let mut term = Mat2::identity();
    let mut sum = Mat2::identity();
    for k in 1..=16 {
        term = (term * a).scale(1.0 / k as f64);
        sum = sum + term;
    }
    let mut r = sum;
    for _ in 0..squarings {
        r = r * r;
    }
    r
}

/// Relative Frobenius distance, guarding the zero denominator.
pub fn rel_frob(a: Mat2, b: Mat2) -> f64 {
    let d = (a - b).frob_norm();
    let n = b.frob_norm();
    if n == 0.0 {
        d
    } else {
        d / n
    }
}
