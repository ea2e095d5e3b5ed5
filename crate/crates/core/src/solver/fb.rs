//! Regularized Fischer-Burmeister complementarity function.

/// `phi(a, b) = a + b - sqrt(a^2 + b^2 + eps^2)`.
///
/// With `eps = 0`, `phi(a, b) = 0` iff `a >= 0`, `b >= 0` and `a b = 0`.
/// With `eps > 0` the root set is the smooth curve `a, b > 0`, `2 a b = eps^2`.
#[inline]
pub fn fischer_burmeister(a: f64, b: f64, eps: f64) -> f64 {
    // a + b - r with r = hypot(a, b, eps); written as (2ab - eps^2)/(a + b + r)
    // when a + b > 0 to avoid cancellation on the root curve.
    let r = (a * a + b * b + eps * eps).sqrt();
    let s = a + b;
    if s > 0.0 {
        (2.0 * a * b - eps * eps) / (s + r)
    } else {
        s - r
    }
}

/// Element of the generalized gradient `(d phi / d a, d phi / d b)`.
///
/// At the kink (`a = b = eps = 0`) this picks the element along the
/// diagonal direction, `(1 - 1/sqrt 2, 1 - 1/sqrt 2)`.
#[inline]
pub fn fischer_burmeister_gradient(a: f64, b: f64, eps: f64) -> (f64, f64) {
    let r = (a * a + b * b + eps * eps).sqrt();
    if r == 0.0 {
        let c = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
        (c, c)
    } else {
        (1.0 - a / r, 1.0 - b / r)
    }
}
