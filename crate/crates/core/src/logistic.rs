//! Scalar logistic helpers shared by both models.

/// `e^x / (1 + e^x)`.
#[inline]
pub fn mu(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `e^x / (1 + e^x)^2`, the variance of a Bernoulli(mu(x)) edge.
#[inline]
pub fn mu_prime(x: f64) -> f64 {
    let p = mu(x);
    p * (1.0 - p)
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + softplus(-(a - b).abs())
}

/// `(1 + e^x)^2 / e^x`, the reciprocal edge variance used for `b_n`, `c_n`.
#[inline]
pub fn inverse_variance(x: f64) -> f64 {
    // symmetric in x; evaluate on the non-positive side to avoid overflow
    let y = -x.abs();
    let e = y.exp();
    (1.0 + e) * (1.0 + e) / e
}
