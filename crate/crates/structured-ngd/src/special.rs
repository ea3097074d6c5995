//! Scalar special functions not covered by `statrs`.

use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], i.e. the logistic sigmoid.
pub fn softplus_deriv(x: f64) -> f64 {
    sigmoid(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] on `(0, inf)`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

/// Second derivative of `ln Gamma`.
pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0, "trigamma needs a positive argument");
    let mut acc = 0.0;
    let mut z = x;
    while z < 8.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let z2 = 1.0 / (z * z);
    // asymptotic series with Bernoulli-number coefficients
    let tail = 1.0 / z
        + z2 / 2.0
        + (z2 / z) * (1.0 / 6.0 - z2 * (1.0 / 30.0 - z2 * (1.0 / 42.0 - z2 * (1.0 / 30.0 - z2 * 5.0 / 66.0))));
    acc + tail
}

/// Multivariate log-gamma `ln Gamma_p(x)`.
pub fn mv_ln_gamma(p: usize, x: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (0..p).map(|i| ln_gamma(x - i as f64 / 2.0)).sum::<f64>()
}

/// Multivariate digamma: `sum_i psi(x - i/2)` for `i in 0..p`.
pub fn mv_digamma(p: usize, x: f64) -> f64 {
    (0..p).map(|i| digamma(x - i as f64 / 2.0)).sum()
}

/// Multivariate trigamma: `sum_i psi'(x - i/2)` for `i in 0..p`.
pub fn mv_trigamma(p: usize, x: f64) -> f64 {
    (0..p).map(|i| trigamma(x - i as f64 / 2.0)).sum()
}

/// Derivative of a `Gamma(shape, 1)` draw `y` with respect to its shape, holding the
/// uniform variate `F(y; shape)` fixed (implicit reparameterisation).
pub fn gamma_sample_shape_deriv(shape: f64, y: f64) -> f64 {
    let h = 1e-5 * shape.max(1.0);
    let lo = (shape - h).max(shape * 0.5);
    let hi = shape + h;
    let dcdf = (gamma_lr(hi, y) - gamma_lr(lo, y)) / (hi - lo);
    let log_pdf = (shape - 1.0) * y.ln() - y - ln_gamma(shape);
    -dcdf / log_pdf.exp()
}
