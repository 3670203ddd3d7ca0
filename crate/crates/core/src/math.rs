//! Small float helpers shared across the crate (libm-backed for `no_std`).

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn log10(x: f64) -> f64 {
    libm::log10(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + exp(-s))
    } else {
        let e = exp(s);
        e / (1.0 + e)
    }
}

/// Two-sided tail probability of a standard normal variate.
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(abs(z) / core::f64::consts::SQRT_2)
}

pub fn mean(xs: &[f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (denominator n-1); 0 for fewer than two elements.
pub fn sample_var(xs: &[f64], mu: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64
}
