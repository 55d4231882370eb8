//! Thin wrappers so every transcendental call goes through `libm`.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Reduces `x` into `[0, period)`.
#[inline]
pub fn wrap(x: f64, period: f64) -> f64 {
    let mut r = x - period * floor(x / period);
    if r >= period {
        r -= period;
    }
    if r < 0.0 {
        r = 0.0;
    }
    r
}

/// Minimum-image reduction of a displacement component.
#[inline]
pub fn min_image(dx: f64, period: f64) -> f64 {
    dx - period * round(dx / period)
}

/// Median of a slice (average of the two middle values for even lengths).
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
