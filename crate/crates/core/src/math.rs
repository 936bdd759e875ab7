//! Scalar helpers. Transcendentals go through `libm` so results are identical
//! with and without `std`.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// Index of the largest entry; ties go to the lowest index. NaNs never win.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || values[best].is_nan() && !v.is_nan() {
            best = i;
        }
    }
    best
}

/// In-place max-shifted softmax. Entries equal to `-inf` map to exactly 0.
///
/// Returns `false` if every entry is `-inf` (or the input is empty), leaving
/// the slice untouched.
pub fn softmax_in_place(logits: &mut [f64]) -> bool {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return false;
    }
    let mut total = 0.0;
    for v in logits.iter_mut() {
        *v = if *v == f64::NEG_INFINITY { 0.0 } else { exp(*v - max) };
        total += *v;
    }
    for v in logits.iter_mut() {
        *v /= total;
    }
    true
}

/// `x ln x` with the `0 ln 0 = 0` convention.
#[inline]
pub fn xlnx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * ln(x)
    }
}
