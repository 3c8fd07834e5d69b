//! Small numerical helpers shared across modules.

/// Correctly rounded sum of `values` (Shewchuk's exact partials, with the
/// final half-way correction used by Python's `math.fsum`).
///
/// Two slices whose exact real sums agree always produce the same `f64`,
/// which is what makes the clearing price bit-identical under any report
/// change preserving the aggregate.
pub fn exact_sum(values: &[f64]) -> f64 {
    if values.iter().any(|v| !v.is_finite()) {
        return values.iter().sum();
    }
    // Partials are non-overlapping, so their count is bounded by the
    // exponent range of f64 divided by the mantissa width (about 40).
    let mut partials = [0.0_f64; 48];
    let mut len = 0;
    for &value in values {
        let mut x = value;
        let mut i = 0;
        for j in 0..len {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials[i] = x;
        len = i + 1;
    }

    let mut n = len;
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

pub fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `%.12g`-like rendering: 12 significant digits, scientific notation.
pub fn format_sig12(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    if !value.is_finite() {
        return format!("{value}");
    }
    format!("{:.11e}", value)
}
