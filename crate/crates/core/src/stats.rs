//! Small numerical kernels shared by the analysis modules: means,
//! interpolated percentiles and Student-t quantiles.

/// Arithmetic mean, accumulated as deviations from the first element.
///
/// For a constant input the result is that constant bit-for-bit, which the
/// equal-target scenarios rely on for an exact equality ratio of 1.0.
pub fn mean(values: &[f64]) -> Option<f64> {
    let (&first, rest) = values.split_first()?;
    let shift: f64 = rest.iter().map(|v| v - first).sum();
    Some(first + shift / values.len() as f64)
}

/// Same as [`mean`] over an iterator of values.
pub fn mean_iter<I: IntoIterator<Item = f64>>(values: I) -> Option<f64> {
    let mut iter = values.into_iter();
    let first = iter.next()?;
    let (mut shift, mut n) = (0.0, 1usize);
    for v in iter {
        shift += v - first;
        n += 1;
    }
    Some(first + shift / n as f64)
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

/// Percentile of an ascending slice by linear interpolation between closest
/// ranks (the "type 7" convention): `h = (n - 1) p`, interpolate between
/// `x[floor(h)]` and `x[floor(h) + 1]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let a = sorted[lo];
    if lo + 1 >= sorted.len() || frac == 0.0 {
        return Some(a);
    }
    Some(a + frac * (sorted[lo + 1] - a))
}

/// Type-7 percentile without a full sort. Reorders `values` in place; the
/// result is identical to [`percentile_sorted`] on the sorted data.
pub fn percentile_select(values: &mut [f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let h = (values.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut a, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if upper.is_empty() || frac == 0.0 {
        return Some(a);
    }
    let b = upper
        .iter()
        .copied()
        .min_by(f64::total_cmp)
        .expect("upper partition is non-empty");
    Some(a + frac * (b - a))
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cont_frac(x, a, b) / a
    } else {
        1.0 - front * beta_cont_frac(1.0 - x, b, a) / b
    }
}

// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cont_frac(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Quantile of Student's t distribution with `df` degrees of freedom.
///
/// Inverts `P(T <= t) = 1 - I_{df/(df+t^2)}(df/2, 1/2) / 2` for `t > 0` by
/// bisection on the incomplete-beta argument; symmetric for `p < 0.5`.
pub fn student_t_quantile(p: f64, df: f64) -> Option<f64> {
    if !(p > 0.0 && p < 1.0) || !(df.is_finite() && df > 0.0) {
        return None;
    }
    if p == 0.5 {
        return Some(0.0);
    }
    let tail = if p > 0.5 { 1.0 - p } else { p };
    // I_x(df/2, 1/2) is increasing in x; solve I_x = 2 * tail.
    let target = 2.0 * tail;
    let (a, b) = (0.5 * df, 0.5);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inc_beta(mid, a, b) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let t = (df * (1.0 - x) / x).sqrt();
    Some(if p > 0.5 { t } else { -t })
}
