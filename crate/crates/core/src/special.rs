//! Special functions and distribution quantiles needed for the Hotelling
//! confidence regions and the chi-square pairing threshold.
//!
//! The F quantile is obtained by inverting the regularized incomplete beta
//! function; the chi-square quantile by inverting the regularized lower
//! incomplete gamma function. Both inversions use a safeguarded Newton
//! iteration that falls back to bisection whenever a step leaves the
//! current bracket.

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 500;

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
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
    for m in 1..=MAX_ITER {
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

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Inverse of I_x(a, b) in x, for prob in [0, 1].
pub fn inv_reg_inc_beta(a: f64, b: f64, prob: f64) -> f64 {
    if prob <= 0.0 {
        return 0.0;
    }
    if prob >= 1.0 {
        return 1.0;
    }
    let ln_norm = ln_beta(a, b);
    let density = |x: f64| ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_norm).exp();
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut x = 0.5;
    for _ in 0..MAX_ITER {
        let f = reg_inc_beta(a, b, x) - prob;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = density(x);
        let mut next = if dens.is_finite() && dens > 0.0 {
            x - f / dens
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= 1e-16 * hi {
            return next;
        }
        x = next;
    }
    x
}

/// Quantile of the F(d1, d2) distribution at `prob`.
pub fn f_quantile(prob: f64, d1: f64, d2: f64) -> f64 {
    if prob <= 0.5 {
        let x = inv_reg_inc_beta(0.5 * d1, 0.5 * d2, prob);
        d2 * x / (d1 * (1.0 - x))
    } else {
        // Work with the complementary variable 1 - x so the upper tail keeps
        // full relative precision.
        let y = inv_reg_inc_beta(0.5 * d2, 0.5 * d1, 1.0 - prob);
        d2 * (1.0 - y) / (d1 * y)
    }
}

/// CDF of the F(d1, d2) distribution.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    reg_inc_beta(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))
}

/// Regularized lower incomplete gamma P(a, x).
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln_front = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        sum * ln_front.exp()
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
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
        1.0 - ln_front.exp() * h
    }
}

/// CDF of the chi-square distribution with `k` degrees of freedom.
pub fn chi2_cdf(x: f64, k: f64) -> f64 {
    reg_lower_gamma(0.5 * k, 0.5 * x)
}

/// Quantile of the chi-square distribution with `k` degrees of freedom.
pub fn chi2_quantile(prob: f64, k: f64) -> f64 {
    if prob <= 0.0 {
        return 0.0;
    }
    if prob >= 1.0 {
        return f64::INFINITY;
    }
    let a = 0.5 * k;
    let ln_norm = ln_gamma(a);
    // Bracket in the gamma variable u = x / 2.
    let mut lo = 0.0_f64;
    let mut hi = a.max(1.0);
    while reg_lower_gamma(a, hi) < prob {
        lo = hi;
        hi *= 2.0;
    }
    let mut u = 0.5 * (lo + hi);
    for _ in 0..MAX_ITER {
        let f = reg_lower_gamma(a, u) - prob;
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let dens = ((a - 1.0) * u.ln() - u - ln_norm).exp();
        let mut next = if dens.is_finite() && dens > 0.0 {
            u - f / dens
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-15 * u || hi - lo <= 1e-16 * hi {
            u = next;
            break;
        }
        u = next;
    }
    2.0 * u
}
