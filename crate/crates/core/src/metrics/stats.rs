//! Student-t probabilities and the t tests built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lanczos approximation (g = 7, 9 terms) of `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
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
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
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

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn betainc_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| ≥ |t|)` of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    betainc_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (divisor `n − 1`); 0 for fewer than two values.
pub fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample value".into()));
    }
    Ok(())
}

/// Paired t test on `d = y − x`. Differences that are all exactly zero give
/// `t = 0, p = 1`; constant non-zero differences are degenerate.
pub fn t_test_paired(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("paired samples of length {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: x.len() });
    }
    check_finite(x)?;
    check_finite(y)?;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).collect();
    let df = (d.len() - 1) as f64;
    if d.iter().all(|&v| v == 0.0) {
        return Ok(TTest { t: 0.0, df, p: 1.0 });
    }
    let sd = sample_sd(&d);
    if sd == 0.0 {
        return Err(Error::Degenerate("paired differences have zero variance".into()));
    }
    let t = mean(&d) / (sd / (d.len() as f64).sqrt());
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df),
    })
}

/// Welch's unequal-variance t test with Welch–Satterthwaite degrees of freedom.
pub fn t_test_two_sample(x: &[f64], y: &[f64]) -> Result<TTest> {
    for s in [x, y] {
        if s.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: s.len() });
        }
        check_finite(s)?;
    }
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (vx, vy) = (sample_sd(x).powi(2) / nx, sample_sd(y).powi(2) / ny);
    if vx + vy == 0.0 {
        return Err(Error::Degenerate("both samples have zero variance".into()));
    }
    let t = (mean(x) - mean(y)) / (vx + vy).sqrt();
    let df = (vx + vy).powi(2) / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df),
    })
}
