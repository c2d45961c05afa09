//! Sample summaries and two-sample t-tests.

use crate::error::{Error, Result};

/// Count, mean and unbiased standard deviation of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl SampleSummary {
    pub fn new(n: usize, mean: f64, std: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::input(format!(
                "standard deviation needs n >= 2, got {n}"
            )));
        }
        if !(mean.is_finite() && std.is_finite() && std >= 0.0) {
            return Err(Error::input(format!("bad summary: mean {mean}, std {std}")));
        }
        Ok(SampleSummary { n, mean, std })
    }

    pub fn variance(&self) -> f64 {
        self.std * self.std
    }
}

pub fn mean(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("mean of an empty sample"));
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Mean and unbiased (n - 1) standard deviation.
pub fn summarize(samples: &[f64]) -> Result<SampleSummary> {
    let m = mean(samples)?;
    let n = samples.len();
    if n < 2 {
        return Err(Error::input(
            "standard deviation is undefined for a single sample",
        ));
    }
    let ss: f64 = samples.iter().map(|x| (x - m) * (x - m)).sum();
    SampleSummary::new(n, m, (ss / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TTestKind {
    /// Unequal variances, Welch-Satterthwaite degrees of freedom.
    Welch,
    /// Pooled variance, `n_a + n_b - 2` degrees of freedom.
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p value.
    pub p: f64,
    /// Both samples had zero variance; `p` is 1 for equal means and 0
    /// otherwise.
    pub zero_variance: bool,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    t_test(a, b, TTestKind::Welch)
}

pub fn t_test(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest> {
    t_test_from_summaries(&summarize(a)?, &summarize(b)?, kind)
}

/// The test computed from summary statistics alone.
pub fn t_test_from_summaries(
    a: &SampleSummary,
    b: &SampleSummary,
    kind: TTestKind,
) -> Result<TTest> {
    for s in [a, b] {
        if s.n < 2 {
            return Err(Error::input("t-test needs at least two samples per group"));
        }
    }
    let (na, nb) = (a.n as f64, b.n as f64);
    let diff = a.mean - b.mean;
    let (se2, df) = match kind {
        TTestKind::Welch => {
            let qa = a.variance() / na;
            let qb = b.variance() / nb;
            let se2 = qa + qb;
            let denom = qa * qa / (na - 1.0) + qb * qb / (nb - 1.0);
            (
                se2,
                if denom > 0.0 {
                    se2 * se2 / denom
                } else {
                    na + nb - 2.0
                },
            )
        }
        TTestKind::Student => {
            let pooled = ((na - 1.0) * a.variance() + (nb - 1.0) * b.variance()) / (na + nb - 2.0);
            (pooled * (1.0 / na + 1.0 / nb), na + nb - 2.0)
        }
    };
    if se2 == 0.0 {
        let (t, p) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest {
            t,
            df,
            p,
            zero_variance: true,
        });
    }
    let t = diff / se2.sqrt();
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df),
        zero_variance: false,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, 0.5 * df, 0.5).clamp(0.0, 1.0)
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `I_x(a, b)` by Lentz's continued fraction, using the symmetry
/// `I_x(a, b) = 1 - I_{1-x}(b, a)` where the fraction converges slowly.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 10_000;

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
