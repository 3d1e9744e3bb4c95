//! Paired significance testing across seeds, plus a warn-only normality check.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub n: usize,
    /// mean(a - b)
    pub mean_diff: f64,
    pub t: f64,
    /// Two-sided.
    pub p_value: f64,
    /// Half-width of the 95% confidence interval of the mean difference.
    pub ci95: f64,
    /// Set when the differences have zero spread but a nonzero mean.
    pub degenerate_variance: bool,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Paired t-test of `a` against `b`, both indexed by seed.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Metric(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Metric("paired t-test input contains non-finite values".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_diff = mean(&d);
    let sd = sample_sd(&d);
    if sd == 0.0 {
        return Ok(if mean_diff == 0.0 {
            PairedTTest {
                n,
                mean_diff: 0.0,
                t: 0.0,
                p_value: 1.0,
                ci95: 0.0,
                degenerate_variance: false,
            }
        } else {
            PairedTTest {
                n,
                mean_diff,
                t: f64::INFINITY.copysign(mean_diff),
                p_value: 0.0,
                ci95: 0.0,
                degenerate_variance: true,
            }
        });
    }
    let se = sd / (n as f64).sqrt();
    let t = mean_diff / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n >= 2");
    // sf on |t| keeps precision in the far tail
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    let ci95 = dist.inverse_cdf(0.975) * se;
    Ok(PairedTTest {
        n,
        mean_diff,
        t,
        p_value,
        ci95,
        degenerate_variance: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normality {
    /// p >= alpha.
    Pass { w: f64, p_value: f64 },
    /// p < alpha. Advisory only.
    Warn { w: f64, p_value: f64 },
    /// Sample size outside the supported range, or zero spread.
    Skipped { reason: SkipReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    UnsupportedN(usize),
    ZeroRange,
}

impl std::fmt::Display for Normality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Normality::Pass { w, p_value } => write!(f, "normal (W={w:.4}, p={p_value:.4})"),
            Normality::Warn { w, p_value } => write!(f, "WARNING non-normal differences (W={w:.4}, p={p_value:.4})"),
            Normality::Skipped { reason: SkipReason::UnsupportedN(n) } => {
                write!(f, "WARNING normality check skipped: n={n} outside [3, 50]")
            }
            Normality::Skipped { reason: SkipReason::ZeroRange } => {
                write!(f, "WARNING normality check skipped: all differences equal")
            }
        }
    }
}

pub const NORMALITY_ALPHA: f64 = 0.05;

/// Shapiro-Wilk check on 3 <= n <= 50 values. Never blocks anything.
pub fn normality_check(xs: &[f64]) -> Normality {
    let n = xs.len();
    if !(3..=50).contains(&n) {
        return Normality::Skipped { reason: SkipReason::UnsupportedN(n) };
    }
    match shapiro_wilk(xs) {
        Some((w, p_value)) if p_value < NORMALITY_ALPHA => Normality::Warn { w, p_value },
        Some((w, p_value)) => Normality::Pass { w, p_value },
        None => Normality::Skipped { reason: SkipReason::ZeroRange },
    }
}

// c0 + c1 x + c2 x^2 + ...
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Shapiro-Wilk W and its p-value using Royston's coefficient and
/// significance approximations. `None` when all values are equal.
pub fn shapiro_wilk(xs: &[f64]) -> Option<(f64, f64)> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let n = xs.len();
    assert!(n >= 3, "shapiro_wilk needs n >= 3");
    let mut x = xs.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range < 1e-19 * x[n - 1].abs().max(1.0) {
        return None;
    }

    let an = n as f64;
    let half = n / 2;
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = 0.5f64.sqrt();
    } else {
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let m: Vec<f64> = (1..=half)
            .map(|i| std_normal.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            a[1] = a2;
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            (2, fac)
        } else {
            (1, ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    let xbar = mean(&x);
    let ss: f64 = x.iter().map(|v| (v - xbar) * (v - xbar)).sum();
    let num: f64 = (0..half).map(|i| a[i] * (x[n - 1 - i] - x[i])).sum();
    let w = (num * num / ss).min(1.0);

    if n == 3 {
        // exact distribution for n = 3
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75f64.sqrt().asin());
        return Some((w, p.clamp(0.0, 1.0)));
    }
    let mut y = (1.0 - w).ln();
    let (mu, sigma) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return Some((w, 1e-99));
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        let lx = an.ln();
        (poly(&C5, lx), poly(&C6, lx).exp())
    };
    let p = Normal::new(mu, sigma).unwrap().sf(y);
    Some((w, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_p_one() {
        let a = [0.3, 0.5, 0.7];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.mean_diff, r.p_value, r.ci95), (0.0, 1.0, 0.0));
        assert!(!r.degenerate_variance);
    }

    #[test]
    fn constant_shift_is_flagged() {
        let a = [0.6; 5];
        let b = [0.5; 5];
        let r = paired_t_test(&a, &b).unwrap();
        assert!(r.degenerate_variance);
        assert_eq!(r.p_value, 0.0);
        assert!((r.mean_diff - 0.1).abs() < 1e-15);
    }

    #[test]
    fn too_few_pairs_is_an_error() {
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn two_pair_closed_form() {
        // d = [1, 3]: mean 2, sd sqrt(2), se 1, t = 2 with one degree of freedom
        let r = paired_t_test(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!((r.t - 2.0).abs() < 1e-12);
        // Cauchy: P(|T| > 2) = 1 - 2 atan(2) / pi
        let p = 1.0 - 2.0 * 2f64.atan() / std::f64::consts::PI;
        assert!((r.p_value - p).abs() < 1e-10, "{} vs {p}", r.p_value);
        // t_{0.975, 1} = tan(0.475 pi)
        assert!((r.ci95 - (0.475 * std::f64::consts::PI).tan()).abs() < 1e-8);
    }

    #[test]
    fn normality_ranges() {
        assert_eq!(
            normality_check(&[1.0, 2.0]),
            Normality::Skipped { reason: SkipReason::UnsupportedN(2) }
        );
        assert_eq!(
            normality_check(&[1.0; 4]),
            Normality::Skipped { reason: SkipReason::ZeroRange }
        );
        assert!(matches!(normality_check(&[0.0, 0.0, 0.0, 0.0, 100.0]), Normality::Warn { .. }));
    }

    #[test]
    fn n3_exact_formula_endpoints() {
        // equally spaced three points give the maximum W = 1 and p = 1
        let (w, p) = shapiro_wilk(&[1.0, 2.0, 3.0]).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
        assert!((p - 1.0).abs() < 1e-9);
    }
}
