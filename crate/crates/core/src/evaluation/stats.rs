//! Paired two-tailed t-test with a self-contained Student-t tail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TTest {
    Defined { t: f64, df: u32, p: f64 },
    /// All paired differences are identical, so the statistic has no
    /// defined value.
    UndefinedVariance { df: u32, mean_difference: f64 },
}

impl TTest {
    pub fn p_value(&self) -> Option<f64> {
        match self {
            TTest::Defined { p, .. } => Some(*p),
            TTest::UndefinedVariance { .. } => None,
        }
    }

    /// True when defined and `p < alpha`.
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value().is_some_and(|p| p < alpha)
    }
}

/// Paired t-test on `a[i] - b[i]`, df = n − 1.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let df = (d.len() - 1) as u32;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if d.iter().all(|&x| x == d[0]) || var == 0.0 {
        return Ok(TTest::UndefinedVariance {
            df,
            mean_difference: mean,
        });
    }
    let t = mean / (var.sqrt() / n.sqrt());
    Ok(TTest::Defined {
        t,
        df,
        p: student_t_two_tailed(t, f64::from(df)),
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
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
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// I_x(a, b) via the continued fraction (modified Lentz), using the
/// symmetry relation where it converges faster.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
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
    for m in 1..=10_000 {
        let m = f64::from(m);
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

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-tailed tail by composite Simpson integration of the t density.
    fn quadrature_two_tailed(t: f64, df: f64) -> f64 {
        let norm = (ln_gamma_ref((df + 1.0) / 2.0) - ln_gamma_ref(df / 2.0)).exp()
            / (df * std::f64::consts::PI).sqrt();
        let density = |x: f64| norm * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        let n = 200_000;
        let hi = t.abs();
        let h = hi / n as f64;
        let mut s = density(0.0) + density(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * density(i as f64 * h);
        }
        let central = s * h / 3.0;
        1.0 - 2.0 * central
    }

    /// Stirling series, independent of the Lanczos path.
    fn ln_gamma_ref(x: f64) -> f64 {
        // shift up for accuracy, then undo with the recurrence
        let mut shift = 0.0;
        let mut z = x;
        while z < 20.0 {
            shift -= z.ln();
            z += 1.0;
        }
        let series = (z - 0.5) * z.ln() - z + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * z)
            - 1.0 / (360.0 * z.powi(3))
            + 1.0 / (1260.0 * z.powi(5))
            - 1.0 / (1680.0 * z.powi(7));
        series + shift
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        for x in [0.3, 1.7, 3.5, 12.25, 40.0] {
            assert!((ln_gamma(x) - ln_gamma_ref(x)).abs() < 1e-10, "{x}");
        }
    }

    #[test]
    fn t_tail_matches_quadrature() {
        for df in [1.0, 2.0, 3.0, 7.0, 19.0, 60.0] {
            for t in [0.1, 0.5, 1.0, 2.0, 3.5] {
                let got = student_t_two_tailed(t, df);
                let want = quadrature_two_tailed(t, df);
                assert!((got - want).abs() < 1e-10, "df={df} t={t}: {got} vs {want}");
            }
        }
        // closed forms: df=1 is Cauchy, df=2 has p = 1 - t/sqrt(2+t²)
        let t: f64 = 1.3;
        let cauchy = 1.0 - 2.0 * t.atan() / std::f64::consts::PI;
        assert!((student_t_two_tailed(t, 1.0) - cauchy).abs() < 1e-12);
        assert!((student_t_two_tailed(t, 2.0) - (1.0 - t / (2.0 + t * t).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn hand_derived_fixture() {
        // differences [1,1,1,-1]: mean 0.5, sd 1, t = 0.5 / (1/2) = 1
        let a = [2.0, 3.0, 4.0, 0.0];
        let b = [1.0, 2.0, 3.0, 1.0];
        let TTest::Defined { t, df, p } = paired_ttest(&a, &b).unwrap() else {
            panic!("expected a defined statistic");
        };
        assert!((t - 1.0).abs() < 1e-9);
        assert_eq!(df, 3);
        assert!((p - quadrature_two_tailed(1.0, 3.0)).abs() < 1e-9);

        let TTest::Defined { t: t2, p: p2, .. } = paired_ttest(&b, &a).unwrap() else {
            panic!()
        };
        assert_eq!(t2, -t);
        assert_eq!(p2, p);
    }

    #[test]
    fn degenerate_cases() {
        let a = [0.3, 0.5, 0.7];
        assert!(matches!(paired_ttest(&a, &a).unwrap(), TTest::UndefinedVariance { .. }));
        let shifted = [0.4, 0.6, 0.8];
        let r = paired_ttest(&shifted, &a).unwrap();
        assert!(r.p_value().is_none_or(|p| p.is_finite()));
        assert!(paired_ttest(&[1.0], &[2.0]).is_err());
        assert!(paired_ttest(&[1.0, 2.0], &[2.0]).is_err());
    }
}
