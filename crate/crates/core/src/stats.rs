//! Special functions and two-sample statistics.

use std::collections::HashMap;

use crate::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
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

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| >= |t|)` of Student's t with `dof`
/// degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t.is_nan() || dof.is_nan() || dof <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(0.5 * dof, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

/// Outcome of Welch's unequal-variance t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t_stat: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub dof: f64,
    /// Two-sided.
    pub p_value: f64,
    pub sig5: bool,
    pub sig1: bool,
}

impl WelchResult {
    /// `""`, `"*"` (5% level) or `"**"` (1% level).
    pub fn stars(&self) -> &'static str {
        if self.sig1 {
            "**"
        } else if self.sig5 {
            "*"
        } else {
            ""
        }
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Statistics(format!(
            "Welch test needs at least 2 samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("t-test sample".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    if sa + sb == 0.0 {
        return Err(Error::Statistics("both samples have zero variance".into()));
    }
    let t_stat = (ma - mb) / (sa + sb).sqrt();
    let dof = (sa + sb).powi(2)
        / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p_value = student_t_two_sided(t_stat, dof);
    Ok(WelchResult {
        t_stat,
        dof,
        p_value,
        sig5: p_value < 0.05,
        sig1: p_value < 0.01,
    })
}

/// 1-based average ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation of two id-keyed score sets.
pub fn rank_agreement<S: AsRef<str>>(a: &[(S, f64)], b: &[(S, f64)]) -> Result<f64> {
    if a.len() < 2 {
        return Err(Error::Statistics("rank agreement needs at least 2 items".into()));
    }
    let lookup: HashMap<&str, f64> = b.iter().map(|(id, s)| (id.as_ref(), *s)).collect();
    if lookup.len() != b.len() || a.len() != b.len() {
        return Err(Error::Statistics("score sets have different ids".into()));
    }
    let mut xs = Vec::with_capacity(a.len());
    let mut ys = Vec::with_capacity(a.len());
    for (id, s) in a {
        let other = lookup
            .get(id.as_ref())
            .ok_or_else(|| Error::Statistics(format!("id {:?} missing from second set", id.as_ref())))?;
        xs.push(*s);
        ys.push(*other);
    }
    pearson(&average_ranks(&xs), &average_ranks(&ys))
        .ok_or_else(|| Error::Statistics("constant scores have no rank correlation".into()))
}

/// Area under the ROC curve (Mann–Whitney, ties count one half).
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Statistics("AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
    }

    #[test]
    fn t_with_two_dof_closed_form() {
        // For dof = 2 the two-sided tail is 1 - |t| / sqrt(2 + t^2).
        for t in [0.1f64, 0.5, 1.0, 3.0, 10.0] {
            let exact = 1.0 - t / (2.0 + t * t).sqrt();
            assert_abs_diff_eq!(student_t_two_sided(t, 2.0), exact, epsilon = 1e-13);
        }
        // dof = 1 is Cauchy: 1 - 2 atan(|t|) / pi.
        for t in [0.2, 1.0, 7.0] {
            let exact = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert_abs_diff_eq!(student_t_two_sided(t, 1.0), exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn identical_samples() {
        let r = welch_ttest(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.t_stat, 0.0);
        assert_abs_diff_eq!(r.p_value, 1.0, epsilon = 1e-15);
        assert_eq!(r.stars(), "");
    }

    #[test]
    fn five_vs_five() {
        let r = welch_ttest(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_abs_diff_eq!(r.t_stat, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.dof, 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_value, 0.346_593_507_087_334_25, epsilon = 1e-12);
    }

    #[test]
    fn star_thresholds() {
        let stars = |p: f64| {
            WelchResult {
                t_stat: 0.0,
                dof: 1.0,
                p_value: p,
                sig5: p < 0.05,
                sig1: p < 0.01,
            }
            .stars()
        };
        assert_eq!(stars(0.03), "*");
        assert_eq!(stars(0.005), "**");
        assert_eq!(stars(0.2), "");
    }

    #[test]
    fn welch_errors() {
        assert!(welch_ttest(&[1.0], &[1.0, 2.0]).is_err());
        assert!(welch_ttest(&[2.0, 2.0], &[3.0, 3.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let ids = ["a", "b", "c", "d"];
        let a: Vec<_> = ids.iter().zip([1.0, 2.0, 3.0, 4.0]).map(|(i, s)| (*i, s)).collect();
        let b: Vec<_> = ids.iter().zip([1.0, 2.0, 4.0, 3.0]).map(|(i, s)| (*i, s)).collect();
        assert_abs_diff_eq!(rank_agreement(&a, &b).unwrap(), 0.8, epsilon = 1e-12);
        let lin: Vec<_> = a.iter().map(|(i, s)| (*i, 2.0 * s + 1.0)).collect();
        assert_abs_diff_eq!(rank_agreement(&a, &lin).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<_> = a.iter().map(|(i, s)| (*i, -s)).collect();
        assert_abs_diff_eq!(rank_agreement(&a, &neg).unwrap(), -1.0, epsilon = 1e-12);
        let other = vec![("a", 1.0), ("b", 2.0), ("c", 3.0), ("z", 4.0)];
        assert!(rank_agreement(&a, &other).is_err());
    }

    #[test]
    fn auc_matches_pair_count() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4];
        let labels = [false, true, false, true, false];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &pi) in labels.iter().enumerate() {
            for (j, &pj) in labels.iter().enumerate() {
                if pi && !pj {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert_abs_diff_eq!(auc(&scores, &labels).unwrap(), wins / pairs, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn welch_antisymmetry(
            a in proptest::collection::vec(0.0f64..4.0, 2..20),
            b in proptest::collection::vec(0.0f64..4.0, 2..20),
        ) {
            let Ok(ab) = welch_ttest(&a, &b) else { return Ok(()); };
            let ba = welch_ttest(&b, &a).unwrap();
            prop_assert_eq!(ab.t_stat, -ba.t_stat);
            prop_assert!((ab.dof - ba.dof).abs() <= 1e-12 * ab.dof.abs());
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-14);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
            prop_assert!(!ab.sig1 || ab.sig5);
        }
    }
}
