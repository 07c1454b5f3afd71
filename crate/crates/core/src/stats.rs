//! Self-contained statistical tests: Welch's heteroscedastic one-way
//! ANOVA with Welch–Satterthwaite degrees of freedom, Spearman rank
//! correlation with average-rank tie handling, and the regularized
//! incomplete beta function both rely on for analytic p-values. A seeded
//! permutation mode cross-checks the analytic values.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Outcome of a hypothesis test. `df1`/`df2` are fractional degrees of
/// freedom where the test defines them and 0 otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df1: f64,
    pub df2: f64,
    pub p_value: f64,
    pub method: String,
}

/// Natural log of the gamma function (Lanczos approximation, g = 5,
/// absolute error below 2e-10 for x > 0).
pub fn ln_gamma(x: f64) -> f64 {
    const COF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Regularized incomplete beta function `I_x(a, b)` via the modified
/// Lentz continued fraction, switching to the symmetric tail so the
/// fraction always converges quickly. Absolute error below 1e-10.
pub fn reg_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::Domain(format!("incomplete beta needs a,b > 0, got a={a}, b={b}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("incomplete beta needs x in [0,1], got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x)? / b)
    }
}

/// Continued fraction for the incomplete beta (modified Lentz method).
fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step of the fraction.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::Domain(format!("incomplete beta fraction did not converge (a={a}, b={b}, x={x})")))
}

/// Upper tail `P(F > f)` of the F distribution with `df1`/`df2` degrees
/// of freedom.
pub fn f_survival(f: f64, df1: f64, df2: f64) -> Result<f64> {
    if f < 0.0 {
        return Ok(1.0);
    }
    reg_incomplete_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))
}

/// Two-sided p-value `2 P(T > |t|)` of the Student-t distribution.
pub fn t_two_sided(t: f64, df: f64) -> Result<f64> {
    reg_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite observation".into()));
    }
    Ok(())
}

/// Welch's one-way ANOVA for `k >= 2` groups with unequal variances.
/// Weights are `w_j = n_j / s_j^2`; the denominator and the fractional
/// `df2` follow Welch–Satterthwaite. Every group needs at least two
/// observations and nonzero variance.
pub fn welch_anova(groups: &[Vec<f64>]) -> Result<TestResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::TooFewGroups { needed: 2, got: k });
    }
    let mut w = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut ns = Vec::with_capacity(k);
    for (j, g) in groups.iter().enumerate() {
        check_finite(g)?;
        let n = g.len();
        if n < 2 {
            return Err(Error::GroupTooSmall { index: j });
        }
        let mean = g.iter().sum::<f64>() / n as f64;
        let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        if var <= 0.0 {
            return Err(Error::ZeroVariance { index: j });
        }
        w.push(n as f64 / var);
        means.push(mean);
        ns.push(n as f64);
    }
    let kf = k as f64;
    let w_total: f64 = w.iter().sum();
    let grand = w.iter().zip(&means).map(|(wi, mi)| wi * mi).sum::<f64>() / w_total;
    let numerator = w
        .iter()
        .zip(&means)
        .map(|(wi, mi)| wi * (mi - grand) * (mi - grand))
        .sum::<f64>()
        / (kf - 1.0);
    let lambda_sum: f64 = w
        .iter()
        .zip(&ns)
        .map(|(wi, ni)| {
            let r = 1.0 - wi / w_total;
            r * r / (ni - 1.0)
        })
        .sum();
    let lambda = 3.0 * lambda_sum / (kf * kf - 1.0);
    let denominator = 1.0 + 2.0 * lambda * (kf - 2.0) / 3.0;
    let f = numerator / denominator;
    let df1 = kf - 1.0;
    let df2 = 1.0 / lambda;
    let p = f_survival(f, df1, df2)?;
    Ok(TestResult { statistic: f, df1, df2, p_value: p, method: "welch_anova".into() })
}

/// Average ranks (1-based); tied values share the mean of the positions
/// they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average 1-based rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average-rank tie handling. The p-value
/// uses the t approximation `t = rho sqrt((n-2)/(1-rho^2))` with `n-2`
/// degrees of freedom; a perfect `|rho| = 1` yields p = 0.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Domain(format!("spearman needs n >= 3, got {n}")));
    }
    check_finite(x)?;
    check_finite(y)?;
    let rho = pearson(&average_ranks(x), &average_ranks(y))?;
    let df = (n - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        t_two_sided(t, df)?
    };
    Ok(TestResult { statistic: rho, df1: df, df2: 0.0, p_value: p, method: "spearman".into() })
}

/// Welch ANOVA with a permutation p-value: observations are pooled and
/// reassigned to the original group sizes `shuffles` times; permutations
/// that produce a zero-variance group are skipped. The p-value is
/// `(1 + #{F_perm >= F_obs}) / (1 + #valid)`.
pub fn welch_anova_permutation(groups: &[Vec<f64>], shuffles: usize, seed: u64) -> Result<TestResult> {
    let observed = welch_anova(groups)?;
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mut pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    let mut valid = 0usize;
    for _ in 0..shuffles {
        pooled.shuffle(&mut rng);
        let mut start = 0;
        let perm: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&s| {
                let g = pooled[start..start + s].to_vec();
                start += s;
                g
            })
            .collect();
        match welch_anova(&perm) {
            Ok(r) => {
                valid += 1;
                if r.statistic >= observed.statistic {
                    extreme += 1;
                }
            }
            Err(Error::ZeroVariance { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let p = (1 + extreme) as f64 / (1 + valid) as f64;
    Ok(TestResult { p_value: p, method: "welch_anova_perm".into(), ..observed })
}

/// Spearman correlation with a two-sided permutation p-value over
/// `shuffles` seeded reshuffles of `y`.
pub fn spearman_permutation(x: &[f64], y: &[f64], shuffles: usize, seed: u64) -> Result<TestResult> {
    let observed = spearman(x, y)?;
    let mut perm_y = y.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..shuffles {
        perm_y.shuffle(&mut rng);
        let r = spearman(x, &perm_y)?;
        if r.statistic.abs() >= observed.statistic.abs() {
            extreme += 1;
        }
    }
    let p = (1 + extreme) as f64 / (1 + shuffles) as f64;
    Ok(TestResult { p_value: p, method: "spearman_perm".into(), ..observed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn incomplete_beta_uniform_case() {
        for x in [0.0, 0.25, 0.5, 1.0] {
            assert_abs_diff_eq!(reg_incomplete_beta(1.0, 1.0, x).unwrap(), x, epsilon = 1e-12);
        }
    }

    #[test]
    fn incomplete_beta_cubic_case() {
        // I_x(2,2) = 3x^2 - 2x^3, so the midpoint is exactly 1/2.
        assert_abs_diff_eq!(reg_incomplete_beta(2.0, 2.0, 0.5).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            reg_incomplete_beta(2.0, 2.0, 0.3).unwrap(),
            3.0 * 0.09 - 2.0 * 0.027,
            epsilon = 1e-12
        );
    }

    #[test]
    fn incomplete_beta_domain_checks() {
        assert!(reg_incomplete_beta(0.0, 1.0, 0.5).is_err());
        assert!(reg_incomplete_beta(1.0, -1.0, 0.5).is_err());
        assert!(reg_incomplete_beta(1.0, 1.0, 1.5).is_err());
        assert!(reg_incomplete_beta(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn welch_identical_groups_give_zero_f() {
        let g = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]];
        let r = welch_anova(&g).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn welch_matches_formula_transcription_oracle() {
        let groups = vec![vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0]];
        let r = welch_anova(&groups).unwrap();

        // Independent step-by-step transcription of the Welch formulas.
        let k = 3.0;
        let stats: Vec<(f64, f64, f64)> = groups
            .iter()
            .map(|g| {
                let n = g.len() as f64;
                let mean = g.iter().sum::<f64>() / n;
                let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (n, mean, var)
            })
            .collect();
        let w: Vec<f64> = stats.iter().map(|(n, _, v)| n / v).collect();
        let w_sum: f64 = w.iter().sum();
        let grand: f64 = w.iter().zip(&stats).map(|(wi, (_, m, _))| wi * m).sum::<f64>() / w_sum;
        let num: f64 =
            w.iter().zip(&stats).map(|(wi, (_, m, _))| wi * (m - grand).powi(2)).sum::<f64>() / (k - 1.0);
        let lam_sum: f64 =
            w.iter().zip(&stats).map(|(wi, (n, _, _))| (1.0 - wi / w_sum).powi(2) / (n - 1.0)).sum();
        let f_oracle = num / (1.0 + 2.0 * (k - 2.0) / (k * k - 1.0) * lam_sum);
        let df2_oracle = (k * k - 1.0) / (3.0 * lam_sum);

        assert_abs_diff_eq!(r.statistic, f_oracle, epsilon = 1e-9);
        assert_abs_diff_eq!(r.df2, df2_oracle, epsilon = 1e-9);

        // Equal sizes and variances make the example solvable by hand:
        // F = 78/7, df2 = 4, p = I_{7/46}(2,1) = (7/46)^2.
        assert_abs_diff_eq!(r.statistic, 78.0 / 7.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.df1, 2.0, epsilon = 0.0);
        assert_abs_diff_eq!(r.df2, 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p_value, (7.0f64 / 46.0).powi(2), epsilon = 1e-9);
    }

    #[test]
    fn welch_error_contract() {
        assert!(matches!(
            welch_anova(&[vec![1.0, 2.0]]),
            Err(Error::TooFewGroups { needed: 2, got: 1 })
        ));
        assert!(matches!(
            welch_anova(&[vec![1.0, 2.0], vec![3.0]]),
            Err(Error::GroupTooSmall { index: 1 })
        ));
        assert!(matches!(
            welch_anova(&[vec![1.0, 2.0], vec![3.0, 3.0]]),
            Err(Error::ZeroVariance { index: 1 })
        ));
    }

    #[test]
    fn spearman_monotone_extremes() {
        let x: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let y2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = spearman(&x, &y2).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert_eq!(r.p_value, 0.0);

        let yn: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(spearman(&x, &yn).unwrap().statistic, -1.0);
    }

    #[test]
    fn spearman_matches_hand_rank_oracle_on_ties() {
        // x = [1,2,2,3] ranks to [1, 2.5, 2.5, 4]; y = [1,3,2,4] is a
        // permutation so its ranks equal its values. Pearson of those
        // rank vectors is 4.5 / sqrt(4.5 * 5).
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        let oracle = 4.5 / (4.5f64 * 5.0).sqrt();
        assert_abs_diff_eq!(r.statistic, oracle, epsilon = 1e-12);
    }

    #[test]
    fn spearman_error_contract() {
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0, 2.0, 3.0]), Err(Error::LengthMismatch(2, 3))));
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::ConstantInput)
        ));
    }

    #[test]
    fn permutation_p_values_track_analytic_ones() {
        let groups = vec![vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0]];
        let perm = welch_anova_permutation(&groups, 2000, 7).unwrap();
        assert!(perm.p_value < 0.25, "clearly separated groups: p = {}", perm.p_value);

        let x: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v + (v * 0.7).sin()).collect();
        let perm = spearman_permutation(&x, &y, 2000, 7).unwrap();
        assert!(perm.p_value < 0.01);
    }

    #[test]
    fn null_rejection_rate_is_calibrated() {
        // Smaller replicate count than the acceptance gate, but enough to
        // catch a broken p-value right here.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut rejections = 0;
        let sims = 600;
        for _ in 0..sims {
            let groups: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..8).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            if welch_anova(&groups).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / sims as f64;
        assert!((0.02..=0.09).contains(&rate), "type-I error {rate}");
    }

    #[test]
    fn test_result_serializes_with_method() {
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        for key in ["statistic", "df1", "df2", "p_value", "method"] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
    }

    proptest! {
        #[test]
        fn beta_symmetry_identity(a in 0.2f64..20.0, b in 0.2f64..20.0, x in 0.0f64..=1.0) {
            let lhs = reg_incomplete_beta(a, b, x).unwrap();
            let rhs = 1.0 - reg_incomplete_beta(b, a, 1.0 - x).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn beta_monotone_in_x(a in 0.5f64..10.0, b in 0.5f64..10.0, x1 in 0.0f64..1.0, x2 in 0.0f64..1.0) {
            let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
            prop_assert!(
                reg_incomplete_beta(a, b, lo).unwrap() <= reg_incomplete_beta(a, b, hi).unwrap() + 1e-12
            );
        }

        #[test]
        fn f_p_decreases_as_statistic_grows(f1 in 0.0f64..20.0, f2 in 0.0f64..20.0) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let p_lo = f_survival(lo, 3.0, 11.0).unwrap();
            let p_hi = f_survival(hi, 3.0, 11.0).unwrap();
            prop_assert!(p_hi <= p_lo + 1e-12);
            prop_assert!((0.0..=1.0).contains(&p_lo) && (0.0..=1.0).contains(&p_hi));
        }

        #[test]
        fn spearman_rank_invariance(
            xs in proptest::collection::vec(-100.0f64..100.0, 6..12),
        ) {
            // A strictly increasing transform leaves every rank, and
            // therefore the statistic, exactly unchanged.
            let ys: Vec<f64> = xs.iter().rev().map(|v| v * 0.5 + 3.0).collect();
            prop_assume!(spearman(&xs, &ys).is_ok());
            let base = spearman(&xs, &ys).unwrap();
            let x_t: Vec<f64> = xs.iter().map(|v| v.exp()).collect();
            let y_t: Vec<f64> = ys.iter().map(|v| v * 2.0 + 10.0).collect();
            let transformed = spearman(&x_t, &y_t).unwrap();
            prop_assert_eq!(base.statistic, transformed.statistic);
        }

        #[test]
        fn welch_shift_and_relabel_invariance(
            seed in 0u64..1000,
            shift in -50.0f64..50.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let groups: Vec<Vec<f64>> = (0..3)
                .map(|g| (0..5 + g).map(|_| rng.random_range(-10.0..10.0)).collect())
                .collect();
            prop_assume!(welch_anova(&groups).is_ok());
            let base = welch_anova(&groups).unwrap();

            let shifted: Vec<Vec<f64>> =
                groups.iter().map(|g| g.iter().map(|v| v + shift).collect()).collect();
            let r = welch_anova(&shifted).unwrap();
            prop_assert!((r.statistic - base.statistic).abs() < 1e-9);

            let relabeled = vec![groups[2].clone(), groups[0].clone(), groups[1].clone()];
            let r = welch_anova(&relabeled).unwrap();
            prop_assert!((r.statistic - base.statistic).abs() < 1e-12);
            prop_assert!((r.df2 - base.df2).abs() < 1e-12);
        }
    }
}
