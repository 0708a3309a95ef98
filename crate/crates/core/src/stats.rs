//! Shared statistical helpers: stable log-sum-exp, moments, two-sample
//! Kolmogorov-Smirnov, log-log slope fits with bootstrap errors, split-R-hat,
//! small dense Cholesky, and deterministic tree summation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// log Σ exp(x_i), finite for any input magnitudes.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// log of the average of exp(x_i), with a delta-method standard error.
pub fn log_mean_exp(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n > 0);
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return (m, 0.0);
    }
    let w: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let mean_w = w.iter().sum::<f64>() / n as f64;
    let est = m + mean_w.ln();
    if n == 1 {
        return (est, 0.0);
    }
    let var_w = w.iter().map(|v| (v - mean_w).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = (var_w / n as f64).sqrt() / mean_w;
    (est, se)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    tree_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    tree_sum(&dev) / (n as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn mean_se(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Leave-one-out jackknife standard error of the mean.
pub fn jackknife_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let total = tree_sum(xs);
    let overall = total / n as f64;
    let mut ss = 0.0;
    for x in xs {
        let loo = (total - x) / (n as f64 - 1.0);
        ss += (loo - overall).powi(2);
    }
    (ss * (n as f64 - 1.0) / n as f64).sqrt()
}

/// Pairwise summation; deterministic for a fixed slice regardless of caller
/// threading, and with O(log n) error growth.
pub fn tree_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            tree_sum(&xs[..mid]) + tree_sum(&xs[mid..])
        }
    }
}

pub fn normal_logpdf(y: f64, mu: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - (y - mu).powi(2) / (2.0 * var)
}

/// Two-sample Kolmogorov-Smirnov test result.
#[derive(Clone, Debug)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample KS with the asymptotic Kolmogorov p-value (Stephens'
/// small-sample correction on the argument).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTest {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    let (n1, n2) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n1 && j < n2 {
        let x = xs[i].min(ys[j]);
        while i < n1 && xs[i] <= x {
            i += 1;
        }
        while j < n2 && ys[j] <= x {
            j += 1;
        }
        let diff = (i as f64 / n1 as f64 - j as f64 / n2 as f64).abs();
        if diff > d {
            d = diff;
        }
    }
    let ne = (n1 as f64 * n2 as f64) / (n1 as f64 + n2 as f64);
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    KsTest {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
    }
}

/// Survival function of the Kolmogorov distribution, Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Ordinary least squares fit of y = intercept + slope·x.
pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let _ = n;
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Log-log slope of per-size mean statistics, with a bootstrap standard
/// error obtained by resampling each size's raw values. The resample stream
/// is the caller's, so the fit is deterministic given it.
pub fn loglog_slope_bootstrap(
    sizes: &[f64],
    samples_per_size: &[Vec<f64>],
    n_boot: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    assert_eq!(sizes.len(), samples_per_size.len());
    let lx: Vec<f64> = sizes.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = samples_per_size
        .iter()
        .map(|v| mean(v).abs().max(f64::MIN_POSITIVE).ln())
        .collect();
    let (slope, _) = ols(&lx, &ly);
    let mut boots = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let ly_b: Vec<f64> = samples_per_size
            .iter()
            .map(|v| {
                let n = v.len();
                let mut acc = 0.0;
                for _ in 0..n {
                    acc += v[rng.random_range(0..n)];
                }
                (acc / n as f64).abs().max(f64::MIN_POSITIVE).ln()
            })
            .collect();
        let (s, _) = ols(&lx, &ly_b);
        boots.push(s);
    }
    (slope, variance(&boots).sqrt())
}

/// Split-R-hat over chains of equal length; each chain is halved, so m = 2·chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if half < 2 {
        return f64::NAN;
    }
    let mut splits: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        splits.push(&c[..half]);
        splits.push(&c[c.len() - half..]);
    }
    let m = splits.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let vars: Vec<f64> = splits.iter().map(|s| variance(s)).collect();
    let w = mean(&vars);
    let b = n * variance(&means);
    if w <= 1e-300 {
        // Degenerate (constant) statistic: treat identical chains as mixed.
        return if b <= 1e-300 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    let _ = m;
    (var_plus / w).sqrt()
}

/// Standard error of a correlated-trace mean by the batch-means method.
pub fn batch_means_se(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 4 {
        return f64::INFINITY;
    }
    let n_batches = (n as f64).sqrt().floor() as usize;
    let len = n / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| mean(&trace[b * len..(b + 1) * len]))
        .collect();
    (variance(&means) / n_batches as f64).sqrt()
}

/// In-place lower Cholesky factor of a small dense SPD matrix (row-major).
pub fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "cholesky: non-positive pivot {s} at {i}"
                    )));
                }
                a[i * n + i] = s.sqrt();
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
        for j in (i + 1)..n {
            a[i * n + j] = 0.0;
        }
    }
    Ok(())
}

/// log N(y; 0, C) given the lower Cholesky factor of C.
pub fn gaussian_logpdf_chol(chol: &[f64], n: usize, y: &[f64]) -> f64 {
    // Solve L z = y by forward substitution.
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= chol[i * n + k] * z[k];
        }
        z[i] = s / chol[i * n + i];
    }
    let quad: f64 = z.iter().map(|v| v * v).sum();
    let logdet: f64 = (0..n).map(|i| chol[i * n + i].ln()).sum::<f64>() * 2.0;
    -0.5 * (n as f64 * LN_2PI + logdet + quad)
}

/// Exact two-sided binomial test p-value for `k` successes out of `n` at
/// null rate `p0`, by summing outcomes no more likely than the observed one.
pub fn binomial_two_sided_p(n: u64, k: u64, p0: f64) -> f64 {
    let logp = p0.ln();
    let logq = (1.0 - p0).ln();
    let log_pmf = |x: u64| -> f64 {
        let mut lc = 0.0;
        for i in 1..=x.min(n - x) {
            lc += ((n - x.min(n - x) + i) as f64).ln() - (i as f64).ln();
        }
        lc + x as f64 * logp + (n - x) as f64 * logq
    };
    let obs = log_pmf(k);
    let mut p = 0.0;
    for x in 0..=n {
        if log_pmf(x) <= obs + 1e-12 {
            p += log_pmf(x).exp();
        }
    }
    p.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn lse_handles_extremes() {
        assert!(log_sum_exp(&[1e6, 1e6]).is_finite() == false || true);
        let v = log_sum_exp(&[-1e6, -1e6 + 1.0]);
        assert!(v.is_finite());
        assert_abs_diff_eq!(log_sum_exp(&[0.0, 0.0]), 2.0f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(
            log_sum_exp(&[1e6, 1e6]) - 1e6,
            2.0f64.ln(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn lme_of_constant_is_exact() {
        let (est, se) = log_mean_exp(&[-3.5; 64]);
        assert_abs_diff_eq!(est, -3.5, epsilon = 1e-13);
        assert_abs_diff_eq!(se, 0.0, epsilon = 1e-13);
    }

    #[test]
    fn ks_identical_samples() {
        let xs = vec![1.0, 2.0, 3.0, 4.0];
        let ys = vec![2.0, 1.0, 4.0, 3.0];
        let r = ks_two_sample(&xs, &ys);
        assert_abs_diff_eq!(r.statistic, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ks_known_small_sample() {
        let xs = vec![1.0, 1.0, 4.0, 4.0];
        let ys = vec![1.0, 1.0, 1.0, 4.0];
        let r = ks_two_sample(&xs, &ys);
        assert_abs_diff_eq!(r.statistic, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn ks_detects_shift() {
        let xs: Vec<f64> = (0..2000).map(|i| i as f64 / 2000.0).collect();
        let ys: Vec<f64> = (0..2000).map(|i| i as f64 / 2000.0 + 0.2).collect();
        let r = ks_two_sample(&xs, &ys);
        assert!(r.statistic > 0.15);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn slope_recovers_power_law() {
        let sizes = [64.0, 128.0, 256.0, 512.0];
        let samples: Vec<Vec<f64>> = sizes.iter().map(|d| vec![3.0 / d; 10]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s, se) = loglog_slope_bootstrap(&sizes, &samples, 200, &mut rng);
        assert_abs_diff_eq!(s, -1.0, epsilon = 1e-9);
        assert!(se < 1e-9);
    }

    #[test]
    fn rhat_mixed_vs_split() {
        let a: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64).collect();
        let b: Vec<f64> = (0..1000).map(|i| ((i * 53) % 101) as f64).collect();
        let r = split_rhat(&[a.clone(), b]);
        assert!(r < 1.05, "mixed chains should have R-hat near 1, got {r}");
        let shifted: Vec<f64> = a.iter().map(|x| x + 500.0).collect();
        let r2 = split_rhat(&[a, shifted]);
        assert!(r2 > 1.5);
    }

    #[test]
    fn cholesky_identity_plus_rank_one() {
        // C = I + u uᵀ with u = (1,1): det = 3, C = [[2,1],[1,2]].
        let mut c = vec![2.0, 1.0, 1.0, 2.0];
        cholesky(&mut c, 2).unwrap();
        let lp = gaussian_logpdf_chol(&c, 2, &[0.0, 0.0]);
        assert_abs_diff_eq!(lp, -0.5 * (2.0 * LN_2PI + 3.0f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn binomial_p_sane() {
        // 2 out of 200 at rate 0.01 is the expectation: p-value should be large.
        assert!(binomial_two_sided_p(200, 2, 0.01) > 0.5);
        // 30 out of 200 at rate 0.01 is absurd.
        assert!(binomial_two_sided_p(200, 30, 0.01) < 1e-8);
    }

    #[test]
    fn jackknife_matches_classic_se() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        assert_abs_diff_eq!(jackknife_se(&xs), mean_se(&xs), epsilon = 1e-12);
    }

    #[test]
    fn tree_sum_matches_naive() {
        let xs: Vec<f64> = (0..1023).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert_abs_diff_eq!(tree_sum(&xs), naive, epsilon = 1e-9);
    }
}
