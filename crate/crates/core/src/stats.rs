//! Small statistics toolbox: sample moments, goodness-of-fit and two-sample tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the sample mean; zero for a single sample.
pub fn stderr(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => (variance(xs) / n as f64).sqrt(),
    }
}

pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

pub fn combined_stderr(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
}

/// Pearson chi-square goodness of fit. Bins whose expected count is below 5 are pooled
/// into one bin; a pooled bin still below 5 is merged into the smallest regular bin.
pub fn chi_square_gof(observed: &[f64], expected: &[f64]) -> ChiSquareResult {
    assert_eq!(observed.len(), expected.len());
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        if e >= 5.0 {
            bins.push((o, e));
        } else {
            pool_o += o;
            pool_e += e;
        }
    }
    if pool_e >= 5.0 || (bins.is_empty() && pool_e > 0.0) {
        bins.push((pool_o, pool_e));
    } else if pool_e > 0.0 || pool_o > 0.0 {
        let smallest = bins
            .iter_mut()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one regular bin");
        smallest.0 += pool_o;
        smallest.1 += pool_e;
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).expect("positive dof");
        (1.0 - dist.cdf(statistic)).clamp(0.0, 1.0)
    };
    ChiSquareResult { statistic, dof, p_value, bins: bins.len() }
}

/// Goodness of fit of integer counts against `Poisson(mean)`.
pub fn poisson_gof(counts: &[usize], mean: f64) -> ChiSquareResult {
    let n = counts.len() as f64;
    let max_obs = counts.iter().copied().max().unwrap_or(0);
    let max_k = max_obs.max((mean + 10.0 * mean.sqrt() + 10.0) as usize);
    let dist = Poisson::new(mean).expect("positive mean");
    let mut observed = vec![0.0; max_k + 1];
    for &c in counts {
        observed[c] += 1.0;
    }
    let mut expected: Vec<f64> = (0..=max_k).map(|k| n * dist.pmf(k as u64)).collect();
    let covered: f64 = expected.iter().sum();
    expected[max_k] += (n - covered).max(0.0);
    chi_square_gof(&observed, &expected)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic Kolmogorov p-value
/// (small-sample corrected effective size).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return KsResult { statistic: f64::NAN, p_value: f64::NAN };
    }
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let p_value = kolmogorov_q((en + 0.12 + 0.11 / en) * d);
    KsResult { statistic: d, p_value }
}

/// Complementary Kolmogorov distribution `Q(x) = 2 sum (-1)^(j-1) exp(-2 j^2 x^2)`.
fn kolmogorov_q(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * x * x).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Ordinary least squares `y = intercept + slope * x`; returns
/// `(intercept, slope, residual standard deviation)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = xs.len().saturating_sub(2).max(1) as f64;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    (intercept, slope, (rss / dof).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(stderr(&[3.0]), 0.0);
    }

    #[test]
    fn chi_square_perfect_fit() {
        let r = chi_square_gof(&[10.0, 20.0, 30.0], &[10.0, 20.0, 30.0]);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 2);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_pools_small_bins() {
        let r = chi_square_gof(&[50.0, 48.0, 1.0, 1.0], &[50.0, 48.0, 1.0, 1.0]);
        assert_eq!(r.bins, 2);
    }

    #[test]
    fn chi_square_known_value() {
        // statistic = 4 on 1 dof, p = 0.0455.
        let r = chi_square_gof(&[60.0, 40.0], &[50.0, 50.0]);
        assert!((r.statistic - 4.0).abs() < 1e-12);
        assert!((r.p_value - 0.0455).abs() < 1e-3);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!(ks_two_sample(&a, &a).p_value > 0.99);
        let b: Vec<f64> = (0..100).map(|i| 1000.0 + i as f64).collect();
        let r = ks_two_sample(&a, &b);
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn linear_fit_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (a, b, s) = linear_fit(&xs, &ys);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && s < 1e-12);
    }
}
