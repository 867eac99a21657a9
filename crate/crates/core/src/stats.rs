//! Descriptive statistics used across the feature library and filters.
//!
//! Conventions pinned here because they must be reproducible:
//! percentiles interpolate linearly between order statistics (inclusive,
//! `h = p/100 * (n-1)`), variance and the higher moments use the population
//! (`1/n`) denominator, kurtosis is excess kurtosis, and entropies are in
//! nats. Zero-variance guards return 0 instead of NaN; callers that need to
//! know use the `*_checked` variants.

use crate::scalar::Real;

pub fn mean<F: Real>(xs: &[F]) -> F {
    debug_assert!(!xs.is_empty());
    xs.iter().copied().sum::<F>() / F::from_count(xs.len())
}

/// Population variance (1/n).
pub fn variance<F: Real>(xs: &[F]) -> F {
    let mu = mean(xs);
    xs.iter().map(|x| (*x - mu) * (*x - mu)).sum::<F>() / F::from_count(xs.len())
}

pub fn std_dev<F: Real>(xs: &[F]) -> F {
    variance(xs).sqrt()
}

/// Sample standard deviation (n-1 denominator); used for cross-test spreads.
pub fn sample_std<F: Real>(xs: &[F]) -> F {
    debug_assert!(xs.len() >= 2);
    let mu = mean(xs);
    (xs.iter().map(|x| (*x - mu) * (*x - mu)).sum::<F>() / F::from_count(xs.len() - 1)).sqrt()
}

pub fn min<F: Real>(xs: &[F]) -> F {
    xs.iter().copied().fold(F::infinity(), F::min)
}

pub fn max<F: Real>(xs: &[F]) -> F {
    xs.iter().copied().fold(F::neg_infinity(), F::max)
}

pub fn range<F: Real>(xs: &[F]) -> F {
    max(xs) - min(xs)
}

fn sorted_copy<F: Real>(xs: &[F]) -> Vec<F> {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Percentile via linear interpolation between order statistics (inclusive).
pub fn percentile<F: Real>(xs: &[F], p: f64) -> F {
    debug_assert!((0.0..=100.0).contains(&p));
    let s = sorted_copy(xs);
    percentile_of_sorted(&s, p)
}

pub fn percentile_of_sorted<F: Real>(sorted: &[F], p: f64) -> F {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p / 100.0 * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = F::c(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn median<F: Real>(xs: &[F]) -> F {
    percentile(xs, 50.0)
}

/// Skewness `m3 / sigma^3`; `None` when the variance is zero.
pub fn skewness_checked<F: Real>(xs: &[F]) -> Option<F> {
    let mu = mean(xs);
    let n = F::from_count(xs.len());
    let m2 = xs.iter().map(|x| (*x - mu).powi(2)).sum::<F>() / n;
    if m2 <= F::zero() {
        return None;
    }
    let m3 = xs.iter().map(|x| (*x - mu).powi(3)).sum::<F>() / n;
    Some(m3 / m2.powf(F::c(1.5)))
}

/// Excess kurtosis `m4 / sigma^4 - 3`; `None` when the variance is zero.
pub fn kurtosis_checked<F: Real>(xs: &[F]) -> Option<F> {
    let mu = mean(xs);
    let n = F::from_count(xs.len());
    let m2 = xs.iter().map(|x| (*x - mu).powi(2)).sum::<F>() / n;
    if m2 <= F::zero() {
        return None;
    }
    let m4 = xs.iter().map(|x| (*x - mu).powi(4)).sum::<F>() / n;
    Some(m4 / (m2 * m2) - F::c(3.0))
}

/// Mean absolute deviation around the mean.
pub fn abs_mean_deviation<F: Real>(xs: &[F]) -> F {
    let mu = mean(xs);
    xs.iter().map(|x| (*x - mu).abs()).sum::<F>() / F::from_count(xs.len())
}

/// Equal-width histogram over the data's own min-max span, normalized to
/// sum 1. A span at floating-point noise level counts as zero and puts all
/// mass in the first bin.
pub fn equal_width_histogram<F: Real>(xs: &[F], bins: usize) -> Vec<F> {
    debug_assert!(bins >= 1 && !xs.is_empty());
    let lo = min(xs);
    let hi = max(xs);
    let span = hi - lo;
    let noise_floor = lo.abs().max(hi.abs()) * F::c(1e-12);
    let mut counts = vec![0usize; bins];
    if span <= noise_floor {
        counts[0] = xs.len();
    } else {
        for x in xs {
            let t = ((*x - lo) / span).as_f64() * bins as f64;
            let idx = (t as usize).min(bins - 1);
            counts[idx] += 1;
        }
    }
    let n = F::from_count(xs.len());
    counts.iter().map(|c| F::from_count(*c) / n).collect()
}

/// Shannon entropy of a normalized distribution, in nats, with 0 ln 0 = 0.
pub fn shannon_entropy<F: Real>(probs: &[F]) -> F {
    let mut h = F::zero();
    for p in probs {
        if *p > F::zero() {
            h -= *p * p.ln();
        }
    }
    h
}

/// Equal-frequency bin assignment: rank-order the samples and split the
/// ranks into `bins` groups of (near-)equal size. Ties are broken by input
/// position, which keeps the assignment deterministic.
pub fn equal_frequency_bins<F: Real>(xs: &[F], bins: usize) -> Vec<usize> {
    debug_assert!(bins >= 1);
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        xs[a]
            .partial_cmp(&xs[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut assignment = vec![0usize; n];
    for (rank, &idx) in order.iter().enumerate() {
        assignment[idx] = rank * bins / n;
    }
    assignment
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman<F: Real>(x: &[F], y: &[F]) -> F {
    debug_assert_eq!(x.len(), y.len());
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

fn average_ranks<F: Real>(xs: &[F]) -> Vec<F> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![F::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Average rank over the tie run [i, j].
        let avg = F::c((i + j) as f64 / 2.0 + 1.0);
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson<F: Real>(x: &[F], y: &[F]) -> F {
    let mx = mean(x);
    let my = mean(y);
    let mut num = F::zero();
    let mut dx = F::zero();
    let mut dy = F::zero();
    for (a, b) in x.iter().zip(y) {
        let u = *a - mx;
        let v = *b - my;
        num += u * v;
        dx += u * u;
        dy += v * v;
    }
    let den = (dx * dy).sqrt();
    if den <= F::zero() {
        F::zero()
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates_linearly() {
        let xs = [0.0_f64, 10.0];
        assert_eq!(percentile(&xs, 0.0), 0.0);
        assert_eq!(percentile(&xs, 50.0), 5.0);
        assert_eq!(percentile(&xs, 100.0), 10.0);
        let ys = [1.0_f64, 2.0, 3.0, 4.0];
        // h = 0.3 * 3 = 0.9 -> 1 + 0.9 * 1
        assert!((percentile(&ys, 30.0) - 1.9).abs() < 1e-12);
    }

    #[test]
    fn median_equals_p50() {
        let xs = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0];
        assert_eq!(median(&xs), percentile(&xs, 50.0));
    }

    #[test]
    fn moments_match_naive_oracle() {
        let xs = [1.0, 2.0, 2.0, 3.0, 7.0];
        let n = xs.len() as f64;
        let mu = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
        let m3 = xs.iter().map(|x| (x - mu).powi(3)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mu).powi(4)).sum::<f64>() / n;
        assert!((variance(&xs) - m2).abs() < 1e-12);
        assert!((skewness_checked(&xs).unwrap() - m3 / m2.powf(1.5)).abs() < 1e-12);
        assert!((kurtosis_checked(&xs).unwrap() - (m4 / (m2 * m2) - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_guards() {
        let xs = [5.0_f64; 8];
        assert!(skewness_checked(&xs).is_none());
        assert!(kurtosis_checked(&xs).is_none());
        assert_eq!(std_dev(&xs), 0.0);
    }

    #[test]
    fn amd_of_normalized_two_point_column() {
        assert!((abs_mean_deviation(&[0.0_f64, 1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_histogram_has_zero_entropy() {
        let h = equal_width_histogram(&[2.0; 10], 32);
        assert_eq!(shannon_entropy(&h), 0.0);
        assert_eq!(h[0], 1.0);
    }

    #[test]
    fn equal_frequency_bins_are_balanced() {
        let xs: Vec<f64> = (0..160).map(|i| (i as f64 * 0.73).sin()).collect();
        let bins = equal_frequency_bins(&xs, 16);
        let mut counts = [0usize; 16];
        for b in &bins {
            counts[*b] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10), "{counts:?}");
    }

    #[test]
    fn spearman_detects_monotone_relation() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        assert!((spearman(&x, &y) - 1.0).abs() < 1e-12);
        let y_rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &y_rev) + 1.0).abs() < 1e-12);
    }
}
