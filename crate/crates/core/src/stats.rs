//! Small descriptive-statistics helpers shared across modules.

/// Nearest-rank quantile: the `⌈p·n⌉`-th order statistic of `sorted`
/// (1-based, clamped to `[1, n]`). `sorted` must be ascending and non-empty.
pub fn nearest_rank<T: Copy>(sorted: &[T], p: f64) -> T {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    sorted[nearest_rank_index(n, p)]
}

/// Zero-based index of the nearest-rank order statistic.
pub fn nearest_rank_index(n: usize, p: f64) -> usize {
    // p·n is formed in floating point (0.3·100 = 30.000000000000004), so
    // values within rounding noise of an integer are snapped to it.
    let x = p * n as f64;
    let snapped = x.round();
    let rank = if (x - snapped).abs() <= 1e-9 * x.abs().max(1.0) {
        snapped
    } else {
        x.ceil()
    };
    (rank as usize).clamp(1, n) - 1
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with divisor `n - 1`; zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Standard deviation with divisor `n`.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / xs.len() as f64).sqrt()
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_snaps_float_noise() {
        let v: Vec<u32> = (1..=100).collect();
        assert_eq!(nearest_rank(&v, 0.30), 30);
        assert_eq!(nearest_rank(&v, 0.80), 80);
        assert_eq!(nearest_rank(&v, 0.05), 5);
        assert_eq!(nearest_rank(&v, 0.301), 31);
    }

    #[test]
    fn nearest_rank_edges() {
        assert_eq!(nearest_rank(&[7.0], 0.05), 7.0);
        assert_eq!(nearest_rank(&[1, 2, 3], 1e-6), 1);
        assert_eq!(nearest_rank(&[1, 2, 3], 1.0), 3);
    }

    #[test]
    fn std_divisors() {
        let xs = [1.0, 3.0];
        assert!((sample_std(&xs) - 2f64.sqrt()).abs() < 1e-15);
        assert!((population_std(&xs) - 1.0).abs() < 1e-15);
        assert_eq!(sample_std(&[5.0]), 0.0);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs: Vec<f64> = (0..50)
            .map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0)
            .collect();
        let mut w = Welford::default();
        xs.iter().for_each(|&x| w.push(x));
        assert!((w.mean() - mean(&xs)).abs() < 1e-12);
        assert!((w.variance().sqrt() - sample_std(&xs)).abs() < 1e-12);
    }
}
