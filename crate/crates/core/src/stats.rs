//! Small statistical helpers shared by the analysis and test code.

use crate::Scalar;

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().copied().sum::<T>() / T::from_usize_lossy(xs.len())
}

/// Population variance (divides by `n`).
pub fn variance<T: Scalar>(xs: &[T]) -> T {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::from_usize_lossy(xs.len())
}

/// Unweighted least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit<T> {
    pub slope: T,
    pub intercept: T,
    /// Standard error of the slope; `NaN` for fewer than three points.
    pub slope_stderr: T,
}

pub fn linear_fit<T: Scalar>(xs: &[T], ys: &[T]) -> Option<LineFit<T>> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = T::from_usize_lossy(xs.len());
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    if sxx <= T::zero() {
        return None;
    }
    let sxy: T = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let two = T::lit(2.0);
    let slope_stderr = if n > two {
        let rss: T = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .sum();
        (rss / (n - two) / sxx).sqrt()
    } else {
        T::nan()
    };
    Some(LineFit {
        slope,
        intercept,
        slope_stderr,
    })
}

/// One-sample Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let lo = f - i as f64 / n;
            let hi = (i + 1) as f64 / n - f;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a KS statistic `d` over `n` samples
/// (Stephens' small-sample correction of the Kolmogorov distribution).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = sign * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Fixed-width histogram with bins centered on integer multiples of `bin_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram<T> {
    pub bin_width: T,
    /// Index `k` of the first bin; its center is `k * bin_width`.
    pub first_bin: i64,
    pub counts: Vec<u64>,
}

impl<T: Scalar> Histogram<T> {
    /// Bins the finite values of `samples`; non-finite values are skipped.
    pub fn from_samples(samples: &[T], bin_width: T) -> Self {
        assert!(bin_width > T::zero(), "bin width must be positive");
        let index = |x: T| -> i64 {
            (x / bin_width)
                .round()
                .to_i64()
                .expect("sample within i64 bin range")
        };
        let finite = samples.iter().copied().filter(|x| x.is_finite());
        let Some((lo, hi)) = finite.clone().fold(None, |acc: Option<(i64, i64)>, x| {
            let k = index(x);
            Some(acc.map_or((k, k), |(lo, hi)| (lo.min(k), hi.max(k))))
        }) else {
            return Self {
                bin_width,
                first_bin: 0,
                counts: Vec::new(),
            };
        };
        let mut counts = vec![0u64; (hi - lo + 1) as usize];
        for x in finite {
            counts[(index(x) - lo) as usize] += 1;
        }
        Self {
            bin_width,
            first_bin: lo,
            counts,
        }
    }

    pub fn centers(&self) -> Vec<T> {
        (0..self.counts.len())
            .map(|i| T::from_i64(self.first_bin + i as i64).expect("bin index") * self.bin_width)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}
