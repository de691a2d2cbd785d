use crate::error::{Error, Result};
use crate::Scalar;

/// Uncentered correlation `mean_i x_i y_{i+lag}` for `lag` in `-max_lag..=max_lag`.
pub fn raw_correlation<T: Scalar>(x: &[T], y: &[T], max_lag: usize) -> Vec<T> {
    let n = x.len().min(y.len());
    (-(max_lag as i64)..=max_lag as i64)
        .map(|lag| {
            let k = lag.unsigned_abs() as usize;
            if k >= n {
                return T::nan();
            }
            let s: T = if lag >= 0 {
                x[..n - k].iter().zip(&y[k..n]).map(|(&a, &b)| a * b).sum()
            } else {
                x[k..n].iter().zip(&y[..n - k]).map(|(&a, &b)| a * b).sum()
            };
            s / T::from_usize_lossy(n - k)
        })
        .collect()
}

/// Same-trajectory correlation relative to the cross-trajectory baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct McCorrelation<T> {
    pub lags: Vec<i64>,
    /// `C_same / C_cross - 1`, averaged over trajectories.
    pub renormalized: Vec<T>,
    /// Each cross pair measured against the mean of the other cross pairs, averaged.
    pub cross_renormalized: Vec<T>,
    /// Zero-lag value of every individual cross pair's renormalized curve.
    pub cross_zero_delay: Vec<T>,
    pub same_raw: Vec<T>,
    pub cross_raw: Vec<T>,
}

impl<T: Scalar> McCorrelation<T> {
    fn index(&self, lag: i64) -> Option<usize> {
        let max = *self.lags.last()?;
        (lag.abs() <= max).then_some((lag + max) as usize)
    }

    pub fn renormalized_at(&self, lag: i64) -> Option<T> {
        self.index(lag).map(|i| self.renormalized[i])
    }

    pub fn cross_at(&self, lag: i64) -> Option<T> {
        self.index(lag).map(|i| self.cross_renormalized[i])
    }
}

/// Correlates `xs[i]` with `ys[i]` (same trajectory) and `xs[i]` with `ys[j]`,
/// `i != j` (different trajectories), and divides the former by the latter.
pub fn mc_renormalized_correlation<T: Scalar>(
    xs: &[&[T]],
    ys: &[&[T]],
    max_lag: usize,
) -> Result<McCorrelation<T>> {
    if xs.len() != ys.len() {
        return Err(Error::Contract("trajectory lists differ in length".into()));
    }
    if xs.len() < 2 {
        return Err(Error::Contract("at least two trajectories are required".into()));
    }
    let m = xs.len();
    let n_lags = 2 * max_lag + 1;
    let average = |curves: &[Vec<T>]| -> Vec<T> {
        (0..n_lags)
            .map(|k| curves.iter().map(|c| c[k]).sum::<T>() / T::from_usize_lossy(curves.len()))
            .collect()
    };
    let same: Vec<Vec<T>> = (0..m).map(|i| raw_correlation(xs[i], ys[i], max_lag)).collect();
    let cross: Vec<Vec<T>> = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| raw_correlation(xs[i], ys[j], max_lag))
        .collect();
    let same_raw = average(&same);
    let cross_raw = average(&cross);
    let renormalized = same_raw
        .iter()
        .zip(&cross_raw)
        .map(|(&s, &c)| s / c - T::one())
        .collect();

    let p = T::from_usize_lossy(cross.len());
    let per_pair: Vec<Vec<T>> = if cross.len() < 2 {
        vec![vec![T::zero(); n_lags]]
    } else {
        cross
            .iter()
            .map(|c| {
                (0..n_lags)
                    .map(|k| {
                        let others = (cross_raw[k] * p - c[k]) / (p - T::one());
                        c[k] / others - T::one()
                    })
                    .collect()
            })
            .collect()
    };
    Ok(McCorrelation {
        lags: (-(max_lag as i64)..=max_lag as i64).collect(),
        renormalized,
        cross_renormalized: average(&per_pair),
        cross_zero_delay: per_pair.iter().map(|c| c[max_lag]).collect(),
        same_raw,
        cross_raw,
    })
}
