use super::segments::{overlap_segments, Segment};
use crate::detector::Demodulated;
use crate::error::{Error, Result};
use crate::Scalar;

/// Segment-averaged correlation function over lags `-max_lag..=max_lag`.
///
/// Deviations are taken from the mean over all segment points. Each segment
/// contributes `C_j(tau) = sum_i dx_i * dy_{i+tau}` over pairs inside the
/// segment only; `c_of_tau = sum_j C_j / sum_j (N_j - |tau|)`, which weights
/// segments by their point counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCurve<T> {
    pub lags: Vec<i64>,
    /// `sum_j C_j(tau)`.
    pub sums: Vec<T>,
    /// Number of sample pairs behind each lag.
    pub points: Vec<u64>,
    pub c_of_tau: Vec<T>,
}

impl<T: Scalar> CorrelationCurve<T> {
    pub fn at(&self, lag: i64) -> Option<T> {
        let max = *self.lags.last()?;
        (lag.abs() <= max).then(|| self.c_of_tau[(lag + max) as usize])
    }

    pub fn zero_delay(&self) -> T {
        self.at(0).expect("lag 0 is always present")
    }
}

fn pooled_mean<T: Scalar>(segs: &[Segment<T>]) -> T {
    let n: usize = segs.iter().map(|s| s.len()).sum();
    let total: T = segs.iter().flat_map(|s| s.samples.iter().copied()).sum();
    total / T::from_usize_lossy(n)
}

pub fn segment_correlation<T: Scalar>(
    segs_x: &[Segment<T>],
    segs_y: &[Segment<T>],
    max_lag: usize,
) -> Result<CorrelationCurve<T>> {
    if segs_x.len() != segs_y.len()
        || segs_x.iter().zip(segs_y).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::Contract("segment lists are not index-aligned".into()));
    }
    if segs_x.is_empty() {
        return Err(Error::Empty("no overlapping segments".into()));
    }
    let mx = pooled_mean(segs_x);
    let my = pooled_mean(segs_y);
    let n_lags = 2 * max_lag + 1;
    let mut sums = vec![T::zero(); n_lags];
    let mut points = vec![0u64; n_lags];
    for (sx, sy) in segs_x.iter().zip(segs_y) {
        let dx: Vec<T> = sx.samples.iter().map(|&v| v - mx).collect();
        let dy: Vec<T> = sy.samples.iter().map(|&v| v - my).collect();
        let n = dx.len();
        for (slot, lag) in (-(max_lag as i64)..=max_lag as i64).enumerate() {
            let k = lag.unsigned_abs() as usize;
            if k >= n {
                continue;
            }
            let c: T = if lag >= 0 {
                dx[..n - k].iter().zip(&dy[k..]).map(|(&a, &b)| a * b).sum()
            } else {
                dx[k..].iter().zip(&dy[..n - k]).map(|(&a, &b)| a * b).sum()
            };
            sums[slot] += c;
            points[slot] += (n - k) as u64;
        }
    }
    let c_of_tau = sums
        .iter()
        .zip(&points)
        .map(|(&s, &p)| {
            if p == 0 {
                T::nan()
            } else {
                s / T::lit(p as f64)
            }
        })
        .collect();
    Ok(CorrelationCurve {
        lags: (-(max_lag as i64)..=max_lag as i64).collect(),
        sums,
        points,
        c_of_tau,
    })
}

/// Correlation of one measurement configuration, pooled over trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport<T> {
    pub pair: String,
    /// Lag step, s.
    pub dt: T,
    pub curve: CorrelationCurve<T>,
    /// Unnormalized `C_XY(0)`.
    pub raw_zero_delay: T,
    /// `C_XY(0) / sqrt(C_XX(0) C_YY(0))` on the same segments.
    pub zero_delay_normalized: T,
    pub n_points_used: usize,
}

/// Correlates `xs[k]` with `ys[k]` for every trajectory `k` over samples valid in both.
pub fn pair_correlation<T: Scalar>(
    pair: &str,
    xs: &[&Demodulated<T>],
    ys: &[&Demodulated<T>],
    max_lag: usize,
) -> Result<CorrelationReport<T>> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::Contract(format!("pair {pair}: trace lists must be non-empty and equally long")));
    }
    let mut segs_x = Vec::new();
    let mut segs_y = Vec::new();
    for (x, y) in xs.iter().zip(ys) {
        if x.len() != y.len() {
            return Err(Error::Contract(format!("pair {pair}: traces differ in length")));
        }
        let (a, b) = overlap_segments(&x.values, &x.valid, &y.values, &y.valid);
        segs_x.extend(a);
        segs_y.extend(b);
    }
    let curve = segment_correlation(&segs_x, &segs_y, max_lag)
        .map_err(|e| match e {
            Error::Empty(_) => Error::Empty(format!("pair {pair}: no overlapping valid samples")),
            other => other,
        })?;
    let cxx = segment_correlation(&segs_x, &segs_x, 0)?.zero_delay();
    let cyy = segment_correlation(&segs_y, &segs_y, 0)?.zero_delay();
    let raw = curve.zero_delay();
    let denom = (cxx * cyy).sqrt();
    if !(denom > T::zero()) {
        return Err(Error::Empty(format!("pair {pair}: zero variance")));
    }
    Ok(CorrelationReport {
        pair: pair.to_string(),
        dt: xs[0].dt,
        n_points_used: segs_x.iter().map(|s| s.len()).sum(),
        raw_zero_delay: raw,
        zero_delay_normalized: (raw / denom).max(-T::one()).min(T::one()),
        curve,
    })
}

/// Demodulated traces of one mode on one analyzer channel, one per trajectory.
#[derive(Debug, Clone)]
pub struct ChannelTraces<'a, T> {
    pub mode: String,
    pub traces: Vec<&'a Demodulated<T>>,
}

/// Zero-delay correlations between every mode on the first channel and every
/// mode on the second one (configurations AA, AB, BA, BB for two modes).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix<T> {
    pub entries: Vec<CorrelationReport<T>>,
    /// Configurations that could not be evaluated.
    pub missing: Vec<String>,
}

impl<T: Scalar> CorrelationMatrix<T> {
    pub fn get(&self, pair: &str) -> Option<&CorrelationReport<T>> {
        self.entries.iter().find(|e| e.pair == pair)
    }

    pub fn rho(&self, pair: &str) -> Option<T> {
        self.get(pair).map(|e| e.zero_delay_normalized)
    }

    pub fn is_partial(&self) -> bool {
        !self.missing.is_empty()
    }
}

pub fn correlation_matrix<T: Scalar>(
    first: &[ChannelTraces<'_, T>],
    second: &[ChannelTraces<'_, T>],
    max_lag: usize,
) -> Result<CorrelationMatrix<T>> {
    let mut entries = Vec::new();
    let mut missing = Vec::new();
    for x in first {
        for y in second {
            let pair = format!("{}{}", x.mode, y.mode);
            match pair_correlation(&pair, &x.traces, &y.traces, max_lag) {
                Ok(r) => entries.push(r),
                Err(Error::Empty(_)) => missing.push(pair),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(CorrelationMatrix { entries, missing })
}

/// `1 - pearson(u, v)`, in `[0, 2]`.
pub fn correlation_distance<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() || u.len() < 2 {
        return Err(Error::Contract("vectors must have equal length of at least 2".into()));
    }
    let mu = crate::stats::mean(u);
    let mv = crate::stats::mean(v);
    let (mut uv, mut uu, mut vv) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a - mu, b - mv);
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if !(uu > T::zero() && vv > T::zero()) {
        return Err(Error::Empty("zero centered norm".into()));
    }
    let r = (uv / (uu.sqrt() * vv.sqrt())).max(-T::one()).min(T::one());
    Ok(T::one() - r)
}

/// Normalized autocorrelation `acf[k]`, `k = 0..=max_lag`, of a gap-free trace.
pub fn autocorrelation<T: Scalar>(x: &[T], max_lag: usize) -> Vec<T> {
    let m = crate::stats::mean(x);
    let d: Vec<T> = x.iter().map(|&v| v - m).collect();
    let n = d.len();
    let c0: T = d.iter().map(|&a| a * a).sum::<T>() / T::from_usize_lossy(n);
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|k| {
            let c: T = d[..n - k].iter().zip(&d[k..]).map(|(&a, &b)| a * b).sum();
            c / T::from_usize_lossy(n - k) / c0
        })
        .collect()
}

/// First time at which the normalized autocorrelation drops below `1/e`,
/// linearly interpolated between lags.
pub fn autocorrelation_time<T: Scalar>(x: &[T], dt: T, max_lag: usize) -> Option<T> {
    let acf = autocorrelation(x, max_lag);
    let level = T::one() / T::E();
    let k = acf.iter().position(|&c| c < level)?;
    if k == 0 {
        return None;
    }
    let (a, b) = (acf[k - 1], acf[k]);
    let frac = (a - level) / (a - b);
    Some((T::from_usize_lossy(k - 1) + frac) * dt)
}
