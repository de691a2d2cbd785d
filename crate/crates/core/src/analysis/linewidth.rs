use crate::detector::{fast_scan, ScanSpec, Spectrum};
use crate::dynamics::ShiftTrace;
use crate::error::{Error, Result};
use crate::stats::{linear_fit, mean, variance, Histogram, LineFit};
use crate::Scalar;

pub const DEFAULT_BIN_WIDTH_HZ: f64 = 250.0;
/// Histograms built from fewer samples are flagged as low confidence.
pub const MIN_CONFIDENT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinewidthMethod {
    Histogram,
    GaussianFit,
}

impl LinewidthMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            LinewidthMethod::Histogram => "histogram",
            LinewidthMethod::GaussianFit => "gaussian-fit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinewidthResult<T> {
    pub fwhm: T,
    pub method: LinewidthMethod,
    /// Bath temperature, K; `NaN` when not applicable.
    pub temperature: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramReport<T> {
    pub histogram: Histogram<T>,
    pub fwhm: LinewidthResult<T>,
    pub gaussian_fwhm: LinewidthResult<T>,
    pub mean: T,
    pub n_samples: usize,
    pub low_confidence: bool,
}

/// `2 sqrt(2 ln 2)`, the FWHM of a unit-variance Gaussian.
pub fn gaussian_fwhm_factor<T: Scalar>() -> T {
    T::lit(2.0) * (T::lit(2.0) * T::LN_2()).sqrt()
}

/// Width between the outermost points where `y` crosses half its maximum,
/// linearly interpolated; `y` is treated as zero one `step` beyond both ends.
pub fn half_max_width<T: Scalar>(x: &[T], y: &[T], step: T) -> Option<T> {
    let n = y.len();
    if n == 0 || x.len() != n {
        return None;
    }
    let top = y.iter().copied().fold(T::neg_infinity(), T::max);
    if !(top > T::zero()) {
        return None;
    }
    let half = top / T::lit(2.0);
    let l = y.iter().position(|&v| v >= half)?;
    let r = y.iter().rposition(|&v| v >= half)?;
    let (lx, ly) = if l == 0 { (x[0] - step, T::zero()) } else { (x[l - 1], y[l - 1]) };
    let left = lx + (half - ly) / (y[l] - ly) * (x[l] - lx);
    let (rx, ry) = if r + 1 == n { (x[n - 1] + step, T::zero()) } else { (x[r + 1], y[r + 1]) };
    let right = x[r] + (y[r] - half) / (y[r] - ry) * (rx - x[r]);
    Some(right - left)
}

/// Histogram of the finite samples with a half-maximum FWHM and a
/// moment-matched Gaussian FWHM.
pub fn histogram_and_fwhm<T: Scalar>(samples: &[T], bin_width: T) -> Result<HistogramReport<T>> {
    if !(bin_width > T::zero()) {
        return Err(Error::config("analysis.bin_width_hz", "must be positive"));
    }
    let finite: Vec<T> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Empty("no finite samples to histogram".into()));
    }
    let histogram = Histogram::from_samples(&finite, bin_width);
    let counts: Vec<T> = histogram.counts.iter().map(|&c| T::lit(c as f64)).collect();
    let fwhm = half_max_width(&histogram.centers(), &counts, bin_width).expect("non-empty histogram");
    let sigma = variance(&finite).sqrt();
    Ok(HistogramReport {
        fwhm: LinewidthResult {
            fwhm,
            method: LinewidthMethod::Histogram,
            temperature: T::nan(),
        },
        gaussian_fwhm: LinewidthResult {
            fwhm: gaussian_fwhm_factor::<T>() * sigma,
            method: LinewidthMethod::GaussianFit,
            temperature: T::nan(),
        },
        mean: mean(&finite),
        n_samples: finite.len(),
        low_confidence: finite.len() < MIN_CONFIDENT_SAMPLES,
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsdResult<T> {
    pub spectrum: Spectrum<T>,
    /// Half-maximum width of the averaged spectrum, Hz.
    pub fwhm: T,
    /// `fwhm` with the analyzer RBW removed in quadrature, Hz.
    pub linewidth: T,
    /// Power-weighted mean frequency offset, Hz.
    pub center: T,
    pub n_scans: usize,
}

/// Noiseless fast scans swept back to back along every trace and averaged.
pub fn averaged_psd<T: Scalar>(
    shifts: &[&ShiftTrace<T>],
    amps: &[&[T]],
    scan: &ScanSpec<T>,
) -> Result<PsdResult<T>> {
    if shifts.len() != amps.len() {
        return Err(Error::Contract("shift and amplitude lists differ in length".into()));
    }
    let mut total = vec![T::zero(); scan.n_bins];
    let mut n_scans = 0usize;
    let mut freqs = scan.frequencies();
    for (shift, amp) in shifts.iter().zip(amps) {
        let per_trace = (shift.duration() / scan.sweep_time).floor().to_usize().unwrap_or(0);
        for s in 0..per_trace {
            let start = scan.sweep_time * T::from_usize_lossy(s);
            let spec = fast_scan(shift, amp, scan, start, None)?;
            for (t, p) in total.iter_mut().zip(&spec.power) {
                *t += *p;
            }
            freqs = spec.frequencies;
            n_scans += 1;
        }
    }
    if n_scans == 0 {
        return Err(Error::Empty("traces are shorter than one sweep".into()));
    }
    let power: Vec<T> = total.iter().map(|&p| p / T::from_usize_lossy(n_scans)).collect();
    let step = freqs[1] - freqs[0];
    let fwhm = half_max_width(&freqs, &power, step)
        .ok_or_else(|| Error::Empty("averaged spectrum has no positive power".into()))?;
    let excess = fwhm * fwhm - scan.rbw * scan.rbw;
    let linewidth = excess.max(T::zero()).sqrt();
    let weight: T = power.iter().copied().sum();
    let center = freqs.iter().zip(&power).map(|(&f, &p)| f * p).sum::<T>() / weight;
    Ok(PsdResult {
        spectrum: Spectrum {
            frequencies: freqs,
            power,
        },
        fwhm,
        linewidth,
        center,
        n_scans,
    })
}

/// Unweighted least-squares fit of `ln fwhm = a + slope * ln T`.
pub fn power_law_fit<T: Scalar>(results: &[LinewidthResult<T>]) -> Option<LineFit<T>> {
    let (x, y): (Vec<T>, Vec<T>) = results
        .iter()
        .filter(|r| r.temperature > T::zero() && r.fwhm > T::zero())
        .map(|r| (r.temperature.ln(), r.fwhm.ln()))
        .unzip();
    linear_fit(&x, &y)
}
