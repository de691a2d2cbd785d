//! Spectrum-analyzer emulation: Gaussian RBW filters in zero-span mode,
//! thermal amplitude fluctuations, detection noise, ratio demodulation and
//! swept fast scans.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::ShiftTrace;
use crate::error::{Error, Result};
use crate::Scalar;

pub const DEFAULT_RBW_HZ: f64 = 200e3;
pub const DEFAULT_T1_S: f64 = 1e-3;
/// A resonant-chain sample is usable only above this multiple of the noise floor.
pub const VALIDITY_THRESHOLD: f64 = 3.0;
pub const DEFAULT_PRIVATE_NOISE_FRACTION: f64 = 0.1;
/// Kernels are truncated at this many standard deviations.
const KERNEL_HALF_WIDTH_SIGMAS: f64 = 4.0;

/// Power response of a Gaussian filter with FWHM `rbw` at offset `f_offset`.
pub fn gaussian_response<T: Scalar>(f_offset: T, rbw: T) -> T {
    let x = f_offset / rbw;
    (-T::lit(4.0) * T::LN_2() * x * x).exp()
}

/// Relative power drop `1 - G(f)/G(0)` of a filter centered on the line.
pub fn resonant_sensitivity<T: Scalar>(f_offset: T, rbw: T) -> T {
    T::one() - gaussian_response(f_offset, rbw)
}

/// Relative power change `G(D + f)/G(D) - 1` of a filter detuned by `detuning`
/// when the line moves by `f_offset` away from the filter center.
pub fn detuned_sensitivity<T: Scalar>(f_offset: T, rbw: T, detuning: T) -> T {
    gaussian_response(f_offset - detuning, rbw) / gaussian_response(detuning, rbw) - T::one()
}

/// Standard deviation of the Gaussian filter in frequency.
pub fn filter_sigma_f<T: Scalar>(rbw: T) -> T {
    rbw / (T::lit(2.0) * (T::lit(2.0) * T::LN_2()).sqrt())
}

/// Standard deviation of the matched time-domain smoothing kernel, `1 / (2 pi sigma_f)`.
pub fn smoothing_sigma_t<T: Scalar>(rbw: T) -> T {
    (T::TAU() * filter_sigma_f(rbw)).recip()
}

fn kernel_weights<T: Scalar>(sigma_samples: T) -> Vec<T> {
    let half = (T::lit(KERNEL_HALF_WIDTH_SIGMAS) * sigma_samples)
        .ceil()
        .to_usize()
        .unwrap_or(0);
    let inv = T::lit(-0.5) / (sigma_samples * sigma_samples);
    (0..=half)
        .map(|k| {
            let k = T::from_usize_lossy(k);
            (inv * k * k).exp()
        })
        .collect()
}

/// Gaussian smoothing with a kernel of `sigma_samples` samples, truncated at
/// four standard deviations and renormalized where it overhangs the ends.
pub fn gaussian_smooth<T: Scalar>(x: &[T], sigma_samples: T) -> Vec<T> {
    if !(sigma_samples > T::lit(1e-3)) {
        return x.to_vec();
    }
    let w = kernel_weights(sigma_samples);
    let half = w.len() - 1;
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n.saturating_sub(1));
            let mut acc = T::zero();
            let mut norm = T::zero();
            for (j, &xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let wk = w[i.abs_diff(j)];
                acc += wk * xj;
                norm += wk;
            }
            acc / norm
        })
        .collect()
}

/// Gaussian RBW filter placement relative to a mode's nominal frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec<T> {
    /// Power FWHM, Hz.
    pub rbw: T,
    /// Filter center minus mode nominal frequency, Hz.
    pub center_detuning: T,
}

impl<T: Scalar> FilterSpec<T> {
    pub fn resonant(rbw: T) -> Self {
        Self {
            rbw,
            center_detuning: T::zero(),
        }
    }

    /// Filter placed half an RBW below the mode.
    pub fn detuned(rbw: T) -> Self {
        Self {
            rbw,
            center_detuning: -rbw / T::lit(2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rbw > T::zero()) || !self.rbw.is_finite() {
            return Err(Error::config("detector.rbw_hz", "must be positive and finite"));
        }
        if !self.center_detuning.is_finite() {
            return Err(Error::config("detector.detuning_hz", "must be finite"));
        }
        Ok(())
    }
}

/// One zero-span analyzer channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorChain<T> {
    pub filter: FilterSpec<T>,
    /// Standard deviation of the white detection noise per recorded sample,
    /// before smoothing, in power units.
    pub noise_floor: T,
    pub snr_target: T,
    pub seed: u64,
    /// Variance fraction of the noise that is private to this chain; the rest
    /// is shared with chains using the same filter on the same mode.
    pub private_noise_fraction: T,
}

impl<T: Scalar> DetectorChain<T> {
    /// Chain whose noise floor is `mean_power / snr_target`.
    pub fn new(filter: FilterSpec<T>, mean_power: T, snr_target: T, seed: u64) -> Result<Self> {
        filter.validate()?;
        if !(snr_target > T::zero()) {
            return Err(Error::config("detector.snr", "must be positive"));
        }
        if !(mean_power > T::zero()) {
            return Err(Error::config("detector.mean_power", "must be positive"));
        }
        Ok(Self {
            filter,
            noise_floor: mean_power / snr_target,
            snr_target,
            seed,
            private_noise_fraction: T::lit(DEFAULT_PRIVATE_NOISE_FRACTION),
        })
    }

    pub fn noiseless(filter: FilterSpec<T>, seed: u64) -> Self {
        Self {
            filter,
            noise_floor: T::zero(),
            snr_target: T::infinity(),
            seed,
            private_noise_fraction: T::one(),
        }
    }
}

/// Thermal (Brownian) fluctuation of the detected mode power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeModel<T> {
    /// Energy lifetime; the power autocorrelation decays as `exp(-t / t1)`.
    pub t1: T,
    pub mean_power: T,
}

impl<T: Scalar> AmplitudeModel<T> {
    pub fn new(t1: T, mean_power: T) -> Self {
        Self { t1, mean_power }
    }

    /// Correlation time of the underlying complex amplitude.
    pub fn amplitude_correlation_time(&self) -> T {
        T::lit(2.0) * self.t1
    }
}

fn normal<T: Scalar>(rng: &mut impl Rng) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

/// `n` independent standard normal samples.
pub fn standard_normal_noise<T: Scalar>(n: usize, rng: &mut impl Rng) -> Vec<T> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Unit-variance noise made of a shared part and a private part drawn from
/// `rng`, with variance fractions `1 - private_fraction` and `private_fraction`.
/// Without a shared part the noise is entirely private.
pub fn mix_noise<T: Scalar>(
    shared: Option<&[T]>,
    n: usize,
    private_fraction: T,
    rng: &mut impl Rng,
) -> Result<Vec<T>> {
    let Some(shared) = shared else {
        return Ok(standard_normal_noise(n, rng));
    };
    if shared.len() != n {
        return Err(Error::Contract("shared noise length differs from the trace".into()));
    }
    if !(private_fraction >= T::zero() && private_fraction <= T::one()) {
        return Err(Error::config("detector.private_noise_fraction", "must lie in [0, 1]"));
    }
    let a = (T::one() - private_fraction).sqrt();
    let b = private_fraction.sqrt();
    Ok(shared.iter().map(|&s| a * s + b * normal::<T>(rng)).collect())
}

/// Power trace `|z|^2` of a complex Ornstein-Uhlenbeck amplitude `z`, started
/// in its stationary state. The power is exponentially distributed with mean
/// `model.mean_power` and its autocorrelation decays with time constant `model.t1`.
pub fn synth_thermal_amplitude<T: Scalar>(
    duration: T,
    dt: T,
    model: &AmplitudeModel<T>,
    rng: &mut impl Rng,
) -> Result<Vec<T>> {
    if !(model.t1 > T::zero()) {
        return Err(Error::config("detector.t1_s", "must be positive"));
    }
    if !(model.mean_power > T::zero()) {
        return Err(Error::config("detector.mean_power", "must be positive"));
    }
    if !(dt > T::zero() && dt < model.t1 / T::lit(10.0)) {
        return Err(Error::Contract("amplitude step must lie in (0, t1/10)".into()));
    }
    let n = (duration / dt).round().to_usize().unwrap_or(0);
    let a = (-dt / model.amplitude_correlation_time()).exp();
    let half = T::lit(0.5) * model.mean_power;
    let stationary = half.sqrt();
    let kick = (half * (T::one() - a * a)).sqrt();
    let mut re = stationary * normal::<T>(rng);
    let mut im = stationary * normal::<T>(rng);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(re * re + im * im);
        re = a * re + kick * normal::<T>(rng);
        im = a * im + kick * normal::<T>(rng);
    }
    Ok(out)
}

/// Optional frequency offset common to both modes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CommonMode<T> {
    #[default]
    Off,
    Constant(T),
    Sine { amplitude: T, frequency: T },
}

impl<T: Scalar> CommonMode<T> {
    pub fn at(&self, t: T) -> T {
        match *self {
            CommonMode::Off => T::zero(),
            CommonMode::Constant(c) => c,
            CommonMode::Sine {
                amplitude,
                frequency,
            } => amplitude * (T::TAU() * frequency * t).sin(),
        }
    }
}

/// Zero-span power of one chain: `amp * G(shift + common - center_detuning) + noise`,
/// smoothed by the filter's matched time kernel. `noise` is unit-variance
/// detection noise; it is scaled by the chain's noise floor.
pub fn synth_zero_span<T: Scalar>(
    shift: &ShiftTrace<T>,
    amp: &[T],
    chain: &DetectorChain<T>,
    common_mode: &CommonMode<T>,
    noise: Option<&[T]>,
) -> Result<Vec<T>> {
    chain.filter.validate()?;
    let n = shift.samples.len();
    if amp.len() != n {
        return Err(Error::Contract(format!(
            "shift trace has {n} samples but amplitude trace has {}",
            amp.len()
        )));
    }
    if let Some(noise) = noise {
        if noise.len() != n {
            return Err(Error::Contract("noise length differs from the trace".into()));
        }
    }
    let f = &chain.filter;
    let raw: Vec<T> = shift
        .samples
        .iter()
        .zip(amp)
        .enumerate()
        .map(|(j, (&s, &a))| {
            let t = T::from_usize_lossy(j) * shift.dt;
            let p = a * gaussian_response(s + common_mode.at(t) - f.center_detuning, f.rbw);
            match noise {
                Some(noise) => p + chain.noise_floor * noise[j],
                None => p,
            }
        })
        .collect();
    Ok(gaussian_smooth(&raw, smoothing_sigma_t(f.rbw) / shift.dt))
}

/// Shift recovered from a detuned/resonant power pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated<T> {
    pub dt: T,
    /// Shift in Hz; `NaN` where invalid.
    pub values: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> Demodulated<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_fraction(&self) -> T {
        if self.valid.is_empty() {
            return T::zero();
        }
        T::from_usize_lossy(self.valid_count()) / T::from_usize_lossy(self.valid.len())
    }
}

/// Inverse of the Gaussian power ratio `R = G(delta - D) / G(delta)`.
pub fn shift_from_ratio<T: Scalar>(ratio: T, rbw: T, detuning: T) -> T {
    rbw * rbw * ratio.ln() / (T::lit(8.0) * T::LN_2() * detuning) + detuning / T::lit(2.0)
}

/// Ratio demodulation with a validity mask. A sample is valid when the
/// resonant power exceeds `VALIDITY_THRESHOLD * noise_floor`, the ratio is
/// positive and the recovered shift lies within `rbw / 2`.
pub fn demodulate_with_mask<T: Scalar>(
    p_detuned: &[T],
    p_resonant: &[T],
    rbw: T,
    detuning: T,
    noise_floor: T,
    dt: T,
) -> Result<Demodulated<T>> {
    if p_detuned.len() != p_resonant.len() {
        return Err(Error::Contract("detuned and resonant traces differ in length".into()));
    }
    if detuning == T::zero() || !detuning.is_finite() {
        return Err(Error::Contract("detuning must be nonzero".into()));
    }
    if !(rbw > T::zero()) {
        return Err(Error::config("detector.rbw_hz", "must be positive"));
    }
    let floor = T::lit(VALIDITY_THRESHOLD) * noise_floor;
    let half = rbw / T::lit(2.0);
    let (values, valid) = p_detuned
        .iter()
        .zip(p_resonant)
        .map(|(&d, &r)| {
            let ratio = d / r;
            let delta = shift_from_ratio(ratio, rbw, detuning);
            let ok = r > floor && r > T::zero() && ratio > T::zero() && delta.abs() <= half;
            if ok {
                (delta, true)
            } else {
                (T::nan(), false)
            }
        })
        .unzip();
    Ok(Demodulated { dt, values, valid })
}

/// Like [`demodulate_with_mask`] but reports an all-invalid result as [`Error::Empty`].
pub fn demodulate<T: Scalar>(
    p_detuned: &[T],
    p_resonant: &[T],
    rbw: T,
    detuning: T,
    noise_floor: T,
    dt: T,
) -> Result<Demodulated<T>> {
    let d = demodulate_with_mask(p_detuned, p_resonant, rbw, detuning, noise_floor, dt)?;
    if d.valid_count() == 0 {
        return Err(Error::Empty("no valid demodulated samples".into()));
    }
    Ok(d)
}

/// Swept-analyzer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSpec<T> {
    /// Full frequency span, centered on the mode's nominal frequency, Hz.
    pub span: T,
    pub rbw: T,
    /// Time to sweep the span once, s.
    pub sweep_time: T,
    pub n_bins: usize,
    /// Intrinsic mechanical linewidth, Hz.
    pub intrinsic_linewidth: T,
    /// Minimum peak prominence as a fraction of the spectrum's max - min range.
    pub prominence_fraction: T,
}

impl<T: Scalar> ScanSpec<T> {
    /// 100 kHz span, 201 bins, sweep time scaling as `200 us * (10 kHz / rbw)^2`.
    pub fn standard(rbw: T, t1: T) -> Self {
        let r = T::lit(10e3) / rbw;
        Self {
            span: T::lit(100e3),
            rbw,
            sweep_time: T::lit(200e-6) * r * r,
            n_bins: 201,
            intrinsic_linewidth: (T::TAU() * t1).recip(),
            prominence_fraction: T::lit(0.3),
        }
    }

    pub fn frequencies(&self) -> Vec<T> {
        let n = self.n_bins;
        let step = if n > 1 {
            self.span / T::from_usize_lossy(n - 1)
        } else {
            T::zero()
        };
        (0..n)
            .map(|k| -self.span / T::lit(2.0) + step * T::from_usize_lossy(k))
            .collect()
    }

    /// Filter width seen by a line of the intrinsic linewidth.
    pub fn effective_rbw(&self) -> T {
        (self.rbw * self.rbw + self.intrinsic_linewidth * self.intrinsic_linewidth).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.span > T::zero() && self.rbw > T::zero() && self.sweep_time > T::zero()) {
            return Err(Error::config("scan", "span, rbw and sweep time must be positive"));
        }
        if self.n_bins < 3 {
            return Err(Error::config("scan.n_bins", "must be at least 3"));
        }
        if !(self.intrinsic_linewidth >= T::zero()) {
            return Err(Error::config("scan.intrinsic_linewidth_hz", "must be non-negative"));
        }
        Ok(())
    }
}

/// Power versus frequency offset from the mode's nominal frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    pub frequencies: Vec<T>,
    pub power: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak<T> {
    /// Interpolated peak frequency, Hz.
    pub frequency: T,
    pub height: T,
    pub prominence: T,
}

/// One sweep starting at `start_time` into the trace. Bin `k` is reached at
/// `start_time + k / (n_bins - 1) * sweep_time`; its value is the
/// time-kernel-weighted average of `amp * G(f_k - shift)` around that instant
/// plus `noise[k]` (absolute power units, one value per bin).
pub fn fast_scan<T: Scalar>(
    shift: &ShiftTrace<T>,
    amp: &[T],
    scan: &ScanSpec<T>,
    start_time: T,
    noise: Option<&[T]>,
) -> Result<Spectrum<T>> {
    scan.validate()?;
    let n = shift.samples.len();
    if amp.len() != n {
        return Err(Error::Contract("shift and amplitude traces differ in length".into()));
    }
    if !(start_time >= T::zero()) || start_time + scan.sweep_time > shift.duration() * T::lit(1.0 + 1e-9) {
        return Err(Error::Contract("sweep does not fit inside the trace".into()));
    }
    if let Some(noise) = noise {
        if noise.len() != scan.n_bins {
            return Err(Error::Contract("scan noise needs one value per bin".into()));
        }
    }
    let freqs = scan.frequencies();
    let rbw_eff = scan.effective_rbw();
    let sigma = smoothing_sigma_t(scan.rbw) / shift.dt;
    let w = kernel_weights(sigma);
    let half = w.len() - 1;
    let bin_dt = scan.sweep_time / T::from_usize_lossy(scan.n_bins - 1);
    let power = freqs
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let t = start_time + bin_dt * T::from_usize_lossy(k);
            let c = (t / shift.dt).round().to_usize().unwrap_or(0).min(n - 1);
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(n - 1);
            let mut acc = T::zero();
            let mut norm = T::zero();
            for j in lo..=hi {
                let wk = w[c.abs_diff(j)];
                acc += wk * amp[j] * gaussian_response(f - shift.samples[j], rbw_eff);
                norm += wk;
            }
            acc / norm + noise.map_or(T::zero(), |v| v[k])
        })
        .collect();
    Ok(Spectrum {
        frequencies: freqs,
        power,
    })
}

/// Centroid of `y - level` over the contiguous run of bins around `k` that
/// stay at or above `level`.
fn peak_centroid<T: Scalar>(f: &[T], y: &[T], k: usize, level: T) -> T {
    let mut l = k;
    while l > 0 && y[l - 1] >= level {
        l -= 1;
    }
    let mut r = k;
    while r + 1 < y.len() && y[r + 1] >= level {
        r += 1;
    }
    let (mut num, mut den) = (T::zero(), T::zero());
    for i in l..=r {
        num += (y[i] - level) * f[i];
        den += y[i] - level;
    }
    num / den
}

/// Interior local maxima whose topographic prominence is at least
/// `prominence_fraction * (max - min)`. Each peak is located at the centroid
/// of its part above half its prominence.
pub fn find_peaks<T: Scalar>(spectrum: &Spectrum<T>, prominence_fraction: T) -> Vec<Peak<T>> {
    let y = &spectrum.power;
    let f = &spectrum.frequencies;
    let n = y.len();
    if n < 3 {
        return Vec::new();
    }
    let (lo, hi) = y
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let min_prominence = prominence_fraction * (hi - lo);
    let mut peaks = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if !(y[i] > y[i - 1]) {
            i += 1;
            continue;
        }
        // extend across a plateau
        let mut j = i;
        while j + 1 < n && y[j + 1] == y[i] {
            j += 1;
        }
        if j + 1 >= n || !(y[j + 1] < y[i]) {
            i = j + 1;
            continue;
        }
        let top = y[i];
        let mut left_min = top;
        for &v in y[..i].iter().rev() {
            if v > top {
                break;
            }
            left_min = left_min.min(v);
        }
        let mut right_min = top;
        for &v in &y[j + 1..] {
            if v > top {
                break;
            }
            right_min = right_min.min(v);
        }
        let prominence = top - left_min.max(right_min);
        if prominence >= min_prominence && prominence > T::zero() {
            peaks.push(Peak {
                frequency: peak_centroid(f, y, i, top - prominence / T::lit(2.0)),
                height: top,
                prominence,
            });
        }
        i = j + 1;
    }
    peaks
}
