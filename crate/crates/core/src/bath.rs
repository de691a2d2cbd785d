//! TLS bath generation.
//!
//! TLS frequencies are uniform on `[nu_min, nu_max]` and positions uniform on
//! the normalized waveguide axis. The coupling of a TLS to a mode is the
//! magnitude of that mode's standing-wave strain at the TLS position,
//! normalized so that the bath-average coupling equals `g_av`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{child_rng, Stage};
use crate::stats::Histogram;
use crate::Scalar;

/// A mechanical mode the bath couples to.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanicalMode<T> {
    pub label: String,
    /// Nominal frequency in Hz.
    pub nu: T,
    /// Standing-wave index along the waveguide axis.
    pub wavenumber_index: u32,
}

impl<T: Scalar> MechanicalMode<T> {
    pub fn new(label: impl Into<String>, nu: T, wavenumber_index: u32) -> Self {
        Self {
            label: label.into(),
            nu,
            wavenumber_index,
        }
    }
}

/// One two-level system.
#[derive(Debug, Clone, PartialEq)]
pub struct Tls<T> {
    /// Frequency in Hz.
    pub nu: T,
    /// Normalized position in `[0, 1]`.
    pub x: T,
    /// Coupling rate in Hz to each of the bath's modes, in mode order.
    pub couplings: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathConfig<T> {
    pub n_tls: usize,
    pub nu_min: T,
    pub nu_max: T,
    pub g_av: T,
    pub seed: u64,
    /// Minimum |nu_mode - nu_i| in Hz; TLS closer than this to any mode are redrawn.
    pub guard_band: T,
}

impl<T: Scalar> BathConfig<T> {
    pub fn new(n_tls: usize, nu_min: T, nu_max: T, g_av: T, seed: u64) -> Self {
        Self {
            n_tls,
            nu_min,
            nu_max,
            g_av,
            seed,
            guard_band: T::lit(DEFAULT_GUARD_BAND_HZ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tls == 0 {
            return Err(Error::config("bath.n_tls", "must be at least 1"));
        }
        if !(self.nu_min > T::zero()) || !self.nu_min.is_finite() {
            return Err(Error::config("bath.nu_min_hz", "must be positive and finite"));
        }
        if !(self.nu_max > self.nu_min) || !self.nu_max.is_finite() {
            return Err(Error::config(
                "bath.nu_max_hz",
                "must be finite and greater than bath.nu_min_hz",
            ));
        }
        if !(self.g_av > T::zero()) || !self.g_av.is_finite() {
            return Err(Error::config("bath.g_av_hz", "must be positive and finite"));
        }
        if !(self.guard_band >= T::zero()) {
            return Err(Error::config("bath.guard_band_hz", "must be non-negative"));
        }
        Ok(())
    }
}

pub const DEFAULT_GUARD_BAND_HZ: f64 = 1e6;

const MAX_REDRAWS: usize = 10_000;

/// An immutable TLS bath together with the modes its couplings refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct TlsBath<T> {
    pub tls: Vec<Tls<T>>,
    pub modes: Vec<MechanicalMode<T>>,
    /// Standing-wave phase of each mode, in radians.
    pub phases: Vec<T>,
    pub config: BathConfig<T>,
}

impl<T: Scalar> TlsBath<T> {
    pub fn len(&self) -> usize {
        self.tls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tls.is_empty()
    }

    pub fn mode_index(&self, label: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.label == label)
    }

    pub fn mode(&self, label: &str) -> Option<&MechanicalMode<T>> {
        self.modes.iter().find(|m| m.label == label)
    }

    /// Coupling rates of every TLS to `label`, in TLS order.
    pub fn couplings(&self, label: &str) -> Result<Vec<T>> {
        let k = self
            .mode_index(label)
            .ok_or_else(|| Error::Contract(format!("mode `{label}` is not part of this bath")))?;
        Ok(self.tls.iter().map(|t| t.couplings[k]).collect())
    }

    pub fn frequencies(&self) -> Vec<T> {
        self.tls.iter().map(|t| t.nu).collect()
    }

    /// Assembles a bath from stored parts (e.g. an imported CSV), checking
    /// the same invariants as [`generate_bath`].
    pub fn from_parts(
        config: BathConfig<T>,
        modes: Vec<MechanicalMode<T>>,
        phases: Vec<T>,
        tls: Vec<Tls<T>>,
    ) -> Result<Self> {
        config.validate()?;
        validate_modes(&modes)?;
        if tls.len() != config.n_tls {
            return Err(Error::Contract(format!(
                "bath holds {} TLS but bath.n_tls is {}",
                tls.len(),
                config.n_tls
            )));
        }
        for (i, t) in tls.iter().enumerate() {
            if t.couplings.len() != modes.len() {
                return Err(Error::Contract(format!("TLS {i} has the wrong number of couplings")));
            }
            if t.nu < config.nu_min || t.nu > config.nu_max {
                return Err(Error::Contract(format!("TLS {i} frequency is outside the bath range")));
            }
            if t.couplings.iter().any(|&g| !(g >= T::zero())) {
                return Err(Error::Contract(format!("TLS {i} has a negative coupling")));
            }
            if modes.iter().any(|m| (m.nu - t.nu).abs() < config.guard_band) {
                return Err(Error::Contract(format!(
                    "TLS {i} lies inside the detuning guard band of a mode"
                )));
            }
        }
        Ok(Self {
            tls,
            modes,
            phases,
            config,
        })
    }
}

fn validate_modes<T: Scalar>(modes: &[MechanicalMode<T>]) -> Result<()> {
    for (i, m) in modes.iter().enumerate() {
        if !(m.nu > T::zero()) || !m.nu.is_finite() {
            return Err(Error::config(
                format!("modes.{}.nu_hz", m.label),
                "must be positive and finite",
            ));
        }
        if m.wavenumber_index == 0 {
            return Err(Error::config(
                format!("modes.{}.wavenumber_index", m.label),
                "must be a positive integer",
            ));
        }
        for other in &modes[..i] {
            if other.label == m.label {
                return Err(Error::config("modes", format!("duplicate mode label `{}`", m.label)));
            }
            if other.wavenumber_index == m.wavenumber_index {
                return Err(Error::config(
                    format!("modes.{}.wavenumber_index", m.label),
                    format!("duplicates the index of mode `{}`", other.label),
                ));
            }
        }
    }
    Ok(())
}

/// Coupling of a TLS at normalized position `x` to `mode`:
/// `g_av * |cos(pi * k * x + phase)| / (2 / pi)`.
///
/// The mean of `|cos|` over a period is `2/pi`, so averaging over uniform
/// positions returns `g_av`.
pub fn standing_wave_coupling<T: Scalar>(x: T, mode: &MechanicalMode<T>, g_av: T, phase: T) -> T {
    let k = T::from_u32(mode.wavenumber_index).expect("u32 converts to Scalar");
    let arg = T::PI() * k * x + phase;
    g_av * arg.cos().abs() * T::FRAC_PI_2()
}

/// Draws a bath of `config.n_tls` TLS coupled to `modes`. Deterministic in `config.seed`.
pub fn generate_bath<T: Scalar>(
    config: &BathConfig<T>,
    modes: &[MechanicalMode<T>],
) -> Result<TlsBath<T>> {
    config.validate()?;
    validate_modes(modes)?;
    let mut rng = child_rng(config.seed, Stage::Bath, 0, 0);

    let two_pi = T::TAU();
    let phases: Vec<T> = modes
        .iter()
        .map(|_| two_pi * T::lit(rng.random::<f64>()))
        .collect();

    let span = config.nu_max - config.nu_min;
    let mut tls = Vec::with_capacity(config.n_tls);
    for _ in 0..config.n_tls {
        let mut nu = None;
        for _ in 0..MAX_REDRAWS {
            let candidate = config.nu_min + span * T::lit(rng.random::<f64>());
            if modes
                .iter()
                .all(|m| (m.nu - candidate).abs() >= config.guard_band)
            {
                nu = Some(candidate);
                break;
            }
        }
        let nu = nu.ok_or_else(|| {
            Error::config(
                "bath.guard_band_hz",
                "the detuning guard band leaves no admissible TLS frequencies",
            )
        })?;
        let x = T::lit(rng.random::<f64>());
        let couplings = modes
            .iter()
            .zip(&phases)
            .map(|(m, &phase)| standing_wave_coupling(x, m, config.g_av, phase))
            .collect();
        tls.push(Tls { nu, x, couplings });
    }

    Ok(TlsBath {
        tls,
        modes: modes.to_vec(),
        phases,
        config: *config,
    })
}

#[derive(Debug, Clone)]
pub struct CouplingRatioStats<T> {
    /// Fraction of TLS whose coupling ratio between the two modes exceeds 2
    /// (or is below 1/2). A TLS at a strain node of exactly one mode counts.
    pub fraction_ratio_gt_2: T,
    /// Histogram of `log10(g_a / g_b)` over TLS with both couplings non-zero.
    pub log_ratio_histogram: Histogram<T>,
}

pub const LOG_RATIO_BIN_WIDTH: f64 = 0.05;

pub fn coupling_ratio_stats<T: Scalar>(
    bath: &TlsBath<T>,
    mode_a: &str,
    mode_b: &str,
) -> Result<CouplingRatioStats<T>> {
    let ga = bath.couplings(mode_a)?;
    let gb = bath.couplings(mode_b)?;
    let two = T::lit(2.0);
    let mut asymmetric = 0usize;
    let mut log_ratios = Vec::with_capacity(ga.len());
    for (&a, &b) in ga.iter().zip(&gb) {
        let zero_a = a == T::zero();
        let zero_b = b == T::zero();
        if zero_a && zero_b {
            continue;
        }
        if zero_a || zero_b || a > two * b || b > two * a {
            asymmetric += 1;
        }
        if !zero_a && !zero_b {
            log_ratios.push((a / b).log10());
        }
    }
    Ok(CouplingRatioStats {
        fraction_ratio_gt_2: T::from_usize_lossy(asymmetric) / T::from_usize_lossy(bath.len()),
        log_ratio_histogram: Histogram::from_samples(&log_ratios, T::lit(LOG_RATIO_BIN_WIDTH)),
    })
}
