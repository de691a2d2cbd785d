//! Run configuration.
//!
//! Files use flat dotted TOML keys (`bath.n_tls = 12000`). Every key is
//! optional; omitted keys take the defaults below, which describe the
//! reference operating point.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bath::{BathConfig, MechanicalMode, DEFAULT_GUARD_BAND_HZ};
use crate::detector::{CommonMode, ScanSpec, DEFAULT_PRIVATE_NOISE_FRACTION};
use crate::dynamics::{TrajectorySettings, DEFAULT_DT_REC, DEFAULT_MEMORY_BUDGET_BYTES, DEFAULT_P_MAX};
use crate::error::{Error, Result};
use crate::io::TraceFormat;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_traj: usize,
    /// Not part of the configuration hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub bath: BathSection,
    pub modes: ModesSection,
    pub rates: RatesSection,
    pub trace: TraceSection,
    pub detector: DetectorSection,
    pub scan: ScanSection,
    pub analysis: AnalysisSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathSection {
    pub n_tls: usize,
    pub nu_min_hz: f64,
    pub nu_max_hz: f64,
    pub g_av_hz: f64,
    /// Bath realization seed; defaults to the master seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub guard_band_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeSection {
    pub nu_hz: f64,
    pub wavenumber_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModesSection {
    pub a: ModeSection,
    pub b: ModeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    pub tau_down_s: f64,
    pub temperature_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub duration_s: f64,
    pub p_max: f64,
    pub dt_rec_s: f64,
    pub memory_budget_bytes: u64,
    pub format: TraceFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommonModeKind {
    #[default]
    Off,
    Constant,
    Sine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub rbw_hz: f64,
    /// Detuned-chain filter offset; defaults to `-rbw_hz / 2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detuning_hz: Option<f64>,
    pub snr_a: f64,
    pub snr_b: f64,
    pub t1_s: f64,
    pub mean_power: f64,
    pub private_noise_fraction: f64,
    pub noiseless: bool,
    pub common_mode: CommonModeKind,
    pub common_mode_hz: f64,
    pub common_mode_freq_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub rbw_hz: f64,
    pub span_hz: f64,
    pub n_bins: usize,
    /// Defaults to `200 us * (10 kHz / rbw)^2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_time_s: Option<f64>,
    pub prominence_fraction: f64,
    /// Defaults to `1 / (2 pi t1)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intrinsic_linewidth_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub max_lag_s: f64,
    pub bin_width_hz: f64,
    pub mc_max_lag_s: f64,
    /// Factor applied to simulated widths when comparing with a device whose
    /// TLS bath is larger than the simulated one.
    pub volume_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub temperatures_k: Vec<f64>,
    /// Trajectories per temperature; defaults to `n_traj`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_traj: Option<usize>,
    /// Trajectory length per temperature; defaults to `trace.duration_s`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            n_traj: 10,
            output_dir: None,
            bath: BathSection::default(),
            modes: ModesSection::default(),
            rates: RatesSection::default(),
            trace: TraceSection::default(),
            detector: DetectorSection::default(),
            scan: ScanSection::default(),
            analysis: AnalysisSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl Default for BathSection {
    fn default() -> Self {
        Self {
            n_tls: 12_000,
            nu_min_hz: 0.5e9,
            nu_max_hz: 20e9,
            g_av_hz: 100e3,
            seed: None,
            guard_band_hz: DEFAULT_GUARD_BAND_HZ,
        }
    }
}

impl Default for ModeSection {
    fn default() -> Self {
        Self {
            nu_hz: 4.847e9,
            wavenumber_index: 100,
        }
    }
}

impl Default for ModesSection {
    fn default() -> Self {
        Self {
            a: ModeSection::default(),
            b: ModeSection {
                nu_hz: 4.870e9,
                wavenumber_index: 105,
            },
        }
    }
}

impl Default for RatesSection {
    fn default() -> Self {
        Self {
            tau_down_s: 1e-6,
            temperature_k: 1.0,
        }
    }
}

impl Default for TraceSection {
    fn default() -> Self {
        Self {
            duration_s: 10e-3,
            p_max: DEFAULT_P_MAX,
            dt_rec_s: DEFAULT_DT_REC,
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET_BYTES,
            format: TraceFormat::Csv,
        }
    }
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            rbw_hz: 200e3,
            detuning_hz: None,
            snr_a: 10.0,
            snr_b: 10.0,
            t1_s: 1e-3,
            mean_power: 1.0,
            private_noise_fraction: DEFAULT_PRIVATE_NOISE_FRACTION,
            noiseless: false,
            common_mode: CommonModeKind::Off,
            common_mode_hz: 20.0,
            common_mode_freq_hz: 50.0,
        }
    }
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            rbw_hz: 10e3,
            span_hz: 100e3,
            n_bins: 201,
            sweep_time_s: None,
            prominence_fraction: 0.3,
            intrinsic_linewidth_hz: None,
        }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            max_lag_s: 10e-6,
            bin_width_hz: 250.0,
            mc_max_lag_s: 10e-6,
            volume_scale: 5.0,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            temperatures_k: vec![0.2, 0.4, 0.8, 1.6, 3.2, 4.0],
            n_traj: None,
            duration_s: None,
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            Error::config("config", e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::config("n_traj", "must be at least 1"));
        }
        self.bath_config().validate()?;
        let (a, b) = (&self.modes.a, &self.modes.b);
        positive("modes.a.nu_hz", a.nu_hz)?;
        positive("modes.b.nu_hz", b.nu_hz)?;
        if a.wavenumber_index == 0 {
            return Err(Error::config("modes.a.wavenumber_index", "must be at least 1"));
        }
        if b.wavenumber_index == 0 {
            return Err(Error::config("modes.b.wavenumber_index", "must be at least 1"));
        }
        positive("rates.tau_down_s", self.rates.tau_down_s)?;
        positive("rates.temperature_k", self.rates.temperature_k)?;
        positive("trace.duration_s", self.trace.duration_s)?;
        if !(self.trace.p_max > 0.0 && self.trace.p_max < 1.0) {
            return Err(Error::config("trace.p_max", "must lie in (0, 1)"));
        }
        positive("trace.dt_rec_s", self.trace.dt_rec_s)?;
        let d = &self.detector;
        positive("detector.rbw_hz", d.rbw_hz)?;
        if let Some(det) = d.detuning_hz {
            if det == 0.0 || !det.is_finite() {
                return Err(Error::config("detector.detuning_hz", "must be nonzero and finite"));
            }
        }
        positive("detector.snr_a", d.snr_a)?;
        positive("detector.snr_b", d.snr_b)?;
        positive("detector.t1_s", d.t1_s)?;
        positive("detector.mean_power", d.mean_power)?;
        if !(0.0..=1.0).contains(&d.private_noise_fraction) {
            return Err(Error::config("detector.private_noise_fraction", "must lie in [0, 1]"));
        }
        if !d.common_mode_hz.is_finite() {
            return Err(Error::config("detector.common_mode_hz", "must be finite"));
        }
        if d.common_mode == CommonModeKind::Sine {
            positive("detector.common_mode_freq_hz", d.common_mode_freq_hz)?;
        }
        if self.trace.dt_rec_s >= d.t1_s / 10.0 {
            return Err(Error::config("trace.dt_rec_s", "must be below detector.t1_s / 10"));
        }
        let s = &self.scan;
        positive("scan.rbw_hz", s.rbw_hz)?;
        positive("scan.span_hz", s.span_hz)?;
        if s.n_bins < 3 {
            return Err(Error::config("scan.n_bins", "must be at least 3"));
        }
        if let Some(t) = s.sweep_time_s {
            positive("scan.sweep_time_s", t)?;
        }
        if !(s.prominence_fraction >= 0.0 && s.prominence_fraction <= 1.0) {
            return Err(Error::config("scan.prominence_fraction", "must lie in [0, 1]"));
        }
        if let Some(g) = s.intrinsic_linewidth_hz {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::config("scan.intrinsic_linewidth_hz", "must be non-negative"));
            }
        }
        let an = &self.analysis;
        if !(an.max_lag_s >= 0.0 && an.max_lag_s.is_finite()) {
            return Err(Error::config("analysis.max_lag_s", "must be non-negative"));
        }
        if !(an.mc_max_lag_s >= 0.0 && an.mc_max_lag_s.is_finite()) {
            return Err(Error::config("analysis.mc_max_lag_s", "must be non-negative"));
        }
        positive("analysis.bin_width_hz", an.bin_width_hz)?;
        positive("analysis.volume_scale", an.volume_scale)?;
        validate_temperatures("sweep.temperatures_k", &self.sweep.temperatures_k)?;
        if self.sweep.n_traj == Some(0) {
            return Err(Error::config("sweep.n_traj", "must be at least 1"));
        }
        if let Some(t) = self.sweep.duration_s {
            positive("sweep.duration_s", t)?;
        }
        Ok(())
    }

    pub fn bath_seed(&self) -> u64 {
        self.bath.seed.unwrap_or(self.seed)
    }

    pub fn bath_config(&self) -> BathConfig<f64> {
        let b = &self.bath;
        let mut c = BathConfig::new(b.n_tls, b.nu_min_hz, b.nu_max_hz, b.g_av_hz, self.bath_seed());
        c.guard_band = b.guard_band_hz;
        c
    }

    pub fn modes(&self) -> Vec<MechanicalMode<f64>> {
        vec![
            MechanicalMode::new("A", self.modes.a.nu_hz, self.modes.a.wavenumber_index),
            MechanicalMode::new("B", self.modes.b.nu_hz, self.modes.b.wavenumber_index),
        ]
    }

    pub fn trajectory_settings(&self) -> TrajectorySettings<f64> {
        TrajectorySettings {
            duration: self.trace.duration_s,
            p_max: self.trace.p_max,
            dt_rec: self.trace.dt_rec_s,
            memory_budget_bytes: self.trace.memory_budget_bytes,
        }
    }

    pub fn detuning(&self) -> f64 {
        self.detector.detuning_hz.unwrap_or(-self.detector.rbw_hz / 2.0)
    }

    pub fn snr(&self, mode: &str) -> f64 {
        if mode == "A" {
            self.detector.snr_a
        } else {
            self.detector.snr_b
        }
    }

    pub fn common_mode(&self) -> CommonMode<f64> {
        let d = &self.detector;
        match d.common_mode {
            CommonModeKind::Off => CommonMode::Off,
            CommonModeKind::Constant => CommonMode::Constant(d.common_mode_hz),
            CommonModeKind::Sine => CommonMode::Sine {
                amplitude: d.common_mode_hz,
                frequency: d.common_mode_freq_hz,
            },
        }
    }

    pub fn scan_spec(&self) -> ScanSpec<f64> {
        let s = &self.scan;
        let mut spec = ScanSpec::standard(s.rbw_hz, self.detector.t1_s);
        spec.span = s.span_hz;
        spec.n_bins = s.n_bins;
        spec.prominence_fraction = s.prominence_fraction;
        if let Some(t) = s.sweep_time_s {
            spec.sweep_time = t;
        }
        if let Some(g) = s.intrinsic_linewidth_hz {
            spec.intrinsic_linewidth = g;
        }
        spec
    }

    /// Flat `key = value` lines, sorted by key, without `output_dir`.
    pub fn canonical_text(&self) -> String {
        let mut hashed = self.clone();
        hashed.output_dir = None;
        let value = toml::Value::try_from(&hashed).expect("configuration serializes to TOML");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// SHA-256 of [`RunConfig::canonical_text`], hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

pub fn validate_temperatures(key: &str, temps: &[f64]) -> Result<()> {
    if temps.is_empty() {
        return Err(Error::config(key, "needs at least one temperature"));
    }
    for &t in temps {
        positive(key, t)?;
    }
    Ok(())
}

/// Parses `lo..hi:n` (n log-spaced points, ends included) or a comma list.
pub fn parse_temperature_list(spec: &str) -> Result<Vec<f64>> {
    let key = "--temperature-sweep";
    let bad = |what: &str| Error::config(key, format!("{what} in `{spec}`"));
    let temps = if let Some((range, count)) = spec.split_once(':') {
        let (lo, hi) = range.split_once("..").ok_or_else(|| bad("expected lo..hi:n"))?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad("invalid lower bound"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad("invalid upper bound"))?;
        let n: usize = count.trim().parse().map_err(|_| bad("invalid point count"))?;
        if n < 2 || !(lo > 0.0 && hi > lo) {
            return Err(bad("need 0 < lo < hi and at least two points"));
        }
        let (a, b) = (lo.ln(), hi.ln());
        (0..n)
            .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
            .collect()
    } else {
        spec.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad("invalid temperature")))
            .collect::<Result<Vec<_>>>()?
    };
    validate_temperatures(key, &temps)?;
    Ok(temps)
}
