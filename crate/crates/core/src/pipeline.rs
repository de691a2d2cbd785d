//! End-to-end stages: simulate, detect, analyze and temperature sweeps.
//!
//! Each stage reads its inputs from and writes its artifacts to one output
//! directory, so stages can be rerun independently. The two modes are `A`
//! and `B`; each is observed by two analyzer channels, `1` and `3`, each made
//! of a detuned and a resonant zero-span chain. Configuration `XY` correlates
//! mode `X` on channel 1 with mode `Y` on channel 3.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    autocorrelation_time, averaged_psd, correlation_distance, correlation_matrix, histogram_and_fwhm,
    mc_renormalized_correlation, power_law_fit, ChannelTraces, HistogramReport, LinewidthMethod,
    LinewidthResult,
};
use crate::bath::{coupling_ratio_stats, generate_bath, TlsBath};
use crate::config::RunConfig;
use crate::detector::{
    detuned_sensitivity, find_peaks, fast_scan, gaussian_smooth, mix_noise, resonant_sensitivity,
    smoothing_sigma_t, standard_normal_noise, synth_thermal_amplitude, synth_zero_span,
    demodulate_with_mask, AmplitudeModel, Demodulated, DetectorChain, FilterSpec, Peak, Spectrum,
};
use crate::dynamics::{simulate_trajectories, RateTable, ShiftTrace, TrajectoryTraces};
use crate::error::{Error, Result};
use crate::io::{self, Table};
use crate::manifest::RunManifest;
use crate::seed::{child_rng, child_seed, rng_from_seed, Stage};

pub const MODES: [&str; 2] = ["A", "B"];
pub const CHANNELS: [u64; 2] = [1, 3];
/// Pairs in the order AA, AB, BA, BB.
pub const PAIRS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];
/// Frequency offset at which filter sensitivities are reported, Hz.
pub const SENSITIVITY_OFFSET_HZ: f64 = 10e3;
/// Largest lag searched for the 1/e autocorrelation time, samples.
const AUTOCORRELATION_MAX_LAG: usize = 400;

fn pair_name(x: usize, y: usize) -> String {
    format!("{}{}", MODES[x], MODES[y])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainKind {
    Detuned,
    Resonant,
}

impl ChainKind {
    pub const ALL: [ChainKind; 2] = [ChainKind::Detuned, ChainKind::Resonant];

    fn tag(self) -> &'static str {
        match self {
            ChainKind::Detuned => "det",
            ChainKind::Resonant => "res",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

/// File names inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn bath(&self) -> PathBuf {
        self.root.join("bath.csv")
    }

    pub fn shift(&self, k: usize, mode: &str, format: io::TraceFormat) -> PathBuf {
        self.root
            .join("traces")
            .join(format!("shift_t{k:03}_{mode}.{}", format.extension()))
    }

    pub fn amplitude(&self, k: usize, mode: &str) -> PathBuf {
        self.root.join("detect").join(format!("amp_t{k:03}_{mode}.csv"))
    }

    pub fn zero_span(&self, k: usize, mode: &str, channel: u64, kind: ChainKind) -> PathBuf {
        self.root
            .join("detect")
            .join(format!("zerospan_t{k:03}_{mode}{channel}_{}.csv", kind.tag()))
    }

    pub fn demod(&self, k: usize, mode: &str, channel: u64) -> PathBuf {
        self.root.join("detect").join(format!("demod_t{k:03}_{mode}{channel}.csv"))
    }

    pub fn analysis(&self, name: &str) -> PathBuf {
        self.root.join("analysis").join(name)
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn sweep_summary(&self) -> PathBuf {
        self.root.join("sweep.json")
    }

    fn require(&self, paths: &[PathBuf]) -> Result<()> {
        let missing: Vec<String> = paths
            .iter()
            .filter(|p| !p.exists())
            .map(|p| self.relative(p))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingArtifact {
                dir: self.root.clone(),
                expected: missing,
            })
        }
    }
}

/// Artifacts written by one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub artifacts: Vec<String>,
    pub wall_time_s: f64,
}

fn finish(layout: &Layout, cfg: &RunConfig, stage: &str, artifacts: Vec<PathBuf>, start: Instant) -> Result<StageOutcome> {
    let artifacts: Vec<String> = artifacts.iter().map(|p| layout.relative(p)).collect();
    let wall_time_s = start.elapsed().as_secs_f64();
    RunManifest::record_stage(&layout.root, cfg, stage, &artifacts, wall_time_s)?;
    Ok(StageOutcome {
        artifacts,
        wall_time_s,
    })
}

pub fn bath_table(bath: &TlsBath<f64>) -> Table {
    let mut t = Table::new("bath", &["index", "nu_hz", "x", "gA_hz", "gB_hz"])
        .with_meta("n_tls", bath.len())
        .with_meta("seed", bath.config.seed);
    for (i, tls) in bath.tls.iter().enumerate() {
        t.push(vec![
            i.to_string(),
            tls.nu.to_string(),
            tls.x.to_string(),
            tls.couplings[0].to_string(),
            tls.couplings[1].to_string(),
        ]);
    }
    t
}

/// Bath and shift traces of every trajectory, in memory.
pub fn simulate_data(cfg: &RunConfig) -> Result<(TlsBath<f64>, Vec<TrajectoryTraces<f64>>)> {
    cfg.validate()?;
    let modes = cfg.modes();
    let bath = generate_bath(&cfg.bath_config(), &modes)?;
    let rates = RateTable::thermal(&bath, cfg.rates.tau_down_s, cfg.rates.temperature_k)?;
    let trajectories =
        simulate_trajectories(&bath, &modes, &rates, &cfg.trajectory_settings(), cfg.n_traj, cfg.seed)?;
    Ok((bath, trajectories))
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<StageOutcome> {
    let start = Instant::now();
    let layout = Layout::new(out);
    let (bath, trajectories) = simulate_data(cfg)?;
    let mut written = vec![layout.config(), layout.bath()];
    io::write_atomic(&layout.config(), cfg.canonical_text().as_bytes())?;
    bath_table(&bath).write(&layout.bath())?;
    let format = cfg.trace.format;
    let layout_ref = &layout;
    let paths: Vec<PathBuf> = trajectories
        .par_iter()
        .flat_map_iter(|traj| {
            traj.traces.iter().map(move |tr| {
                let path = layout_ref.shift(traj.trajectory_id as usize, &tr.mode, format);
                io::write_shift_trace(&path, tr, format).map(|_| path)
            })
        })
        .collect::<Result<_>>()?;
    written.extend(paths);
    finish(&layout, cfg, "simulate", written, start)
}

/// Detector outputs for one mode of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDetection {
    pub mode: String,
    pub amplitude: Vec<f64>,
    /// Indexed `[channel][kind]`, in [`CHANNELS`] and [`ChainKind::ALL`] order.
    pub zero_span: [[Vec<f64>; 2]; 2],
    /// Indexed by channel.
    pub demod: [Demodulated<f64>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDetection {
    pub trajectory_id: u64,
    pub modes: Vec<ModeDetection>,
}

fn chain_filter(cfg: &RunConfig, kind: ChainKind) -> FilterSpec<f64> {
    match kind {
        ChainKind::Resonant => FilterSpec::resonant(cfg.detector.rbw_hz),
        ChainKind::Detuned => FilterSpec {
            rbw: cfg.detector.rbw_hz,
            center_detuning: cfg.detuning(),
        },
    }
}

/// Emulates both channels on both modes of one trajectory.
///
/// The thermal amplitude belongs to the mode and is seen by every chain on it.
/// Detection noise is shared between the two channels' chains of the same
/// kind on the same mode, plus a private part per chain.
pub fn detect_trajectory(cfg: &RunConfig, traj: &TrajectoryTraces<f64>) -> Result<TrajectoryDetection> {
    let k = traj.trajectory_id;
    let d = &cfg.detector;
    let common_mode = cfg.common_mode();
    let modes = MODES
        .iter()
        .enumerate()
        .map(|(mi, &mode)| {
            let shift = traj
                .trace(mode)
                .ok_or_else(|| Error::Contract(format!("trajectory {k} lacks mode {mode}")))?;
            let n = shift.len();
            let model = AmplitudeModel::new(d.t1_s, d.mean_power);
            let mut amp_rng = child_rng(cfg.seed, Stage::Amplitude, k, mi as u64);
            let duration = shift.dt * n as f64;
            let mut amplitude = synth_thermal_amplitude(duration, shift.dt, &model, &mut amp_rng)?;
            amplitude.resize(n, *amplitude.last().unwrap_or(&d.mean_power));
            let shared: Vec<Vec<f64>> = ChainKind::ALL
                .iter()
                .map(|kind| {
                    let mut rng = child_rng(cfg.seed, Stage::DetectorNoise, k, 2 * mi as u64 + kind.index());
                    standard_normal_noise(n, &mut rng)
                })
                .collect();
            let mut zero_span: [[Vec<f64>; 2]; 2] = Default::default();
            let mut demod = Vec::with_capacity(2);
            for (ci, _) in CHANNELS.iter().enumerate() {
                let mut noise_floor = 0.0;
                for kind in ChainKind::ALL {
                    let seed = child_seed(
                        cfg.seed,
                        Stage::DetectorNoise,
                        k,
                        16 + 4 * mi as u64 + 2 * ci as u64 + kind.index(),
                    );
                    let filter = chain_filter(cfg, kind);
                    let p = if d.noiseless {
                        let chain = DetectorChain::noiseless(filter, seed);
                        synth_zero_span(shift, &amplitude, &chain, &common_mode, None)?
                    } else {
                        let mut chain = DetectorChain::new(filter, d.mean_power, cfg.snr(mode), seed)?;
                        chain.private_noise_fraction = d.private_noise_fraction;
                        noise_floor = chain.noise_floor;
                        let mut rng = rng_from_seed(seed);
                        let noise = mix_noise(
                            Some(&shared[kind.index() as usize]),
                            n,
                            chain.private_noise_fraction,
                            &mut rng,
                        )?;
                        synth_zero_span(shift, &amplitude, &chain, &common_mode, Some(&noise))?
                    };
                    zero_span[ci][kind.index() as usize] = p;
                }
                let [det, res] = &zero_span[ci];
                demod.push(demodulate_with_mask(det, res, d.rbw_hz, cfg.detuning(), noise_floor, shift.dt)?);
            }
            let demod: [Demodulated<f64>; 2] = demod.try_into().expect("two channels");
            Ok(ModeDetection {
                mode: mode.to_string(),
                amplitude,
                zero_span,
                demod,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryDetection {
        trajectory_id: k,
        modes,
    })
}

fn read_trajectories(cfg: &RunConfig, layout: &Layout) -> Result<Vec<TrajectoryTraces<f64>>> {
    let format = cfg.trace.format;
    let expected: Vec<PathBuf> = (0..cfg.n_traj)
        .flat_map(|k| MODES.iter().map(move |m| (k, *m)))
        .map(|(k, m)| layout.shift(k, m, format))
        .collect();
    layout.require(&expected)?;
    (0..cfg.n_traj)
        .into_par_iter()
        .map(|k| {
            let traces = MODES
                .iter()
                .map(|&m| {
                    let seed = crate::dynamics::trajectory_seed(cfg.seed, k as u64);
                    io::read_shift_trace(&layout.shift(k, m, format), format, m, k as u64, seed)
                })
                .collect::<Result<Vec<ShiftTrace<f64>>>>()?;
            Ok(TrajectoryTraces {
                trajectory_id: k as u64,
                traces,
            })
        })
        .collect()
}

pub fn detect(cfg: &RunConfig, out: &Path) -> Result<StageOutcome> {
    let start = Instant::now();
    let layout = Layout::new(out);
    cfg.validate()?;
    let trajectories = read_trajectories(cfg, &layout)?;
    let written: Vec<Vec<PathBuf>> = trajectories
        .par_iter()
        .map(|traj| {
            let det = detect_trajectory(cfg, traj)?;
            let k = traj.trajectory_id as usize;
            let dt = traj.traces[0].dt;
            let mut paths = Vec::new();
            for m in &det.modes {
                let meta = |extra: Vec<(&'static str, String)>| {
                    let mut v = vec![("mode", m.mode.clone()), ("trajectory", k.to_string())];
                    v.extend(extra);
                    v
                };
                let path = layout.amplitude(k, &m.mode);
                io::write_series(&path, "amplitude", dt, &m.amplitude, &meta(vec![]))?;
                paths.push(path);
                for (ci, &ch) in CHANNELS.iter().enumerate() {
                    for kind in ChainKind::ALL {
                        let path = layout.zero_span(k, &m.mode, ch, kind);
                        let extra = vec![("channel", ch.to_string()), ("chain", kind.tag().to_string())];
                        io::write_series(&path, "zerospan", dt, &m.zero_span[ci][kind.index() as usize], &meta(extra))?;
                        paths.push(path);
                    }
                    let path = layout.demod(k, &m.mode, ch);
                    io::write_demodulated(&path, &m.demod[ci], &meta(vec![("channel", ch.to_string())]))?;
                    paths.push(path);
                }
            }
            Ok(paths)
        })
        .collect::<Result<_>>()?;
    finish(&layout, cfg, "detect", written.into_iter().flatten().collect(), start)
}

/// Everything the analysis stage consumes.
#[derive(Debug, Clone)]
pub struct AnalysisInput {
    pub trajectories: Vec<TrajectoryTraces<f64>>,
    /// `[trajectory][mode]`.
    pub amplitudes: Vec<Vec<Vec<f64>>>,
    /// `[trajectory][mode][channel]`.
    pub demods: Vec<Vec<Vec<Demodulated<f64>>>>,
}

type StoredDetection = (Vec<Vec<f64>>, Vec<Vec<Demodulated<f64>>>);

impl AnalysisInput {
    pub fn from_detections(trajectories: Vec<TrajectoryTraces<f64>>, detections: Vec<TrajectoryDetection>) -> Self {
        let mut amplitudes = Vec::new();
        let mut demods = Vec::new();
        for det in detections {
            amplitudes.push(det.modes.iter().map(|m| m.amplitude.clone()).collect());
            demods.push(det.modes.into_iter().map(|m| m.demod.to_vec()).collect());
        }
        Self {
            trajectories,
            amplitudes,
            demods,
        }
    }

    fn load(cfg: &RunConfig, layout: &Layout) -> Result<Self> {
        let mut expected = Vec::new();
        for k in 0..cfg.n_traj {
            for m in MODES {
                expected.push(layout.shift(k, m, cfg.trace.format));
                expected.push(layout.amplitude(k, m));
                for ch in CHANNELS {
                    expected.push(layout.demod(k, m, ch));
                }
            }
        }
        layout.require(&expected)?;
        let trajectories = read_trajectories(cfg, layout)?;
        let per_traj: Vec<StoredDetection> = (0..cfg.n_traj)
            .into_par_iter()
            .map(|k| {
                let mut amps = Vec::new();
                let mut demods = Vec::new();
                for m in MODES {
                    amps.push(io::read_series(&layout.amplitude(k, m), "amplitude")?.1);
                    demods.push(
                        CHANNELS
                            .iter()
                            .map(|&ch| io::read_demodulated(&layout.demod(k, m, ch)))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                Ok((amps, demods))
            })
            .collect::<Result<_>>()?;
        let (amplitudes, demods) = per_traj.into_iter().unzip();
        Ok(Self {
            trajectories,
            amplitudes,
            demods,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub pair: String,
    /// Normalized zero-delay correlation.
    pub rho0: f64,
    /// Unnormalized zero-delay correlation, Hz^2.
    pub c0_raw: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub pairs: Vec<PairSummary>,
    pub missing: Vec<String>,
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub name: String,
    pub fwhm_hz: f64,
    pub gaussian_fwhm_hz: f64,
    /// `fwhm_hz * analysis.volume_scale`.
    pub scaled_fwhm_hz: f64,
    pub mean_hz: f64,
    pub n_samples: usize,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdSummary {
    pub mode: String,
    pub fwhm_hz: f64,
    pub linewidth_hz: f64,
    pub center_hz: f64,
    pub n_scans: usize,
    /// `|demodulated histogram mean - PSD center| / PSD fwhm`.
    pub histogram_center_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub pair: String,
    /// Renormalized same-trajectory correlation at zero lag, RBW-filtered shifts.
    pub filtered_zero_delay: f64,
    /// Same for the unfiltered shifts.
    pub raw_zero_delay: f64,
    /// Cross-trajectory pairs renormalized like the same-trajectory ones and
    /// averaged over pairs: largest |value| over all lags, filtered shifts.
    pub cross_max_abs: f64,
    /// Largest |value| of an individual cross-trajectory pair at zero lag,
    /// filtered shifts. Reflects the scatter of per-trajectory means.
    pub cross_pair_max_abs_zero_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakStats {
    pub mode: String,
    pub n_scans: usize,
    /// Number of sweeps with 0, 1, 2 and 3 or more peaks.
    pub peak_count_histogram: [usize; 4],
}

impl PeakStats {
    pub fn fraction_with(&self, f: impl Fn(usize) -> bool) -> f64 {
        let hits: usize = (0..4).filter(|&i| f(i)).map(|i| self.peak_count_histogram[i]).sum();
        hits as f64 / self.n_scans.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub pair: String,
    /// Sweeps where both channels show exactly one peak.
    pub n_scans: usize,
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastScanSummary {
    pub rbw_hz: f64,
    pub sweep_time_s: f64,
    pub modes: Vec<PeakStats>,
    pub distances: Vec<DistanceSummary>,
}

impl FastScanSummary {
    /// Fraction of all sweeps, both modes and channels pooled, satisfying `f(peak count)`.
    pub fn pooled_fraction(&self, f: impl Fn(usize) -> bool) -> f64 {
        let total: usize = self.modes.iter().map(|m| m.n_scans).sum();
        let hits: usize = self
            .modes
            .iter()
            .flat_map(|m| (0..4).filter(|&i| f(i)).map(move |i| m.peak_count_histogram[i]))
            .sum();
        hits as f64 / total.max(1) as f64
    }

    pub fn distance(&self, pair: &str) -> Option<f64> {
        self.distances.iter().find(|d| d.pair == pair)?.distance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMode {
    pub mode: String,
    pub fwhm_hz: Vec<f64>,
    pub gaussian_fwhm_hz: Vec<f64>,
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub strictly_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub temperatures_k: Vec<f64>,
    pub n_traj: usize,
    pub duration_s: f64,
    pub modes: Vec<SweepMode>,
}

impl SweepReport {
    pub fn mode(&self, mode: &str) -> Option<&SweepMode> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub offset_hz: f64,
    /// `1 - G(offset)/G(0)`.
    pub resonant: f64,
    /// `G(offset - D)/G(-D) - 1` at the configured detuning.
    pub detuned: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_traj: usize,
    pub temperature_k: f64,
    pub coupling_asymmetry_fraction: f64,
    pub correlation: CorrelationSummary,
    pub valid_fraction: Vec<NamedValue>,
    pub histograms: Vec<HistogramSummary>,
    pub psd: Vec<PsdSummary>,
    pub monte_carlo: Vec<McSummary>,
    pub autocorrelation_time_s: Vec<NamedValue>,
    pub fast_scan: FastScanSummary,
    pub sensitivity: Sensitivity,
    pub low_confidence: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep: Option<SweepReport>,
}

impl Summary {
    pub fn rho(&self, pair: &str) -> Option<f64> {
        self.correlation.pairs.iter().find(|p| p.pair == pair).map(|p| p.rho0)
    }

    pub fn histogram(&self, name: &str) -> Option<&HistogramSummary> {
        self.histograms.iter().find(|h| h.name == name)
    }

    pub fn monte_carlo(&self, pair: &str) -> Option<&McSummary> {
        self.monte_carlo.iter().find(|m| m.pair == pair)
    }

    pub fn valid_fraction(&self, channel: &str) -> Option<f64> {
        self.valid_fraction.iter().find(|v| v.name == channel).map(|v| v.value)
    }

    pub fn autocorrelation_time(&self, mode: &str) -> Option<f64> {
        self.autocorrelation_time_s.iter().find(|v| v.name == mode).map(|v| v.value)
    }
}

/// Shift trace convolved with the detector's matched time kernel.
pub fn filtered_shift(trace: &ShiftTrace<f64>, rbw: f64) -> Vec<f64> {
    gaussian_smooth(&trace.samples, smoothing_sigma_t(rbw) / trace.dt)
}

fn lag_samples(lag_s: f64, dt: f64) -> usize {
    (lag_s / dt).round() as usize
}

fn histogram_table(report: &HistogramReport<f64>, name: &str) -> Table {
    let mut t = Table::new("histogram", &["bin_center_hz", "count"])
        .with_meta("name", name)
        .with_meta("bin_width_hz", report.histogram.bin_width)
        .with_meta("fwhm_hz", report.fwhm.fwhm);
    for (c, n) in report.histogram.centers().iter().zip(&report.histogram.counts) {
        t.push(vec![c.to_string(), n.to_string()]);
    }
    t
}

fn histogram_summary(report: &HistogramReport<f64>, name: &str, volume_scale: f64) -> HistogramSummary {
    HistogramSummary {
        name: name.to_string(),
        fwhm_hz: report.fwhm.fwhm,
        gaussian_fwhm_hz: report.gaussian_fwhm.fwhm,
        scaled_fwhm_hz: report.fwhm.fwhm * volume_scale,
        mean_hz: report.mean,
        n_samples: report.n_samples,
        low_confidence: report.low_confidence,
    }
}

fn curve_table(kind: &str, pair: &str, dt: f64, lags: &[i64], values: &[f64]) -> Table {
    let mut t = Table::new(kind, &["tau_s", "c_value"]).with_meta("pair", pair);
    for (l, v) in lags.iter().zip(values) {
        t.push(vec![(*l as f64 * dt).to_string(), v.to_string()]);
    }
    t
}

type SweepPeaks = Vec<[Vec<Peak<f64>>; 2]>;
type ModeScan = (SweepPeaks, Vec<Spectrum<f64>>);
type NamedSpectra = Vec<(String, Spectrum<f64>)>;

/// Peaks of every sweep on both channels, `[sweep][channel]`, for one mode of
/// one trajectory, plus the spectra of the first sweep.
fn scan_mode(
    cfg: &RunConfig,
    trajectory_id: u64,
    mode_index: usize,
    shift: &ShiftTrace<f64>,
    amp: &[f64],
) -> Result<ModeScan> {
    let scan = cfg.scan_spec();
    let d = &cfg.detector;
    let n_sweeps = (shift.duration() / scan.sweep_time * (1.0 + 1e-9)).floor() as usize;
    let noise_floor = if d.noiseless {
        0.0
    } else {
        d.mean_power / cfg.snr(MODES[mode_index]) * scan.rbw / d.rbw_hz
    };
    let mut shared_rng = child_rng(cfg.seed, Stage::Scan, trajectory_id, mode_index as u64);
    let mut private_rngs: Vec<_> = (0..2)
        .map(|ci| child_rng(cfg.seed, Stage::Scan, trajectory_id, 16 + 2 * mode_index as u64 + ci))
        .collect();
    let mut first = Vec::new();
    let mut sweeps = Vec::with_capacity(n_sweeps);
    for s in 0..n_sweeps {
        let start = scan.sweep_time * s as f64;
        let shared: Vec<f64> = standard_normal_noise(scan.n_bins, &mut shared_rng);
        let mut peaks: [Vec<Peak<f64>>; 2] = Default::default();
        for (ci, rng) in private_rngs.iter_mut().enumerate() {
            let noise: Vec<f64> = mix_noise(Some(&shared), scan.n_bins, d.private_noise_fraction, rng)?
                .into_iter()
                .map(|v| v * noise_floor)
                .collect();
            let spectrum = fast_scan(shift, amp, &scan, start, Some(&noise))?;
            peaks[ci] = find_peaks(&spectrum, scan.prominence_fraction);
            if s == 0 {
                first.push(spectrum);
            }
        }
        sweeps.push(peaks);
    }
    Ok((sweeps, first))
}

/// Peak statistics of back-to-back fast scans on both channels, and the
/// correlation distance between single-peak positions for every configuration.
/// Also returns the first sweep of the first trajectory on every mode and
/// channel, keyed `A1`, `A3`, `B1`, `B3`.
pub fn fast_scan_study(
    cfg: &RunConfig,
    trajectories: &[TrajectoryTraces<f64>],
    amplitudes: &[Vec<Vec<f64>>],
) -> Result<(FastScanSummary, NamedSpectra)> {
    let scan = cfg.scan_spec();
    scan.validate()?;
    // [trajectory][mode] -> ([sweep][channel], first spectra)
    let results: Vec<Vec<ModeScan>> = trajectories
        .par_iter()
        .zip(amplitudes)
        .map(|(traj, amps)| {
            MODES
                .iter()
                .enumerate()
                .map(|(mi, &m)| {
                    let shift = traj
                        .trace(m)
                        .ok_or_else(|| Error::Contract(format!("trajectory lacks mode {m}")))?;
                    scan_mode(cfg, traj.trajectory_id, mi, shift, &amps[mi])
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut examples = Vec::new();
    if let Some(first) = results.first() {
        for (mi, (_, spectra)) in first.iter().enumerate() {
            for (ci, spectrum) in spectra.iter().enumerate() {
                examples.push((format!("{}{}", MODES[mi], CHANNELS[ci]), spectrum.clone()));
            }
        }
    }
    let peaks: Vec<Vec<SweepPeaks>> = results
        .into_iter()
        .map(|t| t.into_iter().map(|(p, _)| p).collect())
        .collect();
    let modes = MODES
        .iter()
        .enumerate()
        .map(|(mi, &m)| {
            let mut hist = [0usize; 4];
            let mut n = 0;
            for sweep in peaks.iter().flat_map(|t| &t[mi]) {
                for ch in sweep {
                    hist[ch.len().min(3)] += 1;
                    n += 1;
                }
            }
            PeakStats {
                mode: m.to_string(),
                n_scans: n,
                peak_count_histogram: hist,
            }
        })
        .collect();
    let distances = PAIRS
        .iter()
        .map(|&(x, y)| {
            let (mut u, mut v) = (Vec::new(), Vec::new());
            for t in &peaks {
                for (sx, sy) in t[x].iter().zip(&t[y]) {
                    if let ([px], [py]) = (sx[0].as_slice(), sy[1].as_slice()) {
                        u.push(px.frequency);
                        v.push(py.frequency);
                    }
                }
            }
            DistanceSummary {
                pair: pair_name(x, y),
                n_scans: u.len(),
                distance: correlation_distance(&u, &v).ok(),
            }
        })
        .collect();
    let summary = FastScanSummary {
        rbw_hz: scan.rbw,
        sweep_time_s: scan.sweep_time,
        modes,
        distances,
    };
    Ok((summary, examples))
}

/// Full analysis of in-memory data; returns the summary and the tables to
/// write, keyed by their path relative to the output directory.
pub fn analyze_data(cfg: &RunConfig, input: &AnalysisInput) -> Result<(Summary, Vec<(String, Table)>)> {
    cfg.validate()?;
    let n_traj = input.trajectories.len();
    if n_traj == 0 || input.demods.len() != n_traj || input.amplitudes.len() != n_traj {
        return Err(Error::Contract("analysis input must hold every trajectory".into()));
    }
    let dt = input.trajectories[0].traces[0].dt;
    let mut tables: Vec<(String, Table)> = Vec::new();
    let mut low_confidence = Vec::new();

    let bath = generate_bath(&cfg.bath_config(), &cfg.modes())?;
    let asymmetry = coupling_ratio_stats(&bath, "A", "B")?.fraction_ratio_gt_2;

    // zero-delay correlation matrix of the demodulated traces
    let channel = |ci: usize| -> Vec<ChannelTraces<'_, f64>> {
        MODES
            .iter()
            .enumerate()
            .map(|(mi, &m)| ChannelTraces {
                mode: m.to_string(),
                traces: input.demods.iter().map(|t| &t[mi][ci]).collect(),
            })
            .collect()
    };
    let (first, second) = (channel(0), channel(1));
    let matrix = correlation_matrix(&first, &second, lag_samples(cfg.analysis.max_lag_s, dt))?;
    let mut rho_table = Table::new("rho", &["pair", "rho0"]);
    for e in &matrix.entries {
        rho_table.push(vec![e.pair.clone(), e.zero_delay_normalized.to_string()]);
        tables.push((
            format!("analysis/correlation_{}.csv", e.pair),
            curve_table("correlation", &e.pair, e.dt, &e.curve.lags, &e.curve.c_of_tau),
        ));
    }
    tables.push(("analysis/rho_summary.csv".into(), rho_table));
    for m in &matrix.missing {
        low_confidence.push(format!("correlation {m}: no overlapping valid samples"));
    }
    let correlation = CorrelationSummary {
        pairs: matrix
            .entries
            .iter()
            .map(|e| PairSummary {
                pair: e.pair.clone(),
                rho0: e.zero_delay_normalized,
                c0_raw: e.raw_zero_delay,
                n_points: e.n_points_used,
            })
            .collect(),
        missing: matrix.missing.clone(),
        partial: matrix.is_partial(),
    };

    let mut valid_fraction = Vec::new();
    let mut histograms = Vec::new();
    let bw = cfg.analysis.bin_width_hz;
    let mut demod_means = [0.0; 2];
    for (mi, &m) in MODES.iter().enumerate() {
        for (ci, &ch) in CHANNELS.iter().enumerate() {
            let name = format!("{m}{ch}");
            let traces: Vec<&Demodulated<f64>> = input.demods.iter().map(|t| &t[mi][ci]).collect();
            let total: usize = traces.iter().map(|d| d.len()).sum();
            let valid: usize = traces.iter().map(|d| d.valid_count()).sum();
            valid_fraction.push(NamedValue {
                name: name.clone(),
                value: valid as f64 / total.max(1) as f64,
            });
            let values: Vec<f64> = traces.iter().flat_map(|d| d.values.iter().copied()).collect();
            match histogram_and_fwhm(&values, bw) {
                Ok(h) => {
                    if h.low_confidence {
                        low_confidence.push(format!("histogram {name}: {} valid samples", h.n_samples));
                    }
                    if ci == 0 {
                        demod_means[mi] = h.mean;
                    }
                    tables.push((format!("analysis/histogram_{name}.csv"), histogram_table(&h, &name)));
                    histograms.push(histogram_summary(&h, &name, cfg.analysis.volume_scale));
                }
                Err(Error::Empty(_)) => low_confidence.push(format!("histogram {name}: no valid samples")),
                Err(e) => return Err(e),
            }
        }
    }

    let filtered: Vec<Vec<Vec<f64>>> = input
        .trajectories
        .par_iter()
        .map(|t| t.traces.iter().map(|tr| filtered_shift(tr, cfg.detector.rbw_hz)).collect())
        .collect();
    let mut autocorrelation_time_s = Vec::new();
    for (mi, &m) in MODES.iter().enumerate() {
        let raw: Vec<f64> = input
            .trajectories
            .iter()
            .flat_map(|t| t.traces[mi].samples.iter().copied())
            .collect();
        let filt: Vec<f64> = filtered.iter().flat_map(|t| t[mi].iter().copied()).collect();
        for (name, samples) in [(format!("raw_{m}"), raw), (format!("filtered_{m}"), filt)] {
            let h = histogram_and_fwhm(&samples, bw)?;
            tables.push((format!("analysis/histogram_{name}.csv"), histogram_table(&h, &name)));
            histograms.push(histogram_summary(&h, &name, cfg.analysis.volume_scale));
        }
        let taus: Vec<f64> = input
            .trajectories
            .iter()
            .filter_map(|t| autocorrelation_time(&t.traces[mi].samples, dt, AUTOCORRELATION_MAX_LAG))
            .collect();
        autocorrelation_time_s.push(NamedValue {
            name: m.to_string(),
            value: if taus.is_empty() {
                f64::NAN
            } else {
                taus.iter().sum::<f64>() / taus.len() as f64
            },
        });
    }

    let scan = cfg.scan_spec();
    let mut psd = Vec::new();
    for (mi, &m) in MODES.iter().enumerate() {
        let shifts: Vec<&ShiftTrace<f64>> = input.trajectories.iter().map(|t| &t.traces[mi]).collect();
        let amps: Vec<&[f64]> = input.amplitudes.iter().map(|a| a[mi].as_slice()).collect();
        match averaged_psd(&shifts, &amps, &scan) {
            Ok(p) => {
                let mut t = Table::new("psd", &["f_hz", "power"])
                    .with_meta("mode", m)
                    .with_meta("rbw_hz", scan.rbw)
                    .with_meta("n_scans", p.n_scans);
                for (f, v) in p.spectrum.frequencies.iter().zip(&p.spectrum.power) {
                    t.push(vec![f.to_string(), v.to_string()]);
                }
                tables.push((format!("analysis/psd_{m}.csv"), t));
                psd.push(PsdSummary {
                    mode: m.to_string(),
                    fwhm_hz: p.fwhm,
                    linewidth_hz: p.linewidth,
                    center_hz: p.center,
                    n_scans: p.n_scans,
                    histogram_center_offset: (demod_means[mi] - p.center).abs() / p.fwhm,
                });
            }
            Err(Error::Empty(reason)) => low_confidence.push(format!("psd {m}: {reason}")),
            Err(e) => return Err(e),
        }
    }

    let mut monte_carlo = Vec::new();
    if n_traj >= 2 {
        let mc_lag = lag_samples(cfg.analysis.mc_max_lag_s, dt);
        let raw: Vec<Vec<&[f64]>> = (0..2)
            .map(|mi| input.trajectories.iter().map(|t| t.traces[mi].samples.as_slice()).collect())
            .collect();
        let filt: Vec<Vec<&[f64]>> = (0..2)
            .map(|mi| filtered.iter().map(|t| t[mi].as_slice()).collect())
            .collect();
        for &(x, y) in &PAIRS {
            let pair = pair_name(x, y);
            let f = mc_renormalized_correlation(&filt[x], &filt[y], mc_lag)?;
            let r = mc_renormalized_correlation(&raw[x], &raw[y], mc_lag)?;
            tables.push((
                format!("analysis/mc_{pair}.csv"),
                curve_table("mc", &pair, dt, &f.lags, &f.renormalized),
            ));
            tables.push((
                format!("analysis/mc_raw_{pair}.csv"),
                curve_table("mc", &pair, dt, &r.lags, &r.renormalized),
            ));
            monte_carlo.push(McSummary {
                pair,
                filtered_zero_delay: f.renormalized_at(0).expect("lag 0"),
                raw_zero_delay: r.renormalized_at(0).expect("lag 0"),
                cross_max_abs: f.cross_renormalized.iter().fold(0.0, |a, v| a.max(v.abs())),
                cross_pair_max_abs_zero_delay: f.cross_zero_delay.iter().fold(0.0, |a, v| a.max(v.abs())),
            });
        }
    } else {
        low_confidence.push("monte carlo renormalization needs at least two trajectories".into());
    }

    let (fast_scan, examples) = fast_scan_study(cfg, &input.trajectories, &input.amplitudes)?;
    for (name, spectrum) in &examples {
        let mut t = Table::new("scan", &["f_hz", "power"])
            .with_meta("channel", name)
            .with_meta("trajectory", 0)
            .with_meta("sweep", 0)
            .with_meta("rbw_hz", fast_scan.rbw_hz);
        for (f, v) in spectrum.frequencies.iter().zip(&spectrum.power) {
            t.push(vec![f.to_string(), v.to_string()]);
        }
        tables.push((format!("analysis/scan_{name}.csv"), t));
    }
    let detuning = cfg.detuning();
    let summary = Summary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        n_traj,
        temperature_k: cfg.rates.temperature_k,
        coupling_asymmetry_fraction: asymmetry,
        correlation,
        valid_fraction,
        histograms,
        psd,
        monte_carlo,
        autocorrelation_time_s,
        fast_scan,
        sensitivity: Sensitivity {
            offset_hz: SENSITIVITY_OFFSET_HZ,
            resonant: resonant_sensitivity(SENSITIVITY_OFFSET_HZ, cfg.detector.rbw_hz),
            detuned: detuned_sensitivity(SENSITIVITY_OFFSET_HZ, cfg.detector.rbw_hz, detuning),
        },
        low_confidence,
        sweep: None,
    };
    Ok((summary, tables))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    io::write_atomic(path, text.as_bytes())
}

pub fn analyze(cfg: &RunConfig, out: &Path, temperatures: Option<&[f64]>) -> Result<(Summary, StageOutcome)> {
    let start = Instant::now();
    let layout = Layout::new(out);
    cfg.validate()?;
    let input = AnalysisInput::load(cfg, &layout)?;
    let (mut summary, tables) = analyze_data(cfg, &input)?;
    drop(input);
    let mut written = Vec::new();
    for (rel, table) in &tables {
        let path = layout.root.join(rel);
        table.write(&path)?;
        written.push(path);
    }
    if let Some(temps) = temperatures {
        let report = temperature_sweep(cfg, temps)?;
        written.extend(write_sweep(&layout, &report)?);
        summary.sweep = Some(report);
    }
    write_json(&layout.summary(), &summary)?;
    written.push(layout.summary());
    let outcome = finish(&layout, cfg, "analyze", written, start)?;
    Ok((summary, outcome))
}

/// Filtered-shift histogram FWHM of both modes at each temperature. The bath
/// and every random stream are the same at all temperatures.
pub fn temperature_sweep(cfg: &RunConfig, temperatures: &[f64]) -> Result<SweepReport> {
    crate::config::validate_temperatures("temperatures", temperatures)?;
    cfg.validate()?;
    let modes = cfg.modes();
    let bath = generate_bath(&cfg.bath_config(), &modes)?;
    let n_traj = cfg.sweep.n_traj.unwrap_or(cfg.n_traj);
    let mut settings = cfg.trajectory_settings();
    if let Some(d) = cfg.sweep.duration_s {
        settings.duration = d;
    }
    let mut per_mode: Vec<(Vec<LinewidthResult<f64>>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); 2];
    for &t in temperatures {
        let rates = RateTable::thermal(&bath, cfg.rates.tau_down_s, t)?;
        let trajectories = simulate_trajectories(&bath, &modes, &rates, &settings, n_traj, cfg.seed)?;
        for (mi, (results, gauss)) in per_mode.iter_mut().enumerate() {
            let filt: Vec<f64> = trajectories
                .par_iter()
                .map(|tr| filtered_shift(&tr.traces[mi], cfg.detector.rbw_hz))
                .flatten_iter()
                .collect();
            let h = histogram_and_fwhm(&filt, cfg.analysis.bin_width_hz)?;
            results.push(LinewidthResult {
                fwhm: h.fwhm.fwhm,
                method: LinewidthMethod::Histogram,
                temperature: t,
            });
            gauss.push(h.gaussian_fwhm.fwhm);
        }
    }
    let modes = MODES
        .iter()
        .zip(per_mode)
        .map(|(&m, (results, gauss))| {
            let fit = power_law_fit(&results);
            let fwhm: Vec<f64> = results.iter().map(|r| r.fwhm).collect();
            SweepMode {
                mode: m.to_string(),
                strictly_decreasing: fwhm.windows(2).all(|w| w[1] < w[0]),
                exponent: fit.map_or(f64::NAN, |f| f.slope),
                exponent_stderr: fit.map_or(f64::NAN, |f| f.slope_stderr),
                fwhm_hz: fwhm,
                gaussian_fwhm_hz: gauss,
            }
        })
        .collect();
    Ok(SweepReport {
        temperatures_k: temperatures.to_vec(),
        n_traj,
        duration_s: settings.duration,
        modes,
    })
}

fn write_sweep(layout: &Layout, report: &SweepReport) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for m in &report.modes {
        let mut t = Table::new("sweep", &["temperature_k", "fwhm_hz"])
            .with_meta("mode", &m.mode)
            .with_meta("exponent", m.exponent);
        for (temp, f) in report.temperatures_k.iter().zip(&m.fwhm_hz) {
            t.push(vec![temp.to_string(), f.to_string()]);
        }
        let path = layout.analysis(&format!("sweep_{}.csv", m.mode));
        t.write(&path)?;
        written.push(path);
    }
    write_json(&layout.sweep_summary(), report)?;
    written.push(layout.sweep_summary());
    Ok(written)
}

pub fn sweep(cfg: &RunConfig, out: &Path, temperatures: &[f64]) -> Result<(SweepReport, StageOutcome)> {
    let start = Instant::now();
    let layout = Layout::new(out);
    let report = temperature_sweep(cfg, temperatures)?;
    let written = write_sweep(&layout, &report)?;
    let outcome = finish(&layout, cfg, "sweep", written, start)?;
    Ok((report, outcome))
}

/// Simulate, detect and analyze in sequence, each stage reading the previous one's files.
pub fn run_all(cfg: &RunConfig, out: &Path, temperatures: Option<&[f64]>) -> Result<Summary> {
    simulate(cfg, out)?;
    detect(cfg, out)?;
    Ok(analyze(cfg, out, temperatures)?.0)
}
