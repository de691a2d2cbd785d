//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if a criterion fails that
//! is not listed in `DOCUMENTED_DEVIATIONS`.

use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;
use tlsbath::analysis::autocorrelation_time;
use tlsbath::bath::{coupling_ratio_stats, generate_bath, BathConfig, Tls, TlsBath};
use tlsbath::config::RunConfig;
use tlsbath::detector::{
    demodulate_with_mask, detuned_sensitivity, resonant_sensitivity, synth_thermal_amplitude,
    synth_zero_span, AmplitudeModel, CommonMode, DetectorChain, FilterSpec,
};
use tlsbath::dynamics::{
    choose_timestep, sample_steady_state, simulate_trajectories, steady_state_occupancy, step_bath,
    trajectory_rng, RateTable, ShiftTrace, TrajectorySettings, TrajectoryTraces, DEFAULT_P_MAX,
};
use tlsbath::pipeline::{
    analyze_data, detect_trajectory, fast_scan_study, simulate_data, temperature_sweep, AnalysisInput,
    Summary, CHANNELS, MODES,
};
use tlsbath::seed::{child_rng, Stage};
use tlsbath::stats::{ks_p_value, ks_statistic};

/// Criteria that fail for reasons analyzed in the decisions ledger. They are
/// still run and reported as FAIL.
const DOCUMENTED_DEVIATIONS: &[u32] = &[7, 8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

struct PipelineRun {
    summary: Summary,
    wall_time_s: f64,
}

fn run_pipeline(cfg: &RunConfig) -> PipelineRun {
    let start = Instant::now();
    let (_, trajectories) = simulate_data(cfg).expect("simulate");
    let detections = trajectories
        .par_iter()
        .map(|t| detect_trajectory(cfg, t))
        .collect::<tlsbath::Result<Vec<_>>>()
        .expect("detect");
    let input = AnalysisInput::from_detections(trajectories, detections);
    let (summary, _) = analyze_data(cfg, &input).expect("analyze");
    PipelineRun {
        summary,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

fn default_run() -> &'static PipelineRun {
    static RUN: OnceLock<PipelineRun> = OnceLock::new();
    RUN.get_or_init(|| run_pipeline(&RunConfig::default()))
}

fn reduced_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.bath.n_tls = 1200;
    cfg.trace.duration_s = 1e-3;
    cfg.n_traj = 3;
    cfg
}

/// Reduced bath observed for long enough to sample the slow amplitude
/// statistics and many slow sweeps.
fn long_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.bath.n_tls = 1200;
    cfg.trace.duration_s = 0.3;
    cfg.n_traj = 2;
    cfg
}

fn long_trajectories() -> &'static Vec<TrajectoryTraces<f64>> {
    static DATA: OnceLock<Vec<TrajectoryTraces<f64>>> = OnceLock::new();
    DATA.get_or_init(|| simulate_data(&long_config()).expect("simulate").1)
}

fn handcrafted_bath(freqs: &[f64], couplings: &[[f64; 2]]) -> TlsBath<f64> {
    let modes = RunConfig::default().modes();
    let mut config = BathConfig::new(freqs.len(), 0.5e9, 20e9, 100e3, 0);
    config.guard_band = 1e6;
    let tls = freqs
        .iter()
        .zip(couplings)
        .enumerate()
        .map(|(i, (&nu, g))| Tls {
            nu,
            x: i as f64 / freqs.len() as f64,
            couplings: g.to_vec(),
        })
        .collect();
    TlsBath::from_parts(config, modes, vec![0.0, 0.0], tls).expect("valid bath")
}

fn criterion_1() -> Outcome {
    let cfg = RunConfig::default();
    let start = Instant::now();
    let bath = generate_bath(&cfg.bath_config(), &cfg.modes()).unwrap();
    let fraction = coupling_ratio_stats(&bath, "A", "B").unwrap().fraction_ratio_gt_2;
    let t = start.elapsed().as_secs_f64();
    outcome(
        within(fraction, 0.30, 0.50) && t < 10.0,
        format!("fraction with ratio > 2 or < 0.5 = {fraction:.4} (target [0.30, 0.50]), {t:.2} s"),
    )
}

fn criterion_2() -> Outcome {
    let temperature = 1.0;
    let tau_down = 1e-6;
    let freqs = [1e9, 5e9, 15e9];
    let mut pass = true;
    let mut parts = Vec::new();

    // Default step: consecutive states are correlated with coefficient
    // r = 1 - p_up - p_down, which widens the binomial spread by (1 + r)/(1 - r).
    let bath = handcrafted_bath(&freqs, &[[0.0; 2]; 3]);
    let rates = RateTable::thermal(&bath, tau_down, temperature).unwrap();
    let dt = choose_timestep(&rates, DEFAULT_P_MAX).unwrap();
    let steps = 1_000_000;
    let mut rng = child_rng(2, Stage::Dynamics, 0, 0);
    let mut state = sample_steady_state(&rates, &mut rng);
    let mut counts = [0u64; 3];
    for _ in 0..steps {
        step_bath(&mut state, &rates, dt, &mut rng).unwrap();
        for (c, &e) in counts.iter_mut().zip(&state.excited) {
            *c += e as u64;
        }
    }
    for (i, &nu) in freqs.iter().enumerate() {
        let p = steady_state_occupancy(nu, temperature);
        let r = 1.0 - dt * (rates.gamma_down + rates.gamma_up[i]);
        let sigma = (p * (1.0 - p) / steps as f64 * (1.0 + r) / (1.0 - r)).sqrt();
        let measured = counts[i] as f64 / steps as f64;
        let z = (measured - p) / sigma;
        pass &= z.abs() <= 3.0;
        parts.push(format!("{:.0} GHz: {measured:.5} vs {p:.5} ({z:+.2} sigma)", nu / 1e9));
    }

    // Step of 1 / (gamma_up + gamma_down): consecutive states are independent
    // and the plain binomial spread applies.
    for (i, &nu) in freqs.iter().enumerate() {
        let bath = handcrafted_bath(&[nu], &[[0.0; 2]]);
        let rates = RateTable::thermal(&bath, tau_down, temperature).unwrap();
        let dt = 1.0 / (rates.gamma_down + rates.gamma_up[0]);
        let steps = 100_000;
        let mut rng = child_rng(2, Stage::Dynamics, 1, i as u64);
        let mut state = sample_steady_state(&rates, &mut rng);
        let mut count = 0u64;
        for _ in 0..steps {
            step_bath(&mut state, &rates, dt, &mut rng).unwrap();
            count += state.excited[0] as u64;
        }
        let p = steady_state_occupancy(nu, temperature);
        let sigma = (p * (1.0 - p) / steps as f64).sqrt();
        let z = (count as f64 / steps as f64 - p) / sigma;
        pass &= z.abs() <= 3.0;
        parts.push(format!("{:.0} GHz decorrelated: {z:+.2} sigma", nu / 1e9));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_3() -> Outcome {
    let freqs = [4.80e9, 4.83e9, 4.845e9, 4.846e9, 4.849e9, 4.855e9, 4.868e9, 4.872e9, 4.9e9, 5.2e9];
    let couplings: Vec<[f64; 2]> = (0..10)
        .map(|i| [40e3 + 13e3 * i as f64, 150e3 - 11e3 * i as f64])
        .collect();
    let bath = handcrafted_bath(&freqs, &couplings);
    let rates = RateTable::thermal(&bath, 1e-6, 0.2).unwrap();
    let dt = choose_timestep(&rates, DEFAULT_P_MAX).unwrap();
    let mut settings = TrajectorySettings::new(5000.0 * dt);
    settings.dt_rec = dt;
    let seed = 3;
    let traces = simulate_trajectories(&bath, &bath.modes, &rates, &settings, 1, seed).unwrap();

    let mut rng = trajectory_rng(seed, 0);
    let mut state = sample_steady_state(&rates, &mut rng);
    let n = traces[0].traces[0].len();
    let mut mismatches = 0;
    let mut flips = 0;
    let mut previous = state.excited.clone();
    for j in 0..n {
        for (mi, mode) in bath.modes.iter().enumerate() {
            let mut brute = 0.0;
            for (tls, &e) in bath.tls.iter().zip(&state.excited) {
                if e {
                    let g = tls.couplings[mi];
                    brute += g * g / (mode.nu - tls.nu);
                }
            }
            if brute.to_bits() != traces[0].traces[mi].samples[j].to_bits() {
                mismatches += 1;
            }
        }
        step_bath(&mut state, &rates, dt, &mut rng).unwrap();
        flips += state.excited.iter().zip(&previous).filter(|(a, b)| a != b).count();
        previous.clone_from(&state.excited);
    }
    outcome(
        mismatches == 0 && flips > 100,
        format!("{n} steps x 2 modes, {flips} flips, {mismatches} mismatching samples"),
    )
}

fn criterion_4() -> Outcome {
    let rbw = 200e3;
    let detuning = -rbw / 2.0;
    let dt = 250e-9;
    let n = 400;
    let model = AmplitudeModel::new(1e-3, 1.0);
    let mut rng = child_rng(4, Stage::Amplitude, 0, 0);
    let fluctuating = synth_thermal_amplitude(n as f64 * dt, dt, &model, &mut rng).unwrap();
    let scaled: Vec<f64> = fluctuating.iter().map(|a| 7.3 * a).collect();
    let flat = vec![1.0; n];
    let res = DetectorChain::noiseless(FilterSpec::resonant(rbw), 0);
    let det = DetectorChain::noiseless(FilterSpec { rbw, center_detuning: detuning }, 0);
    let round_trip = |shift: &ShiftTrace<f64>, amp: &[f64]| {
        let p_det = synth_zero_span(shift, amp, &det, &CommonMode::Off, None).unwrap();
        let p_res = synth_zero_span(shift, amp, &res, &CommonMode::Off, None).unwrap();
        demodulate_with_mask(&p_det, &p_res, rbw, detuning, 0.0, dt).unwrap()
    };
    let trace = |samples: Vec<f64>| ShiftTrace {
        mode: "A".into(),
        dt,
        samples,
        trajectory_id: 0,
        seed: 0,
    };

    let mut max_err: f64 = 0.0;
    let mut max_amp_diff: f64 = 0.0;
    for i in 0..=40 {
        let delta = -rbw / 4.0 + rbw / 2.0 * i as f64 / 40.0;
        let shift = trace(vec![delta; n]);
        let a = round_trip(&shift, &fluctuating);
        let b = round_trip(&shift, &flat);
        for (x, y) in a.values.iter().zip(&b.values) {
            max_err = max_err.max((x - delta).abs());
            max_amp_diff = max_amp_diff.max((x - y).abs());
        }
    }
    // slowly varying shift, read away from the kernel edges
    let sine: Vec<f64> = (0..n)
        .map(|j| rbw / 4.0 * (std::f64::consts::TAU * j as f64 / n as f64).sin())
        .collect();
    let shift = trace(sine.clone());
    let a = round_trip(&shift, &fluctuating);
    let b = round_trip(&shift, &scaled);
    let edge = 40;
    let sine_err = (edge..n - edge)
        .map(|j| (a.values[j] - sine[j]).abs())
        .fold(0.0, f64::max);
    let scale_diff = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let max_err = max_err.max(sine_err);
    outcome(
        max_err < 0.01 * rbw && max_amp_diff < 1e-9 && scale_diff < 1e-9,
        format!(
            "max error {:.3e} of RBW, amplitude-fluctuation difference {max_amp_diff:.1e} Hz, \
             amplitude-scale difference {scale_diff:.1e} Hz",
            max_err / rbw
        ),
    )
}

fn criterion_5() -> Outcome {
    let rbw = 200e3;
    let s: f64 = resonant_sensitivity(10e3, rbw);
    let d = detuned_sensitivity(10e3, rbw, -rbw / 2.0);
    outcome(
        (s - 0.0069).abs() <= 0.0001,
        format!("resonant 1 - G(10 kHz)/G(0) = {s:.5}; detuned chain relative change = {d:.4}"),
    )
}

fn correlation_pattern(s: &Summary) -> (bool, String) {
    let r = |p: &str| s.rho(p).unwrap_or(f64::NAN);
    let pass = r("AA") > 0.8 && r("BB") > 0.8 && r("AB").abs() < 0.15 && r("BA").abs() < 0.15;
    let detail = format!(
        "AA {:.3}, AB {:.3}, BA {:.3}, BB {:.3}",
        r("AA"),
        r("AB"),
        r("BA"),
        r("BB")
    );
    (pass, detail)
}

fn criterion_6() -> Outcome {
    let full = default_run();
    let (full_pass, full_detail) = correlation_pattern(&full.summary);
    let reduced = run_pipeline(&reduced_config());
    let (reduced_pass, reduced_detail) = correlation_pattern(&reduced.summary);
    outcome(
        full_pass && full.wall_time_s < 1800.0 && reduced_pass && reduced.wall_time_s < 120.0,
        format!(
            "default: {full_detail} ({:.0} s); reduced: {reduced_detail} ({:.1} s)",
            full.wall_time_s, reduced.wall_time_s
        ),
    )
}

fn criterion_7() -> Outcome {
    let s = &default_run().summary;
    let fwhm = |m: &str| s.histogram(&format!("filtered_{m}")).map_or(f64::NAN, |h| h.fwhm_hz);
    let (a, b) = (fwhm("A"), fwhm("B"));
    outcome(
        within(a, 2.5e3, 10e3) && within(b, 2.5e3, 10e3),
        format!("filtered-shift FWHM A {:.2} kHz, B {:.2} kHz (target [2.5, 10] kHz)", a / 1e3, b / 1e3),
    )
}

fn criterion_8() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.sweep.n_traj = Some(4);
    let temps = cfg.sweep.temperatures_k.clone();
    let report = temperature_sweep(&cfg, &temps).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for m in &report.modes {
        pass &= m.strictly_decreasing && within(m.exponent, -0.7, -0.3);
        let fwhm: Vec<String> = m.fwhm_hz.iter().map(|f| format!("{:.2}", f / 1e3)).collect();
        parts.push(format!(
            "{}: FWHM [{}] kHz, slope {:.3}, decreasing {}",
            m.mode,
            fwhm.join(", "),
            m.exponent,
            m.strictly_decreasing
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let s = &default_run().summary;
    let cross = s.monte_carlo.iter().map(|m| m.cross_max_abs).fold(0.0, f64::max);
    let pair_scatter = s
        .monte_carlo
        .iter()
        .map(|m| m.cross_pair_max_abs_zero_delay)
        .fold(0.0, f64::max);
    let aa = s.monte_carlo("AA").map_or(f64::NAN, |m| m.filtered_zero_delay);
    let ab = s.monte_carlo("AB").map_or(f64::NAN, |m| m.filtered_zero_delay);
    let bb = s.monte_carlo("BB").map_or(f64::NAN, |m| m.filtered_zero_delay);
    outcome(
        cross <= 0.05 && aa >= 10.0 * ab.abs(),
        format!(
            "cross-trajectory curve max |value| {cross:.1e} (single pairs up to {pair_scatter:.4}); \
             AA {aa:.4}, AB {ab:.5}, BB {bb:.4}, AA/|AB| {:.1}",
            aa / ab.abs()
        ),
    )
}

fn criterion_10() -> Outcome {
    let s = &default_run().summary;
    let tau = |m: &str| s.autocorrelation_time(m).unwrap_or(f64::NAN);
    let (a, b) = (tau("A"), tau("B"));
    outcome(
        within(a, 250e-9, 1000e-9) && within(b, 250e-9, 1000e-9),
        format!("1/e time A {:.0} ns, B {:.0} ns (target [250, 1000] ns)", a * 1e9, b * 1e9),
    )
}

fn criterion_11() -> Outcome {
    let t1 = 1e-3;
    let model = AmplitudeModel::new(t1, 1.0);
    let dt = t1 / 20.0;

    // 10^6 samples spaced by 10 t1 along simulated paths
    let chunks = 1000;
    let per_chunk = 1000;
    let thin = 200;
    let samples: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = child_rng(11, Stage::Amplitude, c, 0);
            let p = synth_thermal_amplitude((per_chunk * thin) as f64 * dt, dt, &model, &mut rng).unwrap();
            p.into_iter().step_by(thin).collect::<Vec<_>>()
        })
        .collect();
    let d = ks_statistic(&samples, |x| 1.0 - (-x).exp());
    let p_value = ks_p_value(d, samples.len());

    let taus: Vec<f64> = (0..20)
        .into_par_iter()
        .map(|c| {
            let mut rng = child_rng(11, Stage::Amplitude, 10_000 + c, 0);
            let p = synth_thermal_amplitude(1000.0 * t1, dt, &model, &mut rng).unwrap();
            autocorrelation_time(&p, dt, 200).unwrap()
        })
        .collect();
    let tau = taus.iter().sum::<f64>() / taus.len() as f64;
    outcome(
        p_value > 0.01 && (tau / t1 - 1.0).abs() <= 0.2,
        format!(
            "KS D = {d:.2e} over {} samples, p = {p_value:.3}; power correlation time {:.3} ms (analytic {:.3} ms)",
            samples.len(),
            tau * 1e3,
            t1 * 1e3
        ),
    )
}

fn criterion_12() -> Outcome {
    let trajectories = long_trajectories();
    let mut pass = true;
    let mut parts = Vec::new();
    for snr in [10.0, 5.0] {
        let mut cfg = long_config();
        cfg.detector.snr_a = snr;
        cfg.detector.snr_b = snr;
        let mut valid = [[0usize; 2]; 2];
        let mut total = 0;
        for traj in trajectories {
            let det = detect_trajectory(&cfg, traj).unwrap();
            for (mi, m) in det.modes.iter().enumerate() {
                for (v, d) in valid[mi].iter_mut().zip(&m.demod) {
                    *v += d.valid_count();
                }
            }
            total += det.modes[0].demod[0].len();
        }
        let mut fractions = Vec::new();
        for (mi, mode) in MODES.iter().enumerate() {
            for (ci, ch) in CHANNELS.iter().enumerate() {
                let f = valid[mi][ci] as f64 / total as f64;
                pass &= within(f, 0.5, 0.85);
                fractions.push(format!("{mode}{ch} {f:.3}"));
            }
        }
        parts.push(format!("SNR {snr}: {}", fractions.join(", ")));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_13() -> Outcome {
    let mut cfg = long_config();
    cfg.scan.rbw_hz = 1e3;
    let trajectories = long_trajectories();
    let amplitudes: Vec<Vec<Vec<f64>>> = trajectories
        .iter()
        .map(|t| detect_trajectory(&cfg, t).unwrap().modes.into_iter().map(|m| m.amplitude).collect())
        .collect();
    let (slow, _) = fast_scan_study(&cfg, trajectories, &amplitudes).unwrap();
    let multi = slow.pooled_fraction(|n| n >= 2);

    let fast = &default_run().summary.fast_scan;
    let single = fast.pooled_fraction(|n| n == 1);
    let dist = |p: &str| fast.distance(p).unwrap_or(f64::NAN);
    let pass = multi > 0.5
        && single > 0.5
        && dist("AA") <= 0.25
        && dist("BB") <= 0.25
        && within(dist("AB"), 0.75, 1.25)
        && within(dist("BA"), 0.75, 1.25);
    let per_mode = |s: &tlsbath::pipeline::FastScanSummary, f: &dyn Fn(usize) -> bool| {
        s.modes
            .iter()
            .map(|m| format!("{} {:.2}", m.mode, m.fraction_with(f)))
            .collect::<Vec<_>>()
            .join(", ")
    };
    outcome(
        pass,
        format!(
            "1 kHz: >=2 peaks in {multi:.2} of {} sweeps ({}); 10 kHz: one peak in {single:.2} of {} sweeps ({}); \
             distance AA {:.3}, AB {:.3}, BA {:.3}, BB {:.3}",
            slow.modes.iter().map(|m| m.n_scans).sum::<usize>(),
            per_mode(&slow, &|n| n >= 2),
            fast.modes.iter().map(|m| m.n_scans).sum::<usize>(),
            per_mode(fast, &|n| n == 1),
            dist("AA"),
            dist("AB"),
            dist("BA"),
            dist("BB"),
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 13] = [
        (1, "coupling asymmetry", criterion_1),
        (2, "thermal occupancy", criterion_2),
        (3, "dispersive-shift oracle", criterion_3),
        (4, "demodulation round trip", criterion_4),
        (5, "filter sensitivity", criterion_5),
        (6, "correlation pattern", criterion_6),
        (7, "histogram width", criterion_7),
        (8, "temperature trend", criterion_8),
        (9, "monte carlo renormalization", criterion_9),
        (10, "jump timescale", criterion_10),
        (11, "thermal amplitude model", criterion_11),
        (12, "validity fraction", criterion_12),
        (13, "fast-scan behavior", criterion_13),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && DOCUMENTED_DEVIATIONS.contains(&id) {
            " [documented deviation]"
        } else {
            ""
        };
        println!(
            "criterion {id:>2} {verdict}{note}: {name}: {} [{:.1} s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass && !DOCUMENTED_DEVIATIONS.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("undocumented failures: {unexpected:?}");
        std::process::exit(1);
    }
}
