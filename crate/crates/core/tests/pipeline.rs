use std::fs;
use std::path::Path;

use tlsbath::config::RunConfig;
use tlsbath::io::TraceFormat;
use tlsbath::manifest::RunManifest;
use tlsbath::pipeline::{self, Layout};
use tlsbath::Error;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.bath.n_tls = 400;
    cfg.n_traj = 2;
    cfg.trace.duration_s = 1e-3;
    cfg.sweep.temperatures_k = vec![0.4, 1.6];
    cfg
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn stages_produce_reproducible_artifacts() {
    let cfg = small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let summary = pipeline::run_all(&cfg, a.path(), Some(&cfg.sweep.temperatures_k)).unwrap();
    pipeline::run_all(&cfg, b.path(), Some(&cfg.sweep.temperatures_k)).unwrap();
    assert_eq!(files(a.path()), files(b.path()));

    let layout = Layout::new(a.path());
    for name in ["rho_summary.csv", "correlation_AA.csv", "psd_A.csv", "mc_AB.csv", "sweep_B.csv"] {
        assert!(layout.analysis(name).exists(), "{name}");
    }
    assert!(layout.demod(1, "B", 3).exists());
    assert_eq!(summary.correlation.pairs.len(), 4);
    assert_eq!(summary.sweep.as_ref().unwrap().temperatures_k, vec![0.4, 1.6]);

    let manifest = RunManifest::load(a.path()).unwrap().unwrap();
    assert_eq!(manifest.config_hash, cfg.hash());
    assert!(manifest.artifacts.contains(&"summary.json".to_string()));
    for stage in ["simulate", "detect", "analyze"] {
        assert!(manifest.stage_wall_time_s.contains_key(stage));
    }
    let stored = RunConfig::load(&layout.config()).unwrap();
    assert_eq!(stored.hash(), cfg.hash());
}

#[test]
fn binary_traces_match_csv_results() {
    let mut cfg = small_config();
    let csv = tempfile::tempdir().unwrap();
    let bin = tempfile::tempdir().unwrap();
    pipeline::simulate(&cfg, csv.path()).unwrap();
    pipeline::detect(&cfg, csv.path()).unwrap();
    cfg.trace.format = TraceFormat::Bin;
    pipeline::simulate(&cfg, bin.path()).unwrap();
    pipeline::detect(&cfg, bin.path()).unwrap();
    let demod = |d: &Path| fs::read(Layout::new(d).demod(0, "A", 1)).unwrap();
    assert_eq!(demod(csv.path()), demod(bin.path()));
}

#[test]
fn missing_inputs_are_listed() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    match pipeline::detect(&cfg, dir.path()) {
        Err(Error::MissingArtifact { expected, .. }) => {
            assert_eq!(expected.len(), 4);
            assert!(expected.contains(&"traces/shift_t000_A.csv".to_string()));
        }
        other => panic!("expected a missing artifact error, got {other:?}"),
    }
    pipeline::simulate(&cfg, dir.path()).unwrap();
    assert!(matches!(
        pipeline::analyze(&cfg, dir.path(), None),
        Err(Error::MissingArtifact { .. })
    ));
}

#[test]
fn detection_is_independent_of_thread_count() {
    let cfg = small_config();
    let (_, trajectories) = pipeline::simulate_data(&cfg).unwrap();
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let one = serial.install(|| pipeline::detect_trajectory(&cfg, &trajectories[1]).unwrap());
    let many = pipeline::detect_trajectory(&cfg, &trajectories[1]).unwrap();
    // invalid samples are NaN, so compare representations
    assert!(format!("{one:?}") == format!("{many:?}"));
}

#[test]
fn staged_analysis_matches_in_memory_analysis() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    pipeline::simulate(&cfg, dir.path()).unwrap();
    pipeline::detect(&cfg, dir.path()).unwrap();
    let (staged, _) = pipeline::analyze(&cfg, dir.path(), None).unwrap();

    let (_, trajectories) = pipeline::simulate_data(&cfg).unwrap();
    let detections = trajectories
        .iter()
        .map(|t| pipeline::detect_trajectory(&cfg, t).unwrap())
        .collect();
    let input = pipeline::AnalysisInput::from_detections(trajectories, detections);
    let (direct, _) = pipeline::analyze_data(&cfg, &input).unwrap();
    let json = |s: &pipeline::Summary| serde_json::to_string(s).unwrap();
    assert_eq!(json(&staged), json(&direct));
}
