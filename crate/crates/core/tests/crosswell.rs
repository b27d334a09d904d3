use std::path::PathBuf;

use nalgebra::DMatrix;

use hikf::config::{load_config, validate_config, ExperimentConfig};
use hikf::experiment::{build_scenario, run_config};
use hikf::fmm::FmmTree;
use hikf::kernel::dense_gram;

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn shipped_configs_are_valid() {
    for name in ["crosswell.toml", "crosswell_small.toml"] {
        let path = shipped(name);
        assert_eq!(validate_config(&path).unwrap(), vec![], "{name}");
    }
    let cfg = load_config(&shipped("crosswell.toml")).unwrap();
    let mut expected = ExperimentConfig::crosswell_benchmark();
    expected.output.dir = cfg.output.dir.clone();
    assert_eq!(cfg, expected);
}

#[test]
fn json_encoding_of_shipped_config_is_valid() {
    let cfg = load_config(&shipped("crosswell.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("crosswell.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    assert_eq!(validate_config(&path).unwrap(), vec![]);
    assert_eq!(load_config(&path).unwrap(), cfg);
}

#[test]
fn benchmark_cross_covariance_columns_match_dense() {
    let cfg = ExperimentConfig::crosswell_benchmark();
    let sc = build_scenario(&cfg, None).unwrap();
    let points = sc.grid.cell_centers();
    let ht = sc.h.matrix().to_dense().transpose();
    assert_eq!(ht.ncols(), 288);
    let tree = FmmTree::build(&points, cfg.kernel, cfg.fmm).unwrap();
    let fast = tree.matmat(&ht).unwrap();
    let exact: DMatrix<f64> = dense_gram(&cfg.kernel, points.points()) * &ht;
    let mut worst = 0.0f64;
    for j in 0..288 {
        let err = (fast.column(j) - exact.column(j)).norm() / exact.column(j).norm();
        worst = worst.max(err);
    }
    assert!(worst <= 1e-7, "worst column error {worst:.3e}");
}

#[test]
fn benchmark_hikf_tracks_kf_every_step() {
    let mut cfg = ExperimentConfig::crosswell_benchmark();
    let dir = tempfile::tempdir().unwrap();
    cfg.output.dir = dir.path().to_path_buf();
    cfg.output.snapshots = false;
    let report = run_config(&cfg, None).unwrap();
    let steps = &report.filter("hikf").unwrap().steps;
    assert_eq!(steps.len(), 41);
    for s in steps {
        let e = s.error_vs_kf.unwrap();
        assert!(e <= 1e-6, "step {}: {e:.3e}", s.step);
    }
    assert!(dir.path().join("metrics.csv").exists());
    assert!(dir.path().join("summary.json").exists());
}
