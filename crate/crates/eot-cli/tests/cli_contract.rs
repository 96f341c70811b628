//! Contract tests for the `eot` binary and the persistence helpers:
//! exit codes, artifact formats, and checkpoint round-trips.

use std::process::Command;

use eot_cli::runner::{
    atomic_write, load_checkpoint, results_csv, save_checkpoint, save_results, ResultRecord,
    RESULTS_HEADER,
};
use eot_core::nn::{init_network, Activation, InitScheme, NetworkConfig};
use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

fn eot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eot"))
}

#[test]
fn missing_config_file_exits_3() {
    let out = eot()
        .args(["train", "--config", "/definitely/not/here.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "experiment = \"toy2d\"\ndim = 3\nepsilon = 0.1\n").unwrap();
    let out = eot()
        .args(["train", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dim"), "stderr: {stderr}");
}

#[test]
fn oracle_check_runs_and_prints_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("oracle.toml");
    let out_dir = dir.path().join("out");
    std::fs::write(
        &path,
        format!(
            "experiment = \"oracle_check\"\ndim = 1\nepsilon = 1.0\noutput_dir = \"{}\"\n\
             [oracle]\ngrid_points = 120\n",
            out_dir.display()
        ),
    )
    .unwrap();
    let out = eot()
        .args(["oracle-check", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with(RESULTS_HEADER), "stdout: {stdout}");
    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert!(csv.starts_with(RESULTS_HEADER));
}

#[test]
fn sample_rejects_malformed_x() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.json");
    let net = small_net(7);
    save_checkpoint(&net, &ckpt).unwrap();
    let out = eot()
        .args(["sample", "--checkpoint", ckpt.to_str().unwrap(), "--x", "1.0,zzz", "--n", "3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sample_emits_n_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.json");
    save_checkpoint(&small_net(8), &ckpt).unwrap();
    let out = eot()
        .args([
            "sample",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--x",
            "0.5,-0.5",
            "--n",
            "5",
            "--steps",
            "20",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = stdout.trim().lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.split(',').count() == 2));
}

fn small_net(seed: u64) -> eot_core::nn::PotentialNetwork {
    init_network(&NetworkConfig {
        input_dim: 2,
        hidden_sizes: vec![8, 8],
        activation: Activation::Relu,
        init_scheme: InitScheme::UniformHe,
        seed,
    })
    .unwrap()
}

#[test]
fn checkpoint_roundtrip_identical_forward_on_probes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let net = small_net(42);
    save_checkpoint(&net, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let mut stream = eot_core::rng::substream(9, 0, 0);
    for _ in 0..100 {
        let y = DVector::from_fn(2, |_, _| {
            let z: f64 = StandardNormal.sample(&mut stream);
            z
        });
        // bit-exact round-trip implies bit-identical outputs
        assert_eq!(net.forward(&y).unwrap(), loaded.forward(&y).unwrap());
    }
}

#[test]
fn wrong_format_version_rejected_via_cli_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let mut value: serde_json::Value =
        serde_json::from_str(&small_net(1).to_checkpoint_json()).unwrap();
    value["format_version"] = serde_json::json!(2);
    let json = value.to_string();
    std::fs::write(&path, json).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(err.to_string().contains("format"), "{err}");
}

#[test]
fn results_csv_header_and_finiteness_guard() {
    let rec = ResultRecord {
        experiment: "g2g",
        epsilon: 1.0,
        dim: 2,
        metric: "bw_uvp".into(),
        value: 0.5,
        seconds: 1.0,
        seed: 3,
    };
    let csv = results_csv(std::slice::from_ref(&rec));
    assert!(csv.starts_with("experiment,epsilon,dim,metric,value,seconds,seed,build\n"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    save_results(std::slice::from_ref(&rec), &path).unwrap();
    assert!(std::fs::read_to_string(&path).unwrap().contains("bw_uvp,0.5"));

    let bad = ResultRecord { value: f64::NAN, metric: "broken".into(), ..rec };
    assert!(save_results(std::slice::from_ref(&bad), &path).is_err());
}

#[test]
fn atomic_write_leaves_no_temp_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("file.txt");
    atomic_write(&path, "hello").unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "hello");
    let entries: Vec<_> = std::fs::read_dir(path.parent().unwrap())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(entries, vec!["file.txt"]);
}
