use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hint_core::inference::{contrast_test, ContrastSpec};
use hint_core::ingest::{apply_mask, read_nifti_volume};
use hint_core::persistence::{read_snapshot, ContainerReader};
use hint_core::pipeline::Analysis;
use serde_json::Value;

fn hint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hint")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let err = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(err.lines().last().unwrap()).unwrap()
}

struct Study {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    out: PathBuf,
}

fn synth(n: usize) -> Study {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    let n = n.to_string();
    stdout_json(&hint(&["synth", data.to_str().unwrap(), "--subjects", &n]));
    Study { _tmp: tmp, data, out }
}

fn run_args<'a>(s: &'a Study, n: &'a str, prefix: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "run",
        "--datadir",
        s.data.to_str().unwrap(),
        "--outdir",
        s.out.to_str().unwrap(),
        "--q",
        "3",
        "--N",
        n,
        "--numberOfPCs",
        "5",
        "--maskf",
        "mask.nii",
        "--covf",
        "covariates.csv",
        "--prefix",
        prefix,
        "--categorical",
        "group",
        "--reference",
        "group=Ctrl",
    ];
    v.extend_from_slice(extra);
    v
}

fn analysis_dir(out: &Value) -> PathBuf {
    PathBuf::from(out["analysis"].as_str().unwrap())
}

fn masked(path: &Path, a: &Analysis) -> Vec<f64> {
    let vol = read_nifti_volume(path).unwrap();
    apply_mask(&vol, &a.mask).unwrap().row(0).iter().copied().collect()
}

#[test]
fn end_to_end_run_contrast_and_subpop() {
    let s = synth(24);
    let out = hint(&run_args(&s, "24", "demo", &["--maxit", "15", "--threads", "2"]));
    let summary = stdout_json(&out);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.lines().next().unwrap().starts_with("iter=1 dG="), "{err}");
    let dir = analysis_dir(&summary);
    let a = Analysis::open(&dir).unwrap();
    for kind in ["S0", "Beta1", "Beta2", "Beta3", "SE1", "SE2", "SE3", "Aggregate"] {
        for ic in 0..3 {
            assert!(a.layout.map(kind, ic).is_file(), "{kind} IC{}", ic + 1);
        }
    }

    let c = stdout_json(&hint(&["contrast", dir.to_str().unwrap(), "--lambda", "30,1,0", "--name", "c1"]));
    assert_eq!(c["contrast"]["lambda"], serde_json::json!([30.0, 1.0, 0.0]));
    let lib = contrast_test(&a.fitted, &ContrastSpec::new(vec![30.0, 1.0, 0.0], "c1"), a.config.variance).unwrap();
    let mut r = ContainerReader::open(&a.layout.map_dir().join("demo_c1.hint"), "contrast").unwrap();
    for (name, maps) in [("Est", &lib.estimate), ("SE", &lib.standard_error), ("Z", &lib.z), ("P", &lib.p)] {
        let arr = r.array(name).unwrap();
        assert_eq!(arr.nrows(), 3);
        for (l, m) in maps.iter().enumerate() {
            for (v, &x) in m.values.iter().enumerate() {
                assert_eq!(arr[(l, v)].to_bits(), x.to_bits(), "{name} IC{} voxel {v}", l + 1);
            }
        }
    }
    let z = masked(&a.layout.map("c1-Z", 1), &a);
    for (v, &x) in z.iter().enumerate() {
        assert_eq!(x as f32, lib.z[1].values[v] as f32);
    }

    stdout_json(&hint(&["subpop", dir.to_str().unwrap(), "--x", "0,0,0", "--name", "Zero"]));
    for ic in 0..3 {
        assert_eq!(masked(&a.layout.map("Zero", ic), &a), masked(&a.layout.map("S0", ic), &a));
    }

    let bad = hint(&["contrast", dir.to_str().unwrap(), "--lambda", "1,0"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(stderr_json(&bad)["class"], "usage");
}

#[test]
fn subject_count_mismatch_fails_before_compute() {
    let s = synth(6);
    let out = hint(&run_args(&s, "5", "demo", &[]));
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "invalid-argument");
    assert!(e["message"].as_str().unwrap().contains("N = 5"));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("iter="));
    assert!(!s.out.join("demo").exists());
}

#[test]
fn missing_analysis_directory_is_a_data_error() {
    let out = hint(&["export", "/nonexistent/analysis"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["class"], "data");
    let out = hint(&["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["class"], "usage");
}

#[test]
fn single_iteration_and_config_precedence() {
    let s = synth(8);
    let cfg = s.out.with_file_name("cfg.json");
    std::fs::write(&cfg, r#"{"maxit": 3, "seed": 5}"#).unwrap();
    let out = hint(&run_args(&s, "8", "one", &["--config", cfg.to_str().unwrap(), "--maxit", "1"]));
    let summary = stdout_json(&out);
    assert_eq!(summary["iterations"], 1);
    assert_eq!(summary["termination"], "max-iterations");
    let progress = String::from_utf8_lossy(&out.stderr).lines().filter(|l| l.starts_with("iter=")).count();
    assert_eq!(progress, 1);
    let a = Analysis::open(&analysis_dir(&summary)).unwrap();
    assert_eq!(a.config.seed, 5);
    assert_eq!(a.config.maxit, 1);
}

#[test]
fn resume_matches_an_unbroken_run() {
    let s = synth(8);
    let eps = ["--epsilon1", "1e-12", "--epsilon2", "1e-12", "--snapshot-every", "3"];
    let full = stdout_json(&hint(&run_args(&s, "8", "full", &[&["--maxit", "9"], &eps[..]].concat())));
    let part = stdout_json(&hint(&run_args(&s, "8", "part", &[&["--maxit", "5"], &eps[..]].concat())));
    let part_dir = analysis_dir(&part);
    let snap = part_dir.join("snapshots").join("iter_00003.hint");
    assert!(snap.is_file());
    let resumed = stdout_json(&hint(&[
        "resume",
        part_dir.to_str().unwrap(),
        "--snapshot",
        snap.to_str().unwrap(),
        "--maxit",
        "9",
    ]));
    assert_eq!(resumed["iterations"], 9);
    let a = read_snapshot::<f64>(&analysis_dir(&full).join("full_final.hint")).unwrap();
    let b = read_snapshot::<f64>(&part_dir.join("part_final.hint")).unwrap();
    assert_eq!(a.state.params, b.state.params);
    assert_eq!(a.state.history, b.state.history);
    assert_eq!(a.fitted, b.fitted);
}
