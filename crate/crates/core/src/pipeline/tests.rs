use std::path::Path;

use super::demo::{write_demo_dataset, DemoConfig};
use super::*;
use crate::error::HintError;
use crate::ingest::{CovariateKind, DesignSpec};

fn config(data: &Path, out: &Path) -> PipelineConfig {
    let mut design = DesignSpec::default();
    design.reference_overrides.insert("group".into(), "Ctrl".into());
    design.type_overrides.insert("group".into(), CovariateKind::Categorical);
    PipelineConfig {
        datadir: data.into(),
        outdir: out.into(),
        q: 3,
        n: 24,
        number_of_pcs: 5,
        maskf: "mask.nii".into(),
        covf: "covariates.csv".into(),
        prefix: "demo".into(),
        maxit: 15,
        design,
        ..PipelineConfig::default()
    }
}

#[test]
fn full_run_open_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ds = write_demo_dataset(&data, &DemoConfig::default()).unwrap();
    let cfg = config(&data, &dir.path().join("out"));
    let a = run_analysis(&cfg, RunHooks::default()).unwrap();
    assert_eq!(a.run.x, ds.design);
    assert_eq!(a.run.var_names_x.len(), 3);
    let maps = std::fs::read_dir(a.layout.map_dir()).unwrap().count();
    assert_eq!(maps, 3 * (1 + 3 + 3 + 1));
    let b = Analysis::open(&a.layout.root).unwrap();
    assert_eq!(b.fitted, a.fitted);
    assert_eq!(b.state, a.state);

    let snaps = a.layout.snapshots().unwrap();
    assert_eq!(snaps[0].0, 0);
    if a.state.iteration > 10 {
        let from = a.layout.snapshot(10);
        let c = resume_analysis(&a.layout.root, Some(&from), None, RunHooks::default()).unwrap();
        assert_eq!(c.state, a.state);
        assert_eq!(c.fitted, a.fitted);
    }
}

#[test]
fn subject_count_is_checked_before_reading_volumes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_demo_dataset(&data, &DemoConfig::default()).unwrap();
    for f in std::fs::read_dir(&data).unwrap() {
        let p = f.unwrap().path();
        if p.file_name().unwrap().to_str().unwrap().starts_with("sub") {
            std::fs::remove_file(p).unwrap();
        }
    }
    let mut cfg = config(&data, &dir.path().join("out"));
    cfg.n = 23;
    assert!(matches!(prepare(&cfg), Err(HintError::InvalidArgument(_))));
}

#[test]
fn external_data_payload() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_demo_dataset(
        &data,
        &DemoConfig {
            n_subjects: 8,
            ..DemoConfig::default()
        },
    )
    .unwrap();
    let mut cfg = config(&data, &dir.path().join("out"));
    cfg.n = 8;
    cfg.maxit = 2;
    cfg.embed_data = false;
    let a = run_analysis(&cfg, RunHooks::default()).unwrap();
    let opened = Analysis::open(&a.layout.root).unwrap();
    let y = opened.data().unwrap();
    assert_eq!(y.n_subjects(), 8);
    let ext = a.layout.root.join("demo_YtildeStar.f64");
    let mut bytes = std::fs::read(&ext).unwrap();
    bytes[3] ^= 0x10;
    std::fs::write(&ext, bytes).unwrap();
    assert!(matches!(opened.data(), Err(HintError::Checksum(_))));
}
