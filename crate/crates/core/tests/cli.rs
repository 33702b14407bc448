use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use calpsc::config::DatasetProfile;
use calpsc::geom::{VoxelGridSpec, VoxelIndex};
use calpsc::io::{
    read_gt_grid, read_pseudo_labels, write_gt_grid, write_pseudo_labels, write_soft_prediction, write_vocabulary,
    GroundTruthGrid,
};
use calpsc::label::SparseVoxelGrid;
use calpsc::post::{SoftPrediction, SoftQuery};
use calpsc::semantics::{ClassKind, ClassVocabulary, InstanceRecord, VocabClass, FEATURE_DIM};
use calpsc::synthetic::{SceneConfig, SyntheticScene};
use serde_json::Value;

fn calpsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calpsc")).args(args).output().unwrap()
}

fn ok(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_scene() -> SyntheticScene {
    SyntheticScene::generate(SceneConfig {
        frames: 30,
        beams: 32,
        azimuth_steps: 512,
        image_size: (240, 72),
        focal: 120.0,
        ..SceneConfig::default()
    })
    .unwrap()
}

fn unit(k: usize) -> Vec<f32> {
    let mut v = vec![0.0; FEATURE_DIM];
    v[k] = 1.0;
    v
}

#[test]
fn pseudo_label_is_reproducible_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene();
    let manifest = scene.write(&dir.path().join("seq"), DatasetProfile::SemanticKitti).unwrap();
    let spec = VoxelGridSpec::benchmark();
    let gt = dir.path().join("gt.calg");
    scene.write_ground_truth(&gt, 10, &spec, [0.0; 3]).unwrap();

    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for out in &runs {
        let o = calpsc(&["--jobs", "2", "pseudo-label", "--manifest", s(&manifest), "--out", s(out), "--reference", "10"]);
        ok(&o);
        let logs = String::from_utf8_lossy(&o.stderr);
        assert!(logs.lines().any(|l| l.contains("\"stage\":\"pseudo_label\"")));
    }
    let a = std::fs::read(runs[0].join("000010.calp")).unwrap();
    let b = std::fs::read(runs[1].join("000010.calp")).unwrap();
    assert_eq!(a, b);

    let calp = runs[0].join("000010.calp");
    let vocab = dir.path().join("seq/vocab/vocab.json");
    let report = ok(&calpsc(&["--quiet", "evaluate", s(&calp), "--gt", s(&gt), "--vocab", s(&vocab)]));
    assert_eq!(report["per_class"].as_array().unwrap().len(), 4);
    assert!(report["coverage"]["label_coverage"].as_f64().unwrap() > 0.0);
    // surfaces only: score the voxels the pseudo-labels cover
    let masked = ok(&calpsc(&["--quiet", "evaluate", s(&calp), "--gt", s(&gt), "--vocab", s(&vocab), "--masked"]));
    assert!(masked["PQ"].as_f64().unwrap() > 0.5, "{masked}");
    let oracle = ok(&calpsc(&["--quiet", "evaluate", s(&calp), "--gt", s(&gt), "--vocab", s(&vocab), "--semantic-oracle", "--masked"]));
    assert_eq!(oracle["meta"]["masked"], Value::Bool(true));

    let classes = ok(&calpsc(&["--quiet", "classify", s(&calp), "--vocab", s(&vocab)]));
    let names: Vec<&str> = classes.as_array().unwrap().iter().map(|r| r["class"].as_str().unwrap()).collect();
    assert!(names.contains(&"car") && names.contains(&"road"));

    let cov = ok(&calpsc(&["--quiet", "coverage", s(&calp), "--gt", s(&gt)]));
    assert!(cov["occ_coverage"].as_f64().unwrap() >= cov["label_coverage"].as_f64().unwrap());

    let protos = ok(&calpsc(&["--quiet", "--seed", "3", "prototypes", s(&calp), "--clusters", "2"]));
    assert_eq!(protos["cluster_sizes"].as_array().unwrap().len(), 2);
}

#[test]
fn evaluate_identity_reports_one() {
    let dir = tempfile::tempdir().unwrap();
    let spec = VoxelGridSpec::benchmark();
    let mut gt = GroundTruthGrid::empty(spec);
    for x in 10..20 {
        gt.set(VoxelIndex::new(x, 10, 5), 1, 1);
        gt.set(VoxelIndex::new(x, 30, 5), 1, 2);
        gt.set(VoxelIndex::new(x, 50, 1), 2, 0);
    }
    let path = dir.path().join("gt.calg");
    write_gt_grid(&path, &gt).unwrap();
    let vocab = ClassVocabulary::new(vec![
        VocabClass { name: "car".into(), kind: ClassKind::Thing, code: 1, prompts: vec![unit(0)] },
        VocabClass { name: "road".into(), kind: ClassKind::Stuff, code: 2, prompts: vec![unit(1)] },
    ])
    .unwrap();
    let vpath = write_vocabulary(&dir.path().join("vocab"), &vocab).unwrap();
    let report = ok(&calpsc(&["--quiet", "evaluate", s(&path), "--gt", s(&path), "--vocab", s(&vpath)]));
    for key in ["PQ", "SQ", "RQ", "PQ_dagger"] {
        assert_eq!(report[key].as_f64(), Some(1.0), "{key}");
    }

    let boxes = ok(&calpsc(&["--quiet", "boxes", s(&path), "--vocab", s(&vpath)]));
    let rows = boxes.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!((rows[0]["size"][0].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn crf_densifies_two_blob_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let spec = VoxelGridSpec::benchmark();
    let mut g = SparseVoxelGrid::new(spec);
    for (id, y) in [(1u32, 40u32), (2, 80)] {
        for x in 40..50 {
            for z in 4..6 {
                let v = VoxelIndex::new(x, y, z);
                g.occupancy.insert(v);
                if x < 44 {
                    g.cells.insert(v, id);
                }
            }
        }
    }
    let records: Vec<InstanceRecord> = g
        .by_instance()
        .into_iter()
        .map(|(id, voxels)| InstanceRecord { instance_id: id, voxels, feature: unit(id as usize), frame_count: 0 })
        .collect();
    let input = dir.path().join("in.calp");
    let output = dir.path().join("out.calp");
    write_pseudo_labels(&input, &g, &records).unwrap();
    ok(&calpsc(&["--quiet", "crf", s(&input), "--out", s(&output)]));
    let (r, recs) = read_pseudo_labels(&output).unwrap();
    assert!(r.labeled_count() > g.labeled_count());
    assert!(g.cells.iter().all(|(v, id)| r.cells.get(v) == Some(id)));
    assert_eq!(r.occupancy, g.occupancy);
    assert_eq!(recs.len(), 2);

    let again = dir.path().join("again.calp");
    ok(&calpsc(&["--quiet", "crf", s(&input), "--out", s(&again)]));
    assert_eq!(std::fs::read(&output).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn postprocess_then_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let mut voxels = Vec::new();
    for x in 0..6 {
        for y in 0..3 {
            voxels.push(VoxelIndex::new(100 + x, 100 + y, 4));
            voxels.push(VoxelIndex::new(150 + x, 60 + y, 4));
        }
    }
    voxels.sort();
    let queries = (0..2)
        .map(|q| SoftQuery {
            probs: voxels.iter().map(|v| if (v.x() < 150) == (q == 0) { 0.9 } else { 0.01 }).collect(),
            feature: unit(q),
        })
        .collect();
    let calq = dir.path().join("pred.calq");
    write_soft_prediction(&calq, &SoftPrediction { voxels, queries }).unwrap();
    let vocab = ClassVocabulary::new(vec![
        VocabClass { name: "car".into(), kind: ClassKind::Thing, code: 1, prompts: vec![unit(0)] },
        VocabClass { name: "truck".into(), kind: ClassKind::Thing, code: 2, prompts: vec![unit(1)] },
    ])
    .unwrap();
    let vpath = write_vocabulary(&dir.path().join("vocab"), &vocab).unwrap();
    let grid = dir.path().join("grid.calg");
    ok(&calpsc(&["--quiet", "--profile", "kitti360", "postprocess", s(&calq), "--vocab", s(&vpath), "--out", s(&grid)]));
    let g = read_gt_grid(&grid, &VoxelGridSpec::benchmark()).unwrap();
    assert_eq!(g.occupied_valid().count(), 36);

    let boxes = ok(&calpsc(&["--quiet", "boxes", s(&grid), "--vocab", s(&vpath)]));
    let mut classes: Vec<&str> = boxes.as_array().unwrap().iter().map(|b| b["class"].as_str().unwrap()).collect();
    classes.sort();
    assert_eq!(classes, ["car", "truck"]);

    let rows = ok(&calpsc(&["--quiet", "classify", s(&calq), "--vocab", s(&vpath)]));
    assert_eq!(rows[1]["class"], "truck");
}

#[test]
fn errors_are_json_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "no_such_knob = 1\n").unwrap();
    let o = calpsc(&["--config", s(&bad), "coverage", "x.calp", "--gt", "y.calg"]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(o.stderr.split(|&b| b == b'\n').next().unwrap()).unwrap();
    assert_eq!(err["error"], "Config");

    let o = calpsc(&["coverage", s(&dir.path().join("missing.calp")), "--gt", "y.calg"]);
    assert_eq!(o.status.code(), Some(3));

    let junk = dir.path().join("junk.calp");
    std::fs::write(&junk, b"CALPxx").unwrap();
    let o = calpsc(&["coverage", s(&junk), "--gt", "y.calg"]);
    assert_eq!(o.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "MalformedFile");

    let o = calpsc(&["--help"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("kitti360"));
}
