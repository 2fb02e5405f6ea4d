use std::path::Path;

use logsad::interchange::{load_manifest, read_tensor, Label, Split};
use logsad::metrics::auroc;
use logsad::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use logsad::synth::{generate_dataset, LogicalSpec, SynthOutput, SynthSpec};

fn pipeline(data: &SynthOutput, rules: bool) -> PipelineOutput {
    run_pipeline(&PipelineConfig {
        rules: rules.then(|| data.rules.clone()),
        text_bank: rules.then(|| data.text_bank.clone()),
        ..PipelineConfig::new(&data.manifest)
    })
    .unwrap()
}

fn with_epsilon(mut spec: SynthSpec, epsilon: f64) -> SynthSpec {
    spec.structural.as_mut().unwrap().epsilon = epsilon;
    spec
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry
            .strip_prefix(dir)
            .unwrap()
            .to_string_lossy()
            .into_owned();
        out.push((rel, std::fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn anomaly_free_spec_yields_all_normal_test_split() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_structural: 0,
        n_logical: 0,
        ..SynthSpec::pushpins_like(1)
    };
    let data = generate_dataset(&spec, tmp.path()).unwrap();
    let m = load_manifest(&data.manifest).unwrap();
    let test: Vec<_> = m.split(Split::Test).collect();
    assert_eq!(test.len(), 50);
    assert!(test.iter().all(|r| r.label == Label::Normal));
}

#[test]
fn count_delta_removes_one_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate_dataset(&SynthSpec::pushpins_like(2), tmp.path()).unwrap();
    let m = load_manifest(&data.manifest).unwrap();
    for r in m.split(Split::Test) {
        let expected = if r.label == Label::LogicalAnomaly {
            14
        } else {
            15
        };
        assert_eq!(r.interest_instances.len(), expected, "{}", r.image_id);
        let gt = read_tensor(r.pixel_gt_path.as_ref().unwrap()).unwrap();
        let marked = gt.data().iter().filter(|&&v| v > 0.5).count();
        assert_eq!(marked > 0, r.label != Label::Normal, "{}", r.image_id);
    }
    for r in m.images.iter().filter(|r| r.split != Split::Test) {
        assert_eq!(r.interest_instances.len(), 15);
        assert_eq!(r.label, Label::Normal);
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    generate_dataset(&SynthSpec::juice_like(9), &a).unwrap();
    generate_dataset(&SynthSpec::juice_like(9), &b).unwrap();
    generate_dataset(&SynthSpec::juice_like(10), &c).unwrap();
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    assert_ne!(fa, files(&c));
}

#[test]
fn zero_epsilon_is_indistinguishable() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_normal: 100,
        n_structural: 100,
        n_logical: 0,
        ..with_epsilon(SynthSpec::pushpins_like(4), 0.0)
    };
    let data = generate_dataset(&spec, tmp.path()).unwrap();
    let out = pipeline(&data, false);
    let scores: Vec<f64> = out.scores.iter().map(|r| r.s_p).collect();
    let labels: Vec<bool> = out.scores.iter().map(|r| r.label != "normal").collect();
    let a = auroc(&scores, &labels).unwrap();
    assert!((a - 0.5).abs() <= 0.1, "auroc {a}");
}

#[test]
fn patch_scores_grow_with_epsilon() {
    let tmp = tempfile::tempdir().unwrap();
    let mut means = Vec::new();
    for eps in [0.1, 0.5, 1.0] {
        let spec = SynthSpec {
            n_normal: 10,
            n_structural: 20,
            n_logical: 0,
            ..with_epsilon(SynthSpec::pushpins_like(6), eps)
        };
        let data = generate_dataset(&spec, tmp.path().join(format!("e{eps}"))).unwrap();
        let out = pipeline(&data, false);
        let sp: Vec<f64> = out
            .scores
            .iter()
            .filter(|r| r.label == "structural_anomaly")
            .map(|r| r.s_p)
            .collect();
        means.push(sp.iter().sum::<f64>() / sp.len() as f64);
    }
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}

#[test]
fn rules_flag_every_planted_logical_anomaly() {
    for spec in [SynthSpec::pushpins_like(8), SynthSpec::juice_like(8)] {
        assert!(spec.logical.is_some());
        let tmp = tempfile::tempdir().unwrap();
        let data = generate_dataset(&spec, tmp.path()).unwrap();
        let out = pipeline(&data, true);
        for r in &out.scores {
            let expected = u8::from(r.label == "logical_anomaly");
            assert_eq!(r.s_c, expected, "{} {}", spec.category, r.image_id);
        }
    }
}

#[test]
fn spec_round_trips_through_json() {
    let spec = SynthSpec {
        logical: Some(LogicalSpec::CountDelta {
            class: "pushpin".into(),
            delta: 2,
        }),
        ..SynthSpec::pushpins_like(3)
    };
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("spec.json");
    std::fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    assert_eq!(logsad::synth::load_synth_spec(&path).unwrap(), spec);
}
