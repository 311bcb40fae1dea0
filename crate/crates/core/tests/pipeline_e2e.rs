use std::fs;
use std::path::Path;

use obfscope::pipeline::fixture::{self, FixtureConfig, FixturePaths};
use obfscope::pipeline::stages::BUNDLE;
use obfscope::pipeline::{run, PipelineConfig, PipelineError, Stage, StageArgs, Workspace};

const CONFIG: &str = r#"
seed = 11
preset = "desk"

[model]
epochs = 4
batch = 16
lr = 2e-3

[queues]
main_p = 90.0
emergency_p = 98.0
watch_lo_p = 80.0

[enrichment]
min_count = 3
"#;

fn run_all(dir: &Path, fx: &FixturePaths, cfg: &PipelineConfig) -> Workspace {
    let ws = Workspace::new(dir);
    let args = StageArgs {
        input: Some(fx.corpus.clone()),
        labels: Some(fx.labels.clone()),
        incidents: Some(fx.incidents.clone()),
        ..Default::default()
    };
    for stage in Stage::ALL {
        run(stage, &ws, cfg, &args).unwrap_or_else(|e| panic!("{stage}: {e}"));
    }
    ws
}

fn bundle(ws: &Workspace) -> Vec<(String, Vec<u8>)> {
    let mut names: Vec<&str> = BUNDLE.iter().map(|(_, n)| *n).collect();
    names.push("run_manifest.json");
    names
        .into_iter()
        .map(|n| (n.to_string(), fs::read(ws.artifact(Stage::Report, n)).unwrap()))
        .collect()
}

#[test]
fn fixture_pipeline_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture::write(tmp.path(), &FixtureConfig { per_chain: 60, shared: 6, ..Default::default() }).unwrap();
    let cfg = PipelineConfig::from_toml(CONFIG).unwrap();
    let a = run_all(&tmp.path().join("a"), &fx, &cfg);
    let b = run_all(&tmp.path().join("b"), &fx, &cfg);
    let (ba, bb) = (bundle(&a), bundle(&b));
    assert_eq!(ba.len(), 10);
    for ((n, x), (_, y)) in ba.iter().zip(&bb) {
        assert!(x == y, "{n} differs between runs");
        assert!(!x.is_empty(), "{n} is empty");
    }

    // the manifest hashes every bundle file, so it stands in for the whole bundle
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/run_manifest.json");
    let manifest = &ba[9].1;
    if std::env::var_os("OBFSCOPE_BLESS").is_some() {
        fs::create_dir_all(golden.parent().unwrap()).unwrap();
        fs::write(&golden, manifest).unwrap();
    }
    let expected = fs::read(&golden).expect("golden manifest missing; rerun with OBFSCOPE_BLESS=1");
    assert!(&expected == manifest, "report bundle differs from the blessed run");

    let queues = String::from_utf8(ba[0].1.clone()).unwrap();
    assert!(queues.starts_with("chain,address,canonical_hash,score,within_chain_percentile,tier,priority,flags\n"));
    for chain in ["bsc", "ethereum", "polygon"] {
        assert!(queues.lines().any(|l| l.starts_with(chain) && l.contains(",main,")), "{chain}");
    }
    let align = String::from_utf8(ba[7].1.clone()).unwrap();
    assert_eq!(align.lines().count(), 1 + 6);
    let unmatched = fs::read_to_string(a.artifact(Stage::Align, "unmatched.json")).unwrap();
    assert!(unmatched.contains("Ghost"));
    let sel = String::from_utf8(ba[2].1.clone()).unwrap();
    assert!(sel.contains("0xf2fde38b"), "ownership selector should be enriched:\n{sel}");
    let clusters = String::from_utf8(ba[6].1.clone()).unwrap();
    assert!(clusters.contains("polygon"));
}

#[test]
fn reingest_is_idempotent_and_duplicates_collapse() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture::write(tmp.path(), &FixtureConfig { per_chain: 10, shared: 2, ..Default::default() }).unwrap();
    let ws = Workspace::new(tmp.path().join("ws"));
    let cfg = PipelineConfig::default();
    let args = StageArgs { input: Some(fx.corpus.clone()), ..Default::default() };
    run(Stage::Ingest, &ws, &cfg, &args).unwrap();
    let store = fs::read(ws.artifact(Stage::Ingest, "contracts.jsonl")).unwrap();
    run(Stage::Ingest, &ws, &cfg, &args).unwrap();
    assert_eq!(fs::read(ws.artifact(Stage::Ingest, "contracts.jsonl")).unwrap(), store);
    // 10 + 2 shared + 1 clone group per chain; the metadata duplicate folds into contract 0
    let text = String::from_utf8(store).unwrap();
    assert_eq!(text.lines().count(), 3 * 13);
    let log = fs::read_to_string(tmp.path().join("ws/logs/ingest.json")).unwrap();
    assert!(log.contains("malformed address"));
}

#[test]
fn missing_upstream_stage_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = Workspace::new(tmp.path());
    let cfg = PipelineConfig::default();
    for stage in [Stage::Extract, Stage::Score, Stage::Queues, Stage::Report] {
        let err = run(stage, &ws, &cfg, &StageArgs::default()).unwrap_err();
        assert!(matches!(err, PipelineError::StageDependency { .. }), "{stage}: {err}");
        assert_eq!(err.exit_code(), 3);
    }
    let err = run(Stage::Ingest, &ws, &cfg, &StageArgs::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn label_dimension_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture::write(tmp.path(), &FixtureConfig { per_chain: 10, shared: 0, k_features: 5, ..Default::default() })
        .unwrap();
    let ws = Workspace::new(tmp.path().join("ws"));
    let cfg = PipelineConfig::default();
    let args = StageArgs { input: Some(fx.corpus.clone()), labels: Some(fx.labels.clone()), ..Default::default() };
    run(Stage::Ingest, &ws, &cfg, &args).unwrap();
    let err = run(Stage::Train, &ws, &cfg, &args).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(err.to_string().contains("5 features"));
}
