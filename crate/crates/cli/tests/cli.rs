use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cirkit_cli::RunConfig;
use cirkit_core::EvalReport;
use cirkit_core::model::{ModelDims, ParamSet};
use cirkit_core::trainer::{load_checkpoint, save_checkpoint};
use tempfile::TempDir;

fn cirkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cirkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));
    o
}

fn tiny_config() -> RunConfig {
    let mut c = RunConfig {
        model: ModelDims {
            vocab: 512,
            token_dims: 8,
            image_dims: 16,
            embed_dims: 8,
            hidden_dims: 8,
        },
        seed: 5,
        ..RunConfig::default()
    };
    c.world.items = 40;
    c.world.attributes = 6;
    c.world.holdout = 10;
    c.stage1.epochs = 2;
    c.stage2.epochs = 1;
    c
}

/// A synthesized run directory under a fresh temp dir.
fn world() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    tiny_config().save(&tmp.path().join("base.json")).unwrap();
    ok(cirkit(tmp.path(), &["--config", "base.json", "synth", "--out", "run"]));
    let run = tmp.path().join("run");
    (tmp, run)
}

fn annotated() -> (TempDir, PathBuf) {
    let (tmp, run) = world();
    ok(cirkit(&run, &["annotate", "--mock"]));
    ok(cirkit(&run, &["filter"]));
    (tmp, run)
}

#[test]
fn usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&cirkit(tmp.path(), &["frobnicate"])), 2);
    assert_eq!(code(&cirkit(tmp.path(), &["ingest", "--bogus"])), 2);
    assert_eq!(code(&cirkit(tmp.path(), &["train", "--stage", "3"])), 2);
    assert_eq!(code(&cirkit(tmp.path(), &["train"])), 2);
    assert_eq!(code(&cirkit(tmp.path(), &["--help"])), 0);
}

#[test]
fn ingest_reports_counts() {
    let (_tmp, run) = world();
    let out = stdout(&ok(cirkit(&run, &["ingest"])));
    assert!(out.contains("40 items x 16 dims"), "{out}");
    assert!(out.contains("test triplets: 10"), "{out}");
}

#[test]
fn ingest_without_manifest_fails() {
    let tmp = TempDir::new().unwrap();
    let o = cirkit(tmp.path(), &["ingest"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("manifest"));
}

#[test]
fn ingest_names_unknown_id() {
    let (_tmp, run) = world();
    let path = run.join("test.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let first = text.lines().next().unwrap();
    let v: serde_json::Value = serde_json::from_str(first).unwrap();
    let target = v["target_id"].as_str().unwrap().to_string();
    let broken = text.replacen(
        &format!("\"target_id\":\"{target}\""),
        "\"target_id\":\"ghost-item\"",
        1,
    );
    fs::write(&path, broken).unwrap();
    let o = cirkit(&run, &["ingest"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("ghost-item"), "{}", stderr(&o));
}

#[test]
fn mock_annotation_is_deterministic() {
    let (_a, run_a) = annotated();
    let (_b, run_b) = annotated();
    for f in ["annotations.jsonl", "accepted.jsonl", "rejected.jsonl"] {
        assert_eq!(fs::read(run_a.join(f)).unwrap(), fs::read(run_b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn filter_partitions_and_reports_rate() {
    let (_tmp, run) = annotated();
    let lines = |f: &str| fs::read_to_string(run.join(f)).unwrap().lines().count();
    assert_eq!(lines("accepted.jsonl") + lines("rejected.jsonl"), lines("annotations.jsonl"));

    // every judge says 1
    let text = fs::read_to_string(run.join("annotations.jsonl")).unwrap();
    let all_ones: String = text
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["judge_scores"] = serde_json::json!([1, 1, 1]);
            v.to_string() + "\n"
        })
        .collect();
    fs::write(run.join("annotations.jsonl"), all_ones).unwrap();
    let out = stdout(&ok(cirkit(&run, &["filter"])));
    assert!(out.contains("acceptance rate 0.00%"), "{out}");
    assert_eq!(lines("accepted.jsonl"), 0);
}

#[test]
fn annotate_needs_endpoints_or_mock() {
    let (_tmp, run) = world();
    let o = cirkit(&run, &["annotate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--mock"));
}

#[test]
fn unreachable_endpoint_fails() {
    let (_tmp, run) = world();
    let mut c = RunConfig::load(&run.join("config.json")).unwrap();
    c.annotation.generator_url = Some("http://127.0.0.1:9/generate".into());
    c.annotation.judge_urls = vec!["http://127.0.0.1:9/judge".into()];
    c.annotation.http.retries = 0;
    c.annotation.http.timeout_secs = 2;
    c.save(&run.join("remote.json")).unwrap();
    let o = cirkit(&run, &["--config", "remote.json", "annotate"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn stage_two_needs_checkpoint_unless_from_scratch() {
    let (_tmp, run) = annotated();
    let o = cirkit(&run, &["train", "--stage", "2"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--from-scratch"));
    ok(cirkit(&run, &["train", "--stage", "2", "--from-scratch"]));
    assert!(run.join("model.ckpt").exists());
    assert!(run.join("loss_stage2.jsonl").exists());
}

#[test]
fn training_is_reproducible_and_records_the_seed() {
    let (_tmp, run) = annotated();
    ok(cirkit(&run, &["train", "--stage", "1"]));
    let first = fs::read(run.join("stage1.ckpt")).unwrap();
    ok(cirkit(&run, &["train", "--stage", "1"]));
    assert_eq!(first, fs::read(run.join("stage1.ckpt")).unwrap());
    let (_, header) = load_checkpoint(&run.join("stage1.ckpt")).unwrap();
    assert_eq!(header.seed, 5);

    ok(cirkit(&run, &["--seed", "6", "train", "--stage", "1"]));
    let (_, header) = load_checkpoint(&run.join("stage1.ckpt")).unwrap();
    assert_eq!(header.seed, 6);
    assert_ne!(first, fs::read(run.join("stage1.ckpt")).unwrap());
}

fn supervision_tokens(out: &str) -> usize {
    let line = out.lines().find(|l| l.contains("supervision tokens")).unwrap();
    let words: Vec<&str> = line.split_whitespace().collect();
    let i = words.iter().position(|w| *w == "supervision").unwrap();
    words[i - 1].parse().unwrap()
}

#[test]
fn fast_mode_uses_fewer_supervision_tokens() {
    let (_tmp, run) = annotated();
    let args = ["train", "--stage", "2", "--from-scratch", "--annotation-mode"];
    let full = stdout(&ok(cirkit(&run, &[&args[..], &["full"]].concat())));
    let fast = stdout(&ok(cirkit(&run, &[&args[..], &["fast"]].concat())));
    assert!(supervision_tokens(&fast) < supervision_tokens(&full));
    assert_eq!(code(&cirkit(&run, &[&args[..], &["medium"]].concat())), 2);
}

fn trained() -> (TempDir, PathBuf) {
    let (tmp, run) = annotated();
    ok(cirkit(&run, &["train", "--stage", "1"]));
    ok(cirkit(&run, &["train", "--stage", "2"]));
    (tmp, run)
}

#[test]
fn eval_writes_a_stable_report() {
    let (_tmp, run) = trained();
    let out = stdout(&ok(cirkit(&run, &["eval"])));
    assert!(out.contains("R@1"));
    let first = fs::read(run.join("report.json")).unwrap();
    ok(cirkit(&run, &["eval"]));
    assert_eq!(first, fs::read(run.join("report.json")).unwrap());

    let v: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    for k in ["query_count", "recall", "subset_recall", "map", "cirr_average", "mean_recall"] {
        assert!(keys.iter().any(|x| *x == k), "missing {k}");
    }
    assert_eq!(v["query_count"], 10);
    let r: EvalReport = serde_json::from_slice(&first).unwrap();
    assert_eq!(r.recall.keys().copied().collect::<Vec<_>>(), [1, 5, 10, 50]);
    assert_eq!(
        fs::read_to_string(run.join("ranked.jsonl")).unwrap().lines().count(),
        10
    );

    let report = stdout(&ok(cirkit(&run, &["report"])));
    assert_eq!(report, out);
}

#[test]
fn eval_k_list_override() {
    let (_tmp, run) = trained();
    ok(cirkit(&run, &["eval", "--k-list", "1,3", "--map-k-list", "2"]));
    let r: EvalReport = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(r.recall.keys().copied().collect::<Vec<_>>(), [1, 3]);
    assert_eq!(r.map.keys().copied().collect::<Vec<_>>(), [2]);
    assert_eq!(code(&cirkit(&run, &["eval", "--k-list", "5,1"])), 1);
    assert_eq!(code(&cirkit(&run, &["eval", "--k-list", "x"])), 2);
}

#[test]
fn eval_failures() {
    let (_tmp, run) = world();
    // no checkpoint yet
    assert_eq!(code(&cirkit(&run, &["eval"])), 1);

    let dims = ModelDims {
        image_dims: 8,
        ..tiny_config().model
    };
    save_checkpoint(&ParamSet::init(dims, 0).unwrap(), 0, &run.join("model.ckpt")).unwrap();
    let o = cirkit(&run, &["eval"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dimension mismatch"), "{}", stderr(&o));

    save_checkpoint(&ParamSet::init(tiny_config().model, 0).unwrap(), 0, &run.join("model.ckpt")).unwrap();
    ok(cirkit(&run, &["eval"]));
    fs::write(run.join("test.jsonl"), "").unwrap();
    assert_eq!(code(&cirkit(&run, &["eval"])), 1);
}

#[test]
fn print_config_resolves_overrides() {
    let (_tmp, run) = world();
    let out = stdout(&ok(cirkit(
        &run,
        &["--seed", "77", "--print-config", "train", "--stage", "2", "--annotation-mode", "fast"],
    )));
    let c: RunConfig = serde_json::from_str(&out).unwrap();
    assert_eq!(c.seed, 77);
    assert_eq!(c.annotation_mode, cirkit_core::AnnotationMode::Fast);
    assert_eq!(c.model, tiny_config().model);
    // nothing ran
    assert!(!run.join("model.ckpt").exists());
}

#[test]
fn bad_config_is_an_operational_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("c.json"), "{\"seed\": 1, \"colour\": 3}").unwrap();
    assert_eq!(code(&cirkit(tmp.path(), &["--config", "c.json", "ingest"])), 1);
    assert_eq!(code(&cirkit(tmp.path(), &["--config", "absent.json", "ingest"])), 1);
}
