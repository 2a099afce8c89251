use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"
[synth]
scenes = 60

[curriculum]
target_lang = "hi"

[curriculum.model]
buckets = 1024
embed_dim = 8
hidden = 16

[curriculum.train]
epochs = 3
batch_size = 8
"#;

fn scd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scd"))
        .args(args)
        .current_dir(dir)
        .env_remove("SCD_CONFIG")
        .output()
        .expect("spawn scd")
}

fn last_json(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    serde_json::from_str(line).expect("final stdout line is JSON")
}

fn ok(out: Output) -> Value {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    last_json(&out)
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scd.toml"), CONFIG).unwrap();
    ok(scd(&["--config", "scd.toml", "--out", "data", "--seed", "7", "synth"], dir.path()));
    dir
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scd.toml"), CONFIG).unwrap();
    let a = ok(scd(&["--config", "scd.toml", "--out", "a", "--seed", "7", "synth"], dir.path()));
    let b = ok(scd(&["--config", "scd.toml", "--out", "b", "--seed", "7", "synth"], dir.path()));
    assert_eq!(a["dataset_hash"], b["dataset_hash"]);
    assert!(dir.path().join("a/examples.jsonl").exists() && dir.path().join("a/features.jsonl").exists());
    assert_eq!(fs::read(dir.path().join("a/examples.jsonl")).unwrap(), fs::read(dir.path().join("b/examples.jsonl")).unwrap());
    let c = ok(scd(&["--config", "scd.toml", "--out", "c", "--seed", "8", "synth"], dir.path()));
    assert_ne!(a["dataset_hash"], c["dataset_hash"]);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        "[synth]\nscenes = 10\n[[synth.languages]]\ncode = \"hi\"\nlexicon = \"missing.tsv\"\n",
    )
    .unwrap();
    let out = scd(&["--config", "bad.toml", "--out", "d", "synth"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth.languages[0].lexicon"));

    fs::write(dir.path().join("unknown.toml"), "[curriculum]\nselect_fraction = 0.3\n").unwrap();
    let out = scd(&["--config", "unknown.toml", "--out", "d", "synth"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("select_fraction"));

    let out = scd(&["--out", "d", "--order", "sideways", "synth"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = scd(&["--out", "d", "--select-n", "3", "--confidence-threshold", "0.5", "synth"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = scd(&["translate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_without_inputs_names_missing_artifact() {
    let dir = setup();
    let out = scd(&["--config", "scd.toml", "--data", "data", "--out", "run", "weaklabel"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoints/theta_prime.ckpt"));
    let out = scd(&["--config", "scd.toml", "--data", "data", "--out", "run", "eval"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn chained_stages_match_one_shot_curriculum() {
    let dir = setup();
    let base = ["--config", "scd.toml", "--data", "data", "--out"];
    let one = scd(&[&base[..], &["oneshot", "curriculum"]].concat(), dir.path());
    let stderr = String::from_utf8_lossy(&one.stderr).to_string();
    let one = ok(one);
    assert!(stderr.lines().any(|l| l.starts_with("stage=translate status=done wall_ms=")));

    for stage in [&["finetune"][..], &["translate"], &["weaklabel"], &["select"], &["finetune", "--phi"], &["eval"]] {
        ok(scd(&[&base[..], &["chain"], stage].concat(), dir.path()));
    }
    let m1: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("oneshot/manifest.json")).unwrap()).unwrap();
    let m2: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("chain/manifest.json")).unwrap()).unwrap();
    assert_eq!(m1["hashes"], m2["hashes"]);
    assert_eq!(m1["artifact_digest"], m2["artifact_digest"]);
    assert_eq!(one["artifact_digest"], m2["artifact_digest"]);

    // re-running a stage with identical inputs is idempotent
    ok(scd(&[&base[..], &["chain", "select"]].concat(), dir.path()));
    let m3: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("chain/manifest.json")).unwrap()).unwrap();
    assert_eq!(m2["hashes"], m3["hashes"]);
}

#[test]
fn iterations_resume_and_report() {
    let dir = setup();
    let base = ["--config", "scd.toml", "--data", "data", "--select-n", "20"];
    let two = ok(scd(&[&base[..], &["--out", "r0", "--iterations", "2", "curriculum"]].concat(), dir.path()));
    assert_eq!(two["phi_accuracy"].as_array().unwrap().len(), 2);
    let m: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r0/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["iterations"], 2);
    assert!(m["stages"].as_array().unwrap().iter().any(|s| s["name"] == "finetune_iter2"));

    let again = scd(&[&base[..], &["--out", "r0", "--iterations", "2", "--resume", "curriculum"]].concat(), dir.path());
    let stderr = String::from_utf8_lossy(&again.stderr).to_string();
    assert_eq!(ok(again)["artifact_digest"], two["artifact_digest"]);
    assert_eq!(stderr.lines().filter(|l| l.ends_with("resumed=true")).count(), 10);

    let seeds = ["1", "2"];
    for s in seeds {
        ok(scd(&[&base[..], &["--out", &format!("r{s}"), "--seed", s, "curriculum"]].concat(), dir.path()));
    }
    let rep = ok(scd(&["--out", "agg", "report", "r0", "r1", "r2"], dir.path()));
    assert_eq!(rep["runs"], 3);
    let csv = fs::read_to_string(dir.path().join("agg/report.csv")).unwrap();
    assert!(csv.starts_with("language,category,mean_accuracy,std\n"));
    assert!(csv.lines().nth(1).unwrap().starts_with("hi,nonRoman-mono,"));
}

#[test]
fn config_from_environment() {
    let dir = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_scd"))
        .args(["--data", "data", "--out", "env", "finetune"])
        .current_dir(dir.path())
        .env("SCD_CONFIG", dir.path().join("scd.toml"))
        .output()
        .unwrap();
    let v = ok(out);
    assert_eq!(v["stage"], "finetune_source");
    let m: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("env/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["model"]["buckets"], 1024);
}

#[test]
fn codeswitch_adds_split() {
    let dir = setup();
    let v = ok(scd(&["--config", "scd.toml", "--data", "data", "--out", "cs", "--target-lang", "hi", "codeswitch", "--romanize"], dir.path()));
    assert_eq!(v["language"], "hi-en");
    assert!(v["added"].as_u64().unwrap() > 0);
    let text = fs::read_to_string(dir.path().join("cs/examples.jsonl")).unwrap();
    assert!(text.contains("\"hi-en\""));
}

#[test]
fn shipped_configs_spell_out_the_defaults() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let synth = scd::cli::CliConfig::load(&root.join("synth.toml")).unwrap();
    assert_eq!(synth.synth, scd::corpus::SyntheticConfig { base_dir: Some(root.clone()), ..Default::default() });
    let cur = scd::cli::CliConfig::load(&root.join("curriculum.toml")).unwrap();
    let expected = scd::CurriculumConfig { select_frac: Some(0.25), ..Default::default() };
    assert_eq!(cur.curriculum, expected);
    assert_eq!(cur.curriculum.selection(), expected.selection());
}
