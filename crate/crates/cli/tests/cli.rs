use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_docpretrain"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "corpus": { "document_count": 12, "segment_split_prob": 0.5 },
        "bpe_merges": 64,
        "encoder": { "hidden_dim": 16, "layers": 1, "heads": 2, "ffn_dim": 32, "max_seq_len": 128 },
        "pretrain": { "epochs": 1, "batch_size": 4 },
        "finetune": { "train_docs": 4, "eval_docs": 4, "train": { "epochs": 2 } },
        "out": dir.join("run"),
        "seed": 3
    });
    let p = dir.join("run.json");
    fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gradcheck_on_primitives_exits_zero() {
    let o = run(&["gradcheck", "--scope", "primitives"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("matmul") && !out.contains("FAIL"));
}

#[test]
fn unknown_verb_and_missing_argument_are_usage_errors() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["dump-reps", "--checkpoint", "x"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn invalid_config_names_field_and_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"pretrain": {"p_mlm": 1.5}}"#).unwrap();
    let o = run(&["pretrain", "--config", s(&p)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("p_mlm"), "{}", stderr(&o));

    fs::write(&p, r#"{"tokenizer": "/nonexistent/tok.json"}"#).unwrap();
    let o = run(&["pretrain", "--config", s(&p)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("tokenizer"), "{}", stderr(&o));
}

fn manifest(dir: &Path, command: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{command}.manifest.json"))).unwrap()).unwrap()
}

#[test]
fn full_pipeline_writes_artifacts_and_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let corpus = tmp.path().join("corpus");
    let run_dir = tmp.path().join("run");

    let o = run(&["gen-corpus", "--config", s(&cfg), "--out", s(&corpus)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(corpus.join("doc_00011.json").is_file());

    let tok = tmp.path().join("tok.json");
    let o = run(&["train-bpe", "--corpus", s(&corpus), "--merges", "64", "--out", s(&tok)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = run(&["pretrain", "--config", s(&cfg), "--epochs", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(run_dir.join("pretrain_report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 2);
    let m = manifest(&run_dir, "pretrain");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["pretrain"]["epochs"], 2);
    for name in ["pretrained.ckpt", "pretrain_report.jsonl", "tokenizer.json"] {
        let bytes = fs::read(run_dir.join(name)).unwrap();
        let want = docpretrain::tensor::checkpoint::sha256_hex(&bytes);
        assert_eq!(m["artifacts"][name], want.as_str(), "{name}");
    }

    let ckpt = run_dir.join("pretrained.ckpt");
    let o = run(&["finetune", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--task", "sec"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ft: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("finetune_sec_report.json")).unwrap()).unwrap();
    assert_eq!(ft["epoch_losses"].as_array().unwrap().len(), 2);

    let o = run(&[
        "evaluate",
        "--checkpoint",
        s(&run_dir.join("finetuned_sec.ckpt")),
        "--dataset",
        s(&corpus),
        "--out",
        s(&run_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let f1 = metrics["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    let csv = run_dir.join("reps.csv");
    let doc = corpus.join("doc_00000.json");
    let o = run(&["dump-reps", "--checkpoint", s(&ckpt), "--document", s(&doc), "--out", s(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let header = text.lines().next().unwrap();
    let want: Vec<String> = ["kind", "id", "segment", "group"]
        .into_iter()
        .map(String::from)
        .chain((0..16).map(|i| format!("dim{i}")))
        .collect();
    assert_eq!(header, want.join(","));
    assert!(!text.contains('\r'));
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 20));
    assert!(text.lines().any(|l| l.starts_with("segment,")));
}

#[test]
fn finetune_rejects_a_different_tokenizer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = run(&["pretrain", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let corpus = tmp.path().join("corpus");
    assert_eq!(code(&run(&["gen-corpus", "--config", s(&cfg), "--out", s(&corpus), "--seed", "99"])), 0);
    let other = tmp.path().join("other_tok.json");
    assert_eq!(code(&run(&["train-bpe", "--corpus", s(&corpus), "--merges", "8", "--out", s(&other)])), 0);

    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["tokenizer"] = serde_json::Value::String(s(&other).into());
    fs::write(&cfg, v.to_string()).unwrap();
    let ckpt = tmp.path().join("run/pretrained.ckpt");
    let o = run(&["finetune", "--config", s(&cfg), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("tokenizer mismatch"), "{}", stderr(&o));
}

#[test]
fn ablate_prints_four_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = run(&["ablate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    for row in ["| MLM |", "| MLM+1-LOP |", "| MLM+2-TSC |", "| MLM+1-LOP+2-TSC |"] {
        assert!(out.contains(row), "{out}");
    }
    assert!(tmp.path().join("run/ablation.json").is_file());
}
