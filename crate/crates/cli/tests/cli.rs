use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mse-lab"));
    c.env_remove("MSE_LAB_OUT").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mse-lab")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(err.trim_end().lines().count(), 1, "expected one error line, got {err:?}");
    err
}

/// The default configuration shrunk to a few seconds of work.
fn tiny_config(dir: &Path) -> PathBuf {
    let text = ok(&["print-config"]);
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    cfg["data"]["paraphrase_items"] = json!(48);
    cfg["data"]["heldout_items"] = json!(8);
    cfg["data"]["mlm_sentences"] = json!(200);
    cfg["data"]["base_pairs"] = json!(48);
    cfg["data"]["sts_sentences"] = json!(24);
    cfg["data"]["mcqa_items"] = json!(8);
    cfg["encoder"]["d_model"] = json!(16);
    cfg["encoder"]["d_ff"] = json!(32);
    cfg["encoder"]["n_layers"] = json!(1);
    cfg["encoder"]["n_heads"] = json!(2);
    cfg["encoder"]["max_len"] = json!(32);
    cfg["encoder"]["adapter_bottleneck"] = json!(4);
    cfg["vocab_size"] = json!(160);
    cfg["aux_dim"] = json!(8);
    for phase in ["base_mlm", "adapt_mlm", "base_contrastive", "contrastive", "cla"] {
        cfg[phase]["max_len"] = json!(32);
        cfg[phase]["mlm_max_len"] = json!(32);
    }
    for phase in ["base_mlm", "adapt_mlm"] {
        cfg[phase]["mlm_steps"] = json!(5);
    }
    for phase in ["base_contrastive", "contrastive", "cla"] {
        cfg[phase]["epochs"] = json!(1);
        cfg[phase]["batch_size"] = json!(16);
    }
    cfg["seeds"] = json!([4]);
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn usage_and_config_errors_have_distinct_codes() {
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(64));
    assert!(stderr_line(&out).starts_with("mse-lab: error[usage]"));

    let out = run(&["--config", "/definitely/missing.json", "print-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("mse-lab: error[missing_file]"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"pivot": "zz"}"#).unwrap();
    let out = run(&["--config", bad.to_str().unwrap(), "print-config"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("mse-lab: error[schema]"));
}

#[test]
fn seed_override_and_grad_check() {
    let cfg: Value = serde_json::from_str(&ok(&["--seed", "11", "print-config"])).unwrap();
    assert_eq!(cfg["seeds"], json!([11]));
    assert!(ok(&["grad-check"]).contains("mlm_max_rel_err="));
}

#[test]
fn pipeline_enforces_phase_order_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = tiny_config(root);
    let out = root.join("out");
    let base = [
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    let with = |extra: &[&str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    let okv = |args: Vec<String>| ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let runv = |args: Vec<String>| run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let p = |rel: &str| out.join(rel).to_string_lossy().to_string();

    okv(with(&["gen-data"]));
    let corpus = std::fs::read(out.join("data/corpus.tsv")).unwrap();
    okv(with(&["gen-data"]));
    assert_eq!(corpus, std::fs::read(out.join("data/corpus.tsv")).unwrap(), "gen-data is not idempotent");
    for f in ["data/mlm/sa.txt", "data/base_pairs.tsv", "data/sts.tsv", "data/mcqa.tsv"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let mlm: Vec<String> = ["sa", "sb", "sc", "sd", "se"].iter().map(|l| p(&format!("data/mlm/{l}.txt"))).collect();
    let mut args = with(&["train-tokenizer", "--output", &p("union.bpe"), "--corpus"]);
    args.extend(mlm.iter().cloned());
    okv(args);
    let mut args = with(&["pretrain-base", "--tokenizer", &p("union.bpe"), "--output", &p("base.msew"), "--corpus"]);
    args.extend(mlm.iter().cloned());
    okv(args);
    okv(with(&[
        "pretrain-base",
        "--variant",
        "mlm_plus_contrastive",
        "--init",
        &p("base.msew"),
        "--tokenizer",
        &p("union.bpe"),
        "--pairs",
        &p("data/base_pairs.tsv"),
        "--output",
        &p("base_c.msew"),
    ]));

    for l in ["sa", "sb"] {
        let (txt, bpe) = (p(&format!("data/mlm/{l}.txt")), p(&format!("models/{l}.bpe")));
        okv(with(&["train-tokenizer", "--corpus", &txt, "--output", &bpe]));
        // Adaptation before transplant is out of order.
        let early = runv(with(&["adapt-mlm", "--model", &p("base_c.msew"), "--tokenizer", &bpe, "--corpus", &txt, "--output", &p("x.msew")]));
        assert_eq!(early.status.code(), Some(4), "{}", String::from_utf8_lossy(&early.stderr));
        assert!(stderr_line(&early).starts_with("mse-lab: error[phase_order]"));

        let t = p(&format!("work/{l}.transplant.msew"));
        okv(with(&[
            "transplant",
            "--base",
            &p("base_c.msew"),
            "--base-tokenizer",
            &p("union.bpe"),
            "--tokenizer",
            &bpe,
            "--corpus",
            &txt,
            "--output",
            &t,
        ]));
        let a = p(&format!("work/{l}.adapted.msew"));
        okv(with(&["adapt-mlm", "--model", &t, "--tokenizer", &bpe, "--corpus", &txt, "--output", &a]));
        if l == "sb" {
            // Alignment needs a sentence-trained model.
            let early = runv(with(&[
                "train-cla",
                "--model",
                &a,
                "--tokenizer",
                &bpe,
                "--lang",
                "sb",
                "--pivot-model",
                &a,
                "--pivot-tokenizer",
                &bpe,
                "--corpus",
                &p("data/corpus.tsv"),
                "--output",
                &p("x.msew"),
            ]));
            assert_eq!(early.status.code(), Some(4));
        }
        let m = p(&format!("models/{l}.msew"));
        let sent = with(&[
            "train-sent",
            "--regime",
            "multi_m",
            "--lang",
            l,
            "--model",
            &a,
            "--tokenizer",
            &bpe,
            "--corpus",
            &p("data/corpus.tsv"),
            "--output",
            &m,
        ]);
        okv(sent.clone());
        let first = std::fs::read(&m).unwrap();
        let manifest = std::fs::read(format!("{m}.train.json")).unwrap();
        okv(sent);
        assert_eq!(first, std::fs::read(&m).unwrap(), "train-sent is not bit-identical on rerun");
        assert_eq!(manifest, std::fs::read(format!("{m}.train.json")).unwrap());
    }

    okv(with(&[
        "train-cla",
        "--model",
        &p("models/sb.msew"),
        "--tokenizer",
        &p("models/sb.bpe"),
        "--lang",
        "sb",
        "--pivot-model",
        &p("models/sa.msew"),
        "--pivot-tokenizer",
        &p("models/sa.bpe"),
        "--corpus",
        &p("data/corpus.tsv"),
        "--output",
        &p("aligned/sb.msew"),
    ]));
    std::fs::copy(out.join("models/sb.bpe"), out.join("aligned/sb.bpe")).unwrap();
    for e in std::fs::read_dir(out.join("models")).unwrap() {
        let name = e.unwrap().file_name();
        if name.to_string_lossy().starts_with("sa.") {
            std::fs::copy(out.join("models").join(&name), out.join("aligned").join(&name)).unwrap();
        }
    }

    let input = root.join("lines.txt");
    let sts = std::fs::read_to_string(out.join("data/sts.tsv")).unwrap();
    let line = sts.lines().find(|l| l.starts_with("sb\t")).unwrap().split('\t').nth(2).unwrap().to_string();
    std::fs::write(&input, format!("{line}\n")).unwrap();
    let enc = |mode: &str| okv(with(&["encode", "--dir", &p("aligned"), "--lang", "sb", "--mode", mode, "--input", input.to_str().unwrap()]));
    let (mono, cross) = (enc("mono"), enc("cross"));
    assert_eq!(mono.lines().count(), 1);
    assert_ne!(mono, cross, "a trained adapter must change cross-mode vectors");
    assert_eq!(mono, okv(with(&["encode", "--dir", &p("models"), "--lang", "sb", "--input", input.to_str().unwrap()])));

    let csv = okv(with(&["eval-sts", "--dir", &p("aligned"), "--sts", &p("data/sts.tsv"), "--langs", "sa,sb"]));
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "regime,base_variant,task,mode,lang,seed,metric,value");
    assert!(rows.iter().any(|r| r.contains(",sts,cross,sa-sb,")), "{csv}");
    let csv = okv(with(&["eval-mcqa", "--dir", &p("aligned"), "--mcqa", &p("data/mcqa.tsv"), "--langs", "sa,sb", "--mode", "mono"]));
    assert_eq!(csv.lines().count(), 3, "{csv}");
}

#[test]
fn run_experiment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "run-experiment"]);
        assert!(out.join("manifest.json").exists());
        reports.push(std::fs::read(out.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    // The output directory also comes from the environment.
    let out = dir.path().join("env");
    let res = bin().env("MSE_LAB_OUT", &out).args(["--config", cfg.to_str().unwrap(), "run-experiment"]).output().unwrap();
    assert!(res.status.success());
    assert_eq!(std::fs::read(out.join("report.csv")).unwrap(), reports[0]);
}
