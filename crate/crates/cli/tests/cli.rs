use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn eegdm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eegdm"))
        .current_dir(dir)
        .args(args)
        .args(["--config", "tiny.json", "--threads", "1"])
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = eegdm(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn failure(dir: &Path, args: &[&str]) -> (i32, Value) {
    let out = eegdm(dir, args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let last = stderr.lines().last().expect("error line");
    (out.status.code().unwrap(), serde_json::from_str(last).expect("JSON error line"))
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "seeds": 2,
        "synth.n_per_class": [10, 10, 10],
        "synth.test_per_class": [4, 4, 4],
        "synth.channels": 2,
        "synth.samples": 200,
        "preprocess.window_secs": 1.0,
        "backbone.n_layers": 2,
        "backbone.residual_channels": 8,
        "backbone.gate_channels": 8,
        "backbone.filter_channels": 8,
        "backbone.state_dim": 4,
        "backbone.embed_dim": 8,
        "backbone.num_channels": 2,
        "backbone.steps": 10,
        "pretrain.optim.epochs": 2,
        "pretrain.optim.batch_size": 8,
        "pretrain.crop": 100,
        "extract.pools": 5,
        "lft.dim": 8,
        "lft.heads": 2,
        "lft.mlp_hidden": 16,
        "lft.fusion_tokens": 2,
        "lft.encoder_blocks": 1,
        "finetune.optim.epochs": 3,
        "finetune.optim.batch_size": 8,
        "finetune.min_epochs": 1,
    });
    fs::write(dir.path().join("tiny.json"), cfg.to_string()).unwrap();
    dir
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for split in ["train", "valid", "test"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(split)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
        }
    }
    out.push(("manifest".into(), fs::read(dir.join("manifest.json")).unwrap()));
    out
}

#[test]
fn synth_is_deterministic_and_honours_imbalance() {
    let ws = workspace();
    let d = ws.path();
    let v = ok(d, &["synth", "--data", "a", "--seed", "3"]);
    assert_eq!(v["histogram"].as_array().unwrap().len(), 3);
    ok(d, &["synth", "--data", "b", "--seed", "3"]);
    assert_eq!(tree_bytes(&d.join("a")), tree_bytes(&d.join("b")));
    ok(d, &["synth", "--data", "c", "--seed", "4"]);
    assert_ne!(tree_bytes(&d.join("a")), tree_bytes(&d.join("c")));

    let v = ok(d, &["synth", "--data", "imb", "--imbalance", "10:1", "--set", "synth.n_per_class=[100,100,100]"]);
    let hist = &v["histogram"];
    let count = |split: usize, class: usize| hist[split][1][class].as_u64().unwrap();
    assert_eq!(count(0, 0) + count(1, 0), 10 * (count(0, 1) + count(1, 1)));
}

#[test]
fn errors_are_single_json_lines_with_exit_codes() {
    let ws = workspace();
    let d = ws.path();
    let (code, err) = failure(d, &["pretrain", "--set", "backbone.n_layers=0"]);
    assert_eq!((code, err["error"].as_str().unwrap()), (2, "config"));
    let (code, _) = failure(d, &["pretrain", "--set", "backbone.no_such_key=1"]);
    assert_eq!(code, 2);
    let (code, _) = failure(d, &["extract", "--pool", "median"]);
    assert_eq!(code, 2);
    let (code, err) = failure(d, &["extract", "--data", "missing", "--run", "nothing"]);
    assert_eq!((code, err["error"].as_str().unwrap()), (3, "data"));
    let (code, _) = failure(d, &["generate", "--run", "nothing"]);
    assert_eq!(code, 3);
    let (code, _) = failure(d, &["eval", "--run", "nothing"]);
    assert_eq!(code, 3);

    ok(d, &["synth"]);
    let (code, err) = failure(d, &["pretrain", "--set", "pretrain.optim.schedule={\"kind\":\"constant\",\"lr\":1e30}", "--epochs", "3"]);
    assert_eq!((code, err["error"].as_str().unwrap()), (4, "numeric"));
}

#[test]
fn pipeline_runs_end_to_end() {
    let ws = workspace();
    let d = ws.path();
    ok(d, &["synth"]);

    let v = ok(d, &["pretrain"]);
    assert_eq!(v["epochs"].as_array().unwrap().len(), 2);
    let log = fs::read_to_string(d.join("runs/pretrain.jsonl")).unwrap();
    let recs: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 2);
    for key in ["epoch", "step", "lr", "loss", "val_metric"] {
        assert!(recs[0].get(key).is_some(), "log lacks {key}");
    }
    let step2 = recs[1]["step"].as_u64().unwrap();
    let v = ok(d, &["pretrain", "--resume", "--epochs", "3"]);
    let epochs = v["epochs"].as_array().unwrap();
    assert_eq!(epochs.len(), 1);
    assert_eq!(epochs[0]["epoch"], 3);
    assert_eq!(epochs[0]["step"].as_u64().unwrap(), step2 + step2 / 2);
    assert_eq!(fs::read_to_string(d.join("runs/pretrain.jsonl")).unwrap().lines().count(), 3);

    let v = ok(d, &["extract"]);
    assert_eq!(v["reused"], false);
    assert_eq!(v["shape"], serde_json::json!([2, 2, 5, 8]));
    let v = ok(d, &["extract"]);
    assert_eq!(v["reused"], true);
    let v = ok(d, &["extract", "--pool", "avg", "--step", "2"]);
    assert_eq!(v["reused"], false);

    let v = ok(d, &["finetune"]);
    assert_eq!(v["per_seed"].as_array().unwrap().len(), 2);
    for key in ["kappa", "bacc", "wf1"] {
        assert!(v["summary"][key]["mean"].is_number() && v["summary"][key]["std"].is_number());
    }
    assert!(v["per_seed"][0]["confusion"].is_array());
    assert_eq!(v["lft"]["fusion_blocks"], 2);
    let report: Value = serde_json::from_slice(&fs::read(d.join("runs/report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"], v["summary"]);

    let e = ok(d, &["eval"]);
    assert_eq!(e["per_seed"], v["per_seed"]);
    let r = ok(d, &["eval", "--resample-test", "190"]);
    assert_eq!(r["rate"], 190.0);
    assert!(r["summary"]["bacc"]["mean"].as_f64().unwrap() >= 0.0);

    let v = ok(d, &["finetune", "--layers", "second-half", "--fusion", "none", "--seeds", "1"]);
    assert_eq!(v["lft"]["fusion_blocks"], 1);
    assert_eq!(v["lft"]["fusion"], "none");
    let v = ok(d, &["finetune", "--fusion", "mean", "--class-weights", "--seeds", "1"]);
    assert_eq!(v["lft"]["fusion"], "mean");

    let avg_cache = d.join("runs/latents/gate-avg-noiseless-t2-p5");
    assert!(avg_cache.join("train").is_dir());
    let (code, _) = failure(d, &["finetune", "--cache", avg_cache.to_str().unwrap()]);
    assert_eq!(code, 2);

    let g = ok(d, &["generate", "--count", "2", "--out", "gen_a", "--seed", "5"]);
    ok(d, &["generate", "--count", "2", "--out", "gen_b", "--seed", "5"]);
    assert_eq!(g["files"].as_array().unwrap().len(), 2);
    for name in ["gen_0000.seg", "gen_0001.seg", "schedule.csv", "snr.csv", "waveforms.csv"] {
        assert_eq!(fs::read(d.join("gen_a").join(name)).unwrap(), fs::read(d.join("gen_b").join(name)).unwrap());
    }
    let seg = eegdm::signal::read_segment(&d.join("gen_a/gen_0000.seg")).unwrap();
    assert_eq!((seg.header.channels, seg.header.samples), (2, 200));
    assert!(seg.data.iter().all(|v| v.is_finite()));
    assert_eq!(fs::read_to_string(d.join("gen_a/schedule.csv")).unwrap().lines().count(), 11);
}
