//! Black-box tests of the `vccsa` binary: determinism, exit codes, dataset
//! QA and checkpoint handling.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn vccsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vccsa"))
        .args(args)
        .env_remove("CSMV_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Generates a small corpus into `dir` and returns it.
fn gen(dir: &Path, seed: u64, extra: &[&str]) -> PathBuf {
    let seed = seed.to_string();
    let mut args = vec!["gen", "--out", path(dir), "--seed", &seed, "--set", "n_videos=6", "--set", "comments_per_video=4"];
    args.extend_from_slice(extra);
    let out = vccsa(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.to_path_buf()
}

/// SHA-256 over every file's relative path and contents, in sorted order.
fn tree_digest(root: &Path) -> String {
    fn walk(dir: &Path, files: &mut Vec<PathBuf>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, files);
            } else {
                files.push(p);
            }
        }
    }
    let mut files = Vec::new();
    walk(root, &mut files);
    files.sort();
    let mut hasher = Sha256::new();
    for f in files {
        hasher.update(f.strip_prefix(root).unwrap().to_string_lossy().as_bytes());
        hasher.update(fs::read(&f).unwrap());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn gen_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = gen(&tmp.path().join("a"), 3, &[]);
    let b = gen(&tmp.path().join("b"), 3, &[]);
    let c = gen(&tmp.path().join("c"), 4, &[]);
    assert_eq!(tree_digest(&a), tree_digest(&b));
    assert_ne!(tree_digest(&a), tree_digest(&c));
}

#[test]
fn gen_reports_the_text_only_ceiling() {
    let tmp = TempDir::new().unwrap();
    let out = vccsa(&["gen", "--out", path(tmp.path()), "--set", "n_videos=2", "--set", "rho=1.0"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("bayes_ceiling 0.50"), "{}", stdout(&out));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&vccsa(&["frobnicate"])), 2);
    let tmp = TempDir::new().unwrap();
    let dir = path(tmp.path());
    assert_eq!(code(&vccsa(&["gen", "--out", dir, "--set", "no_such_key=1"])), 2);
    assert_eq!(code(&vccsa(&["gen", "--out", dir, "--set", "rho=2.0"])), 2);
    assert_eq!(code(&vccsa(&["stats"])), 2, "no data directory anywhere");
    let config = tmp.path().join("bad.toml");
    fs::write(&config, "epochs = \"many\"\n").unwrap();
    assert_eq!(code(&vccsa(&["--config", path(&config), "gen", "--out", dir])), 2);
}

#[test]
fn data_errors_exit_with_three() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nowhere");
    assert_eq!(code(&vccsa(&["stats", "--data", path(&missing)])), 3);
    assert_eq!(code(&vccsa(&["check", "--data", path(&missing)])), 3);
}

#[test]
fn config_file_and_data_dir_key_are_honoured() {
    let tmp = TempDir::new().unwrap();
    let data = gen(&tmp.path().join("data"), 0, &[]);
    let config = tmp.path().join("run.toml");
    fs::write(&config, format!("data_dir = {:?}\n", path(&data))).unwrap();
    let out = vccsa(&["--config", path(&config), "stats"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("videos 6  comments 24"), "{}", stdout(&out));
    let env = Command::new(env!("CARGO_BIN_EXE_vccsa"))
        .args(["check"])
        .env("CSMV_DATA_DIR", &data)
        .output()
        .unwrap();
    assert_eq!(code(&env), 0);
    assert!(stdout(&env).contains("OK"));
}

fn rewrite_comments(data: &Path, f: impl Fn(usize, &str) -> String) {
    let file = data.join("comments.jsonl");
    let text = fs::read_to_string(&file).unwrap();
    let lines: Vec<String> = text.lines().enumerate().map(|(i, l)| f(i, l)).collect();
    fs::write(&file, lines.join("\n") + "\n").unwrap();
}

#[test]
fn check_names_a_dangling_video() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), 0, &[]);
    rewrite_comments(&data, |i, l| if i == 5 { l.replace("\"video_id\":\"v00001\"", "\"video_id\":\"v99999\"") } else { l.to_string() });
    let out = vccsa(&["check", "--data", path(&data)]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("v99999") && err.contains("v00001_c01"), "{err}");
}

#[test]
fn check_names_an_unknown_label() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), 0, &[]);
    rewrite_comments(&data, |i, l| {
        if i == 2 {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["emotion"] = "ecstasy".into();
            v.to_string()
        } else {
            l.to_string()
        }
    });
    let out = vccsa(&["check", "--data", path(&data)]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("ecstasy") && err.contains("line 3"), "{err}");
}

#[test]
fn check_names_a_truncated_feature_file() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), 0, &[]);
    let file = data.join("features").join("v00004.csmv");
    let bytes = fs::read(&file).unwrap();
    fs::write(&file, &bytes[..bytes.len() - 7]).unwrap();
    let out = vccsa(&["check", "--data", path(&data)]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("v00004.csmv") && err.contains("truncated"), "{err}");
}

#[test]
fn check_rejects_a_split_that_misses_comments() {
    let tmp = TempDir::new().unwrap();
    let data = gen(&tmp.path().join("d"), 0, &[]);
    let split = tmp.path().join("split.json");
    fs::write(&split, r#"{"seed":0,"granularity":"comment","assignment":{"v00000_c00":"train"}}"#).unwrap();
    let out = vccsa(&["check", "--data", path(&data), "--split", path(&split)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("1 assigned comments, corpus has 24"), "{}", stderr(&out));
}

/// Writes a validator file equal to the corpus labels except for the first `changed` comments.
fn validator(data: &Path, file: &Path, changed: usize) {
    let text = fs::read_to_string(data.join("comments.jsonl")).unwrap();
    let lines: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            if i < changed {
                let flipped = if v["emotion"] == "fear" { "sadness" } else { "fear" };
                v["emotion"] = flipped.into();
            }
            v.to_string()
        })
        .collect();
    fs::write(file, lines.join("\n") + "\n").unwrap();
}

#[test]
fn validator_disagreement_boundary() {
    let tmp = TempDir::new().unwrap();
    // 5 videos x 4 comments = 20 items.
    let data = gen(&tmp.path().join("d"), 0, &["--set", "n_videos=5"]);
    let agree = tmp.path().join("a.jsonl");
    validator(&data, &agree, 0);
    for (changed, flagged, shown) in [(3, true, "15.00%"), (2, false, "10.00%")] {
        let other = tmp.path().join(format!("b{changed}.jsonl"));
        validator(&data, &other, changed);
        let out = vccsa(&["check", "--data", path(&data), "--validators", path(&agree), path(&other)]);
        assert_eq!(code(&out) == 3, flagged, "{changed} changes: {}", stderr(&out));
        assert!(stdout(&out).contains(shown), "{}", stdout(&out));
    }
}

fn train_tiny(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--data", path(data), "--out", path(out), "--set", "preset=tiny", "--set", "epochs=2",
    ];
    args.extend_from_slice(extra);
    vccsa(&args)
}

#[test]
fn train_eval_inspect_round_trip() {
    let tmp = TempDir::new().unwrap();
    let data = gen(&tmp.path().join("d"), 0, &[]);
    let run = tmp.path().join("run");
    let out = train_tiny(&data, &run, &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for file in ["model.ckpt", "history.jsonl", "vocab.txt", "split.json", "config.toml", "report.json", "report.txt"] {
        assert!(run.join(file).exists(), "{file} missing");
    }
    let ckpt = run.join("model.ckpt");
    let eval = vccsa(&["eval", "--data", path(&data), "--checkpoint", path(&ckpt), "--part", "dev"]);
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    assert!(stdout(&eval).contains("dev part"));

    let inspect = vccsa(&["inspect", "--data", path(&data), "--checkpoint", path(&ckpt), "--comment", "v00002_c03"]);
    assert_eq!(code(&inspect), 0, "{}", stderr(&inspect));
    let dump: serde_json::Value = serde_json::from_slice(&inspect.stdout).unwrap();
    assert_eq!(dump["video_id"], "v00002");
    let scales = dump["diagnostics"]["scales"].as_array().unwrap();
    assert_eq!(scales.len(), 2);
    for s in scales {
        let w = s["grounding"].as_array().unwrap();
        assert_eq!(w.len(), 32);
        assert!(w.iter().all(|x| x.as_f64().unwrap() >= 0.0));
    }

    let missing = vccsa(&["inspect", "--data", path(&data), "--checkpoint", path(&ckpt), "--comment", "nope"]);
    assert_eq!(code(&missing), 3);
    assert!(stderr(&missing).contains("nope"));

    // A corpus with a different frame width cannot be scored by this checkpoint.
    let other = gen(&tmp.path().join("other"), 0, &["--set", "d_raw=12"]);
    let mismatch = vccsa(&["eval", "--data", path(&other), "--checkpoint", path(&ckpt)]);
    assert_eq!(code(&mismatch), 3, "{}", stderr(&mismatch));
    assert!(stderr(&mismatch).contains("wide frames"), "{}", stderr(&mismatch));
}

#[test]
fn text_only_checkpoint_cannot_be_inspected() {
    let tmp = TempDir::new().unwrap();
    let data = gen(&tmp.path().join("d"), 0, &[]);
    let run = tmp.path().join("run");
    assert_eq!(code(&train_tiny(&data, &run, &["--set", "model=text_only"])), 0);
    let out = vccsa(&["inspect", "--data", path(&data), "--checkpoint", path(&run.join("model.ckpt")), "--comment", "v00000_c00"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn ablate_rejects_the_full_model_as_a_mode() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), 0, &[]);
    assert_eq!(code(&vccsa(&["ablate", "--data", path(&data), "--mode", "full"])), 2);
    assert_eq!(code(&vccsa(&["ablate", "--data", path(&data), "--mode", "bogus"])), 2);
}

#[test]
fn sweep_reports_mean_and_spread() {
    let tmp = TempDir::new().unwrap();
    let data = gen(&tmp.path().join("d"), 0, &[]);
    let out_dir = tmp.path().join("sweep");
    let out = vccsa(&[
        "sweep", "--data", path(&data), "--out", path(&out_dir), "--with-baseline", "--set", "preset=tiny",
        "--set", "epochs=1", "--set", "seeds=[0, 1]",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("Text only") && table.contains("VC-CSA") && table.contains('±'), "{table}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report[1]["summary"]["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn help_lists_every_config_key() {
    let out = vccsa(&["--help"]);
    assert_eq!(code(&out), 0);
    let help = stdout(&out);
    for key in [
        "data_dir", "split_file", "split_seed", "granularity", "text_features", "seed", "n_videos",
        "comments_per_video", "n_topics", "segments_per_video", "frames_per_segment", "d_raw", "rho",
        "noise_sigma", "whole_video_fraction", "modifier_probability", "model", "preset", "scales",
        "consensus_layers", "consensus_tokens", "heads", "d_video", "d_text", "d_consensus", "ffn_multiplier",
        "memory_hidden", "memory_bidirectional", "memory_shared", "ablation", "epochs", "batch_size",
        "learning_rate", "beta1", "beta2", "epsilon", "weight_decay", "clip_norm", "patience", "seeds", "v_cap",
        "t_cap",
    ] {
        assert!(help.lines().any(|l| l.trim_start().starts_with(&format!("{key} "))), "{key} missing from --help");
    }
    assert!(help.contains("Exit codes"));
}
