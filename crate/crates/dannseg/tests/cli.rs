//! The `dannseg` binary end to end on tiny datasets and networks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_dannseg");

fn dannseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("DANNSEG_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = dannseg(dir, args);
    assert_eq!(
        code(&out),
        0,
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(
        &fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display())),
    )
    .unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let b = fs::read(&p).unwrap();
            (p, b)
        })
        .collect();
    out.sort();
    out
}

/// A small network and a 1/1/2 schedule.
const TINY_CONFIG: &str = r#"{
  "unet": { "base_channels": 2, "depth": 2 },
  "discriminator": { "conv_widths": [4, 4, 8], "hidden": [8, 6] },
  "trainer": { "phase_epochs": [1, 1, 2], "alpha_ramp": 2, "seg_batch": 4, "disc_batch": 6 },
  "eval": { "probe": { "epochs": 50, "learning_rate": 0.1, "train_fraction": 0.5, "min_per_domain": 2 } }
}"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path().join("tiny.json"), TINY_CONFIG).unwrap();
        ok(
            ws.path(),
            &[
                "generate",
                "--out",
                "data",
                "--per-domain",
                "12",
                "--seed",
                "7",
            ],
        );
        ws
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "train",
            "--data",
            "data",
            "--config",
            "tiny.json",
            "--out",
            out,
        ];
        args.extend_from_slice(extra);
        dannseg(self.path(), &args)
    }
}

#[test]
fn generate_rules() {
    let ws = Workspace::new();
    let p = ws.path();
    assert_eq!(
        code(&dannseg(
            p,
            &[
                "generate",
                "--out",
                "data",
                "--per-domain",
                "12",
                "--seed",
                "7"
            ]
        )),
        1,
        "non-empty without --force"
    );
    assert_eq!(
        code(&dannseg(
            p,
            &["generate", "--out", "zero", "--per-domain", "0"]
        )),
        1
    );
    assert_eq!(
        code(&dannseg(p, &["generate", "--out", "bad", "--domains", "Q"])),
        1
    );
    assert_eq!(code(&dannseg(p, &["generate", "--bogus"])), 1);
    ok(
        p,
        &[
            "generate",
            "--out",
            "again",
            "--per-domain",
            "12",
            "--seed",
            "7",
        ],
    );
    assert_eq!(
        tree(&p.join("data"))
            .into_iter()
            .map(|(_, b)| b)
            .collect::<Vec<_>>(),
        tree(&p.join("again"))
            .into_iter()
            .map(|(_, b)| b)
            .collect::<Vec<_>>(),
        "same flags, same bytes"
    );
    ok(
        p,
        &[
            "generate",
            "--out",
            "again",
            "--per-domain",
            "3",
            "--seed",
            "8",
            "--force",
            "--domains",
            "A,C",
        ],
    );
    let m = json(p.join("again/manifest.json"));
    assert_eq!(m["samples"].as_array().unwrap().len(), 6);
    assert!(p.join("again/generate_config.json").is_file());
}

#[test]
fn seed_comes_from_flag_then_environment_then_zero() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let env = |out: &str, seed: &str| {
        let o = Command::new(BIN)
            .args([
                "generate",
                "--out",
                out,
                "--per-domain",
                "2",
                "--domains",
                "A",
            ])
            .current_dir(p)
            .env("DANNSEG_SEED", seed)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
    };
    env("e9", "9");
    ok(
        p,
        &[
            "generate",
            "--out",
            "f9",
            "--per-domain",
            "2",
            "--domains",
            "A",
            "--seed",
            "9",
        ],
    );
    ok(
        p,
        &[
            "generate",
            "--out",
            "z",
            "--per-domain",
            "2",
            "--domains",
            "A",
        ],
    );
    assert_eq!(
        fs::read(p.join("e9/A_0000.img")).unwrap(),
        fs::read(p.join("f9/A_0000.img")).unwrap()
    );
    assert_ne!(
        fs::read(p.join("e9/A_0000.img")).unwrap(),
        fs::read(p.join("z/A_0000.img")).unwrap()
    );
    assert_eq!(json(p.join("z/manifest.json"))["generator"]["seed"], 0);
    let bad = Command::new(BIN)
        .args(["generate", "--out", "x", "--per-domain", "2"])
        .current_dir(p)
        .env("DANNSEG_SEED", "many")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 1);
}

#[test]
fn train_eval_probe_end_to_end() {
    let ws = Workspace::new();
    let p = ws.path();
    let before = tree(&p.join("data"));

    let out = ws.train("adv", &["--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = json(p.join("adv/run_config.json"));
    assert_eq!(cfg["seed"], 3, "flag beats file and defaults");
    assert_eq!(cfg["trainer"]["seed"], 3);
    assert_eq!(cfg["unet"]["base_channels"], 2, "file beats defaults");
    assert_eq!(cfg["unet"]["kernel_size"], 3, "defaults fill the rest");

    let csv = fs::read_to_string(p.join("adv/training_log.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "one row per epoch");
    for (e, row) in rows.iter().enumerate() {
        let ckpt = format!("checkpoints/epoch_{e:04}.ckpt");
        assert!(row.ends_with(&ckpt), "{row}");
        assert!(p.join("adv").join(&ckpt).is_file());
    }
    let log = json(p.join("adv/training_log.json"));
    assert_eq!(log["config"], cfg);
    assert_eq!(log["records"].as_array().unwrap().len(), 4);
    assert!(p.join("adv/selection.json").is_file());

    let out = ws.train("base", &["--seed", "3", "--mode", "baseline"]);
    assert_eq!(code(&out), 0);
    let base_csv = fs::read_to_string(p.join("base/training_log.csv")).unwrap();
    for row in base_csv.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(
            (f[4], f[5]),
            ("", ""),
            "baseline has no discriminator: {row}"
        );
    }
    let last =
        dannseg::checkpoint::Checkpoint::load(&p.join("base/checkpoints/last.ckpt")).unwrap();
    assert!(last.header.tensors.iter().all(|t| !t.name.contains("disc")));

    let ck = "adv/checkpoints/epoch_0003.ckpt";
    ok(
        p,
        &[
            "eval",
            "--data",
            "data",
            "--checkpoint",
            ck,
            "--out",
            "ev",
            "--compare",
            ck,
        ],
    );
    let m = json(p.join("ev/metrics.json"));
    let groups: Vec<&str> = m["aggregates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["group"].as_str().unwrap())
        .collect();
    assert_eq!(groups, ["A", "B", "D", "All"]);
    let comparisons = m["comparisons"].as_array().unwrap();
    assert!(!comparisons.is_empty());
    for c in comparisons {
        assert_eq!(c["test"]["p"], 1.0, "identical checkpoints");
    }
    let dice_classes: Vec<&str> = comparisons
        .iter()
        .filter(|c| c["group"] == "All" && c["metric"] == "dice")
        .map(|c| c["class"].as_str().unwrap())
        .collect();
    assert_eq!(dice_classes, ["lv", "myo", "rv"]);
    assert!(p.join("ev/eval_config.json").is_file());
    let metrics = fs::read_to_string(p.join("ev/metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().count() - 1,
        m["aggregates"][3]["count"].as_u64().unwrap() as usize
    );

    ok(
        p,
        &[
            "eval",
            "--data",
            "data",
            "--checkpoint",
            ck,
            "--out",
            "ev2",
            "--compare",
            "base/checkpoints/epoch_0003.ckpt",
        ],
    );

    let out = ok(
        p,
        &[
            "probe",
            "--data",
            "data",
            "--checkpoint",
            ck,
            "--out",
            "pr",
            "--domains",
            "A,B,C",
        ],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("chance 0.3333"));
    let probe = json(p.join("pr/probe.json"));
    assert_eq!(probe["result"]["chance"].as_f64().unwrap(), 1.0 / 3.0);
    let emb = fs::read_to_string(p.join("pr/embeddings.csv")).unwrap();
    let header: Vec<&str> = emb.lines().next().unwrap().split(',').collect();
    // bottleneck channels C = 2 · 2^2 = 8, embedding width 2C
    assert_eq!(header.len(), 2 + 16);
    assert_eq!(header[..3], ["id", "domain", "v_0"]);
    assert_eq!(header[17], "v_15");
    assert_eq!(emb.lines().count() - 1, 48, "one row per sample");
    assert!(p.join("pr/probe_config.json").is_file());

    assert_eq!(
        code(&dannseg(
            p,
            &[
                "probe",
                "--data",
                "data",
                "--checkpoint",
                ck,
                "--out",
                "pr1",
                "--domains",
                "A"
            ]
        )),
        2
    );
    assert_eq!(
        code(&dannseg(
            p,
            &[
                "probe",
                "--data",
                "data",
                "--checkpoint",
                ck,
                "--out",
                "prz",
                "--domains",
                "A,Z"
            ]
        )),
        2
    );

    assert_eq!(tree(&p.join("data")), before, "inputs untouched");
}

#[test]
fn resume_reproduces_the_uninterrupted_log() {
    let ws = Workspace::new();
    let p = ws.path();
    assert_eq!(code(&ws.train("full", &[])), 0);
    assert_eq!(code(&ws.train("cut", &["--max-epochs", "2"])), 0);
    let partial = fs::read_to_string(p.join("cut/training_log.csv")).unwrap();
    assert_eq!(partial.lines().count(), 3);
    assert!(!p.join("cut/selection.json").exists());
    assert_eq!(
        code(&ws.train("cut", &[])),
        1,
        "existing run needs --resume or --force"
    );
    assert_eq!(
        code(&ws.train("cut", &["--resume"])),
        1,
        "configuration flags conflict with --resume"
    );
    ok(p, &["train", "--data", "data", "--out", "cut", "--resume"]);
    assert_eq!(
        fs::read(p.join("full/training_log.csv")).unwrap(),
        fs::read(p.join("cut/training_log.csv")).unwrap()
    );
    assert_eq!(
        json(p.join("full/training_log.json")),
        json(p.join("cut/training_log.json"))
    );
    assert_eq!(
        fs::read(p.join("full/checkpoints/last.ckpt")).unwrap(),
        fs::read(p.join("cut/checkpoints/last.ckpt")).unwrap()
    );
    assert_eq!(
        code(&dannseg(
            p,
            &[
                "train",
                "--data",
                "data",
                "--out",
                "x",
                "--resume",
                "full/checkpoints/epoch_0003.ckpt"
            ]
        )),
        1,
        "per-epoch checkpoints carry no optimizer state"
    );
}

#[test]
fn errors_map_to_exit_codes() {
    let ws = Workspace::new();
    let p = ws.path();
    assert_eq!(
        code(&dannseg(p, &["train", "--data", "nowhere", "--out", "o"])),
        2
    );
    fs::create_dir(p.join("empty")).unwrap();
    assert_eq!(
        code(&dannseg(p, &["train", "--data", "empty", "--out", "o"])),
        2
    );
    assert_eq!(
        code(&ws.train("data/inside", &[])),
        1,
        "output inside the dataset"
    );
    assert_eq!(
        code(&dannseg(
            p,
            &[
                "train",
                "--data",
                "data",
                "--out",
                "o",
                "--config",
                "missing.json"
            ]
        )),
        1
    );
    fs::write(p.join("unknown.json"), r#"{"trainer": {"bogus": 1}}"#).unwrap();
    assert_eq!(
        code(&dannseg(
            p,
            &[
                "train",
                "--data",
                "data",
                "--out",
                "o",
                "--config",
                "unknown.json"
            ]
        )),
        1
    );
    assert_eq!(code(&ws.train("o", &["--phase-epochs", "1,1"])), 1);
    assert_eq!(code(&ws.train("o2", &["--alpha-ramp", "9"])), 1);
    assert_eq!(code(&dannseg(p, &["frobnicate"])), 1);
    assert_eq!(
        code(&dannseg(
            p,
            &[
                "eval",
                "--data",
                "data",
                "--checkpoint",
                "none.ckpt",
                "--out",
                "e"
            ]
        )),
        2
    );

    assert_eq!(
        code(&ws.train("ok", &["--phase-epochs", "1,1,1", "--alpha-ramp", "1"])),
        0
    );
    fs::write(
        p.join("wide.json"),
        r#"{"unet": {"base_channels": 3, "depth": 2}}"#,
    )
    .unwrap();
    let out = dannseg(
        p,
        &[
            "eval",
            "--data",
            "data",
            "--checkpoint",
            "ok/checkpoints/epoch_0002.ckpt",
            "--out",
            "e",
            "--config",
            "wide.json",
        ],
    );
    assert_eq!(code(&out), 1, "architecture mismatch");
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape"));
}

#[test]
fn non_finite_training_exits_3_with_a_diagnostic() {
    let ws = Workspace::new();
    let p = ws.path();
    let mut cfg: Value = serde_json::from_str(TINY_CONFIG).unwrap();
    cfg["trainer"]["seg_lr_pretrain"] = 1e30.into();
    fs::write(p.join("nan.json"), cfg.to_string()).unwrap();
    let out = dannseg(
        p,
        &[
            "train", "--data", "data", "--config", "nan.json", "--out", "nan",
        ],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let failure = json(p.join("nan/failure.json"));
    assert_eq!(failure["epoch"], 0);
    assert!(failure["batch"].is_u64());
    assert!(failure["message"]
        .as_str()
        .unwrap()
        .contains("segmentation step"));
    assert!(
        p.join("nan/run_config.json").is_file(),
        "config echoed before work"
    );
}
