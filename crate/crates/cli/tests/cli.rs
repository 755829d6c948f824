use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn keep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keep")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("exp.cfg");
    std::fs::write(
        &path,
        format!(
            "modes = base, keep\nseeds = 1\ntables.knowledge_ablation = false\ntables.serving = false\n\
             gen.n_users = 400\ngen.n_items = 150\ngen.n_shops = 20\ngen.n_categories = 10\n{extra}"
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn experiment_exits_nonzero_on_failed_check() {
    let dir = tempfile::tempdir().unwrap();
    // a frozen downstream model leaves the plug at zero, so KEEP equals Base
    let cfg = tiny_config(dir.path(), "train.lr = 0\n");
    let out = dir.path().join("out");
    let o = keep(&["experiment", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("[FAIL] KEEP - Base"));
    assert!(out.join("summary.json").exists());
    assert!(out.join("report.txt").exists());
}

#[test]
fn bad_settings_exit_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let o = keep(&["experiment", "--config", &cfg, "--set", "plug_layer=9"]);
    assert_eq!(o.status.code(), Some(2));
    let o = keep(&["experiment", "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
}

#[test]
fn pipeline_through_the_knowledge_service() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let ok = |o: Output| {
        assert!(o.status.success(), "{}\n{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    ok(keep(&[
        "gen", "--out", &p("data"), "--users", "300", "--items", "120", "--categories", "8", "--shops", "15", "--seed",
        "4",
    ]));
    for f in ["super.jsonl", "sub.jsonl", "generator.json"] {
        assert!(dir.path().join("data").join(f).exists(), "{f}");
    }
    ok(keep(&["pretrain", "--data", &p("data"), "--days", "0-4", "--out", &p("ext.ckpt")]));
    let base = ok(keep(&[
        "train", "--data", &p("data"), "--mode", "base", "--days", "5-6", "--out-dir", &p("base"), "--test-day", "7",
    ]));
    assert!(base.contains("test day 7"), "{base}");
    assert!(dir.path().join("base/day-6.ckpt").exists());
    ok(keep(&[
        "train", "--data", &p("data"), "--mode", "keep", "--extractor", &p("ext.ckpt"), "--days", "5-6", "--out-dir",
        &p("keep"),
    ]));
    // warm start from day 5 reproduces the day-6 checkpoint
    ok(keep(&[
        "train", "--data", &p("data"), "--mode", "keep", "--extractor", &p("ext.ckpt"), "--days", "6-6", "--resume",
        &p("keep/day-5.ckpt"), "--out-dir", &p("resumed"),
    ]));
    assert_eq!(
        std::fs::read(dir.path().join("keep/day-6.ckpt")).unwrap(),
        std::fs::read(dir.path().join("resumed/day-6.ckpt")).unwrap()
    );

    ok(keep(&["snapshot", "--data", &p("data"), "--days", "0-4", "--version", "3", "--out-dir", &p("snaps")]));
    let mut server = Command::new(env!("CARGO_BIN_EXE_keep"))
        .args(["serve", "--port", "0", "--snapshot-dir", &p("snaps")])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("listen line").to_string();
    let served = keep(&[
        "train", "--data", &p("data"), "--mode", "keep", "--knowledge", &format!("gkc:{addr}"), "--version", "3",
        "--days", "5-6", "--out-dir", &p("svc"), "--test-day", "7",
    ]);
    let from_file = keep(&[
        "train", "--data", &p("data"), "--mode", "keep", "--knowledge", &format!("file:{}", p("snaps/snapshot-0000000003.ksnp")),
        "--days", "5-6", "--out-dir", &p("file"), "--test-day", "7",
    ]);
    server.kill().unwrap();
    server.wait().unwrap();
    let served = ok(served);
    ok(from_file);
    assert!(served.contains("GAUC"), "{served}");
    // the service and the snapshot file feed identical knowledge
    assert_eq!(
        std::fs::read(dir.path().join("svc/day-6.ckpt")).unwrap(),
        std::fs::read(dir.path().join("file/day-6.ckpt")).unwrap()
    );
}
