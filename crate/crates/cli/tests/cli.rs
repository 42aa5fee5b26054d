use adaptrack::soup::{self, TensorArchive};
use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adaptrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptrack"))
        .args(args)
        .env_remove("ADAPTRACK_WORKDIR")
        .output()
        .expect("spawn adaptrack")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn archive(values: &[f32]) -> TensorArchive {
    let mut a = TensorArchive::new();
    a.insert("w", vec![values.len() as u64], values.to_vec()).unwrap();
    a
}

fn script(path: &Path, body: &str) {
    fs::write(path, format!("#!/bin/sh\n{body}\n")).unwrap();
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(0o755)).unwrap();
}

const GT: &str = "\
1,1,10,10,20,40,1,1,1
1,2,100,10,20,40,1,1,1
2,1,12,10,20,40,1,1,1
2,2,102,10,20,40,1,1,1
";

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&adaptrack(&["frobnicate"])), 1);
    assert_eq!(code(&adaptrack(&["soup", "uniform", "--in", "a.tarc"])), 1);
    assert_eq!(code(&adaptrack(&["mosaic", "--source", "s", "--target", "t", "--count", "1", "--out", "o", "--size", "big"])), 1);
    let help = adaptrack(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("pipeline"));
    assert_eq!(code(&adaptrack(&["--version"])), 0);
}

#[test]
fn eval_writes_report_and_json() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("gt")).unwrap();
    fs::create_dir_all(dir.path().join("res")).unwrap();
    fs::write(dir.path().join("gt/S.txt"), GT).unwrap();
    fs::write(dir.path().join("res/S.txt"), GT.replace(",1,1,1\n", ",1,-1,-1\n")).unwrap();
    let report = dir.path().join("out/report.json");
    let o = adaptrack(&["--output", "json", "eval", "--gt", p(&dir.path().join("gt")), "--results", p(&dir.path().join("res")), "--report", p(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout: Value = serde_json::from_slice(&o.stdout).unwrap();
    let file: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(stdout, file);
    for key in ["hota", "mota", "idf1"] {
        assert_eq!(file[key], 1.0, "{key}");
    }
    assert_eq!(file["per_sequence"]["S"]["fn"], 0);

    let human = adaptrack(&["eval", "--gt", p(&dir.path().join("gt")), "--results", p(&dir.path().join("res"))]);
    assert!(String::from_utf8_lossy(&human.stdout).contains("COMBINED"));
}

#[test]
fn bad_data_exits_2_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("gt")).unwrap();
    fs::write(dir.path().join("gt/S.txt"), GT).unwrap();
    let o = adaptrack(&["--output", "json", "eval", "--gt", p(&dir.path().join("gt")), "--results", p(&dir.path().join("missing"))]);
    assert_eq!(code(&o), 2);
    let err: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["exit_code"], 2);
    assert!(err["error"].as_str().unwrap().contains('S'));

    fs::write(dir.path().join("broken.tarc"), b"TARC\x01\x00garbage").unwrap();
    let o = adaptrack(&["soup", "uniform", "--in", p(&dir.path().join("broken.tarc")), "--out", p(&dir.path().join("x.tarc"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn pseudo_threshold_from_flag() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("det")).unwrap();
    fs::write(dir.path().join("det/S.txt"), "1,-1,0,0,10,10,0.9,-1,-1,-1\n1,-1,20,0,10,10,0.6,-1,-1,-1\n").unwrap();
    let out = dir.path().join("labels");
    let o = adaptrack(&["pseudo", "--det", p(&dir.path().join("det")), "--out", p(&out), "--threshold", "0.5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("S.txt")).unwrap().lines().count(), 2);
    let o = adaptrack(&["pseudo", "--det", p(&dir.path().join("det")), "--out", p(&out), "--threshold", "1.5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn soup_uniform_and_greedy() {
    let dir = tempfile::tempdir().unwrap();
    soup::write_archive_file(&dir.path().join("a.tarc"), &archive(&[1.0, 3.0])).unwrap();
    soup::write_archive_file(&dir.path().join("b.tarc"), &archive(&[3.0, 5.0])).unwrap();
    let out = dir.path().join("mean.tarc");
    let o = adaptrack(&["soup", "uniform", "--in", p(&dir.path().join("a.tarc")), p(&dir.path().join("b.tarc")), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(soup::read_archive_file(&out).unwrap().same_tensors(&archive(&[2.0, 4.0])));

    fs::write(dir.path().join("list.txt"), "a.tarc 0.5\nb.tarc 0.4\n").unwrap();
    let eval = dir.path().join("eval.sh");
    script(&eval, "echo 0.5");
    let log = dir.path().join("log.json");
    let greedy = dir.path().join("greedy.tarc");
    let o = adaptrack(&["soup", "greedy", "--candidates", p(&dir.path().join("list.txt")), "--eval-cmd", p(&eval), "--out", p(&greedy), "--log", p(&log)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log: Value = serde_json::from_slice(&fs::read(&log).unwrap()).unwrap();
    assert_eq!(log["ingredients"].as_array().unwrap().len(), 2);

    script(&eval, "exit 9");
    let o = adaptrack(&["soup", "greedy", "--candidates", p(&dir.path().join("list.txt")), "--eval-cmd", p(&eval), "--out", p(&greedy)]);
    assert_eq!(code(&o), 3);
}

fn write_target(root: &Path) {
    let seq = root.join("SEQ");
    fs::create_dir_all(seq.join("img1")).unwrap();
    fs::write(
        seq.join("seqinfo.ini"),
        "[Sequence]\nname=SEQ\nimDir=img1\nframeRate=30\nseqLength=1\nimWidth=8\nimHeight=8\nimExt=.png\n",
    )
    .unwrap();
}

#[test]
fn pipeline_external_failure_exits_3_and_status_reports_it() {
    let dir = tempfile::tempdir().unwrap();
    write_target(&dir.path().join("source"));
    write_target(&dir.path().join("target"));
    soup::write_archive_file(&dir.path().join("g1.tarc"), &archive(&[1.0])).unwrap();
    let infer = dir.path().join("infer.sh");
    script(&infer, "echo inference crashed >&2; exit 5");
    let config = serde_json::json!({
        "rounds": 2,
        "source_dataset": dir.path().join("source"),
        "target_dataset": dir.path().join("target"),
        "warmup_checkpoint": dir.path().join("g1.tarc"),
        "inference_command": infer,
        "trainer_command": "true",
    });
    let config_path = dir.path().join("pipeline.json");
    fs::write(&config_path, config.to_string()).unwrap();
    let work = dir.path().join("work");
    let o = adaptrack(&["--config", p(&config_path), "pipeline", "run", "--workdir", p(&work)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    let o = adaptrack(&["--output", "json", "pipeline", "status", "--workdir", p(&work)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let status: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(status["next_round"], 1);
    assert_eq!(status["rounds"][0]["status"], "failed");
    assert_eq!(status["rounds"][0]["failed_stage"], "inference");

    let o = adaptrack(&["pipeline", "run", "--workdir", p(&work)]);
    assert_eq!(code(&o), 2, "run without --config");
}

#[test]
fn zero_jobs_is_a_usage_error() {
    assert_eq!(code(&adaptrack(&["--jobs", "0", "pipeline", "status", "--workdir", "/nonexistent"])), 1);
}
