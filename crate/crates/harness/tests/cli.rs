mod common;

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use common::*;
use serde_json::Value;

fn socpilot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_socpilot")).args(args).output().unwrap()
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn run(cfg: &Path, out: &Path) -> Value {
    let o = socpilot(&["--json", "run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    json_of(&o)
}

#[test]
fn validate_accepts_recipes_and_rejects_negatives() {
    let r = recipes();
    let good: Vec<String> = ["polarization.cfg", "ubi.cfg", "hurricane.cfg"].iter().map(|f| r.join(f).to_string_lossy().into_owned()).collect();
    let mut args = vec!["validate"];
    args.extend(good.iter().map(String::as_str));
    assert_eq!(socpilot(&args).status.code(), Some(0));

    let mut seen = 0;
    for e in std::fs::read_dir(r.join("negative")).unwrap() {
        let p = e.unwrap().path();
        let text = std::fs::read_to_string(&p).unwrap();
        let expect = text.lines().next().unwrap().strip_prefix("# expect: ").unwrap().trim();
        let o = socpilot(&["--json", "validate", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{}", p.display());
        let v = json_of(&o);
        assert_eq!(v["ok"], false);
        let display = v["error"]["display"].as_str().unwrap();
        assert!(display.contains(expect), "{}: `{display}` lacks `{expect}`", p.display());
        assert!(v["error"]["line"].is_u64(), "{}: no line in {v}", p.display());
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn malformed_config_reports_position_in_human_mode() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), "bad.cfg", "name = \"x\"\nseed = 1\n[horizon]\ndays = = 3\n");
    let o = socpilot(&["run", p.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.cfg:4:"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn identical_runs_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.cfg", SMALL_POLARIZATION);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&cfg, &a);
    run(&cfg, &b);
    let (fa, fb) = (sha_of_dir(&a), sha_of_dir(&b));
    assert!(fa.iter().any(|(n, _, _)| n == "behavior_log.csv"));
    assert!(fa.iter().any(|(n, _, _)| n == "report.json"));
    assert_eq!(fa, fb);

    // a different seed changes the log
    let c = dir.path().join("c");
    let o = socpilot(&["run", cfg.to_str().unwrap(), "--seed", "4", "--out", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(std::fs::read(a.join("behavior_log.csv")).unwrap(), std::fs::read(c.join("behavior_log.csv")).unwrap());
}

#[test]
fn report_check_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "u.cfg", SMALL_UBI);
    let out = dir.path().join("run");
    run(&cfg, &out);
    let ok = socpilot(&["report", out.to_str().unwrap(), "--check"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let p = out.join("agent_economy.csv");
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines.truncate(lines.len() - 1);
    std::fs::write(&p, lines.join("\n") + "\n").unwrap();
    let bad = socpilot(&["report", out.to_str().unwrap(), "--check"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("economy"));

    // rewriting brings it back in line
    assert_eq!(socpilot(&["report", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(socpilot(&["report", out.to_str().unwrap(), "--check"]).status.code(), Some(0));
}

#[test]
fn interview_from_file_and_stdin_leaves_state_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "u.cfg", SMALL_UBI);
    let out = dir.path().join("run");
    run(&cfg, &out);
    let before = std::fs::read(out.join("final_state.json")).unwrap();

    let q = dir.path().join("q.txt");
    std::fs::write(&q, "How are you?\nWhat do you do for work?\nAre you saving money?\n").unwrap();
    let o = socpilot(&["--json", "interview", cfg.to_str().unwrap(), "--run", out.to_str().unwrap(), "--agent", "3", "--questions", q.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_of(&o);
    assert_eq!(v["turns"], 6);
    assert_eq!(v["isolated"], true);
    let transcript = std::fs::read_to_string(v["transcript"].as_str().unwrap()).unwrap();
    assert!(transcript.contains("Are you saving money?"));

    let mut child = Command::new(env!("CARGO_BIN_EXE_socpilot"))
        .args(["--json", "interview", cfg.to_str().unwrap(), "--run", out.to_str().unwrap(), "--agent", "3"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"One question.\nquit\nnever asked\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v = json_of(&o);
    assert_eq!(v["turns"], 2);
    // a second session does not overwrite the first
    assert!(v["transcript"].as_str().unwrap().contains("cli-2_agent3"));

    assert_eq!(std::fs::read(out.join("final_state.json")).unwrap(), before);
}

#[test]
fn unknown_agent_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "u.cfg", SMALL_UBI);
    let out = dir.path().join("run");
    run(&cfg, &out);
    let o = socpilot(&["--json", "interview", cfg.to_str().unwrap(), "--run", out.to_str().unwrap(), "--agent", "999"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json_of(&o)["error"]["kind"], "runtime");
}

#[test]
fn survey_subcommand_scores_each_group() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "u.cfg", SMALL_UBI);
    let out = dir.path().join("run");
    run(&cfg, &out);
    let o = socpilot(&["--json", "survey", cfg.to_str().unwrap(), "--run", out.to_str().unwrap(), "--survey", "cesd", "--group", "treatment"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_of(&o);
    assert_eq!(v["respondents"], 3);
    assert_eq!(v["isolation_violations"], 0);
    assert!(v["groups"]["treatment"]["score"]["mean"].is_number(), "{v}");
    assert!(v["groups"].get("control").is_none());
    let table = std::fs::read_to_string(v["out"].as_str().unwrap()).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 * 20);

    let none = socpilot(&["survey", cfg.to_str().unwrap(), "--run", out.to_str().unwrap(), "--survey", "cesd", "--group", "nobody"]);
    assert_eq!(none.status.code(), Some(1));
}

#[test]
fn live_run_replays_to_the_same_metrics() {
    let (url, hits) = fake_llm();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "u.cfg", SMALL_UBI);
    let live = dir.path().join("live");
    let o = Command::new(env!("CARGO_BIN_EXE_socpilot"))
        .args(["--json", "run", cfg.to_str().unwrap(), "--backend", "live", "--out", live.to_str().unwrap()])
        .env("SOCPILOT_LLM_URL", &url)
        .env("SOCPILOT_LLM_MODEL", "fake")
        .env("SOCPILOT_LLM_KEY", "test-key")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(hits.load(std::sync::atomic::Ordering::SeqCst) > 0);
    let calls = hits.load(std::sync::atomic::Ordering::SeqCst);

    let replayed = dir.path().join("replayed");
    let o = Command::new(env!("CARGO_BIN_EXE_socpilot"))
        .args(["--json", "replay", cfg.to_str().unwrap(), "--transcript", live.join("gateway_transcript.jsonl").to_str().unwrap(), "--out", replayed.to_str().unwrap()])
        .env_remove("SOCPILOT_LLM_URL")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // the replay never touches the network
    assert_eq!(hits.load(std::sync::atomic::Ordering::SeqCst), calls);

    let load = |d: &Path| -> Value {
        let mut v: Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("gateway");
        v
    };
    assert_eq!(load(&live), load(&replayed));
    for t in ["behavior_log.csv", "agent_economy.csv", "surveys.csv"] {
        assert_eq!(std::fs::read(live.join(t)).unwrap(), std::fs::read(replayed.join(t)).unwrap(), "{t}");
    }
}
