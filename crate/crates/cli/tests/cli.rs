use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regex::Regex;
use serde_json::Value;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn fixture(name: &str) -> PathBuf {
    manifest().join("tests/fixtures").join(name)
}

fn transcript() -> PathBuf {
    manifest().join("tests/transcripts/stream_joins.jsonl")
}

fn paperx(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_paperx"));
    cmd.args(args);
    for (key, _) in std::env::vars() {
        if key.starts_with("PAPERX_") {
            cmd.env_remove(key);
        }
    }
    cmd.output().expect("spawn paperx")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = paperx(args);
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap().flatten() {
        let target = to.join(entry.file_name());
        if entry.path().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn last_report(out: &Path) -> Value {
    let text = fs::read_to_string(out.join("run_report.jsonl")).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn missing_image_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    copy_dir(&fixture("stream_joins"), &bundle);
    fs::remove_file(bundle.join("images/latency.png")).unwrap();
    let out = tmp.path().join("out");
    let (code, _, err) = run(&["build-dag", "--offline", "--input", s(&bundle), "--out", s(&out)]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("images/latency.png"), "{err}");
    assert!(!out.join("dag.json").exists());
    assert_eq!(last_report(&out)["failed_stage"], "ingest");
}

#[test]
fn replay_miss_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = tmp.path().join("out");
    let (code, _, err) = run(&["all", "--input", s(&fixture("stream_joins")), "--out", s(&out), "--replay", s(&empty)]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("[dag_clean]"), "{err}");
}

#[test]
fn failed_stage_leaves_later_outputs_unwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let partial = tmp.path().join("dag_only.jsonl");
    let lines: Vec<&str> = include_str!("transcripts/stream_joins.jsonl")
        .lines()
        .filter(|l| l.contains("\"stage\":\"dag_"))
        .collect();
    fs::write(&partial, lines.join("\n") + "\n").unwrap();
    let out = tmp.path().join("out");
    let (code, _, err) = run(&["all", "--input", s(&fixture("stream_joins")), "--out", s(&out), "--replay", s(&partial)]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("[ppt_"), "{err}");
    assert!(out.join("dag.json").is_file());
    for name in ["deck.json", "slides", "poster.html", "poster.json", "pr.md", "pr.json"] {
        assert!(!out.join(name).exists(), "{name} was written");
    }
    let report = last_report(&out);
    assert_eq!(report["exit_code"], 3);
    assert!(report["failed_stage"].as_str().unwrap().starts_with("ppt_"));
}

#[test]
fn live_run_without_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let (code, _, err) = run(&["build-dag", "--input", s(&fixture("three_sections")), "--out", s(&out)]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("PAPERX_API_KEY"), "{err}");
}

#[test]
fn output_directory_must_differ_from_input() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    copy_dir(&fixture("three_sections"), &bundle);
    let (code, _, err) = run(&["build-dag", "--offline", "--input", s(&bundle), "--out", s(&bundle)]);
    assert_eq!(code, 1, "{err}");
    let names: Vec<_> = fs::read_dir(&bundle).unwrap().flatten().map(|e| e.file_name()).collect();
    assert_eq!(names, ["paper.md"]);
}

#[test]
fn backend_without_graph_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["ppt", "--offline", "--input", s(&fixture("three_sections")), "--out", s(tmp.path())]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("dag.json"), "{err}");
}

#[test]
fn cost_report_reads_the_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let (code, _, err) = run(&["cost-report", "--out", s(&out)]);
    assert_eq!(code, 1, "{err}");

    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("costs.csv"), "stage,model,input_tokens,output_tokens,cost_usd\n").unwrap();
    let (code, table, _) = run(&["cost-report", "--out", s(&out)]);
    assert_eq!(code, 0);
    let rows: Vec<&str> = table.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(rows, ["dag", "ppt", "poster", "pr", "total"]);

    let (code, _, err) = run(&["all", "--offline", "--input", s(&fixture("three_sections")), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let (_, table, _) = run(&["cost-report", "--out", s(&out)]);
    for line in table.lines().skip(1).take(4) {
        let input_k: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(input_k > 0.0, "{line}");
    }
}

#[test]
fn later_commands_keep_other_ledger_groups() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let input = fixture("three_sections");
    assert_eq!(run(&["build-dag", "--offline", "--input", s(&input), "--out", s(&out)]).0, 0);
    let after_dag = fs::read_to_string(out.join("costs.csv")).unwrap();
    assert_eq!(run(&["pr", "--offline", "--input", s(&input), "--out", s(&out)]).0, 0);
    let ledger = fs::read_to_string(out.join("costs.csv")).unwrap();
    assert!(ledger.starts_with(&after_dag), "dag rows were rewritten");
    assert!(ledger.lines().any(|l| l.starts_with("pr_final,")));
    assert_eq!(fs::read_to_string(out.join("run_report.jsonl")).unwrap().lines().count(), 2);
}

struct Replayed {
    _tmp: tempfile::TempDir,
    out: PathBuf,
}

fn replayed() -> Replayed {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let (code, stdout, err) = run(&["all", "--input", s(&fixture("stream_joins")), "--out", s(&out), "--replay", s(&transcript())]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("wrote "), "{stdout}");
    Replayed { _tmp: tmp, out }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn poster_html_geometry_matches_poster_json() {
    let run = replayed();
    let html = fs::read_to_string(run.out.join("poster.html")).unwrap();
    let doc = json(&run.out.join("poster.json"));
    let section = Regex::new(
        r#"<section class="section" data-block="(\d+)" data-column="(\d+)" style="position:absolute;left:([\d.]+)px;top:([\d.]+)px;width:([\d.]+)px;height:([\d.]+)px"#,
    )
    .unwrap();
    let blocks = doc["blocks"].as_array().unwrap();
    let parsed: Vec<_> = section.captures_iter(&html).collect();
    assert_eq!(parsed.len(), blocks.len());
    let (cw, ch) = (doc["canvas"]["width"].as_f64().unwrap(), doc["canvas"]["height"].as_f64().unwrap());
    let mut rects = Vec::new();
    for c in &parsed {
        let b = &blocks[c[1].parse::<usize>().unwrap()];
        assert_eq!(b["column"].as_u64().unwrap(), c[2].parse::<u64>().unwrap());
        let r: Vec<f64> = (3..=6).map(|i| c[i].parse().unwrap()).collect();
        let want: Vec<f64> = ["x", "y", "width", "height"].iter().map(|k| b["rect"][k].as_f64().unwrap()).collect();
        assert_eq!(r, want);
        assert!(r[0] >= 0.0 && r[1] >= 0.0 && r[0] + r[2] <= cw + 1e-6 && r[1] + r[3] <= ch + 1e-6);
        rects.push(r);
    }
    for (i, a) in rects.iter().enumerate() {
        for b in &rects[i + 1..] {
            let apart = a[0] + a[2] <= b[0] + 1e-6 || b[0] + b[2] <= a[0] + 1e-6 || a[1] + a[3] <= b[1] + 1e-6 || b[1] + b[3] <= a[1] + 1e-6;
            assert!(apart, "{a:?} overlaps {b:?}");
        }
    }
    let img = Regex::new(r#"<img src="([^"]+)""#).unwrap();
    for c in img.captures_iter(&html) {
        assert!(run.out.join(&c[1]).is_file(), "{} not copied", &c[1]);
    }
}

#[test]
fn poster_without_visuals_has_no_images() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let (code, _, err) = run(&["poster", "--from-paper", "--offline", "--input", s(&fixture("three_sections")), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(!fs::read_to_string(out.join("poster.html")).unwrap().contains("<img"));
    assert_eq!(json(&out.join("poster.json"))["coverage"], 0.0);
}

/// Splits a post back into headline, tags and blank-line separated blocks.
fn parse_post(md: &str) -> (String, Vec<String>, Vec<String>) {
    let mut lines = md.lines();
    let headline = lines.next().unwrap().strip_prefix("# ").unwrap().to_string();
    let tags = lines.next().unwrap().split_whitespace().map(String::from).collect();
    let rest: Vec<&str> = lines.collect();
    let blocks = rest.join("\n").split("\n\n").map(|b| b.trim().to_string()).filter(|b| !b.is_empty()).collect();
    (headline, tags, blocks)
}

#[test]
fn post_markdown_round_trips_to_json() {
    let run = replayed();
    let md = fs::read_to_string(run.out.join("pr.md")).unwrap();
    let doc = json(&run.out.join("pr.json"));
    let (headline, tags, blocks) = parse_post(&md);
    assert_eq!(headline, doc["headline"]);
    let mut want: Vec<Value> = doc["specific_tags"].as_array().unwrap().clone();
    want.push(doc["community_tag"].clone());
    assert_eq!(tags.iter().map(|t| Value::from(t.as_str())).collect::<Vec<_>>(), want);
    let header = &blocks[0];
    assert!(header.contains(doc["title"].as_str().unwrap()));
    assert!(header.contains(doc["authors"].as_str().unwrap()));
    let bodies: Vec<&str> = doc["sections"].as_array().unwrap().iter().map(|s| s["body"].as_str().unwrap().trim()).collect();
    assert_eq!(blocks[1..].iter().map(String::as_str).collect::<Vec<_>>(), bodies);
    for section in doc["sections"].as_array().unwrap() {
        if let Some(img) = section["image"].as_str() {
            let path = img.strip_prefix("![](").unwrap().strip_suffix(')').unwrap();
            assert!(run.out.join(path).is_file(), "{path} not copied");
        }
    }
}

#[test]
fn three_section_post_has_three_sections() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let (code, _, err) = run(&["pr", "--from-paper", "--offline", "--input", s(&fixture("three_sections")), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(json(&out.join("pr.json"))["sections"].as_array().unwrap().len(), 3);
}

#[test]
fn config_file_and_flags_are_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("paperx.toml");
    fs::write(&cfg, "ppt_budget = 0\n").unwrap();
    let (code, _, err) = run(&["build-dag", "--offline", "--config", s(&cfg), "--input", s(&fixture("three_sections")), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code, 1, "{err}");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let (code, _, err) = run(&["build-dag", "--offline", "--config", s(&cfg), "--input", s(&fixture("three_sections")), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code, 1, "{err}");
    let (code, _, _) = run(&["build-dag", "--offline", "--max-depth", "9", "--input", s(&fixture("three_sections")), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code, 1);
}
