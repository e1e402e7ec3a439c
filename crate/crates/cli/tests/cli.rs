mod common;

use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};

use common::{fx, http_get, ok, workbench};
use workbench::taxonomy::deserialize;

const MAIN_ID: &str = "tax-14db1cc37300";

fn generate(store: &std::path::Path) {
    let id = ok(store, &["--script", &fx("legal-email.json"), "generate", "--domain", "legal", "--task", "email", "--min-intentions", "1"]).unwrap();
    assert_eq!(id.trim(), MAIN_ID);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&[][..], &["generate", "--task", "email"], &["--output", "yaml", "list"], &["frobnicate"]] {
        let out = workbench(dir.path(), args, None, &[]);
        assert_eq!(out.status.code(), Some(2), "args {args:?}");
    }
    assert_eq!(workbench(dir.path(), &["--help"], None, &[]).status.code(), Some(0));
}

#[test]
fn domain_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = workbench(dir.path(), &["show", "tax-missing"], None, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = workbench(dir.path(), &["generate", "--domain", "legal", "--task", "email"], None, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no model provider"));

    let out = workbench(dir.path(), &["diff", "tax-missing", "--from", "1", "--to", "2"], None, &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn identical_coders_agree_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path();
    generate(store);
    ok(store, &["template", "add", "--original", &fx("template-original.txt"), "--revised", &fx("template-revised.txt")]).unwrap();
    // The generated taxonomy has one intention, so every label maps onto it.
    let h1 = std::fs::read_to_string(common::fixture("coder-h1.json"))
        .unwrap()
        .replace("Tone Adjustment", "Legal Argument Strengthening")
        .replace("Clarity Improvement", "Legal Argument Strengthening");
    let original = dir.path().join("h1.json");
    let copy = dir.path().join("twin.json");
    std::fs::write(&original, &h1).unwrap();
    std::fs::write(&copy, h1.replace("\"coder_id\": \"h1\"", "\"coder_id\": \"twin\"")).unwrap();
    for (coder, file) in [("h1", &original), ("twin", &copy)] {
        ok(store, &["annotate", "--template", "tpl-22f245b8b114", "--taxonomy", MAIN_ID, "--coder", coder, "--file", file.to_str().unwrap()]).unwrap();
    }
    let report = ok(store, &["icr", "--template", "tpl-22f245b8b114"]).unwrap();
    assert!(report.contains("h1 ~ twin (human-human): κ = 1.000"), "{report}");
}

#[test]
fn icr_needs_two_coders() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path();
    ok(store, &["template", "add", "--original", &fx("template-original.txt"), "--revised", &fx("template-revised.txt")]).unwrap();
    let out = workbench(store, &["icr", "--template", "tpl-22f245b8b114"], None, &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_input_merge_keeps_the_structure() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path();
    generate(store);
    let summary = ok(store, &["merge", MAIN_ID, "--out", "tax-solo"]).unwrap();
    assert!(summary.ends_with("merged into tax-solo v1\n"), "{summary}");
    let a = deserialize(ok(store, &["show", MAIN_ID]).unwrap().as_bytes()).unwrap();
    let b = deserialize(ok(store, &["show", "tax-solo@v1"]).unwrap().as_bytes()).unwrap();
    assert!(a.same_content(&b));
}

#[test]
fn list_shows_every_taxonomy() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path();
    generate(store);
    let listing = ok(store, &["list"]).unwrap();
    assert_eq!(listing, format!("{MAIN_ID}\tlegal\temail\tv1\n"));
}

#[test]
fn serve_answers_http() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_workbench"))
        .args(["--store", dir.path().to_str().unwrap(), "serve", "--bind", "127.0.0.1:0"])
        .env_remove("WORKBENCH_API_TOKEN")
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().trim_start_matches("listening on http://").parse().unwrap();
    let (status, body) = http_get(addr, "/api/taxonomies");
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(status, 200);
    let list: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(list[0]["taxonomy_id"], MAIN_ID);
}
