use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use osv_core::harness::directory_example_library;
use osv_core::trace::{load_library, write_library};

fn osv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osv"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_example_writes_the_fixed_trace() {
    let out = osv(&["gen", "--example"]);
    assert!(out.status.success());
    let mut want = Vec::new();
    write_library(&directory_example_library(), &mut want).unwrap();
    assert_eq!(out.stdout, want);
}

#[test]
fn built_model_is_served_over_delimited_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("example.trace");
    let model = dir.path().join("example.model");
    assert!(osv(&["gen", "--example", "--out", path(&trace)]).status.success());
    let built = osv(&["build", path(&trace), "--clusters", "2", "--out", path(&model)]);
    assert!(built.status.success(), "{}", String::from_utf8_lossy(&built.stderr));
    assert_eq!(String::from_utf8_lossy(&built.stdout).lines().count(), 2);

    let mut child = Command::new(env!("CARGO_BIN_EXE_osv"))
        .args(["serve", path(&model), "--listen", "127.0.0.1:0", "--framing", "delimiter", "--duration", "30"])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut banner).unwrap();
    let addr = banner.trim().strip_prefix("listening on ").expect("banner").to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    stream.write_all(b"{id:37,op:A,sn:Durand}\n").unwrap();
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line).unwrap();
    assert_eq!(line, b"{id:37,op:AddRsp,result:Ok}\n");
    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn validate_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("synthetic.trace");
    assert!(osv(&["gen", "--n", "120", "--seed", "9", "--out", path(&trace)]).status.success());
    assert_eq!(load_library(&trace).unwrap().len(), 120);
    let args = ["validate", path(&trace), "--clusters", "5", "--folds", "4", "--repeats", "2", "--seed", "11"];
    let a = osv(&args);
    let b = osv(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("\"responder\": \"prototype\""));
    assert!(text.contains("\"total\": 240"));
}

#[test]
fn bench_reports_all_responders() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("synthetic.trace");
    assert!(osv(&["gen", "--n", "60", "--seed", "3", "--out", path(&trace)]).status.success());
    let out = osv(&["bench", path(&trace), "--clusters", "5", "--repetitions", "1", "--warmup", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["hash", "whole-library", "prototype"] {
        assert!(text.contains(&format!("\"{name}\"")), "{name} missing from {text}");
    }
}

#[test]
fn usage_and_operational_errors_have_distinct_codes() {
    assert_eq!(osv(&["build", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(osv(&["serve", "m", "--listen", "x", "--prefix-width", "3"]).status.code(), Some(2));
    let missing = osv(&["build", "/nonexistent/trace", "--clusters", "2", "--out", "/tmp/never.model"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error: reading trace"));
}
