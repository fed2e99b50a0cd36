use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn lunabell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lunabell")).args(args).output().unwrap()
}

fn stdout_ok(args: &[&str]) -> String {
    let out = lunabell(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_replay_and_analyze_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let text = stdout_ok(&[
        "simulate",
        "--seed",
        "3",
        "--set",
        "duration_s=2",
        "--set",
        "link.arms.0.geometric_db=17",
        "--set",
        "link.arms.1.geometric_db=17",
        "--out",
        path(&run),
    ]);
    assert!(text.contains("S = "), "{text}");
    let hash = text.lines().find_map(|l| l.strip_prefix("report hash ")).unwrap().to_string();

    let replayed = stdout_ok(&["replay", path(&run)]);
    assert!(replayed.contains(&hash));
    let analyzed = stdout_ok(&["analyze", path(&run)]);
    assert!(analyzed.contains("S = "));

    let pairs = tmp.path().join("pairs.txt");
    let coincide = stdout_ok(&[
        "coincide",
        path(&run.join("alice.tags")),
        path(&run.join("bob.tags")),
        "--out",
        path(&pairs),
    ]);
    let persisted = std::fs::read_to_string(run.join("pairs.txt")).unwrap();
    assert_eq!(std::fs::read_to_string(&pairs).unwrap(), persisted);
    let n = persisted.lines().filter(|l| !l.starts_with('#')).count();
    assert!(coincide.contains(&format!("pairs           {n} ")), "{coincide}");

    let csv = stdout_ok(&[
        "histogram",
        path(&run.join("alice.tags")),
        path(&run.join("bob.tags")),
        "--matched",
    ]);
    assert!(csv.lines().count() > 10);

    // a tampered report no longer matches its replay
    let kv = run.join("report.kv");
    let edited = std::fs::read_to_string(&kv).unwrap().replace("seed=3", "seed=4");
    std::fs::write(&kv, edited).unwrap();
    assert!(!lunabell(&["replay", path(&run)]).status.success());
}

#[test]
fn calculators() {
    let budget = stdout_ok(&["budget"]);
    assert!(budget.contains("Two arms total loss: 101.50 dB"), "{budget}");
    let lab = stdout_ok(&["budget", "--preset", "paper_lab_103db", "--kv"]);
    assert!(lab.contains("pair_loss_db=103"));
    let geo = stdout_ok(&[
        "budget",
        "--divergence-rad",
        "3e-6",
        "--distance-m",
        "3.8e8",
        "--aperture-m",
        "2.4",
    ]);
    assert!(geo.contains("geometric loss 53.53 dB"), "{geo}");
    let st = stdout_ok(&["spacetime"]);
    assert!(st.contains("locality           0.780000 s"), "{st}");
    assert!(st.contains("freedom-of-choice  2.060000 s"), "{st}");
    let plan = stdout_ok(&["analyze", "--plan"]);
    assert!(plan.contains("time needed     24795 s"), "{plan}");
}

#[test]
fn bad_input_is_reported() {
    let out = lunabell(&["simulate", "--preset", "nowhere"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
    assert!(!lunabell(&["simulate", "--set", "noequals"]).status.success());
    assert!(!lunabell(&["replay", "/nonexistent/run"]).status.success());
    assert!(!lunabell(&["analyze"]).status.success());
}

#[test]
fn serve_answers_health_checks() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_lunabell"))
        .args(["serve", "--addr", "127.0.0.1:0"])
        .env("RUST_LOG", "info")
        .env("NO_COLOR", "1")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server output").unwrap();
        if let Some((_, a)) = line.split_once("listening on ") {
            break a.trim().to_string();
        }
    };
    let mut s = TcpStream::connect(&addr).unwrap();
    s.write_all(b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.ends_with("ok"));
}
