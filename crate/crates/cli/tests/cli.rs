use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

const QUICK: &str = r#"{"train":{"n_trees":15,"max_depth":3,"learning_rate":0.2,"min_child_cover":5,"seed":0},"k":20}"#;

fn ntlwb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntlwb")).args(args).output().unwrap()
}

fn case_study_script() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/case_study.yamlish")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small outlier corpus plus a quick session config.
fn small_setup(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("small.csv");
    let out = ntlwb(&["gen", "--customers", "1500", "--ntl-rate", "0.06", "--outlier", "--seed", "3", "-o", s(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let config = dir.join("quick.json");
    std::fs::write(&config, QUICK).unwrap();
    (data, config)
}

fn run_small(dir: &Path, data: &Path, config: &Path, script: &Path, out: &str) -> Output {
    let out_dir = dir.join(out);
    ntlwb(&[
        "run",
        "--data",
        s(data),
        "--script",
        s(script),
        "--out",
        s(&out_dir),
        "--config",
        s(config),
        "--deterministic",
    ])
}

fn journal_types(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["event"]["type"].as_str().unwrap().to_string()
        })
        .collect()
}

#[test]
fn gen_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("corpus.csv");
    let out = ntlwb(&["gen", "--customers", "2000", "--ntl-rate", "0.034", "--outlier", "--seed", "1", "-o", s(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = std::fs::read_to_string(dir.path().join("corpus.manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "max_label=260000"), "{manifest}");
    assert!(manifest.lines().any(|l| l == "outlier_split=train"));
    let csv = std::fs::read_to_string(&data).unwrap();
    assert_eq!(csv.lines().count(), 2001);
    assert!(csv.lines().next().unwrap().contains("split"));

    // Same seed, same bytes.
    let again = dir.path().join("again.csv");
    ntlwb(&["gen", "--customers", "2000", "--outlier", "--seed", "1", "-o", s(&again)]);
    assert_eq!(std::fs::read(&data).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn run_case_study_script_on_small_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = small_setup(dir.path());
    let out = run_small(dir.path(), &data, &config, &case_study_script(), "run");
    assert!(out.status.success(), "{}", stderr(&out));
    let run = dir.path().join("run");
    let types = journal_types(&run.join("journal.jsonl"));
    assert_eq!(types.iter().filter(|t| *t == "iteration_completed").count(), 4);
    assert_eq!(types.iter().filter(|t| *t == "action_applied").count(), 3);
    let metrics = std::fs::read_to_string(run.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    assert!(metrics.lines().nth(2).unwrap().contains("cap_label"));
    for i in 0..4 {
        assert!(run.join(format!("models/iter-{i:03}.json")).is_file());
        assert!(run.join(format!("shap/iter-{i:03}-topk-points.csv")).is_file());
    }
}

#[test]
fn deterministic_runs_are_byte_identical_and_report_matches() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = small_setup(dir.path());
    for name in ["a", "b"] {
        let out = run_small(dir.path(), &data, &config, &case_study_script(), name);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for file in ["journal.jsonl", "metrics.tsv", "importance.tsv", "models/iter-003.json", "shap/iter-002-topk-points.csv"]
    {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }

    // Report from the journal alone reproduces the run's tables.
    let rep = dir.path().join("rep");
    let out = ntlwb(&["report", "--journal", s(&a.join("journal.jsonl")), "--out", s(&rep)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read(a.join("metrics.tsv")).unwrap(), std::fs::read(rep.join("metrics.tsv")).unwrap());
    assert!(!rep.join("shap").exists());
    let text = std::fs::read_to_string(rep.join("report.txt")).unwrap();
    assert!(text.contains("energy@20 (kWh, test): baseline"));

    // With the data, the Shapley exports are rebuilt identically.
    let rep2 = dir.path().join("rep2");
    let out = ntlwb(&["report", "--journal", s(&a.join("journal.jsonl")), "--out", s(&rep2), "--data", s(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    for i in 0..4 {
        let f = format!("shap/iter-{i:03}-topk-points.csv");
        assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(rep2.join(&f)).unwrap());
    }
}

#[test]
fn script_errors_are_user_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = small_setup(dir.path());

    let bad_syntax = dir.path().join("bad.yamlish");
    std::fs::write(&bad_syntax, "# x\n- drop_feature: \"#Threats\"\n- explode: now\n").unwrap();
    let out = run_small(dir.path(), &data, &config, &bad_syntax, "r1");
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("script line 3"), "{}", stderr(&out));

    let bad_action = dir.path().join("bad2.yamlish");
    std::fs::write(&bad_action, "- drop_feature: \"#Threats\"\n\n- drop_feature: NoSuchFeature\n").unwrap();
    let out = run_small(dir.path(), &data, &config, &bad_action, "r2");
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("script line 3") && err.contains("NoSuchFeature"), "{err}");
}

#[test]
fn user_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let script = case_study_script();
    let out = ntlwb(&["run", "--data", s(&missing), "--script", s(&script), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing.csv"));

    assert_eq!(ntlwb(&["run", "--data"]).status.code(), Some(1));
    assert_eq!(ntlwb(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ntlwb(&["gen", "--customers", "0", "-o", s(&dir.path().join("x.csv"))]).status.code(), Some(1));
    assert_eq!(ntlwb(&["--help"]).status.code(), Some(0));

    let journal = dir.path().join("j.jsonl");
    std::fs::write(&journal, "{\"seq\":0,\n").unwrap();
    let out = ntlwb(&["report", "--journal", s(&journal), "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));

    let (data, _) = small_setup(dir.path());
    let bad_config = dir.path().join("bad.json");
    std::fs::write(&bad_config, r#"{"k": 0}"#).unwrap();
    let out = run_small(dir.path(), &data, &bad_config, &script, "r3");
    assert_eq!(out.status.code(), Some(1));
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    stream.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_answers_health() {
    let dir = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_ntlwb"))
        .args(["serve", "--port", &port.to_string(), "--data-dir", s(dir.path())])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let mut reply = None;
    while start.elapsed() < Duration::from_secs(20) {
        if let Some(r) = http_get(port, "/health") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("server came up");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"status\":\"ok\""));
    assert!(dir.path().join("sessions").is_dir());
}

/// The bundled demo on the default-size corpus: four accepted iterations and
/// a final energy@200 at least the baseline's.
#[test]
fn bundled_case_study_on_default_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("corpus.csv");
    let out = ntlwb(&["gen", "--customers", "20000", "--ntl-rate", "0.034", "--outlier", "--seed", "1", "-o", s(&data)]);
    assert!(out.status.success());
    let run = dir.path().join("run");
    let out = ntlwb(&["run", "--data", s(&data), "--script", s(&case_study_script()), "--out", s(&run), "--deterministic"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let guards: Vec<String> = std::fs::read_to_string(run.join("journal.jsonl"))
        .unwrap()
        .lines()
        .filter_map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["event"]["type"] == "iteration_completed")
                .then(|| v["event"]["payload"]["record"]["guard"]["status"].as_str().unwrap().to_string())
        })
        .collect();
    assert_eq!(guards, ["baseline", "accept", "accept", "accept"]);

    let rep = dir.path().join("rep");
    assert!(ntlwb(&["report", "--journal", s(&run.join("journal.jsonl")), "--out", s(&rep)]).status.success());
    let metrics = std::fs::read_to_string(rep.join("metrics.tsv")).unwrap();
    let energy: Vec<f64> = metrics.lines().skip(1).map(|l| l.split('\t').nth(5).unwrap().parse().unwrap()).collect();
    assert!(energy.last().unwrap() >= &energy[0], "{energy:?}");
}
