use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn clozener(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clozener"))
        .args(args)
        .env_remove("CLOZENER_BRIDGE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const GOLD: &str = "She\tO\nhas\tO\nlung\tB\ncancer\tI\nand\tO\nasthma\tB\n.\tO\n";

#[test]
fn expand_writes_one_record_per_token() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "a.conll", &format!("{GOLD}\nOk\tO\n"));
    let out = clozener(&["expand", "--corpus", s(&corpus), "--pattern", "p2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[2]["target_token"], "lung");
    assert_eq!(lines[2]["gold_label"], "B");
    let text = lines[2]["text"].as_str().unwrap();
    assert!(text.starts_with("She has lung cancer and asthma . Question:"), "{text}");
    assert!(text.contains("the word \"lung\""), "{text}");
    assert!(text.ends_with("Answer: [MASK]."), "{text}");
    assert_eq!(lines[7]["sentence_id"], "2");
}

#[test]
fn expand_untagged_input_and_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "a.txt", "one\ntwo\nthree\n");
    let out_file = dir.path().join("out.jsonl");
    let out = clozener(&["expand", "--corpus", s(&corpus), "--untagged", "-o", s(&out_file)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(out_file).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(!text.contains("gold_label\":\""));
}

#[test]
fn bad_pattern_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "a.conll", GOLD);
    let pattern = write(
        dir.path(),
        "p.json",
        r#"{"id":"x","template":"{x} is {t} an entity ?","verbalizer":{"B":"yes","I":"also","O":"no"}}"#,
    );
    let out = clozener(&["expand", "--corpus", s(&corpus), "--pattern", s(&pattern)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("mask"), "{}", stderr(&out));
    let out = clozener(&["expand", "--corpus", s(&corpus), "--pattern", "p9"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn custom_pattern_file_expands() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "a.conll", GOLD);
    let pattern = write(
        dir.path(),
        "p.json",
        r#"{"id":"yn","template":"{x} Is {t} a {etype} ? {mask}","verbalizer":{"B":"yes","I":"also","O":"no"}}"#,
    );
    let out = clozener(&["expand", "--corpus", s(&corpus), "--pattern", s(&pattern)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let first: serde_json::Value = serde_json::from_str(stdout(&out).lines().next().unwrap()).unwrap();
    assert_eq!(first["text"], "She has lung cancer and asthma . Is \"She\" a disease ? [MASK]");
}

#[test]
fn missing_corpus_exits_one() {
    let out = clozener(&["stats", "--corpus", "/nonexistent/x.conll"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/nonexistent/x.conll"), "{}", stderr(&out));
}

fn eval_f1(gold: &Path, pred: &Path) -> f64 {
    let out = clozener(&["eval", "--gold", s(gold), "--pred", s(pred), "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    v["f1"].as_f64().unwrap()
}

#[test]
fn eval_scores_spans() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.conll", GOLD);
    assert_eq!(eval_f1(&gold, &gold), 1.0);
    let disjoint = write(dir.path(), "d.conll", "She\tB\nhas\tO\nlung\tO\ncancer\tO\nand\tB\nasthma\tO\n.\tO\n");
    assert_eq!(eval_f1(&gold, &disjoint), 0.0);
    // One of two gold spans found, plus one wrong span: P = R = 1/2.
    let half = write(dir.path(), "h.conll", "She\tO\nhas\tO\nlung\tB\ncancer\tO\nand\tO\nasthma\tB\n.\tO\n");
    assert_eq!(eval_f1(&gold, &half), 0.5);
    let out = clozener(&["eval", "--gold", s(&gold), "--pred", s(&half)]);
    assert!(stdout(&out).contains("f1         0.5000"), "{}", stdout(&out));
}

#[test]
fn eval_refuses_mismatched_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.conll", GOLD);
    let short = write(dir.path(), "s.conll", "She\tO\n");
    let out = clozener(&["eval", "--gold", s(&gold), "--pred", s(&short)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("mismatch at sentence 1"), "{}", stderr(&out));
}

#[test]
fn stats_sample_and_synth() {
    let dir = tempfile::tempdir().unwrap();
    let out = clozener(&["synth", "--out-dir", s(dir.path()), "--sentences", "50", "--test-sentences", "10"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let train = dir.path().join("train.conll");
    let stats = clozener(&["stats", "--corpus", s(&train)]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&stats)).unwrap();
    assert_eq!(v["sentences"], 40);
    assert!(fs::read_to_string(dir.path().join("lexicon.txt")).unwrap().lines().count() > 0);

    let picked = dir.path().join("k.conll");
    let rest = dir.path().join("rest.conll");
    let out = clozener(&["sample", "--corpus", s(&train), "--k", "7", "--seed", "3", "-o", s(&picked), "--rest", s(&rest)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let count = |p: &Path| {
        let v: serde_json::Value = serde_json::from_str(&stdout(&clozener(&["stats", "--corpus", s(p)]))).unwrap();
        v["sentences"].as_u64().unwrap()
    };
    assert_eq!(count(&picked), 7);
    assert_eq!(count(&rest), 33);
    let again = dir.path().join("k2.conll");
    clozener(&["sample", "--corpus", s(&train), "--k", "7", "--seed", "3", "-o", s(&again)]);
    assert_eq!(fs::read(&picked).unwrap(), fs::read(&again).unwrap());
}

fn small_data(dir: &Path) -> (PathBuf, PathBuf) {
    let out = clozener(&["synth", "--out-dir", s(dir), "--sentences", "120", "--test-sentences", "30"]);
    assert!(out.status.success(), "{}", stderr(&out));
    (dir.join("train.conll"), dir.join("test.conll"))
}

#[test]
fn unreachable_bridge_exits_one_naming_the_address() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = small_data(dir.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let out = clozener(&[
        "run-experiment", "--train", s(&train), "--test", s(&test), "--k", "10", "--seeds", "1",
        "--scorer", &format!("bridge:{addr}"), "--run-dir", s(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains(&addr), "{}", stderr(&out));
}

#[test]
fn bridge_without_address_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = small_data(dir.path());
    let out = clozener(&[
        "run-experiment", "--train", s(&train), "--test", s(&test), "--scorer", "bridge",
        "--run-dir", s(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn zero_shots_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = small_data(dir.path());
    let out = clozener(&[
        "run-experiment", "--train", s(&train), "--test", s(&test), "--k", "0", "--run-dir", s(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn run_experiment_over_exec_bridge_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = small_data(dir.path());
    let run = |name: &str, scorer: &str| {
        let run_dir = dir.path().join(name);
        let out = clozener(&[
            "run-experiment", "--train", s(&train), "--test", s(&test), "--k", "10", "--seeds", "1,2",
            "--scorer", scorer, "--run-dir", s(&run_dir), "--format", "json",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        run_dir
    };
    let builtin = run("builtin", "builtin");
    let bridged = run("bridged", &format!("bridge:exec:{} serve-scorer", env!("CARGO_BIN_EXE_clozener")));
    for f in ["report", "report.txt", "curve.csv", "k-10/seed-2/predictions", "k-10/seed-1/soft_labels"] {
        assert_eq!(fs::read(builtin.join(f)).unwrap(), fs::read(bridged.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(bridged.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["scorer"].as_str().unwrap().starts_with("bridge:exec:"));
    let csv = fs::read_to_string(builtin.join("curve.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,seed,precision,recall,f1"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn manifest_rerun_refuses_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = small_data(dir.path());
    let first = dir.path().join("first");
    let out = clozener(&[
        "run-experiment", "--train", s(&train), "--test", s(&test), "--k", "10", "--seeds", "1",
        "--run-dir", s(&first),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("k"), "{}", stdout(&out));
    fs::write(&test, format!("{}\nextra\tO\n", fs::read_to_string(&test).unwrap())).unwrap();
    let out = clozener(&["run-experiment", "--manifest", s(&first.join("manifest.json")), "--run-dir", s(&dir.path().join("second"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("changed"), "{}", stderr(&out));
}

#[test]
fn serve_scorer_speaks_on_stdio() {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_clozener"))
        .arg("serve-scorer")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"{\"kind\":\"handshake\",\"id\":1,\"protocol_version\":1,\"head\":\"mlm\",\"candidates\":[\"a\",\"b\"]}\n{\"kind\":\"nope\",\"id\":2}\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    let lines: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["kind"], "handshake");
    assert_eq!(lines[0]["accepted"], true);
    assert_eq!(lines[1]["code"], "unknown_kind");
    assert_eq!(lines[1]["id"], 2);
}
