use std::io::{BufReader, Cursor};
use std::net::TcpListener;
use std::path::Path;

use clozener::classifier::{BuiltinClassifier, TokenClassifier};
use clozener::corpus::TagSchema;
use clozener::pipeline::{run_cell, BridgeFactory, BuiltinFactory, Inputs, PipelineConfig, SoftSentence};
use clozener::pvp::builtin_pvps;
use clozener::scoring::bridge::{
    cloze_to_wire, serve_lines, serve_tcp, wire_to_cloze, BridgeClassifier, BridgeClient, BridgeScorer, BuiltinBackend, Head,
    Response,
};
use clozener::scoring::{BaselineScorer, LabelDistribution, LabeledExample, ScoreRequest, Scorer, TrainConfig};
use clozener::synth::{generate, SynthConfig};
use clozener::Error;

fn spawn_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || serve_tcp(listener, || BuiltinBackend::new(2)));
    addr
}

fn replay(input: &str) -> Vec<Response> {
    let mut out = Vec::new();
    serve_lines(Cursor::new(input.as_bytes()), &mut out, &mut BuiltinBackend::new(2)).unwrap();
    String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn code_of(r: &Response) -> &str {
    match r {
        Response::Error { code, .. } => code,
        other => panic!("expected an error, got {other:?}"),
    }
}

fn training_set() -> (Vec<LabeledExample>, Vec<String>) {
    let syn = generate(&SynthConfig { sentences: 40, test_sentences: 10, ..Default::default() }).unwrap();
    let pvp = &builtin_pvps("disease", &syn.train.schema)[0];
    let ex = clozener::pipeline::labeled_examples(pvp, &syn.train, Some(128)).unwrap();
    (ex, pvp.verbalizer.candidates(&syn.train.schema))
}

#[test]
fn wire_examples_round_trip() {
    let (ex, _) = training_set();
    for e in ex.iter().take(50) {
        let back = wire_to_cloze(&cloze_to_wire(&e.example)).unwrap();
        let key = |c: &clozener::pvp::ClozeExample| {
            (c.sentence_id.clone(), c.token_index, c.target_token.clone(), c.rendered_tokens.clone(), c.mask_index, c.target_index)
        };
        assert_eq!(key(&back), key(&e.example));
    }
}

#[test]
fn tcp_scorer_matches_in_process_scorer() {
    let addr = spawn_server();
    let (ex, cands) = training_set();
    let tc = TrainConfig { epochs: 3, batch_size: Some(4), seed: 7, ..Default::default() };
    let mut remote = BridgeScorer::connect(&addr).unwrap();
    let mut local = BaselineScorer::default();
    remote.prepare(&cands).unwrap();
    local.prepare(&cands).unwrap();
    assert_eq!(remote.handshake_info().unwrap().capacity, 1);
    let r = remote.train(&ex, &cands, &tc).unwrap();
    let l = local.train(&ex, &cands, &tc).unwrap();
    assert_eq!(r.final_loss, l.final_loss);
    for e in ex.iter().take(30) {
        let req = ScoreRequest { example: &e.example, candidates: &cands };
        assert_eq!(remote.score(req).unwrap(), local.score(req).unwrap());
    }
    assert_eq!(remote.checkpoint().unwrap(), local.checkpoint().unwrap());
}

#[test]
fn training_raises_gold_logit() {
    let addr = spawn_server();
    let (ex, cands) = training_set();
    let mut remote = BridgeScorer::connect(&addr).unwrap();
    remote.prepare(&cands).unwrap();
    let e = &ex[0];
    let req = ScoreRequest { example: &e.example, candidates: &cands };
    let margin = |z: &[f64]| z[e.label] - z.iter().enumerate().filter(|(i, _)| *i != e.label).map(|(_, v)| *v).fold(f64::MIN, f64::max);
    let before = remote.score(req).unwrap();
    remote.train(&ex, &cands, &TrainConfig { epochs: 5, ..Default::default() }).unwrap();
    let after = remote.score(req).unwrap();
    assert!(margin(after.scores()) > margin(before.scores()));
}

#[test]
fn bridge_pipeline_equals_builtin_pipeline() {
    let addr = spawn_server();
    let syn = generate(&SynthConfig { sentences: 200, test_sentences: 60, ..Default::default() }).unwrap();
    let config = PipelineConfig { pvps: builtin_pvps("disease", &syn.train.schema), ..Default::default() };
    let inputs = Inputs { train: &syn.train, unlabeled: None, test: &syn.test };
    let cands = config.pvps[0].verbalizer.candidates(&syn.train.schema);
    let bridge = BridgeFactory::probe(&addr, &cands).unwrap();
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let a = run_cell(inputs, &config, 10, 2, &BuiltinFactory { window: 2 }, Some(a_dir.path())).unwrap();
    let b = run_cell(inputs, &config, 10, 2, &bridge, Some(b_dir.path())).unwrap();
    assert_eq!(a, b);
    for f in ["soft_labels", "predictions", "report"] {
        let read = |d: &Path| std::fs::read_to_string(d.join(f)).unwrap();
        assert_eq!(read(a_dir.path()), read(b_dir.path()), "{f}");
    }
}

#[test]
fn unknown_and_malformed_requests_get_errors() {
    let out = replay(concat!(
        "{\"kind\":\"explode\",\"id\":4}\n",
        "not json\n",
        "{\"kind\":\"score\",\"id\":5}\n",
        "{\"kind\":\"save\",\"id\":6}\n",
    ));
    assert_eq!(out.len(), 4);
    assert_eq!(code_of(&out[0]), "unknown_kind");
    assert_eq!(out[0].id(), Some(4));
    assert_eq!(code_of(&out[1]), "bad_json");
    assert_eq!(out[1].id(), None);
    assert_eq!(code_of(&out[2]), "bad_request");
    assert_eq!(out[2].id(), Some(5));
    assert_eq!(code_of(&out[3]), "not_ready");
}

#[test]
fn handshake_rejects_unusable_candidates() {
    let out = replay("{\"kind\":\"handshake\",\"id\":1,\"protocol_version\":1,\"head\":\"mlm\",\"candidates\":[\"two words\",\"ok\"]}\n");
    match &out[0] {
        Response::Handshake { accepted, rejected, .. } => {
            assert!(!accepted);
            assert_eq!(rejected, &vec!["two words".to_string()]);
        }
        other => panic!("{other:?}"),
    }
    let addr = spawn_server();
    let err = BridgeClient::connect(&addr)
        .unwrap()
        .handshake(Head::Mlm, &["two words".to_string()])
        .unwrap_err();
    assert!(matches!(err, Error::Vocabulary(_)), "{err}");
}

#[test]
fn client_reports_protocol_faults() {
    let canned = |text: &str| {
        BridgeClient::from_streams("test", Box::new(BufReader::new(Cursor::new(text.as_bytes().to_vec()))), Box::new(Vec::new()))
    };
    let cands = vec!["a".to_string()];
    let err = canned("").handshake(Head::Mlm, &cands).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    let err = canned("{\"kind\":\"load\",\"id\":99}\n").handshake(Head::Mlm, &cands).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    let err = canned("{\"kind\":\"error\",\"id\":1,\"code\":\"internal\",\"message\":\"boom\"}\n")
        .handshake(Head::Mlm, &cands)
        .unwrap_err();
    assert!(err.to_string().contains("boom"), "{err}");
}

#[test]
fn unreachable_bridge_is_a_connection_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let err = BridgeScorer::connect(&addr).unwrap_err();
    assert!(matches!(err, Error::Connection { .. }), "{err}");
    assert!(err.to_string().contains(&addr));
}

#[test]
fn golden_transcript() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/builtin_session.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut requests = String::new();
    let mut expected = Vec::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        requests.push_str(&v["request"].to_string());
        requests.push('\n');
        expected.push(v["response"].clone());
    }
    let got: Vec<serde_json::Value> = replay(&requests).iter().map(|r| serde_json::to_value(r).unwrap()).collect();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        let mut out = String::new();
        for (line, r) in requests.lines().zip(&got) {
            let req: serde_json::Value = serde_json::from_str(line).unwrap();
            out.push_str(&serde_json::json!({"request": req, "response": r}).to_string());
            out.push('\n');
        }
        std::fs::write(&path, out).unwrap();
        return;
    }
    assert_eq!(got, expected);
}

#[test]
fn token_head_matches_builtin_classifier() {
    let addr = spawn_server();
    let syn = generate(&SynthConfig { sentences: 60, test_sentences: 10, ..Default::default() }).unwrap();
    let labels: Vec<String> = TagSchema::iob2().labels().iter().map(|s| s.to_string()).collect();
    let soft: Vec<SoftSentence> = syn
        .train
        .sentences
        .iter()
        .map(|s| SoftSentence {
            id: s.id.clone(),
            tokens: s.tokens.clone(),
            distributions: s.tokens.iter().enumerate().map(|(i, _)| {
                let b = if i % 3 == 0 { 0.7 } else { 0.1 };
                LabelDistribution::new(vec![b, 0.2, 0.8 - b]).unwrap()
            }).collect(),
        })
        .collect();
    let tc = TrainConfig { epochs: 3, batch_size: Some(8), seed: 3, ..Default::default() };
    let mut remote = BridgeClassifier::connect(&addr).unwrap();
    let mut local = BuiltinClassifier::default();
    let r = remote.train_soft(&soft, &labels, &tc).unwrap();
    let l = local.train_soft(&soft, &labels, &tc).unwrap();
    assert_eq!(r.final_loss, l.final_loss);
    for s in &syn.test.sentences {
        assert_eq!(remote.logits(s).unwrap(), local.logits(s).unwrap());
    }
    assert_eq!(remote.checkpoint().unwrap(), local.checkpoint().unwrap());
}
