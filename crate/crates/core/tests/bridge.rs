// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::path::{Path, PathBuf};

use molsae::bridge::{redact_paths, Bridge, Request, Response, Transcript, Transport};
use molsae::io::read_shard;
use molsae::Error;
use serde_json::{json, Value};

const DIM: usize = 8;

fn python_bridge(vocab: &Path, extra: &[&str]) -> Vec<String> {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fake_bridge.py");
    let mut cmd = vec![
        "python3".to_string(),
        script.display().to_string(),
        "--vocab".into(),
        vocab.display().to_string(),
        "--dim".into(),
        DIM.to_string(),
    ];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    cmd
}

fn setup() -> (tempfile::TempDir, PathBuf, Vec<String>) {
    let dir = tempfile::tempdir().unwrap();
    let vocab = common::fake_bridge::vocabulary(24);
    let path = dir.path().join("vocab.txt");
    std::fs::write(&path, vocab.join("\n")).unwrap();
    (dir, path, vocab)
}

fn bridge_kind(e: Error) -> (String, String) {
    match e {
        Error::Bridge { kind, message } => (kind, message),
        other => panic!("expected a bridge error, got {other:?}"),
    }
}

fn shell(script: &str) -> Vec<String> {
    vec!["sh".into(), "-c".into(), script.into()]
}

#[test]
fn process_bridge_serves_every_method() {
    let (dir, vocab_path, vocab) = setup();
    let mut bridge = Bridge::spawn(&python_bridge(&vocab_path, &[])).unwrap();
    let smiles: Vec<String> = vec![vocab[3].clone(), "CCXC".into(), vocab[10].clone()];
    let shard_path = dir.path().join("e.saev");

    let embedded = bridge.embed(&smiles, &shard_path).unwrap();
    assert_eq!(embedded.count, 3);
    assert_eq!(embedded.errors, vec![None, Some("unparseable input".into()), None]);
    let (shard, manifest) = read_shard(&shard_path).unwrap();
    assert_eq!(manifest.valid_rows().collect::<Vec<_>>(), vec![0, 2]);
    for (got, want) in shard.row(0).iter().zip(common::fake_bridge::embed_one(&vocab[3], DIM)) {
        assert!((got - want).abs() < 1e-6);
    }

    let decoded = bridge.decode(&shard_path, 3).unwrap();
    assert_eq!(decoded[0].as_deref(), Ok(vocab[3].as_str()));
    assert!(decoded[1].is_err());
    assert_eq!(decoded[2].as_deref(), Ok(vocab[10].as_str()));

    let canon = bridge.canonicalize(&[" C[C@H](O)N ".into(), "C?".into()]).unwrap();
    let first = canon[0].as_ref().unwrap();
    assert_eq!((first.canonical.as_str(), first.canonical_nostereo.as_str()), ("C[C@H](O)N", "C[CH](O)N"));
    assert!(canon[1].as_ref().unwrap_err().contains("Parse Error"));

    let m = bridge.match_smarts(&smiles, &["C".into(), "N".into()]).unwrap();
    assert_eq!(m[1], None);
    assert_eq!(m[0].as_ref().unwrap().len(), 2);

    let desc = bridge.descriptors(&["CCO".into(), "CXN".into()]).unwrap();
    assert_eq!(desc.names.len(), 6);
    assert_eq!(desc.values[0][0], Some(3.0));
    assert_eq!(desc.values[1][5], None);

    let fps = bridge.fingerprint(&smiles, 2, 64, false).unwrap();
    assert!(fps[1].is_none());
    assert!(fps[0].as_ref().unwrap().iter().all(|&b| b < 64));

    let losses = bridge
        .model_loss(&shard_path, &shard_path, &molsae::io::manifest_path(&shard_path), 3)
        .unwrap();
    assert!(losses.iter().all(|(a, b)| a == b));

    assert_eq!(bridge.curate(&["CCO".into(), " CCO".into(), "N".into()]).unwrap(), vec!["CCO", "N"]);
}

#[test]
fn error_replies_carry_kind_and_message() {
    let (_dir, vocab_path, _) = setup();
    let mut bridge = Bridge::spawn(&python_bridge(&vocab_path, &["--fail-method", "curate"])).unwrap();
    let (kind, message) = bridge_kind(bridge.curate(&["C".into()]).unwrap_err());
    assert_eq!((kind.as_str(), message.as_str()), ("model", "injected failure"));
    let (kind, message) = bridge_kind(bridge.call("no_such_method", json!({})).unwrap_err());
    assert_eq!((kind.as_str(), message.as_str()), ("unknown_method", "no_such_method"));
    assert!(bridge.canonicalize(&["C".into()]).is_ok());
}

#[test]
fn spawn_failure_is_bridge_error() {
    let e = Bridge::spawn(&["/nonexistent/bridge-binary".into()]).err().unwrap();
    assert!(e.is_bridge());
    assert_eq!(bridge_kind(e).0, "spawn");
    assert_eq!(bridge_kind(Bridge::spawn(&[]).err().unwrap()).0, "spawn");
}

#[test]
fn closed_process_is_transport_error() {
    let mut bridge = Bridge::spawn(&shell("exit 0")).unwrap();
    let (kind, _) = bridge_kind(bridge.curate(&["C".into()]).unwrap_err());
    assert_eq!(kind, "transport");
}

#[test]
fn malformed_and_mismatched_replies_are_protocol_errors() {
    let mut garbage = Bridge::spawn(&shell("read line; echo 'not json'")).unwrap();
    assert_eq!(bridge_kind(garbage.curate(&["C".into()]).unwrap_err()).0, "protocol");

    let reply = r#"{"id": 99, "ok": true, "result": {"smiles": []}}"#;
    let mut wrong_id = Bridge::spawn(&shell(&format!("read line; echo '{reply}'"))).unwrap();
    let (kind, message) = bridge_kind(wrong_id.curate(&[]).unwrap_err());
    assert_eq!(kind, "protocol");
    assert!(message.contains("99"), "{message}");

    let reply = r#"{"id": 1, "ok": true, "result": {"rows": []}}"#;
    let mut short = Bridge::spawn(&shell(&format!("read line; echo '{reply}'"))).unwrap();
    assert_eq!(bridge_kind(short.canonicalize(&["C".into()]).unwrap_err()).0, "protocol");
}

/// Captures the exact wire form of requests.
struct Wire {
    lines: Vec<String>,
    reply: String,
}

impl Transport for Wire {
    fn exchange(&mut self, request: &Request) -> molsae::Result<Response> {
        self.lines.push(serde_json::to_string(request).unwrap());
        Ok(serde_json::from_str(&self.reply.replace("ID", &request.id.to_string())).unwrap())
    }
}

#[test]
fn wire_format_uses_protocol_field_names() {
    let wire = Wire {
        lines: vec![],
        reply: r#"{"id": ID, "ok": false, "error": {"kind": "chem", "message": "bad atom"}}"#.into(),
    };
    let request = Request {
        id: 7,
        method: "decode".into(),
        params: json!({ "shard_path": "/tmp/x.saev" }),
    };
    let v: Value = serde_json::to_value(&request).unwrap();
    assert_eq!(v, json!({ "id": 7, "method": "decode", "params": { "shard_path": "/tmp/x.saev" } }));

    let ok: Value = serde_json::to_value(Response::success(3, json!([1]))).unwrap();
    assert_eq!(ok, json!({ "id": 3, "ok": true, "result": [1] }));
    let err: Value = serde_json::to_value(Response::failure(4, "chem", "bad")).unwrap();
    assert_eq!(err, json!({ "id": 4, "ok": false, "error": { "kind": "chem", "message": "bad" } }));

    let mut bridge = Bridge::new(Box::new(wire));
    let (kind, message) = bridge_kind(bridge.decode(Path::new("/tmp/x.saev"), 1).unwrap_err());
    assert_eq!((kind.as_str(), message.as_str()), ("chem", "bad atom"));
}

#[test]
fn recorded_session_replays_without_process() {
    let (dir, vocab_path, vocab) = setup();
    let smiles: Vec<String> = vocab[..5].to_vec();
    let session = |bridge: &mut Bridge, out: &Path| {
        let e = bridge.embed(&smiles, out).unwrap();
        let d = bridge.decode(out, e.count).unwrap();
        let c = bridge.canonicalize(&smiles).unwrap();
        let f = bridge.fingerprint(&smiles, 2, 128, true).unwrap();
        (e.errors, d, c, f)
    };

    let mut live = Bridge::spawn(&python_bridge(&vocab_path, &[])).unwrap();
    live.start_recording();
    let recorded = session(&mut live, &dir.path().join("live.saev"));
    let transcript = live.take_transcript().unwrap();
    assert_eq!(transcript.exchanges.len(), 4);
    let path = dir.path().join("t.jsonl");
    transcript.save(&path).unwrap();
    let loaded = Transcript::load(&path).unwrap();
    assert_eq!(loaded, transcript);

    let replay_out = dir.path().join("replay.saev");
    let mut replay = Bridge::replay(loaded);
    assert_eq!(session(&mut replay, &replay_out), recorded);
    assert!(!replay_out.exists());
    assert_eq!(bridge_kind(replay.curate(&smiles).unwrap_err()).0, "replay");
}

#[test]
fn replay_rejects_diverging_requests() {
    let (_dir, vocab_path, _) = setup();
    let mut live = Bridge::spawn(&python_bridge(&vocab_path, &[])).unwrap();
    live.start_recording();
    live.canonicalize(&["CCO".into()]).unwrap();
    let transcript = live.take_transcript().unwrap();

    let mut other_method = Bridge::replay(transcript.clone());
    assert_eq!(bridge_kind(other_method.curate(&["CCO".into()]).unwrap_err()).0, "replay");
    let mut other_params = Bridge::replay(transcript);
    let (kind, message) = bridge_kind(other_params.canonicalize(&["CCN".into()]).unwrap_err());
    assert_eq!(kind, "replay");
    assert!(message.contains("canonicalize"), "{message}");
}

#[test]
fn redaction_only_touches_path_strings() {
    let v = json!({
        "shard_path": "/a/b.saev",
        "out": "/c.saev",
        "nested": [{ "original_path": "/d" }],
        "smiles": ["path"],
        "count_path": 3
    });
    assert_eq!(
        redact_paths(&v),
        json!({
            "shard_path": "<path>",
            "out": "<path>",
            "nested": [{ "original_path": "<path>" }],
            "smiles": ["path"],
            "count_path": 3
        })
    );
}

#[test]
fn transcript_rejects_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.jsonl");
    std::fs::write(&p, "{\"request\": 1}\n").unwrap();
    assert!(matches!(Transcript::load(&p), Err(Error::Format { .. })));
}
