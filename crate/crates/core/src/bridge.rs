// SPDX-License-Identifier: MIT OR Apache-2.0

//! Client for the chemistry bridge: a child process speaking JSON lines.
//!
//! Each request is one line `{"id": n, "method": "...", "params": {...}}`; each
//! reply is `{"id": n, "ok": true, "result": ...}` or
//! `{"id": n, "ok": false, "error": {"kind": "...", "message": "..."}}`.
//! Tensors travel as shard file paths, never inline.
//!
//! A [`Bridge`] can record every exchange into a [`Transcript`], and a
//! [`ReplayTransport`] serves a recorded transcript back in order.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fidelity::CanonicalForm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub id: i64,
    pub method: String,
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: i64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Response {
    pub fn success(id: i64, result: Value) -> Self {
        Self {
            id,
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    pub fn failure(id: i64, kind: &str, message: &str) -> Self {
        Self {
            id,
            ok: false,
            result: None,
            error: Some(ErrorBody {
                kind: kind.into(),
                message: message.into(),
            }),
        }
    }
}

/// Moves one request to the bridge and returns its reply.
pub trait Transport: Send {
    fn exchange(&mut self, request: &Request) -> Result<Response>;
}

/// A bridge child process.
pub struct ProcessTransport {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ProcessTransport {
    /// Spawns `command[0]` with the remaining elements as arguments.
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::bridge("spawn", "empty bridge command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::bridge("spawn", format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { child, stdin, stdout })
    }
}

impl Transport for ProcessTransport {
    fn exchange(&mut self, request: &Request) -> Result<Response> {
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::bridge("transport", format!("write failed: {e}")))?;
        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::bridge("transport", format!("read failed: {e}")))?;
        if n == 0 {
            return Err(Error::bridge("transport", "bridge closed its output"));
        }
        serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::bridge("protocol", format!("malformed reply: {e}")))
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: Request,
    pub response: Response,
}

/// Ordered request/response log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub exchanges: Vec<Exchange>,
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.exchanges {
            out.push_str(&serde_json::to_string(e).expect("exchange serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let exchanges = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { exchanges })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_file(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::io::read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::format(path, e.utf8_error().valid_up_to() as u64, "transcript is not UTF-8"))?;
        Self::from_jsonl(&text).map_err(|e| Error::format(path, 0, e.to_string()))
    }
}

/// Replaces string values under keys ending in `path` or named `out`, which
/// legitimately differ between a recording and its replay.
pub fn redact_paths(v: &Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, val)| {
                    let redacted = if (k.ends_with("path") || k == "out") && val.is_string() {
                        Value::String("<path>".into())
                    } else {
                        redact_paths(val)
                    };
                    (k.clone(), redacted)
                })
                .collect(),
        ),
        Value::Array(items) => Value::Array(items.iter().map(redact_paths).collect()),
        other => other.clone(),
    }
}

/// Serves a transcript back. Each request must match the next recorded one
/// by method and by parameters with file paths redacted.
pub struct ReplayTransport {
    pending: VecDeque<Exchange>,
}

impl ReplayTransport {
    pub fn new(transcript: Transcript) -> Self {
        Self {
            pending: transcript.exchanges.into(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.pending.len()
    }
}

impl Transport for ReplayTransport {
    fn exchange(&mut self, request: &Request) -> Result<Response> {
        let next = self
            .pending
            .pop_front()
            .ok_or_else(|| Error::bridge("replay", format!("transcript exhausted at {}", request.method)))?;
        if next.request.method != request.method {
            return Err(Error::bridge(
                "replay",
                format!("expected {} but got {}", next.request.method, request.method),
            ));
        }
        if redact_paths(&next.request.params) != redact_paths(&request.params) {
            return Err(Error::bridge("replay", format!("parameters of {} differ from the recording", request.method)));
        }
        let mut response = next.response;
        response.id = request.id;
        Ok(response)
    }
}

/// Typed client over any [`Transport`].
pub struct Bridge {
    transport: Box<dyn Transport>,
    next_id: i64,
    recording: Option<Transcript>,
}

/// Per-row outcome of a decode or canonicalize call: text or verbatim error.
pub type RowResult<T> = std::result::Result<T, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedOutcome {
    pub path: PathBuf,
    pub count: usize,
    pub errors: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorTable {
    pub names: Vec<String>,
    /// Per molecule, per descriptor; `None` is a failed cell.
    pub values: Vec<Vec<Option<f64>>>,
}

fn row_text(v: &Value, key: &str) -> Result<RowResult<String>> {
    if let Some(e) = v.get("error").and_then(Value::as_str) {
        return Ok(Err(e.to_string()));
    }
    v.get(key)
        .and_then(Value::as_str)
        .map(|s| Ok(s.to_string()))
        .ok_or_else(|| Error::bridge("protocol", format!("row lacks `{key}` and `error`")))
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::bridge("protocol", format!("result lacks `{key}`")))
}

fn rows<'a>(v: &'a Value, key: &str, expected: usize) -> Result<&'a Vec<Value>> {
    let arr = field(v, key)?
        .as_array()
        .ok_or_else(|| Error::bridge("protocol", format!("`{key}` is not an array")))?;
    if arr.len() != expected {
        return Err(Error::bridge(
            "protocol",
            format!("`{key}` has {} rows, expected {expected}", arr.len()),
        ));
    }
    Ok(arr)
}

impl Bridge {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Self {
            transport,
            next_id: 1,
            recording: None,
        }
    }

    pub fn spawn(command: &[String]) -> Result<Self> {
        Ok(Self::new(Box::new(ProcessTransport::spawn(command)?)))
    }

    pub fn replay(transcript: Transcript) -> Self {
        Self::new(Box::new(ReplayTransport::new(transcript)))
    }

    pub fn start_recording(&mut self) {
        self.recording = Some(Transcript::default());
    }

    pub fn take_transcript(&mut self) -> Option<Transcript> {
        self.recording.take()
    }

    /// Sends one request; a reply with `ok: false` becomes [`Error::Bridge`].
    pub fn call(&mut self, method: &str, params: Value) -> Result<Value> {
        let request = Request {
            id: self.next_id,
            method: method.to_string(),
            params,
        };
        self.next_id += 1;
        let response = self.transport.exchange(&request)?;
        if let Some(t) = &mut self.recording {
            t.exchanges.push(Exchange {
                request: request.clone(),
                response: response.clone(),
            });
        }
        if response.id != request.id {
            return Err(Error::bridge(
                "protocol",
                format!("reply id {} does not answer request {}", response.id, request.id),
            ));
        }
        if response.ok {
            response
                .result
                .ok_or_else(|| Error::bridge("protocol", "ok reply without result"))
        } else {
            let e = response.error.unwrap_or(ErrorBody {
                kind: "unknown".into(),
                message: "error reply without body".into(),
            });
            Err(Error::bridge(e.kind, e.message))
        }
    }

    /// Embeds molecules into a shard (plus manifest) written by the bridge at `out`.
    pub fn embed(&mut self, smiles: &[String], out: &Path) -> Result<EmbedOutcome> {
        let r = self.call("embed", json!({ "smiles": smiles, "out": out }))?;
        let errors = rows(&r, "errors", smiles.len())?
            .iter()
            .map(|e| e.as_str().map(str::to_string))
            .collect();
        Ok(EmbedOutcome {
            path: field(&r, "path")?
                .as_str()
                .map(PathBuf::from)
                .ok_or_else(|| Error::bridge("protocol", "`path` is not a string"))?,
            count: field(&r, "count")?
                .as_u64()
                .ok_or_else(|| Error::bridge("protocol", "`count` is not an integer"))? as usize,
            errors,
        })
    }

    /// Decodes every row of the shard at `shard_path`.
    pub fn decode(&mut self, shard_path: &Path, count: usize) -> Result<Vec<RowResult<String>>> {
        let r = self.call("decode", json!({ "shard_path": shard_path }))?;
        rows(&r, "rows", count)?.iter().map(|v| row_text(v, "smiles")).collect()
    }

    /// Per-row `(L(x), L(x̂))` from the foundation model.
    pub fn model_loss(&mut self, original: &Path, reconstructed: &Path, manifest: &Path, count: usize) -> Result<Vec<(f64, f64)>> {
        let r = self.call(
            "model_loss",
            json!({ "original_path": original, "reconstructed_path": reconstructed, "manifest_path": manifest }),
        )?;
        rows(&r, "losses", count)?
            .iter()
            .map(|p| {
                let pair = p.as_array().filter(|a| a.len() == 2);
                match pair.map(|a| (a[0].as_f64(), a[1].as_f64())) {
                    Some((Some(o), Some(x))) => Ok((o, x)),
                    _ => Err(Error::bridge("protocol", "loss entry is not a number pair")),
                }
            })
            .collect()
    }

    pub fn canonicalize(&mut self, smiles: &[String]) -> Result<Vec<RowResult<CanonicalForm>>> {
        let r = self.call("canonicalize", json!({ "smiles": smiles }))?;
        rows(&r, "rows", smiles.len())?
            .iter()
            .map(|v| {
                Ok(match (row_text(v, "canonical")?, row_text(v, "canonical_nostereo")?) {
                    (Ok(canonical), Ok(canonical_nostereo)) => Ok(CanonicalForm {
                        canonical,
                        canonical_nostereo,
                    }),
                    (Err(e), _) | (_, Err(e)) => Err(e),
                })
            })
            .collect()
    }

    /// Molecule × pattern match matrix; `None` rows are molecules that failed to parse.
    pub fn match_smarts(&mut self, smiles: &[String], smarts: &[String]) -> Result<Vec<Option<Vec<bool>>>> {
        let r = self.call("match_smarts", json!({ "smiles": smiles, "smarts": smarts }))?;
        rows(&r, "matrix", smiles.len())?
            .iter()
            .map(|row| {
                if row.is_null() {
                    return Ok(None);
                }
                let cells = row
                    .as_array()
                    .filter(|a| a.len() == smarts.len())
                    .ok_or_else(|| Error::bridge("protocol", "match row has the wrong width"))?;
                cells
                    .iter()
                    .map(|c| match c.as_u64() {
                        Some(0) => Ok(false),
                        Some(1) => Ok(true),
                        _ => c.as_bool().ok_or_else(|| Error::bridge("protocol", "match cell is not 0/1")),
                    })
                    .collect::<Result<Vec<bool>>>()
                    .map(Some)
            })
            .collect()
    }

    pub fn descriptors(&mut self, smiles: &[String]) -> Result<DescriptorTable> {
        let r = self.call("descriptors", json!({ "smiles": smiles }))?;
        let names: Vec<String> = serde_json::from_value(field(&r, "names")?.clone())
            .map_err(|e| Error::bridge("protocol", format!("descriptor names: {e}")))?;
        let values = rows(&r, "values", smiles.len())?
            .iter()
            .map(|row| {
                let cells = row
                    .as_array()
                    .filter(|a| a.len() == names.len())
                    .ok_or_else(|| Error::bridge("protocol", "descriptor row has the wrong width"))?;
                Ok(cells.iter().map(|c| c.as_f64().filter(|v| v.is_finite())).collect())
            })
            .collect::<Result<_>>()?;
        Ok(DescriptorTable { names, values })
    }

    /// Morgan fingerprints as set-bit indices; `None` for molecules that failed.
    pub fn fingerprint(&mut self, smiles: &[String], radius: u32, nbits: u32, chirality: bool) -> Result<Vec<Option<Vec<u32>>>> {
        let r = self.call(
            "fingerprint",
            json!({ "smiles": smiles, "radius": radius, "nbits": nbits, "chirality": chirality }),
        )?;
        rows(&r, "fingerprints", smiles.len())?
            .iter()
            .map(|row| {
                if row.is_null() {
                    return Ok(None);
                }
                serde_json::from_value(row.clone())
                    .map(Some)
                    .map_err(|e| Error::bridge("protocol", format!("fingerprint row: {e}")))
            })
            .collect()
    }

    pub fn curate(&mut self, smiles: &[String]) -> Result<Vec<String>> {
        let r = self.call("curate", json!({ "smiles": smiles }))?;
        serde_json::from_value(field(&r, "smiles")?.clone())
            .map_err(|e| Error::bridge("protocol", format!("curated list: {e}")))
    }
}
