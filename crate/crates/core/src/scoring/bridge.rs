//! Line-delimited JSON protocol for external scorers.
//!
//! Every message is one JSON object on one line, tagged by `kind`. The client
//! assigns each request an `id`, which the server echoes. Requests:
//!
//! ```text
//! {"kind":"handshake","id":1,"protocol_version":1,"head":"mlm","candidates":["beginning","inside","outside"]}
//! {"kind":"score","id":2,"rendered_tokens":[...],"mask_index":14,"candidates":[...],
//!  "target_position":{"sentence_id":"7","token_index":3,"rendered_index":3,"token":"asthma"}}
//! {"kind":"train","id":3,"config":{...},"examples":[{"rendered_tokens":[...],"mask_index":14,
//!  "target_position":{...},"label":2}]}
//! {"kind":"save","id":4}
//! {"kind":"load","id":5,"handle":"..."}
//! ```
//!
//! Responses carry the same `kind` (`handshake` adds `accepted`, `rejected`,
//! `capacity` and `defaults`; `score` returns `logits`; `train` returns
//! `final_loss`; `save` returns a `handle`), or `kind: "error"` with a `code`
//! and `message`. A request of unknown kind gets an `unknown_kind` error.
//!
//! The handshake starts a fresh model for the connection. Head `mlm` scores
//! verbalizer tokens at the mask of a cloze question; head `token` is a
//! token classifier whose candidates are label names, whose `rendered_tokens`
//! are the plain sentence and whose training examples carry soft `target`
//! distributions instead of a `label`.
//!
//! Addresses are `host:port` (TCP) or `exec:<command line>` (a child process
//! speaking the protocol on stdin/stdout).

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::baseline::BaselineScorer;
use super::{LabeledExample, LogitVector, ScoreRequest, Scorer, TrainConfig, TrainSummary};
use crate::classifier::{BuiltinClassifier, TokenClassifier};
use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::pipeline::SoftSentence;
use crate::pvp::ClozeExample;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Mlm,
    Token,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPosition {
    pub sentence_id: String,
    pub token_index: usize,
    /// Index of the target inside `rendered_tokens`; absent when truncated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered_index: Option<usize>,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireExample {
    pub rendered_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_index: Option<usize>,
    pub target_position: TargetPosition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Request {
    Handshake {
        id: u64,
        protocol_version: u32,
        head: Head,
        candidates: Vec<String>,
    },
    Score {
        id: u64,
        rendered_tokens: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask_index: Option<usize>,
        candidates: Vec<String>,
        target_position: TargetPosition,
    },
    Train {
        id: u64,
        config: TrainConfig,
        examples: Vec<WireExample>,
    },
    Save {
        id: u64,
    },
    Load {
        id: u64,
        handle: String,
    },
}

impl Request {
    pub fn id(&self) -> u64 {
        match self {
            Request::Handshake { id, .. }
            | Request::Score { id, .. }
            | Request::Train { id, .. }
            | Request::Save { id }
            | Request::Load { id, .. } => *id,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Request::Handshake { .. } => "handshake",
            Request::Score { .. } => "score",
            Request::Train { .. } => "train",
            Request::Save { .. } => "save",
            Request::Load { .. } => "load",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response {
    Handshake {
        id: u64,
        protocol_version: u32,
        accepted: bool,
        #[serde(default)]
        rejected: Vec<String>,
        capacity: usize,
        #[serde(default)]
        defaults: Value,
    },
    Score {
        id: u64,
        logits: Vec<f64>,
    },
    Train {
        id: u64,
        final_loss: f64,
    },
    Save {
        id: u64,
        handle: String,
    },
    Load {
        id: u64,
    },
    Error {
        id: Option<u64>,
        code: String,
        message: String,
    },
}

impl Response {
    pub fn id(&self) -> Option<u64> {
        match self {
            Response::Handshake { id, .. }
            | Response::Score { id, .. }
            | Response::Train { id, .. }
            | Response::Save { id, .. }
            | Response::Load { id } => Some(*id),
            Response::Error { id, .. } => *id,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Response::Handshake { .. } => "handshake",
            Response::Score { .. } => "score",
            Response::Train { .. } => "train",
            Response::Save { .. } => "save",
            Response::Load { .. } => "load",
            Response::Error { .. } => "error",
        }
    }

    pub fn error(id: Option<u64>, code: &str, message: impl Into<String>) -> Self {
        Response::Error {
            id,
            code: code.to_string(),
            message: message.into(),
        }
    }
}

/// What the server said at handshake time.
#[derive(Debug, Clone, PartialEq)]
pub struct HandshakeInfo {
    pub protocol_version: u32,
    pub capacity: usize,
    pub defaults: Value,
}

/// A connection to a scorer bridge.
pub struct BridgeClient {
    addr: String,
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    next_id: u64,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("addr", &self.addr)
            .field("next_id", &self.next_id)
            .finish()
    }
}

impl BridgeClient {
    pub fn connect(addr: &str) -> Result<Self> {
        let conn_err = |source| Error::Connection {
            addr: addr.to_string(),
            source,
        };
        if let Some(cmdline) = addr.strip_prefix("exec:") {
            let mut parts = cmdline.split_whitespace();
            let program = parts
                .next()
                .ok_or_else(|| conn_err(io::Error::new(io::ErrorKind::InvalidInput, "empty command")))?;
            let mut child = Command::new(program)
                .args(parts)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(conn_err)?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let mut client = BridgeClient::from_streams(addr, BufReader::new(stdout), stdin);
            client.child = Some(child);
            return Ok(client);
        }
        let target = addr.strip_prefix("tcp:").unwrap_or(addr);
        let stream = TcpStream::connect(target).map_err(conn_err)?;
        stream.set_nodelay(true).ok();
        let reader = BufReader::new(stream.try_clone().map_err(conn_err)?);
        Ok(BridgeClient::from_streams(addr, reader, stream))
    }

    /// A client over arbitrary streams; `addr` is only used in messages.
    pub fn from_streams(
        addr: &str,
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Self {
        BridgeClient {
            addr: addr.to_string(),
            reader: Box::new(reader),
            writer: Box::new(writer),
            child: None,
            next_id: 1,
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn next_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Sends one request and reads its response, checking the echoed id and
    /// kind. Error responses become [`Error::Remote`].
    pub fn call(&mut self, request: &Request) -> Result<Response> {
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(Error::Protocol(format!("{} closed the connection", self.addr)));
        }
        let response: Response = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Protocol(format!("unreadable response {:?}: {e}", reply.trim_end())))?;
        if let Response::Error { code, message, .. } = &response {
            return Err(Error::Remote {
                code: code.clone(),
                message: message.clone(),
            });
        }
        if response.id() != Some(request.id()) {
            return Err(Error::Protocol(format!(
                "response id {:?} does not match request id {}",
                response.id(),
                request.id()
            )));
        }
        if response.kind() != request.kind() {
            return Err(Error::Protocol(format!(
                "{} response to a {} request",
                response.kind(),
                request.kind()
            )));
        }
        Ok(response)
    }

    pub fn handshake(&mut self, head: Head, candidates: &[String]) -> Result<HandshakeInfo> {
        let id = self.next_id();
        let response = self.call(&Request::Handshake {
            id,
            protocol_version: PROTOCOL_VERSION,
            head,
            candidates: candidates.to_vec(),
        })?;
        match response {
            Response::Handshake {
                accepted: false,
                rejected,
                ..
            } => Err(Error::Vocabulary(format!(
                "bridge rejected verbalizer tokens: {}",
                rejected.join(", ")
            ))),
            Response::Handshake {
                protocol_version,
                capacity,
                defaults,
                ..
            } => {
                if protocol_version != PROTOCOL_VERSION {
                    return Err(Error::Protocol(format!(
                        "bridge speaks protocol {protocol_version}, expected {PROTOCOL_VERSION}"
                    )));
                }
                Ok(HandshakeInfo {
                    protocol_version,
                    capacity,
                    defaults,
                })
            }
            _ => unreachable!("kind checked in call"),
        }
    }

    pub fn score(&mut self, example: WireExample, candidates: &[String]) -> Result<LogitVector> {
        let id = self.next_id();
        let response = self.call(&Request::Score {
            id,
            rendered_tokens: example.rendered_tokens,
            mask_index: example.mask_index,
            candidates: candidates.to_vec(),
            target_position: example.target_position,
        })?;
        let Response::Score { logits, .. } = response else {
            unreachable!("kind checked in call")
        };
        if logits.len() != candidates.len() {
            return Err(Error::Protocol(format!(
                "{} logits for {} candidates",
                logits.len(),
                candidates.len()
            )));
        }
        LogitVector::new(logits)
    }

    pub fn train(&mut self, examples: Vec<WireExample>, config: &TrainConfig) -> Result<f64> {
        let id = self.next_id();
        let response = self.call(&Request::Train {
            id,
            config: config.clone(),
            examples,
        })?;
        let Response::Train { final_loss, .. } = response else {
            unreachable!("kind checked in call")
        };
        Ok(final_loss)
    }

    pub fn save(&mut self) -> Result<String> {
        let id = self.next_id();
        let Response::Save { handle, .. } = self.call(&Request::Save { id })? else {
            unreachable!("kind checked in call")
        };
        Ok(handle)
    }

    pub fn load(&mut self, handle: &str) -> Result<()> {
        let id = self.next_id();
        self.call(&Request::Load {
            id,
            handle: handle.to_string(),
        })?;
        Ok(())
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // Closing stdin asks the bridge to exit.
            self.writer = Box::new(io::sink());
            if child.wait().is_err() {
                child.kill().ok();
            }
        }
    }
}

pub fn cloze_to_wire(example: &ClozeExample) -> WireExample {
    WireExample {
        rendered_tokens: example.rendered_tokens.clone(),
        mask_index: Some(example.mask_index),
        target_position: TargetPosition {
            sentence_id: example.sentence_id.clone(),
            token_index: example.token_index,
            rendered_index: example.target_index,
            token: example.target_token.clone(),
        },
        label: None,
        target: None,
    }
}

/// Rebuilds the parts of a cloze example that travel over the wire.
pub fn wire_to_cloze(example: &WireExample) -> Result<ClozeExample> {
    let mask_index = example
        .mask_index
        .ok_or_else(|| Error::Protocol("cloze example without mask_index".into()))?;
    if mask_index >= example.rendered_tokens.len() {
        return Err(Error::Protocol(format!("mask_index {mask_index} out of range")));
    }
    let pos = &example.target_position;
    Ok(ClozeExample {
        sentence_id: pos.sentence_id.clone(),
        token_index: pos.token_index,
        target_token: pos.token.clone(),
        rendered_tokens: example.rendered_tokens.clone(),
        mask_index,
        text: example.rendered_tokens.join(" "),
        target_index: pos.rendered_index,
        context_start: 0,
        gold_label: None,
    })
}

/// [`Scorer`] backed by a bridge connection.
#[derive(Debug)]
pub struct BridgeScorer {
    client: BridgeClient,
    info: Option<HandshakeInfo>,
}

impl BridgeScorer {
    pub fn connect(addr: &str) -> Result<Self> {
        Ok(BridgeScorer {
            client: BridgeClient::connect(addr)?,
            info: None,
        })
    }

    pub fn from_client(client: BridgeClient) -> Self {
        BridgeScorer { client, info: None }
    }

    pub fn handshake_info(&self) -> Option<&HandshakeInfo> {
        self.info.as_ref()
    }
}

impl Scorer for BridgeScorer {
    fn prepare(&mut self, candidates: &[String]) -> Result<()> {
        if self.info.is_none() {
            self.info = Some(self.client.handshake(Head::Mlm, candidates)?);
        }
        Ok(())
    }

    fn score(&mut self, request: ScoreRequest<'_>) -> Result<LogitVector> {
        self.prepare(request.candidates)?;
        self.client.score(cloze_to_wire(request.example), request.candidates)
    }

    fn train(&mut self, examples: &[LabeledExample], candidates: &[String], config: &TrainConfig) -> Result<TrainSummary> {
        if examples.is_empty() {
            return Err(Error::EmptyTraining);
        }
        self.prepare(candidates)?;
        let wire = examples
            .iter()
            .map(|ex| WireExample {
                label: Some(ex.label),
                ..cloze_to_wire(&ex.example)
            })
            .collect();
        let final_loss = self.client.train(wire, config)?;
        Ok(TrainSummary {
            epoch_losses: Vec::new(),
            final_loss,
        })
    }

    fn checkpoint(&mut self) -> Result<Vec<u8>> {
        Ok(self.client.save()?.into_bytes())
    }
}

fn token_wire(sentence_id: &str, tokens: &[String], index: usize) -> WireExample {
    WireExample {
        rendered_tokens: tokens.to_vec(),
        mask_index: None,
        target_position: TargetPosition {
            sentence_id: sentence_id.to_string(),
            token_index: index,
            rendered_index: Some(index),
            token: tokens[index].clone(),
        },
        label: None,
        target: None,
    }
}

/// [`TokenClassifier`] backed by a bridge connection using the `token` head.
#[derive(Debug)]
pub struct BridgeClassifier {
    client: BridgeClient,
    labels: Vec<String>,
}

impl BridgeClassifier {
    pub fn connect(addr: &str) -> Result<Self> {
        Ok(BridgeClassifier {
            client: BridgeClient::connect(addr)?,
            labels: Vec::new(),
        })
    }

    pub fn from_client(client: BridgeClient) -> Self {
        BridgeClassifier {
            client,
            labels: Vec::new(),
        }
    }
}

impl TokenClassifier for BridgeClassifier {
    fn train_soft(&mut self, data: &[SoftSentence], labels: &[String], config: &TrainConfig) -> Result<TrainSummary> {
        if self.labels.is_empty() {
            self.client.handshake(Head::Token, labels)?;
            self.labels = labels.to_vec();
        }
        let mut wire = Vec::new();
        for s in data {
            for (i, d) in s.distributions.iter().enumerate() {
                wire.push(WireExample {
                    target: Some(d.probs().to_vec()),
                    ..token_wire(&s.id, &s.tokens, i)
                });
            }
        }
        if wire.is_empty() {
            return Err(Error::EmptyTraining);
        }
        let final_loss = self.client.train(wire, config)?;
        Ok(TrainSummary {
            epoch_losses: Vec::new(),
            final_loss,
        })
    }

    fn logits(&mut self, sentence: &Sentence) -> Result<Vec<LogitVector>> {
        if self.labels.is_empty() {
            return Err(Error::Config("classifier has not been trained".into()));
        }
        let labels = self.labels.clone();
        (0..sentence.len())
            .map(|i| self.client.score(token_wire(&sentence.id, &sentence.tokens, i), &labels))
            .collect()
    }

    fn checkpoint(&mut self) -> Result<Vec<u8>> {
        Ok(self.client.save()?.into_bytes())
    }
}

/// Server-side handler for one connection.
pub trait SessionBackend {
    fn handle(&mut self, request: Request) -> Response;
}

const KINDS: [&str; 5] = ["handshake", "score", "train", "save", "load"];

/// Answers requests from `reader` until end of input. Malformed lines and
/// unknown kinds get error responses; the loop keeps going.
pub fn serve_lines<R: BufRead, W: Write>(reader: R, mut writer: W, backend: &mut dyn SessionBackend) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Value>(&line) {
            Err(e) => Response::error(None, "bad_json", e.to_string()),
            Ok(value) => {
                let id = value.get("id").and_then(Value::as_u64);
                let kind = value.get("kind").and_then(Value::as_str).unwrap_or("");
                if !KINDS.contains(&kind) {
                    Response::error(id, "unknown_kind", format!("unknown message kind {kind:?}"))
                } else {
                    match serde_json::from_value::<Request>(value) {
                        Ok(request) => backend.handle(request),
                        Err(e) => Response::error(id, "bad_request", e.to_string()),
                    }
                }
            }
        };
        let mut out = serde_json::to_string(&response).expect("serializable response");
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts connections forever, one thread and one fresh backend each.
pub fn serve_tcp<B, F>(listener: TcpListener, make_backend: F) -> io::Result<()>
where
    B: SessionBackend + 'static,
    F: Fn() -> B + Send + Sync + 'static,
{
    let make_backend = std::sync::Arc::new(make_backend);
    for stream in listener.incoming() {
        let stream = stream?;
        let make_backend = make_backend.clone();
        std::thread::spawn(move || {
            let mut backend = make_backend();
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(e) => {
                    log::warn!("dropping connection: {e}");
                    return;
                }
            };
            if let Err(e) = serve_lines(reader, stream, &mut backend) {
                log::warn!("connection ended: {e}");
            }
        });
    }
    Ok(())
}

/// Serves the built-in models over the protocol.
#[derive(Debug, Default)]
pub struct BuiltinBackend {
    window: usize,
    head: Option<Head>,
    candidates: Vec<String>,
    scorer: Option<BaselineScorer>,
    classifier: Option<BuiltinClassifier>,
}

impl BuiltinBackend {
    pub fn new(window: usize) -> Self {
        BuiltinBackend {
            window,
            ..Default::default()
        }
    }

    fn handshake(&mut self, id: u64, version: u32, head: Head, candidates: Vec<String>) -> Response {
        if version != PROTOCOL_VERSION {
            return Response::error(Some(id), "version", format!("unsupported protocol version {version}"));
        }
        let rejected: Vec<String> = candidates
            .iter()
            .filter(|c| c.is_empty() || c.chars().any(char::is_whitespace))
            .cloned()
            .collect();
        let accepted = rejected.is_empty() && !candidates.is_empty();
        if accepted {
            self.head = Some(head);
            self.candidates = candidates.clone();
            self.scorer = None;
            self.classifier = None;
            if head == Head::Mlm {
                let mut scorer = BaselineScorer::new(self.window);
                if let Err(e) = scorer.prepare(&candidates) {
                    return Response::error(Some(id), "vocabulary", e.to_string());
                }
                self.scorer = Some(scorer);
            } else {
                self.classifier = Some(BuiltinClassifier::new(self.window));
            }
        }
        Response::Handshake {
            id,
            protocol_version: PROTOCOL_VERSION,
            accepted,
            rejected,
            capacity: 1,
            defaults: serde_json::json!({ "window": self.window, "model": "builtin-linear" }),
        }
    }

    fn handle_inner(&mut self, request: Request) -> Result<Response> {
        let id = request.id();
        match request {
            Request::Handshake {
                protocol_version,
                head,
                candidates,
                ..
            } => Ok(self.handshake(id, protocol_version, head, candidates)),
            Request::Score {
                rendered_tokens,
                mask_index,
                candidates,
                target_position,
                ..
            } => {
                let wire = WireExample {
                    rendered_tokens,
                    mask_index,
                    target_position,
                    label: None,
                    target: None,
                };
                let logits = match self.head {
                    Some(Head::Mlm) => {
                        let scorer = self.scorer.as_mut().expect("mlm session has a scorer");
                        let example = wire_to_cloze(&wire)?;
                        scorer
                            .score(ScoreRequest {
                                example: &example,
                                candidates: &candidates,
                            })?
                            .scores()
                            .to_vec()
                    }
                    Some(Head::Token) => {
                        if candidates != self.candidates {
                            return Err(Error::Vocabulary(format!("{candidates:?}")));
                        }
                        let classifier = self.classifier.as_mut().expect("token session has a classifier");
                        let idx = wire.target_position.token_index;
                        if idx >= wire.rendered_tokens.len() {
                            return Err(Error::Protocol(format!("token_index {idx} out of range")));
                        }
                        classifier.logits_at(&wire.rendered_tokens, idx)?
                    }
                    None => return Err(Error::Config("handshake first".into())),
                };
                Ok(Response::Score { id, logits })
            }
            Request::Train { config, examples, .. } => {
                let final_loss = match self.head {
                    Some(Head::Mlm) => {
                        let labeled = examples
                            .iter()
                            .map(|w| {
                                let label = w
                                    .label
                                    .ok_or_else(|| Error::Protocol("training example without label".into()))?;
                                Ok(LabeledExample {
                                    example: wire_to_cloze(w)?,
                                    label,
                                })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let candidates = self.candidates.clone();
                        let scorer = self.scorer.as_mut().expect("mlm session has a scorer");
                        scorer.train(&labeled, &candidates, &config)?.final_loss
                    }
                    Some(Head::Token) => {
                        let rows = examples
                            .iter()
                            .map(|w| {
                                let target = w
                                    .target
                                    .as_deref()
                                    .ok_or_else(|| Error::Protocol("training example without target".into()))?;
                                Ok((w.rendered_tokens.as_slice(), w.target_position.token_index, target))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let n = self.candidates.len();
                        let classifier = self.classifier.as_mut().expect("token session has a classifier");
                        classifier.fit_tokens(rows, n, &config)?.final_loss
                    }
                    None => return Err(Error::Config("handshake first".into())),
                };
                Ok(Response::Train { id, final_loss })
            }
            Request::Save { .. } => {
                let handle = match (&self.scorer, &self.classifier) {
                    (Some(s), _) => s.to_json(),
                    (_, Some(c)) => c.to_json(),
                    _ => return Err(Error::Config("handshake first".into())),
                };
                Ok(Response::Save { id, handle })
            }
            Request::Load { handle, .. } => {
                match self.head {
                    Some(Head::Mlm) => self.scorer = Some(BaselineScorer::from_json(&handle).map_err(bad_handle)?),
                    Some(Head::Token) => self.classifier = Some(BuiltinClassifier::from_json(&handle).map_err(bad_handle)?),
                    None => return Err(Error::Config("handshake first".into())),
                }
                Ok(Response::Load { id })
            }
        }
    }
}

fn bad_handle(e: Error) -> Error {
    Error::Protocol(format!("unusable handle: {e}"))
}

impl SessionBackend for BuiltinBackend {
    fn handle(&mut self, request: Request) -> Response {
        let id = request.id();
        self.handle_inner(request).unwrap_or_else(|e| {
            let code = match e {
                Error::Vocabulary(_) => "vocabulary",
                Error::Protocol(_) => "bad_request",
                Error::Config(_) => "not_ready",
                Error::EmptyTraining => "empty_training",
                _ => "internal",
            };
            Response::error(Some(id), code, e.to_string())
        })
    }
}
