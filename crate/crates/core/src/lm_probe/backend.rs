//! Line-delimited JSON protocol for out-of-process language models.
//!
//! Each request is one line `{"context":[ids...]}`; each response is one line
//! `{"logprobs":[...]}` with one entry per vocabulary token (`null` for `-inf`), or
//! `{"error":"..."}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::vocab::TokenId;
use super::{LanguageModel, ProbeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub context: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BackendResponse {
    fn ok(logprobs: &[f64]) -> Self {
        Self {
            logprobs: Some(
                logprobs
                    .iter()
                    .map(|v| v.is_finite().then_some(*v))
                    .collect(),
            ),
            error: None,
        }
    }

    fn err(message: String) -> Self {
        Self {
            logprobs: None,
            error: Some(message),
        }
    }
}

fn io_err(e: impl std::fmt::Display) -> ProbeError {
    ProbeError::Backend(e.to_string())
}

/// Answers requests from `input` until end of stream. Malformed lines get an error
/// response rather than ending the loop. Returns the number of lines handled.
pub fn serve_model<M: LanguageModel + ?Sized>(
    model: &M,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<usize, ProbeError> {
    let mut handled = 0;
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<BackendRequest>(&line) {
            Ok(req) => match model.next_token_logprobs(&req.context) {
                Ok(lp) => BackendResponse::ok(&lp),
                Err(e) => BackendResponse::err(e.to_string()),
            },
            Err(e) => BackendResponse::err(format!("bad request: {e}")),
        };
        serde_json::to_writer(&mut output, &response).map_err(io_err)?;
        output.write_all(b"\n").map_err(io_err)?;
        output.flush().map_err(io_err)?;
        handled += 1;
    }
    Ok(handled)
}

/// Client side of the protocol over any reader/writer pair.
pub struct StreamBackend<R, W> {
    io: Mutex<(R, W)>,
    vocab_size: usize,
    eos: Option<TokenId>,
}

impl<R: BufRead, W: Write> StreamBackend<R, W> {
    /// Connects and learns the vocabulary size from an empty-context query.
    pub fn connect(reader: R, writer: W, eos: Option<TokenId>) -> Result<Self, ProbeError> {
        let mut backend = Self {
            io: Mutex::new((reader, writer)),
            vocab_size: 0,
            eos,
        };
        backend.vocab_size = backend.query(&[])?.len();
        if backend.vocab_size == 0 {
            return Err(ProbeError::Backend("backend reported an empty vocabulary".into()));
        }
        Ok(backend)
    }

    fn query(&self, context: &[TokenId]) -> Result<Vec<f64>, ProbeError> {
        let mut guard = self.io.lock().map_err(|_| io_err("backend lock poisoned"))?;
        let (reader, writer) = &mut *guard;
        let req = BackendRequest {
            context: context.to_vec(),
        };
        serde_json::to_writer(&mut *writer, &req).map_err(io_err)?;
        writer.write_all(b"\n").map_err(io_err)?;
        writer.flush().map_err(io_err)?;
        let mut line = String::new();
        if reader.read_line(&mut line).map_err(io_err)? == 0 {
            return Err(io_err("backend closed the stream"));
        }
        let resp: BackendResponse = serde_json::from_str(&line).map_err(|e| io_err(format!("bad response: {e}")))?;
        if let Some(msg) = resp.error {
            return Err(ProbeError::Backend(msg));
        }
        let lp = resp
            .logprobs
            .ok_or_else(|| io_err("response carries neither logprobs nor error"))?;
        Ok(lp.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

impl<R: BufRead, W: Write> LanguageModel for StreamBackend<R, W> {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>, ProbeError> {
        let lp = self.query(context)?;
        if lp.len() != self.vocab_size {
            return Err(ProbeError::Backend(format!(
                "expected {} logprobs, got {}",
                self.vocab_size,
                lp.len()
            )));
        }
        Ok(lp)
    }

    fn eos(&self) -> Option<TokenId> {
        self.eos
    }
}

/// A backend running as a child process speaking the protocol on stdin/stdout.
pub struct ProcessBackend {
    child: Child,
    stream: StreamBackend<BufReader<ChildStdout>, ChildStdin>,
}

impl ProcessBackend {
    pub fn spawn(program: &str, args: &[String], eos: Option<TokenId>) -> Result<Self, ProbeError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| io_err(format!("cannot start '{program}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match StreamBackend::connect(BufReader::new(stdout), stdin, eos) {
            Ok(stream) => Ok(Self { child, stream }),
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }
}

impl LanguageModel for ProcessBackend {
    fn vocab_size(&self) -> usize {
        self.stream.vocab_size()
    }

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>, ProbeError> {
        self.stream.next_token_logprobs(context)
    }

    fn eos(&self) -> Option<TokenId> {
        self.stream.eos()
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
