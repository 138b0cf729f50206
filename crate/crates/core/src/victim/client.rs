use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use super::protocol::{Request, Response, TokensItem};
use super::{LabeledSequence, Prediction, Scorer};
use crate::error::ScorerError;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    /// `host:port`, `tcp://host:port`, or `exec:<shell command>` for a stdio server.
    pub endpoint: String,
    pub timeout: Duration,
    pub batch_size: usize,
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ClientConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            batch_size: 64,
        }
    }
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Scorer backed by a remote process speaking the line protocol.
///
/// Requests are sent one batch at a time over a single connection, so
/// responses always come back in request order. Remote errors are surfaced
/// as-is; nothing is retried.
pub struct ExternalScorerClient {
    cfg: ClientConfig,
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for ExternalScorerClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalScorerClient").field("cfg", &self.cfg).finish()
    }
}

impl ExternalScorerClient {
    pub fn connect(cfg: ClientConfig) -> Result<Self, ScorerError> {
        let transport = |source| ScorerError::Transport {
            endpoint: cfg.endpoint.clone(),
            source,
        };
        if cfg.batch_size == 0 {
            return Err(ScorerError::Protocol("batch size must be positive".into()));
        }
        let conn = if let Some(cmd) = cfg.endpoint.strip_prefix("exec:") {
            let mut child = Command::new("sh")
                .arg("-c")
                .arg(cmd)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(transport)?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            Connection {
                reader: Box::new(BufReader::new(stdout)),
                writer: Box::new(stdin),
                child: Some(child),
            }
        } else {
            let addr = cfg.endpoint.strip_prefix("tcp://").unwrap_or(&cfg.endpoint);
            let sock = addr
                .to_socket_addrs()
                .map_err(transport)?
                .next()
                .ok_or_else(|| transport(io::Error::new(io::ErrorKind::NotFound, "address did not resolve")))?;
            let stream = TcpStream::connect_timeout(&sock, cfg.timeout).map_err(transport)?;
            stream.set_read_timeout(Some(cfg.timeout)).map_err(transport)?;
            stream.set_write_timeout(Some(cfg.timeout)).map_err(transport)?;
            stream.set_nodelay(true).map_err(transport)?;
            Connection {
                reader: Box::new(BufReader::new(stream.try_clone().map_err(transport)?)),
                writer: Box::new(stream),
                child: None,
            }
        };
        Ok(ExternalScorerClient {
            cfg,
            conn: Mutex::new(conn),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.cfg.endpoint
    }

    fn call(&self, request: &Request) -> Result<Response, ScorerError> {
        let transport = |source| ScorerError::Transport {
            endpoint: self.cfg.endpoint.clone(),
            source,
        };
        let mut line = serde_json::to_string(request).map_err(|e| ScorerError::Protocol(e.to_string()))?;
        line.push('\n');
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        conn.writer.write_all(line.as_bytes()).map_err(transport)?;
        conn.writer.flush().map_err(transport)?;
        let mut reply = String::new();
        if conn.reader.read_line(&mut reply).map_err(transport)? == 0 {
            return Err(transport(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "connection closed",
            )));
        }
        let response: Response =
            serde_json::from_str(&reply).map_err(|e| ScorerError::Protocol(format!("bad response: {e}")))?;
        match response {
            Response::Error { error } => Err(ScorerError::Remote(error)),
            r => Ok(r),
        }
    }
}

impl Scorer for ExternalScorerClient {
    fn loss_batch(&self, items: &[LabeledSequence]) -> Result<Vec<f64>, ScorerError> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.cfg.batch_size) {
            match self.call(&Request::LossBatch { items: chunk.to_vec() })? {
                Response::Losses { losses } if losses.len() == chunk.len() => out.extend(losses),
                other => {
                    return Err(ScorerError::Protocol(format!(
                        "expected {} losses, got {other:?}",
                        chunk.len()
                    )))
                }
            }
        }
        Ok(out)
    }

    fn predict_batch(&self, items: &[Vec<String>]) -> Result<Vec<Prediction>, ScorerError> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.cfg.batch_size) {
            let request = Request::PredictBatch {
                items: chunk.iter().map(|t| TokensItem { tokens: t.clone() }).collect(),
            };
            match self.call(&request)? {
                Response::Predictions { predictions } if predictions.len() == chunk.len() => {
                    for (p, t) in predictions.iter().zip(chunk) {
                        if p.slots.len() != t.len() {
                            return Err(ScorerError::Protocol(format!(
                                "prediction has {} slots for {} tokens",
                                p.slots.len(),
                                t.len()
                            )));
                        }
                    }
                    out.extend(predictions)
                }
                other => {
                    return Err(ScorerError::Protocol(format!(
                        "expected {} predictions, got {other:?}",
                        chunk.len()
                    )))
                }
            }
        }
        Ok(out)
    }
}
