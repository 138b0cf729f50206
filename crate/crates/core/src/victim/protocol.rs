//! Newline-delimited JSON scorer protocol.
//!
//! One request per line, one response per line, in order:
//!
//! ```text
//! {"op":"loss_batch","items":[{"tokens":[..],"slots":[..],"intent":".."}]}  -> {"losses":[..]}
//! {"op":"predict_batch","items":[{"tokens":[..]}]}                          -> {"predictions":[{"intent":"..","slots":[..]}]}
//! anything that fails                                                       -> {"error":".."}
//! ```

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{LabeledSequence, Prediction, Scorer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokensItem {
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    LossBatch { items: Vec<LabeledSequence> },
    PredictBatch { items: Vec<TokensItem> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Losses { losses: Vec<f64> },
    Predictions { predictions: Vec<Prediction> },
    Error { error: String },
}

/// Answers a single request line.
pub fn handle_line<S: Scorer + ?Sized>(scorer: &S, line: &str) -> Response {
    let request: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            return Response::Error {
                error: format!("bad request: {e}"),
            }
        }
    };
    let result = match request {
        Request::LossBatch { items } => scorer.loss_batch(&items).map(|losses| Response::Losses { losses }),
        Request::PredictBatch { items } => {
            let tokens: Vec<Vec<String>> = items.into_iter().map(|i| i.tokens).collect();
            if tokens.iter().any(Vec::is_empty) {
                return Response::Error {
                    error: "empty token list".into(),
                };
            }
            scorer
                .predict_batch(&tokens)
                .map(|predictions| Response::Predictions { predictions })
        }
    };
    result.unwrap_or_else(|e| Response::Error { error: e.to_string() })
}

/// Serves requests from `reader` until EOF.
pub fn serve_stream<S, R, W>(scorer: &S, reader: R, mut writer: W) -> io::Result<()>
where
    S: Scorer + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_line(scorer, &line);
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

fn serve_connection<S: Scorer + ?Sized>(scorer: &S, stream: TcpStream) -> io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    serve_stream(scorer, reader, BufWriter::new(stream))
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp<S: Scorer + 'static>(scorer: Arc<S>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let scorer = Arc::clone(&scorer);
        thread::spawn(move || {
            if let Err(e) = serve_connection(scorer.as_ref(), stream) {
                log::warn!("scorer connection closed with error: {e}");
            }
        });
    }
    Ok(())
}

/// Binds `addr` and serves in a background thread; returns the bound address.
pub fn spawn_tcp_server<S: Scorer + 'static>(scorer: Arc<S>, addr: impl ToSocketAddrs) -> io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    thread::spawn(move || serve_tcp(scorer, listener));
    Ok(local)
}
