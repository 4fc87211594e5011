//! Wire format for external backends.
//!
//! Each frame is one line of JSON followed by the raw bytes of zero or
//! more FCT tensors. The JSON object carries a `type` tag and a `tensors`
//! array of `{"name", "bytes"}` entries giving the payload order and
//! lengths:
//!
//! ```text
//! {"type":"forward","layer":"block2","tensors":[{"name":"image","bytes":3080}]}\n
//! <3080 bytes of FCT>
//! ```
//!
//! | request                        | response tensors        |
//! |--------------------------------|-------------------------|
//! | `hello`                        | none, `descriptor` set  |
//! | `forward` + `image`            | `features`, `logits`    |
//! | `masked_forward` + `image, mask` | `logits`              |
//!
//! Any failure is answered with `{"type":"error","code","message"}`.
//! Images are `[H, W, C]` tensors, u8 (scaled by 1/255) or f32; masks are
//! `[H, W]` f32; features `[K, H, W]` f32; logits `[C]` f32.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, BackendError, ModelBackend};
use crate::grid::{Grid, Image};
use crate::tensor_store::TensorFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        descriptor: Option<BackendDescriptor>,
    },
    Forward {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        layer: Option<String>,
    },
    MaskedForward,
    Error {
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireHeader {
    #[serde(flatten)]
    message: Message,
    #[serde(default)]
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub message: Message,
    pub tensors: Vec<(String, TensorFile)>,
}

impl Frame {
    pub fn new(message: Message) -> Self {
        Self {
            message,
            tensors: Vec::new(),
        }
    }

    pub fn with_tensor(mut self, name: &str, tensor: TensorFile) -> Self {
        self.tensors.push((name.to_string(), tensor));
        self
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Self::new(Message::Error {
            code: code.to_string(),
            message: message.into(),
        })
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorFile, BackendError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| BackendError::Protocol(format!("missing tensor {name:?}")))
    }
}

fn transport(e: std::io::Error) -> BackendError {
    BackendError::Transport(e.to_string())
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), BackendError> {
    let encoded: Vec<(String, Vec<u8>)> = frame
        .tensors
        .iter()
        .map(|(n, t)| (n.clone(), t.encode()))
        .collect();
    let header = WireHeader {
        message: frame.message.clone(),
        tensors: encoded
            .iter()
            .map(|(n, b)| TensorHeader {
                name: n.clone(),
                bytes: b.len(),
            })
            .collect(),
    };
    let line = serde_json::to_string(&header).map_err(|e| BackendError::Protocol(e.to_string()))?;
    w.write_all(line.as_bytes()).map_err(transport)?;
    w.write_all(b"\n").map_err(transport)?;
    for (_, bytes) in &encoded {
        w.write_all(bytes).map_err(transport)?;
    }
    w.flush().map_err(transport)
}

/// Outcome of reading one frame.
#[derive(Debug)]
pub enum ReadOutcome {
    Frame(Frame),
    /// Clean end of stream before a new frame started.
    Eof,
    /// The control line was not a valid message; its payloads (if any)
    /// could not be located and the line was skipped.
    Malformed(String),
}

pub fn read_frame(r: &mut impl BufRead) -> Result<ReadOutcome, BackendError> {
    let mut line = String::new();
    let n = r.read_line(&mut line).map_err(transport)?;
    if n == 0 {
        return Ok(ReadOutcome::Eof);
    }
    let header: WireHeader = match serde_json::from_str(line.trim_end()) {
        Ok(h) => h,
        Err(e) => return Ok(ReadOutcome::Malformed(e.to_string())),
    };
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for th in header.tensors {
        let mut buf = vec![0u8; th.bytes];
        r.read_exact(&mut buf).map_err(transport)?;
        tensors.push((th.name, TensorFile::decode(&buf)?));
    }
    Ok(ReadOutcome::Frame(Frame {
        message: header.message,
        tensors,
    }))
}

fn error_code(e: &BackendError) -> &'static str {
    match e {
        BackendError::Shape(_) => "shape_mismatch",
        BackendError::UnknownLayer(_) => "unknown_layer",
        BackendError::Unsupported(_) => "unsupported",
        BackendError::Store(_) => "bad_tensor",
        BackendError::Protocol(_) => "bad_request",
        _ => "internal",
    }
}

fn handle(backend: &dyn ModelBackend, frame: &Frame) -> Result<Frame, BackendError> {
    match &frame.message {
        Message::Hello { .. } => Ok(Frame::new(Message::Hello {
            descriptor: Some(backend.descriptor().clone()),
        })),
        Message::Forward { layer } => {
            let image = Image::from_tensor(frame.tensor("image")?)?;
            let layer = layer
                .clone()
                .unwrap_or_else(|| backend.descriptor().final_layer().to_string());
            let out = backend.forward(&image, &layer)?;
            let logits = TensorFile::from_f32(vec![out.logits.len()], out.logits)?;
            Ok(Frame::new(Message::Forward { layer: Some(layer) })
                .with_tensor("features", out.features.to_tensor())
                .with_tensor("logits", logits))
        }
        Message::MaskedForward => {
            let image = Image::from_tensor(frame.tensor("image")?)?;
            let mask = Grid::from_tensor(frame.tensor("mask")?)?;
            let logits = backend.masked_forward(&image, &mask)?;
            Ok(Frame::new(Message::MaskedForward)
                .with_tensor("logits", TensorFile::from_f32(vec![logits.len()], logits)?))
        }
        Message::Error { .. } => Err(BackendError::Protocol("unexpected error message from client".into())),
    }
}

/// Serves one connection until the peer closes it. Requests are answered
/// strictly in order; every failure becomes an `error` frame.
pub fn serve_connection(
    backend: &dyn ModelBackend,
    reader: &mut impl BufRead,
    writer: &mut impl Write,
) -> Result<(), BackendError> {
    loop {
        let reply = match read_frame(reader) {
            Ok(ReadOutcome::Eof) => return Ok(()),
            Ok(ReadOutcome::Malformed(why)) => Frame::error("malformed_message", why),
            Ok(ReadOutcome::Frame(frame)) => {
                handle(backend, &frame).unwrap_or_else(|e| Frame::error(error_code(&e), e.to_string()))
            }
            Err(BackendError::Transport(e)) => return Err(BackendError::Transport(e)),
            Err(e) => Frame::error(error_code(&e), e.to_string()),
        };
        write_frame(writer, &reply)?;
    }
}
