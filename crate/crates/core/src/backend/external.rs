use std::io::{BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use super::protocol::{read_frame, write_frame, Frame, Message, ReadOutcome};
use super::{BackendDescriptor, BackendError, BackendKind, ForwardOutput, ModelBackend};
use crate::features::FeatureStack;
use crate::grid::{Grid, Image};
use crate::tensor_store::TensorFile;

struct Connection {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: Box<dyn Write + Send>,
}

impl Connection {
    fn call(&mut self, request: &Frame) -> Result<Frame, BackendError> {
        write_frame(&mut self.writer, request)?;
        match read_frame(&mut self.reader)? {
            ReadOutcome::Frame(Frame {
                message: Message::Error { code, message },
                ..
            }) => Err(BackendError::Remote { code, message }),
            ReadOutcome::Frame(f) => Ok(f),
            ReadOutcome::Eof => Err(BackendError::Transport("backend closed the stream".into())),
            ReadOutcome::Malformed(why) => Err(BackendError::Protocol(why)),
        }
    }
}

/// Forward-only client for a backend speaking the frame protocol over a
/// byte stream. Calls are serialized through one connection.
pub struct ExternalBackend {
    conn: Mutex<Connection>,
    child: Option<Mutex<Child>>,
    descriptor: BackendDescriptor,
}

impl ExternalBackend {
    /// Performs the `hello` handshake over an existing stream pair.
    pub fn connect(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
    ) -> Result<Self, BackendError> {
        let mut conn = Connection {
            reader: BufReader::new(reader),
            writer,
        };
        let reply = conn.call(&Frame::new(Message::Hello { descriptor: None }))?;
        let mut descriptor = match reply.message {
            Message::Hello {
                descriptor: Some(d),
            } => d,
            other => return Err(BackendError::Protocol(format!("expected hello, got {other:?}"))),
        };
        if descriptor.layer_names.is_empty() || descriptor.layer_names.len() != descriptor.feature_shapes.len() {
            return Err(BackendError::Protocol("descriptor layers and shapes disagree".into()));
        }
        descriptor.kind = BackendKind::External;
        Ok(Self {
            conn: Mutex::new(conn),
            child: None,
            descriptor,
        })
    }

    pub fn connect_tcp(addr: &str) -> Result<Self, BackendError> {
        let stream = TcpStream::connect(addr).map_err(|e| BackendError::Transport(e.to_string()))?;
        let reader = stream.try_clone().map_err(|e| BackendError::Transport(e.to_string()))?;
        Self::connect(Box::new(reader), Box::new(stream))
    }

    /// Spawns `command` and talks to it over its stdin/stdout.
    pub fn spawn(command: &[String]) -> Result<Self, BackendError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::Transport("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Transport(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let mut backend = Self::connect(Box::new(stdout), Box::new(stdin))?;
        backend.child = Some(Mutex::new(child));
        Ok(backend)
    }

    fn call(&self, request: &Frame) -> Result<Frame, BackendError> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| BackendError::Transport("connection poisoned".into()))?;
        conn.call(request)
    }

    fn check_logits(&self, t: &TensorFile) -> Result<Vec<f32>, BackendError> {
        let v = t
            .as_f32()
            .ok_or_else(|| BackendError::Protocol("logits must be f32".into()))?;
        if t.shape() != [self.descriptor.num_classes] {
            return Err(crate::grid::ShapeError::new(&[self.descriptor.num_classes], t.shape()).into());
        }
        Ok(v.to_vec())
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            if let Ok(mut c) = child.lock() {
                let _ = c.kill();
                let _ = c.wait();
            }
        }
    }
}

impl ModelBackend for ExternalBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn forward(&self, image: &Image, layer: &str) -> Result<ForwardOutput, BackendError> {
        self.descriptor.check_image(image)?;
        let expected = self.descriptor.feature_shape(layer)?;
        let reply = self.call(
            &Frame::new(Message::Forward {
                layer: Some(layer.to_string()),
            })
            .with_tensor("image", image.to_f32_tensor()),
        )?;
        let features = FeatureStack::from_tensor(reply.tensor("features")?)?;
        if features.shape() != expected {
            return Err(crate::grid::ShapeError::new(&expected, &features.shape()).into());
        }
        let logits = self.check_logits(reply.tensor("logits")?)?;
        Ok(ForwardOutput { features, logits })
    }

    fn masked_forward(&self, image: &Image, mask: &Grid) -> Result<Vec<f32>, BackendError> {
        self.descriptor.check_image(image)?;
        if mask.dims() != (image.height(), image.width()) {
            return Err(crate::grid::ShapeError::new(
                &[image.height(), image.width()],
                &[mask.height(), mask.width()],
            )
            .into());
        }
        let reply = self.call(
            &Frame::new(Message::MaskedForward)
                .with_tensor("image", image.to_f32_tensor())
                .with_tensor("mask", mask.to_tensor()),
        )?;
        self.check_logits(reply.tensor("logits")?)
    }
}
