//! Out-of-process backends over the framed protocol, plus the matching server
//! loop used to expose any in-process [`Backend`].

use std::io::{BufReader, BufWriter, Read, Write};
use std::marker::PhantomData;
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde_json::{Map, Value};

use super::protocol::{self, Frame, RawFrame, DEFAULT_MAX_FRAME_BYTES};
use super::{Backend, Handshake, LinearHead, DEFAULT_TIMEOUT_SECS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Grid, ImageTensor};

/// Client side of the wire protocol. Requests are strictly sequential; a
/// timeout or broken stream poisons the connection.
pub struct RemoteBackend<T> {
    writer: Box<dyn Write + Send>,
    responses: Receiver<Result<Option<Frame>>>,
    timeout: Duration,
    info: Handshake,
    child: Option<Child>,
    poisoned: Option<String>,
    _scalar: PhantomData<fn() -> T>,
}

impl<T> std::fmt::Debug for RemoteBackend<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("backend", &self.info.descriptor.name)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl<T: Scalar> RemoteBackend<T> {
    /// Spawns `argv` and talks to it over its stdin/stdout.
    pub fn spawn(argv: &[String], timeout: Option<Duration>) -> Result<Self> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut backend = Self::start(Box::new(stdout), Box::new(BufWriter::new(stdin)), timeout);
        backend.child = Some(child);
        backend.finish_handshake()
    }

    /// Connects to a backend listening on a TCP address.
    pub fn connect_tcp(addr: &str, timeout: Option<Duration>) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Backend(format!("cannot connect to {addr}: {e}")))?;
        let reader = stream.try_clone()?;
        Self::from_streams(reader, stream, timeout)
    }

    /// Uses an already-open duplex byte stream.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Option<Duration>,
    ) -> Result<Self> {
        Self::start(Box::new(reader), Box::new(BufWriter::new(writer)), timeout).finish_handshake()
    }

    fn start(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        timeout: Option<Duration>,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let got = protocol::read_frame(&mut reader, DEFAULT_MAX_FRAME_BYTES);
                let stop = !matches!(got, Ok(Some(_)));
                if tx.send(got).is_err() || stop {
                    break;
                }
            }
        });
        let placeholder = Handshake {
            descriptor: super::BackendDescriptor {
                name: String::new(),
                family: super::Family::Reference,
                parameter_count: 0,
                input_size: 0,
                metadata: Default::default(),
            },
            capabilities: Default::default(),
            n_classes: 0,
            feature_dim: 0,
            concurrent: false,
        };
        Self {
            writer,
            responses: rx,
            timeout: timeout.unwrap_or(Duration::from_secs(DEFAULT_TIMEOUT_SECS)),
            info: placeholder,
            child: None,
            poisoned: None,
            _scalar: PhantomData,
        }
    }

    fn finish_handshake(mut self) -> Result<Self> {
        let resp = self.call(&Frame::control(protocol::OP_HANDSHAKE, Map::new()))?;
        let info: Handshake = serde_json::from_value(Value::Object(resp.header.extra))
            .map_err(|e| Error::Protocol(format!("bad handshake record: {e}")))?;
        info.validate()?;
        self.info = info;
        Ok(self)
    }

    fn call(&mut self, request: &Frame) -> Result<Frame> {
        if let Some(why) = &self.poisoned {
            return Err(Error::Backend(format!("connection unusable: {why}")));
        }
        if let Err(e) = protocol::write_frame(&mut self.writer, request) {
            self.poisoned = Some(e.to_string());
            return Err(e);
        }
        match self.responses.recv_timeout(self.timeout) {
            Ok(Ok(Some(frame))) => frame.into_result(),
            Ok(Ok(None)) => {
                self.poisoned = Some("backend closed the stream".into());
                Err(Error::Backend("backend closed the stream".into()))
            }
            Ok(Err(e)) => {
                self.poisoned = Some(e.to_string());
                Err(e)
            }
            Err(RecvTimeoutError::Timeout) => {
                self.poisoned = Some("timed out".into());
                Err(Error::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.poisoned = Some("reader stopped".into());
                Err(Error::Backend("backend reader stopped".into()))
            }
        }
    }

    fn image_call(&mut self, op: &str, images: &[&ImageTensor<T>], extra: Map<String, Value>) -> Result<Frame> {
        let (shape, payload) = protocol::images_to_payload(images)?;
        let frame = Frame::new(op, shape, payload, extra)?;
        self.call(&frame)
    }

    fn rows(&mut self, op: &str, images: &[&ImageTensor<T>]) -> Result<Vec<Vec<T>>> {
        let resp = self.image_call(op, images, Map::new())?;
        protocol::payload_to_rows(&resp)
    }

    fn grids(&mut self, op: &str, images: &[&ImageTensor<T>], key: &str, index: usize) -> Result<Vec<Grid<T>>> {
        let mut extra = Map::new();
        extra.insert(key.into(), Value::from(index as u64));
        let resp = self.image_call(op, images, extra)?;
        protocol::payload_to_grids(&resp)
    }
}

impl<T> Drop for RemoteBackend<T> {
    fn drop(&mut self) {
        if self.poisoned.is_none() {
            let _ = protocol::write_frame(&mut self.writer, &Frame::control(protocol::OP_SHUTDOWN, Map::new()));
            let _ = self.responses.recv_timeout(Duration::from_secs(2));
        }
        if let Some(child) = &mut self.child {
            if !matches!(child.try_wait(), Ok(Some(_))) {
                let _ = child.kill();
            }
            let _ = child.wait();
        }
    }
}

impl<T: Scalar> Backend<T> for RemoteBackend<T> {
    fn handshake(&self) -> &Handshake {
        &self.info
    }

    fn predict(&mut self, images: &[&ImageTensor<T>]) -> Result<Vec<Vec<T>>> {
        self.rows(protocol::OP_PREDICT, images)
    }

    fn features(&mut self, images: &[&ImageTensor<T>]) -> Result<Vec<Vec<T>>> {
        self.rows(protocol::OP_FEATURES, images)
    }

    fn feature_saliency(&mut self, images: &[&ImageTensor<T>], feature: usize) -> Result<Vec<Grid<T>>> {
        self.grids(protocol::OP_FEATURE_SALIENCY, images, "feature_index", feature)
    }

    fn class_saliency(&mut self, images: &[&ImageTensor<T>], class: usize) -> Result<Vec<Grid<T>>> {
        self.grids(protocol::OP_CLASS_SALIENCY, images, "class_id", class)
    }

    fn set_head(&mut self, head: &LinearHead<T>) -> Result<()> {
        self.call(&protocol::head_to_frame(head)).map(|_| ())
    }
}

/// Answers framed requests from `reader` with `backend` until `shutdown` or
/// end of stream. Malformed or oversized frames get an `error` response and
/// the loop keeps going; only I/O failures end it early.
pub fn serve<T: Scalar>(
    backend: &mut dyn Backend<T>,
    reader: impl Read,
    writer: impl Write,
    max_frame_bytes: u64,
) -> Result<()> {
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    loop {
        let request = match protocol::read_raw(&mut reader, max_frame_bytes)? {
            RawFrame::Eof => return Ok(()),
            RawFrame::Oversized(n) => {
                std::io::copy(&mut (&mut reader).take(n), &mut std::io::sink())?;
                protocol::write_frame(
                    &mut writer,
                    &Frame::error(format!("frame of {n} bytes exceeds limit of {max_frame_bytes}")),
                )?;
                continue;
            }
            RawFrame::Body(body) => protocol::decode(&body),
        };
        let (response, stop) = match request {
            Err(e) => (Frame::error(e.to_string()), false),
            Ok(frame) if frame.op() == protocol::OP_SHUTDOWN => (Frame::ok(), true),
            Ok(frame) => (answer(backend, &frame).unwrap_or_else(|e| Frame::error(e.to_string())), false),
        };
        protocol::write_frame(&mut writer, &response)?;
        if stop {
            return Ok(());
        }
    }
}

fn answer<T: Scalar>(backend: &mut dyn Backend<T>, req: &Frame) -> Result<Frame> {
    let info = backend.handshake().clone();
    let images = || -> Result<Vec<ImageTensor<T>>> {
        let imgs = protocol::payload_to_images::<T>(req)?;
        let side = info.descriptor.input_size;
        if let Some(bad) = imgs.iter().find(|i| i.height() != side || i.width() != side) {
            return Err(Error::shape(Some("request image".into()), format!("{side}x{side}"), bad.shape()));
        }
        if imgs.is_empty() {
            return Err(Error::InvalidArgument("empty image batch".into()));
        }
        Ok(imgs)
    };
    let rows = |rows: Vec<Vec<T>>| -> Result<Frame> {
        let (shape, payload) = protocol::rows_to_payload(&rows)?;
        Frame::new(protocol::OP_OK, shape, payload, Map::new())
    };
    let grids = |grids: Vec<Grid<T>>| -> Result<Frame> {
        let (shape, payload) = protocol::grids_to_payload(&grids)?;
        Frame::new(protocol::OP_OK, shape, payload, Map::new())
    };
    match req.op() {
        protocol::OP_HANDSHAKE => match serde_json::to_value(&info)? {
            Value::Object(extra) => Ok(Frame::control(protocol::OP_OK, extra)),
            _ => unreachable!("handshake serialises to an object"),
        },
        protocol::OP_PREDICT => {
            let imgs = images()?;
            rows(backend.predict(&imgs.iter().collect::<Vec<_>>())?)
        }
        protocol::OP_FEATURES => {
            let imgs = images()?;
            rows(backend.features(&imgs.iter().collect::<Vec<_>>())?)
        }
        protocol::OP_FEATURE_SALIENCY => {
            let j = req.extra_usize("feature_index")?;
            let imgs = images()?;
            grids(backend.feature_saliency(&imgs.iter().collect::<Vec<_>>(), j)?)
        }
        protocol::OP_CLASS_SALIENCY => {
            let c = req.extra_usize("class_id")?;
            let imgs = images()?;
            grids(backend.class_saliency(&imgs.iter().collect::<Vec<_>>(), c)?)
        }
        protocol::OP_SET_HEAD => {
            let head = protocol::frame_to_head::<T>(req)?;
            if head.n_classes != info.n_classes || head.feature_dim != info.feature_dim {
                return Err(Error::shape(
                    Some("linear head".into()),
                    format!("{}x{}", info.n_classes, info.feature_dim),
                    format!("{}x{}", head.n_classes, head.feature_dim),
                ));
            }
            backend.set_head(&head)?;
            Ok(Frame::ok())
        }
        other => Err(Error::Protocol(format!("unknown op `{other}`"))),
    }
}
