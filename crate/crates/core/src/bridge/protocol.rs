//! Framed binary wire format for out-of-process backends.
//!
//! A frame is a 4-byte little-endian `u32` length (not counting itself),
//! followed by a UTF-8 JSON header object `{op, batch_shape, dtype, extra}`
//! and then `product(batch_shape)` little-endian `f32` values in row-major
//! order. An empty `batch_shape` means no payload. The header is a single
//! self-delimiting JSON object, so its length is `frame_len - 4 * count`.
//!
//! Requests: `handshake`, `predict`, `features`, `feature_saliency`
//! (`extra.feature_index`), `class_saliency` (`extra.class_id`), `set_head`
//! (payload `[n_classes, feature_dim + 1]`, bias in the last column) and
//! `shutdown`. Responses use op `ok` or `error` (`extra.message`); the
//! handshake response carries the handshake record in `extra`.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Grid, ImageTensor, CHANNELS};

use super::LinearHead;

pub const DTYPE_F32: &str = "f32";
pub const DEFAULT_MAX_FRAME_BYTES: u64 = 1 << 30;

pub const OP_HANDSHAKE: &str = "handshake";
pub const OP_PREDICT: &str = "predict";
pub const OP_FEATURES: &str = "features";
pub const OP_FEATURE_SALIENCY: &str = "feature_saliency";
pub const OP_CLASS_SALIENCY: &str = "class_saliency";
pub const OP_SET_HEAD: &str = "set_head";
pub const OP_SHUTDOWN: &str = "shutdown";
pub const OP_OK: &str = "ok";
pub const OP_ERROR: &str = "error";

fn default_dtype() -> String {
    DTYPE_F32.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub op: String,
    #[serde(default)]
    pub batch_shape: Vec<usize>,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    #[serde(default)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub header: Header,
    pub payload: Vec<f32>,
}

/// Number of payload elements implied by a batch shape.
pub fn element_count(batch_shape: &[usize]) -> Option<usize> {
    if batch_shape.is_empty() {
        return Some(0);
    }
    batch_shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl Frame {
    pub fn new(op: &str, batch_shape: Vec<usize>, payload: Vec<f32>, extra: Map<String, Value>) -> Result<Self> {
        let expected = element_count(&batch_shape)
            .ok_or_else(|| Error::Protocol("batch_shape overflows".into()))?;
        if expected != payload.len() {
            return Err(Error::Protocol(format!(
                "batch_shape {batch_shape:?} implies {expected} values, payload has {}",
                payload.len()
            )));
        }
        Ok(Self {
            header: Header {
                op: op.to_string(),
                batch_shape,
                dtype: default_dtype(),
                extra,
            },
            payload,
        })
    }

    /// A frame with no payload.
    pub fn control(op: &str, extra: Map<String, Value>) -> Self {
        Self::new(op, Vec::new(), Vec::new(), extra).expect("empty payload")
    }

    pub fn ok() -> Self {
        Self::control(OP_OK, Map::new())
    }

    pub fn error(message: impl Into<String>) -> Self {
        let mut extra = Map::new();
        extra.insert("message".into(), Value::String(message.into()));
        Self::control(OP_ERROR, extra)
    }

    pub fn op(&self) -> &str {
        &self.header.op
    }

    pub fn extra_usize(&self, key: &str) -> Result<usize> {
        self.header
            .extra
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Protocol(format!("`{}` frame lacks integer extra.{key}", self.header.op)))
    }

    /// Turns an `error` response into `Err`, leaving other frames untouched.
    pub fn into_result(self) -> Result<Frame> {
        if self.header.op == OP_ERROR {
            let msg = self
                .header
                .extra
                .get("message")
                .and_then(Value::as_str)
                .unwrap_or("unspecified backend error")
                .to_string();
            return Err(Error::Backend(msg));
        }
        Ok(self)
    }
}

/// Serialises a frame, length prefix included.
pub fn encode(frame: &Frame) -> Result<Vec<u8>> {
    let expected = element_count(&frame.header.batch_shape)
        .ok_or_else(|| Error::Protocol("batch_shape overflows".into()))?;
    if expected != frame.payload.len() {
        return Err(Error::Protocol(format!(
            "batch_shape {:?} implies {expected} values, payload has {}",
            frame.header.batch_shape,
            frame.payload.len()
        )));
    }
    let header = serde_json::to_vec(&frame.header)?;
    let body_len = header.len() + 4 * frame.payload.len();
    let len = u32::try_from(body_len).map_err(|_| Error::Protocol(format!("frame of {body_len} bytes too large")))?;
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&header);
    for v in &frame.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a frame body (everything after the length prefix).
pub fn decode(body: &[u8]) -> Result<Frame> {
    let mut stream = serde_json::Deserializer::from_slice(body).into_iter::<Header>();
    let header = match stream.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(Error::Protocol(format!("malformed header: {e}"))),
        None => return Err(Error::Protocol("empty frame".into())),
    };
    let header_len = stream.byte_offset();
    if header.dtype != DTYPE_F32 {
        return Err(Error::Protocol(format!("unsupported dtype `{}`", header.dtype)));
    }
    let count = element_count(&header.batch_shape)
        .ok_or_else(|| Error::Protocol("batch_shape overflows".into()))?;
    let rest = &body[header_len..];
    if Some(rest.len()) != count.checked_mul(4) {
        return Err(Error::Protocol(format!(
            "batch_shape {:?} needs {} payload bytes, frame has {}",
            header.batch_shape,
            count.saturating_mul(4),
            rest.len()
        )));
    }
    let payload = rest
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Frame { header, payload })
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    w.write_all(&encode(frame)?)?;
    w.flush()?;
    Ok(())
}

/// Outcome of reading one length-prefixed body off a stream.
#[derive(Debug)]
pub enum RawFrame {
    /// Clean end of stream before a length prefix.
    Eof,
    Body(Vec<u8>),
    /// Declared length exceeds the limit; the body has not been consumed.
    Oversized(u64),
}

pub fn read_raw(r: &mut impl Read, max_frame_bytes: u64) -> io::Result<RawFrame> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(RawFrame::Eof),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_le_bytes(len) as u64;
    if len > max_frame_bytes {
        return Ok(RawFrame::Oversized(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(RawFrame::Body(body))
}

/// Reads and decodes one frame; `None` on clean end of stream.
pub fn read_frame(r: &mut impl Read, max_frame_bytes: u64) -> Result<Option<Frame>> {
    match read_raw(r, max_frame_bytes)? {
        RawFrame::Eof => Ok(None),
        RawFrame::Body(body) => decode(&body).map(Some),
        RawFrame::Oversized(n) => Err(Error::Protocol(format!(
            "frame of {n} bytes exceeds limit of {max_frame_bytes}"
        ))),
    }
}

/// Packs same-shaped images as an `[N, H, W, 3]` payload.
pub fn images_to_payload<T: Scalar>(images: &[&ImageTensor<T>]) -> Result<(Vec<usize>, Vec<f32>)> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let shape = first.shape();
    let mut payload = Vec::with_capacity(images.len() * shape.pixels() * CHANNELS);
    for img in images {
        if img.shape() != shape {
            return Err(Error::shape(Some("image batch".into()), shape, img.shape()));
        }
        payload.extend(img.data().iter().map(|v| v.to_f32_lossy()));
    }
    Ok((vec![images.len(), shape.height, shape.width, CHANNELS], payload))
}

pub fn payload_to_images<T: Scalar>(frame: &Frame) -> Result<Vec<ImageTensor<T>>> {
    let s = &frame.header.batch_shape;
    if s.len() != 4 || s[3] != CHANNELS {
        return Err(Error::Protocol(format!("image batch must be [N, H, W, 3], got {s:?}")));
    }
    let per = s[1] * s[2] * CHANNELS;
    frame
        .payload
        .chunks_exact(per.max(1))
        .take(s[0])
        .map(|chunk| ImageTensor::new(s[1], s[2], chunk.iter().map(|v| T::lit(*v as f64)).collect()))
        .collect()
}

/// Packs equal-length rows as an `[N, D]` payload.
pub fn rows_to_payload<T: Scalar>(rows: &[Vec<T>]) -> Result<(Vec<usize>, Vec<f32>)> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Protocol("ragged rows".into()));
    }
    let payload = rows.iter().flatten().map(|v| v.to_f32_lossy()).collect();
    Ok((vec![rows.len(), d], payload))
}

pub fn payload_to_rows<T: Scalar>(frame: &Frame) -> Result<Vec<Vec<T>>> {
    let s = &frame.header.batch_shape;
    if s.len() != 2 {
        return Err(Error::Protocol(format!("expected [N, D] payload, got {s:?}")));
    }
    if s[1] == 0 {
        return Ok(vec![Vec::new(); s[0]]);
    }
    Ok(frame
        .payload
        .chunks_exact(s[1])
        .map(|r| r.iter().map(|v| T::lit(*v as f64)).collect())
        .collect())
}

/// Packs same-shaped saliency grids as an `[N, h, w]` payload.
pub fn grids_to_payload<T: Scalar>(grids: &[Grid<T>]) -> Result<(Vec<usize>, Vec<f32>)> {
    let first = grids
        .first()
        .ok_or_else(|| Error::Protocol("empty saliency batch".into()))?;
    let shape = first.shape();
    let mut payload = Vec::with_capacity(grids.len() * shape.pixels());
    for g in grids {
        if g.shape() != shape {
            return Err(Error::shape(Some("saliency batch".into()), shape, g.shape()));
        }
        payload.extend(g.data().iter().map(|v| v.to_f32_lossy()));
    }
    Ok((vec![grids.len(), shape.height, shape.width], payload))
}

pub fn payload_to_grids<T: Scalar>(frame: &Frame) -> Result<Vec<Grid<T>>> {
    let s = &frame.header.batch_shape;
    if s.len() != 3 || s[1] == 0 || s[2] == 0 {
        return Err(Error::Protocol(format!("expected [N, h, w] saliency payload, got {s:?}")));
    }
    frame
        .payload
        .chunks_exact(s[1] * s[2])
        .map(|c| Grid::new(s[1], s[2], c.iter().map(|v| T::lit(*v as f64)).collect()))
        .collect()
}

pub fn head_to_frame<T: Scalar>(head: &LinearHead<T>) -> Frame {
    let d = head.feature_dim;
    let mut payload = Vec::with_capacity(head.n_classes * (d + 1));
    for c in 0..head.n_classes {
        payload.extend(head.weights[c * d..(c + 1) * d].iter().map(|v| v.to_f32_lossy()));
        payload.push(head.bias[c].to_f32_lossy());
    }
    Frame::new(OP_SET_HEAD, vec![head.n_classes, d + 1], payload, Map::new()).expect("consistent head")
}

pub fn frame_to_head<T: Scalar>(frame: &Frame) -> Result<LinearHead<T>> {
    let s = &frame.header.batch_shape;
    if s.len() != 2 || s[1] == 0 {
        return Err(Error::Protocol(format!("set_head payload must be [C, D + 1], got {s:?}")));
    }
    let (c, d) = (s[0], s[1] - 1);
    let mut head = LinearHead::zeros(c, d);
    for (k, row) in frame.payload.chunks_exact(d + 1).enumerate() {
        for (j, v) in row[..d].iter().enumerate() {
            head.weights[k * d + j] = T::lit(*v as f64);
        }
        head.bias[k] = T::lit(row[d] as f64);
    }
    Ok(head)
}
