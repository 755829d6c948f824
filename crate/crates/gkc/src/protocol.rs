//! Framed binary protocol, little-endian throughout.
//!
//! ```text
//! frame    = "GKC1" | type u8 | payload_len u32 | payload
//! type 1   lookup request   count u32 | count × (u u64 | i u64 | c u32 | v u32)
//! type 2   lookup response  count u32 | dim u32 | count × (status u8 | found u8 | dim × f32)
//! type 3   publish notice   version u32
//! type 4   error            code u8 | len u32 | len × utf-8
//! ```

use std::io::{self, Read, Write};

use crate::error::{GkcError, Result};

pub const MAGIC: &[u8; 4] = b"GKC1";
pub const HEADER_LEN: usize = 9;
pub const MAX_PAYLOAD: usize = 16 << 20;

pub const FRAME_LOOKUP_REQUEST: u8 = 1;
pub const FRAME_LOOKUP_RESPONSE: u8 = 2;
pub const FRAME_PUBLISH_NOTICE: u8 = 3;
pub const FRAME_ERROR: u8 = 4;

/// Malformed or oversized frame; the connection is closed after it.
pub const ERROR_PROTOCOL: u8 = 1;
/// A publish notice that could not be honoured.
pub const ERROR_REJECTED: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Quadruple {
    pub user: u64,
    pub item: u64,
    pub category: u32,
    pub version: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryStatus {
    Ok = 0,
    VersionGone = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LookupEntry {
    pub status: EntryStatus,
    /// Bit 0 user, bit 1 item, bit 2 user-category.
    pub found: u8,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LookupResponse {
    pub dim: u32,
    pub entries: Vec<LookupEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    LookupRequest(Vec<Quadruple>),
    LookupResponse(LookupResponse),
    PublishNotice { version: u32 },
    Error { code: u8, message: String },
}

impl Frame {
    pub fn frame_type(&self) -> u8 {
        match self {
            Frame::LookupRequest(_) => FRAME_LOOKUP_REQUEST,
            Frame::LookupResponse(_) => FRAME_LOOKUP_RESPONSE,
            Frame::PublishNotice { .. } => FRAME_PUBLISH_NOTICE,
            Frame::Error { .. } => FRAME_ERROR,
        }
    }
}

fn protocol(msg: impl Into<String>) -> GkcError {
    GkcError::Protocol(msg.into())
}

fn encode_payload(frame: &Frame, out: &mut Vec<u8>) {
    match frame {
        Frame::LookupRequest(qs) => {
            out.reserve(4 + 24 * qs.len());
            out.extend_from_slice(&(qs.len() as u32).to_le_bytes());
            for q in qs {
                out.extend_from_slice(&q.user.to_le_bytes());
                out.extend_from_slice(&q.item.to_le_bytes());
                out.extend_from_slice(&q.category.to_le_bytes());
                out.extend_from_slice(&q.version.to_le_bytes());
            }
        }
        Frame::LookupResponse(r) => {
            out.reserve(8 + r.entries.len() * (2 + 4 * r.dim as usize));
            out.extend_from_slice(&(r.entries.len() as u32).to_le_bytes());
            out.extend_from_slice(&r.dim.to_le_bytes());
            for e in &r.entries {
                debug_assert_eq!(e.values.len(), r.dim as usize);
                out.push(e.status as u8);
                out.push(e.found);
                for v in &e.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Frame::PublishNotice { version } => out.extend_from_slice(&version.to_le_bytes()),
        Frame::Error { code, message } => {
            out.push(*code);
            out.extend_from_slice(&(message.len() as u32).to_le_bytes());
            out.extend_from_slice(message.as_bytes());
        }
    }
}

/// Encode a complete frame. Size limits are enforced on write and decode.
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.push(frame.frame_type());
    out.extend_from_slice(&[0; 4]);
    encode_payload(frame, &mut out);
    let len = (out.len() - HEADER_LEN) as u32;
    out[5..9].copy_from_slice(&len.to_le_bytes());
    out
}

/// Validate a header; returns `(frame_type, payload_len)`.
pub fn decode_header(h: &[u8; HEADER_LEN]) -> Result<(u8, usize)> {
    if &h[..4] != MAGIC {
        return Err(protocol(format!("bad magic {:02x?}", &h[..4])));
    }
    let ty = h[4];
    if !(FRAME_LOOKUP_REQUEST..=FRAME_ERROR).contains(&ty) {
        return Err(protocol(format!("unknown frame type {ty}")));
    }
    let len = u32::from_le_bytes(h[5..9].try_into().unwrap()) as u64;
    if len > MAX_PAYLOAD as u64 {
        return Err(GkcError::FrameTooLarge(len));
    }
    Ok((ty, len as usize))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| protocol("truncated payload"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Decode the payload of a frame of type `ty`; the payload must be consumed
/// exactly.
pub fn decode_payload(ty: u8, payload: &[u8]) -> Result<Frame> {
    let mut c = Cursor { buf: payload, pos: 0 };
    let frame = match ty {
        FRAME_LOOKUP_REQUEST => {
            let n = c.u32()? as usize;
            if n.checked_mul(24) != Some(c.remaining()) {
                return Err(protocol(format!("lookup request of {n} entries has {} payload bytes", payload.len())));
            }
            let mut qs = Vec::with_capacity(n);
            for _ in 0..n {
                qs.push(Quadruple {
                    user: c.u64()?,
                    item: c.u64()?,
                    category: c.u32()?,
                    version: c.u32()?,
                });
            }
            Frame::LookupRequest(qs)
        }
        FRAME_LOOKUP_RESPONSE => {
            let n = c.u32()? as usize;
            let dim = c.u32()?;
            let per = 4 * dim as u64 + 2;
            if n as u64 * per != c.remaining() as u64 {
                return Err(protocol(format!("lookup response of {n}×{dim} has {} payload bytes", payload.len())));
            }
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let status = match c.u8()? {
                    0 => EntryStatus::Ok,
                    1 => EntryStatus::VersionGone,
                    s => return Err(protocol(format!("unknown entry status {s}"))),
                };
                let found = c.u8()?;
                if found > 7 {
                    return Err(protocol(format!("bad found mask {found}")));
                }
                let values = c
                    .take(4 * dim as usize)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                entries.push(LookupEntry { status, found, values });
            }
            Frame::LookupResponse(LookupResponse { dim, entries })
        }
        FRAME_PUBLISH_NOTICE => Frame::PublishNotice { version: c.u32()? },
        FRAME_ERROR => {
            let code = c.u8()?;
            let len = c.u32()? as usize;
            let msg = c.take(len)?;
            let message = String::from_utf8(msg.to_vec()).map_err(|_| protocol("error message is not utf-8"))?;
            Frame::Error { code, message }
        }
        t => return Err(protocol(format!("unknown frame type {t}"))),
    };
    if c.remaining() != 0 {
        return Err(protocol(format!("{} trailing payload bytes", c.remaining())));
    }
    Ok(frame)
}

/// Decode exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    let h: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| protocol("truncated header"))?;
    let (ty, len) = decode_header(h)?;
    if bytes.len() - HEADER_LEN != len {
        return Err(protocol(format!("payload length {len} but {} bytes follow", bytes.len() - HEADER_LEN)));
    }
    decode_payload(ty, &bytes[HEADER_LEN..])
}

/// Read one frame; `Ok(None)` on a clean end of stream before a header.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>> {
    let mut h = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut h[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(protocol("stream closed inside a frame header")),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (ty, len) = decode_header(&h)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => protocol("stream closed inside a frame payload"),
        _ => e.into(),
    })?;
    decode_payload(ty, &payload).map(Some)
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    let bytes = encode_frame(frame);
    let len = (bytes.len() - HEADER_LEN) as u64;
    if len > MAX_PAYLOAD as u64 {
        return Err(GkcError::FrameTooLarge(len));
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let b = encode_frame(&Frame::PublishNotice { version: 7 });
        assert_eq!(b, [b'G', b'K', b'C', b'1', 3, 4, 0, 0, 0, 7, 0, 0, 0]);
    }

    #[test]
    fn rejects_oversize_before_reading_payload() {
        let mut h = encode_frame(&Frame::LookupRequest(vec![]));
        h[5..9].copy_from_slice(&((MAX_PAYLOAD as u32) + 1).to_le_bytes());
        let err = read_frame(&mut &h[..]).unwrap_err();
        assert!(matches!(err, GkcError::FrameTooLarge(_)));
    }

    #[test]
    fn rejects_trailing_and_bad_status() {
        let mut b = encode_frame(&Frame::PublishNotice { version: 1 });
        b.push(0);
        b[5] = 5;
        assert!(decode_frame(&b).is_err());
        let mut r = encode_frame(&Frame::LookupResponse(LookupResponse {
            dim: 0,
            entries: vec![LookupEntry {
                status: EntryStatus::Ok,
                found: 0,
                values: vec![],
            }],
        }));
        r[HEADER_LEN + 8] = 2;
        assert!(decode_frame(&r).is_err());
    }

    #[test]
    fn clean_eof() {
        assert!(read_frame(&mut &[][..]).unwrap().is_none());
        assert!(read_frame(&mut &b"GKC"[..]).is_err());
    }
}
