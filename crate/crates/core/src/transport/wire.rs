//! Binary communique encoding and length-prefixed framing.
//!
//! Frame: 4-byte big-endian length, then the encoded communique:
//! `src u64 | dst u64 | ida flag u8 [len u16, utf8] | channel tag u8 [len u16, utf8]
//! | seq u64 | body len u32, bytes`, all integers big-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{Channel, Communique};
use crate::node::NodeId;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("truncated communique")]
    Truncated,
    #[error("unknown tag {0}")]
    BadTag(u8),
    #[error("string is not utf-8")]
    BadUtf8,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("frame of {len} bytes exceeds {max}")]
    TooLong { len: usize, max: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_communique(msg: &Communique) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + msg.payload.len());
    out.extend_from_slice(&msg.src.raw().to_be_bytes());
    out.extend_from_slice(&msg.dst.raw().to_be_bytes());
    match &msg.ida {
        None => out.push(0),
        Some(ida) => {
            out.push(1);
            put_str(&mut out, ida);
        }
    }
    match &msg.channel {
        Channel::Comms => out.push(0),
        Channel::Port(t) => {
            out.push(1);
            put_str(&mut out, t);
        }
    }
    out.extend_from_slice(&msg.seq.to_be_bytes());
    out.extend_from_slice(&(msg.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&msg.payload);
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("names fit in u16");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.0.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, WireError> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| WireError::BadUtf8)
    }
}

pub fn decode_communique(bytes: &[u8]) -> Result<Communique, WireError> {
    let mut c = Cursor(bytes);
    let src = NodeId(c.u64()?);
    let dst = NodeId(c.u64()?);
    let ida = match c.u8()? {
        0 => None,
        1 => Some(c.string()?),
        t => return Err(WireError::BadTag(t)),
    };
    let channel = match c.u8()? {
        0 => Channel::Comms,
        1 => Channel::Port(c.string()?),
        t => return Err(WireError::BadTag(t)),
    };
    let seq = c.u64()?;
    let len = c.u32()? as usize;
    let payload = c.take(len)?.to_vec();
    if !c.0.is_empty() {
        return Err(WireError::Trailing(c.0.len()));
    }
    Ok(Communique {
        src,
        dst,
        ida,
        channel,
        seq,
        payload,
    })
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too long"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read, max: usize) -> Result<Option<Vec<u8>>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > max {
        return Err(WireError::TooLong { len, max });
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}
