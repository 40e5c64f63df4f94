//! Length-prefixed frames: `len u32 LE | tag u8 | payload`, where `len` is
//! the payload length in bytes.

use std::io::{self, Read, Write};

pub const DEFAULT_MAX_FRAME: usize = 256 << 20;
pub const FRAME_HEADER_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Bitstream = 1,
    SegMap = 2,
    Error = 3,
}

impl Tag {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Tag::Bitstream),
            2 => Some(Tag::SegMap),
            3 => Some(Tag::Error),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub tag: Tag,
    pub payload: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("frame truncated: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("frame of {len} bytes exceeds the {max}-byte limit")]
    TooLarge { len: usize, max: usize },
    #[error("unknown frame tag {0}")]
    UnknownTag(u8),
    #[error("connection closed")]
    Closed,
}

impl FrameError {
    /// Whether the stream is still aligned on a frame boundary afterwards.
    pub fn is_recoverable(&self) -> bool {
        matches!(self, FrameError::UnknownTag(_))
    }
}

pub fn frame(tag: Tag, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > u32::MAX as usize {
        return Err(FrameError::TooLarge {
            len: payload.len(),
            max: u32::MAX as usize,
        });
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.push(tag as u8);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Parses one frame from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn unframe(bytes: &[u8], max: usize) -> Result<(Frame, usize), FrameError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(FrameError::Truncated {
            needed: FRAME_HEADER_LEN,
            have: bytes.len(),
        });
    }
    let len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > max {
        return Err(FrameError::TooLarge { len, max });
    }
    let end = FRAME_HEADER_LEN + len;
    if bytes.len() < end {
        return Err(FrameError::Truncated {
            needed: end,
            have: bytes.len(),
        });
    }
    let tag = Tag::from_u8(bytes[4]).ok_or(FrameError::UnknownTag(bytes[4]))?;
    Ok((
        Frame {
            tag,
            payload: bytes[FRAME_HEADER_LEN..end].to_vec(),
        },
        end,
    ))
}

pub fn write_frame<W: Write>(w: &mut W, tag: Tag, payload: &[u8]) -> Result<(), FrameError> {
    w.write_all(&frame(tag, payload)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. An unknown tag still consumes the whole frame, so the
/// stream stays aligned; an oversized length does not.
pub fn read_frame<R: Read>(r: &mut R, max: usize) -> Result<Frame, FrameError> {
    let mut head = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < head.len() {
        match r.read(&mut head[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Closed),
            Ok(0) => {
                return Err(FrameError::Truncated {
                    needed: FRAME_HEADER_LEN,
                    have: got,
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes([head[0], head[1], head[2], head[3]]) as usize;
    if len > max {
        return Err(FrameError::TooLarge { len, max });
    }
    let mut payload = Vec::new();
    r.take(len as u64).read_to_end(&mut payload)?;
    if payload.len() != len {
        return Err(FrameError::Truncated {
            needed: FRAME_HEADER_LEN + len,
            have: FRAME_HEADER_LEN + payload.len(),
        });
    }
    let tag = Tag::from_u8(head[4]).ok_or(FrameError::UnknownTag(head[4]))?;
    Ok(Frame { tag, payload })
}
