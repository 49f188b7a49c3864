//! Bit-exact little-endian feature frame.
//!
//! ```text
//! offset size field
//!      0    4 magic "SPAD"
//!      4    1 version (1)
//!      5    1 flags (bit0: noise applied)
//!      6    8 frame_id        u64
//!     14    8 timestamp_ms    u64
//!     22    4 dim             u32
//!     26    4 sigma           f32
//!     30    4 scale           f32
//!     34    4 offset          f32
//!     38  dim payload         u8[dim]
//! 38+dim    4 crc32 of bytes [0, 38+dim)
//! ```

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SPAD";
pub const VERSION: u8 = 1;
pub const FLAG_NOISE: u8 = 0b0000_0001;
pub(super) const HEADER_LEN: usize = 38;
/// Bytes in a frame besides the payload.
pub const FRAME_OVERHEAD: usize = HEADER_LEN + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("MAGIC_MISMATCH")]
    MagicMismatch,
    #[error("VERSION_UNSUPPORTED")]
    VersionUnsupported,
    #[error("LENGTH_INVALID")]
    LengthInvalid,
    #[error("CRC_FAIL")]
    CrcFail,
}

impl FrameError {
    pub fn code(&self) -> &'static str {
        match self {
            FrameError::MagicMismatch => "MAGIC_MISMATCH",
            FrameError::VersionUnsupported => "VERSION_UNSUPPORTED",
            FrameError::LengthInvalid => "LENGTH_INVALID",
            FrameError::CrcFail => "CRC_FAIL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireFrame {
    pub flags: u8,
    pub frame_id: u64,
    pub timestamp_ms: u64,
    pub sigma: f32,
    pub scale: f32,
    pub offset: f32,
    pub payload: Vec<u8>,
}

impl WireFrame {
    pub fn dim(&self) -> usize {
        self.payload.len()
    }

    pub fn noise_applied(&self) -> bool {
        self.flags & FLAG_NOISE != 0
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.payload.len()
    }
}

/// CRC-32/ISO-HDLC: reflected polynomial 0xEDB88320, init and final xor all ones.
pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

pub fn encode_frame(frame: &WireFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.flags);
    out.extend_from_slice(&frame.frame_id.to_le_bytes());
    out.extend_from_slice(&frame.timestamp_ms.to_le_bytes());
    out.extend_from_slice(&(frame.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&frame.sigma.to_le_bytes());
    out.extend_from_slice(&frame.scale.to_le_bytes());
    out.extend_from_slice(&frame.offset.to_le_bytes());
    out.extend_from_slice(&frame.payload);
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4-byte slice"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8-byte slice"))
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4-byte slice"))
}

/// Length of the frame starting at `bytes[0]` as claimed by its header, once
/// the header has arrived.
pub(super) fn claimed_len(bytes: &[u8]) -> Option<usize> {
    (bytes.len() >= HEADER_LEN).then(|| FRAME_OVERHEAD + u32_at(bytes, 22) as usize)
}

/// Decode exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<WireFrame, FrameError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(if bytes.len() < 4 && MAGIC.starts_with(bytes) {
            FrameError::LengthInvalid
        } else {
            FrameError::MagicMismatch
        });
    }
    if bytes.len() < 5 {
        return Err(FrameError::LengthInvalid);
    }
    if bytes[4] != VERSION {
        return Err(FrameError::VersionUnsupported);
    }
    match claimed_len(bytes) {
        Some(n) if n == bytes.len() => {}
        _ => return Err(FrameError::LengthInvalid),
    }
    let body = bytes.len() - 4;
    if crc32(&bytes[..body]) != u32_at(bytes, body) {
        return Err(FrameError::CrcFail);
    }
    Ok(WireFrame {
        flags: bytes[5],
        frame_id: u64_at(bytes, 6),
        timestamp_ms: u64_at(bytes, 14),
        sigma: f32_at(bytes, 26),
        scale: f32_at(bytes, 30),
        offset: f32_at(bytes, 34),
        payload: bytes[HEADER_LEN..body].to_vec(),
    })
}
