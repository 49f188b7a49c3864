//! Incremental decoding of a concatenated frame stream with resynchronization
//! after corrupt or truncated frames.

use super::frame::{claimed_len, decode_frame, FrameError, WireFrame, FRAME_OVERHEAD, HEADER_LEN, MAGIC, VERSION};

/// Payloads larger than this are treated as a corrupted length field.
const MAX_DIM: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Frame(WireFrame),
    Error {
        /// Absolute byte offset of the rejected frame in the stream.
        offset: u64,
        error: FrameError,
        /// Frame id read from the (unverified) header, when one was present.
        frame_id_hint: Option<u64>,
    },
}

#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
    base: u64,
    finished: bool,
    resync: bool,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Mark end of stream; any trailing partial frame becomes `LENGTH_INVALID`.
    pub fn finish(&mut self) {
        self.finished = true;
    }

    fn drain(&mut self, n: usize) {
        self.buf.drain(..n);
        self.base += n as u64;
    }

    fn reject(&mut self, error: FrameError) -> StreamItem {
        let frame_id_hint = (self.buf.len() >= 14).then(|| u64::from_le_bytes(self.buf[6..14].try_into().unwrap()));
        let item = StreamItem::Error {
            offset: self.base,
            error,
            frame_id_hint,
        };
        self.drain(1);
        self.resync = true;
        item
    }

    pub fn next_item(&mut self) -> Option<StreamItem> {
        if self.resync {
            match self.buf.windows(4).position(|w| w == MAGIC) {
                Some(p) => {
                    self.drain(p);
                    self.resync = false;
                }
                None => {
                    let keep = if self.finished { 0 } else { 3 };
                    self.drain(self.buf.len().saturating_sub(keep));
                    if self.finished {
                        self.resync = false;
                    }
                    return None;
                }
            }
        }
        if self.buf.is_empty() {
            return None;
        }
        let need_more = |have: usize, want: usize, finished: bool| have < want && !finished;
        if need_more(self.buf.len(), 4, self.finished) {
            return None;
        }
        if self.buf.len() < 4 {
            return Some(self.reject(FrameError::LengthInvalid));
        }
        if self.buf[..4] != MAGIC {
            return Some(self.reject(FrameError::MagicMismatch));
        }
        if need_more(self.buf.len(), HEADER_LEN, self.finished) {
            return None;
        }
        if self.buf.len() >= 5 && self.buf[4] != VERSION {
            return Some(self.reject(FrameError::VersionUnsupported));
        }
        let Some(n) = claimed_len(&self.buf) else {
            return Some(self.reject(FrameError::LengthInvalid));
        };
        if n - FRAME_OVERHEAD > MAX_DIM {
            return Some(self.reject(FrameError::LengthInvalid));
        }
        if need_more(self.buf.len(), n, self.finished) {
            return None;
        }
        if self.buf.len() < n {
            return Some(self.reject(FrameError::LengthInvalid));
        }
        match decode_frame(&self.buf[..n]) {
            Ok(frame) => {
                self.drain(n);
                Some(StreamItem::Frame(frame))
            }
            Err(e) => Some(self.reject(e)),
        }
    }

    /// Drain every item currently decodable.
    pub fn drain_items(&mut self) -> Vec<StreamItem> {
        std::iter::from_fn(|| self.next_item()).collect()
    }
}
