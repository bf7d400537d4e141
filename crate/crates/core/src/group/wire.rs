//! TCP frame format. All integers little-endian:
//!
//! ```text
//! magic u32 = 0x54415432 | group id u64 | sequence u32 | source group-rank u32
//! | payload length u64 | payload bytes
//! ```
//!
//! During connection setup a joining rank first sends its world rank as a
//! bare `u32`, before any frame.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: u32 = 0x5441_5432;
pub const HEADER_LEN: usize = 28;

/// Group id reserved for connection setup frames.
pub const SETUP_GROUP: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub group: u64,
    pub seq: u32,
    pub src: u32,
    pub len: u64,
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC.to_le_bytes());
        out[4..12].copy_from_slice(&self.group.to_le_bytes());
        out[12..16].copy_from_slice(&self.seq.to_le_bytes());
        out[16..20].copy_from_slice(&self.src.to_le_bytes());
        out[20..28].copy_from_slice(&self.len.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; HEADER_LEN]) -> Result<Self> {
        let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        if magic != MAGIC {
            return Err(Error::Protocol(format!("bad frame magic {magic:#010x}")));
        }
        Ok(FrameHeader {
            group: u64::from_le_bytes(bytes[4..12].try_into().unwrap()),
            seq: u32::from_le_bytes(bytes[12..16].try_into().unwrap()),
            src: u32::from_le_bytes(bytes[16..20].try_into().unwrap()),
            len: u64::from_le_bytes(bytes[20..28].try_into().unwrap()),
        })
    }
}

/// A frame buffer with room reserved for the header, so a payload can be
/// gathered straight behind it and sent with one write.
pub fn frame_with_capacity(payload_len: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + payload_len);
    buf.resize(HEADER_LEN, 0);
    buf
}

/// Fill in the header of a buffer from [`frame_with_capacity`].
pub fn seal_frame(buf: &mut [u8], group: u64, seq: u32, src: u32) {
    let len = (buf.len() - HEADER_LEN) as u64;
    buf[..HEADER_LEN].copy_from_slice(&FrameHeader { group, seq, src, len }.encode());
}

pub fn write_frame(w: &mut impl Write, group: u64, seq: u32, src: u32, payload: &[u8]) -> io::Result<()> {
    let mut buf = frame_with_capacity(payload.len());
    buf.extend_from_slice(payload);
    seal_frame(&mut buf, group, seq, src);
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_frame(r: &mut impl Read) -> Result<(FrameHeader, Vec<u8>)> {
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head)?;
    let header = FrameHeader::decode(&head)?;
    let len = usize::try_from(header.len)
        .map_err(|_| Error::Protocol(format!("frame length {} too large", header.len)))?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok((header, payload))
}

pub fn write_rank(w: &mut impl Write, rank: u32) -> io::Result<()> {
    w.write_all(&rank.to_le_bytes())?;
    w.flush()
}

pub fn read_rank(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let h = FrameHeader { group: 0x0102_0304_0506_0708, seq: 9, src: 3, len: 5 };
        let bytes = h.encode();
        assert_eq!(&bytes[0..4], &[0x32, 0x54, 0x41, 0x54]);
        assert_eq!(&bytes[4..12], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&bytes[12..16], &[9, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[3, 0, 0, 0]);
        assert_eq!(&bytes[20..28], &[5, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn bad_magic_is_a_protocol_error() {
        let mut bytes = FrameHeader { group: 1, seq: 0, src: 0, len: 0 }.encode();
        bytes[0] ^= 0xff;
        assert!(matches!(FrameHeader::decode(&bytes), Err(Error::Protocol(_))));
    }

    #[test]
    fn truncated_payload_is_an_io_error() {
        let mut buf = Vec::new();
        write_frame(&mut buf, 1, 2, 3, b"hello").unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_frame(&mut buf.as_slice()), Err(Error::Io(_))));
    }

    proptest! {
        #[test]
        fn frames_round_trip(group: u64, seq: u32, src: u32, payload in proptest::collection::vec(any::<u8>(), 0..256)) {
            let mut buf = Vec::new();
            write_frame(&mut buf, group, seq, src, &payload).unwrap();
            prop_assert_eq!(buf.len(), HEADER_LEN + payload.len());
            let (h, p) = read_frame(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(h, FrameHeader { group, seq, src, len: payload.len() as u64 });
            prop_assert_eq!(p, payload);
        }
    }
}
