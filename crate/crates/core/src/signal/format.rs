//! Segment file: one JSON header line, then `channels × samples`
//! little-endian `f32` values in channel-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentHeader {
    pub channels: usize,
    pub samples: usize,
    pub rate: f64,
    pub label: usize,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFile {
    pub header: SegmentHeader,
    pub data: Vec<f32>,
}

impl SegmentFile {
    pub fn new(channels: usize, samples: usize, rate: f64, label: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == channels * samples,
            Shape,
            "{} values for a ({channels}, {samples}) segment",
            data.len()
        );
        Ok(Self { header: SegmentHeader { channels, samples, rate, label, dtype: DTYPE.into() }, data })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let l = self.header.samples;
        &self.data[c * l..(c + 1) * l]
    }
}

pub fn encode_segment(seg: &SegmentFile) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(&seg.header)?;
    out.push(b'\n');
    out.reserve(seg.data.len() * 4);
    for v in &seg.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_segment(bytes: &[u8]) -> Result<SegmentFile> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("segment header is not newline-terminated".into()))?;
    let header: SegmentHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Format(format!("bad segment header: {e}")))?;
    if header.dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    let body = &bytes[nl + 1..];
    let want = header.channels * header.samples * 4;
    if body.len() != want {
        return Err(Error::Format(format!("segment body has {} bytes, header implies {want}", body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(SegmentFile { header, data })
}

pub fn write_segment(path: &Path, seg: &SegmentFile) -> Result<()> {
    let bytes = encode_segment(seg)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_segment(path: &Path) -> Result<SegmentFile> {
    decode_segment(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_line_layout() {
        let seg = SegmentFile::new(2, 2, 200.0, 1, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let bytes = encode_segment(&seg).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(header["channels"], 2);
        assert_eq!(header["dtype"], "f32le");
        assert_eq!(bytes.len(), nl + 1 + 16);
        assert_eq!(&bytes[nl + 1..nl + 5], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_body_is_rejected() {
        let seg = SegmentFile::new(1, 3, 200.0, 0, vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_segment(&seg).unwrap();
        assert!(decode_segment(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_segment(b"{}").is_err());
    }

    proptest! {
        #[test]
        fn round_trip(c in 1usize..4, l in 1usize..32, label in 0usize..5, seed in any::<u32>()) {
            let data: Vec<f32> = (0..c * l).map(|i| ((i as u32 ^ seed) as f32).sin()).collect();
            let seg = SegmentFile::new(c, l, 200.0, label, data).unwrap();
            let back = decode_segment(&encode_segment(&seg).unwrap()).unwrap();
            prop_assert_eq!(back, seg);
        }
    }
}
