//! MCIF, a minimal multi-channel image container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MCIF"
//! 4       4     version (u32 LE) = 1
//! 8       4     height  (u32 LE)
//! 12      4     width   (u32 LE)
//! 16      4     channels C (u32 LE), 1..=255
//! 20      1     dtype, 0 = f32 LE
//! 21      ...   C names, each a u16 LE byte length then UTF-8 bytes
//! ...     4*C*H*W  payload, channel-major, row-major within a channel
//! ```

use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::image::MultiChannelImage;

pub const MAGIC: [u8; 4] = *b"MCIF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const MAX_CHANNELS: usize = 255;
/// Bytes before the channel names.
pub const FIXED_HEADER_LEN: usize = 21;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum McifError {
    #[error("bad magic {0:?}, expected \"MCIF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported MCIF version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("channel count {0} outside 1..=255")]
    ChannelCount(u32),
    #[error("truncated file: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("{0} unexpected trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("channel name is not valid UTF-8")]
    BadName,
    #[error("channel name of {0} bytes exceeds the u16 length prefix")]
    NameTooLong(usize),
}

/// Header size for the given names.
pub fn header_len(names: &[String]) -> usize {
    FIXED_HEADER_LEN + names.iter().map(|n| 2 + n.len()).sum::<usize>()
}

pub fn encode(image: &MultiChannelImage) -> Result<Vec<u8>> {
    let c = image.channels();
    if c == 0 || c > MAX_CHANNELS {
        return Err(McifError::ChannelCount(c as u32).into());
    }
    let names = image.channel_names();
    let mut out = Vec::with_capacity(header_len(names) + 4 * image.pixels().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [image.height(), image.width(), c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(DTYPE_F32);
    for name in names {
        let len = u16::try_from(name.len()).map_err(|_| McifError::NameTooLong(name.len()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for v in image.pixels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], McifError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(McifError::Truncated {
                needed: end,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, McifError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses an MCIF byte buffer. Pixel values are returned as stored (any
/// finite value); see [`crate::io::ingest`] for normalization.
pub fn decode(bytes: &[u8]) -> Result<MultiChannelImage> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(McifError::BadMagic(magic).into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(McifError::UnsupportedVersion(version).into());
    }
    let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()?);
    if c == 0 || c as usize > MAX_CHANNELS {
        return Err(McifError::ChannelCount(c).into());
    }
    let dtype = r.take(1)?[0];
    if dtype != DTYPE_F32 {
        return Err(McifError::UnsupportedDtype(dtype).into());
    }
    let mut names = Vec::with_capacity(c as usize);
    for _ in 0..c {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let s = std::str::from_utf8(r.take(len)?).map_err(|_| McifError::BadName)?;
        names.push(s.to_string());
    }
    let count = c as usize * h * w;
    let payload = r.take(4 * count)?;
    if r.pos != bytes.len() {
        return Err(McifError::TrailingBytes(bytes.len() - r.pos).into());
    }
    let pixels = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    MultiChannelImage::new_unchecked_range(h, w, pixels, names)
}

pub fn write_mcif(path: impl AsRef<Path>, image: &MultiChannelImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_mcif(path: impl AsRef<Path>) -> Result<MultiChannelImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Mcif(inner) => Error::invalid(format!("{}: {inner}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MultiChannelImage {
        MultiChannelImage::new(2, 2, vec![0.0, 0.25, 0.5, 1.0], vec![]).unwrap()
    }

    #[test]
    fn tiny_round_trip_and_size() {
        let bytes = encode(&tiny()).unwrap();
        assert_eq!(bytes.len(), FIXED_HEADER_LEN + 2 + 16);
        assert_eq!(&bytes[..4], b"MCIF");
        assert_eq!(decode(&bytes).unwrap(), tiny());
    }

    #[test]
    fn full_size_file_length() {
        let img = MultiChannelImage::new(224, 224, vec![0.5; 10 * 224 * 224], vec![]).unwrap();
        let bytes = encode(&img).unwrap();
        assert_eq!(bytes.len(), header_len(img.channel_names()) + 4 * 10 * 224 * 224);
    }

    #[test]
    fn typed_errors() {
        let good = encode(&tiny()).unwrap();
        let mut bad = good.clone();
        bad[3] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Mcif(McifError::BadMagic(m))) if &m == b"MCIX"));

        let mut bad = good.clone();
        bad[20] = 7;
        assert!(matches!(decode(&bad), Err(Error::Mcif(McifError::UnsupportedDtype(7)))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode(&bad), Err(Error::Mcif(McifError::UnsupportedVersion(2)))));

        assert!(matches!(
            decode(&good[..good.len() - 1]),
            Err(Error::Mcif(McifError::Truncated { .. }))
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Mcif(McifError::TrailingBytes(1)))));

        let mut zero = good;
        zero[16..20].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode(&zero), Err(Error::Mcif(McifError::ChannelCount(0)))));
    }

    proptest::proptest! {
        #[test]
        fn round_trip_is_bitwise(
            h in 1usize..6, w in 1usize..6, c in 1usize..4,
            seed in proptest::collection::vec(0.0f32..=1.0, 1..200),
            name in "[a-zA-Z0-9 ]{0,12}",
        ) {
            let px: Vec<f32> = (0..h * w * c).map(|i| seed[i % seed.len()]).collect();
            let names = (0..c).map(|i| format!("{name}{i}")).collect();
            let img = MultiChannelImage::new(h, w, px, names).unwrap();
            let bytes = encode(&img).unwrap();
            let back = decode(&bytes).unwrap();
            proptest::prop_assert_eq!(&back, &img);
            proptest::prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
