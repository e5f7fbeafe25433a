use std::path::Path;

use crate::error::{Error, Result};

/// Binary 8-bit PGM of a row-major plane, scaled so its maximum is white.
pub fn encode_pgm(values: &[f32], height: usize, width: usize) -> Vec<u8> {
    assert_eq!(values.len(), height * width);
    let max = values.iter().cloned().fold(0.0f32, f32::max);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if max > 0.0 {
            (v.max(0.0) / max * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, values: &[f32], height: usize, width: usize) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(values, height, width)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_scaling() {
        let b = encode_pgm(&[0.0, 0.5, 1.0, 0.25], 2, 2);
        assert_eq!(&b[..11], b"P5\n2 2\n255\n");
        assert_eq!(&b[11..], &[0, 128, 255, 64]);
    }
}
