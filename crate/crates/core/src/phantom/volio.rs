//! The `.vol` binary volume format.
//!
//! Layout: magic `SVOL`, version `u16 = 1`, dtype `u8` (0 = f64), ndim `u8`,
//! then `ndim` little-endian `u32` extents, then the row-major little-endian
//! payload.

use std::path::Path;

use crate::error::{Error, Result, VolumeFormatError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SVOL";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 0;

pub fn encode_volume(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F64);
    out.push(u8::try_from(t.rank()).expect("rank fits in u8"));
    for &e in t.shape() {
        out.extend_from_slice(&u32::try_from(e).expect("extent fits in u32").to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes one volume from the front of `bytes`, returning it together with
/// the number of bytes consumed.
pub fn decode_volume(bytes: &[u8]) -> std::result::Result<(Tensor, usize), VolumeFormatError> {
    let need = |n: usize| {
        if bytes.len() < n {
            Err(VolumeFormatError::Truncated { expected: n as u64, found: bytes.len() as u64 })
        } else {
            Ok(())
        }
    };
    need(4)?;
    if &bytes[..4] != MAGIC {
        return Err(VolumeFormatError::BadMagic);
    }
    need(8)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(VolumeFormatError::Unsupported { what: "version", value: u32::from(version) });
    }
    if bytes[6] != DTYPE_F64 {
        return Err(VolumeFormatError::Unsupported { what: "dtype", value: u32::from(bytes[6]) });
    }
    let ndim = bytes[7] as usize;
    let header = 8 + 4 * ndim;
    need(header)?;
    let extents: Vec<u64> = (0..ndim)
        .map(|i| {
            let o = 8 + 4 * i;
            u64::from(u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]))
        })
        .collect();
    if let Some(&zero) = extents.iter().find(|&&e| e == 0) {
        return Err(VolumeFormatError::Unsupported { what: "extent", value: zero as u32 });
    }
    let count = extents
        .iter()
        .try_fold(1u64, |acc, &e| acc.checked_mul(e))
        .and_then(|n| n.checked_mul(8))
        .filter(|&b| b <= isize::MAX as u64)
        .ok_or_else(|| VolumeFormatError::DimensionOverflow(extents.clone()))?;
    let total = header as u64 + count;
    if (bytes.len() as u64) < total {
        return Err(VolumeFormatError::Truncated { expected: total, found: bytes.len() as u64 });
    }
    let total = total as usize;
    let data: Vec<f64> = bytes[header..total]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let shape: Vec<usize> = extents.iter().map(|&e| e as usize).collect();
    Ok((Tensor::new(&shape, data).expect("extents validated"), total))
}

pub fn write_volume(path: &Path, t: &Tensor) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_volume(t)).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, used) = decode_volume(&bytes).map_err(|kind| Error::Volume { path: path.into(), kind })?;
    if used != bytes.len() {
        return Err(Error::Volume {
            path: path.into(),
            kind: VolumeFormatError::Unsupported { what: "trailing bytes", value: (bytes.len() - used) as u32 },
        });
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 3], vec![0.5; 6]).unwrap();
        let b = encode_volume(&t);
        assert_eq!(&b[..4], b"SVOL");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(b[6], 0);
        assert_eq!(b[7], 2);
        assert_eq!(&b[8..12], &[2, 0, 0, 0]);
        assert_eq!(&b[12..16], &[3, 0, 0, 0]);
        assert_eq!(b.len(), 16 + 48);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let t = Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut b = encode_volume(&t);
        let cut = &b[..b.len() - 3];
        assert!(matches!(decode_volume(cut), Err(VolumeFormatError::Truncated { .. })));
        b[0] = b'X';
        assert_eq!(decode_volume(&b).unwrap_err(), VolumeFormatError::BadMagic);
    }

    #[test]
    fn dimension_overflow_detected() {
        let mut b = Vec::new();
        b.extend_from_slice(b"SVOL");
        b.extend_from_slice(&1u16.to_le_bytes());
        b.push(0);
        b.push(4);
        for _ in 0..4 {
            b.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode_volume(&b), Err(VolumeFormatError::DimensionOverflow(_))));
    }

    #[test]
    fn file_round_trip_and_error_variants() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vol");
        let t = Tensor::new(&[2, 2, 3], (0..12).map(|i| (i as f64).sqrt() - 1.5).collect()).unwrap();
        write_volume(&path, &t).unwrap();
        assert_eq!(read_volume(&path).unwrap(), t);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_volume(&path),
            Err(Error::Volume { kind: VolumeFormatError::Truncated { .. }, .. })
        ));
        assert!(matches!(read_volume(&dir.path().join("missing.vol")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(shape in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2))
                .collect();
            let t = Tensor::new(&shape, data).unwrap();
            let bytes = encode_volume(&t);
            let (back, used) = decode_volume(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
