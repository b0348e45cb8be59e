//! Binary image/mask formats and atomic file output.
//!
//! `CIMG1`: magic `43 49 4D 47 31 00`, u32 LE height, u32 LE width, then
//! `height * width` interleaved `(re, im)` f64 LE values in row-major order.
//!
//! `KMSK1`: magic `4B 4D 53 4B 31 00`, the same two u32 fields, then one byte
//! per component: `0x00` removed, `0x01` kept.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{FdbError, Result};
use crate::grid::{ComplexImage, FrequencyMask};

pub const CIMG_MAGIC: [u8; 6] = *b"CIMG1\0";
pub const KMSK_MAGIC: [u8; 6] = *b"KMSK1\0";

pub fn encode_cimg(img: &ComplexImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + 16 * img.len());
    out.extend_from_slice(&CIMG_MAGIC);
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for c in img.data() {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    out
}

pub fn decode_cimg(bytes: &[u8]) -> Result<ComplexImage> {
    let (h, w, body) = read_header(bytes, &CIMG_MAGIC, "CIMG1")?;
    let n = h * w;
    if body.len() != 16 * n {
        return Err(FdbError::Format(format!(
            "CIMG1 payload is {} bytes, expected {}",
            body.len(),
            16 * n
        )));
    }
    let data = body
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    ComplexImage::from_vec(h, w, data)
}

pub fn encode_kmsk(mask: &FrequencyMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + mask.keep().len());
    out.extend_from_slice(&KMSK_MAGIC);
    out.extend_from_slice(&(mask.height() as u32).to_le_bytes());
    out.extend_from_slice(&(mask.width() as u32).to_le_bytes());
    out.extend(mask.keep().iter().map(|&k| k as u8));
    out
}

pub fn decode_kmsk(bytes: &[u8]) -> Result<FrequencyMask> {
    let (h, w, body) = read_header(bytes, &KMSK_MAGIC, "KMSK1")?;
    if body.len() != h * w {
        return Err(FdbError::Format(format!(
            "KMSK1 payload is {} bytes, expected {}",
            body.len(),
            h * w
        )));
    }
    let keep = body
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(FdbError::Format(format!("invalid KMSK1 byte {other:#04x}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    FrequencyMask::from_vec(h, w, keep)
}

fn read_header<'a>(bytes: &'a [u8], magic: &[u8; 6], name: &str) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 14 || &bytes[..6] != magic {
        return Err(FdbError::Format(format!("missing {name} header")));
    }
    let h = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if h == 0 || w == 0 {
        return Err(FdbError::Format(format!("{name} with zero dimension {h}x{w}")));
    }
    Ok((h, w, &bytes[14..]))
}

pub fn write_cimg(path: &Path, img: &ComplexImage) -> Result<()> {
    write_atomic(path, &encode_cimg(img))
}

pub fn read_cimg(path: &Path) -> Result<ComplexImage> {
    decode_cimg(&fs::read(path)?)
}

pub fn write_kmsk(path: &Path, mask: &FrequencyMask) -> Result<()> {
    write_atomic(path, &encode_kmsk(mask))
}

pub fn read_kmsk(path: &Path) -> Result<FrequencyMask> {
    decode_kmsk(&fs::read(path)?)
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| FdbError::Format(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cimg_header_layout() {
        let img = ComplexImage::from_vec(1, 2, vec![Complex64::new(1.0, -2.0), Complex64::new(0.5, 0.0)]).unwrap();
        let bytes = encode_cimg(&img);
        assert_eq!(&bytes[..6], &[0x43, 0x49, 0x4D, 0x47, 0x31, 0x00]);
        assert_eq!(&bytes[6..10], &[1, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[2, 0, 0, 0]);
        assert_eq!(&bytes[14..22], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[22..30], &(-2.0f64).to_le_bytes());
        assert_eq!(bytes.len(), 14 + 32);
        assert_eq!(decode_cimg(&bytes).unwrap(), img);
    }

    #[test]
    fn kmsk_layout_and_validation() {
        let mask = FrequencyMask::from_vec(2, 2, vec![true, false, false, true]).unwrap();
        let bytes = encode_kmsk(&mask);
        assert_eq!(&bytes[..6], &[0x4B, 0x4D, 0x53, 0x4B, 0x31, 0x00]);
        assert_eq!(&bytes[14..], &[1, 0, 0, 1]);
        assert_eq!(decode_kmsk(&bytes).unwrap(), mask);

        let mut bad = bytes.clone();
        bad[15] = 7;
        assert!(decode_kmsk(&bad).is_err());
        assert!(decode_kmsk(&bytes[..16]).is_err());
        assert!(decode_cimg(&bytes).is_err());
    }

    proptest::proptest! {
        #[test]
        fn cimg_round_trip(h in 1usize..6, w in 1usize..6, vals in proptest::collection::vec(-1e6f64..1e6, 72)) {
            let data = (0..h * w).map(|k| Complex64::new(vals[2 * k], vals[2 * k + 1])).collect();
            let img = ComplexImage::from_vec(h, w, data).unwrap();
            proptest::prop_assert_eq!(decode_cimg(&encode_cimg(&img)).unwrap(), img);
        }
    }
}
