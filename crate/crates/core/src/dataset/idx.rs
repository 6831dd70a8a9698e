//! IDX reader/writer (the MNIST container format).
//!
//! Layout, all integers big-endian u32:
//! images: magic 2051, count, rows (28), cols (28), then count×784 bytes;
//! labels: magic 2049, count, then count bytes in 0..=9.

use std::fs;
use std::path::Path;

use super::{ConceptMap, DigitSample, IMAGE_COLS, IMAGE_ROWS, N_DIGITS, PIXELS};
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

fn parse_images(bytes: &[u8]) -> Result<Vec<Vec<u8>>> {
    let magic = read_u32(bytes, 0, "image file")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4, "image file")? as usize;
    let rows = read_u32(bytes, 8, "image file")? as usize;
    let cols = read_u32(bytes, 12, "image file")? as usize;
    if rows != IMAGE_ROWS || cols != IMAGE_COLS {
        return Err(Error::Format(format!(
            "image geometry {rows}x{cols}, expected {IMAGE_ROWS}x{IMAGE_COLS}"
        )));
    }
    let payload = &bytes[16..];
    if payload.len() != count * PIXELS {
        return Err(Error::Format(format!(
            "image payload has {} bytes, header promises {}",
            payload.len(),
            count * PIXELS
        )));
    }
    Ok(payload.chunks_exact(PIXELS).map(<[u8]>::to_vec).collect())
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "label file")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4, "label file")? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Format(format!(
            "label payload has {} bytes, header promises {count}",
            payload.len()
        )));
    }
    if let Some(bad) = payload.iter().find(|&&l| l as usize >= N_DIGITS) {
        return Err(Error::Format(format!("label {bad} outside 0..=9")));
    }
    Ok(payload.to_vec())
}

/// Decodes an in-memory IDX image/label pair.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Vec<DigitSample>> {
    let images = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if images.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let concept = ConceptMap::normal();
    images
        .into_iter()
        .zip(labels)
        .map(|(pixels, digit)| DigitSample::from_bytes(pixels, digit, &concept))
        .collect()
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<DigitSample>> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels)
}

pub fn encode_images(samples: &[DigitSample]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + samples.len() * PIXELS);
    for word in [
        IMAGE_MAGIC,
        samples.len() as u32,
        IMAGE_ROWS as u32,
        IMAGE_COLS as u32,
    ] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for s in samples {
        out.extend_from_slice(s.raw_pixels());
    }
    out
}

pub fn encode_labels(samples: &[DigitSample]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + samples.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    out.extend(samples.iter().map(|s| s.digit));
    out
}

pub fn write_idx(samples: &[DigitSample], images_path: &Path, labels_path: &Path) -> Result<()> {
    fs::write(images_path, encode_images(samples)).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, encode_labels(samples)).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two all-zero 28×28 images, written out byte by byte.
    fn fixture_images() -> Vec<u8> {
        let mut b = vec![
            0x00, 0x00, 0x08, 0x03, // magic 2051
            0x00, 0x00, 0x00, 0x02, // count
            0x00, 0x00, 0x00, 0x1c, // rows
            0x00, 0x00, 0x00, 0x1c, // cols
        ];
        b.extend(std::iter::repeat_n(0u8, 2 * 784));
        b
    }

    fn fixture_labels() -> Vec<u8> {
        vec![
            0x00, 0x00, 0x08, 0x01, // magic 2049
            0x00, 0x00, 0x00, 0x02, // count
            0x03, 0x07,
        ]
    }

    #[test]
    fn hand_built_fixture_decodes() {
        let samples = parse_idx(&fixture_images(), &fixture_labels()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!((samples[0].digit, samples[0].class_label), (3, 0));
        assert_eq!((samples[1].digit, samples[1].class_label), (7, 1));
        assert!(samples.iter().all(|s| s.pixels().all(|p| p == 0.0)));
    }

    #[test]
    fn encoder_reproduces_fixture_bytes() {
        let samples = parse_idx(&fixture_images(), &fixture_labels()).unwrap();
        assert_eq!(encode_images(&samples), fixture_images());
        assert_eq!(encode_labels(&samples), fixture_labels());
    }

    #[test]
    fn bad_image_magic_is_a_format_error() {
        let mut images = fixture_images();
        images[3] = 0x01;
        assert!(matches!(
            parse_idx(&images, &fixture_labels()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn bad_label_magic_is_a_format_error() {
        let mut labels = fixture_labels();
        labels[3] = 0x03;
        assert!(matches!(
            parse_idx(&fixture_images(), &labels),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn count_mismatch_is_a_consistency_error() {
        let mut labels = fixture_labels();
        labels[7] = 0x03;
        labels.push(0x01);
        assert!(matches!(
            parse_idx(&fixture_images(), &labels),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut images = fixture_images();
        images.pop();
        assert!(matches!(
            parse_idx(&images, &fixture_labels()),
            Err(Error::Format(_))
        ));
        assert!(parse_idx(&images[..6], &fixture_labels()).is_err());
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut labels = fixture_labels();
        labels[9] = 10;
        assert!(matches!(
            parse_idx(&fixture_images(), &labels),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = (dir.path().join("img"), dir.path().join("lbl"));
        let samples = crate::dataset::generate_synthetic(3, 9);
        write_idx(&samples, &img, &lbl).unwrap();
        let back = load_idx(&img, &lbl).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_idx(&dir.path().join("nope"), &dir.path().join("nope2")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
