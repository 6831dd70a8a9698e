//! Digit data: ingestion, synthetic substitutes, class mapping, non-IID
//! partitioning and concept-drift injection.
//!
//! Pixels are stored as raw bytes (the IDX on-disk representation) and exposed
//! as reals in `[0, 1]` by dividing by 255. Samples share their pixel buffer,
//! so relabeling and partitioning never copy image data.

mod idx;
pub mod partition;
mod synthetic;

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub use idx::{encode_images, encode_labels, load_idx, parse_idx, write_idx};
pub use partition::{
    draw_partitions, partition_random_mix, partition_single_digit, DigitPool, NodePartition,
};
pub use synthetic::{generate_synthetic, template};

pub const IMAGE_ROWS: usize = 28;
pub const IMAGE_COLS: usize = 28;
pub const PIXELS: usize = IMAGE_ROWS * IMAGE_COLS;
pub const N_DIGITS: usize = 10;
/// Multiplier taking a raw byte to `[0, 1]`.
pub const PIXEL_SCALE: f64 = 1.0 / 255.0;

/// One 28×28 grayscale digit with its binary class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitSample {
    pixels: Arc<[u8]>,
    pub digit: u8,
    pub class_label: u8,
}

impl DigitSample {
    /// Builds a sample from raw bytes, labeling it with `concept`.
    pub fn from_bytes(pixels: impl Into<Arc<[u8]>>, digit: u8, concept: &ConceptMap) -> Result<Self> {
        let pixels = pixels.into();
        if pixels.len() != PIXELS {
            return Err(Error::Shape {
                expected: PIXELS,
                actual: pixels.len(),
            });
        }
        if digit as usize >= N_DIGITS {
            return Err(Error::Precondition(format!("digit {digit} outside 0..=9")));
        }
        Ok(Self {
            pixels,
            digit,
            class_label: concept.class_of(digit),
        })
    }

    pub fn raw_pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Pixel `i` scaled to `[0, 1]`.
    #[inline]
    pub fn pixel(&self, i: usize) -> f64 {
        f64::from(self.pixels[i]) * PIXEL_SCALE
    }

    pub fn pixels(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&b| f64::from(b) * PIXEL_SCALE)
    }

    pub fn with_label(&self, class_label: u8) -> Self {
        Self {
            pixels: Arc::clone(&self.pixels),
            digit: self.digit,
            class_label,
        }
    }

    /// True when both samples point at the same pixel buffer.
    pub fn same_instance(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.pixels, &other.pixels)
    }
}

/// Total assignment of digits 0-9 to binary class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConceptMap {
    assignment: [u8; N_DIGITS],
}

impl Default for ConceptMap {
    fn default() -> Self {
        Self::normal()
    }
}

impl ConceptMap {
    /// Digits 0-5 → label 0, digits 6-9 → label 1.
    pub fn normal() -> Self {
        let mut assignment = [0u8; N_DIGITS];
        for (digit, slot) in assignment.iter_mut().enumerate() {
            *slot = u8::from(digit >= 6);
        }
        Self { assignment }
    }

    pub fn from_assignment(assignment: [u8; N_DIGITS]) -> Result<Self> {
        if let Some(bad) = assignment.iter().find(|&&c| c > 1) {
            return Err(Error::InvalidConcept(format!("class label {bad} is not binary")));
        }
        Ok(Self { assignment })
    }

    #[inline]
    pub fn class_of(&self, digit: u8) -> u8 {
        self.assignment[digit as usize]
    }

    pub fn assignment(&self) -> [u8; N_DIGITS] {
        self.assignment
    }

    /// Digits currently mapped to label 1 (the second class).
    pub fn second_class_digits(&self) -> Vec<u8> {
        (0..N_DIGITS as u8).filter(|&d| self.class_of(d) == 1).collect()
    }

    /// Digits whose class differs between the two maps.
    pub fn diff(&self, other: &ConceptMap) -> Vec<u8> {
        (0..N_DIGITS as u8)
            .filter(|&d| self.class_of(d) != other.class_of(d))
            .collect()
    }

    /// Moves `digit` from the second class to the first.
    pub fn with_digit_moved(&self, digit: u8) -> Result<Self> {
        if digit as usize >= N_DIGITS || self.class_of(digit) != 1 {
            return Err(Error::InvalidConcept(format!(
                "digit {digit} is not mapped to the second class"
            )));
        }
        let mut assignment = self.assignment;
        assignment[digit as usize] = 0;
        Ok(Self { assignment })
    }
}

/// Picks one second-class digit uniformly at random and moves it to the first class.
pub fn inject_drift(concept: &ConceptMap, seed: u64) -> Result<(ConceptMap, u8)> {
    let candidates = concept.second_class_digits();
    if candidates.is_empty() {
        return Err(Error::InvalidConcept(
            "no digit is mapped to the second class".into(),
        ));
    }
    let mut rng = rng::rng_for(seed, &[rng::stream::DRIFT]);
    let digit = candidates[rng.gen_range(0..candidates.len())];
    Ok((concept.with_digit_moved(digit)?, digit))
}

/// Recomputes every class label from `concept`; pixels and digits are untouched.
pub fn relabel(samples: &[DigitSample], concept: &ConceptMap) -> Vec<DigitSample> {
    samples
        .iter()
        .map(|s| s.with_label(concept.class_of(s.digit)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(digit: u8) -> DigitSample {
        DigitSample::from_bytes(vec![0u8; PIXELS], digit, &ConceptMap::normal()).unwrap()
    }

    #[test]
    fn normal_concept_splits_at_six() {
        let c = ConceptMap::normal();
        for d in 0..=5 {
            assert_eq!(c.class_of(d), 0);
        }
        for d in 6..=9 {
            assert_eq!(c.class_of(d), 1);
        }
        assert_eq!(c.second_class_digits(), vec![6, 7, 8, 9]);
    }

    #[test]
    fn drift_moves_exactly_one_second_class_digit() {
        let normal = ConceptMap::normal();
        for seed in 0..50 {
            let (drifted, digit) = inject_drift(&normal, seed).unwrap();
            assert!((6..=9).contains(&digit));
            assert_eq!(normal.diff(&drifted), vec![digit]);
            assert_eq!(drifted.class_of(digit), 0);
        }
    }

    #[test]
    fn drift_hits_every_candidate_eventually() {
        let normal = ConceptMap::normal();
        let mut seen: Vec<u8> = (0..200).map(|s| inject_drift(&normal, s).unwrap().1).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, vec![6, 7, 8, 9]);
    }

    #[test]
    fn single_candidate_is_forced() {
        let mut a = [0u8; N_DIGITS];
        a[9] = 1;
        let concept = ConceptMap::from_assignment(a).unwrap();
        for seed in 0..20 {
            let (drifted, digit) = inject_drift(&concept, seed).unwrap();
            assert_eq!(digit, 9);
            assert!(drifted.second_class_digits().is_empty());
        }
    }

    #[test]
    fn drift_without_second_class_is_rejected() {
        let concept = ConceptMap::from_assignment([0; N_DIGITS]).unwrap();
        assert!(matches!(
            inject_drift(&concept, 3),
            Err(Error::InvalidConcept(_))
        ));
    }

    #[test]
    fn relabel_changes_only_drifted_digit() {
        let samples: Vec<_> = (0..10).flat_map(|d| [sample(d), sample(d)]).collect();
        let (drifted, digit) = inject_drift(&ConceptMap::normal(), 11).unwrap();
        let out = relabel(&samples, &drifted);
        for (before, after) in samples.iter().zip(&out) {
            assert_eq!(before.digit, after.digit);
            assert!(before.same_instance(after));
            if before.digit == digit {
                assert_ne!(before.class_label, after.class_label);
            } else {
                assert_eq!(before.class_label, after.class_label);
            }
        }
    }

    #[test]
    fn relabel_with_current_concept_is_identity_and_idempotent() {
        let samples: Vec<_> = (0..10).map(sample).collect();
        let normal = ConceptMap::normal();
        assert_eq!(relabel(&samples, &normal), samples);
        let (drifted, _) = inject_drift(&normal, 5).unwrap();
        let once = relabel(&samples, &drifted);
        assert_eq!(relabel(&once, &drifted), once);
    }

    #[test]
    fn sample_rejects_wrong_length_and_digit() {
        let c = ConceptMap::normal();
        assert!(DigitSample::from_bytes(vec![0u8; 10], 1, &c).is_err());
        assert!(DigitSample::from_bytes(vec![0u8; PIXELS], 10, &c).is_err());
    }

    #[test]
    fn pixels_scale_into_unit_interval() {
        let mut raw = vec![0u8; PIXELS];
        raw[0] = 255;
        raw[1] = 51;
        let s = DigitSample::from_bytes(raw, 2, &ConceptMap::normal()).unwrap();
        assert!((s.pixel(1) - 0.2).abs() < 1e-15);
        assert!((s.pixel(0) - 1.0).abs() < 1e-15);
        assert!(s.pixels().all(|p| (0.0..=1.0).contains(&p)));
    }
}
