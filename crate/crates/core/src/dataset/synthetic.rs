//! Synthetic stand-in for the digit dataset.
//!
//! Each digit is a seven-segment glyph plus a small digit-specific marker
//! block along the bottom edge. The markers do not overlap each other or the
//! glyph, so the ten templates are affinely independent and any labeling of
//! digits into two classes is linearly separable. Samples add uniform noise
//! in `[-0.1, 0.1]` to the template and clamp back into `[0, 1]`.

use rand::Rng;

use super::{ConceptMap, DigitSample, IMAGE_COLS, N_DIGITS, PIXELS};
use crate::rng;

const INK: f64 = 0.8;
const NOISE: f64 = 0.1;

// Segments a..g as (row0, row1, col0, col1), inclusive-exclusive.
const SEGMENTS: [(usize, usize, usize, usize); 7] = [
    (3, 5, 8, 20),   // a: top
    (3, 14, 18, 20), // b: upper right
    (13, 24, 18, 20), // c: lower right
    (22, 24, 8, 20), // d: bottom
    (13, 24, 8, 10), // e: lower left
    (3, 14, 8, 10),  // f: upper left
    (13, 15, 8, 20), // g: middle
];

// Bit i set = segment i lit.
const GLYPHS: [u8; N_DIGITS] = [
    0b011_1111, // 0: a b c d e f
    0b000_0110, // 1: b c
    0b101_1011, // 2: a b d e g
    0b100_1111, // 3: a b c d g
    0b110_0110, // 4: b c f g
    0b110_1101, // 5: a c d f g
    0b111_1101, // 6: a c d e f g
    0b000_0111, // 7: a b c
    0b111_1111, // 8: all
    0b110_1111, // 9: a b c d f g
];

/// Noise-free template for `digit`, values in `[0, 1]`.
pub fn template(digit: u8) -> Vec<f64> {
    let mut img = vec![0.0; PIXELS];
    let mut fill = |r0: usize, r1: usize, c0: usize, c1: usize| {
        for r in r0..r1 {
            for c in c0..c1 {
                img[r * IMAGE_COLS + c] = INK;
            }
        }
    };
    for (bit, &(r0, r1, c0, c1)) in SEGMENTS.iter().enumerate() {
        if GLYPHS[digit as usize] >> bit & 1 == 1 {
            fill(r0, r1, c0, c1);
        }
    }
    let col = 2 + 2 * digit as usize + digit as usize / 2;
    fill(25, 27, col, col + 2);
    img
}

/// `n_per_digit` noisy samples of every digit, grouped by digit, labeled with
/// the normal concept. Deterministic in `seed`.
pub fn generate_synthetic(n_per_digit: usize, seed: u64) -> Vec<DigitSample> {
    let concept = ConceptMap::normal();
    let mut out = Vec::with_capacity(n_per_digit * N_DIGITS);
    for digit in 0..N_DIGITS as u8 {
        let base = template(digit);
        let mut rng = rng::rng_for(seed, &[rng::stream::SYNTHETIC, u64::from(digit)]);
        for _ in 0..n_per_digit {
            let bytes: Vec<u8> = base
                .iter()
                .map(|&v| {
                    let noisy = (v + rng.gen_range(-NOISE..=NOISE)).clamp(0.0, 1.0);
                    (noisy * 255.0).round() as u8
                })
                .collect();
            out.push(
                DigitSample::from_bytes(bytes, digit, &concept)
                    .expect("synthetic sample has valid geometry"),
            );
        }
    }
    out
}
