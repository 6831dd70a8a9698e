//! Non-IID partitioning of a sample pool across federated nodes.
//!
//! Partitions are drawn without replacement from a shuffled per-digit pool,
//! so they are disjoint across nodes and across successive draws from the
//! same [`DigitPool`].

use rand::seq::SliceRandom;
use rand::Rng;

use super::{DigitSample, N_DIGITS};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub struct NodePartition {
    pub node_id: usize,
    pub samples: Vec<DigitSample>,
    pub per_digit_counts: [usize; N_DIGITS],
}

impl NodePartition {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn digits_present(&self) -> Vec<u8> {
        (0..N_DIGITS as u8)
            .filter(|&d| self.per_digit_counts[d as usize] > 0)
            .collect()
    }
}

/// Per-digit queues of samples, shuffled once and consumed front to back.
#[derive(Debug, Clone)]
pub struct DigitPool {
    by_digit: [Vec<DigitSample>; N_DIGITS],
    cursor: [usize; N_DIGITS],
}

impl DigitPool {
    pub fn new(samples: &[DigitSample], seed: u64) -> Self {
        let mut by_digit: [Vec<DigitSample>; N_DIGITS] = Default::default();
        for s in samples {
            by_digit[s.digit as usize].push(s.clone());
        }
        for (digit, bucket) in by_digit.iter_mut().enumerate() {
            let mut rng = rng::rng_for(seed, &[rng::stream::PARTITION, digit as u64]);
            bucket.shuffle(&mut rng);
        }
        Self {
            by_digit,
            cursor: [0; N_DIGITS],
        }
    }

    pub fn remaining(&self, digit: u8) -> usize {
        self.by_digit[digit as usize].len() - self.cursor[digit as usize]
    }

    pub fn take(&mut self, digit: u8, count: usize) -> Result<Vec<DigitSample>> {
        let available = self.remaining(digit);
        if count > available {
            return Err(Error::Capacity {
                digit,
                requested: count,
                available,
            });
        }
        let start = self.cursor[digit as usize];
        self.cursor[digit as usize] += count;
        Ok(self.by_digit[digit as usize][start..start + count].to_vec())
    }
}

/// Draws one partition per row of `counts` (node `i` gets `counts[i][d]`
/// samples of digit `d`). Capacity is checked up front so a failed request
/// leaves the pool untouched.
pub fn draw_partitions(
    pool: &mut DigitPool,
    counts: &[[usize; N_DIGITS]],
) -> Result<Vec<NodePartition>> {
    for digit in 0..N_DIGITS as u8 {
        let requested: usize = counts.iter().map(|c| c[digit as usize]).sum();
        let available = pool.remaining(digit);
        if requested > available {
            return Err(Error::Capacity {
                digit,
                requested,
                available,
            });
        }
    }
    counts
        .iter()
        .enumerate()
        .map(|(node_id, per_digit)| {
            let mut samples = Vec::with_capacity(per_digit.iter().sum());
            for digit in 0..N_DIGITS as u8 {
                samples.extend(pool.take(digit, per_digit[digit as usize])?);
            }
            Ok(NodePartition {
                node_id,
                samples,
                per_digit_counts: *per_digit,
            })
        })
        .collect()
}

/// Count table for the single-digit scenario: node `i` holds only digit `i`.
pub fn single_digit_counts(n_nodes: usize, samples_per_node: usize) -> Result<Vec<[usize; N_DIGITS]>> {
    if n_nodes > N_DIGITS {
        return Err(Error::Precondition(format!(
            "single-digit partitioning supports at most {N_DIGITS} nodes, got {n_nodes}"
        )));
    }
    Ok((0..n_nodes)
        .map(|node| {
            let mut c = [0; N_DIGITS];
            c[node] = samples_per_node;
            c
        })
        .collect())
}

/// Count table for the random-mix scenario: every (node, digit) count is drawn
/// uniformly from `min_per_digit..=max_per_digit`.
pub fn random_mix_counts(
    n_nodes: usize,
    min_per_digit: usize,
    max_per_digit: usize,
    seed: u64,
) -> Result<Vec<[usize; N_DIGITS]>> {
    if min_per_digit > max_per_digit {
        return Err(Error::Precondition(format!(
            "min_per_digit {min_per_digit} exceeds max_per_digit {max_per_digit}"
        )));
    }
    Ok((0..n_nodes)
        .map(|node| {
            let mut rng = rng::rng_for(seed, &[rng::stream::PARTITION, 100 + node as u64]);
            let mut c = [0; N_DIGITS];
            for slot in c.iter_mut() {
                *slot = rng.gen_range(min_per_digit..=max_per_digit);
            }
            c
        })
        .collect())
}

pub fn partition_single_digit(
    samples: &[DigitSample],
    n_nodes: usize,
    samples_per_node: usize,
    seed: u64,
) -> Result<Vec<NodePartition>> {
    let counts = single_digit_counts(n_nodes, samples_per_node)?;
    draw_partitions(&mut DigitPool::new(samples, seed), &counts)
}

pub fn partition_random_mix(
    samples: &[DigitSample],
    n_nodes: usize,
    min_per_digit: usize,
    max_per_digit: usize,
    seed: u64,
) -> Result<Vec<NodePartition>> {
    let counts = random_mix_counts(n_nodes, min_per_digit, max_per_digit, seed)?;
    draw_partitions(&mut DigitPool::new(samples, seed), &counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;
    use proptest::prelude::*;

    fn assert_no_shared_instances(parts: &[NodePartition]) {
        let all: Vec<&DigitSample> = parts.iter().flat_map(|p| &p.samples).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert!(!all[i].same_instance(all[j]), "sample reused");
            }
        }
    }

    #[test]
    fn single_digit_ten_nodes() {
        let pool = generate_synthetic(1000, 1);
        let parts = partition_single_digit(&pool, 10, 1000, 4).unwrap();
        assert_eq!(parts.len(), 10);
        for (i, p) in parts.iter().enumerate() {
            assert_eq!(p.node_id, i);
            assert_eq!(p.len(), 1000);
            assert_eq!(p.digits_present(), vec![i as u8]);
            assert!(p.samples.iter().all(|s| s.digit == i as u8));
            assert_eq!(p.per_digit_counts.iter().sum::<usize>(), p.len());
        }
    }

    #[test]
    fn single_digit_minimal() {
        let pool = generate_synthetic(1, 1);
        let parts = partition_single_digit(&pool, 1, 1, 0).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].samples.len(), 1);
        assert_eq!(parts[0].samples[0].digit, 0);
    }

    #[test]
    fn single_digit_capacity_error() {
        let pool = generate_synthetic(5, 1);
        assert!(matches!(
            partition_single_digit(&pool, 3, 6, 0),
            Err(Error::Capacity { .. })
        ));
        assert!(matches!(
            partition_single_digit(&pool, 11, 1, 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn random_mix_totals_are_bounded() {
        let pool = generate_synthetic(2600, 2);
        let parts = partition_random_mix(&pool, 5, 100, 500, 9).unwrap();
        for p in &parts {
            assert!((1000..=5000).contains(&p.len()));
            assert!(p.per_digit_counts.iter().all(|&c| (100..=500).contains(&c)));
            assert_eq!(p.per_digit_counts.iter().sum::<usize>(), p.len());
        }
        assert_no_shared_instances(&parts);
    }

    #[test]
    fn random_mix_degenerate_range() {
        let pool = generate_synthetic(300, 2);
        let parts = partition_random_mix(&pool, 3, 100, 100, 1).unwrap();
        for p in &parts {
            assert_eq!(p.len(), 1000);
            assert_eq!(p.per_digit_counts, [100; N_DIGITS]);
        }
    }

    #[test]
    fn random_mix_is_deterministic() {
        let pool = generate_synthetic(400, 2);
        let a = partition_random_mix(&pool, 4, 10, 90, 33).unwrap();
        let b = partition_random_mix(&pool, 4, 10, 90, 33).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.per_digit_counts, y.per_digit_counts);
            assert!(x.samples.iter().zip(&y.samples).all(|(s, t)| s.same_instance(t)));
        }
    }

    #[test]
    fn random_mix_rejects_inverted_range() {
        let pool = generate_synthetic(10, 2);
        assert!(partition_random_mix(&pool, 2, 5, 4, 0).is_err());
    }

    #[test]
    fn successive_draws_are_disjoint() {
        let samples = generate_synthetic(60, 3);
        let mut pool = DigitPool::new(&samples, 8);
        let counts = random_mix_counts(3, 5, 10, 8).unwrap();
        let mut first = draw_partitions(&mut pool, &counts).unwrap();
        let second = draw_partitions(&mut pool, &counts).unwrap();
        first.extend(second);
        assert_no_shared_instances(&first);
    }

    #[test]
    fn failed_draw_leaves_pool_untouched() {
        let samples = generate_synthetic(10, 3);
        let mut pool = DigitPool::new(&samples, 8);
        let mut too_many = [1; N_DIGITS];
        too_many[9] = 11;
        assert!(draw_partitions(&mut pool, &[too_many]).is_err());
        assert_eq!(pool.remaining(0), 10);
    }

    proptest! {
        #[test]
        fn partitions_never_exceed_requested_counts(
            min in 0usize..6, span in 0usize..6, nodes in 1usize..5, seed in any::<u64>()
        ) {
            let pool = generate_synthetic(60, 5);
            let parts = partition_random_mix(&pool, nodes, min, min + span, seed).unwrap();
            for p in &parts {
                let mut seen = [0usize; N_DIGITS];
                for s in &p.samples { seen[s.digit as usize] += 1; }
                prop_assert_eq!(seen, p.per_digit_counts);
                prop_assert!(p.per_digit_counts.iter().all(|&c| c >= min && c <= min + span));
            }
        }
    }
}
