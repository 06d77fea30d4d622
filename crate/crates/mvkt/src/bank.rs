//! Per-training-sample embedding store for contrastive negatives.
//!
//! One row per training sample, always unit L2 norm. Rows are blended
//! toward fresh features with momentum `m` and renormalized:
//! `row <- (m * row + (1 - m) * f) / ||m * row + (1 - m) * f||`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diff::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MemoryBank<T> {
    rows: Vec<T>,
    num_samples: usize,
    dim: usize,
    momentum: T,
}

impl<T: Scalar> MemoryBank<T> {
    /// Bank of `num_samples` unit-normalized standard-normal rows.
    pub fn init(num_samples: usize, dim: usize, momentum: T, rng: &mut ChaCha8Rng) -> Self {
        assert!(num_samples >= 1, "bank needs at least one row");
        assert!(dim >= 1, "bank rows need at least one dimension");
        assert!(
            (T::zero()..=T::one()).contains(&momentum),
            "momentum must lie in [0, 1]"
        );
        let mut rows = vec![T::zero(); num_samples * dim];
        for row in rows.chunks_mut(dim) {
            let mut norm_sq = T::zero();
            for v in row.iter_mut() {
                let x: f64 = rng.sample(StandardNormal);
                *v = T::from_f64(x).unwrap();
                norm_sq += *v * *v;
            }
            let inv = T::one() / norm_sq.sqrt();
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        MemoryBank {
            rows,
            num_samples,
            dim,
            momentum,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn momentum(&self) -> T {
        self.momentum
    }

    pub fn row(&self, index: usize) -> &[T] {
        &self.rows[index * self.dim..(index + 1) * self.dim]
    }

    pub fn rows_flat(&self) -> &[T] {
        &self.rows
    }

    /// Rebuild a bank from stored rows (checkpoint restore).
    pub fn from_rows(rows: Vec<T>, dim: usize, momentum: T) -> Self {
        assert!(dim >= 1 && rows.len() % dim == 0);
        let num_samples = rows.len() / dim;
        MemoryBank {
            rows,
            num_samples,
            dim,
            momentum,
        }
    }

    /// Momentum-blend the given rows toward `features` (`k` unit rows,
    /// flattened). `m = 0` overwrites exactly, `m = 1` leaves rows
    /// untouched; both degenerate cases skip renormalization so they are
    /// bit-exact.
    pub fn update(&mut self, indices: &[usize], features: &[T]) -> Result<()> {
        assert_eq!(
            features.len(),
            indices.len() * self.dim,
            "features must be indices.len() x dim"
        );
        let mut seen = vec![false; self.num_samples];
        for &i in indices {
            if i >= self.num_samples {
                return Err(Error::IndexOutOfRange {
                    what: "bank row",
                    index: i,
                    limit: self.num_samples,
                });
            }
            if seen[i] {
                return Err(Error::DuplicateIndex { index: i });
            }
            seen[i] = true;
        }
        let m = self.momentum;
        if m == T::one() {
            return Ok(());
        }
        for (j, &i) in indices.iter().enumerate() {
            let f = &features[j * self.dim..(j + 1) * self.dim];
            let row = &mut self.rows[i * self.dim..(i + 1) * self.dim];
            if m == T::zero() {
                row.copy_from_slice(f);
                continue;
            }
            let mut norm_sq = T::zero();
            for (r, &fv) in row.iter_mut().zip(f.iter()) {
                *r = m * *r + (T::one() - m) * fv;
                norm_sq += *r * *r;
            }
            let inv = T::one() / norm_sq.sqrt();
            for r in row.iter_mut() {
                *r *= inv;
            }
        }
        Ok(())
    }

    /// `count` distinct rows drawn uniformly without replacement from the
    /// rows not in `exclude`. Returns copies, flattened `[count * dim]`.
    pub fn sample(&self, count: usize, exclude: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<T>> {
        let mut excluded = vec![false; self.num_samples];
        for &i in exclude {
            if i >= self.num_samples {
                return Err(Error::IndexOutOfRange {
                    what: "bank row",
                    index: i,
                    limit: self.num_samples,
                });
            }
            excluded[i] = true;
        }
        let mut candidates: Vec<usize> = (0..self.num_samples).filter(|&i| !excluded[i]).collect();
        if count > candidates.len() {
            return Err(Error::InsufficientRows {
                requested: count,
                available: candidates.len(),
            });
        }
        // Partial Fisher-Yates: the first `count` entries become the sample.
        for i in 0..count {
            let j = rng.random_range(i..candidates.len());
            candidates.swap(i, j);
        }
        let mut out = Vec::with_capacity(count * self.dim);
        for &i in &candidates[..count] {
            out.extend_from_slice(self.row(i));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, tag};
    use proptest::prelude::*;

    fn bank(n: usize, m: f32) -> MemoryBank<f32> {
        let mut rng = stream(11, tag::BANK_STUDENT);
        MemoryBank::init(n, 8, m, &mut rng)
    }

    fn unit_row(seedling: u64, dim: usize) -> Vec<f32> {
        let mut rng = stream(seedling, tag::BANK_TEACHER);
        let mut v: Vec<f32> = (0..dim)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                x as f32
            })
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    #[test]
    fn init_rows_are_unit_norm_and_distinct() {
        let b = bank(100, 0.5);
        for i in 0..100 {
            let n: f32 = b.row(i).iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
        for i in 0..100 {
            for j in i + 1..100 {
                let d: f32 = b.row(i).iter().zip(b.row(j)).map(|(a, b)| a * b).sum();
                assert!(d < 0.999, "rows {i} and {j} nearly identical (dot {d})");
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_banks() {
        let a = bank(16, 0.5);
        let b = bank(16, 0.5);
        assert_eq!(a.rows_flat(), b.rows_flat());
    }

    #[test]
    fn momentum_one_leaves_rows_bit_identical() {
        let mut b = bank(4, 1.0);
        let before = b.rows_flat().to_vec();
        b.update(&[1, 2], &unit_row(3, 16)).unwrap();
        assert_eq!(b.rows_flat(), &before[..]);
    }

    #[test]
    fn momentum_zero_overwrites_exactly() {
        let mut b = bank(4, 0.0);
        let f = unit_row(5, 8);
        b.update(&[2], &f).unwrap();
        assert_eq!(b.row(2), &f[..]);
    }

    #[test]
    fn half_momentum_blends_and_renormalizes() {
        let mut rng = stream(0, tag::BANK_STUDENT);
        let mut b = MemoryBank::<f64>::init(1, 4, 0.5, &mut rng);
        let e0 = [1.0, 0.0, 0.0, 0.0];
        b.update(&[0], &e0).unwrap();
        b.momentum = 0.0;
        b.update(&[0], &e0).unwrap();
        b.momentum = 0.5;
        let e1 = [0.0, 1.0, 0.0, 0.0];
        b.update(&[0], &e1).unwrap();
        let r = b.row(0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r[0] - s).abs() < 1e-12 && (r[1] - s).abs() < 1e-12);
    }

    #[test]
    fn update_rejects_duplicates_and_out_of_range() {
        let mut b = bank(4, 0.5);
        let f = [unit_row(1, 8), unit_row(2, 8)].concat();
        assert!(matches!(
            b.update(&[1, 1], &f),
            Err(Error::DuplicateIndex { index: 1 })
        ));
        assert!(matches!(
            b.update(&[1, 9], &f),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn update_touches_only_given_indices() {
        let mut b = bank(8, 0.5);
        let before = b.rows_flat().to_vec();
        b.update(&[3], &unit_row(7, 8)).unwrap();
        for i in 0..8 {
            if i == 3 {
                continue;
            }
            assert_eq!(b.row(i), &before[i * 8..(i + 1) * 8]);
        }
    }

    #[test]
    fn sample_exhausts_non_excluded_rows() {
        let b = bank(6, 0.5);
        let mut rng = stream(9, tag::NEGATIVES);
        let s = b.sample(4, &[1, 4], &mut rng).unwrap();
        assert_eq!(s.len(), 4 * 8);
        let mut seen: Vec<&[f32]> = s.chunks(8).collect();
        for i in [0usize, 2, 3, 5] {
            assert!(seen.iter().any(|r| *r == b.row(i)));
        }
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn excluded_rows_never_sampled() {
        let b = bank(10, 0.5);
        let mut rng = stream(13, tag::NEGATIVES);
        for _ in 0..1000 {
            let s = b.sample(1, &[7], &mut rng).unwrap();
            assert_ne!(&s[..], b.row(7));
        }
    }

    #[test]
    fn sample_is_deterministic_given_seed() {
        let b = bank(10, 0.5);
        let mut r1 = stream(21, tag::NEGATIVES);
        let mut r2 = stream(21, tag::NEGATIVES);
        assert_eq!(
            b.sample(5, &[0], &mut r1).unwrap(),
            b.sample(5, &[0], &mut r2).unwrap()
        );
    }

    #[test]
    fn sample_rejects_insufficient_rows() {
        let b = bank(4, 0.5);
        let mut rng = stream(1, tag::NEGATIVES);
        assert!(matches!(
            b.sample(4, &[0], &mut rng),
            Err(Error::InsufficientRows { .. })
        ));
    }

    #[test]
    fn sampling_is_uniform_over_rows() {
        let b = bank(10, 0.5);
        let mut rng = stream(33, tag::NEGATIVES);
        let mut counts = [0usize; 10];
        for _ in 0..100_000 {
            let s = b.sample(1, &[], &mut rng).unwrap();
            let idx = (0..10).find(|&i| b.row(i) == &s[..]).unwrap();
            counts[idx] += 1;
        }
        // binomial 5-sigma band around 10_000
        let sigma = (100_000.0f64 * 0.1 * 0.9).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - 10_000.0).abs() < 5.0 * sigma,
                "row {i} drawn {c} times"
            );
        }
    }

    proptest! {
        #[test]
        fn unit_norm_survives_random_update_sequences(seed in 0u64..1000) {
            let mut b = bank(8, 0.5);
            let mut rng = stream(seed, tag::NEGATIVES);
            for step in 0..40 {
                let idx = (rng.random_range(0..8usize) + step) % 8;
                b.update(&[idx], &unit_row(seed * 41 + step as u64, 8)).unwrap();
            }
            for i in 0..8 {
                let n: f32 = b.row(i).iter().map(|x| x * x).sum::<f32>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-5);
            }
        }
    }
}
