//! Seeded synthetic data: random slices, kernels, and channels of known rank.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::importance::FeatureMapBatch;
use crate::spectral::{KernelTensor, RealMatrix};

pub type SynthRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SynthRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in `[-1, 1)`.
pub fn uniform_matrix(rng: &mut SynthRng, rows: usize, cols: usize) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn gaussian_matrix(rng: &mut SynthRng, rows: usize, cols: usize) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn matmul(a: &RealMatrix, b: &RealMatrix) -> RealMatrix {
    assert_eq!(a.cols(), b.rows(), "inner dimensions differ");
    RealMatrix::from_fn(a.rows(), b.cols(), |r, c| {
        (0..a.cols()).map(|k| a.get(r, k) * b.get(k, c)).sum()
    })
}

/// Product of Gaussian `rows x rank` and `rank x cols` factors.
pub fn low_rank_matrix(rng: &mut SynthRng, rows: usize, cols: usize, rank: usize) -> RealMatrix {
    if rank == 0 {
        return RealMatrix::zeros(rows, cols);
    }
    let a = gaussian_matrix(rng, rows, rank);
    let b = gaussian_matrix(rng, rank, cols);
    matmul(&a, &b)
}

pub fn uniform_kernel(rng: &mut SynthRng, size: usize, inputs: usize, outputs: usize) -> KernelTensor {
    KernelTensor::from_fn(size, inputs, outputs, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Real Fourier basis of length `n` ordered by frequency: the constant,
/// then cosine and sine at frequency 1, 2, ... (sine dropped at Nyquist).
/// Returns `n` mutually orthogonal vectors as the columns of an `n x n`
/// matrix.
pub fn fourier_basis(n: usize) -> RealMatrix {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n);
    columns.push(vec![1.0; n]);
    let mut f = 1;
    while columns.len() < n {
        let w = 2.0 * std::f64::consts::PI * f as f64 / n as f64;
        columns.push((0..n).map(|p| (w * p as f64).cos()).collect());
        if columns.len() < n && 2 * f != n {
            columns.push((0..n).map(|p| (w * p as f64).sin()).collect());
        }
        f += 1;
    }
    RealMatrix::from_fn(n, n, |r, c| columns[c][r])
}

/// A slice of exact rank `rank` whose row and column spaces are spanned by
/// the `rank` lowest-frequency Fourier vectors: a sum of `rank` random
/// rank-one terms `g_k h_k^T` with `g_k`, `h_k` drawn from those subspaces.
/// Higher rank spreads the spectrum further from DC.
pub fn low_frequency_slice(
    rng: &mut SynthRng,
    height: usize,
    width: usize,
    rank: usize,
) -> RealMatrix {
    assert!(rank <= height.min(width), "rank exceeds slice size");
    if rank == 0 {
        return RealMatrix::zeros(height, width);
    }
    let rows = fourier_basis(height);
    let cols = fourier_basis(width);
    let g = RealMatrix::from_fn(height, rank, |r, k| rows.get(r, k));
    let h = RealMatrix::from_fn(rank, width, |k, c| cols.get(c, k));
    let mix = gaussian_matrix(rng, rank, rank);
    matmul(&matmul(&g, &mix), &h)
}

/// One channel per entry of `ranks`, each sample drawn independently with
/// [`low_frequency_slice`] and scaled by a random positive factor.
pub fn controlled_rank_batch(
    rng: &mut SynthRng,
    batch: usize,
    ranks: &[usize],
    height: usize,
    width: usize,
) -> Result<FeatureMapBatch> {
    let slices: Vec<Vec<RealMatrix>> = (0..batch)
        .map(|_| {
            ranks
                .iter()
                .map(|&r| {
                    let scale = rng.random_range(0.5..2.0);
                    low_frequency_slice(rng, height, width, r).scaled(scale)
                })
                .collect()
        })
        .collect();
    FeatureMapBatch::from_slices(&slices)
}

/// `channels` ranks spread evenly over `1..=max_rank`.
pub fn spread_ranks(channels: usize, max_rank: usize) -> Vec<usize> {
    (0..channels).map(|j| 1 + j * max_rank / channels).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rank::numerical_rank;

    #[test]
    fn basis_is_orthogonal() {
        for n in [1, 2, 5, 8, 9] {
            let b = fourier_basis(n);
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..n).map(|p| b.get(p, i) * b.get(p, j)).sum();
                    if i == j {
                        assert!(dot > 0.4, "n={n} col {i} degenerate");
                    } else {
                        assert!(dot.abs() < 1e-10, "n={n} cols {i},{j}: {dot}");
                    }
                }
            }
        }
    }

    #[test]
    fn low_frequency_slices_have_requested_rank() {
        let mut g = rng(5);
        for r in 1..=16 {
            let s = low_frequency_slice(&mut g, 16, 16, r);
            assert_eq!(numerical_rank(&s).unwrap(), r, "rank {r}");
        }
    }

    #[test]
    fn low_rank_products() {
        let mut g = rng(6);
        for r in [0, 1, 4, 9] {
            let m = low_rank_matrix(&mut g, 12, 10, r);
            assert_eq!(numerical_rank(&m).unwrap(), r);
        }
    }

    #[test]
    fn spread_covers_range() {
        let r = spread_ranks(64, 32);
        assert_eq!(r.first(), Some(&1));
        assert_eq!(r.last(), Some(&32));
        assert!(r.windows(2).all(|w| w[0] <= w[1]));
    }
}
