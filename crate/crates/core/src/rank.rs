//! Numerical matrix rank via singular values.
//!
//! A singular value counts toward the rank when it exceeds
//! `max(rows, cols) * sigma_max * eps`, where `eps` is the machine epsilon of
//! the precision the data was produced in (`f64::EPSILON` unless stated).

use nalgebra::{ComplexField, DMatrix, SVD};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{ComplexMatrix, RealMatrix};

fn svd_values<T: ComplexField<RealField = f64>>(m: DMatrix<T>) -> Result<Vec<f64>> {
    let (rows, cols) = m.shape();
    let max_iter = 1000 * rows.max(cols);
    let svd = SVD::try_new_unordered(m, false, false, f64::EPSILON, max_iter)
        .ok_or(Error::SvdNoConvergence { rows, cols })?;
    Ok(svd.singular_values.iter().copied().collect())
}

pub fn singular_values(m: &RealMatrix) -> Result<Vec<f64>> {
    svd_values(DMatrix::from_row_slice(m.rows(), m.cols(), m.data()))
}

pub fn singular_values_complex(m: &ComplexMatrix) -> Result<Vec<f64>> {
    let data: Vec<Complex64> = m.data().to_vec();
    svd_values(DMatrix::from_row_slice(m.rows(), m.cols(), &data))
}

pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rank_tolerance_with_epsilon(rows, cols, sigma_max, f64::EPSILON)
}

pub fn rank_tolerance_with_epsilon(rows: usize, cols: usize, sigma_max: f64, epsilon: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * epsilon
}

/// Number of singular values above the default tolerance.
pub fn count_above_tolerance(values: &[f64], rows: usize, cols: usize) -> usize {
    count_above_tolerance_with_epsilon(values, rows, cols, f64::EPSILON)
}

pub fn count_above_tolerance_with_epsilon(
    values: &[f64],
    rows: usize,
    cols: usize,
    epsilon: f64,
) -> usize {
    let sigma_max = values.iter().copied().fold(0.0, f64::max);
    let tol = rank_tolerance_with_epsilon(rows, cols, sigma_max, epsilon);
    values.iter().filter(|&&s| s > tol).count()
}

pub fn numerical_rank(m: &RealMatrix) -> Result<usize> {
    numerical_rank_with_epsilon(m, f64::EPSILON)
}

/// Numerical rank of data that was produced at a precision with machine
/// epsilon `epsilon`, e.g. `f32::EPSILON` for single-precision dumps.
pub fn numerical_rank_with_epsilon(m: &RealMatrix, epsilon: f64) -> Result<usize> {
    let values = singular_values(m)?;
    Ok(count_above_tolerance_with_epsilon(&values, m.rows(), m.cols(), epsilon))
}

pub fn numerical_rank_complex(m: &ComplexMatrix) -> Result<usize> {
    let values = singular_values_complex(m)?;
    Ok(count_above_tolerance(&values, m.rows(), m.cols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_precision_data_needs_single_precision_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let u: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        // rank two, then rounded through f32 as a stored dump would be
        let m = RealMatrix::from_fn(12, 12, |r, c| {
            f64::from((u[r] * v[c] + w[r] * u[c]) as f32)
        });
        assert_eq!(numerical_rank_with_epsilon(&m, f64::from(f32::EPSILON)).unwrap(), 2);
        assert!(numerical_rank(&m).unwrap() > 2);
    }

    #[test]
    fn identity_is_full_rank() {
        let eye = RealMatrix::from_fn(8, 8, |r, c| if r == c { 1.0 } else { 0.0 });
        assert_eq!(numerical_rank(&eye).unwrap(), 8);
    }

    #[test]
    fn outer_product_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u: Vec<f64> = (0..9).map(|_| rng.random_range(0.5..2.0)).collect();
        let v: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..-0.5)).collect();
        let m = RealMatrix::from_fn(9, 7, |r, c| u[r] * v[c]);
        assert_eq!(numerical_rank(&m).unwrap(), 1);
    }

    #[test]
    fn duplicated_row_drops_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut m = RealMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        for c in 0..6 {
            let v = m.get(1, c);
            m.set(4, c, v);
        }
        let sv = singular_values(&m).unwrap();
        let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(smallest < 1e-12);
        assert_eq!(numerical_rank(&m).unwrap(), 5);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        assert_eq!(numerical_rank(&RealMatrix::zeros(4, 5)).unwrap(), 0);
    }

    #[test]
    fn complex_rank_of_real_matrix_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = RealMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let b = RealMatrix::from_fn(3, 10, |_, _| rng.random_range(-1.0..1.0));
        let m = RealMatrix::from_fn(10, 10, |r, c| (0..3).map(|k| a.get(r, k) * b.get(k, c)).sum());
        assert_eq!(numerical_rank(&m).unwrap(), 3);
        assert_eq!(numerical_rank_complex(&m.to_complex()).unwrap(), 3);
    }
}
