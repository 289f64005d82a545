//! Randomized check that the spectral convolution agrees with direct
//! circular convolution in the spatial domain.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::spectral::{spectral_conv, KernelTensor, RealMatrix};
use crate::synth;

pub const CONV_TOLERANCE: f64 = 1e-6;

const KERNEL_SIZES: [usize; 3] = [1, 3, 5];

/// `y[j][p, q] = sum_i sum_{u,v} k[u, v, i, j] * x[i][p - u + c, q - v + c]`
/// with indices taken modulo the map size and `c = D / 2`.
pub fn circular_conv_direct(x: &[RealMatrix], k: &KernelTensor) -> Result<Vec<RealMatrix>> {
    if x.len() != k.inputs() {
        return Err(Error::Shape(format!(
            "input has {} channels but kernel expects {}",
            x.len(),
            k.inputs()
        )));
    }
    let (h, w) = x[0].dims();
    let d = k.size();
    let c = d / 2;
    let out = (0..k.outputs())
        .map(|j| {
            RealMatrix::from_fn(h, w, |p, q| {
                let mut acc = 0.0;
                for (i, xi) in x.iter().enumerate() {
                    for u in 0..d {
                        let r = (p + c + h * d - u) % h;
                        for v in 0..d {
                            let s = (q + c + w * d - v) % w;
                            acc += k.get(u, v, i, j) * xi.get(r, s);
                        }
                    }
                }
                acc
            })
        })
        .collect();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvTrial {
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
    pub max_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: Vec<ConvTrial>,
    pub tolerance: f64,
}

impl VerifyReport {
    pub fn max_err(&self) -> f64 {
        self.trials.iter().map(|t| t.max_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> usize {
        self.trials.iter().filter(|t| t.max_err.is_nan() || t.max_err > self.tolerance).count()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "spectral vs direct circular convolution").unwrap();
        writeln!(s, "seed: {}", self.seed).unwrap();
        writeln!(s, "trials: {}", self.trials.len()).unwrap();
        if let Some(worst) = self
            .trials
            .iter()
            .max_by(|a, b| a.max_err.total_cmp(&b.max_err))
        {
            writeln!(
                s,
                "worst: S={} T={} D={} H={} W={}",
                worst.inputs, worst.outputs, worst.kernel, worst.height, worst.width
            )
            .unwrap();
        }
        writeln!(s, "max_err: {:.3e}", self.max_err()).unwrap();
        writeln!(s, "tolerance: {:.0e}", self.tolerance).unwrap();
        writeln!(s, "failures: {}", self.failures()).unwrap();
        writeln!(s, "status: {}", if self.passed() { "PASS" } else { "FAIL" }).unwrap();
        s
    }
}

/// Runs `trials` random configurations with `S, T` in `1..=4`, `H, W` in
/// `4..=32` and `D` drawn from `{1, 3, 5}` among sizes that fit the map.
pub fn verify_conv(seed: u64, trials: usize) -> Result<VerifyReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut rng = synth::rng(seed);
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let inputs = rng.random_range(1..=4);
        let outputs = rng.random_range(1..=4);
        let height = rng.random_range(4..=32);
        let width = rng.random_range(4..=32);
        let fitting: Vec<usize> = KERNEL_SIZES
            .iter()
            .copied()
            .filter(|&d| d <= height.min(width))
            .collect();
        let kernel = fitting[rng.random_range(0..fitting.len())];

        let x: Vec<RealMatrix> = (0..inputs)
            .map(|_| synth::uniform_matrix(&mut rng, height, width))
            .collect();
        let k = synth::uniform_kernel(&mut rng, kernel, inputs, outputs);
        let fast = spectral_conv(&x, &k)?;
        let slow = circular_conv_direct(&x, &k)?;
        let max_err = fast
            .iter()
            .zip(&slow)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        out.push(ConvTrial {
            inputs,
            outputs,
            kernel,
            height,
            width,
            max_err,
        });
    }
    Ok(VerifyReport {
        seed,
        trials: out,
        tolerance: CONV_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_identity() {
        let mut g = synth::rng(1);
        let x = synth::uniform_matrix(&mut g, 5, 7);
        let k = KernelTensor::from_fn(3, 1, 1, |u, v, _, _| if (u, v) == (1, 1) { 1.0 } else { 0.0 });
        let y = circular_conv_direct(std::slice::from_ref(&x), &k).unwrap();
        assert_eq!(y[0], x);
    }

    #[test]
    fn small_run_passes_and_is_deterministic() {
        let a = verify_conv(7, 20).unwrap();
        assert!(a.passed(), "{}", a.render());
        assert_eq!(a.render(), verify_conv(7, 20).unwrap().render());
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(matches!(verify_conv(1, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn reflected_kernel_gives_cross_correlation() {
        let mut g = synth::rng(3);
        let x = synth::uniform_matrix(&mut g, 8, 9);
        let k = synth::uniform_kernel(&mut g, 3, 1, 1);
        let y = spectral_conv(std::slice::from_ref(&x), &k.point_reflected()).unwrap();
        let corr = RealMatrix::from_fn(8, 9, |p, q| {
            let mut acc = 0.0;
            for u in 0..3 {
                for v in 0..3 {
                    acc += k.get(u, v, 0, 0) * x.get((p + u + 8 - 1) % 8, (q + v + 9 - 1) % 9);
                }
            }
            acc
        });
        assert!(y[0].max_abs_diff(&corr) < 1e-12);
    }
}
