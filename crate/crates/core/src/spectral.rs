//! Two-dimensional FFT primitives and frequency-domain convolution.
//!
//! Transforms are unnormalized in the forward direction and scaled by
//! `1/(H*W)` in the inverse direction, so `ifft2(fft2(x)) == x`. Any
//! `H x W` shape is accepted; non-power-of-two lengths are handled by the
//! planner (mixed radix, Rader or Bluestein as appropriate).
//!
//! [`spectral_conv`] computes true circular convolution on the `H x W`
//! torus. Convolution layers in most frameworks compute cross-correlation;
//! pass [`KernelTensor::point_reflected`] to get that instead.

use std::cell::RefCell;
use std::fmt;

use realfft::RealFftPlanner;
use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// Largest imaginary component tolerated in a spectral convolution output
/// before the result is considered broken.
pub const IMAG_RESIDUAL_LIMIT: f64 = 1e-8;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static REAL_PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

/// Dense real matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(rows, cols, data.len())?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    /// Single nonzero entry of value 1 at `(row, col)`.
    pub fn impulse(rows: usize, cols: usize, row: usize, col: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.set(row, col, 1.0);
        m
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_fn(rows, cols, |_, _| value)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &RealMatrix) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Circular shift moving the origin to `(rows/2, cols/2)`.
    pub fn fftshift(&self) -> RealMatrix {
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: shift_quadrants(&self.data, self.rows, self.cols),
        }
    }

    pub fn to_complex(&self) -> ComplexMatrix {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

impl fmt::Debug for RealMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RealMatrix {}x{} [", self.rows, self.cols)?;
        for row in self.data.chunks(self.cols) {
            writeln!(f, "  {:?}", row)?;
        }
        write!(f, "]")
    }
}

/// Dense complex matrix, row-major. Holds spectra.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        check_dims(rows, cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Element-wise magnitude.
    pub fn abs(&self) -> RealMatrix {
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| magnitude(z)).collect(),
        }
    }

    pub fn re(&self) -> RealMatrix {
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.re).collect(),
        }
    }

    /// Largest absolute imaginary component.
    pub fn max_imag(&self) -> f64 {
        self.data.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }
}

fn check_dims(rows: usize, cols: usize, len: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::Shape(format!(
            "matrix dimensions must be positive, got {rows}x{cols}"
        )));
    }
    if rows * cols != len {
        return Err(Error::Shape(format!(
            "{rows}x{cols} matrix needs {} values, got {len}",
            rows * cols
        )));
    }
    Ok(())
}

fn shift_quadrants<T: Copy>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    shift_map(data, rows, cols, |v| v)
}

/// Circular shift by `(rows/2, cols/2)` combined with an elementwise map,
/// copying whole row segments.
fn shift_map<T: Copy, U: Copy>(data: &[T], rows: usize, cols: usize, f: impl Fn(T) -> U) -> Vec<U> {
    let (dr, dc) = (rows / 2, cols / 2);
    let mut out = Vec::with_capacity(rows * cols);
    for tr in 0..rows {
        let src = &data[((tr + rows - dr) % rows) * cols..][..cols];
        let split = cols - dc;
        out.extend(src[split..].iter().map(|&v| f(v)));
        out.extend(src[..split].iter().map(|&v| f(v)));
    }
    out
}

const TILE: usize = 32;

fn transpose_into(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

fn transform_2d(data: &mut [Complex64], rows: usize, cols: usize, direction: FftDirection) {
    let (row_fft, col_fft) = PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        (planner.plan_fft(cols, direction), planner.plan_fft(rows, direction))
    });
    row_fft.process(data);
    let mut transposed = vec![Complex64::new(0.0, 0.0); rows * cols];
    transpose_into(data, &mut transposed, rows, cols);
    col_fft.process(&mut transposed);
    transpose_into(&transposed, data, cols, rows);
}

/// `|z|` without the overflow guard of `hypot`; spectra of finite f32 data
/// stay far from the f64 range limits.
#[inline]
pub fn magnitude(z: Complex64) -> f64 {
    (z.re * z.re + z.im * z.im).sqrt()
}

/// Columns per strip in `for_each_half_column`; a strip of 1024-point
/// columns stays within a typical L2 cache.
const STRIP: usize = 16;

/// Visits the stored half of the unshifted spectrum of a real matrix,
/// column by column: `f(c, column)` receives bin `(r, c)` at `column[r]` for
/// `c` in `0..=cols/2`. The remaining columns follow from Hermitian symmetry,
/// `X(r, c) = conj X(-r, -c)`.
///
/// Never materializes the full spectrum; intended for reductions over
/// magnitudes of large slices.
pub fn for_each_half_column(m: &RealMatrix, mut f: impl FnMut(usize, &[Complex64])) {
    let (rows, cols) = (m.rows, m.cols);
    let half_cols = cols / 2 + 1;
    let row_fft = REAL_PLANNER.with(|p| p.borrow_mut().plan_fft_forward(cols));
    let col_fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(rows));

    let mut half = vec![Complex64::new(0.0, 0.0); rows * half_cols];
    let mut row_in = row_fft.make_input_vec();
    let mut row_scratch = row_fft.make_scratch_vec();
    for (r, out) in half.chunks_exact_mut(half_cols).enumerate() {
        row_in.copy_from_slice(&m.data[r * cols..(r + 1) * cols]);
        row_fft
            .process_with_scratch(&mut row_in, out, &mut row_scratch)
            .expect("buffer lengths come from the plan");
    }

    let mut strip = vec![Complex64::new(0.0, 0.0); STRIP * rows];
    let mut col_scratch = vec![Complex64::new(0.0, 0.0); col_fft.get_inplace_scratch_len()];
    for c0 in (0..half_cols).step_by(STRIP) {
        let k = STRIP.min(half_cols - c0);
        for (r, row) in half.chunks_exact(half_cols).enumerate() {
            for (j, &z) in row[c0..c0 + k].iter().enumerate() {
                strip[j * rows + r] = z;
            }
        }
        col_fft.process_with_scratch(&mut strip[..k * rows], &mut col_scratch);
        for (j, column) in strip[..k * rows].chunks_exact(rows).enumerate() {
            f(c0 + j, column);
        }
    }
}

/// Unnormalized forward 2D DFT of a real matrix.
pub fn fft2(m: &RealMatrix) -> ComplexMatrix {
    let mut spectrum = m.to_complex();
    transform_2d(&mut spectrum.data, m.rows, m.cols, FftDirection::Forward);
    spectrum
}

/// Unnormalized forward 2D DFT of a complex matrix.
pub fn fft2_complex(m: &ComplexMatrix) -> ComplexMatrix {
    let mut spectrum = m.clone();
    transform_2d(&mut spectrum.data, m.rows, m.cols, FftDirection::Forward);
    spectrum
}

/// Inverse 2D DFT, scaled by `1/(rows*cols)`.
pub fn ifft2(m: &ComplexMatrix) -> ComplexMatrix {
    let mut out = m.clone();
    transform_2d(&mut out.data, m.rows, m.cols, FftDirection::Inverse);
    let scale = 1.0 / (m.rows * m.cols) as f64;
    for z in out.data.iter_mut() {
        *z *= scale;
    }
    out
}

/// Swaps quadrants so the DC bin lands at `(rows/2, cols/2)`.
pub fn fftshift(m: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix {
        rows: m.rows,
        cols: m.cols,
        data: shift_quadrants(&m.data, m.rows, m.cols),
    }
}

/// Magnitude of the centered spectrum, `abs(fftshift(fft2(m)))`.
pub fn energy_map(m: &RealMatrix) -> RealMatrix {
    let spectrum = fft2(m);
    RealMatrix {
        rows: m.rows,
        cols: m.cols,
        data: shift_map(&spectrum.data, m.rows, m.cols, magnitude),
    }
}

/// Convolution weights of one layer, indexed `[u, v, input, output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTensor {
    size: usize,
    inputs: usize,
    outputs: usize,
    data: Vec<f64>,
}

impl KernelTensor {
    /// `data` is row-major `size x size x inputs x outputs` (output index fastest).
    pub fn new(size: usize, inputs: usize, outputs: usize, data: Vec<f64>) -> Result<Self> {
        if size == 0 || inputs == 0 || outputs == 0 {
            return Err(Error::Shape(format!(
                "kernel dimensions must be positive, got {size}x{size}x{inputs}x{outputs}"
            )));
        }
        let expected = size * size * inputs * outputs;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "kernel {size}x{size}x{inputs}x{outputs} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            size,
            inputs,
            outputs,
            data,
        })
    }

    pub fn from_fn(
        size: usize,
        inputs: usize,
        outputs: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(size * size * inputs * outputs);
        for u in 0..size {
            for v in 0..size {
                for i in 0..inputs {
                    for j in 0..outputs {
                        data.push(f(u, v, i, j));
                    }
                }
            }
        }
        Self {
            size,
            inputs,
            outputs,
            data,
        }
    }

    /// Spatial size `D`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Input channel count `S`.
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// Output channel count `T`.
    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, u: usize, v: usize, i: usize, j: usize) -> usize {
        ((u * self.size + v) * self.inputs + i) * self.outputs + j
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, i: usize, j: usize) -> f64 {
        self.data[self.offset(u, v, i, j)]
    }

    /// The `D x D` spatial slice connecting input `i` to output `j`.
    pub fn slice(&self, i: usize, j: usize) -> RealMatrix {
        RealMatrix::from_fn(self.size, self.size, |u, v| self.get(u, v, i, j))
    }

    /// Kernel rotated by 180 degrees. Convolving with the reflected kernel is
    /// cross-correlation with the original.
    pub fn point_reflected(&self) -> KernelTensor {
        let last = self.size - 1;
        KernelTensor::from_fn(self.size, self.inputs, self.outputs, |u, v, i, j| {
            self.get(last - u, last - v, i, j)
        })
    }
}

/// Kernel embedded on an `H x W` torus, one slice per (input, output) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandedKernel {
    inputs: usize,
    outputs: usize,
    slices: Vec<RealMatrix>,
}

impl ExpandedKernel {
    pub fn height(&self) -> usize {
        self.slices[0].rows()
    }

    pub fn width(&self) -> usize {
        self.slices[0].cols()
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn slice(&self, i: usize, j: usize) -> &RealMatrix {
        &self.slices[i * self.outputs + j]
    }

    pub fn get(&self, h: usize, w: usize, i: usize, j: usize) -> f64 {
        self.slice(i, j).get(h, w)
    }
}

/// Embeds each `D x D` slice on the `height x width` torus: tap `(u, v)` lands
/// at `((u - c) mod height, (v - c) mod width)` with `c = D / 2`, so the kernel
/// center sits on the origin.
pub fn expand_kernel(k: &KernelTensor, height: usize, width: usize) -> Result<ExpandedKernel> {
    let d = k.size;
    if d.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel size {d} is even; only odd sizes have a well-defined center"
        )));
    }
    if d > height.min(width) {
        return Err(Error::InvalidArgument(format!(
            "kernel size {d} exceeds feature map {height}x{width}"
        )));
    }
    let c = d / 2;
    let mut slices = Vec::with_capacity(k.inputs * k.outputs);
    for i in 0..k.inputs {
        for j in 0..k.outputs {
            let mut slice = RealMatrix::zeros(height, width);
            for u in 0..d {
                let h = (u + height - c) % height;
                for v in 0..d {
                    let w = (v + width - c) % width;
                    slice.set(h, w, k.get(u, v, i, j));
                }
            }
            slices.push(slice);
        }
    }
    Ok(ExpandedKernel {
        inputs: k.inputs,
        outputs: k.outputs,
        slices,
    })
}

/// Circular convolution of a multi-channel input with `k`, evaluated as a
/// sum of pointwise spectral products followed by one inverse transform per
/// output channel.
pub fn spectral_conv(x: &[RealMatrix], k: &KernelTensor) -> Result<Vec<RealMatrix>> {
    if x.len() != k.inputs {
        return Err(Error::Shape(format!(
            "input has {} channels but kernel expects {}",
            x.len(),
            k.inputs
        )));
    }
    let (height, width) = x[0].dims();
    if let Some(bad) = x.iter().position(|m| m.dims() != (height, width)) {
        return Err(Error::Shape(format!(
            "input channel {bad} is {}x{}, expected {height}x{width}",
            x[bad].rows(),
            x[bad].cols()
        )));
    }
    let expanded = expand_kernel(k, height, width)?;
    let input_spectra: Vec<ComplexMatrix> = x.iter().map(fft2).collect();

    let mut out = Vec::with_capacity(k.outputs);
    for j in 0..k.outputs {
        let mut acc = ComplexMatrix::zeros(height, width);
        for (i, xs) in input_spectra.iter().enumerate() {
            let ks = fft2(expanded.slice(i, j));
            for ((a, kv), xv) in acc.data.iter_mut().zip(&ks.data).zip(&xs.data) {
                *a += kv * xv;
            }
        }
        let spatial = ifft2(&acc);
        let residual = spatial.max_imag();
        if residual > IMAG_RESIDUAL_LIMIT {
            return Err(Error::ImaginaryResidual {
                channel: j,
                residual,
                limit: IMAG_RESIDUAL_LIMIT,
            });
        }
        out.push(spatial.re());
    }
    Ok(out)
}
