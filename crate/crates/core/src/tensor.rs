//! Image, kernel and spectrum containers.
//!
//! Images are stored row-major with interleaved channels: the value at row
//! `i`, column `j`, channel `c` lives at `(i * width + j) * channels + c`.
//! Kernels are single-channel grids whose center pixel
//! `(height / 2, width / 2)` plays the role of the origin.

use std::ops::Deref;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::simplex::project_simplex;

/// Tolerance on the kernel mass for [`BlurKernel`] validation.
pub const SIMPLEX_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "image dims must be >= 1");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds an image from row-major interleaved data, checking length and finiteness.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidTensor(format!(
                "dimensions must be >= 1, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidTensor(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!("non-finite value at index {pos}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Image with i.i.d. standard normal entries.
    pub fn random_normal<R: Rng + ?Sized>(
        height: usize,
        width: usize,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let mut out = Self::zeros(height, width, channels);
        for v in out.data.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Number of scalar entries, `H * W * C`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.dims() == other.dims()
    }

    pub fn check_same_shape(&self, other: &ImageTensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    /// Copies one channel out as a contiguous `H * W` plane.
    pub fn channel_plane(&self, channel: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn set_channel_plane(&mut self, channel: usize, plane: &[f64]) {
        debug_assert_eq!(plane.len(), self.height * self.width);
        let c = self.channels;
        for (dst, &src) in self.data.iter_mut().skip(channel).step_by(c).zip(plane) {
            *dst = src;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ImageTensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.data.iter_mut() {
            *v *= alpha;
        }
    }

    pub fn scaled(&self, alpha: f64) -> ImageTensor {
        self.map(|v| alpha * v)
    }

    /// `alpha * self + beta * other` as a new image.
    pub fn lincomb(&self, alpha: f64, other: &ImageTensor, beta: f64) -> ImageTensor {
        debug_assert!(self.same_shape(other));
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &ImageTensor) -> ImageTensor {
        self.lincomb(1.0, other, -1.0)
    }

    pub fn add(&self, other: &ImageTensor) -> ImageTensor {
        self.lincomb(1.0, other, 1.0)
    }

    pub fn dot(&self, other: &ImageTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A real-valued, single-channel grid in kernel coordinates.
///
/// Unlike [`BlurKernel`] this carries no simplex guarantee: it is the
/// working type for intermediate M-step variables and for full-grid
/// solutions. The center pixel `(height / 2, width / 2)` is the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl KernelGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "kernel dims must be >= 1");
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidKernel(format!(
                "expected {height}x{width} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Square `size x size` grid with all mass on the center pixel.
    pub fn delta(size: usize) -> Self {
        let mut k = Self::zeros(size, size);
        let c = size / 2;
        k.data[c * size + c] = 1.0;
        k
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// The centered `size x size` window of this grid.
    ///
    /// Offsets are measured from the respective centers, so cropping a
    /// kernel embedded with [`KernelGrid::pad_to`] gives it back exactly.
    pub fn crop(&self, size: usize) -> Result<KernelGrid> {
        if size > self.height || size > self.width {
            return Err(Error::InvalidKernel(format!(
                "cannot crop {size}x{size} out of {}x{}",
                self.height, self.width
            )));
        }
        let (ch, cw) = self.center();
        let half = size / 2;
        let mut out = KernelGrid::zeros(size, size);
        for a in 0..size {
            for b in 0..size {
                out.set(a, b, self.get(ch + a - half, cw + b - half));
            }
        }
        Ok(out)
    }

    /// Zero-pads to `height x width`, keeping the center pixel aligned.
    pub fn pad_to(&self, height: usize, width: usize) -> Result<KernelGrid> {
        if self.height > height || self.width > width {
            return Err(Error::InvalidKernel(format!(
                "cannot pad {}x{} into {height}x{width}",
                self.height, self.width
            )));
        }
        let (ch, cw) = self.center();
        let (oh, ow) = (height / 2 - ch, width / 2 - cw);
        let mut out = KernelGrid::zeros(height, width);
        for a in 0..self.height {
            for b in 0..self.width {
                out.set(a + oh, b + ow, self.get(a, b));
            }
        }
        Ok(out)
    }

    /// Euclidean projection of the entries onto the probability simplex.
    pub fn project_simplex(&self) -> KernelGrid {
        KernelGrid {
            height: self.height,
            width: self.width,
            data: project_simplex(&self.data),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A blur kernel: odd square grid, non-negative, unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel(KernelGrid);

impl BlurKernel {
    pub fn new(grid: KernelGrid) -> Result<Self> {
        if grid.height != grid.width {
            return Err(Error::InvalidKernel(format!(
                "kernel must be square, got {}x{}",
                grid.height, grid.width
            )));
        }
        if grid.height % 2 == 0 {
            return Err(Error::InvalidKernel(format!(
                "kernel size must be odd, got {}",
                grid.height
            )));
        }
        if let Some(v) = grid.data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidKernel(format!(
                "entries must be finite and non-negative, found {v}"
            )));
        }
        let sum = grid.sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::InvalidKernel(format!("entries sum to {sum}, expected 1")));
        }
        Ok(Self(grid))
    }

    pub fn from_vec(size: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(KernelGrid::from_vec(size, size, data)?)
    }

    pub fn delta(size: usize) -> Result<Self> {
        Self::new(KernelGrid::delta(size))
    }

    /// Projects an arbitrary odd square grid onto the simplex and wraps it.
    pub fn from_projection(grid: &KernelGrid) -> Result<Self> {
        Self::new(grid.project_simplex())
    }

    pub fn size(&self) -> usize {
        self.0.height
    }

    pub fn grid(&self) -> &KernelGrid {
        &self.0
    }

    pub fn into_grid(self) -> KernelGrid {
        self.0
    }
}

impl Deref for BlurKernel {
    type Target = KernelGrid;

    fn deref(&self) -> &KernelGrid {
        &self.0
    }
}

impl TryFrom<KernelGrid> for BlurKernel {
    type Error = Error;

    fn try_from(grid: KernelGrid) -> Result<Self> {
        BlurKernel::new(grid)
    }
}

/// Complex spectrum with the same layout as the image it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqImage {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) channels: usize,
    pub(crate) data: Vec<Complex64>,
}

impl FreqImage {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![Complex64::new(0.0, 0.0); height * width * channels],
        }
    }

    pub fn from_vec(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if data.len() != height * width * channels || height * width * channels == 0 {
            return Err(Error::InvalidTensor(format!(
                "spectrum {height}x{width}x{channels} needs {} bins, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> Complex64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Sum of squared magnitudes over all bins.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}
