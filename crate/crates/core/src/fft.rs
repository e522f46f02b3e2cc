//! 2-D DFT, kernel embedding and circular convolution.
//!
//! Convention: the forward transform is unnormalized and the inverse carries
//! the `1 / (H * W)` factor. Boundaries are circular everywhere, so every
//! convolution operator is diagonal in this basis.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{FreqImage, ImageTensor, KernelGrid};

thread_local! {
    // Planners cache plans internally; one per thread keeps them unshared.
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// In-place 2-D transform of one `height x width` plane. No normalization.
pub(crate) fn fft2_inplace(buf: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), height * width);
    let row_fft = plan(width, inverse);
    let col_fft = plan(height, inverse);
    let scratch_len = row_fft
        .get_inplace_scratch_len()
        .max(col_fft.get_inplace_scratch_len());
    let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
    if width > 1 {
        row_fft.process_with_scratch(buf, &mut scratch);
    }
    if height > 1 {
        let mut t = vec![Complex64::new(0.0, 0.0); buf.len()];
        transpose(buf, &mut t, height, width);
        col_fft.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, buf, width, height);
    }
}

/// Forward transform of a real plane.
pub fn fft2_plane(plane: &[f64], height: usize, width: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_inplace(&mut buf, height, width, false);
    buf
}

/// Inverse transform keeping the real part, including the `1 / (H * W)` factor.
pub fn ifft2_plane(spectrum: &[Complex64], height: usize, width: usize) -> Vec<f64> {
    let mut buf = spectrum.to_vec();
    fft2_inplace(&mut buf, height, width, true);
    let norm = 1.0 / (height * width) as f64;
    buf.iter().map(|z| z.re * norm).collect()
}

pub fn fft2(image: &ImageTensor) -> FreqImage {
    let (h, w, c) = image.dims();
    let mut out = FreqImage::zeros(h, w, c);
    for ch in 0..c {
        let spec = fft2_plane(&image.channel_plane(ch), h, w);
        for (dst, src) in out.data.iter_mut().skip(ch).step_by(c).zip(spec) {
            *dst = src;
        }
    }
    out
}

/// Inverse transform; imaginary residue is dropped.
pub fn ifft2(freq: &FreqImage) -> ImageTensor {
    let (h, w, c) = freq.dims();
    let mut out = ImageTensor::zeros(h, w, c);
    let mut plane = vec![Complex64::new(0.0, 0.0); h * w];
    for ch in 0..c {
        for (dst, src) in plane.iter_mut().zip(freq.data.iter().skip(ch).step_by(c)) {
            *dst = *src;
        }
        out.set_channel_plane(ch, &ifft2_plane(&plane, h, w));
    }
    out
}

/// Zero-pads `kernel` to `height x width` with its center moved to pixel (0, 0).
pub fn kernel_to_origin(kernel: &KernelGrid, height: usize, width: usize) -> Result<Vec<f64>> {
    if kernel.height() > height || kernel.width() > width {
        return Err(Error::KernelExceedsSupport {
            kernel_height: kernel.height(),
            kernel_width: kernel.width(),
            height,
            width,
        });
    }
    let (ch, cw) = kernel.center();
    let mut plane = vec![0.0; height * width];
    for a in 0..kernel.height() {
        let r = (a as isize - ch as isize).rem_euclid(height as isize) as usize;
        for b in 0..kernel.width() {
            let c = (b as isize - cw as isize).rem_euclid(width as isize) as usize;
            plane[r * width + c] += kernel.get(a, b);
        }
    }
    Ok(plane)
}

/// Spectrum (eigenvalues) of the circular convolution operator defined by `kernel`
/// on a `height x width` grid, returned as a single-channel [`FreqImage`].
pub fn embed_kernel(kernel: &KernelGrid, height: usize, width: usize) -> Result<FreqImage> {
    let plane = kernel_to_origin(kernel, height, width)?;
    FreqImage::from_vec(height, width, 1, fft2_plane(&plane, height, width))
}

/// Maps a full-grid operator spectrum back to a centered `height x width` kernel grid.
pub fn spectrum_to_centered_grid(spectrum: &[Complex64], height: usize, width: usize) -> KernelGrid {
    let plane = ifft2_plane(spectrum, height, width);
    let mut grid = KernelGrid::zeros(height, width);
    let (ch, cw) = (height / 2, width / 2);
    for i in 0..height {
        for j in 0..width {
            grid.set((i + ch) % height, (j + cw) % width, plane[i * width + j]);
        }
    }
    grid
}

/// Multiplies every channel of `image` by the single-plane `spectrum` in the
/// Fourier domain (optionally conjugated) and transforms back.
pub fn apply_spectrum(image: &ImageTensor, spectrum: &[Complex64], conjugate: bool) -> ImageTensor {
    let (h, w, c) = image.dims();
    debug_assert_eq!(spectrum.len(), h * w);
    let mut out = ImageTensor::zeros(h, w, c);
    for ch in 0..c {
        let mut spec = fft2_plane(&image.channel_plane(ch), h, w);
        for (z, k) in spec.iter_mut().zip(spectrum) {
            *z *= if conjugate { k.conj() } else { *k };
        }
        out.set_channel_plane(ch, &ifft2_plane(&spec, h, w));
    }
    out
}

/// Multiplies every channel by a real, non-negative-or-not diagonal filter.
pub fn apply_real_filter(image: &ImageTensor, filter: &[f64]) -> ImageTensor {
    let (h, w, c) = image.dims();
    let per_channel = filter.len() == h * w * c;
    debug_assert!(per_channel || filter.len() == h * w);
    let mut out = ImageTensor::zeros(h, w, c);
    for ch in 0..c {
        let mut spec = fft2_plane(&image.channel_plane(ch), h, w);
        for (idx, z) in spec.iter_mut().enumerate() {
            let f = if per_channel {
                filter[idx * c + ch]
            } else {
                filter[idx]
            };
            *z *= f;
        }
        out.set_channel_plane(ch, &ifft2_plane(&spec, h, w));
    }
    out
}

/// Per-channel cyclic convolution `H x`.
pub fn circular_convolve(image: &ImageTensor, kernel: &KernelGrid) -> Result<ImageTensor> {
    let spec = embed_kernel(kernel, image.height(), image.width())?;
    Ok(apply_spectrum(image, &spec.data, false))
}

/// Adjoint of [`circular_convolve`]: `H^T x`, realized with the conjugate spectrum.
pub fn circular_correlate(image: &ImageTensor, kernel: &KernelGrid) -> Result<ImageTensor> {
    let spec = embed_kernel(kernel, image.height(), image.width())?;
    Ok(apply_spectrum(image, &spec.data, true))
}
