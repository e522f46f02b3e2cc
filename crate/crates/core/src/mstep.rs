//! Kernel M-step: half-quadratic splitting between a Fourier-diagonal data
//! solve and a kernel denoiser.
//!
//! The data step minimizes, over a full-grid kernel `z`,
//!
//! ```text
//! (1/n) sum_i sum_c |y_c - x_ic * z|^2 + sigma^2 beta |z - K|^2 [+ C N r^2 |z|^2]
//! ```
//!
//! which is diagonal in frequency. The result is cropped to the kernel window,
//! denoised at strength `sqrt(lambda / beta)` and optionally projected onto the
//! simplex.

use std::fmt;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{embed_kernel, fft2, spectrum_to_centered_grid};
use crate::tensor::{ImageTensor, KernelGrid};

pub trait KernelRegularizer: Send + Sync {
    /// Proximal step / denoiser at strength `s`. Output has the input's dims.
    fn denoise(&self, noisy: &KernelGrid, strength: f64) -> Result<KernelGrid>;

    fn name(&self) -> &str;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityRegularizer;

impl KernelRegularizer for IdentityRegularizer {
    fn denoise(&self, noisy: &KernelGrid, _strength: f64) -> Result<KernelGrid> {
        Ok(noisy.clone())
    }

    fn name(&self) -> &str {
        "identity"
    }
}

/// Prox of `|k|^2 / 2`: `v / (1 + s^2)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct L2Regularizer;

impl KernelRegularizer for L2Regularizer {
    fn denoise(&self, noisy: &KernelGrid, strength: f64) -> Result<KernelGrid> {
        let f = 1.0 / (1.0 + strength * strength);
        let data = noisy.data().iter().map(|v| v * f).collect();
        KernelGrid::from_vec(noisy.height(), noisy.width(), data)
    }

    fn name(&self) -> &str {
        "l2"
    }
}

/// Prox of `|k|_1`: soft threshold at `s^2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct L1Regularizer;

impl KernelRegularizer for L1Regularizer {
    fn denoise(&self, noisy: &KernelGrid, strength: f64) -> Result<KernelGrid> {
        let tau = strength * strength;
        let data = noisy
            .data()
            .iter()
            .map(|v| v.signum() * (v.abs() - tau).max(0.0))
            .collect();
        KernelGrid::from_vec(noisy.height(), noisy.width(), data)
    }

    fn name(&self) -> &str {
        "l1"
    }
}

/// How the `N(x0_hat, r^2 I)` spread enters the data solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PigdmVariance {
    /// `r^2` added to every frequency of the sample power.
    #[default]
    Literal,
    /// The exact expectation under the unnormalized transform: `C N r^2`.
    Expected,
}

impl PigdmVariance {
    fn per_bin(self, r: f64, height: usize, width: usize, channels: usize) -> f64 {
        match self {
            PigdmVariance::Literal => r * r,
            PigdmVariance::Expected => (channels * height * width) as f64 * r * r,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MStepConfig {
    /// HQS iterations `J`.
    pub iterations: usize,
    pub lambda: f64,
    pub beta: f64,
    pub project_simplex: bool,
    pub pigdm_variance: PigdmVariance,
}

impl Default for MStepConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            lambda: 1.0,
            beta: 1e5,
            project_simplex: true,
            pigdm_variance: PigdmVariance::Literal,
        }
    }
}

impl MStepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("M-step needs at least one HQS iteration"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn strength(&self) -> f64 {
        (self.lambda / self.beta).sqrt()
    }
}

/// Particle-averaged cross and power spectra; fixed across HQS iterations.
#[derive(Clone)]
pub struct SpectralStats {
    height: usize,
    width: usize,
    /// `(1/n) sum_i sum_c y_hat_c conj(x_hat_ic)`
    cross: Vec<Complex64>,
    /// `(1/n) sum_i sum_c |x_hat_ic|^2`, plus any ΠGDM variance term.
    power: Vec<f64>,
    sigma: f64,
}

impl fmt::Debug for SpectralStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralStats")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("sigma", &self.sigma)
            .finish_non_exhaustive()
    }
}

impl SpectralStats {
    pub fn new(y: &ImageTensor, samples: &[ImageTensor], sigma: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("M-step needs at least one sample"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        let (h, w, c) = y.dims();
        let y_hat = fft2(y);
        let mut cross = vec![Complex64::new(0.0, 0.0); h * w];
        let mut power = vec![0.0; h * w];
        let inv_n = 1.0 / samples.len() as f64;
        for x in samples {
            y.check_same_shape(x, "M-step sample")?;
            let x_hat = fft2(x);
            for (idx, (xv, yv)) in x_hat.data().iter().zip(y_hat.data()).enumerate() {
                let bin = idx / c;
                cross[bin] += yv * xv.conj() * inv_n;
                power[bin] += xv.norm_sqr() * inv_n;
            }
        }
        Ok(Self {
            height: h,
            width: w,
            cross,
            power,
            sigma,
        })
    }

    /// Accounts for `N(0, r^2 I)` perturbations of the samples.
    pub fn with_sample_variance(mut self, r: f64, mode: PigdmVariance, channels: usize) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("r_t must be >= 0, got {r}")));
        }
        let extra = mode.per_bin(r, self.height, self.width, channels);
        for p in self.power.iter_mut() {
            *p += extra;
        }
        Ok(self)
    }

    /// Full-grid minimizer as a centered `height x width` kernel grid.
    pub fn solve_full(&self, previous: &KernelGrid, beta: f64) -> Result<KernelGrid> {
        let prev = embed_kernel(previous, self.height, self.width)?;
        let coupling = self.sigma * self.sigma * beta;
        let mut z = vec![Complex64::new(0.0, 0.0); self.height * self.width];
        for (bin, zv) in z.iter_mut().enumerate() {
            let denom = self.power[bin] + coupling;
            if !(denom > 0.0) {
                return Err(Error::DegenerateFrequency(format!(
                    "data-solve denominator vanishes at frequency bin {bin}"
                )));
            }
            *zv = (self.cross[bin] + prev.data()[bin] * coupling) / denom;
        }
        Ok(spectrum_to_centered_grid(&z, self.height, self.width))
    }

    /// [`solve_full`](Self::solve_full) cropped to the previous kernel's window.
    pub fn solve(&self, previous: &KernelGrid, beta: f64) -> Result<KernelGrid> {
        if previous.height() != previous.width() {
            return Err(Error::shape("kernel window must be square"));
        }
        self.solve_full(previous, beta)?.crop(previous.height())
    }
}

pub fn fourier_data_solve_full(
    y: &ImageTensor,
    samples: &[ImageTensor],
    previous: &KernelGrid,
    sigma: f64,
    beta: f64,
) -> Result<KernelGrid> {
    SpectralStats::new(y, samples, sigma)?.solve_full(previous, beta)
}

pub fn fourier_data_solve(
    y: &ImageTensor,
    samples: &[ImageTensor],
    previous: &KernelGrid,
    sigma: f64,
    beta: f64,
) -> Result<KernelGrid> {
    SpectralStats::new(y, samples, sigma)?.solve(previous, beta)
}

/// Data solve with the clean estimates `x0_hat^i(t)` standing in for samples.
pub fn fast_solve_dps(
    y: &ImageTensor,
    xhat0s: &[ImageTensor],
    previous: &KernelGrid,
    sigma: f64,
    beta: f64,
) -> Result<KernelGrid> {
    fourier_data_solve(y, xhat0s, previous, sigma, beta)
}

/// Data solve averaged over `x0 ~ N(x0_hat^i, r_t^2 I)`.
pub fn fast_solve_pigdm_full(
    y: &ImageTensor,
    xhat0s: &[ImageTensor],
    previous: &KernelGrid,
    sigma: f64,
    beta: f64,
    r_t: f64,
) -> Result<KernelGrid> {
    SpectralStats::new(y, xhat0s, sigma)?
        .with_sample_variance(r_t, PigdmVariance::Literal, y.channels())?
        .solve_full(previous, beta)
}

pub fn fast_solve_pigdm(
    y: &ImageTensor,
    xhat0s: &[ImageTensor],
    previous: &KernelGrid,
    sigma: f64,
    beta: f64,
    r_t: f64,
) -> Result<KernelGrid> {
    SpectralStats::new(y, xhat0s, sigma)?
        .with_sample_variance(r_t, PigdmVariance::Literal, y.channels())?
        .solve(previous, beta)
}

/// `J` HQS alternations starting from `init`, on precomputed statistics.
pub fn hqs_iterate(
    stats: &SpectralStats,
    config: &MStepConfig,
    regularizer: &dyn KernelRegularizer,
    init: &KernelGrid,
) -> Result<KernelGrid> {
    config.validate()?;
    let strength = config.strength();
    let mut k = init.clone();
    for iteration in 0..config.iterations {
        let z = stats.solve(&k, config.beta)?;
        k = regularizer
            .denoise(&z, strength)
            .and_then(|d| {
                if d.height() != z.height() || d.width() != z.width() || !d.is_finite() {
                    Err(Error::invalid(format!(
                        "regularizer '{}' returned a {}x{} grid with non-finite or misshapen output",
                        regularizer.name(),
                        d.height(),
                        d.width()
                    )))
                } else {
                    Ok(d)
                }
            })
            .map_err(|e| Error::Regularizer {
                iteration,
                source: Box::new(e),
            })?;
        if config.project_simplex {
            k = k.project_simplex();
        }
    }
    Ok(k)
}

/// Full M-step on samples (`r_t = None`) or on ΠGDM clean estimates.
pub fn hqs_mstep(
    y: &ImageTensor,
    samples: &[ImageTensor],
    sigma: f64,
    config: &MStepConfig,
    regularizer: &dyn KernelRegularizer,
    init: &KernelGrid,
    r_t: Option<f64>,
) -> Result<KernelGrid> {
    let mut stats = SpectralStats::new(y, samples, sigma)?;
    if let Some(r) = r_t {
        stats = stats.with_sample_variance(r, config.pigdm_variance, y.channels())?;
    }
    hqs_iterate(&stats, config, regularizer, init)
}
