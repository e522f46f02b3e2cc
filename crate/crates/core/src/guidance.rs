//! Likelihood gradients `grad_{x_t} log p(y | x_t)` under the DPS and ΠGDM
//! approximations, plus the exact form for Fourier-diagonal Gaussian models.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{embed_kernel, fft2, ifft2};
use crate::schedule::DiffusionSchedule;
use crate::score::{xhat0_from_eps, ScoreModel};
use crate::tensor::{FreqImage, ImageTensor, KernelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GuidanceKind {
    /// `p(x0 | x_t) ~ delta(x0 - x0_hat)`; gradient of `-(weight / 2 sigma^2) |y - H x0_hat|^2`.
    Dps { weight: f64 },
    /// `p(x0 | x_t) ~ N(x0_hat, r_t^2 I)`.
    PiGdm,
    /// Uses the model's own `x0 | x_t` covariance; exact for Gaussian priors.
    Exact,
    /// No data term.
    Unconditional,
}

impl GuidanceKind {
    pub fn dps() -> Self {
        GuidanceKind::Dps { weight: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GuidanceKind::Dps { weight } if !(*weight > 0.0 && weight.is_finite()) => Err(
                Error::invalid(format!("DPS weight must be > 0, got {weight}")),
            ),
            _ => Ok(()),
        }
    }
}

/// How `(d x0_hat / d x_t)^T` is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum JacobianMode {
    /// Backpropagate through the noise predictor.
    #[default]
    Exact,
    /// Drop the predictor's Jacobian: `J^T v ~ v / sqrt(abar)`.
    ScalarSurrogate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub kind: GuidanceKind,
    pub jacobian: JacobianMode,
}

impl GuidanceConfig {
    pub fn new(kind: GuidanceKind) -> Self {
        Self {
            kind,
            jacobian: JacobianMode::Exact,
        }
    }
}

/// Observation `y` with its transform and the operator spectrum cached.
#[derive(Clone, Debug)]
pub struct Observation {
    y: ImageTensor,
    y_hat: FreqImage,
    kernel: KernelGrid,
    kernel_spectrum: Vec<Complex64>,
    sigma: f64,
}

impl Observation {
    pub fn new(y: &ImageTensor, kernel: &KernelGrid, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        let spec = embed_kernel(kernel, y.height(), y.width())?;
        Ok(Self {
            y: y.clone(),
            y_hat: fft2(y),
            kernel: kernel.clone(),
            kernel_spectrum: spec.data().to_vec(),
            sigma,
        })
    }

    /// Same observation under a different kernel.
    pub fn with_kernel(&self, kernel: &KernelGrid) -> Result<Self> {
        let spec = embed_kernel(kernel, self.y.height(), self.y.width())?;
        Ok(Self {
            y: self.y.clone(),
            y_hat: self.y_hat.clone(),
            kernel: kernel.clone(),
            kernel_spectrum: spec.data().to_vec(),
            sigma: self.sigma,
        })
    }

    pub fn y(&self) -> &ImageTensor {
        &self.y
    }

    pub fn y_hat(&self) -> &FreqImage {
        &self.y_hat
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kernel(&self) -> &KernelGrid {
        &self.kernel
    }

    pub fn kernel_spectrum(&self) -> &[Complex64] {
        &self.kernel_spectrum
    }

    /// `ifft(conj(h) * weight(bin, channel) * (y_hat - h * fft(x)))`, i.e.
    /// `H^T W (y - H x)` for a Fourier-diagonal `W`.
    fn weighted_back_projection(
        &self,
        x: &ImageTensor,
        weight: impl Fn(usize, usize) -> Result<f64>,
    ) -> Result<ImageTensor> {
        self.y.check_same_shape(x, "observation")?;
        let c = x.channels();
        let mut spec = fft2(x);
        for (idx, z) in spec.data_mut().iter_mut().enumerate() {
            let (bin, ch) = (idx / c, idx % c);
            let h = self.kernel_spectrum[bin];
            let r = self.y_hat.data()[idx] - h * *z;
            *z = h.conj() * r * weight(bin, ch)?;
        }
        Ok(ifft2(&spec))
    }
}

fn degenerate(bin: usize) -> Error {
    Error::DegenerateFrequency(format!(
        "r_t^2 |h|^2 + sigma^2 vanishes at frequency bin {bin}"
    ))
}

/// Likelihood gradient given a precomputed `x0_hat(x_t)`.
pub fn guidance_from_xhat0(
    x_t: &ImageTensor,
    xhat0: &ImageTensor,
    t: usize,
    obs: &Observation,
    schedule: &DiffusionSchedule,
    model: &dyn ScoreModel,
    config: &GuidanceConfig,
) -> Result<ImageTensor> {
    schedule.check_step(t)?;
    let s2 = obs.sigma * obs.sigma;
    let back = match config.kind {
        GuidanceKind::Unconditional => {
            return Ok(ImageTensor::zeros(x_t.height(), x_t.width(), x_t.channels()))
        }
        GuidanceKind::Dps { weight } => {
            config.kind.validate()?;
            if !(s2 > 0.0) {
                return Err(Error::invalid("DPS guidance needs sigma > 0"));
            }
            let w = weight / s2;
            obs.weighted_back_projection(xhat0, |_, _| Ok(w))?
        }
        GuidanceKind::PiGdm => {
            let r2 = schedule.r(t).powi(2);
            obs.weighted_back_projection(xhat0, |bin, _| {
                let d = r2 * obs.kernel_spectrum[bin].norm_sqr() + s2;
                if d > 0.0 {
                    Ok(1.0 / d)
                } else {
                    Err(degenerate(bin))
                }
            })?
        }
        GuidanceKind::Exact => {
            let cov = model.x0_posterior_spectrum(x_t, t, schedule).ok_or_else(|| {
                Error::invalid("exact guidance needs a model with a Gaussian x0 | x_t law")
            })?;
            let c = x_t.channels();
            obs.weighted_back_projection(xhat0, |bin, ch| {
                let d = cov[bin * c + ch] * obs.kernel_spectrum[bin].norm_sqr() + s2;
                if d > 0.0 {
                    Ok(1.0 / d)
                } else {
                    Err(degenerate(bin))
                }
            })?
        }
    };
    match config.jacobian {
        JacobianMode::Exact => model.jvp_xhat0(x_t, t, schedule, &back),
        JacobianMode::ScalarSurrogate => Ok(back.scaled(1.0 / schedule.alpha_bar(t).sqrt())),
    }
}

#[allow(clippy::too_many_arguments)]
fn guidance(
    kind: GuidanceKind,
    x_t: &ImageTensor,
    t: usize,
    y: &ImageTensor,
    kernel: &KernelGrid,
    sigma: f64,
    model: &dyn ScoreModel,
    schedule: &DiffusionSchedule,
) -> Result<ImageTensor> {
    schedule.check_step(t)?;
    let obs = Observation::new(y, kernel, sigma)?;
    let eps = model.predict_eps(x_t, t, schedule)?;
    let xhat0 = xhat0_from_eps(x_t, &eps, schedule.alpha_bar(t))?;
    guidance_from_xhat0(
        x_t,
        &xhat0,
        t,
        &obs,
        schedule,
        model,
        &GuidanceConfig::new(kind),
    )
}

/// `(1 / sigma^2) J^T H^T (y - H x0_hat)`: gradient of `-|y - H x0_hat|^2 / (2 sigma^2)`.
pub fn dps_guidance(
    x_t: &ImageTensor,
    t: usize,
    y: &ImageTensor,
    kernel: &KernelGrid,
    sigma: f64,
    model: &dyn ScoreModel,
    schedule: &DiffusionSchedule,
) -> Result<ImageTensor> {
    guidance(GuidanceKind::dps(), x_t, t, y, kernel, sigma, model, schedule)
}

/// `J^T H^T (r_t^2 H H^T + sigma^2 I)^-1 (y - H x0_hat)`.
pub fn pigdm_guidance(
    x_t: &ImageTensor,
    t: usize,
    y: &ImageTensor,
    kernel: &KernelGrid,
    sigma: f64,
    model: &dyn ScoreModel,
    schedule: &DiffusionSchedule,
) -> Result<ImageTensor> {
    guidance(GuidanceKind::PiGdm, x_t, t, y, kernel, sigma, model, schedule)
}
