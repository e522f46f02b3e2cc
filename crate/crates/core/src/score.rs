//! Noise predictors and the analytic priors used as oracles.
//!
//! A [`ScoreModel`] returns the DDPM noise prediction `eps(x_t, t)` and the
//! transposed Jacobian action of the conditional mean `x0_hat(x_t)`. The
//! stationary Gaussian prior is diagonal in the Fourier basis, so its
//! marginals, posteriors and likelihoods are all available in closed form.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fft::{apply_real_filter, embed_kernel, fft2, ifft2};
use crate::io;
use crate::schedule::DiffusionSchedule;
use crate::tensor::{ImageTensor, KernelGrid};

pub trait ScoreModel: Send + Sync {
    /// Noise prediction at timestep `t`.
    fn predict_eps(
        &self,
        x_t: &ImageTensor,
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Result<ImageTensor>;

    /// `(d x0_hat / d x_t)^T v`.
    fn jvp_xhat0(
        &self,
        x_t: &ImageTensor,
        t: usize,
        schedule: &DiffusionSchedule,
        v: &ImageTensor,
    ) -> Result<ImageTensor>;

    /// Per-bin covariance spectrum of `p(x0 | x_t)` when that law is exactly
    /// Gaussian and Fourier-diagonal; `None` otherwise.
    fn x0_posterior_spectrum(
        &self,
        _x_t: &ImageTensor,
        _t: usize,
        _schedule: &DiffusionSchedule,
    ) -> Option<Vec<f64>> {
        None
    }
}

/// `x0_hat = (x_t - sqrt(1 - abar) eps) / sqrt(abar)`.
pub fn xhat0_from_eps(x_t: &ImageTensor, eps: &ImageTensor, alpha_bar: f64) -> Result<ImageTensor> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::Schedule(format!(
            "alpha_bar must lie in (0, 1], got {alpha_bar}"
        )));
    }
    x_t.check_same_shape(eps, "xhat0_from_eps")?;
    let inv = 1.0 / alpha_bar.sqrt();
    Ok(x_t.lincomb(inv, eps, -(1.0 - alpha_bar).sqrt() * inv))
}

/// Tweedie: `score = -eps / sqrt(1 - abar)`.
pub fn score_from_eps(eps: &ImageTensor, alpha_bar: f64) -> Result<ImageTensor> {
    let noise = 1.0 - alpha_bar;
    if !(noise > 0.0) {
        return Err(Error::Schedule(format!(
            "score undefined at zero noise (alpha_bar = {alpha_bar})"
        )));
    }
    Ok(eps.scaled(-1.0 / noise.sqrt()))
}

/// `x ~ N(mu, C)` per channel with `C` circulant: `C = F^-1 diag(spectrum) F`.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryGaussianPrior {
    mean: ImageTensor,
    /// Eigenvalues of the covariance, interleaved like image data.
    spectrum: Vec<f64>,
}

impl StationaryGaussianPrior {
    /// The spectrum is symmetrized under `w -> -w` so the covariance is real.
    pub fn new(mean: ImageTensor, spectrum: Vec<f64>) -> Result<Self> {
        let (h, w, c) = mean.dims();
        if spectrum.len() != h * w * c {
            return Err(Error::shape(format!(
                "spectrum has {} bins, mean needs {}",
                spectrum.len(),
                h * w * c
            )));
        }
        if let Some(v) = spectrum.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!(
                "covariance spectrum must be finite and >= 0, found {v}"
            )));
        }
        let mut sym = vec![0.0; spectrum.len()];
        for u in 0..h {
            for v in 0..w {
                let (mu, mv) = ((h - u) % h, (w - v) % w);
                for ch in 0..c {
                    sym[(u * w + v) * c + ch] =
                        0.5 * (spectrum[(u * w + v) * c + ch] + spectrum[(mu * w + mv) * c + ch]);
                }
            }
        }
        Ok(Self {
            mean,
            spectrum: sym,
        })
    }

    /// White prior with constant spectrum.
    pub fn isotropic(mean: ImageTensor, variance: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, vec![variance; n])
    }

    /// Power-law texture: spectrum `~ (1 + (|f| / f0)^2)^-exponent`, scaled
    /// so the per-pixel variance equals `variance`.
    pub fn power_law(mean: ImageTensor, variance: f64, cutoff: f64, exponent: f64) -> Result<Self> {
        let (h, w, c) = mean.dims();
        let mut spec = vec![0.0; h * w * c];
        for u in 0..h {
            let fu = (u.min(h - u)) as f64 / h as f64;
            for v in 0..w {
                let fv = (v.min(w - v)) as f64 / w as f64;
                let f2 = (fu * fu + fv * fv) / (cutoff * cutoff);
                let s = (1.0 + f2).powf(-exponent);
                for ch in 0..c {
                    spec[(u * w + v) * c + ch] = s;
                }
            }
        }
        let avg = spec.iter().sum::<f64>() / spec.len() as f64;
        for s in spec.iter_mut() {
            *s *= variance / avg;
        }
        Self::new(mean, spec)
    }

    /// Power-law prior with per-channel constant mean and the noise-corrected
    /// variance of `y`.
    pub fn fit_power_law(y: &ImageTensor, sigma: f64, cutoff: f64, exponent: f64) -> Result<Self> {
        let (h, w, c) = y.dims();
        let mut mean = ImageTensor::zeros(h, w, c);
        let mut var = 0.0;
        for ch in 0..c {
            let plane = y.channel_plane(ch);
            let m = plane.iter().sum::<f64>() / plane.len() as f64;
            var += plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / plane.len() as f64;
            mean.set_channel_plane(ch, &vec![m; plane.len()]);
        }
        let var = (var / c as f64 - sigma * sigma).max(1e-6);
        Self::power_law(mean, var, cutoff, exponent)
    }

    pub fn mean(&self) -> &ImageTensor {
        &self.mean
    }

    /// Marginal variance of one pixel.
    pub fn pixel_variance(&self) -> f64 {
        self.spectrum.iter().sum::<f64>() / self.spectrum.len() as f64
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.mean.dims()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ImageTensor {
        let (h, w, c) = self.dims();
        let g = ImageTensor::random_normal(h, w, c, rng);
        let sqrt: Vec<f64> = self.spectrum.iter().map(|s| s.sqrt()).collect();
        apply_real_filter(&g, &sqrt).add(&self.mean)
    }

    fn check(&self, x: &ImageTensor) -> Result<()> {
        self.mean.check_same_shape(x, "gaussian prior")
    }

    /// Spectrum of the marginal covariance at noise level `abar`.
    fn marginal_spectrum(&self, alpha_bar: f64) -> Result<Vec<f64>> {
        let d: Vec<f64> = self
            .spectrum
            .iter()
            .map(|s| alpha_bar * s + 1.0 - alpha_bar)
            .collect();
        if d.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::DegenerateFrequency(
                "marginal covariance is singular (zero noise and zero prior variance)".into(),
            ));
        }
        Ok(d)
    }

    fn centered(&self, x_t: &ImageTensor, alpha_bar: f64) -> ImageTensor {
        x_t.lincomb(1.0, &self.mean, -alpha_bar.sqrt())
    }

    /// `grad log p_t(x_t)` for the marginal `N(sqrt(abar) mu, abar C + (1 - abar) I)`.
    pub fn score(&self, x_t: &ImageTensor, alpha_bar: f64) -> Result<ImageTensor> {
        self.check(x_t)?;
        let d = self.marginal_spectrum(alpha_bar)?;
        let inv: Vec<f64> = d.iter().map(|v| -1.0 / v).collect();
        Ok(apply_real_filter(&self.centered(x_t, alpha_bar), &inv))
    }

    /// `E[x0 | x_t] = mu + sqrt(abar) C D^-1 (x_t - sqrt(abar) mu)`.
    pub fn conditional_mean(&self, x_t: &ImageTensor, alpha_bar: f64) -> Result<ImageTensor> {
        self.check(x_t)?;
        let d = self.marginal_spectrum(alpha_bar)?;
        let gain: Vec<f64> = self
            .spectrum
            .iter()
            .zip(&d)
            .map(|(s, dv)| alpha_bar.sqrt() * s / dv)
            .collect();
        Ok(apply_real_filter(&self.centered(x_t, alpha_bar), &gain).add(&self.mean))
    }

    /// Log-density of the time-`t` marginal.
    pub fn log_density(&self, x_t: &ImageTensor, alpha_bar: f64) -> Result<f64> {
        self.check(x_t)?;
        let d = self.marginal_spectrum(alpha_bar)?;
        Ok(gaussian_log_density(&fft2(&self.centered(x_t, alpha_bar)), &d))
    }

    fn eps_at(&self, x_t: &ImageTensor, alpha_bar: f64) -> Result<ImageTensor> {
        self.check(x_t)?;
        let d = self.marginal_spectrum(alpha_bar)?;
        let f: Vec<f64> = d.iter().map(|v| (1.0 - alpha_bar).sqrt() / v).collect();
        Ok(apply_real_filter(&self.centered(x_t, alpha_bar), &f))
    }
}

/// `log N(r; 0, F^-1 diag(d) F)` given `r_hat = fft2(r)` (unnormalized).
fn gaussian_log_density(r_hat: &crate::tensor::FreqImage, d: &[f64]) -> f64 {
    let n = (r_hat.height() * r_hat.width()) as f64;
    let mut quad = 0.0;
    let mut logdet = 0.0;
    for (z, dv) in r_hat.data().iter().zip(d) {
        quad += z.norm_sqr() / (n * dv);
        logdet += dv.ln();
    }
    -0.5 * (quad + logdet + d.len() as f64 * (2.0 * PI).ln())
}

impl ScoreModel for StationaryGaussianPrior {
    fn predict_eps(
        &self,
        x_t: &ImageTensor,
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Result<ImageTensor> {
        schedule.check_step(t)?;
        self.eps_at(x_t, schedule.alpha_bar(t))
    }

    fn jvp_xhat0(
        &self,
        x_t: &ImageTensor,
        t: usize,
        schedule: &DiffusionSchedule,
        v: &ImageTensor,
    ) -> Result<ImageTensor> {
        schedule.check_step(t)?;
        self.check(x_t)?;
        self.check(v)?;
        let ab = schedule.alpha_bar(t);
        let d = self.marginal_spectrum(ab)?;
        let gain: Vec<f64> = self
            .spectrum
            .iter()
            .zip(&d)
            .map(|(s, dv)| ab.sqrt() * s / dv)
            .collect();
        Ok(apply_real_filter(v, &gain))
    }

    fn x0_posterior_spectrum(
        &self,
        _x_t: &ImageTensor,
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Option<Vec<f64>> {
        let ab = schedule.alpha_bar(t);
        let d = self.marginal_spectrum(ab).ok()?;
        Some(
            self.spectrum
                .iter()
                .zip(&d)
                .map(|(s, dv)| s * (1.0 - ab) / dv)
                .collect(),
        )
    }
}

/// Exact Gaussian posterior `p(x0 | y, H)` under a stationary Gaussian prior.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mean: ImageTensor,
    /// Eigenvalues of the posterior covariance, interleaved like image data.
    pub spectrum: Vec<f64>,
}

impl GaussianPosterior {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ImageTensor {
        let (h, w, c) = self.mean.dims();
        let g = ImageTensor::random_normal(h, w, c, rng);
        let sqrt: Vec<f64> = self.spectrum.iter().map(|s| s.sqrt()).collect();
        apply_real_filter(&g, &sqrt).add(&self.mean)
    }
}

/// Per-frequency Gaussian conditioning of the prior on `y = H x + sigma n`.
pub fn analytic_posterior(
    y: &ImageTensor,
    kernel: &KernelGrid,
    sigma: f64,
    prior: &StationaryGaussianPrior,
) -> Result<GaussianPosterior> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    prior.check(y)?;
    let (h, w, c) = y.dims();
    let hs = embed_kernel(kernel, h, w)?;
    let y_hat = fft2(y);
    let mu_hat = fft2(prior.mean());
    let s2 = sigma * sigma;
    let mut mean_hat = mu_hat.clone();
    let mut var = vec![0.0; h * w * c];
    for bin in 0..h * w {
        let hk = hs.data()[bin];
        let g = hk.norm_sqr();
        for ch in 0..c {
            let idx = bin * c + ch;
            let s = prior.spectrum[idx];
            let denom = g * s + s2;
            let resid = y_hat.data()[idx] - hk * mu_hat.data()[idx];
            mean_hat.data_mut()[idx] += hk.conj() * resid * (s / denom);
            var[idx] = s * s2 / denom;
        }
    }
    Ok(GaussianPosterior {
        mean: ifft2(&mean_hat),
        spectrum: var,
    })
}

/// Closed-form `log p(y | H)` with `x` marginalized under the Gaussian prior.
pub fn marginal_log_likelihood(
    y: &ImageTensor,
    kernel: &KernelGrid,
    sigma: f64,
    prior: &StationaryGaussianPrior,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    prior.check(y)?;
    let (h, w, c) = y.dims();
    let hs = embed_kernel(kernel, h, w)?;
    let mut r_hat = fft2(y);
    let mu_hat = fft2(prior.mean());
    let mut d = vec![0.0; h * w * c];
    for bin in 0..h * w {
        let hk = hs.data()[bin];
        for ch in 0..c {
            let idx = bin * c + ch;
            r_hat.data_mut()[idx] -= hk * mu_hat.data()[idx];
            d[idx] = hk.norm_sqr() * prior.spectrum[idx] + sigma * sigma;
        }
    }
    Ok(gaussian_log_density(&r_hat, &d))
}

/// Mixture of isotropic Gaussians over whole images.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmPrior {
    means: Vec<ImageTensor>,
    variance: f64,
    log_weights: Vec<f64>,
}

struct MixtureState {
    resp: Vec<f64>,
    /// Per-component scores `-(x - sqrt(abar) m_k) / v_t`.
    comp_scores: Vec<ImageTensor>,
}

impl GmmPrior {
    pub fn new(means: Vec<ImageTensor>, variance: f64, weights: Vec<f64>) -> Result<Self> {
        if means.is_empty() || means.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} means but {} weights",
                means.len(),
                weights.len()
            )));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid(format!("variance must be > 0, got {variance}")));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixture weights must lie on the simplex"));
        }
        for m in &means[1..] {
            means[0].check_same_shape(m, "gmm means")?;
        }
        Ok(Self {
            means,
            variance,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
        })
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    fn noise_var(&self, alpha_bar: f64) -> f64 {
        alpha_bar * self.variance + 1.0 - alpha_bar
    }

    fn state(&self, x_t: &ImageTensor, alpha_bar: f64) -> Result<MixtureState> {
        self.means[0].check_same_shape(x_t, "gmm prior")?;
        let v = self.noise_var(alpha_bar);
        let sa = alpha_bar.sqrt();
        let comp_scores: Vec<ImageTensor> = self
            .means
            .iter()
            .map(|m| x_t.lincomb(-1.0 / v, m, sa / v))
            .collect();
        let logits: Vec<f64> = comp_scores
            .iter()
            .zip(&self.log_weights)
            .map(|(s, lw)| lw - 0.5 * v * s.norm_sq())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expd: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = expd.iter().sum();
        Ok(MixtureState {
            resp: expd.iter().map(|e| e / z).collect(),
            comp_scores,
        })
    }

    pub fn responsibilities(&self, x_t: &ImageTensor, alpha_bar: f64) -> Result<Vec<f64>> {
        Ok(self.state(x_t, alpha_bar)?.resp)
    }

    pub fn score(&self, x_t: &ImageTensor, alpha_bar: f64) -> Result<ImageTensor> {
        let st = self.state(x_t, alpha_bar)?;
        let mut out = ImageTensor::zeros(x_t.height(), x_t.width(), x_t.channels());
        for (g, s) in st.resp.iter().zip(&st.comp_scores) {
            out.axpy(*g, s);
        }
        Ok(out)
    }

    pub fn conditional_mean(&self, x_t: &ImageTensor, alpha_bar: f64) -> Result<ImageTensor> {
        let s = self.score(x_t, alpha_bar)?;
        Ok(x_t.lincomb(1.0 / alpha_bar.sqrt(), &s, (1.0 - alpha_bar) / alpha_bar.sqrt()))
    }

    pub fn log_density(&self, x_t: &ImageTensor, alpha_bar: f64) -> Result<f64> {
        self.means[0].check_same_shape(x_t, "gmm prior")?;
        let v = self.noise_var(alpha_bar);
        let dim = x_t.len() as f64;
        let terms: Vec<f64> = self
            .means
            .iter()
            .zip(&self.log_weights)
            .map(|(m, lw)| {
                let r = x_t.lincomb(1.0, m, -alpha_bar.sqrt());
                lw - 0.5 * r.norm_sq() / v - 0.5 * dim * (2.0 * PI * v).ln()
            })
            .collect();
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
    }
}

impl ScoreModel for GmmPrior {
    fn predict_eps(
        &self,
        x_t: &ImageTensor,
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Result<ImageTensor> {
        schedule.check_step(t)?;
        let ab = schedule.alpha_bar(t);
        Ok(self.score(x_t, ab)?.scaled(-(1.0 - ab).sqrt()))
    }

    /// The Jacobian is `(I + (1 - abar) Hess log p_t) / sqrt(abar)`, symmetric,
    /// with `Hess log p_t = -I / v + sum_k g_k (a_k - a)(a_k - a)^T`.
    fn jvp_xhat0(
        &self,
        x_t: &ImageTensor,
        t: usize,
        schedule: &DiffusionSchedule,
        v: &ImageTensor,
    ) -> Result<ImageTensor> {
        schedule.check_step(t)?;
        x_t.check_same_shape(v, "gmm jvp")?;
        let ab = schedule.alpha_bar(t);
        let st = self.state(x_t, ab)?;
        let nv = self.noise_var(ab);
        let mut mean_score = ImageTensor::zeros(x_t.height(), x_t.width(), x_t.channels());
        for (g, s) in st.resp.iter().zip(&st.comp_scores) {
            mean_score.axpy(*g, s);
        }
        let mut hess_v = v.scaled(-1.0 / nv);
        for (g, s) in st.resp.iter().zip(&st.comp_scores) {
            let dev = s.sub(&mean_score);
            hess_v.axpy(g * dev.dot(v), &dev);
        }
        Ok(v.lincomb(1.0 / ab.sqrt(), &hess_v, (1.0 - ab) / ab.sqrt()))
    }
}

/// A prior loaded from a spec file.
#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    Gaussian(StationaryGaussianPrior),
    Gmm(GmmPrior),
}

impl ScoreModel for Prior {
    fn predict_eps(
        &self,
        x_t: &ImageTensor,
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Result<ImageTensor> {
        match self {
            Prior::Gaussian(p) => p.predict_eps(x_t, t, schedule),
            Prior::Gmm(p) => p.predict_eps(x_t, t, schedule),
        }
    }

    fn jvp_xhat0(
        &self,
        x_t: &ImageTensor,
        t: usize,
        schedule: &DiffusionSchedule,
        v: &ImageTensor,
    ) -> Result<ImageTensor> {
        match self {
            Prior::Gaussian(p) => p.jvp_xhat0(x_t, t, schedule, v),
            Prior::Gmm(p) => p.jvp_xhat0(x_t, t, schedule, v),
        }
    }

    fn x0_posterior_spectrum(
        &self,
        x_t: &ImageTensor,
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Option<Vec<f64>> {
        match self {
            Prior::Gaussian(p) => p.x0_posterior_spectrum(x_t, t, schedule),
            Prior::Gmm(_) => None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum PriorSpecFile {
    Gaussian {
        mean: String,
        spectrum: String,
    },
    Gmm {
        means: Vec<String>,
        variance: f64,
        weights: Vec<f64>,
    },
}

/// Parses a TOML prior spec. Relative paths resolve against `base_dir`.
///
/// ```toml
/// type = "gaussian"
/// mean = "mu.rtf"
/// spectrum = "spectrum.rtf"
/// ```
pub fn parse_prior_spec(text: &str, base_dir: &Path) -> Result<Prior> {
    let spec: PriorSpecFile =
        toml::from_str(text).map_err(|e| Error::PriorSpec(e.to_string()))?;
    match spec {
        PriorSpecFile::Gaussian { mean, spectrum } => {
            let mean = io::load_rtf(base_dir.join(mean))?;
            let spectrum = io::load_rtf(base_dir.join(spectrum))?;
            if spectrum.dims() != mean.dims() {
                return Err(Error::PriorSpec(format!(
                    "spectrum dims {:?} differ from mean dims {:?}",
                    spectrum.dims(),
                    mean.dims()
                )));
            }
            Ok(Prior::Gaussian(StationaryGaussianPrior::new(
                mean,
                spectrum.into_vec(),
            )?))
        }
        PriorSpecFile::Gmm {
            means,
            variance,
            weights,
        } => {
            let means = means
                .iter()
                .map(|p| io::load_rtf(base_dir.join(p)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Prior::Gmm(GmmPrior::new(means, variance, weights)?))
        }
    }
}

pub fn load_prior(path: impl AsRef<Path>) -> Result<Prior> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_prior_spec(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Writes `mean.rtf`, `spectrum.rtf` and `prior.toml` into `dir`.
pub fn save_gaussian_prior(dir: impl AsRef<Path>, prior: &StationaryGaussianPrior) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (h, w, c) = prior.dims();
    io::save_rtf(dir.join("mean.rtf"), prior.mean())?;
    io::save_rtf(
        dir.join("spectrum.rtf"),
        &ImageTensor::from_vec(h, w, c, prior.spectrum().to_vec())?,
    )?;
    let path = dir.join("prior.toml");
    std::fs::write(
        &path,
        "type = \"gaussian\"\nmean = \"mean.rtf\"\nspectrum = \"spectrum.rtf\"\n",
    )?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, ScheduleConfig};
    use crate::tensor::BlurKernel;
    use rand::SeedableRng;
    use rustfft::num_complex::Complex64;
    use rand_chacha::ChaCha8Rng;

    fn real_to_complex(v: &[f64]) -> Vec<Complex64> {
        v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }

    #[test]
    fn fitted_prior_recovers_level_and_variance() {
        let truth = StationaryGaussianPrior::power_law(ImageTensor::filled(64, 64, 1, 0.5), 0.04, 1.0, 1.0).unwrap();
        assert!((truth.pixel_variance() - 0.04).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sigma = 0.05;
        let y = truth.sample(&mut rng).add(&ImageTensor::random_normal(64, 64, 1, &mut rng).scaled(sigma));
        let fitted = StationaryGaussianPrior::fit_power_law(&y, sigma, 1.0, 1.0).unwrap();
        assert!((fitted.mean().get(3, 7, 0) - 0.5).abs() < 0.05);
        assert!((fitted.pixel_variance() / 0.04 - 1.0).abs() < 0.3, "{}", fitted.pixel_variance());
        let floor = StationaryGaussianPrior::fit_power_law(&ImageTensor::filled(8, 8, 1, 0.2), 0.1, 1.0, 1.0).unwrap();
        assert!((floor.pixel_variance() - 1e-6).abs() < 1e-12);
    }

    fn schedule() -> DiffusionSchedule {
        make_schedule(&ScheduleConfig::for_steps(100)).unwrap()
    }

    fn random_prior(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> StationaryGaussianPrior {
        let mean = ImageTensor::random_normal(h, w, c, rng).scaled(0.3);
        let spec: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(0.05..2.0)).collect();
        StationaryGaussianPrior::new(mean, spec).unwrap()
    }

    fn fd_gradient(f: impl Fn(&ImageTensor) -> f64, x: &ImageTensor) -> ImageTensor {
        let h = 1e-5;
        let mut g = x.clone();
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn max_abs_diff(a: &ImageTensor, b: &ImageTensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn noiseless_xhat0_is_identity() {
        let x = ImageTensor::filled(2, 2, 1, 0.3);
        let eps = ImageTensor::zeros(2, 2, 1);
        assert_eq!(xhat0_from_eps(&x, &eps, 1.0).unwrap(), x);
    }

    #[test]
    fn xhat0_hand_arithmetic() {
        let x = ImageTensor::filled(1, 1, 1, 1.0);
        let eps = ImageTensor::filled(1, 1, 1, 0.5);
        let got = xhat0_from_eps(&x, &eps, 0.25).unwrap().data()[0];
        assert!((got - (1.0 - 0.5 * 0.75f64.sqrt()) / 0.5).abs() < 1e-15);
        assert!(xhat0_from_eps(&x, &eps, 0.0).is_err());
    }

    #[test]
    fn score_from_eps_values() {
        let eps = ImageTensor::filled(1, 1, 1, 0.5);
        assert!((score_from_eps(&eps, 0.75).unwrap().data()[0] + 1.0).abs() < 1e-15);
        assert_eq!(
            score_from_eps(&ImageTensor::zeros(1, 1, 1), 0.5).unwrap().data()[0],
            0.0
        );
        assert!(score_from_eps(&eps, 1.0).is_err());
    }

    #[test]
    fn gaussian_eps_gives_conditional_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prior = random_prior(&mut rng, 8, 8, 2);
        let s = schedule();
        for t in [1, 10, 50, 100] {
            let x_t = ImageTensor::random_normal(8, 8, 2, &mut rng);
            let ab = s.alpha_bar(t);
            let eps = prior.predict_eps(&x_t, t, &s).unwrap();
            let xhat = xhat0_from_eps(&x_t, &eps, ab).unwrap();
            let cm = prior.conditional_mean(&x_t, ab).unwrap();
            assert!(max_abs_diff(&xhat, &cm) < 1e-9);
            let score = score_from_eps(&eps, ab).unwrap();
            assert!(max_abs_diff(&score, &prior.score(&x_t, ab).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn point_prior_collapses_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mean = ImageTensor::random_normal(4, 4, 1, &mut rng);
        let prior = StationaryGaussianPrior::isotropic(mean.clone(), 0.0).unwrap();
        let s = schedule();
        let x_t = ImageTensor::random_normal(4, 4, 1, &mut rng);
        let eps = prior.predict_eps(&x_t, 30, &s).unwrap();
        let xhat = xhat0_from_eps(&x_t, &eps, s.alpha_bar(30)).unwrap();
        assert!(max_abs_diff(&xhat, &mean) < 1e-12);
    }

    #[test]
    fn standard_normal_prior_is_invariant() {
        let prior = StationaryGaussianPrior::isotropic(ImageTensor::zeros(4, 4, 1), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = ImageTensor::random_normal(4, 4, 1, &mut rng);
        for ab in [0.9, 0.5, 0.01] {
            assert!(max_abs_diff(&prior.score(&x, ab).unwrap(), &x.scaled(-1.0)) < 1e-12);
        }
    }

    #[test]
    fn gaussian_score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prior = random_prior(&mut rng, 8, 8, 1);
        let x = ImageTensor::random_normal(8, 8, 1, &mut rng);
        let ab = 0.4;
        let fd = fd_gradient(|z| prior.log_density(z, ab).unwrap(), &x);
        assert!(max_abs_diff(&fd, &prior.score(&x, ab).unwrap()) < 1e-6);
    }

    #[test]
    fn gaussian_jvp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prior = random_prior(&mut rng, 6, 6, 2);
        let s = schedule();
        let x = ImageTensor::random_normal(6, 6, 2, &mut rng);
        let v = ImageTensor::random_normal(6, 6, 2, &mut rng);
        let t = 40;
        let ab = s.alpha_bar(t);
        // J symmetric: J^T v equals the directional derivative along v.
        let h = 1e-6;
        let fd = prior
            .conditional_mean(&x.lincomb(1.0, &v, h), ab)
            .unwrap()
            .sub(&prior.conditional_mean(&x.lincomb(1.0, &v, -h), ab).unwrap())
            .scaled(0.5 / h);
        let jvp = prior.jvp_xhat0(&x, t, &s, &v).unwrap();
        assert!(max_abs_diff(&fd, &jvp) < 1e-5 * jvp.norm_sq().sqrt());
    }

    fn random_gmm(rng: &mut ChaCha8Rng, k: usize, dims: (usize, usize, usize)) -> GmmPrior {
        let means = (0..k)
            .map(|_| ImageTensor::random_normal(dims.0, dims.1, dims.2, rng))
            .collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let z: f64 = raw.iter().sum();
        GmmPrior::new(means, 0.3, raw.iter().map(|w| w / z).collect()).unwrap()
    }

    #[test]
    fn gmm_score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gmm = random_gmm(&mut rng, 3, (2, 2, 1));
        for ab in [0.9, 0.5, 0.1] {
            let x = ImageTensor::random_normal(2, 2, 1, &mut rng);
            let fd = fd_gradient(|z| gmm.log_density(z, ab).unwrap(), &x);
            assert!(max_abs_diff(&fd, &gmm.score(&x, ab).unwrap()) < 1e-6);
            let r = gmm.responsibilities(&x, ab).unwrap();
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gmm_jvp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gmm = random_gmm(&mut rng, 3, (2, 2, 1));
        let s = schedule();
        let t = 20;
        let ab = s.alpha_bar(t);
        let x = ImageTensor::random_normal(2, 2, 1, &mut rng);
        let v = ImageTensor::random_normal(2, 2, 1, &mut rng);
        let jvp = gmm.jvp_xhat0(&x, t, &s, &v).unwrap();
        // Transpose action: compare <J^T v, e_i> with d/dx_i <x0_hat, v>.
        let fd = fd_gradient(|z| gmm.conditional_mean(z, ab).unwrap().dot(&v), &x);
        assert!(max_abs_diff(&fd, &jvp) < 1e-5 * (1.0 + jvp.norm_sq().sqrt()));
    }

    #[test]
    fn single_component_gmm_matches_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mean = ImageTensor::random_normal(3, 3, 1, &mut rng);
        let gmm = GmmPrior::new(vec![mean.clone()], 0.5, vec![1.0]).unwrap();
        let gauss = StationaryGaussianPrior::isotropic(mean, 0.5).unwrap();
        let s = schedule();
        let x = ImageTensor::random_normal(3, 3, 1, &mut rng);
        let a = gmm.predict_eps(&x, 25, &s).unwrap();
        let b = gauss.predict_eps(&x, 25, &s).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn symmetric_mixture_has_zero_score_at_origin() {
        let m = ImageTensor::from_vec(1, 2, 1, vec![1.0, -0.5]).unwrap();
        let gmm = GmmPrior::new(vec![m.clone(), m.scaled(-1.0)], 0.2, vec![0.5, 0.5]).unwrap();
        let s = gmm.score(&ImageTensor::zeros(1, 2, 1), 0.6).unwrap();
        assert!(s.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn posterior_near_exact_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prior = random_prior(&mut rng, 6, 6, 1);
        let y = ImageTensor::random_normal(6, 6, 1, &mut rng);
        let post = analytic_posterior(&y, &KernelGrid::delta(3), 1e-6, &prior).unwrap();
        assert!(max_abs_diff(&post.mean, &y) < 1e-4);

        let dogmatic = StationaryGaussianPrior::isotropic(prior.mean().clone(), 1e-14).unwrap();
        let post = analytic_posterior(&y, &KernelGrid::delta(3), 0.1, &dogmatic).unwrap();
        assert!(max_abs_diff(&post.mean, prior.mean()) < 1e-9);
        assert!(analytic_posterior(&y, &KernelGrid::delta(3), 0.0, &prior).is_err());
    }

    /// Dense covariance of a circulant prior, assembled column by column.
    fn dense_operator(apply: impl Fn(&ImageTensor) -> ImageTensor, n: (usize, usize)) -> nalgebra::DMatrix<f64> {
        let dim = n.0 * n.1;
        let mut m = nalgebra::DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let mut e = ImageTensor::zeros(n.0, n.1, 1);
            e.data_mut()[j] = 1.0;
            let col = apply(&e);
            for i in 0..dim {
                m[(i, j)] = col.data()[i];
            }
        }
        m
    }

    #[test]
    fn posterior_matches_dense_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let prior = random_prior(&mut rng, 8, 8, 1);
        let raw: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let z: f64 = raw.iter().sum();
        let k = BlurKernel::from_vec(3, raw.iter().map(|v| v / z).collect()).unwrap();
        let sigma = 0.2;
        let y = ImageTensor::random_normal(8, 8, 1, &mut rng);
        let post = analytic_posterior(&y, &k, sigma, &prior).unwrap();

        // Independent route: spatial-domain operators, dense algebra.
        let spec = prior.spectrum().to_vec();
        let cov = dense_operator(|e| apply_real_filter(e, &spec), (8, 8));
        let hmat = dense_operator(|e| spatial_conv(e, &k), (8, 8));
        let mu = nalgebra::DVector::from_column_slice(prior.mean().data());
        let yv = nalgebra::DVector::from_column_slice(y.data());
        let s = &hmat * &cov * hmat.transpose()
            + nalgebra::DMatrix::identity(64, 64) * sigma * sigma;
        let gain = &cov * hmat.transpose() * s.clone().try_inverse().unwrap();
        let mean = &mu + &gain * (&yv - &hmat * &mu);
        for i in 0..64 {
            assert!((mean[i] - post.mean.data()[i]).abs() < 1e-8);
        }
        let pcov = &cov - &gain * &hmat * &cov;
        // Posterior covariance is circulant: its first column is ifft of the spectrum.
        let col0 = crate::fft::ifft2_plane(&real_to_complex(&post.spectrum), 8, 8);
        for i in 0..64 {
            assert!((pcov[(i, 0)] - col0[i]).abs() < 1e-8);
        }
    }

    fn spatial_conv(x: &ImageTensor, k: &KernelGrid) -> ImageTensor {
        let (h, w, _) = x.dims();
        let half = (k.height() / 2) as isize;
        let mut out = ImageTensor::zeros(h, w, 1);
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for a in 0..k.height() {
                    for b in 0..k.width() {
                        let si = (i as isize - (a as isize - half)).rem_euclid(h as isize) as usize;
                        let sj = (j as isize - (b as isize - half)).rem_euclid(w as isize) as usize;
                        acc += k.get(a, b) * x.get(si, sj, 0);
                    }
                }
                out.set(i, j, 0, acc);
            }
        }
        out
    }

    #[test]
    fn marginal_likelihood_matches_dense_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let prior = random_prior(&mut rng, 4, 4, 1);
        let k = BlurKernel::from_vec(3, vec![0.0, 0.1, 0.0, 0.2, 0.4, 0.1, 0.0, 0.2, 0.0]).unwrap();
        let y = ImageTensor::random_normal(4, 4, 1, &mut rng);
        let sigma = 0.3;
        let got = marginal_log_likelihood(&y, &k, sigma, &prior).unwrap();
        let spec = prior.spectrum().to_vec();
        let cov = dense_operator(|e| apply_real_filter(e, &spec), (4, 4));
        let hmat = dense_operator(|e| spatial_conv(e, &k), (4, 4));
        let s = &hmat * &cov * hmat.transpose() + nalgebra::DMatrix::identity(16, 16) * sigma * sigma;
        let r = nalgebra::DVector::from_column_slice(y.data())
            - &hmat * nalgebra::DVector::from_column_slice(prior.mean().data());
        let quad = (r.transpose() * s.clone().try_inverse().unwrap() * &r)[(0, 0)];
        let logdet = s.determinant().ln();
        let want = -0.5 * (quad + logdet + 16.0 * (2.0 * PI).ln());
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn prior_spec_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let prior = random_prior(&mut rng, 4, 4, 1);
        let path = save_gaussian_prior(dir.path(), &prior).unwrap();
        assert_eq!(load_prior(&path).unwrap(), Prior::Gaussian(prior));
        let bad = parse_prior_spec("type = \"laplace\"", dir.path()).unwrap_err();
        assert!(matches!(bad, Error::PriorSpec(_)));
    }

    #[test]
    fn gmm_spec_parses() {
        let dir = tempfile::tempdir().unwrap();
        io::save_rtf(dir.path().join("a.rtf"), &ImageTensor::filled(2, 2, 1, 1.0)).unwrap();
        io::save_rtf(dir.path().join("b.rtf"), &ImageTensor::filled(2, 2, 1, -1.0)).unwrap();
        let text = "type = \"gmm\"\nmeans = [\"a.rtf\", \"b.rtf\"]\nvariance = 0.1\nweights = [0.25, 0.75]\n";
        match parse_prior_spec(text, dir.path()).unwrap() {
            Prior::Gmm(g) => assert_eq!(g.components(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
