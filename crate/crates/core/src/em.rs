//! Diffusion EM and Fast Diffusion EM drivers, plus kernel initialization.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::circular_convolve;
use crate::guidance::{GuidanceConfig, GuidanceKind, Observation};
use crate::mstep::{hqs_mstep, KernelRegularizer, MStepConfig};
use crate::sampler::{
    conditional_score, ddpm_step, particle_rng, predict_xhat0, sample_streams, ParticleEnsemble,
};
use crate::schedule::{make_schedule, DiffusionSchedule, ScheduleConfig};
use crate::score::{analytic_posterior, ScoreModel, StationaryGaussianPrior};
use crate::tensor::{BlurKernel, ImageTensor, KernelGrid};

/// Starting kernel for either driver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelInit {
    Delta,
    Uniform,
    /// Isotropic Gaussian; `None` means `ksize / 6`.
    Gaussian { std: Option<f64> },
}

impl Default for KernelInit {
    fn default() -> Self {
        KernelInit::Gaussian { std: None }
    }
}

impl FromStr for KernelInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "delta" => return Ok(KernelInit::Delta),
            "uniform" => return Ok(KernelInit::Uniform),
            "gaussian" | "gaussian:k/6" => return Ok(KernelInit::Gaussian { std: None }),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("gaussian:") {
            let std: f64 = rest
                .parse()
                .map_err(|_| Error::invalid(format!("bad gaussian std '{rest}'")))?;
            if !(std > 0.0 && std.is_finite()) {
                return Err(Error::invalid(format!("gaussian std must be > 0, got {std}")));
            }
            return Ok(KernelInit::Gaussian { std: Some(std) });
        }
        Err(Error::invalid(format!(
            "unknown kernel init '{s}' (expected delta, uniform or gaussian:STD)"
        )))
    }
}

impl fmt::Display for KernelInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelInit::Delta => write!(f, "delta"),
            KernelInit::Uniform => write!(f, "uniform"),
            KernelInit::Gaussian { std: None } => write!(f, "gaussian:k/6"),
            KernelInit::Gaussian { std: Some(s) } => write!(f, "gaussian:{s}"),
        }
    }
}

pub fn init_kernel(spec: KernelInit, ksize: usize) -> Result<BlurKernel> {
    if ksize == 0 {
        return Err(Error::invalid("kernel size must be >= 1"));
    }
    let n = ksize * ksize;
    let data = match spec {
        KernelInit::Delta => return BlurKernel::delta(ksize),
        KernelInit::Uniform => vec![1.0 / n as f64; n],
        KernelInit::Gaussian { std } => {
            let std = std.unwrap_or(ksize as f64 / 6.0);
            let c = (ksize / 2) as f64;
            let mut g: Vec<f64> = (0..n)
                .map(|idx| {
                    let (i, j) = ((idx / ksize) as f64, (idx % ksize) as f64);
                    (-((i - c).powi(2) + (j - c).powi(2)) / (2.0 * std * std)).exp()
                })
                .collect();
            let z: f64 = g.iter().sum();
            g.iter_mut().for_each(|v| *v /= z);
            g
        }
    };
    BlurKernel::from_vec(ksize, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// EM iterations `L` (Diffusion EM only).
    pub iterations: usize,
    pub particles: usize,
    pub guidance: GuidanceConfig,
    pub schedule: ScheduleConfig,
    pub mstep: MStepConfig,
    pub init: KernelInit,
    pub kernel_size: usize,
    pub seed: u64,
    /// Fast EM runs the M-step every `mstep_every` timesteps.
    pub mstep_every: usize,
    /// Kernel snapshots are kept for every `trace_stride`-th trace record.
    pub trace_stride: usize,
    /// Per-particle RNG streams; `None` means `0..particles`.
    pub streams: Option<Vec<u64>>,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            particles: 1,
            guidance: GuidanceConfig::new(GuidanceKind::PiGdm),
            schedule: ScheduleConfig::default(),
            mstep: MStepConfig::default(),
            init: KernelInit::default(),
            kernel_size: 11,
            seed: 0,
            mstep_every: 1,
            trace_stride: 1,
            streams: None,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("EM needs at least one iteration"));
        }
        if self.particles == 0 {
            return Err(Error::invalid("EM needs at least one particle"));
        }
        if self.kernel_size == 0 || self.mstep_every == 0 || self.trace_stride == 0 {
            return Err(Error::invalid(
                "kernel size, M-step cadence and trace stride must be >= 1",
            ));
        }
        if let Some(s) = &self.streams {
            if s.len() != self.particles {
                return Err(Error::invalid(format!(
                    "{} streams given for {} particles",
                    s.len(),
                    self.particles
                )));
            }
        }
        self.guidance.kind.validate()?;
        self.mstep.validate()
    }

    pub fn stream_ids(&self) -> Vec<u64> {
        self.streams
            .clone()
            .unwrap_or_else(|| (0..self.particles as u64).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    /// EM iteration (Diffusion EM) or timestep (Fast EM).
    pub step: usize,
    pub data_fit: f64,
    pub kernel: Option<KernelGrid>,
}

#[derive(Clone, Debug)]
pub struct EmOutput {
    pub particles: ParticleEnsemble,
    pub kernel: KernelGrid,
    pub trace: Vec<TraceRecord>,
}

impl EmOutput {
    pub fn blur_kernel(&self) -> Result<BlurKernel> {
        BlurKernel::new(self.kernel.clone())
    }
}

/// `(1 / (2 sigma^2 n)) sum_i |y - H x^i|^2`.
pub fn data_fit(y: &ImageTensor, xs: &[ImageTensor], kernel: &KernelGrid, sigma: f64) -> Result<f64> {
    let mut total = 0.0;
    for x in xs {
        total += circular_convolve(x, kernel)?.sub(y).norm_sq();
    }
    Ok(total / (2.0 * sigma * sigma * xs.len() as f64))
}

/// Draws posterior samples `x ~ p(x | y, H)` for the E-step.
pub trait PosteriorSampler: Send + Sync {
    /// One sample per stream, all noise derived from `seed`.
    fn sample(&self, obs: &Observation, streams: &[u64], seed: u64) -> Result<ParticleEnsemble>;
}

/// Guided DDPM runs.
pub struct DiffusionSampler<'a> {
    pub model: &'a dyn ScoreModel,
    pub schedule: DiffusionSchedule,
    pub guidance: GuidanceConfig,
}

impl PosteriorSampler for DiffusionSampler<'_> {
    fn sample(&self, obs: &Observation, streams: &[u64], seed: u64) -> Result<ParticleEnsemble> {
        sample_streams(obs, streams, &self.schedule, &self.guidance, self.model, seed)
    }
}

/// Exact samples from the Gaussian posterior.
pub struct AnalyticSampler<'a> {
    pub prior: &'a StationaryGaussianPrior,
}

impl PosteriorSampler for AnalyticSampler<'_> {
    fn sample(&self, obs: &Observation, streams: &[u64], seed: u64) -> Result<ParticleEnsemble> {
        let post = analytic_posterior(obs.y(), obs.kernel(), obs.sigma(), self.prior)?;
        let particles = streams
            .iter()
            .map(|&s| post.sample(&mut particle_rng(seed, s)))
            .collect();
        ParticleEnsemble::with_streams(particles, streams.to_vec())
    }
}

fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    seed.wrapping_add((iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("sigma must be > 0, got {sigma}")))
    }
}

fn snapshot(count: usize, stride: usize, last: bool, kernel: &KernelGrid) -> Option<KernelGrid> {
    (count % stride == 0 || last).then(|| kernel.clone())
}

/// Diffusion EM with DDPM posterior sampling.
pub fn diffusion_em(
    y: &ImageTensor,
    sigma: f64,
    config: &EmConfig,
    model: &dyn ScoreModel,
    regularizer: &dyn KernelRegularizer,
) -> Result<EmOutput> {
    let sampler = DiffusionSampler {
        model,
        schedule: make_schedule(&config.schedule)?,
        guidance: config.guidance,
    };
    diffusion_em_with(y, sigma, config, &sampler, regularizer)
}

/// Diffusion EM over an arbitrary E-step sampler.
pub fn diffusion_em_with(
    y: &ImageTensor,
    sigma: f64,
    config: &EmConfig,
    sampler: &dyn PosteriorSampler,
    regularizer: &dyn KernelRegularizer,
) -> Result<EmOutput> {
    config.validate()?;
    check_sigma(sigma)?;
    let init = init_kernel(config.init, config.kernel_size)?.into_grid();
    diffusion_em_from(y, sigma, config, sampler, regularizer, init)
}

/// Diffusion EM from an explicit starting kernel.
pub fn diffusion_em_from(
    y: &ImageTensor,
    sigma: f64,
    config: &EmConfig,
    sampler: &dyn PosteriorSampler,
    regularizer: &dyn KernelRegularizer,
    init: KernelGrid,
) -> Result<EmOutput> {
    config.validate()?;
    check_sigma(sigma)?;
    let streams = config.stream_ids();
    let mut kernel = init;
    let mut obs = Observation::new(y, &kernel, sigma)?;
    let mut trace = Vec::with_capacity(config.iterations);
    let mut ensemble = None;
    for l in 1..=config.iterations {
        let samples = sampler.sample(&obs, &streams, iteration_seed(config.seed, l))?;
        kernel = hqs_mstep(y, samples.particles(), sigma, &config.mstep, regularizer, &kernel, None)?;
        obs = obs.with_kernel(&kernel)?;
        let fit = data_fit(y, samples.particles(), &kernel, sigma)?;
        log::debug!("em iteration {l}: data fit {fit:.6e}");
        trace.push(TraceRecord {
            step: l,
            data_fit: fit,
            kernel: snapshot(l - 1, config.trace_stride, l == config.iterations, &kernel),
        });
        ensemble = Some(samples);
    }
    Ok(EmOutput {
        particles: ensemble.expect("at least one iteration"),
        kernel,
        trace,
    })
}

/// Fast Diffusion EM: one reverse pass, kernel M-step on the clean estimates.
pub fn fast_diffusion_em(
    y: &ImageTensor,
    sigma: f64,
    config: &EmConfig,
    model: &dyn ScoreModel,
    regularizer: &dyn KernelRegularizer,
) -> Result<EmOutput> {
    config.validate()?;
    let init = init_kernel(config.init, config.kernel_size)?.into_grid();
    fast_diffusion_em_from(y, sigma, config, model, regularizer, init)
}

pub fn fast_diffusion_em_from(
    y: &ImageTensor,
    sigma: f64,
    config: &EmConfig,
    model: &dyn ScoreModel,
    regularizer: &dyn KernelRegularizer,
    init: KernelGrid,
) -> Result<EmOutput> {
    config.validate()?;
    check_sigma(sigma)?;
    let schedule = make_schedule(&config.schedule)?;
    let streams = config.stream_ids();
    let (h, w, c) = y.dims();
    let mut rngs: Vec<ChaCha8Rng> = streams.iter().map(|&s| particle_rng(config.seed, s)).collect();
    let mut xs: Vec<ImageTensor> = rngs
        .iter_mut()
        .map(|rng| ImageTensor::random_normal(h, w, c, rng))
        .collect();
    let mut kernel = init;
    let mut obs = Observation::new(y, &kernel, sigma)?;
    let mut trace = Vec::new();
    let steps = schedule.steps();
    for (count, t) in (1..=steps).rev().enumerate() {
        let preds = xs
            .par_iter()
            .map(|x| predict_xhat0(x, t, model, &schedule))
            .collect::<Result<Vec<_>>>()?;
        let xhat0s: Vec<ImageTensor> = preds.iter().map(|(_, xh)| xh.clone()).collect();
        if count % config.mstep_every == 0 {
            let r_t = match config.guidance.kind {
                GuidanceKind::PiGdm => Some(schedule.r(t)),
                _ => None,
            };
            kernel = hqs_mstep(y, &xhat0s, sigma, &config.mstep, regularizer, &kernel, r_t)?;
            obs = obs.with_kernel(&kernel)?;
        }
        xs.par_iter_mut()
            .zip(rngs.par_iter_mut())
            .zip(preds.par_iter())
            .map(|((x, rng), (eps, xhat0))| {
                let s = conditional_score(x, eps, xhat0, t, &obs, &schedule, model, &config.guidance)?;
                *x = ddpm_step(x, t, &s, &schedule, rng)?;
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
        if count % config.trace_stride == 0 || t == 1 {
            let fit = data_fit(y, &xhat0s, &kernel, sigma)?;
            log::debug!("fast em t={t}: data fit {fit:.6e}");
            trace.push(TraceRecord {
                step: t,
                data_fit: fit,
                kernel: Some(kernel.clone()),
            });
        }
    }
    Ok(EmOutput {
        particles: ParticleEnsemble::with_streams(xs, streams)?,
        kernel,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::kernel_mse;
    use crate::mstep::{IdentityRegularizer, L2Regularizer};
    use crate::schedule::{RMode, ZetaMode};
    use crate::score::marginal_log_likelihood;
    use crate::synth::{sample_motion_kernel, DegradationConfig};

    #[test]
    fn init_specs() {
        let d = init_kernel("delta".parse().unwrap(), 5).unwrap();
        assert_eq!(d.get(2, 2), 1.0);
        assert_eq!(d.sum(), 1.0);
        let u = init_kernel("uniform".parse().unwrap(), 5).unwrap();
        assert!(u.data().iter().all(|&v| v == 1.0 / 25.0));
        let g = init_kernel("gaussian:1.5".parse().unwrap(), 11).unwrap();
        assert!((g.sum() - 1.0).abs() < 1e-12);
        let ratio = g.get(5, 6) / g.get(5, 5);
        assert!((ratio - (-1.0 / (2.0 * 2.25f64)).exp()).abs() < 1e-12);
        assert_eq!(g.get(4, 5), g.get(6, 5));
    }

    #[test]
    fn init_spec_parsing() {
        assert_eq!("gaussian".parse::<KernelInit>().unwrap(), KernelInit::default());
        assert_eq!("gaussian:k/6".parse::<KernelInit>().unwrap(), KernelInit::default());
        for bad in ["box", "gaussian:-1", "gaussian:x", "gaussian:0"] {
            assert!(bad.parse::<KernelInit>().is_err(), "{bad}");
        }
        for spec in [KernelInit::Delta, KernelInit::Uniform, KernelInit::default(), KernelInit::Gaussian { std: Some(2.5) }] {
            assert_eq!(spec.to_string().parse::<KernelInit>().unwrap(), spec);
        }
        let wide = init_kernel(KernelInit::default(), 9).unwrap();
        let explicit = init_kernel(KernelInit::Gaussian { std: Some(1.5) }, 9).unwrap();
        assert_eq!(wide, explicit);
    }

    fn texture(seed: u64, size: usize) -> (StationaryGaussianPrior, ImageTensor) {
        let prior = StationaryGaussianPrior::power_law(ImageTensor::filled(size, size, 1, 0.5), 0.04, 0.1, 1.0).unwrap();
        let x = prior.sample(&mut particle_rng(seed, 99));
        (prior, x)
    }

    fn small_config(steps: usize) -> EmConfig {
        EmConfig {
            iterations: 2,
            particles: 1,
            schedule: ScheduleConfig::for_steps(steps),
            kernel_size: 5,
            ..Default::default()
        }
    }

    #[test]
    fn diffusion_em_keeps_delta() {
        let (prior, x) = texture(1, 16);
        let cfg = EmConfig {
            init: KernelInit::Delta,
            guidance: GuidanceConfig::new(GuidanceKind::Exact),
            ..small_config(50)
        };
        let out = diffusion_em(&x, 0.01, &cfg, &prior, &L2Regularizer).unwrap();
        let delta = KernelGrid::delta(5);
        assert_eq!(out.trace.len(), 2);
        for rec in &out.trace {
            let k = rec.kernel.as_ref().unwrap();
            assert!(kernel_mse(k, &delta).unwrap() < 1e-6, "{:?}", k);
        }
    }

    #[test]
    fn fast_em_keeps_delta() {
        let (prior, x) = texture(2, 16);
        let cfg = EmConfig {
            init: KernelInit::Delta,
            schedule: ScheduleConfig {
                r: RMode::DataVariance(0.04),
                ..ScheduleConfig::for_steps(50)
            },
            mstep: MStepConfig {
                beta: 1e9,
                ..Default::default()
            },
            ..small_config(50)
        };
        let out = fast_diffusion_em(&x, 0.01, &cfg, &prior, &L2Regularizer).unwrap();
        assert!(kernel_mse(&out.kernel, &KernelGrid::delta(5)).unwrap() < 1e-4);
        assert_eq!(out.trace.len(), 50);
        assert_eq!(out.trace.last().unwrap().step, 1);
    }

    fn blurred_problem(seed: u64) -> (StationaryGaussianPrior, ImageTensor) {
        blurred_problem_sized(seed, 16)
    }

    fn blurred_problem_sized(seed: u64, size: usize) -> (StationaryGaussianPrior, ImageTensor) {
        let (prior, x) = texture(seed, size);
        let mut rng = particle_rng(seed, 7);
        let k = sample_motion_kernel(
            &DegradationConfig {
                kernel_size: 5,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let y = crate::synth::degrade(&x, &k, 0.02, &mut rng).unwrap();
        (prior, y)
    }

    #[test]
    fn fast_em_is_deterministic() {
        let (prior, y) = blurred_problem(3);
        let cfg = EmConfig {
            particles: 3,
            ..small_config(20)
        };
        let a = fast_diffusion_em(&y, 0.02, &cfg, &prior, &L2Regularizer).unwrap();
        let b = fast_diffusion_em(&y, 0.02, &cfg, &prior, &L2Regularizer).unwrap();
        assert_eq!(a.kernel, b.kernel);
        assert_eq!(a.particles, b.particles);
        let c = fast_diffusion_em(&y, 0.02, &EmConfig { seed: 1, ..cfg }, &prior, &L2Regularizer).unwrap();
        assert_ne!(a.particles, c.particles);
    }

    fn assert_relabeled(a: &EmOutput, b: &EmOutput, perm: &[usize]) {
        let diff: f64 = a.kernel.data().iter().zip(b.kernel.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(a.particles.streams()[p], b.particles.streams()[i]);
            let d = a.particles.get(p).sub(b.particles.get(i)).norm_sq().sqrt();
            assert!(d < 1e-8, "{d}");
        }
    }

    #[test]
    fn drivers_ignore_particle_labels() {
        let (prior, y) = blurred_problem(4);
        let perm = [2usize, 0, 3, 1];
        let base = EmConfig {
            particles: 4,
            ..small_config(20)
        };
        let relabeled = EmConfig {
            streams: Some(perm.iter().map(|&p| p as u64).collect()),
            ..base.clone()
        };
        let a = fast_diffusion_em(&y, 0.02, &base, &prior, &L2Regularizer).unwrap();
        let b = fast_diffusion_em(&y, 0.02, &relabeled, &prior, &L2Regularizer).unwrap();
        assert_relabeled(&a, &b, &perm);

        let sampler = AnalyticSampler { prior: &prior };
        let a = diffusion_em_with(&y, 0.02, &base, &sampler, &L2Regularizer).unwrap();
        let b = diffusion_em_with(&y, 0.02, &relabeled, &sampler, &L2Regularizer).unwrap();
        assert_relabeled(&a, &b, &perm);
    }

    #[test]
    fn all_particles_share_the_kernel() {
        // A lone particle under a given kernel sequence evolves exactly as it
        // does inside the batch only if the kernel it sees is the shared one.
        let (prior, y) = blurred_problem(5);
        let cfg = EmConfig {
            particles: 2,
            mstep: MStepConfig {
                iterations: 1,
                ..Default::default()
            },
            ..small_config(5)
        };
        let out = fast_diffusion_em(&y, 0.02, &cfg, &prior, &IdentityRegularizer).unwrap();
        let kernels: Vec<&KernelGrid> = out.trace.iter().map(|r| r.kernel.as_ref().unwrap()).collect();
        assert_eq!(kernels.len(), 5);
        let schedule = make_schedule(&cfg.schedule).unwrap();
        let mut rng = particle_rng(cfg.seed, 1);
        let mut x = ImageTensor::random_normal(16, 16, 1, &mut rng);
        for (k, t) in kernels.iter().zip((1..=5).rev()) {
            let obs = Observation::new(&y, k, 0.02).unwrap();
            x = crate::sampler::guided_step(&x, t, &obs, &schedule, &prior, &cfg.guidance, &mut rng).unwrap();
        }
        assert_eq!(&x, out.particles.get(1));
    }

    fn toy_config(seed: u64) -> EmConfig {
        EmConfig {
            iterations: 10,
            particles: 256,
            mstep: MStepConfig {
                iterations: 1,
                lambda: 0.0,
                beta: 1e-8,
                project_simplex: false,
                ..Default::default()
            },
            kernel_size: 3,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn em_toy_likelihood_climbs() {
        let prior = StationaryGaussianPrior::power_law(ImageTensor::filled(3, 3, 1, 0.3), 1.0, 0.3, 1.0).unwrap();
        let mut rng = particle_rng(11, 0);
        let truth = KernelGrid::from_vec(3, 3, vec![0.0, 0.1, 0.0, 0.2, 0.5, 0.1, 0.0, 0.1, 0.0]).unwrap();
        let sigma = 0.1;
        let x = prior.sample(&mut rng);
        let y = crate::synth::degrade(&x, &truth, sigma, &mut rng).unwrap();
        let sampler = AnalyticSampler { prior: &prior };
        let out = diffusion_em_from(&y, sigma, &toy_config(1), &sampler, &IdentityRegularizer, KernelGrid::delta(3)).unwrap();
        let mut prev = marginal_log_likelihood(&y, &KernelGrid::delta(3), sigma, &prior).unwrap();
        let start = prev;
        for rec in &out.trace {
            let ll = marginal_log_likelihood(&y, rec.kernel.as_ref().unwrap(), sigma, &prior).unwrap();
            assert!(ll > prev - 0.05, "{ll} after {prev}");
            prev = ll;
        }
        assert!(prev > start);
    }

    #[test]
    fn constant_terms_do_not_move_the_argmax() {
        // Full-grid kernel, so the Fourier solve is the unconstrained minimizer.
        let (prior, y) = blurred_problem_sized(6, 15);
        let sampler = AnalyticSampler { prior: &prior };
        let prev = init_kernel(KernelInit::default(), 15).unwrap().into_grid();
        let obs = Observation::new(&y, &prev, 0.02).unwrap();
        let samples = sampler.sample(&obs, &[0, 1, 2], 3).unwrap();
        let (sigma, beta) = (0.02, 10.0);
        let cfg = MStepConfig {
            iterations: 1,
            lambda: 0.0,
            beta,
            project_simplex: false,
            ..Default::default()
        };
        let k = hqs_mstep(&y, samples.particles(), sigma, &cfg, &IdentityRegularizer, &prev, None).unwrap();
        let log_prior: f64 = samples.particles().iter().map(|x| prior.log_density(x, 1.0).unwrap()).sum();
        let objective = |k: &KernelGrid, with_prior: bool| {
            let d: f64 = k.data().iter().zip(prev.data()).map(|(a, b)| (a - b).powi(2)).sum();
            let q = -data_fit(&y, samples.particles(), k, sigma).unwrap() - beta * d / 2.0;
            if with_prior { q + log_prior } else { q }
        };
        let mut rng = particle_rng(6, 1);
        for _ in 0..20 {
            let dir = ImageTensor::random_normal(15, 15, 1, &mut rng);
            let mut moved = k.clone();
            for (m, d) in moved.data_mut().iter_mut().zip(dir.data()) {
                *m += 1e-4 * d;
            }
            for with_prior in [false, true] {
                assert!(objective(&moved, with_prior) < objective(&k, with_prior));
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let (prior, y) = blurred_problem(7);
        for cfg in [
            EmConfig { particles: 0, ..small_config(5) },
            EmConfig { iterations: 0, ..small_config(5) },
            EmConfig { streams: Some(vec![0, 1]), ..small_config(5) },
        ] {
            assert!(fast_diffusion_em(&y, 0.02, &cfg, &prior, &L2Regularizer).is_err());
        }
        assert!(fast_diffusion_em(&y, 0.0, &small_config(5), &prior, &L2Regularizer).is_err());
        let cfg = EmConfig {
            schedule: ScheduleConfig {
                zeta: ZetaMode::One,
                ..ScheduleConfig::for_steps(5)
            },
            ..small_config(5)
        };
        assert!(fast_diffusion_em(&y, 0.02, &cfg, &prior, &L2Regularizer).is_ok());
    }
}
