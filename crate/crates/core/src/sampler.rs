//! Guided ancestral DDPM sampling over independent particles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::guidance::{guidance_from_xhat0, GuidanceConfig, Observation};
use crate::schedule::DiffusionSchedule;
use crate::score::{xhat0_from_eps, ScoreModel};
use crate::tensor::{ImageTensor, KernelGrid};

/// `n` images of equal shape, each tagged with the RNG stream that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    particles: Vec<ImageTensor>,
    streams: Vec<u64>,
}

impl ParticleEnsemble {
    pub fn new(particles: Vec<ImageTensor>) -> Result<Self> {
        let streams = (0..particles.len() as u64).collect();
        Self::with_streams(particles, streams)
    }

    pub fn with_streams(particles: Vec<ImageTensor>, streams: Vec<u64>) -> Result<Self> {
        let first = particles
            .first()
            .ok_or_else(|| Error::invalid("an ensemble needs at least one particle"))?;
        if streams.len() != particles.len() {
            return Err(Error::invalid("one stream id per particle"));
        }
        for p in &particles[1..] {
            first.check_same_shape(p, "ensemble")?;
        }
        Ok(Self { particles, streams })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.particles[0].dims()
    }

    pub fn particles(&self) -> &[ImageTensor] {
        &self.particles
    }

    pub fn streams(&self) -> &[u64] {
        &self.streams
    }

    pub fn get(&self, i: usize) -> &ImageTensor {
        &self.particles[i]
    }

    pub fn into_particles(self) -> Vec<ImageTensor> {
        self.particles
    }

    pub fn mean(&self) -> ImageTensor {
        let (h, w, c) = self.dims();
        let mut acc = ImageTensor::zeros(h, w, c);
        for p in &self.particles {
            acc.axpy(1.0, p);
        }
        acc.scaled(1.0 / self.len() as f64)
    }
}

/// Independent stream `index` of the master seed.
pub fn particle_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `x_{t-1} = (x_t + beta_t s) / sqrt(alpha_t) + sigma_tilde_t z`; no noise at `t = 1`.
pub fn ddpm_step<R: Rng + ?Sized>(
    x_t: &ImageTensor,
    t: usize,
    score: &ImageTensor,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<ImageTensor> {
    schedule.check_step(t)?;
    x_t.check_same_shape(score, "ddpm step")?;
    let mut next = x_t.lincomb(1.0, score, schedule.beta(t));
    next.scale(1.0 / schedule.alpha(t).sqrt());
    if t > 1 {
        let (h, w, c) = x_t.dims();
        next.axpy(
            schedule.sigma_tilde(t),
            &ImageTensor::random_normal(h, w, c, rng),
        );
    }
    Ok(next)
}

/// Noise prediction and the implied clean estimate.
pub fn predict_xhat0(
    x_t: &ImageTensor,
    t: usize,
    model: &dyn ScoreModel,
    schedule: &DiffusionSchedule,
) -> Result<(ImageTensor, ImageTensor)> {
    let eps = model.predict_eps(x_t, t, schedule)?;
    let xhat0 = xhat0_from_eps(x_t, &eps, schedule.alpha_bar(t))?;
    Ok((eps, xhat0))
}

/// `zeta_t g - eps / sqrt(1 - abar_t)`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_score(
    x_t: &ImageTensor,
    eps: &ImageTensor,
    xhat0: &ImageTensor,
    t: usize,
    obs: &Observation,
    schedule: &DiffusionSchedule,
    model: &dyn ScoreModel,
    guidance: &GuidanceConfig,
) -> Result<ImageTensor> {
    let g = guidance_from_xhat0(x_t, xhat0, t, obs, schedule, model, guidance)?;
    let ab = schedule.alpha_bar(t);
    Ok(g.lincomb(schedule.zeta(t), eps, -1.0 / (1.0 - ab).sqrt()))
}

/// One guided reverse step for a single particle.
pub fn guided_step<R: Rng + ?Sized>(
    x_t: &ImageTensor,
    t: usize,
    obs: &Observation,
    schedule: &DiffusionSchedule,
    model: &dyn ScoreModel,
    guidance: &GuidanceConfig,
    rng: &mut R,
) -> Result<ImageTensor> {
    let (eps, xhat0) = predict_xhat0(x_t, t, model, schedule)?;
    let s = conditional_score(x_t, &eps, &xhat0, t, obs, schedule, model, guidance)?;
    ddpm_step(x_t, t, &s, schedule, rng)
}

fn run_particle(
    index: u64,
    seed: u64,
    obs: &Observation,
    schedule: &DiffusionSchedule,
    model: &dyn ScoreModel,
    guidance: &GuidanceConfig,
) -> Result<ImageTensor> {
    let mut rng = particle_rng(seed, index);
    let (h, w, c) = obs.y().dims();
    let mut x = ImageTensor::random_normal(h, w, c, &mut rng);
    for t in (1..=schedule.steps()).rev() {
        x = guided_step(&x, t, obs, schedule, model, guidance, &mut rng)?;
    }
    Ok(x)
}

/// Runs `n` independent guided trajectories from `x_T ~ N(0, I)`. Particle `i`
/// draws all of its noise from stream `i` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn sample_nonblind(
    y: &ImageTensor,
    sigma: f64,
    kernel: &KernelGrid,
    n: usize,
    schedule: &DiffusionSchedule,
    guidance: &GuidanceConfig,
    model: &dyn ScoreModel,
    seed: u64,
) -> Result<ParticleEnsemble> {
    let obs = Observation::new(y, kernel, sigma)?;
    sample_observation(&obs, n, schedule, guidance, model, seed)
}

pub fn sample_observation(
    obs: &Observation,
    n: usize,
    schedule: &DiffusionSchedule,
    guidance: &GuidanceConfig,
    model: &dyn ScoreModel,
    seed: u64,
) -> Result<ParticleEnsemble> {
    let streams: Vec<u64> = (0..n as u64).collect();
    sample_streams(obs, &streams, schedule, guidance, model, seed)
}

/// One particle per entry of `streams`, in that order.
pub fn sample_streams(
    obs: &Observation,
    streams: &[u64],
    schedule: &DiffusionSchedule,
    guidance: &GuidanceConfig,
    model: &dyn ScoreModel,
    seed: u64,
) -> Result<ParticleEnsemble> {
    if streams.is_empty() {
        return Err(Error::invalid("need at least one particle"));
    }
    guidance.kind.validate()?;
    let particles = streams
        .par_iter()
        .map(|&i| run_particle(i, seed, obs, schedule, model, guidance))
        .collect::<Result<Vec<_>>>()?;
    ParticleEnsemble::with_streams(particles, streams.to_vec())
}
