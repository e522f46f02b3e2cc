//! DDPM noise schedules.
//!
//! Tables are indexed by timestep `0..=T`; index 0 is the data end
//! (`alpha_bar[0] = 1`, `beta[0] = 0`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Choice of the reverse-step noise scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SigmaTildeMode {
    /// `sqrt((1 - abar[t-1]) / (1 - abar[t]) * beta[t])`
    #[default]
    PosteriorVariance,
    SqrtBeta,
}

/// Weight on the likelihood gradient in the conditional score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ZetaMode {
    #[default]
    SqrtAlphaBar,
    One,
}

/// Standard deviation `r_t` of the Gaussian approximation to `p(x0 | x_t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub enum RMode {
    /// `r_t^2 = 1 - abar[t]`, i.e. `s^2 / (1 + s^2)` with `s^2 = (1 - abar) / abar`.
    #[default]
    VarianceRatio,
    /// Posterior variance of `x0 | x_t` for data of per-pixel variance `v`:
    /// `r_t^2 = v (1 - abar) / (abar v + 1 - abar)`. Equals `VarianceRatio` at `v = 1`.
    DataVariance(f64),
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma_tilde: SigmaTildeMode,
    pub zeta: ZetaMode,
    pub r: RMode,
}

impl ScheduleConfig {
    /// Linear ramp `1e-4 -> 0.02` for 1000 steps, rescaled by `1000 / steps`
    /// so shorter schedules still end near pure noise.
    pub fn for_steps(steps: usize) -> Self {
        let scale = 1000.0 / steps.max(1) as f64;
        Self {
            steps,
            beta_min: (1e-4 * scale).min(0.5),
            beta_max: (0.02 * scale).min(0.999),
            sigma_tilde: SigmaTildeMode::default(),
            zeta: ZetaMode::default(),
            r: RMode::default(),
        }
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::for_steps(1000)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma_tilde: Vec<f64>,
    zeta: Vec<f64>,
    r: Vec<f64>,
}

pub fn make_schedule(config: &ScheduleConfig) -> Result<DiffusionSchedule> {
    let ScheduleConfig {
        steps,
        beta_min,
        beta_max,
        ..
    } = *config;
    if steps == 0 {
        return Err(Error::Schedule("T must be >= 1".into()));
    }
    if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Schedule(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    match config.r {
        RMode::Constant(r) if !(r >= 0.0 && r.is_finite()) => {
            return Err(Error::Schedule(format!("r_t must be >= 0, got {r}")));
        }
        RMode::DataVariance(v) if !(v > 0.0 && v.is_finite()) => {
            return Err(Error::Schedule(format!("data variance must be > 0, got {v}")));
        }
        _ => {}
    }

    let mut beta = vec![0.0; steps + 1];
    for (t, b) in beta.iter_mut().enumerate().skip(1) {
        let frac = if steps == 1 {
            0.0
        } else {
            (t - 1) as f64 / (steps - 1) as f64
        };
        *b = beta_min + (beta_max - beta_min) * frac;
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
    }
    let mut sigma_tilde = vec![0.0; steps + 1];
    for t in 1..=steps {
        sigma_tilde[t] = match config.sigma_tilde {
            SigmaTildeMode::SqrtBeta => beta[t].sqrt(),
            SigmaTildeMode::PosteriorVariance => {
                ((1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t]).sqrt()
            }
        };
    }
    let zeta = alpha_bar
        .iter()
        .map(|ab| match config.zeta {
            ZetaMode::SqrtAlphaBar => ab.sqrt(),
            ZetaMode::One => 1.0,
        })
        .collect();
    let r = alpha_bar
        .iter()
        .map(|ab| match config.r {
            RMode::VarianceRatio => (1.0 - ab).sqrt(),
            RMode::DataVariance(v) => (v * (1.0 - ab) / (ab * v + 1.0 - ab)).sqrt(),
            RMode::Constant(c) => c,
        })
        .collect();

    Ok(DiffusionSchedule {
        steps,
        beta,
        alpha,
        alpha_bar,
        sigma_tilde,
        zeta,
        r,
    })
}

impl DiffusionSchedule {
    pub fn new(config: &ScheduleConfig) -> Result<Self> {
        make_schedule(config)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            Err(Error::Schedule(format!(
                "timestep {t} outside 1..={}",
                self.steps
            )))
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigma_tilde(&self, t: usize) -> f64 {
        self.sigma_tilde[t]
    }

    pub fn zeta(&self, t: usize) -> f64 {
        self.zeta[t]
    }

    pub fn r(&self, t: usize) -> f64 {
        self.r[t]
    }
}
