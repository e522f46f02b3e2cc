//! Runs a blind-deblurring algorithm over a dataset manifest and scores it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::em::{diffusion_em, fast_diffusion_em, EmConfig, EmOutput};
use crate::error::{Error, Result};
use crate::metrics::{kernel_mse, mean_reblur_loss, psnr, psnr_sample_average, ItemMetrics, MetricsReport};
use crate::mstep::KernelRegularizer;
use crate::schedule::RMode;
use crate::score::{Prior, ScoreModel, StationaryGaussianPrior};
use crate::synth::DatasetManifest;
use crate::tensor::{ImageTensor, KernelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Em,
    FastEm,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(Algorithm::Em),
            "fastem" => Ok(Algorithm::FastEm),
            _ => Err(Error::invalid(format!("unknown algorithm '{s}' (expected em or fastem)"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Em => "em",
            Algorithm::FastEm => "fastem",
        })
    }
}

/// Where the image prior comes from.
#[derive(Clone, Debug)]
pub enum PriorSource {
    Fixed(Prior),
    /// Power-law Gaussian fitted to each observation.
    Fitted { cutoff: f64, exponent: f64 },
}

impl Default for PriorSource {
    fn default() -> Self {
        PriorSource::Fitted {
            cutoff: 1.0,
            exponent: 1.0,
        }
    }
}

impl PriorSource {
    pub fn resolve(&self, y: &ImageTensor, sigma: f64) -> Result<Prior> {
        match self {
            PriorSource::Fixed(p) => Ok(p.clone()),
            PriorSource::Fitted { cutoff, exponent } => Ok(Prior::Gaussian(
                StationaryGaussianPrior::fit_power_law(y, sigma, *cutoff, *exponent)?,
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub em: EmConfig,
    pub prior: PriorSource,
    /// Replace the schedule's `r_t` rule by the Gaussian prior's own data variance.
    pub match_r_to_prior: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::FastEm,
            em: EmConfig::default(),
            prior: PriorSource::default(),
            match_r_to_prior: true,
        }
    }
}

/// Runs the configured driver on one observation.
pub fn run_blind(
    y: &ImageTensor,
    sigma: f64,
    config: &RunConfig,
    regularizer: &dyn KernelRegularizer,
) -> Result<EmOutput> {
    let prior = config.prior.resolve(y, sigma)?;
    let mut em = config.em.clone();
    if config.match_r_to_prior {
        if let Prior::Gaussian(g) = &prior {
            em.schedule.r = RMode::DataVariance(g.pixel_variance());
        }
    }
    let model: &dyn ScoreModel = &prior;
    match config.algorithm {
        Algorithm::Em => diffusion_em(y, sigma, &em, model, regularizer),
        Algorithm::FastEm => fast_diffusion_em(y, sigma, &em, model, regularizer),
    }
}

/// All metrics for one restored item.
pub fn score_item(
    name: &str,
    clean: &ImageTensor,
    true_kernel: &KernelGrid,
    y: &ImageTensor,
    sigma: f64,
    out: &EmOutput,
) -> Result<ItemMetrics> {
    let particles = out.particles.particles();
    let mut total = 0.0;
    for p in particles {
        total += psnr(p, clean)?;
    }
    let reblur = mean_reblur_loss(y, particles, &out.kernel, sigma)?;
    let noise = sigma * sigma * y.len() as f64;
    Ok(ItemMetrics {
        name: name.to_string(),
        psnr: Some(total / particles.len() as f64),
        psnr_sa: Some(psnr_sample_average(particles, clean)?),
        kernel_mse: Some(kernel_mse(&out.kernel, true_kernel)?),
        reblur: Some(reblur),
        reblur_ratio: (noise > 0.0).then(|| reblur.abs() / noise),
        runtime_s: None,
        error: None,
    })
}

#[derive(Clone, Debug, Default)]
pub struct BenchmarkConfig {
    pub run: RunConfig,
    /// Record wall-clock seconds per item. Off by default so reports are
    /// reproducible byte for byte.
    pub timing: bool,
}

fn item_name(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(path)
        .to_string()
}

/// Every manifest item is run with seed `em.seed + index`. Failures are
/// recorded in the report and do not stop the run.
pub fn benchmark(
    manifest: &DatasetManifest,
    config: &BenchmarkConfig,
    regularizer: &dyn KernelRegularizer,
) -> MetricsReport {
    let items = manifest
        .records
        .par_iter()
        .enumerate()
        .map(|(i, record)| {
            let name = item_name(&record.degraded_path);
            if !record.is_ok() {
                return ItemMetrics::failed(name, record.error.clone());
            }
            let start = Instant::now();
            let result = (|| -> Result<ItemMetrics> {
                let (clean, kernel, y) = manifest.load_item(record)?;
                let mut run = config.run.clone();
                run.em.seed = run.em.seed.wrapping_add(i as u64);
                let out = run_blind(&y, record.sigma, &run, regularizer)?;
                score_item(&name, &clean, &kernel, &y, record.sigma, &out)
            })();
            match result {
                Ok(mut m) => {
                    if config.timing {
                        m.runtime_s = Some(start.elapsed().as_secs_f64());
                    }
                    m
                }
                Err(e) => {
                    log::warn!("{name}: {e}");
                    ItemMetrics::failed(name, e.to_string())
                }
            }
        })
        .collect();
    MetricsReport { items }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::save_rtf;
    use crate::mstep::L2Regularizer;
    use crate::schedule::ScheduleConfig;
    use crate::synth::{make_dataset, DegradationConfig, MANIFEST_FILE};

    fn dataset(dir: &Path, count: usize) -> DatasetManifest {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).unwrap();
        let prior = StationaryGaussianPrior::power_law(ImageTensor::filled(16, 16, 1, 0.5), 0.04, 1.0, 1.0).unwrap();
        for i in 0..count {
            let x = prior.sample(&mut crate::sampler::particle_rng(i as u64, 0));
            save_rtf(images.join(format!("img{i}.rtf")), &x).unwrap();
        }
        let cfg = DegradationConfig {
            kernel_size: 5,
            sigma: 0.02,
            ..Default::default()
        };
        make_dataset(&images, dir.join("data"), &cfg).unwrap()
    }

    fn quick() -> BenchmarkConfig {
        BenchmarkConfig {
            run: RunConfig {
                em: EmConfig {
                    schedule: ScheduleConfig::for_steps(20),
                    kernel_size: 5,
                    ..Default::default()
                },
                ..Default::default()
            },
            timing: false,
        }
    }

    #[test]
    fn smoke_run_is_finite_and_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        dataset(dir.path(), 2);
        let manifest = DatasetManifest::read(dir.path().join("data").join(MANIFEST_FILE)).unwrap();
        let report = benchmark(&manifest, &quick(), &L2Regularizer);
        assert_eq!(report.items.len(), 2);
        for m in &report.items {
            assert!(m.error.is_none(), "{:?}", m.error);
            for v in [m.psnr, m.psnr_sa, m.kernel_mse, m.reblur, m.reblur_ratio] {
                assert!(v.unwrap().is_finite());
            }
            assert!(m.runtime_s.is_none());
        }
        assert_eq!(report, benchmark(&manifest, &quick(), &L2Regularizer));
        let timed = benchmark(&manifest, &BenchmarkConfig { timing: true, ..quick() }, &L2Regularizer);
        assert!(timed.items.iter().all(|m| m.runtime_s.is_some()));
    }

    #[test]
    fn empty_manifest_gives_empty_report() {
        let report = benchmark(&DatasetManifest::default(), &quick(), &L2Regularizer);
        assert!(report.items.is_empty());
    }

    #[test]
    fn failures_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        dataset(dir.path(), 2);
        let data = dir.path().join("data");
        std::fs::remove_file(data.join("kernel_0001.rtf")).unwrap();
        let manifest = DatasetManifest::read(data.join(MANIFEST_FILE)).unwrap();
        let report = benchmark(&manifest, &quick(), &L2Regularizer);
        assert!(report.items[0].error.is_none());
        assert!(report.items[1].error.is_some());
        assert_eq!(report.aggregate().failures, 1);
    }

    #[test]
    fn algorithm_names() {
        assert_eq!("em".parse::<Algorithm>().unwrap(), Algorithm::Em);
        assert_eq!(Algorithm::FastEm.to_string(), "fastem");
        assert!("fast".parse::<Algorithm>().is_err());
    }
}
