//! Non-blind kernel estimation across noise levels and regularizers.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::em::{init_kernel, KernelInit};
use crate::error::{Error, Result};
use crate::metrics::kernel_mse;
use crate::mstep::{hqs_mstep, KernelRegularizer, MStepConfig};
use crate::sampler::particle_rng;
use crate::synth::degrade;
use crate::tensor::{BlurKernel, ImageTensor};

/// A regularizer under test with its own weight.
pub struct SweepEntry<'a> {
    pub label: String,
    pub regularizer: &'a dyn KernelRegularizer,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub sigmas: Vec<f64>,
    /// Shared HQS settings; `lambda` is taken from each entry.
    pub mstep: MStepConfig,
    pub init: KernelInit,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![5.0 / 255.0, 10.0 / 255.0, 20.0 / 255.0],
            mstep: MStepConfig::default(),
            init: KernelInit::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub sigmas: Vec<f64>,
    pub labels: Vec<String>,
    /// `per_item[item][sigma][regularizer]`
    pub per_item: Vec<Vec<Vec<f64>>>,
}

impl SweepReport {
    /// Mean kernel MSE over items, indexed `[sigma][regularizer]`.
    pub fn mean(&self) -> Vec<Vec<f64>> {
        let n = self.per_item.len().max(1) as f64;
        let mut out = vec![vec![0.0; self.labels.len()]; self.sigmas.len()];
        for item in &self.per_item {
            for (row, vals) in out.iter_mut().zip(item) {
                for (acc, v) in row.iter_mut().zip(vals) {
                    *acc += v / n;
                }
            }
        }
        out
    }

    pub fn column(&self, label: &str) -> Option<Vec<f64>> {
        let j = self.labels.iter().position(|l| l == label)?;
        Some(self.mean().iter().map(|row| row[j]).collect())
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:>10}", "sigma*255");
        for l in &self.labels {
            let _ = write!(s, " {l:>12}");
        }
        s.push('\n');
        for (sigma, row) in self.sigmas.iter().zip(self.mean()) {
            let _ = write!(s, "{:>10.2}", sigma * 255.0);
            for v in row {
                let _ = write!(s, " {v:>12.4e}");
            }
            s.push('\n');
        }
        s
    }

    /// Long-format plot data: `sigma,regularizer,mean_kernel_mse,items`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sigma", "regularizer", "mean_kernel_mse", "items"])?;
        let items = self.per_item.len().to_string();
        for (sigma, row) in self.sigmas.iter().zip(self.mean()) {
            for (label, v) in self.labels.iter().zip(row) {
                w.write_record([sigma.to_string(), label.clone(), v.to_string(), items.clone()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// For every `(sharp image, kernel)` pair and noise level, blurs and noises the
/// image, then estimates the kernel with the sharp image as the only sample.
/// Noise for item `i` at level `j` comes from stream `j` of seed `seed + i`, so
/// every regularizer sees the same observation.
pub fn regularizer_sweep(
    items: &[(ImageTensor, BlurKernel)],
    entries: &[SweepEntry<'_>],
    config: &SweepConfig,
) -> Result<SweepReport> {
    if entries.is_empty() {
        return Err(Error::invalid("sweep needs at least one regularizer"));
    }
    if config.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::invalid("noise levels must be finite and >= 0"));
    }
    config.mstep.validate()?;
    let per_item = items
        .par_iter()
        .enumerate()
        .map(|(i, (x, k))| {
            let start = init_kernel(config.init, k.size())?.into_grid();
            config
                .sigmas
                .iter()
                .enumerate()
                .map(|(j, &sigma)| {
                    let mut rng = particle_rng(config.seed.wrapping_add(i as u64), j as u64);
                    let y = degrade(x, k, sigma, &mut rng)?;
                    entries
                        .iter()
                        .map(|e| {
                            let cfg = MStepConfig {
                                lambda: e.lambda,
                                ..config.mstep.clone()
                            };
                            let est = hqs_mstep(&y, std::slice::from_ref(x), sigma, &cfg, e.regularizer, &start, None)?;
                            kernel_mse(&est, k)
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        sigmas: config.sigmas.clone(),
        labels: entries.iter().map(|e| e.label.clone()).collect(),
        per_item,
    })
}
