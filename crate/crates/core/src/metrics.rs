//! Restoration and kernel-estimation metrics, and the per-item report.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{circular_convolve, fft2_plane, ifft2_plane};
use crate::tensor::{ImageTensor, KernelGrid};

pub const PSNR_CAP: f64 = 99.0;

/// Peak-1 PSNR in dB, capped at [`PSNR_CAP`].
pub fn psnr(x: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    x.check_same_shape(reference, "psnr")?;
    let mse = x.sub(reference).norm_sq() / x.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Sample-average PSNR: PSNR of the particle mean.
pub fn psnr_sample_average(particles: &[ImageTensor], reference: &ImageTensor) -> Result<f64> {
    let first = particles
        .first()
        .ok_or_else(|| Error::invalid("no particles to average"))?;
    let mut mean = ImageTensor::zeros(first.height(), first.width(), first.channels());
    for p in particles {
        mean.axpy(1.0 / particles.len() as f64, p);
    }
    psnr(&mean, reference)
}

fn square_window(a: &KernelGrid, b: &KernelGrid) -> Result<(KernelGrid, KernelGrid)> {
    let side = a.height().max(a.width()).max(b.height()).max(b.width());
    Ok((a.pad_to(side, side)?, b.pad_to(side, side)?))
}

/// Per-entry mean squared difference after the best circular shift of
/// `estimate` within the common window.
pub fn kernel_mse(estimate: &KernelGrid, truth: &KernelGrid) -> Result<f64> {
    let (a, b) = square_window(estimate, truth)?;
    let n = a.height();
    let (shift_r, shift_c) = best_shift(&a, &b);
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = a.get((i + shift_r) % n, (j + shift_c) % n) - b.get(i, j);
            sum += d * d;
        }
    }
    Ok(sum / (n * n) as f64)
}

/// Shift `(dr, dc)` maximizing `sum_ij a[i + dr, j + dc] b[i, j]`, from the
/// circular cross-correlation computed in the Fourier domain.
fn best_shift(a: &KernelGrid, b: &KernelGrid) -> (usize, usize) {
    let n = a.height();
    let fa = fft2_plane(a.data(), n, n);
    let fb = fft2_plane(b.data(), n, n);
    let prod: Vec<_> = fa.iter().zip(&fb).map(|(x, y)| x * y.conj()).collect();
    let corr = ifft2_plane(&prod, n, n);
    let mut best = (0, 0);
    let mut best_val = f64::NEG_INFINITY;
    for (idx, v) in corr.iter().enumerate() {
        if *v > best_val + 1e-15 {
            best_val = *v;
            best = (idx / n, idx % n);
        }
    }
    best
}

/// `|H x - y|^2 - sigma^2 M`, with `M` the number of entries of `y`.
pub fn reblur_loss(y: &ImageTensor, x: &ImageTensor, kernel: &KernelGrid, sigma: f64) -> Result<f64> {
    y.check_same_shape(x, "reblur")?;
    let r = circular_convolve(x, kernel)?.sub(y);
    Ok(r.norm_sq() - sigma * sigma * y.len() as f64)
}

/// Mean of the per-particle reblur losses.
pub fn mean_reblur_loss(y: &ImageTensor, particles: &[ImageTensor], kernel: &KernelGrid, sigma: f64) -> Result<f64> {
    if particles.is_empty() {
        return Err(Error::invalid("no particles"));
    }
    let mut total = 0.0;
    for p in particles {
        total += reblur_loss(y, p, kernel, sigma)?;
    }
    Ok(total / particles.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub name: String,
    /// Mean per-particle PSNR.
    pub psnr: Option<f64>,
    pub psnr_sa: Option<f64>,
    pub kernel_mse: Option<f64>,
    pub reblur: Option<f64>,
    /// `|reblur| / (sigma^2 M)`
    pub reblur_ratio: Option<f64>,
    pub runtime_s: Option<f64>,
    pub error: Option<String>,
}

impl ItemMetrics {
    pub fn failed(name: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            psnr: None,
            psnr_sa: None,
            kernel_mse: None,
            reblur: None,
            reblur_ratio: None,
            runtime_s: None,
            error: Some(error.into()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub items: usize,
    pub failures: usize,
    pub psnr: Option<f64>,
    pub psnr_sa: Option<f64>,
    pub kernel_mse: Option<f64>,
    pub reblur: Option<f64>,
    pub reblur_ratio: Option<f64>,
    pub runtime_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub items: Vec<ItemMetrics>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

impl MetricsReport {
    pub fn aggregate(&self) -> Aggregate {
        let it = || self.items.iter();
        Aggregate {
            items: self.items.len(),
            failures: it().filter(|m| m.error.is_some()).count(),
            psnr: mean_of(it().map(|m| m.psnr)),
            psnr_sa: mean_of(it().map(|m| m.psnr_sa)),
            kernel_mse: mean_of(it().map(|m| m.kernel_mse)),
            reblur: mean_of(it().map(|m| m.reblur)),
            reblur_ratio: mean_of(it().map(|m| m.reblur_ratio)),
            runtime_s: mean_of(it().map(|m| m.runtime_s)),
        }
    }

    /// One JSON object per item.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for item in &self.items {
            serde_json::to_writer(&mut out, item)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut items = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            items.push(serde_json::from_str(&line)?);
        }
        Ok(Self { items })
    }

    pub fn table(&self) -> String {
        fn cell(v: Option<f64>, prec: usize) -> String {
            v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
        }
        fn sci(v: Option<f64>) -> String {
            v.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}"))
        }
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>9} {:>9} {:>11} {:>11} {:>8} {:>9}",
            "item", "psnr", "psnr_sa", "kernel_mse", "reblur", "ratio", "time_s"
        );
        for m in &self.items {
            let _ = write!(
                s,
                "{:<24} {:>9} {:>9} {:>11} {:>11} {:>8} {:>9}",
                m.name,
                cell(m.psnr, 2),
                cell(m.psnr_sa, 2),
                sci(m.kernel_mse),
                sci(m.reblur),
                cell(m.reblur_ratio, 3),
                cell(m.runtime_s, 2)
            );
            if let Some(e) = &m.error {
                let _ = write!(s, "  error: {e}");
            }
            s.push('\n');
        }
        let a = self.aggregate();
        let _ = writeln!(
            s,
            "{:<24} {:>9} {:>9} {:>11} {:>11} {:>8} {:>9}",
            format!("mean ({} ok / {})", a.items - a.failures, a.items),
            cell(a.psnr, 2),
            cell(a.psnr_sa, 2),
            sci(a.kernel_mse),
            sci(a.reblur),
            cell(a.reblur_ratio, 3),
            cell(a.runtime_s, 2)
        );
        s
    }
}
