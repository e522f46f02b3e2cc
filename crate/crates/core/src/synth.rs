//! Synthetic motion-blur kernels, degraded observations and datasets.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::circular_convolve;
use crate::io;
use crate::tensor::{BlurKernel, ImageTensor, KernelGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    /// Noise standard deviation in `[0, 1]` intensity units.
    pub sigma: f64,
    pub kernel_size: usize,
    pub rng_seed: u64,
    /// Number of trajectory steps; zero yields a delta kernel.
    pub steps: usize,
    pub step_std: f64,
    /// AR(1) coefficient on the velocity.
    pub inertia: f64,
    /// Apply a 0.5 px Gaussian after rasterization.
    pub smooth: bool,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            sigma: 5.0 / 255.0,
            kernel_size: 11,
            rng_seed: 0,
            steps: 24,
            step_std: 0.5,
            inertia: 0.8,
            smooth: true,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.kernel_size < 3 || self.kernel_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel size must be odd and >= 3, got {}",
                self.kernel_size
            )));
        }
        if !(self.step_std >= 0.0) || !(0.0..=1.0).contains(&self.inertia) {
            return Err(Error::invalid("trajectory parameters out of range"));
        }
        Ok(())
    }
}

fn splat(grid: &mut KernelGrid, x: f64, y: f64, mass: f64) {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            let (r, c) = (y0 as isize + dy, x0 as isize + dx);
            if r >= 0 && c >= 0 && (r as usize) < grid.height() && (c as usize) < grid.width() {
                let v = grid.get(r as usize, c as usize);
                grid.set(r as usize, c as usize, v + mass * wx * wy);
            }
        }
    }
}

fn smooth_half_pixel(grid: &KernelGrid) -> KernelGrid {
    let s2 = 2.0 * 0.5f64 * 0.5;
    let side = (-1.0 / s2).exp();
    let taps = [side, 1.0, side];
    let norm: f64 = taps.iter().sum();
    let (h, w) = (grid.height(), grid.width());
    let pass = |src: &KernelGrid, horizontal: bool| {
        let mut out = KernelGrid::zeros(h, w);
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (t, wt) in taps.iter().enumerate() {
                    let (rr, cc) = if horizontal {
                        (r as isize, c as isize + t as isize - 1)
                    } else {
                        (r as isize + t as isize - 1, c as isize)
                    };
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        acc += wt * src.get(rr as usize, cc as usize);
                    }
                }
                out.set(r, c, acc / norm);
            }
        }
        out
    };
    pass(&pass(grid, true), false)
}

/// Draws a camera-shake style kernel from a random trajectory with inertia.
///
/// The velocity follows `v <- inertia * v + eta` with Gaussian `eta`; the
/// path is centered, shrunk to fit the support if needed, rasterized with
/// bilinear splatting and projected onto the simplex.
pub fn sample_motion_kernel<R: Rng + ?Sized>(
    config: &DegradationConfig,
    rng: &mut R,
) -> Result<BlurKernel> {
    config.validate()?;
    let k = config.kernel_size;
    if config.steps == 0 {
        return BlurKernel::delta(k);
    }
    let normal = |rng: &mut R| -> f64 { rng.sample::<f64, _>(StandardNormal) * config.step_std };
    let mut pos = [0.0f64, 0.0];
    let mut vel = [normal(rng), normal(rng)];
    let mut path = vec![pos];
    for _ in 0..config.steps {
        pos = [pos[0] + vel[0], pos[1] + vel[1]];
        path.push(pos);
        vel = [
            config.inertia * vel[0] + normal(rng),
            config.inertia * vel[1] + normal(rng),
        ];
    }

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &path {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let radius = (k / 2) as f64;
    let limit = if config.smooth { radius - 1.0 } else { radius - 0.5 }.max(0.5);
    let extent = path
        .iter()
        .flat_map(|p| [(p[0] - mid[0]).abs(), (p[1] - mid[1]).abs()])
        .fold(0.0, f64::max);
    let shrink = if extent > limit { limit / extent } else { 1.0 };

    let mut grid = KernelGrid::zeros(k, k);
    for seg in path.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = ((b[0] - a[0]).hypot(b[1] - a[1]) * shrink).max(1e-9);
        let pieces = (len * 4.0).ceil() as usize;
        for s in 0..pieces {
            let t = (s as f64 + 0.5) / pieces as f64;
            let x = ((a[0] + t * (b[0] - a[0])) - mid[0]) * shrink + radius;
            let y = ((a[1] + t * (b[1] - a[1])) - mid[1]) * shrink + radius;
            splat(&mut grid, x, y, len / pieces as f64);
        }
    }
    if grid.sum() <= 0.0 {
        return BlurKernel::delta(k);
    }
    if config.smooth {
        grid = smooth_half_pixel(&grid);
    }
    let total = grid.sum();
    for v in grid.data_mut() {
        *v /= total;
    }
    BlurKernel::from_projection(&grid)
}

/// `y = H x + sigma * g` with `g` i.i.d. standard normal, unclipped.
pub fn degrade<R: Rng + ?Sized>(
    x: &ImageTensor,
    kernel: &KernelGrid,
    sigma: f64,
    rng: &mut R,
) -> Result<ImageTensor> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut y = circular_convolve(x, kernel)?;
    if sigma > 0.0 {
        for v in y.data_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(y)
}

/// One line of a dataset manifest. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clean_path: String,
    pub kernel_path: String,
    pub degraded_path: String,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub error: String,
}

impl ManifestRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

impl DatasetManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.records.is_empty() {
            w.write_record([
                "clean_path",
                "kernel_path",
                "degraded_path",
                "sigma",
                "seed",
                "error",
            ])?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            records,
        })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Loads `(clean, kernel, degraded)` for a successful record.
    pub fn load_item(&self, record: &ManifestRecord) -> Result<(ImageTensor, BlurKernel, ImageTensor)> {
        let clean = io::load_image(self.resolve(&record.clean_path))?;
        let kernel = BlurKernel::new(io::load_kernel(self.resolve(&record.kernel_path))?)?;
        let degraded = io::load_image(self.resolve(&record.degraded_path))?;
        Ok((clean, kernel, degraded))
    }
}

fn is_input_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "rtf"))
}

fn item_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Degrades every `.png`/`.rtf` image in `images_dir` and writes
/// `clean_NNNN.rtf`, `kernel_NNNN.rtf`, `degraded_NNNN.rtf` plus
/// `manifest.csv` into `out_dir`. Unreadable inputs are recorded, not fatal.
pub fn make_dataset(
    images_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    config: &DegradationConfig,
) -> Result<DatasetManifest> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut inputs: Vec<PathBuf> = fs::read_dir(images_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_input_image(p))
        .collect();
    inputs.sort();

    let records: Vec<ManifestRecord> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, input)| {
            let seed = item_seed(config.rng_seed, i);
            let mut record = ManifestRecord {
                clean_path: format!("clean_{i:04}.rtf"),
                kernel_path: format!("kernel_{i:04}.rtf"),
                degraded_path: format!("degraded_{i:04}.rtf"),
                sigma: config.sigma,
                seed,
                error: String::new(),
            };
            let run = || -> Result<()> {
                let clean = io::load_image(input)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let kernel = sample_motion_kernel(config, &mut rng)?;
                let degraded = degrade(&clean, &kernel, config.sigma, &mut rng)?;
                io::save_rtf(out_dir.join(&record.clean_path), &clean)?;
                io::save_kernel(out_dir.join(&record.kernel_path), &kernel)?;
                io::save_rtf(out_dir.join(&record.degraded_path), &degraded)?;
                Ok(())
            };
            if let Err(e) = run() {
                log::warn!("{}: {e}", input.display());
                record.error = format!("{}: {e}", input.display());
            }
            record
        })
        .collect();

    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        records,
    };
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_is_delta() {
        let cfg = DegradationConfig {
            steps: 0,
            ..Default::default()
        };
        let k = sample_motion_kernel(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(k, BlurKernel::delta(11).unwrap());
    }

    #[test]
    fn same_seed_same_kernel() {
        let cfg = DegradationConfig::default();
        let a = sample_motion_kernel(&cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_motion_kernel(&cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn batch_of_kernels_is_valid() {
        let cfg = DegradationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mean = vec![0.0; 121];
        for _ in 0..1000 {
            let k = sample_motion_kernel(&cfg, &mut rng).unwrap();
            assert!(k.data().iter().all(|v| *v >= 0.0));
            assert!((k.sum() - 1.0).abs() < 1e-12);
            for (m, v) in mean.iter_mut().zip(k.data()) {
                *m += v / 1000.0;
            }
        }
        assert!((mean.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernels_are_not_trivially_small() {
        let cfg = DegradationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut peaks = 0.0;
        for _ in 0..100 {
            let k = sample_motion_kernel(&cfg, &mut rng).unwrap();
            peaks += k.data().iter().cloned().fold(0.0, f64::max) / 100.0;
        }
        // Elongated trajectories spread mass; a delta would have peak 1.
        assert!(peaks < 0.3, "mean peak {peaks}");
    }

    #[test]
    fn noiseless_delta_degradation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ImageTensor::random_normal(8, 8, 3, &mut rng);
        let y = degrade(&x, &KernelGrid::delta(3), 0.0, &mut rng).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_moments() {
        let x = ImageTensor::filled(64, 64, 3, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = degrade(&x, &KernelGrid::delta(3), 0.1, &mut rng).unwrap();
        let r = y.sub(&x);
        let mean = r.mean();
        let var = r.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64;
        assert!((var - 0.01).abs() < 0.001, "var {var}");
    }

    #[test]
    fn expected_residual_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = ImageTensor::random_normal(16, 16, 3, &mut rng);
        let k = sample_motion_kernel(&DegradationConfig::default(), &mut rng).unwrap();
        let hx = circular_convolve(&x, &k).unwrap();
        let sigma = 0.05;
        let m = x.len() as f64;
        let mut mean = 0.0;
        for seed in 0..100 {
            let y = degrade(&x, &k, sigma, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            mean += y.sub(&hx).norm_sq() / 100.0;
        }
        assert!((mean / (sigma * sigma * m) - 1.0).abs() < 0.05);
    }

    #[test]
    fn dataset_generation() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = DegradationConfig {
            rng_seed: 9,
            ..Default::default()
        };
        let empty = make_dataset(src.path(), out.path(), &cfg).unwrap();
        assert!(empty.records.is_empty());
        assert!(DatasetManifest::read(out.path().join(MANIFEST_FILE))
            .unwrap()
            .records
            .is_empty());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..3 {
            let img = ImageTensor::random_normal(16, 16, 1, &mut rng);
            io::save_rtf(src.path().join(format!("img{i}.rtf")), &img).unwrap();
        }
        fs::write(src.path().join("broken.png"), b"not a png").unwrap();
        let m = make_dataset(src.path(), out.path(), &cfg).unwrap();
        assert_eq!(m.records.len(), 4);
        assert_eq!(m.records.iter().filter(|r| r.is_ok()).count(), 3);
        assert!(m.records[0].error.contains("broken.png"));
        let read = DatasetManifest::read(out.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(read.records, m.records);
        let first = fs::read(out.path().join(&m.records[1].degraded_path)).unwrap();

        let again = tempfile::tempdir().unwrap();
        make_dataset(src.path(), again.path(), &cfg).unwrap();
        let second = fs::read(again.path().join(&m.records[1].degraded_path)).unwrap();
        assert_eq!(first, second);
        assert_eq!(
            fs::read(out.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(again.path().join(MANIFEST_FILE)).unwrap()
        );
    }
}
