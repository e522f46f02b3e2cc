use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use diffem_core::benchmark::{benchmark as run_benchmark, run_blind, Algorithm, BenchmarkConfig, PriorSource, RunConfig};
use diffem_core::denoiser::{generate_training_kernels, train, DenoiserNet, PnpRegularizer, TrainConfig};
use diffem_core::em::{init_kernel, EmConfig, EmOutput, KernelInit};
use diffem_core::guidance::{GuidanceConfig, GuidanceKind};
use diffem_core::io::{kernel_to_image, load_image, load_kernel, save_image, save_kernel, save_rtf};
use diffem_core::mstep::{hqs_mstep, KernelRegularizer, L1Regularizer, L2Regularizer, MStepConfig};
use diffem_core::sampler::{particle_rng, sample_nonblind, ParticleEnsemble};
use diffem_core::schedule::{RMode, ScheduleConfig};
use diffem_core::score::{load_prior, Prior, StationaryGaussianPrior};
use diffem_core::sweep::{regularizer_sweep, SweepConfig, SweepEntry};
use diffem_core::synth::{make_dataset, sample_motion_kernel, DatasetManifest, DegradationConfig, MANIFEST_FILE};
use diffem_core::tensor::{BlurKernel, ImageTensor};
use diffem_core::DiffusionSchedule;
use log::info;

use crate::options::{
    AlgoArg, BenchmarkArgs, DeblurArgs, EstimateArgs, GuidanceArg, ModelArgs, RRuleArg, RegArg, RegArgs, SampleArgs,
    SweepArgs, TrainArgs,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag values; exit code 1.
    Usage(String),
    /// Anything that fails while running; exit code 2.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<diffem_core::Error> for CliError {
    fn from(e: diffem_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Accepts `0.02` or a fraction such as `5/255`.
pub fn parse_sigma(text: &str) -> CliResult<f64> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| usage(format!("bad noise level '{text}'")))?;
            let den: f64 = den.trim().parse().map_err(|_| usage(format!("bad noise level '{text}'")))?;
            num / den
        }
        None => text.parse().map_err(|_| usage(format!("bad noise level '{text}'")))?,
    };
    if !(value >= 0.0 && value.is_finite()) {
        return Err(usage(format!("noise level must be finite and >= 0, got '{text}'")));
    }
    Ok(value)
}

fn parse_init(text: &str) -> CliResult<KernelInit> {
    text.parse().map_err(|e: diffem_core::Error| usage(e.to_string()))
}

fn check_ksize(ksize: usize) -> CliResult {
    if ksize < 1 || ksize % 2 == 0 {
        return Err(usage(format!("--ksize must be odd, got {ksize}")));
    }
    Ok(())
}

fn load_net(path: &Path) -> CliResult<DenoiserNet> {
    DenoiserNet::load(path)
        .with_context(|| format!("loading denoiser weights {}", path.display()))
        .map_err(CliError::Runtime)
}

fn regularizer(reg: RegArg, weights: Option<&Path>) -> CliResult<Box<dyn KernelRegularizer>> {
    Ok(match reg {
        RegArg::L1 => Box::new(L1Regularizer),
        RegArg::L2 => Box::new(L2Regularizer),
        RegArg::Pnp => {
            let path = weights.ok_or_else(|| usage("--reg pnp needs --weights"))?;
            Box::new(PnpRegularizer::new(load_net(path)?))
        }
    })
}

fn reg_name(reg: RegArg) -> &'static str {
    match reg {
        RegArg::L1 => "l1",
        RegArg::L2 => "l2",
        RegArg::Pnp => "pnp",
    }
}

fn mstep_config(reg: &RegArgs) -> CliResult<MStepConfig> {
    let cfg = MStepConfig {
        iterations: reg.iters,
        lambda: reg.lambda,
        beta: reg.beta,
        ..Default::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn guidance(model: &ModelArgs) -> CliResult<GuidanceConfig> {
    let kind = match model.guidance {
        GuidanceArg::Dps => GuidanceKind::Dps { weight: model.dps_weight },
        GuidanceArg::Pigdm => GuidanceKind::PiGdm,
    };
    kind.validate().map_err(|e| usage(e.to_string()))?;
    Ok(GuidanceConfig::new(kind))
}

fn check_steps(steps: usize) -> CliResult {
    if steps == 0 {
        return Err(usage("--T must be >= 1"));
    }
    Ok(())
}

fn read_image(path: &Path) -> CliResult<ImageTensor> {
    load_image(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Runtime)
}

fn read_prior(path: &Path) -> CliResult<Prior> {
    load_prior(path)
        .with_context(|| format!("reading prior {}", path.display()))
        .map_err(CliError::Runtime)
}

fn prior_source(model: &ModelArgs) -> CliResult<PriorSource> {
    Ok(match &model.prior {
        Some(path) => PriorSource::Fixed(read_prior(path)?),
        None => PriorSource::default(),
    })
}

fn has_png_layout(image: &ImageTensor) -> bool {
    matches!(image.channels(), 1 | 3)
}

/// Writes `stem.rtf` and, when the channel count allows, `stem.png`.
fn write_image_pair(dir: &Path, stem: &str, image: &ImageTensor) -> CliResult {
    save_rtf(dir.join(format!("{stem}.rtf")), image)?;
    if has_png_layout(image) {
        save_image(dir.join(format!("{stem}.png")), image)?;
    }
    Ok(())
}

fn write_particles(dir: &Path, particles: &ParticleEnsemble) -> CliResult {
    fs::create_dir_all(dir)?;
    for (i, p) in particles.particles().iter().enumerate() {
        write_image_pair(dir, &format!("particle_{i:03}"), p)?;
    }
    write_image_pair(dir, "mean", &particles.mean())
}

pub fn degrade(input: &Path, out: &Path, sigma: &str, ksize: usize, seed: u64) -> CliResult {
    let config = DegradationConfig {
        sigma: parse_sigma(sigma)?,
        kernel_size: ksize,
        rng_seed: seed,
        ..Default::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    if !input.is_dir() {
        return Err(usage(format!("--input {} is not a directory", input.display())));
    }
    let manifest = make_dataset(input, out, &config)?;
    let failed = manifest.records.iter().filter(|r| !r.is_ok()).count();
    println!(
        "wrote {} items ({failed} failed) to {}",
        manifest.records.len(),
        out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

pub fn sample(a: &SampleArgs, seed: u64) -> CliResult {
    let sigma = parse_sigma(&a.sigma)?;
    if a.n == 0 {
        return Err(usage("--n must be >= 1"));
    }
    check_steps(a.model.steps)?;
    let guidance = guidance(&a.model)?;
    let y = read_image(&a.y)?;
    let kernel = load_kernel(&a.kernel).with_context(|| format!("reading kernel {}", a.kernel.display()))?;
    let prior = prior_source(&a.model)?.resolve(&y, sigma)?;
    let mut schedule = ScheduleConfig::for_steps(a.model.steps);
    if let (RRuleArg::Prior, Prior::Gaussian(g)) = (a.model.r_rule, &prior) {
        schedule.r = RMode::DataVariance(g.pixel_variance());
    }
    let schedule = DiffusionSchedule::new(&schedule)?;
    let particles = sample_nonblind(&y, sigma, &kernel, a.n, &schedule, &guidance, &prior, seed)?;
    write_particles(&a.out, &particles)?;
    println!("wrote {} particles to {}", particles.len(), a.out.display());
    Ok(())
}

pub fn estimate_kernel(a: &EstimateArgs, _seed: u64) -> CliResult {
    let sigma = parse_sigma(&a.sigma)?;
    check_ksize(a.ksize)?;
    let init = parse_init(&a.init)?;
    let cfg = mstep_config(&a.reg)?;
    let reg = regularizer(a.reg.reg, a.reg.weights.as_deref())?;
    let y = read_image(&a.y)?;
    let sharp = a.sharp.iter().map(|p| read_image(p)).collect::<CliResult<Vec<_>>>()?;
    let start = init_kernel(init, a.ksize)?.into_grid();
    let kernel = hqs_mstep(&y, &sharp, sigma, &cfg, reg.as_ref(), &start, None)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_kernel(&a.out, &kernel)?;
    println!("wrote {}x{} kernel to {}", kernel.height(), kernel.width(), a.out.display());
    Ok(())
}

pub fn train_denoiser(a: &TrainArgs, seed: u64) -> CliResult {
    if a.kernels == 0 {
        return Err(usage("--kernels must be >= 1"));
    }
    if a.sizes.iter().any(|&k| k < 3 || k % 2 == 0) {
        return Err(usage("--sizes must all be odd and >= 3"));
    }
    let config = TrainConfig {
        steps: a.steps,
        batch_size: a.batch,
        learning_rate: a.lr,
        sigma_hi: a.sigma_max,
        seed,
        ..Default::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let kernels = generate_training_kernels(a.kernels, &a.sizes, seed)?;
    info!("training on {} kernels for {} steps", kernels.len(), a.steps);
    let (net, report) = train(&kernels, &config)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    net.save(&a.out)?;
    println!(
        "probe mse {:.4e} -> {:.4e}; weights in {}",
        report.initial_probe_mse,
        report.final_probe_mse,
        a.out.display()
    );
    Ok(())
}

fn run_config(
    algo: AlgoArg,
    model: &ModelArgs,
    reg: &RegArgs,
    em: EmConfig,
) -> CliResult<RunConfig> {
    check_steps(model.steps)?;
    let em = EmConfig {
        guidance: guidance(model)?,
        schedule: ScheduleConfig::for_steps(model.steps),
        mstep: mstep_config(reg)?,
        ..em
    };
    em.validate().map_err(|e| usage(e.to_string()))?;
    Ok(RunConfig {
        algorithm: match algo {
            AlgoArg::Em => Algorithm::Em,
            AlgoArg::Fastem => Algorithm::FastEm,
        },
        em,
        prior: prior_source(model)?,
        match_r_to_prior: model.r_rule == RRuleArg::Prior,
    })
}

fn write_trace(dir: &Path, out: &EmOutput) -> CliResult {
    let snapshots = dir.join("trace");
    fs::create_dir_all(&snapshots)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("trace.csv"))?);
    writeln!(w, "step,data_fit,kernel_path")?;
    for rec in &out.trace {
        let path = match &rec.kernel {
            Some(k) => {
                let rel = format!("trace/kernel_{:04}.rtf", rec.step);
                save_kernel(dir.join(&rel), k)?;
                rel
            }
            None => String::new(),
        };
        writeln!(w, "{},{},{}", rec.step, rec.data_fit, path)?;
    }
    w.flush()?;
    Ok(())
}

pub fn deblur(a: &DeblurArgs, seed: u64) -> CliResult {
    let sigma = parse_sigma(&a.sigma)?;
    check_ksize(a.ksize)?;
    if sigma <= 0.0 {
        return Err(usage("--sigma must be > 0 for blind deblurring"));
    }
    let em = EmConfig {
        iterations: a.iterations,
        particles: a.n,
        init: parse_init(&a.init)?,
        kernel_size: a.ksize,
        seed,
        mstep_every: a.mstep_every,
        trace_stride: a.trace_stride,
        ..Default::default()
    };
    let config = run_config(a.algo, &a.model, &a.reg, em)?;
    let reg = regularizer(a.reg.reg, a.reg.weights.as_deref())?;
    let y = read_image(&a.y)?;
    let out = run_blind(&y, sigma, &config, reg.as_ref())?;
    write_particles(&a.out, &out.particles)?;
    save_kernel(a.out.join("kernel.rtf"), &out.kernel)?;
    let peak = out.kernel.data().iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        save_image(a.out.join("kernel.png"), &kernel_to_image(&out.kernel).scaled(1.0 / peak))?;
    }
    write_trace(&a.out, &out)?;
    println!(
        "{} with {} particle(s): final data fit {:.4e}; outputs in {}",
        config.algorithm,
        out.particles.len(),
        out.trace.last().map_or(f64::NAN, |r| r.data_fit),
        a.out.display()
    );
    Ok(())
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn read_manifest(path: &Path) -> CliResult<DatasetManifest> {
    let path = manifest_path(path);
    DatasetManifest::read(&path)
        .with_context(|| format!("reading manifest {}", path.display()))
        .map_err(CliError::Runtime)
}

/// Random textures from a power-law Gaussian with motion kernels. Item `i`
/// draws from stream 0 of `seed + i`.
pub fn synthetic_items(count: usize, size: usize, ksize: usize, seed: u64) -> CliResult<Vec<(ImageTensor, BlurKernel)>> {
    let prior = StationaryGaussianPrior::power_law(ImageTensor::filled(size, size, 1, 0.5), 0.04, 1.0, 1.0)?;
    let kernels = DegradationConfig {
        kernel_size: ksize,
        ..Default::default()
    };
    (0..count as u64)
        .map(|i| {
            let mut rng = particle_rng(seed.wrapping_add(i), 0);
            let x = prior.sample(&mut rng);
            let k = sample_motion_kernel(&kernels, &mut rng)?;
            Ok((x, k))
        })
        .collect()
}

pub fn sweep_reg(a: &SweepArgs, seed: u64) -> CliResult {
    let sigmas = a.sigmas.iter().map(|s| parse_sigma(s)).collect::<CliResult<Vec<_>>>()?;
    if sigmas.is_empty() || a.regs.is_empty() {
        return Err(usage("--sigmas and --regs must be non-empty"));
    }
    let init = parse_init(&a.init)?;
    let mstep = MStepConfig {
        iterations: a.iters,
        beta: a.beta,
        lambda: a.lambda,
        ..Default::default()
    };
    mstep.validate().map_err(|e| usage(e.to_string()))?;
    let regs = a
        .regs
        .iter()
        .map(|&r| regularizer(r, a.weights.as_deref()))
        .collect::<CliResult<Vec<_>>>()?;
    let items = match &a.manifest {
        Some(path) => {
            let manifest = read_manifest(path)?;
            manifest
                .records
                .iter()
                .filter(|r| r.is_ok())
                .map(|r| {
                    let (clean, kernel, _) = manifest.load_item(r)?;
                    Ok((clean, kernel))
                })
                .collect::<CliResult<Vec<_>>>()?
        }
        None => {
            check_ksize(a.ksize)?;
            if a.count == 0 || a.size < a.ksize {
                return Err(usage("--count must be >= 1 and --size >= --ksize"));
            }
            synthetic_items(a.count, a.size, a.ksize, seed)?
        }
    };
    let entries: Vec<SweepEntry<'_>> = a
        .regs
        .iter()
        .zip(&regs)
        .map(|(&r, reg)| SweepEntry {
            label: reg_name(r).to_string(),
            regularizer: reg.as_ref(),
            lambda: a.lambda,
        })
        .collect();
    let config = SweepConfig {
        sigmas,
        mstep,
        init,
        seed,
    };
    let report = regularizer_sweep(&items, &entries, &config)?;
    fs::create_dir_all(&a.out)?;
    report.write_csv(a.out.join("sweep.csv"))?;
    let table = report.table();
    fs::write(a.out.join("sweep.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn benchmark(a: &BenchmarkArgs, seed: u64) -> CliResult {
    check_ksize(a.ksize)?;
    let em = EmConfig {
        iterations: a.iterations,
        particles: a.n,
        init: parse_init(&a.init)?,
        kernel_size: a.ksize,
        seed,
        trace_stride: usize::MAX,
        ..Default::default()
    };
    let run = run_config(a.algo, &a.model, &a.reg, em)?;
    let reg = regularizer(a.reg.reg, a.reg.weights.as_deref())?;
    let manifest = read_manifest(&a.manifest)?;
    let report = run_benchmark(
        &manifest,
        &BenchmarkConfig {
            run,
            timing: a.timing,
        },
        reg.as_ref(),
    );
    fs::create_dir_all(&a.out)?;
    let mut w = BufWriter::new(fs::File::create(a.out.join("report.jsonl"))?);
    report.write_jsonl(&mut w)?;
    w.flush()?;
    let table = report.table();
    fs::write(a.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}
