//! Bias-free convolutional kernel denoiser for plug-and-play M-steps.
//!
//! Five 3x3 circular convolutions with ReLU in between and no bias terms. The
//! input is the noisy kernel grid plus a constant noise-level map; the network
//! predicts the noise and the output is `input - prediction`. Without biases
//! the map is positively homogeneous: scaling both the grid and the noise
//! level scales the output.
//!
//! Weight file "DNW1": magic, version `u32`, layer count `u32`, then per layer
//! `out, in, kH, kW` as `u32` followed by `f64` weights in row-major
//! `(out, in, kH, kW)` order. All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mstep::KernelRegularizer;
use crate::synth::{sample_motion_kernel, DegradationConfig};
use crate::tensor::KernelGrid;

pub const WEIGHT_MAGIC: &[u8; 4] = b"DNW1";
pub const WEIGHT_VERSION: u32 = 1;
/// Side of the zero-padded canvas the network sees at train and test time.
pub const CANVAS: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    out_channels: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    weights: Vec<f64>,
}

impl ConvLayer {
    fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kh: k,
            kw: k,
            weights: vec![0.0; out_channels * in_channels * k * k],
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Circular im2col: row `(ci, a, b)`, column `p`.
    fn im2col(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let p = h * w;
        let (ch, cw) = (self.kh / 2, self.kw / 2);
        let mut cols = vec![0.0; self.patch_len() * p];
        for ci in 0..self.in_channels {
            let plane = &input[ci * p..(ci + 1) * p];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let row = (ci * self.kh + a) * self.kw + b;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for i in 0..h {
                        let si = (i + h + a - ch) % h;
                        for j in 0..w {
                            let sj = (j + w + b - cw) % w;
                            dst[i * w + j] = plane[si * w + sj];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col).
    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Vec<f64> {
        let p = h * w;
        let (ch, cw) = (self.kh / 2, self.kw / 2);
        let mut out = vec![0.0; self.in_channels * p];
        for ci in 0..self.in_channels {
            let plane = &mut out[ci * p..(ci + 1) * p];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let row = (ci * self.kh + a) * self.kw + b;
                    let src = &cols[row * p..(row + 1) * p];
                    for i in 0..h {
                        let si = (i + h + a - ch) % h;
                        for j in 0..w {
                            let sj = (j + w + b - cw) % w;
                            plane[si * w + sj] += src[i * w + j];
                        }
                    }
                }
            }
        }
        out
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct Trace {
    cols: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    prediction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    layers: Vec<ConvLayer>,
}

impl DenoiserNet {
    /// `depth` layers of `k x k` convolutions, `2 -> width -> ... -> 1`.
    pub fn zeros(depth: usize, width: usize, k: usize) -> Result<Self> {
        if depth < 2 || width == 0 || k % 2 == 0 {
            return Err(Error::invalid(format!(
                "need depth >= 2, width >= 1 and odd receptive field, got {depth}/{width}/{k}"
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let cin = if l == 0 { 2 } else { width };
            let cout = if l + 1 == depth { 1 } else { width };
            layers.push(ConvLayer::zeros(cout, cin, k));
        }
        Ok(Self { layers })
    }

    /// He-normal initialization; the last layer starts small so the initial
    /// map is close to the identity.
    pub fn random(depth: usize, width: usize, k: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(depth, width, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let mut std = (2.0 / layer.patch_len() as f64).sqrt();
            if l == last {
                std *= 0.1;
            }
            for v in layer.weights.iter_mut() {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(net)
    }

    /// The standard configuration: 5 layers, 32 channels, 3x3.
    pub fn standard(seed: u64) -> Self {
        Self::random(5, 32, 3, seed).expect("standard architecture is valid")
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().copied()).collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for layer in self.layers.iter_mut() {
            let n = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn forward_trace(&self, noisy: &[f64], sigma: f64, h: usize, w: usize) -> Trace {
        let p = h * w;
        let mut act = Vec::with_capacity(2 * p);
        act.extend_from_slice(noisy);
        act.extend(std::iter::repeat_n(sigma, p));
        let mut cols_all = Vec::with_capacity(self.layers.len());
        let mut pre_all = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let cols = layer.im2col(&act, h, w);
            let mut z = vec![0.0; layer.out_channels * p];
            gemm(
                layer.out_channels,
                layer.patch_len(),
                p,
                &layer.weights,
                false,
                &cols,
                false,
                0.0,
                &mut z,
            );
            act = if l == last {
                z.clone()
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            cols_all.push(cols);
            pre_all.push(z);
        }
        Trace {
            cols: cols_all,
            pre: pre_all,
            prediction: act,
        }
    }

    /// Gradient of `0.5 |out - target|^2 * scale` w.r.t. every weight, where
    /// `out = noisy - prediction`. Returns the loss too.
    fn backward(
        &self,
        noisy: &[f64],
        sigma: f64,
        target: &[f64],
        h: usize,
        w: usize,
        scale: f64,
        grad: &mut [Vec<f64>],
    ) -> f64 {
        let p = h * w;
        let trace = self.forward_trace(noisy, sigma, h, w);
        let mut loss = 0.0;
        // d loss / d prediction = -(out - target) * scale
        let mut delta: Vec<f64> = (0..p)
            .map(|i| {
                let e = noisy[i] - trace.prediction[i] - target[i];
                loss += 0.5 * e * e * scale;
                -e * scale
            })
            .collect();
        let last = self.layers.len() - 1;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l != last {
                for (d, z) in delta.iter_mut().zip(&trace.pre[l]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            gemm(
                layer.out_channels,
                p,
                layer.patch_len(),
                &delta,
                false,
                &trace.cols[l],
                true,
                1.0,
                &mut grad[l],
            );
            if l > 0 {
                let mut dcols = vec![0.0; layer.patch_len() * p];
                gemm(
                    layer.patch_len(),
                    layer.out_channels,
                    p,
                    &layer.weights,
                    true,
                    &delta,
                    false,
                    0.0,
                    &mut dcols,
                );
                delta = layer.col2im(&dcols, h, w);
            }
        }
        loss
    }

    fn check_grid(&self, grid: &KernelGrid) -> Result<()> {
        if self.layers[0].in_channels != 2 || self.layers.last().map(|l| l.out_channels) != Some(1) {
            return Err(Error::shape(
                "network must map 2 input channels to 1 output channel",
            ));
        }
        if !grid.is_finite() {
            return Err(Error::invalid("non-finite kernel grid"));
        }
        Ok(())
    }

    /// Fully convolutional pass on the grid as given (circular boundary).
    pub fn denoise_grid(&self, noisy: &KernelGrid, sigma: f64) -> Result<KernelGrid> {
        self.check_grid(noisy)?;
        let (h, w) = (noisy.height(), noisy.width());
        let pred = self.forward_trace(noisy.data(), sigma, h, w).prediction;
        let data = noisy.data().iter().zip(&pred).map(|(a, b)| a - b).collect();
        KernelGrid::from_vec(h, w, data)
    }

    /// Denoises a kernel window by centering it on a zero canvas of at least
    /// [`CANVAS`] pixels, so the circular boundary never folds the window.
    pub fn denoise(&self, noisy: &KernelGrid, sigma: f64) -> Result<KernelGrid> {
        let (h, w) = (noisy.height(), noisy.width());
        let side = CANVAS.max(h + 4).max(w + 4);
        let padded = noisy.pad_to(side, side)?;
        let out = self.denoise_grid(&padded, sigma)?;
        let (oh, ow) = (side / 2 - h / 2, side / 2 - w / 2);
        let mut crop = KernelGrid::zeros(h, w);
        for i in 0..h {
            for j in 0..w {
                crop.set(i, j, out.get(oh + i, ow + j));
            }
        }
        Ok(crop)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(WEIGHT_MAGIC)?;
        out.write_all(&WEIGHT_VERSION.to_le_bytes())?;
        out.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            for d in [layer.out_channels, layer.in_channels, layer.kh, layer.kw] {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in &layer.weights {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        fn eof(_: std::io::Error) -> Error {
            Error::WeightFile("unexpected end of weight file".into())
        }
        fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(eof)?;
            Ok(u32::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(eof)?;
        if &magic != WEIGHT_MAGIC {
            return Err(Error::WeightFile(format!(
                "bad magic {:?}, expected \"DNW1\"",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = read_u32(&mut input)?;
        if version != WEIGHT_VERSION {
            return Err(Error::WeightFile(format!(
                "unsupported weight file version {version}, expected {WEIGHT_VERSION}"
            )));
        }
        let count = read_u32(&mut input)? as usize;
        if count < 2 {
            return Err(Error::WeightFile(format!("need at least 2 layers, found {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for l in 0..count {
            let dims = [
                read_u32(&mut input)? as usize,
                read_u32(&mut input)? as usize,
                read_u32(&mut input)? as usize,
                read_u32(&mut input)? as usize,
            ];
            let [out_channels, in_channels, kh, kw] = dims;
            if kh % 2 == 0 || kw % 2 == 0 || out_channels == 0 || in_channels == 0 {
                return Err(Error::WeightFile(format!(
                    "layer {l} has invalid shape {out_channels}x{in_channels}x{kh}x{kw}"
                )));
            }
            if let Some(prev) = layers.last().map(|p: &ConvLayer| p.out_channels) {
                if prev != in_channels {
                    return Err(Error::WeightFile(format!(
                        "layer {l} expects {in_channels} input channels but the previous layer emits {prev}"
                    )));
                }
            }
            let n = out_channels * in_channels * kh * kw;
            let mut bytes = vec![0u8; n * 8];
            input.read_exact(&mut bytes).map_err(eof)?;
            let weights = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect();
            layers.push(ConvLayer {
                out_channels,
                in_channels,
                kh,
                kw,
                weights,
            });
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::WeightFile("trailing bytes after last layer".into()));
        }
        let net = Self { layers };
        if net.layers[0].in_channels != 2 || net.layers[count - 1].out_channels != 1 {
            return Err(Error::WeightFile(
                "network must map 2 input channels to 1 output channel".into(),
            ));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Fixed probe batch used to report progress.
    pub probe_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma_lo: 0.0,
            sigma_hi: 0.02,
            steps: 300,
            batch_size: 8,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
            probe_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_lo >= 0.0 && self.sigma_hi >= self.sigma_lo && self.sigma_hi.is_finite()) {
            return Err(Error::invalid(format!(
                "noise range [{}, {}] is invalid",
                self.sigma_lo, self.sigma_hi
            )));
        }
        if self.batch_size == 0 || self.probe_size == 0 {
            return Err(Error::invalid("batch and probe sizes must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("learning rate must be > 0 and momentum in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Per-pixel MSE on the probe batch before the first step.
    pub initial_probe_mse: f64,
    pub final_probe_mse: f64,
    /// Mean per-pixel training MSE of every step.
    pub losses: Vec<f64>,
}

/// One training pair on the canvas: noise only inside the kernel window.
#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub noisy: KernelGrid,
    pub clean: KernelGrid,
    pub sigma: f64,
}

impl TrainingExample {
    pub fn new<R: Rng + ?Sized>(kernel: &KernelGrid, sigma: f64, rng: &mut R) -> Result<Self> {
        let side = CANVAS.max(kernel.height() + 4).max(kernel.width() + 4);
        let mut noisy = kernel.clone();
        for v in noisy.data_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(Self {
            noisy: noisy.pad_to(side, side)?,
            clean: kernel.pad_to(side, side)?,
            sigma,
        })
    }
}

impl TrainingExample {
    /// Rescales the pair so the clean peak is 1. The network is positively
    /// homogeneous, so this only reweights the example in the loss.
    pub fn normalized(self) -> Self {
        let peak = self.clean.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak <= 0.0 {
            return self;
        }
        let scale = |g: &KernelGrid| {
            KernelGrid::from_vec(g.height(), g.width(), g.data().iter().map(|v| v / peak).collect())
                .expect("same dims")
        };
        Self {
            noisy: scale(&self.noisy),
            clean: scale(&self.clean),
            sigma: self.sigma / peak,
        }
    }
}

/// Motion kernels with sizes cycling through `sizes`, kernel `i` drawn from
/// stream `i` of `seed`.
pub fn generate_training_kernels(count: usize, sizes: &[usize], seed: u64) -> Result<Vec<KernelGrid>> {
    if sizes.is_empty() {
        return Err(Error::invalid("need at least one kernel size"));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let config = DegradationConfig {
                kernel_size: sizes[i % sizes.len()],
                ..Default::default()
            };
            Ok(sample_motion_kernel(&config, &mut rng)?.into_grid())
        })
        .collect()
}

fn sum_grads(parts: Vec<(f64, Vec<Vec<f64>>)>, shapes: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let mut total = shapes.iter().map(|n| vec![0.0; *n]).collect::<Vec<_>>();
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (t, gi) in total.iter_mut().zip(g) {
            for (a, b) in t.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    (loss, total)
}

impl DenoiserNet {
    /// Squared error per example, averaged over `batch`, and its gradient.
    pub fn loss_and_grad(&self, batch: &[TrainingExample]) -> (f64, Vec<Vec<f64>>) {
        let shapes: Vec<usize> = self.layers.iter().map(|l| l.weights.len()).collect();
        let parts: Vec<(f64, Vec<Vec<f64>>)> = batch
            .par_iter()
            .map(|ex| {
                let (h, w) = (ex.noisy.height(), ex.noisy.width());
                let scale = 2.0 / batch.len() as f64;
                let mut g: Vec<Vec<f64>> = shapes.iter().map(|n| vec![0.0; *n]).collect();
                let loss = self.backward(ex.noisy.data(), ex.sigma, ex.clean.data(), h, w, scale, &mut g);
                (loss, g)
            })
            .collect();
        sum_grads(parts, &shapes)
    }

    /// Signs of every hidden pre-activation; finite-difference checks use it
    /// to detect steps that cross a ReLU kink.
    pub fn activation_pattern(&self, ex: &TrainingExample) -> Vec<bool> {
        let t = self.forward_trace(ex.noisy.data(), ex.sigma, ex.noisy.height(), ex.noisy.width());
        t.pre[..t.pre.len() - 1]
            .iter()
            .flatten()
            .map(|z| *z > 0.0)
            .collect()
    }

    pub fn mse(&self, batch: &[TrainingExample]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for ex in batch {
            let out = self.denoise_grid(&ex.noisy, ex.sigma)?;
            total += out
                .data()
                .iter()
                .zip(ex.clean.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
            count += out.data().len();
        }
        Ok(total / count as f64)
    }
}

fn draw_batch(
    kernels: &[KernelGrid],
    size: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainingExample>> {
    (0..size)
        .map(|_| {
            let k = &kernels[rng.random_range(0..kernels.len())];
            let sigma = if config.sigma_hi > config.sigma_lo {
                rng.random_range(config.sigma_lo..=config.sigma_hi)
            } else {
                config.sigma_lo
            };
            Ok(TrainingExample::new(k, sigma, rng)?.normalized())
        })
        .collect()
}

/// Momentum SGD on the mean per-pixel squared error, starting from `net`.
pub fn train_from(
    mut net: DenoiserNet,
    kernels: &[KernelGrid],
    config: &TrainConfig,
) -> Result<(DenoiserNet, TrainReport)> {
    config.validate()?;
    if kernels.is_empty() {
        return Err(Error::invalid("training needs at least one kernel"));
    }
    let mut probe_rng = ChaCha8Rng::seed_from_u64(config.seed);
    probe_rng.set_stream(1);
    let probe = draw_batch(kernels, config.probe_size, config, &mut probe_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial = net.mse(&probe)?;
    let mut velocity: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = draw_batch(kernels, config.batch_size, config, &mut rng)?;
        let (loss, grad) = net.loss_and_grad(&batch);
        let pixels = batch[0].clean.data().len() as f64;
        let mse = loss / pixels;
        if !mse.is_finite() {
            return Err(Error::Diverged { step, loss: mse });
        }
        losses.push(mse);
        for ((layer, v), g) in net.layers.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            for ((w, vi), gi) in layer.weights.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = config.momentum * *vi - config.learning_rate * gi;
                *w += *vi;
            }
        }
        if step % 50 == 0 {
            debug!("denoiser step {step}: mse {mse:.3e}");
        }
    }
    let final_mse = net.mse(&probe)?;
    if !final_mse.is_finite() {
        return Err(Error::Diverged {
            step: config.steps,
            loss: final_mse,
        });
    }
    info!("denoiser probe mse {initial:.3e} -> {final_mse:.3e}");
    Ok((
        net,
        TrainReport {
            initial_probe_mse: initial,
            final_probe_mse: final_mse,
            losses,
        },
    ))
}

/// Trains the standard network from a seeded initialization.
pub fn train(kernels: &[KernelGrid], config: &TrainConfig) -> Result<(DenoiserNet, TrainReport)> {
    train_from(DenoiserNet::standard(config.seed), kernels, config)
}

/// Plug-and-play regularizer backed by a trained network.
#[derive(Clone, Debug)]
pub struct PnpRegularizer {
    net: DenoiserNet,
}

impl PnpRegularizer {
    pub fn new(net: DenoiserNet) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &DenoiserNet {
        &self.net
    }
}

impl KernelRegularizer for PnpRegularizer {
    fn denoise(&self, noisy: &KernelGrid, strength: f64) -> Result<KernelGrid> {
        self.net.denoise(noisy, strength)
    }

    fn name(&self) -> &str {
        "pnp"
    }
}
