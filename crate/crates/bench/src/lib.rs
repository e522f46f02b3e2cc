//! Shared fixtures for the criterion benches.

use diffem_core::sampler::particle_rng;
use diffem_core::score::StationaryGaussianPrior;
use diffem_core::synth::{degrade, sample_motion_kernel, DegradationConfig};
use diffem_core::{BlurKernel, ImageTensor};

/// A seeded blind-deblurring problem on a `size`-square grayscale texture.
pub struct Problem {
    pub prior: StationaryGaussianPrior,
    pub clean: ImageTensor,
    pub kernel: BlurKernel,
    pub y: ImageTensor,
    pub sigma: f64,
}

pub fn problem(size: usize, ksize: usize, seed: u64) -> Problem {
    let prior = StationaryGaussianPrior::power_law(ImageTensor::filled(size, size, 1, 0.5), 0.04, 1.0, 1.0)
        .expect("valid prior");
    let mut rng = particle_rng(seed, 0);
    let clean = prior.sample(&mut rng);
    let kernel = sample_motion_kernel(
        &DegradationConfig {
            kernel_size: ksize,
            ..Default::default()
        },
        &mut rng,
    )
    .expect("valid kernel config");
    let sigma = 5.0 / 255.0;
    let y = degrade(&clean, &kernel, sigma, &mut rng).expect("kernel fits image");
    Problem {
        prior,
        clean,
        kernel,
        y,
        sigma,
    }
}
