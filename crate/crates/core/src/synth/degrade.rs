use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::derive_seed;
use crate::error::{invalid, Result};

pub const LOW_LIGHT_GAIN: f32 = 0.25;
pub const LOW_LIGHT_NOISE: f32 = 0.02;

/// Exposure integral over each frame window, by the trapezoid rule on
/// `k` sub-frame intervals. `renders` holds `n * k + 1` samples.
pub fn motion_blur(renders: &[Vec<f32>], k: usize) -> Result<Vec<Vec<f32>>> {
    if k == 0 || renders.is_empty() || (renders.len() - 1) % k != 0 {
        return invalid(format!(
            "expected n*{k}+1 renders, got {}",
            renders.len()
        ));
    }
    let n = (renders.len() - 1) / k;
    let len = renders[0].len();
    if renders.iter().any(|r| r.len() != len) {
        return invalid("renders differ in size");
    }
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = vec![0.0f32; len];
        for j in 0..=k {
            let w = if j == 0 || j == k { 0.5 } else { 1.0 } / k as f32;
            for (a, &v) in acc.iter_mut().zip(&renders[i * k + j]) {
                *a += w * v;
            }
        }
        frames.push(acc);
    }
    Ok(frames)
}

/// Darkens frames and adds Gaussian sensor noise, seeded by the scene.
pub fn low_light(frames: &mut [Vec<f32>], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x11647));
    let noise = Normal::new(0.0f32, LOW_LIGHT_NOISE).expect("valid sigma");
    for frame in frames {
        for v in frame.iter_mut() {
            *v = *v * LOW_LIGHT_GAIN + noise.sample(&mut rng);
        }
    }
}
