//! Synthetic scenes: smooth random radiance fields rendered through
//! per-scene exposure windows, so every scene has its own LDR to HDR mapping.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{simulate_exposure, DataError, Ev, ExposureSimConfig, Preprocess, SceneRecord};
use crate::image::Image;

struct Bump {
    cy: f64,
    cx: f64,
    sigma: f64,
    peak: f64,
    tint: [f64; 3],
}

/// Percentile windows `(low range, high range)` per exposure. Brighter
/// exposures clip more highlights and fewer shadows.
fn window_ranges(ev: Ev) -> ((f64, f64), (f64, f64)) {
    match ev {
        Ev::Minus2 => ((10.0, 25.0), (99.0, 99.9)),
        Ev::Zero => ((3.0, 10.0), (90.0, 97.0)),
        Ev::Plus2 => ((0.0, 3.0), (70.0, 85.0)),
    }
}

/// Deterministic synthetic scene of `size x size` pixels.
///
/// Radiance is an ambient floor plus 2 to 4 tinted Gaussian bumps with peaks
/// in `[1, 50]`; the three LDR captures come from [`simulate_exposure`] with
/// randomly drawn percentile windows.
pub fn synth_scene(seed: u64, size: usize) -> Result<SceneRecord, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce4e);
    let n_bumps = rng.random_range(2..=4);
    let s = size as f64;
    let bumps: Vec<Bump> = (0..n_bumps)
        .map(|_| {
            let mut tint = [
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
            ];
            let m = tint.iter().cloned().fold(0.0, f64::max);
            tint.iter_mut().for_each(|t| *t /= m);
            Bump {
                cy: rng.random_range(0.0..s),
                cx: rng.random_range(0.0..s),
                sigma: rng.random_range(0.08..0.35) * s,
                peak: rng.random_range(1.0..=50.0),
                tint,
            }
        })
        .collect();
    let ambient: f64 = rng.random_range(0.05..0.5);
    let hdr = Image::from_fn(3, size, size, |c, y, x| {
        let (y, x) = (y as f64 + 0.5, x as f64 + 0.5);
        let lit: f64 = bumps
            .iter()
            .map(|b| {
                let d2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
                b.peak * b.tint[c] * libm::exp(-d2 / (2.0 * b.sigma * b.sigma))
            })
            .sum();
        (ambient + lit) as f32
    })?;

    let mut render = |ev: Ev| {
        let ((lo_a, lo_b), (hi_a, hi_b)) = window_ranges(ev);
        let cfg = ExposureSimConfig {
            low_percentile: rng.random_range(lo_a..lo_b),
            high_percentile: rng.random_range(hi_a..hi_b),
            gamma: 2.2,
        };
        simulate_exposure(&hdr, &cfg)
    };
    let ldr = [render(Ev::Minus2)?, render(Ev::Zero)?, render(Ev::Plus2)?];
    SceneRecord::new(format!("synth-{seed}"), ldr, hdr, &Preprocess::NONE)
}

/// `count` scenes with seeds `base_seed, base_seed + 1, ...`.
pub fn synth_dataset(base_seed: u64, count: usize, size: usize) -> Result<Vec<SceneRecord>, DataError> {
    (0..count as u64).map(|i| synth_scene(base_seed + i, size)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::max_abs_diff;

    #[test]
    fn deterministic() {
        assert_eq!(synth_scene(7, 16).unwrap(), synth_scene(7, 16).unwrap());
        assert_ne!(synth_scene(7, 16).unwrap().hdr, synth_scene(8, 16).unwrap().hdr);
    }

    #[test]
    fn exposures_differ_pairwise() {
        for seed in 0..10 {
            let s = synth_scene(seed, 16).unwrap();
            for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                assert!(max_abs_diff(s.ldr[a].data(), s.ldr[b].data()) > 0.0);
            }
        }
    }

    #[test]
    fn invariants_hold() {
        let s = synth_scene(3, 32).unwrap();
        for im in s.ldr.iter().chain([&s.hdr_normalized]) {
            assert_eq!(im.dims(), (3, 32, 32));
            assert!(im.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let clipped = s.hdr.data().iter().filter(|&&v| v > s.hdr_scale).count();
        assert!(clipped as f64 <= 0.001 * s.hdr.data().len() as f64);
    }
}
