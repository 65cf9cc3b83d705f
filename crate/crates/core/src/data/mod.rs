//! Scenes, HDR normalization, exposure simulation and dataset splits.

mod rgbe;
mod synth;

pub use rgbe::{decode_rgbe, encode_rgbe, rgb_to_rgbe, rgbe_to_rgb, CodecError, MAX_RGBE_DIM};
pub use synth::{synth_dataset, synth_scene};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, ImageError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("scene {scene}: {detail}")]
    Scene { scene: String, detail: String },
    #[error("degenerate image: {0}")]
    Degenerate(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Exposure value of one of the three LDR captures of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ev {
    Minus2,
    Zero,
    Plus2,
}

impl Ev {
    pub const ALL: [Ev; 3] = [Ev::Minus2, Ev::Zero, Ev::Plus2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn stops(self) -> i32 {
        match self {
            Ev::Minus2 => -2,
            Ev::Zero => 0,
            Ev::Plus2 => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Ev::Minus2 => "-2",
            Ev::Zero => "0",
            Ev::Plus2 => "+2",
        }
    }

    /// File stem in the dataset layout: `ev-2`, `ev0`, `ev+2`.
    pub fn file_stem(self) -> &'static str {
        match self {
            Ev::Minus2 => "ev-2",
            Ev::Zero => "ev0",
            Ev::Plus2 => "ev+2",
        }
    }

    pub fn parse(s: &str) -> Option<Ev> {
        let s = s.trim().trim_start_matches("ev");
        match s {
            "-2" => Some(Ev::Minus2),
            "0" | "+0" => Some(Ev::Zero),
            "+2" | "2" => Some(Ev::Plus2),
            _ => None,
        }
    }

    /// The two exposures other than `self`, in EV order.
    pub fn others(self) -> [Ev; 2] {
        let mut it = Ev::ALL.into_iter().filter(|&e| e != self);
        [it.next().unwrap(), it.next().unwrap()]
    }
}

/// Geometry applied to every image of a scene when it is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preprocess {
    /// Square center crop side.
    pub crop: Option<usize>,
    /// Integer box-filter factor applied after cropping.
    pub downscale: usize,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            crop: Some(512),
            downscale: 1,
        }
    }
}

impl Preprocess {
    pub const NONE: Preprocess = Preprocess {
        crop: None,
        downscale: 1,
    };

    pub fn apply(&self, im: &Image) -> Result<Image, ImageError> {
        let cropped = match self.crop {
            Some(s) => im.center_crop(s)?,
            None => im.clone(),
        };
        cropped.downscale(self.downscale)
    }
}

/// One scene: LDR captures at EV -2, 0, +2 and the HDR reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene_id: String,
    /// Indexed by [`Ev::index`]; values in `[0, 1]`.
    pub ldr: [Image; 3],
    /// Linear radiance.
    pub hdr: Image,
    /// `min(hdr / hdr_scale, 1)`.
    pub hdr_normalized: Image,
    pub hdr_scale: f32,
}

impl SceneRecord {
    pub fn new(
        scene_id: impl Into<String>,
        ldr: [Image; 3],
        hdr: Image,
        prep: &Preprocess,
    ) -> Result<SceneRecord, DataError> {
        let scene_id = scene_id.into();
        let scene_err = |detail: String| DataError::Scene {
            scene: scene_id.clone(),
            detail,
        };
        for (ev, im) in Ev::ALL.iter().zip(&ldr) {
            if im.channels() != 3 {
                return Err(scene_err(format!("{} has {} channels", ev.file_stem(), im.channels())));
            }
            if im.dims() != hdr.dims() {
                return Err(scene_err(format!(
                    "{} is {}x{} but the HDR reference is {}x{}",
                    ev.file_stem(),
                    im.width(),
                    im.height(),
                    hdr.width(),
                    hdr.height()
                )));
            }
            if im.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(scene_err(format!("{} has values outside [0, 1]", ev.file_stem())));
            }
        }
        if hdr.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(scene_err("HDR reference has negative or non-finite radiance".into()));
        }
        let [a, b, c] = &ldr;
        let ldr = [prep.apply(a)?, prep.apply(b)?, prep.apply(c)?];
        let hdr = prep.apply(&hdr)?;
        let (hdr_normalized, hdr_scale) = normalize_hdr(&hdr).map_err(|e| scene_err(format!("{e}")))?;
        Ok(SceneRecord {
            scene_id,
            ldr,
            hdr,
            hdr_normalized,
            hdr_scale,
        })
    }

    pub fn ldr(&self, ev: Ev) -> &Image {
        &self.ldr[ev.index()]
    }

    /// The training and scoring target.
    pub fn target(&self) -> &Image {
        &self.hdr_normalized
    }

    pub fn height(&self) -> usize {
        self.hdr.height()
    }

    pub fn width(&self) -> usize {
        self.hdr.width()
    }
}

/// Nearest-rank percentile (`p` in `[0, 100]`) of `values`.
pub fn percentile(values: &[f32], p: f64) -> f32 {
    assert!(!values.is_empty());
    let n = values.len();
    // the small slack keeps e.g. 99.9% of 1000 at rank 999 despite rounding
    let rank = libm::ceil(p / 100.0 * n as f64 - 1e-9).clamp(1.0, n as f64) as usize;
    let mut buf = values.to_vec();
    let (_, v, _) = buf.select_nth_unstable_by(rank - 1, f32::total_cmp);
    *v
}

/// Percentile used as the HDR white point.
pub const HDR_WHITE_PERCENTILE: f64 = 99.9;

/// Scales radiance so the 99.9th percentile maps to 1 and clips above it.
pub fn normalize_hdr(hdr: &Image) -> Result<(Image, f32), DataError> {
    let peak = hdr.data().iter().copied().fold(0.0f32, f32::max);
    if peak <= 0.0 {
        return Err(DataError::Degenerate("HDR image is all zero"));
    }
    let mut scale = percentile(hdr.data(), HDR_WHITE_PERCENTILE);
    if scale <= 0.0 {
        // fewer than 0.1% lit values: fall back to the maximum
        scale = peak;
    }
    Ok((hdr.map(|v| (v / scale).min(1.0)), scale))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureSimConfig {
    pub low_percentile: f64,
    pub high_percentile: f64,
    pub gamma: f64,
}

impl Default for ExposureSimConfig {
    fn default() -> Self {
        ExposureSimConfig {
            low_percentile: 1.0,
            high_percentile: 99.0,
            gamma: 2.2,
        }
    }
}

impl ExposureSimConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let ok = (0.0..100.0).contains(&self.low_percentile)
            && (0.0..100.0).contains(&self.high_percentile)
            && self.low_percentile < self.high_percentile
            && self.gamma > 0.0;
        if !ok {
            return Err(DataError::Config(format!(
                "exposure window {}..{} (gamma {}) must satisfy 0 <= low < high < 100, gamma > 0",
                self.low_percentile, self.high_percentile, self.gamma
            )));
        }
        Ok(())
    }
}

/// LDR rendering of an HDR image: clamp to the percentile window, stretch it
/// linearly onto `[0, 1]` and apply the `1 / gamma` display curve.
pub fn simulate_exposure(hdr: &Image, cfg: &ExposureSimConfig) -> Result<Image, DataError> {
    cfg.validate()?;
    let lo = percentile(hdr.data(), cfg.low_percentile);
    let hi = percentile(hdr.data(), cfg.high_percentile);
    if hi <= lo {
        return Err(DataError::Degenerate("exposure window collapses (constant image)"));
    }
    let (lo, span, inv_gamma) = (lo as f64, (hi - lo) as f64, 1.0 / cfg.gamma);
    Ok(hdr.map(|v| {
        let t = ((v as f64 - lo) / span).clamp(0.0, 1.0);
        libm::pow(t, inv_gamma) as f32
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle of the (sorted) ids, then validation and test take
/// `floor(fraction * n)` each and training keeps the remainder.
pub fn split(scene_ids: &[String], spec: &SplitSpec) -> Result<Split, DataError> {
    let fr = [spec.train, spec.val, spec.test];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Config(format!(
            "split fractions {fr:?} must be in [0, 1] and sum to 1"
        )));
    }
    if scene_ids.len() < 3 {
        return Err(DataError::Config(format!(
            "need at least 3 scenes to split, got {}",
            scene_ids.len()
        )));
    }
    let mut ids = scene_ids.to_vec();
    ids.sort();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ids.shuffle(&mut rng);
    let n = ids.len() as f64;
    let n_val = libm::floor(spec.val * n + 1e-9) as usize;
    let n_test = libm::floor(spec.test * n + 1e-9) as usize;
    let test = ids.split_off(ids.len() - n_test);
    let val = ids.split_off(ids.len() - n_val);
    Ok(Split { train: ids, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn percentile_of_range() {
        let v: Vec<f32> = (0..1000).map(|i| i as f32).collect();
        assert_eq!(percentile(&v, 99.9), 998.0);
        assert_eq!(percentile(&v, 0.0), 0.0);
        assert_eq!(percentile(&v, 50.0), 499.0);
    }

    #[test]
    fn normalize_constant_and_range() {
        let c = Image::filled(3, 2, 2, 7.5).unwrap();
        let (n, s) = normalize_hdr(&c).unwrap();
        assert_eq!(s, 7.5);
        assert!(n.data().iter().all(|&v| v == 1.0));

        let r = Image::new(1, 10, 100, (0..1000).map(|i| i as f32).collect()).unwrap();
        let (n, s) = normalize_hdr(&r).unwrap();
        assert_eq!(s, 998.0);
        let clipped = r.data().iter().filter(|&&v| v > s).count();
        assert!(clipped as f64 <= 0.001 * 1000.0);
        assert!(n.data().iter().all(|&v| v <= 1.0));
    }

    #[test]
    fn normalize_rejects_black() {
        let z = Image::filled(3, 2, 2, 0.0).unwrap();
        assert!(matches!(normalize_hdr(&z), Err(DataError::Degenerate(_))));
    }

    #[test]
    fn exposure_endpoints_and_midpoint() {
        let hdr = Image::new(1, 1, 101, (0..=100).map(|i| i as f32).collect()).unwrap();
        let cfg = ExposureSimConfig {
            low_percentile: 0.0,
            high_percentile: 99.5,
            gamma: 2.2,
        };
        let ldr = simulate_exposure(&hdr, &cfg).unwrap();
        assert_eq!(ldr.data()[0], 0.0);
        assert_eq!(ldr.data()[100], 1.0);
        // lo = 0, hi = 100: t = 0.5 at 50
        let expected = libm::pow(0.5, 1.0 / 2.2) as f32;
        assert!((ldr.data()[50] - expected).abs() < 1e-6);
        assert!((expected - 0.7297).abs() < 1e-4);
    }

    #[test]
    fn exposure_of_constant_is_degenerate() {
        let c = Image::filled(3, 4, 4, 2.0).unwrap();
        assert!(simulate_exposure(&c, &ExposureSimConfig::default()).is_err());
    }

    #[test]
    fn split_of_450_scenes() {
        let ids: Vec<String> = (0..450).map(|i| format!("scene{i:03}")).collect();
        let s = split(&ids, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (360, 45, 45));
        assert_eq!(s, split(&ids, &SplitSpec::default()).unwrap());
    }

    #[test]
    fn split_needs_three() {
        let ids = vec![String::from("a"), String::from("b")];
        assert!(split(&ids, &SplitSpec::default()).is_err());
    }

    #[test]
    fn scene_size_mismatch_names_file() {
        let l = Image::filled(3, 4, 4, 0.5).unwrap();
        let hdr = Image::filled(3, 4, 5, 1.0).unwrap();
        let err = SceneRecord::new("x", [l.clone(), l.clone(), l], hdr, &Preprocess::NONE).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("ev-2") && msg.contains("HDR"), "{msg}");
    }

    #[test]
    fn ev_helpers() {
        assert_eq!(Ev::Zero.others(), [Ev::Minus2, Ev::Plus2]);
        for ev in Ev::ALL {
            assert_eq!(Ev::parse(ev.label()), Some(ev));
            assert_eq!(Ev::parse(ev.file_stem()), Some(ev));
        }
    }
}
