//! Property tests for tensor, loss, data and meta invariants.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use metahdr_core::data::{
    decode_rgbe, encode_rgbe, normalize_hdr, simulate_exposure, split, synth_scene, Ev, ExposureSimConfig, SplitSpec,
};
use metahdr_core::image::Image;
use metahdr_core::loss::{expandnet_loss, psnr, ssim, LossConfig};
use metahdr_core::meta::{adapt, mean_loss, pair_tensors, AdaptConfig, DiffMode, HdrModel, Task, TrueHdr};
use metahdr_core::unet::{Architecture, ParamSet, UNetConfig};
use metahdr_core::{backward, Tensor};
use proptest::prelude::*;

fn tensor(data: Vec<f64>, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_vec(data, dims).unwrap()
}

fn image(data: Vec<f32>, h: usize, w: usize) -> Image {
    Image::new(3, h, w, data).unwrap()
}

/// Direct correlation with zero padding, accumulating taps in (channel,
/// row, column) order and adding the bias last.
fn naive_conv(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    b: &[f64],
    f: usize,
    k: usize,
) -> Vec<f64> {
    let p = (k / 2) as isize;
    let mut out = vec![0.0; n * f * h * w];
    for ni in 0..n {
        for fi in 0..f {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for a in 0..k {
                            for bb in 0..k {
                                let (si, sj) = (i as isize + a as isize - p, j as isize + bb as isize - p);
                                if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                    continue;
                                }
                                let xv = x[((ni * c + ci) * h + si as usize) * w + sj as usize];
                                acc += wt[((fi * c + ci) * k + a) * k + bb] * xv;
                            }
                        }
                    }
                    out[((ni * f + fi) * h + i) * w + j] = acc + b[fi];
                }
            }
        }
    }
    out
}

fn fingerprint(ts: &[&Tensor<f64>]) -> u64 {
    let mut h = DefaultHasher::new();
    for t in ts {
        t.dims().hash(&mut h);
        for v in t.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// SSIM from explicit 11x11 windows (no separable filtering) and PSNR from
/// its definition.
fn brute_ssim(a: &Image, b: &Image) -> f64 {
    let (c, h, w) = a.dims();
    let sigma = 1.5f64;
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (y, row) in win.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    for ch in 0..c {
        let mut s = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, row) in win.iter().enumerate() {
                    for (dx, &g) in row.iter().enumerate() {
                        let g = g / total;
                        let va = a.get(ch, y0 + dy, x0 + dx) as f64;
                        let vb = b.get(ch, y0 + dy, x0 + dx) as f64;
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc += s / count as f64;
    }
    acc / c as f64
}

fn brute_psnr(a: &Image, b: &Image) -> f64 {
    let n = a.data().len() as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    10.0 * (1.0 / mse).log10()
}

/// Input dims, filters, kernel size, input, weights, bias.
type ConvCase = ((usize, usize, usize, usize), usize, usize, Vec<f64>, Vec<f64>, Vec<f64>);

fn conv_case() -> impl Strategy<Value = ConvCase> {
    (
        1usize..=2,
        1usize..=4,
        1usize..=8,
        1usize..=8,
        1usize..=4,
        prop_oneof![Just(1usize), Just(3)],
    )
        .prop_flat_map(|(n, c, h, w, f, k)| {
            (
                Just((n, c, h, w)),
                Just(f),
                Just(k),
                prop::collection::vec(-1.0f64..1.0, n * c * h * w),
                prop::collection::vec(-1.0f64..1.0, f * c * k * k),
                prop::collection::vec(-1.0f64..1.0, f),
            )
        })
}

fn pixels(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(0.05f32..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_matches_naive_loops_exactly((dims, f, k, x, wt, b) in conv_case()) {
        let (n, c, h, w) = dims;
        let got = tensor(x.clone(), &[n, c, h, w])
            .conv2d(&tensor(wt.clone(), &[f, c, k, k]), &tensor(b.clone(), &[f]))
            .unwrap();
        let want = naive_conv(&x, dims, &wt, &b, f, k);
        prop_assert_eq!(got.data(), &want[..]);
    }

    #[test]
    fn ops_leave_inputs_untouched(x in prop::collection::vec(-1.0f64..1.0, 2 * 4 * 4 * 4), y in prop::collection::vec(0.5f64..2.0, 2 * 4 * 4 * 4)) {
        let x = Tensor::param(x, &[2, 4, 4, 4]).unwrap();
        let y = Tensor::param(y, &[2, 4, 4, 4]).unwrap();
        let wt = Tensor::param(vec![0.1; 4 * 4 * 9], &[4, 4, 3, 3]).unwrap();
        let wu = Tensor::param(vec![0.2; 4 * 2 * 4], &[4, 2, 2, 2]).unwrap();
        let b4 = Tensor::param(vec![0.3; 4], &[4]).unwrap();
        let b2 = Tensor::param(vec![0.3; 2], &[2]).unwrap();
        let before = fingerprint(&[&x, &y, &wt, &wu, &b4]);
        let outs = vec![
            x.add(&y).unwrap(), x.sub(&y).unwrap(), x.mul(&y).unwrap(), x.div(&y).unwrap(),
            x.neg().unwrap(), x.abs().unwrap(), x.relu().unwrap(), x.sigmoid().unwrap(),
            y.sqrt().unwrap(), x.square().unwrap(), x.scale(2.0).unwrap(), x.clamp_min(0.1).unwrap(),
            x.maxpool2().unwrap().sum_all().unwrap(), x.conv2d(&wt, &b4).unwrap(),
            x.conv_transpose2d(&wu, &b2).unwrap().sum_all().unwrap(),
            x.batchnorm2d(&b4, &b4, 1e-5).unwrap(), x.concat_channels(&y).unwrap().sum_all().unwrap(),
            x.slice_channels(1, 2).unwrap().sum_all().unwrap(), x.pixel_sum().unwrap().sum_all().unwrap(),
            x.channel_sum().unwrap().sum_all().unwrap(), x.reshape(&[8, 16]).unwrap().sum_all().unwrap(),
        ];
        let mut total = Tensor::scalar(0.0);
        for o in &outs {
            total = total.add(&o.sum_all().unwrap()).unwrap();
        }
        backward(&total, &[x.clone(), y.clone(), wt.clone(), wu.clone(), b4.clone()], true).unwrap();
        prop_assert_eq!(before, fingerprint(&[&x, &y, &wt, &wu, &b4]));
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_on_equal_images(p in pixels(3 * 4 * 4), t in pixels(3 * 4 * 4)) {
        let cfg = LossConfig::default();
        let pt = tensor(p.iter().map(|&v| v as f64).collect(), &[1, 3, 4, 4]);
        let tt = tensor(t.iter().map(|&v| v as f64).collect(), &[1, 3, 4, 4]);
        let l = expandnet_loss(&pt, &tt, &cfg).unwrap().item();
        prop_assert!(l >= 0.0);
        if p != t {
            prop_assert!(l > 0.0);
        }
        let same = expandnet_loss(&tt, &tt, &cfg).unwrap().item();
        prop_assert!(same.abs() < 1e-12, "{}", same);
    }

    #[test]
    fn cosine_term_ignores_per_pixel_scale(
        p in pixels(3 * 3 * 3),
        t in pixels(3 * 3 * 3),
        s in prop::collection::vec(0.2f64..5.0, 9),
    ) {
        let penalty = |pred: &[f64]| {
            let pt = tensor(pred.to_vec(), &[1, 3, 3, 3]);
            let tt = tensor(t.iter().map(|&v| v as f64).collect(), &[1, 3, 3, 3]);
            let with = expandnet_loss(&pt, &tt, &LossConfig { lambda: 1.0, ..LossConfig::default() }).unwrap().item();
            let l1 = expandnet_loss(&pt, &tt, &LossConfig { lambda: 0.0, ..LossConfig::default() }).unwrap().item();
            with - l1
        };
        let pred: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        let scaled: Vec<f64> = pred.iter().enumerate().map(|(i, v)| v * s[i % 9]).collect();
        prop_assert!((penalty(&pred) - penalty(&scaled)).abs() < 1e-9);
    }

    #[test]
    fn metrics_match_brute_force(a in prop::collection::vec(0.0f32..1.0, 3 * 16 * 16), b in prop::collection::vec(0.0f32..1.0, 3 * 16 * 16)) {
        let (a, b) = (image(a, 16, 16), image(b, 16, 16));
        prop_assert!((ssim(&a, &b).unwrap() - brute_ssim(&a, &b)).abs() < 1e-6);
        prop_assert!((psnr(&a, &b, 1.0).unwrap() - brute_psnr(&a, &b)).abs() < 1e-6);
    }

    #[test]
    fn rgbe_roundtrip_is_within_quantization(
        (h, w, v) in (1usize..12, 1usize..12).prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(-7.0f64..7.0, 3 * h * w)))
    ) {
        let im = image(v.iter().map(|e| 10f64.powf(*e / 2.0) as f32).collect(), h, w);
        let back = decode_rgbe(&encode_rgbe(&im).unwrap()).unwrap();
        prop_assert_eq!(back.dims(), im.dims());
        for y in 0..h {
            for x in 0..w {
                let m = (0..3).map(|c| im.get(c, y, x)).fold(0.0f32, f32::max) as f64;
                for c in 0..3 {
                    let err = (back.get(c, y, x) as f64 - im.get(c, y, x) as f64).abs();
                    prop_assert!(err <= m / 256.0 + 1e-12, "{} vs {}", back.get(c, y, x), im.get(c, y, x));
                }
                let top = (0..3).map(|c| back.get(c, y, x)).fold(0.0f32, f32::max) as f64;
                prop_assert!((top - m).abs() / m <= 0.01);
            }
        }
    }

    #[test]
    fn exposure_is_a_monotone_tone_curve(v in prop::collection::vec(0.0f32..50.0, 3 * 5 * 5), c in 0.5f32..4.0) {
        let hdr = image(v, 5, 5);
        let cfg = ExposureSimConfig::default();
        let Ok(ldr) = simulate_exposure(&hdr, &cfg) else { return Ok(()); };
        let (hv, lv) = (hdr.data(), ldr.data());
        for i in 0..hv.len() {
            for j in 0..hv.len() {
                if hv[i] <= hv[j] {
                    prop_assert!(lv[i] <= lv[j]);
                }
            }
        }
        prop_assert!(lv.iter().all(|x| (0.0..=1.0).contains(x)));
        // The window follows the image, so a global gain leaves the rendering unchanged.
        let brighter = simulate_exposure(&hdr.map(|x| x * c), &cfg).unwrap();
        for (a, b) in brighter.data().iter().zip(lv) {
            prop_assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn normalize_clips_at_most_a_thousandth(v in prop::collection::vec(0.0f32..1000.0, 3 * 20 * 20)) {
        let hdr = image(v, 20, 20);
        let (norm, scale) = normalize_hdr(&hdr).unwrap();
        let clipped = hdr.data().iter().filter(|&&x| x > scale).count();
        prop_assert!(clipped as f64 <= 0.001 * hdr.data().len() as f64);
        prop_assert!(norm.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn splits_are_deterministic_disjoint_and_exhaustive(n in 3usize..200, seed: u64, val in 0.0f64..0.4, test in 0.0f64..0.4) {
        let ids: Vec<String> = (0..n).map(|i| format!("scene{i:03}")).collect();
        let spec = SplitSpec { train: 1.0 - val - test, val, test, seed };
        let s = split(&ids, &spec).unwrap();
        prop_assert_eq!(&s, &split(&ids, &spec).unwrap());
        prop_assert_eq!(s.val.len(), (val * n as f64 + 1e-9).floor() as usize);
        prop_assert_eq!(s.test.len(), (test * n as f64 + 1e-9).floor() as usize);
        let mut all: Vec<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
        all.sort();
        prop_assert_eq!(all, ids);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn small_step_adaptation_never_raises_support_loss(scene_seed in 0u64..10_000, init_seed in 0u64..10_000, q in 0usize..3) {
        let arch = Architecture::UNet(UNetConfig::tiny());
        let model = HdrModel::new(arch, LossConfig::default());
        let scene = synth_scene(scene_seed, 16).unwrap();
        let task = Task::from_scene(&scene, Ev::ALL[q], &TrueHdr).unwrap();
        let support: Vec<_> = task.support.iter().map(|p| pair_tensors::<f64>(p).unwrap()).collect();
        let theta = ParamSet::<f64>::init(arch, init_seed).unwrap().bind().unwrap();
        let before = mean_loss(&model, theta.tensors(), &support).unwrap().item();
        let cfg = AdaptConfig { alpha: 1e-3, steps: 3, mode: DiffMode::FirstOrder };
        let phi = adapt(&model, theta.tensors(), &support, &cfg).unwrap();
        let after = mean_loss(&model, &phi, &support).unwrap().item();
        prop_assert!(after <= before, "{} > {}", after, before);
    }
}
