use alloc::string::ToString;
use alloc::vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{backward, fd_gradient, rel_error};

fn cfg(depth: usize, base: usize) -> Architecture {
    Architecture::UNet(UNetConfig {
        depth,
        base_channels: base,
        ..UNetConfig::default()
    })
}

fn random<T: Real>(dims: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    let v = (0..n).map(|_| T::of(rng.random_range(0.0..1.0))).collect();
    Tensor::from_vec(v, dims).unwrap()
}

fn as_tensor_error(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

fn zero_weights(arch: Architecture) -> ParamSet<f64> {
    let mut p = ParamSet::<f64>::init(arch, 0).unwrap();
    for e in p.entries_mut() {
        if e.name.ends_with(".weight") {
            e.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    p
}

/// Tensor count counted block by block: a conv is weight + bias, a norm is
/// gamma + beta.
fn expected_count(depth: usize) -> usize {
    let contracting = 2 * 2 + 2 * 2;
    let bottom = contracting + 2;
    let expanding = 2 * 2 + 2;
    let top = 3 * 2;
    depth * contracting + bottom + (depth - 1) * expanding + top
}

#[test]
fn init_is_deterministic() {
    let a = ParamSet::<f32>::init(cfg(2, 8), 7).unwrap();
    assert_eq!(a, ParamSet::init(cfg(2, 8), 7).unwrap());
    assert_ne!(a, ParamSet::init(cfg(2, 8), 8).unwrap());
}

#[test]
fn tensor_count_matches_block_layout() {
    for depth in 1..5 {
        let p = ParamSet::<f32>::init(cfg(depth, 4), 0).unwrap();
        assert_eq!(p.len(), expected_count(depth), "depth {depth}");
    }
    assert_eq!(ParamSet::<f32>::init(cfg(1, 4), 0).unwrap().len(), 24);
}

#[test]
fn init_values() {
    let p = ParamSet::<f64>::init(cfg(2, 8), 3).unwrap();
    for e in p.entries() {
        if e.name.ends_with(".bias") || e.name.ends_with(".beta") {
            assert!(e.values.iter().all(|&v| v == 0.0), "{}", e.name);
        } else if e.name.ends_with(".gamma") {
            assert!(e.values.iter().all(|&v| v == 1.0), "{}", e.name);
        }
    }
    // Empirical std of a large weight tensor against sqrt(2 / fan_in).
    let w = p.get("bottom.conv2.weight").unwrap();
    let fan_in = w.dims[1] * 9;
    let var = w.values.iter().map(|v| v * v).sum::<f64>() / w.values.len() as f64;
    let expect = 2.0 / fan_in as f64;
    assert!((var / expect - 1.0).abs() < 0.1, "{var} vs {expect}");
    let up = p.get("bottom.up.weight").unwrap();
    assert_eq!(up.dims, vec![32, 16, 2, 2]);
}

#[test]
fn channel_widths_follow_levels() {
    let arch = cfg(3, 4);
    let Architecture::UNet(c) = arch else { unreachable!() };
    let p = ParamSet::<f32>::init(arch, 0).unwrap();
    for level in 0..3 {
        let w = p.get(&format!("down{level}.conv1.weight")).unwrap();
        assert_eq!(w.dims[0], 4 << level);
        assert_eq!(w.dims[1], if level == 0 { 3 } else { 4 << (level - 1) });
        assert_eq!(c.width(level), 4 << level);
    }
    let bound = p.constants().unwrap();
    let mut x = random::<f32>(&[1, 3, 16, 16], 1);
    for level in 0..3 {
        let y = contracting_block(&x, &bound, level).unwrap();
        assert_eq!(y.dims()[1], c.width(level));
        x = y.maxpool2().unwrap();
    }
}

#[test]
fn contracting_block_shape_and_sign() {
    let p = ParamSet::<f64>::init(cfg(2, 4), 1).unwrap().constants().unwrap();
    let y = contracting_block(&random(&[1, 4, 16, 16], 2), &p, 1).unwrap();
    assert_eq!(y.dims(), &[1, 8, 16, 16]);
    assert!(y.data().iter().all(|&v| v >= 0.0));
}

#[test]
fn contracting_block_rejects_wrong_width() {
    let p = ParamSet::<f64>::init(cfg(2, 4), 1).unwrap().constants().unwrap();
    let err = contracting_block(&random(&[1, 5, 16, 16], 2), &p, 1).unwrap_err();
    assert!(
        matches!(err, ModelError::Tensor(TensorError::Dimension { .. })),
        "{err}"
    );
}

#[test]
fn zero_weights_give_zero_blocks() {
    let p = zero_weights(cfg(2, 16)).constants().unwrap();
    let y = contracting_block(&random(&[1, 16, 8, 8], 3), &p, 1).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    let b = bottom_block(&random(&[1, 32, 4, 4], 3), &p).unwrap();
    assert_eq!(b.dims(), &[1, 32, 8, 8]);
    assert!(b.data().iter().all(|&v| v == 0.0));
}

#[test]
fn bottom_block_shape_and_purity() {
    let p = ParamSet::<f32>::init(cfg(2, 16), 4).unwrap().constants().unwrap();
    let x = random(&[1, 32, 4, 4], 5);
    let a = bottom_block(&x, &p).unwrap();
    assert_eq!(a.dims(), &[1, 32, 8, 8]);
    assert_eq!(a.to_vec(), bottom_block(&x, &p).unwrap().to_vec());
}

#[test]
fn expanding_block_shape_and_gradients() {
    let p = ParamSet::<f64>::init(cfg(2, 4), 6).unwrap().constants().unwrap();
    let x_up = Tensor::param(random::<f64>(&[1, 8, 8, 8], 7).to_vec(), &[1, 8, 8, 8]).unwrap();
    let skip = Tensor::param(random::<f64>(&[1, 8, 8, 8], 8).to_vec(), &[1, 8, 8, 8]).unwrap();
    let y = expanding_block(&x_up, &skip, &p, 1).unwrap();
    assert_eq!(y.dims(), &[1, 4, 16, 16]);
    assert!(y.data().iter().all(|&v| v >= 0.0));

    let p16 = ParamSet::<f64>::init(cfg(2, 8), 6).unwrap().constants().unwrap();
    let a = random::<f64>(&[1, 16, 8, 8], 9);
    let y = expanding_block(&a, &a, &p16, 1).unwrap();
    assert_eq!(y.dims(), &[1, 8, 16, 16]);

    let loss = expanding_block(&x_up, &skip, &p, 1).unwrap().sum_all().unwrap();
    let g = backward(&loss, &[x_up.clone(), skip.clone()], false)
        .unwrap()
        .into_vec();
    for (i, (t, gt)) in [&x_up, &skip].into_iter().zip(&g).enumerate() {
        assert!(gt.data().iter().any(|&v| v != 0.0), "input {i} gets no gradient");
        let fd = fd_gradient(
            |v| {
                let (u, s) = if i == 0 { (v, &skip) } else { (&x_up, v) };
                expanding_block(u, s, &p, 1).map_err(as_tensor_error)?.sum_all()
            },
            t,
            1e-5,
        )
        .unwrap();
        assert!(rel_error(gt.data(), fd.data(), 1e-8) < 1e-5);
    }
}

#[test]
fn expanding_block_spatial_mismatch() {
    let p = ParamSet::<f64>::init(cfg(2, 4), 6).unwrap().constants().unwrap();
    let err = expanding_block(&random(&[1, 8, 8, 8], 1), &random(&[1, 8, 4, 4], 2), &p, 1).unwrap_err();
    assert!(err.to_string().contains("height/width"), "{err}");
}

#[test]
fn top_block_range() {
    let p = ParamSet::<f64>::init(cfg(1, 4), 2).unwrap().constants().unwrap();
    let y = top_block(&random(&[2, 4, 8, 8], 1), &random(&[2, 4, 8, 8], 2), &p).unwrap();
    assert_eq!(y.dims(), &[2, 3, 8, 8]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));

    let mut z = ParamSet::<f64>::init(cfg(1, 4), 2).unwrap();
    for e in z.entries_mut() {
        if e.name.starts_with("top.out") {
            e.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let y = top_block(
        &random(&[1, 4, 8, 8], 1),
        &random(&[1, 4, 8, 8], 2),
        &z.constants().unwrap(),
    )
    .unwrap();
    assert!(y.data().iter().all(|&v| v == 0.5));
}

#[test]
fn forward_shape_purity_range() {
    let p = ParamSet::<f32>::init(cfg(2, 8), 0).unwrap();
    let x = random::<f32>(&[1, 3, 32, 32], 1);
    let a = predict(&p, &x).unwrap();
    assert_eq!(a.dims(), &[1, 3, 32, 32]);
    assert_eq!(a.to_vec(), predict(&p, &x).unwrap().to_vec());
    assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn forward_rejects_indivisible_dims() {
    let p = ParamSet::<f32>::init(cfg(2, 8), 0).unwrap();
    let err = predict(&p, &random::<f32>(&[1, 3, 30, 32], 1)).unwrap_err();
    assert!(matches!(err, ModelError::Indivisible { multiple: 4, .. }));
    assert!(err.to_string().contains("divisible by 4"), "{err}");
}

#[test]
fn identity_returns_input() {
    let p = ParamSet::<f32>::init(Architecture::Identity, 0).unwrap();
    assert!(p.is_empty());
    let x = random::<f32>(&[1, 3, 6, 10], 1);
    assert_eq!(predict(&p, &x).unwrap().to_vec(), x.to_vec());
}

/// Relu and maxpool are piecewise linear, so a step of 1e-4 can straddle a
/// kink for some fixtures; this one has none within reach.
#[test]
fn full_net_gradient_matches_finite_differences() {
    let params = ParamSet::<f64>::init(cfg(1, 4), 0).unwrap();
    let x = random::<f64>(&[1, 3, 8, 8], 100);
    let (bound, out) = forward_tracked(&params, &x).unwrap();
    let loss = out.mean_all().unwrap();
    let grads = backward(&loss, bound.tensors(), false).unwrap().into_vec();
    for (i, name) in bound.names().iter().enumerate() {
        let fd = fd_gradient(
            |t| {
                let mut ts = bound.tensors().to_vec();
                ts[i] = t.clone();
                forward(&bound.with_tensors(ts), &x)
                    .map_err(as_tensor_error)?
                    .mean_all()
            },
            &bound.tensors()[i],
            1e-4,
        )
        .unwrap();
        // Conv biases ahead of batch norm have an exactly zero gradient, so
        // magnitudes under 1e-6 are compared absolutely.
        let e = rel_error(grads[i].data(), fd.data(), 1e-6);
        assert!(e <= 1e-4, "{name}: rel err {e}");
    }
}

#[test]
fn arithmetic_and_schema() {
    let a = ParamSet::<f64>::init(cfg(1, 4), 1).unwrap();
    let b = ParamSet::<f64>::init(cfg(1, 4), 2).unwrap();
    let d = a.sub(&b).unwrap().add(&b).unwrap();
    for (x, y) in d.entries().iter().zip(a.entries()) {
        assert!(rel_error(&x.values, &y.values, 1e-12) < 1e-12);
    }
    assert_eq!(a.scale(0.0), ParamSet::zeros(cfg(1, 4)));

    let other = ParamSet::<f64>::init(cfg(1, 8), 1).unwrap();
    let ModelError::Schema(diffs) = a.add(&other).unwrap_err() else {
        panic!("expected schema error")
    };
    assert!(diffs.iter().any(|d| d.starts_with("down0.conv1.weight")), "{diffs:?}");
}

#[test]
fn bytes_roundtrip() {
    let p = ParamSet::<f32>::init(cfg(2, 4), 9).unwrap();
    let bytes = p.to_bytes();
    assert_eq!(&bytes[..8], PARAM_MAGIC);
    assert_eq!(ParamSet::<f32>::from_bytes(&bytes).unwrap(), p);
    let id = ParamSet::<f32>::init(Architecture::Identity, 0).unwrap();
    assert_eq!(ParamSet::<f32>::from_bytes(&id.to_bytes()).unwrap(), id);
}

#[test]
fn bytes_reject_damage() {
    let bytes = ParamSet::<f32>::init(cfg(1, 4), 9).unwrap().to_bytes();
    assert!(matches!(
        ParamSet::<f32>::from_bytes(&bytes[..bytes.len() - 1]),
        Err(ModelError::Format(_))
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(ParamSet::<f32>::from_bytes(&bad), Err(ModelError::Format(_))));
    let mut extra = bytes;
    extra.push(0);
    assert!(matches!(
        ParamSet::<f32>::from_bytes(&extra),
        Err(ModelError::Format(_))
    ));
}

#[test]
fn config_validation() {
    assert!(UNetConfig {
        depth: 0,
        ..UNetConfig::default()
    }
    .validate()
    .is_err());
    assert!(UNetConfig {
        base_channels: 3,
        ..UNetConfig::default()
    }
    .validate()
    .is_err());
    assert!(UNetConfig::default().validate().is_ok());
    assert!(UNetConfig::desk().validate().is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn output_shape_matches_input(depth in 1usize..4, base in 4usize..7, hm in 1usize..3, wm in 1usize..3, n in 1usize..3) {
        let arch = cfg(depth, base);
        let m = 1 << depth;
        // Batch norm at the bottom needs at least two values per channel.
        let (h, w) = (hm * m * 2, wm * m);
        let p = ParamSet::<f32>::init(arch, 0).unwrap();
        let y = predict(&p, &random::<f32>(&[n, 3, h, w], 1)).unwrap();
        prop_assert_eq!(y.dims(), &[n, 3, h, w][..]);
        prop_assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
