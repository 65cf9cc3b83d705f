//! Finite-difference verification suite in 64-bit precision.
//!
//! Four categories:
//!
//! * `op`: every differentiable op, first derivatives, on randomized inputs;
//! * `second_order`: gradients of gradients for the smooth ops;
//! * `unet`: gradient of the mean output of a depth-1, base-4 network on 8x8;
//! * `meta`: second-order meta-gradient through three inner steps, plus exact
//!   first/second-order agreement at zero inner rate.
//!
//! Relu, abs, clamp and maxpool are piecewise linear; their fixtures keep every
//! input at least 1e-3 away from a kink so a step of `FD_STEP` never crosses one.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{synth_scene, Ev};
use crate::loss::{expandnet_loss, LossConfig};
use crate::meta::{meta_objective, task_meta_gradient, AdaptConfig, DiffMode, HdrModel, MetaError, Task, TrueHdr};
use crate::tensor::{backward, fd_gradient, rel_error, Result as TensorResult, Tensor, TensorError};
use crate::unet::{forward, Architecture, ModelError, ParamSet, UNetConfig};

pub const FD_STEP: f64 = 1e-4;
pub const OP_TOL: f64 = 1e-5;
pub const SECOND_ORDER_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-4;
pub const META_TOL: f64 = 1e-3;
/// Gradient magnitudes below this are compared absolutely.
pub const ERR_FLOOR: f64 = 1e-6;
pub const OP_TRIALS: usize = 20;

/// Deliberate corruption of the analytic side, to prove the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates every analytic convolution-kernel gradient.
    ConvSign,
}

impl Fault {
    pub fn parse(s: &str) -> Option<Fault> {
        (s == "conv-sign").then_some(Fault::ConvSign)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Op,
    SecondOrder,
    UNet,
    Meta,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Op, Category::SecondOrder, Category::UNet, Category::Meta];

    pub fn label(self) -> &'static str {
        match self {
            Category::Op => "op",
            Category::SecondOrder => "second_order",
            Category::UNet => "unet",
            Category::Meta => "meta",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub categories: Vec<Category>,
    pub fault: Option<Fault>,
    pub trials: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            categories: Category::ALL.to_vec(),
            fault: None,
            trials: OP_TRIALS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub category: Category,
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }

    /// `(category, checks, worst relative error, tolerance, all passed)`.
    pub fn summary(&self) -> Vec<(Category, usize, f64, f64, bool)> {
        Category::ALL
            .into_iter()
            .filter_map(|cat| {
                let cs: Vec<_> = self.checks.iter().filter(|c| c.category == cat).collect();
                let first = cs.first()?;
                let worst = cs.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
                Some((cat, cs.len(), worst, first.tolerance, cs.iter().all(|c| c.passed())))
            })
            .collect()
    }
}

type OpFn = fn(&[Tensor<f64>]) -> TensorResult<Tensor<f64>>;
type InputFn = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;

struct OpCase {
    name: &'static str,
    inputs: InputFn,
    f: OpFn,
    smooth: bool,
    /// Input index holding a convolution kernel.
    kernel: Option<usize>,
}

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.random_range(lo..hi)).collect(), dims).expect("valid dims")
}

/// Magnitudes in `[0.05, 1)` with random sign, shifted by `center`.
fn off_kink(rng: &mut ChaCha8Rng, dims: &[usize], center: f64) -> Tensor<f64> {
    let n = dims.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            center + if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::from_vec(v, dims).expect("valid dims")
}

/// Pool input whose 2x2 windows have a unique maximum by at least 1e-3.
fn pool_input(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    loop {
        let t = uniform(rng, dims, -1.0, 1.0);
        let d = t.data();
        let ok = (0..n * c).all(|p| {
            (0..h / 2).all(|i| {
                (0..w / 2).all(|j| {
                    let mut win: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(a, b)| d[p * h * w + (2 * i + a) * w + 2 * j + b])
                        .collect();
                    win.sort_by(|a, b| b.total_cmp(a));
                    win[0] - win[1] > 1e-3
                })
            })
        });
        if ok {
            return t;
        }
    }
}

fn op_cases() -> Vec<OpCase> {
    fn case(name: &'static str, inputs: InputFn, f: OpFn, smooth: bool) -> OpCase {
        OpCase {
            name,
            inputs,
            f,
            smooth,
            kernel: None,
        }
    }
    let mut cases = vec![
        case(
            "add",
            |r| vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)],
            |x| x[0].add(&x[1]),
            true,
        ),
        case(
            "sub",
            |r| vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)],
            |x| x[0].sub(&x[1]),
            true,
        ),
        case(
            "mul",
            |r| vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)],
            |x| x[0].mul(&x[1]),
            true,
        ),
        case(
            "div",
            |r| vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], 0.5, 2.0)],
            |x| x[0].div(&x[1]),
            true,
        ),
        case("neg", |r| vec![uniform(r, &[5], -1.0, 1.0)], |x| x[0].neg(), true),
        case(
            "scale",
            |r| vec![uniform(r, &[5], -1.0, 1.0)],
            |x| x[0].scale(1.7),
            true,
        ),
        case(
            "add_scalar",
            |r| vec![uniform(r, &[5], -1.0, 1.0)],
            |x| x[0].add_scalar(0.3),
            true,
        ),
        case(
            "square",
            |r| vec![uniform(r, &[2, 4], -1.0, 1.0)],
            |x| x[0].square(),
            true,
        ),
        case("sqrt", |r| vec![uniform(r, &[2, 4], 0.1, 2.0)], |x| x[0].sqrt(), true),
        case("abs", |r| vec![off_kink(r, &[2, 4], 0.0)], |x| x[0].abs(), false),
        case("relu", |r| vec![off_kink(r, &[2, 4], 0.0)], |x| x[0].relu(), false),
        case(
            "clamp_min",
            |r| vec![off_kink(r, &[2, 4], 0.25)],
            |x| x[0].clamp_min(0.25),
            false,
        ),
        case(
            "sigmoid",
            |r| vec![uniform(r, &[2, 4], -3.0, 3.0)],
            |x| x[0].sigmoid(),
            true,
        ),
        case(
            "reshape",
            |r| vec![uniform(r, &[2, 3, 2, 2], -1.0, 1.0)],
            |x| x[0].reshape(&[6, 4]),
            true,
        ),
        case(
            "sum_all",
            |r| vec![uniform(r, &[2, 3, 2], -1.0, 1.0)],
            |x| x[0].sum_all(),
            true,
        ),
        case(
            "mean_all",
            |r| vec![uniform(r, &[2, 3, 2], -1.0, 1.0)],
            |x| x[0].mean_all(),
            true,
        ),
        case(
            "expand",
            |r| vec![uniform(r, &[1], -1.0, 1.0)],
            |x| x[0].expand(&[2, 3]),
            true,
        ),
        case(
            "channel_sum",
            |r| vec![uniform(r, &[2, 3, 4, 4], -1.0, 1.0)],
            |x| x[0].channel_sum(),
            true,
        ),
        case(
            "channel_broadcast",
            |r| vec![uniform(r, &[3], -1.0, 1.0)],
            |x| x[0].channel_broadcast(&[2, 3, 4, 4]),
            true,
        ),
        case(
            "pixel_sum",
            |r| vec![uniform(r, &[2, 3, 4, 4], -1.0, 1.0)],
            |x| x[0].pixel_sum(),
            true,
        ),
        case(
            "pixel_broadcast",
            |r| vec![uniform(r, &[2, 1, 4, 4], -1.0, 1.0)],
            |x| x[0].pixel_broadcast(3),
            true,
        ),
        case(
            "concat_channels",
            |r| {
                vec![
                    uniform(r, &[1, 2, 4, 4], -1.0, 1.0),
                    uniform(r, &[1, 3, 4, 4], -1.0, 1.0),
                ]
            },
            |x| x[0].concat_channels(&x[1]),
            true,
        ),
        case(
            "slice_channels",
            |r| vec![uniform(r, &[1, 4, 3, 3], -1.0, 1.0)],
            |x| x[0].slice_channels(1, 2),
            true,
        ),
        case(
            "embed_channels",
            |r| vec![uniform(r, &[1, 2, 3, 3], -1.0, 1.0)],
            |x| x[0].embed_channels(1, 5),
            true,
        ),
        case(
            "maxpool2",
            |r| vec![pool_input(r, &[2, 2, 4, 4])],
            |x| x[0].maxpool2(),
            false,
        ),
        case(
            "batchnorm2d",
            |r| {
                vec![
                    uniform(r, &[2, 3, 3, 3], -1.0, 1.0),
                    uniform(r, &[3], 0.5, 1.5),
                    uniform(r, &[3], -0.5, 0.5),
                ]
            },
            |x| x[0].batchnorm2d(&x[1], &x[2], 1e-5),
            true,
        ),
        case(
            "expandnet_loss",
            |r| {
                // The L1 term kinks where pred == target.
                let p = uniform(r, &[1, 3, 2, 2], 0.3, 1.0);
                let t = p.add(&off_kink(r, &[1, 3, 2, 2], 0.0).scale(0.25).unwrap()).unwrap();
                vec![p, t]
            },
            |x| expandnet_loss(&x[0], &x[1], &LossConfig::default()),
            true,
        ),
    ];
    let conv = |name, inputs: InputFn, f: OpFn| OpCase {
        name,
        inputs,
        f,
        smooth: true,
        kernel: Some(1),
    };
    cases.push(conv(
        "conv2d_3x3",
        |r| {
            vec![
                uniform(r, &[2, 3, 5, 5], -1.0, 1.0),
                uniform(r, &[4, 3, 3, 3], -1.0, 1.0),
                uniform(r, &[4], -1.0, 1.0),
            ]
        },
        |x| x[0].conv2d(&x[1], &x[2]),
    ));
    cases.push(conv(
        "conv2d_1x1",
        |r| {
            vec![
                uniform(r, &[1, 4, 4, 4], -1.0, 1.0),
                uniform(r, &[3, 4, 1, 1], -1.0, 1.0),
                uniform(r, &[3], -1.0, 1.0),
            ]
        },
        |x| x[0].conv2d(&x[1], &x[2]),
    ));
    cases.push(conv(
        "conv_transpose2d",
        |r| {
            vec![
                uniform(r, &[2, 3, 3, 3], -1.0, 1.0),
                uniform(r, &[3, 2, 2, 2], -1.0, 1.0),
                uniform(r, &[2], -1.0, 1.0),
            ]
        },
        |x| x[0].conv_transpose2d(&x[1], &x[2]),
    ));
    cases
}

fn as_params(xs: &[Tensor<f64>]) -> TensorResult<Vec<Tensor<f64>>> {
    xs.iter().map(|x| Tensor::param(x.to_vec(), x.dims())).collect()
}

/// `sum(f(xs) * r)`: a random projection so every output element matters.
fn projected(f: OpFn, xs: &[Tensor<f64>], r: &Tensor<f64>) -> TensorResult<Tensor<f64>> {
    f(xs)?.mul(r)?.sum_all()
}

fn check_first(case: &OpCase, rng: &mut ChaCha8Rng, fault: Option<Fault>) -> TensorResult<f64> {
    let xs = as_params(&(case.inputs)(rng))?;
    let r = uniform(rng, (case.f)(&xs)?.dims(), -1.0, 1.0);
    let loss = projected(case.f, &xs, &r)?;
    let mut grads = backward(&loss, &xs, false)?.into_vec();
    if let (Some(Fault::ConvSign), Some(k)) = (fault, case.kernel) {
        grads[k] = grads[k].neg()?;
    }
    let mut worst = 0.0f64;
    for i in 0..xs.len() {
        let fd = fd_gradient(
            |t| {
                let mut ys = xs.clone();
                ys[i] = t.clone();
                projected(case.f, &ys, &r)
            },
            &xs[i],
            FD_STEP,
        )?;
        worst = worst.max(rel_error(grads[i].data(), fd.data(), ERR_FLOOR));
    }
    Ok(worst)
}

/// Checks `d/dx <grad f(x), v>` against finite differences of the gradient.
fn check_second(case: &OpCase, rng: &mut ChaCha8Rng) -> TensorResult<f64> {
    let xs = as_params(&(case.inputs)(rng))?;
    let r = uniform(rng, (case.f)(&xs)?.dims(), -1.0, 1.0);
    let vs: Vec<Tensor<f64>> = xs.iter().map(|x| uniform(rng, x.dims(), -1.0, 1.0)).collect();
    let contract = |xs: &[Tensor<f64>], create_graph: bool| -> TensorResult<Tensor<f64>> {
        let loss = projected(case.f, xs, &r)?;
        let grads = backward(&loss, xs, create_graph)?.into_vec();
        let mut s = Tensor::scalar(0.0);
        for (g, v) in grads.iter().zip(&vs) {
            s = s.add(&g.mul(v)?.sum_all()?)?;
        }
        Ok(s)
    };
    let s = contract(&xs, true)?;
    let analytic = backward(&s, &xs, false)?.into_vec();
    let mut worst = 0.0f64;
    for i in 0..xs.len() {
        let fd = fd_gradient(
            |t| {
                let mut ys = xs.clone();
                ys[i] = Tensor::param(t.to_vec(), t.dims())?;
                contract(&ys, false)
            },
            &xs[i],
            FD_STEP,
        )?;
        worst = worst.max(rel_error(analytic[i].data(), fd.data(), ERR_FLOOR));
    }
    Ok(worst)
}

fn run_ops(opts: &SuiteOptions, second: bool, out: &mut Vec<CheckResult>) -> TensorResult<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(if second { 2 } else { 1 });
    for case in op_cases() {
        if second && !case.smooth {
            continue;
        }
        let mut worst = 0.0f64;
        for _ in 0..opts.trials.max(1) {
            let e = if second {
                check_second(&case, &mut rng)?
            } else {
                check_first(&case, &mut rng, opts.fault)?
            };
            worst = worst.max(e);
        }
        out.push(CheckResult {
            category: if second { Category::SecondOrder } else { Category::Op },
            name: case.name.into(),
            max_rel_err: worst,
            tolerance: if second { SECOND_ORDER_TOL } else { OP_TOL },
        });
    }
    Ok(())
}

fn tensor_err(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => TensorError::InvalidShape {
            op: "unet",
            dims: Vec::new(),
            reason: format!("{other}"),
        },
    }
}

fn is_kernel(name: &str) -> bool {
    name.ends_with(".weight")
}

/// Pinned network fixture: depth 1, base 4, one 8x8 image.
fn net_fixture() -> (Architecture, ParamSet<f64>, Tensor<f64>) {
    let arch = Architecture::UNet(UNetConfig::tiny());
    let params = ParamSet::init(arch, 0).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let x = uniform(&mut rng, &[1, 3, 8, 8], 0.0, 1.0);
    (arch, params, x)
}

fn run_unet(opts: &SuiteOptions, out: &mut Vec<CheckResult>) -> Result<(), ModelError> {
    let (_, params, x) = net_fixture();
    let bound = params.bind()?;
    let loss = forward(&bound, &x)?.mean_all()?;
    let mut grads = backward(&loss, bound.tensors(), false)?.into_vec();
    for (i, name) in bound.names().iter().enumerate() {
        if opts.fault == Some(Fault::ConvSign) && is_kernel(name) {
            grads[i] = grads[i].neg()?;
        }
        let fd = fd_gradient(
            |t| {
                let mut ts = bound.tensors().to_vec();
                ts[i] = t.clone();
                forward(&bound.with_tensors(ts), &x).map_err(tensor_err)?.mean_all()
            },
            &bound.tensors()[i],
            FD_STEP,
        )?;
        out.push(CheckResult {
            category: Category::UNet,
            name: name.clone(),
            max_rel_err: rel_error(grads[i].data(), fd.data(), ERR_FLOOR),
            tolerance: NET_TOL,
        });
    }
    Ok(())
}

/// Pinned meta fixture: the network fixture's parameters and a synthetic
/// 8x8 scene with EV 0 held out.
pub fn meta_fixture() -> Result<(HdrModel, ParamSet<f64>, Task), MetaError> {
    let (arch, params, _) = net_fixture();
    let scene = synth_scene(40, 8)?;
    let task = Task::from_scene(&scene, Ev::Zero, &TrueHdr)?;
    Ok((HdrModel::new(arch, LossConfig::default()), params, task))
}

fn run_meta(opts: &SuiteOptions, out: &mut Vec<CheckResult>) -> Result<(), MetaError> {
    let (model, params, task) = meta_fixture()?;
    let cfg = AdaptConfig {
        alpha: 0.01,
        steps: 3,
        mode: DiffMode::SecondOrder,
    };
    let values = params.to_values();
    let (_, mut grads) = task_meta_gradient(&model, &values, &task, &cfg)?;
    let leaves: Vec<Tensor<f64>> = params.bind()?.tensors().to_vec();
    for (i, name) in params.names().enumerate() {
        if opts.fault == Some(Fault::ConvSign) && is_kernel(name) {
            grads[i].iter_mut().for_each(|g| *g = -*g);
        }
        let fd = fd_gradient(
            |t| {
                let mut ts = leaves.clone();
                ts[i] = Tensor::param(t.to_vec(), t.dims())?;
                meta_objective(&model, &ts, &task, &cfg).map_err(|e| match e {
                    MetaError::Tensor(t) => t,
                    other => TensorError::InvalidShape {
                        op: "meta_objective",
                        dims: Vec::new(),
                        reason: format!("{other}"),
                    },
                })
            },
            &leaves[i],
            FD_STEP,
        )?;
        out.push(CheckResult {
            category: Category::Meta,
            name: name.into(),
            max_rel_err: rel_error(&grads[i], fd.data(), ERR_FLOOR),
            tolerance: META_TOL,
        });
    }

    let zero = |mode| AdaptConfig {
        alpha: 0.0,
        mode,
        ..cfg
    };
    let (lso, gso) = task_meta_gradient(&model, &values, &task, &zero(DiffMode::SecondOrder))?;
    let (lfo, gfo) = task_meta_gradient(&model, &values, &task, &zero(DiffMode::FirstOrder))?;
    let identical = lso == lfo && gso == gfo;
    out.push(CheckResult {
        category: Category::Meta,
        name: "fo_so_identical_at_zero_alpha".into(),
        max_rel_err: if identical { 0.0 } else { f64::INFINITY },
        tolerance: 0.0,
    });
    Ok(())
}

pub fn run_suite(opts: &SuiteOptions) -> Result<SuiteReport, MetaError> {
    let mut checks = Vec::new();
    for cat in &opts.categories {
        match cat {
            Category::Op => run_ops(opts, false, &mut checks)?,
            Category::SecondOrder => run_ops(opts, true, &mut checks)?,
            Category::UNet => run_unet(opts, &mut checks)?,
            Category::Meta => run_meta(opts, &mut checks)?,
        }
    }
    Ok(SuiteReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn only(cat: Category, fault: Option<Fault>, trials: usize) -> SuiteReport {
        run_suite(&SuiteOptions {
            categories: vec![cat],
            fault,
            trials,
        })
        .unwrap()
    }

    #[test]
    fn op_checks_pass() {
        let r = only(Category::Op, None, 3);
        assert!(r.checks.len() >= 25);
        let bad: Vec<_> = r.failures().collect();
        assert!(bad.is_empty(), "{bad:?}");
    }

    #[test]
    fn second_order_checks_pass() {
        let r = only(Category::SecondOrder, None, 3);
        let bad: Vec<_> = r.failures().collect();
        assert!(bad.is_empty(), "{bad:?}");
    }

    #[test]
    fn conv_sign_fault_is_caught() {
        let r = only(Category::Op, Some(Fault::ConvSign), 1);
        let bad: Vec<_> = r.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(bad, ["conv2d_3x3", "conv2d_1x1", "conv_transpose2d"]);
    }

    #[test]
    fn summary_lists_categories() {
        let mut r = only(Category::Op, None, 1);
        r.checks.extend(only(Category::SecondOrder, None, 1).checks);
        let s = r.summary();
        assert_eq!(
            s.iter().map(|c| c.0).collect::<Vec<_>>(),
            [Category::Op, Category::SecondOrder]
        );
        assert!(s.iter().all(|c| c.4));
        assert_eq!(Fault::parse("conv-sign"), Some(Fault::ConvSign));
    }
}
