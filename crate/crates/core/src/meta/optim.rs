use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::MetaError;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<(), MetaError> {
        if let OptimizerKind::Adam { beta1, beta2, eps } = *self {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(beta1) || !unit(beta2) || eps.is_nan() || eps <= 0.0 {
                return Err(MetaError::Config(format!(
                    "adam needs betas in [0, 1) and eps > 0, got ({beta1}, {beta2}, {eps})"
                )));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

/// Outer-loop optimizer. State is kept in `f64` regardless of parameter type.
#[derive(Debug, Clone)]
pub struct MetaOptimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl MetaOptimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        MetaOptimizer {
            kind,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// In-place update of `params` from the flattened gradient `grad`.
    pub fn step<T: Real>(&mut self, params: &mut [Vec<T>], grad: &[f64], lr: f64) {
        let n: usize = params.iter().map(Vec::len).sum();
        assert_eq!(n, grad.len(), "gradient length does not match parameters");
        let deltas: Vec<f64> = match self.kind {
            OptimizerKind::Sgd => grad.iter().map(|g| lr * g).collect(),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.len() != n {
                    self.m = vec![0.0; n];
                    self.v = vec![0.0; n];
                    self.t = 0;
                }
                self.t += 1;
                let c1 = 1.0 - libm::pow(beta1, self.t as f64);
                let c2 = 1.0 - libm::pow(beta2, self.t as f64);
                grad.iter()
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                    .map(|(&g, (m, v))| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        lr * (*m / c1) / (libm::sqrt(*v / c2) + eps)
                    })
                    .collect()
            }
        };
        for (p, d) in params.iter_mut().flatten().zip(deltas) {
            *p = T::of(p.as_f64() - d);
        }
    }
}
