use crate::error::{shape_err, Error, Result};

use super::{DenseLayer, GradientBuffer, Network};

/// Update rule and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// `v ← μ·v + g; θ ← θ − lr·v`.
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// `s ← ρ·s + (1 − ρ)·g²`, step `g / (√s + ε)`, optionally through a momentum buffer.
    RmsProp { rho: f64, eps: f64, momentum: f64 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.0 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop(rho: f64) -> Self {
        OptimizerKind::RmsProp {
            rho,
            eps: 1e-8,
            momentum: 0.0,
        }
    }
}

/// Optimizer with per-parameter accumulators, created lazily on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    first: Option<GradientBuffer>,
    second: Option<GradientBuffer>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        let in_unit = |v: f64| (0.0..1.0).contains(&v);
        let ok = match kind {
            OptimizerKind::Sgd { momentum } => in_unit(momentum),
            OptimizerKind::Adam { beta1, beta2, eps } => in_unit(beta1) && in_unit(beta2) && eps > 0.0,
            OptimizerKind::RmsProp { rho, eps, momentum } => in_unit(rho) && in_unit(momentum) && eps > 0.0,
        };
        if !ok {
            return Err(Error::Invalid(format!("bad optimizer settings {kind:?}")));
        }
        Ok(Self {
            kind,
            lr,
            t: 0,
            first: None,
            second: None,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. The network is left untouched if any gradient is
    /// non-finite or the buffer does not match it.
    pub fn step<N: Network + ?Sized>(&mut self, net: &mut N, grads: &GradientBuffer) -> Result<()> {
        let template = GradientBuffer::zeros_for(net);
        if !grads.is_congruent(&template) {
            return shape_err("gradient buffer does not match network");
        }
        for (name, g) in net.layer_names().iter().zip(grads.layers()) {
            if let Some(i) = g.weights.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}.weights[{i}]")));
            }
            if let Some(i) = g.bias.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}.bias[{i}]")));
            }
        }
        if self.first.as_ref().is_some_and(|f| !f.is_congruent(&template)) {
            return shape_err("optimizer state belongs to a different network");
        }
        let first = self.first.get_or_insert_with(|| template.clone());
        let second = self.second.get_or_insert(template);
        self.t += 1;
        let lr = self.lr;

        let params = net
            .layers_mut()
            .into_iter()
            .flat_map(|l| {
                let DenseLayer { weights, bias, .. } = l;
                weights.iter_mut().chain(bias.iter_mut())
            });
        let state = first.values_mut().zip(second.values_mut());

        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                for ((p, g), (v, _)) in params.zip(grads.values()).zip(state) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.t as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, s)) in params.zip(grads.values()).zip(state) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *s = beta2 * *s + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let s_hat = *s / c2;
                    *p -= lr * m_hat / (s_hat.sqrt() + eps);
                }
            }
            OptimizerKind::RmsProp { rho, eps, momentum } => {
                for ((p, g), (s, buf)) in params.zip(grads.values()).zip(state) {
                    *s = rho * *s + (1.0 - rho) * g * g;
                    let u = g / (s.sqrt() + eps);
                    if momentum > 0.0 {
                        *buf = momentum * *buf + u;
                        *p -= lr * *buf;
                    } else {
                        *p -= lr * u;
                    }
                }
            }
        }
        Ok(())
    }
}
