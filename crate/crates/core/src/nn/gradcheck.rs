//! Central finite-difference gradient oracle.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

use super::{BranchedNet, DenseLayer, GradientBuffer, Network};

/// Central differences `(f(θ + h) − f(θ − h)) / 2h` for every parameter of `net`.
pub fn finite_difference<N, F>(net: &N, f: F, step: f64) -> GradientBuffer
where
    N: Network + Clone,
    F: Fn(&N) -> f64,
{
    let mut probe = net.clone();
    let mut out = GradientBuffer::zeros_for(net);
    let n_layers = out.layers().len();
    for li in 0..n_layers {
        for which in 0..2 {
            let len = {
                let l = &probe.layers()[li];
                if which == 0 {
                    l.weights.len()
                } else {
                    l.bias.len()
                }
            };
            for j in 0..len {
                let orig = param(&mut probe, li, which, j, None);
                param(&mut probe, li, which, j, Some(orig + step));
                let plus = f(&probe);
                param(&mut probe, li, which, j, Some(orig - step));
                let minus = f(&probe);
                param(&mut probe, li, which, j, Some(orig));
                let g = &mut out.layers_mut()[li];
                let slot = if which == 0 { &mut g.weights[j] } else { &mut g.bias[j] };
                *slot = (plus - minus) / (2.0 * step);
            }
        }
    }
    out
}

/// Central differences at steps `h`, `2h`, `4h` combined by two rounds of
/// Richardson extrapolation, giving sixth-order accuracy. The higher order
/// allows steps large enough that roundoff stays near machine precision,
/// which matters for parameters whose true gradient is zero.
pub fn extrapolated_difference<N, F>(net: &N, f: F, step: f64) -> GradientBuffer
where
    N: Network + Clone,
    F: Fn(&N) -> f64,
{
    let g: Vec<GradientBuffer> = [1.0, 2.0, 4.0].iter().map(|m| finite_difference(net, &f, m * step)).collect();
    let d1 = richardson(&g[0], &g[1], 4.0);
    let d1_coarse = richardson(&g[1], &g[2], 4.0);
    richardson(&d1, &d1_coarse, 16.0)
}

// (r·fine − coarse) / (r − 1)
fn richardson(fine: &GradientBuffer, coarse: &GradientBuffer, r: f64) -> GradientBuffer {
    let mut out = fine.clone();
    for (o, c) in out.values_mut().zip(coarse.values()) {
        *o = (r * *o - c) / (r - 1.0);
    }
    out
}

// Reads (and optionally overwrites) one scalar parameter, returning its prior value.
fn param<N: Network>(net: &mut N, layer: usize, which: usize, j: usize, set: Option<f64>) -> f64 {
    let mut layers = net.layers_mut();
    let DenseLayer { weights, bias, .. } = &mut *layers[layer];
    let slot = if which == 0 { &mut weights[j] } else { &mut bias[j] };
    let old = *slot;
    if let Some(v) = set {
        *slot = v;
    }
    old
}

/// Worst `|g_ad − g_fd| / max(|g_fd|, 1e-8)` over all parameters.
pub fn max_relative_error(analytic: &GradientBuffer, numeric: &GradientBuffer) -> Result<f64> {
    if !analytic.is_congruent(numeric) {
        return shape_err("gradient buffers are not congruent");
    }
    Ok(analytic
        .values()
        .zip(numeric.values())
        .map(|(a, n)| (a - n).abs() / n.abs().max(1e-8))
        .fold(0.0, f64::max))
}

/// Compares [`BranchedNet::backward`] for a loss of the head outputs against
/// central differences. `loss` returns the value and its gradient with respect
/// to the `K` head outputs.
pub fn grad_check<L>(net: &BranchedNet, loss: L, x: &Tensor, step: f64) -> Result<f64>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let outputs = net.forward_heads(x)?;
    let (_, d_out) = loss(&outputs);
    let analytic = net.backward(x, &d_out)?;
    let numeric = finite_difference(
        net,
        |n| {
            let o = n.forward_heads(x).expect("shape checked above");
            loss(&o).0
        },
        step,
    );
    max_relative_error(&analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn squared_output(o: &[f64]) -> (f64, Vec<f64>) {
        (o.iter().map(|v| v * v).sum(), o.iter().map(|v| 2.0 * v).collect())
    }

    fn tanh_net(rng: &mut ChaCha8Rng) -> BranchedNet {
        BranchedNet::glorot(&[3, 5, 4], Activation::Tanh, Activation::Tanh, &[3], Activation::Tanh, 2, rng).unwrap()
    }

    #[test]
    fn extrapolation_is_exact_for_quintic_terms() {
        // f(θ) = Σ θ⁵: central differences at three steps cancel the h² and h⁴ terms exactly.
        let l = DenseLayer::new(2, 1, Activation::Identity, vec![0.5, -1.5], vec![2.0]).unwrap();
        let net = Mlp::new(2, vec![l]).unwrap();
        let quintic = |m: &Mlp| m.dense_layers()[0].weights().iter().chain(m.dense_layers()[0].bias()).map(|v| v.powi(5)).sum::<f64>();
        let g = extrapolated_difference(&net, quintic, 1e-2);
        let want = [5.0 * 0.5f64.powi(4), 5.0 * 1.5f64.powi(4), 5.0 * 2.0f64.powi(4)];
        for (got, w) in g.values().zip(want) {
            assert!((got - w).abs() < 1e-9, "{got} vs {w}");
        }
    }

    #[test]
    fn zero_net_constant_loss_has_no_error() {
        let heads = vec![Mlp::new(2, vec![DenseLayer::zeros(2, 1, Activation::Identity).unwrap()]).unwrap()];
        let net = BranchedNet::new(Mlp::identity(2).unwrap(), heads).unwrap();
        let x = Tensor::vector(vec![0.5, -0.5]).unwrap();
        let err = grad_check(&net, |_| (3.0, vec![0.0]), &x, 1e-6).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn random_tanh_nets_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let net = tanh_net(&mut rng);
            let x = Tensor::vector((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let err = grad_check(&net, squared_output, &x, 1e-6).unwrap();
            assert!(err < 1e-5, "relative error {err}");
        }
    }

    #[test]
    fn doubled_gradient_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = tanh_net(&mut rng);
        let x = Tensor::vector(vec![0.3, -0.7, 0.1]).unwrap();
        let (_, d) = squared_output(&net.forward_heads(&x).unwrap());
        let mut analytic = net.backward(&x, &d).unwrap();
        analytic.scale(2.0);
        let numeric = finite_difference(&net, |n| squared_output(&n.forward_heads(&x).unwrap()).0, 1e-6);
        let err = max_relative_error(&analytic, &numeric).unwrap();
        assert!((err - 1.0).abs() < 1e-3, "{err}");
    }
}
