//! Adversarial training of a point generator against a two-head deep Bregman divergence.
//!
//! Each step first updates the discriminator with a contrastive loss on
//! divergence values (real and synthetic batches dissimilar, two batches of
//! the same kind similar), then updates the generator to shrink
//! `D(S, R) + D(R, S)` with the discriminator held fixed.

use log::debug;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::divergence::{
    accumulate_bregman_head_grads, argmax, bregman_from_head_means, head_means, weighted_row_mean,
    EmpiricalDist,
};
use crate::error::{Error, Result};
use crate::losses::{mined_objective, DivergenceKind, Mined, PairExample};
use crate::nn::{Activation, BranchedNet, GradientBuffer, Mlp, Optimizer, OptimizerKind};
use crate::rng::{domain, substream};
use crate::tensor::Tensor;

/// An [`Mlp`] from latent vectors to data points.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    net: Mlp,
}

impl GeneratorNet {
    pub fn new(net: Mlp) -> Self {
        Self { net }
    }

    /// Glorot-initialized generator `z_dim → hidden… → data_dim` with a linear output.
    pub fn glorot<R: Rng + ?Sized>(
        z_dim: usize,
        hidden: &[usize],
        activation: Activation,
        data_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![z_dim];
        widths.extend_from_slice(hidden);
        widths.push(data_dim);
        Ok(Self::new(Mlp::glorot(&widths, activation, Activation::Identity, rng)?))
    }

    pub fn z_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn into_net(self) -> Mlp {
        self.net
    }
}

/// Draws `n` latents from `N(0, I)` and maps them through `g`.
pub fn generate_batch<R: Rng + ?Sized>(g: &GeneratorNet, n: usize, rng: &mut R) -> Result<EmpiricalDist> {
    if n == 0 {
        return Err(Error::Invalid("cannot generate an empty batch".into()));
    }
    let z = latents(g.z_dim(), n, rng);
    EmpiricalDist::uniform(Tensor::matrix(n, g.data_dim(), g.net.forward_rows(&z, n))?)
}

fn latents<R: Rng + ?Sized>(z_dim: usize, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n * z_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvConfig {
    pub z_dim: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub disc_lr: f64,
    pub gen_lr: f64,
    pub margin: f64,
    pub optimizer: OptimizerKind,
    /// Skip generator updates; the discriminator still trains.
    pub freeze_generator: bool,
    pub seed: u64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            z_dim: 2,
            batch_size: 64,
            steps: 2000,
            disc_lr: 1e-3,
            gen_lr: 3e-3,
            margin: 0.4,
            optimizer: OptimizerKind::rmsprop(0.99),
            freeze_generator: false,
            seed: 0,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::Invalid(format!("margin must be positive, got {}", self.margin)));
        }
        if self.batch_size == 0 || self.z_dim == 0 {
            return Err(Error::Invalid("batch_size and z_dim must be positive".into()));
        }
        Optimizer::new(self.optimizer, self.disc_lr)?;
        Optimizer::new(self.optimizer, self.gen_lr)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdvOutcome {
    pub generator: GeneratorNet,
    pub discriminator: BranchedNet,
    /// `D(S, R)` on the generator's batch at every step, before its update.
    pub trace: Vec<f64>,
}

fn sub_batch<R: Rng + ?Sized>(real: &EmpiricalDist, n: usize, rng: &mut R) -> Result<EmpiricalDist> {
    let idx = sample_indices(rng, real.len(), n);
    let d = real.dim();
    let mut rows = Vec::with_capacity(n * d);
    for i in idx.iter() {
        rows.extend_from_slice(real.point(i));
    }
    EmpiricalDist::uniform(Tensor::matrix(n, d, rows)?)
}

/// Generator loss `D(S, R) + D(R, S)` on fixed batches, with its gradient
/// with respect to the generator parameters. Argmax heads are frozen, so
/// `D(R, S)` carries no gradient into the generator.
///
/// Returns `(loss, D(S, R), gradient)`.
pub fn generator_objective(
    g: &GeneratorNet,
    disc: &BranchedNet,
    z: &[f64],
    real: &EmpiricalDist,
) -> Result<(f64, f64, GradientBuffer)> {
    let n = z.len() / g.z_dim();
    let k = disc.num_heads();
    let tape_g = g.net.tape(z.to_vec(), n);
    let tape_d = disc.tape(tape_g.output().to_vec(), n);
    let w = vec![1.0 / n as f64; n];
    let ms = weighted_row_mean(&tape_d.head_matrix(), &w, k);
    let mr = head_means(disc, real)?;
    let (s_star, r_star) = (argmax(&ms), argmax(&mr));
    let d_sr = bregman_from_head_means(&ms, r_star)?;
    let d_rs = bregman_from_head_means(&mr, s_star)?;
    let mut grads = GradientBuffer::zeros_for(&g.net);
    if s_star != r_star {
        let mut d_heads = vec![0.0; n * k];
        accumulate_bregman_head_grads(&mut d_heads, k, &w, s_star, r_star, 1.0);
        let mut scratch = GradientBuffer::zeros_for(disc);
        let d_points = disc
            .backward_head_rows(&tape_d, &d_heads, &mut scratch, true)
            .expect("input gradient requested");
        g.net.backward_rows(&tape_g, d_points, grads.layers_mut(), false);
    }
    Ok((d_sr + d_rs, d_sr, grads))
}

/// Alternating discriminator and generator updates, one each per step.
pub fn train_adversarial(
    real: &EmpiricalDist,
    g: GeneratorNet,
    disc: BranchedNet,
    cfg: &AdvConfig,
) -> Result<AdvOutcome> {
    cfg.validate()?;
    if disc.num_heads() != 2 {
        return Err(Error::Invalid(format!(
            "the discriminator needs exactly 2 heads, got {}",
            disc.num_heads()
        )));
    }
    if g.z_dim() != cfg.z_dim {
        return Err(Error::Shape(format!("generator takes z_dim {}, config says {}", g.z_dim(), cfg.z_dim)));
    }
    if g.data_dim() != real.dim() || disc.input_dim() != real.dim() {
        return Err(Error::Shape(format!(
            "data width {}, generator output {}, discriminator input {}",
            real.dim(),
            g.data_dim(),
            disc.input_dim()
        )));
    }
    if real.len() < 2 * cfg.batch_size {
        return Err(Error::Invalid(format!(
            "need at least {} real points for two disjoint batches of {}, got {}",
            2 * cfg.batch_size,
            cfg.batch_size,
            real.len()
        )));
    }

    let (mut g, mut disc) = (g, disc);
    let mut opt_d = Optimizer::new(cfg.optimizer, cfg.disc_lr)?;
    let mut opt_g = Optimizer::new(cfg.optimizer, cfg.gen_lr)?;
    let b = cfg.batch_size;
    let mut trace = Vec::with_capacity(cfg.steps);
    // Items are laid out as [R, S, R', S'].
    let pairs = Mined::Pairs(vec![
        PairExample { a: 0, b: 1, similar: false },
        PairExample { a: 1, b: 0, similar: false },
        PairExample { a: 0, b: 2, similar: true },
        PairExample { a: 1, b: 3, similar: true },
    ]);
    let numeric = |step: usize, e: Error| match e {
        Error::NonFinite(m) | Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
        other => other,
    };

    for step in 0..cfg.steps {
        let mut rng = substream(cfg.seed, domain::GENERATE, step as u64);

        // Discriminator: R and R' are disjoint halves of one draw.
        let rr = sub_batch(real, 2 * b, &mut rng)?;
        let r = EmpiricalDist::uniform(Tensor::matrix(b, real.dim(), rr.points().data()[..b * real.dim()].to_vec())?)?;
        let r2 = EmpiricalDist::uniform(Tensor::matrix(b, real.dim(), rr.points().data()[b * real.dim()..].to_vec())?)?;
        let s = generate_batch(&g, b, &mut rng)?;
        let s2 = generate_batch(&g, b, &mut rng)?;
        let items = [r.clone(), s, r2, s2];
        let refs: Vec<&EmpiricalDist> = items.iter().collect();
        let obj = mined_objective(&disc, DivergenceKind::DeepBregman, &refs, &pairs, cfg.margin)
            .map_err(|e| numeric(step, e))?;
        if !obj.loss.is_finite() {
            return Err(Error::Numeric(format!("step {step}: discriminator loss is {}", obj.loss)));
        }
        opt_d.step(&mut disc, &obj.grads).map_err(|e| numeric(step, e))?;

        // Generator on a fresh synthetic batch.
        let z = latents(g.z_dim(), b, &mut rng);
        let (loss, d_sr, grads) = generator_objective(&g, &disc, &z, &r).map_err(|e| numeric(step, e))?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("step {step}: generator loss is {loss}")));
        }
        if !cfg.freeze_generator {
            opt_g.step(&mut g.net, &grads).map_err(|e| numeric(step, e))?;
        }
        trace.push(d_sr);
        if step % 100 == 0 {
            debug!("step {step}: disc loss {:.4}, D(S,R) {d_sr:.4}", obj.loss);
        }
    }
    Ok(AdvOutcome {
        generator: g,
        discriminator: disc,
        trace,
    })
}

/// Writes `step,divergence` rows.
pub fn write_divergence_trace<W: std::io::Write>(trace: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "divergence"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `x1,…,xd` rows, one per point.
pub fn write_samples<W: std::io::Write>(samples: &EmpiricalDist, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((1..=samples.dim()).map(|i| format!("x{i}")))?;
    for row in samples.points().row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Per-coordinate mean and standard deviation.
pub fn sample_moments(samples: &EmpiricalDist) -> (Vec<f64>, Vec<f64>) {
    let mean = samples.mean();
    let d = samples.dim();
    let mut var = vec![0.0; d];
    for (row, w) in samples.points().row_iter().zip(samples.weights()) {
        for j in 0..d {
            let c = row[j] - mean[j];
            var[j] += w * c * c;
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference, max_relative_error, DenseLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn disc(seed: u64, k: usize) -> BranchedNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BranchedNet::glorot(&[2, 8], Activation::Tanh, Activation::Tanh, &[6], Activation::Tanh, k, &mut rng).unwrap()
    }

    fn generator(seed: u64) -> GeneratorNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GeneratorNet::glorot(2, &[8], Activation::Tanh, 2, &mut rng).unwrap()
    }

    fn real(n: usize, seed: u64) -> EmpiricalDist {
        let g = crate::divergence::GaussianDist::isotropic(vec![3.0, 3.0], 0.25).unwrap();
        g.sample(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_weight_generator_emits_its_bias() {
        let l = DenseLayer::new(3, 2, Activation::Identity, vec![0.0; 6], vec![1.5, -2.0]).unwrap();
        let g = GeneratorNet::new(Mlp::new(3, vec![l]).unwrap());
        let s = generate_batch(&g, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(s.points().row_iter().all(|r| r == [1.5, -2.0]));
    }

    #[test]
    fn identity_generator_mean_shrinks() {
        let g = GeneratorNet::new(Mlp::identity(2).unwrap());
        let n = 10_000;
        let s = generate_batch(&g, n, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let bound = 3.0 / (n as f64).sqrt();
        assert!(s.mean().iter().all(|m| m.abs() < bound));
        let again = generate_batch(&g, n, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn rejects_wrong_head_count() {
        let cfg = AdvConfig { steps: 1, ..AdvConfig::default() };
        let err = train_adversarial(&real(256, 0), generator(0), disc(0, 3), &cfg).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)), "{err}");
    }

    #[test]
    fn zero_steps_leave_nets_unchanged() {
        let cfg = AdvConfig { steps: 0, ..AdvConfig::default() };
        let out = train_adversarial(&real(256, 0), generator(1), disc(1, 2), &cfg).unwrap();
        assert_eq!(out.generator, generator(1));
        assert_eq!(out.discriminator, disc(1, 2));
        assert!(out.trace.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = AdvConfig { steps: 20, ..AdvConfig::default() };
        let a = train_adversarial(&real(256, 2), generator(2), disc(2, 2), &cfg).unwrap();
        let b = train_adversarial(&real(256, 2), generator(2), disc(2, 2), &cfg).unwrap();
        assert_eq!(a.generator, b.generator);
        assert_eq!(a.discriminator, b.discriminator);
        assert_eq!(a.trace, b.trace);
    }

    /// Finds a (generator, discriminator, latents) instance where the real and
    /// synthetic batches pick different heads with a clear gap.
    fn untied_instance() -> (GeneratorNet, BranchedNet, Vec<f64>, EmpiricalDist) {
        let r = real(64, 3);
        for seed in 0..200 {
            let g = generator(seed);
            let d = disc(seed + 1000, 2);
            let z = latents(2, 32, &mut ChaCha8Rng::seed_from_u64(seed));
            let s = g.net.forward_rows(&z, 32);
            let hs = weighted_row_mean(&d.head_rows(&s, 32), &[1.0 / 32.0; 32], 2);
            let hr = head_means(&d, &r).unwrap();
            if argmax(&hs) != argmax(&hr) && (hs[0] - hs[1]).abs() > 1e-2 && (hr[0] - hr[1]).abs() > 1e-2 {
                return (g, d, z, r);
            }
        }
        panic!("no untied instance");
    }

    #[test]
    fn generator_gradient_matches_finite_differences() {
        let (g, d, z, r) = untied_instance();
        let (_, _, grads) = generator_objective(&g, &d, &z, &r).unwrap();
        assert!(!grads.is_zero());
        let fd = finite_difference(
            &g.net,
            |net: &Mlp| {
                let probe = GeneratorNet::new(net.clone());
                generator_objective(&probe, &d, &z, &r).unwrap().0
            },
            1e-6,
        );
        assert!(max_relative_error(&grads, &fd).unwrap() < 1e-5);
    }

    #[test]
    fn small_generator_steps_do_not_raise_the_loss() {
        let (g, d, z, r) = untied_instance();
        let (loss, _, grads) = generator_objective(&g, &d, &z, &r).unwrap();
        for lr in [1e-4, 1e-5] {
            let mut probe = g.clone();
            let mut opt = Optimizer::new(OptimizerKind::sgd(), lr).unwrap();
            opt.step(&mut probe.net, &grads).unwrap();
            let (after, _, _) = generator_objective(&probe, &d, &z, &r).unwrap();
            assert!(after <= loss, "lr {lr}: {after} > {loss}");
        }
    }

    #[test]
    fn frozen_generator_divergence_does_not_fall() {
        let mut rising = 0;
        for seed in 0..10 {
            let cfg = AdvConfig { steps: 50, freeze_generator: true, seed, ..AdvConfig::default() };
            let g = generator(seed);
            let out = train_adversarial(&real(256, seed), g.clone(), disc(seed + 50, 2), &cfg).unwrap();
            assert_eq!(out.generator, g);
            let head: f64 = out.trace[..10].iter().sum();
            let tail: f64 = out.trace[40..].iter().sum();
            if tail >= head {
                rising += 1;
            }
        }
        assert!(rising >= 8, "{rising}/10 runs");
    }

    #[test]
    fn csv_writers() {
        let mut buf = Vec::new();
        write_divergence_trace(&[0.5, 0.0], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,divergence\n0,0.5\n1,0\n");
        let mut buf = Vec::new();
        write_samples(&EmpiricalDist::from_rows(&[[1.0, 2.5]]).unwrap(), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,x2\n1,2.5\n");
    }
}
