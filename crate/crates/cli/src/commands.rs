use std::fs;
use std::io::BufWriter;
use std::path::Path;

use bregdiv::clustering::{
    bregman_kmeans_with, davis_dhillon_kmeans_with, knn_classify, score_partition, write_assignments_csv,
    ClusterSummary, KMeansOptions,
};
use bregdiv::datagen::{gen_ring_gaussians, load_grouped_csv, save_grouped_csv, GaussianRecord, LabeledDistSet, RingSpec};
use bregdiv::divergence::{head_means, mean_embedding};
use bregdiv::generation::{
    generate_batch, sample_moments, train_adversarial, write_divergence_trace, write_samples, AdvConfig, GeneratorNet,
};
use bregdiv::losses::{train_metric_validated, write_loss_trace, DivergenceKind, LossKind, TrainConfig};
use bregdiv::nn::{extrapolated_difference, grad_check, max_relative_error, Activation, OptimizerKind};
use bregdiv::rng::{domain, substream};
use bregdiv::{deep_bregman, deep_bregman_grad, BranchedNet, Divergence, EmpiricalDist, GaussianDist, Tensor};
use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};

fn parse<T: std::str::FromStr<Err = bregdiv::Error>>(key: &str, s: &str) -> CliResult<T> {
    s.parse().map_err(|e: bregdiv::Error| CliError::Config(format!("`{key}`: {e}")))
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).at(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    fs::write(path, text).at(path)
}

fn load_set(path: &Path) -> CliResult<LabeledDistSet> {
    load_grouped_csv(path).at(path)
}

fn load_model(cfg: &RunConfig) -> CliResult<BranchedNet> {
    let path = cfg.resolve(&cfg.model.path);
    let text = fs::read_to_string(&path).at(&path)?;
    BranchedNet::from_json(&text).at(&path)
}

fn divergence_kind(cfg: &RunConfig) -> CliResult<DivergenceKind> {
    parse("model.divergence", &cfg.model.divergence)
}

/// The divergence object for a trained net of the configured kind.
fn divergence(kind: DivergenceKind, net: BranchedNet) -> Divergence {
    match kind {
        DivergenceKind::DeepBregman => Divergence::DeepBregman(net),
        DivergenceKind::MomentMatching => Divergence::MomentMatching(net),
        DivergenceKind::DeepEuclidean => Divergence::DeepEuclidean(net),
    }
}

/// Pooled single points for the deep Euclidean baseline, groups otherwise.
fn items_for(kind: DivergenceKind, set: LabeledDistSet) -> CliResult<LabeledDistSet> {
    Ok(match kind {
        DivergenceKind::DeepEuclidean => set.pooled_points()?,
        _ => set,
    })
}

fn ring_spec(cfg: &RunConfig) -> RingSpec {
    let d = &cfg.data;
    RingSpec {
        n_train: d.n_train,
        n_test: d.n_test,
        radii: d.radii.clone(),
        mean_noise_std: d.mean_noise_std,
        cov_scale: d.cov_scale,
        samples_per_dist: d.samples_per_dist,
        seed: cfg.seed,
    }
}

#[derive(Serialize, Deserialize)]
struct GaussianSidecar {
    train: Vec<GaussianRecord>,
    test: Vec<GaussianRecord>,
}

#[derive(Serialize)]
struct DatasetReport {
    spec: RingSpec,
    n_train: usize,
    n_test: usize,
}

pub fn gen_data(cfg: &RunConfig) -> CliResult<()> {
    let spec = ring_spec(cfg);
    let (train, test) = gen_ring_gaussians(&spec).map_err(|e| CliError::Config(format!("data: {e}")))?;
    let train_path = cfg.resolve(&cfg.data.train_csv);
    let test_path = cfg.resolve(&cfg.data.test_csv);
    save_grouped_csv(&train, &train_path).at(&train_path)?;
    save_grouped_csv(&test, &test_path).at(&test_path)?;
    let records = |s: &LabeledDistSet| -> Vec<GaussianRecord> {
        s.gaussians.iter().flatten().map(GaussianRecord::from).collect()
    };
    write_json(
        &cfg.resolve(&cfg.data.gaussians_json),
        &GaussianSidecar {
            train: records(&train),
            test: records(&test),
        },
    )?;
    write_json(
        &cfg.out_dir().join("dataset.json"),
        &DatasetReport {
            spec,
            n_train: train.len(),
            n_test: test.len(),
        },
    )?;
    info!("wrote {} train and {} test groups", train.len(), test.len());
    Ok(())
}

fn activation(key: &str, s: &str) -> CliResult<Activation> {
    parse(key, s)
}

/// A fresh Glorot-initialized net for the configured divergence.
pub fn init_model(cfg: &RunConfig, input_dim: usize) -> CliResult<BranchedNet> {
    let m = &cfg.model;
    let kind = divergence_kind(cfg)?;
    let k = match kind {
        DivergenceKind::DeepBregman if m.num_heads < 2 => {
            return Err(CliError::Config(format!(
                "`model.num_heads`: deep_bregman needs at least 2 heads, got {}",
                m.num_heads
            )))
        }
        DivergenceKind::DeepBregman => m.num_heads,
        _ => 1,
    };
    if m.embed_dim == 0 || m.trunk_hidden.contains(&0) || m.head_hidden.contains(&0) {
        return Err(CliError::Config("layer widths must be positive".into()));
    }
    let mut widths = vec![input_dim];
    widths.extend_from_slice(&m.trunk_hidden);
    widths.push(m.embed_dim);
    let mut rng = substream(cfg.seed, domain::INIT, 0);
    let net = BranchedNet::glorot(
        &widths,
        activation("model.activation", &m.activation)?,
        activation("model.embed_activation", &m.embed_activation)?,
        &m.head_hidden,
        activation("model.head_activation", &m.head_activation)?,
        k,
        &mut rng,
    )?;
    Ok(net.with_normalized_embedding(m.normalize_embedding))
}

fn optimizer(cfg: &RunConfig) -> CliResult<OptimizerKind> {
    let t = &cfg.train;
    let momentum = t.momentum;
    if !(0.0..1.0).contains(&momentum) {
        return Err(CliError::Config(format!("`train.momentum` must be in [0, 1), got {momentum}")));
    }
    match t.optimizer.as_str() {
        "adam" if momentum != 0.0 => Err(CliError::Config("`train.momentum` does not apply to adam".into())),
        "adam" => Ok(OptimizerKind::adam()),
        "sgd" => Ok(OptimizerKind::Sgd { momentum }),
        "rmsprop" => Ok(OptimizerKind::RmsProp {
            rho: 0.99,
            eps: 1e-8,
            momentum,
        }),
        other => Err(CliError::Config(format!(
            "`train.optimizer`: unknown optimizer `{other}` (expected adam, sgd or rmsprop)"
        ))),
    }
}

fn train_config(cfg: &RunConfig) -> CliResult<TrainConfig> {
    let t = &cfg.train;
    let tc = TrainConfig {
        loss: parse::<LossKind>("train.loss", &t.loss)?,
        margin: t.margin,
        epochs: t.epochs,
        batch_size: t.batch_size,
        optimizer: optimizer(cfg)?,
        lr: t.lr,
        seed: cfg.seed,
    };
    tc.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
    Ok(tc)
}

#[derive(Serialize)]
struct TrainReport {
    divergence: String,
    loss: String,
    epochs: usize,
    train_items: usize,
    validation_items: usize,
    num_heads: usize,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    final_validation_loss: Option<f64>,
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let kind = divergence_kind(cfg)?;
    let tc = train_config(cfg)?;
    let ratio = cfg.data.validation_ratio;
    if !(0.0..1.0).contains(&ratio) {
        return Err(CliError::Config(format!("`data.validation_ratio` must be in [0, 1), got {ratio}")));
    }
    let data = items_for(kind, load_set(&cfg.resolve(&cfg.data.train_csv))?)?;
    let (data, validation) = if ratio > 0.0 {
        let (kept, held) = data.split_validation(ratio, cfg.seed)?;
        (kept, Some(held))
    } else {
        (data, None)
    };
    let dim = data.dim().ok_or_else(|| CliError::Config("training set is empty".into()))?;
    let net = init_model(cfg, dim)?;
    info!("training {kind} with {} loss on {} items", tc.loss, data.len());
    let outcome = train_metric_validated(&data, validation.as_ref(), kind, net, &tc)?;

    let model_path = cfg.resolve(&cfg.model.path);
    fs::write(&model_path, outcome.net.to_json()).at(&model_path)?;
    let loss_path = cfg.out_dir().join("loss.csv");
    write_loss_trace(&outcome.trace, &outcome.validation_trace, create(&loss_path)?).at(&loss_path)?;

    let emb_path = cfg.out_dir().join("embeddings.csv");
    let mut w = csv::Writer::from_writer(create(&emb_path)?);
    let mut header = vec!["group_id".to_string(), "label".to_string()];
    header.extend((1..=outcome.net.embed_dim()).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(bregdiv::Error::from).at(&emb_path)?;
    for ((gid, dist), label) in data.group_ids.iter().zip(&data.dists).zip(&data.labels) {
        let e = mean_embedding(&outcome.net, dist)?;
        let mut row = vec![gid.clone(), data.label_names[*label].clone()];
        row.extend(e.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(bregdiv::Error::from).at(&emb_path)?;
    }
    w.flush().at(&emb_path)?;

    write_json(
        &cfg.out_dir().join("train.json"),
        &TrainReport {
            divergence: kind.to_string(),
            loss: tc.loss.to_string(),
            epochs: tc.epochs,
            train_items: data.len(),
            validation_items: validation.as_ref().map_or(0, LabeledDistSet::len),
            num_heads: outcome.net.num_heads(),
            initial_loss: outcome.trace.first().copied(),
            final_loss: outcome.trace.last().copied(),
            final_validation_loss: outcome.validation_trace.last().copied(),
        },
    )?;
    if let Some(l) = outcome.trace.last() {
        info!("final mean loss {l}");
    }
    Ok(())
}

#[derive(Serialize)]
struct ClusterReport {
    method: String,
    divergence: Option<String>,
    k: usize,
    items: usize,
    #[serde(flatten)]
    summary: ClusterSummary,
}

fn kmeans_options(cfg: &RunConfig) -> CliResult<KMeansOptions> {
    let c = &cfg.cluster;
    if c.k == 0 || c.restarts == 0 {
        return Err(CliError::Config("`cluster.k` and `cluster.restarts` must be positive".into()));
    }
    Ok(KMeansOptions {
        k: c.k,
        max_iter: c.max_iter,
        restarts: c.restarts,
        seed: cfg.seed,
    })
}

/// Test-set Gaussians for Davis & Dhillon: the sidecar from `gen-data` when
/// it exists and matches the test set, else maximum-likelihood fits.
fn test_gaussians(cfg: &RunConfig, test: &LabeledDistSet) -> CliResult<Vec<GaussianDist>> {
    let path = cfg.resolve(&cfg.data.gaussians_json);
    if path.exists() {
        let text = fs::read_to_string(&path).at(&path)?;
        let side: GaussianSidecar = serde_json::from_str(&text).map_err(bregdiv::Error::from).at(&path)?;
        if side.test.len() == test.len() {
            return side.test.iter().map(GaussianDist::try_from).collect::<bregdiv::Result<_>>().at(&path);
        }
        log::warn!(
            "{} holds {} test Gaussians for {} test groups; fitting instead",
            path.display(),
            side.test.len(),
            test.len()
        );
    }
    Ok(test.dists.iter().map(GaussianDist::fit).collect::<bregdiv::Result<_>>()?)
}

pub fn cluster(cfg: &RunConfig) -> CliResult<()> {
    let opts = kmeans_options(cfg)?;
    let test_path = cfg.resolve(&cfg.data.test_csv);
    let (set, result, div_name) = match cfg.cluster.method.as_str() {
        "bregman" => {
            let kind = divergence_kind(cfg)?;
            let net = load_model(cfg)?;
            let set = items_for(kind, load_set(&test_path)?)?;
            let div = divergence(kind, net);
            let r = bregman_kmeans_with(&set.dists, &div, &opts)?;
            (set, r, Some(kind.to_string()))
        }
        "davis_dhillon" => {
            let set = load_set(&test_path)?;
            let gs = test_gaussians(cfg, &set)?;
            let r = davis_dhillon_kmeans_with(&gs, &opts)?;
            (set, r, None)
        }
        other => {
            return Err(CliError::Config(format!(
                "`cluster.method`: unknown method `{other}` (expected bregman or davis_dhillon)"
            )))
        }
    };
    let score = if set.len() >= 2 {
        Some(score_partition(&set.labels, &result.assignments)?)
    } else {
        None
    };
    let path = cfg.out_dir().join("assignments.csv");
    write_assignments_csv(&set.group_ids, &result.assignments, create(&path)?).at(&path)?;
    write_json(
        &cfg.out_dir().join("cluster.json"),
        &ClusterReport {
            method: cfg.cluster.method.clone(),
            divergence: div_name,
            k: opts.k,
            items: set.len(),
            summary: ClusterSummary::new(&result, score),
        },
    )?;
    if let Some(s) = score {
        info!("RI {:.4}, ARI {:.4}", s.rand_index, s.adjusted_rand_index);
    }
    Ok(())
}

#[derive(Serialize)]
struct KnnReport {
    accuracy: f64,
    k_nn: usize,
    divergence_kind: String,
    train_items: usize,
    test_items: usize,
}

pub fn eval_knn(cfg: &RunConfig) -> CliResult<()> {
    let kind = divergence_kind(cfg)?;
    let net = load_model(cfg)?;
    let train = items_for(kind, load_set(&cfg.resolve(&cfg.data.train_csv))?)?;
    let test = items_for(kind, load_set(&cfg.resolve(&cfg.data.test_csv))?)?;
    let k_nn = cfg.eval.k_nn;
    if k_nn == 0 || k_nn > train.len() {
        return Err(CliError::Config(format!(
            "`eval.k_nn` = {k_nn} must be in 1..={} (the training set size)",
            train.len()
        )));
    }
    let pred = knn_classify(&train.dists, &train.labels, &test.dists, &divergence(kind, net), k_nn)?;
    // Label indices are per file, so compare label names.
    let correct = pred
        .iter()
        .zip(&test.labels)
        .filter(|(p, t)| train.label_names[**p] == test.label_names[**t])
        .count();
    let accuracy = correct as f64 / test.len() as f64;
    write_json(
        &cfg.out_dir().join("knn.json"),
        &KnnReport {
            accuracy,
            k_nn,
            divergence_kind: kind.to_string(),
            train_items: train.len(),
            test_items: test.len(),
        },
    )?;
    info!("k-NN accuracy {accuracy:.4}");
    Ok(())
}

#[derive(Serialize)]
struct GenerateReport {
    steps: usize,
    samples: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    final_divergence: Option<f64>,
}

pub fn generate(cfg: &RunConfig) -> CliResult<()> {
    let g = &cfg.generate;
    let d = g.target_mean.len();
    if d == 0 || g.samples == 0 || g.real_samples == 0 {
        return Err(CliError::Config(
            "`generate.target_mean`, `generate.samples` and `generate.real_samples` must be nonempty".into(),
        ));
    }
    if g.generator_hidden.contains(&0) || g.discriminator_hidden.contains(&0) {
        return Err(CliError::Config("layer widths must be positive".into()));
    }
    let target = GaussianDist::isotropic(g.target_mean.clone(), g.target_cov_scale)
        .map_err(|e| CliError::Config(format!("generate target: {e}")))?;
    let real = target.sample(g.real_samples, &mut substream(cfg.seed, domain::MAIN, 2))?;
    let act = activation("generate.activation", &g.activation)?;
    let generator = GeneratorNet::glorot(g.z_dim, &g.generator_hidden, act, d, &mut substream(cfg.seed, domain::INIT, 1))?;
    let mut widths = vec![d];
    widths.extend_from_slice(&g.discriminator_hidden);
    let disc = BranchedNet::glorot(&widths, act, act, &[], Activation::Identity, 2, &mut substream(cfg.seed, domain::INIT, 2))?;
    let adv = AdvConfig {
        z_dim: g.z_dim,
        batch_size: g.batch_size,
        steps: g.steps,
        disc_lr: g.disc_lr,
        gen_lr: g.gen_lr,
        margin: g.margin,
        optimizer: OptimizerKind::rmsprop(g.rmsprop_rho),
        freeze_generator: false,
        seed: cfg.seed,
    };
    adv.validate().map_err(|e| CliError::Config(format!("generate: {e}")))?;
    let out = train_adversarial(&real, generator, disc, &adv)?;
    let samples = generate_batch(&out.generator, g.samples, &mut substream(cfg.seed, domain::MAIN, 3))?;
    if !samples.points().is_finite() {
        return Err(bregdiv::Error::Numeric("generated samples are not finite".into()).into());
    }
    let path = cfg.out_dir().join("samples.csv");
    write_samples(&samples, create(&path)?).at(&path)?;
    let path = cfg.out_dir().join("divergence_trace.csv");
    write_divergence_trace(&out.trace, create(&path)?).at(&path)?;
    let (mean, std) = sample_moments(&samples);
    info!("sample mean {mean:?}, std {std:?}");
    write_json(
        &cfg.out_dir().join("generate.json"),
        &GenerateReport {
            steps: g.steps,
            samples: g.samples,
            mean,
            std,
            final_divergence: out.trace.last().copied(),
        },
    )
}

#[derive(Serialize)]
struct GradCheckReport {
    instances: usize,
    step: f64,
    threshold: f64,
    network_max_error: f64,
    deep_bregman_max_error: f64,
    max_error: f64,
    passed: bool,
}

// Extrapolated differences for the deep Bregman check, and the head gap its
// instances must clear so no stencil point flips an argmax.
const BREGMAN_STEP: f64 = 5e-3;
const BREGMAN_GAP: f64 = 0.1;

fn random_tanh_net<R: Rng>(rng: &mut R) -> CliResult<BranchedNet> {
    let d = rng.random_range(1..4);
    let h = rng.random_range(2..6);
    let e = rng.random_range(1..4);
    let k = rng.random_range(2..4);
    Ok(BranchedNet::glorot(&[d, h, e], Activation::Tanh, Activation::Tanh, &[3], Activation::Tanh, k, rng)?)
}

fn random_dist<R: Rng>(rng: &mut R, d: usize) -> CliResult<EmpiricalDist> {
    let n = rng.random_range(1..5);
    let pts = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    Ok(EmpiricalDist::uniform(Tensor::matrix(n, d, pts)?)?)
}

fn head_gap(net: &BranchedNet, p: &EmpiricalDist) -> CliResult<f64> {
    let mut h = head_means(net, p)?;
    h.sort_by(|a, b| b.total_cmp(a));
    Ok(h[0] - h[1])
}

fn squared_output(o: &[f64]) -> (f64, Vec<f64>) {
    (o.iter().map(|v| v * v).sum(), o.iter().map(|v| 2.0 * v).collect())
}

pub fn grad_check_cmd(cfg: &RunConfig) -> CliResult<()> {
    let c = &cfg.check;
    if !(c.step.is_finite() && c.step > 0.0 && c.threshold.is_finite() && c.threshold > 0.0) {
        return Err(CliError::Config("`check.step` and `check.threshold` must be positive".into()));
    }
    let mut network_max: f64 = 0.0;
    let mut bregman_max: f64 = 0.0;
    for i in 0..c.instances {
        let mut rng = substream(cfg.seed, domain::CHECK, i as u64);
        let net = random_tanh_net(&mut rng)?;
        let x = Tensor::vector((0..net.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect())?;
        network_max = network_max.max(grad_check(&net, squared_output, &x, c.step)?);

        // Redraw until both distributions have a clear argmax head.
        let (net, p, q) = loop {
            let net = random_tanh_net(&mut rng)?;
            let p = random_dist(&mut rng, net.input_dim())?;
            let q = random_dist(&mut rng, net.input_dim())?;
            if head_gap(&net, &p)? > BREGMAN_GAP && head_gap(&net, &q)? > BREGMAN_GAP {
                break (net, p, q);
            }
        };
        let mut analytic = deep_bregman_grad(&net, &p, &q)?;
        if c.inject_fault {
            for v in analytic.values_mut() {
                *v += 1e-2;
            }
        }
        let numeric = extrapolated_difference(&net, |n: &BranchedNet| deep_bregman(n, &p, &q).unwrap_or(f64::NAN), BREGMAN_STEP);
        bregman_max = bregman_max.max(max_relative_error(&analytic, &numeric)?);
    }
    let max_error = network_max.max(bregman_max);
    let passed = max_error < c.threshold;
    write_json(
        &cfg.out_dir().join("grad_check.json"),
        &GradCheckReport {
            instances: c.instances,
            step: c.step,
            threshold: c.threshold,
            network_max_error: network_max,
            deep_bregman_max_error: bregman_max,
            max_error,
            passed,
        },
    )?;
    println!("worst relative error {max_error:e} (network {network_max:e}, deep_bregman {bregman_max:e})");
    if passed {
        Ok(())
    } else {
        Err(CliError::SelfCheck(format!(
            "worst relative error {max_error:e} is not below {:e}",
            c.threshold
        )))
    }
}
