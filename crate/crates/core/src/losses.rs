//! Metric-learning losses over a learned divergence and the training loop.
//!
//! Losses take the divergence value `d` as is; for moment matching `d` is
//! already a squared distance and is not squared again.

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use rand::seq::SliceRandom;

use crate::datagen::LabeledDistSet;
use crate::divergence::{argmax, EmpiricalDist};
use crate::error::{Error, Result};
use crate::nn::{BranchedNet, GradientBuffer, Optimizer, OptimizerKind};
use crate::rng::{domain, substream};
use crate::tensor::sq_dist;

/// `y·d + (1 − y)·max(m − d, 0)²`.
pub fn contrastive_loss(d: f64, similar: bool, margin: f64) -> f64 {
    if similar {
        d
    } else {
        let h = (margin - d).max(0.0);
        h * h
    }
}

/// `∂/∂d` of [`contrastive_loss`]; zero at the hinge point.
pub fn contrastive_loss_grad(d: f64, similar: bool, margin: f64) -> f64 {
    if similar {
        1.0
    } else if d < margin {
        -2.0 * (margin - d)
    } else {
        0.0
    }
}

/// `max(d_pos − d_neg + m, 0)`.
pub fn triplet_loss(d_pos: f64, d_neg: f64, margin: f64) -> f64 {
    (d_pos - d_neg + margin).max(0.0)
}

/// `(∂/∂d_pos, ∂/∂d_neg)` of [`triplet_loss`]; zero at the hinge point.
pub fn triplet_loss_grad(d_pos: f64, d_neg: f64, margin: f64) -> (f64, f64) {
    if d_pos - d_neg + margin > 0.0 {
        (1.0, -1.0)
    } else {
        (0.0, 0.0)
    }
}

/// A pair of batch positions and whether they share a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairExample {
    pub a: usize,
    pub b: usize,
    pub similar: bool,
}

/// Batch positions of an anchor, a same-label positive and a different-label negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletExample {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MineMode {
    AllPairs,
    AllTriplets,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mined {
    Pairs(Vec<PairExample>),
    Triplets(Vec<TripletExample>),
}

impl Mined {
    pub fn len(&self) -> usize {
        match self {
            Mined::Pairs(p) => p.len(),
            Mined::Triplets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Enumerates examples over batch positions `0..labels.len()` in index order.
///
/// Pairs are unordered (`a < b`). Triplets range over every anchor, every other
/// same-label positive and every different-label negative.
pub fn mine_batch<L: PartialEq>(labels: &[L], mode: MineMode) -> Mined {
    let n = labels.len();
    match mode {
        MineMode::AllPairs => {
            let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
            for a in 0..n {
                for b in a + 1..n {
                    out.push(PairExample {
                        a,
                        b,
                        similar: labels[a] == labels[b],
                    });
                }
            }
            Mined::Pairs(out)
        }
        MineMode::AllTriplets => {
            let mut out = Vec::new();
            for anchor in 0..n {
                for positive in (0..n).filter(|&p| p != anchor && labels[p] == labels[anchor]) {
                    for negative in (0..n).filter(|&q| labels[q] != labels[anchor]) {
                        out.push(TripletExample {
                            anchor,
                            positive,
                            negative,
                        });
                    }
                }
            }
            if out.is_empty() && n > 0 && labels.iter().all(|l| *l == labels[0]) {
                warn!("triplet mining on a single-class batch of {n} items yields nothing");
            }
            Mined::Triplets(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Contrastive,
    Triplet,
}

impl LossKind {
    pub fn mine_mode(self) -> MineMode {
        match self {
            LossKind::Contrastive => MineMode::AllPairs,
            LossKind::Triplet => MineMode::AllTriplets,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(LossKind::Contrastive),
            "triplet" => Ok(LossKind::Triplet),
            _ => Err(Error::Invalid(format!("unknown loss `{s}` (expected contrastive or triplet)"))),
        }
    }
}

/// The trainable divergences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceKind {
    DeepBregman,
    MomentMatching,
    /// Moment matching on single-point items.
    DeepEuclidean,
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DivergenceKind::DeepBregman => "deep_bregman",
            DivergenceKind::MomentMatching => "moment_matching",
            DivergenceKind::DeepEuclidean => "deep_euclidean",
        })
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deep_bregman" => Ok(DivergenceKind::DeepBregman),
            "moment_matching" => Ok(DivergenceKind::MomentMatching),
            "deep_euclidean" => Ok(DivergenceKind::DeepEuclidean),
            _ => Err(Error::Invalid(format!(
                "unknown divergence `{s}` (expected deep_bregman, moment_matching or deep_euclidean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Contrastive,
            margin: 1.0,
            epochs: 30,
            batch_size: 64,
            optimizer: OptimizerKind::adam(),
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::Invalid(format!("margin must be positive, got {}", self.margin)));
        }
        if self.batch_size < 2 {
            return Err(Error::Invalid(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        Optimizer::new(self.optimizer, self.lr).map(|_| ())
    }
}

/// Mean loss over the examples mined from one batch, and its gradient.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub loss: f64,
    pub grads: GradientBuffer,
    pub examples: usize,
}

/// Divergence values between batch items with the derivative bookkeeping the
/// losses need: `dist(a, b)` plus a way to push `∂loss/∂dist(a, b)` back.
enum BatchStats {
    /// Per-item mean embeddings.
    Moments(Vec<Vec<f64>>),
    /// Per-item head means and their argmax heads.
    Heads { means: Vec<Vec<f64>>, star: Vec<usize> },
}

impl BatchStats {
    fn dist(&self, a: usize, b: usize) -> Result<f64> {
        match self {
            BatchStats::Moments(m) => Ok(sq_dist(&m[a], &m[b])),
            BatchStats::Heads { means, star } => {
                let d = means[a][star[a]] - means[a][star[b]];
                if d < -crate::divergence::NEG_TOLERANCE {
                    return Err(Error::Consistency(format!("deep Bregman divergence evaluated to {d}")));
                }
                Ok(d.max(0.0))
            }
        }
    }

    /// Adds `g · ∂dist(a, b)/∂stats` into `acc` (indexed like the stats).
    fn push_grad(&self, acc: &mut [Vec<f64>], a: usize, b: usize, g: f64) {
        if g == 0.0 {
            return;
        }
        match self {
            BatchStats::Moments(m) => {
                for (j, (x, y)) in m[a].iter().zip(&m[b]).enumerate() {
                    let v = 2.0 * g * (x - y);
                    acc[a][j] += v;
                    acc[b][j] -= v;
                }
            }
            BatchStats::Heads { star, .. } => {
                // p* and q* are frozen, only p's head means carry gradient.
                if star[a] != star[b] {
                    acc[a][star[a]] += g;
                    acc[a][star[b]] -= g;
                }
            }
        }
    }
}

fn item_means(rows: &[f64], width: usize, items: &[&EmpiricalDist]) -> Vec<Vec<f64>> {
    let mut off = 0;
    items
        .iter()
        .map(|it| {
            let n = it.len();
            let m = crate::divergence::weighted_row_mean(&rows[off * width..(off + n) * width], it.weights(), width);
            off += n;
            m
        })
        .collect()
}

/// Spreads per-item statistic gradients over each item's rows with its point weights.
fn spread(acc: &[Vec<f64>], items: &[&EmpiricalDist], width: usize, total_rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(total_rows * width);
    for (g, it) in acc.iter().zip(items) {
        for w in it.weights() {
            out.extend(g.iter().map(|v| w * v));
        }
    }
    out
}

/// Mines `labels` with the loss's mode, evaluates the chosen divergence on
/// every example, and returns the mean loss with its gradient.
///
/// For deep Bregman pairs, dissimilar pairs are used in both orientations.
/// Triplets compare each of positive and negative to the anchor as the
/// divergence's first argument: `D(pos, anchor)` and `D(neg, anchor)`.
pub fn batch_objective<L: PartialEq>(
    net: &BranchedNet,
    kind: DivergenceKind,
    items: &[&EmpiricalDist],
    labels: &[L],
    loss: LossKind,
    margin: f64,
) -> Result<BatchObjective> {
    if items.len() != labels.len() {
        return Err(Error::Invalid(format!("{} items but {} labels", items.len(), labels.len())));
    }
    let mut mined = mine_batch(labels, loss.mine_mode());
    if kind == DivergenceKind::DeepBregman {
        if let Mined::Pairs(pairs) = &mut mined {
            let reversed: Vec<_> = pairs
                .iter()
                .filter(|p| !p.similar)
                .map(|p| PairExample {
                    a: p.b,
                    b: p.a,
                    similar: false,
                })
                .collect();
            pairs.extend(reversed);
        }
    }
    mined_objective(net, kind, items, &mined, margin)
}

/// Mean loss and gradient over explicit examples on `items`: contrastive for
/// pairs, triplet for triplets. Indices refer to positions in `items`.
pub fn mined_objective(
    net: &BranchedNet,
    kind: DivergenceKind,
    items: &[&EmpiricalDist],
    mined: &Mined,
    margin: f64,
) -> Result<BatchObjective> {
    let n_items = items.len();
    let in_range = match mined {
        Mined::Pairs(ps) => ps.iter().all(|p| p.a < n_items && p.b < n_items),
        Mined::Triplets(ts) => ts
            .iter()
            .all(|t| t.anchor < n_items && t.positive < n_items && t.negative < n_items),
    };
    if !in_range {
        return Err(Error::Invalid(format!("example refers past the {n_items} batch items")));
    }
    for it in items {
        if it.dim() != net.input_dim() {
            return Err(Error::Shape(format!(
                "item of width {} for a net taking width {}",
                it.dim(),
                net.input_dim()
            )));
        }
        if kind == DivergenceKind::DeepEuclidean && !it.is_dirac() {
            return Err(Error::Invalid("deep_euclidean training needs single-point items".into()));
        }
    }
    let mut grads = GradientBuffer::zeros_for(net);
    let examples = mined.len();
    if examples == 0 {
        return Ok(BatchObjective {
            loss: 0.0,
            grads,
            examples,
        });
    }

    let total_rows: usize = items.iter().map(|it| it.len()).sum();
    let mut x = Vec::with_capacity(total_rows * net.input_dim());
    for it in items {
        x.extend_from_slice(it.points().data());
    }

    let scale = 1.0 / examples as f64;
    let mut sum = 0.0;
    let mut run = |stats: &BatchStats, acc: &mut [Vec<f64>]| -> Result<()> {
        match mined {
            Mined::Pairs(pairs) => {
                for p in pairs {
                    let d = stats.dist(p.a, p.b)?;
                    sum += contrastive_loss(d, p.similar, margin);
                    stats.push_grad(acc, p.a, p.b, scale * contrastive_loss_grad(d, p.similar, margin));
                }
            }
            Mined::Triplets(ts) => {
                for t in ts {
                    let dp = stats.dist(t.positive, t.anchor)?;
                    let dn = stats.dist(t.negative, t.anchor)?;
                    sum += triplet_loss(dp, dn, margin);
                    let (gp, gn) = triplet_loss_grad(dp, dn, margin);
                    stats.push_grad(acc, t.positive, t.anchor, scale * gp);
                    stats.push_grad(acc, t.negative, t.anchor, scale * gn);
                }
            }
        }
        Ok(())
    };

    match kind {
        DivergenceKind::MomentMatching | DivergenceKind::DeepEuclidean => {
            let tape = net.trunk_tape(x, total_rows);
            let e = net.embed_dim();
            let stats = BatchStats::Moments(item_means(tape.output(), e, items));
            let mut acc = vec![vec![0.0; e]; items.len()];
            run(&stats, &mut acc)?;
            let d_embed = spread(&acc, items, e, total_rows);
            net.backward_embed_rows(&tape, d_embed, &mut grads, false);
        }
        DivergenceKind::DeepBregman => {
            let tape = net.tape(x, total_rows);
            let k = net.num_heads();
            let means = item_means(&tape.head_matrix(), k, items);
            let star = means.iter().map(|m| argmax(m)).collect();
            let stats = BatchStats::Heads { means, star };
            let mut acc = vec![vec![0.0; k]; items.len()];
            run(&stats, &mut acc)?;
            let d_heads = spread(&acc, items, k, total_rows);
            net.backward_head_rows(&tape, &d_heads, &mut grads, false);
        }
    }
    Ok(BatchObjective {
        loss: sum * scale,
        grads,
        examples,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: BranchedNet,
    /// Mean batch loss per epoch.
    pub trace: Vec<f64>,
    /// Mean held-out loss after each epoch; empty without a validation set.
    pub validation_trace: Vec<f64>,
}

/// Supervised metric learning: each epoch reshuffles the items from the run
/// seed, cuts them into batches, mines every batch and takes one optimizer
/// step on the batch's mean loss. Batches that yield no examples are skipped.
pub fn train_metric(
    data: &LabeledDistSet,
    kind: DivergenceKind,
    net: BranchedNet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_metric_validated(data, None, kind, net, cfg)
}

/// [`train_metric`], also scoring `validation` with [`mean_objective`] after every epoch.
pub fn train_metric_validated(
    data: &LabeledDistSet,
    validation: Option<&LabeledDistSet>,
    kind: DivergenceKind,
    mut net: BranchedNet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training data is empty".into()));
    }
    let first = data.labels[0];
    if data.labels.iter().all(|l| *l == first) {
        return Err(Error::Invalid("training data needs at least two classes".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr)?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut validation_trace = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = substream(cfg.seed, domain::SHUFFLE, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&EmpiricalDist> = chunk.iter().map(|&i| &data.dists[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let obj = batch_objective(&net, kind, &items, &labels, cfg.loss, cfg.margin)
                .map_err(|e| at_batch(e, epoch, b))?;
            if obj.examples == 0 {
                continue;
            }
            if !obj.loss.is_finite() {
                return Err(Error::Numeric(format!("epoch {epoch}, batch {b}: loss is {}", obj.loss)));
            }
            opt.step(&mut net, &obj.grads).map_err(|e| at_batch(e, epoch, b))?;
            total += obj.loss;
            batches += 1;
        }
        let mean = if batches == 0 { 0.0 } else { total / batches as f64 };
        debug!("epoch {epoch}: mean loss {mean}");
        trace.push(mean);
        if let Some(v) = validation {
            let vl = mean_objective(&net, kind, v, cfg)?;
            debug!("epoch {epoch}: validation loss {vl}");
            validation_trace.push(vl);
        }
    }
    Ok(TrainOutcome {
        net,
        trace,
        validation_trace,
    })
}

/// Mean loss over `data` cut into consecutive batches of `cfg.batch_size`,
/// without updating the net. Batches that yield no examples are skipped.
pub fn mean_objective(net: &BranchedNet, kind: DivergenceKind, data: &LabeledDistSet, cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut batches = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let items: Vec<&EmpiricalDist> = chunk.iter().map(|&i| &data.dists[i]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let obj = batch_objective(net, kind, &items, &labels, cfg.loss, cfg.margin)?;
        if obj.examples > 0 {
            total += obj.loss;
            batches += 1;
        }
    }
    Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
}

fn at_batch(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

/// Writes `epoch,mean_loss` rows, plus a `validation_loss` column when `validation` is nonempty.
pub fn write_loss_trace<W: std::io::Write>(trace: &[f64], validation: &[f64], out: W) -> Result<()> {
    if !validation.is_empty() && validation.len() != trace.len() {
        return Err(Error::Invalid(format!("{} epochs but {} validation values", trace.len(), validation.len())));
    }
    let mut w = csv::Writer::from_writer(out);
    if validation.is_empty() {
        w.write_record(["epoch", "mean_loss"])?;
        for (i, v) in trace.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
    } else {
        w.write_record(["epoch", "mean_loss", "validation_loss"])?;
        for (i, (v, val)) in trace.iter().zip(validation).enumerate() {
            w.write_record([i.to_string(), v.to_string(), val.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
