//! Synthetic ring-of-Gaussians data and grouped-CSV I/O.
//!
//! Each synthetic item is a Gaussian whose mean lies on one of several
//! concentric rings (plus isotropic noise); the item is represented by
//! `samples_per_dist` draws from it. The ring index is the item's label.
//!
//! The CSV layout is one row per point, grouped into distributions by
//! `group_id`:
//!
//! ```text
//! group_id,label,f1,f2
//! 0,2,0.8113,-0.4027
//! 0,2,1.0260,-0.1151
//! 1,0,0.0931,0.2245
//! ```

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::divergence::{EmpiricalDist, GaussianDist};
use crate::error::{Error, Result};
use crate::rng::{domain, substream, RunRng};
use crate::tensor::Tensor;

/// Parameters of the ring-of-Gaussians generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub radii: Vec<f64>,
    pub mean_noise_std: f64,
    pub cov_scale: f64,
    pub samples_per_dist: usize,
    pub seed: u64,
}

impl Default for RingSpec {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_test: 200,
            radii: vec![0.2, 0.6, 1.0],
            mean_noise_std: 0.05,
            cov_scale: 0.1,
            samples_per_dist: 50,
            seed: 0,
        }
    }
}

impl RingSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.radii.is_empty() {
            return bad("radii must be nonempty");
        }
        if self.radii.iter().any(|r| !r.is_finite()) {
            return bad("radii must be finite");
        }
        if !(self.cov_scale.is_finite() && self.cov_scale > 0.0) {
            return bad("cov_scale must be positive");
        }
        if !(self.mean_noise_std.is_finite() && self.mean_noise_std >= 0.0) {
            return bad("mean_noise_std must be nonnegative");
        }
        if self.n_train == 0 || self.n_test == 0 || self.samples_per_dist == 0 {
            return bad("counts must be at least 1");
        }
        Ok(())
    }
}

/// Distributions with class labels, optionally with the Gaussians they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDistSet {
    pub group_ids: Vec<String>,
    pub dists: Vec<EmpiricalDist>,
    /// Index into `label_names` per distribution.
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
    pub gaussians: Option<Vec<GaussianDist>>,
}

impl LabeledDistSet {
    /// A set whose labels are already `0..n_classes` indices.
    pub fn new(dists: Vec<EmpiricalDist>, labels: Vec<usize>) -> Result<Self> {
        if dists.len() != labels.len() {
            return Err(Error::Invalid(format!("{} distributions but {} labels", dists.len(), labels.len())));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            group_ids: (0..dists.len()).map(|i| i.to_string()).collect(),
            dists,
            labels,
            label_names: (0..n_classes).map(|c| c.to_string()).collect(),
            gaussians: None,
        })
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dists.first().map(EmpiricalDist::dim)
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    /// Every point as its own single-point distribution, inheriting its group's label.
    /// Group ids become `group/index`.
    pub fn pooled_points(&self) -> Result<Self> {
        let mut out = Self {
            group_ids: Vec::new(),
            dists: Vec::new(),
            labels: Vec::new(),
            label_names: self.label_names.clone(),
            gaussians: None,
        };
        for ((gid, dist), label) in self.group_ids.iter().zip(&self.dists).zip(&self.labels) {
            for (j, x) in dist.points().row_iter().enumerate() {
                out.group_ids.push(format!("{gid}/{j}"));
                out.dists.push(EmpiricalDist::dirac(x)?);
                out.labels.push(*label);
            }
        }
        Ok(out)
    }
}

impl LabeledDistSet {
    /// Keeps the items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Invalid(format!("index {bad} past {} items", self.len())));
        }
        Ok(Self {
            group_ids: indices.iter().map(|&i| self.group_ids[i].clone()).collect(),
            dists: indices.iter().map(|&i| self.dists[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
            gaussians: self
                .gaussians
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i].clone()).collect()),
        })
    }

    /// Splits off `round(ratio · n)` seeded-random items as a held-out set.
    /// Returns `(kept, held_out)`, both in original order.
    pub fn split_validation(&self, ratio: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Invalid(format!("validation ratio must be in [0, 1), got {ratio}")));
        }
        let n_val = (ratio * self.len() as f64).round() as usize;
        let mut rng = substream(seed, domain::MAIN, 1);
        let mut held: Vec<usize> = rand::seq::index::sample(&mut rng, self.len(), n_val).into_vec();
        held.sort_unstable();
        let kept: Vec<usize> = (0..self.len()).filter(|i| held.binary_search(i).is_err()).collect();
        Ok((self.subset(&kept)?, self.subset(&held)?))
    }
}

/// Draws `m` points from `g` (see [`GaussianDist::sample`]).
pub fn sample_gaussian<R: Rng + ?Sized>(g: &GaussianDist, m: usize, rng: &mut R) -> Result<EmpiricalDist> {
    g.sample(m, rng)
}

fn ring_item(spec: &RingSpec, rng: &mut RunRng) -> Result<(usize, GaussianDist, EmpiricalDist)> {
    let label = rng.random_range(0..spec.radii.len());
    let theta: f64 = rng.random_range(0.0..TAU);
    let r = spec.radii[label];
    let mut noise = || -> f64 { spec.mean_noise_std * rng.sample::<f64, _>(StandardNormal) };
    let mean = vec![r * theta.cos() + noise(), r * theta.sin() + noise()];
    let g = GaussianDist::isotropic(mean, spec.cov_scale)?;
    let dist = g.sample(spec.samples_per_dist, rng)?;
    Ok((label, g, dist))
}

fn ring_split(spec: &RingSpec, n: usize, stream_domain: u64) -> Result<LabeledDistSet> {
    let mut dists = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut gaussians = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = substream(spec.seed, stream_domain, i as u64);
        let (label, g, d) = ring_item(spec, &mut rng)?;
        labels.push(label);
        gaussians.push(g);
        dists.push(d);
    }
    Ok(LabeledDistSet {
        group_ids: (0..n).map(|i| i.to_string()).collect(),
        dists,
        labels,
        label_names: (0..spec.radii.len()).map(|c| c.to_string()).collect(),
        gaussians: Some(gaussians),
    })
}

/// Train and test sets of ring-mean Gaussians. Item `i` of each split is drawn
/// from its own substream, so changing `n_train` leaves earlier items intact.
pub fn gen_ring_gaussians(spec: &RingSpec) -> Result<(LabeledDistSet, LabeledDistSet)> {
    spec.validate()?;
    Ok((
        ring_split(spec, spec.n_train, domain::TRAIN_ITEMS)?,
        ring_split(spec, spec.n_test, domain::TEST_ITEMS)?,
    ))
}

pub fn write_grouped_csv<W: Write>(set: &LabeledDistSet, out: W) -> Result<()> {
    let d = set
        .dim()
        .ok_or_else(|| Error::Invalid("cannot write an empty set".into()))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["group_id".to_string(), "label".to_string()];
    header.extend((1..=d).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(d + 2);
    for ((gid, dist), label) in set.group_ids.iter().zip(&set.dists).zip(&set.labels) {
        for x in dist.points().row_iter() {
            record.clear();
            record.push(gid.clone());
            record.push(set.label_names[*label].clone());
            // `Display` for f64 is the shortest representation that round-trips.
            record.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_grouped_csv(set: &LabeledDistSet, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_grouped_csv(set, std::io::BufWriter::new(f))
}

/// Parses `group_id,label,f1,...,fd` rows; rows sharing a `group_id` form one
/// uniform distribution. Groups keep first-appearance order. Labels that are all
/// nonnegative integers are used as class indices directly; otherwise classes are
/// numbered by first appearance.
pub fn read_grouped_csv<R: Read>(input: R) -> Result<LabeledDistSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    let d = header.len().saturating_sub(2);
    let header_ok = header.len() >= 3
        && &header[0] == "group_id"
        && &header[1] == "label"
        && (1..=d).all(|i| header[i + 1] == *format!("f{i}"));
    if !header_ok {
        return Err(Error::Parse {
            line: 1,
            msg: "header must be `group_id,label,f1,...,fd` with d >= 1".into(),
        });
    }

    struct Group {
        label: String,
        first_line: u64,
        rows: Vec<f64>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Group> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != d + 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", d + 2, rec.len()),
            });
        }
        let gid = rec[0].to_string();
        let label = rec[1].to_string();
        let group = groups.entry(gid.clone()).or_insert_with(|| {
            order.push(gid.clone());
            Group {
                label: label.clone(),
                first_line: line,
                rows: Vec::new(),
            }
        });
        if group.label != label {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "group `{gid}` has label `{label}` but was labeled `{}` on line {}",
                    group.label, group.first_line
                ),
            });
        }
        for (i, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("feature f{} is not a number: `{field}`", i + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("feature f{} is not finite", i + 1),
                });
            }
            group.rows.push(v);
        }
    }
    if order.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }

    let raw_labels: Vec<&str> = order.iter().map(|g| groups[g].label.as_str()).collect();
    let numeric: Option<Vec<usize>> = raw_labels.iter().map(|l| l.parse::<usize>().ok()).collect();
    let (labels, label_names) = match numeric {
        Some(idx) if idx.iter().max().is_some_and(|m| *m < 1 << 20) => {
            let n = idx.iter().max().map_or(0, |m| m + 1);
            (idx, (0..n).map(|c| c.to_string()).collect())
        }
        _ => {
            let mut names: Vec<String> = Vec::new();
            let idx = raw_labels
                .iter()
                .map(|l| match names.iter().position(|n| n == l) {
                    Some(i) => i,
                    None => {
                        names.push(l.to_string());
                        names.len() - 1
                    }
                })
                .collect();
            (idx, names)
        }
    };

    let mut dists = Vec::with_capacity(order.len());
    for gid in &order {
        let rows = std::mem::take(&mut groups.get_mut(gid).expect("group recorded").rows);
        let n = rows.len() / d;
        dists.push(EmpiricalDist::uniform(Tensor::matrix(n, d, rows)?)?);
    }
    Ok(LabeledDistSet {
        group_ids: order,
        dists,
        labels,
        label_names,
        gaussians: None,
    })
}

pub fn load_grouped_csv(path: &Path) -> Result<LabeledDistSet> {
    let f = std::fs::File::open(path)?;
    read_grouped_csv(std::io::BufReader::new(f))
}

/// JSON form of a Gaussian: mean and row-major covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianRecord {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl From<&GaussianDist> for GaussianRecord {
    fn from(g: &GaussianDist) -> Self {
        Self {
            mean: g.mean().to_vec(),
            cov: g.cov(),
        }
    }
}

impl TryFrom<&GaussianRecord> for GaussianDist {
    type Error = Error;

    fn try_from(r: &GaussianRecord) -> Result<Self> {
        GaussianDist::new(r.mean.clone(), r.cov.clone())
    }
}
