//! Synthetic multi-domain benchmarks and feature CSV files.
//!
//! A domain is a set of Gaussian class blobs pushed through an affine shift
//! (rotation, scale, translation). One domain is the target: its training
//! view carries no labels, and its labels are only reachable through
//! [`Benchmark::evaluation_labels`].

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dictionary::ClientState;
use crate::error::{invalid, Error, Result};
use crate::ot::LabeledMeasure;
use crate::rng::{substream, substream_seed};

/// Affine map `x ↦ scale · R x + translation`.
///
/// `R` rotates by `rotation_deg` in each coordinate plane `(0,1)`, `(2,3)`,
/// and so on; an odd trailing coordinate is left alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    pub rotation_deg: f64,
    pub translation: Vec<f64>,
    pub scale: f64,
}

impl DomainShift {
    pub fn identity(dim: usize) -> Self {
        Self {
            rotation_deg: 0.0,
            translation: vec![0.0; dim],
            scale: 1.0,
        }
    }

    pub fn apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let mut out = x.to_owned();
        for p in 0..x.len() / 2 {
            let (a, b) = (x[2 * p], x[2 * p + 1]);
            out[2 * p] = c * a - s * b;
            out[2 * p + 1] = s * a + c * b;
        }
        out *= self.scale;
        out + &ArrayView1::from(&self.translation)
    }
}

/// Recipe for one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub n_samples: usize,
    /// One row of length `d` per class.
    pub class_means: Vec<Vec<f64>>,
    /// Per-coordinate standard deviation of each blob.
    pub cov_scale: f64,
    pub shift: DomainShift,
    /// Probability of replacing a label by a different uniformly drawn class.
    pub label_noise: f64,
    pub seed: u64,
}

impl DomainSpec {
    pub fn n_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn dim(&self) -> usize {
        self.class_means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (nc, d) = (self.n_classes(), self.dim());
        if nc == 0 || d == 0 {
            return Err(invalid("class_means", "need at least one class and one feature"));
        }
        if let Some(row) = self.class_means.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                what: "class mean lengths",
                left: d,
                right: row.len(),
            });
        }
        if self.shift.translation.len() != d {
            return Err(Error::DimensionMismatch {
                what: "translation vs feature dimension",
                left: self.shift.translation.len(),
                right: d,
            });
        }
        if self.n_samples < nc {
            return Err(invalid("n_samples", "must be at least the number of classes"));
        }
        if !(self.cov_scale > 0.0 && self.cov_scale.is_finite()) {
            return Err(invalid("cov_scale", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(invalid("label_noise", "must be a probability"));
        }
        Ok(())
    }

    /// Samples the domain: balanced classes in round-robin order, Gaussian
    /// blobs around the class means, then the domain shift.
    pub fn sample(&self, root_seed: u64) -> Result<(Array2<f64>, Vec<usize>)> {
        self.validate()?;
        let (nc, d) = (self.n_classes(), self.dim());
        let mut rng = substream(root_seed, "domain", self.seed);
        let mut x = Array2::zeros((self.n_samples, d));
        let mut labels = Vec::with_capacity(self.n_samples);
        for i in 0..self.n_samples {
            let class = i % nc;
            let point = Array1::from_shape_fn(d, |j| {
                let z: f64 = StandardNormal.sample(&mut rng);
                self.class_means[class][j] + self.cov_scale * z
            });
            x.row_mut(i).assign(&self.shift.apply(point.view()));
            let noisy = nc > 1 && rng.random::<f64>() < self.label_noise;
            labels.push(if noisy {
                (class + 1 + rng.random_range(0..nc - 1)) % nc
            } else {
                class
            });
        }
        Ok((x, labels))
    }
}

/// Domains with one designated target.
#[derive(Debug, Clone)]
pub struct Benchmark {
    domains: Vec<LabeledMeasure>,
    target_index: usize,
    target_labels: Option<Vec<usize>>,
    n_classes: usize,
}

impl Benchmark {
    /// Builds a benchmark from already materialized domains. The target's
    /// labels, when known, are removed from its training view and kept for
    /// evaluation.
    pub fn from_domains(
        mut domains: Vec<LabeledMeasure>,
        target_index: usize,
        target_labels: Option<Vec<usize>>,
        n_classes: usize,
    ) -> Result<Self> {
        if domains.len() < 2 {
            return Err(invalid("domains", "need at least one source and one target"));
        }
        if target_index >= domains.len() {
            return Err(invalid("target_index", format!("{target_index} is out of range")));
        }
        let d = domains[0].dim();
        for (i, dom) in domains.iter().enumerate() {
            if dom.dim() != d {
                return Err(Error::DimensionMismatch {
                    what: "domain feature dimensions",
                    left: d,
                    right: dom.dim(),
                });
            }
            if i != target_index && dom.n_classes() != Some(n_classes) {
                return Err(invalid("domains", format!("source {i} must carry {n_classes}-class labels")));
            }
        }
        if let Some(labels) = &target_labels {
            if labels.len() != domains[target_index].len() {
                return Err(Error::DimensionMismatch {
                    what: "target labels vs samples",
                    left: labels.len(),
                    right: domains[target_index].len(),
                });
            }
            if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
                return Err(invalid("target labels", format!("class {bad} out of range")));
            }
        }
        domains[target_index] = domains[target_index].without_labels();
        Ok(Self {
            domains,
            target_index,
            target_labels,
            n_classes,
        })
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn dim(&self) -> usize {
        self.domains[0].dim()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    /// Training view of every domain; the target is unlabeled.
    pub fn domains(&self) -> &[LabeledMeasure] {
        &self.domains
    }

    /// Labeled source domains in index order.
    pub fn sources(&self) -> Vec<&LabeledMeasure> {
        self.domains
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.target_index)
            .map(|(_, d)| d)
            .collect()
    }

    /// Unlabeled target training view.
    pub fn target(&self) -> &LabeledMeasure {
        &self.domains[self.target_index]
    }

    /// Federated clients: sources first (ids in domain order), target last.
    pub fn clients(&self, n_atoms: usize) -> Vec<ClientState> {
        let mut out: Vec<ClientState> = self
            .sources()
            .into_iter()
            .cloned()
            .enumerate()
            .map(|(id, d)| ClientState::new(id, d, n_atoms))
            .collect();
        out.push(ClientState::new(out.len(), self.target().clone(), n_atoms));
        out
    }

    /// Target class labels, if known. For evaluation only.
    pub fn evaluation_labels(&self) -> Option<&[usize]> {
        self.target_labels.as_deref()
    }

    /// Target features with one-hot labels. For evaluation only.
    pub fn evaluation_set(&self) -> Option<Result<LabeledMeasure>> {
        self.target_labels.as_ref().map(|labels| {
            LabeledMeasure::with_hard_labels(self.target().features().clone(), labels, self.n_classes)
        })
    }
}

/// Samples every domain and designates `target_index` as the target.
pub fn generate_benchmark(specs: &[DomainSpec], target_index: usize, seed: u64) -> Result<Benchmark> {
    let first = specs.first().ok_or(Error::Empty("domain specs"))?;
    let (nc, d) = (first.n_classes(), first.dim());
    let mut domains = Vec::with_capacity(specs.len());
    let mut target_labels = None;
    for (i, spec) in specs.iter().enumerate() {
        if spec.n_classes() != nc || spec.dim() != d {
            return Err(invalid(
                "domain specs",
                format!("domain {i} has (n_c, d) = ({}, {}), expected ({nc}, {d})", spec.n_classes(), spec.dim()),
            ));
        }
        let (x, labels) = spec.sample(substream_seed(seed, "data", i as u64))?;
        domains.push(LabeledMeasure::with_hard_labels(x, &labels, nc)?);
        if i == target_index {
            target_labels = Some(labels);
        }
    }
    Benchmark::from_domains(domains, target_index, target_labels, nc)
}

/// Knobs of the default synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_domains: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub samples_per_domain: usize,
    /// Rotation of domain `i` is `i · rotation_step_deg`.
    pub rotation_step_deg: f64,
    /// Norm of each domain's translation, drawn in an independent random
    /// direction per domain (domain 0 is not translated).
    pub translation_norm: f64,
    /// Distance of every class mean from the origin.
    pub class_separation: f64,
    pub cov_scale: f64,
    pub label_noise: f64,
    /// Index of the target domain; the last domain when absent. Defaults to
    /// domain 1, whose rotation lies between the sources' rotations.
    pub target_index: Option<usize>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_domains: 4,
            dim: 16,
            n_classes: 5,
            samples_per_domain: 300,
            rotation_step_deg: 15.0,
            translation_norm: 6.0,
            class_separation: 5.0,
            cov_scale: 1.0,
            label_noise: 0.0,
            target_index: Some(1),
        }
    }
}

impl SyntheticConfig {
    pub fn target(&self) -> usize {
        self.target_index.unwrap_or(self.n_domains.saturating_sub(1))
    }

    /// Domain recipes. Class means are drawn once from `seed` and shared;
    /// domains differ only by their shift.
    pub fn specs(&self, seed: u64) -> Result<Vec<DomainSpec>> {
        if self.n_domains < 2 || self.dim == 0 || self.n_classes == 0 {
            return Err(invalid("synthetic benchmark", "need ≥ 2 domains, d ≥ 1 and n_c ≥ 1"));
        }
        let mut rng = substream(seed, "class-means", 0);
        let class_means: Vec<Vec<f64>> = (0..self.n_classes)
            .map(|_| random_direction(self.dim, &mut rng, self.class_separation))
            .collect();
        Ok((0..self.n_domains)
            .map(|i| {
                let translation = if i == 0 {
                    vec![0.0; self.dim]
                } else {
                    let mut r = substream(seed, "translation", i as u64);
                    random_direction(self.dim, &mut r, self.translation_norm)
                };
                DomainSpec {
                    n_samples: self.samples_per_domain,
                    class_means: class_means.clone(),
                    cov_scale: self.cov_scale,
                    shift: DomainShift {
                        rotation_deg: i as f64 * self.rotation_step_deg,
                        translation,
                        scale: 1.0,
                    },
                    label_noise: self.label_noise,
                    seed: i as u64,
                }
            })
            .collect())
    }

    pub fn generate(&self, seed: u64) -> Result<Benchmark> {
        generate_benchmark(&self.specs(seed)?, self.target(), seed)
    }
}

fn random_direction<R: Rng>(dim: usize, rng: &mut R, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let len = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if len > 1e-8 {
            return v.into_iter().map(|a| a * norm / len).collect();
        }
    }
}

/// Reads a feature CSV: header `f0,…,f{d-1}` optionally followed by a single
/// `label` column of class indices or by soft label columns `y0,…`.
///
/// Hard labels need `n_classes` to be known; when it is `None` it is taken as
/// one more than the largest label seen.
pub fn load_features(path: &Path, n_classes: Option<usize>) -> Result<LabeledMeasure> {
    let parse_err = |row: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let d = header.iter().take_while(|h| h.starts_with('f')).count();
    if d == 0 || (0..d).any(|j| header[j] != format!("f{j}")) {
        return Err(parse_err(0, "header must start with f0, f1, …".into()));
    }
    enum Layout {
        None,
        Hard,
        Soft(usize),
    }
    let rest = &header[d..];
    let layout = match rest {
        [] => Layout::None,
        [l] if l == "label" => Layout::Hard,
        ys if ys.iter().enumerate().all(|(c, h)| *h == format!("y{c}")) => Layout::Soft(ys.len()),
        _ => return Err(parse_err(0, format!("unrecognized label columns {rest:?}"))),
    };

    let mut features = Vec::new();
    let mut hard = Vec::new();
    let mut soft = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != header.len() {
            return Err(parse_err(
                row,
                format!("expected {} cells, found {}", header.len(), record.len()),
            ));
        }
        let num = |j: usize| -> Result<f64> {
            let cell = record[j].trim();
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(row, format!("cell {:?} in column {} is not a finite number", cell, header[j])))
        };
        for j in 0..d {
            features.push(num(j)?);
        }
        match layout {
            Layout::None => {}
            Layout::Hard => {
                let cell = record[d].trim();
                let c: usize = cell
                    .parse()
                    .map_err(|_| parse_err(row, format!("label {cell:?} is not a class index")))?;
                if n_classes.is_some_and(|nc| c >= nc) {
                    return Err(parse_err(row, format!("label {c} out of range")));
                }
                hard.push(c);
            }
            Layout::Soft(nc) => {
                for j in d..d + nc {
                    soft.push(num(j)?);
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Empty("feature file"));
    }
    let x = Array2::from_shape_vec((rows, d), features).expect("rows counted");
    match layout {
        Layout::None => LabeledMeasure::unlabeled(x),
        Layout::Hard => {
            let nc = n_classes.unwrap_or_else(|| hard.iter().max().map_or(1, |m| m + 1));
            LabeledMeasure::with_hard_labels(x, &hard, nc)
        }
        Layout::Soft(nc) => {
            let y = Array2::from_shape_vec((rows, nc), soft).expect("rows counted");
            LabeledMeasure::new(x, Some(y)).map_err(|e| parse_err(0, e.to_string()))
        }
    }
}

/// Writes a measure in the layout read by [`load_features`]. Labels are
/// written as class indices when `hard` is set and every row is one-hot,
/// otherwise as soft columns.
pub fn save_features(path: &Path, measure: &LabeledMeasure, hard: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = measure.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    let hard_labels = if hard { measure.hard_labels() } else { None };
    let one_hot = hard_labels.as_ref().is_some_and(|h| {
        let y = measure.labels().expect("labels present");
        h.iter().enumerate().all(|(i, &c)| y[[i, c]] == 1.0)
    });
    match (measure.labels(), one_hot) {
        (None, _) => {}
        (Some(_), true) => header.push("label".into()),
        (Some(y), false) => header.extend((0..y.ncols()).map(|c| format!("y{c}"))),
    }
    w.write_record(&header)?;
    for i in 0..measure.len() {
        let mut rec: Vec<String> = measure.features().row(i).iter().map(|v| v.to_string()).collect();
        match (measure.labels(), one_hot) {
            (None, _) => {}
            (Some(_), true) => rec.push(hard_labels.as_ref().expect("one-hot")[i].to_string()),
            (Some(y), false) => rec.extend(y.row(i).iter().map(|v| v.to_string())),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
