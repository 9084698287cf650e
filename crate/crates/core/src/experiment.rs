//! End-to-end experiment drivers: benchmark materialization, federated
//! training, target adaptation, sweeps and their file outputs.
//!
//! Every driver is a pure function of its [`ExperimentConfig`]; results
//! serialize deterministically so identical configs give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::{
    distill, harden_labels, mean_label_entropy, reconstruct_target, train_ensemble, train_erm,
    evaluate_accuracy, ErmConfig, LabelMode,
};
use crate::barycenter::BarycentricCoordinates;
use crate::datasets::{load_features, save_features, Benchmark, SyntheticConfig};
use crate::dictionary::{DadilConfig, Dictionary, LocalTrainingParams};
use crate::error::{Error, Result};
use crate::federation::{
    communication_report, fedavg_classifier, run_feddadil, CommunicationReport, FedAvgConfig,
    FederatedConfig, InMemoryTransport, RoundTranscript,
};
use crate::rng::substream_seed;

/// Where the domains come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchmarkSource {
    /// Generated from the run seed.
    Synthetic(SyntheticConfig),
    /// A manifest written by [`generate`].
    Manifest { path: PathBuf },
    /// Feature CSV files, one per domain.
    Files {
        domains: Vec<PathBuf>,
        target_index: usize,
        n_classes: usize,
    },
}

impl Default for BenchmarkSource {
    fn default() -> Self {
        Self::Synthetic(SyntheticConfig::default())
    }
}

/// Which target classifiers to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationMode {
    Reconstruction,
    Ensemble,
    #[default]
    Both,
}

impl AdaptationMode {
    fn reconstruction(self) -> bool {
        matches!(self, Self::Reconstruction | Self::Both)
    }

    fn ensemble(self) -> bool {
        matches!(self, Self::Ensemble | Self::Both)
    }
}

/// Everything an experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkSource,
    /// Atoms `K`.
    pub n_atoms: usize,
    /// Points per atom `n`.
    pub atom_size: usize,
    /// Mini-batch size `n_b`.
    pub batch_size: usize,
    /// Local epochs per round `E`.
    pub epochs: usize,
    /// Communication rounds `R`.
    pub rounds: usize,
    /// Step size for atom features and labels.
    pub eta: f64,
    /// Step size for the barycentric coordinates.
    pub alpha_eta: f64,
    /// Label penalty of the supervised ground cost.
    pub beta: f64,
    pub init_scale: f64,
    pub project_labels: bool,
    pub barycenter_max_iter: usize,
    pub barycenter_tol: f64,
    pub mode: AdaptationMode,
    pub label_mode: LabelMode,
    pub erm_epochs: usize,
    pub erm_eta: f64,
    pub erm_batch_size: Option<usize>,
    /// Train the FedAVG linear baseline.
    pub fedavg: bool,
    pub fedavg_rounds: usize,
    pub fedavg_epochs: usize,
    pub fedavg_eta: f64,
    pub fedavg_batch_size: Option<usize>,
    /// Parameter count of a reference model for the communication ratio.
    pub reference_parameters: Option<u64>,
    /// Root seeds; every seed is one independent repetition.
    pub seeds: Vec<u64>,
    /// Where outputs go. Not serialized, so the config hash and the results
    /// do not depend on the output location.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkSource::default(),
            n_atoms: 3,
            atom_size: 100,
            batch_size: 50,
            epochs: 1,
            rounds: 100,
            eta: 20.0,
            alpha_eta: 0.01,
            beta: 3.0,
            init_scale: 1.0,
            project_labels: true,
            barycenter_max_iter: 10,
            barycenter_tol: 1e-6,
            mode: AdaptationMode::Both,
            label_mode: LabelMode::Hard,
            erm_epochs: 20,
            erm_eta: 0.5,
            erm_batch_size: None,
            fedavg: true,
            fedavg_rounds: 20,
            fedavg_epochs: 1,
            fedavg_eta: 0.5,
            fedavg_batch_size: None,
            reference_parameters: None,
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config; absent fields take their defaults.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut positive = |name: &str, v: usize| {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        };
        positive("n_atoms", self.n_atoms);
        positive("atom_size", self.atom_size);
        positive("batch_size", self.batch_size);
        positive("barycenter_max_iter", self.barycenter_max_iter);
        if self.batch_size > self.atom_size {
            problems.push(format!(
                "batch_size ({}) must not exceed atom_size ({})",
                self.batch_size, self.atom_size
            ));
        }
        for (name, v) in [
            ("eta", self.eta),
            ("beta", self.beta),
            ("init_scale", self.init_scale),
            ("barycenter_tol", self.barycenter_tol),
            ("erm_eta", self.erm_eta),
            ("fedavg_eta", self.fedavg_eta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.alpha_eta >= 0.0 && self.alpha_eta.is_finite()) {
            problems.push(format!("alpha_eta must be nonnegative and finite, got {}", self.alpha_eta));
        }
        for (name, v) in [
            ("erm_batch_size", self.erm_batch_size),
            ("fedavg_batch_size", self.fedavg_batch_size),
        ] {
            if v == Some(0) {
                problems.push(format!("{name} must be positive when set"));
            }
        }
        if self.reference_parameters == Some(0) {
            problems.push("reference_parameters must be positive when set".into());
        }
        if self.seeds.is_empty() {
            problems.push("seeds must not be empty".into());
        }
        match &self.benchmark {
            BenchmarkSource::Synthetic(s) => {
                if s.n_domains < 2 {
                    problems.push("synthetic benchmark needs at least 2 domains".into());
                }
                if s.target() >= s.n_domains {
                    problems.push("synthetic target_index is out of range".into());
                }
                if s.dim == 0 || s.n_classes == 0 {
                    problems.push("synthetic dim and n_classes must be positive".into());
                }
                if s.samples_per_domain < s.n_classes {
                    problems.push("samples_per_domain must be at least n_classes".into());
                }
                if self.batch_size > s.samples_per_domain {
                    problems.push("batch_size must not exceed samples_per_domain".into());
                }
            }
            BenchmarkSource::Files {
                domains,
                target_index,
                n_classes,
            } => {
                if domains.len() < 2 {
                    problems.push("files benchmark needs at least 2 domains".into());
                }
                if *target_index >= domains.len() {
                    problems.push("files target_index is out of range".into());
                }
                if *n_classes == 0 {
                    problems.push("files n_classes must be positive".into());
                }
            }
            BenchmarkSource::Manifest { .. } => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// SHA-256 of the config's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn dadil(&self, seed: u64) -> DadilConfig {
        DadilConfig {
            beta: self.beta,
            max_iter: self.barycenter_max_iter,
            tol: self.barycenter_tol,
            project_labels: self.project_labels,
            seed: substream_seed(seed, "barycenter", 0),
        }
    }

    pub fn federated(&self, seed: u64) -> FederatedConfig {
        FederatedConfig {
            rounds: self.rounds,
            n_atoms: self.n_atoms,
            atom_size: self.atom_size,
            init_scale: self.init_scale,
            local: LocalTrainingParams {
                epochs: self.epochs,
                batch_size: self.batch_size,
                eta: self.eta,
                alpha_eta: Some(self.alpha_eta),
            },
            dadil: self.dadil(seed),
            seed,
        }
    }

    pub fn erm(&self, seed: u64, name: &str) -> ErmConfig {
        ErmConfig {
            epochs: self.erm_epochs,
            eta: self.erm_eta,
            batch_size: self.erm_batch_size,
            seed: substream_seed(seed, name, 0),
        }
    }

    pub fn fedavg_config(&self, seed: u64) -> FedAvgConfig {
        FedAvgConfig {
            rounds: self.fedavg_rounds,
            epochs: self.fedavg_epochs,
            batch_size: self.fedavg_batch_size,
            eta: self.fedavg_eta,
            seed: substream_seed(seed, "fedavg", 0),
        }
    }
}

/// Description of a generated benchmark on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub synthetic: SyntheticConfig,
    pub dim: usize,
    pub n_classes: usize,
    pub target_index: usize,
    /// Domain CSV files relative to the manifest's directory.
    pub domains: Vec<PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Builds the benchmark for one seed.
pub fn load_benchmark(source: &BenchmarkSource, seed: u64) -> Result<Benchmark> {
    match source {
        BenchmarkSource::Synthetic(s) => s.generate(substream_seed(seed, "data", 0)),
        BenchmarkSource::Manifest { path } => {
            let text = fs::read_to_string(path)?;
            let manifest: Manifest = serde_json::from_str(&text)?;
            let base = path.parent().unwrap_or(Path::new("."));
            let domains = manifest.domains.iter().map(|p| base.join(p)).collect();
            load_files(domains, manifest.target_index, manifest.n_classes)
        }
        BenchmarkSource::Files {
            domains,
            target_index,
            n_classes,
        } => load_files(domains.clone(), *target_index, *n_classes),
    }
}

fn load_files(paths: Vec<PathBuf>, target_index: usize, n_classes: usize) -> Result<Benchmark> {
    let mut domains = paths
        .iter()
        .map(|p| load_features(p, Some(n_classes)))
        .collect::<Result<Vec<_>>>()?;
    let target_labels = domains
        .get(target_index)
        .and_then(|t| t.hard_labels());
    if let Some(t) = domains.get_mut(target_index) {
        *t = t.without_labels();
    }
    Benchmark::from_domains(domains, target_index, target_labels, n_classes)
}

/// Writes one CSV per domain (target included, with its evaluation labels)
/// and a manifest. Returns the manifest path.
pub fn generate(synthetic: &SyntheticConfig, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    let bench = synthetic.generate(substream_seed(seed, "data", 0))?;
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for (i, dom) in bench.domains().iter().enumerate() {
        let name = PathBuf::from(format!("domain_{i}.csv"));
        let full = if i == bench.target_index() {
            bench
                .evaluation_set()
                .expect("synthetic targets keep their labels")?
        } else {
            dom.clone()
        };
        save_features(&out_dir.join(&name), &full, true)?;
        files.push(name);
    }
    let manifest = Manifest {
        seed,
        synthetic: synthetic.clone(),
        dim: bench.dim(),
        n_classes: bench.n_classes(),
        target_index: bench.target_index(),
        domains: files,
    };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

/// Byte accounting of one transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSummary {
    pub messages: usize,
    pub rounds: usize,
    pub scalar_bytes_per_round: Vec<usize>,
    pub payload_bytes_total: usize,
    pub sha256: String,
}

impl TranscriptSummary {
    pub fn of(t: &RoundTranscript) -> Result<Self> {
        let totals = t.round_totals();
        Ok(Self {
            messages: t.len(),
            rounds: totals.len(),
            scalar_bytes_per_round: totals.iter().map(|r| r.scalar_bytes).collect(),
            payload_bytes_total: t.total_payload_bytes(),
            sha256: t.digest()?,
        })
    }
}

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Global loss after every round.
    pub loss_history: Vec<f64>,
    pub final_client_losses: Vec<f64>,
    pub fedavg_acc: Option<f64>,
    pub dadil_r_acc: Option<f64>,
    pub dadil_e_acc: Option<f64>,
    pub transcript: Option<TranscriptSummary>,
}

/// Mean accuracies over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanAccuracy {
    pub fedavg_acc: Option<f64>,
    pub dadil_r_acc: Option<f64>,
    pub dadil_e_acc: Option<f64>,
}

/// Contents of the results JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub communication: Option<CommunicationReport>,
    pub runs: Vec<SeedResult>,
    pub mean: MeanAccuracy,
}

impl ExperimentResults {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.collect::<Option<Vec<_>>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Artifacts of a single seed, kept for callers that need more than
/// accuracies.
#[derive(Debug, Clone)]
pub struct SeedArtifacts {
    pub result: SeedResult,
    pub benchmark: Benchmark,
    pub dictionary: Option<Dictionary>,
    pub target_alpha: Option<BarycentricCoordinates>,
    pub transcript: RoundTranscript,
}

/// FedAVG baseline, federated dictionary learning, then target adaptation,
/// for one seed. Target labels are touched only to score accuracy.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedArtifacts> {
    let bench = load_benchmark(&cfg.benchmark, seed)?;
    let eval = bench.evaluation_set().transpose()?;
    let score = |model: &dyn crate::classifier::Predictor| -> Result<Option<f64>> {
        eval.as_ref().map(|e| evaluate_accuracy(model, e)).transpose()
    };

    let fedavg_acc = if cfg.fedavg {
        let sources: Vec<_> = bench.sources().into_iter().cloned().collect();
        let clf = fedavg_classifier(&sources, &cfg.fedavg_config(seed))?;
        score(&clf)?
    } else {
        None
    };

    let mut result = SeedResult {
        seed,
        loss_history: Vec::new(),
        final_client_losses: Vec::new(),
        fedavg_acc,
        dadil_r_acc: None,
        dadil_e_acc: None,
        transcript: None,
    };
    if cfg.rounds == 0 {
        return Ok(SeedArtifacts {
            result,
            benchmark: bench,
            dictionary: None,
            target_alpha: None,
            transcript: RoundTranscript::new(),
        });
    }

    let mut clients = bench.clients(cfg.n_atoms);
    let run = run_feddadil(&mut clients, &cfg.federated(seed), &mut InMemoryTransport::new())?;
    let alpha = clients.last().expect("target client").alpha().clone();
    let dadil = cfg.dadil(seed);

    if cfg.mode.reconstruction() {
        let mut surrogate = reconstruct_target(&run.dictionary, &alpha, None, &dadil)?;
        if cfg.label_mode == LabelMode::Hard {
            surrogate = harden_labels(&surrogate)?;
        }
        let clf = train_erm(&surrogate, &cfg.erm(seed, "erm-reconstruction"))?;
        result.dadil_r_acc = score(&clf)?;
    }
    if cfg.mode.ensemble() {
        let ens = train_ensemble(
            &run.dictionary,
            &alpha,
            cfg.label_mode,
            &cfg.erm(seed, "erm-ensemble"),
        )?;
        result.dadil_e_acc = score(&ens)?;
    }
    result.loss_history = run.history.iter().map(|r| r.value).collect();
    result.final_client_losses = run
        .history
        .last()
        .map(|r| r.per_client.clone())
        .unwrap_or_default();
    result.transcript = Some(TranscriptSummary::of(&run.transcript)?);
    Ok(SeedArtifacts {
        result,
        benchmark: bench,
        dictionary: Some(run.dictionary),
        target_alpha: Some(alpha),
        transcript: run.transcript,
    })
}

/// Runs every seed. Transcripts are returned alongside, in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentResults, Vec<RoundTranscript>)> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    let mut transcripts = Vec::with_capacity(cfg.seeds.len());
    let mut shape = None;
    for &seed in &cfg.seeds {
        let a = run_seed(cfg, seed)?;
        shape.get_or_insert((a.benchmark.dim(), a.benchmark.n_classes(), a.benchmark.n_domains()));
        runs.push(a.result);
        transcripts.push(a.transcript);
    }
    let communication = match shape {
        Some((d, nc, n_clients)) => Some(communication_report(
            cfg.n_atoms,
            cfg.atom_size,
            d,
            nc,
            n_clients,
            cfg.reference_parameters,
        )?),
        None => None,
    };
    let mean = MeanAccuracy {
        fedavg_acc: mean_of(runs.iter().map(|r| r.fedavg_acc)),
        dadil_r_acc: mean_of(runs.iter().map(|r| r.dadil_r_acc)),
        dadil_e_acc: mean_of(runs.iter().map(|r| r.dadil_e_acc)),
    };
    Ok((
        ExperimentResults {
            config_hash: cfg.hash(),
            config: cfg.clone(),
            communication,
            runs,
            mean,
        },
        transcripts,
    ))
}

/// Writes `results.json` and one `transcript_seed{seed}.jsonl` per seed into
/// the configured output directory. Returns the results path.
pub fn write_run_outputs(
    cfg: &ExperimentConfig,
    results: &ExperimentResults,
    transcripts: &[RoundTranscript],
) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    for (seed, t) in cfg.seeds.iter().zip(transcripts) {
        let f = fs::File::create(cfg.output_dir.join(format!("transcript_seed{seed}.jsonl")))?;
        t.write_jsonl(std::io::BufWriter::new(f))?;
    }
    let path = cfg.output_dir.join("results.json");
    fs::write(&path, results.to_json()?)?;
    Ok(path)
}

/// Hyper-parameter axis of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    /// Local epochs.
    E,
    /// Atoms.
    K,
    /// Points per atom.
    N,
    /// Mini-batch size.
    Nb,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::E => "E",
            Self::K => "K",
            Self::N => "n",
            Self::Nb => "n_b",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, v: usize) {
        match self {
            Self::E => cfg.epochs = v,
            Self::K => cfg.n_atoms = v,
            Self::N => cfg.atom_size = v,
            Self::Nb => cfg.batch_size = v,
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E" | "e" | "epochs" => Ok(Self::E),
            "K" | "k" | "atoms" => Ok(Self::K),
            "n" | "N" | "atom_size" => Ok(Self::N),
            "n_b" | "nb" | "batch_size" => Ok(Self::Nb),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}; use E, K, n or n_b"))),
        }
    }
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epochs: usize,
    pub n_atoms: usize,
    pub atom_size: usize,
    pub batch_size: usize,
    pub dadil_r_acc: Option<f64>,
    pub dadil_e_acc: Option<f64>,
    pub fedavg_acc: Option<f64>,
    pub wall_time_s: f64,
}

/// Cross product of the given axes; one row per cell, accuracies averaged
/// over the config's seeds.
pub fn sweep(cfg: &ExperimentConfig, axes: &[(SweepAxis, Vec<usize>)]) -> Result<Vec<SweepRow>> {
    if axes.is_empty() || axes.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::Config("sweep needs at least one value per axis".into()));
    }
    let mut cells: Vec<ExperimentConfig> = vec![cfg.clone()];
    for (axis, values) in axes {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |&v| {
                    let mut next = c.clone();
                    axis.apply(&mut next, v);
                    next
                })
            })
            .collect();
    }
    for c in &cells {
        c.validate()?;
    }
    cells
        .iter()
        .map(|c| {
            let start = Instant::now();
            let (res, _) = run_experiment(c)?;
            Ok(SweepRow {
                epochs: c.epochs,
                n_atoms: c.n_atoms,
                atom_size: c.atom_size,
                batch_size: c.batch_size,
                dadil_r_acc: res.mean.dadil_r_acc,
                dadil_e_acc: res.mean.dadil_e_acc,
                fedavg_acc: res.mean.fedavg_acc,
                wall_time_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Target accuracy per local-epoch count, everything else fixed.
pub fn parallelism_sweep(cfg: &ExperimentConfig, epochs: &[usize]) -> Result<Vec<SweepRow>> {
    sweep(cfg, &[(SweepAxis::E, epochs.to_vec())])
}

/// One distillation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillRow {
    pub spc: usize,
    pub summary_size: usize,
    pub mean_label_entropy: f64,
    pub accuracy: Option<f64>,
}

/// Trains the dictionary once per seed, then summarizes the target at every
/// SPC. Entropy and accuracy are averaged over seeds.
pub fn distill_sweep(cfg: &ExperimentConfig, spcs: &[usize]) -> Result<Vec<DistillRow>> {
    cfg.validate()?;
    if spcs.is_empty() {
        return Err(Error::Config("distill needs at least one SPC value".into()));
    }
    if cfg.rounds == 0 {
        return Err(Error::Config("distill needs at least one round".into()));
    }
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut no_adapt = cfg.clone();
        no_adapt.fedavg = false;
        no_adapt.mode = AdaptationMode::Reconstruction;
        no_adapt.erm_epochs = 0;
        let a = run_seed(&no_adapt, seed)?;
        let dict = a.dictionary.expect("rounds > 0");
        let alpha = a.target_alpha.expect("rounds > 0");
        let eval = a.benchmark.evaluation_set().transpose()?;
        let nc = a.benchmark.n_classes();
        let rows = spcs
            .iter()
            .map(|&spc| {
                let summary = distill(&dict, &alpha, spc, nc, &cfg.dadil(seed))?;
                let train_set = match cfg.label_mode {
                    LabelMode::Soft => summary.clone(),
                    LabelMode::Hard => harden_labels(&summary)?,
                };
                let clf = train_erm(&train_set, &cfg.erm(seed, "erm-distill"))?;
                Ok(DistillRow {
                    spc,
                    summary_size: summary.len(),
                    mean_label_entropy: mean_label_entropy(&summary)?,
                    accuracy: eval.as_ref().map(|e| evaluate_accuracy(&clf, e)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        per_seed.push(rows);
    }
    let n = per_seed.len() as f64;
    Ok((0..spcs.len())
        .map(|i| DistillRow {
            spc: spcs[i],
            summary_size: per_seed[0][i].summary_size,
            mean_label_entropy: per_seed.iter().map(|r| r[i].mean_label_entropy).sum::<f64>() / n,
            accuracy: mean_of(per_seed.iter().map(|r| r[i].accuracy)),
        })
        .collect())
}

/// Writes serializable rows as a CSV table.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            benchmark: BenchmarkSource::Synthetic(SyntheticConfig {
                samples_per_domain: 30,
                dim: 4,
                n_classes: 3,
                ..SyntheticConfig::default()
            }),
            atom_size: 12,
            batch_size: 6,
            rounds: 2,
            erm_epochs: 20,
            fedavg_rounds: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn validation_lists_every_problem() {
        let cfg = ExperimentConfig {
            n_atoms: 0,
            batch_size: 500,
            eta: -1.0,
            seeds: vec![],
            ..ExperimentConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        for needle in ["n_atoms", "batch_size", "eta", "seeds"] {
            assert!(msg.contains(needle), "{needle} missing from {msg}");
        }
    }

    #[test]
    fn zero_rounds_give_baseline_only() {
        let cfg = ExperimentConfig {
            rounds: 0,
            ..tiny()
        };
        let (res, transcripts) = run_experiment(&cfg).unwrap();
        assert!(res.runs[0].fedavg_acc.is_some());
        assert!(res.runs[0].dadil_r_acc.is_none());
        assert!(transcripts[0].is_empty());
    }

    #[test]
    fn results_are_deterministic() {
        let cfg = tiny();
        let (a, ta) = run_experiment(&cfg).unwrap();
        let (b, tb) = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(ta[0].to_jsonl().unwrap(), tb[0].to_jsonl().unwrap());
        assert_eq!(a.runs[0].loss_history.len(), 2);
    }

    #[test]
    fn sweep_grid_size() {
        let cfg = ExperimentConfig {
            rounds: 1,
            fedavg: false,
            ..tiny()
        };
        let rows = sweep(&cfg, &[(SweepAxis::K, vec![1, 2]), (SweepAxis::Nb, vec![3, 6])]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[1].n_atoms, rows[1].batch_size), (1, 6));
        assert!(sweep(&cfg, &[(SweepAxis::E, vec![])]).is_err());
    }

    #[test]
    fn generated_manifest_runs() {
        let dir = tempfile::tempdir().unwrap();
        let BenchmarkSource::Synthetic(s) = tiny().benchmark else {
            unreachable!()
        };
        let manifest = generate(&s, 5, dir.path()).unwrap();
        let from_files = load_benchmark(&BenchmarkSource::Manifest { path: manifest }, 0).unwrap();
        let direct = load_benchmark(&tiny().benchmark, 5).unwrap();
        assert_eq!(from_files.n_domains(), direct.n_domains());
        assert!(!from_files.target().is_labeled());
        assert_eq!(from_files.evaluation_labels(), direct.evaluation_labels());
        for (a, b) in from_files.domains().iter().zip(direct.domains()) {
            assert_eq!(a.features(), b.features());
        }
    }
}
