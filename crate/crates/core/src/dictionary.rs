//! Dictionaries of labeled atoms, the reconstruction objective, its
//! fixed-plan gradients and the client-side mini-batch update.
//!
//! Every client `ℓ` is reconstructed as the barycenter `B(α_ℓ; P)` of the
//! shared atoms. Its loss is the transport cost from its data to that
//! barycenter, label-aware for labeled clients and feature-only for the
//! target. Gradients hold every transport plan fixed at its optimum, so the
//! barycenter support becomes the explicit expression
//! `z^B = n_B Σ_k α_k π^(k) z^(P_k)`, which is differentiated directly.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{
    free_support_barycenter, ground_cost, BarycenterConfig, BarycenterResult,
    BarycentricCoordinates,
};
use crate::error::{invalid, Error, Result};
use crate::ot::{simplex_project, solve_exact_ot, transport_cost, LabeledMeasure, TransportPlan};
use crate::rng::{substream, substream_seed};

/// Shape of a dictionary: `K` atoms of `n` points in `R^d` with `n_c` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryShape {
    pub atoms: usize,
    pub atom_size: usize,
    pub dim: usize,
    pub n_classes: usize,
}

impl DictionaryShape {
    /// Number of transmitted scalars, `K · n · (d + n_c)`.
    pub fn parameter_count(&self) -> usize {
        self.atoms * self.atom_size * (self.dim + self.n_classes)
    }
}

/// Ordered list of `K` labeled atoms sharing `(n, d, n_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Vec<LabeledMeasure>,
}

impl Dictionary {
    /// Validates that all atoms are labeled, share one shape and have label
    /// rows on the simplex.
    pub fn new(atoms: Vec<LabeledMeasure>) -> Result<Self> {
        let dict = Self::from_atoms_unchecked(atoms)?;
        for atom in &dict.atoms {
            let y = atom.labels().expect("checked labeled");
            for (row, r) in y.axis_iter(Axis(0)).enumerate() {
                crate::ot::check_simplex_row(r, row)?;
            }
        }
        Ok(dict)
    }

    /// Checks shapes only. Affine combinations of dictionaries may carry label
    /// rows off the simplex.
    pub(crate) fn from_atoms_unchecked(atoms: Vec<LabeledMeasure>) -> Result<Self> {
        let first = atoms.first().ok_or(Error::Empty("dictionary atoms"))?;
        let (n, d, nc) = (
            first.len(),
            first.dim(),
            first.n_classes().ok_or(Error::MissingLabels)?,
        );
        for a in &atoms {
            if a.len() != n || a.dim() != d || a.n_classes() != Some(nc) {
                return Err(Error::ShapeMismatch {
                    what: "dictionary atom",
                    expected: (n, d + nc),
                    got: (a.len(), a.dim() + a.n_classes().unwrap_or(0)),
                });
            }
        }
        Ok(Self { atoms })
    }

    /// Server-side initialization: features i.i.d. `N(0, scale²)`, labels in
    /// balanced one-hot blocks of `n / n_c` points per class with the
    /// remainder assigned to the last class.
    pub fn random_init(shape: DictionaryShape, scale: f64, seed: u64) -> Result<Self> {
        let DictionaryShape {
            atoms: k,
            atom_size: n,
            dim: d,
            n_classes: nc,
        } = shape;
        if k == 0 || n == 0 || d == 0 || nc == 0 {
            return Err(invalid("dictionary shape", "all sizes must be positive"));
        }
        let per_class = (n / nc).max(1);
        let classes: Vec<usize> = (0..n).map(|i| (i / per_class).min(nc - 1)).collect();
        let atoms = (0..k)
            .map(|atom| {
                let mut rng = substream(seed, "atom-init", atom as u64);
                let x = Array2::from_shape_simple_fn((n, d), || {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                });
                LabeledMeasure::with_hard_labels(x, &classes, nc)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[LabeledMeasure] {
        &self.atoms
    }

    pub fn into_atoms(self) -> Vec<LabeledMeasure> {
        self.atoms
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom_size(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub fn n_classes(&self) -> usize {
        self.atoms[0].n_classes().expect("atoms are labeled")
    }

    pub fn shape(&self) -> DictionaryShape {
        DictionaryShape {
            atoms: self.n_atoms(),
            atom_size: self.atom_size(),
            dim: self.dim(),
            n_classes: self.n_classes(),
        }
    }

    /// Largest deviation of any atom label row from the simplex.
    pub fn label_simplex_violation(&self) -> f64 {
        self.atoms
            .iter()
            .flat_map(|a| {
                a.labels()
                    .expect("labeled")
                    .axis_iter(Axis(0))
                    .map(|r| {
                        let neg = r.iter().fold(0.0f64, |m, &v| m.max(-v));
                        neg.max((r.sum() - 1.0).abs())
                    })
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Every atom feature row translated by `eps`.
    pub fn shifted(&self, eps: ArrayView1<'_, f64>) -> Result<Self> {
        if eps.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "perturbation vs feature dimension",
                left: eps.len(),
                right: self.dim(),
            });
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let x = a.features() + &eps;
                LabeledMeasure::from_parts_unchecked(x, a.labels().cloned())
            })
            .collect();
        Ok(Self { atoms })
    }
}

/// `A + coef · B`, applied row by row to atom features and labels.
///
/// The result's label rows are not re-projected; this is the primitive under
/// aggregation and interpolation.
pub fn atom_combine(a: &Dictionary, b: &Dictionary, coef: f64) -> Result<Dictionary> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            what: "dictionaries to combine",
            expected: (a.n_atoms() * a.atom_size(), a.dim() + a.n_classes()),
            got: (b.n_atoms() * b.atom_size(), b.dim() + b.n_classes()),
        });
    }
    let atoms = a
        .atoms
        .iter()
        .zip(&b.atoms)
        .map(|(pa, pb)| {
            let mut x = pa.features().clone();
            x.scaled_add(coef, pb.features());
            let mut y = pa.labels().expect("labeled").clone();
            y.scaled_add(coef, pb.labels().expect("labeled"));
            LabeledMeasure::from_parts_unchecked(x, Some(y))
        })
        .collect();
    Ok(Dictionary { atoms })
}

/// Numerical settings shared by every loss and update evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DadilConfig {
    /// Label penalty `β` of the supervised ground cost.
    pub beta: f64,
    /// Barycenter fixed-point iteration cap.
    pub max_iter: usize,
    /// Barycenter relative-change tolerance.
    pub tol: f64,
    /// Re-project atom label rows onto the simplex after each gradient step.
    pub project_labels: bool,
    pub seed: u64,
}

impl Default for DadilConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            max_iter: 100,
            tol: 1e-6,
            project_labels: true,
            seed: 0,
        }
    }
}

impl DadilConfig {
    pub fn barycenter(&self, support_size: Option<usize>, seed: u64) -> BarycenterConfig {
        BarycenterConfig {
            support_size,
            beta: self.beta,
            max_iter: self.max_iter,
            tol: self.tol,
            seed,
        }
    }

    fn loss_barycenter(&self, client_id: usize) -> BarycenterConfig {
        self.barycenter(None, substream_seed(self.seed, "loss-barycenter", client_id as u64))
    }
}

/// One participant: its data, its private barycentric coordinates and its
/// working copy of the dictionary. Deliberately not serializable.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    data: LabeledMeasure,
    alpha: BarycentricCoordinates,
    local_dictionary: Option<Dictionary>,
}

impl ClientState {
    /// Client with uniform coordinates over `n_atoms` atoms. Unlabeled data
    /// marks the target client.
    pub fn new(id: usize, data: LabeledMeasure, n_atoms: usize) -> Self {
        Self::with_alpha(id, data, BarycentricCoordinates::uniform(n_atoms))
    }

    pub fn with_alpha(id: usize, data: LabeledMeasure, alpha: BarycentricCoordinates) -> Self {
        Self {
            id,
            data,
            alpha,
            local_dictionary: None,
        }
    }

    pub fn data(&self) -> &LabeledMeasure {
        &self.data
    }

    pub fn alpha(&self) -> &BarycentricCoordinates {
        &self.alpha
    }

    pub fn set_alpha(&mut self, alpha: BarycentricCoordinates) {
        self.alpha = alpha;
    }

    pub fn is_target(&self) -> bool {
        !self.data.is_labeled()
    }

    pub fn local_dictionary(&self) -> Option<&Dictionary> {
        self.local_dictionary.as_ref()
    }
}

/// Global objective: mean of the per-client losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub value: f64,
    pub per_client: Vec<f64>,
}

impl LossReport {
    pub fn from_per_client(per_client: Vec<f64>) -> Result<Self> {
        if per_client.is_empty() {
            return Err(Error::Empty("client list"));
        }
        let value = per_client.iter().sum::<f64>() / per_client.len() as f64;
        Ok(Self { value, per_client })
    }
}

/// Optimal plans frozen for gradient and perturbation analysis.
#[derive(Debug, Clone)]
pub struct FrozenPlans {
    /// Barycenter support to each atom.
    pub atom_plans: Vec<TransportPlan>,
    /// Barycenter support to the client data.
    pub data_plan: TransportPlan,
}

/// Fixed-plan gradients of one client's loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub atom_features: Vec<Array2<f64>>,
    pub atom_labels: Vec<Array2<f64>>,
    pub alpha: Array1<f64>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.atom_features
            .iter()
            .chain(&self.atom_labels)
            .flat_map(|m| m.iter())
            .chain(self.alpha.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn check_client_fit(dict_dim: usize, dict_classes: usize, data: &LabeledMeasure) -> Result<()> {
    if data.dim() != dict_dim {
        return Err(Error::DimensionMismatch {
            what: "client data vs dictionary feature dimension",
            left: data.dim(),
            right: dict_dim,
        });
    }
    if let Some(c) = data.n_classes() {
        if c != dict_classes {
            return Err(Error::DimensionMismatch {
                what: "client classes vs dictionary classes",
                left: c,
                right: dict_classes,
            });
        }
    }
    Ok(())
}

/// Support expression `n_B Σ_k α_k π^(k) Z_k` (and the label analogue).
fn reconstruct(
    atoms: &[LabeledMeasure],
    alpha: &BarycentricCoordinates,
    plans: &[TransportPlan],
) -> (Array2<f64>, Array2<f64>) {
    let n_b = plans[0].shape().0;
    let scale = n_b as f64;
    let mut x = Array2::zeros((n_b, atoms[0].dim()));
    let mut y = Array2::zeros((n_b, atoms[0].n_classes().unwrap_or(0)));
    for ((atom, plan), &w) in atoms.iter().zip(plans).zip(alpha.weights()) {
        x.scaled_add(w * scale, &plan.as_array().dot(atom.features()));
        if let Some(ya) = atom.labels() {
            y.scaled_add(w * scale, &plan.as_array().dot(ya));
        }
    }
    (x, y)
}

fn check_frozen_inputs(
    atoms: &[LabeledMeasure],
    alpha: &BarycentricCoordinates,
    data: &LabeledMeasure,
    plans: &FrozenPlans,
) -> Result<()> {
    if atoms.is_empty() || plans.atom_plans.len() != atoms.len() || alpha.len() != atoms.len() {
        return Err(invalid("plans", "one frozen plan and one weight per atom are required"));
    }
    let n_b = plans.data_plan.shape().0;
    for (atom, plan) in atoms.iter().zip(&plans.atom_plans) {
        if plan.shape() != (n_b, atom.len()) {
            return Err(Error::ShapeMismatch {
                what: "frozen atom plan",
                expected: (n_b, atom.len()),
                got: plan.shape(),
            });
        }
    }
    if plans.data_plan.shape().1 != data.len() {
        return Err(Error::ShapeMismatch {
            what: "frozen data plan",
            expected: (n_b, data.len()),
            got: plans.data_plan.shape(),
        });
    }
    if data.is_labeled() && !atoms[0].is_labeled() {
        return Err(Error::MissingLabels);
    }
    Ok(())
}

/// Client loss with every plan held fixed: the barycenter support is rebuilt
/// from the atoms through the frozen atom plans, then coupled to the data by
/// the frozen data plan.
pub fn frozen_loss(
    atoms: &[LabeledMeasure],
    alpha: &BarycentricCoordinates,
    data: &LabeledMeasure,
    plans: &FrozenPlans,
    beta: f64,
) -> Result<f64> {
    check_frozen_inputs(atoms, alpha, data, plans)?;
    let (bx, by) = reconstruct(atoms, alpha, &plans.atom_plans);
    let pi = plans.data_plan.as_array();
    let mut loss = 0.0;
    for ((i, j), &p) in pi.indexed_iter() {
        if p == 0.0 {
            continue;
        }
        let mut c: f64 = bx
            .row(i)
            .iter()
            .zip(data.features().row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if let Some(y) = data.labels() {
            c += beta
                * by.row(i)
                    .iter()
                    .zip(y.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
        }
        loss += p * c;
    }
    Ok(loss)
}

/// Loss and fixed-plan gradients with respect to atom features, atom labels
/// and the barycentric coordinates.
pub fn frozen_gradients(
    atoms: &[LabeledMeasure],
    alpha: &BarycentricCoordinates,
    data: &LabeledMeasure,
    plans: &FrozenPlans,
    beta: f64,
) -> Result<(f64, Gradients)> {
    let loss = frozen_loss(atoms, alpha, data, plans, beta)?;
    let (bx, by) = reconstruct(atoms, alpha, &plans.atom_plans);
    let pi = plans.data_plan.as_array();
    let n_b = pi.nrows();
    let scale = n_b as f64;
    let row_mass = pi.sum_axis(Axis(1));

    // dL/dz^B_i = 2 (r_i z^B_i - Σ_j π_ij x_j)
    let mut gx = &bx * &row_mass.view().insert_axis(Axis(1)) - pi.dot(data.features());
    gx *= 2.0;
    let gy = match data.labels() {
        Some(y) => {
            let mut g = &by * &row_mass.view().insert_axis(Axis(1)) - pi.dot(y);
            g *= 2.0 * beta;
            g
        }
        None => Array2::zeros(by.raw_dim()),
    };

    let mut atom_features = Vec::with_capacity(atoms.len());
    let mut atom_labels = Vec::with_capacity(atoms.len());
    let mut grad_alpha = Array1::zeros(atoms.len());
    for (k, (atom, plan)) in atoms.iter().zip(&plans.atom_plans).enumerate() {
        let w = alpha.weights()[k];
        let p = plan.as_array();
        atom_features.push(p.t().dot(&gx) * (scale * w));
        let mut a = (&p.dot(atom.features()) * &gx).sum();
        match atom.labels() {
            Some(ya) => {
                atom_labels.push(p.t().dot(&gy) * (scale * w));
                a += (&p.dot(ya) * &gy).sum();
            }
            None => atom_labels.push(Array2::zeros((atom.len(), 0))),
        }
        grad_alpha[k] = scale * a;
    }
    Ok((
        loss,
        Gradients {
            atom_features,
            atom_labels,
            alpha: grad_alpha,
        },
    ))
}

/// Barycenter of the atoms under `alpha`, then the optimal plan from its
/// support to `data`.
pub fn compute_frozen_plans(
    atoms: &[LabeledMeasure],
    alpha: &BarycentricCoordinates,
    data: &LabeledMeasure,
    config: &BarycenterConfig,
    init: Option<&LabeledMeasure>,
) -> Result<(BarycenterResult, FrozenPlans)> {
    let bary = free_support_barycenter(atoms, alpha, config, init)?;
    let cost = ground_cost(&bary.support, data, config.beta, data.is_labeled())?;
    let data_plan = solve_exact_ot(&cost)?;
    let plans = FrozenPlans {
        atom_plans: bary.plans.clone(),
        data_plan,
    };
    Ok((bary, plans))
}

/// Transport cost from the client's data to its reconstruction
/// `B(α_ℓ; P)`: label-aware for labeled clients, feature-only for the target.
pub fn local_loss(client: &ClientState, dict: &Dictionary, config: &DadilConfig) -> Result<f64> {
    check_client_fit(dict.dim(), dict.n_classes(), &client.data)?;
    let bcfg = config.loss_barycenter(client.id);
    let bary = free_support_barycenter(dict.atoms(), &client.alpha, &bcfg, None)?;
    let cost = ground_cost(&bary.support, &client.data, config.beta, client.data.is_labeled())?;
    let plan = solve_exact_ot(&cost)?;
    transport_cost(&cost, &plan)
}

/// Mean of [`local_loss`] over clients.
pub fn global_loss(
    clients: &[ClientState],
    dict: &Dictionary,
    config: &DadilConfig,
) -> Result<LossReport> {
    if clients.is_empty() {
        return Err(Error::Empty("client list"));
    }
    let per_client = clients
        .par_iter()
        .map(|c| local_loss(c, dict, config))
        .collect::<Result<Vec<_>>>()?;
    LossReport::from_per_client(per_client)
}

/// Full-data loss and fixed-plan gradients for one client.
pub fn loss_gradients(
    client: &ClientState,
    dict: &Dictionary,
    config: &DadilConfig,
) -> Result<(f64, Gradients)> {
    check_client_fit(dict.dim(), dict.n_classes(), &client.data)?;
    let bcfg = config.loss_barycenter(client.id);
    let (_, plans) = compute_frozen_plans(dict.atoms(), &client.alpha, &client.data, &bcfg, None)?;
    frozen_gradients(dict.atoms(), &client.alpha, &client.data, &plans, config.beta)
}

/// Local optimization schedule of one client per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainingParams {
    /// Local epochs `E` per round.
    pub epochs: usize,
    /// Mini-batch size `n_b`.
    pub batch_size: usize,
    /// Step size for atom features and labels.
    pub eta: f64,
    /// Step size for the barycentric coordinates; `eta` when absent.
    pub alpha_eta: Option<f64>,
}

impl LocalTrainingParams {
    fn alpha_step(&self) -> f64 {
        self.alpha_eta.unwrap_or(self.eta)
    }

    pub(crate) fn validate(&self, atom_size: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > atom_size {
            return Err(invalid(
                "batch_size",
                format!("must be in 1..={atom_size}, got {}", self.batch_size),
            ));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("must be a positive finite step, got {}", self.eta)));
        }
        let a = self.alpha_step();
        if !(a >= 0.0 && a.is_finite()) {
            return Err(invalid("alpha_eta", format!("must be a nonnegative finite step, got {a}")));
        }
        Ok(())
    }
}

/// Runs `E` local epochs of mini-batch gradient descent on the client's loss,
/// starting from `incoming`.
///
/// Each epoch shuffles every atom (seeded) and walks it in `⌈n / n_b⌉`
/// contiguous batches; each step pairs the atom batches with `n_b` client
/// samples drawn without replacement. Plans are recomputed every step and
/// frozen for the gradient. The client's coordinates are updated in place
/// and the local dictionary is returned.
pub fn client_update(
    client: &mut ClientState,
    incoming: &Dictionary,
    params: &LocalTrainingParams,
    config: &DadilConfig,
    seed: u64,
) -> Result<Dictionary> {
    let n = incoming.atom_size();
    params.validate(n)?;
    check_client_fit(incoming.dim(), incoming.n_classes(), &client.data)?;
    if params.batch_size > client.data.len() {
        return Err(invalid(
            "batch_size",
            format!("larger than the client's {} samples", client.data.len()),
        ));
    }
    if client.alpha.len() != incoming.n_atoms() {
        return Err(Error::DimensionMismatch {
            what: "client coordinates vs atoms",
            left: client.alpha.len(),
            right: incoming.n_atoms(),
        });
    }

    let mut atoms = incoming.atoms.clone();
    let mut alpha = client.alpha.clone();
    let k = atoms.len();
    let n_b = params.batch_size;
    let batches = n.div_ceil(n_b);
    let mut rng = substream(seed, "client-update", client.id as u64);
    let mut warm: Option<LabeledMeasure> = None;

    for epoch in 0..params.epochs {
        let orders: Vec<Vec<usize>> = (0..k)
            .map(|_| {
                let mut o: Vec<usize> = (0..n).collect();
                o.shuffle(&mut rng);
                o
            })
            .collect();
        for b in 0..batches {
            let lo = b * n_b;
            let hi = (lo + n_b).min(n);
            let batch_atoms: Vec<LabeledMeasure> = atoms
                .iter()
                .zip(&orders)
                .map(|(a, o)| a.select_rows(&o[lo..hi]))
                .collect();
            let picks = index::sample(&mut rng, client.data.len(), n_b).into_vec();
            let data_batch = client.data.select_rows(&picks);

            let bcfg = config.barycenter(
                Some(hi - lo),
                substream_seed(seed, "step-barycenter", (epoch * batches + b) as u64),
            );
            let init = warm.as_ref().filter(|w| w.len() == hi - lo);
            let (bary, plans) = compute_frozen_plans(&batch_atoms, &alpha, &data_batch, &bcfg, init)?;
            let (_, grads) =
                frozen_gradients(&batch_atoms, &alpha, &data_batch, &plans, config.beta)?;

            for (kk, atom) in atoms.iter_mut().enumerate() {
                let rows = &orders[kk][lo..hi];
                let gx = &grads.atom_features[kk];
                let feats = atom.features_mut();
                for (r, &row) in rows.iter().enumerate() {
                    Zip::from(feats.row_mut(row))
                        .and(gx.row(r))
                        .for_each(|v, &g| *v -= params.eta * g);
                }
                let gy = &grads.atom_labels[kk];
                let labels = atom.labels_mut().expect("atoms are labeled");
                for (r, &row) in rows.iter().enumerate() {
                    let mut target = labels.row_mut(row);
                    Zip::from(&mut target)
                        .and(gy.row(r))
                        .for_each(|v, &g| *v -= params.eta * g);
                    if config.project_labels {
                        let p = simplex_project(target.view())?;
                        target.assign(&p);
                    }
                }
            }
            let step = alpha.weights() - &(grads.alpha * params.alpha_step());
            alpha = BarycentricCoordinates::project(step.view())?;
            warm = Some(bary.support);
        }
    }

    if atoms.iter().any(|a| a.features().iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("atom features after local update"));
    }
    let dict = Dictionary::from_atoms_unchecked(atoms)?;
    client.alpha = alpha;
    client.local_dictionary = Some(dict.clone());
    Ok(dict)
}

/// Global loss along `(1 - t) A + t B` for each `t`.
pub fn interpolate_loss_curve(
    a: &Dictionary,
    b: &Dictionary,
    clients: &[ClientState],
    ts: &[f64],
    config: &DadilConfig,
) -> Result<Vec<(f64, f64)>> {
    if let Some(t) = ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(invalid("t", format!("{t} is outside [0, 1]")));
    }
    ts.iter()
        .map(|&t| {
            let scaled = atom_combine(a, a, -t)?;
            let mixed = atom_combine(&scaled, b, t)?;
            Ok((t, global_loss(clients, &mixed, config)?.value))
        })
        .collect()
}

/// Per-client plans captured at one dictionary and held fixed afterwards.
#[derive(Debug, Clone)]
pub struct FrozenObjective {
    entries: Vec<(BarycentricCoordinates, LabeledMeasure, FrozenPlans)>,
    beta: f64,
}

impl FrozenObjective {
    pub fn capture(dict: &Dictionary, clients: &[ClientState], config: &DadilConfig) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::Empty("client list"));
        }
        let entries = clients
            .par_iter()
            .map(|c| {
                check_client_fit(dict.dim(), dict.n_classes(), &c.data)?;
                let bcfg = config.loss_barycenter(c.id);
                let (_, plans) = compute_frozen_plans(dict.atoms(), &c.alpha, &c.data, &bcfg, None)?;
                Ok((c.alpha.clone(), c.data.clone(), plans))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entries,
            beta: config.beta,
        })
    }

    /// Mean frozen-plan loss of `dict` over the captured clients.
    pub fn loss(&self, dict: &Dictionary) -> Result<f64> {
        let mut total = 0.0;
        for (alpha, data, plans) in &self.entries {
            total += frozen_loss(dict.atoms(), alpha, data, plans, self.beta)?;
        }
        Ok(total / self.entries.len() as f64)
    }

    /// Gradient of the loss with respect to a common translation of every
    /// atom feature row: the client mean of `2 Σ_ij π_ij (x^B_i - x^Q_j)`.
    pub fn translation_gradient(&self, dict: &Dictionary) -> Result<Array1<f64>> {
        let mut g = Array1::zeros(dict.dim());
        for (alpha, data, plans) in &self.entries {
            let (bx, _) = reconstruct(dict.atoms(), alpha, &plans.atom_plans);
            let pi = plans.data_plan.as_array();
            let row_mass = pi.sum_axis(Axis(1));
            let col_mass = pi.sum_axis(Axis(0));
            let term = bx.t().dot(&row_mass) - data.features().t().dot(&col_mass);
            g.scaled_add(2.0, &term);
        }
        Ok(g / self.entries.len() as f64)
    }
}

/// Outcome of the translation identity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    /// Frozen-plan loss after shifting every atom feature row by `eps`.
    pub lhs: f64,
    /// `f + eps · ∇f + ‖eps‖²` at the unperturbed dictionary.
    pub rhs: f64,
    pub residual: f64,
    pub base_loss: f64,
}

/// Checks that, with plans frozen, translating all atom features by `eps`
/// changes the loss by exactly `eps · ∇f + ‖eps‖²`, where `∇f` is the
/// translation gradient `2 Σ π (x^B - x^Q)` averaged over clients.
pub fn theorem_probe(
    dict: &Dictionary,
    clients: &[ClientState],
    eps: ArrayView1<'_, f64>,
    config: &DadilConfig,
) -> Result<ProbeResult> {
    let frozen = FrozenObjective::capture(dict, clients, config)?;
    let base_loss = frozen.loss(dict)?;
    let grad = frozen.translation_gradient(dict)?;
    let lhs = frozen.loss(&dict.shifted(eps)?)?;
    let rhs = base_loss + eps.dot(&grad) + eps.dot(&eps);
    Ok(ProbeResult {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        base_loss,
    })
}

/// Frozen-plan loss on the grid `eps = u · dir_u + v · dir_v` for every pair
/// `(u, v)` drawn from `coords`. Returns `[u, v, loss]` triples.
pub fn loss_landscape(
    dict: &Dictionary,
    clients: &[ClientState],
    dir_u: ArrayView1<'_, f64>,
    dir_v: ArrayView1<'_, f64>,
    coords: &[f64],
    config: &DadilConfig,
) -> Result<Vec<[f64; 3]>> {
    let frozen = FrozenObjective::capture(dict, clients, config)?;
    let mut out = Vec::with_capacity(coords.len() * coords.len());
    for &u in coords {
        for &v in coords {
            let eps = &dir_u * u + &dir_v * v;
            out.push([u, v, frozen.loss(&dict.shifted(eps.view())?)?]);
        }
    }
    Ok(out)
}

/// Coefficient of determination of the least-squares fit
/// `f ≈ c0 + c1 u + c2 v + c3 u² + c4 uv + c5 v²`.
pub fn quadratic_fit_r2(points: &[[f64; 3]]) -> Result<f64> {
    if points.len() < 6 {
        return Err(invalid("points", "a quadratic surface needs at least 6 samples"));
    }
    let basis = |u: f64, v: f64| [1.0, u, v, u * u, u * v, v * v];
    let mut ata = Array2::<f64>::zeros((6, 6));
    let mut atb = Array1::<f64>::zeros(6);
    for p in points {
        let phi = basis(p[0], p[1]);
        for i in 0..6 {
            atb[i] += phi[i] * p[2];
            for j in 0..6 {
                ata[[i, j]] += phi[i] * phi[j];
            }
        }
    }
    let coef = solve_dense(ata, atb).ok_or_else(|| invalid("points", "degenerate sample grid"))?;
    let mean = points.iter().map(|p| p[2]).sum::<f64>() / points.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for p in points {
        let phi = basis(p[0], p[1]);
        let fit: f64 = phi.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
        ss_res += (p[2] - fit).powi(2);
        ss_tot += (p[2] - mean).powi(2);
    }
    Ok(if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot })
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Array2<f64>, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[pivot, col]].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap([col, j], [pivot, j]);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[[row, col]] / a[[col, col]];
            if f != 0.0 {
                for j in col..n {
                    a[[row, j]] -= f * a[[col, j]];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let s: f64 = a.slice(s![row, row + 1..]).dot(&x.slice(s![row + 1..]));
        x[row] = (b[row] - s) / a[[row, row]];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::ot::ot_distance;

    fn toy_dictionary(k: usize, n: usize, d: usize, seed: u64) -> Dictionary {
        Dictionary::random_init(
            DictionaryShape {
                atoms: k,
                atom_size: n,
                dim: d,
                n_classes: 2,
            },
            1.0,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn random_init_labels_are_balanced_blocks() {
        let d = Dictionary::random_init(
            DictionaryShape {
                atoms: 2,
                atom_size: 7,
                dim: 3,
                n_classes: 3,
            },
            1.0,
            4,
        )
        .unwrap();
        let classes = d.atoms()[0].hard_labels().unwrap();
        assert_eq!(classes, vec![0, 0, 1, 1, 2, 2, 2]);
        assert_eq!(d.shape().parameter_count(), 2 * 7 * (3 + 3));
        assert_eq!(d.label_simplex_violation(), 0.0);
    }

    #[test]
    fn atom_combine_examples() {
        let a = toy_dictionary(2, 4, 2, 1);
        let b = toy_dictionary(2, 4, 2, 2);
        assert_eq!(atom_combine(&a, &b, 0.0).unwrap(), a);
        let neg = atom_combine(&a, &a, -2.0).unwrap();
        let zero = atom_combine(&a, &neg, 1.0).unwrap();
        for atom in zero.atoms() {
            assert!(atom.features().iter().all(|&v| v == 0.0));
            assert!(atom.labels().unwrap().iter().all(|&v| v == 0.0));
        }
        let half = atom_combine(&atom_combine(&a, &a, -0.5).unwrap(), &b, 0.5).unwrap();
        assert!(half.label_simplex_violation() < 1e-12);

        let other = toy_dictionary(3, 4, 2, 2);
        assert!(atom_combine(&a, &other, 1.0).is_err());
    }

    #[test]
    fn loss_vanishes_when_data_is_the_reconstruction() {
        let atom = LabeledMeasure::with_hard_labels(
            array![[0.0, 1.0], [2.0, -1.0], [1.0, 1.0]],
            &[0, 1, 1],
            2,
        )
        .unwrap();
        let dict = Dictionary::new(vec![atom.clone()]).unwrap();
        let client = ClientState::new(0, atom, 1);
        let cfg = DadilConfig::default();
        assert!(local_loss(&client, &dict, &cfg).unwrap() < 1e-8);
        let (loss, grads) = loss_gradients(&client, &dict, &cfg).unwrap();
        assert!(loss < 1e-8);
        assert!(grads.max_abs() < 1e-8);
    }

    #[test]
    fn shifted_single_atom_loss() {
        // Client {0, 2}, reconstruction {1, 3}: each point moves by 1.
        let atom = LabeledMeasure::with_hard_labels(array![[1.0], [3.0]], &[0, 0], 2).unwrap();
        let dict = Dictionary::new(vec![atom]).unwrap();
        let client = ClientState::new(0, LabeledMeasure::unlabeled(array![[0.0], [2.0]]).unwrap(), 1);
        let loss = local_loss(&client, &dict, &DadilConfig::default()).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn labeled_loss_requires_labeled_atoms() {
        let atom = LabeledMeasure::unlabeled(array![[1.0]]).unwrap();
        assert!(Dictionary::new(vec![atom]).is_err());
    }

    #[test]
    fn global_loss_is_mean_of_local_losses() {
        let dict = toy_dictionary(2, 2, 1, 3);
        let c0 = ClientState::new(
            0,
            LabeledMeasure::with_hard_labels(array![[0.0], [1.0]], &[0, 1], 2).unwrap(),
            2,
        );
        let c1 = ClientState::new(1, LabeledMeasure::unlabeled(array![[3.0], [-1.0]]).unwrap(), 2);
        let cfg = DadilConfig::default();
        let report = global_loss(&[c0.clone(), c1.clone()], &dict, &cfg).unwrap();
        let l0 = local_loss(&c0, &dict, &cfg).unwrap();
        let l1 = local_loss(&c1, &dict, &cfg).unwrap();
        assert!((report.value - 0.5 * (l0 + l1)).abs() < 1e-12);
        let single = global_loss(&[c0.clone()], &dict, &cfg).unwrap();
        assert_eq!(single.value, l0);
        assert!(global_loss(&[], &dict, &cfg).is_err());
    }

    #[test]
    fn nonpositive_step_is_rejected() {
        let dict = toy_dictionary(2, 6, 2, 5);
        let data = LabeledMeasure::with_hard_labels(
            Array2::from_shape_fn((8, 2), |(i, j)| (i * 2 + j) as f64 * 0.1),
            &[0, 1, 0, 1, 0, 1, 0, 1],
            2,
        )
        .unwrap();
        let mut client = ClientState::new(0, data, 2);
        for eta in [0.0, -0.1, f64::NAN] {
            let params = LocalTrainingParams {
                epochs: 1,
                batch_size: 3,
                eta,
                alpha_eta: None,
            };
            assert!(client_update(&mut client, &dict, &params, &DadilConfig::default(), 1).is_err());
        }
    }

    #[test]
    fn optimal_dictionary_barely_moves() {
        let atom = LabeledMeasure::with_hard_labels(
            array![[0.0, 1.0], [2.0, -1.0], [1.0, 1.0], [-1.0, 0.5]],
            &[0, 1, 1, 0],
            2,
        )
        .unwrap();
        let dict = Dictionary::new(vec![atom.clone()]).unwrap();
        let mut client = ClientState::new(0, atom, 1);
        let params = LocalTrainingParams {
            epochs: 1,
            batch_size: 4,
            eta: 0.1,
            alpha_eta: None,
        };
        let out = client_update(&mut client, &dict, &params, &DadilConfig::default(), 3).unwrap();
        let drift = (out.atoms()[0].features() - dict.atoms()[0].features())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(drift < 1e-6);
    }

    #[test]
    fn full_batch_updates_decrease_the_loss() {
        let dict = Dictionary::new(vec![
            LabeledMeasure::with_hard_labels(array![[-1.0], [0.5], [3.0], [4.0]], &[0, 0, 1, 1], 2)
                .unwrap(),
            LabeledMeasure::with_hard_labels(array![[0.0], [1.0], [1.5], [6.0]], &[0, 0, 1, 1], 2)
                .unwrap(),
        ])
        .unwrap();
        let data =
            LabeledMeasure::with_hard_labels(array![[0.2], [0.9], [2.0], [2.6]], &[0, 0, 1, 1], 2)
                .unwrap();
        let mut client = ClientState::new(0, data, 2);
        let cfg = DadilConfig::default();
        let params = LocalTrainingParams {
            epochs: 1,
            batch_size: 4,
            eta: 0.5,
            alpha_eta: Some(0.01),
        };
        let mut current = dict;
        let mut prev = local_loss(&client, &current, &cfg).unwrap();
        for epoch in 0..20 {
            current = client_update(&mut client, &current, &params, &cfg, epoch).unwrap();
            let loss = local_loss(&client, &current, &cfg).unwrap();
            assert!(loss <= prev + 1e-7, "epoch {epoch}: {loss} > {prev}");
            prev = loss;
        }
        assert!(client.alpha().simplex_violation() < 1e-9);
        assert!(current.label_simplex_violation() < 1e-9);
    }

    #[test]
    fn client_update_validates_inputs() {
        let dict = toy_dictionary(2, 4, 2, 5);
        let data = LabeledMeasure::unlabeled(Array2::zeros((6, 2))).unwrap();
        let mut client = ClientState::new(0, data, 2);
        let cfg = DadilConfig::default();
        let mut params = LocalTrainingParams {
            epochs: 1,
            batch_size: 5,
            eta: 0.1,
            alpha_eta: None,
        };
        assert!(client_update(&mut client, &dict, &params, &cfg, 0).is_err());
        params.batch_size = 2;
        params.eta = -1.0;
        assert!(client_update(&mut client, &dict, &params, &cfg, 0).is_err());
    }

    #[test]
    fn probe_is_exact_at_zero() {
        let dict = toy_dictionary(2, 4, 2, 8);
        let data = LabeledMeasure::unlabeled(array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]]).unwrap();
        let clients = vec![ClientState::new(0, data, 2)];
        let r = theorem_probe(&dict, &clients, Array1::zeros(2).view(), &DadilConfig::default())
            .unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn interpolation_endpoints_match_the_dictionaries() {
        let a = toy_dictionary(2, 3, 1, 1);
        let b = toy_dictionary(2, 3, 1, 2);
        let clients = vec![ClientState::new(
            0,
            LabeledMeasure::with_hard_labels(array![[0.0], [1.0], [2.0]], &[0, 1, 1], 2).unwrap(),
            2,
        )];
        let cfg = DadilConfig::default();
        let curve = interpolate_loss_curve(&a, &b, &clients, &[0.0, 1.0], &cfg).unwrap();
        assert_eq!(curve[0].1, global_loss(&clients, &a, &cfg).unwrap().value);
        assert!((curve[1].1 - global_loss(&clients, &b, &cfg).unwrap().value).abs() < 1e-12);
        let flat = interpolate_loss_curve(&a, &a, &clients, &[0.0, 0.3, 1.0], &cfg).unwrap();
        assert!(flat.iter().all(|p| (p.1 - flat[0].1).abs() < 1e-9));
        assert!(interpolate_loss_curve(&a, &b, &clients, &[1.5], &cfg).is_err());
    }

    #[test]
    fn quadratic_fit_is_exact_on_quadratics() {
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                let (u, v) = (i as f64 - 2.0, j as f64 - 2.0);
                pts.push([u, v, 1.0 + 2.0 * u - v + 0.5 * u * u + u * v + 3.0 * v * v]);
            }
        }
        assert!((quadratic_fit_r2(&pts).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reproduction_of_own_data_with_one_atom() {
        let atom = LabeledMeasure::with_hard_labels(
            Array2::from_shape_fn((6, 2), |(i, j)| ((i * 7 + j * 3) % 5) as f64),
            &[0, 1, 0, 1, 0, 1],
            2,
        )
        .unwrap();
        let dict = Dictionary::new(vec![atom.clone()]).unwrap();
        let client = ClientState::new(0, atom.clone(), 1);
        assert!(local_loss(&client, &dict, &DadilConfig::default()).unwrap() < 1e-6);
        assert!(ot_distance(&atom, &atom, Some(1.0)).unwrap() < 1e-12);
    }
}
