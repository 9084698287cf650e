//! Free-support Wasserstein barycenters of labeled empirical measures.

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ot::{
    feature_cost, label_aware_cost, project_rows_onto_simplex, simplex_project, solve_exact_ot,
    transport_cost, CostMatrix, LabeledMeasure, TransportPlan, SIMPLEX_TOL,
};
use crate::rng::substream;

/// Weights of a point on the probability simplex `Δ_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricCoordinates(Array1<f64>);

impl BarycentricCoordinates {
    pub fn new(weights: Array1<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("barycentric coordinates"));
        }
        crate::ot::check_simplex_row(weights.view(), 0)?;
        Ok(Self(weights))
    }

    pub fn uniform(k: usize) -> Self {
        Self(Array1::from_elem(k, 1.0 / k as f64))
    }

    /// The `index`-th vertex of `Δ_k`.
    pub fn vertex(k: usize, index: usize) -> Self {
        let mut w = Array1::zeros(k);
        w[index] = 1.0;
        Self(w)
    }

    /// Orthogonal projection of an arbitrary vector onto the simplex.
    pub fn project(v: ArrayView1<'_, f64>) -> Result<Self> {
        Ok(Self(simplex_project(v)?))
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Distance from the simplex, `0` for valid coordinates.
    pub fn simplex_violation(&self) -> f64 {
        let neg = self.0.iter().fold(0.0f64, |m, &w| m.max(-w));
        neg.max((self.0.sum() - 1.0).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarycenterConfig {
    /// Number of support points; defaults to the atom size.
    pub support_size: Option<usize>,
    /// Label-mismatch penalty of the ground cost.
    pub beta: f64,
    pub max_iter: usize,
    /// Stop once the relative objective change drops below this.
    pub tol: f64,
    /// Seeds the random initial support.
    pub seed: u64,
}

impl Default for BarycenterConfig {
    fn default() -> Self {
        Self {
            support_size: None,
            beta: 1.0,
            max_iter: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarycenterResult {
    pub support: LabeledMeasure,
    /// One plan per atom, barycenter support (rows) to atom support (columns).
    /// The returned support is exactly the barycentric projection through
    /// these plans.
    pub plans: Vec<TransportPlan>,
    /// `Σ_k α_k T(P_k, B)` at each iterate, before its update.
    pub objective_trace: Vec<f64>,
}

impl BarycenterResult {
    pub fn iterations(&self) -> usize {
        self.objective_trace.len()
    }
}

fn check_atoms(atoms: &[LabeledMeasure], alpha: &BarycentricCoordinates) -> Result<bool> {
    let first = atoms.first().ok_or(Error::Empty("atom list"))?;
    if alpha.len() != atoms.len() {
        return Err(Error::DimensionMismatch {
            what: "barycentric coordinates vs atoms",
            left: alpha.len(),
            right: atoms.len(),
        });
    }
    let labeled = first.is_labeled();
    for a in atoms {
        if a.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                what: "atom feature dimension",
                left: first.dim(),
                right: a.dim(),
            });
        }
        if a.is_labeled() != labeled {
            return Err(invalid("atoms", "either all or no atoms must carry labels"));
        }
        if a.n_classes() != first.n_classes() {
            return Err(Error::DimensionMismatch {
                what: "atom classes",
                left: first.n_classes().unwrap_or(0),
                right: a.n_classes().unwrap_or(0),
            });
        }
    }
    Ok(labeled)
}

fn random_support(
    n: usize,
    d: usize,
    n_classes: Option<usize>,
    seed: u64,
) -> LabeledMeasure {
    let mut rng = substream(seed, "barycenter-init", 0);
    let features = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng));
    let labels = n_classes.map(|c| Array2::from_elem((n, c), 1.0 / c as f64));
    LabeledMeasure::from_parts_unchecked(features, labels)
}

pub(crate) fn ground_cost(
    p: &LabeledMeasure,
    q: &LabeledMeasure,
    beta: f64,
    supervised: bool,
) -> Result<CostMatrix> {
    if supervised {
        label_aware_cost(p, q, beta)
    } else {
        feature_cost(p, q)
    }
}

/// Fixed-point iteration for the free-support barycenter `B(α; atoms)`.
///
/// Each step solves exact OT from the current support to every atom (under
/// the label-aware cost when the atoms are labeled) and moves the support to
/// the `α`-weighted barycentric projections. `init` warm-starts the support;
/// otherwise it is drawn standard normal with uniform labels.
pub fn free_support_barycenter(
    atoms: &[LabeledMeasure],
    alpha: &BarycentricCoordinates,
    config: &BarycenterConfig,
    init: Option<&LabeledMeasure>,
) -> Result<BarycenterResult> {
    let labeled = check_atoms(atoms, alpha)?;
    if config.max_iter == 0 {
        return Err(invalid("max_iter", "at least one iteration is required"));
    }
    if !(config.tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    if labeled && !(config.beta > 0.0) {
        return Err(invalid("beta", "must be positive"));
    }
    let d = atoms[0].dim();
    let n_classes = atoms[0].n_classes();
    let n_b = config.support_size.unwrap_or(atoms[0].len());
    if n_b == 0 {
        return Err(invalid("support_size", "must be at least 1"));
    }

    let mut support = match init {
        Some(s) if s.len() == n_b && s.dim() == d && s.n_classes() == n_classes => s.clone(),
        Some(s) if s.len() != n_b => {
            return Err(Error::DimensionMismatch {
                what: "warm-start support size",
                left: n_b,
                right: s.len(),
            })
        }
        Some(_) => return Err(invalid("init", "warm start does not match atom shape")),
        None => random_support(n_b, d, n_classes, config.seed),
    };

    let w = alpha.weights();
    let scale = n_b as f64;
    let mut trace = Vec::with_capacity(config.max_iter);
    let mut plans = Vec::new();
    for _ in 0..config.max_iter {
        let mut objective = 0.0;
        plans.clear();
        let mut next_x = Array2::<f64>::zeros((n_b, d));
        let mut next_y = n_classes.map(|c| Array2::<f64>::zeros((n_b, c)));
        for (k, atom) in atoms.iter().enumerate() {
            let cost = ground_cost(&support, atom, config.beta, labeled)?;
            let plan = solve_exact_ot(&cost)?;
            objective += w[k] * transport_cost(&cost, &plan)?;
            if w[k] != 0.0 {
                next_x.scaled_add(w[k] * scale, &plan.as_array().dot(atom.features()));
                if let (Some(acc), Some(y)) = (next_y.as_mut(), atom.labels()) {
                    acc.scaled_add(w[k] * scale, &plan.as_array().dot(y));
                }
            }
            plans.push(plan);
        }
        if let Some(y) = next_y.as_mut() {
            project_rows_onto_simplex(y)?;
        }
        support = LabeledMeasure::from_parts_unchecked(next_x, next_y);

        let converged = trace.last().is_some_and(|&prev: &f64| {
            (prev - objective).abs() <= config.tol * prev.abs().max(f64::MIN_POSITIVE)
        });
        trace.push(objective);
        if converged {
            break;
        }
    }
    debug_assert!(support
        .labels()
        .is_none_or(|y| y.rows().into_iter().all(|r| (r.sum() - 1.0).abs() <= SIMPLEX_TOL)));

    Ok(BarycenterResult {
        support,
        plans,
        objective_trace: trace,
    })
}
