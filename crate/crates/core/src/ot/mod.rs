//! Ground costs, exact discrete optimal transport and barycentric projection
//! between uniform-weight empirical measures.

mod network_simplex;
mod simplex;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{invalid, Error, Result};

pub use simplex::{project_rows_onto_simplex, simplex_project};

/// Tolerance for label rows to count as points of the probability simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A uniform-weight empirical distribution over `n` points in `R^d`, with
/// optional soft labels (one simplex row per point).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMeasure {
    features: Array2<f64>,
    labels: Option<Array2<f64>>,
}

impl LabeledMeasure {
    /// Builds a measure, checking shapes, finiteness and that every label row
    /// lies on the simplex.
    pub fn new(features: Array2<f64>, labels: Option<Array2<f64>>) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(Error::Empty("measure support"));
        }
        if d == 0 {
            return Err(invalid("features", "feature dimension must be at least 1"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        if let Some(y) = &labels {
            if y.nrows() != n {
                return Err(Error::DimensionMismatch {
                    what: "feature rows vs label rows",
                    left: n,
                    right: y.nrows(),
                });
            }
            if y.ncols() == 0 {
                return Err(invalid("labels", "at least one class is required"));
            }
            for (row, r) in y.axis_iter(Axis(0)).enumerate() {
                check_simplex_row(r, row)?;
            }
        }
        Ok(Self { features, labels })
    }

    pub fn unlabeled(features: Array2<f64>) -> Result<Self> {
        Self::new(features, None)
    }

    /// One-hot labels from class indices.
    pub fn with_hard_labels(
        features: Array2<f64>,
        classes: &[usize],
        n_classes: usize,
    ) -> Result<Self> {
        if classes.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                what: "feature rows vs class indices",
                left: features.nrows(),
                right: classes.len(),
            });
        }
        let mut y = Array2::zeros((classes.len(), n_classes));
        for (i, &c) in classes.iter().enumerate() {
            if c >= n_classes {
                return Err(invalid(
                    "labels",
                    format!("class index {c} out of range for {n_classes} classes"),
                ));
            }
            y[[i, c]] = 1.0;
        }
        Self::new(features, Some(y))
    }

    /// Skips the simplex check on labels. Used for affine combinations of
    /// atoms, whose label rows may leave the simplex.
    pub(crate) fn from_parts_unchecked(features: Array2<f64>, labels: Option<Array2<f64>>) -> Self {
        Self { features, labels }
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&Array2<f64>> {
        self.labels.as_ref()
    }

    pub(crate) fn features_mut(&mut self) -> &mut Array2<f64> {
        &mut self.features
    }

    pub(crate) fn labels_mut(&mut self) -> Option<&mut Array2<f64>> {
        self.labels.as_mut()
    }

    pub fn into_parts(self) -> (Array2<f64>, Option<Array2<f64>>) {
        (self.features, self.labels)
    }

    /// Number of support points.
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|y| y.ncols())
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn without_labels(&self) -> Self {
        Self {
            features: self.features.clone(),
            labels: None,
        }
    }

    /// Sub-measure on the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            labels: self.labels.as_ref().map(|y| y.select(Axis(0), rows)),
        }
    }

    /// Argmax class per row, lowest index on ties.
    pub fn hard_labels(&self) -> Option<Vec<usize>> {
        self.labels
            .as_ref()
            .map(|y| y.axis_iter(Axis(0)).map(argmax).collect())
    }
}

pub(crate) fn check_simplex_row(r: ArrayView1<'_, f64>, row: usize) -> Result<()> {
    let sum: f64 = r.sum();
    if r.iter().any(|v| !v.is_finite() || *v < -SIMPLEX_TOL) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::NotOnSimplex { row, sum });
    }
    Ok(())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Dense `n x m` matrix of nonnegative ground costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        if entries.iter().any(|&v| v < 0.0) {
            return Err(invalid("cost matrix", "entries must be nonnegative"));
        }
        Ok(Self(entries))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }
}

/// A coupling with uniform marginals `1/n` (rows) and `1/m` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan(Array2<f64>);

impl TransportPlan {
    /// Wraps a matrix that the caller asserts is a feasible coupling.
    pub fn from_array_unchecked(entries: Array2<f64>) -> Self {
        Self(entries)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    /// Largest absolute deviation of any row or column sum from its uniform
    /// marginal.
    pub fn marginal_error(&self) -> f64 {
        let (n, m) = self.0.dim();
        let rows = self
            .0
            .sum_axis(Axis(1))
            .iter()
            .map(|s| (s - 1.0 / n as f64).abs())
            .fold(0.0, f64::max);
        let cols = self
            .0
            .sum_axis(Axis(0))
            .iter()
            .map(|s| (s - 1.0 / m as f64).abs())
            .fold(0.0, f64::max);
        rows.max(cols)
    }
}

fn sq_dist_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.axis_iter(Axis(0)).enumerate() {
        for (j, rb) in b.axis_iter(Axis(0)).enumerate() {
            out[[i, j]] = ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    out
}

/// Squared Euclidean distances between the feature rows of `p` and `q`.
pub fn feature_cost(p: &LabeledMeasure, q: &LabeledMeasure) -> Result<CostMatrix> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            what: "feature dimension",
            left: p.dim(),
            right: q.dim(),
        });
    }
    Ok(CostMatrix(sq_dist_matrix(p.features.view(), q.features.view())))
}

/// Feature cost plus `beta` times the squared distance between label rows.
pub fn label_aware_cost(p: &LabeledMeasure, q: &LabeledMeasure, beta: f64) -> Result<CostMatrix> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid("beta", format!("must be positive, got {beta}")));
    }
    let (yp, yq) = match (&p.labels, &q.labels) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::MissingLabels),
    };
    if yp.ncols() != yq.ncols() {
        return Err(Error::DimensionMismatch {
            what: "number of classes",
            left: yp.ncols(),
            right: yq.ncols(),
        });
    }
    let mut c = feature_cost(p, q)?.0;
    c.scaled_add(beta, &sq_dist_matrix(yp.view(), yq.view()));
    Ok(CostMatrix(c))
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact optimal coupling between uniform measures of sizes `n` (rows of the
/// cost) and `m` (columns), solved as an integer transportation problem so the
/// marginals are met to rounding error.
pub fn solve_exact_ot(cost: &CostMatrix) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return Err(Error::Empty("cost matrix"));
    }
    if cost.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    let g = gcd(n, m);
    let row_mass = (m / g) as i64;
    let col_mass = (n / g) as i64;
    let total = (n / g * m) as f64;
    let flow =
        network_simplex::solve_transportation(cost.0.view(), &vec![row_mass; n], &vec![col_mass; m])?;
    let plan = Array2::from_shape_vec((n, m), flow.into_iter().map(|f| f as f64 / total).collect())
        .expect("flow has n*m entries");
    Ok(TransportPlan(plan))
}

/// Frobenius inner product `<plan, cost>`.
pub fn transport_cost(cost: &CostMatrix, plan: &TransportPlan) -> Result<f64> {
    if cost.shape() != plan.shape() {
        return Err(Error::ShapeMismatch {
            what: "transport plan vs cost",
            expected: cost.shape(),
            got: plan.shape(),
        });
    }
    Ok(cost.0.iter().zip(plan.0.iter()).map(|(c, g)| c * g).sum())
}

/// Optimal transport cost between two measures. Uses the label-aware cost
/// when `beta` is given.
pub fn ot_distance(p: &LabeledMeasure, q: &LabeledMeasure, beta: Option<f64>) -> Result<f64> {
    let cost = match beta {
        Some(b) => label_aware_cost(p, q, b)?,
        None => feature_cost(p, q)?,
    };
    let plan = solve_exact_ot(&cost)?;
    transport_cost(&cost, &plan)
}

/// Result of pushing a support along a plan: `n * plan * Q`.
#[derive(Debug, Clone)]
pub struct Projection {
    pub features: Array2<f64>,
    pub labels: Option<Array2<f64>>,
}

/// Barycentric projection of the row support of `plan` onto `q`.
pub fn barycentric_projection(plan: &TransportPlan, q: &LabeledMeasure) -> Result<Projection> {
    let (n, m) = plan.shape();
    if m != q.len() {
        return Err(Error::DimensionMismatch {
            what: "plan columns vs target support",
            left: m,
            right: q.len(),
        });
    }
    let scale = n as f64;
    let features = plan.0.dot(&q.features) * scale;
    let labels = q.labels.as_ref().map(|y| plan.0.dot(y) * scale);
    Ok(Projection { features, labels })
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn pts(rows: Array2<f64>) -> LabeledMeasure {
        LabeledMeasure::unlabeled(rows).unwrap()
    }

    #[test]
    fn feature_cost_examples() {
        let o = pts(array![[0.0, 0.0]]);
        assert_eq!(feature_cost(&o, &o).unwrap().as_array(), &array![[0.0]]);
        let q = pts(array![[3.0, 4.0]]);
        assert_eq!(feature_cost(&o, &q).unwrap().as_array(), &array![[25.0]]);
        let p = pts(array![[0.0], [1.0]]);
        let q = pts(array![[2.0], [3.0]]);
        assert_eq!(
            feature_cost(&p, &q).unwrap().as_array(),
            &array![[4.0, 9.0], [1.0, 4.0]]
        );
    }

    #[test]
    fn feature_cost_rejects_dimension_mismatch() {
        let p = pts(array![[0.0, 1.0]]);
        let q = pts(array![[0.0]]);
        assert!(matches!(
            feature_cost(&p, &q),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn label_aware_cost_examples() {
        let x = array![[0.5, -1.0], [2.0, 0.0]];
        let p = LabeledMeasure::with_hard_labels(x.clone(), &[0, 1], 2).unwrap();
        let c = label_aware_cost(&p, &p, 3.7).unwrap();
        assert_eq!(c.as_array()[[0, 0]], 0.0);
        assert_eq!(c.as_array()[[1, 1]], 0.0);

        let a = LabeledMeasure::with_hard_labels(array![[1.0]], &[0], 2).unwrap();
        let b = LabeledMeasure::with_hard_labels(array![[1.0]], &[1], 2).unwrap();
        assert_eq!(label_aware_cost(&a, &b, 2.0).unwrap().as_array()[[0, 0]], 4.0);

        let q = LabeledMeasure::with_hard_labels(array![[1.0, 1.0], [0.0, 3.0]], &[1, 0], 2).unwrap();
        let tiny = label_aware_cost(&p, &q, 1e-9).unwrap();
        let plain = feature_cost(&p, &q).unwrap();
        for (a, b) in tiny.as_array().iter().zip(plain.as_array()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn label_aware_cost_requires_labels() {
        let p = pts(array![[0.0]]);
        let q = LabeledMeasure::with_hard_labels(array![[1.0]], &[0], 2).unwrap();
        assert!(matches!(label_aware_cost(&p, &q, 1.0), Err(Error::MissingLabels)));
        assert!(label_aware_cost(&q, &q, 0.0).is_err());
    }

    #[test]
    fn exact_ot_examples() {
        let c = CostMatrix::new(array![[7.0]]).unwrap();
        assert_eq!(solve_exact_ot(&c).unwrap().as_array(), &array![[1.0]]);

        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let plan = solve_exact_ot(&c).unwrap();
        assert_eq!(plan.as_array(), &array![[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(transport_cost(&c, &plan).unwrap(), 0.0);

        // Permutation couplings cost 4 (identity) and 5 (swap).
        let c = CostMatrix::new(array![[4.0, 9.0], [1.0, 4.0]]).unwrap();
        let plan = solve_exact_ot(&c).unwrap();
        assert!((transport_cost(&c, &plan).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn exact_ot_rejects_non_finite() {
        assert!(CostMatrix::new(array![[f64::NAN]]).is_err());
        let raw = CostMatrix(array![[f64::INFINITY, 0.0]]);
        assert!(matches!(solve_exact_ot(&raw), Err(Error::NonFinite(_))));
    }

    #[test]
    fn exact_ot_rectangular_marginals() {
        let c = CostMatrix::new(array![[1.0, 2.0, 0.5], [0.0, 3.0, 1.0]]).unwrap();
        let plan = solve_exact_ot(&c).unwrap();
        assert!(plan.marginal_error() < 1e-15);
    }

    #[test]
    fn transport_cost_examples() {
        let p = pts(array![[1.0, 2.0]]);
        let c = feature_cost(&p, &p).unwrap();
        let plan = solve_exact_ot(&c).unwrap();
        assert_eq!(transport_cost(&c, &plan).unwrap(), 0.0);

        let c = CostMatrix::new(array![[25.0]]).unwrap();
        let plan = TransportPlan::from_array_unchecked(array![[1.0]]);
        assert_eq!(transport_cost(&c, &plan).unwrap(), 25.0);

        let bad = TransportPlan::from_array_unchecked(array![[0.5, 0.5]]);
        assert!(transport_cost(&c, &bad).is_err());
    }

    #[test]
    fn barycentric_projection_examples() {
        let q = pts(array![[4.0, -2.0]]);
        let plan = TransportPlan::from_array_unchecked(array![[1.0]]);
        let proj = barycentric_projection(&plan, &q).unwrap();
        assert_eq!(proj.features, array![[4.0, -2.0]]);

        let q = pts(array![[0.0, 1.0], [5.0, 5.0]]);
        let plan = TransportPlan::from_array_unchecked(array![[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(barycentric_projection(&plan, &q).unwrap().features, q.features);

        let q = pts(array![[0.0], [2.0]]);
        let plan = TransportPlan::from_array_unchecked(array![[0.25, 0.25], [0.25, 0.25]]);
        assert_eq!(
            barycentric_projection(&plan, &q).unwrap().features,
            array![[1.0], [1.0]]
        );
    }

    #[test]
    fn barycentric_projection_carries_labels() {
        let q = LabeledMeasure::with_hard_labels(array![[0.0], [2.0]], &[0, 1], 2).unwrap();
        let plan = TransportPlan::from_array_unchecked(array![[0.25, 0.25], [0.25, 0.25]]);
        let proj = barycentric_projection(&plan, &q).unwrap();
        assert_eq!(proj.labels.unwrap(), array![[0.5, 0.5], [0.5, 0.5]]);
        let short = TransportPlan::from_array_unchecked(array![[1.0]]);
        assert!(barycentric_projection(&short, &q).is_err());
    }

    #[test]
    fn measure_validation() {
        assert!(LabeledMeasure::unlabeled(Array2::zeros((0, 2))).is_err());
        assert!(LabeledMeasure::unlabeled(Array2::zeros((2, 0))).is_err());
        assert!(LabeledMeasure::new(array![[0.0]], Some(array![[0.5, 0.4]])).is_err());
        assert!(LabeledMeasure::new(array![[0.0]], Some(array![[0.5, 0.5], [1.0, 0.0]])).is_err());
        assert!(LabeledMeasure::with_hard_labels(array![[0.0]], &[3], 2).is_err());
        let m = LabeledMeasure::new(array![[0.0]], Some(array![[0.25, 0.75]])).unwrap();
        assert_eq!(m.hard_labels().unwrap(), vec![1]);
    }
}
