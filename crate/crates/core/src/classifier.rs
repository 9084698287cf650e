//! Single-layer softmax classifier on feature vectors.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ot::argmax;

/// Linear map `features -> logits` followed by a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `n_c x d`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Anything that maps a feature vector to a distribution over classes.
pub trait Predictor {
    fn predict_proba(&self, x: ArrayView1<'_, f64>) -> Array1<f64>;

    fn n_classes(&self) -> usize;

    /// Argmax class, lowest index on ties.
    fn predict(&self, x: ArrayView1<'_, f64>) -> usize {
        argmax(self.predict_proba(x).view())
    }
}

fn softmax_in_place(mut z: ndarray::ArrayViewMut1<'_, f64>) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    z.mapv_inplace(|v| (v - max).exp());
    let s = z.sum();
    z.mapv_inplace(|v| v / s);
}

impl LinearClassifier {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self {
            weights: Array2::zeros((n_classes, dim)),
            bias: Array1::zeros(n_classes),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Row-wise class probabilities for a batch.
    pub fn predict_proba_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut logits = x.dot(&self.weights.t()) + &self.bias;
        for row in logits.axis_iter_mut(Axis(0)) {
            softmax_in_place(row);
        }
        logits
    }

    /// Mean soft-target cross-entropy `-(1/n) Σ_i Σ_c y_ic log p_ic`.
    pub fn cross_entropy(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
        let p = self.predict_proba_batch(x);
        let n = x.nrows() as f64;
        -p.iter()
            .zip(y.iter())
            .map(|(&pi, &yi)| if yi > 0.0 { yi * pi.max(1e-300).ln() } else { 0.0 })
            .sum::<f64>()
            / n
    }

    /// One gradient-descent step on the mean cross-entropy of a batch.
    pub fn gradient_step(&mut self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, eta: f64) {
        let n = x.nrows() as f64;
        let residual = self.predict_proba_batch(x) - y;
        let grad_w = residual.t().dot(&x) / n;
        let grad_b = residual.sum_axis(Axis(0)) / n;
        self.weights.scaled_add(-eta, &grad_w);
        self.bias.scaled_add(-eta, &grad_b);
    }

    /// One pass over `(x, y)` in shuffled mini-batches; `batch_size = None`
    /// takes a single full-batch step.
    pub(crate) fn train_epoch(
        &mut self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        eta: f64,
        batch_size: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) {
        let n = x.nrows();
        match batch_size {
            None => self.gradient_step(x, y, eta),
            Some(b) if b >= n => self.gradient_step(x, y, eta),
            Some(b) => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(rng);
                for chunk in order.chunks(b) {
                    let xb = x.select(Axis(0), chunk);
                    let yb = y.select(Axis(0), chunk);
                    self.gradient_step(xb.view(), yb.view(), eta);
                }
            }
        }
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("classifier parameters"))
        }
    }
}

impl Predictor for LinearClassifier {
    fn predict_proba(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut z = self.weights.dot(&x) + &self.bias;
        softmax_in_place(z.view_mut());
        z
    }

    fn n_classes(&self) -> usize {
        self.weights.nrows()
    }
}
