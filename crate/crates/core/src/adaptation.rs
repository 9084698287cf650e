//! Target classifiers from a learned dictionary.
//!
//! Reconstruction trains one classifier on the labeled barycenter of the
//! atoms under the target's coordinates. Ensembling trains one classifier
//! per atom and mixes their predictions with the target's coordinates.
//! Distillation is reconstruction with a small support of `n_c · SPC` points.

use std::path::Path;

use ndarray::{Array1, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{free_support_barycenter, BarycentricCoordinates};
use crate::classifier::{LinearClassifier, Predictor};
use crate::dictionary::{DadilConfig, Dictionary};
use crate::error::{invalid, Error, Result};
use crate::federation::wire::{decode_classifier, encode_classifier};
use crate::ot::{argmax, LabeledMeasure};
use crate::rng::{substream, substream_seed};

/// The softmax linear classifier used for every target model.
pub type SoftmaxClassifier = LinearClassifier;

/// Empirical risk minimization schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErmConfig {
    pub epochs: usize,
    pub eta: f64,
    /// Mini-batch size; `None` means full-batch steps.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for ErmConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            eta: 0.5,
            batch_size: None,
            seed: 0,
        }
    }
}

/// Labels the target classifiers are trained on: the reconstruction for
/// DaDiL-R and every atom for DaDiL-E.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Soft barycenter labels, cross-entropy against distributions.
    #[default]
    Soft,
    /// One-hot argmax of the barycenter labels.
    Hard,
}

/// Labeled support of `B(α; atoms)` with `support_size` points (the atom
/// size when absent).
pub fn reconstruct_target(
    dict: &Dictionary,
    alpha: &BarycentricCoordinates,
    support_size: Option<usize>,
    config: &DadilConfig,
) -> Result<LabeledMeasure> {
    if alpha.len() != dict.n_atoms() {
        return Err(Error::DimensionMismatch {
            what: "coordinates vs atoms",
            left: alpha.len(),
            right: dict.n_atoms(),
        });
    }
    let bcfg = config.barycenter(support_size, substream_seed(config.seed, "reconstruct", 0));
    Ok(free_support_barycenter(dict.atoms(), alpha, &bcfg, None)?.support)
}

/// Replaces every label row by the one-hot vector of its argmax.
pub fn harden_labels(measure: &LabeledMeasure) -> Result<LabeledMeasure> {
    let classes = measure.hard_labels().ok_or(Error::MissingLabels)?;
    let nc = measure.n_classes().expect("labeled");
    LabeledMeasure::with_hard_labels(measure.features().clone(), &classes, nc)
}

/// Softmax classifier fitted to `data` by mini-batch gradient descent on the
/// soft-target cross-entropy, starting from zero parameters.
pub fn train_erm(data: &LabeledMeasure, config: &ErmConfig) -> Result<SoftmaxClassifier> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let y = data.labels().ok_or(Error::MissingLabels)?;
    if !(config.eta > 0.0 && config.eta.is_finite()) {
        return Err(invalid("eta", "must be positive and finite"));
    }
    if config.batch_size == Some(0) {
        return Err(invalid("batch_size", "must be at least 1"));
    }
    let mut clf = LinearClassifier::zeros(y.ncols(), data.dim());
    let mut rng = substream(config.seed, "erm", 0);
    for _ in 0..config.epochs {
        clf.train_epoch(data.features().view(), y.view(), config.eta, config.batch_size, &mut rng);
    }
    clf.check_finite()?;
    Ok(clf)
}

/// Per-atom classifiers mixed by the target coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<SoftmaxClassifier>,
    alpha: BarycentricCoordinates,
}

impl Ensemble {
    pub fn new(members: Vec<SoftmaxClassifier>, alpha: BarycentricCoordinates) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble members"))?;
        if members.len() != alpha.len() {
            return Err(Error::DimensionMismatch {
                what: "ensemble members vs coordinates",
                left: members.len(),
                right: alpha.len(),
            });
        }
        if members
            .iter()
            .any(|m| m.weights.dim() != first.weights.dim())
        {
            return Err(invalid("members", "all classifiers must share one shape"));
        }
        Ok(Self { members, alpha })
    }

    pub fn members(&self) -> &[SoftmaxClassifier] {
        &self.members
    }

    pub fn alpha(&self) -> &BarycentricCoordinates {
        &self.alpha
    }
}

impl Predictor for Ensemble {
    fn predict_proba(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_classes());
        for (m, &w) in self.members.iter().zip(self.alpha.weights()) {
            out.scaled_add(w, &m.predict_proba(x));
        }
        out
    }

    fn n_classes(&self) -> usize {
        self.members[0].n_classes()
    }
}

/// One classifier per atom, trained in parallel.
pub fn train_ensemble(
    dict: &Dictionary,
    alpha: &BarycentricCoordinates,
    labels: LabelMode,
    config: &ErmConfig,
) -> Result<Ensemble> {
    let members = dict
        .atoms()
        .par_iter()
        .enumerate()
        .map(|(k, atom)| {
            let cfg = ErmConfig {
                seed: substream_seed(config.seed, "ensemble-member", k as u64),
                ..config.clone()
            };
            match labels {
                LabelMode::Soft => train_erm(atom, &cfg),
                LabelMode::Hard => train_erm(&harden_labels(atom)?, &cfg),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members, alpha.clone())
}

/// Mixture of the members' predictive distributions at `z`.
pub fn ensemble_predict(ens: &Ensemble, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let d = ens.members[0].dim();
    if z.len() != d {
        return Err(Error::DimensionMismatch {
            what: "feature vector vs classifier input",
            left: z.len(),
            right: d,
        });
    }
    Ok(ens.predict_proba(z))
}

/// Summary of the target with `n_classes · spc` labeled points.
pub fn distill(
    dict: &Dictionary,
    alpha: &BarycentricCoordinates,
    spc: usize,
    n_classes: usize,
    config: &DadilConfig,
) -> Result<LabeledMeasure> {
    if spc == 0 {
        return Err(invalid("spc", "must be at least 1"));
    }
    if n_classes != dict.n_classes() {
        return Err(Error::DimensionMismatch {
            what: "classes vs dictionary classes",
            left: n_classes,
            right: dict.n_classes(),
        });
    }
    reconstruct_target(dict, alpha, Some(n_classes * spc), config)
}

/// Mean Shannon entropy (nats) of the label rows.
pub fn mean_label_entropy(measure: &LabeledMeasure) -> Result<f64> {
    let y = measure.labels().ok_or(Error::MissingLabels)?;
    if y.nrows() == 0 {
        return Err(Error::Empty("label rows"));
    }
    let total: f64 = y
        .axis_iter(Axis(0))
        .map(|r| r.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>())
        .sum();
    Ok(total / y.nrows() as f64)
}

/// Fraction of rows whose predicted argmax equals the label argmax.
pub fn evaluate_accuracy(model: &dyn Predictor, test: &LabeledMeasure) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let y = test.labels().ok_or(Error::MissingLabels)?;
    let correct = test
        .features()
        .axis_iter(Axis(0))
        .zip(y.axis_iter(Axis(0)))
        .filter(|(x, t)| model.predict(*x) == argmax(*t))
        .count();
    Ok(correct as f64 / test.len() as f64)
}

pub fn save_classifier(path: &Path, classifier: &SoftmaxClassifier) -> Result<()> {
    std::fs::write(path, encode_classifier(classifier)?)?;
    Ok(())
}

pub fn load_classifier(path: &Path) -> Result<SoftmaxClassifier> {
    decode_classifier(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};

    use super::*;
    use crate::ot::ot_distance;

    struct Fixed(Array2<f64>);

    impl Predictor for Fixed {
        fn predict_proba(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
            self.0.row(x[0] as usize).to_owned()
        }

        fn n_classes(&self) -> usize {
            self.0.ncols()
        }
    }

    fn one_point_atom(x: f64, class: usize) -> LabeledMeasure {
        LabeledMeasure::with_hard_labels(array![[x]], &[class], 2).unwrap()
    }

    #[test]
    fn reconstruction_examples() {
        let atom = LabeledMeasure::with_hard_labels(
            array![[0.0, 1.0], [2.0, 0.0], [1.0, 3.0]],
            &[0, 1, 1],
            2,
        )
        .unwrap();
        let dict = Dictionary::new(vec![atom.clone()]).unwrap();
        let cfg = DadilConfig::default();
        let r = reconstruct_target(&dict, &BarycentricCoordinates::uniform(1), None, &cfg).unwrap();
        assert!(ot_distance(&r, &atom, Some(1.0)).unwrap() < 1e-5);

        let pair = Dictionary::new(vec![one_point_atom(0.0, 0), one_point_atom(2.0, 1)]).unwrap();
        let mid = reconstruct_target(&pair, &BarycentricCoordinates::uniform(2), None, &cfg).unwrap();
        assert!((mid.features()[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((mid.labels().unwrap()[[0, 0]] - 0.5).abs() < 1e-12);

        assert!(reconstruct_target(&pair, &BarycentricCoordinates::uniform(3), None, &cfg).is_err());
    }

    #[test]
    fn erm_examples() {
        let x = Array2::from_shape_fn((40, 1), |(i, _)| if i % 2 == 0 { -2.0 - 0.01 * i as f64 } else { 2.0 + 0.01 * i as f64 });
        let classes: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let data = LabeledMeasure::with_hard_labels(x.clone(), &classes, 2).unwrap();
        let clf = train_erm(&data, &ErmConfig::default()).unwrap();
        assert!(evaluate_accuracy(&clf, &data).unwrap() >= 0.99);

        let uniform = LabeledMeasure::new(x, Some(Array2::from_elem((40, 3), 1.0 / 3.0))).unwrap();
        let clf = train_erm(&uniform, &ErmConfig::default()).unwrap();
        let loss = clf.cross_entropy(uniform.features().view(), uniform.labels().unwrap().view());
        assert!((loss - 3f64.ln()).abs() < 1e-2);

        let zero = train_erm(&data, &ErmConfig { epochs: 0, ..ErmConfig::default() }).unwrap();
        assert_eq!(zero, LinearClassifier::zeros(2, 1));

        let empty = LabeledMeasure::with_hard_labels(Array2::zeros((0, 1)), &[], 2);
        if let Ok(e) = empty {
            assert!(train_erm(&e, &ErmConfig::default()).is_err());
        }
    }

    #[test]
    fn ensemble_mixes_member_outputs() {
        let big = 50.0;
        let c0 = LinearClassifier {
            weights: array![[0.0], [0.0]],
            bias: array![big, -big],
        };
        let c1 = LinearClassifier {
            weights: array![[0.0], [0.0]],
            bias: array![-big, big],
        };
        let ens = Ensemble::new(vec![c0.clone(), c1], BarycentricCoordinates::uniform(2)).unwrap();
        let p = ensemble_predict(&ens, array![0.3].view()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);

        let single = Ensemble::new(vec![c0.clone()], BarycentricCoordinates::uniform(1)).unwrap();
        assert_eq!(ensemble_predict(&single, array![1.0].view()).unwrap(), c0.predict_proba(array![1.0].view()));
        assert!(Ensemble::new(vec![c0], BarycentricCoordinates::uniform(2)).is_err());
    }

    #[test]
    fn distillation_size_and_entropy() {
        let dict = Dictionary::random_init(
            crate::dictionary::DictionaryShape {
                atoms: 2,
                atom_size: 9,
                dim: 2,
                n_classes: 3,
            },
            1.0,
            1,
        )
        .unwrap();
        let cfg = DadilConfig::default();
        let alpha = BarycentricCoordinates::uniform(2);
        let s = distill(&dict, &alpha, 1, 3, &cfg).unwrap();
        assert_eq!(s.len(), 3);
        let full = distill(&dict, &alpha, 3, 3, &cfg).unwrap();
        assert_eq!(full, reconstruct_target(&dict, &alpha, None, &cfg).unwrap());
        assert!(distill(&dict, &alpha, 0, 3, &cfg).is_err());

        let m = LabeledMeasure::new(array![[0.0], [1.0]], Some(array![[1.0, 0.0], [0.5, 0.5]])).unwrap();
        assert!((mean_label_entropy(&m).unwrap() - 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn accuracy_examples() {
        let truth = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let test = LabeledMeasure::new(array![[0.0], [1.0], [2.0], [3.0]], Some(truth.clone())).unwrap();
        assert_eq!(evaluate_accuracy(&Fixed(truth.clone()), &test).unwrap(), 1.0);
        let mut wrong = truth.clone();
        wrong.row_mut(3).assign(&array![1.0, 0.0]);
        assert_eq!(evaluate_accuracy(&Fixed(wrong), &test).unwrap(), 0.75);
        let uniform = Array2::from_elem((4, 2), 0.5);
        assert_eq!(evaluate_accuracy(&Fixed(uniform), &test).unwrap(), 0.5);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clf.bin");
        let c = LinearClassifier {
            weights: array![[0.5, 1.5]],
            bias: array![-0.25],
        };
        save_classifier(&p, &c).unwrap();
        assert_eq!(load_classifier(&p).unwrap(), c);
    }
}
