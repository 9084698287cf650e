use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::LinearClassifier;
use crate::error::{invalid, Error, Result};
use crate::ot::LabeledMeasure;
use crate::rng::substream;

/// FedAVG schedule for the softmax baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedAvgConfig {
    pub rounds: usize,
    /// Local epochs per round.
    pub epochs: usize,
    /// Mini-batch size; `None` means full-batch steps.
    pub batch_size: Option<usize>,
    pub eta: f64,
    pub seed: u64,
}

/// Federated averaging of a softmax linear classifier over the labeled
/// clients. Every client starts each round from the broadcast parameters
/// (zeros at round 0), runs its local epochs, and the server takes the
/// unweighted mean.
pub fn fedavg_classifier(
    clients: &[LabeledMeasure],
    config: &FedAvgConfig,
) -> Result<LinearClassifier> {
    let first = clients.first().ok_or(Error::Empty("labeled clients"))?;
    let n_classes = first.n_classes().ok_or(Error::MissingLabels)?;
    let dim = first.dim();
    for c in clients {
        if c.n_classes() != Some(n_classes) || c.dim() != dim {
            return Err(invalid("clients", "all clients need labels of one shape"));
        }
        if c.is_empty() {
            return Err(Error::Empty("client data"));
        }
    }
    if !(config.eta > 0.0 && config.eta.is_finite()) {
        return Err(invalid("eta", "must be positive and finite"));
    }
    if config.batch_size == Some(0) {
        return Err(invalid("batch_size", "must be at least 1"));
    }

    let mut global = LinearClassifier::zeros(n_classes, dim);
    let n = clients.len() as u64;
    for round in 0..config.rounds {
        let locals: Vec<LinearClassifier> = clients
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let mut local = global.clone();
                let mut rng = substream(config.seed, "fedavg", round as u64 * n + i as u64);
                let y = c.labels().expect("checked labeled");
                for _ in 0..config.epochs {
                    local.train_epoch(c.features().view(), y.view(), config.eta, config.batch_size, &mut rng);
                }
                local
            })
            .collect();
        let mut mean = LinearClassifier::zeros(n_classes, dim);
        for l in &locals {
            mean.weights += &l.weights;
            mean.bias += &l.bias;
        }
        mean.weights /= locals.len() as f64;
        mean.bias /= locals.len() as f64;
        mean.check_finite()?;
        global = mean;
    }
    Ok(global)
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};

    use super::*;
    use crate::classifier::Predictor;

    fn separable() -> LabeledMeasure {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| {
            let side = if i % 2 == 0 { -1.0 } else { 1.0 };
            side * (1.0 + 0.1 * i as f64) + 0.3 * j as f64
        });
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        LabeledMeasure::with_hard_labels(x, &y, 2).unwrap()
    }

    fn cfg(rounds: usize) -> FedAvgConfig {
        FedAvgConfig {
            rounds,
            epochs: 1,
            batch_size: None,
            eta: 0.5,
            seed: 0,
        }
    }

    #[test]
    fn one_client_one_round_is_plain_gradient_descent() {
        let data = separable();
        let fed = fedavg_classifier(std::slice::from_ref(&data), &cfg(1)).unwrap();
        let mut central = LinearClassifier::zeros(2, 2);
        central.gradient_step(data.features().view(), data.labels().unwrap().view(), 0.5);
        assert_eq!(fed, central);
    }

    #[test]
    fn identical_clients_match_a_single_client() {
        let data = separable();
        let two = fedavg_classifier(&[data.clone(), data.clone()], &cfg(5)).unwrap();
        let one = fedavg_classifier(&[data], &cfg(5)).unwrap();
        for (a, b) in two.weights.iter().zip(one.weights.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_data_is_fitted() {
        let data = separable();
        let c = fedavg_classifier(&[data.clone()], &cfg(200)).unwrap();
        let labels = data.hard_labels().unwrap();
        let correct = data
            .features()
            .rows()
            .into_iter()
            .zip(&labels)
            .filter(|(x, &y)| c.predict(*x) == y)
            .count();
        assert_eq!(correct, 20);
    }

    #[test]
    fn single_class_client_is_allowed() {
        let data = LabeledMeasure::with_hard_labels(array![[1.0], [2.0]], &[1, 1], 2).unwrap();
        assert!(fedavg_classifier(&[data], &cfg(3)).is_ok());
    }
}
