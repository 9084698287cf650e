//! Federated dictionary learning: server state, aggregation, the round loop,
//! message transport, and the FedAVG linear baseline.

mod cost;
mod fedavg;
pub mod transcript;
pub mod wire;

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cost::{communication_cost, communication_report, CommunicationReport};
pub use fedavg::{fedavg_classifier, FedAvgConfig};
pub use transcript::{Direction, Message, MessageRecord, PayloadKind, RoundBytes, RoundTranscript};

use crate::barycenter::BarycentricCoordinates;
use crate::dictionary::{
    atom_combine, client_update, global_loss, ClientState, DadilConfig, Dictionary,
    DictionaryShape, LocalTrainingParams, LossReport,
};
use crate::error::{invalid, Error, Result};
use crate::rng::substream_seed;

/// What the server holds between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global_dictionary: Dictionary,
    pub round: usize,
}

/// Uniform mean of the client versions, accumulated as a running mean
/// `m_i = m_{i-1} + (v_i - m_{i-1}) / i` through [`atom_combine`]. Identical
/// versions are returned bit for bit.
pub fn server_aggregate(versions: &[Dictionary]) -> Result<Dictionary> {
    let (first, rest) = versions
        .split_first()
        .ok_or(Error::Empty("dictionary versions"))?;
    let mut mean = first.clone();
    for (i, v) in rest.iter().enumerate() {
        let diff = atom_combine(v, &mean, -1.0)?;
        mean = atom_combine(&mean, &diff, 1.0 / (i + 2) as f64)?;
    }
    Ok(mean)
}

/// Moves messages between the server and the clients.
pub trait Transport {
    fn send(&mut self, message: Message) -> Result<()>;

    /// Next pending message for `client_id` travelling in `direction`.
    fn receive(&mut self, direction: Direction, client_id: usize) -> Result<Message>;
}

/// FIFO queue shared by both ends of a simulated run.
#[derive(Debug, Default)]
pub struct InMemoryTransport {
    queue: VecDeque<Message>,
}

impl InMemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

impl Transport for InMemoryTransport {
    fn send(&mut self, message: Message) -> Result<()> {
        self.queue.push_back(message);
        Ok(())
    }

    fn receive(&mut self, direction: Direction, client_id: usize) -> Result<Message> {
        let pos = self
            .queue
            .iter()
            .position(|m| m.direction == direction && m.client_id == client_id)
            .ok_or_else(|| {
                Error::Wire(format!("no pending {direction:?} message for client {client_id}"))
            })?;
        Ok(self.queue.remove(pos).expect("position is in range"))
    }
}

/// Settings of a federated dictionary-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedConfig {
    /// Communication rounds `R`.
    pub rounds: usize,
    /// Number of atoms `K`.
    pub n_atoms: usize,
    /// Support points per atom `n`.
    pub atom_size: usize,
    /// Standard deviation of the initial atom features.
    pub init_scale: f64,
    pub local: LocalTrainingParams,
    pub dadil: DadilConfig,
    pub seed: u64,
}

/// Output of [`run_feddadil`].
#[derive(Debug, Clone)]
pub struct FederatedRun {
    pub dictionary: Dictionary,
    /// Global loss after each round's aggregation.
    pub history: Vec<LossReport>,
    pub transcript: RoundTranscript,
}

fn check_clients(clients: &[ClientState]) -> Result<(usize, usize)> {
    if clients.len() < 2 {
        return Err(invalid(
            "clients",
            format!("at least 2 clients are required, got {}", clients.len()),
        ));
    }
    let (sources, target) = clients.split_at(clients.len() - 1);
    if !target[0].is_target() {
        return Err(Error::Config(
            "the last client is the target and must not carry labels".into(),
        ));
    }
    let d = target[0].data().dim();
    let mut n_classes = None;
    for c in sources {
        let nc = c.data().n_classes().ok_or_else(|| {
            Error::Config(format!("source client {} has no labels", c.id))
        })?;
        if *n_classes.get_or_insert(nc) != nc {
            return Err(Error::DimensionMismatch {
                what: "client class counts",
                left: n_classes.unwrap_or(0),
                right: nc,
            });
        }
        if c.data().dim() != d {
            return Err(Error::DimensionMismatch {
                what: "client feature dimensions",
                left: d,
                right: c.data().dim(),
            });
        }
    }
    Ok((d, n_classes.expect("at least one source")))
}

/// Full-participation federated dictionary learning.
///
/// The server initializes the atoms and every client resets its coordinates
/// to uniform. Each round the server sends the global dictionary to every
/// client, the clients run [`client_update`] concurrently and send their
/// local dictionaries back, and the server replaces the global dictionary by
/// their mean. Clients always work on the decoded payload, so everything
/// they see passed through the wire format. Messages are logged in
/// `(direction, client id)` order.
pub fn run_feddadil(
    clients: &mut [ClientState],
    config: &FederatedConfig,
    transport: &mut dyn Transport,
) -> Result<FederatedRun> {
    let (dim, n_classes) = check_clients(clients)?;
    if config.n_atoms == 0 || config.atom_size == 0 {
        return Err(invalid("dictionary shape", "K and n must be positive"));
    }
    if config.rounds > 0 {
        config.local.validate(config.atom_size)?;
    }
    let shape = DictionaryShape {
        atoms: config.n_atoms,
        atom_size: config.atom_size,
        dim,
        n_classes,
    };
    let init = Dictionary::random_init(
        shape,
        config.init_scale,
        substream_seed(config.seed, "atoms", 0),
    )?;
    let mut server = ServerState {
        global_dictionary: wire::at_wire_precision(&init)?,
        round: 0,
    };
    for c in clients.iter_mut() {
        c.set_alpha(BarycentricCoordinates::uniform(config.n_atoms));
    }

    let mut transcript = RoundTranscript::new();
    let mut history = Vec::with_capacity(config.rounds);
    let ids: Vec<usize> = clients.iter().map(|c| c.id).collect();
    while server.round < config.rounds {
        let round = server.round;
        let payload = wire::encode_dictionary(&server.global_dictionary)?;
        for &id in &ids {
            let m = Message {
                direction: Direction::ServerToClient,
                round,
                client_id: id,
                payload_kind: PayloadKind::Dictionary,
                payload: payload.clone(),
            };
            transcript.push(m.clone());
            transport.send(m)?;
        }

        let incoming = ids
            .iter()
            .map(|&id| {
                let m = transport.receive(Direction::ServerToClient, id)?;
                wire::decode_dictionary(&m.payload)
            })
            .collect::<Result<Vec<_>>>()?;
        let round_seed = substream_seed(config.seed, "client-round", round as u64);
        let local_versions = clients
            .par_iter_mut()
            .zip(incoming.par_iter())
            .map(|(client, dict)| client_update(client, dict, &config.local, &config.dadil, round_seed))
            .collect::<Result<Vec<_>>>()?;

        for (&id, dict) in ids.iter().zip(&local_versions) {
            let m = Message {
                direction: Direction::ClientToServer,
                round,
                client_id: id,
                payload_kind: PayloadKind::Dictionary,
                payload: wire::encode_dictionary(dict)?,
            };
            transcript.push(m.clone());
            transport.send(m)?;
        }

        let received = ids
            .iter()
            .map(|&id| {
                let m = transport.receive(Direction::ClientToServer, id)?;
                wire::decode_dictionary(&m.payload)
            })
            .collect::<Result<Vec<_>>>()?;
        let next = server_aggregate(&received)?;
        if next.shape() != server.global_dictionary.shape() {
            return Err(Error::Solver("aggregated dictionary changed shape"));
        }
        server.global_dictionary = next;
        server.round += 1;
        history.push(global_loss(clients, &server.global_dictionary, &config.dadil)?);
    }

    Ok(FederatedRun {
        dictionary: server.global_dictionary,
        history,
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};

    use super::*;
    use crate::ot::LabeledMeasure;

    fn one_point(x: f64, y: [f64; 2]) -> Dictionary {
        Dictionary::from_atoms_unchecked(vec![LabeledMeasure::from_parts_unchecked(
            array![[x, -x]],
            Some(array![[y[0], y[1]]]),
        )])
        .unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let a = one_point(1.5, [1.0, 0.0]);
        assert_eq!(server_aggregate(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);

        let z = server_aggregate(&[one_point(2.0, [1.0, 0.0]), one_point(-2.0, [1.0, 0.0])]).unwrap();
        assert!(z.atoms()[0].features().iter().all(|&v| v == 0.0));

        let m = server_aggregate(&[
            one_point(1.0, [1.0, 0.0]),
            one_point(2.0, [0.0, 1.0]),
            one_point(6.0, [0.5, 0.5]),
        ])
        .unwrap();
        assert!((m.atoms()[0].features()[[0, 0]] - 3.0).abs() < 1e-12);
        let y = m.atoms()[0].labels().unwrap();
        assert!((y[[0, 0]] - 0.5).abs() < 1e-12 && (y[[0, 1]] - 0.5).abs() < 1e-12);

        assert!(server_aggregate(&[]).is_err());
        let bigger = Dictionary::random_init(
            DictionaryShape {
                atoms: 2,
                atom_size: 1,
                dim: 2,
                n_classes: 2,
            },
            1.0,
            0,
        )
        .unwrap();
        assert!(server_aggregate(&[a, bigger]).is_err());
    }

    fn clients() -> Vec<ClientState> {
        let src = |shift: f64, id: usize| {
            let x = Array2::from_shape_fn((12, 2), |(i, j)| {
                (i % 2) as f64 * 3.0 + shift + 0.1 * j as f64 + 0.01 * i as f64
            });
            let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();
            ClientState::new(id, LabeledMeasure::with_hard_labels(x, &labels, 2).unwrap(), 2)
        };
        let target = LabeledMeasure::unlabeled(Array2::from_shape_fn((12, 2), |(i, j)| {
            (i % 2) as f64 * 3.0 + 0.5 + 0.2 * j as f64
        }))
        .unwrap();
        vec![src(0.0, 0), src(1.0, 1), ClientState::new(2, target, 2)]
    }

    fn config(rounds: usize, epochs: usize) -> FederatedConfig {
        FederatedConfig {
            rounds,
            n_atoms: 2,
            atom_size: 6,
            init_scale: 1.0,
            local: LocalTrainingParams {
                epochs,
                batch_size: 3,
                eta: 0.1,
                alpha_eta: None,
            },
            dadil: DadilConfig::default(),
            seed: 11,
        }
    }

    #[test]
    fn zero_rounds_return_the_initial_dictionary() {
        let mut cs = clients();
        let run = run_feddadil(&mut cs, &config(0, 1), &mut InMemoryTransport::new()).unwrap();
        assert!(run.history.is_empty());
        assert!(run.transcript.is_empty());
        assert_eq!(run.dictionary.n_atoms(), 2);
    }

    #[test]
    fn zero_epochs_keep_the_dictionary() {
        let mut cs = clients();
        let init = run_feddadil(&mut cs, &config(0, 0), &mut InMemoryTransport::new()).unwrap();
        let run = run_feddadil(&mut cs, &config(3, 0), &mut InMemoryTransport::new()).unwrap();
        assert_eq!(run.dictionary, init.dictionary);
        assert_eq!(run.history.len(), 3);
    }

    #[test]
    fn transcript_accounting_and_determinism() {
        let mut cs = clients();
        let mut transport = InMemoryTransport::new();
        let run = run_feddadil(&mut cs, &config(2, 1), &mut transport).unwrap();
        assert_eq!(transport.pending(), 0);
        let per_round = 2 * 3 * 2 * 6 * (2 + 2) * 4;
        for t in run.transcript.round_totals() {
            assert_eq!(t.server_to_client, 3);
            assert_eq!(t.client_to_server, 3);
            assert_eq!(t.scalar_bytes, per_round);
        }
        let mut again = clients();
        let rerun = run_feddadil(&mut again, &config(2, 1), &mut InMemoryTransport::new()).unwrap();
        assert_eq!(rerun.dictionary, run.dictionary);
        assert_eq!(rerun.transcript, run.transcript);
    }

    #[test]
    fn configuration_errors() {
        let mut cs = clients();
        assert!(run_feddadil(&mut cs[..1], &config(1, 1), &mut InMemoryTransport::new()).is_err());
        let mut labeled_target = clients();
        labeled_target.swap(0, 2);
        assert!(run_feddadil(&mut labeled_target, &config(1, 1), &mut InMemoryTransport::new())
            .is_err());
    }
}
