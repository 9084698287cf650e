//! Federated dataset dictionary learning.
//!
//! Clients model their empirical feature distributions as Wasserstein
//! barycenters of a shared dictionary of labeled atoms. The atoms are learned
//! federatedly and averaged by the server; each client's barycentric
//! coordinates never leave the client.
//!
//! Layout:
//!
//! - [`ot`]: ground costs, exact OT, barycentric projection, simplex projection
//! - [`barycenter`]: free-support barycenters `B(α; P)`
//! - [`dictionary`]: the dictionary objective, fixed-plan gradients and the
//!   client-side update
//! - [`federation`]: round loop, aggregation, wire format, transcripts and the
//!   FedAVG linear baseline
//! - [`adaptation`]: target classifiers by reconstruction and by ensembling,
//!   and dataset distillation
//! - [`datasets`]: synthetic multi-domain benchmarks and feature CSV files
//! - [`experiment`]: end-to-end experiment drivers used by the CLI

pub mod adaptation;
pub mod barycenter;
pub mod classifier;
pub mod datasets;
pub mod dictionary;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod ot;
pub mod rng;

pub use barycenter::{
    free_support_barycenter, BarycenterConfig, BarycenterResult, BarycentricCoordinates,
};
pub use classifier::LinearClassifier;
pub use dictionary::{ClientState, DadilConfig, Dictionary, LossReport};
pub use error::{Error, Result};
pub use ot::{CostMatrix, LabeledMeasure, TransportPlan};
