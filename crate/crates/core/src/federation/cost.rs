use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::federation::wire::SCALAR_BYTES;

const BITS_PER_SCALAR: u64 = 32;

/// Scalars in one dictionary transmission, `K · n · (d + n_c)`.
pub fn communication_cost(k: usize, n: usize, d: usize, n_c: usize) -> Result<u64> {
    if k == 0 || n == 0 || d == 0 || n_c == 0 {
        return Err(invalid("communication_cost", "all sizes must be positive"));
    }
    let overflow = || invalid("communication_cost", "parameter count overflows u64");
    let width = (d as u64).checked_add(n_c as u64).ok_or_else(overflow)?;
    (k as u64)
        .checked_mul(n as u64)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(overflow)
}

/// Communication accounting for one dictionary shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunicationReport {
    pub parameters: u64,
    /// `parameters × 32`.
    pub bits: u64,
    /// Scalar bytes exchanged per round by `n_clients` clients, both
    /// directions.
    pub round_bytes: u64,
    pub reference_parameters: Option<u64>,
    /// `parameters / reference_parameters`.
    pub ratio_to_reference: Option<f64>,
}

pub fn communication_report(
    k: usize,
    n: usize,
    d: usize,
    n_c: usize,
    n_clients: usize,
    reference_parameters: Option<u64>,
) -> Result<CommunicationReport> {
    let parameters = communication_cost(k, n, d, n_c)?;
    let overflow = || invalid("communication_report", "byte count overflows u64");
    let bits = parameters.checked_mul(BITS_PER_SCALAR).ok_or_else(overflow)?;
    let round_bytes = parameters
        .checked_mul(SCALAR_BYTES as u64)
        .and_then(|v| v.checked_mul(2 * n_clients as u64))
        .ok_or_else(overflow)?;
    if reference_parameters == Some(0) {
        return Err(invalid("reference_parameters", "must be positive"));
    }
    Ok(CommunicationReport {
        parameters,
        bits,
        round_bytes,
        reference_parameters,
        ratio_to_reference: reference_parameters.map(|r| parameters as f64 / r as f64),
    })
}
