//! Message log of a federated run and its JSON-lines export.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::federation::wire::{CLASSIFIER_HEADER_BYTES, DICTIONARY_HEADER_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ServerToClient,
    ClientToServer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Dictionary,
    ModelWeights,
}

impl PayloadKind {
    fn header_bytes(self) -> usize {
        match self {
            PayloadKind::Dictionary => DICTIONARY_HEADER_BYTES,
            PayloadKind::ModelWeights => CLASSIFIER_HEADER_BYTES,
        }
    }
}

/// One transmission. The schema has no field for barycentric coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub direction: Direction,
    pub round: usize,
    pub client_id: usize,
    pub payload_kind: PayloadKind,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn payload_bytes(&self) -> usize {
        self.payload.len()
    }

    /// Payload bytes excluding the format header.
    pub fn scalar_bytes(&self) -> usize {
        self.payload.len().saturating_sub(self.payload_kind.header_bytes())
    }

    pub fn payload_sha256(&self) -> String {
        hex::encode(Sha256::digest(&self.payload))
    }

    pub fn record(&self) -> MessageRecord {
        MessageRecord {
            direction: self.direction,
            round: self.round,
            client_id: self.client_id,
            payload_kind: self.payload_kind,
            payload_bytes: self.payload_bytes(),
            payload_sha256: self.payload_sha256(),
        }
    }
}

/// Exported form of a [`Message`]: the payload is replaced by its length and
/// hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub direction: Direction,
    pub round: usize,
    pub client_id: usize,
    pub payload_kind: PayloadKind,
    pub payload_bytes: usize,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundBytes {
    pub round: usize,
    pub messages: usize,
    pub server_to_client: usize,
    pub client_to_server: usize,
    /// All payload bytes, headers included.
    pub payload_bytes: usize,
    /// Payload bytes carrying scalars (headers excluded).
    pub scalar_bytes: usize,
}

/// Ordered message log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundTranscript {
    messages: Vec<Message>,
}

impl RoundTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, message: Message) {
        self.messages.push(message);
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Per-round byte totals in round order.
    pub fn round_totals(&self) -> Vec<RoundBytes> {
        let mut totals: Vec<RoundBytes> = Vec::new();
        for m in &self.messages {
            if totals.last().is_none_or(|t| t.round != m.round) {
                totals.push(RoundBytes {
                    round: m.round,
                    messages: 0,
                    server_to_client: 0,
                    client_to_server: 0,
                    payload_bytes: 0,
                    scalar_bytes: 0,
                });
            }
            let t = totals.last_mut().expect("pushed above");
            t.messages += 1;
            match m.direction {
                Direction::ServerToClient => t.server_to_client += 1,
                Direction::ClientToServer => t.client_to_server += 1,
            }
            t.payload_bytes += m.payload_bytes();
            t.scalar_bytes += m.scalar_bytes();
        }
        totals
    }

    pub fn total_payload_bytes(&self) -> usize {
        self.messages.iter().map(Message::payload_bytes).sum()
    }

    /// Writes one JSON object per message.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for m in &self.messages {
            serde_json::to_writer(&mut out, &m.record())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    /// SHA-256 of the JSON-lines export.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_jsonl()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(direction: Direction, round: usize, client_id: usize, len: usize) -> Message {
        Message {
            direction,
            round,
            client_id,
            payload_kind: PayloadKind::Dictionary,
            payload: vec![0; len],
        }
    }

    #[test]
    fn totals_group_by_round() {
        let mut t = RoundTranscript::new();
        t.push(msg(Direction::ServerToClient, 0, 0, 28));
        t.push(msg(Direction::ClientToServer, 0, 0, 28));
        t.push(msg(Direction::ServerToClient, 1, 0, 28));
        let totals = t.round_totals();
        assert_eq!(totals.len(), 2);
        assert_eq!(totals[0].payload_bytes, 56);
        assert_eq!(totals[0].scalar_bytes, 16);
        assert_eq!(totals[0].client_to_server, 1);
        assert_eq!(totals[1].messages, 1);
    }

    #[test]
    fn jsonl_hides_payload() {
        let mut t = RoundTranscript::new();
        t.push(msg(Direction::ClientToServer, 3, 2, 24));
        let line = t.to_jsonl().unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["direction"], "client_to_server");
        assert_eq!(v["payload_bytes"], 24);
        assert_eq!(v["payload_sha256"].as_str().unwrap().len(), 64);
        assert!(v.get("payload").is_none());
        assert!(v.get("alpha").is_none());
    }
}
