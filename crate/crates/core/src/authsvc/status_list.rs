//! Revocation bitstring: bit `i` is the state of the credential with
//! `revocationListIndex = i` (1 = revoked). Bits are little-endian within
//! each byte. The wire encoding is raw DEFLATE followed by base64url.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jose::{b64url_decode, b64url_encode};

pub const DEFAULT_CAPACITY: usize = 16_384;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatusListError {
    #[error("revocation list exhausted ({0} indices issued)")]
    Exhausted(usize),
    #[error("index {index} not yet allocated (next index {next})")]
    OutOfRange { index: u64, next: usize },
    #[error("encoded list is invalid: {0}")]
    Encoding(String),
}

/// A fixed-capacity bitstring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitString {
    bytes: Vec<u8>,
    capacity: usize,
}

impl BitString {
    pub fn zeroed(capacity: usize) -> Self {
        BitString {
            bytes: vec![0; capacity.div_ceil(8)],
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Out-of-range indices read as set, so callers fail closed.
    pub fn get(&self, index: u64) -> bool {
        if index >= self.capacity as u64 {
            return true;
        }
        let i = index as usize;
        self.bytes[i / 8] & (1 << (i % 8)) != 0
    }

    fn set(&mut self, index: usize) {
        self.bytes[index / 8] |= 1 << (index % 8);
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> Vec<u64> {
        (0..self.capacity as u64).filter(|i| self.get(*i)).collect()
    }

    pub fn encode(&self) -> String {
        let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
        enc.write_all(&self.bytes).expect("in-memory write");
        b64url_encode(enc.finish().expect("in-memory deflate"))
    }

    pub fn decode(encoded: &str, capacity: usize) -> Result<Self, StatusListError> {
        let compressed =
            b64url_decode(encoded).map_err(|err| StatusListError::Encoding(err.to_string()))?;
        let expected = capacity.div_ceil(8);
        let mut bytes = Vec::with_capacity(expected);
        // Bound the inflated size; a hostile list must not balloon memory.
        DeflateDecoder::new(compressed.as_slice())
            .take(expected as u64 + 1)
            .read_to_end(&mut bytes)
            .map_err(|err| StatusListError::Encoding(err.to_string()))?;
        if bytes.len() != expected {
            return Err(StatusListError::Encoding(format!(
                "expected {expected} bytes, inflated {}",
                bytes.len()
            )));
        }
        Ok(BitString { bytes, capacity })
    }
}

/// Issuer-side list with index allocation.
#[derive(Debug, Clone)]
pub struct RevocationList {
    bits: BitString,
    next_index: usize,
}

impl RevocationList {
    pub fn new(capacity: usize) -> Self {
        RevocationList {
            bits: BitString::zeroed(capacity),
            next_index: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.bits.capacity()
    }

    pub fn next_index(&self) -> usize {
        self.next_index
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn allocate(&mut self) -> Result<u64, StatusListError> {
        if self.next_index >= self.bits.capacity() {
            return Err(StatusListError::Exhausted(self.next_index));
        }
        let index = self.next_index;
        self.next_index += 1;
        Ok(index as u64)
    }

    /// Sets the bit for `index`. Idempotent.
    pub fn revoke(&mut self, index: u64) -> Result<(), StatusListError> {
        if index >= self.next_index as u64 {
            return Err(StatusListError::OutOfRange {
                index,
                next: self.next_index,
            });
        }
        self.bits.set(index as usize);
        Ok(())
    }

    pub fn is_revoked(&self, index: u64) -> bool {
        self.bits.get(index)
    }
}

/// Subject of the signed status-list credential.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatusListSubject {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub capacity: usize,
    pub encoded_list: String,
}

impl StatusListSubject {
    pub fn decode(&self) -> Result<BitString, StatusListError> {
        BitString::decode(&self.encoded_list, self.capacity)
    }
}
