use serde::{Deserialize, Serialize};

use crate::error::{DpvsError, Result};

/// Largest client count for exhaustive coalition enumeration.
pub const MAX_CLIENTS: usize = 16;

/// A subset of client ids stored as a bitmask; bit `i` is client `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coalition(u32);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub fn from_bits(bits: u32) -> Self {
        Coalition(bits)
    }

    pub fn from_members(members: &[usize]) -> Self {
        Coalition(members.iter().fold(0, |acc, &m| acc | (1 << m)))
    }

    pub fn grand(num_clients: usize) -> Self {
        Coalition(((1u64 << num_clients) - 1) as u32)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn size(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, client: usize) -> bool {
        self.0 & (1 << client) != 0
    }

    pub fn with(self, client: usize) -> Self {
        Coalition(self.0 | (1 << client))
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..32).filter(move |i| bits & (1 << i) != 0)
    }

    /// Every subset of `{0, .., num_clients - 1}` in bitmask order.
    pub fn all(num_clients: usize) -> impl Iterator<Item = Coalition> {
        (0..1u32 << num_clients).map(Coalition)
    }
}

pub fn check_client_count(num_clients: usize) -> Result<()> {
    if num_clients == 0 || num_clients > MAX_CLIENTS {
        return Err(DpvsError::TooManyClients {
            n: num_clients,
            limit: MAX_CLIENTS,
            what: "exhaustive coalition enumeration",
        });
    }
    Ok(())
}
