//! Core vocabulary: model shapes, cache entries, compression choices, and
//! device tiers.
//!
//! Sizes are exact integer byte counts throughout; only utilities and delays
//! are floating point. A compression rate is the fraction of the full
//! uncompressed size that survives, so rate 1.0 is the identity (FULL) and
//! smaller is more aggressive.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformer geometry needed to size a KV cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub num_layers: u32,
    pub num_kv_heads: u32,
    pub head_dim: u32,
    /// Bytes per stored element: 1, 2, or 4.
    pub bytes_per_element: u32,
}

impl ModelShape {
    pub fn new(num_layers: u32, num_kv_heads: u32, head_dim: u32, bytes_per_element: u32) -> Result<Self> {
        if num_layers == 0 || num_kv_heads == 0 || head_dim == 0 {
            return Err(Error::Config("model shape dimensions must be at least 1".into()));
        }
        if !matches!(bytes_per_element, 1 | 2 | 4) {
            return Err(Error::Config(format!(
                "bytes_per_element must be 1, 2, or 4, got {bytes_per_element}"
            )));
        }
        Ok(ModelShape { num_layers, num_kv_heads, head_dim, bytes_per_element })
    }

    /// KV bytes per token: key and value planes across all layers and heads.
    pub fn bytes_per_token(&self) -> u64 {
        2 * self.num_layers as u64
            * self.num_kv_heads as u64
            * self.head_dim as u64
            * self.bytes_per_element as u64
    }
}

/// Identifier of a cached context. Cheap to clone and totally ordered so
/// planner tie-breaking is deterministic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntryId(Arc<str>);

impl EntryId {
    pub fn new(id: impl AsRef<str>) -> Self {
        EntryId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntryId {
    fn from(s: &str) -> Self {
        EntryId::new(s)
    }
}

/// How many request timestamps an entry keeps verbatim. Older mass is folded
/// into a decayed scalar so frequency estimates are unaffected by the cap.
pub const HIT_WINDOW: usize = 64;

/// One cached context: identity, size, and its request history.
///
/// `hit_history` records every request for the context, hit or miss, since
/// both are evidence of future reuse. Timestamps are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub id: EntryId,
    pub token_count: u64,
    /// Uncompressed size in bytes; always `token_count * bytes_per_token`.
    pub full_size: u64,
    pub class_tag: String,
    pub created_at: f64,
    hit_history: Vec<f64>,
    /// Decayed count of requests that fell out of the window, valid at
    /// `carry_at`.
    carry_mass: f64,
    carry_at: f64,
}

impl CacheEntry {
    pub fn new(
        id: EntryId,
        token_count: u64,
        class_tag: impl Into<String>,
        shape: &ModelShape,
        created_at: f64,
    ) -> Result<Self> {
        if token_count == 0 {
            return Err(Error::Config("token_count must be at least 1".into()));
        }
        Ok(CacheEntry {
            id,
            token_count,
            full_size: token_count * shape.bytes_per_token(),
            class_tag: class_tag.into(),
            created_at,
            hit_history: Vec::new(),
            carry_mass: 0.0,
            carry_at: created_at,
        })
    }

    /// Record a request for this context at `now`. Requests at or before the
    /// previous timestamp are dropped so the history stays strictly
    /// increasing; that only happens with hand-crafted traces.
    pub fn record_request(&mut self, now: f64, half_life: f64) {
        if let Some(&last) = self.hit_history.last() {
            if now <= last {
                return;
            }
        }
        self.hit_history.push(now);
        if self.hit_history.len() > HIT_WINDOW {
            let oldest = self.hit_history.remove(0);
            let decay = ((self.carry_at - oldest) / half_life).exp2();
            self.carry_mass = self.carry_mass * decay + 1.0;
            self.carry_at = oldest;
        }
    }

    pub fn hit_history(&self) -> &[f64] {
        &self.hit_history
    }

    /// Decayed request mass at `now`: every recorded request weighted by
    /// 2^-(age / half_life), including the folded tail.
    pub fn decayed_mass(&self, now: f64, half_life: f64) -> f64 {
        let mut mass = 0.0;
        if self.carry_mass > 0.0 {
            mass += self.carry_mass * ((self.carry_at - now) / half_life).exp2();
        }
        for &t in &self.hit_history {
            mass += ((t - now) / half_life).exp2();
        }
        mass
    }

    pub fn last_access(&self) -> f64 {
        self.hit_history.last().copied().unwrap_or(self.created_at)
    }
}

/// Compression method family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    /// Group quantization of cache elements to a narrow integer width.
    Quantize,
    /// Dropping whole tokens, keeping attention sinks and the recent tail.
    TokenDrop,
}

impl MethodKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodKind::Quantize => "quantize",
            MethodKind::TokenDrop => "tokendrop",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A method together with the rates it can actually produce. Rates are
/// ascending, in (0, 1], and always include 1.0 (FULL).
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionMethod {
    pub kind: MethodKind,
    pub available_rates: Vec<f64>,
}

impl CompressionMethod {
    pub fn new(kind: MethodKind, mut rates: Vec<f64>) -> Result<Self> {
        if rates.iter().any(|r| !r.is_finite() || *r <= 0.0 || *r > 1.0) {
            return Err(Error::Config(format!("{kind} rates must lie in (0, 1]")));
        }
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        if rates.last() != Some(&1.0) {
            rates.push(1.0);
        }
        Ok(CompressionMethod { kind, available_rates: rates })
    }
}

/// A concrete stored representation: which method and how hard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredChoice {
    pub method: MethodKind,
    pub rate: f64,
}

impl StoredChoice {
    pub fn new(method: MethodKind, rate: f64) -> Result<Self> {
        if !rate.is_finite() || rate <= 0.0 || rate > 1.0 {
            return Err(Error::Config(format!("compression rate must lie in (0, 1], got {rate}")));
        }
        Ok(StoredChoice { method, rate })
    }

    pub fn is_full(&self) -> bool {
        self.rate == 1.0
    }
}

impl fmt::Display for StoredChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.method, self.rate)
    }
}

/// What to do with an entry: store it in some representation, or store
/// nothing and recompute the KV cache on every request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompressionChoice {
    Stored(StoredChoice),
    Recompute,
}

impl CompressionChoice {
    pub fn stored(method: MethodKind, rate: f64) -> Result<Self> {
        Ok(CompressionChoice::Stored(StoredChoice::new(method, rate)?))
    }

    pub fn as_stored(&self) -> Option<&StoredChoice> {
        match self {
            CompressionChoice::Stored(c) => Some(c),
            CompressionChoice::Recompute => None,
        }
    }
}

impl fmt::Display for CompressionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressionChoice::Stored(c) => c.fmt(f),
            CompressionChoice::Recompute => f.write_str("recompute"),
        }
    }
}

/// Bytes an entry occupies under a stored choice: `ceil(rate * full_size)`.
/// Rate 1.0 is exactly the identity. Errors on RECOMPUTE, which occupies no
/// bytes and has no compressed size.
pub fn compressed_size(full_size: u64, choice: &CompressionChoice) -> Result<u64> {
    match choice {
        CompressionChoice::Stored(c) => Ok(stored_size(full_size, c.rate)),
        CompressionChoice::Recompute => {
            Err(Error::Contract("compressed_size is undefined for RECOMPUTE".into()))
        }
    }
}

/// `ceil(rate * full_size)` without the choice wrapper.
pub fn stored_size(full_size: u64, rate: f64) -> u64 {
    if rate >= 1.0 {
        return full_size;
    }
    (rate * full_size as f64).ceil() as u64
}

/// One level of the storage hierarchy. Tiers in a profile are ordered
/// fastest first and read bandwidth is non-increasing down the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceTier {
    pub name: String,
    pub capacity_bytes: u64,
    pub read_bw_bytes_per_s: f64,
    pub write_bw_bytes_per_s: f64,
    /// Seconds per uncompressed byte to decode each method on this tier's
    /// consumer. Not charged for FULL, which needs no decode.
    pub decompress_s_per_byte: DecompressCoeff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompressCoeff {
    pub quantize: f64,
    pub tokendrop: f64,
}

impl DecompressCoeff {
    pub fn get(&self, kind: MethodKind) -> f64 {
        match kind {
            MethodKind::Quantize => self.quantize,
            MethodKind::TokenDrop => self.tokendrop,
        }
    }
}

impl DeviceTier {
    pub fn validate(&self) -> Result<()> {
        if !(self.read_bw_bytes_per_s > 0.0) || !(self.write_bw_bytes_per_s > 0.0) {
            return Err(Error::Config(format!(
                "tier {} must have positive read and write bandwidth",
                self.name
            )));
        }
        if self.decompress_s_per_byte.quantize < 0.0 || self.decompress_s_per_byte.tokendrop < 0.0 {
            return Err(Error::Config(format!(
                "tier {} has a negative decompress coefficient",
                self.name
            )));
        }
        Ok(())
    }
}
