//! The storage engine: tracks cached entries, where each one lives, and
//! serves requests against the current placement.
//!
//! The engine is mechanism only. It answers "what would this request cost"
//! and applies placement decisions handed to it; all choice-making lives in
//! the policies. State sits behind a single RwLock so concurrent readers
//! can inspect residency while a replay thread applies decisions.
//!
//! Two storage modes: `SizeOnly` does pure accounting with the ceil(rate *
//! full) size model, which is what large simulations use. `Materialized`
//! actually runs the codecs over deterministic synthetic cache contents,
//! keeps fast-tier objects in memory, and spills deeper tiers to files, so
//! sizes on disk are the codecs' real output sizes.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::RwLock;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codecs::{drop_tokens, quantize, DropSpec, KvLayout, QuantSpec};
use crate::error::{Error, Result};
use crate::model::{stored_size, CacheEntry, EntryId, MethodKind, StoredChoice};
use crate::profiler::Profile;
use crate::workload::TraceEvent;

/// How stored objects are represented.
#[derive(Debug, Clone)]
pub enum StorageMode {
    /// Account bytes only; no payloads exist.
    SizeOnly,
    /// Run the real codecs over synthetic cache contents derived from
    /// `seed` and the entry id. Tier 0 objects stay in memory, deeper
    /// tiers spill to `dir`.
    Materialized { dir: PathBuf, seed: u64 },
}

/// One resident object.
#[derive(Debug, Clone)]
pub struct StoredObject {
    pub id: EntryId,
    pub tier: usize,
    pub choice: StoredChoice,
    /// Bytes charged against the tier. In materialized mode this is the
    /// codec's actual output length.
    pub stored_size: u64,
    payload: Option<Vec<u8>>,
}

impl StoredObject {
    pub fn payload(&self) -> Option<&[u8]> {
        self.payload.as_deref()
    }
}

/// What serving one request cost.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestOutcome {
    pub t_s: f64,
    pub id: EntryId,
    /// Which tier served the request; None is a miss (full recompute).
    pub hit_tier: Option<usize>,
    pub delay_s: f64,
    pub quality: f64,
}

impl RequestOutcome {
    pub fn is_hit(&self) -> bool {
        self.hit_tier.is_some()
    }
}

/// A placement decision for the engine to carry out.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Store (or restore, or move, or re-encode) an entry in a tier.
    Place { id: EntryId, tier: usize, choice: StoredChoice },
    /// Drop an entry's stored object entirely.
    Evict { id: EntryId },
}

/// Read-only snapshot of engine state for policies.
#[derive(Debug, Clone)]
pub struct EngineView {
    /// All entries ever requested, sorted by id.
    pub entries: Vec<CacheEntry>,
    pub residency: BTreeMap<EntryId, Residency>,
    /// Bytes used per tier.
    pub used: Vec<u64>,
    pub arrivals: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residency {
    pub tier: usize,
    pub choice: StoredChoice,
    pub stored_size: u64,
}

struct EngineInner {
    entries: BTreeMap<EntryId, CacheEntry>,
    residency: BTreeMap<EntryId, StoredObject>,
    used: Vec<u64>,
    arrivals: u64,
}

pub struct Engine {
    profile: Profile,
    mode: StorageMode,
    inner: RwLock<EngineInner>,
}

/// File name for a spilled object: `<id>.<method>.<rate in thousandths>`.
pub fn spill_file_name(id: &EntryId, choice: &StoredChoice) -> String {
    format!("{}.{}.{}", id, choice.method, (choice.rate * 1000.0).round() as u32)
}

fn id_seed(seed: u64, id: &EntryId) -> u64 {
    // FNV-1a over the id bytes, mixed with the run seed.
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in id.as_str().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

impl Engine {
    pub fn new(profile: Profile, mode: StorageMode) -> Result<Self> {
        if let StorageMode::Materialized { dir, .. } = &mode {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tiers = profile.device.tiers.len();
        Ok(Engine {
            profile,
            mode,
            inner: RwLock::new(EngineInner {
                entries: BTreeMap::new(),
                residency: BTreeMap::new(),
                used: vec![0; tiers],
                arrivals: 0,
            }),
        })
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    /// Serve one request: register the entry if new, record the request in
    /// its history (hits and misses both count as reuse evidence), and
    /// price the access against the current placement.
    pub fn note_request(&self, event: &TraceEvent) -> Result<RequestOutcome> {
        let mut inner = self.inner.write().expect("engine lock poisoned");
        let id = EntryId::new(&event.context_id);
        if let Some(existing) = inner.entries.get(&id) {
            if existing.token_count != event.token_count || existing.class_tag != event.class_tag {
                return Err(Error::Input(format!(
                    "context {} changed shape mid-trace ({} {} tokens vs {} {} tokens)",
                    id, existing.class_tag, existing.token_count, event.class_tag, event.token_count
                )));
            }
        } else {
            let entry = CacheEntry::new(
                id.clone(),
                event.token_count,
                event.class_tag.clone(),
                &self.profile.model,
                event.t_s,
            )?;
            inner.entries.insert(id.clone(), entry);
        }
        let half_life = self.profile.freq.half_life_s;
        inner.arrivals += 1;
        let entry = inner.entries.get_mut(&id).unwrap();
        entry.record_request(event.t_s, half_life);
        let (token_count, class_tag, full_size) =
            (entry.token_count, entry.class_tag.clone(), entry.full_size);

        match inner.residency.get(&id) {
            Some(obj) => {
                let tier = &self.profile.device.tiers[obj.tier];
                let mut delay = obj.stored_size as f64 / tier.read_bw_bytes_per_s;
                if obj.choice.rate < 1.0 {
                    delay += tier.decompress_s_per_byte.get(obj.choice.method) * full_size as f64;
                }
                let quality = self
                    .profile
                    .curve(&class_tag)?
                    .quality_at(obj.choice.method, obj.choice.rate)?;
                Ok(RequestOutcome {
                    t_s: event.t_s,
                    id,
                    hit_tier: Some(obj.tier),
                    delay_s: delay,
                    quality,
                })
            }
            None => Ok(RequestOutcome {
                t_s: event.t_s,
                id,
                hit_tier: None,
                delay_s: self.profile.device.prefill_s_per_token * token_count as f64,
                quality: 1.0,
            }),
        }
    }

    /// Snapshot current state.
    pub fn view(&self) -> EngineView {
        let inner = self.inner.read().expect("engine lock poisoned");
        EngineView {
            entries: inner.entries.values().cloned().collect(),
            residency: inner
                .residency
                .iter()
                .map(|(id, obj)| {
                    (id.clone(), Residency { tier: obj.tier, choice: obj.choice, stored_size: obj.stored_size })
                })
                .collect(),
            used: inner.used.clone(),
            arrivals: inner.arrivals,
        }
    }

    /// Bytes an entry would occupy under `choice` in this engine's mode.
    /// Policies use this so their capacity arithmetic matches the engine's.
    pub fn stored_size_for(&self, entry: &CacheEntry, choice: &StoredChoice) -> Result<u64> {
        match &self.mode {
            StorageMode::SizeOnly => Ok(stored_size(entry.full_size, choice.rate)),
            StorageMode::Materialized { .. } => match choice.method {
                MethodKind::Quantize if choice.rate < 1.0 => {
                    let spec = self.quant_spec_for(choice.rate)?;
                    Ok(spec.compressed_bytes(self.element_count(entry)))
                }
                MethodKind::Quantize => Ok(entry.full_size),
                MethodKind::TokenDrop => {
                    let spec = DropSpec::for_rate(choice.rate, entry.token_count)?;
                    let stride = entry.full_size / entry.token_count;
                    Ok(spec.kept_indices(entry.token_count).len() as u64 * stride)
                }
            },
        }
    }

    fn element_count(&self, entry: &CacheEntry) -> u64 {
        entry.full_size / self.profile.model.bytes_per_element as u64
    }

    /// Map a planner rate to quantization bits: with 32-element groups and
    /// `B`-byte elements the achievable rates are exactly (bits + 2) / (8B).
    fn quant_spec_for(&self, rate: f64) -> Result<QuantSpec> {
        let bpe = self.profile.model.bytes_per_element as f64;
        let bits = rate * 8.0 * bpe - 2.0;
        let rounded = bits.round();
        if (bits - rounded).abs() > 1e-6 || !matches!(rounded as i64, 2 | 4 | 8) {
            return Err(Error::Config(format!(
                "quantize rate {rate} is not realizable at {bpe}-byte elements with 32-element groups"
            )));
        }
        QuantSpec::new(rounded as u8, 32)
    }

    /// Produce the encoded payload for an entry under `choice` in
    /// materialized mode. Contents are deterministic in (seed, id).
    fn materialize(&self, seed: u64, entry: &CacheEntry, choice: &StoredChoice) -> Result<Vec<u8>> {
        let mut rng = ChaCha8Rng::seed_from_u64(id_seed(seed, &entry.id));
        match choice.method {
            MethodKind::Quantize if choice.rate < 1.0 => {
                let n = self.element_count(entry);
                let values: Vec<f32> = (0..n).map(|_| rng.gen_range(-8.0..8.0)).collect();
                quantize(&values, &self.quant_spec_for(choice.rate)?)
            }
            MethodKind::Quantize => {
                let mut raw = vec![0u8; entry.full_size as usize];
                rng.fill_bytes(&mut raw);
                Ok(raw)
            }
            MethodKind::TokenDrop => {
                let stride = (entry.full_size / entry.token_count) as u32;
                let layout = KvLayout::new(entry.token_count, stride)?;
                let mut raw = vec![0u8; entry.full_size as usize];
                rng.fill_bytes(&mut raw);
                let spec = DropSpec::for_rate(choice.rate, entry.token_count)?;
                Ok(drop_tokens(&raw, &layout, &spec)?.0)
            }
        }
    }

    /// Apply a batch of decisions. The whole batch is validated first
    /// against a scratch copy of the books, in order, so a bad decision
    /// anywhere leaves the engine untouched. Policies emit evictions and
    /// shrinks before placements so intermediate states stay within
    /// capacity.
    pub fn apply(&self, decisions: &[Decision]) -> Result<()> {
        let mut inner = self.inner.write().expect("engine lock poisoned");

        // Validation pass over lightweight scratch books.
        let caps: Vec<u64> = self.profile.device.tiers.iter().map(|t| t.capacity_bytes).collect();
        let mut used = inner.used.clone();
        let mut where_is: BTreeMap<EntryId, (usize, u64)> =
            inner.residency.iter().map(|(id, o)| (id.clone(), (o.tier, o.stored_size))).collect();
        let mut sizes: Vec<u64> = Vec::with_capacity(decisions.len());
        for d in decisions {
            match d {
                Decision::Place { id, tier, choice } => {
                    let entry = inner
                        .entries
                        .get(id)
                        .ok_or_else(|| Error::Internal(format!("place for unknown entry {id}")))?;
                    if *tier >= caps.len() {
                        return Err(Error::Internal(format!("place into nonexistent tier {tier}")));
                    }
                    let size = self.stored_size_for(entry, choice)?;
                    if let Some((old_tier, old_size)) = where_is.remove(id) {
                        used[old_tier] -= old_size;
                    }
                    if used[*tier] + size > caps[*tier] {
                        return Err(Error::Internal(format!(
                            "placing {id} ({size} B) overflows tier {tier} ({} of {} B used)",
                            used[*tier], caps[*tier]
                        )));
                    }
                    used[*tier] += size;
                    where_is.insert(id.clone(), (*tier, size));
                    sizes.push(size);
                }
                Decision::Evict { id } => {
                    let (tier, size) = where_is
                        .remove(id)
                        .ok_or_else(|| Error::Internal(format!("evict of non-resident entry {id}")))?;
                    used[tier] -= size;
                    sizes.push(0);
                }
            }
        }

        // Commit pass: mutate for real, including payload work.
        let mut sizes = sizes.into_iter();
        for d in decisions {
            match d {
                Decision::Place { id, tier, choice } => {
                    let size = sizes.next().unwrap();
                    if let Some(old) = inner.residency.remove(id) {
                        inner.used[old.tier] -= old.stored_size;
                        self.remove_spill(&old)?;
                    }
                    let payload = match &self.mode {
                        StorageMode::SizeOnly => None,
                        StorageMode::Materialized { dir, seed } => {
                            let entry = &inner.entries[id];
                            let bytes = self.materialize(*seed, entry, choice)?;
                            debug_assert_eq!(bytes.len() as u64, size);
                            if *tier == 0 {
                                Some(bytes)
                            } else {
                                let path = dir.join(spill_file_name(id, choice));
                                fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
                                None
                            }
                        }
                    };
                    inner.used[*tier] += size;
                    inner.residency.insert(
                        id.clone(),
                        StoredObject { id: id.clone(), tier: *tier, choice: *choice, stored_size: size, payload },
                    );
                }
                Decision::Evict { id } => {
                    sizes.next();
                    let old = inner.residency.remove(id).expect("validated above");
                    inner.used[old.tier] -= old.stored_size;
                    self.remove_spill(&old)?;
                }
            }
        }
        Ok(())
    }

    fn remove_spill(&self, obj: &StoredObject) -> Result<()> {
        if let StorageMode::Materialized { dir, .. } = &self.mode {
            if obj.tier > 0 {
                let path = dir.join(spill_file_name(&obj.id, &obj.choice));
                if let Err(e) = fs::remove_file(&path) {
                    if e.kind() != std::io::ErrorKind::NotFound {
                        return Err(Error::io(&path, e));
                    }
                }
            }
        }
        Ok(())
    }
}
