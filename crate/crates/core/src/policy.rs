//! Utility model and capacity-constrained planning.
//!
//! Every cached context can be stored in exactly one (tier, method, rate)
//! configuration or recomputed on demand, which makes the global problem a
//! multiple-choice knapsack over the tier capacities. The planner builds a
//! dominance-pruned ladder of configurations per context and tier, then
//! runs a lazy greedy over marginal utility per byte. The greedy solution
//! is within the largest single ladder step of optimal, which the plan
//! reports so callers can check the gap.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use crate::error::{Error, Result};
use crate::model::{stored_size, CacheEntry, CompressionChoice, EntryId, StoredChoice};
use crate::profiler::Profile;

/// Weight on quality against seconds of delay, in units of seconds per
/// unit quality. Larger values favor keeping caches at high fidelity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha(pub f64);

impl Alpha {
    pub fn new(v: f64) -> Result<Self> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive and finite, got {v}")));
        }
        Ok(Alpha(v))
    }
}

/// One admissible configuration for an entry: either a stored form in a
/// tier or recomputation (no tier, no bytes).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredChoice {
    pub entry: EntryId,
    /// Index into the profile's tier list, fastest first. None means
    /// recompute.
    pub tier: Option<usize>,
    pub choice: CompressionChoice,
    pub size: u64,
    pub utility: f64,
}

/// Expected utility per second of holding `entry` in the given stored
/// configuration: request rate times (alpha-weighted quality minus read
/// and decompression delay). Full-rate copies need no decode, so the
/// decompression term applies only below rate 1.0.
pub fn utility(
    profile: &Profile,
    alpha: Alpha,
    entry: &CacheEntry,
    tier: usize,
    choice: &StoredChoice,
    freq: f64,
) -> Result<f64> {
    let tiers = &profile.device.tiers;
    let t = tiers
        .get(tier)
        .ok_or_else(|| Error::Contract(format!("tier index {tier} out of range for {} tiers", tiers.len())))?;
    let curve = profile.curve(&entry.class_tag)?;
    let quality = curve.quality_at(choice.method, choice.rate)?;
    let bytes = stored_size(entry.full_size, choice.rate);
    let mut delay = bytes as f64 / t.read_bw_bytes_per_s;
    if choice.rate < 1.0 {
        delay += t.decompress_s_per_byte.get(choice.method) * entry.full_size as f64;
    }
    Ok(freq * (alpha.0 * quality - delay))
}

/// Utility of recomputing the entry on each request: full quality paid for
/// with a prefill proportional to the context length.
pub fn recompute_utility(profile: &Profile, alpha: Alpha, entry: &CacheEntry, freq: f64) -> f64 {
    freq * (alpha.0 * 1.0 - profile.device.prefill_s_per_token * entry.token_count as f64)
}

/// Utility lost per byte freed when moving an entry from configuration `m`
/// to a smaller one `n` in the same tier. Recompute counts as rate 0. The
/// denominator is the byte delta at full size, so values are comparable
/// across entries of different sizes.
pub fn marginal_utility_drop(
    entry: &CacheEntry,
    utility_m: f64,
    rate_m: f64,
    utility_n: f64,
    rate_n: f64,
) -> Result<f64> {
    if rate_m <= rate_n {
        return Err(Error::Contract(format!(
            "drop requires strictly shrinking rates, got {rate_m} -> {rate_n}"
        )));
    }
    Ok((utility_m - utility_n) / (entry.full_size as f64 * (rate_m - rate_n)))
}

/// Remove choices no rational planner would pick: anything bigger yet no
/// better than an alternative, then anything off the upper convex hull of
/// the (size, utility) frontier, where a mix of its neighbors beats it.
pub fn prune_dominated(mut choices: Vec<ScoredChoice>) -> Vec<ScoredChoice> {
    if choices.is_empty() {
        return choices;
    }
    choices.sort_by(|a, b| a.size.cmp(&b.size).then(b.utility.total_cmp(&a.utility)));
    let mut frontier: Vec<ScoredChoice> = Vec::with_capacity(choices.len());
    for c in choices {
        match frontier.last() {
            Some(last) if c.utility <= last.utility => continue,
            _ => frontier.push(c),
        }
    }
    // Upper hull sweep: slopes of consecutive kept points must strictly
    // decrease; collinear middles add nothing the endpoints don't.
    let mut hull: Vec<ScoredChoice> = Vec::with_capacity(frontier.len());
    for c in frontier {
        while hull.len() >= 2 {
            let a = &hull[hull.len() - 2];
            let b = &hull[hull.len() - 1];
            let slope_ab = (b.utility - a.utility) / (b.size - a.size) as f64;
            let slope_bc = (c.utility - b.utility) / (c.size - b.size) as f64;
            if slope_bc >= slope_ab {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(c);
    }
    hull
}

/// The planner's output: one configuration per entry plus bookkeeping.
#[derive(Debug, Clone)]
pub struct Plan {
    pub choices: BTreeMap<EntryId, ScoredChoice>,
    /// Bytes used per tier, same order as the profile's tier list.
    pub used: Vec<u64>,
    pub total_utility: f64,
    /// Largest utility jump along any pruned ladder edge. The greedy total
    /// is within this amount of the true optimum.
    pub max_ladder_step: f64,
}

impl Plan {
    pub fn assignment(&self, id: &EntryId) -> CompressionChoice {
        self.choices
            .get(id)
            .map(|c| c.choice)
            .unwrap_or(CompressionChoice::Recompute)
    }

    pub fn tier_of(&self, id: &EntryId) -> Option<usize> {
        self.choices.get(id).and_then(|c| c.tier)
    }
}

/// Builds the pruned ladder for one (entry, tier): recompute as the
/// zero-size base plus every stored configuration of every method and rate.
fn ladder_for(
    profile: &Profile,
    alpha: Alpha,
    entry: &CacheEntry,
    tier: usize,
    freq: f64,
) -> Result<Vec<ScoredChoice>> {
    let u_rec = recompute_utility(profile, alpha, entry, freq);
    let mut rungs = vec![ScoredChoice {
        entry: entry.id.clone(),
        tier: None,
        choice: CompressionChoice::Recompute,
        size: 0,
        utility: u_rec,
    }];
    for method in profile.methods() {
        for &rate in &method.available_rates {
            let choice = StoredChoice { method: method.kind, rate };
            let u = utility(profile, alpha, entry, tier, &choice, freq)?;
            rungs.push(ScoredChoice {
                entry: entry.id.clone(),
                tier: Some(tier),
                choice: CompressionChoice::Stored(choice),
                size: stored_size(entry.full_size, rate),
                utility: u,
            });
        }
    }
    Ok(prune_dominated(rungs))
}

#[derive(Debug)]
struct Candidate {
    slope: f64,
    entry: EntryId,
    version: u64,
    tier: usize,
    /// Index into that (entry, tier) ladder.
    rung: usize,
    size_delta: u64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    /// Max-heap on slope; ties broken toward smaller entry id then smaller
    /// byte delta so runs are reproducible.
    fn cmp(&self, other: &Self) -> Ordering {
        self.slope
            .total_cmp(&other.slope)
            .then_with(|| other.entry.cmp(&self.entry))
            .then_with(|| other.size_delta.cmp(&self.size_delta))
    }
}

/// Jointly choose compression and placement for every entry under the tier
/// capacity limits, maximizing total utility.
///
/// Lazy greedy over ladder steps sorted by utility gained per byte: every
/// entry starts at recompute and the heap repeatedly applies the best
/// affordable upgrade. Once an entry lands in a tier its later upgrades
/// stay there. A popped step that no longer fits is discarded for good
/// since free space only shrinks and later steps on the same ladder are
/// larger still.
pub fn plan(profile: &Profile, alpha: Alpha, entries: &[CacheEntry], now: f64) -> Result<Plan> {
    let tiers = profile.device.tiers.len();
    let mut ladders: HashMap<(EntryId, usize), Vec<ScoredChoice>> = HashMap::new();
    let mut chosen: BTreeMap<EntryId, ScoredChoice> = BTreeMap::new();
    let mut max_step = 0.0f64;
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::new();
    let mut versions: HashMap<EntryId, u64> = HashMap::new();
    let mut placed_tier: HashMap<EntryId, usize> = HashMap::new();

    for entry in entries {
        let freq = profile.freq.estimate_freq(entry, now);
        let mut base: Option<ScoredChoice> = None;
        for tier in 0..tiers {
            let ladder = ladder_for(profile, alpha, entry, tier, freq)?;
            for pair in ladder.windows(2) {
                max_step = max_step.max(pair[1].utility - pair[0].utility);
            }
            if base.is_none() {
                base = Some(ladder[0].clone());
            }
            if ladder.len() > 1 {
                heap.push(Candidate {
                    slope: (ladder[1].utility - ladder[0].utility) / ladder[1].size as f64,
                    entry: entry.id.clone(),
                    version: 0,
                    tier,
                    rung: 1,
                    size_delta: ladder[1].size,
                });
            }
            ladders.insert((entry.id.clone(), tier), ladder);
        }
        chosen.insert(entry.id.clone(), base.expect("device profiles always have a tier"));
        versions.insert(entry.id.clone(), 0);
    }

    let mut used = vec![0u64; tiers];
    while let Some(cand) = heap.pop() {
        if cand.slope <= 0.0 {
            break;
        }
        if versions[&cand.entry] != cand.version {
            continue;
        }
        if placed_tier.get(&cand.entry).is_some_and(|&t| t != cand.tier) {
            continue;
        }
        let capacity = profile.device.tiers[cand.tier].capacity_bytes;
        if used[cand.tier] + cand.size_delta > capacity {
            continue;
        }

        let ladder = &ladders[&(cand.entry.clone(), cand.tier)];
        used[cand.tier] += cand.size_delta;
        chosen.insert(cand.entry.clone(), ladder[cand.rung].clone());
        placed_tier.insert(cand.entry.clone(), cand.tier);
        let version = versions.get_mut(&cand.entry).unwrap();
        *version += 1;
        if cand.rung + 1 < ladder.len() {
            let next = &ladder[cand.rung + 1];
            let cur = &ladder[cand.rung];
            heap.push(Candidate {
                slope: (next.utility - cur.utility) / (next.size - cur.size) as f64,
                entry: cand.entry,
                version: *version,
                tier: cand.tier,
                rung: cand.rung + 1,
                size_delta: next.size - cur.size,
            });
        }
    }

    let total_utility = chosen.values().map(|c| c.utility).sum();
    Ok(Plan { choices: chosen, used, total_utility, max_ladder_step: max_step })
}

/// Exhaustive reference planner over the full unpruned choice set (a
/// hull-dominated configuration can still be integer-optimal, so the
/// oracle must see everything). Refuses instances past ten million
/// combinations.
pub fn brute_force_plan(profile: &Profile, alpha: Alpha, entries: &[CacheEntry], now: f64) -> Result<Plan> {
    let tiers = profile.device.tiers.len();
    let mut options: Vec<Vec<ScoredChoice>> = Vec::with_capacity(entries.len());
    let mut combos = 1f64;
    for entry in entries {
        let freq = profile.freq.estimate_freq(entry, now);
        let mut opts = vec![ScoredChoice {
            entry: entry.id.clone(),
            tier: None,
            choice: CompressionChoice::Recompute,
            size: 0,
            utility: recompute_utility(profile, alpha, entry, freq),
        }];
        for tier in 0..tiers {
            for method in profile.methods() {
                for &rate in &method.available_rates {
                    let choice = StoredChoice { method: method.kind, rate };
                    opts.push(ScoredChoice {
                        entry: entry.id.clone(),
                        tier: Some(tier),
                        choice: CompressionChoice::Stored(choice),
                        size: stored_size(entry.full_size, rate),
                        utility: utility(profile, alpha, entry, tier, &choice, freq)?,
                    });
                }
            }
        }
        combos *= opts.len() as f64;
        options.push(opts);
    }
    if combos > 1e7 {
        return Err(Error::TooLarge(format!(
            "{combos:.3e} combinations is past the exhaustive planner's limit"
        )));
    }

    fn dfs(
        options: &[Vec<ScoredChoice>],
        caps: &[u64],
        used: &mut [u64],
        total: f64,
        depth: usize,
        picks: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if depth == options.len() {
            if best.as_ref().is_none_or(|(b, _)| total > *b) {
                *best = Some((total, picks.clone()));
            }
            return;
        }
        for (i, opt) in options[depth].iter().enumerate() {
            picks[depth] = i;
            if let Some(tier) = opt.tier {
                if used[tier] + opt.size > caps[tier] {
                    continue;
                }
                used[tier] += opt.size;
                dfs(options, caps, used, total + opt.utility, depth + 1, picks, best);
                used[tier] -= opt.size;
            } else {
                dfs(options, caps, used, total + opt.utility, depth + 1, picks, best);
            }
        }
    }

    let caps: Vec<u64> = profile.device.tiers.iter().map(|t| t.capacity_bytes).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut picks = vec![0usize; entries.len()];
    let mut used_scratch = vec![0u64; tiers];
    dfs(&options, &caps, &mut used_scratch, 0.0, 0, &mut picks, &mut best);
    let (total_utility, picks) = best.expect("recompute always fits, so a solution exists");

    let mut choices = BTreeMap::new();
    let mut used = vec![0u64; tiers];
    for (opts, &pick) in options.iter().zip(&picks) {
        let c = opts[pick].clone();
        if let Some(tier) = c.tier {
            used[tier] += c.size;
        }
        choices.insert(c.entry.clone(), c);
    }
    Ok(Plan { choices, used, total_utility, max_ladder_step: 0.0 })
}

/// Where an admission decision left the new entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Assignment {
    Stored { tier: usize, choice: StoredChoice },
    Recompute,
}

/// Incremental admission: give a newly seen entry its best configuration,
/// funding the space by repeatedly applying whichever single downgrade
/// costs the least utility per byte freed. Candidate downgrades are a
/// resident shrinking to its next ladder rung, a resident demoting one
/// tier down, a resident evicting entirely, or the newcomer lowering its
/// own ambition to its next-best configuration. The sequence commits only
/// if the final total beats leaving everything alone with the newcomer on
/// recompute; otherwise the resident plan is returned untouched.
pub fn admit(
    profile: &Profile,
    alpha: Alpha,
    resident: &Plan,
    entries: &[CacheEntry],
    new_entry: &CacheEntry,
    now: f64,
) -> Result<(Plan, Assignment)> {
    let tiers = profile.device.tiers.len();
    let by_id: HashMap<&EntryId, &CacheEntry> = entries.iter().map(|e| (&e.id, e)).collect();
    if by_id.contains_key(&new_entry.id) {
        return Err(Error::Contract(format!("entry {} is already resident", new_entry.id)));
    }

    let freq_new = profile.freq.estimate_freq(new_entry, now);
    let u_rec_new = recompute_utility(profile, alpha, new_entry, freq_new);

    // All stored configurations for the newcomer that beat recomputing it,
    // best utility first.
    let mut targets: Vec<ScoredChoice> = Vec::new();
    for tier in 0..tiers {
        for method in profile.methods() {
            for &rate in &method.available_rates {
                let choice = StoredChoice { method: method.kind, rate };
                targets.push(ScoredChoice {
                    entry: new_entry.id.clone(),
                    tier: Some(tier),
                    choice: CompressionChoice::Stored(choice),
                    size: stored_size(new_entry.full_size, rate),
                    utility: utility(profile, alpha, new_entry, tier, &choice, freq_new)?,
                });
            }
        }
    }
    targets.retain(|t| t.utility > u_rec_new);
    targets.sort_by(|a, b| b.utility.total_cmp(&a.utility).then(a.size.cmp(&b.size)));

    let do_nothing = || -> (Plan, Assignment) {
        let mut p = resident.clone();
        p.choices.insert(
            new_entry.id.clone(),
            ScoredChoice {
                entry: new_entry.id.clone(),
                tier: None,
                choice: CompressionChoice::Recompute,
                size: 0,
                utility: u_rec_new,
            },
        );
        p.total_utility = p.choices.values().map(|c| c.utility).sum();
        (p, Assignment::Recompute)
    };
    let baseline_total = do_nothing().0.total_utility;

    let mut scratch = resident.clone();
    let mut target_idx = 0usize;
    loop {
        let Some(target) = targets.get(target_idx) else {
            return Ok(do_nothing());
        };
        let tier = target.tier.unwrap();
        let capacity = profile.device.tiers[tier].capacity_bytes;
        if scratch.used[tier] + target.size <= capacity {
            let mut p = scratch.clone();
            p.used[tier] += target.size;
            p.choices.insert(new_entry.id.clone(), target.clone());
            p.total_utility = p.choices.values().map(|c| c.utility).sum();
            if p.total_utility > baseline_total {
                let Some(stored) = target.choice.as_stored() else { unreachable!() };
                return Ok((p, Assignment::Stored { tier, choice: *stored }));
            }
            return Ok(do_nothing());
        }

        // Contended: pick the cheapest utility-per-freed-byte move among
        // the residents of that tier and the newcomer's own step down.
        enum Move {
            Downgrade { id: EntryId, to: ScoredChoice },
            NextTarget,
        }
        let mut best: Option<(f64, EntryId, u64, Move)> = None;
        let mut consider = |drop_per_byte: f64, id: EntryId, size: u64, mv: Move| {
            let better = match &best {
                None => true,
                Some((d, bid, bsize, _)) => {
                    drop_per_byte < *d
                        || (drop_per_byte == *d && (id < *bid || (id == *bid && size < *bsize)))
                }
            };
            if better {
                best = Some((drop_per_byte, id, size, mv));
            }
        };

        for (id, cur) in scratch.choices.iter() {
            if cur.tier != Some(tier) {
                continue;
            }
            let entry = by_id[id];
            let freq = profile.freq.estimate_freq(entry, now);

            // Shrink in place to the next-smaller rung of this entry's
            // ladder here. An off-ladder configuration (possible after an
            // earlier admission) falls to the largest smaller rung.
            let ladder = ladder_for(profile, alpha, entry, tier, freq)?;
            let pos = ladder.iter().position(|r| r.size == cur.size && r.choice == cur.choice);
            let smaller: Option<ScoredChoice> = match pos {
                Some(p) if p > 0 => Some(ladder[p - 1].clone()),
                Some(_) => None,
                None => ladder
                    .iter()
                    .filter(|r| r.size < cur.size)
                    .max_by(|a, b| a.size.cmp(&b.size))
                    .cloned(),
            };
            if let Some(to) = smaller {
                let freed = cur.size - to.size;
                if freed > 0 {
                    let d = (cur.utility - to.utility) / freed as f64;
                    consider(d, id.clone(), to.size, Move::Downgrade { id: id.clone(), to });
                }
            }

            // Demote one tier down at the largest rung that fits in the
            // space remaining there. Frees this entry's whole footprint.
            if tier + 1 < tiers {
                let below = tier + 1;
                let room = profile.device.tiers[below].capacity_bytes - scratch.used[below];
                let ladder_below = ladder_for(profile, alpha, entry, below, freq)?;
                if let Some(to) = ladder_below
                    .iter()
                    .filter(|r| r.tier == Some(below) && r.size <= room)
                    .max_by(|a, b| a.size.cmp(&b.size))
                {
                    let d = (cur.utility - to.utility) / cur.size as f64;
                    consider(d, id.clone(), to.size, Move::Downgrade { id: id.clone(), to: to.clone() });
                }
            }

            // Evict outright.
            let u_rec = recompute_utility(profile, alpha, entry, freq);
            let to = ScoredChoice {
                entry: id.clone(),
                tier: None,
                choice: CompressionChoice::Recompute,
                size: 0,
                utility: u_rec,
            };
            let d = (cur.utility - u_rec) / cur.size as f64;
            consider(d, id.clone(), 0, Move::Downgrade { id: id.clone(), to });
        }

        // The newcomer stepping down relieves the tier by the full
        // requested size.
        let next_u = targets.get(target_idx + 1).map_or(u_rec_new, |n| n.utility);
        let next_size = targets.get(target_idx + 1).map_or(0, |n| n.size);
        consider(
            (target.utility - next_u) / target.size as f64,
            new_entry.id.clone(),
            next_size,
            Move::NextTarget,
        );

        match best {
            Some((_, _, _, Move::Downgrade { id, to })) => {
                let old = scratch.choices.get(&id).unwrap().clone();
                if let Some(t) = old.tier {
                    scratch.used[t] -= old.size;
                }
                if let Some(t) = to.tier {
                    scratch.used[t] += to.size;
                }
                scratch.choices.insert(id, to);
                scratch.total_utility = scratch.choices.values().map(|c| c.utility).sum();
            }
            _ => {
                target_idx += 1;
            }
        }
    }
}
