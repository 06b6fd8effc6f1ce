//! Trace replay: cache policies, the simulation loop, and metrics.
//!
//! A policy sees each request outcome after the engine has served and
//! recorded it, and answers with placement decisions for the engine to
//! apply before the next request. The adaptive policy plans with the
//! utility model; the fixed policies are classic LRU with one compression
//! setting, which is what the adaptive policy is measured against.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::engine::{Decision, Engine, EngineView, RequestOutcome, StorageMode};
use crate::error::{Error, Result};
use crate::model::{CacheEntry, CompressionChoice, EntryId, MethodKind, StoredChoice};
use crate::policy::{admit, plan, utility, Alpha, Plan, ScoredChoice};
use crate::profiler::Profile;
use crate::workload::TraceEvent;

/// A cache management policy. Called once per request, after the engine
/// has priced it; returns decisions the engine applies immediately.
pub trait CachePolicy {
    fn name(&self) -> String;
    fn on_request(&mut self, engine: &Engine, outcome: &RequestOutcome) -> Result<Vec<Decision>>;
}

/// Declarative policy selection, used by the CLI and sweeps.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyConfig {
    /// Utility-driven joint compression and placement.
    Adapt { alpha: f64, replan_every: u64 },
    /// LRU with every object stored under one fixed method and rate.
    FixedLru { method: MethodKind, rate: f64 },
    /// LRU storing full uncompressed copies.
    NoCompressionLru,
    /// Never cache anything; every request recomputes.
    PrefillAlways,
}

impl PolicyConfig {
    pub fn label(&self) -> String {
        match self {
            PolicyConfig::Adapt { .. } => "adaptcache".into(),
            PolicyConfig::FixedLru { method, rate } => format!("lru-{method}-{rate}"),
            PolicyConfig::NoCompressionLru => "lru-full".into(),
            PolicyConfig::PrefillAlways => "prefill-always".into(),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            PolicyConfig::Adapt { alpha, .. } => Some(*alpha),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<Box<dyn CachePolicy>> {
        match self {
            PolicyConfig::Adapt { alpha, replan_every } => {
                if *replan_every == 0 {
                    return Err(Error::Config("replan_every must be at least 1".into()));
                }
                Ok(Box::new(AdaptCachePolicy { alpha: Alpha::new(*alpha)?, replan_every: *replan_every, arrivals: 0 }))
            }
            PolicyConfig::FixedLru { method, rate } => Ok(Box::new(FixedLruPolicy {
                choice: StoredChoice::new(*method, *rate)?,
                label: self.label(),
            })),
            PolicyConfig::NoCompressionLru => Ok(Box::new(FixedLruPolicy {
                choice: StoredChoice::new(MethodKind::Quantize, 1.0)?,
                label: self.label(),
            })),
            PolicyConfig::PrefillAlways => Ok(Box::new(PrefillAlwaysPolicy)),
        }
    }
}

/// The utility planner as an online policy: admits on every miss and runs
/// a full replan every `replan_every` arrivals (hits and misses both
/// count), diffing the new plan against current residency.
pub struct AdaptCachePolicy {
    alpha: Alpha,
    replan_every: u64,
    arrivals: u64,
}

impl AdaptCachePolicy {
    /// Reconstruct the resident assignment as a Plan so the admission
    /// logic can reason over it. Sizes come from the engine's books.
    fn plan_from_view(&self, profile: &Profile, view: &EngineView, now: f64) -> Result<Plan> {
        let entries: HashMap<&EntryId, &CacheEntry> = view.entries.iter().map(|e| (&e.id, e)).collect();
        let mut choices = std::collections::BTreeMap::new();
        for (id, res) in &view.residency {
            let entry = entries
                .get(id)
                .ok_or_else(|| Error::Internal(format!("resident {id} has no entry record")))?;
            let freq = profile.freq.estimate_freq(entry, now);
            let u = utility(profile, self.alpha, entry, res.tier, &res.choice, freq)?;
            choices.insert(
                id.clone(),
                ScoredChoice {
                    entry: id.clone(),
                    tier: Some(res.tier),
                    choice: CompressionChoice::Stored(res.choice),
                    size: res.stored_size,
                    utility: u,
                },
            );
        }
        let total_utility = choices.values().map(|c| c.utility).sum();
        Ok(Plan { choices, used: view.used.clone(), total_utility, max_ladder_step: 0.0 })
    }
}

impl CachePolicy for AdaptCachePolicy {
    fn name(&self) -> String {
        "adaptcache".into()
    }

    fn on_request(&mut self, engine: &Engine, outcome: &RequestOutcome) -> Result<Vec<Decision>> {
        self.arrivals += 1;
        let now = outcome.t_s;
        let profile = engine.profile();

        if self.arrivals % self.replan_every == 0 {
            let view = engine.view();
            let target = plan(profile, self.alpha, &view.entries, now)?;
            return plan_to_decisions(engine, &view, &target);
        }

        if !outcome.is_hit() {
            let view = engine.view();
            let resident_plan = self.plan_from_view(profile, &view, now)?;
            let mut others = Vec::with_capacity(view.entries.len().saturating_sub(1));
            let mut newcomer = None;
            for e in &view.entries {
                if e.id == outcome.id {
                    newcomer = Some(e.clone());
                } else {
                    others.push(e.clone());
                }
            }
            let newcomer =
                newcomer.ok_or_else(|| Error::Internal(format!("missed entry {} not registered", outcome.id)))?;
            let (target, _) = admit(profile, self.alpha, &resident_plan, &others, &newcomer, now)?;
            return plan_to_decisions(engine, &view, &target);
        }

        Ok(Vec::new())
    }
}

/// Turn a target plan into an engine-safe decision sequence: evictions and
/// departures first, then in-place shrinks, then everything that adds
/// bytes. After the first two phases every tier is at or below its final
/// fill, so the additions can never overshoot capacity in between.
fn plan_to_decisions(engine: &Engine, view: &EngineView, target: &Plan) -> Result<Vec<Decision>> {
    let entries: HashMap<&EntryId, &CacheEntry> = view.entries.iter().map(|e| (&e.id, e)).collect();
    let mut evicts = Vec::new();
    let mut shrinks = Vec::new();
    let mut adds = Vec::new();

    for (id, res) in &view.residency {
        let want = target.choices.get(id);
        let (new_tier, new_choice) = match want {
            Some(sc) => match (&sc.choice, sc.tier) {
                (CompressionChoice::Stored(c), Some(t)) => (t, *c),
                _ => {
                    evicts.push(Decision::Evict { id: id.clone() });
                    continue;
                }
            },
            None => {
                evicts.push(Decision::Evict { id: id.clone() });
                continue;
            }
        };
        if new_tier == res.tier && new_choice == res.choice {
            continue;
        }
        if new_tier != res.tier {
            // Cross-tier moves free the old spot up front.
            evicts.push(Decision::Evict { id: id.clone() });
            adds.push(Decision::Place { id: id.clone(), tier: new_tier, choice: new_choice });
            continue;
        }
        let entry = entries[id];
        let new_size = engine.stored_size_for(entry, &new_choice)?;
        let d = Decision::Place { id: id.clone(), tier: new_tier, choice: new_choice };
        if new_size <= res.stored_size {
            shrinks.push(d);
        } else {
            adds.push(d);
        }
    }

    for (id, sc) in &target.choices {
        if view.residency.contains_key(id) {
            continue;
        }
        if let (CompressionChoice::Stored(c), Some(t)) = (&sc.choice, sc.tier) {
            adds.push(Decision::Place { id: id.clone(), tier: t, choice: *c });
        }
    }

    evicts.extend(shrinks);
    evicts.extend(adds);
    Ok(evicts)
}

/// LRU at a single fixed compression setting. Misses are admitted to the
/// fastest tier; overflow cascades down the hierarchy by least recent use
/// and falls off the bottom; hits below the fastest tier promote back up.
pub struct FixedLruPolicy {
    choice: StoredChoice,
    label: String,
}

impl FixedLruPolicy {
    /// Local copy of the books for planning one batch. Mirrors exactly how
    /// the engine will sequentially validate the emitted decisions.
    fn make_room(
        &self,
        engine: &Engine,
        books: &mut Books,
        tier: usize,
        need: u64,
        keep: &EntryId,
        decisions: &mut Vec<Decision>,
    ) {
        let caps: Vec<u64> = engine.profile().device.tiers.iter().map(|t| t.capacity_bytes).collect();
        while books.used[tier] + need > caps[tier] {
            let victim = books
                .members(tier)
                .filter(|(id, _)| *id != keep)
                .min_by(|a, b| a.1.last_access.total_cmp(&b.1.last_access).then(a.0.cmp(b.0)))
                .map(|(id, obj)| (id.clone(), obj.clone()));
            let Some((vid, vobj)) = victim else {
                // Nothing left to push out; the placement will fail upstream
                // unless the need fits, so stop trying.
                return;
            };
            if tier + 1 < caps.len() {
                self.make_room(engine, books, tier + 1, vobj.size, keep, decisions);
                decisions.push(Decision::Place { id: vid.clone(), tier: tier + 1, choice: vobj.choice });
                books.relocate(&vid, tier + 1);
            } else {
                decisions.push(Decision::Evict { id: vid.clone() });
                books.remove(&vid);
            }
        }
    }
}

#[derive(Clone)]
struct BookEntry {
    tier: usize,
    size: u64,
    choice: StoredChoice,
    last_access: f64,
}

struct Books {
    objects: std::collections::BTreeMap<EntryId, BookEntry>,
    used: Vec<u64>,
}

impl Books {
    fn from_view(view: &EngineView) -> Self {
        let last: HashMap<&EntryId, f64> = view.entries.iter().map(|e| (&e.id, e.last_access())).collect();
        let objects = view
            .residency
            .iter()
            .map(|(id, r)| {
                let be = BookEntry {
                    tier: r.tier,
                    size: r.stored_size,
                    choice: r.choice,
                    last_access: last.get(id).copied().unwrap_or(f64::NEG_INFINITY),
                };
                (id.clone(), be)
            })
            .collect();
        Books { objects, used: view.used.clone() }
    }

    fn members(&self, tier: usize) -> impl Iterator<Item = (&EntryId, &BookEntry)> {
        self.objects.iter().filter(move |(_, o)| o.tier == tier)
    }

    fn relocate(&mut self, id: &EntryId, to: usize) {
        let obj = self.objects.get_mut(id).expect("relocating a tracked object");
        self.used[obj.tier] -= obj.size;
        self.used[to] += obj.size;
        obj.tier = to;
    }

    fn remove(&mut self, id: &EntryId) {
        let obj = self.objects.remove(id).expect("removing a tracked object");
        self.used[obj.tier] -= obj.size;
    }

    fn insert(&mut self, id: EntryId, be: BookEntry) {
        self.used[be.tier] += be.size;
        self.objects.insert(id, be);
    }
}

impl CachePolicy for FixedLruPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn on_request(&mut self, engine: &Engine, outcome: &RequestOutcome) -> Result<Vec<Decision>> {
        let profile = engine.profile();
        let caps: Vec<u64> = profile.device.tiers.iter().map(|t| t.capacity_bytes).collect();
        let view = engine.view();
        let mut decisions = Vec::new();

        match outcome.hit_tier {
            Some(0) => {}
            Some(_) => {
                // Promote back to the fastest tier, pushing colder objects
                // down to make room.
                let res = &view.residency[&outcome.id];
                if res.stored_size <= caps[0] {
                    let mut books = Books::from_view(&view);
                    self.make_room(engine, &mut books, 0, res.stored_size, &outcome.id, &mut decisions);
                    if books.used[0] + res.stored_size <= caps[0] {
                        decisions.push(Decision::Place { id: outcome.id.clone(), tier: 0, choice: res.choice });
                    } else {
                        decisions.clear();
                    }
                }
            }
            None => {
                let entry = view
                    .entries
                    .iter()
                    .find(|e| e.id == outcome.id)
                    .ok_or_else(|| Error::Internal(format!("missed entry {} not registered", outcome.id)))?;
                let size = engine.stored_size_for(entry, &self.choice)?;
                // An object bigger than the fast tier goes to the first
                // tier able to hold it at all, if any.
                let Some(target) = (0..caps.len()).find(|t| size <= caps[*t]) else {
                    return Ok(decisions);
                };
                let mut books = Books::from_view(&view);
                self.make_room(engine, &mut books, target, size, &outcome.id, &mut decisions);
                if books.used[target] + size <= caps[target] {
                    decisions.push(Decision::Place { id: outcome.id.clone(), tier: target, choice: self.choice });
                    books.insert(
                        outcome.id.clone(),
                        BookEntry { tier: target, size, choice: self.choice, last_access: outcome.t_s },
                    );
                } else {
                    decisions.clear();
                }
            }
        }
        Ok(decisions)
    }
}

/// Baseline that never stores anything.
pub struct PrefillAlwaysPolicy;

impl CachePolicy for PrefillAlwaysPolicy {
    fn name(&self) -> String {
        "prefill-always".into()
    }

    fn on_request(&mut self, _engine: &Engine, _outcome: &RequestOutcome) -> Result<Vec<Decision>> {
        Ok(Vec::new())
    }
}

/// One replayed request, as written to the per-request CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRow {
    pub t_s: f64,
    pub context_id: String,
    /// `hit:<tier name>` or `miss`.
    pub outcome: String,
    pub delay_s: f64,
    pub quality: f64,
}

/// Aggregate metrics for one replay.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub policy: String,
    pub alpha: Option<f64>,
    pub requests: u64,
    pub mean_ttft_s: f64,
    /// Nearest-rank 95th percentile of per-request delay.
    pub p95_ttft_s: f64,
    pub hit_rate_total: f64,
    /// Hit rate per tier, same order as the profile's tier list.
    pub hit_rate_by_tier: Vec<f64>,
    pub mean_quality: f64,
}

#[derive(Debug)]
pub struct RunResult {
    pub config: PolicyConfig,
    pub rows: Vec<RequestRow>,
    pub report: MetricsReport,
}

/// Replay a trace under one policy.
///
/// Every class tag appearing in the trace must have a quality curve in the
/// profile; that is checked before any request is served. The adaptive
/// policy requires the size-model storage mode, since its planner prices
/// configurations with the byte model rather than running codecs.
pub fn run(profile: &Profile, events: &[TraceEvent], cfg: &PolicyConfig, mode: StorageMode) -> Result<RunResult> {
    let classes: BTreeSet<&str> = events.iter().map(|e| e.class_tag.as_str()).collect();
    for class in classes {
        profile.curve(class)?;
    }
    if matches!(cfg, PolicyConfig::Adapt { .. }) && matches!(mode, StorageMode::Materialized { .. }) {
        return Err(Error::Config(
            "the adaptive policy plans with the size model; run it in size-only mode".into(),
        ));
    }

    let engine = Engine::new(profile.clone(), mode)?;
    let mut policy = cfg.build()?;
    let mut rows = Vec::with_capacity(events.len());
    for event in events {
        let outcome = engine.note_request(event)?;
        let decisions = policy.on_request(&engine, &outcome)?;
        engine.apply(&decisions)?;
        rows.push(RequestRow {
            t_s: event.t_s,
            context_id: event.context_id.clone(),
            outcome: match outcome.hit_tier {
                Some(t) => format!("hit:{}", profile.device.tiers[t].name),
                None => "miss".into(),
            },
            delay_s: outcome.delay_s,
            quality: outcome.quality,
        });
    }

    let report = summarize(policy.name(), cfg.alpha(), profile, &rows);
    Ok(RunResult { config: cfg.clone(), rows, report })
}

/// Run the adaptive policy across an alpha grid plus a set of baselines on
/// the same trace.
pub fn sweep(
    profile: &Profile,
    events: &[TraceEvent],
    alphas: &[f64],
    replan_every: u64,
    baselines: &[PolicyConfig],
    mode: &StorageMode,
) -> Result<Vec<RunResult>> {
    let mut results = Vec::new();
    for &alpha in alphas {
        let cfg = PolicyConfig::Adapt { alpha, replan_every };
        results.push(run(profile, events, &cfg, mode.clone())?);
    }
    for cfg in baselines {
        results.push(run(profile, events, cfg, mode.clone())?);
    }
    Ok(results)
}

fn summarize(policy: String, alpha: Option<f64>, profile: &Profile, rows: &[RequestRow]) -> MetricsReport {
    let n = rows.len();
    let tiers = &profile.device.tiers;
    let mut hits_by_tier = vec![0u64; tiers.len()];
    let mut hits_total = 0u64;
    let mut delay_sum = 0.0;
    let mut quality_sum = 0.0;
    let mut delays: Vec<f64> = Vec::with_capacity(n);
    for row in rows {
        delay_sum += row.delay_s;
        quality_sum += row.quality;
        delays.push(row.delay_s);
        if let Some(name) = row.outcome.strip_prefix("hit:") {
            hits_total += 1;
            if let Some(i) = tiers.iter().position(|t| t.name == name) {
                hits_by_tier[i] += 1;
            }
        }
    }
    delays.sort_by(f64::total_cmp);
    let p95 = if n == 0 {
        f64::NAN
    } else {
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        delays[rank - 1]
    };
    let nf = n as f64;
    MetricsReport {
        policy,
        alpha,
        requests: n as u64,
        mean_ttft_s: delay_sum / nf,
        p95_ttft_s: p95,
        hit_rate_total: hits_total as f64 / nf,
        hit_rate_by_tier: hits_by_tier.iter().map(|h| *h as f64 / nf).collect(),
        mean_quality: quality_sum / nf,
    }
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Write per-request rows: `t_s,context_id,outcome,delay_s,quality`.
pub fn write_rows_csv(path: &Path, rows: &[RequestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    w.write_record(["t_s", "context_id", "outcome", "delay_s", "quality"])
        .and_then(|()| {
            for r in rows {
                w.write_record([
                    r.t_s.to_string(),
                    r.context_id.clone(),
                    r.outcome.clone(),
                    r.delay_s.to_string(),
                    r.quality.to_string(),
                ])?;
            }
            w.flush().map_err(csv::Error::from)
        })
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

/// Write one summary line per report:
/// `policy,alpha,mean_ttft_s,p95_ttft_s,hit_rate_total,hit_rate_<tier>...,mean_quality`.
pub fn write_summary_csv(path: &Path, profile: &Profile, reports: &[&MetricsReport]) -> Result<()> {
    let mut header = vec!["policy".to_string(), "alpha".into(), "mean_ttft_s".into(), "p95_ttft_s".into(), "hit_rate_total".into()];
    for t in &profile.device.tiers {
        header.push(format!("hit_rate_{}", t.name));
    }
    header.push("mean_quality".into());

    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    let write = |w: &mut csv::Writer<std::fs::File>| -> std::result::Result<(), csv::Error> {
        w.write_record(&header)?;
        for r in reports {
            let mut rec = vec![
                r.policy.clone(),
                r.alpha.map(|a| a.to_string()).unwrap_or_default(),
                fmt_metric(r.mean_ttft_s),
                fmt_metric(r.p95_ttft_s),
                fmt_metric(r.hit_rate_total),
            ];
            for i in 0..profile.device.tiers.len() {
                rec.push(fmt_metric(r.hit_rate_by_tier.get(i).copied().unwrap_or(f64::NAN)));
            }
            rec.push(fmt_metric(r.mean_quality));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)
    };
    write(&mut w).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}
