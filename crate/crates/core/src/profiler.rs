//! Offline profiling artifacts: quality-vs-rate curves per context class,
//! device tier characteristics, and the decayed frequency estimator.
//!
//! Everything here is data the policy consumes. Curves are fitted once from
//! (rate, quality) samples and never change during replay; device numbers
//! come from a JSON profile or from a small read microbenchmark.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CacheEntry, CompressionMethod, DecompressCoeff, DeviceTier, MethodKind, ModelShape,
};

/// Piecewise-linear quality as a function of compression rate, one polyline
/// per method. Knots are ascending in rate, qualities are monotone
/// non-decreasing, and the knot at rate 1.0 always has quality 1.0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QualityCurve {
    knots: BTreeMap<MethodKind, Vec<(f64, f64)>>,
}

impl QualityCurve {
    pub fn methods(&self) -> impl Iterator<Item = (MethodKind, &[(f64, f64)])> {
        self.knots.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn knots(&self, kind: MethodKind) -> Option<&[(f64, f64)]> {
        self.knots.get(&kind).map(|v| v.as_slice())
    }

    pub fn insert_fitted(&mut self, kind: MethodKind, knots: Vec<(f64, f64)>) {
        self.knots.insert(kind, knots);
    }

    /// Interpolated quality at `rate` in (0, 1]. Between knots the curve is
    /// linear; below the smallest knot it falls on the line through the
    /// origin, clamped to [0, 1].
    pub fn quality_at(&self, kind: MethodKind, rate: f64) -> Result<f64> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::Contract(format!("rate must lie in (0, 1], got {rate}")));
        }
        let knots = self
            .knots
            .get(&kind)
            .ok_or_else(|| Error::Config(format!("no quality curve for method {kind}")))?;
        let (first_r, first_q) = knots[0];
        if rate <= first_r {
            return Ok((first_q * rate / first_r).clamp(0.0, 1.0));
        }
        for w in knots.windows(2) {
            let (r0, q0) = w[0];
            let (r1, q1) = w[1];
            if rate <= r1 {
                let t = (rate - r0) / (r1 - r0);
                return Ok((q0 + t * (q1 - q0)).clamp(0.0, 1.0));
            }
        }
        // Unreachable in valid curves: the last knot is at rate 1.0.
        Ok(1.0)
    }
}

/// Fit one method's quality curve from (rate, quality) samples.
///
/// Sample means per distinct rate are projected onto monotone non-decreasing
/// values with pool-adjacent-violators, weighting each rate by its sample
/// count, and a (1.0, 1.0) knot is appended when absent. Quality at rate 1.0
/// is pinned to 1.0: the identity representation loses nothing.
pub fn fit_quality_curve(samples: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::Config("cannot fit a quality curve from zero samples".into()));
    }
    for &(r, q) in samples {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Config(format!("sample rate {r} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Config(format!("sample quality {q} outside [0, 1]")));
        }
    }

    // Mean per distinct rate, rates ascending.
    let mut by_rate: BTreeMap<u64, (f64, f64, f64)> = BTreeMap::new();
    for &(r, q) in samples {
        let e = by_rate.entry(r.to_bits()).or_insert((r, 0.0, 0.0));
        e.1 += q;
        e.2 += 1.0;
    }
    let mut rates: Vec<f64> = Vec::new();
    let mut means: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut points: Vec<(f64, f64, f64)> = by_rate.into_values().collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (r, sum, n) in points {
        rates.push(r);
        means.push(sum / n);
        weights.push(n);
    }

    // Pool adjacent violators: merge blocks until values are non-decreasing.
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new(); // (value, weight, count of rates)
    for i in 0..means.len() {
        blocks.push((means[i], weights[i], 1));
        while blocks.len() >= 2 {
            let (v2, w2, c2) = blocks[blocks.len() - 1];
            let (v1, w1, c1) = blocks[blocks.len() - 2];
            if v1 <= v2 {
                break;
            }
            blocks.pop();
            blocks.pop();
            blocks.push(((v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, c1 + c2));
        }
    }

    let mut knots = Vec::with_capacity(rates.len() + 1);
    let mut idx = 0;
    for (value, _, count) in blocks {
        for _ in 0..count {
            knots.push((rates[idx], value.clamp(0.0, 1.0)));
            idx += 1;
        }
    }
    match knots.last_mut() {
        Some(last) if last.0 == 1.0 => last.1 = 1.0,
        _ => knots.push((1.0, 1.0)),
    }
    Ok(knots)
}

/// The storage hierarchy plus the prefill cost model.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    /// Fastest first; read bandwidth is non-increasing down the list.
    pub tiers: Vec<DeviceTier>,
    pub prefill_s_per_token: f64,
}

impl DeviceProfile {
    /// Validate and normalize: tiers are reordered fastest-first if the
    /// config listed them slow-first.
    pub fn new(mut tiers: Vec<DeviceTier>, prefill_s_per_token: f64) -> Result<Self> {
        if tiers.is_empty() {
            return Err(Error::Config("a device profile needs at least one tier".into()));
        }
        if !(prefill_s_per_token >= 0.0) {
            return Err(Error::Config("prefill_s_per_token must be non-negative".into()));
        }
        for t in &tiers {
            t.validate()?;
        }
        tiers.sort_by(|a, b| b.read_bw_bytes_per_s.total_cmp(&a.read_bw_bytes_per_s));
        Ok(DeviceProfile { tiers, prefill_s_per_token })
    }

    pub fn tier(&self, idx: usize) -> &DeviceTier {
        &self.tiers[idx]
    }
}

/// Exponentially decayed frequency estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEstimator {
    pub half_life_s: f64,
    pub prior_weight: f64,
}

impl Default for FrequencyEstimator {
    fn default() -> Self {
        FrequencyEstimator { half_life_s: 300.0, prior_weight: 1.0 }
    }
}

impl FrequencyEstimator {
    pub fn new(half_life_s: f64, prior_weight: f64) -> Result<Self> {
        if !(half_life_s > 0.0) {
            return Err(Error::Config("half_life_s must be positive".into()));
        }
        if !(prior_weight >= 0.0) {
            return Err(Error::Config("prior_weight must be non-negative".into()));
        }
        Ok(FrequencyEstimator { half_life_s, prior_weight })
    }

    /// Estimated request rate in hits per second:
    /// `(prior + sum of 2^-(age/half_life)) * ln2 / half_life`.
    ///
    /// The prior keeps brand-new entries from estimating zero; each recorded
    /// request adds exactly `ln2 / half_life` at the instant it happens and
    /// decays afterwards.
    pub fn estimate_freq(&self, entry: &CacheEntry, now: f64) -> f64 {
        let mass = self.prior_weight + entry.decayed_mass(now, self.half_life_s);
        mass * std::f64::consts::LN_2 / self.half_life_s
    }
}

/// Everything the simulator needs about the environment: model shape, tiers,
/// per-class quality curves, and the frequency estimator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub model: ModelShape,
    pub device: DeviceProfile,
    pub curves: BTreeMap<String, QualityCurve>,
    pub freq: FrequencyEstimator,
    /// Per-method rate ladders: the union of curve knot rates across classes.
    methods: Vec<CompressionMethod>,
}

impl Profile {
    pub fn new(
        model: ModelShape,
        device: DeviceProfile,
        curves: BTreeMap<String, QualityCurve>,
        freq: FrequencyEstimator,
    ) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::Config("profile needs at least one class curve".into()));
        }
        let mut rates: BTreeMap<MethodKind, Vec<f64>> = BTreeMap::new();
        for curve in curves.values() {
            for (kind, knots) in curve.methods() {
                let dest = rates.entry(kind).or_default();
                dest.extend(knots.iter().map(|(r, _)| *r));
            }
        }
        let methods = rates
            .into_iter()
            .map(|(kind, r)| CompressionMethod::new(kind, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Profile { model, device, curves, freq, methods })
    }

    pub fn methods(&self) -> &[CompressionMethod] {
        &self.methods
    }

    pub fn curve(&self, class_tag: &str) -> Result<&QualityCurve> {
        self.curves
            .get(class_tag)
            .ok_or_else(|| Error::Config(format!("no quality curve for class {class_tag:?}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProfileFile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad profile JSON: {e}")))?;
        file.into_profile()
    }

    pub fn to_json(&self) -> String {
        let file = ProfileFile::from_profile(self);
        serde_json::to_string_pretty(&file).expect("profile serialization cannot fail")
    }
}

/// On-disk JSON schema. Curve knots are `[rate, quality]` pairs keyed by
/// class tag and then method name; all numbers are plain decimals.
#[derive(Debug, Serialize, Deserialize)]
struct ProfileFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<ModelShape>,
    tiers: Vec<DeviceTier>,
    prefill_s_per_token: f64,
    curves: BTreeMap<String, BTreeMap<MethodKind, Vec<(f64, f64)>>>,
    freq: FrequencyEstimator,
}

impl ProfileFile {
    fn into_profile(self) -> Result<Profile> {
        let model = match self.model {
            Some(m) => ModelShape::new(m.num_layers, m.num_kv_heads, m.head_dim, m.bytes_per_element)?,
            None => desk_shape(),
        };
        let freq = FrequencyEstimator::new(self.freq.half_life_s, self.freq.prior_weight)?;
        let device = DeviceProfile::new(self.tiers, self.prefill_s_per_token)?;
        let mut curves = BTreeMap::new();
        for (class, methods) in self.curves {
            let mut curve = QualityCurve::default();
            for (kind, knots) in methods {
                curve.insert_fitted(kind, fit_quality_curve(&knots)?);
            }
            curves.insert(class, curve);
        }
        Profile::new(model, device, curves, freq)
    }

    fn from_profile(p: &Profile) -> Self {
        let curves = p
            .curves
            .iter()
            .map(|(class, curve)| {
                let methods = curve.methods().map(|(k, knots)| (k, knots.to_vec())).collect();
                (class.clone(), methods)
            })
            .collect();
        ProfileFile {
            model: Some(p.model),
            tiers: p.device.tiers.clone(),
            prefill_s_per_token: p.device.prefill_s_per_token,
            curves,
            freq: p.freq,
        }
    }
}

fn desk_shape() -> ModelShape {
    ModelShape::new(8, 1, 128, 2).expect("valid shape")
}

/// Measure sequential in-memory read bandwidth in bytes per second: median
/// wall time over at least 5 trials of copying at least 64 MiB.
pub fn measure_mem_read_bandwidth(len: usize, trials: usize) -> f64 {
    let len = len.max(64 << 20);
    let trials = trials.max(5);
    let src = vec![0u8; len];
    let mut dst = vec![0u8; len];
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        dst.copy_from_slice(&src);
        times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(&dst);
    }
    times.sort_by(f64::total_cmp);
    len as f64 / times[times.len() / 2]
}

/// Measure file read bandwidth through the filesystem at `path` (a scratch
/// file that will be created and removed). Same trial rules as the memory
/// benchmark; the page cache makes this an upper bound on cold reads.
pub fn measure_file_read_bandwidth(path: &Path, len: usize, trials: usize) -> Result<f64> {
    let len = len.max(64 << 20);
    let trials = trials.max(5);
    fs::write(path, vec![7u8; len]).map_err(|e| Error::io(path, e))?;
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(&data);
    }
    let _ = fs::remove_file(path);
    times.sort_by(f64::total_cmp);
    Ok(len as f64 / times[times.len() / 2])
}

/// Desk-scale profile used by the CLI when no profile file is given: a 1 GiB
/// DRAM tier over a 4 GiB SSD tier, with curves for the three bundled
/// context classes. Capacity and bandwidth ratios mirror a 100 GB / 400 GB
/// server hierarchy so policy behavior carries over at test scale.
pub fn desk_profile() -> Profile {
    build_preset(
        desk_shape(),
        1 << 30,      // DRAM capacity
        4u64 << 30,   // SSD capacity
        5.0e-6,       // prefill seconds per token
    )
}

/// Server-scale profile: 100 GB DRAM, 400 GB SSD, and a prefill cost sized
/// for a 32-layer model at 131072 cache bytes per token.
pub fn server_profile() -> Profile {
    build_preset(
        ModelShape::new(32, 8, 128, 2).expect("valid shape"),
        100_000_000_000,
        400_000_000_000,
        1.6e-4,
    )
}

fn build_preset(model: ModelShape, dram_cap: u64, ssd_cap: u64, prefill: f64) -> Profile {
    let coeff = DecompressCoeff { quantize: 2.0e-11, tokendrop: 5.0e-12 };
    let tiers = vec![
        DeviceTier {
            name: "dram".into(),
            capacity_bytes: dram_cap,
            read_bw_bytes_per_s: 20.0e9,
            write_bw_bytes_per_s: 20.0e9,
            decompress_s_per_byte: coeff,
        },
        DeviceTier {
            name: "ssd".into(),
            capacity_bytes: ssd_cap,
            read_bw_bytes_per_s: 1.0e9,
            write_bw_bytes_per_s: 0.5e9,
            decompress_s_per_byte: coeff,
        },
    ];
    let device = DeviceProfile::new(tiers, prefill).expect("preset tiers are valid");

    // Quantization rates are what 2/4/8-bit group codes achieve against a
    // 16-bit cache with 32-element groups; token dropping is continuous, so
    // its ladder is a handful of useful keep fractions. Qualities are
    // synthetic profiling data: summaries survive token dropping well, code
    // barely tolerates it, and quantization degrades everything gently.
    let quant = |q25: f64, q375: f64, q625: f64| {
        vec![(0.25, q25), (0.375, q375), (0.625, q625), (1.0, 1.0)]
    };
    let drop = |q05: f64, q10: f64, q20: f64, q50: f64| {
        vec![(0.05, q05), (0.1, q10), (0.2, q20), (0.5, q50), (1.0, 1.0)]
    };
    let mut curves = BTreeMap::new();
    for (class, qknots, dknots) in [
        ("summarization", quant(0.88, 0.94, 0.98), drop(0.82, 0.90, 0.94, 0.97)),
        ("qa", quant(0.84, 0.91, 0.97), drop(0.45, 0.62, 0.75, 0.90)),
        ("coding", quant(0.85, 0.93, 0.98), drop(0.25, 0.35, 0.55, 0.80)),
    ] {
        let mut curve = QualityCurve::default();
        curve.insert_fitted(MethodKind::Quantize, fit_quality_curve(&qknots).unwrap());
        curve.insert_fitted(MethodKind::TokenDrop, fit_quality_curve(&dknots).unwrap());
        curves.insert(class.to_string(), curve);
    }

    Profile::new(model, device, curves, FrequencyEstimator::default()).expect("preset is valid")
}
