//! End-to-end acceptance checks: planner optimality against exhaustive
//! search, byte-accounting safety under random churn, the headline policy
//! comparisons on the default synthetic workload, codec exactness, arrival
//! statistics, and estimator laws. Each test prints one PASS line with its
//! measured numbers so a failing bound is easy to locate.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tierkv_core::codecs::{dequantize, drop_tokens, quantize, DropSpec, KvLayout, QuantSpec};
use tierkv_core::engine::{Engine, StorageMode};
use tierkv_core::model::{
    CacheEntry, DecompressCoeff, DeviceTier, EntryId, MethodKind, ModelShape,
};
use tierkv_core::policy::{brute_force_plan, plan, Alpha};
use tierkv_core::profiler::{
    desk_profile, fit_quality_curve, DeviceProfile, FrequencyEstimator, Profile, QualityCurve,
};
use tierkv_core::sim::{run, sweep, write_rows_csv, write_summary_csv, PolicyConfig, RunResult};
use tierkv_core::workload::{gen_trace, write_trace, TraceEvent, WorkloadSpec};

/// Two-tier profile with 2 bytes per token, no decompression cost, and an
/// estimator tuned so k requests just before time zero give frequency k.
fn two_tier_profile(prefill: f64, dram_cap: u64, ssd_cap: u64, quant_knots: Vec<(f64, f64)>) -> Profile {
    let model = ModelShape::new(1, 1, 1, 1).unwrap();
    let tiers = vec![
        DeviceTier {
            name: "dram".into(),
            capacity_bytes: dram_cap,
            read_bw_bytes_per_s: 10e9,
            write_bw_bytes_per_s: 10e9,
            decompress_s_per_byte: DecompressCoeff { quantize: 0.0, tokendrop: 0.0 },
        },
        DeviceTier {
            name: "ssd".into(),
            capacity_bytes: ssd_cap,
            read_bw_bytes_per_s: 1e9,
            write_bw_bytes_per_s: 1e9,
            decompress_s_per_byte: DecompressCoeff { quantize: 0.0, tokendrop: 0.0 },
        },
    ];
    let device = DeviceProfile::new(tiers, prefill).unwrap();
    let mut curve = QualityCurve::default();
    curve.insert_fitted(MethodKind::Quantize, quant_knots);
    let mut curves = BTreeMap::new();
    curves.insert("default".to_string(), curve);
    let freq = FrequencyEstimator::new(std::f64::consts::LN_2, 0.0).unwrap();
    Profile::new(model, device, curves, freq).unwrap()
}

fn entry_with_freq(id: &str, tokens: u64, profile: &Profile, k: usize) -> CacheEntry {
    let mut e = CacheEntry::new(EntryId::new(id), tokens, "default", &profile.model, -1.0).unwrap();
    for i in (0..k).rev() {
        e.record_request(-(i as f64) * 1e-20, profile.freq.half_life_s);
    }
    e
}

#[test]
fn planner_tracks_exhaustive_search_within_one_ladder_step() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut ratios = Vec::new();
    let mut worst_slack = f64::INFINITY;
    for case in 0..500 {
        // Up to four stored rates per method (deeper rungs plus the full
        // copy), two tiers, up to six entries.
        let mut rates: Vec<f64> = (0..rng.gen_range(1..=3))
            .map(|_| (rng.gen_range(1..=15) as f64) * 0.05)
            .collect();
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        let knots: Vec<(f64, f64)> = rates
            .iter()
            .scan(0.0f64, |q, r| {
                *q = (*q + rng.gen_range(0.05..0.5)).min(0.99);
                Some((*r, *q))
            })
            .chain(std::iter::once((1.0, 1.0)))
            .collect();
        let dram = rng.gen_range(50_000_000..1_500_000_000u64);
        let ssd = rng.gen_range(500_000_000..4_000_000_000u64);
        let profile = two_tier_profile(rng.gen_range(1e-9..4e-9), dram, ssd, knots);
        let n = rng.gen_range(2..=6);
        let entries: Vec<CacheEntry> = (0..n)
            .map(|i| {
                entry_with_freq(
                    &format!("e{i}"),
                    rng.gen_range(50_000_000..700_000_000),
                    &profile,
                    rng.gen_range(1..15),
                )
            })
            .collect();
        let alpha = Alpha::new([0.25, 1.0, 4.0][rng.gen_range(0..3)]).unwrap();
        let g = plan(&profile, alpha, &entries, 0.0).unwrap();
        let b = brute_force_plan(&profile, alpha, &entries, 0.0).unwrap();
        assert!(
            g.total_utility <= b.total_utility + 1e-9,
            "case {case}: greedy {} beat the exhaustive optimum {}",
            g.total_utility,
            b.total_utility
        );
        let slack = g.total_utility - (b.total_utility - g.max_ladder_step);
        worst_slack = worst_slack.min(slack);
        assert!(
            slack >= -1e-9,
            "case {case}: greedy {} fell more than one ladder step ({}) below optimum {}",
            g.total_utility,
            g.max_ladder_step,
            b.total_utility
        );
        if b.total_utility > 0.0 {
            ratios.push(g.total_utility / b.total_utility);
        }
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    assert!(median >= 0.95, "median greedy/optimal ratio {median} below 0.95");
    println!(
        "PASS planner optimality: 500 instances, median ratio {median:.4}, worst bound slack {worst_slack:.3e}, {:.1}s",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn admission_never_breaks_capacity_or_byte_accounting() {
    let started = Instant::now();
    let mut outer = ChaCha8Rng::seed_from_u64(202);
    for seq in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(outer.gen());
        let model = ModelShape::new(1, 1, 16, 2).unwrap();
        let coeff = DecompressCoeff { quantize: 2e-11, tokendrop: 5e-12 };
        let tiers = vec![
            DeviceTier {
                name: "dram".into(),
                capacity_bytes: rng.gen_range(100_000..800_000),
                read_bw_bytes_per_s: 20e9,
                write_bw_bytes_per_s: 20e9,
                decompress_s_per_byte: coeff,
            },
            DeviceTier {
                name: "ssd".into(),
                capacity_bytes: rng.gen_range(300_000..3_000_000),
                read_bw_bytes_per_s: 1e9,
                write_bw_bytes_per_s: 0.5e9,
                decompress_s_per_byte: coeff,
            },
        ];
        let device = DeviceProfile::new(tiers, rng.gen_range(1e-6..2e-5)).unwrap();
        let mut curve = QualityCurve::default();
        curve.insert_fitted(
            MethodKind::Quantize,
            vec![(0.25, rng.gen_range(0.6..0.9)), (0.5, rng.gen_range(0.9..0.99)), (1.0, 1.0)],
        );
        curve.insert_fitted(
            MethodKind::TokenDrop,
            vec![(0.1, rng.gen_range(0.2..0.8)), (0.3, rng.gen_range(0.8..0.95)), (1.0, 1.0)],
        );
        let mut curves = BTreeMap::new();
        curves.insert("default".into(), curve);
        let profile =
            Profile::new(model, device, curves, FrequencyEstimator::default()).unwrap();
        let caps: Vec<u64> = profile.device.tiers.iter().map(|t| t.capacity_bytes).collect();

        let contexts: Vec<(String, u64)> =
            (0..rng.gen_range(4..12)).map(|i| (format!("c{i}"), rng.gen_range(200..4000))).collect();
        let cfg = PolicyConfig::Adapt {
            alpha: rng.gen_range(1e-3..1.0),
            replan_every: rng.gen_range(3..16),
        };
        let engine = Engine::new(profile, StorageMode::SizeOnly).unwrap();
        let mut policy = cfg.build().unwrap();
        let mut t = 0.0;
        for step in 0..40 {
            t += rng.gen_range(0.05..20.0);
            let (id, tokens) = contexts[rng.gen_range(0..contexts.len())].clone();
            let event = TraceEvent { t_s: t, context_id: id, token_count: tokens, class_tag: "default".into() };
            let outcome = engine.note_request(&event).unwrap();
            let decisions = policy.on_request(&engine, &outcome).unwrap();
            engine.apply(&decisions).unwrap();

            let view = engine.view();
            let mut recount = vec![0u64; caps.len()];
            for r in view.residency.values() {
                recount[r.tier] += r.stored_size;
            }
            assert_eq!(recount, view.used, "sequence {seq} step {step}: books desynced");
            for (tier, cap) in caps.iter().enumerate() {
                assert!(
                    view.used[tier] <= *cap,
                    "sequence {seq} step {step}: tier {tier} over capacity ({} > {cap})",
                    view.used[tier]
                );
            }
        }
    }
    println!(
        "PASS accounting safety: 1000 sequences x 40 arrivals, zero violations, {:.1}s",
        started.elapsed().as_secs_f64()
    );
}

/// Default synthetic workload plus the comparison suite, shared by the two
/// policy-level checks below.
fn default_sweep() -> &'static Vec<RunResult> {
    static SWEEP: OnceLock<Vec<RunResult>> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let spec = WorkloadSpec {
            contexts: 440,
            zipf_s: 1.0,
            lambda: 2.5,
            duration_s: 4000.0,
            tokens_min: 1024,
            tokens_max: 16384,
            classes: vec!["summarization".into(), "qa".into(), "coding".into()],
            seed: 7,
        };
        let events = gen_trace(&spec).unwrap();
        let profile = desk_profile();
        let baselines = vec![
            PolicyConfig::NoCompressionLru,
            PolicyConfig::FixedLru { method: MethodKind::Quantize, rate: 0.25 },
            PolicyConfig::FixedLru { method: MethodKind::TokenDrop, rate: 0.1 },
            PolicyConfig::FixedLru { method: MethodKind::TokenDrop, rate: 0.2 },
        ];
        sweep(&profile, &events, &[0.003, 0.01, 0.03, 0.1], 256, &baselines, &StorageMode::SizeOnly).unwrap()
    })
}

#[test]
fn adaptive_policy_beats_fixed_baselines_on_ttft_at_matched_quality() {
    let started = Instant::now();
    let results = default_sweep();
    let adapt: Vec<_> = results.iter().filter(|r| r.report.alpha.is_some()).collect();
    let fixed: Vec<_> = results.iter().filter(|r| r.report.alpha.is_none()).collect();
    assert!(!adapt.is_empty() && !fixed.is_empty());

    // Speed claim: some alpha is at least 1.2x faster than every fixed
    // baseline of comparable quality (within two points of the adaptive
    // run, or better).
    let mut best: Option<(f64, f64, String)> = None;
    for a in &adapt {
        let comparable: Vec<_> = fixed
            .iter()
            .filter(|b| b.report.mean_quality >= a.report.mean_quality - 0.02)
            .collect();
        let Some(rival) = comparable
            .iter()
            .min_by(|x, y| x.report.mean_ttft_s.total_cmp(&y.report.mean_ttft_s))
        else {
            continue;
        };
        let ratio = rival.report.mean_ttft_s / a.report.mean_ttft_s;
        if best.as_ref().is_none_or(|(r, _, _)| ratio > *r) {
            best = Some((ratio, a.report.alpha.unwrap(), rival.report.policy.clone()));
        }
    }
    let (ratio, alpha, rival) = best.expect("some alpha has a quality-comparable fixed rival");
    assert!(
        ratio >= 1.2,
        "best TTFT advantage over a quality-comparable fixed baseline is {ratio:.3}x (vs {rival}), below 1.2x"
    );

    // The 2-bit quantize baseline is the strongest fixed rival, so the
    // same claim must hold against it specifically: some alpha matches
    // its quality within two points and beats its TTFT by 1.2x.
    let kivi = fixed
        .iter()
        .find(|b| b.report.policy == "lru-quantize-0.25")
        .expect("2-bit quantize baseline in suite");
    let kivi_ratio = adapt
        .iter()
        .filter(|a| a.report.mean_quality >= kivi.report.mean_quality - 0.02)
        .map(|a| kivi.report.mean_ttft_s / a.report.mean_ttft_s)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        kivi_ratio >= 1.2,
        "best quality-matched TTFT advantage over the 2-bit baseline is {kivi_ratio:.3}x, below 1.2x"
    );

    // Quality claim: some alpha beats every lossy fixed baseline on mean
    // quality by more than two points.
    let lossy: Vec<_> = fixed.iter().filter(|b| b.report.policy != "lru-full").collect();
    let quality_alpha = adapt
        .iter()
        .find(|a| {
            lossy
                .iter()
                .all(|b| a.report.mean_quality >= b.report.mean_quality + 0.02)
        })
        .map(|a| a.report.alpha.unwrap());
    assert!(
        quality_alpha.is_some(),
        "no alpha exceeds every lossy fixed baseline's mean quality by 2 points"
    );

    println!(
        "PASS policy comparison: alpha {alpha} is {ratio:.2}x faster than {rival}, {kivi_ratio:.2}x vs the 2-bit baseline at matched quality; alpha {} wins quality outright, {:.1}s",
        quality_alpha.unwrap(),
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn alpha_sweep_trades_dram_residency_monotonically() {
    let started = Instant::now();
    let results = default_sweep();
    let mut adapt: Vec<(f64, f64)> = results
        .iter()
        .filter_map(|r| r.report.alpha.map(|a| (a, r.report.hit_rate_by_tier[0])))
        .collect();
    adapt.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(adapt.len() >= 4, "expected a four point alpha grid");
    for w in adapt.windows(2) {
        assert!(
            w[1].1 <= w[0].1 + 1e-9,
            "DRAM hit rate rose from {:.4} to {:.4} as alpha went {} -> {}",
            w[0].1,
            w[1].1,
            w[0].0,
            w[1].0
        );
    }
    let kivi_dram = results
        .iter()
        .find(|r| r.report.policy == "lru-quantize-0.25")
        .expect("2-bit quantize baseline in suite")
        .report
        .hit_rate_by_tier[0];
    let extreme = adapt[0].1;
    assert!(
        extreme >= kivi_dram + 0.10,
        "delay-weighted extreme DRAM hit rate {extreme:.4} is not 10 points above the 2-bit fixed baseline {kivi_dram:.4}"
    );
    println!(
        "PASS residency sweep: DRAM hit rate falls {:.4} -> {:.4} over alpha grid, extreme beats 2-bit baseline by {:.1} points, {:.1}s",
        adapt[0].1,
        adapt[adapt.len() - 1].1,
        (extreme - kivi_dram) * 100.0,
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn codec_sizes_match_predictions_and_error_bounds_hold() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    // Predicted vs actual sizes, quantization and token dropping mixed.
    for case in 0..10_000 {
        if case % 2 == 0 {
            let bits = [2u8, 4, 8][rng.gen_range(0..3)];
            let group = *[4u32, 8, 16, 32, 64, 100, 128]
                .iter()
                .filter(|g| (**g * bits as u32) % 8 == 0)
                .nth(rng.gen_range(0..3))
                .unwrap();
            let n = rng.gen_range(1..=1200usize);
            let values: Vec<f32> = (0..n).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let spec = QuantSpec::new(bits, group).unwrap();
            let out = quantize(&values, &spec).unwrap();
            assert_eq!(out.len() as u64, spec.compressed_bytes(n as u64), "case {case}");
        } else {
            let tokens = rng.gen_range(1..=3000u64);
            let stride = 4 * rng.gen_range(1..=64u32);
            let layout = KvLayout::new(tokens, stride).unwrap();
            let payload: Vec<u8> = (0..layout.total_bytes()).map(|i| i as u8).collect();
            let spec = DropSpec::for_rate(rng.gen_range(0.01..1.0), tokens).unwrap();
            let kept = spec.kept_indices(tokens);
            let (out, idx) = drop_tokens(&payload, &layout, &spec).unwrap();
            assert_eq!(out.len() as u64, kept.len() as u64 * stride as u64, "case {case}");
            assert_eq!(idx, kept, "case {case}");
        }
    }

    // Reconstruction error stays within half a quantization step plus a
    // few ulps of float slop, over 1e5 groups per bit width.
    for &bits in &[2u8, 4, 8] {
        let levels = ((1u32 << bits) - 1) as f64;
        let group = 32u32;
        let spec = QuantSpec::new(bits, group).unwrap();
        for batch in 0..100 {
            let groups = 1000usize;
            let n = groups * group as usize;
            let scale = 10f32.powi(rng.gen_range(-2..4));
            let values: Vec<f32> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
            let decoded = dequantize(&quantize(&values, &spec).unwrap(), n as u64, &spec).unwrap();
            for (chunk, dchunk) in values.chunks(group as usize).zip(decoded.chunks(group as usize)) {
                let min = chunk.iter().copied().fold(f32::INFINITY, f32::min) as f64;
                let max = chunk.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                let bound = (max - min) / (2.0 * levels) + 4.0 * f32::EPSILON as f64 * (max - min + min.abs());
                for (x, y) in chunk.iter().zip(dchunk) {
                    assert!(
                        (*x as f64 - *y as f64).abs() <= bound,
                        "bits={bits} batch={batch} x={x} decoded={y} bound={bound}"
                    );
                }
            }
        }
    }

    // Constant groups come back bit-exact.
    for _ in 0..1000 {
        let bits = [2u8, 4, 8][rng.gen_range(0..3)];
        let spec = QuantSpec::new(bits, 32).unwrap();
        let v = rng.gen_range(-1e4f32..1e4);
        let n = rng.gen_range(1..=300usize);
        let values = vec![v; n];
        let decoded = dequantize(&quantize(&values, &spec).unwrap(), n as u64, &spec).unwrap();
        assert_eq!(decoded, values, "constant {v} across {n} elements");
    }

    println!(
        "PASS codec exactness: 10k size identities, 3x100k group error bounds, constants exact, {:.1}s",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn arrival_statistics_match_the_model_and_outputs_are_reproducible() {
    let started = Instant::now();
    let spec = WorkloadSpec {
        contexts: 50,
        zipf_s: 1.0,
        lambda: 2.0,
        duration_s: 5000.0,
        tokens_min: 256,
        tokens_max: 4096,
        classes: vec!["summarization".into(), "qa".into(), "coding".into()],
        seed: 11,
    };
    let events = gen_trace(&spec).unwrap();
    assert!(events.len() >= 9_000, "expected about 10k events, got {}", events.len());
    let gaps: Vec<f64> = events.windows(2).map(|w| w[1].t_s - w[0].t_s).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64;
    let cv = var.sqrt() / mean;
    let expected = 1.0 / spec.lambda;
    assert!(
        (mean - expected).abs() <= 0.05 * expected,
        "mean inter-arrival {mean:.5} beyond 5% of {expected:.5}"
    );
    assert!((cv - 1.0).abs() <= 0.05, "inter-arrival CV {cv:.4} beyond 5% of 1");

    // Same seed, same bytes: traces and metric files alike.
    let dir = tempfile::tempdir().unwrap();
    let trace_a = dir.path().join("a.csv");
    let trace_b = dir.path().join("b.csv");
    write_trace(&trace_a, &events).unwrap();
    write_trace(&trace_b, &gen_trace(&spec).unwrap()).unwrap();
    assert_eq!(std::fs::read(&trace_a).unwrap(), std::fs::read(&trace_b).unwrap(), "trace bytes differ");

    let profile = desk_profile();
    let short: Vec<TraceEvent> = events.into_iter().take(1500).collect();
    let cfg = PolicyConfig::Adapt { alpha: 0.01, replan_every: 64 };
    let mut file_pairs = Vec::new();
    for tag in ["x", "y"] {
        let result = run(&profile, &short, &cfg, StorageMode::SizeOnly).unwrap();
        let rows = dir.path().join(format!("rows_{tag}.csv"));
        let summary = dir.path().join(format!("summary_{tag}.csv"));
        write_rows_csv(&rows, &result.rows).unwrap();
        write_summary_csv(&summary, &profile, &[&result.report]).unwrap();
        file_pairs.push((rows, summary));
    }
    assert_eq!(
        std::fs::read(&file_pairs[0].0).unwrap(),
        std::fs::read(&file_pairs[1].0).unwrap(),
        "row file bytes differ between identical runs"
    );
    assert_eq!(
        std::fs::read(&file_pairs[0].1).unwrap(),
        std::fs::read(&file_pairs[1].1).unwrap(),
        "summary file bytes differ between identical runs"
    );
    println!(
        "PASS workload statistics: mean gap {mean:.4}s (target {expected:.4}s), CV {cv:.4}, outputs byte-identical, {:.1}s",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn quality_curves_and_frequency_estimates_obey_their_laws() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);

    // Fitted curves are monotone in rate and pinned to 1.0 at rate 1.0,
    // whatever the raw samples looked like.
    for case in 0..200 {
        let n = rng.gen_range(3..30);
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(0.02..0.98), rng.gen_range(0.0..1.0)))
            .collect();
        let knots = fit_quality_curve(&samples).unwrap();
        let mut curve = QualityCurve::default();
        let kind = if case % 2 == 0 { MethodKind::Quantize } else { MethodKind::TokenDrop };
        curve.insert_fitted(kind, knots);
        assert_eq!(curve.quality_at(kind, 1.0).unwrap(), 1.0, "case {case}: full rate not pinned to 1");
        for _ in 0..50 {
            let mut r1 = rng.gen_range(0.001..1.0);
            let mut r2 = rng.gen_range(0.001..1.0);
            if r1 > r2 {
                std::mem::swap(&mut r1, &mut r2);
            }
            let q1 = curve.quality_at(kind, r1).unwrap();
            let q2 = curve.quality_at(kind, r2).unwrap();
            assert!(q1 <= q2 + 1e-12, "case {case}: quality fell from {q1} to {q2} as rate rose {r1} -> {r2}");
            assert!((0.0..=1.0).contains(&q1), "case {case}: quality {q1} out of range");
        }
    }

    // The frequency estimate equals the closed form (prior + sum of
    // exponentially decayed request masses) scaled by ln2 over the half
    // life, including when old requests are folded into the carry mass.
    let shape = ModelShape::new(1, 1, 16, 2).unwrap();
    for case in 0..200 {
        let half_life = rng.gen_range(5.0..500.0);
        let prior = rng.gen_range(0.0..3.0);
        let est = FrequencyEstimator::new(half_life, prior).unwrap();
        let n = rng.gen_range(1..150); // beyond the window size, to exercise folding
        let mut times: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1000.0)).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut entry = CacheEntry::new(EntryId::new("e"), 100, "default", &shape, -1.0).unwrap();
        for t in &times {
            entry.record_request(*t, half_life);
        }
        let now = 1000.0 + rng.gen_range(0.0..3.0 * half_life);
        let expected: f64 = (prior + times.iter().map(|t| 2f64.powf(-(now - t) / half_life)).sum::<f64>())
            * std::f64::consts::LN_2
            / half_life;
        let got = est.estimate_freq(&entry, now);
        assert!(
            (got - expected).abs() <= 1e-9 * expected.max(1e-12),
            "case {case}: estimate {got} vs closed form {expected} (n={})",
            times.len()
        );

        // Decay law: one half life later the rate estimate halves. The
        // prior does not decay, so check this with a prior of zero.
        let est0 = FrequencyEstimator::new(half_life, 0.0).unwrap();
        let f1 = est0.estimate_freq(&entry, now);
        let f2 = est0.estimate_freq(&entry, now + half_life);
        assert!((f2 - f1 / 2.0).abs() <= 1e-12 * f1.max(1e-12), "case {case}: decay law broken");

        // Jump law: recording one more request at the observation instant
        // raises the estimate by exactly ln2 / half_life.
        let before = est.estimate_freq(&entry, now);
        entry.record_request(now, half_life);
        let after = est.estimate_freq(&entry, now);
        let jump = std::f64::consts::LN_2 / half_life;
        assert!(
            ((after - before) - jump).abs() <= 1e-9 * jump,
            "case {case}: jump {} vs expected {jump}",
            after - before
        );
    }

    println!(
        "PASS estimator laws: 200 random curves monotone and pinned, 200 frequency cases match closed form, {:.1}s",
        started.elapsed().as_secs_f64()
    );
}
