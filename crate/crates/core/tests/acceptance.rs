//! Acceptance suite. Runs every criterion in sequence (timing checks must not
//! share the CPU with other tests), prints one PASS/FAIL line per criterion
//! and fails if any criterion fails.
//!
//! Run with `cargo test -p ezcrop --test acceptance -- --nocapture` to see
//! the summary.

use std::time::{Duration, Instant};

use ezcrop::bench::run_bench;
use ezcrop::importance::{
    energy_zone_ratio, layer_energy_scores, rank_score, Beta, LayerImportance, Metric,
    ZoneGeometry,
};
use ezcrop::io::{decode_tensor, encode_tensor, read_tensor, write_tensor};
use ezcrop::pruner::{compose_layer, compose_plans, make_plan, prune_chain, LayerPlan, PrunePlan};
use ezcrop::rank::{numerical_rank, numerical_rank_complex};
use ezcrop::spectral::{fft2, fftshift, spectral_conv, KernelTensor, RealMatrix};
use ezcrop::stats::spearman;
use ezcrop::synth;
use rand::seq::index::sample;
use rand::Rng;

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn beta(v: f64) -> Beta {
    Beta::new(v).unwrap()
}

// Scatter form of circular convolution: every input pixel pushes its value
// through every kernel tap. Independent of the FFT path and of the gather
// form used by the library's verifier.
fn scatter_circular_conv(x: &[RealMatrix], k: &KernelTensor) -> Vec<RealMatrix> {
    let (h, w) = x[0].dims();
    let d = k.size();
    let c = d / 2;
    let mut out = vec![RealMatrix::zeros(h, w); k.outputs()];
    for (i, xi) in x.iter().enumerate() {
        for r in 0..h {
            for s in 0..w {
                let val = xi.get(r, s);
                for u in 0..d {
                    for v in 0..d {
                        let p = (r + u + h - c) % h;
                        let q = (s + v + w - c) % w;
                        for (j, oj) in out.iter_mut().enumerate() {
                            let cur = oj.get(p, q);
                            oj.set(p, q, cur + k.get(u, v, i, j) * val);
                        }
                    }
                }
            }
        }
    }
    out
}

fn criterion_1_theorem_equivalence() -> Outcome {
    const TOL: f64 = 1e-6;
    const LIMIT: Duration = Duration::from_secs(60);
    let start = Instant::now();
    let mut rng = synth::rng(0xC01);
    let mut max_err = 0.0f64;
    let mut configs = 0;
    while configs < 200 {
        let s = rng.random_range(1..=4);
        let t = rng.random_range(1..=4);
        let h = rng.random_range(4..=32);
        let w = rng.random_range(4..=32);
        let d = [1, 3, 5][rng.random_range(0..3)];
        if d > h.min(w) {
            // 5x5 kernels need maps of at least 5x5
            continue;
        }
        let x: Vec<RealMatrix> = (0..s).map(|_| synth::uniform_matrix(&mut rng, h, w)).collect();
        let k = synth::uniform_kernel(&mut rng, d, s, t);
        let fast = spectral_conv(&x, &k).expect("spectral conv");
        let slow = scatter_circular_conv(&x, &k);
        for (a, b) in fast.iter().zip(&slow) {
            max_err = max_err.max(a.max_abs_diff(b));
        }
        configs += 1;
    }
    let elapsed = start.elapsed();
    Outcome {
        id: 1,
        name: "spectral conv equals circular spatial conv",
        passed: max_err <= TOL && elapsed < LIMIT,
        detail: format!("{configs} configs, max_err {max_err:.2e} (<= {TOL:e}), {elapsed:.2?} (< 60s)"),
    }
}

fn criterion_2_rank_preservation() -> Outcome {
    let mut rng = synth::rng(0xC02);
    let mut violations = 0;
    let mut ranks_seen = std::collections::BTreeSet::new();
    for _ in 0..100 {
        let h = rng.random_range(4..=32);
        let w = rng.random_range(4..=32);
        let r = rng.random_range(0..=h.min(w));
        let m = synth::low_rank_matrix(&mut rng, h, w, r);
        let base = numerical_rank(&m).unwrap();
        let shifted = numerical_rank(&m.fftshift()).unwrap();
        let spectrum = fft2(&m);
        let spectral = numerical_rank_complex(&spectrum).unwrap();
        let spectral_shifted = numerical_rank_complex(&fftshift(&spectrum)).unwrap();
        ranks_seen.insert(base);
        if base != r || shifted != base || spectral != base || spectral_shifted != base {
            violations += 1;
        }
    }
    Outcome {
        id: 2,
        name: "rank preserved by fftshift and fft2",
        passed: violations == 0,
        detail: format!(
            "100 matrices, {} distinct ranks, {violations} violations",
            ranks_seen.len()
        ),
    }
}

fn criterion_3_closed_forms() -> Outcome {
    let mut violations = Vec::new();

    for &(h, w) in &[(8, 8), (16, 16), (32, 32), (4, 8)] {
        let eta = energy_zone_ratio(&[RealMatrix::constant(h, w, 1.7)], beta(0.25)).unwrap();
        if eta != 0.0 {
            violations.push(format!("constant {h}x{w}: eta {eta:e}"));
        }
    }

    let eta = energy_zone_ratio(&[RealMatrix::impulse(8, 8, 0, 0)], beta(0.25)).unwrap();
    if eta != 0.859375 {
        violations.push(format!("impulse 8x8: eta {eta}"));
    }
    for &(h, w, b) in &[(16, 16, 0.25), (32, 32, 0.5), (12, 20, 0.3), (2, 2, 0.25)] {
        let zone = ZoneGeometry::new(h, w, beta(b));
        let side = zone.side() as f64;
        let expected = 1.0 - side * side / (h * w) as f64;
        let eta = energy_zone_ratio(&[RealMatrix::impulse(h, w, 0, 0)], beta(b)).unwrap();
        if eta != expected {
            violations.push(format!("impulse {h}x{w} beta {b}: {eta} vs {expected}"));
        }
    }

    let mut rng = synth::rng(0xC03);
    let betas = [0.05, 0.1, 0.2, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9, 0.99];
    for ch in 0..50 {
        let h = rng.random_range(4..=32);
        let w = rng.random_range(4..=32);
        let slices: Vec<RealMatrix> = (0..4).map(|_| synth::uniform_matrix(&mut rng, h, w)).collect();
        let etas: Vec<f64> = betas
            .iter()
            .map(|&b| energy_zone_ratio(&slices, beta(b)).unwrap())
            .collect();
        if etas.windows(2).any(|p| p[0] < p[1]) {
            violations.push(format!("channel {ch} ({h}x{w}) not monotone: {etas:?}"));
        }
    }
    Outcome {
        id: 3,
        name: "energy-zone closed forms and beta monotonicity",
        passed: violations.is_empty(),
        detail: if violations.is_empty() {
            "constant -> 0, impulse 8x8 -> 0.859375, 50 channels monotone; 0 violations".into()
        } else {
            violations.join("; ")
        },
    }
}

fn criterion_4_metric_agreement() -> Outcome {
    const MIN_RHO: f64 = 0.8;
    const LIMIT: Duration = Duration::from_secs(30);
    let start = Instant::now();
    let mut rng = synth::rng(0xC04);
    let ranks = synth::spread_ranks(64, 32);
    let fm = synth::controlled_rank_batch(&mut rng, 8, &ranks, 32, 32).unwrap();
    let energy = layer_energy_scores(&fm, Beta::default()).unwrap();
    let rank = rank_score(&fm).unwrap();
    let rho = spearman(&rank.scores, &energy.scores).unwrap_or(f64::NAN);
    let exact_ranks = rank
        .scores
        .iter()
        .zip(&ranks)
        .all(|(s, &r)| *s == r as f64);
    let elapsed = start.elapsed();
    Outcome {
        id: 4,
        name: "rank and energy orderings agree",
        passed: rho >= MIN_RHO && elapsed < LIMIT,
        detail: format!(
            "64 channels, B=8, 32x32: spearman {rho:.4} (>= {MIN_RHO}), rank scores exact: {exact_ranks}, {elapsed:.2?} (< 30s)"
        ),
    }
}

fn criterion_5_complexity_separation() -> Outcome {
    const MIN_SLOPE_GAP: f64 = 0.4;
    const MIN_SPEEDUP_512: f64 = 2.0;
    const LIMIT: Duration = Duration::from_secs(300);
    let start = Instant::now();
    let report = run_bench(&[64, 128, 256, 512, 1024], 9, 1).unwrap();
    let gap = report.rank_slope - report.energy_slope;
    let speedup = report.median(Metric::Rank, 512).unwrap() / report.median(Metric::Energy, 512).unwrap();
    let elapsed = start.elapsed();
    Outcome {
        id: 5,
        name: "rank metric grows faster than energy metric",
        passed: gap >= MIN_SLOPE_GAP && speedup >= MIN_SPEEDUP_512 && elapsed < LIMIT,
        detail: format!(
            "slopes rank {:.3} energy {:.3} (gap {gap:.3} >= {MIN_SLOPE_GAP}), speedup@512 {speedup:.1}x (>= 2x), {elapsed:.1?} (< 5min)",
            report.rank_slope, report.energy_slope
        ),
    }
}

fn random_importance(rng: &mut synth::SynthRng, layer: &str, channels: usize) -> LayerImportance {
    let scores = (0..channels).map(|_| rng.random_range(0.0..1.0)).collect();
    LayerImportance::new(Metric::Energy, Some(0.25), 4, scores).with_layer(layer)
}

fn random_plan_over(rng: &mut synth::SynthRng, counts: &[usize]) -> PrunePlan {
    let layers = counts
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let imp = random_importance(rng, &format!("conv{k}"), t);
            make_plan(&imp, rng.random_range(1..=t)).unwrap()
        })
        .collect();
    PrunePlan::new(layers)
}

fn random_layer_plan(rng: &mut synth::SynthRng, channels: usize) -> LayerPlan {
    let kept = rng.random_range(1..=channels);
    let mut keep = sample(rng, channels, kept).into_vec();
    keep.sort_unstable();
    LayerPlan::new("conv", channels, keep).unwrap()
}

fn criterion_6_multi_pass() -> Outcome {
    let mut rng = synth::rng(0xC06);
    let mut mismatches = 0;
    for _ in 0..50 {
        let inputs = rng.random_range(1..=4);
        let counts: Vec<usize> = (0..3).map(|_| rng.random_range(2..=16)).collect();
        let mut kernels = Vec::new();
        let mut s = inputs;
        for &t in &counts {
            kernels.push(synth::uniform_kernel(&mut rng, 3, s, t));
            s = t;
        }
        let first = random_plan_over(&mut rng, &counts);
        let survivors: Vec<usize> = first.layers.iter().map(|l| l.kept()).collect();
        let second = random_plan_over(&mut rng, &survivors);

        let once = prune_chain(&kernels, &compose_plans(&first, &second).unwrap()).unwrap();
        let twice = prune_chain(&prune_chain(&kernels, &first).unwrap(), &second).unwrap();
        if once != twice {
            mismatches += 1;
        }
    }
    let mut assoc_failures = 0;
    for _ in 0..200 {
        let t = rng.random_range(1..=32);
        let a = random_layer_plan(&mut rng, t);
        let b = random_layer_plan(&mut rng, a.kept());
        let c = random_layer_plan(&mut rng, b.kept());
        let left = compose_layer(&compose_layer(&a, &b).unwrap(), &c).unwrap();
        let right = compose_layer(&a, &compose_layer(&b, &c).unwrap()).unwrap();
        if left != right {
            assoc_failures += 1;
        }
    }
    Outcome {
        id: 6,
        name: "multi-pass composition",
        passed: mismatches == 0 && assoc_failures == 0,
        detail: format!(
            "50 three-layer chains: {mismatches} kernel mismatches; 200 triples: {assoc_failures} associativity failures"
        ),
    }
}

fn criterion_7_format() -> Outcome {
    let golden: Vec<u8> = [
        &b"EZT1"[..],
        &[0x02, 0x00, 0x00, 0x00],
        &[0x02, 0x00, 0x00, 0x00],
        &[0x02, 0x00, 0x00, 0x00],
        &[0x00, 0x00, 0x80, 0x3f],
        &[0x00, 0x00, 0x00, 0x40],
        &[0x00, 0x00, 0x40, 0x40],
        &[0x00, 0x00, 0x80, 0x40],
    ]
    .concat();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("golden.ezt");
    write_tensor(&path, &[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let on_disk = std::fs::read(&path).unwrap();
    let golden_ok = on_disk == golden;

    let mut rng = synth::rng(0xC07);
    let mut round_trip_failures = 0;
    for k in 0..50 {
        let ndim = rng.random_range(1..=4);
        let dims: Vec<usize> = (0..ndim).map(|_| rng.random_range(1..=6)).collect();
        let count: usize = dims.iter().product();
        let mut data: Vec<f32> = (0..count)
            .map(|_| f32::from_bits(rng.random::<u32>() & 0xBF7F_FFFF))
            .collect();
        data[0] = -0.0;
        if count > 1 {
            data[1] = f32::from_bits(1); // smallest subnormal
        }
        let path = dir.path().join(format!("t{k}.ezt"));
        write_tensor(&path, &dims, &data).unwrap();
        let back = read_tensor(&path).unwrap();
        let bits_equal = back.data.len() == data.len()
            && back.data.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits());
        let len_ok = std::fs::metadata(&path).unwrap().len() as usize == 8 + 4 * ndim + 4 * count;
        if back.dims != dims || !bits_equal || !len_ok {
            round_trip_failures += 1;
        }
    }
    let in_memory = decode_tensor(&path, &encode_tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    Outcome {
        id: 7,
        name: "tensor container format",
        passed: golden_ok && round_trip_failures == 0 && in_memory.data == [1.0, 2.0, 3.0, 4.0],
        detail: format!(
            "golden [2,2] layout match (32 bytes): {golden_ok}; 50 random round trips, {round_trip_failures} failures"
        ),
    }
}

#[test]
fn acceptance() {
    let criteria: [fn() -> Outcome; 7] = [
        criterion_1_theorem_equivalence,
        criterion_2_rank_preservation,
        criterion_3_closed_forms,
        criterion_4_metric_agreement,
        criterion_5_complexity_separation,
        criterion_6_multi_pass,
        criterion_7_format,
    ];
    let outcomes: Vec<Outcome> = criteria.iter().map(|c| c()).collect();
    println!();
    for o in &outcomes {
        println!(
            "[{}] criterion {}: {} -- {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail
        );
    }
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
