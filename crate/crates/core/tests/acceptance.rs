//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so every verdict is printed, passing or not:
//!
//! ```text
//! cargo test --release --test acceptance
//! ```

#[path = "support/bruteforce.rs"]
mod bruteforce;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use bruteforce::{count, Stage};
use infercarbon::arch::{enumerate_layer_kernels, ArchCatalog, DataType, InferenceConfig, KernelKind, LlmArchitecture};
use infercarbon::carbon::{estimate_request, operational_carbon, DatacenterParams, EmbodiedParams};
use infercarbon::costmodel::{graph_costs, kernel_cost, CostTriple, Phase};
use infercarbon::gnn::{eba, gradient_check, mape, model_forward, train, GnnParams, ModelShape, TrainExample, TrainHyper};
use infercarbon::graph::{FeatureStats, GLOBAL_WIDTH, NODE_WIDTH};
use infercarbon::roofline::{kernel_performance, performance_at, ridge_points, GpuCatalog};
use infercarbon::sampler::{
    encode_labeled, extract_labeled, focused_sampling_loop, initial_sample, label_points, predict_all, LoopConfig,
    LoopOutcome, PriorSpace, SyntheticOracle, Termination,
};
use infercarbon::traces::{parse_reader, parse_trace, serialize_trace, trace_stats, ColumnMap, TraceRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s as f64, || {
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn random_dtype(rng: &mut impl Rng) -> DataType {
    *DataType::ALL.choose(rng).unwrap()
}

/// A random architecture with hidden/intermediate widths ≤ 8 and hidden divisible by `g`.
fn tiny_arch(rng: &mut impl Rng, g: u64) -> LlmArchitecture {
    loop {
        let head_count = *[1u64, 2, 4, 8].choose(rng).unwrap();
        let head_dim = rng.gen_range(1..=8 / head_count);
        let hidden_size = head_count * head_dim;
        if hidden_size % g != 0 {
            continue;
        }
        let kv_choices: Vec<u64> = (1..=head_count).filter(|k| head_count % k == 0).collect();
        return LlmArchitecture {
            name: "tiny".into(),
            hidden_size,
            intermediate_size: rng.gen_range(1..=8),
            head_count,
            kv_head_count: *kv_choices.choose(rng).unwrap(),
            layer_count: rng.gen_range(1..=4),
            weight_dtype: random_dtype(rng),
            activation_dtype: random_dtype(rng),
            kv_dtype: random_dtype(rng),
            flash_attention: rng.gen(),
            gated_mlp: rng.gen(),
        };
    }
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut seen = BTreeSet::new();
    let mut compared = 0usize;
    for i in 0..1000 {
        let g = *[1u64, 2, 4].choose(&mut rng).unwrap();
        let base = tiny_arch(&mut rng, g);
        let cfg = InferenceConfig::new(rng.gen_range(1..=8), rng.gen_range(1..=16), rng.gen_range(1..=8), g);
        let s_block = rng.gen_range(1..=4);
        for flash in [false, true] {
            let arch = LlmArchitecture {
                flash_attention: flash,
                ..base.clone()
            };
            for node in &enumerate_layer_kernels(&arch, g).nodes {
                for (phase, stage) in [(Phase::Prefill, Stage::Prefill), (Phase::Decode, Stage::Decode)] {
                    let got = kernel_cost(node, &arch, &cfg, s_block, phase).map_err(|e| format!("config {i}: {e}"))?;
                    let want = count(node.kind, &arch, &cfg, s_block, stage);
                    ensure(
                        got == CostTriple::new(want.ops, want.mem, want.net),
                        || format!("config {i} {} {phase}: model {got:?} vs counted {want:?} ({arch:?}, {cfg:?}, s={s_block})", node.kind),
                    )?;
                    seen.insert(node.kind);
                    compared += 1;
                }
            }
        }
    }
    ensure(seen.len() == KernelKind::COUNT, || format!("only {} kernel kinds exercised", seen.len()))?;
    within(start.elapsed(), 30)?;
    Ok(format!(
        "1000 configs, {compared} kernel/phase costs equal the loop counts, all {} kinds, {:.2} s",
        KernelKind::COUNT,
        start.elapsed().as_secs_f64()
    ))
}

/// Per-kind cost of one phase, keyed by kernel kind (first node of each kind).
fn costs_by_kind(arch: &LlmArchitecture, cfg: &InferenceConfig, phase: Phase) -> Vec<(KernelKind, [u128; 3])> {
    let graph = enumerate_layer_kernels(arch, cfg.gpu_count);
    let costs = graph_costs(&graph, arch, cfg, 2).expect("valid config");
    let mut out: Vec<(KernelKind, [u128; 3])> = Vec::new();
    for (node, c) in graph.nodes.iter().zip(costs) {
        if out.iter().any(|(k, _)| *k == node.kind) {
            continue;
        }
        let t = c.phase(phase);
        out.push((node.kind, [t.ops, t.mem_bytes, t.net_bytes]));
    }
    out
}

fn diffs(seq: &[i128]) -> Vec<i128> {
    seq.windows(2).map(|w| w[1] - w[0]).collect()
}

fn constant(seq: &[i128]) -> bool {
    seq.windows(2).all(|w| w[0] == w[1])
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let attention = [KernelKind::MatmulQk, KernelKind::MatmulSv, KernelKind::Softmax, KernelKind::FuseAttn];
    let mut quadratic_decode = 0usize;
    for i in 0..100 {
        // Batch a multiple of 4 and even head counts/widths keep every division exact.
        let head_count = *[2u64, 4, 8].choose(&mut rng).unwrap();
        let head_dim = *[2u64, 4, 8].choose(&mut rng).unwrap();
        let kv: Vec<u64> = (1..=head_count).filter(|k| head_count % k == 0).collect();
        let arch = LlmArchitecture {
            name: "scaling".into(),
            hidden_size: head_count * head_dim,
            intermediate_size: 4 * rng.gen_range(1..=8),
            head_count,
            kv_head_count: *kv.choose(&mut rng).unwrap(),
            layer_count: 1,
            weight_dtype: random_dtype(&mut rng),
            activation_dtype: random_dtype(&mut rng),
            kv_dtype: random_dtype(&mut rng),
            flash_attention: rng.gen(),
            gated_mlp: rng.gen(),
        };
        let batch = 4 * rng.gen_range(1..=2);
        let prompt = rng.gen_range(1..=64);
        let gen = rng.gen_range(2..=64);
        let g = *[1u64, 2, 4].choose(&mut rng).unwrap();

        // decode: sweep N_gT = 1..=6
        let series: Vec<Vec<(KernelKind, [u128; 3])>> = (1..=6)
            .map(|n| costs_by_kind(&arch, &InferenceConfig::new(batch, prompt, n, g), Phase::Decode))
            .collect();
        for (k, (kind, _)) in series[0].iter().enumerate() {
            for term in 0..3 {
                let seq: Vec<i128> = series.iter().map(|s| s[k].1[term] as i128).collect();
                let d1 = diffs(&seq);
                if attention.contains(kind) {
                    ensure(constant(&diffs(&d1)), || format!("config {i}: decode {kind} term {term} not quadratic: {seq:?}"))?;
                    if diffs(&d1).first().copied().unwrap_or(0) != 0 {
                        quadratic_decode += 1;
                    }
                } else {
                    ensure(seq[0] == 0 && constant(&d1), || {
                        format!("config {i}: decode {kind} term {term} not linear in N-1: {seq:?}")
                    })?;
                }
            }
        }

        // prefill: sweep L_seq
        let series: Vec<Vec<(KernelKind, [u128; 3])>> = (prompt..prompt + 6)
            .map(|l| costs_by_kind(&arch, &InferenceConfig::new(batch, l, gen, g), Phase::Prefill))
            .collect();
        for (k, (kind, _)) in series[0].iter().enumerate() {
            for term in 0..3 {
                let seq: Vec<i128> = series.iter().map(|s| s[k].1[term] as i128).collect();
                let d1 = diffs(&seq);
                let ok = if *kind == KernelKind::FuseAttn && term == 0 {
                    constant(&diffs(&d1))
                } else {
                    constant(&d1)
                };
                ensure(ok, || format!("config {i}: prefill {kind} term {term}: {seq:?}"))?;
            }
        }

        // tensor parallelism: every non-all-reduce term is the single-GPU value over G
        for g in [2u64, 4] {
            for phase in Phase::ALL {
                let one = costs_by_kind(&arch, &InferenceConfig::new(batch, prompt, gen, 1), phase);
                let many = costs_by_kind(&arch, &InferenceConfig::new(batch, prompt, gen, g), phase);
                for (kind, c1) in &one {
                    let (_, cg) = many.iter().find(|(k, _)| k == kind).expect("same kernels");
                    for term in 0..3 {
                        ensure(c1[term] == cg[term] * g as u128, || {
                            format!("config {i}: {phase} {kind} term {term}: {} at G=1 vs {} at G={g}", c1[term], cg[term])
                        })?;
                    }
                }
            }
        }
    }
    Ok(format!(
        "100 configs exact: decode linear in N-1 (attention kernels quadratic, {quadratic_decode} nonzero curvatures), prefill linear in L (fused ops quadratic), 1/G scaling"
    ))
}

fn criterion_3() -> Verdict {
    let catalog = GpuCatalog::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let gpu = catalog.gpus.choose(&mut rng).unwrap();
        let dtype = random_dtype(&mut rng);
        let allreduce = rng.gen_bool(0.2);
        let draw = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.05) { 0 } else { 10f64.powf(rng.gen_range(0.0..15.0)) as u128 };
        let cost = CostTriple::new(draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let th = gpu.throughput(dtype).unwrap();
        let p = kernel_performance(&cost, gpu, dtype, allreduce).map_err(|e| e.to_string())?;
        ensure(p >= 0.0 && p <= th, || format!("triple {i}: P = {p} exceeds Th = {th} ({cost:?})"))?;
    }
    for gpu in &catalog.gpus {
        for dtype in DataType::ALL {
            let th = gpu.throughput(dtype).unwrap();
            let r = ridge_points(gpu, dtype).unwrap();
            for (allreduce, ridge, bw) in [(false, r.mrp, gpu.bw_max), (true, r.nrp, gpu.net_max)] {
                let at = performance_at(ridge, gpu, dtype, allreduce).unwrap();
                worst = worst.max(rel(at, bw * ridge)).max(rel(at, th));
            }
        }
    }
    ensure(worst <= 1e-12, || format!("ridge branch disagreement {worst:e}"))?;
    let a100 = catalog.get("A100").unwrap();
    let mrp = ridge_points(a100, DataType::Fp16).unwrap().mrp;
    let expected = 624e12 / 2039e9;
    ensure(rel(mrp, expected) <= 1e-9 && (mrp - 306.03).abs() < 0.005, || {
        format!("A100 FP16 ridge {mrp} vs {expected}")
    })?;
    Ok(format!(
        "10000 triples P <= Th; ridge branch agreement {worst:.1e}; A100 FP16 MRP = {mrp:.4} ops/B"
    ))
}

fn criterion_4() -> Verdict {
    let dc = |pue, carbon_intensity| DatacenterParams { pue, carbon_intensity };
    let v = operational_carbon(0.5, &dc(1.2, 400.0));
    ensure(v == 240.0, || format!("operational_carbon(0.5, 1.2, 400) = {v}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (e, p, i) = (rng.gen_range(0.0..10.0), rng.gen_range(1.0..2.0), rng.gen_range(0.0..1000.0));
        let a: f64 = rng.gen_range(0.1..10.0);
        let base = operational_carbon(e, &dc(p, i));
        worst = worst
            .max(rel(operational_carbon(a * e, &dc(p, i)), a * base))
            .max(rel(operational_carbon(e, &dc(p * a.max(1.0), i)), a.max(1.0) * base))
            .max(rel(operational_carbon(e, &dc(p, a * i)), a * base));
        let e2 = rng.gen_range(0.0..10.0);
        worst = worst.max(rel(
            operational_carbon(e + e2, &dc(p, i)),
            base + operational_carbon(e2, &dc(p, i)),
        ));
    }
    ensure(worst <= 1e-12, || format!("linearity violated by {worst:e}"))?;
    Ok(format!("operational_carbon(0.5 kWh, PUE 1.2, 400 g/kWh) = 240 g exactly; linearity worst {worst:.1e}"))
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let space = PriorSpace::builtin(4096, 505).map_err(|e| e.to_string())?;
    let points = initial_sample(&space, 20, 505).map_err(|e| e.to_string())?;
    let raws: Vec<_> = points.iter().map(|p| space.extract(p)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let stats = FeatureStats::fit(&raws).map_err(|e| e.to_string())?;
    let shape = ModelShape {
        node_width: NODE_WIDTH,
        global_width: GLOBAL_WIDTH,
        hidden: 64,
    };
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    for (i, raw) in raws.iter().enumerate() {
        let input = raw.encode(&stats).map_err(|e| e.to_string())?.input;
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + i as u64);
        let params = GnnParams::xavier(shape, &mut rng);
        // Keep the log-space target within a unit of the prediction so the loss is O(1).
        let y = model_forward(&params, &input).map_err(|e| e.to_string())?;
        let sample = TrainExample::new(input, (y.max(0.0) + 0.5).exp_m1());
        let report = gradient_check(&params, &sample, 1e-5, 300, i as u64).map_err(|e| e.to_string())?;
        ensure(report.checked >= 200, || format!("graph {i}: only {} coordinates usable", report.checked))?;
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
        skipped += report.skipped;
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    within(start.elapsed(), 60)?;
    Ok(format!(
        "20 graphs, {checked} coordinates ({skipped} relu-kink skips), max rel error {worst:.2e}, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let seed = 7;
    let space = PriorSpace::builtin(4096, seed).map_err(|e| e.to_string())?;
    let oracle = SyntheticOracle::new(GpuCatalog::builtin());
    let points = initial_sample(&space, 5000, seed).map_err(|e| e.to_string())?;
    let labeled = label_points(&oracle, points, 0, None).map_err(|e| e.to_string())?;
    let (train_pts, test_pts) = labeled.split_at(4000);
    let train_raw = extract_labeled(&space.gpus, train_pts).map_err(|e| e.to_string())?;
    let stats = FeatureStats::fit(&train_raw).map_err(|e| e.to_string())?;
    let train_x = encode_labeled(&train_raw, train_pts, &stats).map_err(|e| e.to_string())?;
    let test_raw = extract_labeled(&space.gpus, test_pts).map_err(|e| e.to_string())?;
    let test_x = encode_labeled(&test_raw, test_pts, &stats).map_err(|e| e.to_string())?;
    let hyper = TrainHyper {
        batch_size: 64,
        epochs: 20,
        seed,
        ..TrainHyper::default()
    };
    let outcome = train(&train_x, &hyper).map_err(|e| e.to_string())?;
    let inputs: Vec<_> = test_x.iter().map(|x| &x.input).collect();
    let preds = predict_all(&outcome.params, &inputs).map_err(|e| e.to_string())?;
    let truths: Vec<f64> = test_x.iter().map(|x| x.energy_joules).collect();
    let model = mape(&preds, &truths).map_err(|e| e.to_string())?;
    let mean = train_x.iter().map(|x| x.energy_joules).sum::<f64>() / train_x.len() as f64;
    let baseline = mape(&vec![mean; truths.len()], &truths).map_err(|e| e.to_string())?;
    ensure(model <= 20.0 && model <= 0.5 * baseline, || {
        format!("held-out MAPE {model:.2}% vs mean baseline {baseline:.1}%")
    })?;
    within(start.elapsed(), 300)?;
    Ok(format!(
        "held-out MAPE {model:.2}% (mean baseline {baseline:.1}%), {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

/// Everything a run produces, serialized with exact float round-tripping.
fn fingerprint(o: &LoopOutcome) -> String {
    let bits: Vec<u64> = o.predictor.params.values.iter().map(|v| v.to_bits()).collect();
    serde_json::json!({
        "train": o.train,
        "test": o.test,
        "trace": o.trace,
        "termination": o.termination,
        "weights": bits,
    })
    .to_string()
}

fn check_loop(o: &LoopOutcome, cfg: &LoopConfig) -> Result<(usize, usize), String> {
    let last = o.trace.last().ok_or("empty trace")?;
    match o.termination {
        Termination::ThresholdMet => ensure(last.test_mape <= cfg.e_threshold, || "threshold claimed but not met".into())?,
        Termination::IterationCap => ensure(last.iteration == cfg.max_iterations, || "stopped before the cap".into())?,
    }
    ensure(o.trace.len() <= cfg.max_iterations + 1, || "ran past the iteration cap".into())?;
    let mut refined_total = 0;
    for w in o.trace.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        let expected_test = (cur.refined as f64 * cfg.test_fraction).round() as usize;
        ensure(cur.test_size - prev.test_size == expected_test && expected_test * 5 == cur.refined, || {
            format!("round {}: test pool grew by {} of {} refined", cur.iteration, cur.test_size - prev.test_size, cur.refined)
        })?;
        ensure(cur.train_size - prev.train_size == cur.refined - expected_test, || "train pool growth mismatch".into())?;
        refined_total += cur.refined;
    }
    let mut contained = 0;
    for p in o.train.iter().chain(&o.test).filter(|p| p.iteration > 0) {
        let origin = p.origin.ok_or("refined point without a center")?;
        let center = &o.test.get(origin).ok_or("center index out of range")?.point;
        ensure(cfg.radii.contains(center, &p.point), || format!("{} escapes ±C of {}", p.point, center))?;
        contained += 1;
    }
    ensure(contained == refined_total, || format!("{contained} refined points found, {refined_total} logged"))?;
    Ok((refined_total, o.trace.len() - 1))
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let space = PriorSpace::builtin(4096, 0).map_err(|e| e.to_string())?;
    let oracle = SyntheticOracle::new(GpuCatalog::builtin());
    let desk = LoopConfig::desk();
    let run = |cfg: &LoopConfig| focused_sampling_loop(&space, &oracle, cfg).map_err(|e| e.to_string());

    let a = run(&desk)?;
    let b = run(&desk)?;
    check_loop(&a, &desk)?;
    ensure(fingerprint(&a) == fingerprint(&b), || "desk run is not bitwise reproducible".into())?;
    let desk_mape = a.trace.last().unwrap().test_mape;

    // The desk threshold is usually met before any refinement; a tight threshold forces
    // refinement rounds so their invariants are exercised too.
    let forced = LoopConfig {
        e_threshold: 0.5,
        max_iterations: 3,
        ..LoopConfig::desk()
    };
    let c = run(&forced)?;
    let d = run(&forced)?;
    let (refined, rounds) = check_loop(&c, &forced)?;
    ensure(rounds > 0, || "forced run did not refine".into())?;
    ensure(fingerprint(&c) == fingerprint(&d), || "refining run is not bitwise reproducible".into())?;
    within(start.elapsed(), 900)?;
    Ok(format!(
        "desk run {:?} after {} round(s) at {desk_mape:.2}% MAPE; forced run: {rounds} rounds, {refined} refined points all within ±C, TD +20% per round; both bitwise reproducible; {:.0} s",
        a.termination,
        a.trace.len() - 1,
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_8() -> Verdict {
    let m = mape(&[110.0, 90.0], &[100.0, 100.0]).map_err(|e| e.to_string())?;
    ensure(m == 10.0, || format!("MAPE = {m}"))?;
    let e = eba(&[105.0, 130.0], &[100.0, 100.0], 0.10).map_err(|e| e.to_string())?;
    ensure(e == 50.0, || format!("EBA(10%) = {e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let deltas = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0];
    for set in 0..1000 {
        let n = rng.gen_range(1..50);
        let truths: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1000.0)).collect();
        let preds: Vec<f64> = truths.iter().map(|t| t * rng.gen_range(0.0..3.0)).collect();
        let scores: Vec<f64> = deltas.iter().map(|&d| eba(&preds, &truths, d).unwrap()).collect();
        ensure(scores.windows(2).all(|w| w[0] <= w[1]), || format!("set {set}: EBA not monotone {scores:?}"))?;
    }
    Ok("MAPE([110,90],[100,100]) = 10%, EBA(10%)([105,130],[100,100]) = 50%, EBA monotone in delta on 1000 sets".into())
}

fn criterion_9() -> Verdict {
    let catalog = GpuCatalog::builtin();
    let archs = ArchCatalog::builtin();
    let arch = archs.get("bloom-560m").map_err(|e| e.to_string())?;
    let gpu = catalog.get("A100").map_err(|e| e.to_string())?;
    let per_gpu = |oracle: &SyntheticOracle, g: u64| -> Result<f64, String> {
        let cfg = InferenceConfig::new(1, 64, 16, g);
        let r = estimate_request(oracle, arch, &cfg, gpu, &DatacenterParams::default(), &EmbodiedParams::default())
            .map_err(|e| e.to_string())?;
        Ok(r.per_gpu.operational_g)
    };
    let oracle = SyntheticOracle::new(catalog.clone());
    let (one, four) = (per_gpu(&oracle, 1)?, per_gpu(&oracle, 4)?);
    ensure(four > one, || format!("per-GPU operational carbon {four:e} g at 4 GPUs vs {one:e} g at 1"))?;
    let pure = SyntheticOracle {
        allreduce_latency: 0.0,
        ..oracle.clone()
    };
    let (p1, p4) = (per_gpu(&pure, 1)?, per_gpu(&pure, 4)?);
    Ok(format!(
        "bloom-560m on A100, batch 1, 64-token prompt: {four:.3e} g/GPU at 4 GPUs > {one:.3e} g at 1 (latency-free roofline: {p4:.3e} vs {p1:.3e})"
    ))
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut prompts: Vec<u64> = (1..=10_000).collect();
    let mut generated: Vec<u64> = (0..10_000).map(|i| i % 100 + 1).collect();
    prompts.shuffle(&mut rng);
    generated.shuffle(&mut rng);
    let records: Vec<TraceRecord> = (0..10_000)
        .map(|i| TraceRecord {
            timestamp: i.to_string(),
            prompt_tokens: prompts[i],
            generated_tokens: generated[i],
        })
        .collect();
    let map = ColumnMap::default();
    let text = serialize_trace(&records, &map);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("trace.csv");
    std::fs::write(&path, &text).map_err(|e| e.to_string())?;
    let parsed = parse_trace(&path, &map).map_err(|e| e.to_string())?;
    ensure(parsed == records, || "parse(serialize(trace)) differs".into())?;
    ensure(serialize_trace(&parsed, &map) == text, || "serialize(parse(text)) differs".into())?;
    ensure(parse_reader(text.as_bytes(), &map).map_err(|e| e.to_string())? == records, || "reader parse differs".into())?;

    let stats = trace_stats(&parsed).map_err(|e| e.to_string())?;
    let (p, g) = (stats.prompt, stats.generated);
    ensure((p.p50, p.p90, p.p99) == (5000, 9000, 9900), || format!("prompt percentiles {p:?}"))?;
    ensure((g.p50, g.p90, g.p99) == (50, 90, 99), || format!("generated percentiles {g:?}"))?;
    Ok(format!(
        "10000 rows: prompt p50/p90/p99 = {}/{}/{}, generated = {}/{}/{}; round-trip identical",
        p.p50, p.p90, p.p99, g.p50, g.p90, g.p99
    ))
}

fn main() {
    // Respect a name filter the way libtest would, so `cargo test <other>` skips this.
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.as_deref().is_some_and(|f| !"acceptance".contains(f) && !f.starts_with("criterion")) {
        return;
    }
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("cost equations match loop counts", criterion_1),
        ("scaling laws", criterion_2),
        ("roofline bounds and ridge points", criterion_3),
        ("operational carbon", criterion_4),
        ("gradient check", criterion_5),
        ("learnability", criterion_6),
        ("focused sampling loop", criterion_7),
        ("metrics", criterion_8),
        ("tensor-parallel carbon direction", criterion_9),
        ("trace pipeline", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if let Some(f) = filter.as_deref().filter(|f| f.starts_with("criterion")) {
            if f != format!("criterion{n}") {
                continue;
            }
        }
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("[PASS] criterion {n:>2}: {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("[FAIL] criterion {n:>2}: {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("[FAIL] criterion {n:>2}: {name}: panicked");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
