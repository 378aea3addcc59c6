//! Focused energy-data sampling.
//!
//! Points are drawn from a prior over (architecture, workload, hardware), labelled by an
//! [`EnergyOracle`], and the regressor is trained on them. The loop then repeatedly
//! re-samples small neighbourhoods around the held-out points the model gets most wrong,
//! labels the new points and folds 80% into training and 20% into the test pool,
//! until the test error falls below a threshold or the iteration cap is hit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arch::{ArchCatalog, DataType, InferenceConfig, LlmArchitecture};
use crate::carbon::{CarbonError, EnergyPredictor, PhaseEnergy};
use crate::gnn::{mape, model_forward, GnnError, GnnParams, GraphInput, MetricError, Predictor, TrainExample, TrainHyper, Trainer};
use crate::graph::{extract_point, FeatureError, FeatureStats, RawGraph, GLOBAL_WIDTH, NODE_WIDTH};
use crate::roofline::{kernel_seconds, GpuCatalog, GpuSpec, RooflineError};
use crate::traces::{empirical_prior, synthetic_trace, BatchMixture, EmpiricalPrior, TraceError, TraceKind, TraceRecord};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("prior space is empty: {0}")]
    EmptyPrior(&'static str),
    #[error("oracle failed on point {index} ({point}): {message}")]
    OracleFailure {
        index: usize,
        point: String,
        message: String,
    },
    #[error("invalid sampling configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] GnnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Roofline(#[from] RooflineError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> SamplerError {
    SamplerError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// One configuration to be measured.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SamplePoint {
    pub arch: LlmArchitecture,
    pub cfg: InferenceConfig,
    pub gpu: String,
}

impl std::fmt::Display for SamplePoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = &self.arch;
        let c = &self.cfg;
        write!(
            f,
            "{} h{} i{} H{}/{} L{} {} | b{} p{} g{} | {}x{}",
            a.name,
            a.hidden_size,
            a.intermediate_size,
            a.head_count,
            a.kv_head_count,
            a.layer_count,
            a.weight_dtype,
            c.batch_size,
            c.prompt_length,
            c.generated_tokens,
            c.gpu_count,
            self.gpu
        )
    }
}

/// How far catalog architectures are perturbed when drawing initial points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchJitter {
    /// Relative half-width for the layer count.
    pub layer_fraction: f64,
    /// Relative half-width for the KV-head count; query heads and hidden size follow at
    /// fixed group size and head dimension.
    pub kv_head_fraction: f64,
    /// Relative half-width for the MLP expansion ratio.
    pub intermediate_fraction: f64,
    /// Weight datatype mixture (quantization).
    pub weight_dtypes: Vec<(DataType, f64)>,
}

impl Default for ArchJitter {
    fn default() -> Self {
        Self {
            layer_fraction: 0.25,
            kv_head_fraction: 0.5,
            intermediate_fraction: 0.2,
            weight_dtypes: vec![(DataType::Fp16, 0.6), (DataType::Int8, 0.25), (DataType::Fp32, 0.15)],
        }
    }
}

fn int_range(rng: &mut impl Rng, center: u64, fraction: f64) -> u64 {
    let lo = ((center as f64) * (1.0 - fraction)).round().max(1.0) as u64;
    let hi = ((center as f64) * (1.0 + fraction)).round().max(lo as f64) as u64;
    rng.gen_range(lo..=hi)
}

impl ArchJitter {
    pub fn apply(&self, base: &LlmArchitecture, rng: &mut impl Rng) -> LlmArchitecture {
        let group = base.head_count / base.kv_head_count;
        let head_dim = base.head_dim();
        let kv = int_range(rng, base.kv_head_count, self.kv_head_fraction);
        let heads = kv * group;
        let hidden = heads * head_dim;
        let ratio = base.intermediate_size as f64 / base.hidden_size as f64;
        let scale = rng.gen_range(1.0 - self.intermediate_fraction..=1.0 + self.intermediate_fraction);
        let inter = ((hidden as f64 * ratio * scale / 16.0).round() as u64).max(1) * 16;
        let layers = int_range(rng, base.layer_count, self.layer_fraction);
        let weight_dtype = if self.weight_dtypes.is_empty() {
            base.weight_dtype
        } else {
            let total: f64 = self.weight_dtypes.iter().map(|d| d.1).sum();
            let mut x = rng.gen_range(0.0..total);
            let mut pick = self.weight_dtypes[self.weight_dtypes.len() - 1].0;
            for &(d, w) in &self.weight_dtypes {
                if x < w {
                    pick = d;
                    break;
                }
                x -= w;
            }
            pick
        };
        LlmArchitecture {
            hidden_size: hidden,
            intermediate_size: inter,
            head_count: heads,
            kv_head_count: kv,
            layer_count: layers,
            weight_dtype,
            ..base.clone()
        }
    }
}

/// Prior over architectures × workloads × hardware.
#[derive(Debug, Clone)]
pub struct PriorSpace {
    pub archs: Vec<LlmArchitecture>,
    pub jitter: ArchJitter,
    pub inference: EmpiricalPrior,
    pub gpus: GpuCatalog,
    pub gpu_counts: Vec<u64>,
}

impl PriorSpace {
    /// Built-in catalogs with a workload prior from synthetic conversation and coding
    /// traces (prompts capped at `max_tokens`).
    pub fn builtin(max_tokens: u64, seed: u64) -> Result<Self, SamplerError> {
        let mut records: Vec<TraceRecord> = synthetic_trace(TraceKind::Conversation, 2000, max_tokens, seed);
        records.extend(synthetic_trace(TraceKind::Coding, 2000, max_tokens, seed.wrapping_add(1)));
        Ok(Self {
            archs: ArchCatalog::builtin().architectures,
            jitter: ArchJitter::default(),
            inference: empirical_prior(&records, BatchMixture::default())?,
            gpus: GpuCatalog::builtin(),
            gpu_counts: vec![1, 2, 4],
        })
    }

    pub fn gpu(&self, name: &str) -> Result<&GpuSpec, SamplerError> {
        Ok(self.gpus.get(name)?)
    }

    pub fn extract(&self, point: &SamplePoint) -> Result<RawGraph, SamplerError> {
        Ok(extract_point(&point.arch, &point.cfg, self.gpu(&point.gpu)?)?)
    }

    fn check(&self) -> Result<(), SamplerError> {
        if self.archs.is_empty() {
            return Err(SamplerError::EmptyPrior("no architectures"));
        }
        if self.gpus.gpus.is_empty() {
            return Err(SamplerError::EmptyPrior("no GPUs"));
        }
        if self.gpu_counts.is_empty() || self.gpu_counts.contains(&0) {
            return Err(SamplerError::EmptyPrior("no valid GPU counts"));
        }
        Ok(())
    }
}

/// Draws `a` points from the prior.
pub fn initial_sample(space: &PriorSpace, a: usize, seed: u64) -> Result<Vec<SamplePoint>, SamplerError> {
    space.check()?;
    if a == 0 {
        return Err(SamplerError::Config("initial point count must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(a);
    while out.len() < a {
        let base = &space.archs[rng.gen_range(0..space.archs.len())];
        let arch = space.jitter.apply(base, &mut rng);
        let (batch, prompt, gen) = space.inference.draw(&mut rng);
        let gpu = &space.gpus.gpus[rng.gen_range(0..space.gpus.gpus.len())];
        let counts: Vec<u64> = space
            .gpu_counts
            .iter()
            .copied()
            .filter(|&n| n <= gpu.node_size && arch.hidden_size % n == 0)
            .collect();
        if counts.is_empty() || arch.validate().is_err() {
            continue;
        }
        let n = counts[rng.gen_range(0..counts.len())];
        out.push(SamplePoint {
            arch,
            cfg: InferenceConfig::new(batch, prompt, gen, n),
            gpu: gpu.name.clone(),
        });
    }
    Ok(out)
}

/// Per-dimension half-widths of the refinement neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterRadii {
    pub prompt_length: u64,
    pub generated_tokens: u64,
    pub layer_count: u64,
    pub batch_size: u64,
    pub hidden_size: u64,
    pub head_count: u64,
    pub intermediate_size: u64,
}

impl Default for JitterRadii {
    fn default() -> Self {
        Self {
            prompt_length: 10,
            generated_tokens: 1,
            layer_count: 1,
            batch_size: 0,
            hidden_size: 0,
            head_count: 0,
            intermediate_size: 0,
        }
    }
}

impl JitterRadii {
    pub fn zero() -> Self {
        Self {
            prompt_length: 0,
            generated_tokens: 0,
            layer_count: 0,
            batch_size: 0,
            hidden_size: 0,
            head_count: 0,
            intermediate_size: 0,
        }
    }

    /// Whether `p` lies within the radii of `center` in every dimension.
    pub fn contains(&self, center: &SamplePoint, p: &SamplePoint) -> bool {
        let near = |a: u64, b: u64, r: u64| a.abs_diff(b) <= r;
        near(p.cfg.prompt_length, center.cfg.prompt_length, self.prompt_length)
            && near(p.cfg.generated_tokens, center.cfg.generated_tokens, self.generated_tokens)
            && near(p.arch.layer_count, center.arch.layer_count, self.layer_count)
            && near(p.cfg.batch_size, center.cfg.batch_size, self.batch_size)
            && near(p.arch.hidden_size, center.arch.hidden_size, self.hidden_size)
            && near(p.arch.head_count, center.arch.head_count, self.head_count)
            && near(p.arch.intermediate_size, center.arch.intermediate_size, self.intermediate_size)
    }
}

/// Uniform integer in `[center − r, center + r]`, clamped to `≥ 1`.
fn jitter(rng: &mut impl Rng, center: u64, r: u64) -> u64 {
    if r == 0 {
        return center;
    }
    let lo = center.saturating_sub(r).max(1);
    rng.gen_range(lo..=center + r)
}

const SHAPE_ATTEMPTS: usize = 32;

/// `b` points around each center. Dimensions that must stay mutually divisible
/// (hidden size, head count) are redrawn until valid, falling back to the center's
/// values, so every output stays within `radii` of its center.
pub fn fine_grained_sampling(
    centers: &[SamplePoint],
    b: usize,
    radii: &JitterRadii,
    seed: u64,
) -> Vec<SamplePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(centers.len() * b);
    for c in centers {
        for _ in 0..b {
            let mut p = c.clone();
            p.cfg.prompt_length = jitter(&mut rng, c.cfg.prompt_length, radii.prompt_length);
            p.cfg.generated_tokens = jitter(&mut rng, c.cfg.generated_tokens, radii.generated_tokens);
            p.cfg.batch_size = jitter(&mut rng, c.cfg.batch_size, radii.batch_size);
            p.arch.layer_count = jitter(&mut rng, c.arch.layer_count, radii.layer_count);
            if radii.hidden_size + radii.head_count + radii.intermediate_size > 0 {
                for _ in 0..SHAPE_ATTEMPTS {
                    let mut a = p.arch.clone();
                    a.hidden_size = jitter(&mut rng, c.arch.hidden_size, radii.hidden_size);
                    a.head_count = jitter(&mut rng, c.arch.head_count, radii.head_count);
                    a.intermediate_size = jitter(&mut rng, c.arch.intermediate_size, radii.intermediate_size);
                    if a.validate().is_ok() && a.hidden_size % p.cfg.gpu_count == 0 {
                        p.arch = a;
                        break;
                    }
                }
            }
            out.push(p);
        }
    }
    out
}

/// Indices of the `k` largest absolute percentage errors, ties broken by index.
pub fn select_high_error(preds: &[f64], truths: &[f64], k: usize) -> Vec<usize> {
    let ape: Vec<f64> = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).abs() / t)
        .collect();
    let mut idx: Vec<usize> = (0..ape.len()).collect();
    idx.sort_by(|&a, &b| ape[b].total_cmp(&ape[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Source of ground-truth energy.
pub trait EnergyOracle: Sync {
    fn identity(&self) -> String;

    fn measure(&self, point: &SamplePoint) -> Result<f64, String>;
}

/// Analytic stand-in for measurement: Roofline kernel times weighted by phase
/// utilization plus an idle floor, with a fixed per-call latency on all-reduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracle {
    pub gpus: GpuCatalog,
    pub prefill_utilization: f64,
    pub decode_utilization: f64,
    pub idle_fraction: f64,
    /// Fixed startup latency of one all-reduce call, seconds. Zero gives the pure
    /// Roofline oracle.
    pub allreduce_latency: f64,
}

impl SyntheticOracle {
    pub fn new(gpus: GpuCatalog) -> Self {
        Self {
            gpus,
            prefill_utilization: 0.8,
            decode_utilization: 0.4,
            idle_fraction: 0.1,
            allreduce_latency: 10e-6,
        }
    }

    /// Per-phase whole-model time in seconds, all-reduce latency included.
    pub fn phase_seconds(&self, arch: &LlmArchitecture, cfg: &InferenceConfig, gpu: &GpuSpec) -> Result<[f64; 2], FeatureError> {
        let raw = extract_point(arch, cfg, gpu)?;
        let mut t = [0.0; 2];
        for n in &raw.nodes {
            t[0] += kernel_seconds(&n.prefill.cost(), n.prefill.perf);
            t[1] += kernel_seconds(&n.decode.cost(), n.decode.perf);
            if n.kind.is_allreduce() {
                t[0] += self.allreduce_latency;
                t[1] += self.allreduce_latency * (cfg.generated_tokens - 1) as f64;
            }
        }
        // a single generated token comes out of prefill; no decode step ever runs
        if cfg.generated_tokens == 1 {
            t[1] = 0.0;
        }
        let l = arch.layer_count as f64;
        Ok([t[0] * l, t[1] * l])
    }

    pub fn phase_energy(&self, arch: &LlmArchitecture, cfg: &InferenceConfig, gpu: &GpuSpec) -> Result<PhaseEnergy, FeatureError> {
        let [tp, td] = self.phase_seconds(arch, cfg, gpu)?;
        let n = cfg.gpu_count as f64;
        Ok(PhaseEnergy {
            prefill_joules: tp * gpu.power_w * (self.prefill_utilization + self.idle_fraction) * n,
            decode_joules: td * gpu.power_w * (self.decode_utilization + self.idle_fraction) * n,
        })
    }
}

impl EnergyOracle for SyntheticOracle {
    fn identity(&self) -> String {
        format!(
            "synthetic(util={}/{}, idle={}, allreduce_latency={})",
            self.prefill_utilization, self.decode_utilization, self.idle_fraction, self.allreduce_latency
        )
    }

    fn measure(&self, p: &SamplePoint) -> Result<f64, String> {
        let gpu = self.gpus.get(&p.gpu).map_err(|e| e.to_string())?;
        let e = self.phase_energy(&p.arch, &p.cfg, gpu).map_err(|e| e.to_string())?;
        Ok(e.total())
    }
}

impl EnergyPredictor for SyntheticOracle {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, arch: &LlmArchitecture, cfg: &InferenceConfig, gpu: &GpuSpec) -> Result<PhaseEnergy, CarbonError> {
        Ok(self.phase_energy(arch, cfg, gpu)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// A measured point with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledPoint {
    pub point: SamplePoint,
    pub energy_joules: f64,
    /// Refinement round that produced the point; 0 for the initial draw.
    pub iteration: usize,
    /// Index into the test pool of the center this point was refined around.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<usize>,
}

/// Labels points in parallel; results keep input order.
pub fn label_points(
    oracle: &dyn EnergyOracle,
    points: Vec<SamplePoint>,
    iteration: usize,
    origins: Option<&[usize]>,
) -> Result<Vec<LabeledPoint>, SamplerError> {
    let energies: Vec<Result<f64, String>> = points.par_iter().map(|p| oracle.measure(p)).collect();
    points
        .into_iter()
        .zip(energies)
        .enumerate()
        .map(|(i, (point, e))| match e {
            Ok(energy_joules) if energy_joules.is_finite() && energy_joules > 0.0 => Ok(LabeledPoint {
                origin: origins.map(|o| o[i]),
                point,
                energy_joules,
                iteration,
            }),
            Ok(bad) => Err(SamplerError::OracleFailure {
                index: i,
                point: point.to_string(),
                message: format!("non-positive energy {bad}"),
            }),
            Err(message) => Err(SamplerError::OracleFailure {
                index: i,
                point: point.to_string(),
                message,
            }),
        })
        .collect()
}

/// Shuffles and splits off `round(fraction · n)` points for testing.
pub fn split_points(
    mut points: Vec<LabeledPoint>,
    test_fraction: f64,
    rng: &mut impl Rng,
) -> (Vec<LabeledPoint>, Vec<LabeledPoint>) {
    points.shuffle(rng);
    let n_test = (points.len() as f64 * test_fraction).round() as usize;
    let train = points.split_off(n_test);
    (train, points)
}

/// Raw graphs for labelled points.
pub fn extract_labeled(gpus: &GpuCatalog, points: &[LabeledPoint]) -> Result<Vec<RawGraph>, SamplerError> {
    points
        .par_iter()
        .map(|l| Ok(extract_point(&l.point.arch, &l.point.cfg, gpus.get(&l.point.gpu)?)?))
        .collect()
}

/// Training examples for labelled points under fixed feature statistics.
pub fn encode_labeled(
    raws: &[RawGraph],
    points: &[LabeledPoint],
    stats: &FeatureStats,
) -> Result<Vec<TrainExample>, SamplerError> {
    raws.par_iter()
        .zip(points)
        .map(|(r, l)| Ok(TrainExample::new(r.encode(stats)?.input, l.energy_joules)))
        .collect()
}

/// Predicted joules for each input.
pub fn predict_all(params: &GnnParams, inputs: &[&GraphInput]) -> Result<Vec<f64>, SamplerError> {
    inputs
        .par_iter()
        .map(|x| Ok(model_forward(params, x)?.exp_m1()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    /// Initial draw size `A`.
    pub initial_points: usize,
    /// Points sampled around each high-error center, `B`.
    pub refine_per_center: usize,
    /// High-error centers per round, `k`.
    pub worst_k: usize,
    pub radii: JitterRadii,
    /// Stop once the test-pool MAPE (percent) is at or below this.
    pub e_threshold: f64,
    pub max_iterations: usize,
    pub test_fraction: f64,
    pub seed: u64,
    /// Hyperparameters; `epochs` applies to the initial fit.
    pub hyper: TrainHyper,
    /// Warm-start epochs after each refinement round.
    pub update_epochs: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl LoopConfig {
    /// Workstation scale: A = 2000, B = 50.
    pub fn desk() -> Self {
        Self {
            initial_points: 2000,
            refine_per_center: 50,
            worst_k: 50,
            radii: JitterRadii::default(),
            e_threshold: 15.0,
            max_iterations: 10,
            test_fraction: 0.2,
            seed: 0,
            hyper: TrainHyper {
                batch_size: 64,
                epochs: 40,
                ..TrainHyper::default()
            },
            update_epochs: 4,
        }
    }

    /// Measurement-campaign scale: A = 50 000, B = 100.
    pub fn campaign() -> Self {
        Self {
            initial_points: 50_000,
            refine_per_center: 100,
            hyper: TrainHyper::default(),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.initial_points == 0 || self.refine_per_center == 0 || self.worst_k == 0 {
            return Err(SamplerError::Config("A, B and k must be ≥ 1".into()));
        }
        if !(self.e_threshold > 0.0) {
            return Err(SamplerError::Config("error threshold must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(SamplerError::Config("test fraction must be in [0, 1)".into()));
        }
        self.hyper.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub refined: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// MAPE on the accumulated test pool, percent.
    pub test_mape: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ThresholdMet,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub train: Vec<LabeledPoint>,
    pub test: Vec<LabeledPoint>,
    pub predictor: Predictor,
    pub trace: Vec<IterationLog>,
    pub termination: Termination,
}

fn round_seed(seed: u64, iteration: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64 + 1);
    rng.gen()
}

pub fn focused_sampling_loop(
    space: &PriorSpace,
    oracle: &dyn EnergyOracle,
    cfg: &LoopConfig,
) -> Result<LoopOutcome, SamplerError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let initial = initial_sample(space, cfg.initial_points, cfg.seed)?;
    let labeled = label_points(oracle, initial, 0, None)?;
    let (mut train, mut test) = split_points(labeled, cfg.test_fraction, &mut rng);
    if train.is_empty() || test.is_empty() {
        return Err(SamplerError::Config("initial split left an empty train or test set".into()));
    }

    let train_raw = extract_labeled(&space.gpus, &train)?;
    let stats = FeatureStats::fit(&train_raw)?;
    let mut train_x = encode_labeled(&train_raw, &train, &stats)?;
    let test_raw = extract_labeled(&space.gpus, &test)?;
    let mut test_x = encode_labeled(&test_raw, &test, &stats)?;

    let mut trainer = Trainer::new(NODE_WIDTH, GLOBAL_WIDTH, cfg.hyper.clone())?;
    trainer.calibrate_output_bias(&train_x);
    trainer.run_epochs(&train_x, cfg.hyper.epochs)?;

    let evaluate = |params: &GnnParams, xs: &[TrainExample]| -> Result<(Vec<f64>, Vec<f64>, f64), SamplerError> {
        let inputs: Vec<&GraphInput> = xs.iter().map(|x| &x.input).collect();
        let preds = predict_all(params, &inputs)?;
        let truths: Vec<f64> = xs.iter().map(|x| x.energy_joules).collect();
        let e = mape(&preds, &truths)?;
        Ok((preds, truths, e))
    };
    let (mut preds, mut truths, mut error) = evaluate(&trainer.params, &test_x)?;
    let mut trace = vec![IterationLog {
        iteration: 0,
        refined: 0,
        train_size: train.len(),
        test_size: test.len(),
        test_mape: error,
    }];

    let mut iteration = 0;
    while error > cfg.e_threshold && iteration < cfg.max_iterations {
        iteration += 1;
        let worst = select_high_error(&preds, &truths, cfg.worst_k);
        let centers: Vec<SamplePoint> = worst.iter().map(|&i| test[i].point.clone()).collect();
        let refined = fine_grained_sampling(&centers, cfg.refine_per_center, &cfg.radii, round_seed(cfg.seed, iteration));
        let origins: Vec<usize> = worst
            .iter()
            .flat_map(|&i| std::iter::repeat(i).take(cfg.refine_per_center))
            .collect();
        let refined_count = refined.len();
        let labeled = label_points(oracle, refined, iteration, Some(&origins))?;
        let (new_train, new_test) = split_points(labeled, cfg.test_fraction, &mut rng);

        let raw = extract_labeled(&space.gpus, &new_train)?;
        train_x.extend(encode_labeled(&raw, &new_train, &stats)?);
        let raw = extract_labeled(&space.gpus, &new_test)?;
        test_x.extend(encode_labeled(&raw, &new_test, &stats)?);
        train.extend(new_train);
        test.extend(new_test);

        trainer.run_epochs(&train_x, cfg.update_epochs)?;
        (preds, truths, error) = evaluate(&trainer.params, &test_x)?;
        trace.push(IterationLog {
            iteration,
            refined: refined_count,
            train_size: train.len(),
            test_size: test.len(),
            test_mape: error,
        });
    }

    Ok(LoopOutcome {
        train,
        test,
        predictor: Predictor {
            params: trainer.params,
            stats,
        },
        trace,
        termination: if error <= cfg.e_threshold {
            Termination::ThresholdMet
        } else {
            Termination::IterationCap
        },
    })
}

// ---------------------------------------------------------------------------
// dataset files

pub const DATASET_FORMAT: &str = "infercarbon.dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub split: Split,
    #[serde(flatten)]
    pub labeled: LabeledPoint,
}

/// Newline-delimited JSON: a header line, then one record per point.
pub fn write_dataset(path: &Path, train: &[LabeledPoint], test: &[LabeledPoint]) -> Result<(), SamplerError> {
    let mut out = String::new();
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
    };
    let _ = writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"));
    for (split, points) in [(Split::Train, train), (Split::Test, test)] {
        for l in points {
            let rec = DatasetRecord {
                split,
                labeled: l.clone(),
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes"));
        }
    }
    std::fs::write(path, out).map_err(|e| io_error(path, e))
}

/// Appends records to an existing dataset file.
pub fn append_dataset(path: &Path, split: Split, points: &[LabeledPoint]) -> Result<(), SamplerError> {
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| io_error(path, e))?;
    for l in points {
        let rec = DatasetRecord {
            split,
            labeled: l.clone(),
        };
        writeln!(f, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

/// Reads a dataset file into `(train, test)`, each in file order.
pub fn read_dataset(path: &Path) -> Result<(Vec<LabeledPoint>, Vec<LabeledPoint>), SamplerError> {
    let f = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let first = lines
        .next()
        .ok_or(SamplerError::Dataset {
            line: 1,
            message: "missing header".into(),
        })?
        .map_err(|e| io_error(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| SamplerError::Dataset {
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(SamplerError::Dataset {
            line: 1,
            message: format!("unsupported dataset {} v{}", header.format, header.version),
        });
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| SamplerError::Dataset {
            line: i + 2,
            message: e.to_string(),
        })?;
        match rec.split {
            Split::Train => train.push(rec.labeled),
            Split::Test => test.push(rec.labeled),
        }
    }
    Ok((train, test))
}

/// Provenance written next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: LoopConfig,
    pub config_hash: String,
    pub oracle: String,
    pub trace: Vec<IterationLog>,
    pub termination: Termination,
    pub counts: BTreeMap<String, usize>,
}

impl SamplingManifest {
    pub fn new(cfg: &LoopConfig, oracle: &dyn EnergyOracle, outcome: &LoopOutcome) -> Self {
        let mut counts = BTreeMap::new();
        counts.insert("train".to_string(), outcome.train.len());
        counts.insert("test".to_string(), outcome.test.len());
        Self {
            format: "infercarbon.manifest".into(),
            version: 1,
            seed: cfg.seed,
            config: cfg.clone(),
            config_hash: cfg.hash(),
            oracle: oracle.identity(),
            trace: outcome.trace.clone(),
            termination: outcome.termination,
            counts,
        }
    }
}
