//! Graph embedding: costed kernel DAG -> fixed-width node features + global features.
//!
//! Node row layout (width [`NODE_WIDTH`]):
//!
//! | slots              | content                                   |
//! |--------------------|-------------------------------------------|
//! | `0..17`            | one-hot kernel kind                       |
//! | `17..23`           | kernel dims                               |
//! | `23..27`           | prefill `O`, `M`, `I`, `P`                |
//! | `27..31`           | decode `O`, `M`, `I`, `P`                 |
//!
//! Kind and dims are phase-invariant, so they are stored once rather than repeated in
//! each phase set. Every numeric slot is `log1p`-transformed and then z-scored with
//! statistics fitted on a training split.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    enumerate_layer_kernels, DataType, InferenceConfig, KernelDims, KernelGraph, KernelKind,
    KernelNode, LlmArchitecture, DIM_SLOTS,
};
use crate::costmodel::{graph_costs, model_totals, CostError, CostTriple, LayerTotals};
use crate::gnn::{GraphInput, Neighborhood};
use crate::roofline::{kernel_performance, kernel_seconds, GpuSpec, RooflineError};

/// Numeric (transformed) slots per node: dims plus two phase sets of O, M, I, P.
pub const NODE_NUMERIC: usize = DIM_SLOTS + 8;
pub const NODE_WIDTH: usize = KernelKind::COUNT + NODE_NUMERIC;
pub const GLOBAL_WIDTH: usize = 11;

pub const GLOBAL_NAMES: [&str; GLOBAL_WIDTH] = [
    "quant_bitwidth",
    "hidden_size",
    "intermediate_size",
    "head_count",
    "layer_count",
    "batch_size",
    "prompt_length",
    "generated_tokens",
    "total_flops",
    "total_mem_bytes",
    "total_net_bytes",
];

pub const GRAPH_SCHEMA: &str = "infercarbon.graph.v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("non-finite feature in slot {slot}")]
    NonFiniteFeature { slot: usize },
    #[error("unknown graph format `{0}` (expected json or dot)")]
    UnknownFormat(String),
    #[error("kernel graph does not match the architecture and GPU count")]
    GraphMismatch,
    #[error("cannot fit feature statistics on an empty set")]
    EmptyFit,
    #[error("statistics have {found} slots, expected {expected}")]
    StatsWidth { expected: usize, found: usize },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Roofline(#[from] RooflineError),
    #[error("graph document: {0}")]
    Document(String),
}

/// Datatype whose peak throughput bounds the layer's kernels.
pub fn compute_dtype(arch: &LlmArchitecture) -> DataType {
    arch.weight_dtype
}

/// Cost and Roofline performance of a kernel in one phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub ops: u128,
    pub mem_bytes: u128,
    pub net_bytes: u128,
    /// Roofline performance, operations per second.
    pub perf: f64,
}

impl PhaseRecord {
    pub fn new(cost: CostTriple, perf: f64) -> Self {
        Self {
            ops: cost.ops,
            mem_bytes: cost.mem_bytes,
            net_bytes: cost.net_bytes,
            perf,
        }
    }

    pub fn cost(&self) -> CostTriple {
        CostTriple::new(self.ops, self.mem_bytes, self.net_bytes)
    }

    fn raw(&self) -> [f64; 4] {
        [
            self.ops as f64,
            self.mem_bytes as f64,
            self.net_bytes as f64,
            self.perf,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub kind: KernelKind,
    pub dims: KernelDims,
    pub prefill: PhaseRecord,
    pub decode: PhaseRecord,
}

impl NodeRecord {
    /// Untransformed numeric slots.
    pub fn numeric(&self) -> [f64; NODE_NUMERIC] {
        let mut out = [0.0; NODE_NUMERIC];
        for (slot, d) in out.iter_mut().zip(self.dims) {
            *slot = d as f64;
        }
        out[DIM_SLOTS..DIM_SLOTS + 4].copy_from_slice(&self.prefill.raw());
        out[DIM_SLOTS + 4..].copy_from_slice(&self.decode.raw());
        out
    }
}

/// Untransformed global features in [`GLOBAL_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalRecord {
    pub quant_bitwidth: u64,
    pub hidden_size: u64,
    pub intermediate_size: u64,
    pub head_count: u64,
    pub layer_count: u64,
    pub batch_size: u64,
    pub prompt_length: u64,
    pub generated_tokens: u64,
    pub total_flops: u128,
    pub total_mem_bytes: u128,
    pub total_net_bytes: u128,
}

impl GlobalRecord {
    pub fn new(arch: &LlmArchitecture, cfg: &InferenceConfig, totals: &LayerTotals) -> Self {
        let all = totals.combined();
        Self {
            quant_bitwidth: arch.weight_dtype.bits(),
            hidden_size: arch.hidden_size,
            intermediate_size: arch.intermediate_size,
            head_count: arch.head_count,
            layer_count: arch.layer_count,
            batch_size: cfg.batch_size,
            prompt_length: cfg.prompt_length,
            generated_tokens: cfg.generated_tokens,
            total_flops: all.ops,
            total_mem_bytes: all.mem_bytes,
            total_net_bytes: all.net_bytes,
        }
    }

    pub fn values(&self) -> [f64; GLOBAL_WIDTH] {
        [
            self.quant_bitwidth as f64,
            self.hidden_size as f64,
            self.intermediate_size as f64,
            self.head_count as f64,
            self.layer_count as f64,
            self.batch_size as f64,
            self.prompt_length as f64,
            self.generated_tokens as f64,
            self.total_flops as f64,
            self.total_mem_bytes as f64,
            self.total_net_bytes as f64,
        ]
    }
}

/// A costed layer graph before any transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGraph {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<(usize, usize)>,
    pub global: GlobalRecord,
}

impl RawGraph {
    /// Costs every kernel in both phases and attaches Roofline performance on `gpu`.
    pub fn extract(
        graph: &KernelGraph,
        arch: &LlmArchitecture,
        cfg: &InferenceConfig,
        gpu: &GpuSpec,
    ) -> Result<Self, FeatureError> {
        let per_node = graph_costs(graph, arch, cfg, gpu.s_block)?;
        let dtype = compute_dtype(arch);
        let mut nodes = Vec::with_capacity(graph.len());
        let mut layer = LayerTotals::default();
        for (node, cost) in graph.nodes.iter().zip(&per_node) {
            let ar = node.kind.is_allreduce();
            nodes.push(NodeRecord {
                id: node.id,
                kind: node.kind,
                dims: node.dims,
                prefill: PhaseRecord::new(cost.prefill, kernel_performance(&cost.prefill, gpu, dtype, ar)?),
                decode: PhaseRecord::new(cost.decode, kernel_performance(&cost.decode, gpu, dtype, ar)?),
            });
            layer.prefill += cost.prefill;
            layer.decode += cost.decode;
        }
        if nodes.is_empty() {
            return Err(CostError::EmptyGraph.into());
        }
        let totals = model_totals(layer, arch.layer_count)?;
        Ok(Self {
            nodes,
            edges: graph.edges.clone(),
            global: GlobalRecord::new(arch, cfg, &totals),
        })
    }

    /// Roofline time of one layer, `[prefill, decode]`, in seconds.
    pub fn layer_seconds(&self) -> [f64; 2] {
        let mut t = [0.0; 2];
        for n in &self.nodes {
            t[0] += kernel_seconds(&n.prefill.cost(), n.prefill.perf);
            t[1] += kernel_seconds(&n.decode.cost(), n.decode.perf);
        }
        t
    }

    pub fn encode(&self, stats: &FeatureStats) -> Result<FeaturizedGraph, FeatureError> {
        stats.check()?;
        let mut features = Vec::with_capacity(self.nodes.len() * NODE_WIDTH);
        for record in &self.nodes {
            features.extend(encode_numeric(record.kind, &record.numeric(), stats)?.0);
        }
        let global = stats.encode_global(&self.global.values())?;
        let input = GraphInput {
            node_count: self.nodes.len(),
            node_width: NODE_WIDTH,
            features,
            neighbors: Arc::new(Neighborhood::from_edges(self.nodes.len(), &self.edges)),
            global: global.0,
        };
        Ok(FeaturizedGraph {
            raw: self.clone(),
            input,
        })
    }
}

/// Per-slot `log1p` means and standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub node_mean: Vec<f64>,
    pub node_std: Vec<f64>,
    pub global_mean: Vec<f64>,
    pub global_std: Vec<f64>,
}

impl FeatureStats {
    /// `log1p` only, no standardization.
    pub fn identity() -> Self {
        Self {
            node_mean: vec![0.0; NODE_NUMERIC],
            node_std: vec![1.0; NODE_NUMERIC],
            global_mean: vec![0.0; GLOBAL_WIDTH],
            global_std: vec![1.0; GLOBAL_WIDTH],
        }
    }

    /// Population mean and standard deviation of every transformed slot. Node slots pool
    /// all nodes of all graphs.
    pub fn fit<'a, I>(graphs: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a RawGraph>,
    {
        let mut node_rows: Vec<[f64; NODE_NUMERIC]> = Vec::new();
        let mut global_rows: Vec<[f64; GLOBAL_WIDTH]> = Vec::new();
        for g in graphs {
            for n in &g.nodes {
                node_rows.push(n.numeric().map(f64::ln_1p));
            }
            global_rows.push(g.global.values().map(f64::ln_1p));
        }
        if global_rows.is_empty() {
            return Err(FeatureError::EmptyFit);
        }
        let (node_mean, node_std) = moments(&node_rows);
        let (global_mean, global_std) = moments(&global_rows);
        Ok(Self {
            node_mean,
            node_std,
            global_mean,
            global_std,
        })
    }

    fn check(&self) -> Result<(), FeatureError> {
        for (v, expected) in [
            (&self.node_mean, NODE_NUMERIC),
            (&self.node_std, NODE_NUMERIC),
            (&self.global_mean, GLOBAL_WIDTH),
            (&self.global_std, GLOBAL_WIDTH),
        ] {
            if v.len() != expected {
                return Err(FeatureError::StatsWidth {
                    expected,
                    found: v.len(),
                });
            }
            if let Some(slot) = v.iter().position(|x| !x.is_finite()) {
                return Err(FeatureError::NonFiniteFeature { slot });
            }
        }
        Ok(())
    }

    fn encode_global(&self, raw: &[f64; GLOBAL_WIDTH]) -> Result<GlobalFeatureVector, FeatureError> {
        let mut out = Vec::with_capacity(GLOBAL_WIDTH);
        for (slot, &x) in raw.iter().enumerate() {
            let v = standardize(x.ln_1p(), self.global_mean[slot], self.global_std[slot]);
            if !v.is_finite() {
                return Err(FeatureError::NonFiniteFeature { slot });
            }
            out.push(v);
        }
        Ok(GlobalFeatureVector(out))
    }
}

fn moments<const N: usize>(rows: &[[f64; N]]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; N];
    for row in rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; N];
    for row in rows {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
    (mean, std)
}

fn standardize(x: f64, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        (x - mean) / std
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureVector(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeatureVector(pub Vec<f64>);

fn encode_numeric(
    kind: KernelKind,
    raw: &[f64; NODE_NUMERIC],
    stats: &FeatureStats,
) -> Result<NodeFeatureVector, FeatureError> {
    let mut out = vec![0.0; NODE_WIDTH];
    out[kind.index()] = 1.0;
    for (slot, &x) in raw.iter().enumerate() {
        let v = standardize(x.ln_1p(), stats.node_mean[slot], stats.node_std[slot]);
        if !v.is_finite() {
            return Err(FeatureError::NonFiniteFeature {
                slot: KernelKind::COUNT + slot,
            });
        }
        out[KernelKind::COUNT + slot] = v;
    }
    Ok(NodeFeatureVector(out))
}

/// Encodes one kernel from its per-phase costs and Roofline performance.
pub fn encode_node(
    node: &KernelNode,
    cost_pre: &CostTriple,
    cost_dec: &CostTriple,
    p_pre: f64,
    p_dec: f64,
    stats: &FeatureStats,
) -> Result<NodeFeatureVector, FeatureError> {
    stats.check()?;
    let record = NodeRecord {
        id: node.id,
        kind: node.kind,
        dims: node.dims,
        prefill: PhaseRecord::new(*cost_pre, p_pre),
        decode: PhaseRecord::new(*cost_dec, p_dec),
    };
    encode_numeric(node.kind, &record.numeric(), stats)
}

pub fn encode_global(
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    model_totals: &LayerTotals,
    stats: &FeatureStats,
) -> Result<GlobalFeatureVector, FeatureError> {
    stats.check()?;
    stats.encode_global(&GlobalRecord::new(arch, cfg, model_totals).values())
}

/// Encoded graph plus the raw records it came from.
#[derive(Debug, Clone)]
pub struct FeaturizedGraph {
    pub raw: RawGraph,
    pub input: GraphInput,
}

impl FeaturizedGraph {
    pub fn node_count(&self) -> usize {
        self.input.node_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.input.features[i * NODE_WIDTH..(i + 1) * NODE_WIDTH]
    }
}

/// Costs, Roofline-annotates and encodes `graph`, which must be the layer graph of
/// `arch` at `cfg.gpu_count`.
pub fn featurize(
    graph: &KernelGraph,
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    gpu: &GpuSpec,
    stats: &FeatureStats,
) -> Result<FeaturizedGraph, FeatureError> {
    if *graph != enumerate_layer_kernels(arch, cfg.gpu_count) {
        return Err(FeatureError::GraphMismatch);
    }
    RawGraph::extract(graph, arch, cfg, gpu)?.encode(stats)
}

/// Builds the layer graph for `(arch, cfg)` and extracts its raw features.
pub fn extract_point(
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    gpu: &GpuSpec,
) -> Result<RawGraph, FeatureError> {
    RawGraph::extract(&enumerate_layer_kernels(arch, cfg.gpu_count), arch, cfg, gpu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Json,
    Dot,
}

impl FromStr for GraphFormat {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(GraphFormat::Json),
            "dot" => Ok(GraphFormat::Dot),
            _ => Err(FeatureError::UnknownFormat(s.to_string())),
        }
    }
}

/// JSON graph document: raw node records, directed edges and raw global features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub schema: String,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<(usize, usize)>,
    pub global: GlobalRecord,
}

impl GraphDocument {
    pub fn from_raw(raw: &RawGraph) -> Self {
        Self {
            schema: GRAPH_SCHEMA.to_string(),
            nodes: raw.nodes.clone(),
            edges: raw.edges.clone(),
            global: raw.global,
        }
    }

    pub fn parse(text: &str) -> Result<Self, FeatureError> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| FeatureError::Document(e.to_string()))?;
        if doc.schema != GRAPH_SCHEMA {
            return Err(FeatureError::Document(format!("unsupported schema `{}`", doc.schema)));
        }
        Ok(doc)
    }
}

pub fn export_graph(fg: &FeaturizedGraph, format: &str) -> Result<String, FeatureError> {
    export_raw(&fg.raw, format.parse()?)
}

pub fn export_raw(raw: &RawGraph, format: GraphFormat) -> Result<String, FeatureError> {
    match format {
        GraphFormat::Json => serde_json::to_string_pretty(&GraphDocument::from_raw(raw))
            .map_err(|e| FeatureError::Document(e.to_string())),
        GraphFormat::Dot => Ok(to_dot(raw)),
    }
}

fn to_dot(raw: &RawGraph) -> String {
    let mut out = String::from("digraph transformer_layer {\n  node [shape=box];\n");
    for n in &raw.nodes {
        let _ = writeln!(out, "  n{} [label=\"{}\"];", n.id, n.kind);
    }
    for (a, b) in &raw.edges {
        let _ = writeln!(out, "  n{a} -> n{b};");
    }
    out.push_str("}\n");
    out
}
