//! LLM architectures, inference requests and the kernel DAG of one transformer layer.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Built-in architecture catalog (17 public model configurations).
pub const BUILTIN_ARCHITECTURES: &str = include_str!("../data/architectures.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("hidden_size {hidden_size} is not divisible by head_count {head_count}")]
    Divisibility { hidden_size: u64, head_count: u64 },
    #[error("head_count {head_count} is not a multiple of kv_head_count {kv_head_count}")]
    KvHeads { head_count: u64, kv_head_count: u64 },
    #[error("field `{field}` must be >= 1")]
    Range { field: &'static str },
    #[error("kernel graph is not acyclic")]
    Cycle,
    #[error("parse error{}{}: {message}", .field.as_ref().map(|f| format!(" in field `{f}`")).unwrap_or_default(), .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        field: Option<String>,
        line: Option<usize>,
        message: String,
    },
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("architecture `{name}`: {source}")]
    Invalid {
        name: String,
        #[source]
        source: Box<ArchError>,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// Element datatype of weights, activations or KV-cache entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataType {
    #[serde(rename = "FP32")]
    Fp32,
    #[serde(rename = "FP16")]
    Fp16,
    #[serde(rename = "INT8")]
    Int8,
}

impl DataType {
    pub const ALL: [DataType; 3] = [DataType::Fp32, DataType::Fp16, DataType::Int8];

    /// Bytes per element.
    pub fn width(self) -> u64 {
        match self {
            DataType::Fp32 => 4,
            DataType::Fp16 => 2,
            DataType::Int8 => 1,
        }
    }

    pub fn bits(self) -> u64 {
        self.width() * 8
    }

    pub fn name(self) -> &'static str {
        match self {
            DataType::Fp32 => "FP32",
            DataType::Fp16 => "FP16",
            DataType::Int8 => "INT8",
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataType {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FP32" => Ok(DataType::Fp32),
            "FP16" => Ok(DataType::Fp16),
            "INT8" => Ok(DataType::Int8),
            _ => Err(ArchError::Parse {
                field: None,
                line: None,
                message: format!("unknown datatype `{s}`"),
            }),
        }
    }
}

fn default_dtype() -> DataType {
    DataType::Fp16
}

fn default_true() -> bool {
    true
}

/// Transformer architecture. Only the per-layer shape matters to the cost model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmArchitecture {
    #[serde(default)]
    pub name: String,
    pub hidden_size: u64,
    pub intermediate_size: u64,
    pub head_count: u64,
    pub kv_head_count: u64,
    pub layer_count: u64,
    #[serde(default = "default_dtype")]
    pub weight_dtype: DataType,
    #[serde(default = "default_dtype")]
    pub activation_dtype: DataType,
    #[serde(default = "default_dtype")]
    pub kv_dtype: DataType,
    #[serde(default = "default_true")]
    pub flash_attention: bool,
    #[serde(default = "default_true")]
    pub gated_mlp: bool,
}

impl LlmArchitecture {
    pub fn validate(&self) -> Result<(), ArchError> {
        let counts = [
            ("hidden_size", self.hidden_size),
            ("intermediate_size", self.intermediate_size),
            ("head_count", self.head_count),
            ("kv_head_count", self.kv_head_count),
            ("layer_count", self.layer_count),
        ];
        for (field, value) in counts {
            if value == 0 {
                return Err(ArchError::Range { field });
            }
        }
        if self.hidden_size % self.head_count != 0 {
            return Err(ArchError::Divisibility {
                hidden_size: self.hidden_size,
                head_count: self.head_count,
            });
        }
        if self.kv_head_count > self.head_count || self.head_count % self.kv_head_count != 0 {
            return Err(ArchError::KvHeads {
                head_count: self.head_count,
                kv_head_count: self.kv_head_count,
            });
        }
        Ok(())
    }

    /// Attention head dimension `hidden_size / head_count`.
    pub fn head_dim(&self) -> u64 {
        self.hidden_size / self.head_count
    }

    /// Output width of the K and V projections.
    pub fn kv_width(&self) -> u64 {
        self.head_dim() * self.kv_head_count
    }
}

/// Returns `arch` unchanged when every architecture invariant holds.
pub fn validate_architecture(arch: LlmArchitecture) -> Result<LlmArchitecture, ArchError> {
    arch.validate()?;
    Ok(arch)
}

pub fn derive_head_dim(arch: &LlmArchitecture) -> u64 {
    arch.head_dim()
}

/// One inference request as served: batch, prompt, generation length and tensor-parallel degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub batch_size: u64,
    pub prompt_length: u64,
    pub generated_tokens: u64,
    pub gpu_count: u64,
}

impl InferenceConfig {
    pub fn new(batch_size: u64, prompt_length: u64, generated_tokens: u64, gpu_count: u64) -> Self {
        Self {
            batch_size,
            prompt_length,
            generated_tokens,
            gpu_count,
        }
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let counts = [
            ("batch_size", self.batch_size),
            ("prompt_length", self.prompt_length),
            ("generated_tokens", self.generated_tokens),
            ("gpu_count", self.gpu_count),
        ];
        for (field, value) in counts {
            if value == 0 {
                return Err(ArchError::Range { field });
            }
        }
        Ok(())
    }
}

/// Kernel vocabulary of a transformer layer. The order fixes the one-hot encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    NormAttn,
    QProj,
    KProj,
    VProj,
    FuseAttn,
    MatmulQk,
    Softmax,
    MatmulSv,
    OutProj,
    AddAttn,
    NormMlp,
    GateProj,
    UpProj,
    ActMlp,
    DownProj,
    AddMlp,
    AllReduce,
}

impl KernelKind {
    pub const ALL: [KernelKind; 17] = [
        KernelKind::NormAttn,
        KernelKind::QProj,
        KernelKind::KProj,
        KernelKind::VProj,
        KernelKind::FuseAttn,
        KernelKind::MatmulQk,
        KernelKind::Softmax,
        KernelKind::MatmulSv,
        KernelKind::OutProj,
        KernelKind::AddAttn,
        KernelKind::NormMlp,
        KernelKind::GateProj,
        KernelKind::UpProj,
        KernelKind::ActMlp,
        KernelKind::DownProj,
        KernelKind::AddMlp,
        KernelKind::AllReduce,
    ];

    pub const COUNT: usize = Self::ALL.len();

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_linear(self) -> bool {
        matches!(
            self,
            KernelKind::QProj
                | KernelKind::KProj
                | KernelKind::VProj
                | KernelKind::OutProj
                | KernelKind::GateProj
                | KernelKind::UpProj
                | KernelKind::DownProj
        )
    }

    pub fn is_elementwise(self) -> bool {
        matches!(
            self,
            KernelKind::NormAttn
                | KernelKind::NormMlp
                | KernelKind::AddAttn
                | KernelKind::AddMlp
                | KernelKind::ActMlp
        )
    }

    pub fn is_allreduce(self) -> bool {
        self == KernelKind::AllReduce
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::NormAttn => "norm_attn",
            KernelKind::QProj => "q_proj",
            KernelKind::KProj => "k_proj",
            KernelKind::VProj => "v_proj",
            KernelKind::FuseAttn => "fuse_attn",
            KernelKind::MatmulQk => "matmul_qk",
            KernelKind::Softmax => "softmax",
            KernelKind::MatmulSv => "matmul_sv",
            KernelKind::OutProj => "out_proj",
            KernelKind::AddAttn => "add_attn",
            KernelKind::NormMlp => "norm_mlp",
            KernelKind::GateProj => "gate_proj",
            KernelKind::UpProj => "up_proj",
            KernelKind::ActMlp => "act_mlp",
            KernelKind::DownProj => "down_proj",
            KernelKind::AddMlp => "add_mlp",
            KernelKind::AllReduce => "all_reduce",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Width of the shape feature attached to each kernel.
pub const DIM_SLOTS: usize = 6;

/// Kernel shape: `[in_dim, out_dim, weight_rows, weight_cols, seq_slot, head_slot]`.
///
/// Linear kernels fill the weight slots. Attention kernels put the KV-head count in
/// `seq_slot` (the heads streamed from the cache along the sequence) and the query-head
/// count in `head_slot`. Unused slots are zero.
pub type KernelDims = [u64; DIM_SLOTS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelNode {
    pub id: usize,
    pub kind: KernelKind,
    pub dims: KernelDims,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KernelGraph {
    pub nodes: Vec<KernelNode>,
    pub edges: Vec<(usize, usize)>,
}

impl KernelGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn count(&self, kind: KernelKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn contains(&self, kind: KernelKind) -> bool {
        self.nodes.iter().any(|n| n.kind == kind)
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for &(_, dst) in &self.edges {
            deg[dst] += 1;
        }
        deg
    }

    /// Kahn's algorithm; fails on a cycle or a dangling edge.
    pub fn topological_order(&self) -> Result<Vec<usize>, ArchError> {
        let n = self.nodes.len();
        if self.edges.iter().any(|&(a, b)| a >= n || b >= n) {
            return Err(ArchError::Cycle);
        }
        let mut deg = self.in_degrees();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            out[a].push(b);
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| deg[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &out[v] {
                deg[w] -= 1;
                if deg[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(ArchError::Cycle)
        }
    }
}

#[derive(Default)]
struct GraphBuilder {
    graph: KernelGraph,
}

impl GraphBuilder {
    fn node(&mut self, kind: KernelKind, dims: KernelDims) -> usize {
        let id = self.graph.nodes.len();
        self.graph.nodes.push(KernelNode { id, kind, dims });
        id
    }

    fn edge(&mut self, from: usize, to: usize) {
        self.graph.edges.push((from, to));
    }
}

fn linear_dims(d_in: u64, d_out: u64) -> KernelDims {
    [d_in, d_out, d_in, d_out, 0, 0]
}

/// Builds the kernel DAG of one transformer layer.
///
/// Flash variant:
/// `norm_attn -> {q,k,v}_proj -> fuse_attn -> out_proj -> [all_reduce] -> add_attn ->
/// norm_mlp -> {gate_proj, up_proj} -> act_mlp -> down_proj -> [all_reduce] -> add_mlp`.
/// Without flash attention `fuse_attn` becomes `matmul_qk -> softmax -> matmul_sv` with
/// `v_proj` feeding `matmul_sv`. Residual edges run `norm_attn -> add_attn` and
/// `add_attn -> add_mlp`. All-reduce kernels exist only for `n_gpu >= 2`.
pub fn enumerate_layer_kernels(arch: &LlmArchitecture, n_gpu: u64) -> KernelGraph {
    use KernelKind::*;

    let h = arch.hidden_size;
    let inter = arch.intermediate_size;
    let d_h = arch.head_dim();
    let kv = arch.kv_width();
    let tensor_parallel = n_gpu >= 2;
    let elementwise = |width: u64| -> KernelDims { [width, width, 0, 0, 0, 0] };
    let attention: KernelDims = [h, h, 0, 0, arch.kv_head_count, arch.head_count];

    let mut b = GraphBuilder::default();
    let norm_attn = b.node(NormAttn, elementwise(h));
    let q = b.node(QProj, linear_dims(h, h));
    let k = b.node(KProj, linear_dims(h, kv));
    let v = b.node(VProj, linear_dims(h, kv));
    for proj in [q, k, v] {
        b.edge(norm_attn, proj);
    }

    let attn_out = if arch.flash_attention {
        let fuse = b.node(FuseAttn, attention);
        for proj in [q, k, v] {
            b.edge(proj, fuse);
        }
        fuse
    } else {
        let qk = b.node(MatmulQk, [d_h, h, 0, 0, arch.kv_head_count, arch.head_count]);
        b.edge(q, qk);
        b.edge(k, qk);
        let softmax = b.node(Softmax, [h, h, 0, 0, 0, arch.head_count]);
        b.edge(qk, softmax);
        let sv = b.node(MatmulSv, [h, d_h, 0, 0, arch.kv_head_count, arch.head_count]);
        b.edge(softmax, sv);
        b.edge(v, sv);
        sv
    };

    let out = b.node(OutProj, linear_dims(h, h));
    b.edge(attn_out, out);
    let mut attn_tail = out;
    if tensor_parallel {
        let ar = b.node(AllReduce, elementwise(h));
        b.edge(out, ar);
        attn_tail = ar;
    }
    let add_attn = b.node(AddAttn, elementwise(h));
    b.edge(attn_tail, add_attn);
    b.edge(norm_attn, add_attn);

    let norm_mlp = b.node(NormMlp, elementwise(h));
    b.edge(add_attn, norm_mlp);
    let act = if arch.gated_mlp {
        let gate = b.node(GateProj, linear_dims(h, inter));
        let up = b.node(UpProj, linear_dims(h, inter));
        b.edge(norm_mlp, gate);
        b.edge(norm_mlp, up);
        let act = b.node(ActMlp, elementwise(inter));
        b.edge(gate, act);
        b.edge(up, act);
        act
    } else {
        let up = b.node(UpProj, linear_dims(h, inter));
        b.edge(norm_mlp, up);
        let act = b.node(ActMlp, elementwise(inter));
        b.edge(up, act);
        act
    };
    let down = b.node(DownProj, linear_dims(inter, h));
    b.edge(act, down);
    let mut mlp_tail = down;
    if tensor_parallel {
        let ar = b.node(AllReduce, elementwise(h));
        b.edge(down, ar);
        mlp_tail = ar;
    }
    let add_mlp = b.node(AddMlp, elementwise(h));
    b.edge(mlp_tail, add_mlp);
    b.edge(add_attn, add_mlp);

    b.graph
}

/// A set of named architectures loaded from a TOML document of `[[architecture]]` tables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchCatalog {
    #[serde(default, rename = "architecture")]
    pub architectures: Vec<LlmArchitecture>,
}

impl ArchCatalog {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_ARCHITECTURES).expect("built-in architecture catalog is valid")
    }

    pub fn parse(text: &str) -> Result<Self, ArchError> {
        let catalog: ArchCatalog = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        for arch in &catalog.architectures {
            arch.validate().map_err(|source| ArchError::Invalid {
                name: arch.name.clone(),
                source: Box::new(source),
            })?;
        }
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Self, ArchError> {
        let text = std::fs::read_to_string(path).map_err(|e| ArchError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, name: &str) -> Result<&LlmArchitecture, ArchError> {
        self.architectures
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| ArchError::UnknownArchitecture(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.architectures.iter().map(|a| a.name.as_str())
    }
}

/// Parses a single architecture document (top-level keys, no table header).
pub fn parse_architecture(text: &str) -> Result<LlmArchitecture, ArchError> {
    let arch: LlmArchitecture = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    validate_architecture(arch)
}

/// Converts a TOML error into a field- and line-addressed parse error.
pub(crate) fn toml_error(text: &str, err: &toml::de::Error) -> ArchError {
    let line = err
        .span()
        .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1);
    let message = err.message().to_string();
    let field = backticked(&message).or_else(|| {
        // Type errors point at the offending value; recover the key from its line.
        let line = line?;
        let src = text.lines().nth(line - 1)?;
        let key = src.split('=').next()?.trim();
        (!key.is_empty() && !key.starts_with('[')).then(|| key.to_string())
    });
    ArchError::Parse {
        field,
        line,
        message,
    }
}

fn backticked(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn arch(flash: bool, gated: bool) -> LlmArchitecture {
        LlmArchitecture {
            name: "test".into(),
            hidden_size: 4096,
            intermediate_size: 11008,
            head_count: 32,
            kv_head_count: 8,
            layer_count: 32,
            weight_dtype: DataType::Fp16,
            activation_dtype: DataType::Fp16,
            kv_dtype: DataType::Fp16,
            flash_attention: flash,
            gated_mlp: gated,
        }
    }

    #[test]
    fn validation_accepts_divisible_dims() {
        let a = validate_architecture(arch(true, true)).unwrap();
        assert_eq!(derive_head_dim(&a), 128);
    }

    #[test]
    fn validation_rejects_indivisible_hidden() {
        let mut a = arch(true, true);
        a.hidden_size = 100;
        assert_eq!(
            validate_architecture(a),
            Err(ArchError::Divisibility {
                hidden_size: 100,
                head_count: 32
            })
        );
    }

    #[test]
    fn validation_rejects_zero_layers() {
        let mut a = arch(true, true);
        a.layer_count = 0;
        assert_eq!(
            validate_architecture(a),
            Err(ArchError::Range {
                field: "layer_count"
            })
        );
    }

    #[test]
    fn validation_rejects_bad_kv_heads() {
        let mut a = arch(true, true);
        a.kv_head_count = 5;
        assert!(matches!(a.validate(), Err(ArchError::KvHeads { .. })));
        a.kv_head_count = 64;
        assert!(matches!(a.validate(), Err(ArchError::KvHeads { .. })));
    }

    #[test]
    fn head_dim_examples() {
        let mut a = arch(true, true);
        a.hidden_size = 8;
        a.head_count = 2;
        a.kv_head_count = 2;
        assert_eq!(derive_head_dim(&a), 4);
        a.head_count = 8;
        a.kv_head_count = 8;
        assert_eq!(derive_head_dim(&a), 1);
    }

    #[test]
    fn inference_config_rejects_zeros() {
        assert!(InferenceConfig::new(1, 1, 1, 1).validate().is_ok());
        assert_eq!(
            InferenceConfig::new(0, 1, 1, 1).validate(),
            Err(ArchError::Range {
                field: "batch_size"
            })
        );
        assert_eq!(
            InferenceConfig::new(1, 1, 1, 0).validate(),
            Err(ArchError::Range { field: "gpu_count" })
        );
    }

    #[test]
    fn flash_gated_tensor_parallel_graph() {
        let g = enumerate_layer_kernels(&arch(true, true), 4);
        assert_eq!(g.len(), 15);
        assert_eq!(g.count(KernelKind::AllReduce), 2);
        assert!(g.contains(KernelKind::FuseAttn));
        assert!(!g.contains(KernelKind::Softmax));
    }

    #[test]
    fn non_flash_single_gpu_graph() {
        let g = enumerate_layer_kernels(&arch(false, true), 1);
        assert_eq!(g.len(), 15);
        assert_eq!(g.count(KernelKind::AllReduce), 0);
        for kind in [KernelKind::MatmulQk, KernelKind::Softmax, KernelKind::MatmulSv] {
            assert_eq!(g.count(kind), 1);
        }
        assert!(!g.contains(KernelKind::FuseAttn));
    }

    #[test]
    fn flash_ungated_single_gpu_graph() {
        let g = enumerate_layer_kernels(&arch(true, false), 1);
        assert_eq!(g.len(), 12);
        assert!(!g.contains(KernelKind::GateProj));
        assert_eq!(g.count(KernelKind::AllReduce), 0);
    }

    #[test]
    fn graphs_are_acyclic_and_connected() {
        for flash in [true, false] {
            for gated in [true, false] {
                for n_gpu in 1..=4 {
                    let g = enumerate_layer_kernels(&arch(flash, gated), n_gpu);
                    let order = g.topological_order().unwrap();
                    assert_eq!(order.len(), g.len());
                    let deg = g.in_degrees();
                    let sources: Vec<_> = (0..g.len()).filter(|&v| deg[v] == 0).collect();
                    assert_eq!(sources, vec![0], "only norm_attn is a source");
                    let expected_ar = if n_gpu >= 2 { 2 } else { 0 };
                    assert_eq!(g.count(KernelKind::AllReduce), expected_ar);
                    for (i, node) in g.nodes.iter().enumerate() {
                        assert_eq!(node.id, i);
                    }
                }
            }
        }
    }

    #[test]
    fn every_kind_appears_in_some_variant() {
        let mut seen = std::collections::BTreeSet::new();
        for flash in [true, false] {
            for node in enumerate_layer_kernels(&arch(flash, true), 2).nodes {
                seen.insert(node.kind);
            }
        }
        assert_eq!(seen.len(), KernelKind::COUNT);
    }

    #[test]
    fn enumeration_is_deterministic() {
        let a = arch(false, true);
        assert_eq!(enumerate_layer_kernels(&a, 2), enumerate_layer_kernels(&a, 2));
    }

    #[test]
    fn cycle_detection() {
        let mut g = enumerate_layer_kernels(&arch(true, true), 1);
        let last = g.len() - 1;
        g.edges.push((last, 0));
        assert_eq!(g.topological_order(), Err(ArchError::Cycle));
    }

    #[test]
    fn builtin_catalog_loads() {
        let catalog = ArchCatalog::builtin();
        assert_eq!(catalog.architectures.len(), 17);
        let llama = catalog.get("llama3.1-8b").unwrap();
        assert_eq!(llama.head_dim(), 128);
        assert!(catalog.get("gpt-9").is_err());
    }

    #[test]
    fn parse_error_reports_field_and_line() {
        let text = "name = \"x\"\nhidden_size = 64\nintermediate_size = \"wide\"\nhead_count = 4\nkv_head_count = 4\nlayer_count = 2\n";
        match parse_architecture(text) {
            Err(ArchError::Parse { field, line, .. }) => {
                assert_eq!(field.as_deref(), Some("intermediate_size"));
                assert_eq!(line, Some(3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_missing_and_unknown_fields() {
        let missing = "hidden_size = 64\nintermediate_size = 128\nhead_count = 4\nkv_head_count = 4\n";
        match parse_architecture(missing) {
            Err(ArchError::Parse { field, .. }) => assert_eq!(field.as_deref(), Some("layer_count")),
            other => panic!("unexpected {other:?}"),
        }
        let unknown = "hidden_size = 64\nintermediate_size = 128\nhead_count = 4\nkv_head_count = 4\nlayer_count = 1\nrope_theta = 1.0\n";
        match parse_architecture(unknown) {
            Err(ArchError::Parse { field, line, .. }) => {
                assert_eq!(field.as_deref(), Some("rope_theta"));
                assert_eq!(line, Some(6));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parsed_architecture_is_validated() {
        let text = "hidden_size = 100\nintermediate_size = 128\nhead_count = 32\nkv_head_count = 32\nlayer_count = 1\n";
        assert!(matches!(
            parse_architecture(text),
            Err(ArchError::Divisibility { .. })
        ));
    }
}
