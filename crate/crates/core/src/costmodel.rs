//! Analytical per-kernel cost equations for the prefill and decode phases.
//!
//! Every kernel yields a [`CostTriple`]: operation count `O`, memory traffic `M` and
//! interconnect traffic `I`, all per GPU. Quantities are exact integers: each term is
//! formed as a 128-bit numerator and divided (floor) by its denominator, which contains
//! the tensor-parallel degree.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, InferenceConfig, KernelGraph, KernelKind, KernelNode, LlmArchitecture};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("{operation} does not handle kernel kind `{kind}`")]
    UnsupportedKind {
        kind: KernelKind,
        operation: &'static str,
    },
    #[error("kernel `{kind}` does not exist when flash_attention = {flash_attention}")]
    VariantMismatch {
        kind: KernelKind,
        flash_attention: bool,
    },
    #[error("all-reduce cannot partition dimension {n} across {l} GPUs")]
    Partition { n: u64, l: u64 },
    #[error("s_block must be >= 1")]
    InvalidSBlock,
    #[error("kernel graph is empty")]
    EmptyGraph,
    #[error("layer_count must be >= 1")]
    ZeroLayers,
    #[error(transparent)]
    Config(#[from] ArchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    Decode,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Prefill, Phase::Decode];
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Prefill => "prefill",
            Phase::Decode => "decode",
        })
    }
}

/// Operation count, memory bytes and network bytes of one kernel in one phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostTriple {
    pub ops: u128,
    pub mem_bytes: u128,
    pub net_bytes: u128,
}

impl CostTriple {
    pub const ZERO: CostTriple = CostTriple {
        ops: 0,
        mem_bytes: 0,
        net_bytes: 0,
    };

    pub fn new(ops: u128, mem_bytes: u128, net_bytes: u128) -> Self {
        Self {
            ops,
            mem_bytes,
            net_bytes,
        }
    }

    pub fn scaled(self, factor: u128) -> Self {
        Self::new(
            self.ops * factor,
            self.mem_bytes * factor,
            self.net_bytes * factor,
        )
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }
}

impl Add for CostTriple {
    type Output = CostTriple;

    fn add(self, rhs: Self) -> Self {
        Self::new(
            self.ops + rhs.ops,
            self.mem_bytes + rhs.mem_bytes,
            self.net_bytes + rhs.net_bytes,
        )
    }
}

impl AddAssign for CostTriple {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sum for CostTriple {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(CostTriple::ZERO, Add::add)
    }
}

/// Per-phase sums over the kernels of a layer (or of a whole model).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTotals {
    pub prefill: CostTriple,
    pub decode: CostTriple,
}

impl LayerTotals {
    pub fn phase(&self, phase: Phase) -> CostTriple {
        match phase {
            Phase::Prefill => self.prefill,
            Phase::Decode => self.decode,
        }
    }

    pub fn combined(&self) -> CostTriple {
        self.prefill + self.decode
    }
}

/// How the fused-attention memory sum is assembled.
///
/// `Faithful` reproduces the published sum `A_load + KV_load + KV_load`. `Corrected`
/// replaces the repeated KV term with the activation store term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusedMemory {
    #[default]
    Faithful,
    Corrected,
}

fn w(x: u64) -> u128 {
    x as u128
}

fn check(arch: &LlmArchitecture, cfg: &InferenceConfig) -> Result<(), CostError> {
    arch.validate()?;
    cfg.validate()?;
    Ok(())
}

/// Token multiplier of the per-token kernels: `N_gT - 1` in decode, `L_seq` in prefill.
fn token_factor(cfg: &InferenceConfig, phase: Phase) -> u128 {
    match phase {
        Phase::Decode => w(cfg.generated_tokens - 1),
        Phase::Prefill => w(cfg.prompt_length),
    }
}

/// `(2 L_seq + N_gT) * N_gT`: twice the context length summed over the decode steps.
pub fn decode_context_weight(prompt_length: u64, generated_tokens: u64) -> u128 {
    (2 * w(prompt_length) + w(generated_tokens)) * w(generated_tokens)
}

/// Input and output widths of a linear kernel.
pub fn linear_shape(kind: KernelKind, arch: &LlmArchitecture) -> Option<(u64, u64)> {
    let h = arch.hidden_size;
    match kind {
        KernelKind::QProj | KernelKind::OutProj => Some((h, h)),
        KernelKind::KProj | KernelKind::VProj => Some((h, arch.kv_width())),
        KernelKind::GateProj | KernelKind::UpProj => Some((h, arch.intermediate_size)),
        KernelKind::DownProj => Some((arch.intermediate_size, h)),
        _ => None,
    }
}

/// Projection kernels (`QProj`, `KProj`, `VProj`, `OutProj`, `GateProj`, `UpProj`, `DownProj`).
///
/// Weights are reloaded on every decode step but loaded once in prefill. `KProj` and
/// `VProj` store activations; every other linear kernel stores into the KV cache.
pub fn linear_cost(
    kind: KernelKind,
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    phase: Phase,
) -> Result<CostTriple, CostError> {
    let (d_in, d_out) = linear_shape(kind, arch).ok_or(CostError::UnsupportedKind {
        kind,
        operation: "linear_cost",
    })?;
    check(arch, cfg)?;
    let g = w(cfg.gpu_count);
    let b = w(cfg.batch_size);
    let (d_in, d_out) = (w(d_in), w(d_out));
    let t = token_factor(cfg, phase);

    let ops = 2 * b * d_in * d_out * t / g;
    let weight_reloads = match phase {
        Phase::Decode => t,
        Phase::Prefill => 1,
    };
    let weight_load = d_in * d_out * w(arch.weight_dtype.width()) * weight_reloads / g;
    let act_load = d_in * b * w(arch.activation_dtype.width()) * t / g;
    let store_width = match kind {
        KernelKind::KProj | KernelKind::VProj => arch.activation_dtype.width(),
        _ => arch.kv_dtype.width(),
    };
    let store = d_out * b * w(store_width) * t / g;
    Ok(CostTriple::new(ops, weight_load + act_load + store, 0))
}

fn require_flash(kind: KernelKind, arch: &LlmArchitecture, flash: bool) -> Result<(), CostError> {
    if arch.flash_attention == flash {
        Ok(())
    } else {
        Err(CostError::VariantMismatch {
            kind,
            flash_attention: arch.flash_attention,
        })
    }
}

/// Shared terms of the unfused attention kernels.
struct AttentionTerms {
    matmul_ops: u128,
    softmax_ops: u128,
    /// Activation bytes loaded (and, separately, stored) by each kernel.
    act: u128,
    kv_load: u128,
}

fn attention_terms(arch: &LlmArchitecture, cfg: &InferenceConfig, phase: Phase) -> AttentionTerms {
    let g = w(cfg.gpu_count);
    let b = w(cfg.batch_size);
    let d_h = w(arch.head_dim());
    let n_h = w(arch.head_count);
    let n_kv = w(arch.kv_head_count);
    let d_a = w(arch.activation_dtype.width());
    let d_kv = w(arch.kv_dtype.width());
    match phase {
        Phase::Decode => {
            let ctx = decode_context_weight(cfg.prompt_length, cfg.generated_tokens);
            AttentionTerms {
                matmul_ops: b * d_h * n_h * ctx / g,
                softmax_ops: 5 * b * n_h * ctx / (2 * g),
                act: b * n_h * d_a * ctx / (2 * g),
                kv_load: b * d_h * n_kv * d_kv * ctx / (2 * g),
            }
        }
        Phase::Prefill => {
            let l = w(cfg.prompt_length);
            AttentionTerms {
                matmul_ops: 2 * b * d_h * n_h * l / g,
                softmax_ops: 5 * b * n_h * l / g,
                act: b * n_h * d_a * l / g,
                kv_load: b * d_h * n_kv * d_kv * l / g,
            }
        }
    }
}

/// `MatmulQk` and `MatmulSv` of the unfused attention variant.
pub fn attention_matmul_cost(
    kind: KernelKind,
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    phase: Phase,
) -> Result<CostTriple, CostError> {
    if !matches!(kind, KernelKind::MatmulQk | KernelKind::MatmulSv) {
        return Err(CostError::UnsupportedKind {
            kind,
            operation: "attention_matmul_cost",
        });
    }
    require_flash(kind, arch, false)?;
    check(arch, cfg)?;
    let t = attention_terms(arch, cfg, phase);
    Ok(CostTriple::new(t.matmul_ops, 2 * t.act + t.kv_load, 0))
}

pub fn softmax_cost(
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    phase: Phase,
) -> Result<CostTriple, CostError> {
    require_flash(KernelKind::Softmax, arch, false)?;
    check(arch, cfg)?;
    let t = attention_terms(arch, cfg, phase);
    Ok(CostTriple::new(t.softmax_ops, 2 * t.act, 0))
}

/// The flash-attention kernel in the published (faithful) memory accounting.
pub fn fused_attention_cost(
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    s_block: u64,
    phase: Phase,
) -> Result<CostTriple, CostError> {
    fused_attention_cost_with(arch, cfg, s_block, phase, FusedMemory::Faithful)
}

pub fn fused_attention_cost_with(
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    s_block: u64,
    phase: Phase,
    accounting: FusedMemory,
) -> Result<CostTriple, CostError> {
    require_flash(KernelKind::FuseAttn, arch, true)?;
    check(arch, cfg)?;
    if s_block == 0 {
        return Err(CostError::InvalidSBlock);
    }
    let unfused = attention_terms(arch, cfg, phase);
    let g = w(cfg.gpu_count);
    let b = w(cfg.batch_size);
    let d_h = w(arch.head_dim());
    let n_h = w(arch.head_count);
    let n_kv = w(arch.kv_head_count);
    let d_a = w(arch.activation_dtype.width());
    let d_kv = w(arch.kv_dtype.width());
    let s = w(s_block);

    let (ops, act_load, act_store, kv_load) = match phase {
        Phase::Decode => {
            let steps = w(cfg.generated_tokens - 1);
            let ctx = decode_context_weight(cfg.prompt_length, cfg.generated_tokens);
            (
                2 * unfused.matmul_ops + unfused.softmax_ops,
                d_h * b * n_h * d_a * steps / g,
                2 * d_h * b * n_h * d_a * steps / g,
                2 * b * s * d_h * n_kv * d_kv * ctx / (2 * g),
            )
        }
        Phase::Prefill => {
            let l = w(cfg.prompt_length);
            (
                (2 * unfused.matmul_ops + unfused.softmax_ops) * l,
                d_h * b * n_h * d_a * l / g,
                2 * d_h * b * n_h * d_a * l / g,
                2 * b * s * d_h * n_kv * d_kv * l / g,
            )
        }
    };
    let mem = match accounting {
        FusedMemory::Faithful => act_load + kv_load + kv_load,
        FusedMemory::Corrected => act_load + act_store + kv_load,
    };
    Ok(CostTriple::new(ops, mem, 0))
}

/// Normalisations, residual adds and the MLP activation.
pub fn elementwise_cost(
    kind: KernelKind,
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    phase: Phase,
) -> Result<CostTriple, CostError> {
    if !kind.is_elementwise() {
        return Err(CostError::UnsupportedKind {
            kind,
            operation: "elementwise_cost",
        });
    }
    check(arch, cfg)?;
    let g = w(cfg.gpu_count);
    let b = w(cfg.batch_size);
    let h = w(arch.hidden_size);
    let d_a = w(arch.activation_dtype.width());
    let t = token_factor(cfg, phase);
    let per_token = match kind {
        KernelKind::NormAttn | KernelKind::NormMlp => 7,
        KernelKind::AddAttn | KernelKind::AddMlp => 1,
        _ => 2,
    };
    let ops = per_token * b * h * t / g;
    let mem = if kind == KernelKind::ActMlp {
        let load = 2 * b * h * d_a * t / g;
        match phase {
            Phase::Decode => 3 * load,
            Phase::Prefill => load + b * h * d_a * t / g,
        }
    } else {
        2 * (b * h * d_a * t / g)
    };
    Ok(CostTriple::new(ops, mem, 0))
}

/// All-reduce of an `n x m` matrix across `l` GPUs (reduce-scatter followed by all-gather).
pub fn allreduce_cost(
    n: u64,
    m: u64,
    l: u64,
    cfg: &InferenceConfig,
    activation_width: u64,
    phase: Phase,
) -> Result<CostTriple, CostError> {
    if l < 2 || n % l != 0 {
        return Err(CostError::Partition { n, l });
    }
    cfg.validate()?;
    let t = token_factor(cfg, phase);
    let shard = w(n / l) * w(m);
    let ops = shard * t;
    let mem = 2 * ops * w(activation_width);
    let net = shard * w(l - 1) * w(activation_width) * t;
    Ok(CostTriple::new(ops, mem, net))
}

/// Dispatches a kernel node to its cost equation.
pub fn kernel_cost(
    node: &KernelNode,
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    s_block: u64,
    phase: Phase,
) -> Result<CostTriple, CostError> {
    kernel_cost_with(node, arch, cfg, s_block, phase, FusedMemory::Faithful)
}

pub fn kernel_cost_with(
    node: &KernelNode,
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    s_block: u64,
    phase: Phase,
    accounting: FusedMemory,
) -> Result<CostTriple, CostError> {
    use KernelKind::*;
    match node.kind {
        kind if kind.is_linear() => linear_cost(kind, arch, cfg, phase),
        kind if kind.is_elementwise() => elementwise_cost(kind, arch, cfg, phase),
        MatmulQk | MatmulSv => attention_matmul_cost(node.kind, arch, cfg, phase),
        Softmax => softmax_cost(arch, cfg, phase),
        FuseAttn => fused_attention_cost_with(arch, cfg, s_block, phase, accounting),
        AllReduce => allreduce_cost(
            arch.hidden_size,
            cfg.batch_size,
            cfg.gpu_count,
            cfg,
            arch.activation_dtype.width(),
            phase,
        ),
        kind => unreachable!("kernel kind {kind} is not classified"),
    }
}

/// Per-kernel costs of a graph, indexed like `graph.nodes`.
pub fn graph_costs(
    graph: &KernelGraph,
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    s_block: u64,
) -> Result<Vec<LayerTotals>, CostError> {
    graph
        .nodes
        .iter()
        .map(|node| {
            Ok(LayerTotals {
                prefill: kernel_cost(node, arch, cfg, s_block, Phase::Prefill)?,
                decode: kernel_cost(node, arch, cfg, s_block, Phase::Decode)?,
            })
        })
        .collect()
}

pub fn layer_totals(
    graph: &KernelGraph,
    arch: &LlmArchitecture,
    cfg: &InferenceConfig,
    s_block: u64,
) -> Result<LayerTotals, CostError> {
    if graph.is_empty() {
        return Err(CostError::EmptyGraph);
    }
    let per_node = graph_costs(graph, arch, cfg, s_block)?;
    Ok(LayerTotals {
        prefill: per_node.iter().map(|c| c.prefill).sum(),
        decode: per_node.iter().map(|c| c.decode).sum(),
    })
}

/// Whole-model totals: the per-layer totals repeated `layer_count` times.
pub fn model_totals(totals: LayerTotals, layer_count: u64) -> Result<LayerTotals, CostError> {
    if layer_count == 0 {
        return Err(CostError::ZeroLayers);
    }
    Ok(LayerTotals {
        prefill: totals.prefill.scaled(w(layer_count)),
        decode: totals.decode.scaled(w(layer_count)),
    })
}
