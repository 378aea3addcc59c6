//! Loop-counting reference for the kernel cost equations.
//!
//! Nothing here calls into the library's cost code. Every quantity is accumulated one
//! element at a time by walking the loops the kernel would execute, then divided by the
//! tensor-parallel degree at the very end of each term. It is only usable on tiny shapes.

use infercarbon::arch::{DataType, InferenceConfig, KernelKind, LlmArchitecture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counted {
    pub ops: u128,
    pub mem: u128,
    pub net: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prefill,
    Decode,
}

fn bytes(d: DataType) -> u128 {
    match d {
        DataType::Fp32 => 4,
        DataType::Fp16 => 2,
        DataType::Int8 => 1,
    }
}

/// Token positions the per-token kernels run over: the prompt in prefill, every generated
/// token after the first in decode.
fn token_steps(cfg: &InferenceConfig, stage: Stage) -> u64 {
    match stage {
        Stage::Prefill => cfg.prompt_length,
        Stage::Decode => cfg.generated_tokens - 1,
    }
}

/// Context length seen by decode step `s`, in half-token units. The model treats each
/// step as attending to `L + s + 1/2` positions on average.
fn half_context(prompt: u64, step: u64) -> u128 {
    (2 * prompt + 2 * step + 1) as u128
}

fn shape(kind: KernelKind, arch: &LlmArchitecture) -> (u64, u64) {
    let h = arch.hidden_size;
    let kv = (h / arch.head_count) * arch.kv_head_count;
    match kind {
        KernelKind::QProj | KernelKind::OutProj => (h, h),
        KernelKind::KProj | KernelKind::VProj => (h, kv),
        KernelKind::GateProj | KernelKind::UpProj => (h, arch.intermediate_size),
        KernelKind::DownProj => (arch.intermediate_size, h),
        other => panic!("{other:?} is not a projection"),
    }
}

fn projection(kind: KernelKind, arch: &LlmArchitecture, cfg: &InferenceConfig, stage: Stage) -> Counted {
    let (d_in, d_out) = shape(kind, arch);
    let steps = token_steps(cfg, stage);
    let store_bytes = match kind {
        KernelKind::KProj | KernelKind::VProj => bytes(arch.activation_dtype),
        _ => bytes(arch.kv_dtype),
    };
    let (mut ops, mut weights, mut loads, mut stores) = (0u128, 0u128, 0u128, 0u128);
    for _tok in 0..steps {
        for _b in 0..cfg.batch_size {
            for _i in 0..d_in {
                loads += bytes(arch.activation_dtype);
                for _o in 0..d_out {
                    ops += 2; // multiply + accumulate
                }
            }
            for _o in 0..d_out {
                stores += store_bytes;
            }
        }
    }
    // The weight matrix streams once per decode step, or once for the whole prompt.
    let weight_passes = match stage {
        Stage::Prefill => 1,
        Stage::Decode => steps,
    };
    for _pass in 0..weight_passes {
        for _i in 0..d_in {
            for _o in 0..d_out {
                weights += bytes(arch.weight_dtype);
            }
        }
    }
    let g = cfg.gpu_count as u128;
    Counted {
        ops: ops / g,
        mem: weights / g + loads / g + stores / g,
        net: 0,
    }
}

/// Raw (undivided) attention counts, with decode counted in half-token units.
struct AttentionRaw {
    matmul: u128,
    softmax: u128,
    act: u128,
    kv: u128,
    /// Divisor applied to every term: `G` in prefill, `2G` in decode.
    div: u128,
}

fn attention_raw(arch: &LlmArchitecture, cfg: &InferenceConfig, stage: Stage) -> AttentionRaw {
    let d_h = arch.hidden_size / arch.head_count;
    let mut raw = AttentionRaw {
        matmul: 0,
        softmax: 0,
        act: 0,
        kv: 0,
        div: 0,
    };
    match stage {
        Stage::Prefill => {
            for _pos in 0..cfg.prompt_length {
                for _b in 0..cfg.batch_size {
                    for _head in 0..arch.head_count {
                        for _d in 0..d_h {
                            raw.matmul += 2;
                        }
                        raw.softmax += 5;
                        raw.act += bytes(arch.activation_dtype);
                    }
                    for _kvh in 0..arch.kv_head_count {
                        for _d in 0..d_h {
                            raw.kv += bytes(arch.kv_dtype);
                        }
                    }
                }
            }
            raw.div = cfg.gpu_count as u128;
        }
        Stage::Decode => {
            for step in 0..cfg.generated_tokens {
                let c = half_context(cfg.prompt_length, step);
                for _b in 0..cfg.batch_size {
                    for _head in 0..arch.head_count {
                        for _d in 0..d_h {
                            raw.matmul += 2 * c;
                        }
                        raw.softmax += 5 * c;
                        raw.act += bytes(arch.activation_dtype) * c;
                    }
                    for _kvh in 0..arch.kv_head_count {
                        for _d in 0..d_h {
                            raw.kv += bytes(arch.kv_dtype) * c;
                        }
                    }
                }
            }
            raw.div = 2 * cfg.gpu_count as u128;
        }
    }
    raw
}

fn fused(arch: &LlmArchitecture, cfg: &InferenceConfig, s_block: u64, stage: Stage) -> Counted {
    let a = attention_raw(arch, cfg, stage);
    let per_pass = 2 * (a.matmul / a.div) + a.softmax / a.div;
    let d_h = arch.hidden_size / arch.head_count;
    let g = cfg.gpu_count as u128;

    // Operations: in prefill the unfused work is redone for every query block.
    let mut ops = 0u128;
    let passes = match stage {
        Stage::Prefill => cfg.prompt_length,
        Stage::Decode => 1,
    };
    for _ in 0..passes {
        ops += per_pass;
    }

    let mut act_load = 0u128;
    for _tok in 0..token_steps(cfg, stage) {
        for _b in 0..cfg.batch_size {
            for _head in 0..arch.head_count {
                for _d in 0..d_h {
                    act_load += bytes(arch.activation_dtype);
                }
            }
        }
    }
    let act_load = act_load / g;

    // K and V of every resident KV block stream through on-chip memory.
    let mut kv_raw = 0u128;
    let mut kv_div = g;
    match stage {
        Stage::Prefill => {
            for _pos in 0..cfg.prompt_length {
                for _b in 0..cfg.batch_size {
                    for _tensor in 0..2 {
                        for _blk in 0..s_block {
                            for _kvh in 0..arch.kv_head_count {
                                for _d in 0..d_h {
                                    kv_raw += bytes(arch.kv_dtype);
                                }
                            }
                        }
                    }
                }
            }
        }
        Stage::Decode => {
            for step in 0..cfg.generated_tokens {
                let c = half_context(cfg.prompt_length, step);
                for _b in 0..cfg.batch_size {
                    for _tensor in 0..2 {
                        for _blk in 0..s_block {
                            for _kvh in 0..arch.kv_head_count {
                                for _d in 0..d_h {
                                    kv_raw += bytes(arch.kv_dtype) * c;
                                }
                            }
                        }
                    }
                }
            }
            kv_div = 2 * g;
        }
    }
    let kv_load = kv_raw / kv_div;
    Counted {
        ops,
        // The published accounting counts the KV stream twice and omits the output store.
        mem: act_load + kv_load + kv_load,
        net: 0,
    }
}

fn elementwise(kind: KernelKind, arch: &LlmArchitecture, cfg: &InferenceConfig, stage: Stage) -> Counted {
    let per_element = match kind {
        KernelKind::NormAttn | KernelKind::NormMlp => 7,
        KernelKind::AddAttn | KernelKind::AddMlp => 1,
        KernelKind::ActMlp => 2,
        other => panic!("{other:?} is not elementwise"),
    };
    let d_a = bytes(arch.activation_dtype);
    let (mut ops, mut touched) = (0u128, 0u128);
    for _tok in 0..token_steps(cfg, stage) {
        for _b in 0..cfg.batch_size {
            for _e in 0..arch.hidden_size {
                ops += per_element;
                touched += d_a;
            }
        }
    }
    let g = cfg.gpu_count as u128;
    let mem = if kind == KernelKind::ActMlp {
        // Two operand reads; decode writes back three read-sized streams, prefill one.
        let load = (2 * touched) / g;
        match stage {
            Stage::Decode => 3 * load,
            Stage::Prefill => load + touched / g,
        }
    } else {
        // One read and one write per element.
        2 * (touched / g)
    };
    Counted {
        ops: ops / g,
        mem,
        net: 0,
    }
}

/// Ring reduce-scatter of a `hidden x batch` matrix, counted per GPU.
fn allreduce(arch: &LlmArchitecture, cfg: &InferenceConfig, stage: Stage) -> Counted {
    let l = cfg.gpu_count;
    assert!(l >= 2 && arch.hidden_size % l == 0);
    let chunk_rows = arch.hidden_size / l;
    let d_a = bytes(arch.activation_dtype);
    let mut counted = Counted::default();
    for _tok in 0..token_steps(cfg, stage) {
        // l - 1 ring rounds; in each one this GPU forwards one chunk to its neighbour.
        for _round in 0..l - 1 {
            for _r in 0..chunk_rows {
                for _b in 0..cfg.batch_size {
                    counted.net += d_a;
                }
            }
        }
        // The chunk this GPU owns is reduced: one op, one load and one store per element.
        for _r in 0..chunk_rows {
            for _b in 0..cfg.batch_size {
                counted.ops += 1;
                counted.mem += 2 * d_a;
            }
        }
    }
    counted
}

pub fn count(kind: KernelKind, arch: &LlmArchitecture, cfg: &InferenceConfig, s_block: u64, stage: Stage) -> Counted {
    use KernelKind::*;
    match kind {
        QProj | KProj | VProj | OutProj | GateProj | UpProj | DownProj => projection(kind, arch, cfg, stage),
        NormAttn | NormMlp | AddAttn | AddMlp | ActMlp => elementwise(kind, arch, cfg, stage),
        MatmulQk | MatmulSv => {
            let a = attention_raw(arch, cfg, stage);
            Counted {
                ops: a.matmul / a.div,
                mem: 2 * (a.act / a.div) + a.kv / a.div,
                net: 0,
            }
        }
        Softmax => {
            let a = attention_raw(arch, cfg, stage);
            Counted {
                ops: a.softmax / a.div,
                mem: 2 * (a.act / a.div),
                net: 0,
            }
        }
        FuseAttn => fused(arch, cfg, s_block, stage),
        AllReduce => allreduce(arch, cfg, stage),
    }
}
