//! Per-kernel operation, memory and network counts of one transformer layer.
//!
//! ```text
//! cargo run --example cost_breakdown -- [arch=qwen2-7b] [batch=1] [prompt=512] [gen=128] [gpus=2]
//! ```

use infercarbon::arch::{enumerate_layer_kernels, ArchCatalog, InferenceConfig};
use infercarbon::costmodel::{graph_costs, layer_totals, model_totals};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let archs = ArchCatalog::builtin();
    let arch = archs.get(args.first().map_or("qwen2-7b", String::as_str))?;
    let cfg = InferenceConfig::new(num(1, 1), num(2, 512), num(3, 128), num(4, 2));

    let graph = enumerate_layer_kernels(arch, cfg.gpu_count);
    let costs = graph_costs(&graph, arch, &cfg, 1)?;
    println!("{} | batch {} prompt {} gen {} | {} GPU(s)", arch.name, cfg.batch_size, cfg.prompt_length, cfg.generated_tokens, cfg.gpu_count);
    println!("{:<10} {:>14} {:>14} {:>12} | {:>14} {:>14} {:>12}", "kernel", "prefill ops", "prefill mem", "prefill net", "decode ops", "decode mem", "decode net");
    for (node, c) in graph.nodes.iter().zip(&costs) {
        println!(
            "{:<10} {:>14} {:>14} {:>12} | {:>14} {:>14} {:>12}",
            node.kind.name(),
            c.prefill.ops,
            c.prefill.mem_bytes,
            c.prefill.net_bytes,
            c.decode.ops,
            c.decode.mem_bytes,
            c.decode.net_bytes
        );
    }
    let model = model_totals(layer_totals(&graph, arch, &cfg, 1)?, arch.layer_count)?;
    println!("\nwhole model, {} layers, per GPU:", arch.layer_count);
    for (name, t) in [("prefill", model.prefill), ("decode", model.decode)] {
        println!("  {name:<8} {:.3e} ops  {:.3e} B memory  {:.3e} B network", t.ops as f64, t.mem_bytes as f64, t.net_bytes as f64);
    }
    Ok(())
}
