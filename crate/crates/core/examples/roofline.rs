//! Ridge points of every catalog GPU and where each kernel of a layer lands on the roofline.
//!
//! ```text
//! cargo run --example roofline -- [arch=llama3.1-8b] [gpu=H100]
//! ```

use infercarbon::arch::{ArchCatalog, DataType, InferenceConfig};
use infercarbon::graph::extract_point;
use infercarbon::roofline::{ridge_points, GpuCatalog};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let catalog = GpuCatalog::builtin();
    println!("{:<6} {:>6} {:>10} {:>10}", "gpu", "dtype", "MRP", "NRP");
    for gpu in &catalog.gpus {
        for dtype in DataType::ALL {
            let r = ridge_points(gpu, dtype)?;
            println!("{:<6} {:>6} {:>10.2} {:>10.2}", gpu.name, dtype.name(), r.mrp, r.nrp);
        }
    }

    let archs = ArchCatalog::builtin();
    let arch = archs.get(args.first().map_or("llama3.1-8b", String::as_str))?;
    let gpu = catalog.get(args.get(1).map_or("H100", String::as_str))?;
    let cfg = InferenceConfig::new(1, 1024, 128, 2);
    let raw = extract_point(arch, &cfg, gpu)?;
    println!("\n{} on 2x {}: attainable throughput (TOPS)", arch.name, gpu.name);
    for n in &raw.nodes {
        println!("{:<10} prefill {:>9.2}   decode {:>9.2}", n.kind.name(), n.prefill.perf / 1e12, n.decode.perf / 1e12);
    }
    let [p, d] = raw.layer_seconds();
    println!("layer time: prefill {:.3e} s, decode {:.3e} s", p, d);
    Ok(())
}
