//! Operational and embodied carbon of one request under the synthetic oracle, or under a
//! trained checkpoint if one is given.
//!
//! ```text
//! cargo run --example carbon_estimate -- [arch=llama3.1-8b] [gpu=A100] [gpus=1] [checkpoint.json]
//! ```

use infercarbon::arch::{ArchCatalog, InferenceConfig};
use infercarbon::carbon::{estimate_request, DatacenterParams, EmbodiedParams, EnergyPredictor};
use infercarbon::gnn::Checkpoint;
use infercarbon::roofline::GpuCatalog;
use infercarbon::sampler::SyntheticOracle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arch_name = args.first().map_or("llama3.1-8b", String::as_str);
    let gpu_name = args.get(1).map_or("A100", String::as_str);
    let gpus: u64 = args.get(2).map_or(Ok(1), |s| s.parse())?;

    let archs = ArchCatalog::builtin();
    let catalog = GpuCatalog::builtin();
    let arch = archs.get(arch_name)?;
    let gpu = catalog.get(gpu_name)?;

    let predictor: Box<dyn EnergyPredictor> = match args.get(3) {
        Some(path) => Box::new(Checkpoint::load(path.as_ref())?.predictor()),
        None => Box::new(SyntheticOracle::new(catalog.clone())),
    };

    // A short chat turn and a long-context summarisation request.
    for (prompt, gen) in [(128, 256), (4096, 64)] {
        let cfg = InferenceConfig::new(1, prompt, gen, gpus);
        let report = estimate_request(
            predictor.as_ref(),
            arch,
            &cfg,
            gpu,
            &DatacenterParams::default(),
            &EmbodiedParams::default(),
        )?;
        println!("{report}\n");
    }

    // The same request on a cleaner grid.
    let cfg = InferenceConfig::new(1, 128, 256, gpus);
    let green = DatacenterParams { pue: 1.1, carbon_intensity: 50.0 };
    let report = estimate_request(predictor.as_ref(), arch, &cfg, gpu, &green, &EmbodiedParams::default())?;
    println!("at PUE 1.1 and 50 g/kWh: {:.3e} g operational, {:.3e} g embodied", report.operational_g, report.embodied_g);
    Ok(())
}
