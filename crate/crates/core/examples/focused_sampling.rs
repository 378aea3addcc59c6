//! Runs the focused sampling loop against the synthetic oracle and writes the dataset
//! plus its manifest.
//!
//! ```text
//! cargo run --release --example focused_sampling -- [A=2000] [B=50] [threshold=15] [out_dir=.]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use infercarbon::roofline::GpuCatalog;
use infercarbon::sampler::{
    focused_sampling_loop, write_dataset, LoopConfig, PriorSpace, SamplingManifest, SyntheticOracle,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = LoopConfig::desk();
    if let Some(a) = args.get(1) {
        cfg.initial_points = a.parse()?;
    }
    if let Some(b) = args.get(2) {
        cfg.refine_per_center = b.parse()?;
    }
    if let Some(e) = args.get(3) {
        cfg.e_threshold = e.parse()?;
    }
    let out_dir = PathBuf::from(args.get(4).map_or(".", String::as_str));

    let space = PriorSpace::builtin(4096, cfg.seed)?;
    let oracle = SyntheticOracle::new(GpuCatalog::builtin());
    let start = Instant::now();
    let outcome = focused_sampling_loop(&space, &oracle, &cfg)?;
    for log in &outcome.trace {
        println!(
            "iteration {:>2}: refined {:>5}  train {:>6}  test {:>5}  test MAPE {:.2}%",
            log.iteration, log.refined, log.train_size, log.test_size, log.test_mape
        );
    }
    println!("{:?} after {:.1} s", outcome.termination, start.elapsed().as_secs_f64());

    std::fs::create_dir_all(&out_dir)?;
    let dataset = out_dir.join("focused_dataset.jsonl");
    write_dataset(&dataset, &outcome.train, &outcome.test)?;
    let manifest = SamplingManifest::new(&cfg, &oracle, &outcome);
    std::fs::write(out_dir.join("focused_manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!("wrote {}", dataset.display());
    Ok(())
}
