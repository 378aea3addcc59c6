//! Percentiles and histograms of a serving trace, plus the workload prior drawn from it.
//!
//! ```text
//! cargo run --example trace_stats -- [trace.csv]
//! ```
//! Without an argument a synthetic conversation trace is generated.

use infercarbon::traces::{
    empirical_prior, parse_trace, synthetic_trace, trace_stats, BatchMixture, ColumnMap, TraceKind,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = match std::env::args().nth(1) {
        Some(path) => parse_trace(path.as_ref(), &ColumnMap::default())?,
        None => synthetic_trace(TraceKind::Conversation, 20_000, 8192, 1),
    };
    let stats = trace_stats(&records)?;
    println!("{}", stats.to_table());

    let prior = empirical_prior(&records, BatchMixture::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("five draws (batch, prompt, generated):");
    for _ in 0..5 {
        println!("  {:?}", prior.draw(&mut rng));
    }
    Ok(())
}
