//! Trains the graph regressor on synthetic-oracle labels and reports held-out accuracy.
//!
//! ```text
//! cargo run --release --example train_predictor -- [train=4000] [test=1000] [epochs=60] [seed=7]
//! ```

use std::time::Instant;

use infercarbon::gnn::{train, EvalReport, TrainHyper};
use infercarbon::graph::FeatureStats;
use infercarbon::roofline::GpuCatalog;
use infercarbon::sampler::{
    encode_labeled, extract_labeled, initial_sample, label_points, predict_all, PriorSpace,
    SyntheticOracle,
};

fn arg(i: usize, default: u64) -> u64 {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n_train, n_test) = (arg(1, 4000) as usize, arg(2, 1000) as usize);
    let epochs = arg(3, 60) as usize;
    let seed = arg(4, 7);

    let space = PriorSpace::builtin(4096, seed)?;
    let oracle = SyntheticOracle::new(GpuCatalog::builtin());
    let points = initial_sample(&space, n_train + n_test, seed)?;
    let labeled = label_points(&oracle, points, 0, None)?;
    let (train_pts, test_pts) = labeled.split_at(n_train);

    let train_raw = extract_labeled(&space.gpus, train_pts)?;
    let stats = FeatureStats::fit(&train_raw)?;
    let train_x = encode_labeled(&train_raw, train_pts, &stats)?;
    let test_raw = extract_labeled(&space.gpus, test_pts)?;
    let test_x = encode_labeled(&test_raw, test_pts, &stats)?;

    let hyper = TrainHyper {
        batch_size: 64,
        epochs,
        seed,
        ..TrainHyper::default()
    };
    let start = Instant::now();
    let outcome = train(&train_x, &hyper)?;
    let secs = start.elapsed().as_secs_f64();
    for (i, l) in outcome.loss_history.iter().enumerate() {
        if i % 10 == 0 || i + 1 == outcome.loss_history.len() {
            println!("epoch {i:>4}  loss {l:.5}");
        }
    }

    let inputs: Vec<_> = test_x.iter().map(|x| &x.input).collect();
    let preds = predict_all(&outcome.params, &inputs)?;
    let truths: Vec<f64> = test_x.iter().map(|x| x.energy_joules).collect();
    let report = EvalReport::compute(&preds, &truths)?;
    let mean = train_x.iter().map(|x| x.energy_joules).sum::<f64>() / train_x.len() as f64;
    let baseline = EvalReport::compute(&vec![mean; truths.len()], &truths)?;
    println!("trained {} samples for {epochs} epochs in {secs:.1} s", train_x.len());
    println!("held-out: {}", serde_json::to_string(&report)?);
    println!("mean baseline MAPE: {:.1}%", baseline.mape);
    Ok(())
}
