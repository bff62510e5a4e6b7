//! Pretrains the sequential recommender on the desk preset and reports
//! HT@K and NDCG@K per user group on both held-out splits.
//!
//! cargo run --example pretrain_evaluate -- [seed]

use l2aug::config::resolve;
use l2aug::evaluator::{evaluate, EvalSplit};
use l2aug::pipeline;

fn main() -> l2aug::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = resolve(
        r#"{"preset": "desk"}"#,
        &[format!("seed={seed}"), format!("synthetic.seed={seed}")],
    )?;
    let events = pipeline::load_events(&config)?;
    let ds = pipeline::prepare_dataset(&config, &events)?;
    let (model, _, log) = pipeline::pretrain_model(&config, &ds)?;
    for epoch in &log {
        println!("epoch {:>2}  loss {:.4}", epoch.epoch, epoch.mean_loss);
    }
    for split in [EvalSplit::Finetune, EvalSplit::Test] {
        let result = evaluate(&model, &ds, split, &config.eval)?;
        println!("{split:?}: {}", serde_json::to_string_pretty(&result.summary_json())?);
    }
    Ok(())
}
