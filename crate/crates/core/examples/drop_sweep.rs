//! Randomly drops a share of every core user's training events, retrains,
//! and reports casual-user accuracy per drop rate.
//!
//! cargo run --example drop_sweep -- [seed]

use l2aug::config::resolve;
use l2aug::evaluator::{random_drop_sweep, EvalSplit};
use l2aug::pipeline;

fn main() -> l2aug::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = resolve(r#"{"preset": "desk"}"#, &[format!("synthetic.seed={seed}")])?;
    let ds = pipeline::prepare_dataset(&config, &pipeline::load_events(&config)?)?;
    let rates = [0.0, 0.25, 0.5, 0.75, 1.0];
    let rows = random_drop_sweep(&ds, &rates, &config.model, &config.fit, EvalSplit::Test, &config.eval, seed)?;
    println!("rate   HT@10   HT@5    NDCG@10 NDCG@5");
    for row in rows {
        let m = |k: &str| row.metrics.get(k).copied().unwrap_or(f64::NAN);
        println!(
            "{:<6} {:.4}  {:.4}  {:.4}  {:.4}",
            row.rate,
            m("HT@10"),
            m("HT@5"),
            m("NDCG@10"),
            m("NDCG@5")
        );
    }
    Ok(())
}
