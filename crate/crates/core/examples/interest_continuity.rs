//! Measures how smoothly consecutive items follow each other for core and
//! casual users, using co-occurrence item embeddings.
//!
//! cargo run --example interest_continuity -- [seed]

use l2aug::config::resolve;
use l2aug::evaluator::{cooccurrence_embeddings, interest_continuity};
use l2aug::pipeline;

fn main() -> l2aug::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = resolve(r#"{"preset": "desk"}"#, &[format!("synthetic.seed={seed}")])?;
    let ds = pipeline::prepare_dataset(&config, &pipeline::load_events(&config)?)?;
    let report = interest_continuity(&ds, &cooccurrence_embeddings(&ds), &[])?;
    for (group, g) in &report.groups {
        let deciles: Vec<String> = g.deciles.0.iter().map(|d| format!("{d:.3}")).collect();
        println!("{group:>6}: {} users, mean {:.4}, deciles [{}]", g.n_users, g.mean, deciles.join(" "));
    }
    println!("skipped pairs: {}", report.skipped_pairs);
    Ok(())
}
