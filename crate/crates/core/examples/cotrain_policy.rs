//! Co-trains the editing policy with a pretrained recommender. The policy
//! is rewarded by the recommender's accuracy change on meta users, and the
//! recommender keeps training on the edited core sequences.
//!
//! cargo run --example cotrain_policy -- [seed] [iterations]

use l2aug::config::resolve;
use l2aug::evaluator::{evaluate, EvalSplit};
use l2aug::pipeline;

fn main() -> l2aug::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let config = resolve(
        r#"{"preset": "desk", "trainer": {"convergence": {"enabled": false}}}"#,
        &[
            format!("seed={seed}"),
            format!("synthetic.seed={seed}"),
            format!("trainer.max_iterations={iterations}"),
        ],
    )?;
    let ds = pipeline::prepare_dataset(&config, &pipeline::load_events(&config)?)?;
    let (model, adam, _) = pipeline::pretrain_model(&config, &ds)?;
    let before = evaluate(&model, &ds, EvalSplit::Test, &config.eval)?;

    let (meta, outcome) = pipeline::cotrain(&config, &ds, model, adam)?;
    let after = evaluate(&outcome.state.model, &ds, EvalSplit::Test, &config.eval)?;
    let rewarded = outcome.trace.iter().filter(|r| r.r != 0.0).count();
    println!(
        "{} meta users, {} trace records, {rewarded} with nonzero reward, {} skipped, {} replays",
        meta.len(),
        outcome.trace.len(),
        outcome.skipped.len(),
        outcome.replays
    );
    for group in ["casual", "core"] {
        let (b, a) = (before.metric(group, "HT@5"), after.metric(group, "HT@5"));
        println!("{group:>6} HT@5 {:.4} -> {:.4}", b.unwrap_or(f64::NAN), a.unwrap_or(f64::NAN));
    }
    Ok(())
}
