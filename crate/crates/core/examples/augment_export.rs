//! Edits every core training sequence with a briefly co-trained policy and
//! writes the surviving sequences as an interaction TSV on stdout.
//!
//! cargo run --example augment_export -- [seed] > augmented.tsv

use l2aug::augmentor::write_augmented_tsv;
use l2aug::config::resolve;
use l2aug::pipeline;
use l2aug::trainer::augment_core;

fn main() -> l2aug::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = resolve(
        r#"{"preset": "desk"}"#,
        &[
            format!("seed={seed}"),
            "trainer.max_iterations=100".into(),
            "trainer.convergence.enabled=false".into(),
        ],
    )?;
    let ds = pipeline::prepare_dataset(&config, &pipeline::load_events(&config)?)?;
    let (model, adam, _) = pipeline::pretrain_model(&config, &ds)?;
    let (_, outcome) = pipeline::cotrain(&config, &ds, model, adam)?;

    let table = pipeline::substitution_table(&config, &ds);
    let edits = augment_core(&ds, &outcome.state.policy, table.as_ref(), seed)?;
    let kept: usize = edits.iter().filter_map(|t| t.result.sequence()).map(<[usize]>::len).sum();
    let original: usize = edits.iter().map(|t| t.actions.len()).sum();
    eprintln!("{} core sequences, {kept} of {original} events kept", edits.len());
    write_augmented_tsv(std::io::stdout().lock(), &ds, &edits)
}
