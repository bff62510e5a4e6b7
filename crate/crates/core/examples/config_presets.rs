//! Resolves configuration presets and overrides, prints the effective
//! config and its hash, and shows how an unknown key is reported.
//!
//! cargo run --example config_presets

use l2aug::config::{resolve, PRESETS};

fn main() -> l2aug::Result<()> {
    for name in PRESETS {
        let config = resolve(&format!(r#"{{"preset": "{name}"}}"#), &[])?;
        println!(
            "{name}: dim {}, fit batch {}, trainer batch {}, hash {}",
            config.model.dim,
            config.fit.batch_size,
            config.trainer.batch_size,
            &config.hash()[..12]
        );
    }

    let tuned = resolve(
        r#"{"preset": "desk", "trainer": {"policy_lr": 0.0005}}"#,
        &["trainer.reward.source=simulator".into(), "seed=7".into()],
    )?;
    println!("effective config:\n{}", tuned.echo());

    match resolve(r#"{"trainer": {"polcy_lr": 1}}"#, &[]) {
        Err(e) => println!("rejected as expected: {e}"),
        Ok(_) => println!("unexpectedly accepted"),
    }
    Ok(())
}
