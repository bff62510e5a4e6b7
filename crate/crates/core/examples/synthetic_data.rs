//! Generates the synthetic interaction fixture, classifies users into core
//! and casual, and prints what the split looks like.
//!
//! cargo run --example synthetic_data -- [seed]

use l2aug::data::{prepare, InteractionDataset, SplitConfig, UserGroup};
use l2aug::synthetic::{generate_synthetic, SyntheticSpec};

fn main() -> l2aug::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = SyntheticSpec { seed, ..SyntheticSpec::default() };
    let data = generate_synthetic(&spec)?;
    println!("generated {} events for {} users", data.events.len(), data.intended.len());
    for e in data.events.iter().take(3) {
        println!("  {}\t{}\t{}", e.user_id, e.item_id, e.timestamp);
    }

    let ds = prepare(InteractionDataset::from_events(&data.events), &SplitConfig::default())?;
    for group in [UserGroup::Core, UserGroup::Casual] {
        let users = ds.users_in(group);
        let lengths: Vec<usize> = users.iter().map(|&u| ds.train_sequence(u).len()).collect();
        let mean = lengths.iter().sum::<usize>() as f64 / lengths.len().max(1) as f64;
        println!(
            "{:>6}: {} users, mean training length {mean:.1}",
            group.as_str(),
            users.len()
        );
    }
    let user = ds.users_in(UserGroup::Casual)[0];
    println!("casual user {} trains on {:?}", ds.user_id(user), ds.train_sequence(user));
    Ok(())
}
