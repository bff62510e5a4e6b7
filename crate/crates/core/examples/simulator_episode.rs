//! Plays a few online episodes between a pretrained recommender and the
//! memory-based user simulator.
//!
//! cargo run --example simulator_episode -- [seed]

use l2aug::config::resolve;
use l2aug::data::UserGroup;
use l2aug::pipeline;
use l2aug::simulator::online_episode;

fn main() -> l2aug::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = resolve(r#"{"preset": "desk"}"#, &[format!("seed={seed}"), "fit.epochs=3".into()])?;
    let ds = pipeline::prepare_dataset(&config, &pipeline::load_events(&config)?)?;
    let (model, _, _) = pipeline::pretrain_model(&config, &ds)?;
    let mut env = pipeline::simulator_env(&config, &ds)?;

    for group in [UserGroup::Core, UserGroup::Casual] {
        let user = ds.users_in(group)[0];
        let episode = online_episode(&mut env, &model, user, 3, 5)?;
        println!("{} user {}:", group.as_str(), ds.user_id(user));
        for step in &episode.steps {
            let ratings: Vec<String> = step.ratings.iter().map(|r| format!("{r:.2}")).collect();
            println!("  step {}: ratings [{}], reward {:.3}", step.step, ratings.join(" "), step.reward);
        }
        println!("  memory now {:?}", env.user(user)?.memory);
    }
    Ok(())
}
