//! Self-play training on a small battle map, printing the reward curve and
//! saving the final checkpoint.
//!
//!     cargo run --release --example train_battle -- [algorithm] [episodes] [checkpoint.json]

use std::path::PathBuf;

use cmfq::envs::EnvConfig;
use cmfq::training::{Algorithm, Trainer, TrainerConfig};

fn main() -> cmfq::Result<()> {
    let mut args = std::env::args().skip(1);
    let algorithm: Algorithm = match args.next().as_deref() {
        Some(s) => serde_json::from_value(serde_json::Value::String(s.to_string()))?,
        None => Algorithm::Cmfq,
    };
    let episodes: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let out = args.next().map(PathBuf::from);

    let env = EnvConfig {
        obs_radius: 4,
        max_steps: 100,
        initial_hp: 6.0,
        ..EnvConfig::battle(8)
    };
    let cfg = TrainerConfig {
        algorithm,
        episodes,
        batch_size: 64,
        lr: 1e-3,
        train_every: 4,
        hidden: vec![32, 32],
        ..TrainerConfig::default()
    };
    let mut trainer = Trainer::new(&env, &cfg)?;
    let window = (episodes / 10).max(1);
    let mut reward = 0.0;
    let mut kills = 0;
    for ep in 1..=episodes {
        for row in trainer.run_episode()? {
            reward += row.total_reward;
            kills += row.kills_or_surrounds;
        }
        if ep % window == 0 {
            println!(
                "{algorithm} episodes {:>5}  mean reward {:>8.2}  mean kills {:>5.2}  explore {:.2}",
                ep,
                reward / window as f64,
                kills as f64 / window as f64,
                cfg.explore_at(ep)
            );
            reward = 0.0;
            kills = 0;
        }
    }
    if let Some(path) = out {
        trainer.checkpoint().save(&path)?;
        println!("checkpoint written to {}", path.display());
    }
    Ok(())
}
