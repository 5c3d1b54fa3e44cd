//! Predator-prey self-play with separate predator and prey networks, then
//! each algorithm's predators against the same prey at growing scales.
//!
//!     cargo run --release --example predator_prey -- [episodes] [games]

use cmfq::envs::EnvConfig;
use cmfq::eval::predator_prey_eval;
use cmfq::training::{self_play_train, Algorithm, TrainerConfig};

fn main() -> cmfq::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(80);
    let games: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);
    let env = EnvConfig {
        obs_radius: 4,
        max_steps: 100,
        ..EnvConfig::predator_prey(5)
    };
    let train = |algorithm| {
        self_play_train(
            &env,
            &TrainerConfig {
                algorithm,
                episodes,
                batch_size: 64,
                lr: 1e-3,
                train_every: 4,
                hidden: vec![32, 32],
                ..TrainerConfig::default()
            },
        )
    };
    let cmfq = train(Algorithm::Cmfq)?.checkpoint;
    let mfq = train(Algorithm::Mfq)?.checkpoint;
    for predators in [&cmfq, &mfq] {
        for row in predator_prey_eval(predators, &mfq, &env, &[1, 2], games, 3)? {
            println!(
                "{} predators vs {} prey at {}x ({} vs {}): predator reward {:.2}, prey reward {:.2}, zero-sum violations {}",
                row.predator_algorithm,
                row.prey_algorithm,
                row.scale,
                row.predators,
                row.prey,
                row.mean_predator_reward,
                row.mean_prey_reward,
                row.zero_sum_violations
            );
        }
    }
    Ok(())
}
