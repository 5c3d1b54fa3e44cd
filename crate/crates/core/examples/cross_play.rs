//! Trains a weighted and a plain mean-field learner with the same budget and
//! plays them against each other from both sides of every map.
//!
//!     cargo run --release --example cross_play -- [episodes] [games]

use cmfq::envs::EnvConfig;
use cmfq::eval::cross_play;
use cmfq::training::{self_play_train, Algorithm, TrainerConfig};

fn main() -> cmfq::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(150);
    let games: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let env = EnvConfig {
        obs_radius: 4,
        max_steps: 100,
        initial_hp: 6.0,
        ..EnvConfig::battle(8)
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
    for (a, b) in [(&cmfq, &mfq), (&mfq, &mfq)] {
        let r = cross_play(a, b, &env, games, 7)?;
        println!(
            "{} vs {}: {} wins, {} losses, {} draws, win rate {}",
            r.algorithm_a,
            r.algorithm_b,
            r.wins,
            r.losses,
            r.draws,
            r.win_rate()
                .map(|w| format!("{w:.3} ± {:.3}", r.win_rate_stderr().unwrap_or(0.0)))
                .unwrap_or_else(|| "undefined".into())
        );
    }
    Ok(())
}
