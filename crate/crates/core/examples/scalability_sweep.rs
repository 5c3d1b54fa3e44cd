//! Trains at one team size and evaluates against a fixed opponent at larger
//! ones, reporting how fast the win rate falls with population.
//!
//!     cargo run --release --example scalability_sweep -- [episodes] [games]

use cmfq::envs::EnvConfig;
use cmfq::eval::{scalability_sweep, win_rate_slope};
use cmfq::training::{self_play_train, Algorithm, TrainerConfig};

fn main() -> cmfq::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let games: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(40);
    let env = EnvConfig {
        obs_radius: 4,
        max_steps: 100,
        initial_hp: 6.0,
        ..EnvConfig::battle(8)
    };
    let train = |algorithm, seed| {
        self_play_train(
            &env,
            &TrainerConfig {
                algorithm,
                episodes,
                seed,
                batch_size: 64,
                lr: 1e-3,
                train_every: 4,
                hidden: vec![32, 32],
                ..TrainerConfig::default()
            },
        )
        .map(|o| o.checkpoint)
    };
    let cmfq = train(Algorithm::Cmfq, 0)?;
    let mfq = train(Algorithm::Mfq, 0)?;
    let opponent = train(Algorithm::Mfq, 1)?;
    let scales = [8, 16, 24];
    let rows = scalability_sweep(&[&cmfq, &mfq], &opponent, &env, &scales, games, 11)?;
    for chunk in rows.chunks(scales.len()) {
        for r in chunk {
            println!(
                "{:>5} at {:>2} per side: win rate {}",
                r.algorithm_a,
                r.scale,
                r.win_rate().map(|w| format!("{w:.3}")).unwrap_or_else(|| "-".into())
            );
        }
        println!("      slope {:?}", win_rate_slope(chunk));
    }
    Ok(())
}
