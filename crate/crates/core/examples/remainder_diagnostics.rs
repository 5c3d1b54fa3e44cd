//! Checks how well the weighted mean action stands in for the neighbours'
//! actions on a briefly trained network: second-order remainders against a
//! sampled smoothness constant, cancellation of first-order terms, and the
//! collapse to plain mean-field as the smoothing grows.
//!
//!     cargo run --release --example remainder_diagnostics -- [episodes] [samples]

use cmfq::diagnostics::diagnose;
use cmfq::envs::EnvConfig;
use cmfq::training::{self_play_train, TrainerConfig};

fn main() -> cmfq::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(60);
    let samples: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(256);
    let env = EnvConfig {
        obs_radius: 4,
        max_steps: 100,
        initial_hp: 6.0,
        ..EnvConfig::battle(8)
    };
    let trained = self_play_train(
        &env,
        &TrainerConfig {
            episodes,
            batch_size: 64,
            lr: 1e-3,
            train_every: 4,
            hidden: vec![32, 32],
            ..TrainerConfig::default()
        },
    )?;
    let report = diagnose(&trained.checkpoint, &env, samples, 0.1, 0)?;
    for (name, r) in [("rollout", &report.remainder_trained), ("random", &report.remainder_random)] {
        let worst = r.max_remainder_per_sample.iter().cloned().fold(0.0, f64::max);
        println!(
            "{name:<8} samples {} evaluations {}  max |R| {:.4}  L {:.4}  violations {}  max |δ|² {:.3}",
            r.samples, r.evaluations, worst, r.lipschitz_estimate, r.violations, r.max_delta_sq
        );
    }
    println!("first-order cancellation  {:.2e}", report.cancellation_max);
    println!("deviation from mean-field at epsilon 1e9   {:.2e}", report.reduction_max_deviation);
    println!("deviation from mean-field at epsilon 1e-3  {:.2e}", report.reduction_deviation_small_epsilon);
    println!("passed: {}", report.passed);
    Ok(())
}
