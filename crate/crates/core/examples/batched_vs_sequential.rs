//! Rollout throughput of the weighted pipeline at 64 agents per side, with
//! and without batched counterfactual evaluation.
//!
//!     cargo run --release --example batched_vs_sequential -- [team_size] [steps]

use cmfq::causal::CausalParams;
use cmfq::envs::{EnvConfig, Role};
use cmfq::eval::{time_rollout, PipelinePath};
use cmfq::numerics::{Activation, QNetwork};
use cmfq::training::role_spec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cmfq::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(64);
    let steps: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(40);
    let env = EnvConfig {
        max_steps: steps,
        ..EnvConfig::battle(n)
    };
    let net = QNetwork::new(
        role_spec(&env, Role::Battle),
        &[64, 64],
        Activation::Relu,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let params = CausalParams::default();
    println!("{n} vs {n} on {}x{}, {steps} steps", env.width, env.height);
    let mut rates = Vec::new();
    for path in [PipelinePath::Batched, PipelinePath::Sequential] {
        let t = time_rollout(&env, &net, &params, path)?;
        println!(
            "{:<10} {:>8.1} steps/s  {:>6.2} forwards/decision  {:.2}s",
            format!("{path:?}"),
            t.steps_per_second(),
            t.forwards as f64 / t.decisions as f64,
            t.seconds
        );
        rates.push(t.steps_per_second());
    }
    println!("speedup {:.2}x", rates[0] / rates[1]);
    Ok(())
}
