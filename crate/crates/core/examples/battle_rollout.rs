//! One greedy battle between two untrained networks, printed as ASCII maps.
//!
//!     cargo run --release --example battle_rollout -- [team_size] [every_nth_frame]

use cmfq::causal::CausalParams;
use cmfq::envs::{EnvConfig, Frame, GridWorld, Role};
use cmfq::eval::{play_game, GameObserver};
use cmfq::numerics::{Activation, QNetwork};
use cmfq::training::{role_spec, Algorithm, Controller};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Printer {
    every: usize,
}

impl GameObserver for Printer {
    fn on_frame(&mut self, world: &GridWorld) -> cmfq::Result<()> {
        if world.step_count().is_multiple_of(self.every) || world.is_over() {
            println!("{}", Frame::capture(world).render_ascii());
        }
        Ok(())
    }
}

fn main() -> cmfq::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(6);
    let every: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(25);
    let env = EnvConfig {
        max_steps: 100,
        ..EnvConfig::battle(n)
    };
    let mut init = ChaCha8Rng::seed_from_u64(1);
    let spec = role_spec(&env, Role::Battle);
    let a = QNetwork::new(spec, &[32, 32], Activation::Relu, &mut init)?;
    let b = QNetwork::new(spec, &[32, 32], Activation::Relu, &mut init)?;
    let params = CausalParams::default();
    let ctrl = |algorithm, net| Controller { algorithm, params, net };
    let result = play_game(
        &env,
        [ctrl(Algorithm::Cmfq, &a), ctrl(Algorithm::Mfq, &b)],
        &mut ChaCha8Rng::seed_from_u64(2),
        &mut Printer { every: every.max(1) },
    )?;
    println!(
        "{} steps, survivors A {} / B {}, team rewards {:.2} / {:.2}",
        result.steps, result.survivors[0], result.survivors[1], result.total_reward[0], result.total_reward[1]
    );
    Ok(())
}
