//! The weighted mean-field step on a hand-made neighbourhood: each
//! neighbour's action is swapped in as a counterfactual, the shift in the
//! focal agent's policy is scored by KL divergence, and the scores become
//! weights over the neighbours.
//!
//!     cargo run --example counterfactual_weights

use cmfq::causal::{cmfq_policy, mean_field_policy, CausalParams, FnQ};
use cmfq::numerics::InputSpec;

fn main() -> cmfq::Result<()> {
    // Three own actions over a three-way action simplex. Neighbours playing
    // action 2 push the focal agent hard towards its own action 2.
    let spec = InputSpec {
        obs_len: 1,
        merged_len: 3,
        n_actions: 3,
    };
    let q = FnQ::new(spec, |_: &[f32], m: &[f64]| vec![m[0], 0.2 * m[1], 6.0 * m[2]]);
    let ids = [10, 11, 12, 13];
    let actions = [0, 0, 1, 2];

    let (mean, _, mfq_policy) = mean_field_policy(&q, &[0.0], &actions, 1.0)?;
    println!("mean action        {:.3?}", mean.as_slice());
    println!("mean-field policy  {:.3?}", mfq_policy.as_slice());

    for epsilon in [0.001, 0.1, 1e9] {
        let params = CausalParams {
            epsilon,
            ..CausalParams::default()
        };
        let out = cmfq_policy(&q, &[0.0], &ids, &actions, &params)?;
        println!("\nepsilon = {epsilon}");
        for (k, id) in ids.iter().enumerate() {
            println!(
                "  neighbour {id} action {}  effect {:.4}  weight {:.3}",
                actions[k], out.weights.treatment_effects[k], out.weights.weights[k]
            );
        }
        println!("  merged action    {:.3?}", out.merged.as_slice());
        println!("  policy           {:.3?}  ({} forward passes)", out.policy.as_slice(), out.forwards);
    }
    Ok(())
}
