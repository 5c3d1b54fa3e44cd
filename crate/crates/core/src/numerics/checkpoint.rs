//! Versioned JSON snapshot of one learner: online network, target copy,
//! Adam moments and step counters.
//!
//! Parameters are written with the shortest decimal that parses back to the
//! same `f32`, so a save/load round trip is bit-exact.

use serde::{Deserialize, Serialize};

use super::adam::OptimizerState;
use super::network::{QNetwork, TargetNetwork};
use crate::error::{Error, Result};

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub schema_version: u32,
    pub network: QNetwork,
    pub target: TargetNetwork,
    pub optimizer: OptimizerState,
    /// Gradient updates applied so far.
    pub updates: u64,
}

impl NetworkCheckpoint {
    pub fn new(network: QNetwork, target: TargetNetwork, optimizer: OptimizerState, updates: u64) -> Self {
        Self {
            schema_version: NETWORK_SCHEMA_VERSION,
            network,
            target,
            optimizer,
            updates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != NETWORK_SCHEMA_VERSION {
            return Err(Error::Schema {
                what: "network checkpoint",
                found: self.schema_version,
                expected: NETWORK_SCHEMA_VERSION,
            });
        }
        if self.network.spec() != self.target.network().spec()
            || self.network.hidden_widths() != self.target.network().hidden_widths()
            || !self.optimizer.matches(&self.network)
        {
            return Err(Error::Incompatible(
                "network, target and optimizer shapes disagree".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        ck.validate()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::adam::{optimizer_step, AdamConfig};
    use crate::numerics::matrix::DenseMatrix;
    use crate::numerics::network::{Activation, InputSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trained(seed: u64) -> NetworkCheckpoint {
        let spec = InputSpec {
            obs_len: 5,
            merged_len: 3,
            n_actions: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = QNetwork::new(spec, &[7, 6], Activation::Relu, &mut rng).unwrap();
        let target = TargetNetwork::new(&net);
        let mut opt = OptimizerState::new(&net, AdamConfig::default());
        let inputs = DenseMatrix::from_fn(4, 8, |r, c| ((r * 3 + c * 5 + seed as usize) % 11) as f32 / 11.0);
        let (g, _) = net.backward(&inputs, &[0, 1, 2, 0], &[1.0, -1.0, 0.5, 0.25]).unwrap();
        optimizer_step(&mut net, &mut opt, &g).unwrap();
        NetworkCheckpoint::new(net, target, opt, 1)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn json_round_trip_is_bit_exact(seed in 0u64..10_000) {
            let ck = trained(seed);
            let back = NetworkCheckpoint::from_json(&ck.to_json().unwrap()).unwrap();
            prop_assert!(back.network.same_params(&ck.network));
            prop_assert!(back.target.network().same_params(ck.target.network()));
            prop_assert_eq!(back, ck);
        }
    }

    #[test]
    fn rejects_wrong_schema_version() {
        let mut ck = trained(1);
        ck.schema_version = 99;
        let s = serde_json::to_string(&ck).unwrap();
        assert!(matches!(NetworkCheckpoint::from_json(&s), Err(Error::Schema { found: 99, .. })));
    }

    #[test]
    fn rejects_corrupted_blob() {
        let s = trained(2).to_json().unwrap();
        assert!(NetworkCheckpoint::from_json(&s[..s.len() / 2]).is_err());
    }
}
