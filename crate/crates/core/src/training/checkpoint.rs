use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Algorithm;
use crate::causal::CausalParams;
use crate::envs::{obs_len, ActionSet, EnvConfig, EnvKind, Role};
use crate::error::{Error, Result};
use crate::numerics::{InputSpec, NetworkCheckpoint, QNetwork};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// A trained policy set: one network per role plus the settings needed to
/// run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub code_version: String,
    pub algorithm: Algorithm,
    pub params: CausalParams,
    pub env_kind: EnvKind,
    pub episodes_trained: usize,
    pub roles: BTreeMap<Role, NetworkCheckpoint>,
}

impl Checkpoint {
    pub fn network(&self, role: Role) -> Result<&QNetwork> {
        self.roles
            .get(&role)
            .map(|c| &c.network)
            .ok_or_else(|| Error::Incompatible(format!("checkpoint has no {} network", role.as_str())))
    }

    /// Checks that the network for `role` accepts `env`'s observations and
    /// action set.
    pub fn check_role(&self, role: Role, env: &EnvConfig) -> Result<()> {
        let net = self.network(role)?;
        let actions = ActionSet::new(env.attack_range);
        let want = InputSpec {
            obs_len: obs_len(env, role),
            merged_len: actions.len(),
            n_actions: actions.n_actions(role),
        };
        if net.spec() != want {
            return Err(Error::Incompatible(format!(
                "{} network expects {:?} but the environment provides {:?}",
                role.as_str(),
                net.spec(),
                want
            )));
        }
        Ok(())
    }

    pub fn check_compatible(&self, env: &EnvConfig) -> Result<()> {
        if self.env_kind != env.kind {
            return Err(Error::Incompatible(format!(
                "checkpoint trained on {:?}, environment is {:?}",
                self.env_kind, env.kind
            )));
        }
        for &role in env.kind.roles() {
            self.check_role(role, env)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Schema {
                what: "checkpoint",
                found: self.schema_version,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        if self.roles.is_empty() {
            return Err(Error::Incompatible("checkpoint holds no networks".into()));
        }
        for ck in self.roles.values() {
            ck.validate()?;
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

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            source: e,
        })?;
        ck.validate()?;
        Ok(ck)
    }
}
