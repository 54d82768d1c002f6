//! Experiment configuration with the published hyperparameters as defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::EnvId;
use crate::intrinsic::ChannelKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "opac-cv")]
    OpacCv,
    #[serde(rename = "opac-mv")]
    OpacMv,
    #[serde(rename = "sac")]
    Sac,
}

impl AgentKind {
    pub fn default_channel(self) -> ChannelKey {
        match self {
            Self::OpacCv => ChannelKey::CvPosition,
            Self::OpacMv => ChannelKey::MvPosition,
            Self::Sac => ChannelKey::PolicyEntropy,
        }
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "opac-cv" => Ok(Self::OpacCv),
            "opac-mv" => Ok(Self::OpacMv),
            "sac" => Ok(Self::Sac),
            other => Err(Error::InvalidConfig { field: "agent", reason: format!("unknown agent `{other}`") }),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OpacCv => "opac-cv",
            Self::OpacMv => "opac-mv",
            Self::Sac => "sac",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub agent: AgentKind,
    pub seeds: Vec<u64>,
    pub iterations: usize,

    pub hidden: usize,
    pub layers: usize,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_visitation: f64,
    pub max_steps: usize,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub tau_critic: f64,
    pub tau_visitation: f64,
    pub gamma: f64,
    pub lambda_sac: f64,
    pub lambda: f64,
    pub horizon: usize,

    /// Exploration channel; the agent's own channel when absent.
    pub channel: Option<ChannelKey>,
    pub visitation_steps: usize,
    pub critic_steps: usize,
    pub episodes_per_iteration: usize,
    /// Subtract the soft state value from the actor's advantage.
    pub actor_baseline: bool,
    /// Multiplier on the environment reward (0 for pure exploration).
    pub env_reward_scale: f64,
    /// Additive smoothing of the marginal feature histogram.
    pub marginal_smoothing: f64,
    pub eval_every: usize,
    pub eval_rollouts: usize,
    pub bootstrap_resamples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "Empty-6x6".into(),
            agent: AgentKind::OpacCv,
            seeds: vec![0],
            iterations: 100,
            hidden: 256,
            layers: 2,
            lr_policy: 1e-5,
            lr_critic: 1e-4,
            lr_visitation: 1e-5,
            max_steps: 200,
            buffer_size: 1000,
            batch_size: 32,
            tau_critic: 0.1,
            tau_visitation: 1.0,
            gamma: 0.98,
            lambda_sac: 0.002,
            lambda: 0.01,
            horizon: 10,
            channel: None,
            visitation_steps: 8,
            critic_steps: 8,
            episodes_per_iteration: 1,
            actor_baseline: true,
            env_reward_scale: 1.0,
            marginal_smoothing: 1e-3,
            eval_every: 1,
            eval_rollouts: 10,
            bootstrap_resamples: 1000,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig { field, reason: reason.into() }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn channel(&self) -> ChannelKey {
        self.channel.unwrap_or(self.agent.default_channel())
    }

    /// Weight of the intrinsic reward actually used by the agent; soft
    /// actor-critic has only the entropy terms.
    pub fn intrinsic_weight(&self) -> f64 {
        match self.agent {
            AgentKind::Sac => 0.0,
            _ => self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.parse::<EnvId>().map_err(|e| invalid("env", e.to_string()))?;
        let positive = [
            ("lr_policy", self.lr_policy),
            ("lr_critic", self.lr_critic),
            ("lr_visitation", self.lr_visitation),
            ("marginal_smoothing", self.marginal_smoothing),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        for (field, v) in [("lambda", self.lambda), ("lambda_sac", self.lambda_sac), ("env_reward_scale", self.env_reward_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma", format!("must lie in [0, 1), got {}", self.gamma)));
        }
        for (field, v) in [("tau_critic", self.tau_critic), ("tau_visitation", self.tau_visitation)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(field, format!("must lie in (0, 1], got {v}")));
            }
        }
        let at_least_one = [
            ("iterations", self.iterations),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("buffer_size", self.buffer_size),
            ("batch_size", self.batch_size),
            ("horizon", self.horizon),
            ("critic_steps", self.critic_steps),
            ("episodes_per_iteration", self.episodes_per_iteration),
            ("eval_every", self.eval_every),
            ("eval_rollouts", self.eval_rollouts),
            ("bootstrap_resamples", self.bootstrap_resamples),
        ];
        for (field, v) in at_least_one {
            if v < 1 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        if self.max_steps < 2 {
            return Err(invalid("max_steps", "must be at least 2"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "need at least one seed"));
        }
        let mut unique = self.seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != self.seeds.len() {
            return Err(invalid("seeds", "seeds must be distinct"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_published_values() {
        let c = ExperimentConfig::default();
        assert_eq!((c.hidden, c.layers, c.max_steps, c.buffer_size, c.batch_size, c.horizon), (256, 2, 200, 1000, 32, 10));
        assert_eq!((c.lr_policy, c.lr_critic, c.lr_visitation), (1e-5, 1e-4, 1e-5));
        assert_eq!((c.tau_critic, c.tau_visitation, c.gamma, c.lambda_sac, c.lambda), (0.1, 1.0, 0.98, 0.002, 0.01));
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let c = ExperimentConfig { agent: AgentKind::Sac, seeds: vec![1, 2, 3], ..Default::default() };
        assert_eq!(ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let partial = ExperimentConfig::from_toml_str("env = \"FourRooms\"\nagent = \"opac-mv\"\nlambda = 0.05\n").unwrap();
        assert_eq!((partial.agent, partial.lambda, partial.hidden), (AgentKind::OpacMv, 0.05, 256));
        assert_eq!(partial.channel(), ChannelKey::MvPosition);
    }

    #[test]
    fn invalid_fields_are_named() {
        let err = ExperimentConfig::from_toml_str("gamma = 1.0").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { field: "gamma", .. }));
        let err = ExperimentConfig::from_toml_str("env = \"Lava\"").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { field: "env", .. }));
        let err = ExperimentConfig::from_toml_str("horizon = 0").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { field: "horizon", .. }));
        assert!(ExperimentConfig::from_toml_str("gama = 0.5").is_err());
        assert!(ExperimentConfig::from_toml_str("seeds = [1, 1]").is_err());
    }
}
