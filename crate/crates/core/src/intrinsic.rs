//! Feature channels `(h, q*)` and the single-sample intrinsic reward
//! `R^int(s, a) = log q*(z) - log q^π(z | s, a)`.
//!
//! Features are deterministic functions of the future state, so the future
//! action `ā ~ π(·|s̄)` never changes `z` and is not sampled.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::GridWorld;
use crate::mdp::{sample_categorical, Environment, FactoredSpace, TabularMdp};
use crate::oracle::{exact_visitation, TabularPolicy};
use crate::visitation::{HeadProbs, VisitationSource};

/// Config key selecting the exploration objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKey {
    #[serde(rename = "cv-position")]
    CvPosition,
    #[serde(rename = "mv-position")]
    MvPosition,
    #[serde(rename = "policy-entropy")]
    PolicyEntropy,
    #[serde(rename = "disabled")]
    Disabled,
}

impl FromStr for ChannelKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cv-position" => Ok(Self::CvPosition),
            "mv-position" => Ok(Self::MvPosition),
            "policy-entropy" => Ok(Self::PolicyEntropy),
            "disabled" => Ok(Self::Disabled),
            other => Err(Error::InvalidConfig { field: "channel", reason: format!("unknown channel `{other}`") }),
        }
    }
}

impl fmt::Display for ChannelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CvPosition => "cv-position",
            Self::MvPosition => "mv-position",
            Self::PolicyEntropy => "policy-entropy",
            Self::Disabled => "disabled",
        })
    }
}

/// The feature map `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureMap {
    /// Joint value of some state blocks, restricted to the combinations
    /// marked valid. `index[raw]` is the feature of raw joint value `raw`.
    Blocks { blocks: Vec<usize>, sizes: Vec<usize>, index: Vec<Option<usize>> },
    /// Arbitrary map from the joint state index.
    Lookup { table: Vec<usize> },
    /// The action itself: `q^π(z | s, a) = π(z | s)`.
    Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureChannel {
    map: FeatureMap,
    log_q_star: Vec<f64>,
    /// Reward weight `λ`.
    pub weight: f64,
}

impl FeatureChannel {
    pub fn new(map: FeatureMap, q_star: Vec<f64>, weight: f64) -> Result<Self> {
        let sum: f64 = q_star.iter().sum();
        if q_star.iter().any(|&p| !(p > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidTable("relative measure must be strictly positive and sum to 1".into()));
        }
        let n = q_star.len();
        let consistent = match &map {
            FeatureMap::Blocks { index, .. } => index.iter().flatten().all(|&z| z < n) && index.iter().flatten().count() == n,
            FeatureMap::Lookup { table } => table.iter().all(|&z| z < n),
            FeatureMap::Action => true,
        };
        if !consistent {
            return Err(Error::InvalidTable("feature map does not cover the relative measure".into()));
        }
        Ok(Self { map, log_q_star: q_star.iter().map(|p| p.ln()).collect(), weight })
    }

    /// Agent position `(x, y)` on the non-wall cells of the grid, with `q*`
    /// uniform over them.
    pub fn position(world: &GridWorld, weight: f64) -> Self {
        let (w, h) = world.interior();
        let mut index = vec![None; w * h];
        for (z, &(x, y)) in world.floor_cells().iter().enumerate() {
            index[(x - 1) * h + (y - 1)] = Some(z);
        }
        let n = world.floor_cells().len();
        Self::new(FeatureMap::Blocks { blocks: vec![0, 1], sizes: vec![w, h], index }, vec![1.0 / n as f64; n], weight)
            .expect("floor cells are consistent")
    }

    /// Actions with `q*` uniform, the soft actor-critic entropy bonus.
    pub fn policy_entropy(n_actions: usize, weight: f64) -> Self {
        Self::new(FeatureMap::Action, vec![1.0 / n_actions as f64; n_actions], weight).expect("uniform measure")
    }

    /// Deterministic map of a tabular state, with an explicit `q*`.
    pub fn lookup(table: Vec<usize>, q_star: Vec<f64>, weight: f64) -> Result<Self> {
        Self::new(FeatureMap::Lookup { table }, q_star, weight)
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn n_features(&self) -> usize {
        self.log_q_star.len()
    }

    pub fn log_q_star(&self, z: usize) -> f64 {
        self.log_q_star[z]
    }

    pub fn q_star(&self) -> Vec<f64> {
        self.log_q_star.iter().map(|l| l.exp()).collect()
    }

    /// `z = h(s)` for state-based maps; `None` for invalid block
    /// combinations and for the action map.
    pub fn feature_of_state(&self, space: &FactoredSpace, state: &[usize]) -> Option<usize> {
        match &self.map {
            FeatureMap::Blocks { blocks, sizes, index } => index[raw_index(blocks, sizes, state)],
            FeatureMap::Lookup { table } => Some(table[space.joint_index(state)]),
            FeatureMap::Action => None,
        }
    }

    /// `q^π(· | s, a)` over `Z` from the factored future-state heads.
    ///
    /// Block maps multiply the head probabilities of the selected
    /// components and renormalize over valid combinations. Lookup maps
    /// marginalize the full factored distribution over each preimage.
    pub fn feature_distribution(&self, space: &FactoredSpace, heads: &HeadProbs) -> Vec<f64> {
        let mut q = vec![0.0; self.n_features()];
        match &self.map {
            FeatureMap::Blocks { blocks, sizes, index } => {
                for (raw, z) in index.iter().enumerate() {
                    if let Some(z) = z {
                        let mut rest = raw;
                        let mut p = 1.0;
                        for (k, &b) in blocks.iter().enumerate().rev() {
                            p *= heads[b][rest % sizes[k]];
                            rest /= sizes[k];
                        }
                        q[*z] = p;
                    }
                }
                let total: f64 = q.iter().sum();
                if total > 0.0 {
                    q.iter_mut().for_each(|v| *v /= total);
                } else {
                    let n = q.len() as f64;
                    q.fill(1.0 / n);
                }
            }
            FeatureMap::Lookup { table } => {
                for (j, &z) in table.iter().enumerate() {
                    let comps = space.from_joint_index(j);
                    q[z] += comps.iter().zip(heads).map(|(&c, p)| p[c]).product::<f64>();
                }
            }
            FeatureMap::Action => panic!("the action map takes its distribution from the policy"),
        }
        q
    }

    /// `z ~ q^π(·|s,a)` with `log q^π(z|s,a)` in closed form, batched over
    /// queries.
    pub fn sample_features<V: VisitationSource + ?Sized, R: Rng + ?Sized>(
        &self,
        source: &V,
        queries: &[(&[usize], usize)],
        rng: &mut R,
    ) -> Vec<(usize, f64)> {
        source
            .head_probs_batch(queries)
            .iter()
            .map(|heads| {
                let q = self.feature_distribution(source.state_space(), heads);
                let z = sample_categorical(&q, rng);
                (z, q[z].ln())
            })
            .collect()
    }

    pub fn sample_feature<V: VisitationSource + ?Sized, R: Rng + ?Sized>(
        &self,
        source: &V,
        state: &[usize],
        action: usize,
        rng: &mut R,
    ) -> (usize, f64) {
        self.sample_features(source, &[(state, action)], rng).pop().expect("one query")
    }

    /// `log q*(z) - log q^π(z|s,a)`.
    pub fn intrinsic_reward(&self, z: usize, log_q: f64) -> f64 {
        self.log_q_star[z] - log_q
    }

    /// `-KL(q^π(·|s,a) ‖ q*)` over `Z`.
    pub fn negative_kl(&self, q: &[f64]) -> f64 {
        -q.iter()
            .zip(&self.log_q_star)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, lq)| p * (p.ln() - lq))
            .sum::<f64>()
    }
}

fn raw_index(blocks: &[usize], sizes: &[usize], state: &[usize]) -> usize {
    blocks.iter().zip(sizes).fold(0, |acc, (&b, &n)| acc * n + state[b])
}

/// Exact expected intrinsic reward `-KL(q^π(·|s,a) ‖ q*)` per `(s, a)` from
/// the tabular visitation distribution.
pub fn exact_kl_reward(channel: &FeatureChannel, mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let d = exact_visitation(mdp, policy)?;
    let space = mdp.space();
    let mut out = Vec::with_capacity(mdp.n_states() * mdp.n_actions());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let q = match channel.map() {
                FeatureMap::Action => policy.row(s).to_vec(),
                _ => channel.feature_distribution(space, &vec![d.slice(s, a).to_vec()]),
            };
            out.push(channel.negative_kl(&q));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::make_env;
    use crate::visitation::ExactVisitation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixed(FactoredSpace, HeadProbs);

    impl VisitationSource for Fixed {
        fn state_space(&self) -> &FactoredSpace {
            &self.0
        }

        fn head_probs_batch(&self, queries: &[(&[usize], usize)]) -> Vec<HeadProbs> {
            vec![self.1.clone(); queries.len()]
        }
    }

    #[test]
    fn point_mass_visitation_gives_zero_log_q() {
        let world = make_env("Empty-6x6", 0).unwrap();
        let channel = FeatureChannel::position(&world, 0.01);
        let mut heads = vec![vec![0.0; 4], vec![0.0; 4], vec![0.25; 4]];
        heads[0][2] = 1.0;
        heads[1][1] = 1.0;
        let src = Fixed(world.space().clone(), heads);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (z, log_q) = channel.sample_feature(&src, &[0, 0, 0], 0, &mut rng);
        assert_eq!(channel.feature_of_state(world.space(), &[2, 1, 3]), Some(z));
        assert_eq!(log_q, 0.0);
        assert!((channel.intrinsic_reward(z, log_q) + (16.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_heads_match_uniform_target() {
        let world = make_env("Empty-6x6", 0).unwrap();
        let channel = FeatureChannel::position(&world, 0.01);
        let src = Fixed(world.space().clone(), vec![vec![0.25; 4], vec![0.25; 4], vec![0.25; 4]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (z, log_q) = channel.sample_feature(&src, &[0, 0, 0], 1, &mut rng);
            assert!((log_q + (16.0f64).ln()).abs() < 1e-12);
            assert!(channel.intrinsic_reward(z, log_q).abs() < 1e-12);
        }
    }

    #[test]
    fn walls_are_excluded_and_renormalized() {
        let world = make_env("SimpleCrossingS9N1", 3).unwrap();
        let channel = FeatureChannel::position(&world, 0.01);
        assert_eq!(channel.n_features(), world.floor_cells().len());
        assert!(channel.n_features() < 49);
        let uniform: HeadProbs = world.space().blocks().iter().map(|&n| vec![1.0 / n as f64; n]).collect();
        let q = channel.feature_distribution(world.space(), &uniform);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(channel.negative_kl(&q).abs() < 1e-12);
    }

    #[test]
    fn sampler_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let space = FactoredSpace::new(vec![3, 2]);
        let heads = vec![vec![0.2, 0.5, 0.3], vec![0.9, 0.1]];
        let channel = FeatureChannel::lookup(vec![0, 1, 1, 2, 0, 2], vec![0.2, 0.3, 0.5], 1.0).unwrap();
        let q = channel.feature_distribution(&space, &heads);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let src = Fixed(space, heads);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[channel.sample_feature(&src, &[0, 0], 0, &mut rng).0] += 1;
        }
        let tv: f64 = 0.5 * counts.iter().zip(&q).map(|(&c, p)| (c as f64 / n as f64 - p).abs()).sum::<f64>();
        assert!(tv < 0.02);
    }

    #[test]
    fn exact_kl_is_nonpositive_and_zero_when_matched() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = TabularMdp::random(5, 2, 0.9, false, &mut rng);
        let pi = TabularPolicy::random(5, 2, false, &mut rng);
        let channel = FeatureChannel::lookup(vec![0, 1, 2, 1, 0], vec![0.5, 0.3, 0.2], 1.0).unwrap();
        assert!(exact_kl_reward(&channel, &mdp, &pi).unwrap().iter().all(|&r| r <= 1e-15));

        // single state: q^π is a point mass equal to q*
        let single = TabularMdp::single_state(3, 0.0, 0.9).unwrap();
        let one = FeatureChannel::lookup(vec![0], vec![1.0], 1.0).unwrap();
        let r = exact_kl_reward(&one, &single, &TabularPolicy::uniform(1, 3)).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn policy_channel_is_the_entropy_bonus() {
        let channel = FeatureChannel::policy_entropy(4, 1.0);
        let mdp = TabularMdp::single_state(4, 0.0, 0.5).unwrap();
        let pi = TabularPolicy::new(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let r = exact_kl_reward(&channel, &mdp, &pi).unwrap();
        let entropy: f64 = -pi.row(0).iter().map(|p| p * p.ln()).sum::<f64>();
        assert!((r[0] - (entropy - (4.0f64).ln())).abs() < 1e-12);
        assert!((channel.intrinsic_reward(2, (0.3f64).ln()) - ((0.25f64).ln() - (0.3f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_reward_is_unbiased_on_a_small_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMdp::random(4, 2, 0.8, false, &mut rng);
        let pi = TabularPolicy::random(4, 2, false, &mut rng);
        let channel = FeatureChannel::lookup(vec![0, 1, 1, 0], vec![0.6, 0.4], 1.0).unwrap();
        let exact = exact_kl_reward(&channel, &mdp, &pi).unwrap();
        let src = ExactVisitation::new(exact_visitation(&mdp, &pi).unwrap());
        let n = 20_000;
        let mean: f64 = (0..n)
            .map(|_| {
                let (z, lq) = channel.sample_feature(&src, &[2], 1, &mut rng);
                channel.intrinsic_reward(z, lq)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - exact[2 * 2 + 1]).abs() < 0.02);
    }

    #[test]
    fn channel_keys_roundtrip() {
        for key in ["cv-position", "mv-position", "policy-entropy", "disabled"] {
            assert_eq!(key.parse::<ChannelKey>().unwrap().to_string(), key);
        }
        assert!("entropy".parse::<ChannelKey>().is_err());
        assert!(FeatureChannel::lookup(vec![0], vec![0.0, 1.0], 1.0).is_err());
    }
}
