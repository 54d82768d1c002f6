//! Actor, critic and the shared training loop behind soft actor-critic,
//! OPAC+CV and OPAC+MV.
//!
//! One iteration: collect episodes into the buffer, run the visitation
//! inner loop, run the critic inner loop, take one actor step, then update
//! the critic target (Polyak) and the visitation target.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AgentKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::eval::{mc_discounted_feature_entropy, mc_expected_return, MetricRow};
use crate::gridworld::{make_env, GridWorld};
use crate::intrinsic::{ChannelKey, FeatureChannel};
use crate::mdp::{sample_categorical, sample_trajectory, segments_from_trajectory, Environment, FactoredSpace, NStepSegment, Policy, ReplayBuffer};
use crate::nnet::{log_softmax, mse, save_checkpoint, load_checkpoint, score_function, softmax, Adam, Mlp, TargetPair};
use crate::visitation::{sample_geometric, FactoredVisitationNet};

/// Categorical policy `π_θ(a | s)` over one-hot encoded states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub net: Mlp,
    space: FactoredSpace,
    n_actions: usize,
    /// `λ_SAC`.
    pub entropy_weight: f64,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(space: FactoredSpace, n_actions: usize, hidden: usize, depth: usize, entropy_weight: f64, rng: &mut R) -> Self {
        let mut net = Mlp::with_hidden(space.one_hot_len(), hidden, depth, n_actions, rng);
        // zero output layer: training starts from the uniform policy
        let last = net.layers.last_mut().expect("at least one layer");
        last.w.fill(0.0);
        last.b.fill(0.0);
        Self { net, space, n_actions, entropy_weight }
    }

    pub fn inputs(&self, states: &[&[usize]]) -> Array2<f64> {
        let mut x = Array2::zeros((states.len(), self.space.one_hot_len()));
        for (row, s) in x.rows_mut().into_iter().zip(states) {
            self.space.write_one_hot(s, row.into_slice().expect("contiguous row"));
        }
        x
    }

    pub fn log_probs_batch(&self, states: &[&[usize]]) -> Vec<Vec<f64>> {
        if states.is_empty() {
            return Vec::new();
        }
        let logits = self.net.forward(self.inputs(states).view()).expect("input width is fixed");
        logits.rows().into_iter().map(|r| log_softmax(r).to_vec()).collect()
    }
}

impl Policy for Actor {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, state: &[usize]) -> Vec<f64> {
        self.action_probs_batch(&[state]).pop().expect("one state")
    }

    fn action_probs_batch(&self, states: &[&[usize]]) -> Vec<Vec<f64>> {
        if states.is_empty() {
            return Vec::new();
        }
        let logits = self.net.forward(self.inputs(states).view()).expect("input width is fixed");
        logits.rows().into_iter().map(|r| softmax(r).to_vec()).collect()
    }
}

/// State-action value network `Q_φ` with its target copy `φ'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub params: TargetPair,
    space: FactoredSpace,
    n_actions: usize,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(space: FactoredSpace, n_actions: usize, hidden: usize, depth: usize, tau: f64, rng: &mut R) -> Self {
        let net = Mlp::with_hidden(space.one_hot_len() + n_actions, hidden, depth, 1, rng);
        Self { params: TargetPair::new(net, tau), space, n_actions }
    }

    pub fn inputs(&self, queries: &[(&[usize], usize)]) -> Array2<f64> {
        let n = self.space.one_hot_len();
        let mut x = Array2::zeros((queries.len(), n + self.n_actions));
        for (row, (s, a)) in x.rows_mut().into_iter().zip(queries) {
            let row = row.into_slice().expect("contiguous row");
            self.space.write_one_hot(s, &mut row[..n]);
            row[n + a] = 1.0;
        }
        x
    }

    pub fn values(&self, target: bool, queries: &[(&[usize], usize)]) -> Vec<f64> {
        let net = if target { &self.params.target } else { &self.params.online };
        net.forward(self.inputs(queries).view()).expect("input width is fixed").into_raw_vec_and_offset().0
    }
}

/// Categorical model `m(z)` of the marginal discounted feature visitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalVisitationModel {
    probs: Vec<f64>,
}

impl MarginalVisitationModel {
    pub fn uniform(n_features: usize) -> Self {
        Self { probs: vec![1.0 / n_features as f64; n_features] }
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidTable("marginal model must be strictly positive and normalized".into()));
        }
        Ok(Self { probs })
    }

    /// Discounted histogram of segment-head features, each head weighted by
    /// `γ^t` for its in-episode time `t`, plus `smoothing` per feature.
    pub fn fit<'a, I>(segments: I, channel: &FeatureChannel, space: &FactoredSpace, gamma: f64, smoothing: f64) -> Self
    where
        I: IntoIterator<Item = &'a NStepSegment>,
    {
        let mut mass = vec![smoothing; channel.n_features()];
        for seg in segments {
            if let Some(z) = channel.feature_of_state(space, &seg.states[0]) {
                mass[z] += gamma.powi(seg.time_index as i32);
            }
        }
        let total: f64 = mass.iter().sum();
        Self { probs: mass.into_iter().map(|m| m / total).collect() }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_prob(&self, z: usize) -> f64 {
        self.probs[z].ln()
    }
}

/// Regression targets
/// `y = s_R r + extra + γ (1 - done)(Q_φ'(s', a') - λ_SAC log π(a'|s'))`
/// with `a' ~ π(·|s')`. `extra` carries the weighted intrinsic reward.
pub fn critic_targets<R: Rng + ?Sized>(
    critic: &Critic,
    actor: &Actor,
    batch: &[&NStepSegment],
    extra: &[f64],
    gamma: f64,
    reward_scale: f64,
    rng: &mut R,
) -> Vec<f64> {
    let next: Vec<&[usize]> = batch.iter().map(|s| s.next_state()).collect();
    let log_probs = actor.log_probs_batch(&next);
    let actions: Vec<usize> = log_probs
        .iter()
        .map(|lp| sample_categorical(&lp.iter().map(|v| v.exp()).collect::<Vec<_>>(), rng))
        .collect();
    let queries: Vec<(&[usize], usize)> = next.iter().copied().zip(actions.iter().copied()).collect();
    let q_next = critic.values(true, &queries);
    batch
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let bootstrap = if seg.head_is_terminal() {
                0.0
            } else {
                gamma * (q_next[i] - actor.entropy_weight * log_probs[i][actions[i]])
            };
            reward_scale * seg.reward + extra[i] + bootstrap
        })
        .collect()
}

/// Mean squared error of `Q_φ(s, a)` against constant targets, with its
/// gradient.
pub fn critic_loss(critic: &Critic, batch: &[&NStepSegment], targets: &[f64]) -> Result<(f64, Mlp)> {
    let queries: Vec<(&[usize], usize)> = batch.iter().map(|s| s.head()).collect();
    let (pred, cache) = critic.params.online.forward_cached(critic.inputs(&queries).view())?;
    let (loss, grad) = mse(&pred, targets);
    Ok((loss, critic.params.online.backward(&cache, &grad)))
}

/// Score-function actor loss `-mean log π(a'|s) A(s, a')` with
/// `A = Q_φ(s, a') - λ_SAC log π(a'|s)` held constant and `a' ~ π(·|s)`.
///
/// With `baseline` the soft state value `Σ_a π(a|s) A(s, a)` is subtracted
/// from `A`; the expected gradient is unchanged.
pub fn actor_loss<R: Rng + ?Sized>(
    actor: &Actor,
    critic: &Critic,
    states: &[&[usize]],
    baseline: bool,
    rng: &mut R,
) -> Result<(f64, Mlp)> {
    let (logits, cache) = actor.net.forward_cached(actor.inputs(states).view())?;
    let log_probs: Vec<Vec<f64>> = logits.rows().into_iter().map(|row| log_softmax(row).to_vec()).collect();
    let actions: Vec<usize> = log_probs
        .iter()
        .map(|lp| sample_categorical(&lp.iter().map(|v| v.exp()).collect::<Vec<_>>(), rng))
        .collect();
    let queries: Vec<(&[usize], usize)> = states.iter().copied().zip(actions.iter().copied()).collect();
    let q = critic.values(false, &queries);
    let mut advantages: Vec<f64> =
        q.iter().zip(&log_probs).zip(&actions).map(|((q, lp), &a)| q - actor.entropy_weight * lp[a]).collect();
    if baseline {
        let na = actor.n_actions;
        let all: Vec<(&[usize], usize)> = states.iter().flat_map(|&s| (0..na).map(move |a| (s, a))).collect();
        let q_all = critic.values(false, &all);
        for (i, lp) in log_probs.iter().enumerate() {
            let v: f64 = (0..na).map(|a| lp[a].exp() * (q_all[i * na + a] - actor.entropy_weight * lp[a])).sum();
            advantages[i] -= v;
        }
    }
    let (loss, grad) = score_function(&logits, &actions, &advantages);
    Ok((loss, actor.net.backward(&cache, &grad)))
}

/// Models the intrinsic reward can draw on.
#[derive(Clone, Copy)]
pub struct Learned<'a> {
    pub visitation: Option<&'a FactoredVisitationNet>,
    pub marginal: Option<&'a MarginalVisitationModel>,
    pub actor: &'a Actor,
}

/// `λ R^int(s_t, a_t)` for every batch element; zeros without drawing
/// randomness when the weight is 0 or the channel is disabled.
pub fn intrinsic_rewards<R: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    features: &FeatureChannel,
    space: &FactoredSpace,
    learned: Learned<'_>,
    batch: &[&NStepSegment],
    rng: &mut R,
) -> Vec<f64> {
    let weight = cfg.intrinsic_weight();
    if weight == 0.0 || cfg.channel() == ChannelKey::Disabled {
        return vec![0.0; batch.len()];
    }
    match cfg.channel() {
        ChannelKey::CvPosition => {
            let net = learned.visitation.expect("visitation model exists");
            let queries: Vec<(&[usize], usize)> = batch.iter().map(|s| s.head()).collect();
            features
                .sample_features(net, &queries, rng)
                .into_iter()
                .map(|(z, lq)| weight * features.intrinsic_reward(z, lq))
                .collect()
        }
        ChannelKey::MvPosition => {
            let m = learned.marginal.expect("marginal model exists");
            batch
                .iter()
                .map(|seg| {
                    let delta = sample_geometric(cfg.gamma, rng);
                    let future = &seg.states[delta.min(seg.last_valid())];
                    let z = features.feature_of_state(space, future).expect("visited states have features");
                    weight * (features.log_q_star(z) - m.log_prob(z))
                })
                .collect()
        }
        ChannelKey::PolicyEntropy => {
            let heads: Vec<&[usize]> = batch.iter().map(|s| s.head().0).collect();
            let uniform = -(learned.actor.n_actions as f64).ln();
            learned
                .actor
                .log_probs_batch(&heads)
                .iter()
                .map(|lp| {
                    let z = sample_categorical(&lp.iter().map(|v| v.exp()).collect::<Vec<_>>(), rng);
                    weight * (uniform - lp[z])
                })
                .collect()
        }
        ChannelKey::Disabled => unreachable!(),
    }
}

/// Independent random stream `k` of a run seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_ACTOR: u64 = 1;
const STREAM_CRITIC: u64 = 2;
const STREAM_VISITATION: u64 = 3;
const STREAM_ENV: u64 = 4;
const STREAM_TRAIN: u64 = 5;
const STREAM_EVAL_BASE: u64 = 1 << 32;

/// Mean losses of one iteration; zero for learners that did not run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IterationLosses {
    pub visitation: f64,
    pub critic: f64,
    pub actor: f64,
}

/// Everything a run needs to resume or be evaluated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedArtifacts {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub iteration: usize,
    pub actor: Actor,
    pub actor_opt: Adam,
    pub critic: Critic,
    pub critic_opt: Adam,
    pub visitation: Option<FactoredVisitationNet>,
    pub visitation_opt: Option<Adam>,
    pub marginal: Option<MarginalVisitationModel>,
    pub buffer: ReplayBuffer,
    pub rng_env: ChaCha8Rng,
    pub rng_train: ChaCha8Rng,
}

pub const ARTIFACTS_KIND: &str = "trained-artifacts";

impl TrainedArtifacts {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        save_checkpoint(path, ARTIFACTS_KIND, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        load_checkpoint(path, ARTIFACTS_KIND)
    }
}

/// Training state of one run on one environment.
pub struct Trainer<E: Environment> {
    pub env: E,
    /// Feature channel of the exploration objective and of the entropy
    /// metric.
    pub features: FeatureChannel,
    pub state: TrainedArtifacts,
}

impl<E: Environment> Trainer<E> {
    pub fn new(config: &ExperimentConfig, env: E, features: FeatureChannel, seed: u64) -> Result<Self> {
        config.validate()?;
        let space = env.space().clone();
        let na = env.n_actions();
        let (hidden, depth) = (config.hidden, config.layers);
        let actor = Actor::new(space.clone(), na, hidden, depth, config.lambda_sac, &mut rng_stream(seed, STREAM_ACTOR));
        let critic = Critic::new(space.clone(), na, hidden, depth, config.tau_critic, &mut rng_stream(seed, STREAM_CRITIC));
        let visitation = (config.channel() == ChannelKey::CvPosition && config.agent != AgentKind::Sac).then(|| {
            FactoredVisitationNet::new(space.clone(), na, hidden, depth, config.tau_visitation, &mut rng_stream(seed, STREAM_VISITATION))
        });
        let state = TrainedArtifacts {
            config: config.clone(),
            seed,
            iteration: 0,
            actor_opt: Adam::new(&actor.net, config.lr_policy),
            critic_opt: Adam::new(&critic.params.online, config.lr_critic),
            visitation_opt: visitation.as_ref().map(|v| Adam::new(&v.params.online, config.lr_visitation)),
            marginal: (config.channel() == ChannelKey::MvPosition).then(|| MarginalVisitationModel::uniform(features.n_features())),
            actor,
            critic,
            visitation,
            buffer: ReplayBuffer::new(config.buffer_size),
            rng_env: rng_stream(seed, STREAM_ENV),
            rng_train: rng_stream(seed, STREAM_TRAIN),
        };
        Ok(Self { env, features, state })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.state.config
    }

    fn collect(&mut self) {
        let cfg = &self.state.config;
        let mut episodes = 0;
        while episodes < cfg.episodes_per_iteration || self.state.buffer.len() < cfg.batch_size {
            let cached = crate::eval::CachedPolicy::new(&self.state.actor);
            let traj = sample_trajectory(&self.env, &cached, cfg.max_steps, &mut self.state.rng_env);
            self.state.buffer.extend(segments_from_trajectory(&self.env, &traj, cfg.horizon));
            episodes += 1;
        }
    }

    /// Runs one training iteration.
    pub fn iterate(&mut self) -> Result<IterationLosses> {
        self.collect();
        let mut losses = IterationLosses::default();
        let cfg = self.state.config.clone();

        if let Some(m) = self.state.marginal.as_mut() {
            *m = MarginalVisitationModel::fit(self.state.buffer.iter(), &self.features, self.env.space(), cfg.gamma, cfg.marginal_smoothing);
        }

        if let (Some(net), Some(opt)) = (self.state.visitation.as_mut(), self.state.visitation_opt.as_mut()) {
            let mut total = 0.0;
            for _ in 0..cfg.visitation_steps {
                let batch = self.state.buffer.sample(cfg.batch_size, &mut self.state.rng_train)?;
                total += net.train_step(opt, &batch, &self.state.actor, cfg.gamma, &mut self.state.rng_train)?;
            }
            losses.visitation = if cfg.visitation_steps > 0 { total / cfg.visitation_steps as f64 } else { 0.0 };
        }

        let mut total = 0.0;
        let s = &mut self.state;
        for _ in 0..cfg.critic_steps {
            let batch = s.buffer.sample(cfg.batch_size, &mut s.rng_train)?;
            let learned = Learned { visitation: s.visitation.as_ref(), marginal: s.marginal.as_ref(), actor: &s.actor };
            let extra = intrinsic_rewards(&cfg, &self.features, self.env.space(), learned, &batch, &mut s.rng_train);
            let y = critic_targets(&s.critic, &s.actor, &batch, &extra, cfg.gamma, cfg.env_reward_scale, &mut s.rng_train);
            let (loss, grads) = critic_loss(&s.critic, &batch, &y)?;
            s.critic_opt.step(&mut s.critic.params.online, &grads);
            total += loss;
        }
        losses.critic = total / cfg.critic_steps as f64;

        let batch = s.buffer.sample(cfg.batch_size, &mut s.rng_train)?;
        let states: Vec<&[usize]> = batch.iter().map(|seg| seg.head().0).collect();
        let (loss, grads) = actor_loss(&s.actor, &s.critic, &states, cfg.actor_baseline, &mut s.rng_train)?;
        s.actor_opt.step(&mut s.actor.net, &grads);
        losses.actor = loss;

        s.critic.params.update_target();
        if let Some(v) = s.visitation.as_mut() {
            v.update_target();
        }
        s.iteration += 1;
        Ok(losses)
    }

    /// Monte Carlo return and discounted feature entropy of the current
    /// policy, from a random stream private to this iteration.
    pub fn evaluate(&self) -> (f64, f64) {
        let cfg = &self.state.config;
        let mut rng = rng_stream(self.state.seed, STREAM_EVAL_BASE + self.state.iteration as u64);
        let actor = &self.state.actor;
        let ret = mc_expected_return(&self.env, actor, cfg.gamma, cfg.eval_rollouts, cfg.max_steps, &mut rng);
        let space = self.env.space();
        let entropy = mc_discounted_feature_entropy(
            &self.env,
            actor,
            |s| self.features.feature_of_state(space, &self.env.encode(s)),
            self.features.n_features(),
            cfg.gamma,
            cfg.eval_rollouts,
            cfg.max_steps,
            &mut rng,
        );
        (ret, entropy)
    }

    pub fn metric_row(&self, losses: IterationLosses) -> MetricRow {
        let (return_estimate, entropy_estimate) = self.evaluate();
        MetricRow {
            seed: self.state.seed,
            iteration: self.state.iteration,
            return_estimate,
            entropy_estimate,
            visitation_loss: losses.visitation,
            critic_loss: losses.critic,
            actor_loss: losses.actor,
        }
    }

    /// Trains for the configured number of iterations, recording a metric
    /// row every `eval_every` iterations and after the last one.
    pub fn train(&mut self) -> Result<Vec<MetricRow>> {
        let mut rows = Vec::new();
        let total = self.state.config.iterations;
        while self.state.iteration < total {
            let losses = self.iterate()?;
            let it = self.state.iteration;
            if it % self.state.config.eval_every == 0 || it == total {
                rows.push(self.metric_row(losses));
            }
        }
        Ok(rows)
    }
}

impl Trainer<GridWorld> {
    /// Builds the environment named in the config for this seed, with the
    /// position feature channel.
    pub fn for_grid(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let env = make_env(&config.env, seed)?;
        let features = FeatureChannel::position(&env, config.intrinsic_weight());
        Self::new(config, env, features, seed)
    }

    pub fn from_artifacts(state: TrainedArtifacts) -> Result<Self> {
        state.config.validate()?;
        let env = make_env(&state.config.env, state.seed)?;
        let features = FeatureChannel::position(&env, state.config.intrinsic_weight());
        Ok(Self { env, features, state })
    }
}

/// Trains one seed of a grid experiment with the agent named in the config.
pub fn train_agent(config: &ExperimentConfig, seed: u64) -> Result<(TrainedArtifacts, Vec<MetricRow>)> {
    let mut trainer = Trainer::for_grid(config, seed)?;
    let rows = trainer.train()?;
    Ok((trainer.state, rows))
}

pub fn train_opac_cv(config: &ExperimentConfig, seed: u64) -> Result<(TrainedArtifacts, Vec<MetricRow>)> {
    train_agent(&ExperimentConfig { agent: AgentKind::OpacCv, ..config.clone() }, seed)
}

pub fn train_opac_mv(config: &ExperimentConfig, seed: u64) -> Result<(TrainedArtifacts, Vec<MetricRow>)> {
    train_agent(&ExperimentConfig { agent: AgentKind::OpacMv, ..config.clone() }, seed)
}

pub fn train_sac(config: &ExperimentConfig, seed: u64) -> Result<(TrainedArtifacts, Vec<MetricRow>)> {
    train_agent(&ExperimentConfig { agent: AgentKind::Sac, ..config.clone() }, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{collect_segments, TabularMdp, UniformPolicy};
    use crate::oracle::{q_value_exact, TabularPolicy};

    fn small(agent: AgentKind) -> ExperimentConfig {
        ExperimentConfig {
            agent,
            hidden: 16,
            layers: 1,
            iterations: 3,
            max_steps: 30,
            batch_size: 8,
            buffer_size: 100,
            visitation_steps: 2,
            critic_steps: 2,
            eval_rollouts: 2,
            ..Default::default()
        }
    }

    #[test]
    fn runs_are_deterministic_per_seed() {
        for agent in [AgentKind::OpacCv, AgentKind::OpacMv, AgentKind::Sac] {
            let cfg = small(agent);
            let (_, a) = train_agent(&cfg, 4).unwrap();
            let (_, b) = train_agent(&cfg, 4).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 3);
            assert!(a.iter().all(MetricRow::is_finite));
            assert_eq!(a[0].visitation_loss == 0.0, agent != AgentKind::OpacCv);
        }
    }

    #[test]
    fn disabled_channel_with_zero_weight_is_sac() {
        let cv = ExperimentConfig { lambda: 0.0, channel: Some(ChannelKey::Disabled), ..small(AgentKind::OpacCv) };
        let (a, ra) = train_agent(&cv, 9).unwrap();
        let (b, rb) = train_agent(&small(AgentKind::Sac), 9).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.actor, b.actor);
    }

    #[test]
    fn constant_reward_without_discount_is_learned_exactly() {
        let mdp = TabularMdp::single_state(2, 0.7, 0.0).unwrap();
        let mut rng = rng_stream(1, 0);
        let segs = collect_segments(&mdp, &UniformPolicy { n_actions: 2 }, 20, 1, 30, &mut rng);
        let batch: Vec<&NStepSegment> = segs.iter().collect();
        let actor = Actor::new(FactoredSpace::flat(1), 2, 8, 1, 0.0, &mut rng);
        let mut critic = Critic::new(FactoredSpace::flat(1), 2, 8, 1, 0.1, &mut rng);
        let mut opt = Adam::new(&critic.params.online, 1e-2);
        for _ in 0..2000 {
            let y = critic_targets(&critic, &actor, &batch, &vec![0.0; batch.len()], 0.0, 1.0, &mut rng);
            assert!(y.iter().all(|&v| v == 0.7));
            let (_, g) = critic_loss(&critic, &batch, &y).unwrap();
            opt.step(&mut critic.params.online, &g);
        }
        let q = critic.values(false, &[(&[0], 0), (&[0], 1)]);
        assert!(q.iter().all(|v| (v - 0.7).abs() < 1e-3));
    }

    #[test]
    fn zero_reward_zero_critic_is_a_fixed_point() {
        let mdp = TabularMdp::single_state(2, 0.0, 0.9).unwrap();
        let mut rng = rng_stream(2, 0);
        let segs = collect_segments(&mdp, &UniformPolicy { n_actions: 2 }, 10, 1, 30, &mut rng);
        let batch: Vec<&NStepSegment> = segs.iter().collect();
        let actor = Actor::new(FactoredSpace::flat(1), 2, 8, 1, 0.0, &mut rng);
        let mut critic = Critic::new(FactoredSpace::flat(1), 2, 8, 1, 0.1, &mut rng);
        critic.params.online = critic.params.online.zeros_like();
        critic.params.target = critic.params.target.zeros_like();
        let y = critic_targets(&critic, &actor, &batch, &vec![0.0; batch.len()], 0.9, 1.0, &mut rng);
        let (loss, g) = critic_loss(&critic, &batch, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flat_params().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn critic_converges_to_exact_values() {
        let mut rng = rng_stream(3, 0);
        let mdp = TabularMdp::random(3, 2, 0.5, false, &mut rng);
        let space = FactoredSpace::flat(3);
        let actor = Actor::new(space.clone(), 2, 16, 1, 0.0, &mut rng);
        let probs: Vec<f64> = (0..3).flat_map(|s| actor.action_probs(&[s])).collect();
        let exact = q_value_exact(&mdp, &TabularPolicy::new(3, 2, probs).unwrap()).unwrap();
        let segs = collect_segments(&mdp, &UniformPolicy { n_actions: 2 }, 3000, 1, 200, &mut rng);
        let mut buffer = ReplayBuffer::new(3000);
        buffer.extend(segs);
        let mut critic = Critic::new(space, 2, 64, 2, 0.1, &mut rng);
        let mut opt = Adam::new(&critic.params.online, 1e-3);
        for _ in 0..6000 {
            let batch = buffer.sample(64, &mut rng).unwrap();
            let y = critic_targets(&critic, &actor, &batch, &vec![0.0; 64], 0.5, 1.0, &mut rng);
            let (_, g) = critic_loss(&critic, &batch, &y).unwrap();
            opt.step(&mut critic.params.online, &g);
            critic.params.update_target();
        }
        for s in 0..3 {
            for a in 0..2 {
                let q = critic.values(false, &[(&[s], a)])[0];
                assert!((q - exact[s * 2 + a]).abs() < 0.05, "Q({s},{a}) = {q} vs {}", exact[s * 2 + a]);
            }
        }
    }

    /// Critic whose values are `q[a]` for every state.
    fn fixed_critic(q: &[f64]) -> Critic {
        let mut rng = rng_stream(0, 0);
        let mut c = Critic::new(FactoredSpace::flat(1), q.len(), 4, 1, 1.0, &mut rng);
        let mut net = c.params.online.zeros_like();
        net.layers.truncate(1);
        net.layers[0].w = Array2::zeros((1 + q.len(), 1));
        for (a, &v) in q.iter().enumerate() {
            net.layers[0].w[(1 + a, 0)] = v;
        }
        net.layers[0].b = ndarray::Array1::zeros(1);
        c.params = TargetPair::new(net, 1.0);
        c
    }

    #[test]
    fn bandit_actor_becomes_greedy() {
        let critic = fixed_critic(&[1.0, 0.0]);
        let mut rng = rng_stream(5, 0);
        let mut actor = Actor::new(FactoredSpace::flat(1), 2, 8, 1, 0.0, &mut rng);
        let mut opt = Adam::new(&actor.net, 1e-2);
        let states: Vec<&[usize]> = vec![&[0]; 32];
        for _ in 0..500 {
            let (_, g) = actor_loss(&actor, &critic, &states, false, &mut rng).unwrap();
            opt.step(&mut actor.net, &g);
        }
        assert!(actor.action_probs(&[0])[0] > 0.95);
    }

    #[test]
    fn bandit_actor_matches_soft_optimum() {
        // maximizer of E_π[Q] + λ H(π) is softmax(Q / λ)
        let lambda = 0.5;
        let critic = fixed_critic(&[1.0, 0.0]);
        let mut rng = rng_stream(6, 0);
        let mut actor = Actor::new(FactoredSpace::flat(1), 2, 8, 1, lambda, &mut rng);
        let mut opt = Adam::new(&actor.net, 3e-3);
        let states: Vec<&[usize]> = vec![&[0]; 64];
        for _ in 0..3000 {
            let (_, g) = actor_loss(&actor, &critic, &states, false, &mut rng).unwrap();
            opt.step(&mut actor.net, &g);
        }
        let optimum = 1.0 / (1.0 + (-1.0f64 / lambda).exp());
        assert!((actor.action_probs(&[0])[0] - optimum).abs() < 0.03);
    }

    #[test]
    fn zero_values_push_toward_uniform() {
        let critic = fixed_critic(&[0.0, 0.0, 0.0]);
        let mut rng = rng_stream(7, 0);
        let mut actor = Actor::new(FactoredSpace::flat(1), 3, 8, 1, 0.1, &mut rng);
        let last = actor.net.layers.last_mut().unwrap();
        last.b[0] += 2.0;
        let before = actor.action_probs(&[0]);
        let mut opt = Adam::new(&actor.net, 1e-2);
        let states: Vec<&[usize]> = vec![&[0]; 64];
        for _ in 0..300 {
            let (_, g) = actor_loss(&actor, &critic, &states, false, &mut rng).unwrap();
            opt.step(&mut actor.net, &g);
        }
        let after = actor.action_probs(&[0]);
        let ent = |p: &[f64]| -p.iter().map(|v| v * v.ln()).sum::<f64>();
        assert!(ent(&after) > ent(&before) && ent(&after) > (3.0f64).ln() - 0.01);
    }

    #[test]
    fn marginal_model_rewards() {
        let world = make_env("Empty-6x6", 0).unwrap();
        let ch = FeatureChannel::position(&world, 1.0);
        let m = MarginalVisitationModel::uniform(ch.n_features());
        assert!((0..ch.n_features()).all(|z| (ch.log_q_star(z) - m.log_prob(z)).abs() < 1e-12));
        let mut probs = vec![1e-3; 16];
        probs[5] = 1.0 - 15e-3;
        let peaked = MarginalVisitationModel::from_probs(probs).unwrap();
        let rewards: Vec<f64> = (0..16).map(|z| ch.log_q_star(z) - peaked.log_prob(z)).collect();
        let min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(rewards[5], min);
    }

    #[test]
    fn artifacts_roundtrip_and_resume() {
        let cfg = small(AgentKind::OpacCv);
        let mut t = Trainer::for_grid(&cfg, 2).unwrap();
        t.iterate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        t.state.save(&path).unwrap();
        let mut resumed = Trainer::from_artifacts(TrainedArtifacts::load(&path).unwrap()).unwrap();
        let a = t.iterate().unwrap();
        let b = resumed.iterate().unwrap();
        assert_eq!(a, b);
        assert_eq!(t.state.actor, resumed.state.actor);
    }
}
