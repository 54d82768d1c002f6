//! MDP abstractions shared by every other module: factored discrete state
//! encodings, the environment and policy traits, the explicit
//! [`TabularMdp`], trajectory sampling and the N-step replay buffer.

use std::collections::VecDeque;
use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-9;

/// Layout of a factored discrete state: one categorical component per block.
///
/// A state is a vector of component indices, one per block. Its network
/// input is the concatenation of the one-hot encodings of the components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactoredSpace {
    blocks: Vec<usize>,
}

impl FactoredSpace {
    pub fn new(blocks: Vec<usize>) -> Self {
        assert!(
            !blocks.is_empty() && blocks.iter().all(|&b| b > 0),
            "every block needs at least one category"
        );
        Self { blocks }
    }

    /// A single categorical block of `n` values, used for tabular MDPs.
    pub fn flat(n: usize) -> Self {
        Self::new(vec![n])
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Length of the concatenated one-hot encoding.
    pub fn one_hot_len(&self) -> usize {
        self.blocks.iter().sum()
    }

    /// Offset of each block inside the one-hot encoding.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.blocks
            .iter()
            .map(|&b| {
                let o = acc;
                acc += b;
                o
            })
            .collect()
    }

    /// Number of joint configurations (product of block sizes).
    pub fn n_joint(&self) -> usize {
        self.blocks.iter().product()
    }

    pub fn contains(&self, state: &[usize]) -> bool {
        state.len() == self.blocks.len() && state.iter().zip(&self.blocks).all(|(&c, &b)| c < b)
    }

    /// Writes the one-hot encoding of `state` into `out` (which must be zeroed).
    pub fn write_one_hot(&self, state: &[usize], out: &mut [f64]) {
        debug_assert!(self.contains(state));
        let mut offset = 0;
        for (&c, &b) in state.iter().zip(&self.blocks) {
            out[offset + c] = 1.0;
            offset += b;
        }
    }

    pub fn one_hot(&self, state: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.one_hot_len()];
        self.write_one_hot(state, &mut v);
        v
    }

    /// Inverse of [`FactoredSpace::one_hot`]; `None` if a block is not one-hot.
    pub fn decode_one_hot(&self, v: &[f64]) -> Option<Vec<usize>> {
        if v.len() != self.one_hot_len() {
            return None;
        }
        let mut offset = 0;
        let mut state = Vec::with_capacity(self.blocks.len());
        for &b in &self.blocks {
            let block = &v[offset..offset + b];
            let ones: Vec<usize> = (0..b).filter(|&i| block[i] == 1.0).collect();
            if ones.len() != 1 || block.iter().any(|&x| x != 0.0 && x != 1.0) {
                return None;
            }
            state.push(ones[0]);
            offset += b;
        }
        Some(state)
    }

    /// Mixed-radix index of a state (first block most significant).
    pub fn joint_index(&self, state: &[usize]) -> usize {
        state
            .iter()
            .zip(&self.blocks)
            .fold(0, |acc, (&c, &b)| acc * b + c)
    }

    pub fn from_joint_index(&self, mut index: usize) -> Vec<usize> {
        let mut state = vec![0; self.blocks.len()];
        for (slot, &b) in state.iter_mut().zip(&self.blocks).rev() {
            *slot = index % b;
            index /= b;
        }
        state
    }
}

/// A (possibly stochastic) policy over discrete actions, queried with the
/// factored encoding of a state.
pub trait Policy {
    fn n_actions(&self) -> usize;

    fn action_probs(&self, state: &[usize]) -> Vec<f64>;

    fn action_probs_batch(&self, states: &[&[usize]]) -> Vec<Vec<f64>> {
        states.iter().map(|s| self.action_probs(s)).collect()
    }

    fn sample_action<R: Rng + ?Sized>(&self, state: &[usize], rng: &mut R) -> usize
    where
        Self: Sized,
    {
        sample_categorical(&self.action_probs(state), rng)
    }
}

/// Uniform random policy, also used to seed the replay buffer.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl Policy for UniformPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, _state: &[usize]) -> Vec<f64> {
        vec![1.0 / self.n_actions as f64; self.n_actions]
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last class with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub next: S,
    pub reward: f64,
    /// The next state is absorbing: every later state equals it and yields
    /// no reward, so rollouts stop there.
    pub absorbed: bool,
}

/// A discrete environment with a factored state encoding.
pub trait Environment {
    type State: Clone + PartialEq + Debug;

    fn n_actions(&self) -> usize;

    fn space(&self) -> &FactoredSpace;

    fn encode(&self, state: &Self::State) -> Vec<usize>;

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    fn step<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        action: usize,
        rng: &mut R,
    ) -> StepOutcome<Self::State>;
}

impl<E: Environment + ?Sized> Environment for &E {
    type State = E::State;

    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }
    fn space(&self) -> &FactoredSpace {
        (**self).space()
    }
    fn encode(&self, state: &Self::State) -> Vec<usize> {
        (**self).encode(state)
    }
    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State {
        (**self).reset(rng)
    }
    fn step<R: Rng + ?Sized>(&self, state: &Self::State, action: usize, rng: &mut R) -> StepOutcome<Self::State> {
        (**self).step(state, action, rng)
    }
}

/// Finite MDP given by explicit tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Row-major `(s, a, s')`.
    transition: Vec<f64>,
    /// Row-major `(s, a)`.
    reward: Vec<f64>,
    initial: Vec<f64>,
    gamma: f64,
    space: FactoredSpace,
}

fn check_distribution(row: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidMdp(format!("{} is not a distribution (sum {sum})", what())));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action space".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidMdp(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::InvalidMdp("reward table has wrong size".into()));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("rewards must be finite".into()));
        }
        if initial.len() != n_states {
            return Err(Error::InvalidMdp("initial distribution has wrong size".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside [0, 1)")));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row, || format!("transition row (s={}, a={})", i / n_actions, i % n_actions))?;
        }
        check_distribution(&initial, || "initial distribution".into())?;
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            initial,
            gamma,
            space: FactoredSpace::flat(n_states),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }
    /// `p(· | s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.next_dist(s, a)[next]
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside [0, 1)")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_initial(self, initial: Vec<f64>) -> Result<Self> {
        Self::new(self.n_states, self.n_actions, self.transition, self.reward, initial, self.gamma)
    }

    pub fn with_rewards(self, reward: Vec<f64>) -> Result<Self> {
        Self::new(self.n_states, self.n_actions, self.transition, reward, self.initial, self.gamma)
    }

    /// One state, `n_actions` self-loops, constant reward.
    pub fn single_state(n_actions: usize, reward: f64, gamma: f64) -> Result<Self> {
        Self::new(1, n_actions, vec![1.0; n_actions], vec![reward; n_actions], vec![1.0], gamma)
    }

    /// Two states swapping deterministically under every action, starting in 0.
    pub fn two_cycle(n_actions: usize, gamma: f64) -> Result<Self> {
        let mut transition = vec![0.0; 2 * n_actions * 2];
        for a in 0..n_actions {
            transition[(a) * 2 + 1] = 1.0;
            transition[(n_actions + a) * 2] = 1.0;
        }
        Self::new(2, n_actions, transition, vec![0.0; 2 * n_actions], vec![1.0, 0.0], gamma)
    }

    /// Random MDP with flat-Dirichlet rows and rewards in `[0, 1)`. Without
    /// `strictly_positive`, rows are sparsified at random.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        strictly_positive: bool,
        rng: &mut R,
    ) -> Self {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transition.extend(random_simplex(n_states, strictly_positive, rng));
        }
        let reward = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        let initial = random_simplex(n_states, true, rng);
        Self::new(n_states, n_actions, transition, reward, initial, gamma)
            .expect("random MDP is valid by construction")
    }
}

/// Random point on the probability simplex. With `strictly_positive = false`
/// roughly half the entries are zeroed (at least one survives).
pub fn random_simplex<R: Rng + ?Sized>(n: usize, strictly_positive: bool, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    if !strictly_positive {
        let keep = rng.random_range(0..n);
        for (i, x) in v.iter_mut().enumerate() {
            if i != keep && rng.random_bool(0.5) {
                *x = 0.0;
            }
        }
    }
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    v
}

impl Environment for TabularMdp {
    type State = usize;

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn space(&self) -> &FactoredSpace {
        &self.space
    }

    fn encode(&self, state: &usize) -> Vec<usize> {
        vec![*state]
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial, rng)
    }

    fn step<R: Rng + ?Sized>(&self, state: &usize, action: usize, rng: &mut R) -> StepOutcome<usize> {
        StepOutcome {
            next: sample_categorical(self.next_dist(*state, action), rng),
            reward: self.reward(*state, action),
            absorbed: false,
        }
    }
}

/// One rollout. When cut by the step cap, `states` and `actions` have equal
/// length (the final next state is not recorded); when the episode ended by
/// absorption, `states` holds one more entry than `actions`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub states: Vec<S>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub absorbed: bool,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

pub fn sample_trajectory<E, P, R>(env: &E, policy: &P, max_steps: usize, rng: &mut R) -> Trajectory<E::State>
where
    E: Environment,
    P: Policy,
    R: Rng + ?Sized,
{
    assert!(max_steps >= 1, "max_steps must be positive");
    let mut state = env.reset(rng);
    let mut traj = Trajectory {
        states: Vec::with_capacity(max_steps + 1),
        actions: Vec::with_capacity(max_steps),
        rewards: Vec::with_capacity(max_steps),
        absorbed: false,
    };
    for _ in 0..max_steps {
        let action = sample_categorical(&policy.action_probs(&env.encode(&state)), rng);
        let outcome = env.step(&state, action, rng);
        traj.states.push(state);
        traj.actions.push(action);
        traj.rewards.push(outcome.reward);
        state = outcome.next;
        if outcome.absorbed {
            traj.states.push(state);
            traj.absorbed = true;
            break;
        }
    }
    traj
}

/// `Σ_t γ^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&gamma));
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

/// Window of `horizon + 1` encoded states starting at a segment head.
///
/// When the episode ended inside the window, `truncated_at = Some(k)` marks
/// `states[k]` as the last in-episode state, and `states[k+1..]` repeat it.
/// `absorbed` records whether that end was an absorbing state (whose future
/// is known exactly) or the trajectory step cap (whose future is unknown).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NStepSegment {
    pub states: Vec<Vec<usize>>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub horizon: usize,
    pub truncated_at: Option<usize>,
    pub absorbed: bool,
    /// Time step of the head inside its episode.
    pub time_index: usize,
}

impl NStepSegment {
    pub fn head(&self) -> (&[usize], usize) {
        (&self.states[0], self.actions[0])
    }

    pub fn next_state(&self) -> &[usize] {
        &self.states[1]
    }

    /// Index of the last in-episode state of the window.
    pub fn last_valid(&self) -> usize {
        self.truncated_at.unwrap_or(self.horizon)
    }

    /// The head transition leads straight into an absorbing state.
    pub fn head_is_terminal(&self) -> bool {
        self.absorbed && self.truncated_at == Some(1)
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.horizon >= 1
            && self.states.len() == self.horizon + 1
            && self.actions.len() == self.horizon
            && self.truncated_at.is_none_or(|k| (1..=self.horizon).contains(&k))
            && (!self.absorbed || self.truncated_at.is_some());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidMdp(format!("malformed segment: {self:?}")))
        }
    }
}

/// Sliding windows of length `horizon`, one per recorded transition.
pub fn segments_from_trajectory<E: Environment>(
    env: &E,
    traj: &Trajectory<E::State>,
    horizon: usize,
) -> Vec<NStepSegment> {
    assert!(horizon >= 1, "horizon must be positive");
    let encoded: Vec<Vec<usize>> = traj.states.iter().map(|s| env.encode(s)).collect();
    let last = encoded.len() - 1;
    // transitions with a recorded next state
    let n_heads = if traj.absorbed { traj.actions.len() } else { traj.actions.len().saturating_sub(1) };
    (0..n_heads)
        .map(|t| {
            let available = last - t;
            let ends_inside = available < horizon || (traj.absorbed && available == horizon);
            let valid = available.min(horizon);
            let states = (0..=horizon).map(|i| encoded[t + i.min(valid)].clone()).collect();
            let actions = (0..horizon)
                .map(|i| traj.actions.get(t + i).copied().filter(|_| i < valid).unwrap_or(0))
                .collect();
            NStepSegment {
                states,
                actions,
                reward: traj.rewards[t],
                horizon,
                truncated_at: ends_inside.then_some(valid),
                absorbed: ends_inside && traj.absorbed,
                time_index: t,
            }
        })
        .collect()
}

/// Samples fresh trajectories until `n_segments` windows are available.
pub fn collect_segments<E, P, R>(
    env: &E,
    policy: &P,
    n_segments: usize,
    horizon: usize,
    max_steps: usize,
    rng: &mut R,
) -> Vec<NStepSegment>
where
    E: Environment,
    P: Policy,
    R: Rng + ?Sized,
{
    let mut out = Vec::with_capacity(n_segments);
    while out.len() < n_segments {
        let traj = sample_trajectory(env, policy, max_steps.max(2), rng);
        out.extend(segments_from_trajectory(env, &traj, horizon));
    }
    out.truncate(n_segments);
    out
}

/// FIFO buffer of N-step segments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    segments: VecDeque<NStepSegment>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            segments: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, segment: NStepSegment) {
        if self.segments.len() == self.capacity {
            self.segments.pop_front();
        }
        self.segments.push_back(segment);
    }

    pub fn extend<I: IntoIterator<Item = NStepSegment>>(&mut self, segments: I) {
        for s in segments {
            self.push(s);
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &NStepSegment> {
        self.segments.iter()
    }

    /// Uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&NStepSegment>> {
        if self.segments.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch)
            .map(|_| &self.segments[rng.random_range(0..self.segments.len())])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_state_trajectory_is_capped() {
        let mdp = TabularMdp::single_state(1, 0.0, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = sample_trajectory(&mdp, &UniformPolicy { n_actions: 1 }, 3, &mut rng);
        assert_eq!(traj.states, vec![0, 0, 0]);
        assert_eq!(traj.actions.len(), 3);
        assert!(!traj.absorbed);
    }

    #[test]
    fn two_cycle_alternates() {
        let mdp = TabularMdp::two_cycle(1, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traj = sample_trajectory(&mdp, &UniformPolicy { n_actions: 1 }, 6, &mut rng);
        assert_eq!(traj.states, vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.0), 1.0);
        assert_eq!(discounted_return(&[0.0, 0.0, 1.0], 0.5), 0.25);
        let closed = (1.0 - 0.98f64.powi(200)) / 0.02;
        assert!((discounted_return(&[1.0; 200], 0.98) - closed).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(TabularMdp::new(1, 1, vec![0.9], vec![0.0], vec![1.0], 0.5).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], 1.0).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![0.5], 0.5).is_err());
    }

    fn capped_trajectory(n_states: usize) -> Trajectory<usize> {
        Trajectory {
            states: (0..n_states).collect(),
            actions: vec![0; n_states],
            rewards: vec![0.0; n_states],
            absorbed: false,
        }
    }

    #[test]
    fn windows_over_length_twelve() {
        let env = TabularMdp::single_state(1, 0.0, 0.5).unwrap();
        let segs = segments_from_trajectory(&env, &capped_trajectory(12), 10);
        assert_eq!(segs.len(), 11);
        assert_eq!(segs.iter().filter(|s| s.truncated_at.is_none()).count(), 2);
        for (t, s) in segs.iter().enumerate().skip(2) {
            assert_eq!(s.truncated_at, Some(11 - t));
            assert!(!s.absorbed);
            s.check().unwrap();
            // padding repeats the last valid state
            assert!(s.states[s.last_valid()..].iter().all(|x| x == &vec![11]));
        }
    }

    #[test]
    fn horizon_one_is_plain_transitions() {
        let env = TabularMdp::single_state(1, 0.0, 0.5).unwrap();
        let segs = segments_from_trajectory(&env, &capped_trajectory(5), 1);
        assert_eq!(segs.len(), 4);
        for (t, s) in segs.iter().enumerate() {
            assert_eq!(s.states, vec![vec![t], vec![t + 1]]);
            assert_eq!(s.truncated_at, None);
        }
    }

    #[test]
    fn short_trajectory_truncates_every_window() {
        let env = TabularMdp::single_state(1, 0.0, 0.5).unwrap();
        let traj = Trajectory {
            states: vec![0, 1, 2, 3],
            actions: vec![0; 3],
            rewards: vec![0.0, 0.0, 1.0],
            absorbed: true,
        };
        let segs = segments_from_trajectory(&env, &traj, 10);
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.truncated_at.is_some() && s.absorbed));
        assert!(segs[2].head_is_terminal());
        assert_eq!(segs[2].reward, 1.0);
    }

    #[test]
    fn buffer_sampling() {
        let env = TabularMdp::single_state(1, 0.0, 0.5).unwrap();
        let segs = segments_from_trajectory(&env, &capped_trajectory(3), 1);
        let mut buf = ReplayBuffer::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(buf.sample(1, &mut rng), Err(Error::EmptyBuffer)));
        buf.push(segs[0].clone());
        let drawn = buf.sample(4, &mut rng).unwrap();
        assert_eq!(drawn.len(), 4);
        assert!(drawn.iter().all(|s| **s == segs[0]));
    }

    #[test]
    fn buffer_is_fifo() {
        let env = TabularMdp::single_state(1, 0.0, 0.5).unwrap();
        let segs = segments_from_trajectory(&env, &capped_trajectory(12), 1);
        let mut buf = ReplayBuffer::new(5);
        buf.extend(segs.iter().cloned());
        assert_eq!(buf.len(), 5);
        let kept: Vec<_> = buf.iter().map(|s| s.time_index).collect();
        assert_eq!(kept, vec![6, 7, 8, 9, 10]);
    }

    #[test]
    fn buffer_sample_is_uniform() {
        let env = TabularMdp::single_state(1, 0.0, 0.5).unwrap();
        let mut buf = ReplayBuffer::new(10);
        buf.extend(segments_from_trajectory(&env, &capped_trajectory(11), 1));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for s in buf.sample(draws, &mut rng).unwrap() {
            counts[s.time_index] += 1;
        }
        let p = 0.1;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn empirical_transitions_match_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = TabularMdp::random(6, 3, 0.9, false, &mut rng);
        let n = 100_000;
        let mut counts = vec![0usize; 6];
        for _ in 0..n {
            counts[mdp.step(&2, 1, &mut rng).next] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(mdp.next_dist(2, 1))
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "tv {tv}");
    }

    #[test]
    fn factored_space_roundtrip() {
        let space = FactoredSpace::new(vec![3, 4, 2]);
        for j in 0..space.n_joint() {
            let s = space.from_joint_index(j);
            assert_eq!(space.joint_index(&s), j);
            assert_eq!(space.decode_one_hot(&space.one_hot(&s)), Some(s));
        }
    }

    proptest::proptest! {
        #[test]
        fn return_is_linear(rewards in proptest::collection::vec(-5.0f64..5.0, 0..50),
                            alpha in -3.0f64..3.0, gamma in 0.0f64..0.999) {
            let scaled: Vec<f64> = rewards.iter().map(|r| alpha * r).collect();
            let lhs = discounted_return(&scaled, gamma);
            let rhs = alpha * discounted_return(&rewards, gamma);
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }
    }
}
