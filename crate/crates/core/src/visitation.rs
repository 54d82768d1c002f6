//! Parametric conditional visitation model `d_ψ(s̄ | s, a)`: one categorical
//! head per state component, trained off-policy by cross-entropy against
//! geometric-mixture targets, with a target copy `ψ'` for bootstrapping.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sample_categorical, FactoredSpace, NStepSegment, Policy};
use crate::nnet::{factored_nll, softmax, split_heads, Adam, Mlp, TargetPair};
use crate::oracle::ConditionalVisitation;

/// Per-head probabilities for one `(s, a)` query.
pub type HeadProbs = Vec<Vec<f64>>;

/// Anything that can report the factored future-state distribution.
pub trait VisitationSource {
    fn state_space(&self) -> &FactoredSpace;

    fn head_probs_batch(&self, queries: &[(&[usize], usize)]) -> Vec<HeadProbs>;

    fn head_probs(&self, state: &[usize], action: usize) -> HeadProbs {
        self.head_probs_batch(&[(state, action)]).pop().expect("one query")
    }
}

/// `Δ ~ Geom(1 - γ)` on `{1, 2, ...}`.
pub fn sample_geometric<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> usize {
    assert!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1)");
    if gamma == 0.0 {
        return 1;
    }
    let failures = Geometric::new(1.0 - gamma).expect("valid parameter").sample(rng);
    failures as usize + 1
}

/// A training target for the head `(s_t, a_t)` of a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapTargetSample {
    pub state: Vec<usize>,
    pub action: usize,
    pub delta: usize,
    pub target: Vec<usize>,
    /// Drawn from the target network rather than read from the segment.
    pub bootstrapped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Params {
    Online,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredVisitationNet {
    space: FactoredSpace,
    n_actions: usize,
    pub params: TargetPair,
}

impl FactoredVisitationNet {
    pub fn new<R: Rng + ?Sized>(
        space: FactoredSpace,
        n_actions: usize,
        hidden: usize,
        depth: usize,
        tau: f64,
        rng: &mut R,
    ) -> Self {
        let net = Mlp::with_hidden(space.one_hot_len() + n_actions, hidden, depth, space.one_hot_len(), rng);
        Self { space, n_actions, params: TargetPair::new(net, tau) }
    }

    pub fn space(&self) -> &FactoredSpace {
        &self.space
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn net(&self, which: Params) -> &Mlp {
        match which {
            Params::Online => &self.params.online,
            Params::Target => &self.params.target,
        }
    }

    /// Rows of `concat(one_hot(s), one_hot(a))`.
    pub fn inputs(&self, queries: &[(&[usize], usize)]) -> Array2<f64> {
        let width = self.space.one_hot_len() + self.n_actions;
        let mut x = Array2::zeros((queries.len(), width));
        for (row, (s, a)) in x.rows_mut().into_iter().zip(queries) {
            let row = row.into_slice().expect("contiguous row");
            self.space.write_one_hot(s, &mut row[..self.space.one_hot_len()]);
            row[self.space.one_hot_len() + a] = 1.0;
        }
        x
    }

    pub fn head_probs_with(&self, which: Params, queries: &[(&[usize], usize)]) -> Vec<HeadProbs> {
        if queries.is_empty() {
            return Vec::new();
        }
        let logits = self.net(which).forward(self.inputs(queries).view()).expect("input width is fixed");
        logits
            .rows()
            .into_iter()
            .map(|row| split_heads(row, self.space.blocks()).into_iter().map(|h| softmax(h).to_vec()).collect())
            .collect()
    }

    /// `log d_ψ(s̄ | s, a) = Σ_k log p_k(s̄_k | s, a)`.
    pub fn log_prob_future(&self, state: &[usize], action: usize, future: &[usize]) -> f64 {
        let heads = self.head_probs_with(Params::Online, &[(state, action)]).pop().expect("one query");
        heads.iter().zip(future).map(|(p, &c)| p[c].ln()).sum()
    }

    /// One component per head, drawn independently.
    pub fn sample_future_state<R: Rng + ?Sized>(&self, state: &[usize], action: usize, use_target: bool, rng: &mut R) -> Vec<usize> {
        let which = if use_target { Params::Target } else { Params::Online };
        let heads = self.head_probs_with(which, &[(state, action)]).pop().expect("one query");
        heads.iter().map(|p| sample_categorical(p, rng)).collect()
    }

    /// Targets for a batch of segments.
    ///
    /// `Δ ~ Geom(1-γ)`. When `Δ` falls inside the recorded part of the window
    /// the target is `s_{t+Δ}`. Past an absorbing end the target is the
    /// absorbing state. Otherwise `a' ~ π(·|s_{t+k})` at the last recorded
    /// state `s_{t+k}` and the target is drawn from `d_ψ'(·|s_{t+k}, a')`;
    /// memorylessness of the geometric makes this the exact remaining
    /// mixture.
    pub fn make_targets<P: Policy, R: Rng + ?Sized>(
        &self,
        segments: &[&NStepSegment],
        policy: &P,
        gamma: f64,
        rng: &mut R,
    ) -> Vec<BootstrapTargetSample> {
        let mut out: Vec<BootstrapTargetSample> = Vec::with_capacity(segments.len());
        let mut pending = Vec::new();
        for (i, seg) in segments.iter().enumerate() {
            let delta = sample_geometric(gamma, rng);
            let last = seg.last_valid();
            let (target, bootstrapped) = if delta <= last {
                (seg.states[delta].clone(), false)
            } else if seg.absorbed {
                (seg.states[last].clone(), false)
            } else {
                pending.push(i);
                (Vec::new(), true)
            };
            let (s, a) = seg.head();
            out.push(BootstrapTargetSample { state: s.to_vec(), action: a, delta, target, bootstrapped });
        }
        if pending.is_empty() {
            return out;
        }
        let starts: Vec<&[usize]> = pending.iter().map(|&i| segments[i].states[segments[i].last_valid()].as_slice()).collect();
        let actions: Vec<usize> = policy.action_probs_batch(&starts).iter().map(|p| sample_categorical(p, rng)).collect();
        let queries: Vec<(&[usize], usize)> = starts.iter().copied().zip(actions.iter().copied()).collect();
        let heads = self.head_probs_with(Params::Target, &queries);
        for (&i, probs) in pending.iter().zip(heads) {
            out[i].target = probs.iter().map(|p| sample_categorical(p, rng)).collect();
        }
        out
    }

    pub fn make_target<P: Policy, R: Rng + ?Sized>(
        &self,
        segment: &NStepSegment,
        policy: &P,
        gamma: f64,
        rng: &mut R,
    ) -> BootstrapTargetSample {
        self.make_targets(&[segment], policy, gamma, rng).pop().expect("one segment")
    }

    /// Mean `-log d_ψ(target | s, a)` over the batch and its gradient with
    /// respect to `ψ`. Targets are constants.
    pub fn loss_and_grad(&self, samples: &[BootstrapTargetSample]) -> Result<(f64, Mlp)> {
        if samples.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let queries: Vec<(&[usize], usize)> = samples.iter().map(|t| (t.state.as_slice(), t.action)).collect();
        let x = self.inputs(&queries);
        let (logits, cache) = self.params.online.forward_cached(x.view())?;
        let targets: Vec<Vec<usize>> = samples.iter().map(|t| t.target.clone()).collect();
        let (loss, grad) = factored_nll(&logits, self.space.blocks(), &targets);
        Ok((loss, self.params.online.backward(&cache, &grad)))
    }

    /// One optimizer step on a fresh batch of targets; returns the loss.
    pub fn train_step<P: Policy, R: Rng + ?Sized>(
        &mut self,
        optimizer: &mut Adam,
        segments: &[&NStepSegment],
        policy: &P,
        gamma: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let samples = self.make_targets(segments, policy, gamma, rng);
        let (loss, grads) = self.loss_and_grad(&samples)?;
        optimizer.step(&mut self.params.online, &grads);
        Ok(loss)
    }

    pub fn update_target(&mut self) {
        self.params.update_target();
    }

    /// Full table `d_ψ(s̄ | s, a)` for a single-block (tabular) space.
    pub fn to_table(&self, which: Params, gamma: f64) -> Result<ConditionalVisitation> {
        if self.space.n_blocks() != 1 {
            return Err(Error::InvalidTable("tables need a single-block state space".into()));
        }
        let n = self.space.blocks()[0];
        let states: Vec<[usize; 1]> = (0..n).map(|s| [s]).collect();
        let queries: Vec<(&[usize], usize)> =
            states.iter().flat_map(|s| (0..self.n_actions).map(move |a| (s.as_slice(), a))).collect();
        let table = self.head_probs_with(which, &queries).into_iter().flat_map(|mut h| h.remove(0)).collect();
        ConditionalVisitation::new(n, self.n_actions, table, gamma)
    }

    /// Writes `d_ψ(·|s,a)` per head for the given probes as CSV with columns
    /// `probe,state,action,head,class,probability`.
    pub fn dump_csv(&self, path: &Path, probes: &[(Vec<usize>, usize)]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["probe", "state", "action", "head", "class", "probability"])?;
        let queries: Vec<(&[usize], usize)> = probes.iter().map(|(s, a)| (s.as_slice(), *a)).collect();
        for (i, heads) in self.head_probs_with(Params::Online, &queries).iter().enumerate() {
            let state = probes[i].0.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("-");
            for (k, probs) in heads.iter().enumerate() {
                for (c, p) in probs.iter().enumerate() {
                    w.write_record([i.to_string(), state.clone(), probes[i].1.to_string(), k.to_string(), c.to_string(), p.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl VisitationSource for FactoredVisitationNet {
    fn state_space(&self) -> &FactoredSpace {
        &self.space
    }

    fn head_probs_batch(&self, queries: &[(&[usize], usize)]) -> Vec<HeadProbs> {
        self.head_probs_with(Params::Online, queries)
    }
}

/// Exact tabular visitation viewed as a single-head source.
#[derive(Debug, Clone)]
pub struct ExactVisitation {
    table: ConditionalVisitation,
    space: FactoredSpace,
}

impl ExactVisitation {
    pub fn new(table: ConditionalVisitation) -> Self {
        let space = FactoredSpace::flat(table.n_states());
        Self { table, space }
    }

    pub fn table(&self) -> &ConditionalVisitation {
        &self.table
    }
}

impl VisitationSource for ExactVisitation {
    fn state_space(&self) -> &FactoredSpace {
        &self.space
    }

    fn head_probs_batch(&self, queries: &[(&[usize], usize)]) -> Vec<HeadProbs> {
        queries.iter().map(|(s, a)| vec![self.table.slice(s[0], *a).to_vec()]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{TabularMdp, UniformPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn segment(states: Vec<usize>, truncated_at: Option<usize>, absorbed: bool) -> NStepSegment {
        let horizon = states.len() - 1;
        NStepSegment {
            states: states.into_iter().map(|s| vec![s]).collect(),
            actions: vec![0; horizon],
            reward: 0.0,
            horizon,
            truncated_at,
            absorbed,
            time_index: 0,
        }
    }

    #[test]
    fn geometric_small_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| sample_geometric(0.0, &mut rng) == 1));
        let n = 200_000;
        let draws: Vec<usize> = (0..n).map(|_| sample_geometric(0.5, &mut rng)).collect();
        let p1 = draws.iter().filter(|&&d| d == 1).count() as f64 / n as f64;
        let p2 = draws.iter().filter(|&&d| d == 2).count() as f64 / n as f64;
        assert!((p1 - 0.5).abs() < 0.005 && (p2 - 0.25).abs() < 0.005);
    }

    #[test]
    fn gamma_zero_never_bootstraps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = FactoredVisitationNet::new(FactoredSpace::flat(5), 1, 8, 1, 1.0, &mut rng);
        let seg = segment(vec![0, 3, 4], None, false);
        for _ in 0..100 {
            let t = net.make_target(&seg, &UniformPolicy { n_actions: 1 }, 0.0, &mut rng);
            assert_eq!((t.target, t.bootstrapped, t.delta), (vec![3], false, 1));
        }
    }

    #[test]
    fn long_delta_bootstraps_from_last_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = FactoredVisitationNet::new(FactoredSpace::flat(3), 1, 4, 1, 1.0, &mut rng);
        // make the target copy deterministic: only the output bias matters
        let out = net.params.target.layers.last_mut().unwrap();
        out.w.fill(0.0);
        out.b.assign(&ndarray::array![-50.0, -50.0, 50.0]);
        let seg = segment(vec![0, 1], None, false);
        let mut seen = 0;
        for _ in 0..200 {
            let t = net.make_target(&seg, &UniformPolicy { n_actions: 1 }, 0.9, &mut rng);
            if t.delta > 1 {
                assert!(t.bootstrapped);
                assert_eq!(t.target, vec![2]);
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn absorbed_segments_stay_in_the_absorbing_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = FactoredVisitationNet::new(FactoredSpace::flat(4), 1, 4, 1, 1.0, &mut rng);
        let seg = segment(vec![0, 3, 3, 3], Some(1), true);
        for _ in 0..200 {
            let t = net.make_target(&seg, &UniformPolicy { n_actions: 1 }, 0.9, &mut rng);
            assert_eq!((t.target, t.bootstrapped), (vec![3], false));
        }
    }

    #[test]
    fn uniform_heads_density_and_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = FactoredVisitationNet::new(FactoredSpace::new(vec![6, 6, 4]), 4, 8, 1, 1.0, &mut rng);
        net.params.online = net.params.online.zeros_like();
        let lp = net.log_prob_future(&[1, 2, 3], 0, &[4, 5, 0]);
        assert!((lp + (144.0f64).ln()).abs() < 1e-12);
        let sample = BootstrapTargetSample { state: vec![0, 0, 0], action: 1, delta: 1, target: vec![2, 3, 1], bootstrapped: false };
        let (loss, _) = net.loss_and_grad(&[sample]).unwrap();
        assert!((loss - (144.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn factored_density_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let space = FactoredSpace::new(vec![3, 2, 4]);
        let net = FactoredVisitationNet::new(space.clone(), 2, 8, 2, 1.0, &mut rng);
        let total: f64 = (0..space.n_joint()).map(|j| net.log_prob_future(&[1, 0, 2], 1, &space.from_joint_index(j)).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampler_matches_head_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = FactoredVisitationNet::new(FactoredSpace::new(vec![3, 4]), 2, 8, 1, 1.0, &mut rng);
        let heads = net.head_probs(&[2, 1], 1);
        let n = 100_000;
        let mut counts = [vec![0usize; 3], vec![0usize; 4]];
        for _ in 0..n {
            let s = net.sample_future_state(&[2, 1], 1, false, &mut rng);
            counts[0][s[0]] += 1;
            counts[1][s[1]] += 1;
        }
        for (probs, counts) in heads.iter().zip(&counts) {
            for (&p, &c) in probs.iter().zip(counts) {
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                assert!((c as f64 / n as f64 - p).abs() <= 3.0 * sigma + 1e-12);
            }
        }
    }

    #[test]
    fn target_flag_switches_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = FactoredVisitationNet::new(FactoredSpace::flat(2), 1, 4, 1, 1.0, &mut rng);
        for (which, bias) in [(true, [50.0, -50.0]), (false, [-50.0, 50.0])] {
            let mlp = if which { &mut net.params.target } else { &mut net.params.online };
            let out = mlp.layers.last_mut().unwrap();
            out.w.fill(0.0);
            out.b.assign(&ndarray::arr1(&bias));
        }
        assert_eq!(net.sample_future_state(&[0], 0, true, &mut rng), vec![0]);
        assert_eq!(net.sample_future_state(&[0], 0, false, &mut rng), vec![1]);
    }

    #[test]
    fn learns_single_state_visitation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mdp = TabularMdp::two_cycle(1, 0.0).unwrap();
        let mut net = FactoredVisitationNet::new(FactoredSpace::flat(2), 1, 16, 1, 1.0, &mut rng);
        let mut opt = Adam::new(&net.params.online, 1e-2);
        let seg0 = segment(vec![0, 1], None, false);
        let seg1 = segment(vec![1, 0], None, false);
        let batch = [&seg0, &seg1];
        for _ in 0..300 {
            net.train_step(&mut opt, &batch, &UniformPolicy { n_actions: 1 }, 0.0, &mut rng).unwrap();
        }
        let table = net.to_table(Params::Online, mdp.gamma()).unwrap();
        assert!(table.slice(0, 0)[1] > 0.99 && table.slice(1, 0)[0] > 0.99);
    }

    #[test]
    fn csv_dump_lists_every_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = FactoredVisitationNet::new(FactoredSpace::new(vec![2, 3]), 2, 4, 1, 1.0, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        net.dump_csv(&path, &[(vec![0, 1], 1)]).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 1 + 5);
    }
}
