//! Monte Carlo evaluation metrics and across-seed aggregation.

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{discounted_return, sample_trajectory, Environment, Policy};

/// Memoizes a frozen policy's action probabilities per encoded state.
pub struct CachedPolicy<'a, P: Policy> {
    inner: &'a P,
    cache: RefCell<HashMap<Vec<usize>, Vec<f64>>>,
}

impl<'a, P: Policy> CachedPolicy<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        Self { inner, cache: RefCell::new(HashMap::new()) }
    }
}

impl<P: Policy> Policy for CachedPolicy<'_, P> {
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    fn action_probs(&self, state: &[usize]) -> Vec<f64> {
        if let Some(p) = self.cache.borrow().get(state) {
            return p.clone();
        }
        let p = self.inner.action_probs(state);
        self.cache.borrow_mut().insert(state.to_vec(), p.clone());
        p
    }
}

/// Empirical discounted feature measure from the initial distribution.
///
/// Step `t` gets weight `(1-γ)γ^t`; an absorbing final state keeps the
/// remaining tail mass `γ^T`. States whose feature is `None` are skipped.
/// The result is normalized.
#[allow(clippy::too_many_arguments)]
pub fn discounted_feature_measure<E, P, F, R>(
    env: &E,
    policy: &P,
    feature: F,
    n_features: usize,
    gamma: f64,
    n_rollouts: usize,
    max_steps: usize,
    rng: &mut R,
) -> Vec<f64>
where
    E: Environment,
    P: Policy,
    F: Fn(&E::State) -> Option<usize>,
    R: Rng + ?Sized,
{
    assert!(n_rollouts >= 1, "need at least one rollout");
    let cached = CachedPolicy::new(policy);
    let mut mass = vec![0.0; n_features];
    for _ in 0..n_rollouts {
        let traj = sample_trajectory(env, &cached, max_steps, rng);
        let last = traj.states.len() - 1;
        let mut discount = 1.0;
        for (t, s) in traj.states.iter().enumerate() {
            let w = if traj.absorbed && t == last { discount } else { (1.0 - gamma) * discount };
            if let Some(z) = feature(s) {
                mass[z] += w;
            }
            discount *= gamma;
        }
    }
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        mass.iter_mut().for_each(|m| *m /= total);
    }
    mass
}

/// Shannon entropy in nats.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

#[allow(clippy::too_many_arguments)]
pub fn mc_discounted_feature_entropy<E, P, F, R>(
    env: &E,
    policy: &P,
    feature: F,
    n_features: usize,
    gamma: f64,
    n_rollouts: usize,
    max_steps: usize,
    rng: &mut R,
) -> f64
where
    E: Environment,
    P: Policy,
    F: Fn(&E::State) -> Option<usize>,
    R: Rng + ?Sized,
{
    shannon_entropy(&discounted_feature_measure(env, policy, feature, n_features, gamma, n_rollouts, max_steps, rng))
}

/// Discounted return of each of `n_rollouts` fresh rollouts.
pub fn mc_returns<E, P, R>(env: &E, policy: &P, gamma: f64, n_rollouts: usize, max_steps: usize, rng: &mut R) -> Vec<f64>
where
    E: Environment,
    P: Policy,
    R: Rng + ?Sized,
{
    let cached = CachedPolicy::new(policy);
    (0..n_rollouts)
        .map(|_| discounted_return(&sample_trajectory(env, &cached, max_steps, rng).rewards, gamma))
        .collect()
}

pub fn mc_expected_return<E, P, R>(env: &E, policy: &P, gamma: f64, n_rollouts: usize, max_steps: usize, rng: &mut R) -> f64
where
    E: Environment,
    P: Policy,
    R: Rng + ?Sized,
{
    assert!(n_rollouts >= 1, "need at least one rollout");
    mean(&mc_returns(env, policy, gamma, n_rollouts, max_steps, rng))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Percentile of sorted data with linear interpolation between closest
/// ranks: position `q (n - 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Interquartile mean: mean of the values lying between the 25th and 75th
/// percentiles inclusive, with [`percentile`]'s convention.
pub fn iqm(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "iqm of an empty list");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&sorted, 0.25), percentile(&sorted, 0.75));
    let kept: Vec<f64> = sorted.into_iter().filter(|&v| v >= lo && v <= hi).collect();
    if kept.is_empty() {
        // two or three spread-out values can leave nothing between the quartiles
        return 0.5 * (lo + hi);
    }
    mean(&kept)
}

/// Percentile-bootstrap confidence band for the IQM, widened if needed so
/// it always contains the point estimate.
pub fn bootstrap_iqm_band<R: Rng + ?Sized>(values: &[f64], resamples: usize, level: f64, rng: &mut R) -> (f64, f64) {
    let point = iqm(values);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let sample: Vec<f64> = (0..values.len()).map(|_| values[rng.random_range(0..values.len())]).collect();
            iqm(&sample)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    (percentile(&stats, alpha).min(point), percentile(&stats, 1.0 - alpha).max(point))
}

/// One evaluation point of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub iteration: usize,
    pub return_estimate: f64,
    pub entropy_estimate: f64,
    pub visitation_loss: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

impl MetricRow {
    pub fn is_finite(&self) -> bool {
        [self.return_estimate, self.entropy_estimate, self.visitation_loss, self.critic_loss, self.actor_loss]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Across-seed summary at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iteration: usize,
    pub n_seeds: usize,
    pub return_iqm: f64,
    pub return_lo: f64,
    pub return_hi: f64,
    pub entropy_iqm: f64,
    pub entropy_lo: f64,
    pub entropy_hi: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// IQM and bootstrap band per iteration over runs that share an
/// evaluation schedule.
pub fn aggregate<R: Rng + ?Sized>(runs: &[Vec<MetricRow>], resamples: usize, rng: &mut R) -> Result<Vec<AggregateRow>> {
    let first = runs.first().ok_or(Error::InvalidConfig { field: "seeds", reason: "no runs to aggregate".into() })?;
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(Error::InvalidConfig { field: "seeds", reason: "runs have different evaluation schedules".into() });
    }
    (0..first.len())
        .map(|i| {
            let returns: Vec<f64> = runs.iter().map(|r| r[i].return_estimate).collect();
            let entropies: Vec<f64> = runs.iter().map(|r| r[i].entropy_estimate).collect();
            let (return_lo, return_hi) = bootstrap_iqm_band(&returns, resamples, 0.95, rng);
            let (entropy_lo, entropy_hi) = bootstrap_iqm_band(&entropies, resamples, 0.95, rng);
            Ok(AggregateRow {
                iteration: first[i].iteration,
                n_seeds: runs.len(),
                return_iqm: iqm(&returns),
                return_lo,
                return_hi,
                entropy_iqm: iqm(&entropies),
                entropy_lo,
                entropy_hi,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{GridAction, GridSpec, GridWorld};
    use crate::mdp::{TabularMdp, UniformPolicy};
    use crate::oracle::{discounted_state_measure, exact_visitation, TabularPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iqm_examples() {
        assert_eq!(iqm(&[2.5; 7]), 2.5);
        assert_eq!(iqm(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]), 3.5);
        assert_eq!(iqm(&[0.0, 8.0]), 4.0);
        let base: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let mut outlier = base.clone();
        outlier.push(1e6);
        assert!((iqm(&outlier) - iqm(&base)).abs() < (mean(&outlier) - mean(&base)).abs());
    }

    #[test]
    fn band_of_identical_values_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(bootstrap_iqm_band(&[0.7; 5], 1000, 0.95, &mut rng), (0.7, 0.7));
        let (lo, hi) = bootstrap_iqm_band(&[0.1, 0.5, 0.2, 0.9, 0.4], 1000, 0.95, &mut rng);
        let p = iqm(&[0.1, 0.5, 0.2, 0.9, 0.4]);
        assert!(lo <= p && p <= hi);
    }

    #[test]
    fn pinned_policy_has_zero_entropy() {
        let world = GridWorld::new(GridSpec::empty(6)).unwrap();
        let stay = TabularPolicy::deterministic(4, &[GridAction::Stay.index()]);
        struct Always(TabularPolicy);
        impl Policy for Always {
            fn n_actions(&self) -> usize {
                4
            }
            fn action_probs(&self, _: &[usize]) -> Vec<f64> {
                self.0.row(0).to_vec()
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = mc_discounted_feature_entropy(&world, &Always(stay), |s| Some(s.agent_pos.0 * 6 + s.agent_pos.1), 36, 0.98, 20, 200, &mut rng);
        assert_eq!(h, 0.0);
        assert!((shannon_entropy(&[0.25; 4]) - (4.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_reward_environment_returns_zero() {
        let mdp = TabularMdp::single_state(2, 0.0, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(mc_expected_return(&mdp, &UniformPolicy { n_actions: 2 }, 0.9, 10, 50, &mut rng), 0.0);
    }

    #[test]
    fn three_steps_to_the_goal() {
        // 5x5 grid: start (1,1) facing east, goal (3,2); right-turn path is
        // forward, forward, turn right, forward -> reward at step index 3
        let mut spec = GridSpec::empty(5);
        spec.goal_mode = crate::gridworld::GoalMode::Fixed((3, 2));
        let world = GridWorld::new(spec).unwrap();
        struct Scripted;
        impl Policy for Scripted {
            fn n_actions(&self) -> usize {
                4
            }
            fn action_probs(&self, s: &[usize]) -> Vec<f64> {
                // s = [x-1, y-1, dir]
                let a = match (s[0], s[2]) {
                    (0, _) | (1, 0) => GridAction::Forward,
                    (2, 0) => GridAction::TurnRight,
                    _ => GridAction::Forward,
                };
                let mut p = vec![0.0; 4];
                p[a.index()] = 1.0;
                p
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = mc_expected_return(&world, &Scripted, 0.98, 3, 200, &mut rng);
        assert_eq!(r, 0.98f64.powi(3));
    }

    #[test]
    fn measure_matches_tabular_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMdp::random(4, 2, 0.8, false, &mut rng);
        let pi = TabularPolicy::random(4, 2, false, &mut rng);
        let rho = discounted_state_measure(&mdp, &pi, &exact_visitation(&mdp, &pi).unwrap());
        let est = mc_discounted_feature_entropy(&mdp, &pi, |&s| Some(s), 4, 0.8, 10_000, 100, &mut rng);
        assert!((est - shannon_entropy(&rho)).abs() < 0.02);
    }

    #[test]
    fn csv_roundtrip() {
        let rows = vec![MetricRow {
            seed: 3,
            iteration: 1,
            return_estimate: 0.25,
            entropy_estimate: 1.5,
            visitation_loss: 0.0,
            critic_loss: 0.125,
            actor_loss: -0.5,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_csv(&path, &rows).unwrap();
        assert_eq!(read_csv::<MetricRow>(&path).unwrap(), rows);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("seed,iteration,return_estimate,entropy_estimate,visitation_loss,critic_loss,actor_loss"));
    }
}
