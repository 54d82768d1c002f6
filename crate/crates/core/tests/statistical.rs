//! Monte Carlo checks with fixed seeds.

use futurevis::agents::Trainer;
use futurevis::config::{AgentKind, ExperimentConfig};
use futurevis::intrinsic::ChannelKey;
use futurevis::mdp::{sample_categorical, Environment, NStepSegment, Policy, TabularMdp};
use futurevis::oracle::{apply_t, TabularPolicy};
use futurevis::visitation::{FactoredVisitationNet, Params};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Window of `horizon` steps from `(s, a)` under `policy`, never absorbing.
fn rollout_segment(mdp: &TabularMdp, policy: &TabularPolicy, s: usize, a: usize, horizon: usize, rng: &mut ChaCha8Rng) -> NStepSegment {
    let mut states = vec![vec![s]];
    let mut actions = vec![a];
    let (mut state, mut action) = (s, a);
    for k in 1..=horizon {
        state = sample_categorical(mdp.next_dist(state, action), rng);
        states.push(vec![state]);
        if k < horizon {
            action = sample_categorical(policy.row(state), rng);
            actions.push(action);
        }
    }
    NStepSegment { states, actions, reward: 0.0, horizon, truncated_at: None, absorbed: false, time_index: 0 }
}

#[test]
fn bootstrapped_targets_follow_the_n_step_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (ns, na, gamma, horizon) = (4, 2, 0.7, 3);
    let mdp = TabularMdp::random(ns, na, gamma, false, &mut rng);
    let policy = TabularPolicy::random(ns, na, true, &mut rng);
    let net = FactoredVisitationNet::new(mdp.space().clone(), na, 8, 1, 1.0, &mut rng);
    let mut expected = net.to_table(Params::Target, gamma).unwrap();
    for _ in 0..horizon {
        expected = apply_t(&mdp, &policy, &expected);
    }
    let samples = 100_000;
    for s in 0..ns {
        for a in 0..na {
            let segments: Vec<NStepSegment> =
                (0..samples).map(|_| rollout_segment(&mdp, &policy, s, a, horizon, &mut rng)).collect();
            let refs: Vec<&NStepSegment> = segments.iter().collect();
            let mut counts = vec![0.0; ns];
            for t in net.make_targets(&refs, &policy, gamma, &mut rng) {
                counts[t.target[0]] += 1.0 / samples as f64;
            }
            let tv = 0.5 * counts.iter().zip(expected.slice(s, a)).map(|(c, p)| (c - p).abs()).sum::<f64>();
            assert!(tv <= 0.02, "(s={s}, a={a}): tv {tv}");
        }
    }
}

/// Mean change of the start-state log-policy after a few updates with no
/// reward and no exploration bonus, over many seeds. The critic's random
/// initialization is sign symmetric, so any systematic push on the policy is
/// a bug.
fn mean_policy_drift(agent: AgentKind, seeds: u64) -> (Vec<f64>, Vec<f64>) {
    let mut drifts: Vec<Vec<f64>> = Vec::new();
    for seed in 0..seeds {
        let cfg = ExperimentConfig {
            env: "Empty-6x6".into(),
            agent,
            seeds: vec![seed],
            hidden: 16,
            layers: 1,
            max_steps: 30,
            batch_size: 16,
            buffer_size: 200,
            lambda: 0.0,
            lambda_sac: 0.0,
            env_reward_scale: 0.0,
            channel: (agent == AgentKind::OpacCv).then_some(ChannelKey::Disabled),
            ..Default::default()
        };
        let mut trainer = Trainer::for_grid(&cfg, seed).unwrap();
        for _ in 0..3 {
            trainer.iterate().unwrap();
        }
        let start = trainer.env.encode(&trainer.env.reset(&mut ChaCha8Rng::seed_from_u64(0)));
        let uniform = -(trainer.state.actor.n_actions() as f64).ln();
        drifts.push(trainer.state.actor.log_probs_batch(&[&start])[0].iter().map(|l| l - uniform).collect());
    }
    let n = drifts.len() as f64;
    let na = drifts[0].len();
    let mean: Vec<f64> = (0..na).map(|j| drifts.iter().map(|d| d[j]).sum::<f64>() / n).collect();
    let se: Vec<f64> = (0..na)
        .map(|j| (drifts.iter().map(|d| (d[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt())
        .collect();
    (mean, se)
}

#[test]
fn zero_reward_zero_weights_give_no_systematic_policy_drift() {
    for agent in [AgentKind::Sac, AgentKind::OpacCv, AgentKind::OpacMv] {
        let (mean, se) = mean_policy_drift(agent, 60);
        for (m, s) in mean.iter().zip(&se) {
            assert!(*s > 0.0, "{agent}: no update happened");
            assert!((m / s).abs() < 4.0, "{agent}: mean drift {mean:?} with standard errors {se:?}");
        }
    }
}
