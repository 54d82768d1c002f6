//! Reusable verification procedures shared by the acceptance tests and the
//! `oracle` / `verify` CLI commands.

use std::time::{Duration, Instant};

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::agents::{actor_loss, critic_targets, rng_stream, train_agent, Actor, Critic, Trainer};
use crate::config::{AgentKind, ExperimentConfig};
use crate::error::Result;
use crate::eval::{iqm, mc_discounted_feature_entropy, MetricRow};
use crate::experiment::run_seeds;
use crate::intrinsic::{exact_kl_reward, ChannelKey, FeatureChannel};
use crate::gridworld::{make_env, to_tabular, GridSpec, GridWorld};
use crate::mdp::{collect_segments, random_simplex, sample_categorical, Environment, Policy, NStepSegment, ReplayBuffer, TabularMdp, UniformPolicy};
use crate::nnet::{factored_nll, gradient_check, mse, score_function, Adam};
use crate::oracle::{
    apply_t, check_contraction, check_theorem1, exact_visitation, q_value_bellman, q_value_from_visitation,
    truncated_visitation_sum, ConditionalVisitation, TabularPolicy,
};
use crate::visitation::{sample_geometric, ExactVisitation, FactoredVisitationNet, Params};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{} {} ({}, {:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckReport {
    let t0 = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckReport { name: name.to_string(), passed, detail, elapsed: t0.elapsed() }
}

/// Random tabular problem with up to `max_states` states and `max_actions` actions.
pub fn random_instance<R: Rng + ?Sized>(
    max_states: usize,
    max_actions: usize,
    gamma_max: f64,
    strictly_positive: bool,
    rng: &mut R,
) -> TabularMdp {
    let n = rng.random_range(1..=max_states);
    let na = rng.random_range(1..=max_actions);
    let gamma = rng.random_range(0.0..=gamma_max);
    TabularMdp::random(n, na, gamma, strictly_positive, rng)
}

pub fn contraction_check(instances: usize, seed: u64) -> CheckReport {
    timed("contraction", || {
        let mut rng = rng_stream(seed, 11);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..instances {
            let mdp = random_instance(16, 4, 0.99, false, &mut rng);
            let pi = TabularPolicy::random(mdp.n_states(), mdp.n_actions(), false, &mut rng);
            let q1 = ConditionalVisitation::random(mdp.n_states(), mdp.n_actions(), mdp.gamma(), &mut rng);
            let q2 = ConditionalVisitation::random(mdp.n_states(), mdp.n_actions(), mdp.gamma(), &mut rng);
            for n in [1, 2] {
                let (lhs, rhs) = check_contraction(&mdp, &pi, &q1, &q2, n);
                worst = worst.max(lhs - rhs);
            }
        }
        Ok((worst <= 1e-10, format!("worst excess {worst:.3e} over {instances} instances")))
    })
}

pub fn fixed_point_check(instances: usize, seed: u64) -> CheckReport {
    timed("fixed point", || {
        let mut rng = rng_stream(seed, 12);
        let (mut fp, mut brute) = (0.0f64, 0.0f64);
        for _ in 0..instances {
            let mdp = random_instance(16, 4, 0.99, false, &mut rng);
            let pi = TabularPolicy::random(mdp.n_states(), mdp.n_actions(), false, &mut rng);
            let d = exact_visitation(&mdp, &pi)?;
            let td = apply_t(&mdp, &pi, &d);
            fp = fp.max(max_abs_diff(td.table(), d.table()));
            // enough terms that the geometric tail is below 1e-9
            let terms = if mdp.gamma() == 0.0 { 1 } else { ((1e-9f64).ln() / mdp.gamma().ln()).ceil().max(1.0) as usize + 1 };
            let t = truncated_visitation_sum(&mdp, &pi, terms);
            brute = brute.max(max_abs_diff(t.table(), d.table()));
        }
        Ok((fp <= 1e-8 && brute <= 1e-6, format!("|Td-d| {fp:.2e}, |d-truncated| {brute:.2e}")))
    })
}

pub fn q_identity_check(instances: usize, seed: u64) -> CheckReport {
    timed("q identity", || {
        let mut rng = rng_stream(seed, 13);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let mdp = random_instance(16, 4, 0.99, false, &mut rng);
            let pi = TabularPolicy::random(mdp.n_states(), mdp.n_actions(), false, &mut rng);
            let a = q_value_bellman(&mdp, &pi)?;
            let d = exact_visitation(&mdp, &pi)?;
            let b = q_value_from_visitation(&mdp, &pi, &d);
            worst = worst.max(max_abs_diff(&a, &b));
        }
        Ok((worst <= 1e-7, format!("max |Q_bellman - Q_visitation| {worst:.2e}")))
    })
}

pub fn policy_bound_check(instances: usize, seed: u64) -> CheckReport {
    timed("policy comparison bound", || {
        let mut rng = rng_stream(seed, 14);
        let (mut worst, mut identity) = (f64::NEG_INFINITY, 0.0f64);
        for _ in 0..instances {
            let mdp = random_instance(16, 4, 0.99, true, &mut rng);
            let (n, na) = (mdp.n_states(), mdp.n_actions());
            let pi = TabularPolicy::random(n, na, true, &mut rng);
            let other = TabularPolicy::random(n, na, true, &mut rng);
            worst = worst.max(check_theorem1(&mdp, &pi, &other)?.worst_violation());
            let same = check_theorem1(&mdp, &pi, &pi)?;
            identity = identity.max(max_abs_diff(&same.q, &same.bound));
        }
        Ok((worst <= 0.0 && identity <= 1e-9, format!("worst violation {worst:.3e}, identity gap {identity:.2e}")))
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Settings for fitting a visitation network to a fixed tabular policy.
#[derive(Debug, Clone)]
pub struct VisitationFit {
    pub hidden: usize,
    pub depth: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Optimizer steps between hard target copies.
    pub copy_every: usize,
    pub segments: usize,
    pub horizon: usize,
    pub max_steps: usize,
}

impl Default for VisitationFit {
    fn default() -> Self {
        Self {
            hidden: 128,
            depth: 2,
            batch: 512,
            steps: 20_000,
            lr_start: 2e-3,
            lr_end: 1e-5,
            copy_every: 10,
            segments: 50_000,
            horizon: 2,
            max_steps: 30,
        }
    }
}

/// Trains a visitation network by TD on on-policy segments and returns it
/// together with its max-(s,a) TV distance from the exact table.
pub fn fit_visitation(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    fit: &VisitationFit,
    seed: u64,
) -> Result<(FactoredVisitationNet, f64)> {
    let exact = exact_visitation(mdp, policy)?;
    let mut rng = rng_stream(seed, 3);
    let mut buffer = ReplayBuffer::new(fit.segments);
    buffer.extend(collect_segments(mdp, policy, fit.segments, fit.horizon, fit.max_steps, &mut rng));
    let mut net = FactoredVisitationNet::new(mdp.space().clone(), mdp.n_actions(), fit.hidden, fit.depth, 1.0, &mut rng);
    let mut opt = Adam::new(&net.params.online, fit.lr_start);
    for k in 0..fit.steps {
        // log-linear decay
        opt.lr = fit.lr_start * (fit.lr_end / fit.lr_start).powf(k as f64 / fit.steps as f64);
        let batch = buffer.sample(fit.batch, &mut rng)?;
        net.train_step(&mut opt, &batch, policy, mdp.gamma(), &mut rng)?;
        if (k + 1) % fit.copy_every == 0 {
            net.update_target();
        }
    }
    let tv = net.to_table(Params::Online, mdp.gamma())?.max_tv(&exact);
    Ok((net, tv))
}

/// The two instances of the learned-visitation check: a 2-cycle and the
/// fixed-goal 4x4 empty grid, each under a fixed stochastic policy.
pub fn visitation_instances(seed: u64) -> Result<Vec<(&'static str, TabularMdp, TabularPolicy)>> {
    let mut rng = rng_stream(seed, 15);
    let cycle = TabularMdp::two_cycle(2, 0.5)?;
    let cycle_pi = TabularPolicy::random(2, 2, true, &mut rng);
    let world = GridWorld::new(GridSpec::empty(4))?;
    let grid = to_tabular(&world, 0.9, 4096)?;
    let n = grid.mdp.n_states();
    let mdp = grid.mdp.with_initial(vec![1.0 / n as f64; n])?;
    // half uniform, half random so every action keeps probability >= 1/8
    let raw = TabularPolicy::random(n, 4, true, &mut rng);
    let mixed = (0..n).flat_map(|s| raw.row(s).iter().map(|p| 0.5 * p + 0.125).collect::<Vec<_>>()).collect();
    let grid_pi = TabularPolicy::new(n, 4, mixed)?;
    Ok(vec![("2-cycle", cycle, cycle_pi), ("empty-4x4", mdp, grid_pi)])
}

pub fn learned_visitation_check(seed: u64) -> CheckReport {
    timed("learned visitation", || {
        let mut parts = Vec::new();
        let mut ok = true;
        for (name, mdp, pi) in visitation_instances(seed)? {
            let fit = if mdp.n_states() <= 2 { VisitationFit { steps: 6000, ..Default::default() } } else { VisitationFit::default() };
            let (_, tv) = fit_visitation(&mdp, &pi, &fit, seed)?;
            ok &= tv <= 0.05;
            parts.push(format!("{name} max TV {tv:.4}"));
        }
        Ok((ok, parts.join(", ")))
    })
}

/// Chi-square test of `sample_geometric` against `(1-γ)γ^{Δ-1}` at the 0.01
/// level. Bins with expected count below 5 are merged into one tail bin.
pub fn geometric_chi_square<R: Rng + ?Sized>(gamma: f64, draws: usize, rng: &mut R) -> (f64, f64) {
    let mut counts: Vec<u64> = Vec::new();
    for _ in 0..draws {
        let d = sample_geometric(gamma, rng);
        if counts.len() < d {
            counts.resize(d, 0);
        }
        counts[d - 1] += 1;
    }
    let n = draws as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut tail_prob = 1.0;
    let mut k = 0;
    loop {
        let p = (1.0 - gamma) * gamma.powi(k as i32);
        // the remaining tail after this bin must also hold 5 expected draws
        if p * n < 5.0 || (tail_prob - p) * n < 5.0 {
            break;
        }
        bins.push((counts.get(k).copied().unwrap_or(0) as f64, p * n));
        tail_prob -= p;
        k += 1;
    }
    let tail_observed: u64 = counts.iter().skip(k).sum();
    bins.push((tail_observed as f64, tail_prob * n));
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (bins.len() - 1).max(1) as f64;
    let critical = ChiSquared::new(dof).expect("positive dof").inverse_cdf(0.99);
    (stat, critical)
}

/// Fraction of targets that are bootstrapped on full-length segments of
/// horizon `n`, which should be `γ^n`.
pub fn bootstrap_fraction<R: Rng + ?Sized>(gamma: f64, horizon: usize, samples: usize, rng: &mut R) -> Result<f64> {
    let cycle = TabularMdp::two_cycle(1, gamma)?;
    let net = FactoredVisitationNet::new(cycle.space().clone(), 1, 4, 1, 1.0, rng);
    let segment = NStepSegment {
        states: (0..=horizon).map(|i| vec![i % 2]).collect(),
        actions: vec![0; horizon],
        reward: 0.0,
        horizon,
        truncated_at: None,
        absorbed: false,
        time_index: 0,
    };
    let policy = UniformPolicy { n_actions: 1 };
    let chunk = 10_000;
    let mut boot = 0usize;
    let mut done = 0;
    while done < samples {
        let m = chunk.min(samples - done);
        let batch = vec![&segment; m];
        boot += net.make_targets(&batch, &policy, gamma, rng).iter().filter(|t| t.bootstrapped).count();
        done += m;
    }
    Ok(boot as f64 / samples as f64)
}

pub fn geometric_sampler_check(seed: u64) -> CheckReport {
    timed("geometric mixture sampler", || {
        let mut rng = rng_stream(seed, 16);
        let mut ok = true;
        let mut parts = Vec::new();
        for gamma in [0.5, 0.9, 0.98] {
            let (stat, critical) = geometric_chi_square(gamma, 1_000_000, &mut rng);
            ok &= stat <= critical;
            parts.push(format!("γ={gamma}: χ²={stat:.1}/{critical:.1}"));
        }
        let mut worst = 0.0f64;
        for gamma in [0.5, 0.9, 0.98] {
            for horizon in [1, 5, 10] {
                let frac = bootstrap_fraction(gamma, horizon, 200_000, &mut rng)?;
                worst = worst.max((frac - gamma.powi(horizon as i32)).abs());
            }
        }
        ok &= worst <= 0.01;
        parts.push(format!("bootstrap fraction max |f-γ^N| {worst:.4}"));
        Ok((ok, parts.join(", ")))
    })
}

/// Tabular problems with a feature channel for the unbiasedness check.
pub fn intrinsic_instances(seed: u64) -> Result<Vec<(String, TabularMdp, TabularPolicy, FeatureChannel)>> {
    let mut rng = rng_stream(seed, 17);
    let mut out = Vec::new();
    for (n, na, nz) in [(5, 2, 3), (8, 3, 4)] {
        let mdp = TabularMdp::random(n, na, 0.9, false, &mut rng);
        let pi = TabularPolicy::random(n, na, true, &mut rng);
        let table: Vec<usize> = (0..n).map(|s| s % nz).collect();
        let q_star = random_simplex(nz, true, &mut rng).iter().map(|p| 0.5 * p + 0.5 / nz as f64).collect();
        out.push((format!("random {n}x{na}"), mdp, pi, FeatureChannel::lookup(table, q_star, 1.0)?));
    }
    let world = GridWorld::new(GridSpec::empty(4))?;
    let grid = to_tabular(&world, 0.9, 4096)?;
    let cells = world.floor_cells();
    let table = grid.states.iter().map(|s| cells.iter().position(|&c| c == s.agent_pos).expect("agent on floor")).collect();
    let pi = TabularPolicy::random(grid.mdp.n_states(), 4, true, &mut rng);
    let channel = FeatureChannel::lookup(table, vec![1.0 / cells.len() as f64; cells.len()], 1.0)?;
    out.push(("empty-4x4 position".into(), grid.mdp, pi, channel));
    Ok(out)
}

/// Largest gap between the Monte-Carlo mean of the sampled intrinsic
/// reward and the exact negative KL, over all `(s, a)`.
pub fn intrinsic_gap<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    channel: &FeatureChannel,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let exact = exact_kl_reward(channel, mdp, policy)?;
    let source = ExactVisitation::new(exact_visitation(mdp, policy)?);
    let space = mdp.space();
    let mut worst = 0.0f64;
    for s in 0..mdp.n_states() {
        let state = space.from_joint_index(s);
        for a in 0..mdp.n_actions() {
            let queries = vec![(state.as_slice(), a); samples];
            let total: f64 = channel
                .sample_features(&source, &queries, rng)
                .into_iter()
                .map(|(z, log_q)| channel.intrinsic_reward(z, log_q))
                .sum();
            worst = worst.max((total / samples as f64 - exact[s * mdp.n_actions() + a]).abs());
        }
    }
    Ok(worst)
}

pub fn intrinsic_unbiased_check(seed: u64) -> CheckReport {
    timed("intrinsic reward unbiasedness", || {
        let mut rng = rng_stream(seed, 18);
        let mut ok = true;
        let mut parts = Vec::new();
        for (name, mdp, pi, channel) in intrinsic_instances(seed)? {
            let gap = intrinsic_gap(&mdp, &pi, &channel, 100_000, &mut rng)?;
            ok &= gap <= 0.01;
            parts.push(format!("{name} {gap:.4}"));
        }
        Ok((ok, parts.join(", ")))
    })
}

/// Worst relative error of analytic against central-difference gradients
/// for the visitation, critic and actor losses on random grid batches.
pub fn loss_gradient_errors(probes: usize, seed: u64) -> Result<[f64; 3]> {
    let mut rng = rng_stream(seed, 19);
    let world = make_env("Empty-6x6", seed)?;
    let space = world.space().clone();
    let na = world.n_actions();
    let states: Vec<Vec<usize>> = (0..16).map(|_| {
        let s = world.reset(&mut rng);
        (0..rng.random_range(0..6)).fold(s, |s, _| world.step(&s, rng.random_range(0..na), &mut rng).next)
    }).map(|s| world.encode(&s)).collect();
    let actions: Vec<usize> = states.iter().map(|_| rng.random_range(0..na)).collect();
    let queries: Vec<(&[usize], usize)> = states.iter().map(|s| s.as_slice()).zip(actions.iter().copied()).collect();
    let h = 1e-6;

    let vis = FactoredVisitationNet::new(space.clone(), na, 32, 2, 1.0, &mut rng);
    let targets: Vec<Vec<usize>> = states.iter().map(|_| space.blocks().iter().map(|&b| rng.random_range(0..b)).collect()).collect();
    let x = vis.inputs(&queries);
    let v = gradient_check(&vis.params.online, x.view(), |out| factored_nll(out, space.blocks(), &targets), probes, h, &mut rng)?;

    let critic = Critic::new(space.clone(), na, 32, 2, 0.1, &mut rng);
    let y: Vec<f64> = states.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = critic.inputs(&queries);
    let c = gradient_check(&critic.params.online, x.view(), |out| mse(out, &y), probes, h, &mut rng)?;

    let actor = Actor::new(space, na, 32, 2, 0.002, &mut rng);
    let advantages: Vec<f64> = states.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let refs: Vec<&[usize]> = states.iter().map(|s| s.as_slice()).collect();
    let x = actor.inputs(&refs);
    let a = gradient_check(&actor.net, x.view(), |out| score_function(out, &actions, &advantages), probes, h, &mut rng)?;
    Ok([v, c, a])
}

pub fn gradient_check_report(seed: u64) -> CheckReport {
    timed("loss gradients", || {
        let [v, c, a] = loss_gradient_errors(100, seed)?;
        Ok((v.max(c).max(a) <= 1e-4, format!("visitation {v:.2e}, critic {c:.2e}, actor {a:.2e}")))
    })
}

/// Desk-scale exploration run on Empty-6x6 (environment reward off).
pub const DESK_EXPLORATION: &str = include_str!("../configs/desk-empty6-exploration.toml");
/// Desk-scale control run on SimpleCrossingS15N1.
pub const DESK_CONTROL: &str = include_str!("../configs/desk-crossing15-control.toml");

/// Evaluation points averaged into a run's final smoothed value.
pub const SMOOTHING_WINDOW: usize = 4;

/// Mean of the last `window` values of `metric` over a run's rows.
pub fn final_smoothed(rows: &[MetricRow], window: usize, metric: impl Fn(&MetricRow) -> f64) -> f64 {
    let tail = &rows[rows.len().saturating_sub(window.max(1))..];
    tail.iter().map(metric).sum::<f64>() / tail.len() as f64
}

/// Per-seed metric logs of the config's agent and of soft actor-critic
/// under the same config.
pub fn paired_runs(config: &ExperimentConfig) -> Result<(Vec<Vec<MetricRow>>, Vec<Vec<MetricRow>>)> {
    let sac = ExperimentConfig { agent: AgentKind::Sac, ..config.clone() };
    let ours = run_seeds(config)?.into_iter().map(|(_, rows)| rows).collect();
    let theirs = run_seeds(&sac)?.into_iter().map(|(_, rows)| rows).collect();
    Ok((ours, theirs))
}

/// Discounted position entropy of the uniform policy, from many rollouts.
pub fn uniform_entropy_baseline(config: &ExperimentConfig, rollouts: usize, seed: u64) -> Result<f64> {
    let env = make_env(&config.env, seed)?;
    let channel = FeatureChannel::position(&env, 0.0);
    let policy = UniformPolicy { n_actions: env.n_actions() };
    let space = env.space();
    Ok(mc_discounted_feature_entropy(
        &env,
        &policy,
        |s| channel.feature_of_state(space, &env.encode(s)),
        channel.n_features(),
        config.gamma,
        rollouts,
        config.max_steps,
        &mut rng_stream(seed, 20),
    ))
}

/// Final smoothed entropy of the configured agent against the uniform
/// policy and soft actor-critic, as interquartile means over seeds.
pub fn entropy_trend_check(config: &ExperimentConfig) -> CheckReport {
    timed("exploration entropy trend", || {
        let (ours, sac) = paired_runs(config)?;
        let finals = |runs: &[Vec<MetricRow>]| runs.iter().map(|r| final_smoothed(r, SMOOTHING_WINDOW, |m| m.entropy_estimate)).collect::<Vec<_>>();
        let (a, b) = (finals(&ours), finals(&sac));
        let baseline = uniform_entropy_baseline(config, 5000, config.seeds[0])?;
        let (ia, ib) = (iqm(&a), iqm(&b));
        Ok((
            ia > baseline && ia > ib,
            format!("{} {ia:.3} vs uniform {baseline:.3} vs sac {ib:.3}; per seed {}", config.agent, fmt_list(&a)),
        ))
    })
}

/// Seeds whose final evaluation has a nonzero mean return, for the
/// configured agent and for soft actor-critic.
pub fn return_trend_check(config: &ExperimentConfig) -> CheckReport {
    timed("sparse reward trend", || {
        let (ours, sac) = paired_runs(config)?;
        let solved = |runs: &[Vec<MetricRow>]| runs.iter().filter(|r| r.last().is_some_and(|m| m.return_estimate > 0.0)).count();
        let last = |runs: &[Vec<MetricRow>]| runs.iter().map(|r| r.last().map_or(0.0, |m| m.return_estimate)).collect::<Vec<_>>();
        let (a, b) = (solved(&ours), solved(&sac));
        let n = config.seeds.len();
        Ok((
            2 * a > n && b < a,
            format!("{} nonzero on {a}/{n}, sac on {b}/{n}; returns {} vs {}", config.agent, fmt_list(&last(&ours)), fmt_list(&last(&sac))),
        ))
    })
}

fn fmt_list(values: &[f64]) -> String {
    format!("[{}]", values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", "))
}

fn small_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        env: "Empty-6x6".into(),
        seeds: vec![seed, seed + 1],
        iterations: 40,
        hidden: 16,
        layers: 1,
        max_steps: 50,
        batch_size: 16,
        buffer_size: 500,
        eval_every: 10,
        eval_rollouts: 5,
        ..Default::default()
    }
}

/// Exact textual form of a metric log; equal strings mean bit-identical
/// floats.
fn log_text(rows: &[MetricRow]) -> String {
    format!("{rows:?}")
}

/// With `λ = 0` and the channel disabled the conditional-visitation agent
/// must reproduce soft actor-critic bit for bit.
pub fn zero_weight_matches_sac(seed: u64) -> Result<bool> {
    let base = small_config(seed);
    let cv = ExperimentConfig { agent: AgentKind::OpacCv, lambda: 0.0, channel: Some(ChannelKey::Disabled), ..base.clone() };
    let sac = ExperimentConfig { agent: AgentKind::Sac, ..base.clone() };
    for &s in &base.seeds {
        if log_text(&train_agent(&cv, s)?.1) != log_text(&train_agent(&sac, s)?.1) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// With `λ_SAC = 0` the critic targets are plain expected-SARSA targets and
/// the actor loss is the plain score-function loss with `A = Q`. Returns
/// the largest deviation from an independent computation.
pub fn zero_entropy_is_plain_actor_critic(seed: u64) -> Result<f64> {
    let cfg = ExperimentConfig { agent: AgentKind::Sac, lambda_sac: 0.0, ..small_config(seed) };
    let mut trainer = Trainer::for_grid(&cfg, seed)?;
    for _ in 0..10 {
        trainer.iterate()?;
    }
    let s = &trainer.state;
    let mut rng = rng_stream(seed, 21);
    let batch = s.buffer.sample(cfg.batch_size, &mut rng)?;
    let zeros = vec![0.0; batch.len()];

    let mut r1 = rng.clone();
    let y = critic_targets(&s.critic, &s.actor, &batch, &zeros, cfg.gamma, 1.0, &mut r1);
    let mut r2 = rng.clone();
    let mut worst = 0.0f64;
    for (seg, y) in batch.iter().zip(&y) {
        let next = seg.next_state();
        let a = sample_categorical(&s.actor.action_probs(next), &mut r2);
        let q = s.critic.values(true, &[(next, a)])[0];
        let plain = seg.reward + if seg.head_is_terminal() { 0.0 } else { cfg.gamma * q };
        worst = worst.max((plain - y).abs());
    }

    let states: Vec<&[usize]> = batch.iter().map(|seg| seg.head().0).collect();
    let mut r1 = rng.clone();
    let (loss, _) = actor_loss(&s.actor, &s.critic, &states, false, &mut r1)?;
    let mut r2 = rng;
    let mut plain = 0.0;
    for &st in &states {
        let probs = s.actor.action_probs(st);
        let a = sample_categorical(&probs, &mut r2);
        plain -= probs[a].ln() * s.critic.values(false, &[(st, a)])[0];
    }
    plain /= states.len() as f64;
    Ok(worst.max((plain - loss).abs()))
}

pub fn reduction_check(seed: u64) -> CheckReport {
    timed("reductions", || {
        let identical = zero_weight_matches_sac(seed)?;
        let gap = zero_entropy_is_plain_actor_critic(seed)?;
        Ok((identical && gap <= 1e-9, format!("λ=0 log identical to sac: {identical}, λ_SAC=0 gap {gap:.2e}")))
    })
}
