//! Reinforcement-learning enhancement of the cluster classifier.
//!
//! The environment rescales classifier units multiplicatively and pays
//! `k * S_c + b`, where `S_c` is the Silhouette of the induced partition
//! of a fixed latent sample. A soft actor-critic agent picks the scales.

use std::f64::consts::PI;

use crate::autodiff::{Tape, Var};
use crate::cluster::{assign_cluster, DistanceMatrix};
use crate::config::SacConfig;
use crate::model::Classifier;
use crate::nn::{accumulate_grads, join, Mlp, Parameterized};
use crate::optim::Adam;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Score used when every point lands in one cluster.
pub const SINGLE_CLUSTER_SCORE: f64 = -1.0;
pub const ACTION_LOW: f64 = 0.5;
pub const ACTION_HIGH: f64 = 1.5;
const LOG_STD_MIN: f64 = -20.0;
const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A continuous-action environment. Actions arrive in `action_bounds()`.
pub trait Env {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_bounds(&self) -> (f64, f64);
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepResult;
}

/// Maps a squashed action in `[-1, 1]` onto `[lo, hi]`.
pub fn rescale_action(normalized: &[f64], (lo, hi): (f64, f64)) -> Vec<f64> {
    normalized.iter().map(|a| lo + (a + 1.0) * 0.5 * (hi - lo)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardConfig {
    pub k: f64,
    pub b: f64,
    pub target: f64,
    /// Steps per episode.
    pub max_steps: usize,
}

impl RewardConfig {
    /// Episodes last `episode_len` steps, never more than the whole budget.
    pub fn from_sac(config: &SacConfig) -> Self {
        Self {
            k: config.k,
            b: config.b,
            target: config.target,
            max_steps: config.episode_len.min(config.max_steps).max(1),
        }
    }

    pub fn reward(&self, sc: f64) -> f64 {
        self.k * sc + self.b
    }
}

/// Signed log compression, so scaled parameter statistics stay in a range
/// the networks can digest.
fn squash_stat(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

pub struct ClusterEnv {
    points: Tensor,
    distances: DistanceMatrix,
    snapshot: Classifier,
    classifier: Classifier,
    config: RewardConfig,
    steps: usize,
    clip_warnings: usize,
    sc: f64,
    sizes: Vec<usize>,
}

impl ClusterEnv {
    /// `points` is the frozen latent sample (`M x latent`).
    pub fn new(points: Tensor, classifier: Classifier, config: RewardConfig) -> Self {
        let distances = DistanceMatrix::new(&points);
        let n = classifier.clusters();
        let mut env = Self {
            points,
            distances,
            snapshot: classifier.clone(),
            classifier,
            config,
            steps: 0,
            clip_warnings: 0,
            sc: SINGLE_CLUSTER_SCORE,
            sizes: vec![0; n],
        };
        env.rescore();
        env
    }

    fn rescore(&mut self) {
        let probs = self
            .classifier
            .classify_rows(&self.points)
            .expect("latent width matches classifier");
        let labels: Vec<usize> = probs.iter().map(|p| assign_cluster(p).unwrap_or(0)).collect();
        let n = self.classifier.clusters();
        self.sizes = crate::cluster::cluster_sizes(&labels, n);
        self.sc = self
            .distances
            .silhouette(&labels, n)
            .map(|r| r.mean)
            .unwrap_or(SINGLE_CLUSTER_SCORE);
    }

    pub fn observation(&self) -> Vec<f64> {
        let m = self.points.matrix_dims().0.max(1) as f64;
        let mut obs = vec![self.sc];
        obs.extend(self.sizes.iter().map(|&s| s as f64 / m));
        for (mean, std) in self.classifier.unit_stats() {
            obs.push(squash_stat(mean));
            obs.push(squash_stat(std));
        }
        obs
    }

    pub fn silhouette(&self) -> f64 {
        self.sc
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn snapshot(&self) -> &Classifier {
        &self.snapshot
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Steps whose action had to be clipped into range.
    pub fn clip_warnings(&self) -> usize {
        self.clip_warnings
    }

    pub fn config(&self) -> RewardConfig {
        self.config
    }
}

impl Env for ClusterEnv {
    fn observation_dim(&self) -> usize {
        1 + self.classifier.clusters() + 2 * self.classifier.unit_count()
    }

    fn action_dim(&self) -> usize {
        self.classifier.unit_count()
    }

    fn action_bounds(&self) -> (f64, f64) {
        (ACTION_LOW, ACTION_HIGH)
    }

    fn reset(&mut self) -> Vec<f64> {
        self.classifier = self.snapshot.clone();
        self.steps = 0;
        self.rescore();
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        assert_eq!(action.len(), self.action_dim(), "action length");
        let mut clipped = false;
        let scale: Vec<f64> = action
            .iter()
            .map(|&a| {
                if (ACTION_LOW..=ACTION_HIGH).contains(&a) {
                    a
                } else {
                    clipped = true;
                    if a.is_nan() {
                        1.0
                    } else {
                        a.clamp(ACTION_LOW, ACTION_HIGH)
                    }
                }
            })
            .collect();
        if clipped {
            self.clip_warnings += 1;
        }
        self.classifier.scale_units(&scale);
        self.steps += 1;
        self.rescore();
        StepResult {
            observation: self.observation(),
            reward: self.config.reward(self.sc),
            done: self.sc >= self.config.target || self.steps >= self.config.max_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    /// Squashed action in `[-1, 1]`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    /// True only for terminal states; time-limit cutoffs still bootstrap.
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<&Transition> {
        (0..n).map(|_| &self.items[rng.below(self.items.len())]).collect()
    }
}

/// Entropy temperature, stored as its logarithm.
#[derive(Clone, Debug, PartialEq)]
pub struct Temperature {
    pub log_alpha: Tensor,
}

impl Temperature {
    pub fn alpha(&self) -> f64 {
        self.log_alpha.data()[0].exp()
    }
}

impl Parameterized for Temperature {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "log_alpha"), &self.log_alpha);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.log_alpha);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SacDiagnostics {
    pub q_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    /// Batch estimate of policy entropy, `-mean(log pi)`.
    pub entropy: f64,
}

pub struct SacAgent {
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub temperature: Temperature,
    policy_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
    obs_dim: usize,
    act_dim: usize,
    gamma: f64,
    tau: f64,
    target_entropy: f64,
    rng: Rng,
}

struct PolicySample {
    action: Var,
    log_prob: Var,
    vars: Vec<Var>,
}

impl SacAgent {
    pub fn new(obs_dim: usize, act_dim: usize, config: &SacConfig, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let h = config.hidden;
        let policy = Mlp::new(&[obs_dim, h, h, 2 * act_dim], &mut rng);
        let q1 = Mlp::new(&[obs_dim + act_dim, h, h, 1], &mut rng);
        let q2 = Mlp::new(&[obs_dim + act_dim, h, h, 1], &mut rng);
        let mut q1_target = q1.clone();
        let mut q2_target = q2.clone();
        q1_target.set_frozen(true);
        q2_target.set_frozen(true);
        Self {
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            temperature: Temperature {
                log_alpha: Tensor::zeros(&[1, 1]).with_grad(),
            },
            policy_opt: Adam::new(config.lr),
            q1_opt: Adam::new(config.lr),
            q2_opt: Adam::new(config.lr),
            alpha_opt: Adam::new(config.lr),
            obs_dim,
            act_dim,
            gamma: config.gamma,
            tau: config.tau,
            target_entropy: -(act_dim as f64),
            rng,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.act_dim
    }

    pub fn alpha(&self) -> f64 {
        self.temperature.alpha()
    }

    pub fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }

    /// Uniform action in `[-1, 1]`, for warm-up exploration.
    pub fn random_action(&mut self) -> Vec<f64> {
        (0..self.act_dim).map(|_| self.rng.uniform(-1.0, 1.0)).collect()
    }

    /// Squashed action in `[-1, 1]`; `deterministic` returns `tanh(mean)`.
    pub fn act(&mut self, obs: &[f64], deterministic: bool) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.policy.bind(&mut tape);
        let x = tape.constant(1, self.obs_dim, obs.to_vec())?;
        let out = Mlp::forward(&mut tape, &bound, x)?;
        let (mean, log_std) = {
            let v = tape.value(out);
            (v[..self.act_dim].to_vec(), v[self.act_dim..].to_vec())
        };
        Ok(mean
            .iter()
            .zip(&log_std)
            .map(|(&m, &ls)| {
                if deterministic {
                    m.tanh()
                } else {
                    let std = ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                    (m + std * self.rng.normal()).tanh()
                }
            })
            .collect())
    }

    /// Reparameterized squashed-Gaussian sample for a batch of observations.
    fn sample_policy(tape: &mut Tape, policy: &Mlp, obs: Var, a: usize, rng: &mut Rng) -> Result<PolicySample> {
        let rows = tape.dims(obs).0;
        let bound = policy.bind(tape);
        let out = Mlp::forward(tape, &bound, obs)?;
        let mean = tape.slice_cols(out, 0, a)?;
        let log_std = tape.slice_cols(out, a, a)?;
        let log_std = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
        let eps: Vec<f64> = (0..rows * a).map(|_| rng.normal()).collect();
        let noise_term: Vec<f64> = eps
            .chunks(a)
            .map(|row| -0.5 * row.iter().map(|e| e * e).sum::<f64>() - 0.5 * a as f64 * (2.0 * PI).ln())
            .collect();
        let eps = tape.constant(rows, a, eps)?;
        let std = tape.exp(log_std);
        let noise = tape.mul(std, eps)?;
        let u = tape.add(mean, noise)?;
        let action = tape.tanh(u);
        let sq = tape.square(action);
        let neg = tape.scale(sq, -1.0);
        let one_minus = tape.add_scalar(neg, 1.0 + SQUASH_EPS);
        let log_jac = tape.ln(one_minus);
        let per = tape.add(log_std, log_jac)?;
        let per = tape.sum_cols(per);
        let per = tape.scale(per, -1.0);
        let noise_term = tape.constant(rows, 1, noise_term)?;
        let log_prob = tape.add(per, noise_term)?;
        Ok(PolicySample {
            action,
            log_prob,
            vars: Mlp::bound_vars(&bound),
        })
    }

    fn q_values(tape: &mut Tape, q: &Mlp, obs: Var, act: Var) -> Result<(Var, Vec<Var>)> {
        let bound = q.bind(tape);
        let x = tape.concat_cols(&[obs, act])?;
        let out = Mlp::forward(tape, &bound, x)?;
        Ok((out, Mlp::bound_vars(&bound)))
    }

    /// One gradient step on critics, actor and temperature, then Polyak
    /// averaging of the target critics.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<SacDiagnostics> {
        let n = batch.len();
        if n == 0 {
            return Err(TensorError::Contract("empty SAC batch".into()));
        }
        let (od, ad) = (self.obs_dim, self.act_dim);
        let obs: Vec<f64> = batch.iter().flat_map(|t| t.observation.iter().copied()).collect();
        let next: Vec<f64> = batch.iter().flat_map(|t| t.next_observation.iter().copied()).collect();
        let acts: Vec<f64> = batch.iter().flat_map(|t| t.action.iter().copied()).collect();
        let alpha = self.alpha();

        // Soft Bellman targets from the target critics.
        let targets = {
            let mut tape = Tape::new();
            let s2 = tape.constant(n, od, next)?;
            let sample = Self::sample_policy(&mut tape, &self.policy, s2, ad, &mut self.rng)?;
            let (t1, _) = Self::q_values(&mut tape, &self.q1_target, s2, sample.action)?;
            let (t2, _) = Self::q_values(&mut tape, &self.q2_target, s2, sample.action)?;
            let qmin = tape.minimum(t1, t2)?;
            let (qv, lp) = (tape.value(qmin).to_vec(), tape.value(sample.log_prob).to_vec());
            batch
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let cont = if t.done { 0.0 } else { 1.0 };
                    t.reward + self.gamma * cont * (qv[i] - alpha * lp[i])
                })
                .collect::<Vec<f64>>()
        };

        // Critics.
        let q_loss = {
            let mut tape = Tape::new();
            let s = tape.constant(n, od, obs.clone())?;
            let a = tape.constant(n, ad, acts)?;
            let y = tape.constant(n, 1, targets)?;
            let (o1, v1) = Self::q_values(&mut tape, &self.q1, s, a)?;
            let (o2, v2) = Self::q_values(&mut tape, &self.q2, s, a)?;
            let d1 = tape.sub(o1, y)?;
            let d2 = tape.sub(o2, y)?;
            let l1 = tape.square(d1);
            let l1 = tape.mean(l1);
            let l2 = tape.square(d2);
            let l2 = tape.mean(l2);
            let loss = tape.add(l1, l2)?;
            let value = tape.scalar(loss);
            let grads = tape.backward(loss)?;
            accumulate_grads(&mut self.q1, &v1, &grads);
            accumulate_grads(&mut self.q2, &v2, &grads);
            self.q1_opt.step(&mut self.q1);
            self.q2_opt.step(&mut self.q2);
            value
        };

        // Actor, through the (just updated) critics.
        let (policy_loss, mean_log_prob) = {
            let mut tape = Tape::new();
            let s = tape.constant(n, od, obs)?;
            let sample = Self::sample_policy(&mut tape, &self.policy, s, ad, &mut self.rng)?;
            let (o1, _) = Self::q_values(&mut tape, &self.q1, s, sample.action)?;
            let (o2, _) = Self::q_values(&mut tape, &self.q2, s, sample.action)?;
            let qmin = tape.minimum(o1, o2)?;
            let weighted = tape.scale(sample.log_prob, alpha);
            let diff = tape.sub(weighted, qmin)?;
            let loss = tape.mean(diff);
            let value = tape.scalar(loss);
            let mlp = tape.value(sample.log_prob).iter().sum::<f64>() / n as f64;
            let grads = tape.backward(loss)?;
            accumulate_grads(&mut self.policy, &sample.vars, &grads);
            self.policy_opt.step(&mut self.policy);
            // Critic grads from this pass are discarded.
            self.q1.zero_grad();
            self.q2.zero_grad();
            (value, mlp)
        };

        // Temperature: d/d(log alpha) of -log_alpha * (log pi + H_target).
        let log_alpha = self.temperature.log_alpha.data()[0];
        let alpha_loss = -log_alpha * (mean_log_prob + self.target_entropy);
        self.temperature
            .log_alpha
            .accumulate_grad(&[-(mean_log_prob + self.target_entropy)]);
        self.alpha_opt.step(&mut self.temperature);

        polyak(&mut self.q1_target, &self.q1, self.tau);
        polyak(&mut self.q2_target, &self.q2, self.tau);

        Ok(SacDiagnostics {
            q_loss,
            policy_loss,
            alpha_loss,
            alpha: self.alpha(),
            entropy: -mean_log_prob,
        })
    }
}

/// `target += tau * (source - target)`, tensor by tensor.
pub fn polyak(target: &mut Mlp, source: &Mlp, tau: f64) {
    let mut values: Vec<Vec<f64>> = Vec::new();
    source.visit("", &mut |_, t| values.push(t.data().to_vec()));
    let mut idx = 0;
    target.visit_mut(&mut |t| {
        for (x, s) in t.data_mut().iter_mut().zip(&values[idx]) {
            *x += tau * (s - *x);
        }
        idx += 1;
    });
}

impl Parameterized for SacAgent {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.policy.visit(&join(prefix, "policy"), f);
        self.q1.visit(&join(prefix, "q1"), f);
        self.q2.visit(&join(prefix, "q2"), f);
        self.q1_target.visit(&join(prefix, "q1_target"), f);
        self.q2_target.visit(&join(prefix, "q2_target"), f);
        self.temperature.visit(prefix, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.policy.visit_mut(f);
        self.q1.visit_mut(f);
        self.q2.visit_mut(f);
        self.q1_target.visit_mut(f);
        self.q2_target.visit_mut(f);
        self.temperature.visit_mut(f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub episode: usize,
    pub sc: f64,
    pub reward: f64,
    pub done: bool,
    /// Running maximum of `sc`, including the starting partition.
    pub best_sc: f64,
    /// Scales actually applied, in `[0.5, 1.5]`.
    pub action: Vec<f64>,
}

pub fn format_trajectory(rows: &[TrajectoryRow]) -> String {
    let width = rows.first().map_or(0, |r| r.action.len());
    let mut out = String::from("step\tepisode\tsc\treward\tdone\tbest_sc");
    for i in 0..width {
        out.push_str(&format!("\ta{i}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.step, r.episode, r.sc, r.reward, r.done, r.best_sc
        ));
        for a in &r.action {
            out.push_str(&format!("\t{a}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct Enhancement {
    /// Classifier with the best observed Silhouette.
    pub classifier: Classifier,
    pub initial_sc: f64,
    pub best_sc: f64,
    pub reached_target: bool,
    pub trajectory: Vec<TrajectoryRow>,
    pub clip_warnings: usize,
    pub updates: usize,
    pub last_diagnostics: Option<SacDiagnostics>,
}

/// Runs episodes until the target Silhouette is reached or `max_steps`
/// agent steps are spent. Missing the target is reported, not an error.
pub fn enhance_classifier(env: &mut ClusterEnv, agent: &mut SacAgent, config: &SacConfig) -> Result<Enhancement> {
    let mut obs = env.reset();
    let initial_sc = env.silhouette();
    let target = env.config().target;
    let bounds = env.action_bounds();
    let mut best_sc = initial_sc;
    let mut best = env.classifier().clone();
    let mut reached = initial_sc >= target;
    let mut buffer = ReplayBuffer::new(config.buffer);
    let mut trajectory = Vec::new();
    let mut episode = 0;
    let mut updates = 0;
    let mut last = None;

    let mut step = 0;
    while step < config.max_steps && !reached {
        let normalized = if step < config.learning_starts {
            agent.random_action()
        } else {
            agent.act(&obs, false)?
        };
        let scale = rescale_action(&normalized, bounds);
        let res = env.step(&scale);
        let sc = env.silhouette();
        let terminal = sc >= target;
        buffer.push(Transition {
            observation: obs,
            action: normalized,
            reward: res.reward,
            next_observation: res.observation.clone(),
            done: terminal,
        });
        if step >= config.learning_starts && buffer.len() >= config.batch {
            let batch = buffer.sample(config.batch, agent.rng());
            last = Some(agent.update(&batch)?);
            updates += 1;
        }
        if sc > best_sc {
            best_sc = sc;
            best = env.classifier().clone();
        }
        trajectory.push(TrajectoryRow {
            step,
            episode,
            sc,
            reward: res.reward,
            done: res.done,
            best_sc,
            action: scale,
        });
        step += 1;
        reached = terminal;
        if res.done && !reached {
            obs = env.reset();
            episode += 1;
        } else {
            obs = res.observation;
        }
    }

    Ok(Enhancement {
        classifier: best,
        initial_sc,
        best_sc,
        reached_target: reached,
        trajectory,
        clip_warnings: env.clip_warnings(),
        updates,
        last_diagnostics: last,
    })
}
