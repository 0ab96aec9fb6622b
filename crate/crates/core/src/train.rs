//! Reward redistribution, TD targets and tabular IQL/VDN training.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{ground_truth_pivot, EnvConfig, OffBeatEnv};
use crate::error::{Error, Result};
use crate::memory::{AfterstateKey, KeyMode, MemoryStore, DEFAULT_PATH_CAP};
use crate::replay::ReplayBuffer;
use crate::search::{
    search_pivot_timesteps, PivotMap, Scheme, SearchCache, SearchConfig, TraceRow,
};
use crate::types::{
    discretize_return, episode_return, AgentId, Commit, DiscreteReturn, Episode, GlobalTransition,
    OffBeatAction, StepRecord, Trajectory,
};

/// Rewards before and after redistribution, with the pivot map used.
#[derive(Debug, Clone, PartialEq)]
pub struct RedistributedEpisode {
    pub original: Vec<f64>,
    pub redistributed: Vec<f64>,
    pub kappa: PivotMap,
}

/// Moves every reward with an earlier pivot back to that pivot, leaving
/// `beta` times the reward behind. Steps are processed in increasing order
/// and a later reward sharing a pivot overwrites an earlier one.
pub fn redistribute(rewards: &[f64], kappa: &PivotMap, beta: f64) -> Result<RedistributedEpisode> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Config(format!("beta {} outside (0, 1)", beta)));
    }
    let mut r = rewards.to_vec();
    for (t, e) in kappa.iter() {
        if e > t || t >= r.len() {
            return Err(Error::InvalidPivot { step: t, pivot: e });
        }
        if e < t {
            r[e] = r[t];
            r[t] *= beta;
        }
    }
    Ok(RedistributedEpisode {
        original: rewards.to_vec(),
        redistributed: r,
        kappa: kappa.clone(),
    })
}

/// `next_values[t]` is the bootstrap value of the state after step `t`;
/// the final step is terminal and never bootstraps.
pub fn one_step_targets(rewards: &[f64], next_values: &[f64], gamma: f64) -> Vec<f64> {
    let last = rewards.len().saturating_sub(1);
    rewards
        .iter()
        .enumerate()
        .map(|(t, &r)| {
            if t == last {
                r
            } else {
                r + gamma * next_values[t]
            }
        })
        .collect()
}

/// Forward-view n-step return, truncated at the end of the episode.
pub fn nstep_targets(rewards: &[f64], next_values: &[f64], gamma: f64, n: usize) -> Vec<f64> {
    let len = rewards.len();
    (0..len)
        .map(|t| {
            let end = (t + n).min(len);
            let mut g = 0.0;
            let mut disc = 1.0;
            for &r in &rewards[t..end] {
                g += disc * r;
                disc *= gamma;
            }
            if end < len {
                g += disc * next_values[end - 1];
            }
            g
        })
        .collect()
}

/// Forward-view λ-return.
pub fn tdlambda_targets(rewards: &[f64], next_values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let len = rewards.len();
    let mut out = vec![0.0; len];
    let mut g = 0.0;
    for t in (0..len).rev() {
        g = if t + 1 == len {
            rewards[t]
        } else {
            rewards[t] + gamma * ((1.0 - lambda) * next_values[t] + lambda * g)
        };
        out[t] = g;
    }
    out
}

pub fn vdn_mix(q_values: &[f64]) -> f64 {
    q_values.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetEstimator {
    OneStep,
    NStep(usize),
    TdLambda(f64),
}

impl TargetEstimator {
    pub fn targets(&self, rewards: &[f64], next_values: &[f64], gamma: f64) -> Vec<f64> {
        match *self {
            TargetEstimator::OneStep => one_step_targets(rewards, next_values, gamma),
            TargetEstimator::NStep(n) => nstep_targets(rewards, next_values, gamma, n),
            TargetEstimator::TdLambda(l) => tdlambda_targets(rewards, next_values, gamma, l),
        }
    }
}

impl fmt::Display for TargetEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetEstimator::OneStep => f.write_str("1step"),
            TargetEstimator::NStep(n) => write!(f, "nstep:{}", n),
            TargetEstimator::TdLambda(l) => write!(f, "tdlambda:{}", l),
        }
    }
}

impl FromStr for TargetEstimator {
    type Err = Error;

    /// Accepts `1step`, `legem` (the one-step target on redistributed
    /// rewards), `nstep:N` and `tdlambda:L`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown target estimator `{}`", s));
        match s.split_once(':') {
            None if s == "1step" || s == "legem" => Ok(TargetEstimator::OneStep),
            Some(("nstep", n)) => match n.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(TargetEstimator::NStep(n)),
                _ => Err(bad()),
            },
            Some(("tdlambda", l)) => match l.parse::<f64>() {
                Ok(l) if (0.0..=1.0).contains(&l) => Ok(TargetEstimator::TdLambda(l)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Learner {
    Iql,
    Vdn,
}

impl FromStr for Learner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iql" => Ok(Learner::Iql),
            "vdn" => Ok(Learner::Vdn),
            other => Err(Error::Config(format!("unknown learner `{}`", other))),
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Learner::Iql => "iql",
            Learner::Vdn => "vdn",
        })
    }
}

/// Per-agent action values keyed by a digest of the agent's
/// action-observation history, with a frozen target copy.
#[derive(Debug, Clone)]
pub struct QTable {
    n_actions: usize,
    index: HashMap<u64, usize>,
    values: Vec<f64>,
    target: Vec<f64>,
}

impl QTable {
    pub fn new(n_actions: usize) -> Self {
        Self {
            n_actions,
            index: HashMap::new(),
            values: Vec::new(),
            target: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, history: u64, action: usize) -> f64 {
        self.index
            .get(&history)
            .map_or(0.0, |&row| self.values[row + action])
    }

    pub fn target(&self, history: u64, action: usize) -> f64 {
        match self.index.get(&history) {
            Some(&row) if row < self.target.len() => self.target[row + action],
            _ => 0.0,
        }
    }

    /// Largest target value over the actions set in `avail`.
    pub fn target_max(&self, history: u64, avail: u64) -> f64 {
        (0..self.n_actions)
            .filter(|a| avail >> a & 1 == 1)
            .map(|a| self.target(history, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// First available action with the largest value.
    pub fn greedy(&self, history: u64, avail: u64) -> usize {
        let mut best = (f64::NEG_INFINITY, 0);
        for a in (0..self.n_actions).filter(|a| avail >> a & 1 == 1) {
            let q = self.get(history, a);
            if q > best.0 {
                best = (q, a);
            }
        }
        best.1
    }

    pub fn add(&mut self, history: u64, action: usize, delta: f64) {
        let next = self.values.len();
        let row = *self.index.entry(history).or_insert(next);
        if row == next {
            self.values.resize(next + self.n_actions, 0.0);
        }
        self.values[row + action] += delta;
    }

    pub fn set(&mut self, history: u64, action: usize, value: f64) {
        let cur = self.get(history, action);
        self.add(history, action, value - cur);
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.values);
    }

    /// `history action value` lines sorted by history then action.
    pub fn dump(&self) -> String {
        let mut rows: Vec<(u64, usize)> = self.index.iter().map(|(&h, &r)| (h, r)).collect();
        rows.sort_unstable();
        let mut out = String::new();
        for (h, row) in rows {
            for a in 0..self.n_actions {
                let _ = writeln!(out, "{:016x} {} {:?}", h, a, self.values[row + a]);
            }
        }
        out
    }
}

/// Digest of the history `(o^0, u^0, ..., o^t)` from the digest of
/// `(o^0, ..., o^{t-1})`, the last action and the new observation.
pub fn extend_history(prev: Option<(u64, usize)>, obs: &[i64]) -> u64 {
    let mut h = DefaultHasher::new();
    prev.hash(&mut h);
    obs.hash(&mut h);
    h.finish()
}

fn mask(avail: &[bool]) -> u64 {
    avail
        .iter()
        .enumerate()
        .filter(|(_, &a)| a)
        .fold(0, |m, (i, _)| m | 1 << i)
}

/// An episode as stored for training.
#[derive(Debug, Clone)]
pub struct StoredEpisode {
    pub episode: Episode,
    /// `histories[i][t]`: agent `i`'s history digest at step `t`.
    pub histories: Vec<Vec<u64>>,
    pub actions: Vec<Vec<usize>>,
    pub avail: Vec<Vec<u64>>,
    pub rewards: Vec<f64>,
    pub keys: Vec<Vec<AfterstateKey>>,
    pub returns: Vec<DiscreteReturn>,
}

impl StoredEpisode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub learner: Learner,
    pub target: TargetEstimator,
    /// Pivot search scheme; `None` trains on raw rewards.
    pub memory: Option<Scheme>,
    pub gamma: f64,
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_update_interval: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_anneal_steps: usize,
    pub eval_epsilon: f64,
    pub key_mode: KeyMode,
    pub path_cap: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learner: Learner::Vdn,
            target: TargetEstimator::OneStep,
            memory: Some(Scheme::One),
            gamma: 0.99,
            beta: 1e-5,
            lr: 0.5,
            batch_size: 32,
            buffer_capacity: 5000,
            target_update_interval: 200,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal_steps: 50_000,
            eval_epsilon: 0.0,
            key_mode: KeyMode::Exact,
            path_cap: DEFAULT_PATH_CAP,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1)");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail("beta must lie in (0, 1)");
        }
        if !(self.lr > 0.0 && self.lr <= 1.0) {
            return fail("learning rate must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return fail("batch size must be positive and fit in the buffer");
        }
        if self.target_update_interval == 0 {
            return fail("target update interval must be positive");
        }
        for e in [self.eps_start, self.eps_end, self.eval_epsilon] {
            if !(0.0..=1.0).contains(&e) {
                return fail("epsilon values must lie in [0, 1]");
            }
        }
        if let KeyMode::SimHash { bits } = self.key_mode {
            if bits == 0 || bits > 64 {
                return fail("simhash width must lie in 1..=64");
            }
        }
        Ok(())
    }

    /// Linear anneal from `eps_start` to `eps_end`, constant afterwards.
    pub fn epsilon(&self, env_steps: usize) -> f64 {
        if self.eps_anneal_steps == 0 || env_steps >= self.eps_anneal_steps {
            return self.eps_end;
        }
        let frac = env_steps as f64 / self.eps_anneal_steps as f64;
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// One evaluation point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub seed: u64,
    pub mean_eval_return: f64,
    pub success_rate: f64,
    /// Share of searched rewards since the previous row whose pivot matched
    /// the environment's ground truth.
    pub pivot_accuracy: Option<f64>,
}

/// Searched-reward tallies against the ground-truth pivot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PivotTally {
    pub searched: usize,
    pub correct: usize,
    pub off_beat: usize,
    pub off_beat_correct: usize,
}

impl PivotTally {
    pub fn accuracy(&self) -> Option<f64> {
        (self.searched > 0).then(|| self.correct as f64 / self.searched as f64)
    }

    pub fn off_beat_accuracy(&self) -> Option<f64> {
        (self.off_beat > 0).then(|| self.off_beat_correct as f64 / self.off_beat as f64)
    }

    /// Scores `kappa` against the ground truth of `episode`.
    pub fn record(&mut self, episode: &Episode, kappa: &PivotMap) {
        let truth = ground_truth_pivot(episode);
        for (t, e) in kappa.iter() {
            let Some(p) = truth.get(&t) else { continue };
            let hit = p.recency_pivot() == e;
            self.searched += 1;
            self.correct += usize::from(hit);
            if p.is_off_beat() {
                self.off_beat += 1;
                self.off_beat_correct += usize::from(hit);
            }
        }
    }
}

/// Runs one seed of off-beat MARL training.
pub struct Trainer {
    cfg: TrainerConfig,
    env: Box<dyn OffBeatEnv>,
    seed: u64,
    n_agents: usize,
    n_actions: usize,
    q: Vec<QTable>,
    buffer: ReplayBuffer<StoredEpisode>,
    memory: Option<MemoryStore>,
    cache: SearchCache,
    rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    env_steps: usize,
    episodes: usize,
    train_steps: usize,
    tally: PivotTally,
    trace: Option<Vec<TraceRow>>,
    cap_overflows: usize,
}

impl Trainer {
    pub fn new(env_cfg: &EnvConfig, cfg: TrainerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let env = env_cfg.build()?;
        let n_agents = env.n_agents();
        let n_actions = env.n_actions();
        let memory = match cfg.memory {
            Some(_) => Some(MemoryStore::new(
                n_agents,
                env_cfg.max_steps + 1,
                n_actions,
                cfg.key_mode,
                seed,
            )?),
            None => None,
        };
        Ok(Self {
            q: (0..n_agents).map(|_| QTable::new(n_actions)).collect(),
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            memory,
            cache: SearchCache::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            eval_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_E7A1),
            env,
            seed,
            n_agents,
            n_actions,
            env_steps: 0,
            episodes: 0,
            train_steps: 0,
            tally: PivotTally::default(),
            trace: None,
            cap_overflows: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    pub fn q_tables(&self) -> &[QTable] {
        &self.q
    }

    pub fn buffer(&self) -> &ReplayBuffer<StoredEpisode> {
        &self.buffer
    }

    pub fn memory(&self) -> Option<&MemoryStore> {
        self.memory.as_ref()
    }

    /// Pivot tally since the last call.
    pub fn take_tally(&mut self) -> PivotTally {
        std::mem::take(&mut self.tally)
    }

    /// Records a search trace for every collected episode from now on.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon(self.env_steps)
    }

    fn play(&mut self, epsilon: f64, eval: bool) -> Result<StoredEpisode> {
        let n = self.n_agents;
        let mut obs = self.env.reset();
        let mut histories: Vec<Vec<u64>> = vec![Vec::new(); n];
        let mut actions: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut avail: Vec<Vec<u64>> = vec![Vec::new(); n];
        let mut trajectories: Vec<Trajectory> =
            (0..n).map(|i| Trajectory::new(AgentId(i))).collect();
        let mut transitions = Vec::new();
        let mut causes: Vec<Vec<Commit>> = Vec::new();
        let mut rewards = Vec::new();
        let mut success = false;
        while !self.env.is_done() {
            let state = self.env.state();
            let mut joint = Vec::with_capacity(n);
            for i in 0..n {
                let prev = actions[i]
                    .last()
                    .map(|&a| (*histories[i].last().unwrap(), a));
                let h = extend_history(prev, &obs[i]);
                let m = mask(&self.env.available_actions(AgentId(i)));
                let rng = if eval {
                    &mut self.eval_rng
                } else {
                    &mut self.rng
                };
                let a = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                    let choices: Vec<usize> =
                        (0..self.n_actions).filter(|a| m >> a & 1 == 1).collect();
                    choices[rng.random_range(0..choices.len())]
                } else {
                    self.q[i].greedy(h, m)
                };
                histories[i].push(h);
                avail[i].push(m);
                actions[i].push(a);
                joint.push(a);
            }
            let out = self.env.step(&joint)?;
            for (i, traj) in trajectories.iter_mut().enumerate() {
                traj.steps.push(StepRecord {
                    observation: std::mem::take(&mut obs[i]),
                    action: joint[i],
                    reward: out.reward,
                });
            }
            transitions.push(GlobalTransition {
                state,
                joint_action: joint
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| OffBeatAction::new(a, self.env.duration(AgentId(i), a)))
                    .collect(),
                reward: out.reward,
                next_state: self.env.state(),
                done: out.done,
            });
            rewards.push(out.reward);
            causes.push(out.causes);
            success = out.success;
            obs = out.observations;
        }
        let returns = trajectories
            .iter()
            .map(|t| episode_return(t).and_then(discretize_return))
            .collect::<Result<Vec<_>>>()?;
        let episode = Episode {
            transitions,
            trajectories,
            causes,
            success,
        };
        Ok(StoredEpisode {
            episode,
            histories,
            actions,
            avail,
            rewards,
            keys: Vec::new(),
            returns,
        })
    }

    /// Plays one exploratory episode, stores it, updates memory and trains
    /// once the buffer holds a batch. Returns the episode.
    pub fn collect(&mut self) -> Result<&StoredEpisode> {
        let eps = self.epsilon();
        let mut stored = self.play(eps, false)?;
        if let Some(mem) = self.memory.as_mut() {
            stored.keys = mem.update(&stored.episode.trajectories)?;
            if let (Some(rows), Some(scheme)) = (self.trace.as_mut(), self.cfg.memory) {
                let cfg = SearchConfig {
                    scheme,
                    path_cap: self.cfg.path_cap,
                };
                let traced = search_pivot_timesteps(
                    mem,
                    &stored.keys,
                    &stored.returns,
                    &stored.rewards,
                    cfg,
                    Some(&mut self.cache),
                    Some(rows),
                );
                match traced {
                    Ok(_) | Err(Error::PathCapExceeded { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        self.env_steps += stored.len();
        self.episodes += 1;
        self.buffer.insert(stored);
        if self.buffer.len() >= self.cfg.batch_size {
            self.train_step()?;
        }
        Ok(self.buffer.newest().unwrap())
    }

    /// Pivot map of a stored episode under the current memory; identity when
    /// memory is off.
    ///
    /// An episode whose search enumerates more paths than the configured cap
    /// is trained on its raw rewards and counted in [`Trainer::cap_overflows`].
    pub fn pivots(&mut self, ep: &StoredEpisode) -> Result<PivotMap> {
        let found = match (self.memory.as_ref(), self.cfg.memory) {
            (Some(mem), Some(scheme)) => search_pivot_timesteps(
                mem,
                &ep.keys,
                &ep.returns,
                &ep.rewards,
                SearchConfig {
                    scheme,
                    path_cap: self.cfg.path_cap,
                },
                Some(&mut self.cache),
                None,
            ),
            _ => return Ok(PivotMap::identity(&ep.rewards)),
        };
        match found {
            Err(Error::PathCapExceeded { .. }) => {
                self.cap_overflows += 1;
                Ok(PivotMap::identity(&ep.rewards))
            }
            other => other,
        }
    }

    pub fn cap_overflows(&self) -> usize {
        self.cap_overflows
    }

    /// Training targets of one stored episode under the current tables.
    /// Returns `(targets per agent, kappa)`; VDN yields one shared row.
    pub fn targets(&mut self, ep: &StoredEpisode) -> Result<(Vec<Vec<f64>>, PivotMap)> {
        let kappa = self.pivots(ep)?;
        let rewards = if self.cfg.memory.is_some() {
            redistribute(&ep.rewards, &kappa, self.cfg.beta)?.redistributed
        } else {
            ep.rewards.clone()
        };
        let len = ep.len();
        let next_value = |q: &QTable, i: usize, t: usize| {
            if t + 1 < len {
                q.target_max(ep.histories[i][t + 1], ep.avail[i][t + 1])
            } else {
                0.0
            }
        };
        let rows = match self.cfg.learner {
            Learner::Vdn => {
                let v: Vec<f64> = (0..len)
                    .map(|t| {
                        (0..self.n_agents)
                            .map(|i| next_value(&self.q[i], i, t))
                            .sum()
                    })
                    .collect();
                vec![self.cfg.target.targets(&rewards, &v, self.cfg.gamma)]
            }
            Learner::Iql => (0..self.n_agents)
                .map(|i| {
                    let v: Vec<f64> = (0..len).map(|t| next_value(&self.q[i], i, t)).collect();
                    self.cfg.target.targets(&rewards, &v, self.cfg.gamma)
                })
                .collect(),
        };
        Ok((rows, kappa))
    }

    /// One TD update over a sampled batch of episodes.
    pub fn train_step(&mut self) -> Result<()> {
        let buffer = std::mem::replace(
            &mut self.buffer,
            ReplayBuffer::new(self.cfg.buffer_capacity),
        );
        let result = self.train_on(&buffer);
        self.buffer = buffer;
        result?;
        self.train_steps += 1;
        if self
            .train_steps
            .is_multiple_of(self.cfg.target_update_interval)
        {
            self.sync_targets();
        }
        Ok(())
    }

    #[allow(clippy::needless_range_loop)]
    fn train_on(&mut self, buffer: &ReplayBuffer<StoredEpisode>) -> Result<()> {
        for ep in buffer.sample(self.cfg.batch_size, &mut self.rng)? {
            let (targets, kappa) = self.targets(ep)?;
            if self.cfg.memory.is_some() {
                self.tally.record(&ep.episode, &kappa);
            }
            let lr = self.cfg.lr;
            for t in 0..ep.len() {
                match self.cfg.learner {
                    Learner::Vdn => {
                        let chosen: Vec<f64> = (0..self.n_agents)
                            .map(|i| self.q[i].get(ep.histories[i][t], ep.actions[i][t]))
                            .collect();
                        let delta = targets[0][t] - vdn_mix(&chosen);
                        for i in 0..self.n_agents {
                            self.q[i].add(ep.histories[i][t], ep.actions[i][t], lr * delta);
                        }
                    }
                    Learner::Iql => {
                        for i in 0..self.n_agents {
                            let (h, a) = (ep.histories[i][t], ep.actions[i][t]);
                            let delta = targets[i][t] - self.q[i].get(h, a);
                            self.q[i].add(h, a, lr * delta);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sync_targets(&mut self) {
        for q in &mut self.q {
            q.sync_target();
        }
    }

    /// Plays `n` evaluation episodes; returns mean return and success rate.
    pub fn evaluate(&mut self, n: usize) -> Result<(f64, f64)> {
        let mut total = 0.0;
        let mut wins = 0;
        for _ in 0..n {
            let ep = self.play(self.cfg.eval_epsilon, true)?;
            total += ep.rewards.iter().sum::<f64>();
            wins += usize::from(ep.episode.success);
        }
        Ok((total / n as f64, wins as f64 / n as f64))
    }

    /// Trains for `total_steps` environment steps, evaluating at step 0 and
    /// after every `eval_interval` steps, and once more at the end.
    pub fn run<F: FnMut(&MetricsRow)>(
        &mut self,
        total_steps: usize,
        eval_interval: usize,
        eval_episodes: usize,
        mut on_eval: F,
    ) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        let mut next_eval = 0;
        loop {
            if self.env_steps >= next_eval || self.env_steps >= total_steps {
                let (ret, success) = self.evaluate(eval_episodes)?;
                let tally = self.take_tally();
                let row = MetricsRow {
                    step: self.env_steps,
                    seed: self.seed,
                    mean_eval_return: ret,
                    success_rate: success,
                    pivot_accuracy: tally.accuracy(),
                };
                on_eval(&row);
                rows.push(row);
                while next_eval <= self.env_steps {
                    next_eval += eval_interval.max(1);
                }
            }
            if self.env_steps >= total_steps {
                break;
            }
            self.collect()?;
        }
        Ok(rows)
    }

    /// Deterministic text checkpoint of the Q tables.
    pub fn checkpoint(&self) -> String {
        let mut out = String::new();
        for (i, q) in self.q.iter().enumerate() {
            let _ = writeln!(out, "agent {} {}", i, q.len());
            out.push_str(&q.dump());
        }
        out
    }
}

/// Explicit finite MDP over joint actions, for checking the off-beat
/// Bellman operator.
#[derive(Debug, Clone)]
pub struct ExplicitMdp {
    pub n_states: usize,
    pub n_joint: usize,
    /// `transitions[s][u][s2]`
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][u]`
    pub rewards: Vec<Vec<f64>>,
}

impl ExplicitMdp {
    /// Random MDP with `n_agents` agents of `n_actions` actions each.
    pub fn random<R: Rng>(n_states: usize, n_agents: usize, n_actions: usize, rng: &mut R) -> Self {
        let n_joint = n_actions.pow(n_agents as u32);
        let transitions = (0..n_states)
            .map(|_| {
                (0..n_joint)
                    .map(|_| {
                        let w: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>()).collect();
                        let z: f64 = w.iter().sum();
                        w.iter().map(|x| x / z).collect()
                    })
                    .collect()
            })
            .collect();
        let rewards = (0..n_states)
            .map(|_| (0..n_joint).map(|_| rng.random_range(-1.0..10.0)).collect())
            .collect();
        Self {
            n_states,
            n_joint,
            transitions,
            rewards,
        }
    }

    /// Reward table after redistribution: the `(s, u)` pairs are read in
    /// row-major order as one reward sequence and `kappa` moves rewards
    /// between positions of that sequence.
    pub fn redistributed_rewards(&self, kappa: &PivotMap, beta: f64) -> Result<Vec<Vec<f64>>> {
        let flat: Vec<f64> = self.rewards.iter().flatten().copied().collect();
        let r = redistribute(&flat, kappa, beta)?.redistributed;
        Ok(r.chunks(self.n_joint).map(<[f64]>::to_vec).collect())
    }
}

/// `(ΓQ)(s,u) = R̂(s,u) + γ Σ_s' P(s'|s,u) max_u' Q(s',u')`.
pub fn offbeat_bellman_apply(
    q: &[Vec<f64>],
    mdp: &ExplicitMdp,
    rewards: &[Vec<f64>],
    gamma: f64,
) -> Vec<Vec<f64>> {
    let v: Vec<f64> = q
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_joint)
                .map(|u| {
                    let ev: f64 = mdp.transitions[s][u]
                        .iter()
                        .zip(&v)
                        .map(|(p, x)| p * x)
                        .sum();
                    rewards[s][u] + gamma * ev
                })
                .collect()
        })
        .collect()
}

pub fn sup_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
