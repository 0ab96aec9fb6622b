//! Deterministic grid worlds whose actions take effect after a fixed
//! per-agent, per-action execution duration.
//!
//! Every environment tracks the commits behind each reward, so a finished
//! episode carries its own ground-truth pivot annotation.

pub mod afforestation;
pub mod quarry;
pub mod stag_hunter;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use afforestation::Afforestation;
pub use quarry::Quarry;
pub use stag_hunter::StagHunter;

use crate::error::{Error, Result};
use crate::types::{
    AgentId, Commit, Episode, GlobalTransition, Observation, OffBeatAction, StepRecord, Trajectory,
};

/// Reward paid when the whole team completes the task.
pub const SUCCESS_REWARD: f64 = 10.0;
/// Reward on every step where nothing resolves.
pub const STEP_PENALTY: f64 = -0.1;
/// Penalty scale for agents caught outside the safe zone.
pub const UNSAFE_PENALTY: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    StagHunter,
    Quarry,
    Afforestation,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::StagHunter => "stag-hunter",
            EnvKind::Quarry => "quarry",
            EnvKind::Afforestation => "afforestation",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub n_agents: usize,
    pub width: usize,
    pub height: usize,
    /// Index of the final timestep; an episode has at most `max_steps + 1` steps.
    pub max_steps: usize,
    /// `durations[agent][action]` in timesteps.
    pub durations: Vec<Vec<usize>>,
    pub seed: u64,
    /// Append the global timestep to every observation.
    pub observe_time: bool,
}

impl EnvConfig {
    /// Two hunters, 15x15 grid, final step 14, SHOOT durations 14 and 6.
    pub fn stag_hunter() -> Self {
        Self {
            kind: EnvKind::StagHunter,
            n_agents: 2,
            width: 15,
            height: 15,
            max_steps: 14,
            durations: vec![vec![0, 14], vec![0, 6]],
            seed: 0,
            observe_time: false,
        }
    }

    /// The smaller two-hunter illustration: SHOOT durations 10 and 5, final step 10.
    pub fn stag_hunter_short() -> Self {
        Self {
            max_steps: 10,
            durations: vec![vec![0, 10], vec![0, 5]],
            ..Self::stag_hunter()
        }
    }

    /// Stag-Hunter with every action instantaneous.
    pub fn stag_hunter_instant() -> Self {
        Self {
            durations: vec![vec![0, 0], vec![0, 0]],
            ..Self::stag_hunter()
        }
    }

    pub fn quarry() -> Self {
        Self {
            kind: EnvKind::Quarry,
            n_agents: 2,
            width: 5,
            height: 1,
            max_steps: 10,
            durations: vec![vec![0, 0, 0, 2], vec![0, 0, 0, 4]],
            seed: 0,
            observe_time: false,
        }
    }

    pub fn afforestation() -> Self {
        Self {
            kind: EnvKind::Afforestation,
            n_agents: 2,
            width: 2,
            height: 3,
            max_steps: 10,
            durations: vec![vec![0, 0, 0, 7], vec![0, 0, 0, 3]],
            seed: 0,
            observe_time: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "stag-hunter" => Ok(Self::stag_hunter()),
            "stag-hunter-short" => Ok(Self::stag_hunter_short()),
            "stag-hunter-instant" => Ok(Self::stag_hunter_instant()),
            "quarry" => Ok(Self::quarry()),
            "afforestation" => Ok(Self::afforestation()),
            other => Err(Error::Config(format!(
                "unknown environment preset `{}`",
                other
            ))),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self.kind {
            EnvKind::StagHunter => stag_hunter::N_ACTIONS,
            EnvKind::Quarry => quarry::N_ACTIONS,
            EnvKind::Afforestation => afforestation::N_ACTIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_agents == 0 {
            return fail("at least one agent is required".into());
        }
        if self.width == 0 || self.height == 0 {
            return fail(format!("grid {}x{} is empty", self.width, self.height));
        }
        if self.durations.len() != self.n_agents {
            return fail(format!(
                "{} duration rows for {} agents",
                self.durations.len(),
                self.n_agents
            ));
        }
        for (agent, row) in self.durations.iter().enumerate() {
            if row.len() != self.n_actions() {
                return fail(format!(
                    "agent {}: {} durations for {} actions",
                    agent,
                    row.len(),
                    self.n_actions()
                ));
            }
            if let Some(d) = row.iter().find(|&&d| d > self.max_steps) {
                return fail(format!(
                    "agent {}: duration {} exceeds max steps {}",
                    agent, d, self.max_steps
                ));
            }
        }
        match self.kind {
            EnvKind::StagHunter => Ok(()),
            EnvKind::Quarry => {
                if self.width < 3 {
                    return fail("quarry corridor needs width >= 3".into());
                }
                if self
                    .durations
                    .iter()
                    .any(|r| r[..3].iter().any(|&d| d != 0))
                {
                    return fail("quarry movement actions must be instantaneous".into());
                }
                Ok(())
            }
            EnvKind::Afforestation => {
                if self.height < 2 || self.width < self.n_agents {
                    return fail("afforestation needs height >= 2 and one column per agent".into());
                }
                if self
                    .durations
                    .iter()
                    .any(|r| r[..3].iter().any(|&d| d != 0))
                {
                    return fail("afforestation movement actions must be instantaneous".into());
                }
                Ok(())
            }
        }
    }

    pub fn build(&self) -> Result<Box<dyn OffBeatEnv>> {
        self.validate()?;
        Ok(match self.kind {
            EnvKind::StagHunter => Box::new(StagHunter::new(self.clone())?),
            EnvKind::Quarry => Box::new(Quarry::new(self.clone())?),
            EnvKind::Afforestation => Box::new(Afforestation::new(self.clone())?),
        })
    }
}

impl FromStr for EnvConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::preset(s)
    }
}

/// A committed durable action waiting for its resolve step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingEffect {
    pub owner: AgentId,
    pub action_id: usize,
    pub commit_time: usize,
    pub resolve_time: usize,
}

impl PendingEffect {
    pub fn commit(&self) -> Commit {
        Commit {
            agent: self.owner,
            time: self.commit_time,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct PendingQueue {
    effects: Vec<PendingEffect>,
}

impl PendingQueue {
    pub fn clear(&mut self) {
        self.effects.clear();
    }

    pub fn push(&mut self, owner: AgentId, action_id: usize, commit_time: usize, duration: usize) {
        self.effects.push(PendingEffect {
            owner,
            action_id,
            commit_time,
            resolve_time: commit_time + duration,
        });
    }

    /// Removes and returns every effect resolving at `t`.
    pub fn resolve(&mut self, t: usize) -> Vec<PendingEffect> {
        let (due, rest): (Vec<_>, Vec<_>) = self.effects.iter().partition(|e| e.resolve_time == t);
        self.effects = rest;
        due
    }

    pub fn iter(&self) -> impl Iterator<Item = &PendingEffect> {
        self.effects.iter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    pub reward: f64,
    pub done: bool,
    /// Commits whose effects produced this step's reward.
    pub causes: Vec<Commit>,
    /// Set on the final step when the team completed the task.
    pub success: bool,
}

/// Environment contract of the off-beat Dec-POMDP.
pub trait OffBeatEnv: Send {
    fn config(&self) -> &EnvConfig;

    fn n_agents(&self) -> usize {
        self.config().n_agents
    }

    fn n_actions(&self) -> usize {
        self.config().n_actions()
    }

    fn duration(&self, agent: AgentId, action: usize) -> usize {
        self.config().durations[agent.index()][action]
    }

    /// Restores the deterministic initial state and returns the joint observation.
    fn reset(&mut self) -> Vec<Observation>;

    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome>;

    /// Actions the agent may currently select; NOOP (id 0) is always available.
    fn available_actions(&self, agent: AgentId) -> Vec<bool>;

    fn observation(&self, agent: AgentId) -> Observation;

    fn state(&self) -> Observation;

    /// Current timestep.
    fn time(&self) -> usize;

    fn is_done(&self) -> bool;
}

pub(crate) fn check_joint_action(env: &dyn OffBeatEnv, joint_action: &[usize]) -> Result<()> {
    if env.is_done() {
        return Err(Error::EpisodeDone);
    }
    if joint_action.len() != env.n_agents() {
        return Err(Error::Invalid(format!(
            "joint action has {} entries for {} agents",
            joint_action.len(),
            env.n_agents()
        )));
    }
    for (agent, &action) in joint_action.iter().enumerate() {
        if action >= env.n_actions() {
            return Err(Error::UnknownAction { agent, action });
        }
    }
    Ok(())
}

pub(crate) fn with_time(mut obs: Observation, cfg: &EnvConfig, t: usize) -> Observation {
    if cfg.observe_time {
        obs.push(t as i64);
    }
    obs
}

/// Plays one episode, asking `policy(agent, t, observation, available)` for
/// each agent's action, and records it with full cause annotations.
pub fn rollout<F>(env: &mut dyn OffBeatEnv, mut policy: F) -> Result<Episode>
where
    F: FnMut(AgentId, usize, &Observation, &[bool]) -> usize,
{
    let n = env.n_agents();
    let mut observations = env.reset();
    let mut trajectories: Vec<Trajectory> = (0..n).map(|i| Trajectory::new(AgentId(i))).collect();
    let mut transitions = Vec::new();
    let mut causes = Vec::new();
    let mut success = false;
    while !env.is_done() {
        let t = env.time();
        let state = env.state();
        let joint: Vec<usize> = (0..n)
            .map(|i| {
                let avail = env.available_actions(AgentId(i));
                policy(AgentId(i), t, &observations[i], &avail)
            })
            .collect();
        let outcome = env.step(&joint)?;
        for (i, traj) in trajectories.iter_mut().enumerate() {
            traj.steps.push(StepRecord {
                observation: std::mem::take(&mut observations[i]),
                action: joint[i],
                reward: outcome.reward,
            });
        }
        transitions.push(GlobalTransition {
            state,
            joint_action: joint
                .iter()
                .enumerate()
                .map(|(i, &a)| OffBeatAction::new(a, env.duration(AgentId(i), a)))
                .collect(),
            reward: outcome.reward,
            next_state: env.state(),
            done: outcome.done,
        });
        causes.push(outcome.causes);
        success = outcome.success;
        observations = outcome.observations;
    }
    Ok(Episode {
        transitions,
        trajectories,
        causes,
        success,
    })
}

/// Ground-truth pivots of one reward: the commits that caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PivotTruth {
    pub step: usize,
    pub commits: Vec<Commit>,
}

impl PivotTruth {
    /// Commit time of the given agent's contributing action, if any.
    pub fn for_agent(&self, agent: AgentId) -> Option<usize> {
        self.commits
            .iter()
            .filter(|c| c.agent == agent)
            .map(|c| c.time)
            .max()
    }

    /// The most recent contributing commit, or the reward step itself when
    /// nothing durable caused the reward.
    pub fn recency_pivot(&self) -> usize {
        self.commits
            .iter()
            .map(|c| c.time)
            .max()
            .unwrap_or(self.step)
    }

    /// True when the reward was caused by an action committed at an earlier step.
    pub fn is_off_beat(&self) -> bool {
        self.recency_pivot() < self.step
    }
}

/// Maps every nonzero-reward step of a finished episode to the commits that
/// produced it. Zero-reward steps are absent.
pub fn ground_truth_pivot(episode: &Episode) -> BTreeMap<usize, PivotTruth> {
    episode
        .transitions
        .iter()
        .zip(&episode.causes)
        .enumerate()
        .filter(|(_, (tr, _))| tr.reward != 0.0)
        .map(|(step, (_, causes))| {
            (
                step,
                PivotTruth {
                    step,
                    commits: causes.clone(),
                },
            )
        })
        .collect()
}
