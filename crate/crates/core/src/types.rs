//! Vocabulary of the off-beat Dec-POMDP: agents, duration-carrying actions,
//! per-agent trajectories, global transitions and whole episodes.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Dense agent index in `[0, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(pub usize);

impl AgentId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A primitive action together with the execution duration fixed when it was
/// committed. A duration of zero means the effect lands on the same step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OffBeatAction {
    pub action_id: usize,
    pub duration: usize,
}

impl OffBeatAction {
    pub fn new(action_id: usize, duration: usize) -> Self {
        Self {
            action_id,
            duration,
        }
    }

    pub fn is_instantaneous(&self) -> bool {
        self.duration == 0
    }
}

/// Integer feature vector observed by one agent (or the global state).
pub type Observation = Vec<i64>;

/// One timestep of an agent's individual trajectory. The reward is the
/// globally shared team reward for that timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: Observation,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub agent: AgentId,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn new(agent: AgentId) -> Self {
        Self {
            agent,
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    /// Serializes to the line-oriented fixture format, one timestep per
    /// line: `t obs_csv action reward`.
    pub fn to_fixture(&self) -> String {
        let mut out = String::new();
        for (t, step) in self.steps.iter().enumerate() {
            let obs: Vec<String> = step.observation.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!(
                "{} {} {} {}\n",
                t,
                obs.join(","),
                step.action,
                step.reward
            ));
        }
        out
    }

    pub fn from_fixture(agent: AgentId, text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("line {}: {}", lineno + 1, what));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(bad("expected `t obs_csv action reward`"));
            }
            let t: usize = fields[0].parse().map_err(|_| bad("bad timestep"))?;
            if t != steps.len() {
                return Err(bad("timesteps must be consecutive from 0"));
            }
            let observation = if fields[1] == "-" {
                Vec::new()
            } else {
                fields[1]
                    .split(',')
                    .map(i64::from_str)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad observation"))?
            };
            let action = fields[2].parse().map_err(|_| bad("bad action"))?;
            let reward: f64 = fields[3].parse().map_err(|_| bad("bad reward"))?;
            steps.push(StepRecord {
                observation,
                action,
                reward,
            });
        }
        Ok(Self { agent, steps })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalTransition {
    pub state: Observation,
    pub joint_action: Vec<OffBeatAction>,
    pub reward: f64,
    pub next_state: Observation,
    pub done: bool,
}

/// A committed action that contributed to a reward: who committed it and when.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Commit {
    pub agent: AgentId,
    pub time: usize,
}

/// One complete episode: the global transition list, the aligned per-agent
/// trajectories, and the environment's causal annotation of each reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub transitions: Vec<GlobalTransition>,
    pub trajectories: Vec<Trajectory>,
    /// `causes[t]` lists the commits whose effects produced the reward at `t`.
    pub causes: Vec<Vec<Commit>>,
    pub success: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.trajectories.len()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|tr| tr.reward).collect()
    }

    /// Checks the alignment invariants: every trajectory matches the global
    /// transition list in length and reward, and only the last step is done.
    pub fn validate(&self) -> Result<()> {
        let len = self.transitions.len();
        if len == 0 {
            return Err(Error::EmptyEpisode);
        }
        for traj in &self.trajectories {
            if traj.len() != len {
                return Err(Error::Invalid(format!(
                    "agent {} trajectory has length {}, expected {}",
                    traj.agent,
                    traj.len(),
                    len
                )));
            }
            for (step, tr) in traj.steps.iter().zip(&self.transitions) {
                if step.reward != tr.reward {
                    return Err(Error::Invalid(
                        "per-agent reward differs from global reward".into(),
                    ));
                }
            }
        }
        for (t, tr) in self.transitions.iter().enumerate() {
            if tr.done != (t + 1 == len) {
                return Err(Error::Invalid(format!("done flag misplaced at step {}", t)));
            }
        }
        if self.causes.len() != len {
            return Err(Error::Invalid("cause annotations misaligned".into()));
        }
        Ok(())
    }
}

/// Undiscounted sum of rewards over a trajectory.
pub fn episode_return(traj: &Trajectory) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    Ok(traj.rewards().sum())
}

/// Episode return rounded to one decimal, stored as tenths so that it can be
/// used as an exact map key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DiscreteReturn(pub i64);

impl DiscreteReturn {
    pub fn tenths(self) -> i64 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl fmt::Display for DiscreteReturn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{}{}.{}", sign, abs / 10, abs % 10)
    }
}

/// Rounds `x` to one decimal place, half away from zero.
///
/// Rounding is decided on the shortest decimal representation of `x`, so
/// `-1.45` rounds to `-1.5` even though the nearest binary double lies just
/// above it.
pub fn discretize_return(x: f64) -> Result<DiscreteReturn> {
    if !x.is_finite() {
        return Err(Error::NonFinite(x));
    }
    let text = format!("{}", x.abs());
    let (int_part, frac_part) = match text.split_once('.') {
        Some((i, f)) => (i, f),
        None => (text.as_str(), ""),
    };
    let whole: i64 = int_part
        .parse()
        .ok()
        .filter(|w: &i64| *w < i64::MAX / 10 - 1)
        .ok_or(Error::NonFinite(x))?;
    let mut digits = frac_part.bytes().map(|b| i64::from(b - b'0'));
    let tenth = digits.next().unwrap_or(0);
    let carry = i64::from(digits.next().unwrap_or(0) >= 5);
    let magnitude = whole * 10 + tenth + carry;
    Ok(DiscreteReturn(if x < 0.0 { -magnitude } else { magnitude }))
}
