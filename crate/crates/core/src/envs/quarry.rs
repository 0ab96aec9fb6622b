use super::{check_joint_action, with_time, EnvConfig, OffBeatEnv, PendingQueue, StepOutcome};
use super::{STEP_PENALTY, SUCCESS_REWARD, UNSAFE_PENALTY};
use crate::error::Result;
use crate::types::{AgentId, Commit, Observation};

pub const NOOP: usize = 0;
pub const MOVE_LEFT: usize = 1;
pub const MOVE_RIGHT: usize = 2;
pub const INSTALL: usize = 3;
pub(super) const N_ACTIONS: usize = 4;

/// One-dimensional quarry corridor. The quarry sits in the middle, the two
/// end cells are the safe zones, and agents start in alternating safe zones.
/// INSTALL (only at the quarry, once per agent) arms an explosive that
/// detonates after the agent's INSTALL duration. The first detonation ends
/// the episode: each detonating explosive pays its share of the success
/// reward and each agent outside a safe zone costs its share of the
/// safety penalty.
#[derive(Debug, Clone)]
pub struct Quarry {
    cfg: EnvConfig,
    quarry: i64,
    positions: Vec<i64>,
    installed: Vec<Option<usize>>,
    t: usize,
    done: bool,
    pending: PendingQueue,
}

impl Quarry {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_agents;
        let mut env = Self {
            quarry: (cfg.width / 2) as i64,
            positions: vec![0; n],
            installed: vec![None; n],
            t: 0,
            done: false,
            pending: PendingQueue::default(),
            cfg,
        };
        env.reset();
        Ok(env)
    }

    fn start(&self, agent: usize) -> i64 {
        if agent.is_multiple_of(2) {
            0
        } else {
            self.cfg.width as i64 - 1
        }
    }

    fn is_safe(&self, pos: i64) -> bool {
        pos == 0 || pos == self.cfg.width as i64 - 1
    }
}

impl OffBeatEnv for Quarry {
    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn reset(&mut self) -> Vec<Observation> {
        self.t = 0;
        self.done = false;
        self.pending.clear();
        self.installed.iter_mut().for_each(|e| *e = None);
        self.positions = (0..self.cfg.n_agents).map(|i| self.start(i)).collect();
        (0..self.cfg.n_agents)
            .map(|i| self.observation(AgentId(i)))
            .collect()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome> {
        check_joint_action(self, joint_action)?;
        let t = self.t;
        let last = self.cfg.width as i64 - 1;
        for (i, &action) in joint_action.iter().enumerate() {
            match action {
                MOVE_LEFT => self.positions[i] = (self.positions[i] - 1).max(0),
                MOVE_RIGHT => self.positions[i] = (self.positions[i] + 1).min(last),
                INSTALL if self.positions[i] == self.quarry && self.installed[i].is_none() => {
                    let d = self.cfg.durations[i][INSTALL];
                    self.installed[i] = Some(t + d);
                    self.pending.push(AgentId(i), INSTALL, t, d);
                }
                _ => {}
            }
        }
        let blasts = self.pending.resolve(t);
        let n = self.cfg.n_agents as f64;
        let mut reward = STEP_PENALTY;
        let mut success = false;
        let mut causes: Vec<Commit> = Vec::new();
        if !blasts.is_empty() {
            let unsafe_agents = self.positions.iter().filter(|&&p| !self.is_safe(p)).count();
            reward = SUCCESS_REWARD * blasts.len() as f64 / n
                - UNSAFE_PENALTY * unsafe_agents as f64 / n;
            success = blasts.len() == self.cfg.n_agents && unsafe_agents == 0;
            causes = blasts.iter().map(|e| e.commit()).collect();
        }
        self.done = !blasts.is_empty() || t == self.cfg.max_steps;
        self.t += 1;
        Ok(StepOutcome {
            observations: (0..self.cfg.n_agents)
                .map(|i| self.observation(AgentId(i)))
                .collect(),
            reward,
            done: self.done,
            causes,
            success,
        })
    }

    fn available_actions(&self, agent: AgentId) -> Vec<bool> {
        let i = agent.index();
        let can_install = self.positions[i] == self.quarry && self.installed[i].is_none();
        vec![true, true, true, can_install]
    }

    /// Own position, quarry position, own explosive position and the steps
    /// left before it detonates (-1 when not armed).
    fn observation(&self, agent: AgentId) -> Observation {
        let i = agent.index();
        let (charge_pos, timer) = match self.installed[i] {
            Some(at) if at >= self.t => (self.quarry, (at - self.t) as i64),
            _ => (-1, -1),
        };
        with_time(
            vec![self.positions[i], self.quarry, charge_pos, timer],
            &self.cfg,
            self.t,
        )
    }

    fn state(&self) -> Observation {
        let mut s = vec![self.t as i64];
        for (i, &p) in self.positions.iter().enumerate() {
            s.push(p);
            s.push(self.installed[i].map_or(-1, |at| at as i64));
        }
        s
    }

    fn time(&self) -> usize {
        self.t
    }

    fn is_done(&self) -> bool {
        self.done
    }
}
