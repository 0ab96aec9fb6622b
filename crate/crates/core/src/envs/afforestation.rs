use super::{check_joint_action, with_time, EnvConfig, OffBeatEnv, PendingQueue, StepOutcome};
use super::{STEP_PENALTY, SUCCESS_REWARD, UNSAFE_PENALTY};
use crate::error::Result;
use crate::types::{AgentId, Commit, Observation};

pub const NOOP: usize = 0;
pub const MOVE_NORTH: usize = 1;
pub const MOVE_SOUTH: usize = 2;
pub const PLANT: usize = 3;
pub(super) const N_ACTIONS: usize = 4;

/// Farm strip with the desert edge at row 0 and the safe zone at the
/// southern row. Each farmer owns one column and one sapling; PLANT (only on
/// the desert edge) starts a tree whose growth time is the PLANT duration.
/// The sandstorm hits on the final step: every grown tree pays its share of
/// the success reward and every farmer outside the safe zone costs its share
/// of the safety penalty.
#[derive(Debug, Clone)]
pub struct Afforestation {
    cfg: EnvConfig,
    rows: Vec<i64>,
    planted: Vec<Option<usize>>,
    grown: Vec<Option<Commit>>,
    t: usize,
    done: bool,
    pending: PendingQueue,
}

impl Afforestation {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_agents;
        let mut env = Self {
            rows: vec![0; n],
            planted: vec![None; n],
            grown: vec![None; n],
            t: 0,
            done: false,
            pending: PendingQueue::default(),
            cfg,
        };
        env.reset();
        Ok(env)
    }

    fn safe_row(&self) -> i64 {
        self.cfg.height as i64 - 1
    }
}

impl OffBeatEnv for Afforestation {
    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn reset(&mut self) -> Vec<Observation> {
        self.t = 0;
        self.done = false;
        self.pending.clear();
        self.planted.iter_mut().for_each(|p| *p = None);
        self.grown.iter_mut().for_each(|g| *g = None);
        self.rows = vec![self.safe_row(); self.cfg.n_agents];
        (0..self.cfg.n_agents)
            .map(|i| self.observation(AgentId(i)))
            .collect()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome> {
        check_joint_action(self, joint_action)?;
        let t = self.t;
        let south = self.safe_row();
        for (i, &action) in joint_action.iter().enumerate() {
            match action {
                MOVE_NORTH => self.rows[i] = (self.rows[i] - 1).max(0),
                MOVE_SOUTH => self.rows[i] = (self.rows[i] + 1).min(south),
                PLANT if self.rows[i] == 0 && self.planted[i].is_none() => {
                    self.planted[i] = Some(t);
                    self.pending
                        .push(AgentId(i), PLANT, t, self.cfg.durations[i][PLANT]);
                }
                _ => {}
            }
        }
        for tree in self.pending.resolve(t) {
            self.grown[tree.owner.index()] = Some(tree.commit());
        }
        let n = self.cfg.n_agents as f64;
        let mut reward = STEP_PENALTY;
        let mut success = false;
        let mut causes = Vec::new();
        if t == self.cfg.max_steps {
            causes = self.grown.iter().flatten().copied().collect::<Vec<_>>();
            let unsafe_agents = self.rows.iter().filter(|&&r| r != south).count();
            let storm = SUCCESS_REWARD * causes.len() as f64 / n
                - UNSAFE_PENALTY * unsafe_agents as f64 / n;
            if storm != 0.0 {
                reward = storm;
            }
            success = causes.len() == self.cfg.n_agents && unsafe_agents == 0;
            self.done = true;
        }
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
        vec![
            true,
            true,
            true,
            self.rows[i] == 0 && self.planted[i].is_none(),
        ]
    }

    /// Own position, own tree position and age (-1 when unplanted), and the
    /// sandstorm row (-1 until it arrives).
    fn observation(&self, agent: AgentId) -> Observation {
        let i = agent.index();
        let (tree_row, age) = match self.planted[i] {
            Some(p) => (0, (self.t - p) as i64),
            None => (-1, -1),
        };
        let storm = if self.t > self.cfg.max_steps { 0 } else { -1 };
        with_time(
            vec![self.rows[i], i as i64, tree_row, age, storm],
            &self.cfg,
            self.t,
        )
    }

    fn state(&self) -> Observation {
        let mut s = vec![self.t as i64];
        for (i, &r) in self.rows.iter().enumerate() {
            s.push(r);
            s.push(self.planted[i].map_or(-1, |p| p as i64));
            s.push(i64::from(self.grown[i].is_some()));
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
