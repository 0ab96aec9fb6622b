use super::{check_joint_action, with_time, EnvConfig, OffBeatEnv, PendingQueue, StepOutcome};
use super::{STEP_PENALTY, SUCCESS_REWARD};
use crate::error::Result;
use crate::types::{AgentId, Observation};

pub const NOOP: usize = 0;
pub const SHOOT: usize = 1;
pub(super) const N_ACTIONS: usize = 2;

/// Stationary hunters, each holding one arrow whose flight time is the SHOOT
/// duration. The stag is caught only when every arrow lands on the same
/// step; if some but not all arrows land together the stag escapes and the
/// team is paid in proportion to the arrows that hit.
#[derive(Debug, Clone)]
pub struct StagHunter {
    cfg: EnvConfig,
    positions: Vec<(i64, i64)>,
    stag: (i64, i64),
    t: usize,
    done: bool,
    arrow_used: Vec<bool>,
    pending: PendingQueue,
}

impl StagHunter {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let stag = (0, (cfg.width / 2) as i64);
        // Distance to the stag grows with the arrow's flight time.
        let positions = (0..cfg.n_agents)
            .map(|i| {
                let row = cfg.durations[i][SHOOT].clamp(1, cfg.height - 1) as i64;
                let col = ((cfg.width / 2 + 2 * i + 1) % cfg.width) as i64;
                (row, col)
            })
            .collect();
        Ok(Self {
            arrow_used: vec![false; cfg.n_agents],
            cfg,
            positions,
            stag,
            t: 0,
            done: false,
            pending: PendingQueue::default(),
        })
    }
}

impl OffBeatEnv for StagHunter {
    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn reset(&mut self) -> Vec<Observation> {
        self.t = 0;
        self.done = false;
        self.arrow_used.iter_mut().for_each(|a| *a = false);
        self.pending.clear();
        (0..self.cfg.n_agents)
            .map(|i| self.observation(AgentId(i)))
            .collect()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome> {
        check_joint_action(self, joint_action)?;
        let t = self.t;
        for (i, &action) in joint_action.iter().enumerate() {
            if action == SHOOT && !self.arrow_used[i] {
                self.arrow_used[i] = true;
                self.pending
                    .push(AgentId(i), SHOOT, t, self.cfg.durations[i][SHOOT]);
            }
        }
        let hits = self.pending.resolve(t);
        let n = self.cfg.n_agents;
        let (reward, success) = match hits.len() {
            0 => (STEP_PENALTY, false),
            k if k == n => (SUCCESS_REWARD, true),
            k => (SUCCESS_REWARD * k as f64 / n as f64, false),
        };
        self.done = !hits.is_empty() || t == self.cfg.max_steps;
        self.t += 1;
        Ok(StepOutcome {
            observations: (0..n).map(|i| self.observation(AgentId(i))).collect(),
            reward,
            done: self.done,
            causes: hits.iter().map(|e| e.commit()).collect(),
            success,
        })
    }

    fn available_actions(&self, agent: AgentId) -> Vec<bool> {
        vec![true, !self.arrow_used[agent.index()]]
    }

    fn observation(&self, agent: AgentId) -> Observation {
        let (r, c) = self.positions[agent.index()];
        with_time(vec![r, c, self.stag.0, self.stag.1], &self.cfg, self.t)
    }

    fn state(&self) -> Observation {
        let mut s = vec![self.t as i64];
        for (i, &(r, c)) in self.positions.iter().enumerate() {
            s.extend([r, c, i64::from(self.arrow_used[i])]);
        }
        for e in self.pending.iter() {
            s.extend([e.owner.index() as i64, e.resolve_time as i64]);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ground_truth_pivot, rollout};
    use crate::error::Error;
    use crate::types::Commit;

    fn scripted(cfg: EnvConfig, shoot_at: Vec<Option<usize>>) -> crate::types::Episode {
        let mut env = StagHunter::new(cfg).unwrap();
        rollout(&mut env, |agent, t, _, _| {
            if shoot_at[agent.index()] == Some(t) {
                SHOOT
            } else {
                NOOP
            }
        })
        .unwrap()
    }

    #[test]
    fn default_observation_is_own_position_and_stag() {
        let mut env = StagHunter::new(EnvConfig::stag_hunter()).unwrap();
        let obs = env.reset();
        assert_eq!(obs[0].len(), 4);
        assert_eq!(&obs[0][2..], &[0, 7]);
        assert_eq!(obs[0][..2], [14, 8]);
        assert_eq!(obs[1][..2], [6, 10]);
    }

    #[test]
    fn simultaneous_landing_catches_the_stag() {
        let ep = scripted(EnvConfig::stag_hunter(), vec![Some(0), Some(8)]);
        assert_eq!(ep.len(), 15);
        assert!(ep.success);
        assert_eq!(ep.transitions[14].reward, SUCCESS_REWARD);
        assert!(ep.transitions[..14]
            .iter()
            .all(|tr| tr.reward == STEP_PENALTY));
        let truth = ground_truth_pivot(&ep);
        let last = &truth[&14];
        assert_eq!(last.for_agent(AgentId(0)), Some(0));
        assert_eq!(last.for_agent(AgentId(1)), Some(8));
        assert_eq!(last.recency_pivot(), 8);
        assert!(last.is_off_beat());
        assert!(!truth[&3].is_off_beat());
    }

    #[test]
    fn short_preset_catches_with_shots_at_zero_and_five() {
        let ep = scripted(EnvConfig::stag_hunter_short(), vec![Some(0), Some(5)]);
        assert!(ep.success);
        assert_eq!(ep.len(), 11);
        assert_eq!(ground_truth_pivot(&ep)[&10].recency_pivot(), 5);
    }

    #[test]
    fn lone_arrow_scares_the_stag_away() {
        let ep = scripted(EnvConfig::stag_hunter(), vec![None, Some(2)]);
        assert!(!ep.success);
        assert_eq!(ep.len(), 9);
        assert_eq!(ep.transitions[8].reward, SUCCESS_REWARD / 2.0);
        assert_eq!(
            ep.causes[8],
            vec![Commit {
                agent: AgentId(1),
                time: 2
            }]
        );
    }

    #[test]
    fn idle_hunters_only_pay_the_step_penalty() {
        let ep = scripted(EnvConfig::stag_hunter(), vec![None, None]);
        assert_eq!(ep.len(), 15);
        assert!(ep.rewards().iter().all(|&r| r == STEP_PENALTY));
        assert!(ground_truth_pivot(&ep)
            .values()
            .all(|p| p.recency_pivot() == p.step));
    }

    #[test]
    fn instant_arrows_pivot_on_their_own_step() {
        let ep = scripted(EnvConfig::stag_hunter_instant(), vec![Some(3), Some(3)]);
        assert!(ep.success);
        assert_eq!(ep.len(), 4);
        for (t, p) in ground_truth_pivot(&ep) {
            assert_eq!(p.recency_pivot(), t);
        }
    }

    #[test]
    fn arrows_are_single_use() {
        let mut env = StagHunter::new(EnvConfig::stag_hunter()).unwrap();
        env.reset();
        env.step(&[SHOOT, NOOP]).unwrap();
        assert_eq!(env.available_actions(AgentId(0)), vec![true, false]);
        assert_eq!(env.available_actions(AgentId(1)), vec![true, true]);
    }

    #[test]
    fn rejects_bad_actions() {
        let mut env = StagHunter::new(EnvConfig::stag_hunter()).unwrap();
        env.reset();
        assert!(matches!(
            env.step(&[2, 0]),
            Err(Error::UnknownAction {
                agent: 0,
                action: 2
            })
        ));
        env.step(&[NOOP, SHOOT]).unwrap();
        for _ in 0..6 {
            env.step(&[NOOP, NOOP]).unwrap();
        }
        assert!(env.is_done());
        assert!(matches!(env.step(&[NOOP, NOOP]), Err(Error::EpisodeDone)));
    }

    #[test]
    fn observation_ignores_teammates() {
        let mut a = StagHunter::new(EnvConfig::stag_hunter()).unwrap();
        let mut b = StagHunter::new(EnvConfig::stag_hunter()).unwrap();
        a.reset();
        b.reset();
        let oa = a.step(&[NOOP, SHOOT]).unwrap();
        let ob = b.step(&[NOOP, NOOP]).unwrap();
        assert_eq!(oa.observations[0], ob.observations[0]);
    }
}
