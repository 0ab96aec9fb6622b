use std::collections::{BTreeMap, HashMap};

use legem::envs::{ground_truth_pivot, rollout, EnvConfig};
use legem::memory::{KeyMode, MemoryStore};
use legem::search::{
    lu_search, recency_pick, search_pivot_timesteps, summarize, ul_search, visit_count_ranks,
    PivotMap, Scheme, SearchCache, SearchConfig,
};
use legem::train::{offbeat_bellman_apply, redistribute, sup_distance, ExplicitMdp};
use legem::types::{discretize_return, episode_return, AgentId};
use legem::{Trainer, TrainerConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rewards with a valid pivot map over their nonzero steps.
fn rewards_and_kappa() -> impl Strategy<Value = (Vec<f64>, PivotMap, f64)> {
    (1usize..=20)
        .prop_flat_map(|len| {
            (
                prop::collection::vec(prop_oneof![Just(0.0), -10.0f64..10.0], len),
                prop::collection::vec(any::<prop::sample::Index>(), len),
                1e-6f64..0.999,
            )
        })
        .prop_map(|(rewards, picks, beta)| {
            let kappa = rewards
                .iter()
                .enumerate()
                .filter(|(_, &r)| r != 0.0)
                .map(|(t, _)| (t, picks[t].index(t + 1)))
                .collect();
            (rewards, PivotMap(kappa), beta)
        })
}

/// Redistribution written out with explicit indices.
fn oracle_redistribute(rewards: &[f64], kappa: &BTreeMap<usize, usize>, beta: f64) -> Vec<f64> {
    let mut r = rewards.to_vec();
    let mut t = 0;
    while t < r.len() {
        if let Some(&e) = kappa.get(&t) {
            if e < t {
                let moved = r[t];
                r[e] = moved;
                r[t] = moved * beta;
            }
        }
        t += 1;
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn redistribution_matches_oracle((rewards, kappa, beta) in rewards_and_kappa()) {
        let got = redistribute(&rewards, &kappa, beta).unwrap().redistributed;
        let want = oracle_redistribute(&rewards, &kappa.0, beta);
        prop_assert_eq!(got.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), want.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        let ident = PivotMap::identity(&rewards);
        prop_assert_eq!(redistribute(&rewards, &ident, beta).unwrap().redistributed, rewards);
    }

    #[test]
    fn single_reward_conservation(len in 2usize..20, r in 0.5f64..10.0, pick in any::<prop::sample::Index>()) {
        let t = len - 1;
        let e = pick.index(t);
        let mut rewards = vec![0.0; len];
        rewards[t] = r;
        let out = redistribute(&rewards, &PivotMap([(t, e)].into_iter().collect()), 1e-5).unwrap().redistributed;
        for (i, &x) in out.iter().enumerate() {
            let want = if i == e { r } else if i == t { r * 1e-5 } else { 0.0 };
            prop_assert_eq!(x, want);
        }
    }

    #[test]
    fn ranks_are_order_isomorphic(counts in prop::collection::vec(1u64..30, 1..20)) {
        let ranks = visit_count_ranks(&counts);
        let distinct = {
            let mut d = counts.clone();
            d.sort_unstable();
            d.dedup();
            d.len()
        };
        for i in 0..counts.len() {
            prop_assert!(ranks[i] < distinct);
            for j in 0..counts.len() {
                prop_assert_eq!(counts[i].cmp(&counts[j]), ranks[i].cmp(&ranks[j]));
            }
        }
    }

    #[test]
    fn scans_stay_before_t(ranks in prop::collection::vec(0usize..5, 0..16), t in 0usize..16) {
        let t = t.min(ranks.len());
        for e in [ul_search(&ranks, t), lu_search(&ranks, t)].into_iter().flatten() {
            prop_assert!(e < t);
        }
        if ranks[..t].windows(2).all(|w| w[0] == w[1]) {
            prop_assert_eq!(ul_search(&ranks, t), None);
            prop_assert_eq!(lu_search(&ranks, t), None);
        }
    }

    #[test]
    fn summarize_is_smallest_mode(c in prop::collection::vec(0usize..8, 1..30)) {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &x in &c {
            *counts.entry(x).or_default() += 1;
        }
        let best = *counts.values().max().unwrap();
        let want = counts.iter().filter(|(_, &n)| n == best).map(|(&v, _)| v).min().unwrap();
        prop_assert_eq!(summarize(&c).unwrap(), want);
    }

    #[test]
    fn recency_pick_is_max_and_order_free(t in 0usize..20, mut c in prop::collection::vec(0usize..20, 1..5)) {
        for x in c.iter_mut() {
            *x = (*x).min(t);
        }
        let want = *c.iter().max().unwrap();
        prop_assert_eq!(recency_pick(t, &c), want);
        c.reverse();
        prop_assert_eq!(recency_pick(t, &c), want);
    }

    #[test]
    fn contraction_holds(seed in any::<u64>(), gamma in prop_oneof![Just(0.5), Just(0.9), Just(0.99)]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = ExplicitMdp::random(5, 2, 2, &mut rng);
        let kappa = PivotMap([(7, 2), (13, 13), (19, 0)].into_iter().collect());
        let r = mdp.redistributed_rewards(&kappa, 1e-5).unwrap();
        let q = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..5).map(|_| (0..4).map(|_| rng.random_range(-50.0..50.0)).collect()).collect()
        };
        let (q1, q2) = (q(&mut rng), q(&mut rng));
        let lhs = sup_distance(&offbeat_bellman_apply(&q1, &mdp, &r, gamma), &offbeat_bellman_apply(&q2, &mdp, &r, gamma));
        prop_assert!(lhs <= gamma * sup_distance(&q1, &q2) + 1e-12);
    }
}

fn random_policy(
    rng: &mut ChaCha8Rng,
) -> impl FnMut(AgentId, usize, &Vec<i64>, &[bool]) -> usize + '_ {
    move |_, _, _, avail| {
        let choices: Vec<usize> = (0..avail.len()).filter(|&a| avail[a]).collect();
        choices[rng.random_range(0..choices.len())]
    }
}

#[test]
fn searched_pivots_never_exceed_their_step() {
    for (name, scheme) in [
        ("stag-hunter", Scheme::One),
        ("quarry", Scheme::Two),
        ("afforestation", Scheme::One),
    ] {
        let cfg = EnvConfig::preset(name).unwrap();
        let mut env = cfg.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store =
            MemoryStore::new(2, cfg.max_steps + 1, cfg.n_actions(), KeyMode::Exact, 0).unwrap();
        let mut cache = SearchCache::default();
        for _ in 0..300 {
            let ep = rollout(env.as_mut(), random_policy(&mut rng)).unwrap();
            let keys = store.update(&ep.trajectories).unwrap();
            let returns: Vec<_> = ep
                .trajectories
                .iter()
                .map(|t| discretize_return(episode_return(t).unwrap()).unwrap())
                .collect();
            let rewards = ep.rewards();
            let kappa = match search_pivot_timesteps(
                &store,
                &keys,
                &returns,
                &rewards,
                SearchConfig {
                    scheme,
                    ..SearchConfig::default()
                },
                Some(&mut cache),
                None,
            ) {
                Ok(k) => k,
                Err(legem::Error::PathCapExceeded { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            let truth = ground_truth_pivot(&ep);
            assert_eq!(kappa.len(), truth.len());
            for (t, e) in kappa.iter() {
                assert!(e <= t);
                assert!(truth.contains_key(&t));
            }
        }
    }
}

#[test]
fn cached_and_uncached_search_agree() {
    let cfg = EnvConfig::stag_hunter();
    let mut env = cfg.build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = MemoryStore::new(2, 15, 2, KeyMode::Exact, 0).unwrap();
    let mut cache = SearchCache::default();
    let mut eps = Vec::new();
    for _ in 0..400 {
        let ep = rollout(env.as_mut(), random_policy(&mut rng)).unwrap();
        let keys = store.update(&ep.trajectories).unwrap();
        let returns: Vec<_> = ep
            .trajectories
            .iter()
            .map(|t| discretize_return(episode_return(t).unwrap()).unwrap())
            .collect();
        eps.push((keys, returns, ep.rewards()));
    }
    for (keys, returns, rewards) in &eps {
        let a = search_pivot_timesteps(
            &store,
            keys,
            returns,
            rewards,
            SearchConfig::default(),
            Some(&mut cache),
            None,
        )
        .unwrap();
        let b = search_pivot_timesteps(
            &store,
            keys,
            returns,
            rewards,
            SearchConfig::default(),
            None,
            None,
        )
        .unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn environments_are_deterministic_and_effects_resolve_once() {
    for name in [
        "stag-hunter",
        "stag-hunter-short",
        "stag-hunter-instant",
        "quarry",
        "afforestation",
    ] {
        let cfg = EnvConfig::preset(name).unwrap();
        for seed in 0..50 {
            let play = || {
                let mut env = cfg.build().unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rollout(env.as_mut(), random_policy(&mut rng)).unwrap()
            };
            let (a, b) = (play(), play());
            assert_eq!(a, b);
            a.validate().unwrap();
            let mut seen = std::collections::HashSet::new();
            for (t, causes) in a.causes.iter().enumerate() {
                for c in causes {
                    assert!(
                        seen.insert((c.agent, c.time)),
                        "{name}: effect resolved twice"
                    );
                    let action = a.trajectories[c.agent.index()].steps[c.time].action;
                    let resolved = c.time + cfg.durations[c.agent.index()][action];
                    // grown trees only pay out when the storm arrives
                    if name == "afforestation" {
                        assert!(resolved <= t);
                    } else {
                        assert_eq!(resolved, t);
                    }
                }
            }
        }
    }
}

#[test]
fn instant_durations_give_identity_truth() {
    let cfg = EnvConfig::stag_hunter_instant();
    let mut env = cfg.build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let ep = rollout(env.as_mut(), random_policy(&mut rng)).unwrap();
        for (t, truth) in ground_truth_pivot(&ep) {
            assert_eq!(truth.recency_pivot(), t);
        }
    }
}

#[test]
fn fixed_seed_reproduces_tables() {
    let run = || {
        let mut t = Trainer::new(&EnvConfig::stag_hunter(), TrainerConfig::default(), 11).unwrap();
        for _ in 0..300 {
            t.collect().unwrap();
        }
        t.checkpoint()
    };
    assert_eq!(run(), run());
}

#[test]
fn scheme_two_from_counts_matches_path_lists() {
    use legem::search::{agent_pivot, scheme_two};
    for name in ["quarry", "afforestation", "stag-hunter"] {
        let cfg = EnvConfig::preset(name).unwrap();
        let mut env = cfg.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store =
            MemoryStore::new(2, cfg.max_steps + 1, cfg.n_actions(), KeyMode::Exact, 0).unwrap();
        let mut checked = 0;
        for _ in 0..300 {
            let ep = rollout(env.as_mut(), random_policy(&mut rng)).unwrap();
            let keys = store.update(&ep.trajectories).unwrap();
            for (agent, k) in keys.iter().enumerate() {
                let ret =
                    discretize_return(episode_return(&ep.trajectories[agent]).unwrap()).unwrap();
                let graph = store.graph(agent, k.len()).unwrap();
                let sub = graph.subgraph(ret).unwrap();
                for t in 0..k.len() {
                    let node = graph.get_node(t, k[t]).unwrap();
                    let got = agent_pivot(&store, agent, k, ret, t, Scheme::Two, 2000);
                    match graph.enumerate_paths(node, Some(sub), 2000) {
                        Ok(paths) => {
                            assert_eq!(
                                graph.count_paths(node, Some(sub), 2000).unwrap(),
                                paths.len()
                            );
                            assert_eq!(got.unwrap(), scheme_two(&paths, t));
                            checked += 1;
                        }
                        Err(legem::Error::PathCapExceeded { .. }) => {
                            assert!(matches!(got, Err(legem::Error::PathCapExceeded { .. })));
                        }
                        Err(e) => panic!("{e}"),
                    }
                }
            }
        }
        assert!(checked > 0);
    }
}
