//! Pivot-timestep search: given a reward observed at step `t`, find the
//! step whose committed action most plausibly caused it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::memory::{AfterstateKey, LevelledGraph, MemoryStore, NodeId, DEFAULT_PATH_CAP};
use crate::types::DiscreteReturn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Visit-count pattern search (UL first, then LU) summarized by mode.
    One,
    /// Nearest level where the paths converge the most.
    Two,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scheme1" | "1" | "I" => Ok(Scheme::One),
            "scheme2" | "2" | "II" => Ok(Scheme::Two),
            other => Err(Error::Config(format!("unknown search scheme `{}`", other))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::One => "scheme1",
            Scheme::Two => "scheme2",
        })
    }
}

/// Replaces each count by its index among the sorted distinct counts.
pub fn visit_count_ranks(counts: &[u64]) -> Vec<usize> {
    let mut distinct = counts.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    counts
        .iter()
        .map(|c| distinct.binary_search(c).unwrap())
        .collect()
}

/// Two-pointer scan recording every strict rise and stopping at the first
/// strict fall; returns the index of the last recorded rise.
fn last_rise(vc: &[usize]) -> Option<usize> {
    let (mut left, mut right) = (0, 1);
    let mut res = None;
    while right < vc.len() {
        if vc[right] == vc[left] {
            right += 1;
        } else if vc[right] > vc[left] {
            res = Some(right);
            left = right;
            right += 1;
        } else {
            break;
        }
    }
    res
}

/// Scan from level 0 towards `t` over `ranks[..t]`.
pub fn ul_search(ranks: &[usize], t: usize) -> Option<usize> {
    last_rise(&ranks[..t.min(ranks.len())])
}

/// Scan from `t - 1` back towards level 0 over `ranks[..t]`.
pub fn lu_search(ranks: &[usize], t: usize) -> Option<usize> {
    let mut vc = ranks[..t.min(ranks.len())].to_vec();
    vc.reverse();
    last_rise(&vc).map(|idx| vc.len() - idx - 1)
}

/// Most frequent candidate, ties going to the earliest step.
pub fn summarize(candidates: &[usize]) -> Result<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in candidates {
        *counts.entry(c).or_insert(0) += 1;
    }
    let best = counts.values().copied().max().ok_or(Error::EmptyEpisode)?;
    Ok(*counts.iter().find(|(_, &n)| n == best).unwrap().0)
}

/// Scheme I over paths ordered level 0 first, ranked by parent-graph counts.
pub fn scheme_one(graph: &LevelledGraph, paths: &[Vec<NodeId>], t: usize) -> Result<usize> {
    if paths.is_empty() {
        return Ok(t);
    }
    let candidates: Vec<usize> = paths
        .iter()
        .map(|path| {
            let counts: Vec<u64> = path.iter().map(|&n| graph.node(n).visit_count).collect();
            let ranks = visit_count_ranks(&counts);
            ul_search(&ranks, t)
                .or_else(|| lu_search(&ranks, t))
                .unwrap_or(t)
        })
        .collect();
    summarize(&candidates)
}

/// Scheme II: the level in `t-1..=0` with the fewest distinct nodes across
/// paths, ties going to the most recent level; `t` when every level is
/// fully divergent.
pub fn scheme_two(paths: &[Vec<NodeId>], t: usize) -> usize {
    let distinct: Vec<usize> = (0..t)
        .map(|level| {
            paths
                .iter()
                .filter_map(|p| p.get(level).copied())
                .collect::<HashSet<NodeId>>()
                .len()
        })
        .collect();
    scheme_two_counts(&distinct, paths.len(), t)
}

/// Scheme II from per-level distinct node counts and the number of paths.
pub fn scheme_two_counts(distinct: &[usize], n_paths: usize, t: usize) -> usize {
    let mut best: Option<(usize, usize)> = None;
    let mut all_divergent = true;
    for level in (0..t).rev() {
        let d = distinct[level];
        if d != n_paths {
            all_divergent = false;
        }
        if best.is_none_or(|(n, _)| d < n) {
            best = Some((d, level));
        }
    }
    match best {
        Some((_, level)) if !all_divergent => level,
        _ => t,
    }
}

/// Recency pick across agents: the candidate closest to `t`.
pub fn recency_pick(t: usize, candidates: &[usize]) -> usize {
    candidates
        .iter()
        .copied()
        .filter(|&e| e <= t)
        .min_by_key(|&e| t - e)
        .unwrap_or(t)
}

/// Pivot timestep of every nonzero reward in one episode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PivotMap(pub BTreeMap<usize, usize>);

impl PivotMap {
    pub fn identity(rewards: &[f64]) -> Self {
        Self(
            rewards
                .iter()
                .enumerate()
                .filter(|(_, &r)| r != 0.0)
                .map(|(t, _)| (t, t))
                .collect(),
        )
    }

    pub fn get(&self, t: usize) -> Option<usize> {
        self.0.get(&t).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().map(|(&t, &e)| (t, e))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One searched reward: each agent's candidate and the chosen pivot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub step: usize,
    pub candidates: Vec<usize>,
    pub pivot: usize,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let n = rows.first().map_or(0, |r| r.candidates.len());
    let mut out = String::from("step");
    for i in 0..n {
        let _ = write!(out, ",agent{}", i);
    }
    out.push_str(",pivot\n");
    for r in rows {
        let _ = write!(out, "{}", r.step);
        for c in &r.candidates {
            let _ = write!(out, ",{}", c);
        }
        let _ = writeln!(out, ",{}", r.pivot);
    }
    out
}

/// Searches one agent's memory for the pivot of the reward at `t`.
///
/// `keys` are the agent's afterstate keys for the whole episode and `ret`
/// its discretized return. Paths are enumerated inside the episode's
/// return sub-graph; an afterstate missing from memory yields `t`.
pub fn agent_pivot(
    store: &MemoryStore,
    agent: usize,
    keys: &[AfterstateKey],
    ret: DiscreteReturn,
    t: usize,
    scheme: Scheme,
    cap: usize,
) -> Result<usize> {
    let Some(graph) = store.graph(agent, keys.len()) else {
        return Ok(t);
    };
    let Some(node) = graph.get_node(t, keys[t]) else {
        return Ok(t);
    };
    let Some(sub) = graph.subgraph(ret).filter(|s| s.contains(node)) else {
        return Ok(t);
    };
    match scheme {
        Scheme::One => scheme_one(graph, &graph.enumerate_paths(node, Some(sub), cap)?, t),
        Scheme::Two => {
            // every ancestor lies on some chain, so no need to list them
            let n_paths = graph.count_paths(node, Some(sub), cap)?;
            let distinct: Vec<usize> = graph
                .ancestors(node, Some(sub))
                .iter()
                .map(Vec::len)
                .collect();
            Ok(scheme_two_counts(&distinct, n_paths, t))
        }
    }
}

/// Memoizes per-agent search results until the memory changes.
#[derive(Debug, Default)]
pub struct SearchCache {
    version: Option<u64>,
    hits: HashMap<(usize, usize, DiscreteReturn, usize, AfterstateKey), usize>,
}

impl SearchCache {
    fn sync(&mut self, store: &MemoryStore) {
        if self.version != Some(store.version()) {
            self.hits.clear();
            self.version = Some(store.version());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    pub scheme: Scheme,
    pub path_cap: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::One,
            path_cap: DEFAULT_PATH_CAP,
        }
    }
}

/// Pivot map of one episode already inserted into `store`.
///
/// `keys[i]` and `returns[i]` are agent `i`'s afterstate keys and
/// discretized return. Every nonzero reward is searched by every agent and
/// the most recent candidate wins.
pub fn search_pivot_timesteps(
    store: &MemoryStore,
    keys: &[Vec<AfterstateKey>],
    returns: &[DiscreteReturn],
    rewards: &[f64],
    cfg: SearchConfig,
    mut cache: Option<&mut SearchCache>,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<PivotMap> {
    if keys.iter().any(|k| k.len() != rewards.len()) || returns.len() != keys.len() {
        return Err(Error::RaggedEpisode);
    }
    if let Some(c) = cache.as_deref_mut() {
        c.sync(store);
    }
    let mut kappa = BTreeMap::new();
    let mut candidates = Vec::with_capacity(keys.len());
    for (t, &r) in rewards.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        candidates.clear();
        for (agent, agent_keys) in keys.iter().enumerate() {
            let slot = (agent, agent_keys.len(), returns[agent], t, agent_keys[t]);
            let cached = cache.as_deref().and_then(|c| c.hits.get(&slot).copied());
            let e = match cached {
                Some(e) => e,
                None => {
                    let e = agent_pivot(
                        store,
                        agent,
                        agent_keys,
                        returns[agent],
                        t,
                        cfg.scheme,
                        cfg.path_cap,
                    )?;
                    if let Some(c) = cache.as_deref_mut() {
                        c.hits.insert(slot, e);
                    }
                    e
                }
            };
            candidates.push(e);
        }
        let e = recency_pick(t, &candidates);
        if let Some(rows) = trace.as_deref_mut() {
            rows.push(TraceRow {
                step: t,
                candidates: candidates.clone(),
                pivot: e,
            });
        }
        kappa.insert(t, e);
    }
    Ok(PivotMap(kappa))
}
