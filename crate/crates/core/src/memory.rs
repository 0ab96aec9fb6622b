//! Levelled graph episodic memory.
//!
//! Every agent owns one graph per episode length. Level `k` of a graph holds
//! the afterstates `(observation, action)` the agent visited at timestep `k`,
//! each with a visit count and links to the nodes it was preceded and
//! followed by. Episodes are further grouped into return-indexed sub-graphs
//! that share the parent's nodes (and so its visit counts) but keep their own
//! edge sets.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::types::{discretize_return, episode_return, DiscreteReturn, Trajectory};

pub const DEFAULT_SIMHASH_BITS: u32 = 32;
pub const DEFAULT_PATH_CAP: usize = 10_000;

/// Fixed-width identity of an afterstate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AfterstateKey(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyMode {
    /// Injective: every distinct `(observation, action)` gets its own id.
    Exact,
    /// Sign bits of random-hyperplane projections of `observation ++ one_hot(action)`.
    SimHash { bits: u32 },
}

/// Turns afterstates into keys. Exact keys are interned ids, so two makers
/// only agree on keys if they saw afterstates in the same order.
#[derive(Debug, Clone)]
pub struct KeyMaker {
    mode: KeyMode,
    seed: u64,
    interned: HashMap<Vec<u64>, u64>,
    planes: Vec<f64>,
    dim: usize,
}

impl KeyMaker {
    pub fn new(mode: KeyMode, seed: u64) -> Result<Self> {
        if let KeyMode::SimHash { bits } = mode {
            if bits == 0 || bits > 64 {
                return Err(Error::Config(format!(
                    "simhash width {} outside 1..=64",
                    bits
                )));
            }
        }
        Ok(Self {
            mode,
            seed,
            interned: HashMap::new(),
            planes: Vec::new(),
            dim: 0,
        })
    }

    pub fn mode(&self) -> KeyMode {
        self.mode
    }

    pub fn make_key(
        &mut self,
        obs: &[f64],
        action: usize,
        n_actions: usize,
    ) -> Result<AfterstateKey> {
        if obs.iter().any(|v| v.is_nan()) {
            return Err(Error::NanObservation);
        }
        if action >= n_actions {
            return Err(Error::Invalid(format!(
                "action {} out of range for {} actions",
                action, n_actions
            )));
        }
        match self.mode {
            KeyMode::Exact => {
                let code = exact_code(obs, action);
                let next = self.interned.len() as u64;
                Ok(AfterstateKey(*self.interned.entry(code).or_insert(next)))
            }
            KeyMode::SimHash { .. } => {
                let mut v = obs.to_vec();
                v.extend((0..n_actions).map(|a| if a == action { 1.0 } else { 0.0 }));
                self.sign_bits(&v).map(AfterstateKey)
            }
        }
    }

    /// SimHash of a raw input vector: bit `b` is set when the projection on
    /// hyperplane `b` is non-negative.
    pub fn sign_bits(&mut self, v: &[f64]) -> Result<u64> {
        let KeyMode::SimHash { bits } = self.mode else {
            return Err(Error::Invalid(
                "sign bits requested from an exact key maker".into(),
            ));
        };
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::NanObservation);
        }
        self.ensure_planes(bits as usize, v.len())?;
        Ok(self.project(v))
    }

    /// Key for an integer observation.
    pub fn key_of(
        &mut self,
        obs: &[i64],
        action: usize,
        n_actions: usize,
    ) -> Result<AfterstateKey> {
        let as_real: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        self.make_key(&as_real, action, n_actions)
    }

    /// Like [`key_of`](Self::key_of) but never allocates a new exact id:
    /// an unseen exact afterstate yields `None`.
    pub fn peek(&self, obs: &[i64], action: usize, n_actions: usize) -> Option<AfterstateKey> {
        let as_real: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        match self.mode {
            KeyMode::Exact => self
                .interned
                .get(&exact_code(&as_real, action))
                .map(|&id| AfterstateKey(id)),
            KeyMode::SimHash { .. } => {
                if self.dim != obs.len() + n_actions || action >= n_actions {
                    return None;
                }
                let mut v = as_real;
                v.extend((0..n_actions).map(|a| if a == action { 1.0 } else { 0.0 }));
                Some(AfterstateKey(self.project(&v)))
            }
        }
    }

    fn ensure_planes(&mut self, bits: usize, dim: usize) -> Result<()> {
        if self.planes.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            self.planes = (0..bits * dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            self.dim = dim;
        } else if self.dim != dim {
            return Err(Error::Invalid(format!(
                "simhash input width changed from {} to {}",
                self.dim, dim
            )));
        }
        Ok(())
    }

    fn project(&self, v: &[f64]) -> u64 {
        let mut key = 0u64;
        for (b, plane) in self.planes.chunks_exact(self.dim).enumerate() {
            let dot: f64 = v.iter().zip(plane).map(|(x, w)| x * w).sum();
            if dot >= 0.0 {
                key |= 1 << b;
            }
        }
        key
    }
}

fn exact_code(obs: &[f64], action: usize) -> Vec<u64> {
    // +0.0 and -0.0 are the same observation
    let mut code: Vec<u64> = obs.iter().map(|&v| (v + 0.0).to_bits()).collect();
    code.push(action as u64);
    code
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    fn ix(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub key: AfterstateKey,
    pub level: usize,
    pub visit_count: u64,
    pub precursors: Vec<NodeId>,
    pub successors: Vec<NodeId>,
}

/// Episodes of one discretized return: their own edges and traversal
/// counts over nodes owned by the parent graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubGraph {
    pub episodes: u64,
    /// Times each member node was traversed by this sub-graph's episodes.
    traversals: HashMap<NodeId, u64>,
    /// `(from, to)` with `from` one level below `to`, and the traversal count.
    edges: HashMap<(NodeId, NodeId), u64>,
    precursors: HashMap<NodeId, Vec<NodeId>>,
}

impl SubGraph {
    pub fn contains(&self, node: NodeId) -> bool {
        self.traversals.contains_key(&node)
    }

    pub fn traversals(&self, node: NodeId) -> u64 {
        self.traversals.get(&node).copied().unwrap_or(0)
    }

    pub fn edge_count(&self, from: NodeId, to: NodeId) -> u64 {
        self.edges.get(&(from, to)).copied().unwrap_or(0)
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.traversals.keys().copied()
    }

    pub fn precursors(&self, node: NodeId) -> &[NodeId] {
        self.precursors.get(&node).map_or(&[], |v| v.as_slice())
    }

    fn traverse(&mut self, path: &[NodeId]) {
        self.episodes += 1;
        for &n in path {
            *self.traversals.entry(n).or_insert(0) += 1;
        }
        for w in path.windows(2) {
            match self.edges.entry((w[0], w[1])) {
                Entry::Occupied(mut e) => *e.get_mut() += 1,
                Entry::Vacant(e) => {
                    e.insert(1);
                    self.precursors.entry(w[1]).or_default().push(w[0]);
                }
            }
        }
    }
}

/// Memory of all episodes of one length for one agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelledGraph {
    length: usize,
    nodes: Vec<GraphNode>,
    levels: Vec<HashMap<AfterstateKey, NodeId>>,
    subgraphs: BTreeMap<DiscreteReturn, SubGraph>,
    episodes: u64,
}

impl LevelledGraph {
    /// Empty graph for episodes of `length` steps (levels `0..length`).
    pub fn new(length: usize) -> Self {
        Self {
            length,
            nodes: Vec::new(),
            levels: vec![HashMap::new(); length],
            subgraphs: BTreeMap::new(),
            episodes: 0,
        }
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &GraphNode {
        &self.nodes[id.ix()]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn level(&self, level: usize) -> impl Iterator<Item = NodeId> + '_ {
        self.levels
            .get(level)
            .into_iter()
            .flat_map(|m| m.values().copied())
    }

    pub fn get_node(&self, level: usize, key: AfterstateKey) -> Option<NodeId> {
        self.levels.get(level)?.get(&key).copied()
    }

    pub fn subgraph(&self, ret: DiscreteReturn) -> Option<&SubGraph> {
        self.subgraphs.get(&ret)
    }

    /// The ordered set of observed discretized returns.
    pub fn returns(&self) -> impl Iterator<Item = DiscreteReturn> + '_ {
        self.subgraphs.keys().copied()
    }

    /// Inserts one trajectory given its afterstate keys and discretized return.
    pub fn insert(&mut self, keys: &[AfterstateKey], ret: DiscreteReturn) -> Result<Vec<NodeId>> {
        if keys.len() != self.length {
            return Err(Error::Invalid(format!(
                "trajectory of length {} inserted into the length-{} graph",
                keys.len(),
                self.length
            )));
        }
        let mut path = Vec::with_capacity(keys.len());
        let mut prev: Option<NodeId> = None;
        for (level, &key) in keys.iter().enumerate() {
            let id = match self.levels[level].get(&key) {
                Some(&id) => {
                    self.nodes[id.ix()].visit_count += 1;
                    id
                }
                None => {
                    let id = NodeId(self.nodes.len() as u32);
                    self.nodes.push(GraphNode {
                        key,
                        level,
                        visit_count: 1,
                        precursors: Vec::new(),
                        successors: Vec::new(),
                    });
                    self.levels[level].insert(key, id);
                    id
                }
            };
            if let Some(p) = prev {
                // existing nodes can still gain a new incoming pointer
                if !self.nodes[id.ix()].precursors.contains(&p) {
                    self.nodes[id.ix()].precursors.push(p);
                    self.nodes[p.ix()].successors.push(id);
                }
            }
            path.push(id);
            prev = Some(id);
        }
        self.subgraphs.entry(ret).or_default().traverse(&path);
        self.episodes += 1;
        Ok(path)
    }

    /// All chains from `node` down to level 0 along precursor links, each
    /// ordered level 0 first. With `within` set only that sub-graph's edges
    /// are followed.
    pub fn enumerate_paths(
        &self,
        node: NodeId,
        within: Option<&SubGraph>,
        cap: usize,
    ) -> Result<Vec<Vec<NodeId>>> {
        let mut paths = Vec::new();
        let mut chain = vec![node];
        self.dfs(&mut chain, within, cap, &mut paths)?;
        Ok(paths)
    }

    /// Number of chains `enumerate_paths` would return, without listing
    /// them. Fails the same way once the count passes `cap`.
    pub fn count_paths(
        &self,
        node: NodeId,
        within: Option<&SubGraph>,
        cap: usize,
    ) -> Result<usize> {
        let levels = self.ancestors(node, within);
        let mut ways: HashMap<NodeId, usize> = levels[0].iter().map(|&n| (n, 1)).collect();
        for level in levels.iter().skip(1) {
            for &n in level {
                let preds = match within {
                    Some(sub) => sub.precursors(n),
                    None => &self.node(n).precursors,
                };
                let w = preds
                    .iter()
                    .map(|p| ways[p])
                    .fold(0usize, usize::saturating_add);
                ways.insert(n, w);
            }
        }
        let total = ways[&node];
        if total > cap {
            return Err(Error::PathCapExceeded {
                cap,
                found: cap + 1,
            });
        }
        Ok(total)
    }

    /// Distinct nodes per level on chains from `node` down to level 0,
    /// indexed by level up to the node's own.
    pub fn ancestors(&self, node: NodeId, within: Option<&SubGraph>) -> Vec<Vec<NodeId>> {
        let top = self.node(node).level;
        let mut levels = vec![Vec::new(); top + 1];
        levels[top].push(node);
        for l in (1..=top).rev() {
            let mut seen = HashSet::new();
            for &n in &levels[l] {
                let preds = match within {
                    Some(sub) => sub.precursors(n),
                    None => &self.node(n).precursors,
                };
                seen.extend(preds.iter().copied());
            }
            let mut below: Vec<NodeId> = seen.into_iter().collect();
            below.sort_unstable();
            levels[l - 1] = below;
        }
        levels
    }

    fn dfs(
        &self,
        chain: &mut Vec<NodeId>,
        within: Option<&SubGraph>,
        cap: usize,
        out: &mut Vec<Vec<NodeId>>,
    ) -> Result<()> {
        let top = *chain.last().expect("chain starts non-empty");
        if self.node(top).level == 0 {
            if out.len() == cap {
                return Err(Error::PathCapExceeded {
                    cap,
                    found: out.len() + 1,
                });
            }
            out.push(chain.iter().rev().copied().collect());
            return Ok(());
        }
        let preds = match within {
            Some(sub) => sub.precursors(top),
            None => &self.node(top).precursors,
        };
        for &p in preds {
            chain.push(p);
            self.dfs(chain, within, cap, out)?;
            chain.pop();
        }
        Ok(())
    }

    /// Line-oriented dump: one `node` line per node (level, key, count,
    /// successor keys), then each sub-graph's members and edges.
    pub fn dump(&self) -> String {
        let mut out = format!("graph {} {}\n", self.length, self.episodes);
        let key = |id: NodeId| self.node(id).key.0;
        for level in 0..self.length {
            let mut ids: Vec<NodeId> = self.level(level).collect();
            ids.sort_by_key(|&id| key(id));
            for id in ids {
                let n = self.node(id);
                let mut succ: Vec<u64> = n.successors.iter().map(|&s| key(s)).collect();
                succ.sort_unstable();
                let succ = if succ.is_empty() {
                    "-".to_string()
                } else {
                    succ.iter()
                        .map(u64::to_string)
                        .collect::<Vec<_>>()
                        .join(",")
                };
                let _ = writeln!(out, "node {} {} {} {}", level, n.key.0, n.visit_count, succ);
            }
        }
        for (ret, sub) in &self.subgraphs {
            let _ = writeln!(out, "subgraph {} {}", ret.tenths(), sub.episodes);
            let mut members: Vec<(usize, u64, u64)> = sub
                .traversals
                .iter()
                .map(|(&id, &c)| (self.node(id).level, key(id), c))
                .collect();
            members.sort_unstable();
            for (level, k, c) in members {
                let _ = writeln!(out, "member {} {} {}", level, k, c);
            }
            let mut edges: Vec<(usize, u64, u64, u64)> = sub
                .edges
                .iter()
                .map(|(&(a, b), &c)| (self.node(a).level, key(a), key(b), c))
                .collect();
            edges.sort_unstable();
            for (level, a, b, c) in edges {
                let _ = writeln!(out, "edge {} {} {} {}", level, a, b, c);
            }
        }
        out
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut graph: Option<LevelledGraph> = None;
        let mut current: Option<DiscreteReturn> = None;
        let mut links: Vec<(usize, u64, u64)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let bad = |what: &str| Error::Parse(format!("line {}: {}", lineno + 1, what));
            let fields: Vec<&str> = line.split_whitespace().collect();
            let Some((&kind, rest)) = fields.split_first() else {
                continue;
            };
            let nums = |n: usize| -> Result<Vec<i64>> {
                if rest.len() < n {
                    return Err(bad("too few fields"));
                }
                rest[..n]
                    .iter()
                    .map(|s| s.parse::<i64>().map_err(|_| bad("bad number")))
                    .collect()
            };
            if kind == "graph" {
                let v = nums(2)?;
                let mut g = LevelledGraph::new(v[0] as usize);
                g.episodes = v[1] as u64;
                graph = Some(g);
                continue;
            }
            let g = graph.as_mut().ok_or_else(|| bad("missing graph header"))?;
            let node_at = |g: &LevelledGraph, level: usize, k: u64| {
                g.get_node(level, AfterstateKey(k))
                    .ok_or_else(|| bad("unknown node"))
            };
            match kind {
                "node" => {
                    let v = nums(3)?;
                    let level = v[0] as usize;
                    if level >= g.length {
                        return Err(bad("level out of range"));
                    }
                    let key = AfterstateKey(v[1] as u64);
                    let id = NodeId(g.nodes.len() as u32);
                    g.nodes.push(GraphNode {
                        key,
                        level,
                        visit_count: v[2] as u64,
                        precursors: Vec::new(),
                        successors: Vec::new(),
                    });
                    g.levels[level].insert(key, id);
                    if let Some(succ) = rest.get(3).filter(|s| **s != "-") {
                        for s in succ.split(',') {
                            links.push((
                                level,
                                v[1] as u64,
                                s.parse().map_err(|_| bad("bad successor"))?,
                            ));
                        }
                    }
                }
                "subgraph" => {
                    let v = nums(2)?;
                    let ret = DiscreteReturn(v[0]);
                    g.subgraphs.entry(ret).or_default().episodes = v[1] as u64;
                    current = Some(ret);
                }
                "member" | "edge" => {
                    let ret = current.ok_or_else(|| bad("sub-graph entry outside a sub-graph"))?;
                    let v = nums(if kind == "member" { 3 } else { 4 })?;
                    let level = v[0] as usize;
                    let a = node_at(g, level, v[1] as u64)?;
                    if kind == "member" {
                        g.subgraphs
                            .get_mut(&ret)
                            .unwrap()
                            .traversals
                            .insert(a, v[2] as u64);
                    } else {
                        let b = node_at(g, level + 1, v[2] as u64)?;
                        let sub = g.subgraphs.get_mut(&ret).unwrap();
                        sub.edges.insert((a, b), v[3] as u64);
                        sub.precursors.entry(b).or_default().push(a);
                    }
                }
                _ => return Err(bad("unknown record")),
            }
        }
        let mut g = graph.ok_or_else(|| Error::Parse("missing graph header".into()))?;
        for (level, from, to) in links {
            let a = g.get_node(level, AfterstateKey(from)).unwrap();
            let b = g.get_node(level + 1, AfterstateKey(to)).ok_or_else(|| {
                Error::Parse(format!("successor {} missing at level {}", to, level + 1))
            })?;
            g.nodes[a.ix()].successors.push(b);
            g.nodes[b.ix()].precursors.push(a);
        }
        Ok(g)
    }
}

/// Every agent's graphs, indexed by episode length minus one.
#[derive(Debug, Clone)]
pub struct MemoryStore {
    max_len: usize,
    n_actions: usize,
    keys: Vec<KeyMaker>,
    graphs: Vec<Vec<Option<LevelledGraph>>>,
    version: u64,
}

impl MemoryStore {
    /// `max_len` is the longest storable episode; `seed` fixes the SimHash
    /// hyperplanes (each agent gets its own derived seed).
    pub fn new(
        n_agents: usize,
        max_len: usize,
        n_actions: usize,
        mode: KeyMode,
        seed: u64,
    ) -> Result<Self> {
        let keys = (0..n_agents)
            .map(|i| {
                KeyMaker::new(
                    mode,
                    seed.wrapping_add(i as u64)
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            max_len,
            n_actions,
            keys,
            graphs: vec![vec![None; max_len]; n_agents],
            version: 0,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.graphs.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Bumped on every insertion; lets callers cache searches.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn graph(&self, agent: usize, length: usize) -> Option<&LevelledGraph> {
        self.graphs
            .get(agent)?
            .get(length.checked_sub(1)?)?
            .as_ref()
    }

    pub fn key_maker(&self, agent: usize) -> &KeyMaker {
        &self.keys[agent]
    }

    /// Inserts one episode's per-agent trajectories and returns each agent's
    /// afterstate keys, step by step.
    pub fn update(&mut self, trajs: &[Trajectory]) -> Result<Vec<Vec<AfterstateKey>>> {
        let len = trajs.first().map_or(0, Trajectory::len);
        if len == 0 {
            return Err(Error::EmptyEpisode);
        }
        if trajs.iter().any(|t| t.len() != len) {
            return Err(Error::RaggedEpisode);
        }
        if len > self.max_len {
            return Err(Error::TrajectoryTooLong {
                len,
                max: self.max_len,
            });
        }
        if trajs.len() != self.graphs.len() {
            return Err(Error::Invalid(format!(
                "{} trajectories for {} agents",
                trajs.len(),
                self.graphs.len()
            )));
        }
        let mut all_keys = Vec::with_capacity(trajs.len());
        for traj in trajs {
            let i = traj.agent.index();
            let ret = discretize_return(episode_return(traj)?)?;
            let keys = traj
                .steps
                .iter()
                .map(|s| self.keys[i].key_of(&s.observation, s.action, self.n_actions))
                .collect::<Result<Vec<_>>>()?;
            self.graphs[i][len - 1]
                .get_or_insert_with(|| LevelledGraph::new(len))
                .insert(&keys, ret)?;
            all_keys.push(keys);
        }
        self.version += 1;
        Ok(all_keys)
    }
}

/// Inserts one episode into the store.
pub fn update_legem(
    store: &mut MemoryStore,
    trajs: &[Trajectory],
) -> Result<Vec<Vec<AfterstateKey>>> {
    store.update(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AgentId, StepRecord};

    fn keys(v: &[u64]) -> Vec<AfterstateKey> {
        v.iter().map(|&k| AfterstateKey(k)).collect()
    }

    #[test]
    fn shared_prefix_counts() {
        let mut g = LevelledGraph::new(4);
        g.insert(&keys(&[1, 2, 3, 4]), DiscreteReturn(0)).unwrap();
        g.insert(&keys(&[1, 2, 5, 6]), DiscreteReturn(0)).unwrap();
        let count = |l, k| g.node(g.get_node(l, AfterstateKey(k)).unwrap()).visit_count;
        assert_eq!((count(0, 1), count(1, 2)), (2, 2));
        assert_eq!((count(2, 3), count(2, 5), count(3, 6)), (1, 1, 1));
        assert_eq!(g.n_nodes(), 6);
    }

    #[test]
    fn reinsertion_only_bumps_counts() {
        let mut g = LevelledGraph::new(3);
        g.insert(&keys(&[7, 8, 9]), DiscreteReturn(5)).unwrap();
        g.insert(&keys(&[7, 8, 9]), DiscreteReturn(5)).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert!(g.node_ids().all(|id| g.node(id).visit_count == 2));
        let sub = g.subgraph(DiscreteReturn(5)).unwrap();
        assert_eq!(sub.edge_count(NodeId(0), NodeId(1)), 2);
        assert_eq!(sub.episodes, 2);
    }

    #[test]
    fn level_scoped_lookup() {
        let mut g = LevelledGraph::new(5);
        g.insert(&keys(&[0, 0, 0, 42, 0]), DiscreteReturn(0))
            .unwrap();
        assert!(g.get_node(3, AfterstateKey(42)).is_some());
        assert!(g.get_node(2, AfterstateKey(42)).is_none());
        assert!(g.get_node(1, AfterstateKey(99)).is_none());
        assert!(g.get_node(9, AfterstateKey(0)).is_none());
    }

    #[test]
    fn diamond_has_four_paths() {
        // two merges in series: {a,b} -> c -> {d,e} -> f
        let mut g = LevelledGraph::new(4);
        for (x, y) in [(1, 4), (2, 4), (1, 5), (2, 5)] {
            g.insert(&keys(&[x, 3, y, 6]), DiscreteReturn(0)).unwrap();
        }
        let f = g.get_node(3, AfterstateKey(6)).unwrap();
        let paths = g.enumerate_paths(f, None, DEFAULT_PATH_CAP).unwrap();
        assert_eq!(paths.len(), 4);
        assert!(paths
            .iter()
            .all(|p| g.node(p[0]).level == 0 && *p.last().unwrap() == f));
        assert!(matches!(
            g.enumerate_paths(f, None, 3),
            Err(Error::PathCapExceeded { cap: 3, found: 4 })
        ));
    }

    #[test]
    fn subgraph_paths_follow_own_edges() {
        let mut g = LevelledGraph::new(3);
        g.insert(&keys(&[1, 3, 5]), DiscreteReturn(10)).unwrap();
        g.insert(&keys(&[2, 3, 5]), DiscreteReturn(-3)).unwrap();
        let end = g.get_node(2, AfterstateKey(5)).unwrap();
        assert_eq!(g.enumerate_paths(end, None, 10).unwrap().len(), 2);
        let sub = g.subgraph(DiscreteReturn(10)).unwrap();
        let paths = g.enumerate_paths(end, Some(sub), 10).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(g.node(paths[0][0]).key, AfterstateKey(1));
        // node 3 is shared, so both sub-graphs see its parent count of 2
        assert_eq!(g.node(paths[0][1]).visit_count, 2);
    }

    #[test]
    fn dump_roundtrip() {
        let mut g = LevelledGraph::new(3);
        g.insert(&keys(&[1, 3, 5]), DiscreteReturn(86)).unwrap();
        g.insert(&keys(&[2, 3, 6]), DiscreteReturn(-15)).unwrap();
        g.insert(&keys(&[1, 3, 5]), DiscreteReturn(86)).unwrap();
        let text = g.dump();
        assert!(text.contains("node 1 3 3 5,6"));
        let back = LevelledGraph::load(&text).unwrap();
        assert_eq!(back.dump(), text);
        assert!(LevelledGraph::load("node 0 1 1 -").is_err());
    }

    #[test]
    fn exact_keys_are_injective_and_stable() {
        let mut km = KeyMaker::new(KeyMode::Exact, 0).unwrap();
        let a = km.key_of(&[1, 2], 0, 2).unwrap();
        let b = km.key_of(&[2, 1], 0, 2).unwrap();
        let c = km.key_of(&[1, 2], 1, 2).unwrap();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(km.key_of(&[1, 2], 0, 2).unwrap(), a);
        assert_eq!(km.peek(&[9, 9], 0, 2), None);
    }

    #[test]
    fn simhash_ignores_positive_scale() {
        let mut km = KeyMaker::new(KeyMode::SimHash { bits: 32 }, 7).unwrap();
        let v = [0.3, -1.2, 4.0, 0.0, 1.0, 0.0];
        let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        assert_eq!(km.sign_bits(&v).unwrap(), km.sign_bits(&doubled).unwrap());
        let k1 = km.make_key(&v[..3], 1, 3).unwrap();
        assert_eq!(k1.0, km.sign_bits(&v).unwrap());
        assert_eq!(km.make_key(&v[..3], 1, 3).unwrap(), k1);
        assert_eq!(
            km.peek(&[1, 2, 3], 1, 3),
            Some(km.make_key(&[1.0, 2.0, 3.0], 1, 3).unwrap())
        );
        assert!(km.make_key(&[f64::NAN, 0.0, 0.0], 0, 3).is_err());
        assert!(KeyMaker::new(KeyMode::SimHash { bits: 65 }, 0).is_err());
    }

    #[test]
    fn store_rejects_bad_episodes() {
        let step = |a| StepRecord {
            observation: vec![0],
            action: a,
            reward: -0.1,
        };
        let traj = |n| Trajectory {
            agent: AgentId(0),
            steps: (0..n).map(|_| step(0)).collect(),
        };
        let mut store = MemoryStore::new(1, 3, 2, KeyMode::Exact, 0).unwrap();
        assert!(matches!(
            store.update(&[traj(4)]),
            Err(Error::TrajectoryTooLong { len: 4, max: 3 })
        ));
        store.update(&[traj(3)]).unwrap();
        assert_eq!(store.graph(0, 3).unwrap().episodes(), 1);
        assert!(store.graph(0, 2).is_none());
        assert_eq!(store.version(), 1);
    }
}
