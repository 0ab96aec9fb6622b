//! Browser bindings: play a scripted Stag-Hunter episode, build a memory and
//! search it for pivots, and redistribute a reward sequence. Every call
//! returns a JSON string.

use legem::envs::{ground_truth_pivot, rollout, EnvConfig};
use legem::memory::{KeyMode, MemoryStore};
use legem::search::{search_pivot_timesteps, PivotMap, Scheme, SearchConfig, TraceRow};
use legem::types::{discretize_return, episode_return};
use legem::{redistribute, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, PartialEq)]
pub struct EpisodeView {
    pub rewards: Vec<f64>,
    pub success: bool,
    /// `(step, pivot)` for every nonzero reward.
    pub truth: Vec<(usize, usize)>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct SearchView {
    pub episodes: usize,
    pub rewards: Vec<f64>,
    pub trace: Vec<TraceView>,
    pub redistributed: Vec<f64>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct TraceView {
    pub step: usize,
    pub candidates: Vec<usize>,
    pub pivot: usize,
    pub truth: usize,
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js_err)
}

/// Each agent shoots once at its given step (`-1` never shoots).
pub fn scripted_episode(preset: &str, shots: &[i32]) -> legem::Result<legem::Episode> {
    let cfg = EnvConfig::preset(preset)?;
    if shots.len() != cfg.n_agents {
        return Err(Error::Invalid(format!(
            "{} shot times for {} agents",
            shots.len(),
            cfg.n_agents
        )));
    }
    let mut env = cfg.build()?;
    rollout(env.as_mut(), |agent, t, _, avail| {
        let s = shots[agent.index()];
        usize::from(s >= 0 && s as usize == t && avail.get(1) == Some(&true))
    })
}

pub fn episode_view(preset: &str, shots: &[i32]) -> legem::Result<EpisodeView> {
    let ep = scripted_episode(preset, shots)?;
    Ok(EpisodeView {
        rewards: ep.rewards(),
        success: ep.success,
        truth: ground_truth_pivot(&ep)
            .into_iter()
            .map(|(t, p)| (t, p.recency_pivot()))
            .collect(),
    })
}

/// Fills a memory with `episodes` random-play Stag-Hunter episodes plus the
/// scripted one, then searches the scripted episode.
pub fn search_view(
    preset: &str,
    shots: &[i32],
    episodes: usize,
    seed: u64,
    scheme: Scheme,
) -> legem::Result<SearchView> {
    let cfg = EnvConfig::preset(preset)?;
    let mut env = cfg.build()?;
    let mut store = MemoryStore::new(
        cfg.n_agents,
        cfg.max_steps + 1,
        cfg.n_actions(),
        KeyMode::Exact,
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..episodes {
        let ep = rollout(env.as_mut(), |_, _, _, avail| {
            let choices: Vec<usize> = (0..avail.len()).filter(|&a| avail[a]).collect();
            choices[rng.random_range(0..choices.len())]
        })?;
        store.update(&ep.trajectories)?;
    }
    let ep = scripted_episode(preset, shots)?;
    let keys = store.update(&ep.trajectories)?;
    let returns = ep
        .trajectories
        .iter()
        .map(|t| discretize_return(episode_return(t)?))
        .collect::<legem::Result<Vec<_>>>()?;
    let rewards = ep.rewards();
    let mut rows: Vec<TraceRow> = Vec::new();
    let kappa = search_pivot_timesteps(
        &store,
        &keys,
        &returns,
        &rewards,
        SearchConfig {
            scheme,
            ..SearchConfig::default()
        },
        None,
        Some(&mut rows),
    )?;
    let truth = ground_truth_pivot(&ep);
    let redistributed = redistribute(&rewards, &kappa, 1e-5)?.redistributed;
    Ok(SearchView {
        episodes: episodes + 1,
        rewards,
        trace: rows
            .into_iter()
            .map(|r| TraceView {
                truth: truth[&r.step].recency_pivot(),
                step: r.step,
                candidates: r.candidates,
                pivot: r.pivot,
            })
            .collect(),
        redistributed,
    })
}

/// `rewards` is comma separated; `kappa` lists `t:e` pairs.
pub fn redistribute_text(rewards: &str, kappa: &str, beta: f64) -> legem::Result<Vec<f64>> {
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("bad reward `{s}`")))
    };
    let rewards: Vec<f64> = rewards
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse)
        .collect::<legem::Result<_>>()?;
    let mut map = PivotMap::default();
    for pair in kappa.split(',').filter(|s| !s.trim().is_empty()) {
        let (t, e) = pair
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected t:e, got `{pair}`")))?;
        let t: usize = t
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad step `{t}`")))?;
        let e: usize = e
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad pivot `{e}`")))?;
        map.0.insert(t, e);
    }
    Ok(redistribute(&rewards, &map, beta)?.redistributed)
}

#[wasm_bindgen]
pub fn play_episode(preset: &str, shot0: i32, shot1: i32) -> Result<String, JsError> {
    to_json(&episode_view(preset, &[shot0, shot1]).map_err(js_err)?)
}

#[wasm_bindgen]
pub fn search_episode(
    preset: &str,
    shot0: i32,
    shot1: i32,
    episodes: usize,
    seed: u64,
    scheme: &str,
) -> Result<String, JsError> {
    let scheme: Scheme = scheme.parse().map_err(js_err)?;
    to_json(&search_view(preset, &[shot0, shot1], episodes, seed, scheme).map_err(js_err)?)
}

#[wasm_bindgen]
pub fn redistribute_rewards(rewards: &str, kappa: &str, beta: f64) -> Result<String, JsError> {
    to_json(&redistribute_text(rewards, kappa, beta).map_err(js_err)?)
}
