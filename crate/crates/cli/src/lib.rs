//! Experiment orchestration for off-beat MARL runs: flat key=value configs,
//! seeded training runs with CSV metrics, and mean ± std reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use legem::envs::{EnvConfig, EnvKind};
use legem::search::trace_csv;
use legem::train::MetricsRow;
use legem::{KeyMode, Scheme, Trainer, TrainerConfig};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CSV_HEADER: &str = "step,seed,mean_eval_return,success_rate,pivot_accuracy";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Preset name the environment was built from.
    pub env_name: String,
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub trace: bool,
}

/// Scheme I suits a single off-beat reward per episode, Scheme II several.
pub fn default_scheme(kind: EnvKind) -> Scheme {
    match kind {
        EnvKind::StagHunter => Scheme::One,
        EnvKind::Quarry | EnvKind::Afforestation => Scheme::Two,
    }
}

impl RunConfig {
    pub fn new(env_name: &str) -> Result<Self> {
        let env = EnvConfig::preset(env_name)?;
        let trainer = TrainerConfig {
            memory: Some(default_scheme(env.kind)),
            ..TrainerConfig::default()
        };
        Ok(Self {
            env_name: env_name.to_string(),
            env,
            trainer,
            total_steps: 500_000,
            eval_interval: 10_000,
            eval_episodes: 10,
            seeds: (0..10).collect(),
            out: PathBuf::from("runs"),
            trace: false,
        })
    }

    /// Builds a config from `key=value` pairs. The environment is applied
    /// first so that later keys override its defaults regardless of order.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let map: BTreeMap<&str, &str> = pairs.into_iter().collect();
        let env = map.get("env").copied().unwrap_or("stag-hunter");
        let mut cfg = RunConfig::new(env)?;
        for (k, v) in map.into_iter().filter(|(k, _)| *k != "env") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses the flat text format: one `key = value` per line, `#` comments.
    pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value", n + 1))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.trainer;
        let num = |v: &str| {
            v.parse::<f64>()
                .with_context(|| format!("{key}: `{v}` is not a number"))
        };
        let int = |v: &str| {
            v.parse::<usize>()
                .with_context(|| format!("{key}: `{v}` is not a count"))
        };
        match key {
            "learner" => t.learner = value.parse()?,
            "memory" => {
                t.memory = match value {
                    "off" => None,
                    s => Some(s.parse()?),
                }
            }
            "target" => t.target = value.parse()?,
            "gamma" => t.gamma = num(value)?,
            "beta" => t.beta = num(value)?,
            "lr" => t.lr = num(value)?,
            "batch_size" => t.batch_size = int(value)?,
            "buffer" => t.buffer_capacity = int(value)?,
            "target_update" => t.target_update_interval = int(value)?,
            "eps_start" => t.eps_start = num(value)?,
            "eps_end" => t.eps_end = num(value)?,
            "eps_anneal" | "eps-anneal" => t.eps_anneal_steps = int(value)?,
            "eval_epsilon" => t.eval_epsilon = num(value)?,
            "keys" => {
                t.key_mode = match value.split_once(':') {
                    None if value == "exact" => KeyMode::Exact,
                    Some(("simhash", bits)) => KeyMode::SimHash {
                        bits: int(bits)? as u32,
                    },
                    _ => bail!("keys: expected `exact` or `simhash:K`, got `{value}`"),
                }
            }
            "path_cap" => t.path_cap = int(value)?,
            "steps" => self.total_steps = int(value)?,
            "eval_interval" => self.eval_interval = int(value)?,
            "eval_episodes" => self.eval_episodes = int(value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "out" => self.out = PathBuf::from(value),
            "trace" => {
                self.trace = value
                    .parse()
                    .with_context(|| format!("trace: `{value}` is not a bool"))?
            }
            "max_steps" => self.env.max_steps = int(value)?,
            "n_agents" => self.env.n_agents = int(value)?,
            "env" => bail!("env may only be set once"),
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.trainer.validate()?;
        ensure!(self.total_steps > 0, "steps must be positive");
        ensure!(self.eval_interval > 0, "eval_interval must be positive");
        ensure!(self.eval_episodes > 0, "eval_episodes must be positive");
        ensure!(!self.seeds.is_empty(), "at least one seed is required");
        Ok(())
    }

    /// Round-trippable `key = value` rendering.
    pub fn render(&self) -> String {
        let t = &self.trainer;
        let mut s = String::new();
        let _ = writeln!(s, "env = {}", self.env_name);
        let _ = writeln!(s, "learner = {}", t.learner);
        let _ = writeln!(
            s,
            "memory = {}",
            t.memory.map_or("off".to_string(), |m| m.to_string())
        );
        let _ = writeln!(s, "target = {}", t.target);
        let _ = writeln!(s, "gamma = {}", t.gamma);
        let _ = writeln!(s, "beta = {}", t.beta);
        let _ = writeln!(s, "lr = {}", t.lr);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "buffer = {}", t.buffer_capacity);
        let _ = writeln!(s, "target_update = {}", t.target_update_interval);
        let _ = writeln!(s, "eps_start = {}", t.eps_start);
        let _ = writeln!(s, "eps_end = {}", t.eps_end);
        let _ = writeln!(s, "eps_anneal = {}", t.eps_anneal_steps);
        let _ = writeln!(s, "eval_epsilon = {}", t.eval_epsilon);
        let keys = match t.key_mode {
            KeyMode::Exact => "exact".to_string(),
            KeyMode::SimHash { bits } => format!("simhash:{bits}"),
        };
        let _ = writeln!(s, "keys = {keys}");
        let _ = writeln!(s, "path_cap = {}", t.path_cap);
        let _ = writeln!(s, "steps = {}", self.total_steps);
        let _ = writeln!(s, "eval_interval = {}", self.eval_interval);
        let _ = writeln!(s, "eval_episodes = {}", self.eval_episodes);
        let seeds = match self.seeds.as_slice() {
            [one] => format!("{}..{}", one, one + 1),
            many => many
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        };
        let _ = writeln!(s, "seeds = {seeds}");
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "trace = {}", self.trace);
        let _ = writeln!(s, "max_steps = {}", self.env.max_steps);
        let _ = writeln!(s, "n_agents = {}", self.env.n_agents);
        s
    }
}

/// `N` means seeds `0..N`; `a..b` a range; otherwise a comma list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.parse()?, b.parse()?);
        ensure!(a < b, "empty seed range `{s}`");
        return Ok((a..b).collect());
    }
    if s.contains(',') {
        return s
            .split(',')
            .map(|x| x.trim().parse::<u64>().context("bad seed"))
            .collect();
    }
    let n: u64 = s.parse().with_context(|| format!("bad seed count `{s}`"))?;
    Ok((0..n).collect())
}

pub fn format_row(r: &MetricsRow) -> String {
    let acc = r.pivot_accuracy.map_or(String::new(), |a| format!("{a}"));
    format!(
        "{},{},{},{},{}",
        r.step, r.seed, r.mean_eval_return, r.success_rate, acc
    )
}

/// Trains one seed and returns its metrics rows plus the Q-table checkpoint
/// and, when enabled, the search trace.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<(Vec<MetricsRow>, String, Option<String>)> {
    let mut env = cfg.env.clone();
    env.seed = seed;
    let mut trainer = Trainer::new(&env, cfg.trainer.clone(), seed)?;
    if cfg.trace {
        trainer.enable_trace();
    }
    let rows = trainer.run(
        cfg.total_steps,
        cfg.eval_interval,
        cfg.eval_episodes,
        |_| {},
    )?;
    let trace = cfg.trace.then(|| trace_csv(&trainer.take_trace()));
    Ok((rows, trainer.checkpoint(), trace))
}

/// Runs every seed and writes `metrics.csv`, `timing.csv`, the rendered
/// config and per-seed checkpoints into `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))?;
    fs::write(cfg.out.join("config.txt"), cfg.render())?;
    let mut csv = format!("{CSV_HEADER}\n");
    let mut timing = String::from("seed,wall_clock_seconds\n");
    let mut all = Vec::new();
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let (rows, checkpoint, trace) = run_seed(cfg, seed)?;
        let _ = writeln!(timing, "{},{:.3}", seed, start.elapsed().as_secs_f64());
        for r in &rows {
            csv.push_str(&format_row(r));
            csv.push('\n');
        }
        fs::write(
            cfg.out.join(format!("checkpoint_seed{seed}.txt")),
            checkpoint,
        )?;
        if let Some(trace) = trace {
            fs::write(cfg.out.join(format!("trace_seed{seed}.csv")), trace)?;
        }
        all.extend(rows);
    }
    fs::write(cfg.out.join(METRICS_FILE), csv)?;
    fs::write(cfg.out.join(TIMING_FILE), timing)?;
    Ok(all)
}

/// Final eval row of every seed in a metrics CSV.
pub fn final_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    ensure!(
        header.join(",") == CSV_HEADER,
        "{}: unexpected header",
        path.display()
    );
    let mut last: BTreeMap<u64, MetricsRow> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = MetricsRow {
            step: rec[0].parse()?,
            seed: rec[1].parse()?,
            mean_eval_return: rec[2].parse()?,
            success_rate: rec[3].parse()?,
            pivot_accuracy: if rec[4].is_empty() {
                None
            } else {
                Some(rec[4].parse()?)
            },
        };
        match last.get(&row.seed) {
            Some(prev) if prev.step > row.step => {}
            _ => {
                last.insert(row.seed, row);
            }
        }
    }
    Ok(last.into_values().collect())
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `"mean±std%"` of success rates given as fractions.
pub fn format_pct(xs: &[f64]) -> String {
    let (m, s) = mean_std(xs);
    format!("{:.0}±{:.0}%", m * 100.0, s * 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportLine {
    pub method: String,
    pub seeds: usize,
    pub success: String,
    pub mean_return: f64,
}

/// Aggregates every `metrics.csv` in `dir` and its immediate
/// subdirectories, one line per run directory.
pub fn report(dir: &Path) -> Result<Vec<ReportLine>> {
    let mut files = Vec::new();
    if dir.join(METRICS_FILE).is_file() {
        files.push(dir.to_path_buf());
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(METRICS_FILE).is_file())
        .collect();
    subdirs.sort();
    files.extend(subdirs);
    ensure!(
        !files.is_empty(),
        "no completed runs under {}",
        dir.display()
    );
    files
        .iter()
        .map(|d| {
            let rows = final_rows(&d.join(METRICS_FILE))?;
            ensure!(!rows.is_empty(), "{}: no rows", d.display());
            let success: Vec<f64> = rows.iter().map(|r| r.success_rate).collect();
            let returns: Vec<f64> = rows.iter().map(|r| r.mean_eval_return).collect();
            let method = d.file_name().map_or_else(
                || d.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            );
            Ok(ReportLine {
                method,
                seeds: rows.len(),
                success: format_pct(&success),
                mean_return: mean_std(&returns).0,
            })
        })
        .collect()
}

pub fn render_report(lines: &[ReportLine]) -> String {
    let mut s = String::from("method\tseeds\tsuccess\tmean_return\n");
    for l in lines {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.3}",
            l.method, l.seeds, l.success, l.mean_return
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_formatting() {
        assert_eq!(format_pct(&[1.0; 10]), "100±0%");
        assert_eq!(format_pct(&[0.0, 1.0]), "50±50%");
        assert_eq!(format_pct(&[0.0; 3]), "0±0%");
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4..6").unwrap(), vec![4, 5]);
        assert_eq!(parse_seeds("7, 9").unwrap(), vec![7, 9]);
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn env_defaults_then_overrides() {
        let cfg = RunConfig::from_pairs([("memory", "off"), ("env", "quarry")]).unwrap();
        assert_eq!(cfg.env.kind, EnvKind::Quarry);
        assert_eq!(cfg.trainer.memory, None);
        let cfg = RunConfig::from_pairs([("env", "quarry")]).unwrap();
        assert_eq!(cfg.trainer.memory, Some(Scheme::Two));
        assert!(RunConfig::from_pairs([("bogus", "1")]).is_err());
        assert!(RunConfig::from_pairs([("gamma", "1.0")]).is_err());
    }

    #[test]
    fn render_round_trips() {
        let cfg = RunConfig::from_pairs([
            ("env", "afforestation"),
            ("target", "tdlambda:0.9"),
            ("keys", "simhash:16"),
        ])
        .unwrap();
        let pairs = RunConfig::parse(&cfg.render()).unwrap();
        let again =
            RunConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(again, cfg);
    }
}
