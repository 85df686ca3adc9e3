//! Seeded training runs, learning curves and tidy exports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, Agent, AgentConfig, EvalMetrics, Variant};
use crate::env::{reset, EnvKind};
use crate::error::{Error, Result};
use crate::kv::KvConfig;

/// Keys a config file may set on the experiment itself; the rest go to the agent.
const SPEC_KEYS: &[&str] = &[
    "env",
    "seeds",
    "budget",
    "variant",
    "eval_every",
    "eval_episodes",
    "eval_max_steps",
    "episode_max_steps",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub env: EnvKind,
    pub seeds: Vec<u64>,
    /// Agent steps of training per seed.
    pub budget: u64,
    pub agent: AgentConfig,
    pub variant: Variant,
    pub eval_every: u64,
    pub eval_episodes: u64,
    /// Step cap for each evaluation episode.
    pub eval_max_steps: u64,
    /// Step cap for each training episode.
    pub episode_max_steps: u64,
    pub out_dir: PathBuf,
    /// Write a per-step JSON-lines log for each seed next to its curve.
    pub debug_log: bool,
}

impl ExperimentSpec {
    pub fn new(env: EnvKind, variant: Variant, seeds: Vec<u64>, budget: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            env,
            seeds,
            budget,
            agent: AgentConfig { variant, ..AgentConfig::default() },
            variant,
            eval_every: 1_000,
            eval_episodes: 10,
            eval_max_steps: 2_000,
            episode_max_steps: 2_000,
            out_dir: out_dir.into(),
            debug_log: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.eval_every == 0 || self.budget < self.eval_every {
            return Err(Error::Config(format!(
                "budget {} must be at least the eval cadence {} (> 0)",
                self.budget, self.eval_every
            )));
        }
        if self.eval_episodes == 0 || self.eval_max_steps == 0 || self.episode_max_steps == 0 {
            return Err(Error::Config("evaluation and episode sizes must be positive".into()));
        }
        if self.agent.variant != self.variant {
            return Err(Error::Config("agent config variant differs from experiment variant".into()));
        }
        self.agent.validate()
    }

    /// Apply a key-value config file on top of this spec.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        if let Some(env) = kv.get("env")? {
            self.env = env;
        }
        if let Some(seeds) = kv.get_list("seeds")? {
            self.seeds = seeds;
        }
        kv.apply("budget", &mut self.budget)?;
        if let Some(v) = kv.get("variant")? {
            self.variant = v;
        }
        kv.apply("eval_every", &mut self.eval_every)?;
        kv.apply("eval_episodes", &mut self.eval_episodes)?;
        kv.apply("eval_max_steps", &mut self.eval_max_steps)?;
        kv.apply("episode_max_steps", &mut self.episode_max_steps)?;
        if let Some(out) = kv.get_str("out") {
            self.out_dir = PathBuf::from(out);
        }
        self.agent.apply_kv(&kv.without(SPEC_KEYS))?;
        self.agent.variant = self.variant;
        self.validate()
    }

    /// Agent configuration used for one seed.
    pub fn agent_config(&self, seed: u64) -> AgentConfig {
        AgentConfig {
            variant: self.variant,
            ..self.agent.clone()
        }
        .with_seed(seed)
    }

    pub fn curve_path(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{}_{}_seed{}.csv", self.env, self.variant, seed))
    }

    pub fn aggregate_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}_{}_aggregate.csv", self.env, self.variant))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}_{}_manifest.json", self.env, self.variant))
    }

    pub fn debug_log_path(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{}_{}_seed{}.jsonl", self.env, self.variant, seed))
    }

    pub fn checkpoint_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{}_{}_seed{}_agent", self.env, self.variant, seed))
    }
}

/// One evaluation point of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_score: f64,
    pub max_score: f64,
    pub interception_rate: f64,
    pub mean_rally_length: f64,
    /// Mean predictor training loss since the previous point; 0 before training.
    pub predictor_mse: f64,
    pub goal_success: f64,
}

impl CurvePoint {
    pub const METRICS: [&'static str; 6] = [
        "mean_score",
        "max_score",
        "interception_rate",
        "mean_rally_length",
        "predictor_mse",
        "goal_success",
    ];

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "mean_score" => self.mean_score,
            "max_score" => self.max_score,
            "interception_rate" => self.interception_rate,
            "mean_rally_length" => self.mean_rally_length,
            "predictor_mse" => self.predictor_mse,
            "goal_success" => self.goal_success,
            _ => return None,
        })
    }

    fn from_eval(step: u64, m: &EvalMetrics, predictor_mse: f64) -> Self {
        Self {
            step,
            mean_score: m.mean_score,
            max_score: m.max_score as f64,
            interception_rate: m.interception_rate,
            mean_rally_length: m.mean_rally_length,
            predictor_mse,
            goal_success: m.goal_success,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CurveRow {
    env: String,
    variant: String,
    seed: String,
    step: u64,
    mean_score: f64,
    max_score: f64,
    interception_rate: f64,
    mean_rally_length: f64,
    predictor_mse: f64,
    goal_success: f64,
}

impl CurveRow {
    fn new(env: &str, variant: &str, seed: &str, p: &CurvePoint) -> Self {
        Self {
            env: env.into(),
            variant: variant.into(),
            seed: seed.into(),
            step: p.step,
            mean_score: p.mean_score,
            max_score: p.max_score,
            interception_rate: p.interception_rate,
            mean_rally_length: p.mean_rally_length,
            predictor_mse: p.predictor_mse,
            goal_success: p.goal_success,
        }
    }

    fn point(&self) -> CurvePoint {
        CurvePoint {
            step: self.step,
            mean_score: self.mean_score,
            max_score: self.max_score,
            interception_rate: self.interception_rate,
            mean_rally_length: self.mean_rally_length,
            predictor_mse: self.predictor_mse,
            goal_success: self.goal_success,
        }
    }
}

/// Training result for one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    pub agent: Agent,
}

/// Train one seed, evaluating every `eval_every` steps.
pub fn run_seed(spec: &ExperimentSpec, seed: u64) -> Result<SeedRun> {
    spec.validate()?;
    let probe = reset(spec.env, seed);
    let mut agent = Agent::new(spec.agent_config(seed), &probe)?;
    if spec.debug_log {
        agent.enable_debug_log(spec.debug_log_path(seed))?;
    }
    let eval_seed = 1_000_000 + seed * 1_000;
    let mut curve = Vec::new();
    let mut steps = 0u64;
    let mut episode = 0u64;
    let mut episode_steps = 0u64;
    let mut state = None;
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    while steps < spec.budget {
        let next_eval = ((steps / spec.eval_every) + 1) * spec.eval_every;
        let limit = next_eval.min(spec.budget);
        while steps < limit {
            let s = state.get_or_insert_with(|| {
                episode += 1;
                episode_steps = 0;
                reset(spec.env, seed.wrapping_mul(1_000_003).wrapping_add(episode))
            });
            let cap = (limit - steps).min(spec.episode_max_steps - episode_steps);
            let summary = run_episode(s, &mut agent, cap)?;
            steps += summary.steps;
            episode_steps += summary.steps;
            if s.terminal || episode_steps >= spec.episode_max_steps {
                state = None;
            }
        }
        let st = agent.stats();
        let mse = if st.predictor_updates > loss_n {
            (st.predictor_loss_sum - loss_sum) / (st.predictor_updates - loss_n) as f64
        } else {
            0.0
        };
        loss_sum = st.predictor_loss_sum;
        loss_n = st.predictor_updates;
        let m = agent.evaluate(spec.eval_episodes, eval_seed, spec.eval_max_steps)?;
        log::info!(
            "{} {} seed {seed} step {steps}: score {:.2} interception {:.3}",
            spec.env,
            spec.variant,
            m.mean_score,
            m.interception_rate
        );
        curve.push(CurvePoint::from_eval(steps, &m, mse));
    }
    Ok(SeedRun { seed, curve, agent })
}

/// Written artefacts of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub curves: Vec<PathBuf>,
    pub aggregate: PathBuf,
    pub manifest: PathBuf,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub env: String,
    pub variant: String,
    pub seeds: Vec<u64>,
    pub budget: u64,
    pub eval_every: u64,
    pub eval_episodes: u64,
    pub eval_max_steps: u64,
    pub episode_max_steps: u64,
    pub version: String,
    /// Per-seed agent configuration, flattened to key-value pairs.
    pub agent_config: Vec<std::collections::BTreeMap<String, String>>,
    pub curves: Vec<String>,
    pub aggregate: String,
}

fn check_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Train every seed (in parallel workers), then write the curves, the
/// median aggregate and the manifest.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentOutput> {
    spec.validate()?;
    check_writable(&spec.out_dir)?;
    let workers = workers.max(1);
    let mut runs: Vec<Option<Result<SeedRun>>> = (0..spec.seeds.len()).map(|_| None).collect();
    for chunk in (0..spec.seeds.len()).collect::<Vec<_>>().chunks(workers) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| (i, scope.spawn(move || run_seed(spec, spec.seeds[i]))))
                .collect();
            for (i, h) in handles {
                runs[i] = Some(h.join().unwrap_or_else(|_| Err(Error::Config("worker panicked".into()))));
            }
        });
    }
    let runs = runs.into_iter().map(|r| r.expect("every seed ran")).collect::<Result<Vec<_>>>()?;

    let mut curves = Vec::new();
    for run in &runs {
        let path = spec.curve_path(run.seed);
        write_curve(&path, spec.env, spec.variant, &run.seed.to_string(), &run.curve)?;
        run.agent.save(spec.checkpoint_dir(run.seed))?;
        curves.push(path);
    }
    let aggregate = spec.aggregate_path();
    let median = median_curve(&runs.iter().map(|r| r.curve.clone()).collect::<Vec<_>>())?;
    write_curve(&aggregate, spec.env, spec.variant, "median", &median)?;

    let name = |p: &Path| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let manifest = Manifest {
        env: spec.env.to_string(),
        variant: spec.variant.to_string(),
        seeds: spec.seeds.clone(),
        budget: spec.budget,
        eval_every: spec.eval_every,
        eval_episodes: spec.eval_episodes,
        eval_max_steps: spec.eval_max_steps,
        episode_max_steps: spec.episode_max_steps,
        version: env!("CARGO_PKG_VERSION").to_string(),
        agent_config: spec
            .seeds
            .iter()
            .map(|&s| {
                let kv = spec.agent_config(s).to_kv();
                kv.keys().map(|k| (k.to_string(), kv.get_str(k).unwrap_or_default().to_string())).collect()
            })
            .collect(),
        curves: curves.iter().map(|p| name(p)).collect(),
        aggregate: name(&aggregate),
    };
    let manifest_path = spec.manifest_path();
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(ExperimentOutput {
        curves,
        aggregate,
        manifest: manifest_path,
        runs,
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => values[n / 2],
        _ => 0.5 * (values[n / 2 - 1] + values[n / 2]),
    }
}

/// Pointwise median of curves that share their step grid.
pub fn median_curve(curves: &[Vec<CurvePoint>]) -> Result<Vec<CurvePoint>> {
    let Some(first) = curves.first() else {
        return Err(Error::Config("no curves to aggregate".into()));
    };
    for c in curves {
        if c.len() != first.len() || c.iter().zip(first).any(|(a, b)| a.step != b.step) {
            return Err(Error::Shape("curves have different step grids".into()));
        }
    }
    Ok((0..first.len())
        .map(|i| {
            let col = |f: fn(&CurvePoint) -> f64| median(&mut curves.iter().map(|c| f(&c[i])).collect::<Vec<_>>());
            CurvePoint {
                step: first[i].step,
                mean_score: col(|p| p.mean_score),
                max_score: col(|p| p.max_score),
                interception_rate: col(|p| p.interception_rate),
                mean_rally_length: col(|p| p.mean_rally_length),
                predictor_mse: col(|p| p.predictor_mse),
                goal_success: col(|p| p.goal_success),
            }
        })
        .collect())
}

pub fn write_curve(path: &Path, env: EnvKind, variant: Variant, seed: &str, curve: &[CurvePoint]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for p in curve {
        w.serialize(CurveRow::new(env.name(), variant.name(), seed, p))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A curve file read back: `(env, variant, seed, points)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFile {
    pub env: String,
    pub variant: String,
    pub seed: String,
    pub points: Vec<CurvePoint>,
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message: message.into(),
    }
}

pub fn read_curve(path: &Path) -> Result<CurveFile> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers().map_err(|e| parse_error(path, 1, e.to_string()))?.clone();
    let mut out: Option<CurveFile> = None;
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: CurveRow = rec.deserialize(Some(&headers)).map_err(|e| parse_error(path, line, e.to_string()))?;
        let f = out.get_or_insert_with(|| CurveFile {
            env: row.env.clone(),
            variant: row.variant.clone(),
            seed: row.seed.clone(),
            points: Vec::new(),
        });
        if (f.env.as_str(), f.variant.as_str(), f.seed.as_str()) != (&row.env, &row.variant, &row.seed) {
            return Err(parse_error(path, line, "mixed runs in one curve file"));
        }
        if f.points.last().is_some_and(|p| p.step >= row.step) {
            return Err(parse_error(path, line, "step counts must increase"));
        }
        f.points.push(row.point());
    }
    out.ok_or_else(|| parse_error(path, 1, "curve file has no rows"))
}

/// One row of the tidy export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub env: String,
    pub variant: String,
    pub seed: String,
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

/// Merge curve files into a long table, one row per (point, metric).
pub fn plot_export(inputs: &[PathBuf]) -> Result<Vec<TidyRow>> {
    if inputs.is_empty() {
        return Err(Error::Config("no curve files given".into()));
    }
    let mut rows = Vec::new();
    for path in inputs {
        let f = read_curve(path)?;
        for p in &f.points {
            for m in CurvePoint::METRICS {
                rows.push(TidyRow {
                    env: f.env.clone(),
                    variant: f.variant.clone(),
                    seed: f.seed.clone(),
                    step: p.step,
                    metric: m.to_string(),
                    value: p.metric(m).expect("listed metric"),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_tidy(path: &Path, rows: &[TidyRow]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tidy(path: &Path) -> Result<Vec<TidyRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers().map_err(|e| parse_error(path, 1, e.to_string()))?.clone();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_error(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push(rec.deserialize(Some(&headers)).map_err(|e| parse_error(path, line, e.to_string()))?);
    }
    Ok(rows)
}
