//! Batch experiment runner: config parsing, seed fan-out, sweeps and
//! artifact emission.
//!
//! Output layout for `run`:
//!
//! ```text
//! <out>/config.json
//! <out>/summary.json
//! <out>/seed_<s>/metrics.csv
//! <out>/seed_<s>/{heatmap.csv, heatmap.pgm, layout.csv}          (emit: heatmap)
//! <out>/seed_<s>/distribution_{discounted,stationary}.csv        (emit: distributions)
//! <out>/seed_<s>/checkpoints/*.json                               (emit: checkpoints)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::agents::{self, metrics_csv, TrainConfig};
use crate::dist::{entropy, exact_discounted, exact_stationary};
use crate::env::{self, EnvSpec, Environment, GridLayout};
use crate::error::{Error, Result};
use crate::exact_pg::{run_exact_pg, RegKind, DEFAULT_LR};
use crate::mdp::{value_iteration, SoftmaxPolicy};

/// Episodes averaged for the final-return metric.
pub const FINAL_WINDOW: usize = 100;

/// λ values swept when none are given.
pub const DEFAULT_SWEEP: [f64; 4] = [0.001, 0.01, 0.1, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    Metrics,
    Heatmap,
    Distributions,
    Checkpoints,
}

fn default_lr() -> f64 {
    DEFAULT_LR
}

/// Exact policy-gradient settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactPgSettings {
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub iters: usize,
    #[serde(default)]
    pub kind: RegKind,
    /// Initial logits are uniform in `±theta0_scale`, drawn from the seed;
    /// zero gives the uniform policy.
    #[serde(default)]
    pub theta0_scale: f64,
}

/// What each seed runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Method {
    /// Actor-critic training; the config's `env` and the seed are filled in.
    Train(TrainConfig),
    ExactPg(ExactPgSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub emit: BTreeSet<Artifact>,
}

const TOP_LEVEL: [&str; 5] = ["env", "method", "seeds", "output_dir", "emit"];

fn field<T: for<'de> Deserialize<'de>>(value: &Value, path: &str, problems: &mut Vec<String>) -> Option<T> {
    match serde_json::from_value(value.clone()) {
        Ok(v) => Some(v),
        Err(e) => {
            problems.push(format!("{path}: {e}"));
            None
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates, reporting every problem with its field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("json: {e}")]))?;
        let obj = root
            .as_object()
            .ok_or_else(|| Error::Config(vec!["config must be a JSON object".into()]))?;
        let mut problems = Vec::new();
        for key in obj.keys() {
            if !TOP_LEVEL.contains(&key.as_str()) {
                problems.push(format!("{key}: unknown field, expected one of {}", TOP_LEVEL.join(", ")));
            }
        }
        let get = |k: &str, problems: &mut Vec<String>| {
            let v = obj.get(k);
            if v.is_none() {
                problems.push(format!("{k}: missing field"));
            }
            v
        };

        let env: Option<EnvSpec> = get("env", &mut problems).and_then(|v| field(v, "env", &mut problems));
        if let Some(e) = &env {
            if let Err(err) = e.validate() {
                problems.push(format!("env: {err}"));
            }
        }
        let seeds: Option<Vec<u64>> = get("seeds", &mut problems).and_then(|v| field(v, "seeds", &mut problems));
        if seeds.as_ref().is_some_and(|s| s.is_empty()) {
            problems.push("seeds: must be nonempty".into());
        }
        let output_dir: Option<PathBuf> =
            get("output_dir", &mut problems).and_then(|v| field(v, "output_dir", &mut problems));
        let emit: BTreeSet<Artifact> = match obj.get("emit") {
            Some(v) => field(v, "emit", &mut problems).unwrap_or_default(),
            None => [Artifact::Metrics].into(),
        };
        let method = get("method", &mut problems).and_then(|v| Self::parse_method(v, env.as_ref(), &mut problems));

        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(Self {
            env: env.unwrap(),
            method: method.unwrap(),
            seeds: seeds.unwrap(),
            output_dir: output_dir.unwrap(),
            emit,
        })
    }

    fn parse_method(value: &Value, env: Option<&EnvSpec>, problems: &mut Vec<String>) -> Option<Method> {
        let Some(obj) = value.as_object() else {
            problems.push("method: must be an object".into());
            return None;
        };
        let mut body = obj.clone();
        let kind = body.remove("type");
        match kind.as_ref().and_then(Value::as_str) {
            Some("train") => {
                for reserved in ["env", "seed"] {
                    if body.contains_key(reserved) {
                        problems.push(format!("method.{reserved}: set at the top level, not inside method"));
                    }
                }
                let env = env?;
                body.insert("env".into(), serde_json::to_value(env).ok()?);
                let cfg: TrainConfig = field(&Value::Object(body), "method", problems)?;
                let before = problems.len();
                problems.extend(
                    cfg.problems()
                        .into_iter()
                        .filter(|p| !p.starts_with("env:"))
                        .map(|p| format!("method.{p}")),
                );
                (problems.len() == before).then_some(Method::Train(cfg))
            }
            Some("exact_pg") => {
                let s: ExactPgSettings = field(&Value::Object(body), "method", problems)?;
                let before = problems.len();
                if !(s.lambda >= 0.0 && s.lambda.is_finite()) {
                    problems.push(format!("method.lambda: must be finite and >= 0, got {}", s.lambda));
                }
                if !(s.lr > 0.0 && s.lr.is_finite()) {
                    problems.push(format!("method.lr: must be > 0, got {}", s.lr));
                }
                if s.iters == 0 {
                    problems.push("method.iters: must be >= 1".into());
                }
                if !(s.theta0_scale >= 0.0 && s.theta0_scale.is_finite()) {
                    problems.push("method.theta0_scale: must be finite and >= 0".into());
                }
                (problems.len() == before).then_some(Method::ExactPg(s))
            }
            Some(other) => {
                problems.push(format!("method.type: unknown method `{other}`, expected train or exact_pg"));
                None
            }
            None => {
                problems.push("method.type: missing, expected train or exact_pg".into());
                None
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// SHA-256 over every semantic field (the output directory is excluded).
    pub fn hash(&self) -> String {
        let value = serde_json::json!({
            "env": self.env,
            "method": self.method,
            "seeds": self.seeds,
            "emit": self.emit,
        });
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        match &mut out.method {
            Method::Train(cfg) => cfg.lambda = lambda,
            Method::ExactPg(s) => s.lambda = lambda,
        }
        out
    }

    fn lambda(&self) -> f64 {
        match &self.method {
            Method::Train(cfg) => cfg.lambda,
            Method::ExactPg(s) => s.lambda,
        }
    }
}

/// Parses `"0..9"` (inclusive) or a comma list such as `"1,4,7"`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidArgument(format!("seeds `{text}`: expected `a..b` or a comma list"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation over seeds divided by `√n`.
    pub stderr: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    Aggregate { mean, stderr, n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub finals: BTreeMap<String, f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seeds: Vec<SeedResult>,
    /// Over seeds without a failure, per final metric.
    pub aggregate: BTreeMap<String, Aggregate>,
    pub wall_clock_seconds: f64,
}

impl RunSummary {
    pub fn failed(&self) -> bool {
        self.seeds.iter().any(|s| s.failure.is_some())
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes via a sibling temp file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(
        ".{name}.tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        e.into()
    })
}

/// Heatmap artifacts: a grid CSV and, for grid layouts, an 8-bit PGM.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub csv: String,
    pub pgm: Option<Vec<u8>>,
}

/// Grid CSV of `values` aligned to the layout, plus a binary PGM with
/// open cells min-max scaled to 0..=255 and walls drawn 0. Without a layout
/// only a `state,count` CSV is produced.
pub fn emit_heatmap<T: Into<f64> + Copy + std::fmt::Display>(values: &[T], layout: Option<&GridLayout>) -> Result<Heatmap> {
    let Some(layout) = layout else {
        let mut csv = String::from("state,count\n");
        for (s, v) in values.iter().enumerate() {
            let _ = writeln!(csv, "{s},{v}");
        }
        return Ok(Heatmap { csv, pgm: None });
    };
    if values.len() != layout.n_cells() {
        return Err(Error::Shape(format!(
            "{} values for a {}x{} grid",
            values.len(),
            layout.rows,
            layout.cols
        )));
    }
    let csv = crate::dist::grid_csv(values, layout)?;
    let open: Vec<f64> = (0..values.len())
        .filter(|&s| !layout.is_wall(s))
        .map(|s| values[s].into())
        .collect();
    let lo = open.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = open.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut pgm = format!("P5\n{} {}\n255\n", layout.cols, layout.rows).into_bytes();
    for s in 0..values.len() {
        let v: f64 = values[s].into();
        let level = if layout.is_wall(s) || !(hi > lo) {
            0
        } else {
            (255.0 * (v - lo) / (hi - lo)).round() as u8
        };
        pgm.push(level);
    }
    Ok(Heatmap { csv, pgm: Some(pgm) })
}

/// `1` for walls, `0` for open cells.
pub fn layout_csv(layout: &GridLayout) -> Result<String> {
    let walls: Vec<u8> = (0..layout.n_cells()).map(|s| u8::from(layout.is_wall(s))).collect();
    crate::dist::grid_csv(&walls, layout)
}

/// Everything one seed produced, before it is written out.
struct SeedRun {
    result: SeedResult,
    /// `(x, y)` learning curve: episode and return, or iteration and `J`.
    curve: Vec<(usize, f64)>,
    files: Vec<(PathBuf, Vec<u8>)>,
}

fn initial_policy(environment: &Environment, scale: f64, seed: u64) -> Result<SoftmaxPolicy> {
    let nf = environment.fmap.n_features();
    let na = environment.mdp.n_actions();
    if scale == 0.0 {
        return Ok(SoftmaxPolicy::zeros(nf, na));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = (0..nf * na).map(|_| rng.gen_range(-scale..=scale)).collect();
    SoftmaxPolicy::from_flat(nf, na, theta)
}

fn distribution_files(environment: &Environment, policy: &SoftmaxPolicy, files: &mut Vec<(PathBuf, Vec<u8>)>) -> Result<()> {
    let d = exact_discounted(&environment.mdp, policy, &environment.fmap)?;
    files.push(("distribution_discounted.csv".into(), d.to_csv().into_bytes()));
    let restart = environment.mdp.terminal().iter().any(|&t| t);
    let st = exact_stationary(&environment.mdp, policy, &environment.fmap, restart)?;
    files.push(("distribution_stationary.csv".into(), st.to_csv().into_bytes()));
    Ok(())
}

fn heatmap_files<T: Into<f64> + Copy + std::fmt::Display>(
    values: &[T],
    layout: Option<&GridLayout>,
    files: &mut Vec<(PathBuf, Vec<u8>)>,
) -> Result<()> {
    let map = emit_heatmap(values, layout)?;
    files.push(("heatmap.csv".into(), map.csv.into_bytes()));
    if let Some(pgm) = map.pgm {
        files.push(("heatmap.pgm".into(), pgm));
    }
    if let Some(layout) = layout {
        files.push(("layout.csv".into(), layout_csv(layout)?.into_bytes()));
    }
    Ok(())
}

fn run_seed(cfg: &ExperimentConfig, environment: &Environment, seed: u64) -> Result<SeedRun> {
    let mut files = Vec::new();
    let mut finals = BTreeMap::new();
    match &cfg.method {
        Method::Train(train) => {
            let mut tc = train.clone();
            tc.seed = seed;
            let out = agents::train_on(&tc, environment)?;
            files.push(("metrics.csv".into(), metrics_csv(&out.rows).into_bytes()));
            finals.insert("final_return".into(), out.final_return(FINAL_WINDOW));
            finals.insert("distinct_states".into(), out.distinct_states() as f64);
            finals.insert("total_steps".into(), out.total_steps as f64);
            finals.insert("episodes".into(), out.rows.len() as f64);
            if cfg.emit.contains(&Artifact::Heatmap) {
                let visits: Vec<f64> = out.visits.iter().map(|&v| v as f64).collect();
                heatmap_files(&visits, environment.layout.as_ref(), &mut files)?;
            }
            if cfg.emit.contains(&Artifact::Distributions) {
                distribution_files(environment, &out.policy, &mut files)?;
            }
            if cfg.emit.contains(&Artifact::Checkpoints) {
                for c in &out.checkpoints {
                    files.push((
                        format!("checkpoints/episode_{}.json", c.episode).into(),
                        serde_json::to_vec(c)?,
                    ));
                }
                files.push(("checkpoints/final_theta.json".into(), serde_json::to_vec(&out.policy)?));
            }
            let curve = out.rows.iter().map(|r| (r.episode, r.ret)).collect();
            Ok(SeedRun {
                result: SeedResult {
                    seed,
                    finals: finals.into_iter().filter(|(_, v): &(String, f64)| v.is_finite()).collect(),
                    failure: out.failure,
                },
                curve,
                files,
            })
        }
        Method::ExactPg(s) => {
            let theta0 = initial_policy(environment, s.theta0_scale, seed)?;
            let trace = run_exact_pg(
                &environment.mdp,
                &theta0,
                &environment.fmap,
                s.lambda,
                s.lr,
                s.iters,
                s.kind,
            )?;
            files.push(("metrics.csv".into(), trace.to_csv().into_bytes()));
            let optimum = value_iteration(&environment.mdp, 1e-12)?.start_value(&environment.mdp);
            finals.insert("optimal_j".into(), optimum);
            if let Some(last) = trace.records.last() {
                finals.insert("j".into(), last.j);
                finals.insert("entropy".into(), last.entropy);
                finals.insert("j_tilde".into(), last.j_tilde);
                finals.insert("grad_inf_norm".into(), last.grad_inf_norm);
            }
            if let Some(it) = trace.first_reaching(optimum - 0.02 * optimum.abs()) {
                finals.insert("iterations_to_2pct".into(), it as f64);
            }
            if cfg.emit.contains(&Artifact::Heatmap) {
                let d = exact_discounted(&environment.mdp, &trace.final_policy, &environment.fmap)?;
                heatmap_files(&d.probs, environment.layout.as_ref(), &mut files)?;
            }
            if cfg.emit.contains(&Artifact::Distributions) {
                distribution_files(environment, &trace.final_policy, &mut files)?;
            }
            if cfg.emit.contains(&Artifact::Checkpoints) {
                files.push(("checkpoints/final_theta.json".into(), serde_json::to_vec(&trace.final_policy)?));
            }
            let curve = trace.records.iter().map(|r| (r.iteration, r.j)).collect();
            Ok(SeedRun {
                result: SeedResult {
                    seed,
                    finals: finals.into_iter().filter(|(_, v)| v.is_finite()).collect(),
                    failure: trace.failure.clone(),
                },
                curve,
                files,
            })
        }
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = workers {
        if k == 0 {
            return Err(Error::InvalidArgument("workers must be >= 1".into()));
        }
        builder = builder.num_threads(k);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

fn execute(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<(Vec<SeedRun>, f64)> {
    let environment = env::build(&cfg.env)?;
    let start = Instant::now();
    let runs = pool(workers)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                run_seed(cfg, &environment, seed).unwrap_or_else(|e| SeedRun {
                    result: SeedResult {
                        seed,
                        finals: BTreeMap::new(),
                        failure: Some(e.to_string()),
                    },
                    curve: Vec::new(),
                    files: Vec::new(),
                })
            })
            .collect::<Vec<_>>()
    });
    Ok((runs, start.elapsed().as_secs_f64()))
}

fn summarize(cfg: &ExperimentConfig, runs: &[SeedRun], seconds: f64) -> RunSummary {
    let ok: Vec<&SeedResult> = runs
        .iter()
        .map(|r| &r.result)
        .filter(|r| r.failure.is_none())
        .collect();
    let mut keys: BTreeSet<&String> = BTreeSet::new();
    for r in &ok {
        keys.extend(r.finals.keys());
    }
    let aggregate = keys
        .into_iter()
        .filter(|k| ok.iter().all(|r| r.finals.contains_key(*k)))
        .map(|k| {
            let values: Vec<f64> = ok.iter().map(|r| r.finals[k]).collect();
            (k.clone(), aggregate(&values))
        })
        .collect();
    RunSummary {
        config_hash: cfg.hash(),
        seeds: runs.iter().map(|r| r.result.clone()).collect(),
        aggregate,
        wall_clock_seconds: seconds,
    }
}

/// Runs every seed and writes per-seed artifacts, `config.json` and
/// `summary.json` under `cfg.output_dir`.
pub fn run(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<RunSummary> {
    let (runs, seconds) = execute(cfg, workers)?;
    let root = &cfg.output_dir;
    for r in &runs {
        let dir = seed_dir(root, r.result.seed);
        for (name, bytes) in &r.files {
            write_atomic(&dir.join(name), bytes)?;
        }
    }
    let summary = summarize(cfg, &runs, seconds);
    write_atomic(&root.join("config.json"), serde_json::to_string_pretty(cfg)?.as_bytes())?;
    write_atomic(&root.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

/// `run`, from a config file.
pub fn run_path(config_path: &Path, workers: Option<usize>) -> Result<RunSummary> {
    run(&ExperimentConfig::load(config_path)?, workers)
}

pub const SWEEP_HEADER: &str = "lambda,seed,episode,return";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub lambdas: Vec<f64>,
    pub runs: Vec<(f64, RunSummary)>,
}

/// Sorted, deduplicated λ values with the `λ = 0` baseline always present.
pub fn sweep_lambdas(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("lambda {bad} must be finite and >= 0")));
    }
    let mut out: Vec<f64> = values.to_vec();
    out.push(0.0);
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// One run per `(λ, seed)`; writes `sweep.csv` in long format
/// (`lambda,seed,episode,return`, exact-PG traces use iteration and `J`)
/// and `sweep_summary.json`.
pub fn sweep(cfg: &ExperimentConfig, lambdas: &[f64], workers: Option<usize>) -> Result<SweepSummary> {
    let lambdas = sweep_lambdas(lambdas)?;
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    let mut runs = Vec::new();
    for &lambda in &lambdas {
        let mut sub = cfg.with_lambda(lambda);
        if let Method::Train(tc) = &mut sub.method {
            if lambda > 0.0 && tc.mode == agents::Mode::Unregularized {
                return Err(Error::Config(vec!["method.mode: a sweep over lambda > 0 needs a regularizing mode".into()]));
            }
        }
        sub.output_dir = cfg.output_dir.join(format!("lambda_{lambda}"));
        let (seed_runs, seconds) = execute(&sub, workers)?;
        for r in &seed_runs {
            for (x, y) in &r.curve {
                let _ = writeln!(csv, "{lambda},{},{x},{y}", r.result.seed);
            }
        }
        runs.push((sub.lambda(), summarize(&sub, &seed_runs, seconds)));
    }
    let summary = SweepSummary {
        config_hash: cfg.hash(),
        lambdas,
        runs,
    };
    write_atomic(&cfg.output_dir.join("sweep.csv"), csv.as_bytes())?;
    write_atomic(
        &cfg.output_dir.join("sweep_summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    Ok(summary)
}

/// Exact `d̄`, the stationary law and both entropies for a policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistReport {
    pub discounted: Vec<f64>,
    pub stationary: Vec<f64>,
    pub entropy_discounted: f64,
    pub entropy_stationary: f64,
}

pub fn eval_dist(environment: &Environment, policy: &SoftmaxPolicy) -> Result<DistReport> {
    let d = exact_discounted(&environment.mdp, policy, &environment.fmap)?;
    let restart = environment.mdp.terminal().iter().any(|&t| t);
    let st = exact_stationary(&environment.mdp, policy, &environment.fmap, restart)?;
    Ok(DistReport {
        entropy_discounted: entropy(&d)?,
        entropy_stationary: entropy(&st)?,
        discounted: d.probs,
        stationary: st.probs,
    })
}

/// Reads a policy saved as `checkpoints/final_theta.json` or as an agent
/// checkpoint.
pub fn load_policy(path: &Path, environment: &Environment) -> Result<SoftmaxPolicy> {
    let value: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let nf = environment.fmap.n_features();
    let na = environment.mdp.n_actions();
    let policy = if let Some(theta) = value.get("theta").filter(|t| t.is_array()) {
        if value.get("n_features").is_some() {
            serde_json::from_value::<SoftmaxPolicy>(value.clone())?
        } else {
            SoftmaxPolicy::from_flat(nf, na, serde_json::from_value(theta.clone())?)?
        }
    } else {
        return Err(Error::InvalidArgument(format!("{}: no `theta` array", path.display())));
    };
    if policy.n_features() != nf || policy.n_actions() != na {
        return Err(Error::Shape(format!(
            "checkpoint is {}x{}, environment needs {nf}x{na}",
            policy.n_features(),
            policy.n_actions()
        )));
    }
    Ok(policy)
}
