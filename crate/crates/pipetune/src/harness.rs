//! Experiment harness: drives agent and baseline policies over seeded
//! environments, streams per-step CSV metrics, and runs the comparison and
//! scaling studies behind the `bench` and `compare` CLI subcommands.
//!
//! Reproducibility contract: identical config + seed produce byte-identical
//! CSV output. Per-seed runs are independent and execute in parallel; all
//! merging is single-threaded.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::agent::{
    load_checkpoint, pretrain_offline, CurveRow, DqnAgent, EnvSampler, OnlineLoop,
};
use crate::alloc::{run_allocator, AllocatorKind, EstimatorBias};
use crate::config::{AllocatorPolicy, ExperimentConfig, PolicyConfig, RandomizeConfig};
use crate::env::{steps_to_convergence, ActionVec, Env, EnvConfig, StepOutcome};
use crate::error::{Error, Result};
use crate::mlp::MlpParams;
use crate::model::{
    mix_seed, pipeline_throughput, MachineSpec, PipelineSpec, StageKind, WorkloadSpec,
};

/// Convergence detector settings used for run summaries (trailing windows of
/// the reward history).
pub const CONVERGENCE_WINDOW: usize = 200;
pub const CONVERGENCE_TOLERANCE: f64 = 0.01;

/// Trailing window used for "settled" throughput measurements in summaries
/// and study ratios.
pub const TRAILING_WINDOW: usize = 200;

/// Per-step event annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventTag {
    None,
    Resize,
    Oom,
    Relaunch,
}

impl EventTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventTag::None => "none",
            EventTag::Resize => "resize",
            EventTag::Oom => "oom",
            EventTag::Relaunch => "relaunch",
        }
    }
}

/// One CSV row per environment step.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub step: usize,
    pub cpu_budget: u32,
    /// Per-knob allocation in knob order (CPU knobs, then prefetch units).
    pub alloc: Vec<u32>,
    pub achieved_rate: f64,
    pub throughput_norm: f64,
    pub reward: f64,
    pub mem_used_mb: f64,
    pub oom: bool,
    pub event: EventTag,
}

impl MetricsRow {
    pub fn csv_header() -> &'static str {
        "run_id,seed,step,cpu_budget,alloc,achieved_rate,throughput_norm,reward,mem_used_mb,oom,event"
    }

    pub fn to_csv(&self) -> String {
        let alloc = self
            .alloc
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("|");
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.seed,
            self.step,
            self.cpu_budget,
            alloc,
            fmt_sig(self.achieved_rate),
            fmt_sig(self.throughput_norm),
            fmt_sig(self.reward),
            fmt_sig(self.mem_used_mb),
            self.oom,
            self.event.as_str()
        )
    }
}

/// Formats a float with six significant digits (plain notation).
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".to_string()
        } else if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let exponent = v.abs().log10().floor() as i32;
    let decimals = (5 - exponent).clamp(0, 17) as usize;
    format!("{v:.decimals$}")
}

/// Aggregates of one (policy, seed) run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub policy: String,
    pub seed: u64,
    pub mean_throughput_norm: f64,
    /// Mean over the trailing window, i.e. the settled level.
    pub final_throughput_norm: f64,
    pub crash_count: usize,
    pub steps_to_convergence: Option<usize>,
    pub vs_unoptimized_ratio: f64,
    pub vs_greedy_ratio: f64,
}

/// All rows and the summary of one run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub runs: Vec<RunResult>,
}

fn resize_steps(env: &EnvConfig) -> BTreeSet<usize> {
    env.resize_schedule.iter().map(|ev| ev.step).collect()
}

/// Environment for one seeded run: the configured noise seed is mixed with
/// the run seed so distinct seeds see distinct noise streams while identical
/// (config, seed) pairs reproduce exactly.
pub fn build_env(cfg: &ExperimentConfig, seed: u64) -> Result<Env> {
    let mut env_cfg = cfg.env.clone();
    env_cfg.noise_seed = mix_seed(env_cfg.noise_seed, seed);
    Env::new(
        cfg.pipeline.clone(),
        cfg.machine.clone(),
        cfg.workload.clone(),
        env_cfg,
    )
}

fn row_from_outcome(
    run_id: &str,
    seed: u64,
    step: usize,
    outcome: &StepOutcome,
    alloc: Vec<u32>,
    is_resize_step: bool,
) -> MetricsRow {
    let event = if is_resize_step {
        EventTag::Resize
    } else if outcome.crashed {
        EventTag::Oom
    } else {
        EventTag::None
    };
    MetricsRow {
        run_id: run_id.to_string(),
        seed,
        step,
        cpu_budget: outcome.info.cpu_budget,
        alloc,
        achieved_rate: outcome.info.achieved_rate,
        throughput_norm: outcome.state.throughput_norm,
        reward: outcome.reward,
        mem_used_mb: outcome.info.mem_used_mb,
        oom: outcome.crashed,
        event,
    }
}

/// Drives a baseline allocator run: the allocation is computed once (and,
/// for adaptive baselines, recomputed after each resize's relaunch window)
/// and the environment is stepped with all-maintain actions.
fn run_allocator_policy(
    cfg: &ExperimentConfig,
    policy: &AllocatorPolicy,
    seed: u64,
    run_id: &str,
) -> Result<Vec<MetricsRow>> {
    let mut env = build_env(cfg, seed)?;
    env.reset()?;
    let alloc = run_allocator(
        policy.kind,
        &cfg.pipeline,
        env.machine(),
        &cfg.workload,
        &policy.bias,
    )?;
    env.set_allocation(alloc)?;

    let resizes = resize_steps(&cfg.env);
    let knobs = env.knobs();
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut relaunch_remaining = 0usize;
    for step in 0..cfg.steps {
        let is_resize = resizes.contains(&step);
        let outcome = env.step(&ActionVec::maintain(knobs))?;
        if is_resize && policy.adaptive {
            relaunch_remaining = policy.relaunch_downtime_steps;
        }
        let mut row = row_from_outcome(
            run_id,
            seed,
            step,
            &outcome,
            env.allocation().knob_values(env.pipeline()),
            is_resize,
        );
        if relaunch_remaining > 0 {
            // Pipeline is torn down while the baseline re-launches.
            relaunch_remaining -= 1;
            row.achieved_rate = 0.0;
            row.throughput_norm = 0.0;
            row.reward = 0.0;
            row.mem_used_mb = 0.0;
            if !is_resize {
                row.event = EventTag::Relaunch;
            }
            if relaunch_remaining == 0 {
                let alloc = run_allocator(
                    policy.kind,
                    &cfg.pipeline,
                    env.machine(),
                    &cfg.workload,
                    &policy.bias,
                )?;
                env.set_allocation(alloc)?;
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Drives an agent run: online fine-tuning (epsilon-greedy + TD updates)
/// starting from `initial` parameters or a fresh network.
fn run_agent_policy(
    cfg: &ExperimentConfig,
    seed: u64,
    run_id: &str,
    initial: Option<&MlpParams>,
) -> Result<Vec<MetricsRow>> {
    let mut env = build_env(cfg, seed)?;
    env.reset()?;
    let params = match initial {
        Some(p) => p.clone(),
        None => MlpParams::new(
            [
                env.state_len(),
                cfg.net.hidden1,
                cfg.net.hidden2,
                env.action_count() as usize,
            ],
            mix_seed(seed, 0x1217),
        ),
    };
    let mut agent = DqnAgent::with_params(params, cfg.hyper.clone(), mix_seed(seed, 0xACE))?;
    let resizes = resize_steps(&cfg.env);
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut driver = OnlineLoop::new(&mut agent, &mut env)?;
    for step in 0..cfg.steps {
        let ds = driver.step_once(false)?;
        let alloc = driver.env.allocation().knob_values(driver.env.pipeline());
        rows.push(row_from_outcome(
            run_id,
            seed,
            step,
            &ds.outcome,
            alloc,
            resizes.contains(&step),
        ));
    }
    Ok(rows)
}

fn run_policy(
    cfg: &ExperimentConfig,
    seed: u64,
    run_id: &str,
    pretrained: Option<&MlpParams>,
) -> Result<Vec<MetricsRow>> {
    match &cfg.policy {
        PolicyConfig::Agent(_) => run_agent_policy(cfg, seed, run_id, pretrained),
        PolicyConfig::Allocator(a) => run_allocator_policy(cfg, a, seed, run_id),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn trailing_mean(values: &[f64], window: usize) -> f64 {
    let w = window.min(values.len()).max(1);
    mean(values[values.len() - w..].iter().copied())
}

fn summarize(
    run_id: &str,
    policy: &str,
    seed: u64,
    rows: &[MetricsRow],
    unoptimized: &[MetricsRow],
    greedy: &[MetricsRow],
) -> RunSummary {
    let norms: Vec<f64> = rows.iter().map(|r| r.throughput_norm).collect();
    let rewards: Vec<f64> = rows.iter().map(|r| r.reward).collect();
    let ratio = |base: &[MetricsRow]| {
        let own = mean(rows.iter().map(|r| r.achieved_rate));
        let other = mean(base.iter().map(|r| r.achieved_rate));
        if other > 0.0 {
            own / other
        } else {
            f64::NAN
        }
    };
    RunSummary {
        run_id: run_id.to_string(),
        policy: policy.to_string(),
        seed,
        mean_throughput_norm: mean(norms.iter().copied()),
        final_throughput_norm: trailing_mean(&norms, TRAILING_WINDOW),
        crash_count: rows.iter().filter(|r| r.oom).count(),
        steps_to_convergence: steps_to_convergence(
            &rewards,
            CONVERGENCE_WINDOW.min(rows.len().max(4) / 2),
            CONVERGENCE_TOLERANCE,
        ),
        vs_unoptimized_ratio: ratio(unoptimized),
        vs_greedy_ratio: ratio(greedy),
    }
}

fn static_baseline(kind: AllocatorKind) -> AllocatorPolicy {
    AllocatorPolicy {
        kind,
        adaptive: false,
        bias: EstimatorBias::default(),
        relaunch_downtime_steps: 50,
    }
}

/// Runs the configured policy for every seed, with the single-CPU and
/// greedy-estimated baselines re-run under identical seeds and schedule for
/// the normalization ratios.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pretrained = match (&cfg.policy, &cfg.checkpoint) {
        (PolicyConfig::Agent(_), Some(path)) => {
            let (params, _, r) = load_checkpoint(Path::new(path))?;
            if r != cfg.pipeline.knobs() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint is for {r}-knob pipelines, config has {}",
                    cfg.pipeline.knobs()
                )));
            }
            Some(params)
        }
        _ => None,
    };
    let label = cfg.policy.label();
    let runs: Result<Vec<RunResult>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run_id = format!("{label}-s{seed}");
            let rows = run_policy(cfg, seed, &run_id, pretrained.as_ref())?;
            let unoptimized = run_allocator_policy(
                cfg,
                &static_baseline(AllocatorKind::SingleCpu),
                seed,
                "unoptimized-base",
            )?;
            let greedy = run_allocator_policy(
                cfg,
                &static_baseline(AllocatorKind::GreedyEstimated),
                seed,
                "greedy-base",
            )?;
            let summary = summarize(&run_id, &label, seed, &rows, &unoptimized, &greedy);
            Ok(RunResult {
                run_id,
                seed,
                rows,
                summary,
            })
        })
        .collect();
    Ok(ExperimentOutput { runs: runs? })
}

/// Writes `metrics_<runid>.csv` per run plus a combined `summary.json`.
/// Returns the paths written.
pub fn write_experiment_output(output: &ExperimentOutput, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut paths = Vec::new();
    for run in &output.runs {
        let path = out_dir.join(format!("metrics_{}.csv", run.run_id));
        let mut text = String::with_capacity(run.rows.len() * 64);
        text.push_str(MetricsRow::csv_header());
        text.push('\n');
        for row in &run.rows {
            text.push_str(&row.to_csv());
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        paths.push(path);
    }
    let summaries: Vec<&RunSummary> = output.runs.iter().map(|r| &r.summary).collect();
    let path = out_dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&summaries)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
    paths.push(path);
    Ok(paths)
}

/// One policy's aggregate line in a comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub mean_throughput_norm: f64,
    pub final_throughput_norm: f64,
    pub mean_achieved_rate: f64,
    pub vs_unoptimized_ratio: f64,
    pub vs_greedy_ratio: f64,
    pub total_crashes: usize,
    pub mean_steps_to_convergence: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut text = String::from(
            "policy,mean_throughput_norm,final_throughput_norm,mean_achieved_rate,\
             vs_unoptimized_ratio,vs_greedy_ratio,total_crashes,mean_steps_to_convergence\n",
        );
        for row in &self.rows {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.policy,
                fmt_sig(row.mean_throughput_norm),
                fmt_sig(row.final_throughput_norm),
                fmt_sig(row.mean_achieved_rate),
                fmt_sig(row.vs_unoptimized_ratio),
                fmt_sig(row.vs_greedy_ratio),
                row.total_crashes,
                row.mean_steps_to_convergence
                    .map(|v| fmt_sig(v))
                    .unwrap_or_default(),
            ));
        }
        text
    }
}

fn aggregate_output(label: &str, output: &ExperimentOutput) -> ComparisonRow {
    let summaries: Vec<&RunSummary> = output.runs.iter().map(|r| &r.summary).collect();
    let mean_of = |f: &dyn Fn(&RunSummary) -> f64| mean(summaries.iter().map(|s| f(s)));
    let convergences: Vec<f64> = summaries
        .iter()
        .filter_map(|s| s.steps_to_convergence.map(|v| v as f64))
        .collect();
    let mean_rate = mean(
        output
            .runs
            .iter()
            .flat_map(|r| r.rows.iter().map(|row| row.achieved_rate)),
    );
    ComparisonRow {
        policy: label.to_string(),
        mean_throughput_norm: mean_of(&|s| s.mean_throughput_norm),
        final_throughput_norm: mean_of(&|s| s.final_throughput_norm),
        mean_achieved_rate: mean_rate,
        vs_unoptimized_ratio: mean_of(&|s| s.vs_unoptimized_ratio),
        vs_greedy_ratio: mean_of(&|s| s.vs_greedy_ratio),
        total_crashes: summaries.iter().map(|s| s.crash_count).sum(),
        mean_steps_to_convergence: if convergences.is_empty() {
            None
        } else {
            Some(mean(convergences.iter().copied()))
        },
    }
}

/// Compares policies across configs that share pipeline, machine, workload,
/// environment, seeds, and step count.
pub fn run_comparison(
    configs: &[ExperimentConfig],
) -> Result<(ComparisonTable, Vec<ExperimentOutput>)> {
    if configs.is_empty() {
        return Err(Error::Config(vec!["no configs given".into()]));
    }
    let shared = configs[0].shared_fields_value();
    for (i, cfg) in configs.iter().enumerate().skip(1) {
        if cfg.shared_fields_value() != shared {
            return Err(Error::Config(vec![format!(
                "config {i}: shared fields (pipeline/machine/workload/env/seeds/steps) \
                 differ from config 0"
            )]));
        }
    }
    let outputs: Vec<ExperimentOutput> = configs
        .iter()
        .map(run_experiment)
        .collect::<Result<Vec<_>>>()?;
    let rows = configs
        .iter()
        .zip(&outputs)
        .map(|(cfg, out)| aggregate_output(&cfg.policy.label(), out))
        .collect();
    Ok((ComparisonTable { rows }, outputs))
}

/// Expands one config into the standard comparison set: the configured
/// policy plus the static baselines.
pub fn expand_comparison(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut configs = vec![cfg.clone()];
    for kind in [
        AllocatorKind::SingleCpu,
        AllocatorKind::EvenSplit,
        AllocatorKind::GreedyEstimated,
        AllocatorKind::MaximinSolver,
    ] {
        let policy = PolicyConfig::Allocator(static_baseline(kind));
        if policy.label() != cfg.policy.label() {
            let mut c = cfg.clone();
            c.policy = policy;
            configs.push(c);
        }
    }
    configs
}

// ---------------------------------------------------------------------------
// Offline pretraining support
// ---------------------------------------------------------------------------

/// Samples environments around a base config: per-stage cost jitter, CPU
/// budget, total memory, and target rate are drawn per episode. Resize
/// schedules are stripped; the live schedule is an online-phase concern.
pub struct RandomizedEnvSampler {
    pipeline: PipelineSpec,
    machine: MachineSpec,
    workload: WorkloadSpec,
    env: EnvConfig,
    ranges: RandomizeConfig,
}

impl RandomizedEnvSampler {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let mut env = cfg.env.clone();
        env.resize_schedule.clear();
        RandomizedEnvSampler {
            pipeline: cfg.pipeline.clone(),
            machine: cfg.machine.clone(),
            workload: cfg.workload.clone(),
            env,
            ranges: cfg.pretrain.randomize.clone(),
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

impl EnvSampler for RandomizedEnvSampler {
    fn knobs(&self) -> usize {
        self.pipeline.knobs()
    }

    fn sample(&mut self, rng: &mut ChaCha8Rng) -> Result<Env> {
        let mut pipeline = self.pipeline.clone();
        for stage in &mut pipeline.stages {
            if !stage.is_prefetch() {
                stage.cost_per_item_cpu_s *= log_uniform(rng, self.ranges.cost_scale);
            }
        }
        let mut machine = self.machine.clone();
        let stages = pipeline.stages.len() as u32;
        let [lo, hi] = self.ranges.budget_range.unwrap_or([
            (2 * stages).min(self.machine.total_cpus).max(stages),
            self.machine.total_cpus,
        ]);
        machine.total_cpus = rng.random_range(lo..=hi);
        machine.total_mem_mb *= log_uniform(rng, self.ranges.mem_scale);
        let target = self.workload.target() * log_uniform(rng, self.ranges.target_scale);
        let workload = WorkloadSpec::new(
            self.workload.batch_size,
            self.workload.batch_size as f64 / target,
        );
        let mut env_cfg = self.env.clone();
        env_cfg.noise_seed = rng.random();
        Env::new(pipeline, machine, workload, env_cfg)
    }
}

/// Offline pretraining over randomized variants of the config's environment.
/// Uses `pretrain.hyper` when present (the offline phase usually wants a full
/// exploration schedule), falling back to the stock hyperparameters.
pub fn pretrain_agent(
    cfg: &ExperimentConfig,
    total_steps: usize,
    seed: u64,
) -> Result<(MlpParams, Vec<CurveRow>)> {
    let mut sampler = RandomizedEnvSampler::from_config(cfg);
    let hyper = cfg
        .pretrain
        .hyper
        .clone()
        .unwrap_or_else(crate::agent::AgentHyperparams::default);
    pretrain_offline(
        &mut sampler,
        (cfg.net.hidden1, cfg.net.hidden2),
        &hyper,
        total_steps,
        cfg.pretrain.episode_len,
        seed,
    )
}

/// Writes the pretraining curve to `pretrain_curve.csv` in `out_dir`.
pub fn write_curve(curve: &[CurveRow], out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let path = out_dir.join("pretrain_curve.csv");
    let mut text = String::from("episode,env_steps,mean_reward,mean_loss,epsilon\n");
    for row in curve {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            row.episode,
            row.env_steps,
            fmt_sig(row.mean_reward),
            row.mean_loss.map(fmt_sig).unwrap_or_default(),
            fmt_sig(row.epsilon),
        ));
    }
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Scaling studies
// ---------------------------------------------------------------------------

/// Options shared by the three scaling studies.
#[derive(Debug, Clone)]
pub struct StudyOptions {
    /// Online steps per study point.
    pub steps: usize,
    pub seeds: Vec<u64>,
    /// Directory holding `agent_r<r>.json` checkpoints; points fall back to
    /// fresh networks when the file for their knob count is absent.
    pub checkpoint_dir: Option<PathBuf>,
}

/// One study point: the agent and the re-launched greedy baseline measured
/// by their trailing-window mean achieved rate (averaged over seeds).
#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub x: f64,
    pub agent_rate: f64,
    pub greedy_rate: f64,
    pub agent_norm: f64,
    pub greedy_norm: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyTable {
    pub study: String,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn to_csv(&self) -> String {
        let mut text =
            String::from("study,x,agent_rate,greedy_rate,agent_norm,greedy_norm,ratio\n");
        for row in &self.rows {
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.study,
                fmt_sig(row.x),
                fmt_sig(row.agent_rate),
                fmt_sig(row.greedy_rate),
                fmt_sig(row.agent_norm),
                fmt_sig(row.greedy_norm),
                fmt_sig(row.ratio),
            ));
        }
        text
    }
}

fn checkpoint_for(opts: &StudyOptions, r: usize) -> Option<MlpParams> {
    let dir = opts.checkpoint_dir.as_ref()?;
    let path = dir.join(format!("agent_r{r}.json"));
    if !path.exists() {
        return None;
    }
    load_checkpoint(&path).ok().and_then(
        |(params, _, ckpt_r)| {
            if ckpt_r == r {
                Some(params)
            } else {
                None
            }
        },
    )
}

/// Trailing-window mean achieved rate of a run's rows.
fn settled_rate(rows: &[MetricsRow]) -> f64 {
    let rates: Vec<f64> = rows.iter().map(|r| r.achieved_rate).collect();
    trailing_mean(&rates, TRAILING_WINDOW)
}

/// Measures one study point: the agent (fine-tuned online) against the
/// greedy baseline launched at the same machine size.
fn study_point(cfg: &ExperimentConfig, opts: &StudyOptions) -> Result<(f64, f64)> {
    let pretrained = checkpoint_for(opts, cfg.pipeline.knobs());
    let agent_rates: Vec<f64> = opts
        .seeds
        .par_iter()
        .map(|&seed| {
            run_agent_policy(cfg, seed, "study-agent", pretrained.as_ref()).map(|r| settled_rate(&r))
        })
        .collect::<Result<Vec<_>>>()?;
    let greedy_rates: Vec<f64> = opts
        .seeds
        .iter()
        .map(|&seed| {
            run_allocator_policy(
                cfg,
                &static_baseline(AllocatorKind::GreedyEstimated),
                seed,
                "study-greedy",
            )
            .map(|r| settled_rate(&r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        mean(agent_rates.into_iter()),
        mean(greedy_rates.into_iter()),
    ))
}

/// A workload whose target rate sits safely above anything the pipeline can
/// produce with `budget` CPUs, so the model cap never binds (the
/// zero-model-latency regime).
fn uncapped_workload(pipeline: &PipelineSpec, machine: &MachineSpec, batch_size: u64) -> WorkloadSpec {
    let cost_sum: f64 = pipeline
        .stages
        .iter()
        .filter(|s| !s.is_prefetch())
        .map(|s| s.cost_per_item_cpu_s)
        .sum();
    // max-min pipeline rate is bounded by budget * ghz / sum(costs)
    let bound = f64::from(machine.total_cpus) * machine.cpu_ghz / cost_sum;
    let target = 1.25 * bound;
    WorkloadSpec::new(batch_size, batch_size as f64 / target)
}

fn study_config(base: &ExperimentConfig) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.env.resize_schedule.clear();
    cfg.policy = PolicyConfig::Agent(crate::config::AgentPolicy::default());
    cfg.checkpoint = None;
    cfg
}

/// Pipeline-complexity study: the agent-vs-greedy ratio at pipeline lengths
/// 2..=5, built by truncating the base pipeline (which must carry at least
/// five stages in canonical order). Model latency is set to the zero-idle
/// regime so the target rate never caps the pipeline.
pub fn scaling_study_complexity(
    base: &ExperimentConfig,
    opts: &StudyOptions,
) -> Result<StudyTable> {
    if base.pipeline.stages.len() < 5 {
        return Err(Error::Config(vec![
            "pipeline: the complexity study needs the full 5-stage base pipeline".into(),
        ]));
    }
    let mut rows = Vec::new();
    for len in 2..=5usize {
        let mut cfg = study_config(base);
        cfg.pipeline.stages = base.pipeline.stages[..len].to_vec();
        cfg.workload = uncapped_workload(&cfg.pipeline, &cfg.machine, base.workload.batch_size);
        cfg.steps = opts.steps;
        let (agent_rate, greedy_rate) = study_point(&cfg, opts)?;
        let target = cfg.workload.target();
        rows.push(StudyRow {
            x: len as f64,
            agent_rate,
            greedy_rate,
            agent_norm: agent_rate / target,
            greedy_norm: greedy_rate / target,
            ratio: agent_rate / greedy_rate,
        });
    }
    Ok(StudyTable {
        study: "complexity".to_string(),
        rows,
    })
}

/// Machine-size study: budgets swept 8..=128 in increments of 2, greedy
/// re-launched at every size.
pub fn scaling_study_cpus(base: &ExperimentConfig, opts: &StudyOptions) -> Result<StudyTable> {
    let template = {
        let mut cfg = study_config(base);
        // One fixed, uncapped target across all machine sizes.
        let mut biggest = cfg.machine.clone();
        biggest.total_cpus = 128;
        cfg.workload = uncapped_workload(&cfg.pipeline, &biggest, base.workload.batch_size);
        cfg.steps = opts.steps;
        cfg
    };
    let budgets: Vec<u32> = (8..=128).step_by(2).collect();
    let rows = budgets
        .into_iter()
        .map(|budget| {
            let mut cfg = template.clone();
            cfg.machine.total_cpus = budget;
            let (agent_rate, greedy_rate) = study_point(&cfg, opts)?;
            let target = cfg.workload.target();
            Ok(StudyRow {
                x: f64::from(budget),
                agent_rate,
                greedy_rate,
                agent_norm: agent_rate / target,
                greedy_norm: greedy_rate / target,
                ratio: agent_rate / greedy_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyTable {
        study: "cpus".to_string(),
        rows,
    })
}

/// Batch sizes swept by the batch study.
pub const BATCH_SWEEP: [u64; 5] = [1_000, 4_000, 16_000, 24_096, 64_000];

/// Exponent scaling batch-stage cost with batch size in the batch study.
pub const BATCH_COST_EXPONENT: f64 = 0.15;

/// Batch-size study: batch-dependent stage costs scale as
/// `(batch / base_batch)^BATCH_COST_EXPONENT` and model latency scales
/// linearly so the target rate stays fixed; prefetch memory grows with the
/// batch footprint on its own.
pub fn scaling_study_batch(base: &ExperimentConfig, opts: &StudyOptions) -> Result<StudyTable> {
    let base_batch = base.workload.batch_size;
    let target = base.workload.target();
    let rows = BATCH_SWEEP
        .iter()
        .map(|&batch| {
            let mut cfg = study_config(base);
            let scale = (batch as f64 / base_batch as f64).powf(BATCH_COST_EXPONENT);
            for stage in &mut cfg.pipeline.stages {
                if stage.kind == StageKind::Batch {
                    stage.cost_per_item_cpu_s *= scale;
                }
            }
            cfg.workload = WorkloadSpec::new(batch, batch as f64 / target);
            cfg.steps = opts.steps;
            let (agent_rate, greedy_rate) = study_point(&cfg, opts)?;
            Ok(StudyRow {
                x: batch as f64,
                agent_rate,
                greedy_rate,
                agent_norm: agent_rate / target,
                greedy_norm: greedy_rate / target,
                ratio: agent_rate / greedy_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyTable {
        study: "batch".to_string(),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Returns the pipeline with every stage cost multiplied by `scale`.
pub fn scale_costs(pipeline: &PipelineSpec, scale: f64) -> PipelineSpec {
    let mut scaled = pipeline.clone();
    for stage in &mut scaled.stages {
        if !stage.is_prefetch() {
            stage.cost_per_item_cpu_s *= scale;
        }
    }
    scaled
}

/// Finds the single scalar on all stage costs that makes the single-CPU
/// allocation achieve `fraction` of the target rate (the case-study
/// calibration fit). Bisection on a monotone function of the scale.
pub fn fit_single_cpu_fraction(
    pipeline: &PipelineSpec,
    machine: &MachineSpec,
    workload: &WorkloadSpec,
    fraction: f64,
) -> Result<f64> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::InvalidSpec {
            what: "calibration",
            message: "fraction must lie in (0, 1)".into(),
        });
    }
    let goal = fraction * workload.target();
    let rate_at = |scale: f64| -> Result<f64> {
        let scaled = scale_costs(pipeline, scale);
        let alloc = crate::alloc::alloc_single_cpu(&scaled);
        Ok(pipeline_throughput(&scaled, &alloc, machine, workload, None)?.achieved_rate)
    };
    let mut lo = 1e-9;
    let mut hi = 1e9;
    if rate_at(lo)? < goal {
        return Err(Error::InvalidSpec {
            what: "calibration",
            message: format!(
                "single-CPU rate cannot reach {goal} samples/s even at negligible cost \
                 (bandwidth-capped)"
            ),
        });
    }
    if rate_at(hi)? > goal {
        return Err(Error::InvalidSpec {
            what: "calibration",
            message: "goal rate is below the achievable range".into(),
        });
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if rate_at(mid)? >= goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}
