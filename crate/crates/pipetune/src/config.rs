//! Experiment configuration: one JSON document per experiment, with units
//! suffixed in field names. See `scenarios/` for complete examples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentHyperparams;
use crate::alloc::{AllocatorKind, EstimatorBias};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::model::{Allocation, MachineSpec, PipelineSpec, WorkloadSpec};

/// Q-network hidden layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    #[serde(default = "default_hidden")]
    pub hidden1: usize,
    #[serde(default = "default_hidden")]
    pub hidden2: usize,
}

fn default_hidden() -> usize {
    64
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden1: default_hidden(),
            hidden2: default_hidden(),
        }
    }
}

/// Baseline allocator selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocatorPolicy {
    pub kind: AllocatorKind,
    /// Re-invoke the allocator at every resize event, paying a relaunch
    /// downtime. Static (false) baselines keep their initial allocation.
    #[serde(default)]
    pub adaptive: bool,
    #[serde(default)]
    pub bias: EstimatorBias,
    #[serde(default = "default_relaunch_downtime")]
    pub relaunch_downtime_steps: usize,
}

fn default_relaunch_downtime() -> usize {
    50
}

/// RL agent policy knobs (the network itself comes from `net`, `hyper`, and
/// `checkpoint`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentPolicy {}

/// What drives the allocation during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyConfig {
    Agent(AgentPolicy),
    Allocator(AllocatorPolicy),
}

impl PolicyConfig {
    pub fn label(&self) -> String {
        match self {
            PolicyConfig::Agent(_) => "agent".to_string(),
            PolicyConfig::Allocator(a) => {
                if a.adaptive {
                    format!("{}_adaptive", a.kind.as_str())
                } else {
                    a.kind.as_str().to_string()
                }
            }
        }
    }
}

/// Randomization ranges for offline pretraining environments. Scales are
/// sampled log-uniformly per draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizeConfig {
    #[serde(default = "default_cost_scale")]
    pub cost_scale: [f64; 2],
    /// CPU budget range; defaults to [2 * stages, machine budget].
    #[serde(default)]
    pub budget_range: Option<[u32; 2]>,
    #[serde(default = "default_target_scale")]
    pub target_scale: [f64; 2],
    #[serde(default = "default_mem_scale")]
    pub mem_scale: [f64; 2],
}

fn default_cost_scale() -> [f64; 2] {
    [0.5, 2.0]
}
fn default_target_scale() -> [f64; 2] {
    [0.7, 1.4]
}
fn default_mem_scale() -> [f64; 2] {
    [0.7, 1.4]
}

impl Default for RandomizeConfig {
    fn default() -> Self {
        RandomizeConfig {
            cost_scale: default_cost_scale(),
            budget_range: None,
            target_scale: default_target_scale(),
            mem_scale: default_mem_scale(),
        }
    }
}

/// Offline pretraining settings. `hyper` here governs the offline phase
/// (typically a full exploration schedule); the top-level `hyper` governs
/// online fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    #[serde(default = "default_episode_len")]
    pub episode_len: usize,
    #[serde(default)]
    pub randomize: RandomizeConfig,
    #[serde(default)]
    pub hyper: Option<AgentHyperparams>,
}

fn default_episode_len() -> usize {
    200
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            episode_len: default_episode_len(),
            randomize: RandomizeConfig::default(),
            hyper: None,
        }
    }
}

/// One experiment: simulator specs, environment dynamics, the policy under
/// test, and run bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pipeline: PipelineSpec,
    pub machine: MachineSpec,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub hyper: AgentHyperparams,
    #[serde(default)]
    pub net: NetConfig,
    /// Agent checkpoint to start online tuning from.
    #[serde(default)]
    pub checkpoint: Option<String>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    /// Explicit allocation override for one-shot simulation.
    #[serde(default)]
    pub allocation: Option<Allocation>,
    #[serde(default)]
    pub pretrain: PretrainConfig,
}

fn default_out_dir() -> String {
    "runs".to_string()
}

impl ExperimentConfig {
    /// Field-level validation; collects every problem rather than stopping at
    /// the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        fn check(problems: &mut Vec<String>, label: &str, result: Result<()>) {
            if let Err(e) = result {
                problems.push(format!("{label}: {e}"));
            }
        }
        check(&mut problems, "pipeline", self.pipeline.validate());
        check(&mut problems, "machine", self.machine.validate());
        check(&mut problems, "workload", self.workload.validate());
        check(&mut problems, "env", self.env.validate(&self.pipeline));
        if (self.machine.total_cpus as usize) < self.pipeline.stages.len() {
            problems.push(format!(
                "machine.total_cpus: {} cannot hold 1 CPU per stage ({} stages)",
                self.machine.total_cpus,
                self.pipeline.stages.len()
            ));
        }
        if self.seeds.is_empty() {
            problems.push("seeds: must not be empty".to_string());
        }
        if self.steps == 0 {
            problems.push("steps: must be >= 1".to_string());
        }
        if let Err(e) = self.hyper.validate() {
            problems.push(format!("hyper: {e}"));
        }
        if self.net.hidden1 == 0 || self.net.hidden2 == 0 {
            problems.push("net: hidden widths must be >= 1".to_string());
        }
        if let PolicyConfig::Allocator(a) = &self.policy {
            check(&mut problems, "policy.allocator.bias", a.bias.validate());
            if a.adaptive && a.relaunch_downtime_steps == 0 {
                problems
                    .push("policy.allocator.relaunch_downtime_steps: must be >= 1".to_string());
            }
        }
        if let Some(alloc) = &self.allocation {
            check(
                &mut problems,
                "allocation",
                alloc.validate(&self.pipeline, self.machine.total_cpus),
            );
        }
        if self.pretrain.episode_len == 0 {
            problems.push("pretrain.episode_len: must be >= 1".to_string());
        }
        if let Some(h) = &self.pretrain.hyper {
            if let Err(e) = h.validate() {
                problems.push(format!("pretrain.hyper: {e}"));
            }
        }
        let rnd = &self.pretrain.randomize;
        for (name, [lo, hi]) in [
            ("cost_scale", rnd.cost_scale),
            ("target_scale", rnd.target_scale),
            ("mem_scale", rnd.mem_scale),
        ] {
            if !(lo > 0.0) || hi < lo {
                problems.push(format!(
                    "pretrain.randomize.{name}: need 0 < lo <= hi, got [{lo}, {hi}]"
                ));
            }
        }
        if let Some([lo, hi]) = rnd.budget_range {
            if lo > hi || (lo as usize) < self.pipeline.stages.len() {
                problems.push(format!(
                    "pretrain.randomize.budget_range: invalid [{lo}, {hi}]"
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// The sections every run of a comparison must share.
    pub fn shared_fields_value(&self) -> serde_json::Value {
        serde_json::json!({
            "pipeline": self.pipeline,
            "machine": self.machine,
            "workload": self.workload,
            "env": self.env,
            "seeds": self.seeds,
            "steps": self.steps,
        })
    }
}

/// Loads and validates an experiment config from a JSON file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let config: ExperimentConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}
