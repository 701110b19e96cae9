//! Reinforcement-learning environment over the pipeline simulator.
//!
//! The environment exposes a normalized observation vector, applies
//! multi-discrete incremental actions (per-knob deltas in {-5,-1,0,+1,+5})
//! with feasibility masking, advances the simulator through resize schedules
//! and OOM downtime, and computes the reward
//! `throughput_norm * (1 - mem_used / mem_total)`.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::alloc::alloc_even;
use crate::error::{Error, Result};
use crate::model::{
    apply_resize, mix_seed, pipeline_throughput, Allocation, MachineSpec,
    PipelineSpec, ResizeEvent, WorkloadSpec,
};

/// Per-knob delta choices, in digit order of the joint action encoding.
pub const DELTAS: [i32; 5] = [-5, -1, 0, 1, 5];

/// Normalization reference for model latency (seconds per batch).
pub const LATENCY_REF_S: f64 = 1.0;
/// Normalization reference for DRAM bandwidth (MB/s).
pub const BANDWIDTH_REF_MBPS: f64 = 25_600.0;
/// Normalization reference for CPU clock speed (GHz).
pub const GHZ_REF: f64 = 3.0;

/// A joint incremental action: one delta per knob. Knob order is the
/// non-prefetch stages (CPU units) followed by the prefetch stage (memory
/// quanta) when present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionVec {
    pub deltas: Vec<i32>,
}

impl ActionVec {
    pub fn maintain(knobs: usize) -> Self {
        ActionVec {
            deltas: vec![0; knobs],
        }
    }

    pub fn validate(&self, knobs: usize) -> Result<()> {
        if self.deltas.len() != knobs {
            return Err(Error::DimensionMismatch(format!(
                "action has {} entries, environment has {} knobs",
                self.deltas.len(),
                knobs
            )));
        }
        for &d in &self.deltas {
            if !DELTAS.contains(&d) {
                return Err(Error::DimensionMismatch(format!(
                    "delta {d} not in {DELTAS:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Number of joint actions for `r` knobs: 5^r.
pub fn action_space_size(knobs: usize) -> u64 {
    5u64.pow(knobs as u32)
}

/// Encodes per-knob deltas into a joint index via base-5 positional encoding,
/// most significant digit first.
pub fn encode_action(action: &ActionVec) -> Result<u64> {
    action.validate(action.deltas.len())?;
    let mut index = 0u64;
    for &d in &action.deltas {
        let digit = DELTAS.iter().position(|&x| x == d).unwrap() as u64;
        index = index * 5 + digit;
    }
    Ok(index)
}

/// Decodes a joint index back into per-knob deltas. Inverse of
/// [`encode_action`].
pub fn decode_action(index: u64, knobs: usize) -> Result<ActionVec> {
    let space = action_space_size(knobs);
    if index >= space {
        return Err(Error::ActionOutOfRange {
            index,
            knobs,
            space,
        });
    }
    let mut deltas = vec![0i32; knobs];
    let mut rest = index;
    for slot in deltas.iter_mut().rev() {
        *slot = DELTAS[(rest % 5) as usize];
        rest /= 5;
    }
    Ok(ActionVec { deltas })
}

/// Exact count of direct allocations of `n` units over `r` knobs:
/// C(n + r - 1, r - 1). Errors when the result exceeds `u128`.
pub fn allocation_space_size(n: u64, r: u64) -> Result<u128> {
    if r == 0 {
        return Err(Error::InvalidSpec {
            what: "allocation space",
            message: "r must be >= 1".into(),
        });
    }
    let value = binomial(n + r - 1, r - 1);
    u128::try_from(&value).map_err(|_| Error::Overflow("allocation_space_size"))
}

fn binomial(n: u64, k: u64) -> BigUint {
    let k = k.min(n - k.min(n));
    let mut result = BigUint::from(1u32);
    for i in 1..=k {
        result = result * BigUint::from(n - k + i) / BigUint::from(i);
    }
    result
}

/// What the allocation resets to after OOM downtime expires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    #[default]
    EvenSplit,
    /// The most recent allocation that did not trigger an OOM.
    LastSafe,
}

/// Environment dynamics configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Budget changes by step index; steps must be strictly increasing.
    #[serde(default)]
    pub resize_schedule: Vec<ResizeEvent>,
    /// Steps of zero reward after an OOM before the allocation resets.
    #[serde(default = "default_oom_downtime")]
    pub oom_downtime_steps: usize,
    #[serde(default)]
    pub reset_policy_after_oom: ResetPolicy,
    #[serde(default)]
    pub noise_seed: u64,
    /// Nominal wall-seconds per environment step, for reporting only.
    #[serde(default = "default_step_time")]
    pub step_time_s: f64,
}

fn default_oom_downtime() -> usize {
    20
}
fn default_step_time() -> f64 {
    0.1
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            resize_schedule: Vec::new(),
            oom_downtime_steps: default_oom_downtime(),
            reset_policy_after_oom: ResetPolicy::default(),
            noise_seed: 0,
            step_time_s: default_step_time(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self, pipeline: &PipelineSpec) -> Result<()> {
        if self.oom_downtime_steps == 0 {
            return Err(Error::InvalidSpec {
                what: "env config",
                message: "oom_downtime_steps must be >= 1".into(),
            });
        }
        let mut prev: Option<usize> = None;
        for ev in &self.resize_schedule {
            if let Some(p) = prev {
                if ev.step <= p {
                    return Err(Error::InvalidSpec {
                        what: "env config",
                        message: "resize_schedule steps must be strictly increasing".into(),
                    });
                }
            }
            if (ev.cpus as usize) < pipeline.stages.len() {
                return Err(Error::InvalidSpec {
                    what: "env config",
                    message: format!(
                        "resize to {} CPUs at step {} cannot hold 1 CPU per stage",
                        ev.cpus, ev.step
                    ),
                });
            }
            prev = Some(ev.step);
        }
        Ok(())
    }
}

/// Normalized observation. `as_vector` yields the fixed-length layout
/// consumed by the Q-network: six scalar factors followed by one
/// allocation fraction per knob.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub throughput_norm: f64,
    pub free_cpus_frac: f64,
    pub free_mem_frac: f64,
    pub model_latency_norm: f64,
    pub bandwidth_norm: f64,
    pub ghz_norm: f64,
    /// Per-knob allocation divided by the CPU budget, knob order.
    pub alloc_frac: Vec<f64>,
}

impl EnvState {
    pub fn as_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(6 + self.alloc_frac.len());
        v.extend([
            self.throughput_norm,
            self.free_cpus_frac,
            self.free_mem_frac,
            self.model_latency_norm,
            self.bandwidth_norm,
            self.ghz_norm,
        ]);
        v.extend_from_slice(&self.alloc_frac);
        v
    }

    pub fn len(&self) -> usize {
        6 + self.alloc_frac.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Diagnostic payload attached to every step outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub achieved_rate: f64,
    pub mem_used_mb: f64,
    pub bottleneck_stage: Option<usize>,
    pub cpu_budget: u32,
    /// True when the proposed action required clamping, cancellation, or a
    /// forced fit after a budget shrink.
    pub clamped: bool,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    /// OOM event occurred on this step.
    pub crashed: bool,
    pub info: StepInfo,
}

/// Single-owner mutable RL environment. Not safe for concurrent stepping;
/// run one instance per experiment replica.
#[derive(Debug, Clone)]
pub struct Env {
    pipeline: PipelineSpec,
    base_machine: MachineSpec,
    machine: MachineSpec,
    workload: WorkloadSpec,
    config: EnvConfig,
    alloc: Allocation,
    last_safe_alloc: Allocation,
    step_index: usize,
    downtime_remaining: usize,
    last_state: EnvState,
}

impl Env {
    pub fn new(
        pipeline: PipelineSpec,
        machine: MachineSpec,
        workload: WorkloadSpec,
        config: EnvConfig,
    ) -> Result<Self> {
        pipeline.validate()?;
        machine.validate()?;
        workload.validate()?;
        config.validate(&pipeline)?;
        if (machine.total_cpus as usize) < pipeline.stages.len() {
            return Err(Error::InfeasibleBudget(format!(
                "machine has {} CPUs but the pipeline has {} stages",
                machine.total_cpus,
                pipeline.stages.len()
            )));
        }
        let alloc = alloc_even(&pipeline, machine.total_cpus)?;
        let mut env = Env {
            last_safe_alloc: alloc.clone(),
            alloc,
            base_machine: machine.clone(),
            machine,
            pipeline,
            workload,
            config,
            step_index: 0,
            downtime_remaining: 0,
            last_state: EnvState {
                throughput_norm: 0.0,
                free_cpus_frac: 0.0,
                free_mem_frac: 0.0,
                model_latency_norm: 0.0,
                bandwidth_norm: 0.0,
                ghz_norm: 0.0,
                alloc_frac: Vec::new(),
            },
        };
        env.last_state = env.observe_noiseless();
        Ok(env)
    }

    /// Restores the initial budget and the even-division allocation, returning
    /// the initial observation.
    pub fn reset(&mut self) -> Result<EnvState> {
        self.machine = self.base_machine.clone();
        self.alloc = alloc_even(&self.pipeline, self.machine.total_cpus)?;
        self.last_safe_alloc = self.alloc.clone();
        self.step_index = 0;
        self.downtime_remaining = 0;
        self.last_state = self.observe_noiseless();
        Ok(self.last_state.clone())
    }

    /// Replaces the current allocation (used to seat baseline policies).
    pub fn set_allocation(&mut self, alloc: Allocation) -> Result<()> {
        alloc.validate(&self.pipeline, self.machine.total_cpus)?;
        self.alloc = alloc;
        self.last_safe_alloc = self.alloc.clone();
        self.last_state = self.observe_noiseless();
        Ok(())
    }

    pub fn pipeline(&self) -> &PipelineSpec {
        &self.pipeline
    }

    pub fn workload(&self) -> &WorkloadSpec {
        &self.workload
    }

    pub fn machine(&self) -> &MachineSpec {
        &self.machine
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn allocation(&self) -> &Allocation {
        &self.alloc
    }

    pub fn cpu_budget(&self) -> u32 {
        self.machine.total_cpus
    }

    pub fn knobs(&self) -> usize {
        self.pipeline.knobs()
    }

    pub fn action_count(&self) -> u64 {
        action_space_size(self.knobs())
    }

    pub fn state_len(&self) -> usize {
        6 + self.knobs()
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn in_downtime(&self) -> bool {
        self.downtime_remaining > 0
    }

    pub fn current_state(&self) -> &EnvState {
        &self.last_state
    }

    /// Per-joint-action feasibility against the current allocation and
    /// budget: true iff applying the decoded deltas needs no clamping. The
    /// all-maintain action is always feasible.
    pub fn feasible_mask(&self) -> Vec<bool> {
        let knobs = self.knobs();
        let cpu_knobs = self.pipeline.cpu_knobs();
        let space = self.action_count();
        let current = self.alloc.knob_values(&self.pipeline);
        let budget = i64::from(self.machine.total_cpus);
        let mut mask = vec![false; space as usize];
        let mut digits = vec![0usize; knobs];
        for (index, slot) in mask.iter_mut().enumerate() {
            let mut ok = true;
            let mut cpu_sum = 0i64;
            for (k, &digit) in digits.iter().enumerate() {
                let next = i64::from(current[k]) + i64::from(DELTAS[digit]);
                if k < cpu_knobs {
                    if next < 1 {
                        ok = false;
                        break;
                    }
                    cpu_sum += next;
                } else if next < 0 {
                    ok = false;
                    break;
                }
            }
            *slot = ok && cpu_sum <= budget;
            let _ = index;
            // increment base-5 digits, least significant (last knob) first
            for k in (0..knobs).rev() {
                digits[k] += 1;
                if digits[k] < 5 {
                    break;
                }
                digits[k] = 0;
            }
        }
        mask
    }

    /// Advances one step. Resize events scheduled at the current step apply
    /// before the action; during OOM downtime the action is ignored and the
    /// reward is zero.
    pub fn step(&mut self, action: &ActionVec) -> Result<StepOutcome> {
        action.validate(self.knobs())?;

        let mut clamped = false;
        if let Some(ev) = self
            .config
            .resize_schedule
            .iter()
            .find(|ev| ev.step == self.step_index)
        {
            self.machine = apply_resize(&self.machine, ev, &self.pipeline)?;
            clamped |= self.fit_to_budget();
        }

        if self.downtime_remaining > 0 {
            self.downtime_remaining -= 1;
            if self.downtime_remaining == 0 {
                self.apply_reset_policy()?;
            }
            let state = self.downtime_state();
            self.last_state = state.clone();
            let info = StepInfo {
                achieved_rate: 0.0,
                mem_used_mb: 0.0,
                bottleneck_stage: None,
                cpu_budget: self.machine.total_cpus,
                clamped,
            };
            self.step_index += 1;
            return Ok(StepOutcome {
                state,
                reward: 0.0,
                crashed: false,
                info,
            });
        }

        clamped |= self.apply_action(action);

        let seed = mix_seed(self.config.noise_seed, self.step_index as u64);
        let report = pipeline_throughput(
            &self.pipeline,
            &self.alloc,
            &self.machine,
            &self.workload,
            Some(seed),
        )?;

        let crashed = report.oom;
        let (state, reward, info) = if crashed {
            self.downtime_remaining = self.config.oom_downtime_steps;
            let mut state = self.downtime_state();
            // memory is still held on the crash step itself
            state.free_mem_frac =
                (1.0 - report.mem_used_mb / self.machine.total_mem_mb).clamp(0.0, 1.0);
            (
                state,
                0.0,
                StepInfo {
                    achieved_rate: 0.0,
                    mem_used_mb: report.mem_used_mb,
                    bottleneck_stage: Some(report.bottleneck_stage),
                    cpu_budget: self.machine.total_cpus,
                    clamped,
                },
            )
        } else {
            self.last_safe_alloc = self.alloc.clone();
            let throughput_norm =
                (report.achieved_rate / self.workload.target()).clamp(0.0, 1.0);
            let mem_frac = report.mem_used_mb / self.machine.total_mem_mb;
            let reward = (throughput_norm * (1.0 - mem_frac)).max(0.0);
            let state = self.build_state(throughput_norm, report.mem_used_mb);
            (
                state,
                reward,
                StepInfo {
                    achieved_rate: report.achieved_rate,
                    mem_used_mb: report.mem_used_mb,
                    bottleneck_stage: Some(report.bottleneck_stage),
                    cpu_budget: self.machine.total_cpus,
                    clamped,
                },
            )
        };

        self.last_state = state.clone();
        self.step_index += 1;
        Ok(StepOutcome {
            state,
            reward,
            crashed,
            info,
        })
    }

    /// Applies per-knob deltas with clamping: CPU knobs stay >= 1, prefetch
    /// stays >= 0, and positive CPU deltas are cancelled in descending knob
    /// order when the total would exceed the budget. Returns whether any
    /// modification was needed.
    fn apply_action(&mut self, action: &ActionVec) -> bool {
        let cpu_knobs = self.pipeline.cpu_knobs();
        let mut clamped = false;

        let mut next_cpus: Vec<i64> = Vec::with_capacity(cpu_knobs);
        for (i, &c) in self.alloc.cpus.iter().enumerate() {
            let raw = i64::from(c) + i64::from(action.deltas[i]);
            let fitted = raw.max(1);
            clamped |= fitted != raw;
            next_cpus.push(fitted);
        }

        let budget = i64::from(self.machine.total_cpus);
        let mut excess = next_cpus.iter().sum::<i64>() - budget;
        if excess > 0 {
            clamped = true;
            for i in (0..cpu_knobs).rev() {
                let granted = next_cpus[i] - i64::from(self.alloc.cpus[i]);
                if granted > 0 {
                    let cut = granted.min(excess);
                    next_cpus[i] -= cut;
                    excess -= cut;
                    if excess == 0 {
                        break;
                    }
                }
            }
        }
        debug_assert!(excess <= 0, "cancelling positive deltas must restore feasibility");

        for (i, &c) in next_cpus.iter().enumerate() {
            self.alloc.cpus[i] = c as u32;
        }

        if self.pipeline.has_prefetch() {
            let delta = i64::from(action.deltas[cpu_knobs]);
            let raw = i64::from(self.alloc.prefetch_units) + delta;
            let fitted = raw.max(0);
            clamped |= fitted != raw;
            self.alloc.prefetch_units = fitted as u32;
        }
        clamped
    }

    /// Shrinks the allocation to fit the current budget after a downward
    /// resize: repeatedly decrements the largest CPU knob (highest index on
    /// ties) down to the per-stage minimum of 1.
    fn fit_to_budget(&mut self) -> bool {
        let budget = self.machine.total_cpus;
        let mut changed = false;
        while self.alloc.total_cpus() > budget {
            let mut best = 0usize;
            for i in 0..self.alloc.cpus.len() {
                if self.alloc.cpus[i] >= self.alloc.cpus[best] {
                    best = i;
                }
            }
            debug_assert!(self.alloc.cpus[best] > 1, "budget below one CPU per stage");
            self.alloc.cpus[best] -= 1;
            changed = true;
        }
        changed
    }

    fn apply_reset_policy(&mut self) -> Result<()> {
        match self.config.reset_policy_after_oom {
            ResetPolicy::EvenSplit => {
                self.alloc = alloc_even(&self.pipeline, self.machine.total_cpus)?;
            }
            ResetPolicy::LastSafe => {
                self.alloc = self.last_safe_alloc.clone();
                self.fit_to_budget();
            }
        }
        Ok(())
    }

    fn alloc_fracs(&self) -> Vec<f64> {
        let budget = f64::from(self.machine.total_cpus);
        self.alloc
            .knob_values(&self.pipeline)
            .into_iter()
            .map(|v| f64::from(v) / budget)
            .collect()
    }

    fn build_state(&self, throughput_norm: f64, mem_used_mb: f64) -> EnvState {
        let budget = f64::from(self.machine.total_cpus);
        EnvState {
            throughput_norm,
            free_cpus_frac: ((budget - f64::from(self.alloc.total_cpus())) / budget)
                .clamp(0.0, 1.0),
            free_mem_frac: (1.0 - mem_used_mb / self.machine.total_mem_mb).clamp(0.0, 1.0),
            model_latency_norm: self.workload.model_latency_s / LATENCY_REF_S,
            bandwidth_norm: self.machine.dram_bandwidth_mbps / BANDWIDTH_REF_MBPS,
            ghz_norm: self.machine.cpu_ghz / GHZ_REF,
            alloc_frac: self.alloc_fracs(),
        }
    }

    /// State snapshot for downtime steps: the pipeline is torn down, so the
    /// throughput is zero and no memory is held.
    fn downtime_state(&self) -> EnvState {
        self.build_state(0.0, 0.0)
    }

    /// Initial observation from a noiseless evaluation of the current
    /// allocation.
    fn observe_noiseless(&self) -> EnvState {
        let report = pipeline_throughput(
            &self.pipeline,
            &self.alloc,
            &self.machine,
            &self.workload,
            None,
        )
        .expect("allocation kept valid by construction");
        let throughput_norm = (report.achieved_rate / self.workload.target()).clamp(0.0, 1.0);
        self.build_state(throughput_norm, report.mem_used_mb)
    }

    /// Noiseless achieved rate of an arbitrary allocation on this
    /// environment's pipeline/machine/workload.
    pub fn evaluate_noiseless(&self, alloc: &Allocation) -> Result<f64> {
        Ok(pipeline_throughput(
            &self.pipeline,
            alloc,
            &self.machine,
            &self.workload,
            None,
        )?
        .achieved_rate)
    }
}

/// True iff the reward history has converged at its final step: the two most
/// recent back-to-back `window`-step means differ by less than `tolerance`.
/// Needs at least `2 * window` samples.
pub fn detect_convergence(history: &[f64], window: usize, tolerance: f64) -> bool {
    assert!(window >= 2, "window must be >= 2");
    if history.len() < 2 * window {
        return false;
    }
    converged_at(history, history.len() - 1, window, tolerance)
}

/// First step index at which [`detect_convergence`] would fire, if any.
pub fn steps_to_convergence(history: &[f64], window: usize, tolerance: f64) -> Option<usize> {
    assert!(window >= 2, "window must be >= 2");
    (2 * window - 1..history.len()).find(|&t| converged_at(history, t, window, tolerance))
}

fn converged_at(history: &[f64], t: usize, window: usize, tolerance: f64) -> bool {
    let recent: f64 = history[t + 1 - window..=t].iter().sum::<f64>() / window as f64;
    let previous: f64 =
        history[t + 1 - 2 * window..=t - window].iter().sum::<f64>() / window as f64;
    (recent - previous).abs() < tolerance
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{StageKind, StageSpec};

    fn stage(name: &str, kind: StageKind, cost: f64) -> StageSpec {
        StageSpec {
            name: name.into(),
            kind,
            cost_per_item_cpu_s: cost,
            mem_fixed_mb: 0.0,
            mem_per_replica_mb: 0.0,
            scalable: true,
            noise_cv: 0.0,
        }
    }

    fn pipeline_5knob() -> PipelineSpec {
        PipelineSpec {
            stages: vec![
                stage("disk", StageKind::DiskLoad, 1.0),
                stage("batch", StageKind::Batch, 1.0),
                stage("shuffle", StageKind::Shuffle, 1.0),
                stage("udf", StageKind::UdfMap, 1.0),
                stage("prefetch", StageKind::Prefetch, 0.0),
            ],
            sample_size_mb: 1.0,
            overlap_jitter_max: 0.3,
            overlap_u_half: 4.0,
            prefetch_quantum_mb: 64.0,
            prefetch_batch_normalizer_mb: 1024.0,
        }
    }

    fn pipeline_2knob(costs: [f64; 2]) -> PipelineSpec {
        PipelineSpec {
            stages: vec![
                stage("a", StageKind::DiskLoad, costs[0]),
                stage("b", StageKind::Batch, costs[1]),
            ],
            sample_size_mb: 1.0,
            overlap_jitter_max: 0.3,
            overlap_u_half: 4.0,
            prefetch_quantum_mb: 64.0,
            prefetch_batch_normalizer_mb: 1024.0,
        }
    }

    fn machine(cpus: u32) -> MachineSpec {
        MachineSpec {
            total_cpus: cpus,
            cpu_ghz: 1.0,
            total_mem_mb: 10_000.0,
            dram_bandwidth_mbps: 25_600.0,
            io_bandwidth_mbps: 1e9,
        }
    }

    fn env_with(pipeline: PipelineSpec, cpus: u32, workload: WorkloadSpec) -> Env {
        Env::new(pipeline, machine(cpus), workload, EnvConfig::default()).unwrap()
    }

    #[test]
    fn reset_even_split_with_prefetch_knob() {
        // 5 knobs (4 CPU + prefetch), budget 10: floor(10/5) = 2 each.
        let mut env = env_with(pipeline_5knob(), 10, WorkloadSpec::new(10, 1.0));
        env.reset().unwrap();
        assert_eq!(env.allocation().cpus, vec![2, 2, 2, 2]);
        assert_eq!(env.allocation().prefetch_units, 1);
    }

    #[test]
    fn reset_remainder_to_earliest() {
        let p = PipelineSpec {
            stages: vec![
                stage("a", StageKind::DiskLoad, 1.0),
                stage("b", StageKind::Batch, 1.0),
                stage("c", StageKind::Shuffle, 1.0),
            ],
            ..pipeline_2knob([1.0, 1.0])
        };
        let mut env = env_with(p, 7, WorkloadSpec::new(10, 1.0));
        env.reset().unwrap();
        assert_eq!(env.allocation().cpus, vec![3, 2, 2]);
    }

    #[test]
    fn reset_infeasible_budget_errors() {
        let p = PipelineSpec {
            stages: vec![
                stage("a", StageKind::DiskLoad, 1.0),
                stage("b", StageKind::Batch, 1.0),
                stage("c", StageKind::Shuffle, 1.0),
                stage("d", StageKind::UdfMap, 1.0),
                stage("e", StageKind::Batch, 1.0),
            ],
            ..pipeline_2knob([1.0, 1.0])
        };
        let p = PipelineSpec {
            stages: p
                .stages
                .into_iter()
                .enumerate()
                .map(|(i, mut s)| {
                    s.name = format!("s{i}");
                    s
                })
                .collect(),
            ..pipeline_2knob([1.0, 1.0])
        };
        assert!(Env::new(p, machine(4), WorkloadSpec::new(10, 1.0), EnvConfig::default()).is_err());
    }

    #[test]
    fn reward_matches_eq1() {
        // Rate 1.0 at (1, 2) on costs (1, 2); target 2.0 -> norm 0.5; no memory.
        let mut env = env_with(pipeline_2knob([1.0, 2.0]), 3, WorkloadSpec::new(2, 1.0));
        env.reset().unwrap();
        env.set_allocation(Allocation {
            cpus: vec![1, 2],
            prefetch_units: 0,
        })
        .unwrap();
        let out = env.step(&ActionVec::maintain(2)).unwrap();
        assert!((out.reward - 0.5).abs() < 1e-12, "reward {}", out.reward);
        assert!(!out.crashed);
    }

    #[test]
    fn reward_zero_at_full_memory() {
        let mut p = pipeline_2knob([1.0, 2.0]);
        p.stages[0].mem_fixed_mb = 10_000.0; // exactly the machine memory
        let mut env = env_with(p, 3, WorkloadSpec::new(2, 1.0));
        env.reset().unwrap();
        let out = env.step(&ActionVec::maintain(2)).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(!out.crashed, "mem == total is not an OOM");
    }

    #[test]
    fn reward_halves_at_half_memory() {
        let mut p = pipeline_2knob([1.0, 1.0]);
        p.stages[0].mem_fixed_mb = 5_000.0;
        // 1-CPU rate 0.31 against target 1.0
        let mut m = machine(2);
        m.cpu_ghz = 0.31;
        let mut env = Env::new(p, m, WorkloadSpec::new(1, 1.0), EnvConfig::default()).unwrap();
        env.reset().unwrap();
        let out = env.step(&ActionVec::maintain(2)).unwrap();
        assert!((out.reward - 0.155).abs() < 1e-12, "reward {}", out.reward);
    }

    #[test]
    fn action_encoding_examples() {
        assert_eq!(action_space_size(5), 3125);
        let maintain = ActionVec::maintain(3);
        assert_eq!(encode_action(&maintain).unwrap(), 62);
        for index in 0..action_space_size(3) {
            let action = decode_action(index, 3).unwrap();
            assert_eq!(encode_action(&action).unwrap(), index);
        }
        assert!(decode_action(125, 3).is_err());
    }

    #[test]
    fn allocation_space_examples() {
        assert_eq!(allocation_space_size(128, 5).unwrap(), 12_082_785);
        assert_eq!(allocation_space_size(2, 2).unwrap(), 3);
        assert_eq!(allocation_space_size(0, 7).unwrap(), 1);
        assert!(allocation_space_size(3, 0).is_err());
    }

    #[test]
    fn mask_budget_and_floor_rules() {
        let mut env = env_with(pipeline_2knob([1.0, 1.0]), 4, WorkloadSpec::new(10, 1.0));
        env.reset().unwrap(); // (2, 2) at budget 4
        let mask = env.feasible_mask();
        let all_up = encode_action(&ActionVec {
            deltas: vec![1, 1],
        })
        .unwrap();
        assert!(!mask[all_up as usize], "+1/+1 exceeds the budget");
        let maintain = encode_action(&ActionVec::maintain(2)).unwrap();
        assert!(mask[maintain as usize]);

        env.set_allocation(Allocation {
            cpus: vec![1, 3],
            prefetch_units: 0,
        })
        .unwrap();
        let mask = env.feasible_mask();
        let down_first = encode_action(&ActionVec {
            deltas: vec![-1, 0],
        })
        .unwrap();
        assert!(!mask[down_first as usize], "knob at 1 CPU cannot drop");
    }

    #[test]
    fn mask_soundness_applied_actions_never_clamp() {
        let mut env = env_with(pipeline_5knob(), 11, WorkloadSpec::new(10, 1.0));
        env.reset().unwrap();
        let mask = env.feasible_mask();
        for (index, &feasible) in mask.iter().enumerate() {
            if !feasible {
                continue;
            }
            let mut probe = env.clone();
            let action = decode_action(index as u64, probe.knobs()).unwrap();
            let out = probe.step(&action).unwrap();
            assert!(!out.info.clamped, "feasible action {index} clamped");
            assert!(probe.allocation().total_cpus() <= probe.cpu_budget());
        }
    }

    #[test]
    fn clamping_cancels_positive_deltas_descending() {
        let mut env = env_with(pipeline_2knob([1.0, 1.0]), 5, WorkloadSpec::new(10, 1.0));
        env.reset().unwrap();
        env.set_allocation(Allocation {
            cpus: vec![2, 2],
            prefetch_units: 0,
        })
        .unwrap();
        // +1/+1 would hit 6 > 5: the later knob's grant is cancelled first.
        let out = env
            .step(&ActionVec {
                deltas: vec![1, 1],
            })
            .unwrap();
        assert!(out.info.clamped);
        assert_eq!(env.allocation().cpus, vec![3, 2]);
    }

    #[test]
    fn resize_applies_before_action_and_shrink_fits() {
        let config = EnvConfig {
            resize_schedule: vec![ResizeEvent { step: 1, cpus: 4 }],
            ..EnvConfig::default()
        };
        let mut env = Env::new(
            pipeline_2knob([1.0, 1.0]),
            machine(8),
            WorkloadSpec::new(10, 1.0),
            config,
        )
        .unwrap();
        env.reset().unwrap(); // (4, 4)
        let out = env.step(&ActionVec::maintain(2)).unwrap();
        assert_eq!(out.info.cpu_budget, 8);
        let out = env.step(&ActionVec::maintain(2)).unwrap();
        assert_eq!(out.info.cpu_budget, 4);
        assert!(out.info.clamped, "shrink forces a fit");
        assert_eq!(env.allocation().total_cpus(), 4);
        assert!(env.allocation().cpus.iter().all(|&c| c >= 1));
    }

    #[test]
    fn oom_triggers_downtime_then_reset() {
        let mut p = pipeline_2knob([1.0, 1.0]);
        p.stages[0].mem_per_replica_mb = 3_000.0; // 4 CPUs on stage 0 OOMs
        let config = EnvConfig {
            oom_downtime_steps: 3,
            ..EnvConfig::default()
        };
        let mut env =
            Env::new(p, machine(8), WorkloadSpec::new(10, 1.0), config).unwrap();
        env.reset().unwrap(); // (4, 4): 12000 MB > 10000 MB
        let out = env.step(&ActionVec::maintain(2)).unwrap();
        assert!(out.crashed);
        assert_eq!(out.reward, 0.0);
        assert!(env.in_downtime());
        for _ in 0..3 {
            let out = env
                .step(&ActionVec {
                    deltas: vec![5, 5],
                })
                .unwrap();
            assert_eq!(out.reward, 0.0);
            assert!(!out.crashed);
        }
        // Downtime expired; allocation reset to the even split, ignored deltas
        // never applied.
        assert_eq!(env.allocation().cpus, vec![4, 4]);
        assert!(!env.in_downtime());
    }

    #[test]
    fn episode_determinism() {
        let mut p = pipeline_5knob();
        for s in &mut p.stages {
            s.noise_cv = 0.3;
        }
        p.stages[4].noise_cv = 0.0;
        let config = EnvConfig {
            noise_seed: 99,
            ..EnvConfig::default()
        };
        let mk = || {
            Env::new(
                p.clone(),
                machine(16),
                WorkloadSpec::new(10, 1.0),
                config.clone(),
            )
            .unwrap()
        };
        let mut a = mk();
        let mut b = mk();
        a.reset().unwrap();
        b.reset().unwrap();
        for i in 0..50u64 {
            let action = decode_action(i * 37 % a.action_count(), a.knobs()).unwrap();
            let oa = a.step(&action).unwrap();
            let ob = b.step(&action).unwrap();
            assert_eq!(oa.reward, ob.reward);
            assert_eq!(oa.state.as_vector(), ob.state.as_vector());
            assert_eq!(oa.info, ob.info);
        }
    }

    #[test]
    fn convergence_detector_cases() {
        let constant = vec![0.5; 100];
        assert!(detect_convergence(&constant, 10, 0.01));

        let rising: Vec<f64> = (0..200).map(|i| i as f64 * 0.1).collect();
        assert!(!detect_convergence(&rising, 10, 0.01));

        // Ramp for k steps, then plateau: both comparison windows clear the
        // ramp only once 2w samples of plateau exist, i.e. after k + 2w
        // steps have elapsed (first converged index k + 2w - 1).
        let k = 40;
        let w = 10;
        let mut plateau: Vec<f64> = (0..k).map(|i| i as f64).collect();
        plateau.extend(vec![k as f64; 200]);
        let t = steps_to_convergence(&plateau, w, 0.01).unwrap();
        assert_eq!(t, k + 2 * w - 1);
        assert!(!detect_convergence(&plateau[..k + 2 * w - 1], w, 0.01));
        assert!(detect_convergence(&plateau[..k + 2 * w], w, 0.01));
    }

    #[test]
    fn state_vector_layout() {
        let mut env = env_with(pipeline_5knob(), 20, WorkloadSpec::new(10, 1.0));
        let state = env.reset().unwrap();
        assert_eq!(state.len(), 6 + 5);
        let v = state.as_vector();
        assert_eq!(v.len(), 11);
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(state.throughput_norm >= 0.0 && state.throughput_norm <= 1.0);
        assert!(state.free_cpus_frac >= 0.0 && state.free_cpus_frac <= 1.0);
        assert!(state.free_mem_frac >= 0.0 && state.free_mem_frac <= 1.0);
    }
}
