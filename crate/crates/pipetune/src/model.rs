//! Analytical model of a staged data-ingestion pipeline.
//!
//! The model maps (pipeline spec, allocation, machine, workload) to achieved
//! throughput, memory usage, and bottleneck identity. Stages process samples
//! in lockstep, so the pipeline rate is the minimum stage rate, optionally
//! scaled by a prefetch overlap factor. All functions here are pure; seeded
//! randomness is passed in, never held.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five standard ingestion stage kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    DiskLoad,
    Batch,
    Shuffle,
    UdfMap,
    Prefetch,
}

impl StageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StageKind::DiskLoad => "disk_load",
            StageKind::Batch => "batch",
            StageKind::Shuffle => "shuffle",
            StageKind::UdfMap => "udf_map",
            StageKind::Prefetch => "prefetch",
        }
    }
}

/// Cost-and-memory model of a single ingestion stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub kind: StageKind,
    /// CPU-seconds per sample at the reference CPU speed of 1.0 GHz.
    /// Must be > 0 for all non-prefetch kinds; ignored for prefetch.
    #[serde(default)]
    pub cost_per_item_cpu_s: f64,
    /// MB consumed regardless of replica count.
    #[serde(default)]
    pub mem_fixed_mb: f64,
    /// MB per allocated CPU replica.
    #[serde(default)]
    pub mem_per_replica_mb: f64,
    /// Whether added CPUs increase the stage rate.
    #[serde(default = "default_true")]
    pub scalable: bool,
    /// Coefficient of variation of multiplicative lognormal latency noise.
    #[serde(default)]
    pub noise_cv: f64,
}

fn default_true() -> bool {
    true
}

impl StageSpec {
    pub fn is_prefetch(&self) -> bool {
        self.kind == StageKind::Prefetch
    }
}

/// Ordered stage list plus pipeline-level model parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub stages: Vec<StageSpec>,
    /// MB per raw sample; caps disk-load throughput at the I/O bandwidth.
    pub sample_size_mb: f64,
    /// Maximum fraction of the pipeline rate lost to pipeline/model phase
    /// misalignment when no prefetching is configured. Only applies when the
    /// pipeline has a prefetch stage.
    #[serde(default = "default_jitter_max")]
    pub overlap_jitter_max: f64,
    /// Prefetch units at which the misalignment loss has decayed by 1/e.
    #[serde(default = "default_u_half")]
    pub overlap_u_half: f64,
    /// Nominal MB per prefetch unit before batch scaling.
    #[serde(default = "default_quantum")]
    pub prefetch_quantum_mb: f64,
    /// Batch footprint (batch_size * sample_size_mb) that corresponds to one
    /// nominal quantum. Larger batches make each prefetch unit proportionally
    /// heavier.
    #[serde(default = "default_batch_normalizer")]
    pub prefetch_batch_normalizer_mb: f64,
}

fn default_jitter_max() -> f64 {
    0.3
}
fn default_u_half() -> f64 {
    4.0
}
fn default_quantum() -> f64 {
    64.0
}
fn default_batch_normalizer() -> f64 {
    1024.0
}

impl PipelineSpec {
    /// Validates stage ordering, naming, and cost invariants.
    pub fn validate(&self) -> Result<()> {
        let r = self.stages.len();
        if !(2..=8).contains(&r) {
            return Err(Error::InvalidSpec {
                what: "pipeline",
                message: format!("stage count {r} outside [2, 8]"),
            });
        }
        let mut names = std::collections::BTreeSet::new();
        for stage in &self.stages {
            if !names.insert(stage.name.as_str()) {
                return Err(Error::InvalidSpec {
                    what: "pipeline",
                    message: format!("duplicate stage name '{}'", stage.name),
                });
            }
            if !stage.is_prefetch() && stage.cost_per_item_cpu_s <= 0.0 {
                return Err(Error::InvalidSpec {
                    what: "pipeline",
                    message: format!(
                        "stage '{}': cost_per_item_cpu_s must be > 0",
                        stage.name
                    ),
                });
            }
            if stage.noise_cv < 0.0 || !stage.noise_cv.is_finite() {
                return Err(Error::InvalidSpec {
                    what: "pipeline",
                    message: format!("stage '{}': noise_cv must be finite and >= 0", stage.name),
                });
            }
        }
        let prefetch_count = self.stages.iter().filter(|s| s.is_prefetch()).count();
        if prefetch_count > 1 {
            return Err(Error::InvalidSpec {
                what: "pipeline",
                message: "at most one prefetch stage allowed".into(),
            });
        }
        if prefetch_count == 1 && !self.stages.last().unwrap().is_prefetch() {
            return Err(Error::InvalidSpec {
                what: "pipeline",
                message: "prefetch stage must be last".into(),
            });
        }
        if self.sample_size_mb <= 0.0 {
            return Err(Error::InvalidSpec {
                what: "pipeline",
                message: "sample_size_mb must be > 0".into(),
            });
        }
        if !(0.0..1.0).contains(&self.overlap_jitter_max) {
            return Err(Error::InvalidSpec {
                what: "pipeline",
                message: "overlap_jitter_max must lie in [0, 1)".into(),
            });
        }
        if self.overlap_u_half <= 0.0 || self.prefetch_batch_normalizer_mb <= 0.0 {
            return Err(Error::InvalidSpec {
                what: "pipeline",
                message: "overlap_u_half and prefetch_batch_normalizer_mb must be > 0".into(),
            });
        }
        if self.prefetch_quantum_mb < 0.0 {
            return Err(Error::InvalidSpec {
                what: "pipeline",
                message: "prefetch_quantum_mb must be >= 0".into(),
            });
        }
        Ok(())
    }

    /// Stages that consume a CPU knob, in pipeline order.
    pub fn cpu_stages(&self) -> impl Iterator<Item = (usize, &StageSpec)> {
        self.stages
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_prefetch())
    }

    /// Number of CPU knobs (non-prefetch stages).
    pub fn cpu_knobs(&self) -> usize {
        self.stages.iter().filter(|s| !s.is_prefetch()).count()
    }

    /// Total knob count: CPU knobs plus the prefetch knob when present.
    /// This is the `r` of the action space.
    pub fn knobs(&self) -> usize {
        self.stages.len()
    }

    pub fn has_prefetch(&self) -> bool {
        self.stages.iter().any(|s| s.is_prefetch())
    }

    /// MB added per prefetch unit under the given workload.
    pub fn prefetch_unit_mb(&self, workload: &WorkloadSpec) -> f64 {
        self.prefetch_quantum_mb * workload.batch_size as f64 * self.sample_size_mb
            / self.prefetch_batch_normalizer_mb
    }

    /// Loss factor applied to the bottleneck rate from imperfect overlap of
    /// pipeline production and model consumption. Pipelines without a
    /// prefetch stage run synchronously and take no penalty.
    pub fn overlap_factor(&self, prefetch_units: u32) -> f64 {
        if !self.has_prefetch() {
            return 1.0;
        }
        1.0 - self.overlap_jitter_max * (-f64::from(prefetch_units) / self.overlap_u_half).exp()
    }
}

/// Trainer machine description. `total_cpus` is the knob budget and is the
/// only field a resize event may change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub total_cpus: u32,
    pub cpu_ghz: f64,
    pub total_mem_mb: f64,
    pub dram_bandwidth_mbps: f64,
    pub io_bandwidth_mbps: f64,
}

impl MachineSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_cpus == 0 {
            return Err(Error::InvalidSpec {
                what: "machine",
                message: "total_cpus must be > 0".into(),
            });
        }
        for (name, v) in [
            ("cpu_ghz", self.cpu_ghz),
            ("total_mem_mb", self.total_mem_mb),
            ("dram_bandwidth_mbps", self.dram_bandwidth_mbps),
            ("io_bandwidth_mbps", self.io_bandwidth_mbps),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidSpec {
                    what: "machine",
                    message: format!("{name} must be finite and > 0"),
                });
            }
        }
        Ok(())
    }
}

/// Training workload: how fast the model drains batches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub batch_size: u64,
    pub model_latency_s: f64,
    /// Samples/s the model consumes; derived as batch_size / model_latency_s
    /// and stored for reporting. When present in a config it must be
    /// consistent with the other two fields.
    #[serde(default)]
    pub target_rate: Option<f64>,
}

impl WorkloadSpec {
    pub fn new(batch_size: u64, model_latency_s: f64) -> Self {
        let mut w = WorkloadSpec {
            batch_size,
            model_latency_s,
            target_rate: None,
        };
        w.target_rate = Some(w.computed_target_rate());
        w
    }

    fn computed_target_rate(&self) -> f64 {
        self.batch_size as f64 / self.model_latency_s
    }

    /// Samples/s the model consumes.
    pub fn target(&self) -> f64 {
        self.computed_target_rate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec {
                what: "workload",
                message: "batch_size must be >= 1".into(),
            });
        }
        if !(self.model_latency_s > 0.0) || !self.model_latency_s.is_finite() {
            return Err(Error::InvalidSpec {
                what: "workload",
                message: "model_latency_s must be finite and > 0".into(),
            });
        }
        if let Some(rate) = self.target_rate {
            let expect = self.computed_target_rate();
            if (rate - expect).abs() > 1e-6 * expect.max(1.0) {
                return Err(Error::InvalidSpec {
                    what: "workload",
                    message: format!(
                        "target_rate {rate} inconsistent with batch_size / model_latency_s = {expect}"
                    ),
                });
            }
        }
        Ok(())
    }
}

/// The decision variable: per-stage CPU counts plus prefetch memory units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    /// One entry per non-prefetch stage, in pipeline order. Each >= 1.
    pub cpus: Vec<u32>,
    /// Memory quanta granted to the prefetch stage; 0 when the pipeline has
    /// no prefetch stage.
    pub prefetch_units: u32,
}

impl Allocation {
    pub fn total_cpus(&self) -> u32 {
        self.cpus.iter().sum()
    }

    /// Checks shape and bound invariants against a pipeline and CPU budget.
    pub fn validate(&self, pipeline: &PipelineSpec, cpu_budget: u32) -> Result<()> {
        if self.cpus.len() != pipeline.cpu_knobs() {
            return Err(Error::InvalidAllocation(format!(
                "expected {} CPU knobs, got {}",
                pipeline.cpu_knobs(),
                self.cpus.len()
            )));
        }
        if self.cpus.iter().any(|&c| c == 0) {
            return Err(Error::InvalidAllocation(
                "every per-stage CPU count must be >= 1".into(),
            ));
        }
        if self.total_cpus() > cpu_budget {
            return Err(Error::InvalidAllocation(format!(
                "{} CPUs allocated but budget is {}",
                self.total_cpus(),
                cpu_budget
            )));
        }
        if !pipeline.has_prefetch() && self.prefetch_units != 0 {
            return Err(Error::InvalidAllocation(
                "prefetch_units must be 0 for pipelines without a prefetch stage".into(),
            ));
        }
        Ok(())
    }

    /// Knob vector in action order: CPU knobs then the prefetch knob.
    pub fn knob_values(&self, pipeline: &PipelineSpec) -> Vec<u32> {
        let mut v = self.cpus.clone();
        if pipeline.has_prefetch() {
            v.push(self.prefetch_units);
        }
        v
    }
}

/// A scheduled change of the machine's CPU budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizeEvent {
    /// Environment step at which the new budget takes effect.
    pub step: usize,
    /// New total CPU count.
    pub cpus: u32,
}

/// Output of one pipeline evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    /// Samples/s the pipeline can produce, before the model-consumption cap.
    pub pipeline_rate: f64,
    /// min(pipeline_rate, workload target rate).
    pub achieved_rate: f64,
    /// Index (into the stage list) of the stage attaining the minimum rate;
    /// lowest index on ties.
    pub bottleneck_stage: usize,
    pub mem_used_mb: f64,
    /// Set when mem_used_mb exceeds the machine's memory. Not an error: the
    /// environment turns it into a crash-and-downtime event.
    pub oom: bool,
}

/// Deterministic 64-bit mix used to derive per-step noise streams.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a ^ b.rotate_left(32) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Multiplicative lognormal factor with mean 1 and the given coefficient of
/// variation.
fn lognormal_factor(cv: f64, rng: &mut ChaCha8Rng) -> f64 {
    let sigma2 = (1.0 + cv * cv).ln();
    let mu = -sigma2 / 2.0;
    LogNormal::new(mu, sigma2.sqrt())
        .expect("valid lognormal parameters")
        .sample(rng)
}

fn raw_stage_rate(
    stage: &StageSpec,
    cpus: u32,
    machine: &MachineSpec,
    sample_size_mb: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> f64 {
    let replicas = if stage.scalable { f64::from(cpus) } else { 1.0 };
    let mut rate = replicas * machine.cpu_ghz / stage.cost_per_item_cpu_s;
    if stage.kind == StageKind::DiskLoad {
        rate = rate.min(machine.io_bandwidth_mbps / sample_size_mb);
    }
    if stage.noise_cv > 0.0 {
        if let Some(rng) = rng {
            rate *= lognormal_factor(stage.noise_cv, rng);
        }
    }
    rate
}

/// Samples/s of a single non-prefetch stage given `cpus` replicas.
///
/// Disk-load stages are additionally capped at
/// `io_bandwidth_mbps / sample_size_mb`. When `noise_seed` is supplied and
/// the stage has `noise_cv > 0`, the rate is multiplied by a mean-1
/// lognormal draw with that coefficient of variation.
pub fn stage_rate(
    stage: &StageSpec,
    cpus: u32,
    machine: &MachineSpec,
    sample_size_mb: f64,
    noise_seed: Option<u64>,
) -> Result<f64> {
    if cpus == 0 {
        return Err(Error::InvalidAllocation(format!(
            "stage '{}' needs at least 1 CPU",
            stage.name
        )));
    }
    if stage.is_prefetch() {
        return Err(Error::InvalidAllocation(
            "prefetch stages have no CPU rate".into(),
        ));
    }
    let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
    Ok(raw_stage_rate(
        stage,
        cpus,
        machine,
        sample_size_mb,
        rng.as_mut(),
    ))
}

/// Total MB consumed by the pipeline under an allocation: per-stage fixed and
/// per-replica memory plus the prefetch footprint. Monotone non-decreasing in
/// every allocation component.
pub fn memory_usage(
    pipeline: &PipelineSpec,
    alloc: &Allocation,
    workload: &WorkloadSpec,
) -> f64 {
    let mut mem = 0.0;
    let mut cpu_idx = 0;
    for stage in &pipeline.stages {
        mem += stage.mem_fixed_mb;
        if !stage.is_prefetch() {
            mem += f64::from(alloc.cpus[cpu_idx]) * stage.mem_per_replica_mb;
            cpu_idx += 1;
        }
    }
    mem + f64::from(alloc.prefetch_units) * pipeline.prefetch_unit_mb(workload)
}

/// Evaluates the pipeline under an allocation.
///
/// The pipeline rate is the minimum stage rate scaled by the prefetch overlap
/// factor; the achieved rate is additionally capped at the workload's target
/// rate. Passing `noise_seed` makes stages with `noise_cv > 0` jitter
/// deterministically for that seed.
pub fn pipeline_throughput(
    pipeline: &PipelineSpec,
    alloc: &Allocation,
    machine: &MachineSpec,
    workload: &WorkloadSpec,
    noise_seed: Option<u64>,
) -> Result<ThroughputReport> {
    alloc.validate(pipeline, machine.total_cpus)?;
    let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);

    let mut min_rate = f64::INFINITY;
    let mut bottleneck = 0;
    let mut cpu_idx = 0;
    for (stage_idx, stage) in pipeline.stages.iter().enumerate() {
        if stage.is_prefetch() {
            continue;
        }
        let rate = raw_stage_rate(
            stage,
            alloc.cpus[cpu_idx],
            machine,
            pipeline.sample_size_mb,
            rng.as_mut(),
        );
        if rate < min_rate {
            min_rate = rate;
            bottleneck = stage_idx;
        }
        cpu_idx += 1;
    }

    let pipeline_rate = pipeline.overlap_factor(alloc.prefetch_units) * min_rate;
    let achieved_rate = pipeline_rate.min(workload.target());
    let mem_used_mb = memory_usage(pipeline, alloc, workload);
    Ok(ThroughputReport {
        pipeline_rate,
        achieved_rate,
        bottleneck_stage: bottleneck,
        mem_used_mb,
        oom: mem_used_mb > machine.total_mem_mb,
    })
}

/// Applies a resize event, returning the machine with `total_cpus` replaced.
/// Fails when the new budget cannot hold one CPU per pipeline stage.
pub fn apply_resize(
    machine: &MachineSpec,
    event: &ResizeEvent,
    pipeline: &PipelineSpec,
) -> Result<MachineSpec> {
    if (event.cpus as usize) < pipeline.stages.len() {
        return Err(Error::InfeasibleBudget(format!(
            "resize to {} CPUs cannot hold 1 CPU per stage ({} stages)",
            event.cpus,
            pipeline.stages.len()
        )));
    }
    let mut next = machine.clone();
    next.total_cpus = event.cpus;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn stage(name: &str, kind: StageKind, cost: f64) -> StageSpec {
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

    pub(crate) fn pipeline(stages: Vec<StageSpec>) -> PipelineSpec {
        PipelineSpec {
            stages,
            sample_size_mb: 1.0,
            overlap_jitter_max: default_jitter_max(),
            overlap_u_half: default_u_half(),
            prefetch_quantum_mb: default_quantum(),
            prefetch_batch_normalizer_mb: default_batch_normalizer(),
        }
    }

    fn machine(cpus: u32, ghz: f64) -> MachineSpec {
        MachineSpec {
            total_cpus: cpus,
            cpu_ghz: ghz,
            total_mem_mb: 1e6,
            dram_bandwidth_mbps: 25_600.0,
            io_bandwidth_mbps: 1e6,
        }
    }

    #[test]
    fn stage_rate_identity_case() {
        let s = stage("a", StageKind::Batch, 1.0);
        let m = machine(8, 1.0);
        assert_eq!(stage_rate(&s, 1, &m, 1.0, None).unwrap(), 1.0);
    }

    #[test]
    fn stage_rate_linear_scaling() {
        let s = stage("a", StageKind::Batch, 2.0);
        let m = machine(8, 1.0);
        assert_eq!(stage_rate(&s, 4, &m, 1.0, None).unwrap(), 2.0);
    }

    #[test]
    fn stage_rate_bandwidth_capped() {
        // Uncapped 8 * 1.0 / 0.1 = 80 samples/s against a 10 MB/s cap on
        // 1 MB samples.
        let s = stage("disk", StageKind::DiskLoad, 0.1);
        let mut m = machine(8, 1.0);
        m.io_bandwidth_mbps = 10.0;
        assert_eq!(stage_rate(&s, 8, &m, 1.0, None).unwrap(), 10.0);
    }

    #[test]
    fn stage_rate_rejects_zero_cpus() {
        let s = stage("a", StageKind::Batch, 1.0);
        let m = machine(8, 1.0);
        assert!(stage_rate(&s, 0, &m, 1.0, None).is_err());
    }

    #[test]
    fn stage_rate_non_scalable_ignores_cpus() {
        let mut s = stage("a", StageKind::Shuffle, 2.0);
        s.scalable = false;
        let m = machine(8, 1.0);
        assert_eq!(stage_rate(&s, 6, &m, 1.0, None).unwrap(), 0.5);
    }

    #[test]
    fn noise_is_deterministic_and_mean_one_ish() {
        let mut s = stage("udf", StageKind::UdfMap, 1.0);
        s.noise_cv = 0.5;
        let m = machine(8, 1.0);
        let a = stage_rate(&s, 1, &m, 1.0, Some(7)).unwrap();
        let b = stage_rate(&s, 1, &m, 1.0, Some(7)).unwrap();
        assert_eq!(a, b);
        // Mean of many draws should be near the noiseless rate.
        let n = 20_000;
        let mean: f64 = (0..n)
            .map(|i| stage_rate(&s, 1, &m, 1.0, Some(i)).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn two_stage_throughput_min_rule() {
        let p = pipeline(vec![
            stage("a", StageKind::DiskLoad, 1.0),
            stage("b", StageKind::Batch, 2.0),
        ]);
        let m = machine(8, 1.0);
        let w = WorkloadSpec::new(10, 1.0);
        let alloc = Allocation {
            cpus: vec![1, 1],
            prefetch_units: 0,
        };
        let rep = pipeline_throughput(&p, &alloc, &m, &w, None).unwrap();
        assert_eq!(rep.pipeline_rate, 0.5);
        assert_eq!(rep.bottleneck_stage, 1);

        let alloc = Allocation {
            cpus: vec![1, 2],
            prefetch_units: 0,
        };
        let rep = pipeline_throughput(&p, &alloc, &m, &w, None).unwrap();
        assert_eq!(rep.pipeline_rate, 1.0);
    }

    #[test]
    fn model_rate_cap_applies() {
        let p = pipeline(vec![
            stage("a", StageKind::DiskLoad, 1.0),
            stage("b", StageKind::Batch, 2.0),
        ]);
        let m = machine(8, 1.0);
        let w = WorkloadSpec::new(8, 10.0); // target 0.8
        let alloc = Allocation {
            cpus: vec![1, 2],
            prefetch_units: 0,
        };
        let rep = pipeline_throughput(&p, &alloc, &m, &w, None).unwrap();
        assert_eq!(rep.pipeline_rate, 1.0);
        assert_eq!(rep.achieved_rate, 0.8);
    }

    #[test]
    fn memory_usage_contract() {
        let mut stages = vec![
            stage("a", StageKind::DiskLoad, 1.0),
            stage("b", StageKind::Batch, 1.0),
        ];
        let w = WorkloadSpec::new(1, 1.0);
        let p0 = pipeline(stages.clone());
        let zero = Allocation {
            cpus: vec![1, 1],
            prefetch_units: 0,
        };
        assert_eq!(memory_usage(&p0, &zero, &w), 0.0);

        stages[1].mem_per_replica_mb = 10.0;
        let p1 = pipeline(stages.clone());
        let alloc = Allocation {
            cpus: vec![1, 3],
            prefetch_units: 0,
        };
        assert_eq!(memory_usage(&p1, &alloc, &w), 30.0);
    }

    #[test]
    fn prefetch_memory_uses_quantum_and_batch_term() {
        let mut p = pipeline(vec![
            stage("a", StageKind::DiskLoad, 1.0),
            stage("pf", StageKind::Prefetch, 0.0),
        ]);
        // batch term = batch_size * sample_size / normalizer = 1
        p.sample_size_mb = 1.0;
        p.prefetch_batch_normalizer_mb = 1024.0;
        let w = WorkloadSpec::new(1024, 1.0);
        let alloc = Allocation {
            cpus: vec![1],
            prefetch_units: 2,
        };
        assert_eq!(memory_usage(&p, &alloc, &w), 128.0);
    }

    #[test]
    fn overlap_factor_shapes() {
        let no_prefetch = pipeline(vec![
            stage("a", StageKind::DiskLoad, 1.0),
            stage("b", StageKind::Batch, 1.0),
        ]);
        assert_eq!(no_prefetch.overlap_factor(0), 1.0);

        let with_prefetch = pipeline(vec![
            stage("a", StageKind::DiskLoad, 1.0),
            stage("pf", StageKind::Prefetch, 0.0),
        ]);
        assert!((with_prefetch.overlap_factor(0) - 0.7).abs() < 1e-12);
        assert!(with_prefetch.overlap_factor(8) > with_prefetch.overlap_factor(2));
        assert!(with_prefetch.overlap_factor(1000) <= 1.0);
    }

    #[test]
    fn resize_replaces_only_cpu_count() {
        let p = pipeline(vec![
            stage("a", StageKind::DiskLoad, 1.0),
            stage("b", StageKind::Batch, 1.0),
        ]);
        let m = machine(32, 1.0);
        let next = apply_resize(&m, &ResizeEvent { step: 0, cpus: 64 }, &p).unwrap();
        assert_eq!(next.total_cpus, 64);
        assert_eq!(next.cpu_ghz, m.cpu_ghz);

        let same = apply_resize(&m, &ResizeEvent { step: 0, cpus: 32 }, &p).unwrap();
        assert_eq!(same, m);
    }

    #[test]
    fn resize_below_stage_count_errors() {
        let p = pipeline(vec![
            stage("a", StageKind::DiskLoad, 1.0),
            stage("b", StageKind::Batch, 1.0),
            stage("c", StageKind::Shuffle, 1.0),
            stage("d", StageKind::UdfMap, 1.0),
            stage("pf", StageKind::Prefetch, 0.0),
        ]);
        let m = machine(128, 1.0);
        assert!(apply_resize(&m, &ResizeEvent { step: 0, cpus: 2 }, &p).is_err());
    }

    #[test]
    fn pipeline_validation_catches_bad_specs() {
        let mut p = pipeline(vec![stage("a", StageKind::DiskLoad, 1.0)]);
        assert!(p.validate().is_err(), "one stage is too few");

        p = pipeline(vec![
            stage("a", StageKind::DiskLoad, 1.0),
            stage("a", StageKind::Batch, 1.0),
        ]);
        assert!(p.validate().is_err(), "duplicate names");

        p = pipeline(vec![
            stage("pf", StageKind::Prefetch, 0.0),
            stage("a", StageKind::Batch, 1.0),
        ]);
        assert!(p.validate().is_err(), "prefetch must be last");

        p = pipeline(vec![
            stage("a", StageKind::DiskLoad, 0.0),
            stage("b", StageKind::Batch, 1.0),
        ]);
        assert!(p.validate().is_err(), "zero cost");
    }
}
