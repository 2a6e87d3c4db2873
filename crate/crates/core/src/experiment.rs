//! Config-driven pipeline: generate, quantize, partition, simulate, sweep
//! and validate, each writing its artifacts under `<out>/<stage>/`.
//!
//! A stage reads its predecessor's artifact from the output directory when
//! it exists and otherwise recomputes the predecessor in memory, so stages
//! can be run one at a time or independently.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::workloads::{gen_dlrm, gen_preset, gen_transformer, DlrmStructure, Family, Preset, TransformerStructure, WorkloadSpec};
use crate::graph::{ComputeGraph, GraphError, WorkloadTotals};
use crate::hardware::{HardwareConfig, HwError};
use crate::numerics::bitexact::{bitexact_compare, corpus, kernel_pair, BitexactReport, KernelOp};
use crate::numerics::{AccuracyBudget, BudgetMetric, NumericsError};
use crate::partition::{build_plan, ExecutionPlan, PartitionError, PlanOptions, SparseCores, Strategy};
use crate::quantizer::fixtures::proxy_model;
use crate::quantizer::{apply_assignment, assign_precisions, deploy_default, PrecisionAssignment, QuantError, ReferenceProxy};
use crate::sim::{
    plan_transfers_with, simulate, summarize_report, BatchPolicy, SimConfig, SimError, SimReport, Traffic,
    TransferOptions, TransferPlan,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("schema: {0}")]
    Schema(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{0}")]
    Other(String),
}

impl ExperimentError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::MissingFile(_) => 2,
            ExperimentError::Schema(_) => 3,
            ExperimentError::Infeasible(_) => 4,
            ExperimentError::Other(_) => 1,
        }
    }
}

impl From<GraphError> for ExperimentError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Parse(_) | GraphError::UnknownPreset(_) => ExperimentError::Schema(e.to_string()),
            e => ExperimentError::Other(e.to_string()),
        }
    }
}

impl From<HwError> for ExperimentError {
    fn from(e: HwError) -> Self {
        match e {
            HwError::Schema(_) | HwError::Invalid(_) => ExperimentError::Schema(e.to_string()),
            HwError::Overflow { .. } => ExperimentError::Infeasible(e.to_string()),
            e => ExperimentError::Other(e.to_string()),
        }
    }
}

impl From<PartitionError> for ExperimentError {
    fn from(e: PartitionError) -> Self {
        match e {
            PartitionError::Graph(g) => g.into(),
            PartitionError::Hw(h) => h.into(),
            PartitionError::Capacity { .. }
            | PartitionError::ExceedsCard { .. }
            | PartitionError::NoSparse
            | PartitionError::Oversubscribed { .. }
            | PartitionError::NoCores => ExperimentError::Infeasible(e.to_string()),
            e => ExperimentError::Other(e.to_string()),
        }
    }
}

impl From<SimError> for ExperimentError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Graph(g) => g.into(),
            SimError::Hw(h) => h.into(),
            SimError::Unschedulable(_) | SimError::ItemTooLong { .. } => ExperimentError::Infeasible(e.to_string()),
            SimError::Invalid(_) => ExperimentError::Schema(e.to_string()),
        }
    }
}

impl From<QuantError> for ExperimentError {
    fn from(e: QuantError) -> Self {
        match e {
            QuantError::Graph(g) => g.into(),
            QuantError::Hw(h) => h.into(),
            e => ExperimentError::Other(e.to_string()),
        }
    }
}

impl From<NumericsError> for ExperimentError {
    fn from(e: NumericsError) -> Self {
        ExperimentError::Other(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Which model to build. Exactly one of `preset`, `graph`, `dlrm` and
/// `transformer` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct WorkloadRef {
    #[serde(default)]
    pub preset: Option<Preset>,
    /// A graph file, relative to the config file.
    #[serde(default)]
    pub graph: Option<PathBuf>,
    #[serde(default)]
    pub dlrm: Option<DlrmStructure>,
    #[serde(default)]
    pub transformer: Option<TransformerStructure>,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub seq_len: Option<usize>,
    /// Required when the family cannot be inferred from a preset.
    #[serde(default)]
    pub family: Option<Family>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuantizeMode {
    /// The fixed per-family deployment policy.
    #[default]
    Deploy,
    /// Error-driven search against a proxy model with synthetic weights.
    Search,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct QuantizeSpec {
    #[serde(default)]
    pub mode: QuantizeMode,
    #[serde(default)]
    pub metric: Option<BudgetMetric>,
    #[serde(default)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(flatten)]
    pub sim: SimConfig,
    /// Overrides the hardware config's p2p switch.
    #[serde(default)]
    pub p2p_enabled: Option<bool>,
    #[serde(default = "yes")]
    pub partial_tensors: bool,
    #[serde(default = "yes")]
    pub command_batching: bool,
}

fn yes() -> bool {
    true
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            sim: SimConfig::new(Traffic::ClosedLoop {
                concurrency: 8,
                count: 200,
            }),
            p2p_enabled: None,
            partial_tensors: true,
            command_batching: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKnob {
    /// Sparse cores per card of a recsys plan.
    SparseCores,
    /// Compiled batch size; requests per batch follow it.
    Batch,
    /// Closed-loop clients.
    Concurrency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub knob: SweepKnob,
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSpec {
    #[serde(default = "thousand")]
    pub cases: usize,
}

fn thousand() -> usize {
    1000
}

impl Default for ValidateSpec {
    fn default() -> Self {
        Self { cases: thousand() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub workload: WorkloadRef,
    /// Hardware config file, relative to the config file; the shipped
    /// default node when absent.
    #[serde(default)]
    pub hardware: Option<PathBuf>,
    #[serde(default)]
    pub quantize: QuantizeSpec,
    pub partition: PlanOptions,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub validate: ValidateSpec,
    /// Output root, relative to the config file.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Sets `path` (dotted keys) in a TOML document. The value is parsed as a
/// TOML literal, falling back to a plain string.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ExperimentError::Schema(format!("override {assignment:?} is not key=value")))?;
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut cur = doc;
    for (i, k) in keys.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| ExperimentError::Schema(format!("override path {path} crosses a non-table value")))?;
        if i + 1 == keys.len() {
            table.insert(k.to_string(), value);
            return Ok(());
        }
        cur = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(ExperimentError::Schema("empty override path".into()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ExperimentError::MissingFile(path.to_path_buf()),
        _ => ExperimentError::Other(format!("{}: {e}", path.display())),
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| ExperimentError::Other(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| ExperimentError::Other(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serialization is infallible");
    s.push('\n');
    s
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| ExperimentError::Schema(format!("{}: {e}", path.display())))
}

/// One row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub throughput_rps: f64,
    /// `1 / throughput`: steady-state time per request.
    pub service_s: f64,
    pub latency_p50_s: f64,
    pub latency_p99_s: f64,
    /// Longest single-batch partition makespan of the plan.
    pub max_partition_s: f64,
}

/// Index of the smallest `service_s`; ties go to the first row.
pub fn sweep_argmin(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .min_by(|a, b| a.1.service_s.total_cmp(&b.1.service_s).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

pub fn render_sweep(knob: SweepKnob, rows: &[SweepRow]) -> String {
    let name = match knob {
        SweepKnob::SparseCores => "sparse_cores",
        SweepKnob::Batch => "batch",
        SweepKnob::Concurrency => "concurrency",
    };
    let mut s = format!("{name},throughput_rps,service_s,latency_p50_s,latency_p99_s,max_partition_s,argmin\n");
    let best = sweep_argmin(rows);
    for (i, r) in rows.iter().enumerate() {
        s += &format!(
            "{},{},{},{},{},{},{}\n",
            r.value,
            r.throughput_rps,
            r.service_s,
            r.latency_p50_s,
            r.latency_p99_s,
            r.max_partition_s,
            u8::from(Some(i) == best)
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Quantize,
    Partition,
    Simulate,
    Sweep,
    Validate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Quantize => "quantize",
            Stage::Partition => "partition",
            Stage::Simulate => "simulate",
            Stage::Sweep => "sweep",
            Stage::Validate => "validate",
        }
    }
}

/// A loaded experiment: the config plus the directory its relative paths
/// resolve against.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub base: PathBuf,
}

impl Experiment {
    pub fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let text = read(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base, overrides, seed)
    }

    pub fn from_toml(text: &str, base: PathBuf, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut doc: toml::Value = toml::from_str(text).map_err(|e| ExperimentError::Schema(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| ExperimentError::Schema(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let w = &cfg.workload;
        let sources = [w.preset.is_some(), w.graph.is_some(), w.dlrm.is_some(), w.transformer.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(ExperimentError::Schema(
                "workload needs exactly one of preset, graph, dlrm, transformer".into(),
            ));
        }
        Ok(Self { cfg, base })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Output root: `--out` wins, then the config's `out`, then `out`.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        match (flag, &self.cfg.out) {
            (Some(f), _) => f.to_path_buf(),
            (None, Some(o)) => self.resolve(o),
            (None, None) => PathBuf::from("out"),
        }
    }

    pub fn hardware(&self) -> Result<HardwareConfig> {
        let mut hw = match &self.cfg.hardware {
            Some(p) => HardwareConfig::from_toml(&read(&self.resolve(p))?)?,
            None => HardwareConfig::default_node(),
        };
        if let Some(p2p) = self.cfg.simulate.p2p_enabled {
            hw.p2p_enabled = p2p;
        }
        Ok(hw)
    }

    pub fn family(&self) -> Result<Family> {
        let w = &self.cfg.workload;
        if let Some(f) = w.family {
            return Ok(f);
        }
        match (w.preset, &w.dlrm, &w.transformer) {
            (Some(p), _, _) => Ok(p.family()),
            (_, Some(_), _) => Ok(Family::Recsys),
            (_, _, Some(_)) => Ok(Family::Language),
            _ => Err(ExperimentError::Schema("workload.family is required for graph files".into())),
        }
    }

    /// Items per compiled batch.
    pub fn batch_size(&self) -> usize {
        let w = &self.cfg.workload;
        w.batch
            .or_else(|| w.preset.map(|p| WorkloadSpec::preset(p).batch_size))
            .unwrap_or(1)
    }

    fn latency_constraint_ms(&self) -> Option<f64> {
        self.cfg
            .workload
            .preset
            .map(|p| WorkloadSpec::preset(p).targets.latency_constraint_ms)
    }

    /// Builds the workload graph.
    pub fn generate(&self) -> Result<ComputeGraph> {
        let w = &self.cfg.workload;
        let b = self.batch_size();
        if let Some(p) = w.preset {
            let mut spec = WorkloadSpec::preset(p).with_batch(b);
            if let Some(t) = w.seq_len {
                spec = spec.with_seq_len(t);
            }
            return Ok(gen_preset(&spec)?);
        }
        if let Some(path) = &w.graph {
            let g = ComputeGraph::from_json(&read(&self.resolve(path))?)?;
            return Ok(crate::graph::infer_shapes(&g)?);
        }
        if let Some(s) = &w.dlrm {
            let spec = WorkloadSpec::preset(Preset::RecsysMoreComplex).with_batch(b);
            return Ok(gen_dlrm(&spec, s)?);
        }
        let s = w.transformer.as_ref().expect("validated on load");
        Ok(gen_transformer(s, b, w.seq_len.unwrap_or(128))?)
    }

    /// Precision assignment and the deployed graph.
    pub fn quantize(&self, g: &ComputeGraph) -> Result<(PrecisionAssignment, ComputeGraph)> {
        let q = &self.cfg.quantize;
        let a = match q.mode {
            QuantizeMode::Deploy => deploy_default(g, self.family()?)?,
            QuantizeMode::Search => {
                let metric = q.metric.unwrap_or(BudgetMetric::NeDegradation);
                let budget = match q.threshold {
                    Some(t) => AccuracyBudget::new(metric, t).map_err(|e| ExperimentError::Schema(e.to_string()))?,
                    None => AccuracyBudget::default_for(metric),
                };
                let model = proxy_model(g, self.cfg.seed)?;
                let proxy = ReferenceProxy::new(&model, metric)?;
                assign_precisions(&model, budget, &proxy)?
            }
        };
        let deployed = apply_assignment(g, &a)?;
        Ok((a, deployed))
    }

    pub fn plan(&self, deployed: &ComputeGraph, hw: &HardwareConfig) -> Result<ExecutionPlan> {
        Ok(build_plan(deployed, hw, &self.cfg.partition)?)
    }

    pub fn transfers(&self, plan: &ExecutionPlan, hw: &HardwareConfig) -> Result<TransferPlan> {
        let s = &self.cfg.simulate;
        Ok(plan_transfers_with(
            plan,
            hw,
            TransferOptions {
                partial_tensors: s.partial_tensors,
                command_batching: s.command_batching,
            },
        )?)
    }

    /// The simulation config with the experiment's seed, compiled batch and
    /// latency constraint applied.
    pub fn sim_config(&self) -> SimConfig {
        let mut c = self.cfg.simulate.sim.clone();
        c.seed = self.cfg.seed;
        if let Traffic::OpenLoop { seed, .. } = &mut c.traffic {
            *seed = self.cfg.seed;
        }
        c.compiled_batch = self.batch_size();
        if let Some(ms) = self.latency_constraint_ms() {
            c.latency_constraint_ms = ms;
        }
        c
    }

    pub fn simulate(&self, plan: &ExecutionPlan, tp: &TransferPlan, hw: &HardwareConfig) -> Result<SimReport> {
        Ok(simulate(plan, tp, hw, &self.sim_config())?)
    }

    /// Runs every sweep point (in parallel) from the generated workload.
    pub fn sweep(&self) -> Result<(SweepKnob, Vec<SweepRow>)> {
        let spec = self
            .cfg
            .sweep
            .clone()
            .ok_or_else(|| ExperimentError::Schema("config has no [sweep] section".into()))?;
        let hw = self.hardware()?;
        let fixed = if spec.knob == SweepKnob::Batch {
            None
        } else {
            let g = self.generate()?;
            Some(self.quantize(&g)?.1)
        };
        let rows: Vec<Result<SweepRow>> = spec
            .values
            .par_iter()
            .map(|&v| {
                let mut exp = self.clone();
                match spec.knob {
                    SweepKnob::SparseCores => match &mut exp.cfg.partition.strategy {
                        Strategy::Recsys { sparse, .. } => *sparse = SparseCores::fixed(v),
                        _ => return Err(ExperimentError::Schema("sparse_cores sweeps need the recsys strategy".into())),
                    },
                    SweepKnob::Batch => {
                        exp.cfg.workload.batch = Some(v);
                        exp.cfg.simulate.sim.batch = match &exp.cfg.simulate.sim.batch {
                            BatchPolicy::FixedSize { .. } => BatchPolicy::FixedSize { n: v },
                            BatchPolicy::LengthBucketed { boundaries, .. } => BatchPolicy::LengthBucketed {
                                boundaries: boundaries.clone(),
                                n: v,
                            },
                        };
                    }
                    SweepKnob::Concurrency => match &mut exp.cfg.simulate.sim.traffic {
                        Traffic::ClosedLoop { concurrency, .. } => *concurrency = v,
                        _ => return Err(ExperimentError::Schema("concurrency sweeps need closed-loop traffic".into())),
                    },
                }
                let deployed = match &fixed {
                    Some(d) => d.clone(),
                    None => exp.quantize(&exp.generate()?)?.1,
                };
                let plan = exp.plan(&deployed, &hw)?;
                let tp = exp.transfers(&plan, &hw)?;
                let r = exp.simulate(&plan, &tp, &hw)?;
                let p = r.percentiles.unwrap_or(crate::sim::Percentiles {
                    p50: 0.0,
                    p90: 0.0,
                    p99: 0.0,
                });
                Ok(SweepRow {
                    value: v,
                    throughput_rps: r.throughput_rps,
                    service_s: if r.throughput_rps > 0.0 { 1.0 / r.throughput_rps } else { f64::INFINITY },
                    latency_p50_s: p.p50,
                    latency_p99_s: p.p99,
                    max_partition_s: plan.partition_makespans().into_iter().fold(0.0, f64::max),
                })
            })
            .collect();
        Ok((spec.knob, rows.into_iter().collect::<Result<Vec<_>>>()?))
    }

    /// Dual-implementation comparison of every kernel on a seeded corpus.
    pub fn validate(&self) -> Result<Vec<BitexactReport>> {
        KernelOp::ALL
            .par_iter()
            .map(|&op| {
                let (a, b) = kernel_pair(op);
                Ok(bitexact_compare(&a, &b, &corpus(op, self.cfg.validate.cases, self.cfg.seed))?)
            })
            .collect()
    }

    fn upstream_graph(&self, out: &Path) -> Result<ComputeGraph> {
        let p = out.join("generate/graph.json");
        if p.exists() {
            Ok(ComputeGraph::from_json(&read(&p)?)?)
        } else {
            self.generate()
        }
    }

    fn upstream_deployed(&self, out: &Path) -> Result<ComputeGraph> {
        let p = out.join("quantize/graph.json");
        if p.exists() {
            Ok(ComputeGraph::from_json(&read(&p)?)?)
        } else {
            Ok(self.quantize(&self.upstream_graph(out)?)?.1)
        }
    }

    fn upstream_plan(&self, out: &Path, hw: &HardwareConfig) -> Result<(ExecutionPlan, TransferPlan)> {
        let p = out.join("partition/plan.json");
        let plan = if p.exists() {
            ExecutionPlan::from_json(&read(&p)?).map_err(|e| ExperimentError::Schema(format!("{}: {e}", p.display())))?
        } else {
            self.plan(&self.upstream_deployed(out)?, hw)?
        };
        // transfer treatment follows the current simulate settings
        let tp = self.transfers(&plan, hw)?;
        Ok((plan, tp))
    }

    /// Runs one stage and writes its artifacts; returns the files written.
    pub fn run(&self, stage: Stage, out: &Path) -> Result<Vec<PathBuf>> {
        let dir = out.join(stage.name());
        let mut files = Vec::new();
        let mut emit = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            write(&p, &text)?;
            files.push(p);
            Ok(())
        };
        match stage {
            Stage::Generate => {
                let g = self.generate()?;
                emit("graph.json", g.to_json() + "\n")?;
                emit("totals.json", to_json(&WorkloadTotals::of(&g)?))?;
            }
            Stage::Quantize => {
                let (a, deployed) = self.quantize(&self.upstream_graph(out)?)?;
                emit("assignment.json", to_json(&a))?;
                emit("assignment.txt", a.render())?;
                emit("graph.json", deployed.to_json() + "\n")?;
            }
            Stage::Partition => {
                let hw = self.hardware()?;
                let plan = self.plan(&self.upstream_deployed(out)?, &hw)?;
                let tp = self.transfers(&plan, &hw)?;
                emit("plan.json", plan.to_json() + "\n")?;
                emit("transfers.json", to_json(&tp))?;
                emit("summary.txt", render_plan(&plan))?;
            }
            Stage::Simulate => {
                let hw = self.hardware()?;
                let (plan, tp) = self.upstream_plan(out, &hw)?;
                let r = self.simulate(&plan, &tp, &hw)?;
                let s = summarize_report(&r);
                emit("report.json", to_json(&r))?;
                emit("report.csv", s.to_csv())?;
                emit("report.txt", s.text)?;
            }
            Stage::Sweep => {
                let (knob, rows) = self.sweep()?;
                emit("sweep.csv", render_sweep(knob, &rows))?;
            }
            Stage::Validate => {
                let reports = self.validate()?;
                let text: String = reports.iter().map(BitexactReport::render).collect();
                emit("bitexact.txt", text)?;
                let bad: usize = reports.iter().map(|r| r.mismatches.len()).sum();
                if bad > 0 {
                    return Err(ExperimentError::Other(format!("{bad} bit-exactness mismatches")));
                }
            }
        }
        Ok(files)
    }
}

/// Stable human-readable plan summary: one line per partition.
pub fn render_plan(plan: &ExecutionPlan) -> String {
    let spans = plan.partition_makespans();
    let mut s = String::new();
    for (i, p) in plan.partitions.iter().enumerate() {
        let devices: Vec<String> = p
            .devices
            .iter()
            .map(|d| match d {
                crate::partition::Device::Host => "host".to_string(),
                crate::partition::Device::Card(c) => format!("card{c}"),
            })
            .collect();
        s += &format!(
            "{} role={:?} ops={} devices={} cores={} first_core={} makespan_s={}\n",
            p.id,
            p.role,
            p.ops.len(),
            devices.join(","),
            p.cores,
            p.first_core,
            spans[i]
        );
    }
    s += &format!("hints_applied={} hints_rejected={}\n", plan.hints_applied.len(), plan.hints_rejected.len());
    s
}

/// Reads a JSON artifact written by an earlier stage.
pub fn read_artifact<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    from_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
[workload]
preset = "recsys_less_complex"
batch = 4
[partition]
strategy = { kind = "recsys" }
"#;

    #[test]
    fn overrides_reach_nested_keys() {
        let e = Experiment::from_toml(
            MINIMAL,
            PathBuf::new(),
            &["partition.strategy.sparse.cores=5".into(), "workload.batch=8".into()],
            Some(9),
        )
        .unwrap();
        assert_eq!(e.cfg.seed, 9);
        assert_eq!(e.cfg.workload.batch, Some(8));
        match e.cfg.partition.strategy {
            Strategy::Recsys { sparse, .. } => assert_eq!(sparse.cores, Some(5)),
            _ => panic!("strategy changed"),
        }
    }

    #[test]
    fn schema_errors_exit_3() {
        let e = Experiment::from_toml("[workload]\npreset = \"nope\"\n", PathBuf::new(), &[], None).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        let e = Experiment::from_toml(MINIMAL, PathBuf::new(), &["bogus=1".into()], None).unwrap_err();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn missing_hardware_file_exits_2() {
        let e = Experiment::from_toml(MINIMAL, PathBuf::from("/nonexistent"), &["hardware=\"hw.toml\"".into()], None)
            .unwrap();
        assert_eq!(e.hardware().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn argmin_takes_first_tie() {
        let row = |value, service_s| SweepRow {
            value,
            throughput_rps: 1.0 / service_s,
            service_s,
            latency_p50_s: 0.0,
            latency_p99_s: 0.0,
            max_partition_s: 0.0,
        };
        assert_eq!(sweep_argmin(&[row(1, 3.0), row(2, 1.0), row(3, 1.0)]), Some(1));
        assert_eq!(sweep_argmin(&[]), None);
    }
}
