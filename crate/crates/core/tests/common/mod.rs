//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use accel_codesign::experiment::Experiment;
use accel_codesign::graph::{infer_shapes, ComputeGraph, DType, OpAttrs, OpKind, OpNode, TensorSpec, Variability};
use accel_codesign::hardware::{compute_precision, op_latency, HardwareConfig, Placement, ResidencyPlan};
use accel_codesign::partition::{Device, ExecutionPlan, OpPlacement, Partition, Role};
use accel_codesign::sim::{SimReport, TransferPlan};

pub fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn experiment(name: &str) -> Experiment {
    Experiment::load(&config(name), &[], None).unwrap()
}

/// Plan, transfers, hardware and report of an experiment run in memory.
pub fn pipeline(exp: &Experiment) -> (ExecutionPlan, TransferPlan, HardwareConfig, SimReport) {
    let hw = exp.hardware().unwrap();
    let g = exp.generate().unwrap();
    let (_, deployed) = exp.quantize(&g).unwrap();
    let plan = exp.plan(&deployed, &hw).unwrap();
    let tp = exp.transfers(&plan, &hw).unwrap();
    let report = exp.simulate(&plan, &tp, &hw).unwrap();
    (plan, tp, hw, report)
}

fn partition(id: &str, role: Role, op: &str, core: usize) -> Partition {
    Partition {
        id: id.into(),
        role,
        ops: vec![op.into()],
        devices: vec![Device::Card(0)],
        cores: 1,
        first_core: core,
    }
}

fn placed(partition: usize, core: usize, secs: f64) -> OpPlacement {
    OpPlacement {
        partition,
        core,
        seq: 0,
        start: 0.0,
        finish: secs,
    }
}

fn plan_of(graph: ComputeGraph, partitions: Vec<Partition>, placement: BTreeMap<String, OpPlacement>) -> ExecutionPlan {
    ExecutionPlan {
        graph,
        partitions,
        placement,
        residency: BTreeMap::new(),
        hints_applied: Vec::new(),
        hints_rejected: Vec::new(),
        host_only: false,
        broadcast_rewrites: 0,
    }
}

/// A one-card recommendation plan with two single-core stages: a sparse
/// stage pooling 4 x 1000 rows of a 512-wide fp16 table and a dense stage
/// sized to take as long. Returns the plan, hardware and both stage
/// latencies from the roofline model.
pub fn two_stage_recsys() -> (ExecutionPlan, HardwareConfig, f64, f64) {
    let mut hw = HardwareConfig::default_node().with_cards(1);
    hw.launch_overhead_s = 0.0;
    let (rows, lookups, dim) = (4, 1000, 512);
    let mut g = ComputeGraph::new();
    g.add_weight(TensorSpec::new("emb", vec![100_000, dim], DType::Fp16));
    let mut idx = TensorSpec::new("idx", vec![rows * lookups], DType::Int32);
    idx.variability = Variability::Variable {
        max_extent: vec![rows * lookups],
    };
    g.add_input(idx);
    g.add_input(TensorSpec::new("len", vec![rows], DType::Int32));
    g.add_op(
        OpNode::new("sls", OpKind::SLS, vec!["emb".into(), "idx".into(), "len".into()], vec!["pooled".into()]).with_attrs(
            OpAttrs {
                table: Some("emb".into()),
                max_lookups: Some(lookups),
                ..Default::default()
            },
        ),
    );
    let g = infer_shapes(&g).unwrap();
    let card = Placement::Card { card: 0, cores: 1 };
    let res = ResidencyPlan::default();
    let sparse = op_latency(&g, &g.ops[0], compute_precision(&g, &g.ops[0]), card, &res, &hw).unwrap();

    let core_rate = hw.cards[0].peak_fp16_flops / hw.cards[0].cores as f64;
    let mut g = g;
    g.add_op(
        OpNode::new("mlp", OpKind::Custom, vec!["pooled".into()], vec!["score".into()]).with_attrs(OpAttrs {
            flops: Some((sparse * core_rate).round() as u64),
            ..Default::default()
        }),
    );
    g.tensors.insert("score".into(), TensorSpec::new("score", vec![rows, 1], DType::Fp16));
    g.outputs.push("score".into());
    let dense = op_latency(&g, &g.ops[1], compute_precision(&g, &g.ops[1]), card, &res, &hw).unwrap();

    let plan = plan_of(
        g,
        vec![partition("sparse", Role::Sparse, "sls", 0), partition("dense", Role::Dense, "mlp", 1)],
        [("sls".to_string(), placed(0, 0, sparse)), ("mlp".to_string(), placed(1, 1, dense))].into_iter().collect(),
    );
    (plan, hw, sparse, dense)
}

/// One single-core card partition whose `count` ops each return a 64-byte
/// graph output to the host and read nothing from it.
pub fn small_outputs(count: usize) -> (ExecutionPlan, HardwareConfig) {
    let hw = HardwareConfig::default_node().with_cards(1);
    let mut g = ComputeGraph::new();
    let mut placement = BTreeMap::new();
    for i in 0..count {
        g.add_weight(TensorSpec::new(format!("w{i}"), vec![32], DType::Fp16));
        g.add_op(OpNode::new(format!("o{i}"), OpKind::Custom, vec![format!("w{i}")], vec![format!("y{i}")]).with_attrs(
            OpAttrs {
                flops: Some(1000),
                ..Default::default()
            },
        ));
        g.tensors.insert(format!("y{i}"), TensorSpec::new(format!("y{i}"), vec![32], DType::Fp16));
        g.outputs.push(format!("y{i}"));
        placement.insert(
            format!("o{i}"),
            OpPlacement {
                seq: i,
                ..placed(0, 0, 0.0)
            },
        );
    }
    let mut part = partition("net", Role::Device, "o0", 0);
    part.ops = (0..count).map(|i| format!("o{i}")).collect();
    (plan_of(g, vec![part], placement), hw)
}
