use accel_codesign::graph::{op_cost_stats, validate_graph, OpKind};
use accel_codesign::numerics::{layer_error, AccuracyBudget, BudgetMetric, ErrorMetric};
use accel_codesign::quantizer::fixtures::{outlier_fc_model, random_concat_model, random_fc_model};
use accel_codesign::quantizer::{
    apply_assignment, assign_precisions, last_fcs, quant_candidates, AssignmentStatus, OpPrecision, ParamsMap,
    Precisions, ProxyModel, QuantError, ReferenceProxy,
};
use half::f16;
use proptest::prelude::*;

fn cosine_budget() -> AccuracyBudget {
    AccuracyBudget::new(BudgetMetric::CosineSimilarity, 0.99999).unwrap()
}

#[test]
fn outlier_fc_is_promoted_first_and_alone() {
    let (model, outlier) = outlier_fc_model(7).unwrap();
    let proxy = ReferenceProxy::new(&model, BudgetMetric::CosineSimilarity).unwrap();
    let a = assign_precisions(&model, cosine_budget(), &proxy).unwrap();
    assert_eq!(a.promotions, vec![outlier.clone()]);
    assert_eq!(a.status, AssignmentStatus::MeetsBudget);
    assert_eq!(a.precisions[&outlier], OpPrecision::Fp16);
    assert_eq!(a.count(OpPrecision::Int8), 3);
}

#[test]
fn loose_budget_promotes_nothing() {
    let (model, _) = outlier_fc_model(1).unwrap();
    let proxy = ReferenceProxy::new(&model, BudgetMetric::NeDegradation).unwrap();
    let budget = AccuracyBudget::new(BudgetMetric::NeDegradation, 1.0).unwrap();
    let a = assign_precisions(&model, budget, &proxy).unwrap();
    assert!(a.promotions.is_empty());
    assert_eq!(a.count(OpPrecision::Int8), quant_candidates(&model.graph).unwrap().len());
    assert_eq!(a.status, AssignmentStatus::MeetsBudget);
}

#[test]
fn unreachable_budget_falls_back_to_fp16() {
    let (model, _) = outlier_fc_model(2).unwrap();
    let never = |_: &Precisions| Ok(0.5);
    let budget = AccuracyBudget::new(BudgetMetric::NeDegradation, 0.0).unwrap();
    let a = assign_precisions(&model, budget, &never).unwrap();
    let n = quant_candidates(&model.graph).unwrap().len();
    assert_eq!(a.status, AssignmentStatus::FallbackAllFp16);
    assert_eq!(a.promotions.len(), n);
    assert_eq!(a.history.len(), n + 1);
    assert_eq!(a.count(OpPrecision::Int8), 0);
}

#[test]
fn proxy_failure_carries_iteration() {
    let (model, _) = outlier_fc_model(3).unwrap();
    let calls = std::cell::Cell::new(0);
    let flaky = |_: &Precisions| {
        calls.set(calls.get() + 1);
        if calls.get() == 3 {
            Err(QuantError::EmptyCalibration)
        } else {
            Ok(1.0)
        }
    };
    let budget = AccuracyBudget::new(BudgetMetric::NeDegradation, 0.0).unwrap();
    match assign_precisions(&model, budget, &flaky) {
        Err(QuantError::Proxy { iteration, .. }) => assert_eq!(iteration, 2),
        other => panic!("expected proxy error, got {other:?}"),
    }
}

#[test]
fn search_is_deterministic() {
    let run = || {
        let (model, _) = outlier_fc_model(11).unwrap();
        let proxy = ReferenceProxy::new(&model, BudgetMetric::CosineSimilarity).unwrap();
        let a = assign_precisions(&model, cosine_budget(), &proxy).unwrap();
        (a.render(), serde_json::to_string(&a).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn assignment_file_format() {
    let (model, outlier) = outlier_fc_model(7).unwrap();
    let proxy = ReferenceProxy::new(&model, BudgetMetric::CosineSimilarity).unwrap();
    let a = assign_precisions(&model, cosine_budget(), &proxy).unwrap();
    let text = a.render();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), model.graph.ops.len() + 2);
    assert!(lines.contains(&format!("{outlier} fp16 - -").as_str()));
    let int8 = lines.iter().find(|l| l.starts_with("b0fc0 ")).unwrap();
    let fields: Vec<&str> = int8.split(' ').collect();
    assert_eq!(fields[1], "int8");
    assert!(fields[2].parse::<f32>().unwrap() > 0.0);
    assert!(fields[3].parse::<i32>().is_ok());
    assert_eq!(lines[lines.len() - 2], "status meets_budget");
    assert!(lines[lines.len() - 1].starts_with("metric cosine_similarity 0.99999"));
}

/// fp16-simulated execution of a branch model, written against the `half`
/// crate: operands rounded to binary16, f32 accumulation, rounded result.
fn fp16_oracle(model: &ProxyModel) -> Vec<f32> {
    let r = |v: f32| f16::from_f32(v).to_f32();
    let g = &model.graph;
    let mut vals: std::collections::HashMap<String, Vec<f32>> = std::collections::HashMap::new();
    vals.insert("x".into(), model.calib.inputs["x"].clone());
    for i in g.topo_order().unwrap() {
        let op = &g.ops[i];
        let out = match op.kind {
            OpKind::FC => {
                let ws = &g.tensors[&op.inputs[1]].shape;
                let (k, n) = (ws[0], ws[1]);
                let x: Vec<f32> = vals[&op.inputs[0]].iter().map(|&v| r(v)).collect();
                let w: Vec<f32> = model.weights[&op.inputs[1]].iter().map(|&v| r(v)).collect();
                let m = x.len() / k;
                let mut y = vec![0.0f32; m * n];
                for a in 0..m {
                    for b in 0..n {
                        let mut acc = 0.0f32;
                        for c in 0..k {
                            acc += x[a * k + c] * w[c * n + b];
                        }
                        y[a * n + b] = r(acc);
                    }
                }
                y
            }
            OpKind::Concat => {
                let rows = g.tensors[&op.outputs[0]].shape[0];
                let mut y = Vec::new();
                for row in 0..rows {
                    for t in &op.inputs {
                        let w = g.tensors[t].shape[1];
                        y.extend(vals[t][row * w..(row + 1) * w].iter().map(|&v| r(v)));
                    }
                }
                y
            }
            k => panic!("oracle does not model {k:?}"),
        };
        vals.insert(op.outputs[0].clone(), out);
    }
    vals.remove(&g.outputs[0]).unwrap()
}

#[test]
fn all_fp16_matches_half_oracle_bitwise() {
    for seed in 0..5 {
        let model = random_fc_model(seed).unwrap();
        let all: Precisions = model.graph.ops.iter().map(|o| (o.id.clone(), OpPrecision::Fp16)).collect();
        let got = model.run_output(&all, &ParamsMap::new()).unwrap();
        let want = fp16_oracle(&model);
        let gb: Vec<u32> = got.iter().map(|v| v.to_bits()).collect();
        let wb: Vec<u32> = want.iter().map(|v| v.to_bits()).collect();
        assert_eq!(gb, wb, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn search_terminates_and_keeps_last_fc(seed in any::<u64>(), threshold in 0.99f64..=1.0) {
        let model = random_fc_model(seed).unwrap();
        let proxy = ReferenceProxy::new(&model, BudgetMetric::CosineSimilarity).unwrap();
        let budget = AccuracyBudget::new(BudgetMetric::CosineSimilarity, threshold).unwrap();
        let a = assign_precisions(&model, budget, &proxy).unwrap();
        let n = quant_candidates(&model.graph).unwrap().len();
        prop_assert!(a.promotions.len() <= n);
        prop_assert!(a.history.len() <= n + 1);
        for id in last_fcs(&model.graph).unwrap() {
            prop_assert_ne!(a.precisions[&id], OpPrecision::Int8);
        }
        // fp16 set strictly grows along the promotion sequence
        let mut seen = std::collections::BTreeSet::new();
        for p in &a.promotions {
            prop_assert!(seen.insert(p.clone()));
        }
    }

    #[test]
    fn promotions_never_raise_output_error(seed in any::<u64>()) {
        let model = random_concat_model(seed).unwrap();
        let params = model.calibrate().unwrap();
        let exact = model.run_output(&Precisions::new(), &params).unwrap();
        let err = |p: &Precisions| -> Result<f64, QuantError> {
            let out = model.run_output(p, &params)?;
            Ok(layer_error(&exact, &out, ErrorMetric::RelativeL2)?)
        };
        let budget = AccuracyBudget::new(BudgetMetric::NeDegradation, 0.0).unwrap();
        let a = assign_precisions(&model, budget, &err).unwrap();
        for w in a.history.windows(2) {
            prop_assert!(w[1] <= w[0], "{:?}", a.history);
        }
    }

    #[test]
    fn rewrite_preserves_flops_and_validity(seed in any::<u64>()) {
        let model = random_fc_model(seed).unwrap();
        let proxy = ReferenceProxy::new(&model, BudgetMetric::CosineSimilarity).unwrap();
        let a = assign_precisions(&model, cosine_budget(), &proxy).unwrap();
        let q = apply_assignment(&model.graph, &a).unwrap();
        prop_assert_eq!(validate_graph(&q), Ok(()));
        for op in &model.graph.ops {
            let before = op_cost_stats(&model.graph, op).unwrap().flops;
            let after = op_cost_stats(&q, q.op(&op.id).unwrap()).unwrap().flops;
            prop_assert_eq!(before.to_bits(), after.to_bits());
        }
        // no Dequantize feeds a Quantize directly
        let producers = q.producers();
        for op in q.ops.iter().filter(|o| o.kind == OpKind::Quantize) {
            if let Some(&p) = producers.get(op.inputs[0].as_str()) {
                prop_assert_ne!(q.ops[p].kind, OpKind::Dequantize);
            }
        }
    }
}
