//! Small executable models for exercising the precision search.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::exec::{CalibrationSet, ParamsMap, ProxyModel};
use super::{Precisions, QuantError, Result};
use crate::graph::{infer_shapes, sls_lookups, ComputeGraph, DType, OpAttrs, OpKind, OpNode, TensorSpec};

/// Largest total weight element count [`synth_weights`] will materialize.
pub const MAX_PROXY_ELEMENTS: u64 = 1 << 24;

/// Seeded uniform weights: dense weights in `±1/sqrt(fan_in)`, embedding
/// tables in `±0.1`.
pub fn synth_weights(g: &ComputeGraph, seed: u64) -> Result<BTreeMap<String, Vec<f32>>> {
    let total: u64 = g.weights.keys().map(|w| g.tensors[w].elements()).sum();
    if total > MAX_PROXY_ELEMENTS {
        return Err(QuantError::Fixture(format!(
            "{total} weight elements exceed the proxy limit of {MAX_PROXY_ELEMENTS}"
        )));
    }
    let tables: Vec<&str> = g
        .ops
        .iter()
        .filter(|op| op.kind == OpKind::SLS)
        .map(|op| op.inputs[0].as_str())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for name in g.weights.keys() {
        let spec = &g.tensors[name];
        let bound = if tables.contains(&name.as_str()) {
            0.1
        } else {
            let fan_in: usize = if spec.shape.len() == 2 {
                spec.shape[0]
            } else {
                spec.shape[1..].iter().product()
            };
            1.0 / (fan_in.max(1) as f32).sqrt()
        };
        let v = (0..spec.elements()).map(|_| rng.gen_range(-bound..=bound)).collect();
        out.insert(name.clone(), v);
    }
    Ok(out)
}

/// Seeded calibration data: standard normal float inputs, SLS lengths
/// uniform around each op's average lookup count, uniform indices, and
/// Bernoulli labels drawn from the fp32 model's sigmoid output.
pub fn synth_calibration(
    g: &ComputeGraph,
    weights: &BTreeMap<String, Vec<f32>>,
    seed: u64,
) -> Result<CalibrationSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut calib = CalibrationSet::default();
    for name in &g.inputs {
        let spec = &g.tensors[name];
        if spec.dtype != DType::Int32 {
            let v = (0..spec.elements()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            calib.inputs.insert(name.clone(), v);
        }
    }
    for op in g.ops.iter().filter(|op| op.kind == OpKind::SLS) {
        let rows = g.tensors[&op.inputs[0]].shape[0] as i64;
        let batch = g.tensors[&op.inputs[2]].shape[0];
        let max = op.attrs.max_lookups.unwrap_or(1) as i64;
        let hi = ((2.0 * sls_lookups(op)).round() as i64 - 1).clamp(1, max);
        let lengths: Vec<i64> = (0..batch).map(|_| rng.gen_range(1..=hi)).collect();
        let n: i64 = lengths.iter().sum();
        let indices = (0..n).map(|_| rng.gen_range(0..rows)).collect();
        calib.indices.insert(op.inputs[1].clone(), indices);
        calib.indices.insert(op.inputs[2].clone(), lengths);
    }
    let model = ProxyModel {
        graph: g.clone(),
        weights: weights.clone(),
        calib,
    };
    let out = model.run_output(&Precisions::new(), &ParamsMap::new())?;
    let width = g
        .outputs
        .first()
        .and_then(|t| g.tensors.get(t))
        .and_then(|s| s.shape.last().copied())
        .unwrap_or(1);
    let mut labels: Vec<u8> = out
        .chunks(width)
        .map(|row| {
            let p = 1.0 / (1.0 + (-f64::from(row[0])).exp());
            u8::from(rng.gen_bool(p.clamp(0.0, 1.0)))
        })
        .collect();
    if labels.iter().all(|&y| y == labels[0]) {
        labels[0] ^= 1;
    }
    let mut calib = model.calib;
    calib.labels = labels;
    Ok(calib)
}

/// A graph with synthesized weights and calibration data.
pub fn proxy_model(g: &ComputeGraph, seed: u64) -> Result<ProxyModel> {
    let weights = synth_weights(g, seed)?;
    let calib = synth_calibration(g, &weights, seed.wrapping_add(1))?;
    Ok(ProxyModel {
        graph: g.clone(),
        weights,
        calib,
    })
}

/// Parallel FC branches over one input, concatenated into a single-logit head.
/// Each branch is a chain of FCs with the given widths.
fn branch_graph(batch: usize, input: usize, branches: &[Vec<usize>]) -> Result<ComputeGraph> {
    let mut g = ComputeGraph::new();
    g.add_input(TensorSpec::new("x", vec![batch, input], DType::Fp32));
    let mut ends = Vec::new();
    let mut cat_width = 0;
    for (b, widths) in branches.iter().enumerate() {
        let (mut x, mut k) = ("x".to_string(), input);
        for (l, &n) in widths.iter().enumerate() {
            let id = format!("b{b}fc{l}");
            g.add_weight(TensorSpec::new(format!("{id}.w"), vec![k, n], DType::Fp32));
            g.add_op(
                OpNode::new(&id, OpKind::FC, vec![x, format!("{id}.w")], vec![format!("{id}.y")]).with_attrs(OpAttrs {
                    in_features: Some(k),
                    out_features: Some(n),
                    ..Default::default()
                }),
            );
            x = format!("{id}.y");
            k = n;
        }
        ends.push(x);
        cat_width += k;
    }
    g.add_op(
        OpNode::new("concat", OpKind::Concat, ends, vec!["concat.y".into()]).with_attrs(OpAttrs {
            axis: Some(1),
            ..Default::default()
        }),
    );
    g.add_weight(TensorSpec::new("head.w", vec![cat_width, 1], DType::Fp32));
    g.add_op(OpNode::new("head", OpKind::FC, vec!["concat.y".into(), "head.w".into()], vec!["logit".into()]));
    g.outputs.push("logit".into());
    Ok(infer_shapes(&g)?)
}

/// Rescales the head so fp32 logits have standard deviation `target`.
fn normalize_head(model: &mut ProxyModel, target: f32) -> Result<()> {
    let out = model.run_output(&Precisions::new(), &ParamsMap::new())?;
    let n = out.len() as f32;
    let mean = out.iter().sum::<f32>() / n;
    let sd = (out.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n).sqrt();
    if sd > 0.0 {
        let k = target / sd;
        model.weights.get_mut("head.w").into_iter().flatten().for_each(|w| *w *= k);
    }
    Ok(())
}

/// Replaces one entry per output channel with `±magnitude` (scaled like the
/// rest of the matrix), leaving the others small.
fn inject_outliers(w: &mut [f32], k: usize, n: usize, magnitude: f32, rng: &mut ChaCha8Rng) {
    let scale = 1.0 / (k as f32).sqrt();
    for col in 0..n {
        let row = rng.gen_range(0..k);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        w[row * n + col] = sign * magnitude * scale;
    }
}

fn finish(g: ComputeGraph, seed: u64, outliers: &[(String, usize, usize)]) -> Result<ProxyModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut weights = synth_weights(&g, seed)?;
    for (w, k, n) in outliers {
        let values = weights.get_mut(w).ok_or_else(|| QuantError::MissingWeight(w.clone()))?;
        inject_outliers(values, *k, *n, 100.0, &mut rng);
    }
    let mut model = ProxyModel {
        graph: g,
        weights,
        calib: CalibrationSet::default(),
    };
    // provisional calibration to measure the logit scale
    model.calib = synth_calibration(&model.graph, &model.weights, seed.wrapping_add(1))?;
    normalize_head(&mut model, 2.0)?;
    model.calib = synth_calibration(&model.graph, &model.weights, seed.wrapping_add(1))?;
    Ok(model)
}

/// Four parallel 32-wide FC branches and a logit head. One branch's weights
/// are mostly in `±1` (scaled by fan-in) with one `±100` outlier per output
/// channel, so its int8 error dominates. Returns the model and that op's id.
pub fn outlier_fc_model(seed: u64) -> Result<(ProxyModel, String)> {
    let g = branch_graph(512, 32, &vec![vec![32]; 4])?;
    let outlier = 2;
    let model = finish(g, seed, &[(format!("b{outlier}fc0.w"), 32, 32)])?;
    Ok((model, format!("b{outlier}fc0")))
}

/// A random branch model: 1 to 4 branches of 1 to 3 FCs with widths in
/// `[4, 32]`; each weight matrix carries outliers with probability 1/4.
pub fn random_fc_model(seed: u64) -> Result<ProxyModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.gen_range(4..=32);
    let branches: Vec<Vec<usize>> = (0..rng.gen_range(1..=4))
        .map(|_| (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(4..=32)).collect())
        .collect();
    let g = branch_graph(128, input, &branches)?;
    let mut outliers = Vec::new();
    for (b, widths) in branches.iter().enumerate() {
        let mut k = input;
        for (l, &n) in widths.iter().enumerate() {
            if rng.gen_bool(0.25) {
                outliers.push((format!("b{b}fc{l}.w"), k, n));
            }
            k = n;
        }
    }
    finish(g, seed, &outliers)
}

/// 1 to 5 two-layer branches whose outputs are concatenated as the model
/// output, with no mixing head. Each branch has exactly one int8
/// candidate and owns disjoint output columns, so quantization error is the
/// only noise source and promotions never interact.
pub fn random_concat_model(seed: u64) -> Result<ProxyModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.gen_range(4..=32);
    let branches: Vec<Vec<usize>> = (0..rng.gen_range(1..=5))
        .map(|_| vec![rng.gen_range(4..=32), rng.gen_range(2..=8)])
        .collect();
    let mut g = branch_graph(128, input, &branches)?;
    g.ops.retain(|op| op.id != "head");
    g.weights.remove("head.w");
    g.tensors.remove("head.w");
    g.tensors.remove("logit");
    g.outputs = vec!["concat.y".into()];
    let mut weights = synth_weights(&g, seed)?;
    let mut orng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (b, widths) in branches.iter().enumerate() {
        if orng.gen_bool(0.25) {
            let w = weights.get_mut(&format!("b{b}fc0.w")).expect("branch weight");
            inject_outliers(w, input, widths[0], 100.0, &mut orng);
        }
    }
    let mut calib = CalibrationSet::default();
    let mut crng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    calib.inputs.insert(
        "x".into(),
        (0..128 * input).map(|_| crng.sample::<f32, _>(StandardNormal)).collect(),
    );
    Ok(ProxyModel { graph: g, weights, calib })
}
