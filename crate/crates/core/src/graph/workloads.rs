//! Synthetic workload generators.
//!
//! Each preset is a concrete architecture whose parameter count, flops and
//! arithmetic intensity land near the published totals of the model family it
//! stands in for. Generators emit fp32 graphs with every tensor shape already
//! resolved; deployment precisions are applied by the quantizer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::shape::{output_dtype, output_shape};
use super::{
    ComputeGraph, DType, GraphError, OpAttrs, OpKind, OpNode, Result, TensorSpec, Variability,
};

/// Relative tolerance between a preset's generated totals and its targets.
pub const PRESET_TOLERANCE: f64 = 0.20;

/// Compiled sequence lengths of the NLP preset.
pub const XLMR_BOUNDARIES: [usize; 4] = [32, 64, 128, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    RecsysLessComplex,
    RecsysMoreComplex,
    Resnext101,
    Regnety,
    Fbnetv3,
    Resnext3d,
    Xlmr,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::RecsysLessComplex,
        Preset::RecsysMoreComplex,
        Preset::Resnext101,
        Preset::Regnety,
        Preset::Fbnetv3,
        Preset::Resnext3d,
        Preset::Xlmr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::RecsysLessComplex => "recsys_less_complex",
            Preset::RecsysMoreComplex => "recsys_more_complex",
            Preset::Resnext101 => "resnext101",
            Preset::Regnety => "regnety",
            Preset::Fbnetv3 => "fbnetv3",
            Preset::Resnext3d => "resnext3d",
            Preset::Xlmr => "xlmr",
        }
    }

    pub fn is_recsys(self) -> bool {
        matches!(self, Preset::RecsysLessComplex | Preset::RecsysMoreComplex)
    }

    pub fn family(self) -> Family {
        match self {
            Preset::RecsysLessComplex | Preset::RecsysMoreComplex => Family::Recsys,
            Preset::Resnext101 | Preset::Regnety | Preset::Fbnetv3 => Family::Vision,
            Preset::Resnext3d => Family::Video,
            Preset::Xlmr => Family::Language,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| GraphError::UnknownPreset(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Recsys,
    Vision,
    Video,
    Language,
}

/// Published totals a preset is generated to match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTargets {
    pub model_mparams: f64,
    pub gflops_per_batch: f64,
    /// `None` when the intensity is a function of the input (tokens).
    pub arithmetic_intensity: Option<f64>,
    pub latency_constraint_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub preset: Preset,
    pub batch_size: usize,
    /// Compiled tokens per sentence (NLP only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    pub targets: WorkloadTargets,
}

impl WorkloadSpec {
    /// The preset at its typical batch size with its published targets.
    pub fn preset(preset: Preset) -> Self {
        let t = |model_mparams, gflops_per_batch, ai: Option<f64>, latency_constraint_ms| WorkloadTargets {
            model_mparams,
            gflops_per_batch,
            arithmetic_intensity: ai,
            latency_constraint_ms,
        };
        let (batch_size, seq_len, targets) = match preset {
            Preset::RecsysLessComplex => (64, None, t(70_000.0, 0.02, Some(90.0), 100.0)),
            Preset::RecsysMoreComplex => (64, None, t(100_000.0, 0.1, Some(80.0), 100.0)),
            Preset::Resnext101 => (1, None, t(44.0, 15.6, Some(355.0), 1000.0)),
            Preset::Regnety => (1, None, t(700.0, 256.0, Some(395.0), 1000.0)),
            Preset::Fbnetv3 => (1, None, t(28.6, 72.0, Some(1946.0), 300.0)),
            Preset::Resnext3d => (1, None, t(58.0, 3.4, Some(362.0), 350.0)),
            Preset::Xlmr => (1, Some(32), t(558.0, 20.0, None, 200.0)),
        };
        Self {
            preset,
            batch_size,
            seq_len,
            targets,
        }
    }

    pub fn with_batch(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_seq_len(mut self, seq_len: usize) -> Self {
        self.seq_len = Some(seq_len);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// Pairwise dot products of all feature vectors (a BatchMatMul).
    Dot,
    /// Feature vectors are concatenated and fed to the top MLP as is.
    Cat,
}

/// Explicit DLRM architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlrmStructure {
    /// Width of the dense-feature input; 0 drops the dense branch.
    pub dense_features: usize,
    /// Output widths of the bottom MLP layers.
    pub bottom_mlp: Vec<usize>,
    pub num_tables: usize,
    pub rows_per_table: Vec<usize>,
    pub embedding_dim: usize,
    /// Per-table expected lookups per item; empty means unannotated.
    pub avg_lookups: Vec<f64>,
    pub max_lookups: usize,
    /// Request-level embeddings computed on the host and broadcast to every
    /// item of the batch.
    pub broadcast_tables: usize,
    pub top_mlp: Vec<usize>,
    pub interaction: Interaction,
}

impl DlrmStructure {
    /// `num_tables` tables of `rows` x `dim`, no dense branch, one lookup per
    /// item.
    pub fn tables_only(num_tables: usize, rows: usize, dim: usize, top_mlp: Vec<usize>) -> Self {
        Self {
            dense_features: 0,
            bottom_mlp: Vec::new(),
            num_tables,
            rows_per_table: vec![rows; num_tables],
            embedding_dim: dim,
            avg_lookups: Vec::new(),
            max_lookups: 1,
            broadcast_tables: 0,
            top_mlp,
            interaction: Interaction::Dot,
        }
    }

    pub fn for_preset(preset: Preset) -> Option<Self> {
        // Lookup counts vary over a fixed 5-step ramp whose mean is `base`.
        let ramp = |n: usize, base: f64| -> Vec<f64> {
            (0..n).map(|t| base * (0.5 + 0.25 * (t % 5) as f64)).collect()
        };
        match preset {
            Preset::RecsysLessComplex => Some(Self {
                dense_features: 64,
                bottom_mlp: vec![32],
                num_tables: 16,
                rows_per_table: vec![136_718_750; 16],
                embedding_dim: 32,
                avg_lookups: ramp(16, 10.0),
                max_lookups: 40,
                broadcast_tables: 4,
                top_mlp: vec![256, 64, 1],
                interaction: Interaction::Dot,
            }),
            Preset::RecsysMoreComplex => Some(Self {
                dense_features: 512,
                bottom_mlp: vec![256, 64],
                num_tables: 48,
                rows_per_table: vec![35_807_292; 48],
                embedding_dim: 64,
                avg_lookups: ramp(48, 2.0),
                max_lookups: 8,
                broadcast_tables: 8,
                top_mlp: vec![128, 1],
                interaction: Interaction::Dot,
            }),
            _ => None,
        }
    }
}

/// Appends ops with their output specs resolved on the spot.
struct Builder {
    g: ComputeGraph,
}

impl Builder {
    fn new() -> Self {
        Self { g: ComputeGraph::new() }
    }

    fn input(&mut self, name: &str, shape: Vec<usize>, dtype: DType) -> String {
        self.g.add_input(TensorSpec::new(name, shape, dtype))
    }

    fn weight(&mut self, name: &str, shape: Vec<usize>) -> String {
        self.g.add_weight(TensorSpec::new(name, shape, DType::Fp32))
    }

    fn op(&mut self, id: &str, kind: OpKind, inputs: Vec<String>, attrs: OpAttrs) -> Result<String> {
        let out = format!("{id}.y");
        let op = OpNode::new(id, kind, inputs, vec![out.clone()]).with_attrs(attrs);
        let shape = output_shape(&self.g, &op)?;
        let dtype = output_dtype(&self.g, &op);
        self.g.tensors.insert(out.clone(), TensorSpec::new(out.clone(), shape, dtype));
        self.g.add_op(op);
        Ok(out)
    }

    fn shape(&self, t: &str) -> Vec<usize> {
        self.g.tensors[t].shape.clone()
    }

    fn fc(&mut self, id: &str, x: &str, n: usize) -> Result<String> {
        let k = *self.shape(x).last().unwrap_or(&0);
        let w = self.weight(&format!("{id}.w"), vec![k, n]);
        self.op(
            id,
            OpKind::FC,
            vec![x.to_string(), w],
            OpAttrs {
                in_features: Some(k),
                out_features: Some(n),
                ..Default::default()
            },
        )
    }

    fn mlp(&mut self, prefix: &str, mut x: String, widths: &[usize]) -> Result<String> {
        for (i, &n) in widths.iter().enumerate() {
            x = self.fc(&format!("{prefix}{i}"), &x, n)?;
        }
        Ok(x)
    }

    fn conv(&mut self, id: &str, x: &str, cout: usize, kernel: &[usize], stride: usize, groups: usize) -> Result<String> {
        let cin = self.shape(x)[1];
        let kind = if kernel.len() == 3 { OpKind::Conv3D } else { OpKind::Conv };
        let mut wshape = vec![cout, cin / groups];
        wshape.extend_from_slice(kernel);
        let w = self.weight(&format!("{id}.w"), wshape);
        self.op(
            id,
            kind,
            vec![x.to_string(), w],
            OpAttrs {
                kernel: Some(kernel.to_vec()),
                stride: Some(stride),
                groups: Some(groups),
                ..Default::default()
            },
        )
    }

    fn finish(mut self, output: String) -> ComputeGraph {
        self.g.outputs.push(output);
        self.g
    }
}

/// Builds a DLRM-style graph: per-table SLS, bottom and top MLPs, and an
/// interaction over the concatenated feature vectors.
pub fn gen_dlrm(spec: &WorkloadSpec, s: &DlrmStructure) -> Result<ComputeGraph> {
    let inconsistent = |m: String| Err(GraphError::InconsistentStructure(m));
    let b = spec.batch_size;
    if b == 0 {
        return inconsistent("batch size must be positive".into());
    }
    if s.rows_per_table.len() != s.num_tables {
        return inconsistent(format!(
            "{} row counts for {} tables",
            s.rows_per_table.len(),
            s.num_tables
        ));
    }
    if !s.avg_lookups.is_empty() && s.avg_lookups.len() != s.num_tables {
        return inconsistent(format!(
            "{} lookup annotations for {} tables",
            s.avg_lookups.len(),
            s.num_tables
        ));
    }
    let sparse_features = s.num_tables + s.broadcast_tables;
    if sparse_features > 0 && (s.embedding_dim == 0 || s.max_lookups == 0) {
        return inconsistent("embedding_dim and max_lookups must be positive".into());
    }
    if s.dense_features == 0 && !s.bottom_mlp.is_empty() {
        return inconsistent("bottom MLP without dense features".into());
    }

    let mut bld = Builder::new();
    let mut features = Vec::new();
    if s.dense_features > 0 {
        let x = bld.input("dense", vec![b, s.dense_features], DType::Fp32);
        let out = bld.mlp("bot", x, &s.bottom_mlp)?;
        let width = bld.shape(&out)[1];
        if sparse_features > 0 && s.interaction == Interaction::Dot && width != s.embedding_dim {
            return inconsistent(format!(
                "dense branch width {width} does not match embedding_dim {}",
                s.embedding_dim
            ));
        }
        features.push(out);
    }

    for t in 0..s.num_tables {
        let table = bld.weight(&format!("emb{t}"), vec![s.rows_per_table[t], s.embedding_dim]);
        let mut idx = TensorSpec::new(format!("emb{t}.idx"), vec![b * s.max_lookups], DType::Int32);
        idx.variability = Variability::Variable {
            max_extent: vec![b * s.max_lookups],
        };
        let idx = bld.g.add_input(idx);
        let len = bld.input(&format!("emb{t}.len"), vec![b], DType::Int32);
        let pooled = bld.op(
            &format!("sls{t}"),
            OpKind::SLS,
            vec![table.clone(), idx, len],
            OpAttrs {
                table: Some(table),
                avg_lookups: s.avg_lookups.get(t).copied(),
                max_lookups: Some(s.max_lookups),
                ..Default::default()
            },
        )?;
        features.push(pooled);
    }

    for j in 0..s.broadcast_tables {
        let u = bld.input(&format!("user{j}"), vec![1, s.embedding_dim], DType::Fp32);
        let tiled = bld.op(
            &format!("tile{j}"),
            OpKind::Tile,
            vec![u],
            OpAttrs {
                axis: Some(0),
                reps: Some(b),
                ..Default::default()
            },
        )?;
        features.push(tiled);
    }

    if features.is_empty() {
        return inconsistent("model has neither dense features nor tables".into());
    }

    let top_in = if sparse_features == 0 {
        features.pop().expect("dense branch present")
    } else {
        let f = features.len();
        let cat = bld.op(
            "concat",
            OpKind::Concat,
            features,
            OpAttrs {
                axis: Some(1),
                ..Default::default()
            },
        )?;
        match s.interaction {
            Interaction::Dot => bld.op(
                "interact",
                OpKind::BatchMatMul,
                vec![cat],
                OpAttrs {
                    interaction: Some(f),
                    ..Default::default()
                },
            )?,
            Interaction::Cat => cat,
        }
    };
    let out = bld.mlp("top", top_in, &s.top_mlp)?;
    Ok(bld.finish(out))
}

/// One bottleneck stage: `blocks` residual blocks of 1x1 -> grouped 3x3 ->
/// 1x1 convolutions, the first block striding and projecting the shortcut.
#[derive(Debug, Clone, Copy)]
struct Stage {
    blocks: usize,
    width: usize,
    out: usize,
    groups: usize,
    stride: usize,
}

const fn stage(blocks: usize, width: usize, out: usize, groups: usize, stride: usize) -> Stage {
    Stage {
        blocks,
        width,
        out,
        groups,
        stride,
    }
}

struct Trunk {
    stem_out: usize,
    stem_pool: bool,
    stages: Vec<Stage>,
    /// Temporal extent for video trunks.
    frames: Option<usize>,
}

impl Trunk {
    fn build(&self, bld: &mut Builder, mut x: String) -> Result<String> {
        let video = self.frames.is_some();
        let k = |s: usize| match (video, s) {
            (true, 1) => vec![1, 1, 1],
            (true, _) => vec![3, s, s],
            (false, _) => vec![s, s],
        };
        x = bld.conv("stem", &x, self.stem_out, &k(7), 2, 1)?;
        if self.stem_pool {
            x = bld.op(
                "stem_pool",
                OpKind::Pool,
                vec![x],
                OpAttrs {
                    stride: Some(2),
                    kernel: Some(vec![3, 3]),
                    ..Default::default()
                },
            )?;
        }
        for (si, st) in self.stages.iter().enumerate() {
            for bi in 0..st.blocks {
                let id = format!("s{si}b{bi}");
                let stride = if bi == 0 { st.stride } else { 1 };
                let a = bld.conv(&format!("{id}.a"), &x, st.width, &k(1), 1, 1)?;
                let bb = bld.conv(&format!("{id}.b"), &a, st.width, &k(3), stride, st.groups)?;
                let c = bld.conv(&format!("{id}.c"), &bb, st.out, &k(1), 1, 1)?;
                let shortcut = if bi == 0 {
                    bld.conv(&format!("{id}.proj"), &x, st.out, &k(1), stride, 1)?
                } else {
                    x.clone()
                };
                x = bld.op(&format!("{id}.add"), OpKind::Add, vec![c, shortcut], OpAttrs::default())?;
            }
        }
        Ok(x)
    }
}

fn classifier(bld: &mut Builder, x: String, classes: usize) -> Result<String> {
    let pooled = bld.op("gap", OpKind::Pool, vec![x], OpAttrs::default())?;
    bld.fc("head", &pooled, classes)
}

fn resnext101(b: usize) -> Result<ComputeGraph> {
    let mut bld = Builder::new();
    let x = bld.input("image", vec![b, 3, 224, 224], DType::Fp32);
    let trunk = Trunk {
        stem_out: 64,
        stem_pool: true,
        stages: vec![
            stage(3, 128, 256, 32, 1),
            stage(4, 256, 512, 32, 2),
            stage(23, 512, 1024, 32, 2),
            stage(3, 1024, 2048, 32, 2),
        ],
        frames: None,
    };
    let y = trunk.build(&mut bld, x)?;
    let out = classifier(&mut bld, y, 1000)?;
    Ok(bld.finish(out))
}

fn regnety(b: usize) -> Result<ComputeGraph> {
    // group width 276 throughout
    let mut bld = Builder::new();
    let x = bld.input("image", vec![b, 3, 224, 224], DType::Fp32);
    let trunk = Trunk {
        stem_out: 32,
        stem_pool: false,
        stages: vec![
            stage(2, 552, 552, 2, 2),
            stage(7, 1104, 1104, 4, 2),
            stage(17, 3036, 3036, 11, 2),
            stage(1, 7728, 7728, 28, 2),
        ],
        frames: None,
    };
    let y = trunk.build(&mut bld, x)?;
    let out = classifier(&mut bld, y, 1000)?;
    Ok(bld.finish(out))
}

fn fbnetv3(b: usize) -> Result<ComputeGraph> {
    const ROIS_PER_IMAGE: usize = 100;
    const POOLED: usize = 3;
    let mut bld = Builder::new();
    let x = bld.input("image", vec![b, 3, 864, 864], DType::Fp32);
    let trunk = Trunk {
        stem_out: 32,
        stem_pool: true,
        stages: vec![
            stage(2, 128, 128, 8, 1),
            stage(3, 256, 256, 8, 2),
            stage(6, 512, 512, 8, 2),
            stage(3, 1024, 1024, 8, 2),
        ],
        frames: None,
    };
    let fmap = trunk.build(&mut bld, x)?;
    let c = bld.shape(&fmap)[1];
    let rois = ROIS_PER_IMAGE * b;
    let width = c * POOLED * POOLED;
    // Region-proposal tail: bilinear sampling of every proposal, host only.
    let sampled = bld.op(
        "roi_align",
        OpKind::RoiAlignLike,
        vec![fmap],
        OpAttrs {
            out_shape: Some(vec![rois, width]),
            flops: Some((rois * width * 4 * 4) as u64),
            ..Default::default()
        },
    )?;
    let h = bld.mlp("box", sampled, &[1024, 1024])?;
    let out = bld.fc("box_pred", &h, 91 * 5)?;
    Ok(bld.finish(out))
}

fn resnext3d(b: usize) -> Result<ComputeGraph> {
    const FRAMES: usize = 4;
    const RES: usize = 40;
    const ENCODED_BYTES_PER_CLIP: usize = 96 * 1024;
    let mut bld = Builder::new();
    let stream = bld.input("video", vec![b, ENCODED_BYTES_PER_CLIP], DType::Int8);
    let frames = bld.op(
        "decode",
        OpKind::HostDecode,
        vec![stream],
        OpAttrs {
            out_shape: Some(vec![b, 3, FRAMES, RES, RES]),
            out_dtype: Some(DType::Fp32),
            flops: Some((b * 3 * FRAMES * RES * RES * 50) as u64),
            ..Default::default()
        },
    )?;
    let trunk = Trunk {
        stem_out: 64,
        stem_pool: true,
        stages: vec![
            stage(3, 256, 256, 32, 1),
            stage(4, 512, 512, 32, 2),
            stage(6, 1024, 1024, 32, 2),
            stage(3, 2048, 2048, 32, 2),
        ],
        frames: Some(FRAMES),
    };
    let y = trunk.build(&mut bld, frames)?;
    let out = classifier(&mut bld, y, 400)?;
    Ok(bld.finish(out))
}

/// Encoder-only transformer dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerStructure {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub vocab: usize,
}

impl TransformerStructure {
    pub const XLMR: Self = Self {
        layers: 24,
        hidden: 1024,
        heads: 16,
        vocab: 250_002,
    };
}

fn xlmr(b: usize, t: usize) -> Result<ComputeGraph> {
    gen_transformer(&TransformerStructure::XLMR, b, t)
}

/// Token embedding lookup followed by `layers` post-norm encoder blocks over
/// `b` sequences of `t` tokens.
pub fn gen_transformer(s: &TransformerStructure, b: usize, t: usize) -> Result<ComputeGraph> {
    let (hidden, heads, layers, vocab) = (s.hidden, s.heads, s.layers, s.vocab);
    if b == 0 || t == 0 || heads == 0 || hidden % heads != 0 || layers == 0 {
        return Err(GraphError::InconsistentStructure(format!(
            "transformer with hidden {hidden}, {heads} heads, {layers} layers at batch {b}, length {t}"
        )));
    }
    let dh = hidden / heads;
    let rows = b * t;
    let mut bld = Builder::new();
    let table = bld.weight("embed", vec![vocab, hidden]);
    let mut idx = TensorSpec::new("tokens.idx", vec![rows], DType::Int32);
    idx.variability = Variability::Variable { max_extent: vec![rows] };
    let idx = bld.g.add_input(idx);
    let len = bld.input("tokens.len", vec![rows], DType::Int32);
    let mut x = bld.op(
        "embed_lookup",
        OpKind::SLS,
        vec![table.clone(), idx, len],
        OpAttrs {
            table: Some(table),
            avg_lookups: Some(1.0),
            max_lookups: Some(1),
            ..Default::default()
        },
    )?;
    let layout = |shape: Vec<usize>| OpAttrs {
        out_shape: Some(shape),
        ..Default::default()
    };
    for l in 0..layers {
        let p = format!("l{l}.");
        let proj = |bld: &mut Builder, name: &str, x: &str, n: usize| -> Result<String> {
            let w = bld.weight(&format!("{p}{name}.w"), vec![hidden, n]);
            bld.op(&format!("{p}{name}"), OpKind::MatMul, vec![x.to_string(), w], OpAttrs::default())
        };
        let q = proj(&mut bld, "q", &x, hidden)?;
        let k = proj(&mut bld, "k", &x, hidden)?;
        let v = proj(&mut bld, "v", &x, hidden)?;
        let q = bld.op(&format!("{p}q_heads"), OpKind::Transpose, vec![q], layout(vec![b * heads, t, dh]))?;
        let k = bld.op(&format!("{p}k_heads"), OpKind::Transpose, vec![k], layout(vec![b * heads, dh, t]))?;
        let v = bld.op(&format!("{p}v_heads"), OpKind::Transpose, vec![v], layout(vec![b * heads, t, dh]))?;
        let s = bld.op(&format!("{p}scores"), OpKind::BatchMatMul, vec![q, k], OpAttrs::default())?;
        let s = bld.op(&format!("{p}softmax"), OpKind::Softmax, vec![s], OpAttrs::default())?;
        let ctx = bld.op(&format!("{p}context"), OpKind::BatchMatMul, vec![s, v], OpAttrs::default())?;
        let ctx = bld.op(&format!("{p}merge"), OpKind::Transpose, vec![ctx], layout(vec![rows, hidden]))?;
        let o = proj(&mut bld, "out", &ctx, hidden)?;
        let r = bld.op(&format!("{p}res1"), OpKind::Add, vec![o, x.clone()], OpAttrs::default())?;
        let n1 = bld.op(&format!("{p}ln1"), OpKind::LayerNorm, vec![r], OpAttrs::default())?;
        let f = proj(&mut bld, "ff1", &n1, 4 * hidden)?;
        let f = bld.op(&format!("{p}gelu"), OpKind::Gelu, vec![f], OpAttrs::default())?;
        let w2 = bld.weight(&format!("{p}ff2.w"), vec![4 * hidden, hidden]);
        let f = bld.op(&format!("{p}ff2"), OpKind::MatMul, vec![f, w2], OpAttrs::default())?;
        let r = bld.op(&format!("{p}res2"), OpKind::Add, vec![f, n1], OpAttrs::default())?;
        x = bld.op(&format!("{p}ln2"), OpKind::LayerNorm, vec![r], OpAttrs::default())?;
    }
    Ok(bld.finish(x))
}

/// Generates a vision, video or language preset.
pub fn gen_dense_workload(spec: &WorkloadSpec) -> Result<ComputeGraph> {
    let b = spec.batch_size.max(1);
    match spec.preset {
        Preset::Resnext101 => resnext101(b),
        Preset::Regnety => regnety(b),
        Preset::Fbnetv3 => fbnetv3(b),
        Preset::Resnext3d => resnext3d(b),
        Preset::Xlmr => xlmr(b, spec.seq_len.unwrap_or(XLMR_BOUNDARIES[0])),
        p => Err(GraphError::UnknownPreset(format!("{p} is not a dense preset"))),
    }
}

/// Generates any preset with its built-in structure.
pub fn gen_preset(spec: &WorkloadSpec) -> Result<ComputeGraph> {
    match DlrmStructure::for_preset(spec.preset) {
        Some(s) => gen_dlrm(spec, &s),
        None => gen_dense_workload(spec),
    }
}

/// The NLP preset compiled once per padding boundary.
pub fn xlmr_boundary_graphs(batch_size: usize) -> Result<Vec<(usize, ComputeGraph)>> {
    XLMR_BOUNDARIES
        .iter()
        .map(|&t| {
            let spec = WorkloadSpec::preset(Preset::Xlmr).with_batch(batch_size).with_seq_len(t);
            gen_dense_workload(&spec).map(|g| (t, g))
        })
        .collect()
}
