//! Multi-graph GCN: normalized adjacency, layer ops, forward pass with a
//! cached trace, analytic gradients, and checkpoint I/O.
//!
//! A subject is a list of structure graphs. Each graph runs through three
//! graph-convolution layers with ReLU, is mean-pooled into one vector, and
//! the per-structure vectors are stacked and fed to a two-layer head. In
//! shared mode one weight set serves every structure; in non-shared mode
//! each structure owns a set.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FPFH_WIDTH;
use crate::mesh::Mesh;
use crate::rng::stream;
use crate::synthgen::SubjectSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubmodelMode {
    Shared,
    NonShared,
}

impl SubmodelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SubmodelMode::Shared => "shared",
            SubmodelMode::NonShared => "non-shared",
        }
    }
}

impl std::str::FromStr for SubmodelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(SubmodelMode::Shared),
            "non-shared" | "nonshared" => Ok(SubmodelMode::NonShared),
            other => Err(Error::Config(format!(
                "unknown submodel mode {other:?}; expected `shared` or `non-shared`"
            ))),
        }
    }
}

impl std::fmt::Display for SubmodelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_structures: usize,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_structures: 15,
            in_dim: FPFH_WIDTH,
            hidden_dim: 32,
            n_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn with_structures(n_structures: usize) -> Self {
        ModelConfig {
            n_structures,
            ..Default::default()
        }
    }

    /// Width of the stacked graph embedding (structures x hidden).
    pub fn embedding_dim(&self) -> usize {
        self.n_structures * self.hidden_dim
    }
}

/// Symmetrically normalized adjacency with self-loops,
/// `P = D^{-1/2} (A + I) D^{-1/2}`, stored as CSR with sorted columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    /// Build from an undirected edge list over `n` nodes. Self-loops are
    /// added to every node, including isolated ones.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(a, b) in edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        let degrees: Vec<f64> = adjacency.iter().map(|l| l.len() as f64).collect();

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (i, list) in adjacency.iter().enumerate() {
            for &j in list {
                col_idx.push(j);
                values.push(1.0 / (degrees[i] * degrees[j]).sqrt());
            }
            row_ptr.push(col_idx.len());
        }
        NormalizedAdjacency {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for (i, j, v) in self.entries() {
            out[(i, j)] = v;
        }
        out
    }

    /// Sparse-dense product `P * H`. Panics if `H` has the wrong row count.
    pub fn matmul(&self, h: &Array2<f64>) -> Array2<f64> {
        assert_eq!(h.nrows(), self.n, "adjacency/feature row mismatch");
        let mut out = Array2::zeros((self.n, h.ncols()));
        for i in 0..self.n {
            let mut row = out.row_mut(i);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row.scaled_add(self.values[k], &h.row(self.col_idx[k]));
            }
        }
        out
    }
}

/// Normalized adjacency of a mesh graph (undirected edges + self-loops).
pub fn normalized_adjacency(mesh: &Mesh) -> NormalizedAdjacency {
    NormalizedAdjacency::from_edges(mesh.n_vertices(), mesh.edges())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// One graph convolution: `activation(P * H * W)`.
pub fn gcn_layer(
    h: &Array2<f64>,
    p: &NormalizedAdjacency,
    w: &Array2<f64>,
    activation: Activation,
) -> Result<Array2<f64>> {
    if h.nrows() != p.n() {
        return Err(Error::Model(format!(
            "feature matrix has {} rows but adjacency has {} nodes",
            h.nrows(),
            p.n()
        )));
    }
    if h.ncols() != w.nrows() {
        return Err(Error::Model(format!(
            "feature width {} does not match weight input width {}",
            h.ncols(),
            w.nrows()
        )));
    }
    let mut out = p.matmul(&h.dot(w));
    if activation == Activation::Relu {
        out.mapv_inplace(|x| x.max(0.0));
    }
    Ok(out)
}

/// Column means of the node matrix (graph readout).
pub fn global_mean_pool(h: &Array2<f64>) -> Result<Array1<f64>> {
    if h.nrows() == 0 {
        return Err(Error::Model("cannot pool an empty node matrix".into()));
    }
    Ok(h.mean_axis(Axis(0)).expect("non-empty"))
}

/// Weights of one three-layer GCN stack (no bias terms).
#[derive(Debug, Clone, PartialEq)]
pub struct GcnWeights {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub w3: Array2<f64>,
}

impl GcnWeights {
    fn zeros(config: &ModelConfig) -> Self {
        GcnWeights {
            w1: Array2::zeros((config.in_dim, config.hidden_dim)),
            w2: Array2::zeros((config.hidden_dim, config.hidden_dim)),
            w3: Array2::zeros((config.hidden_dim, config.hidden_dim)),
        }
    }

    fn count(&self) -> usize {
        self.w1.len() + self.w2.len() + self.w3.len()
    }
}

/// All learnable weights. Shared mode keeps one GCN stack; non-shared keeps
/// one per structure. The same layout doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub mode: SubmodelMode,
    pub gcn: Vec<GcnWeights>,
    pub w_fc1: Array2<f64>,
    pub b_fc1: Array1<f64>,
    pub w_fc2: Array2<f64>,
    pub b_fc2: Array1<f64>,
}

impl ModelParams {
    /// Index of the GCN stack serving structure `s`.
    fn stack_index(&self, s: usize) -> usize {
        match self.mode {
            SubmodelMode::Shared => 0,
            SubmodelMode::NonShared => s,
        }
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            config: self.config,
            mode: self.mode,
            gcn: self.gcn.iter().map(|_| GcnWeights::zeros(&self.config)).collect(),
            w_fc1: Array2::zeros(self.w_fc1.raw_dim()),
            b_fc1: Array1::zeros(self.b_fc1.raw_dim()),
            w_fc2: Array2::zeros(self.w_fc2.raw_dim()),
            b_fc2: Array1::zeros(self.b_fc2.raw_dim()),
        }
    }

    pub fn param_iter(&self) -> impl Iterator<Item = &f64> {
        self.gcn
            .iter()
            .flat_map(|g| g.w1.iter().chain(g.w2.iter()).chain(g.w3.iter()))
            .chain(self.w_fc1.iter())
            .chain(self.b_fc1.iter())
            .chain(self.w_fc2.iter())
            .chain(self.b_fc2.iter())
    }

    pub fn param_iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.gcn
            .iter_mut()
            .flat_map(|g| g.w1.iter_mut().chain(g.w2.iter_mut()).chain(g.w3.iter_mut()))
            .chain(self.w_fc1.iter_mut())
            .chain(self.b_fc1.iter_mut())
            .chain(self.w_fc2.iter_mut())
            .chain(self.b_fc2.iter_mut())
    }

    /// `self += c * other`, used for fixed-order gradient reductions.
    pub fn add_scaled(&mut self, other: &ModelParams, c: f64) {
        for (a, b) in self.param_iter_mut().zip(other.param_iter()) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in self.param_iter_mut() {
            *a *= c;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.param_iter().all(|x| x.is_finite())
    }

    pub fn gcn_parameter_count(&self) -> usize {
        self.gcn.iter().map(GcnWeights::count).sum()
    }

    pub fn head_parameter_count(&self) -> usize {
        self.w_fc1.len() + self.b_fc1.len() + self.w_fc2.len() + self.b_fc2.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.gcn_parameter_count() + self.head_parameter_count()
    }
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data")
}

/// Glorot-uniform weights, zero biases; fully determined by the seed.
pub fn init_params(config: &ModelConfig, mode: SubmodelMode, seed: u64) -> ModelParams {
    let mut rng = stream(seed, "init");
    let n_stacks = match mode {
        SubmodelMode::Shared => 1,
        SubmodelMode::NonShared => config.n_structures,
    };
    let gcn = (0..n_stacks)
        .map(|_| GcnWeights {
            w1: glorot(&mut rng, config.in_dim, config.hidden_dim),
            w2: glorot(&mut rng, config.hidden_dim, config.hidden_dim),
            w3: glorot(&mut rng, config.hidden_dim, config.hidden_dim),
        })
        .collect();
    ModelParams {
        config: *config,
        mode,
        gcn,
        w_fc1: glorot(&mut rng, config.embedding_dim(), config.hidden_dim),
        b_fc1: Array1::zeros(config.hidden_dim),
        w_fc2: glorot(&mut rng, config.hidden_dim, config.n_classes),
        b_fc2: Array1::zeros(config.n_classes),
    }
}

/// Per-structure activations cached by the forward pass.
#[derive(Debug, Clone)]
pub struct StructureTrace {
    pub h0: Array2<f64>,
    pub a1: Array2<f64>,
    pub z1: Array2<f64>,
    pub a2: Array2<f64>,
    pub z2: Array2<f64>,
    pub a3: Array2<f64>,
    pub z3: Array2<f64>,
    pub pooled: Array1<f64>,
}

/// Everything the backward pass and the inspection stage need: pooled
/// per-structure embeddings, their in-order concatenation, head activations,
/// and logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub structures: Vec<StructureTrace>,
    pub gcn_embedding: Array1<f64>,
    pub fc1_pre: Array1<f64>,
    pub fc1_act: Array1<f64>,
    pub logits: Array1<f64>,
}

fn relu(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|x| x.max(0.0))
}

/// Forward pass over pre-built structure graphs (adjacency + node features,
/// one pair per structure, in structure order).
pub fn forward_graphs(
    adjacencies: &[NormalizedAdjacency],
    features: &[Array2<f64>],
    params: &ModelParams,
) -> Result<ForwardTrace> {
    let cfg = &params.config;
    if adjacencies.len() != cfg.n_structures || features.len() != cfg.n_structures {
        return Err(Error::Model(format!(
            "expected {} structures, got {} adjacencies / {} feature matrices",
            cfg.n_structures,
            adjacencies.len(),
            features.len()
        )));
    }

    let mut structures = Vec::with_capacity(cfg.n_structures);
    let mut gcn_embedding = Array1::zeros(cfg.embedding_dim());
    for (s, (p, h0)) in adjacencies.iter().zip(features).enumerate() {
        if h0.ncols() != cfg.in_dim {
            return Err(Error::Model(format!(
                "structure {s}: feature width {} does not match model input width {}",
                h0.ncols(),
                cfg.in_dim
            )));
        }
        if h0.nrows() != p.n() {
            return Err(Error::Model(format!(
                "structure {s}: {} feature rows vs {} graph nodes",
                h0.nrows(),
                p.n()
            )));
        }
        let w = &params.gcn[params.stack_index(s)];
        let a1 = p.matmul(&h0.dot(&w.w1));
        let z1 = relu(&a1);
        let a2 = p.matmul(&z1.dot(&w.w2));
        let z2 = relu(&a2);
        let a3 = p.matmul(&z2.dot(&w.w3));
        let z3 = relu(&a3);
        let pooled = global_mean_pool(&z3)?;
        gcn_embedding
            .slice_mut(ndarray::s![s * cfg.hidden_dim..(s + 1) * cfg.hidden_dim])
            .assign(&pooled);
        structures.push(StructureTrace {
            h0: h0.clone(),
            a1,
            z1,
            a2,
            z2,
            a3,
            z3,
            pooled,
        });
    }

    let fc1_pre = gcn_embedding.dot(&params.w_fc1) + &params.b_fc1;
    let fc1_act = fc1_pre.mapv(|x| x.max(0.0));
    let logits = fc1_act.dot(&params.w_fc2) + &params.b_fc2;
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Model("non-finite logits in forward pass".into()));
    }

    Ok(ForwardTrace {
        structures,
        gcn_embedding,
        fc1_pre,
        fc1_act,
        logits,
    })
}

/// Forward a subject sample; requires node features to be present and
/// derives each structure's adjacency from its mesh.
pub fn forward(sample: &SubjectSample, params: &ModelParams) -> Result<ForwardTrace> {
    let features = sample.features.as_ref().ok_or_else(|| {
        Error::Model(format!("subject {} has no node features computed", sample.id))
    })?;
    let adjacencies: Vec<NormalizedAdjacency> =
        sample.meshes.iter().map(normalized_adjacency).collect();
    forward_graphs(&adjacencies, features, params)
}

/// Numerically stable softmax.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps = logits.mapv(|l| (l - max).exp());
    let sum = exps.sum();
    exps / sum
}

/// Cross-entropy of the true class, via the log-sum-exp form.
pub fn cross_entropy(logits: &Array1<f64>, label: u8) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label as usize]
}

fn relu_mask_inplace(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Cross-entropy loss and analytic gradients for one subject, by reverse
/// traversal of the forward trace. The returned gradient container mirrors
/// the parameter layout.
pub fn loss_and_gradients(
    trace: &ForwardTrace,
    label: u8,
    adjacencies: &[NormalizedAdjacency],
    params: &ModelParams,
) -> Result<(f64, ModelParams)> {
    let cfg = &params.config;
    if usize::from(label) >= cfg.n_classes {
        return Err(Error::Model(format!(
            "label {label} out of range for {} classes",
            cfg.n_classes
        )));
    }
    if adjacencies.len() != cfg.n_structures || trace.structures.len() != cfg.n_structures {
        return Err(Error::Model("trace/adjacency structure count mismatch".into()));
    }

    let loss = cross_entropy(&trace.logits, label);
    if !loss.is_finite() {
        return Err(Error::Model(format!("non-finite loss {loss}")));
    }

    let mut grads = params.zeros_like();

    // Head.
    let mut dlogits = softmax(&trace.logits);
    dlogits[label as usize] -= 1.0;
    grads.b_fc2.assign(&dlogits);
    grads.w_fc2 = trace
        .fc1_act
        .view()
        .insert_axis(Axis(1))
        .dot(&dlogits.view().insert_axis(Axis(0)));
    let dfc1_act = params.w_fc2.dot(&dlogits);
    let mut dfc1_pre = dfc1_act;
    for (g, &p) in dfc1_pre.iter_mut().zip(trace.fc1_pre.iter()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    grads.b_fc1.assign(&dfc1_pre);
    grads.w_fc1 = trace
        .gcn_embedding
        .view()
        .insert_axis(Axis(1))
        .dot(&dfc1_pre.view().insert_axis(Axis(0)));
    let dembedding = params.w_fc1.dot(&dfc1_pre);

    // Per-structure GCN stacks. P is symmetric, so P^T = P in the pullbacks.
    for (s, (st, p)) in trace.structures.iter().zip(adjacencies).enumerate() {
        let n = st.h0.nrows() as f64;
        let w = &params.gcn[params.stack_index(s)];
        let dpooled = dembedding.slice(ndarray::s![s * cfg.hidden_dim..(s + 1) * cfg.hidden_dim]);

        let mut dz3 = Array2::zeros(st.a3.raw_dim());
        for mut row in dz3.rows_mut() {
            row.assign(&(&dpooled / n));
        }
        let mut da3 = dz3;
        relu_mask_inplace(&mut da3, &st.a3);
        let dm3 = p.matmul(&da3);
        let dw3 = st.z2.t().dot(&dm3);
        let mut dz2 = dm3.dot(&w.w3.t());

        relu_mask_inplace(&mut dz2, &st.a2);
        let dm2 = p.matmul(&dz2);
        let dw2 = st.z1.t().dot(&dm2);
        let mut dz1 = dm2.dot(&w.w2.t());

        relu_mask_inplace(&mut dz1, &st.a1);
        let dm1 = p.matmul(&dz1);
        let dw1 = st.h0.t().dot(&dm1);

        let target = &mut grads.gcn[params.stack_index(s)];
        target.w1 += &dw1;
        target.w2 += &dw2;
        target.w3 += &dw3;
    }

    Ok((loss, grads))
}

const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
const CHECKPOINT_WEIGHTS: &str = "checkpoint.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the weight file, in f64 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub mode: SubmodelMode,
    pub n_structures: usize,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub config_hash: String,
    pub arrays: Vec<ArrayEntry>,
}

fn array_layout(params: &ModelParams) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut arrays = Vec::new();
    for (i, g) in params.gcn.iter().enumerate() {
        for (suffix, w) in [("w1", &g.w1), ("w2", &g.w2), ("w3", &g.w3)] {
            arrays.push((
                format!("gcn{i}.{suffix}"),
                w.shape().to_vec(),
                w.iter().copied().collect(),
            ));
        }
    }
    arrays.push((
        "head.w_fc1".into(),
        params.w_fc1.shape().to_vec(),
        params.w_fc1.iter().copied().collect(),
    ));
    arrays.push(("head.b_fc1".into(), vec![params.b_fc1.len()], params.b_fc1.to_vec()));
    arrays.push((
        "head.w_fc2".into(),
        params.w_fc2.shape().to_vec(),
        params.w_fc2.iter().copied().collect(),
    ));
    arrays.push(("head.b_fc2".into(), vec![params.b_fc2.len()], params.b_fc2.to_vec()));
    arrays
}

/// Write `checkpoint.json` (manifest) and `checkpoint.bin` (row-major
/// little-endian f64 arrays) into `dir`. Reload is bit-exact.
pub fn save_checkpoint(dir: &Path, params: &ModelParams, seed: u64, config_hash: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let arrays = array_layout(params);
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, shape, data) in &arrays {
        entries.push(ArrayEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
        });
        offset += data.len();
        for x in data {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        mode: params.mode,
        n_structures: params.config.n_structures,
        in_dim: params.config.in_dim,
        hidden_dim: params.config.hidden_dim,
        n_classes: params.config.n_classes,
        seed,
        config_hash: config_hash.to_string(),
        arrays: entries,
    };
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    let weights_path = dir.join(CHECKPOINT_WEIGHTS);
    fs::write(&weights_path, blob).map_err(|e| Error::io(&weights_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, CheckpointManifest)> {
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact {
            path: manifest_path,
            produced_by: "train".into(),
        });
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&manifest_path, e.to_string()))?;

    let weights_path = dir.join(CHECKPOINT_WEIGHTS);
    let blob = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    if blob.len() % 8 != 0 {
        return Err(Error::parse(&weights_path, "weight file length not a multiple of 8"));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let config = ModelConfig {
        n_structures: manifest.n_structures,
        in_dim: manifest.in_dim,
        hidden_dim: manifest.hidden_dim,
        n_classes: manifest.n_classes,
    };
    let mut params = init_params(&config, manifest.mode, 0).zeros_like();

    let read_array = |entry: &ArrayEntry, expect_shape: &[usize]| -> Result<Vec<f64>> {
        if entry.shape != expect_shape {
            return Err(Error::parse(
                &weights_path,
                format!("array {} has shape {:?}, expected {:?}", entry.name, entry.shape, expect_shape),
            ));
        }
        let len: usize = entry.shape.iter().product();
        values
            .get(entry.offset..entry.offset + len)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::parse(&weights_path, format!("array {} out of bounds", entry.name)))
    };

    let mut by_name: std::collections::HashMap<&str, &ArrayEntry> =
        manifest.arrays.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut take = |name: &str| -> Result<&ArrayEntry> {
        by_name
            .remove(name)
            .ok_or_else(|| Error::parse(&weights_path, format!("missing array {name}")))
    };

    for i in 0..params.gcn.len() {
        let dims_w1 = [config.in_dim, config.hidden_dim];
        let dims_h = [config.hidden_dim, config.hidden_dim];
        let w1 = read_array(take(&format!("gcn{i}.w1"))?, &dims_w1)?;
        let w2 = read_array(take(&format!("gcn{i}.w2"))?, &dims_h)?;
        let w3 = read_array(take(&format!("gcn{i}.w3"))?, &dims_h)?;
        params.gcn[i].w1 = Array2::from_shape_vec((dims_w1[0], dims_w1[1]), w1).expect("shape");
        params.gcn[i].w2 = Array2::from_shape_vec((dims_h[0], dims_h[1]), w2).expect("shape");
        params.gcn[i].w3 = Array2::from_shape_vec((dims_h[0], dims_h[1]), w3).expect("shape");
    }
    let w_fc1 = read_array(take("head.w_fc1")?, &[config.embedding_dim(), config.hidden_dim])?;
    params.w_fc1 =
        Array2::from_shape_vec((config.embedding_dim(), config.hidden_dim), w_fc1).expect("shape");
    params.b_fc1 = Array1::from_vec(read_array(take("head.b_fc1")?, &[config.hidden_dim])?);
    let w_fc2 = read_array(take("head.w_fc2")?, &[config.hidden_dim, config.n_classes])?;
    params.w_fc2 =
        Array2::from_shape_vec((config.hidden_dim, config.n_classes), w_fc2).expect("shape");
    params.b_fc2 = Array1::from_vec(read_array(take("head.b_fc2")?, &[config.n_classes])?);

    Ok((params, manifest))
}
