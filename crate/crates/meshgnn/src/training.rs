//! Adam training loop with jitter augmentation and validation-loss model
//! selection. A whole run is a pure function of (dataset, config): every
//! random draw comes from a purpose-split stream of the run seed.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::roc_auc;
use crate::features::{compute_fpfh, RadiusPolicy, FPFH_WIDTH};
use crate::gnn::{
    forward_graphs, init_params, loss_and_gradients, normalized_adjacency, softmax, ModelConfig,
    ModelParams, NormalizedAdjacency, SubmodelMode,
};
use crate::mesh::{vertex_normals, Mesh};
use crate::rng::stream;
use crate::synthgen::{DatasetSplits, SubjectSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Registration {
    On,
    Off,
}

impl Registration {
    pub fn is_on(self) -> bool {
        self == Registration::On
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Registration::On => "on",
            Registration::Off => "off",
        }
    }
}

impl std::str::FromStr for Registration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(Registration::On),
            "off" => Ok(Registration::Off),
            other => Err(Error::Config(format!(
                "registration must be `on` or `off`, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Registration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment_max_offset_mm: f64,
    pub seed: u64,
    pub mode: SubmodelMode,
    pub registration: Registration,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            batch_size: 8,
            augment_max_offset_mm: 0.1,
            seed: 0,
            mode: SubmodelMode::Shared,
            registration: Registration::On,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {beta}")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.augment_max_offset_mm < 0.0 {
            return Err(Error::Config("augment_max_offset_mm must be non-negative".into()));
        }
        Ok(())
    }

    /// Read a config from a `.toml` or `.json` file.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: TrainConfig = match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("toml") => {
                toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?
            }
            Some(ext) if ext.eq_ignore_ascii_case("json") => {
                serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?
            }
            other => {
                return Err(Error::parse(
                    path,
                    format!("unsupported config extension {other:?}; use .toml or .json"),
                ))
            }
        };
        config.validate()?;
        Ok(config)
    }

    /// Hash of the canonical JSON encoding; identical configs hash identically.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialization");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// First/second moment estimates mirroring the parameter layout.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::Training("non-finite gradient in Adam step".into()));
    }
    state.step += 1;
    let bc1 = 1.0 - config.beta1.powi(state.step as i32);
    let bc2 = 1.0 - config.beta2.powi(state.step as i32);
    let iter = params
        .param_iter_mut()
        .zip(grads.param_iter())
        .zip(state.m.param_iter_mut())
        .zip(state.v.param_iter_mut());
    for (((theta, &g), m), v) in iter {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *theta -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Independently translate every vertex by a uniform offset with each
/// component in `[-max_offset_mm, +max_offset_mm]`. Faces are unchanged;
/// node features must be recomputed downstream.
pub fn augment_translate(mesh: &Mesh, max_offset_mm: f64, rng: &mut impl Rng) -> Mesh {
    if max_offset_mm == 0.0 {
        return mesh.clone();
    }
    mesh.map_vertices(|v| {
        nalgebra::Vector3::new(
            v.x + rng.random_range(-max_offset_mm..=max_offset_mm),
            v.y + rng.random_range(-max_offset_mm..=max_offset_mm),
            v.z + rng.random_range(-max_offset_mm..=max_offset_mm),
        )
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were selected (argmin validation loss,
    /// earliest on ties).
    pub selected_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_auc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_auc
            ));
        }
        out
    }
}

fn check_samples(samples: &[SubjectSample], n_structures: usize, what: &str) -> Result<()> {
    for sample in samples {
        if sample.meshes.len() != n_structures {
            return Err(Error::Training(format!(
                "{what} subject {} has {} structures, expected {n_structures}",
                sample.id,
                sample.meshes.len()
            )));
        }
        let features = sample.features.as_ref().ok_or_else(|| Error::Training(format!(
            "{what} subject {} has no node features; run the feature stage first",
            sample.id
        )))?;
        for (s, f) in features.iter().enumerate() {
            if f.ncols() != FPFH_WIDTH {
                return Err(Error::Training(format!(
                    "{what} subject {} structure {s} has feature width {}, expected {FPFH_WIDTH}",
                    sample.id,
                    f.ncols()
                )));
            }
        }
    }
    Ok(())
}

fn subject_adjacencies(samples: &[SubjectSample]) -> Vec<Vec<NormalizedAdjacency>> {
    samples
        .iter()
        .map(|s| s.meshes.iter().map(normalized_adjacency).collect())
        .collect()
}

/// Mean loss and AUC of the positive-class probability over a split.
fn evaluate_split(
    params: &ModelParams,
    samples: &[SubjectSample],
    adjacencies: &[Vec<NormalizedAdjacency>],
) -> Result<(f64, f64)> {
    let outcomes: Vec<(f64, f64)> = samples
        .par_iter()
        .zip(adjacencies)
        .map(|(sample, adjs)| {
            let feats = sample.features.as_ref().expect("checked by caller");
            let trace = forward_graphs(adjs, feats, params)?;
            let loss = crate::gnn::cross_entropy(&trace.logits, sample.label);
            let score = softmax(&trace.logits)[1];
            Ok((loss, score))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_loss = outcomes.iter().map(|(l, _)| l).sum::<f64>() / samples.len() as f64;
    let scores: Vec<f64> = outcomes.iter().map(|(_, s)| *s).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let auc = match roc_auc(&scores, &labels) {
        Ok(r) => r.auc,
        Err(_) => f64::NAN, // single-class split
    };
    Ok((mean_loss, auc))
}

fn augmented_features(
    meshes: &[Mesh],
    radius: RadiusPolicy,
) -> Result<Vec<Array2<f64>>> {
    meshes
        .iter()
        .map(|m| {
            let normals = vertex_normals(m)?;
            compute_fpfh(m, &normals, radius.resolve(m))
        })
        .collect()
}

/// Run the full optimization: shuffled mini-batches with batch-mean
/// gradients, per-epoch jitter augmentation of training subjects (features
/// recomputed on the jittered geometry), and validation after every epoch.
/// Returns the parameters of the epoch with minimal validation loss along
/// with the history.
pub fn train(
    data: &DatasetSplits,
    config: &TrainConfig,
    radius: RadiusPolicy,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Training("training split is empty".into()));
    }
    if data.val.is_empty() {
        return Err(Error::Training("validation split is empty".into()));
    }
    let n_structures = data.train[0].meshes.len();
    check_samples(&data.train, n_structures, "train")?;
    check_samples(&data.val, n_structures, "val")?;

    let model_cfg = ModelConfig::with_structures(n_structures);
    let mut params = init_params(&model_cfg, config.mode, config.seed);
    let mut state = AdamState::new(&params);
    let mut shuffle_rng = stream(config.seed, "shuffle");
    let mut augment_rng = stream(config.seed, "augment");

    let train_adjs = subject_adjacencies(&data.train);
    let val_adjs = subject_adjacencies(&data.val);

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            // Jitter is drawn serially so the stream order is fixed; the
            // expensive feature recomputation then runs in parallel.
            let batch_features: Vec<Vec<Array2<f64>>> = if config.augment_max_offset_mm > 0.0 {
                let jittered: Vec<Vec<Mesh>> = batch
                    .iter()
                    .map(|&i| {
                        data.train[i]
                            .meshes
                            .iter()
                            .map(|m| augment_translate(m, config.augment_max_offset_mm, &mut augment_rng))
                            .collect()
                    })
                    .collect();
                jittered
                    .par_iter()
                    .map(|meshes| augmented_features(meshes, radius))
                    .collect::<Result<Vec<_>>>()?
            } else {
                batch
                    .iter()
                    .map(|&i| data.train[i].features.clone().expect("checked above"))
                    .collect()
            };

            let members: Vec<(f64, ModelParams)> = batch
                .par_iter()
                .zip(batch_features.par_iter())
                .map(|(&i, feats)| {
                    let trace = forward_graphs(&train_adjs[i], feats, &params)?;
                    loss_and_gradients(&trace, data.train[i].label, &train_adjs[i], &params)
                })
                .collect::<Result<Vec<_>>>()?;

            let mut grads = params.zeros_like();
            let inv = 1.0 / members.len() as f64;
            let mut batch_loss = 0.0;
            for (loss, g) in &members {
                batch_loss += loss;
                grads.add_scaled(g, inv);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            loss_sum += batch_loss;
            adam_step(&mut params, &grads, &mut state, config)?;
        }

        let train_loss = loss_sum / data.train.len() as f64;
        let (val_loss, val_auc) = evaluate_split(&params, &data.val, &val_adjs)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_auc,
        });
        let improved = match &best {
            None => true,
            Some((_, best_loss, _)) => val_loss < *best_loss,
        };
        if improved {
            best = Some((epoch, val_loss, params.clone()));
        }
    }

    let (selected_epoch, _, best_params) = best.expect("at least one epoch ran");
    Ok((
        best_params,
        TrainHistory {
            epochs: history,
            selected_epoch,
        },
    ))
}
