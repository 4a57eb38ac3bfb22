//! Pipeline commands. Each command reads its upstream artifacts from disk,
//! writes its outputs plus a `run_manifest.json` into the chosen directory,
//! and is byte-reproducible given identical inputs and seeds (timestamps
//! live only in the run manifest).

pub mod archive;
pub mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{compute_fpfh, RadiusPolicy};
use crate::gnn::{
    forward, load_checkpoint, save_checkpoint, softmax, ModelParams, SubmodelMode,
};
use crate::inspection::{
    extract_embeddings, scatter_csv, separability_report, Grouping, Layer,
};
use crate::mesh::{vertex_normals, Mesh};
use crate::registration::{register_dataset, Reference, RigidTransform};
use crate::synthgen::{generate_dataset, DatasetSplits, Split, SubjectSample, SynthSpec};
use crate::training::{train, Registration, TrainConfig};

use archive::{
    read_dataset_archive, read_features_archive, write_dataset_archive, write_features_archive,
    PreprocessSettings,
};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub started_at_unix_ms: u128,
    pub finished_at_unix_ms: u128,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

struct RunScope {
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl RunScope {
    fn begin(command: &str, out_dir: &Path, inputs: Vec<String>) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        Ok(RunScope {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed: None,
                config_hash: None,
                started_at_unix_ms: now_ms(),
                finished_at_unix_ms: 0,
                inputs,
                outputs: Vec::new(),
            },
        })
    }

    fn record(&mut self, outputs: impl IntoIterator<Item = String>) {
        self.manifest.outputs.extend(outputs);
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.outputs.push(rel.to_string());
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.finished_at_unix_ms = now_ms();
        self.manifest.outputs.sort();
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serialization");
        let path = self.out_dir.join(RUN_MANIFEST);
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Generate a synthetic dataset archive from a spec file. `seed_override`
/// replaces the spec's seed when given; the archived spec records the seed
/// actually used.
pub fn cmd_generate(spec_path: &Path, seed_override: Option<u64>, out_dir: &Path) -> Result<()> {
    let mut spec = SynthSpec::load(spec_path)?;
    if let Some(seed) = seed_override {
        spec.seed = seed;
    }
    let splits = generate_dataset(&spec)?;
    let mut scope = RunScope::begin("generate", out_dir, vec![spec_path.display().to_string()])?;
    scope.manifest.seed = Some(spec.seed);
    let written = write_dataset_archive(out_dir, &splits, &spec)?;
    scope.record(written);
    scope.finish()
}

fn compute_all_features(
    splits: &mut DatasetSplits,
    radius: RadiusPolicy,
) -> Result<()> {
    for split in Split::ALL {
        let samples = splits.split_mut(split);
        let features: Vec<Vec<Array2<f64>>> = samples
            .par_iter()
            .map(|sample| {
                sample
                    .meshes
                    .iter()
                    .map(|m| {
                        let normals = vertex_normals(m)?;
                        compute_fpfh(m, &normals, radius.resolve(m))
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        for (sample, feats) in samples.iter_mut().zip(features) {
            sample.features = Some(feats);
        }
    }
    Ok(())
}

/// Optional per-structure rigid registration to a reference subject, then
/// FPFH for every subject.
pub fn cmd_preprocess(
    dataset_dir: &Path,
    register: Registration,
    radius: RadiusPolicy,
    reference_subject: usize,
    out_dir: &Path,
) -> Result<()> {
    let (mut splits, _spec) = read_dataset_archive(dataset_dir)?;

    let transforms = if register.is_on() {
        Some(register_splits(&mut splits, reference_subject)?)
    } else {
        None
    };

    compute_all_features(&mut splits, radius)?;

    let settings = PreprocessSettings {
        register,
        radius: radius.to_string(),
        reference_subject,
    };
    let mut scope = RunScope::begin(
        "preprocess",
        out_dir,
        vec![dataset_dir.display().to_string()],
    )?;
    let written = write_features_archive(out_dir, &splits, &settings, transforms.as_deref())?;
    scope.record(written);
    scope.finish()
}

/// Align every subject's structure meshes to the reference subject's,
/// structure by structure. Returns transforms in `iter_all` subject order.
fn register_splits(
    splits: &mut DatasetSplits,
    reference_subject: usize,
) -> Result<Vec<Vec<RigidTransform>>> {
    let n_subjects = splits.n_subjects();
    if reference_subject >= n_subjects {
        return Err(Error::Registration(format!(
            "reference subject {reference_subject} out of range for {n_subjects} subjects"
        )));
    }
    let n_structures = splits
        .iter_all()
        .next()
        .map(|(_, s)| s.meshes.len())
        .unwrap_or(0);

    let mut aligned_per_structure: Vec<Vec<Mesh>> = Vec::with_capacity(n_structures);
    let mut transforms_per_structure: Vec<Vec<RigidTransform>> = Vec::with_capacity(n_structures);
    for s in 0..n_structures {
        let meshes: Vec<Mesh> = splits
            .iter_all()
            .map(|(_, subject)| subject.meshes[s].clone())
            .collect();
        let (aligned, transforms) = register_dataset(&meshes, Reference::Subject(reference_subject))?;
        aligned_per_structure.push(aligned);
        transforms_per_structure.push(transforms);
    }

    let by_subject: Vec<Vec<RigidTransform>> = (0..n_subjects)
        .map(|subject_idx| {
            transforms_per_structure
                .iter()
                .map(|per_structure| per_structure[subject_idx])
                .collect()
        })
        .collect();

    let mut subject_idx = 0;
    for split in Split::ALL {
        for sample in splits.split_mut(split).iter_mut() {
            for (s, aligned) in aligned_per_structure.iter().enumerate() {
                sample.meshes[s] = aligned[subject_idx].clone();
            }
            subject_idx += 1;
        }
    }
    Ok(by_subject)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub selected_epoch: usize,
    pub best_val_loss: f64,
    pub epochs: usize,
}

/// Train on a features archive and persist checkpoint + history.
pub fn cmd_train(features_dir: &Path, config: &TrainConfig, out_dir: &Path) -> Result<()> {
    let (splits, settings) = read_features_archive(features_dir)?;
    // The archive determines whether meshes were registered; keep the
    // recorded config truthful.
    let mut config = config.clone();
    config.registration = settings.register;
    config.validate()?;
    let radius: RadiusPolicy = settings.radius.parse()?;

    let (best_params, history) = train(&splits, &config, radius)?;

    let mut scope = RunScope::begin("train", out_dir, vec![features_dir.display().to_string()])?;
    scope.manifest.seed = Some(config.seed);
    scope.manifest.config_hash = Some(config.config_hash());

    save_checkpoint(out_dir, &best_params, config.seed, &config.config_hash())?;
    scope.record(["checkpoint.json".to_string(), "checkpoint.bin".to_string()]);

    scope.write("history.csv", history.to_csv().as_bytes())?;
    let summary = TrainSummary {
        selected_epoch: history.selected_epoch,
        best_val_loss: history.epochs[history.selected_epoch].val_loss,
        epochs: history.epochs.len(),
    };
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serialization");
    scope.write("train_summary.json", (summary_json + "\n").as_bytes())?;
    let config_json = serde_json::to_string_pretty(&config).expect("config serialization");
    scope.write("train_config.json", (config_json + "\n").as_bytes())?;
    scope.finish()
}

/// Layer-wise separability reports and scatter data for the test split.
pub fn cmd_inspect(
    checkpoint_dir: &Path,
    features_dir: &Path,
    layers: &[Layer],
    sample_cap: usize,
    seed: Option<u64>,
    render_svg: bool,
    out_dir: &Path,
) -> Result<()> {
    let (params, manifest) = load_checkpoint(checkpoint_dir)?;
    let (splits, _) = read_features_archive(features_dir)?;
    if splits.test.is_empty() {
        return Err(Error::Inspection("test split is empty".into()));
    }
    let seed = seed.unwrap_or(manifest.seed);
    let records = extract_embeddings(&params, &splits.test)?;

    let mut scope = RunScope::begin(
        "inspect",
        out_dir,
        vec![
            checkpoint_dir.display().to_string(),
            features_dir.display().to_string(),
        ],
    )?;
    scope.manifest.seed = Some(seed);
    scope.manifest.config_hash = Some(manifest.config_hash.clone());

    for &layer in layers {
        for grouping in Grouping::ALL {
            let (report, rows) = separability_report(&records, layer, grouping, sample_cap, seed)?;
            let stem = format!("{layer}_{grouping}");
            let json = serde_json::to_string_pretty(&report).expect("report serialization");
            scope.write(&format!("report_{stem}.json"), (json + "\n").as_bytes())?;
            scope.write(&format!("scatter_{stem}.csv"), scatter_csv(&rows).as_bytes())?;
            if render_svg {
                let title = format!("{layer} by {grouping}");
                scope.write(
                    &format!("scatter_{stem}.svg"),
                    svg::scatter_svg(&rows, grouping, &title).as_bytes(),
                )?;
            }
        }
    }
    scope.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AucSummary {
    pub dataset: String,
    pub auc: f64,
    pub n: usize,
    pub n_pos: usize,
}

fn scores_and_labels(
    params: &ModelParams,
    samples: &[SubjectSample],
) -> Result<(Vec<f64>, Vec<u8>)> {
    let scores: Vec<f64> = samples
        .par_iter()
        .map(|sample| {
            let trace = forward(sample, params)?;
            Ok(softmax(&trace.logits)[1])
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    Ok((scores, labels))
}

/// ROC curves and AUC on the test split, optionally per site.
pub fn cmd_evaluate(
    checkpoint_dir: &Path,
    features_dir: &Path,
    per_site: bool,
    out_dir: &Path,
) -> Result<()> {
    let (params, manifest) = load_checkpoint(checkpoint_dir)?;
    let (splits, _) = read_features_archive(features_dir)?;
    if splits.test.is_empty() {
        return Err(Error::Evaluation("test split is empty".into()));
    }

    let mut scope = RunScope::begin(
        "evaluate",
        out_dir,
        vec![
            checkpoint_dir.display().to_string(),
            features_dir.display().to_string(),
        ],
    )?;
    scope.manifest.seed = Some(manifest.seed);
    scope.manifest.config_hash = Some(manifest.config_hash.clone());

    let (scores, labels) = scores_and_labels(&params, &splits.test)?;
    let overall = crate::evaluation::roc_auc(&scores, &labels)?;
    scope.write("roc_all.csv", overall.to_csv().as_bytes())?;
    let mut summaries = vec![AucSummary {
        dataset: "all".into(),
        auc: overall.auc,
        n: labels.len(),
        n_pos: labels.iter().filter(|&&l| l == 1).count(),
    }];

    if per_site {
        let mut by_site: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, sample) in splits.test.iter().enumerate() {
            by_site.entry(sample.site.as_str()).or_default().push(i);
        }
        for (site, members) in by_site {
            let site_scores: Vec<f64> = members.iter().map(|&i| scores[i]).collect();
            let site_labels: Vec<u8> = members.iter().map(|&i| labels[i]).collect();
            let roc = crate::evaluation::roc_auc(&site_scores, &site_labels)?;
            scope.write(&format!("roc_{site}.csv"), roc.to_csv().as_bytes())?;
            summaries.push(AucSummary {
                dataset: site.to_string(),
                auc: roc.auc,
                n: site_labels.len(),
                n_pos: site_labels.iter().filter(|&&l| l == 1).count(),
            });
        }
    }

    let json = serde_json::to_string_pretty(&summaries).expect("summary serialization");
    scope.write("summary.json", (json + "\n").as_bytes())?;
    scope.finish()
}

/// Run the four-variant grid (shared / non-shared x registration on / off)
/// on one generated dataset with identical splits.
pub fn cmd_run_all(
    spec_path: &Path,
    base_config: &TrainConfig,
    out_dir: &Path,
) -> Result<()> {
    let scope = RunScope::begin("run-all", out_dir, vec![spec_path.display().to_string()])?;

    let dataset_dir = out_dir.join("dataset");
    cmd_generate(spec_path, None, &dataset_dir)?;

    for registration in [Registration::Off, Registration::On] {
        let reg_dir = out_dir.join(format!("reg-{registration}"));
        let features_dir = reg_dir.join("features");
        cmd_preprocess(
            &dataset_dir,
            registration,
            RadiusPolicy::Auto,
            0,
            &features_dir,
        )?;

        for mode in [SubmodelMode::Shared, SubmodelMode::NonShared] {
            let config = TrainConfig {
               mode,
                registration,
                ..base_config.clone()
            };
            let variant_dir = reg_dir.join(mode.as_str());
            let train_dir = variant_dir.join("train");
            cmd_train(&features_dir, &config, &train_dir)?;
            cmd_evaluate(&train_dir, &features_dir, true, &variant_dir.join("eval"))?;
            cmd_inspect(
                &train_dir,
                &features_dir,
                &Layer::ALL,
                500,
                Some(config.seed),
                false,
                &variant_dir.join("inspect"),
            )?;
        }
    }
    scope.finish()
}
