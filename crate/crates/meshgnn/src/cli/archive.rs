//! On-disk artifact formats shared by the pipeline commands.
//!
//! Dataset archive (from `generate`):
//! - `synth_spec.json` — the generator spec
//! - `manifest.csv` — `subject_id,site,label,split,mesh_paths` with
//!   semicolon-joined per-structure relative paths
//! - `meshes/<subject>_st<k>.json`
//!
//! Features archive (from `preprocess`): same manifest plus
//! - `preprocess.json` — registration flag, radius policy, reference subject
//! - `meshes/` — registered (or copied) meshes
//! - `features/<subject>_st<k>.csv` — n x 33 node features, no header
//! - `transforms/<subject>_st<k>.json` — only when registration is on

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FPFH_WIDTH;
use crate::mesh::{load_mesh, save_mesh, MeshFormat};
use crate::registration::RigidTransform;
use crate::synthgen::{DatasetSplits, Split, SubjectSample, SynthSpec};
use crate::training::Registration;

pub const DATASET_MANIFEST: &str = "manifest.csv";
pub const SYNTH_SPEC_FILE: &str = "synth_spec.json";
pub const PREPROCESS_FILE: &str = "preprocess.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessSettings {
    pub register: Registration,
    /// Radius policy as given on the command line (`auto` or a number in mm);
    /// training reuses it when recomputing features for augmented meshes.
    pub radius: String,
    pub reference_subject: usize,
}

fn mesh_file(id: &str, structure: usize) -> String {
    format!("meshes/{id}_st{structure:02}.json")
}

fn features_file(id: &str, structure: usize) -> String {
    format!("features/{id}_st{structure:02}.csv")
}

fn transform_file(id: &str, structure: usize) -> String {
    format!("transforms/{id}_st{structure:02}.json")
}

fn write_file(root: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn manifest_csv(splits: &DatasetSplits) -> String {
    let mut out = String::from("subject_id,site,label,split,mesh_paths\n");
    for (split, sample) in splits.iter_all() {
        let paths: Vec<String> = (0..sample.meshes.len())
            .map(|s| mesh_file(&sample.id, s))
            .collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            sample.id,
            sample.site,
            sample.label,
            split.as_str(),
            paths.join(";")
        ));
    }
    out
}

/// Write a dataset archive. Returns the relative paths written.
pub fn write_dataset_archive(
    dir: &Path,
    splits: &DatasetSplits,
    spec: &SynthSpec,
) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let spec_json = serde_json::to_string_pretty(spec).expect("spec serialization");
    write_file(dir, SYNTH_SPEC_FILE, (spec_json + "\n").as_bytes())?;
    written.push(SYNTH_SPEC_FILE.to_string());

    write_file(dir, DATASET_MANIFEST, manifest_csv(splits).as_bytes())?;
    written.push(DATASET_MANIFEST.to_string());

    for (_, sample) in splits.iter_all() {
        for (s, mesh) in sample.meshes.iter().enumerate() {
            let rel = mesh_file(&sample.id, s);
            let path = dir.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            save_mesh(mesh, &path, MeshFormat::Json)?;
            written.push(rel);
        }
    }
    Ok(written)
}

struct ManifestRow {
    id: String,
    site: String,
    label: u8,
    split: Split,
    mesh_paths: Vec<String>,
}

fn read_manifest(dir: &Path, produced_by: &str) -> Result<Vec<ManifestRow>> {
    let path = dir.join(DATASET_MANIFEST);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            produced_by: produced_by.into(),
        });
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("subject_id,site,label,split,mesh_paths") => {}
        other => {
            return Err(Error::parse(
                &path,
                format!("unexpected manifest header {other:?}"),
            ))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                &path,
                format!("line {}: expected 5 fields, got {}", lineno + 2, fields.len()),
            ));
        }
        rows.push(ManifestRow {
            id: fields[0].to_string(),
            site: fields[1].to_string(),
            label: fields[2]
                .parse()
                .map_err(|e| Error::parse(&path, format!("line {}: bad label: {e}", lineno + 2)))?,
            split: fields[3].parse()?,
            mesh_paths: fields[4].split(';').map(str::to_string).collect(),
        });
    }
    if rows.is_empty() {
        return Err(Error::parse(&path, "manifest has no subjects"));
    }
    Ok(rows)
}

/// Load a dataset archive (meshes only, no features).
pub fn read_dataset_archive(dir: &Path) -> Result<(DatasetSplits, SynthSpec)> {
    let spec_path = dir.join(SYNTH_SPEC_FILE);
    if !spec_path.exists() {
        return Err(Error::MissingArtifact {
            path: spec_path,
            produced_by: "generate".into(),
        });
    }
    let spec = SynthSpec::load(&spec_path)?;

    let rows = read_manifest(dir, "generate")?;
    let mut splits = DatasetSplits::default();
    for row in rows {
        let meshes = row
            .mesh_paths
            .iter()
            .map(|rel| load_mesh(dir.join(rel), MeshFormat::Json))
            .collect::<Result<Vec<_>>>()?;
        splits.split_mut(row.split).push(SubjectSample {
            id: row.id,
            site: row.site,
            label: row.label,
            meshes,
            features: None,
        });
    }
    Ok((splits, spec))
}

fn features_csv(features: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in features.rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn parse_features_csv(path: &Path, text: &str) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut count = 0usize;
        for field in line.split(',') {
            let v: f64 = field.parse().map_err(|e| {
                Error::parse(path, format!("line {}: bad value: {e}", lineno + 1))
            })?;
            data.push(v);
            count += 1;
        }
        if count != FPFH_WIDTH {
            return Err(Error::parse(
                path,
                format!("line {}: {count} columns, expected {FPFH_WIDTH}", lineno + 1),
            ));
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, FPFH_WIDTH), data)
        .map_err(|e| Error::parse(path, e.to_string()))
}

/// Write a features archive: registered (or copied) meshes, per-structure
/// feature CSVs, optional transforms, and the preprocessing settings.
/// `transforms` is aligned with `splits.iter_all()` order.
pub fn write_features_archive(
    dir: &Path,
    splits: &DatasetSplits,
    settings: &PreprocessSettings,
    transforms: Option<&[Vec<RigidTransform>]>,
) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let json = serde_json::to_string_pretty(settings).expect("settings serialization");
    write_file(dir, PREPROCESS_FILE, (json + "\n").as_bytes())?;
    written.push(PREPROCESS_FILE.to_string());

    write_file(dir, DATASET_MANIFEST, manifest_csv(splits).as_bytes())?;
    written.push(DATASET_MANIFEST.to_string());

    for (subject_idx, (_, sample)) in splits.iter_all().enumerate() {
        let features = sample.features.as_ref().ok_or_else(|| {
            Error::Features(format!("subject {} has no features to persist", sample.id))
        })?;
        for (s, mesh) in sample.meshes.iter().enumerate() {
            let rel = mesh_file(&sample.id, s);
            let path = dir.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            save_mesh(mesh, &path, MeshFormat::Json)?;
            written.push(rel);

            let rel = features_file(&sample.id, s);
            write_file(dir, &rel, features_csv(&features[s]).as_bytes())?;
            written.push(rel);

            if let Some(all) = transforms {
                let rel = transform_file(&sample.id, s);
                write_file(dir, &rel, (all[subject_idx][s].to_json() + "\n").as_bytes())?;
                written.push(rel);
            }
        }
    }
    Ok(written)
}

/// Load a features archive: meshes plus node features, ready for training
/// and evaluation.
pub fn read_features_archive(dir: &Path) -> Result<(DatasetSplits, PreprocessSettings)> {
    let settings_path = dir.join(PREPROCESS_FILE);
    if !settings_path.exists() {
        return Err(Error::MissingArtifact {
            path: settings_path,
            produced_by: "preprocess".into(),
        });
    }
    let text = fs::read_to_string(&settings_path).map_err(|e| Error::io(&settings_path, e))?;
    let settings: PreprocessSettings =
        serde_json::from_str(&text).map_err(|e| Error::parse(&settings_path, e.to_string()))?;

    let rows = read_manifest(dir, "preprocess")?;
    let mut splits = DatasetSplits::default();
    for row in rows {
        let meshes = row
            .mesh_paths
            .iter()
            .map(|rel| load_mesh(dir.join(rel), MeshFormat::Json))
            .collect::<Result<Vec<_>>>()?;
        let features = (0..meshes.len())
            .map(|s| {
                let rel = features_file(&row.id, s);
                let path = dir.join(&rel);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                parse_features_csv(&path, &text)
            })
            .collect::<Result<Vec<_>>>()?;
        splits.split_mut(row.split).push(SubjectSample {
            id: row.id,
            site: row.site,
            label: row.label,
            meshes,
            features: Some(features),
        });
    }
    Ok((splits, settings))
}

/// Load one persisted transform (present only in registered archives).
pub fn read_transform(dir: &Path, subject_id: &str, structure: usize) -> Result<RigidTransform> {
    let path = dir.join(transform_file(subject_id, structure));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    RigidTransform::from_json(&text)
}

pub fn transforms_dir(dir: &Path) -> PathBuf {
    dir.join("transforms")
}
