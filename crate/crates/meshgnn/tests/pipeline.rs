//! End-to-end checks of the pipeline commands and their on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use meshgnn::cli;
use meshgnn::features::RadiusPolicy;
use meshgnn::gnn::{init_params, save_checkpoint, ModelConfig, SubmodelMode};
use meshgnn::inspection::Layer;
use meshgnn::training::{Registration, TrainConfig};

fn write_spec(dir: &Path) -> PathBuf {
    let spec = serde_json::json!({
        "n_structures": 2,
        "subjects_per_site": {"train": 6, "val": 4, "test": 4},
        "site_specs": [
            {"name": "alpha", "offset_mm": 0.0, "rot_range_rad": 0.0},
            {"name": "beta", "offset_mm": 20.0, "rot_range_rad": 0.4}
        ],
        "class_effect": 1.3,
        "vertex_noise_sd": 0.02,
        "icosphere_level": 1,
        "seed": 99
    });
    let path = dir.join("spec.json");
    fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 4,
        augment_max_offset_mm: 0.0,
        seed: 5,
        ..Default::default()
    }
}

/// Recursive file listing relative to `root`, sorted.
fn list_files(root: &Path) -> Vec<String> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<String>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

#[test]
fn generate_writes_deterministic_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let spec_path = write_spec(tmp.path());
    let out_a = tmp.path().join("data_a");
    let out_b = tmp.path().join("data_b");
    cli::cmd_generate(&spec_path, None, &out_a).unwrap();
    cli::cmd_generate(&spec_path, None, &out_b).unwrap();

    let manifest = fs::read_to_string(out_a.join("manifest.csv")).unwrap();
    // 2 sites x (6 + 4 + 4) subjects, plus the header.
    assert_eq!(manifest.lines().count(), 1 + 28);
    for line in manifest.lines().skip(1) {
        let paths = line.split(',').nth(4).unwrap();
        assert_eq!(paths.split(';').count(), 2, "one path per structure");
    }

    // Identical archives byte for byte, run manifests excluded (timestamps).
    let files = list_files(&out_a);
    assert_eq!(files, list_files(&out_b));
    for rel in &files {
        if rel == cli::RUN_MANIFEST {
            continue;
        }
        assert_eq!(
            fs::read(out_a.join(rel)).unwrap(),
            fs::read(out_b.join(rel)).unwrap(),
            "{rel} differs between identical runs"
        );
    }
}

#[test]
fn default_structure_count_is_fifteen() {
    let tmp = tempfile::tempdir().unwrap();
    // n_structures omitted: the default applies.
    let spec = serde_json::json!({
        "subjects_per_site": {"train": 1, "val": 1, "test": 1},
        "site_specs": [{"name": "alpha", "offset_mm": 0.0, "rot_range_rad": 0.0}],
        "vertex_noise_sd": 0.0,
        "icosphere_level": 0,
        "seed": 1
    });
    let spec_path = tmp.path().join("default_spec.json");
    fs::write(&spec_path, spec.to_string()).unwrap();
    let out = tmp.path().join("data");
    cli::cmd_generate(&spec_path, None, &out).unwrap();
    let manifest = fs::read_to_string(out.join("manifest.csv")).unwrap();
    for line in manifest.lines().skip(1) {
        let paths = line.split(',').nth(4).unwrap();
        assert_eq!(paths.split(';').count(), 15, "15 structures per subject");
    }
}

#[test]
fn malformed_spec_names_offending_key() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(
        &path,
        r#"{"n_structurs": 3, "subjects_per_site": {"train": 1, "val": 1, "test": 1}, "site_specs": []}"#,
    )
    .unwrap();
    let err = cli::cmd_generate(&path, None, &tmp.path().join("out")).unwrap_err();
    assert!(err.to_string().contains("n_structurs"), "got: {err}");
}

#[test]
fn preprocess_register_toggle_and_feature_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let spec_path = write_spec(tmp.path());
    let data = tmp.path().join("data");
    cli::cmd_generate(&spec_path, None, &data).unwrap();

    let feats_off = tmp.path().join("feats_off");
    cli::cmd_preprocess(&data, Registration::Off, RadiusPolicy::Auto, 0, &feats_off).unwrap();
    assert!(!feats_off.join("transforms").exists(), "no transforms without registration");

    let feats_on = tmp.path().join("feats_on");
    cli::cmd_preprocess(&data, Registration::On, RadiusPolicy::Auto, 0, &feats_on).unwrap();
    assert!(feats_on.join("transforms").exists());

    // Feature files: one row per vertex, 33 columns (level-1 icosphere: 42).
    let csv = fs::read_to_string(feats_on.join("features/s0000_st00.csv")).unwrap();
    assert_eq!(csv.lines().count(), 42);
    for line in csv.lines() {
        assert_eq!(line.split(',').count(), 33);
    }

    // With a noise-free rigid-copy dataset, registration must realign every
    // mesh onto the reference subject's within 1e-6.
    let rigid_spec = serde_json::json!({
        "n_structures": 1,
        "subjects_per_site": {"train": 3, "val": 1, "test": 1},
        "site_specs": [
            {"name": "alpha", "offset_mm": 0.0, "rot_range_rad": 0.0},
            {"name": "beta", "offset_mm": 25.0, "rot_range_rad": 0.8}
        ],
        "class_effect": 1.0,
        "vertex_noise_sd": 0.0,
        "icosphere_level": 1,
        "seed": 3
    });
    let rigid_path = tmp.path().join("rigid_spec.json");
    fs::write(&rigid_path, serde_json::to_string(&rigid_spec).unwrap()).unwrap();
    let rigid_data = tmp.path().join("rigid_data");
    cli::cmd_generate(&rigid_path, None, &rigid_data).unwrap();
    let rigid_feats = tmp.path().join("rigid_feats");
    cli::cmd_preprocess(&rigid_data, Registration::On, RadiusPolicy::Auto, 0, &rigid_feats)
        .unwrap();

    let reference =
        meshgnn::load_mesh(rigid_feats.join("meshes/s0000_st00.json"), meshgnn::MeshFormat::Json)
            .unwrap();
    let manifest = fs::read_to_string(rigid_feats.join("manifest.csv")).unwrap();
    for line in manifest.lines().skip(1) {
        let id = line.split(',').next().unwrap();
        let mesh = meshgnn::load_mesh(
            rigid_feats.join(format!("meshes/{id}_st00.json")),
            meshgnn::MeshFormat::Json,
        )
        .unwrap();
        let max_dev = mesh
            .vertices()
            .iter()
            .zip(reference.vertices())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 1e-6, "{id}: residual {max_dev}");
    }
}

#[test]
fn train_inspect_evaluate_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let spec_path = write_spec(tmp.path());
    let data = tmp.path().join("data");
    cli::cmd_generate(&spec_path, None, &data).unwrap();
    let feats = tmp.path().join("feats");
    cli::cmd_preprocess(&data, Registration::Off, RadiusPolicy::Auto, 0, &feats).unwrap();

    let run_shared = tmp.path().join("run_shared");
    cli::cmd_train(&feats, &quick_config(), &run_shared).unwrap();
    let run_nonshared = tmp.path().join("run_nonshared");
    let config = TrainConfig {
        mode: SubmodelMode::NonShared,
        ..quick_config()
    };
    cli::cmd_train(&feats, &config, &run_nonshared).unwrap();

    // History: one row per epoch; selection = argmin of the val_loss column.
    let history = fs::read_to_string(run_shared.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 3);
    let val_losses: Vec<f64> = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    let argmin = val_losses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let summary: cli::TrainSummary =
        serde_json::from_str(&fs::read_to_string(run_shared.join("train_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary.selected_epoch, argmin);

    // The two modes differ exactly in the checkpoint parameter layout.
    let (p_shared, m_shared) = meshgnn::gnn::load_checkpoint(&run_shared).unwrap();
    let (p_nonshared, m_nonshared) = meshgnn::gnn::load_checkpoint(&run_nonshared).unwrap();
    assert_eq!(m_shared.mode, SubmodelMode::Shared);
    assert_eq!(m_nonshared.mode, SubmodelMode::NonShared);
    assert_eq!(p_nonshared.gcn.len(), 2);
    assert_eq!(p_shared.gcn.len(), 1);
    assert_eq!(p_shared.head_parameter_count(), p_nonshared.head_parameter_count());

    // Inspection: 3 layers x 2 groupings reports; fc2 scatter is raw logits;
    // reruns are byte-identical.
    let inspect_a = tmp.path().join("inspect_a");
    cli::cmd_inspect(&run_shared, &feats, &Layer::ALL, 500, Some(1), true, &inspect_a).unwrap();
    let reports: Vec<String> = list_files(&inspect_a)
        .into_iter()
        .filter(|f| f.starts_with("report_"))
        .collect();
    assert_eq!(reports.len(), 6);
    assert!(inspect_a.join("scatter_gcn_label.svg").exists());

    let fc2_report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(inspect_a.join("report_fc2_label.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(fc2_report["explained_variance"].as_array().unwrap().len(), 0);
    let gcn_report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(inspect_a.join("report_gcn_label.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(gcn_report["explained_variance"].as_array().unwrap().len(), 2);

    let inspect_b = tmp.path().join("inspect_b");
    cli::cmd_inspect(&run_shared, &feats, &Layer::ALL, 500, Some(1), true, &inspect_b).unwrap();
    for rel in list_files(&inspect_a) {
        if rel == cli::RUN_MANIFEST {
            continue;
        }
        assert_eq!(
            fs::read(inspect_a.join(&rel)).unwrap(),
            fs::read(inspect_b.join(&rel)).unwrap(),
            "{rel} not reproducible"
        );
    }

    // Evaluation: per-site ROC files plus a bounded overall AUC.
    let eval_dir = tmp.path().join("eval");
    cli::cmd_evaluate(&run_shared, &feats, true, &eval_dir).unwrap();
    assert!(eval_dir.join("roc_all.csv").exists());
    assert!(eval_dir.join("roc_alpha.csv").exists());
    assert!(eval_dir.join("roc_beta.csv").exists());
    let summary: Vec<cli::AucSummary> =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary[0].dataset, "all");
    for entry in &summary {
        assert!((0.0..=1.0).contains(&entry.auc), "{}: {}", entry.dataset, entry.auc);
    }
}

#[test]
fn untrained_checkpoint_scores_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    // No class effect: labels carry no signal, so a random-init model must
    // score at chance on a reasonably sized balanced test split.
    let spec = serde_json::json!({
        "n_structures": 2,
        "subjects_per_site": {"train": 1, "val": 1, "test": 60},
        "site_specs": [{"name": "alpha", "offset_mm": 0.0, "rot_range_rad": 0.0}],
        "class_effect": 1.0,
        "vertex_noise_sd": 0.05,
        "icosphere_level": 1,
        "seed": 31
    });
    let spec_path = tmp.path().join("null_spec.json");
    fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let data = tmp.path().join("data");
    cli::cmd_generate(&spec_path, None, &data).unwrap();
    let feats = tmp.path().join("feats");
    cli::cmd_preprocess(&data, Registration::Off, RadiusPolicy::Auto, 0, &feats).unwrap();

    let ckpt = tmp.path().join("random_ckpt");
    fs::create_dir_all(&ckpt).unwrap();
    let params = init_params(&ModelConfig::with_structures(2), SubmodelMode::Shared, 1234);
    save_checkpoint(&ckpt, &params, 1234, "untrained").unwrap();

    let eval_dir = tmp.path().join("eval");
    cli::cmd_evaluate(&ckpt, &feats, false, &eval_dir).unwrap();
    let summary: Vec<cli::AucSummary> =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("summary.json")).unwrap()).unwrap();
    assert!(
        (0.35..=0.65).contains(&summary[0].auc),
        "untrained AUC {} outside the chance band",
        summary[0].auc
    );
}

#[test]
fn missing_upstream_artifacts_name_prior_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();

    let err = cli::cmd_preprocess(
        &empty,
        Registration::Off,
        RadiusPolicy::Auto,
        0,
        &tmp.path().join("out1"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("meshgnn generate"), "got: {err}");

    let err = cli::cmd_train(&empty, &quick_config(), &tmp.path().join("out2")).unwrap_err();
    assert!(err.to_string().contains("meshgnn preprocess"), "got: {err}");

    let err = cli::cmd_evaluate(&empty, &empty, false, &tmp.path().join("out3")).unwrap_err();
    assert!(err.to_string().contains("meshgnn train"), "got: {err}");
}

#[test]
fn run_all_produces_the_four_variant_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let spec_path = write_spec(tmp.path());
    let out = tmp.path().join("grid");
    cli::cmd_run_all(&spec_path, &quick_config(), &out).unwrap();

    for reg in ["reg-off", "reg-on"] {
        assert!(out.join(reg).join("features/manifest.csv").exists());
        for mode in ["shared", "non-shared"] {
            let variant = out.join(reg).join(mode);
            assert!(variant.join("train/checkpoint.bin").exists(), "{reg}/{mode}");
            assert!(variant.join("train/history.csv").exists());
            assert!(variant.join("eval/summary.json").exists());
            assert!(variant.join("inspect/report_gcn_site.json").exists());
        }
    }
}
