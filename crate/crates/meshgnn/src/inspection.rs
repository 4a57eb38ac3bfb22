//! Layer-wise embedding inspection: extraction, PCA projection to 2D,
//! silhouette separability by label or by site, and scatter data.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gnn::{forward, ModelParams};
use crate::rng::stream;
use crate::synthgen::SubjectSample;

/// Per-subject embeddings captured at the three inspection stages: the
/// stacked GCN readout, the first fully connected layer, and the logits.
#[derive(Debug, Clone)]
pub struct EmbeddingRecord {
    pub subject_id: String,
    pub site: String,
    pub label: u8,
    pub gcn: Array1<f64>,
    pub fc1: Array1<f64>,
    pub fc2: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Gcn,
    Fc1,
    Fc2,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Gcn, Layer::Fc1, Layer::Fc2];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Gcn => "gcn",
            Layer::Fc1 => "fc1",
            Layer::Fc2 => "fc2",
        }
    }
}

impl std::str::FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Layer::Gcn),
            "fc1" => Ok(Layer::Fc1),
            "fc2" => Ok(Layer::Fc2),
            other => Err(Error::Config(format!("unknown layer {other:?}"))),
        }
    }
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Label,
    Site,
}

impl Grouping {
    pub const ALL: [Grouping; 2] = [Grouping::Label, Grouping::Site];

    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Label => "label",
            Grouping::Site => "site",
        }
    }

    fn key(self, record: &EmbeddingRecord) -> String {
        match self {
            Grouping::Label => record.label.to_string(),
            Grouping::Site => record.site.clone(),
        }
    }
}

impl std::fmt::Display for Grouping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Run every sample through the model and capture its three embeddings.
pub fn extract_embeddings(
    params: &ModelParams,
    samples: &[SubjectSample],
) -> Result<Vec<EmbeddingRecord>> {
    samples
        .par_iter()
        .map(|sample| {
            let trace = forward(sample, params)?;
            Ok(EmbeddingRecord {
                subject_id: sample.id.clone(),
                site: sample.site.clone(),
                label: sample.label,
                gcn: trace.gcn_embedding,
                fc1: trace.fc1_act,
                fc2: trace.logits,
            })
        })
        .collect()
}

/// PCA fitted by eigendecomposition of the sample covariance. Components are
/// rows, orthonormal, ordered by descending explained variance, with the
/// largest-magnitude loading of each component made positive.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

pub fn fit_pca(x: &Array2<f64>, k: usize) -> Result<PcaModel> {
    let (m, d) = (x.nrows(), x.ncols());
    if m < 2 {
        return Err(Error::Inspection(format!("PCA needs at least 2 rows, got {m}")));
    }
    if k == 0 || k > m.min(d) {
        return Err(Error::Inspection(format!(
            "component count {k} out of range [1, {}]",
            m.min(d)
        )));
    }

    let mean = x.mean_axis(Axis(0)).expect("m >= 2");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (m - 1) as f64;

    let sym = DMatrix::from_fn(d, d, |r, c| cov[(r, c)]);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });

    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let mut components = Array2::zeros((k, d));
    let mut explained = Vec::with_capacity(k);
    for (row, &src) in order.iter().take(k).enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut max_idx = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[max_idx].abs() {
                max_idx = i;
            }
        }
        let sign = if col[max_idx] < 0.0 { -1.0 } else { 1.0 };
        for (i, v) in col.iter().enumerate() {
            components[(row, i)] = sign * v;
        }
        let lambda = eig.eigenvalues[src].max(0.0);
        explained.push(if total > 0.0 { lambda / total } else { 0.0 });
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained,
    })
}

/// Project rows of `x` onto the fitted components: `(x - mean) * C^T`.
pub fn project(model: &PcaModel, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.mean.len() {
        return Err(Error::Inspection(format!(
            "data has {} columns, model expects {}",
            x.ncols(),
            model.mean.len()
        )));
    }
    Ok((x - &model.mean).dot(&model.components.t()))
}

/// Mean silhouette over all points with Euclidean distances; singleton
/// clusters contribute 0. Needs at least two distinct groups.
pub fn silhouette(points: &Array2<f64>, groups: &[usize]) -> Result<f64> {
    let m = points.nrows();
    if groups.len() != m {
        return Err(Error::Inspection(format!(
            "{m} points vs {} group assignments",
            groups.len()
        )));
    }
    let mut distinct: Vec<usize> = groups.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Inspection(
            "silhouette needs at least two groups".into(),
        ));
    }

    let dist = |a: usize, b: usize| -> f64 {
        (&points.row(a) - &points.row(b)).mapv(|x| x * x).sum().sqrt()
    };

    let sizes: BTreeMap<usize, usize> = distinct
        .iter()
        .map(|&g| (g, groups.iter().filter(|&&x| x == g).count()))
        .collect();

    let scores: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            if sizes[&groups[i]] == 1 {
                return 0.0;
            }
            let mut sums: BTreeMap<usize, f64> = distinct.iter().map(|&g| (g, 0.0)).collect();
            for (j, group) in groups.iter().enumerate() {
                if j != i {
                    *sums.get_mut(group).expect("known group") += dist(i, j);
                }
            }
            let a = sums[&groups[i]] / (sizes[&groups[i]] - 1) as f64;
            let b = distinct
                .iter()
                .filter(|&&g| g != groups[i])
                .map(|&g| sums[&g] / sizes[&g] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();

    Ok(scores.iter().sum::<f64>() / m as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeparabilityReport {
    pub layer: Layer,
    pub grouping: Grouping,
    pub silhouette_2d: f64,
    pub silhouette_full: f64,
    pub explained_variance: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ScatterRow {
    pub subject_id: String,
    pub site: String,
    pub label: u8,
    pub layer: Layer,
    pub pc1: f64,
    pub pc2: f64,
}

pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let mut out = String::from("subject_id,site,label,layer,pc1,pc2\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.subject_id, r.site, r.label, r.layer, r.pc1, r.pc2
        ));
    }
    out
}

/// Cap each group at `sample_cap` records (seeded sampling), fit a pooled
/// 2-component PCA on the capped set (fc2 is used raw: it is already 2-D),
/// and measure silhouette separability on the 2D projection and on the
/// full-dimensional embedding.
pub fn separability_report(
    records: &[EmbeddingRecord],
    layer: Layer,
    grouping: Grouping,
    sample_cap: usize,
    seed: u64,
) -> Result<(SeparabilityReport, Vec<ScatterRow>)> {
    if sample_cap == 0 {
        return Err(Error::Inspection("sample_cap must be positive".into()));
    }
    let mut by_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_group.entry(grouping.key(r)).or_default().push(i);
    }
    if by_group.len() < 2 {
        return Err(Error::Inspection(format!(
            "separability by {grouping} needs at least two groups, found {}",
            by_group.len()
        )));
    }
    for (key, members) in &by_group {
        if members.len() < 2 {
            return Err(Error::Inspection(format!(
                "group {key:?} has fewer than 2 members"
            )));
        }
    }

    let mut selected: Vec<usize> = Vec::new();
    let mut group_ids: Vec<usize> = Vec::new();
    for (gid, (key, members)) in by_group.iter().enumerate() {
        let take: Vec<usize> = if members.len() > sample_cap {
            let mut rng = stream(seed, &format!("inspect/{grouping}/{key}"));
            let mut picks = rand::seq::index::sample(&mut rng, members.len(), sample_cap).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|p| members[p]).collect()
        } else {
            members.clone()
        };
        group_ids.extend(std::iter::repeat_n(gid, take.len()));
        selected.extend(take);
    }

    let embedding = |i: usize| -> &Array1<f64> {
        let r = &records[i];
        match layer {
            Layer::Gcn => &r.gcn,
            Layer::Fc1 => &r.fc1,
            Layer::Fc2 => &r.fc2,
        }
    };
    let dim = embedding(selected[0]).len();
    let mut full = Array2::zeros((selected.len(), dim));
    for (row, &i) in selected.iter().enumerate() {
        full.row_mut(row).assign(embedding(i));
    }

    let (coords, explained) = if layer == Layer::Fc2 {
        (full.clone(), Vec::new())
    } else {
        let pca = fit_pca(&full, 2)?;
        (project(&pca, &full)?, pca.explained_variance.clone())
    };

    let silhouette_2d = silhouette(&coords, &group_ids)?;
    let silhouette_full = silhouette(&full, &group_ids)?;

    let rows = selected
        .iter()
        .enumerate()
        .map(|(row, &i)| ScatterRow {
            subject_id: records[i].subject_id.clone(),
            site: records[i].site.clone(),
            label: records[i].label,
            layer,
            pc1: coords[(row, 0)],
            pc2: coords[(row, 1)],
        })
        .collect();

    Ok((
        SeparabilityReport {
            layer,
            grouping,
            silhouette_2d,
            silhouette_full,
            explained_variance: explained,
        },
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{init_params, ModelConfig, SubmodelMode};
    use crate::synthgen::icosphere;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn record(id: usize, site: &str, label: u8, v: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            subject_id: format!("s{id:04}"),
            site: site.into(),
            label,
            gcn: Array1::from_vec(v.clone()),
            fc1: Array1::from_vec(v.clone()),
            fc2: Array1::from_vec(v[..2].to_vec()),
        }
    }

    #[test]
    fn rank_one_data_explained_by_first_mode() {
        let mut rng = crate::rng::stream(1, "test/pca-line");
        let dir = [0.3, -0.6, 0.9];
        let rows: Vec<f64> = (0..50)
            .flat_map(|_| {
                let t: f64 = rng.random_range(-5.0..5.0);
                dir.iter().map(move |d| d * t)
            })
            .collect();
        let x = Array2::from_shape_vec((50, 3), rows).unwrap();
        let pca = fit_pca(&x, 2).unwrap();
        assert!(pca.explained_variance[0] >= 0.999999);
    }

    #[test]
    fn isotropic_gaussian_splits_variance_evenly() {
        let mut rng = crate::rng::stream(2, "test/pca-iso");
        let gauss = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<f64> = (0..2 * 10_000)
            .map(|_| rand_distr::Distribution::sample(&gauss, &mut rng))
            .collect();
        let x = Array2::from_shape_vec((10_000, 2), rows).unwrap();
        let pca = fit_pca(&x, 2).unwrap();
        for frac in &pca.explained_variance {
            assert!((0.45..=0.55).contains(frac), "fraction {frac}");
        }
    }

    #[test]
    fn full_rank_projection_reconstructs() {
        let mut rng = crate::rng::stream(3, "test/pca-recon");
        let rows: Vec<f64> = (0..40 * 5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Array2::from_shape_vec((40, 5), rows).unwrap();
        let pca = fit_pca(&x, 5).unwrap();
        let coords = project(&pca, &x).unwrap();
        let reconstructed = coords.dot(&pca.components) + &pca.mean;
        let max_dev = (&reconstructed - &x).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(max_dev < 1e-9, "max deviation {max_dev}");
    }

    #[test]
    fn components_are_orthonormal_and_fractions_bounded() {
        let mut rng = crate::rng::stream(4, "test/pca-ortho");
        let rows: Vec<f64> = (0..60 * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Array2::from_shape_vec((60, 7), rows).unwrap();
        let pca = fit_pca(&x, 4).unwrap();
        let gram = pca.components.dot(&pca.components.t());
        for r in 0..4 {
            for c in 0..4 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((gram[(r, c)] - expect).abs() < 1e-9);
            }
        }
        let sum: f64 = pca.explained_variance.iter().sum();
        assert!(sum <= 1.0 + 1e-9);
        for w in pca.explained_variance.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }

    #[test]
    fn k_out_of_range_is_an_error() {
        let x = Array2::zeros((3, 4));
        assert!(fit_pca(&x, 0).is_err());
        assert!(fit_pca(&x, 4).is_err()); // k > m
    }

    #[test]
    fn projection_basics() {
        let mut rng = crate::rng::stream(5, "test/project");
        let rows: Vec<f64> = (0..30 * 4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = Array2::from_shape_vec((30, 4), rows).unwrap();
        let pca = fit_pca(&x, 2).unwrap();

        let mean_row = pca.mean.clone().insert_axis(Axis(0));
        let origin = project(&pca, &mean_row).unwrap();
        assert!(origin.iter().all(|v| v.abs() < 1e-9));

        let shift = Array1::from_vec(vec![0.5, -1.0, 2.0, 0.25]);
        let shifted = &x + &shift;
        let base = project(&pca, &x).unwrap();
        let moved = project(&pca, &shifted).unwrap();
        let expected_delta = pca.components.dot(&shift);
        for r in 0..30 {
            for c in 0..2 {
                assert_relative_eq!(
                    moved[(r, c)] - base[(r, c)],
                    expected_delta[c],
                    epsilon = 1e-9
                );
            }
        }

        let var = |col: ndarray::ArrayView1<f64>| {
            let mu = col.mean().unwrap();
            col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (col.len() - 1) as f64
        };
        assert!(var(base.column(0)) >= var(base.column(1)));
    }

    #[test]
    fn separated_clusters_have_high_silhouette() {
        let mut rng = crate::rng::stream(6, "test/sil-clusters");
        let mut rows = Vec::new();
        let mut groups = Vec::new();
        for g in 0..2 {
            for _ in 0..20 {
                rows.push(g as f64 + rng.random_range(-1e-3..1e-3));
                rows.push(rng.random_range(-1e-3..1e-3));
                groups.push(g);
            }
        }
        let points = Array2::from_shape_vec((40, 2), rows).unwrap();
        let s = silhouette(&points, &groups).unwrap();
        assert!(s > 0.95, "silhouette {s}");
    }

    #[test]
    fn random_split_of_one_cloud_is_near_zero() {
        let mut rng = crate::rng::stream(7, "test/sil-null");
        let rows: Vec<f64> = (0..200 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let points = Array2::from_shape_vec((200, 3), rows).unwrap();
        let groups: Vec<usize> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let s = silhouette(&points, &groups).unwrap();
        assert!(s.abs() <= 0.1, "silhouette {s}");
    }

    #[test]
    fn silhouette_is_rigid_invariant() {
        let mut rng = crate::rng::stream(8, "test/sil-rigid");
        let rows: Vec<f64> = (0..60 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let points = Array2::from_shape_vec((60, 3), rows).unwrap();
        let groups: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let base = silhouette(&points, &groups).unwrap();

        let rot = crate::registration::test_support::random_rotation(&mut rng);
        let shift = nalgebra::Vector3::new(5.0, -2.0, 9.0);
        let mut moved = points.clone();
        for mut row in moved.rows_mut() {
            let v = nalgebra::Vector3::new(row[0], row[1], row[2]);
            let m = rot * v + shift;
            row[0] = m.x;
            row[1] = m.y;
            row[2] = m.z;
        }
        let after = silhouette(&moved, &groups).unwrap();
        assert_relative_eq!(base, after, epsilon = 1e-9);
    }

    #[test]
    fn single_group_is_an_error() {
        let points = Array2::zeros((5, 2));
        assert!(silhouette(&points, &[0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn capping_samples_exactly_and_deterministically() {
        let mut rng = crate::rng::stream(9, "test/cap");
        let mut records = Vec::new();
        for i in 0..600 {
            records.push(record(
                i,
                "alpha",
                (i % 2) as u8,
                vec![rng.random_range(-1.0..1.0); 4],
            ));
        }
        for i in 600..640 {
            records.push(record(i, "beta", (i % 2) as u8, vec![rng.random_range(-1.0..1.0); 4]));
        }
        let (_, rows_a) =
            separability_report(&records, Layer::Gcn, Grouping::Site, 500, 42).unwrap();
        let (_, rows_b) =
            separability_report(&records, Layer::Gcn, Grouping::Site, 500, 42).unwrap();
        let alpha_count = rows_a.iter().filter(|r| r.site == "alpha").count();
        assert_eq!(alpha_count, 500);
        assert_eq!(rows_a.iter().filter(|r| r.site == "beta").count(), 40);
        let ids_a: Vec<_> = rows_a.iter().map(|r| r.subject_id.clone()).collect();
        let ids_b: Vec<_> = rows_b.iter().map(|r| r.subject_id.clone()).collect();
        assert_eq!(ids_a, ids_b);

        let (_, rows_c) =
            separability_report(&records, Layer::Gcn, Grouping::Site, 500, 43).unwrap();
        let ids_c: Vec<_> = rows_c.iter().map(|r| r.subject_id.clone()).collect();
        assert_ne!(ids_a, ids_c);
    }

    #[test]
    fn fewer_than_two_groups_is_an_error() {
        let records: Vec<EmbeddingRecord> =
            (0..10).map(|i| record(i, "only", 1, vec![0.0; 4])).collect();
        assert!(separability_report(&records, Layer::Gcn, Grouping::Label, 500, 0).is_err());
        assert!(separability_report(&records, Layer::Gcn, Grouping::Site, 500, 0).is_err());
    }

    #[test]
    fn fc2_uses_raw_coordinates() {
        let mut rng = crate::rng::stream(10, "test/fc2-raw");
        let records: Vec<EmbeddingRecord> = (0..20)
            .map(|i| {
                record(
                    i,
                    if i % 2 == 0 { "a" } else { "b" },
                    (i % 2) as u8,
                    vec![
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        0.0,
                        0.0,
                    ],
                )
            })
            .collect();
        let (report, rows) =
            separability_report(&records, Layer::Fc2, Grouping::Label, 500, 0).unwrap();
        assert!(report.explained_variance.is_empty());
        for row in &rows {
            let rec = records
                .iter()
                .find(|r| r.subject_id == row.subject_id)
                .unwrap();
            assert_eq!(row.pc1, rec.fc2[0]);
            assert_eq!(row.pc2, rec.fc2[1]);
        }
        assert_relative_eq!(report.silhouette_2d, report.silhouette_full);
    }

    #[test]
    fn extraction_consistency() {
        let cfg = ModelConfig {
            n_structures: 2,
            ..Default::default()
        };
        let params = init_params(&cfg, SubmodelMode::Shared, 5);
        let mesh = icosphere(0).unwrap();
        let make = |id: usize, zero: bool| -> SubjectSample {
            let mut rng = crate::rng::stream(id as u64, "test/extract");
            let feats: Vec<Array2<f64>> = (0..2)
                .map(|_| {
                    if zero {
                        Array2::zeros((mesh.n_vertices(), cfg.in_dim))
                    } else {
                        Array2::from_shape_fn((mesh.n_vertices(), cfg.in_dim), |_| {
                            rng.random_range(-1.0..1.0)
                        })
                    }
                })
                .collect();
            SubjectSample {
                id: format!("s{id:04}"),
                site: "alpha".into(),
                label: (id % 2) as u8,
                meshes: vec![mesh.clone(), mesh.clone()],
                features: Some(feats),
            }
        };
        let samples: Vec<SubjectSample> = vec![make(0, true), make(1, false), make(2, false)];
        let records = extract_embeddings(&params, &samples).unwrap();
        assert!(records[0].gcn.iter().all(|&x| x == 0.0));
        assert_eq!(records[0].gcn.len(), cfg.embedding_dim());
        assert_eq!(records[0].fc1.len(), cfg.hidden_dim);
        assert_eq!(records[0].fc2.len(), cfg.n_classes);

        // fc2 embedding equals the classification logits.
        let trace = forward(&samples[1], &params).unwrap();
        assert_eq!(records[1].fc2, trace.logits);

        // Records do not depend on pass order.
        let mut reversed = samples.clone();
        reversed.reverse();
        let rev_records = extract_embeddings(&params, &reversed).unwrap();
        assert_eq!(records[2].gcn, rev_records[0].gcn);
        assert_eq!(records[0].gcn, rev_records[2].gcn);
    }
}
