//! Python bindings for the mesh-graph classification pipeline: mesh
//! construction and I/O, vertex normals, FPFH descriptors, rigid
//! registration, ROC/AUC, PCA, and silhouette scoring.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use meshgnn::features::{self, RadiusPolicy};
use meshgnn::inspection;
use meshgnn::mesh::{self, MeshFormat};
use meshgnn::registration;
use meshgnn::synthgen;

fn err(e: meshgnn::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_points(rows: Vec<[f64; 3]>) -> Vec<Vector3<f64>> {
    rows.into_iter().map(Vector3::from).collect()
}

fn from_points(points: &[Vector3<f64>]) -> Vec<[f64; 3]> {
    points.iter().map(|v| [v.x, v.y, v.z]).collect()
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(n * width);
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != width {
            return Err(PyValueError::new_err(format!(
                "row {i} has {} values, expected {width}",
                row.len()
            )));
        }
        data.extend(row);
    }
    Array2::from_shape_vec((n, width), data)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_matrix(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Validated triangular surface mesh.
#[pyclass(name = "Mesh", skip_from_py_object)]
#[derive(Clone)]
struct PyMesh {
    inner: mesh::Mesh,
}

#[pymethods]
impl PyMesh {
    #[new]
    fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> PyResult<Self> {
        Ok(PyMesh {
            inner: mesh::Mesh::new(to_points(vertices), faces).map_err(err)?,
        })
    }

    /// Unit icosphere by recursive subdivision, level in [0, 5].
    #[staticmethod]
    fn icosphere(level: usize) -> PyResult<Self> {
        Ok(PyMesh {
            inner: synthgen::icosphere(level).map_err(err)?,
        })
    }

    /// Load an `.off` or `.json` mesh (format inferred from the extension).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let format = MeshFormat::from_path(std::path::Path::new(path)).map_err(err)?;
        Ok(PyMesh {
            inner: mesh::load_mesh(path, format).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let format = MeshFormat::from_path(std::path::Path::new(path)).map_err(err)?;
        mesh::save_mesh(&self.inner, path, format).map_err(err)
    }

    fn vertices(&self) -> Vec<[f64; 3]> {
        from_points(self.inner.vertices())
    }

    fn faces(&self) -> Vec<[usize; 3]> {
        self.inner.faces().to_vec()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    #[getter]
    fn n_vertices(&self) -> usize {
        self.inner.n_vertices()
    }

    #[getter]
    fn n_faces(&self) -> usize {
        self.inner.n_faces()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    fn directed_edge_count(&self) -> usize {
        self.inner.directed_edge_count()
    }

    fn mean_edge_length(&self) -> f64 {
        self.inner.mean_edge_length()
    }

    fn centroid(&self) -> [f64; 3] {
        let c = self.inner.centroid();
        [c.x, c.y, c.z]
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(n_vertices={}, n_faces={}, n_edges={})",
            self.inner.n_vertices(),
            self.inner.n_faces(),
            self.inner.n_edges()
        )
    }
}

/// Proper rigid transform (rotation + translation).
#[pyclass(name = "RigidTransform", skip_from_py_object)]
#[derive(Clone)]
struct PyRigidTransform {
    inner: registration::RigidTransform,
}

#[pymethods]
impl PyRigidTransform {
    #[new]
    fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> PyResult<Self> {
        let xf = registration::RigidTransform {
            rotation: Matrix3::from_fn(|r, c| rotation[r][c]),
            translation: Vector3::from(translation),
        };
        xf.validate(1e-6).map_err(err)?;
        Ok(PyRigidTransform { inner: xf })
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = &self.inner.rotation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ]
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        let t = &self.inner.translation;
        [t.x, t.y, t.z]
    }

    fn apply(&self, points: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        points
            .into_iter()
            .map(|p| {
                let q = self.inner.apply_point(&Vector3::from(p));
                [q.x, q.y, q.z]
            })
            .collect()
    }

    fn inverse(&self) -> Self {
        PyRigidTransform {
            inner: self.inner.inverse(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "RigidTransform(translation={:?})",
            self.translation()
        )
    }
}

/// Per-vertex outward unit normals.
#[pyfunction]
fn vertex_normals(mesh: &PyMesh) -> PyResult<Vec<[f64; 3]>> {
    let normals = mesh::vertex_normals(&mesh.inner).map_err(err)?;
    Ok(from_points(normals.normals()))
}

/// Scale-adaptive default FPFH radius (2.5x mean edge length).
#[pyfunction]
fn default_radius(mesh: &PyMesh) -> f64 {
    features::default_radius(&mesh.inner)
}

/// 33-wide FPFH node descriptors; radius defaults to 2.5x mean edge length.
#[pyfunction]
#[pyo3(signature = (mesh, radius=None))]
fn compute_fpfh(mesh: &PyMesh, radius: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let normals = mesh::vertex_normals(&mesh.inner).map_err(err)?;
    let radius = radius
        .map(RadiusPolicy::Fixed)
        .unwrap_or(RadiusPolicy::Auto)
        .resolve(&mesh.inner);
    let feats = features::compute_fpfh(&mesh.inner, &normals, radius).map_err(err)?;
    Ok(from_matrix(&feats))
}

/// Least-squares rigid alignment of corresponded point sets
/// (`target[i] ~ R * source[i] + t`).
#[pyfunction]
fn umeyama_rigid(source: Vec<[f64; 3]>, target: Vec<[f64; 3]>) -> PyResult<PyRigidTransform> {
    let xf = registration::umeyama_rigid(&to_points(source), &to_points(target)).map_err(err)?;
    Ok(PyRigidTransform { inner: xf })
}

/// Apply a rigid transform to every vertex of a mesh.
#[pyfunction]
fn apply_transform(mesh: &PyMesh, transform: &PyRigidTransform) -> PyMesh {
    PyMesh {
        inner: registration::apply_transform(&mesh.inner, &transform.inner),
    }
}

/// ROC curve and trapezoidal AUC; returns `(auc, thresholds, fpr, tpr)`.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let roc = meshgnn::evaluation::roc_auc(&scores, &labels).map_err(err)?;
    Ok((roc.auc, roc.thresholds, roc.fpr, roc.tpr))
}

/// PCA by covariance eigendecomposition; returns
/// `(components, mean, explained_variance)` with components as rows.
#[pyfunction]
fn fit_pca(x: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let model = inspection::fit_pca(&to_matrix(x)?, k).map_err(err)?;
    Ok((
        from_matrix(&model.components),
        model.mean.to_vec(),
        model.explained_variance.clone(),
    ))
}

/// Project rows onto fitted PCA components: `(x - mean) @ components.T`.
#[pyfunction]
fn pca_project(
    x: Vec<Vec<f64>>,
    components: Vec<Vec<f64>>,
    mean: Vec<f64>,
) -> PyResult<Vec<Vec<f64>>> {
    let components = to_matrix(components)?;
    let model = inspection::PcaModel {
        mean: ndarray::Array1::from_vec(mean),
        explained_variance: vec![0.0; components.nrows()],
        components,
    };
    let coords = inspection::project(&model, &to_matrix(x)?).map_err(err)?;
    Ok(from_matrix(&coords))
}

/// Mean silhouette score of grouped points (Euclidean distances).
#[pyfunction]
fn silhouette_score(points: Vec<Vec<f64>>, groups: Vec<usize>) -> PyResult<f64> {
    inspection::silhouette(&to_matrix(points)?, &groups).map_err(err)
}

#[pymodule]
fn meshgnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyRigidTransform>()?;
    m.add_function(wrap_pyfunction!(vertex_normals, m)?)?;
    m.add_function(wrap_pyfunction!(default_radius, m)?)?;
    m.add_function(wrap_pyfunction!(compute_fpfh, m)?)?;
    m.add_function(wrap_pyfunction!(umeyama_rigid, m)?)?;
    m.add_function(wrap_pyfunction!(apply_transform, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(fit_pca, m)?)?;
    m.add_function(wrap_pyfunction!(pca_project, m)?)?;
    m.add_function(wrap_pyfunction!(silhouette_score, m)?)?;
    Ok(())
}
