//! Closed-form rigid alignment of index-corresponded point sets.
//!
//! The solver minimizes the sum of squared distances between corresponded
//! points over proper rigid transforms (rotation + translation, scale fixed
//! to 1). Reflections are rejected by the determinant sign correction.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct RigidTransformJson {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.transpose();
        RigidTransform {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// Check that the rotation block is a proper rotation
    /// (orthonormal within `tol`, determinant +1 within `tol`).
    pub fn validate(&self, tol: f64) -> Result<()> {
        let gram = self.rotation.transpose() * self.rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > tol {
            return Err(Error::Registration(format!(
                "rotation is not orthonormal (deviation {ortho_err:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::Registration(format!(
                "rotation determinant {det} is not +1; reflections are not rigid"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let raw = RigidTransformJson {
            rotation: [
                [self.rotation[(0, 0)], self.rotation[(0, 1)], self.rotation[(0, 2)]],
                [self.rotation[(1, 0)], self.rotation[(1, 1)], self.rotation[(1, 2)]],
                [self.rotation[(2, 0)], self.rotation[(2, 1)], self.rotation[(2, 2)]],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        };
        serde_json::to_string(&raw).expect("transform serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RigidTransformJson =
            serde_json::from_str(text).map_err(|e| Error::Registration(e.to_string()))?;
        let xf = RigidTransform {
            rotation: Matrix3::from_fn(|r, c| raw.rotation[r][c]),
            translation: Vector3::from_column_slice(&raw.translation),
        };
        xf.validate(1e-6)?;
        Ok(xf)
    }
}

/// Least-squares rigid alignment of `source` onto `target`
/// (`target[i] ~ R * source[i] + t`), solved in closed form via the SVD of
/// the cross-covariance between the centered point sets.
pub fn umeyama_rigid(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::Registration(format!(
            "point count mismatch: {} source vs {} target",
            source.len(),
            target.len()
        )));
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::Registration(format!(
            "at least 3 point pairs are required, got {n}"
        )));
    }

    let mu_s: Vector3<f64> = source.iter().sum::<Vector3<f64>>() / n as f64;
    let mu_t: Vector3<f64> = target.iter().sum::<Vector3<f64>>() / n as f64;

    let mut cross_cov = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        cross_cov += (t - mu_t) * (s - mu_s).transpose();
    }
    cross_cov /= n as f64;

    let svd = cross_cov.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let sv = svd.singular_values;
    // Singular values are sorted in decreasing order.
    if sv[1] <= sv[0].max(f64::MIN_POSITIVE) * 1e-9 {
        return Err(Error::Registration(
            "degenerate configuration: cross-covariance has rank < 2".into(),
        ));
    }

    let mut sign_fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        sign_fix[(2, 2)] = -1.0;
    }
    let rotation = u * sign_fix * v_t;
    let translation = mu_t - rotation * mu_s;
    Ok(RigidTransform { rotation, translation })
}

/// Map every vertex through `xf`; faces are untouched.
pub fn apply_transform(mesh: &Mesh, xf: &RigidTransform) -> Mesh {
    mesh.map_vertices(|v| xf.apply_point(v))
}

/// Reference choice for [`register_dataset`].
pub enum Reference<'a> {
    /// Use the mesh of the subject at this index as the reference.
    Subject(usize),
    /// Align to an explicit external mesh.
    Mesh(&'a Mesh),
}

/// Align every mesh of one structure to a common reference. All meshes must
/// be index-corresponded (equal vertex counts). The reference subject itself
/// maps through the identity.
pub fn register_dataset(
    meshes: &[Mesh],
    reference: Reference<'_>,
) -> Result<(Vec<Mesh>, Vec<RigidTransform>)> {
    if meshes.is_empty() {
        return Err(Error::Registration("empty dataset".into()));
    }
    let (ref_vertices, ref_index) = match reference {
        Reference::Subject(idx) => {
            let mesh = meshes.get(idx).ok_or_else(|| {
                Error::Registration(format!(
                    "reference index {idx} out of range for {} meshes",
                    meshes.len()
                ))
            })?;
            (mesh.vertices().to_vec(), Some(idx))
        }
        Reference::Mesh(mesh) => (mesh.vertices().to_vec(), None),
    };

    let n = ref_vertices.len();
    for (i, mesh) in meshes.iter().enumerate() {
        if mesh.n_vertices() != n {
            return Err(Error::Registration(format!(
                "mesh at index {i} has {} vertices, expected {n} (index correspondence broken)",
                mesh.n_vertices()
            )));
        }
    }

    let mut aligned = Vec::with_capacity(meshes.len());
    let mut transforms = Vec::with_capacity(meshes.len());
    for (i, mesh) in meshes.iter().enumerate() {
        let xf = if ref_index == Some(i) {
            RigidTransform::identity()
        } else {
            umeyama_rigid(mesh.vertices(), &ref_vertices)?
        };
        aligned.push(apply_transform(mesh, &xf));
        transforms.push(xf);
    }
    Ok((aligned, transforms))
}
