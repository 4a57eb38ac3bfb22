//! FPFH node descriptors: 33 features per vertex.
//!
//! For every vertex, angular relations to its radius neighbors are expressed
//! in a local Darboux frame and histogrammed (11 bins per angle). A first
//! pass produces the per-vertex SPFH; a second pass distance-weights the
//! neighbors' SPFH into the final FPFH. The descriptor depends only on
//! intrinsic geometry, so it is invariant under rigid motion.

use std::f64::consts::PI;

use nalgebra::Vector3;
use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, VertexNormals};

pub const ANGLE_BINS: usize = 11;
pub const FPFH_WIDTH: usize = 3 * ANGLE_BINS;

/// Two vertices closer than this are treated as coincident.
const MIN_POINT_SEPARATION: f64 = 1e-12;

/// Angular relations of one point pair in the Darboux frame of the source
/// point, plus the pair distance. `alpha` and `phi` are cosines in [-1, 1];
/// `theta` is in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarbouxAngles {
    pub alpha: f64,
    pub phi: f64,
    pub theta: f64,
    pub d: f64,
}

/// Compute the Darboux-frame angles for a point pair. The pair is reordered
/// internally so that the source is the point whose normal deviates less
/// from the connecting line, making the result independent of argument
/// order. Normals must be unit length.
pub fn darboux_angles(
    p_s: &Vector3<f64>,
    n_s: &Vector3<f64>,
    p_t: &Vector3<f64>,
    n_t: &Vector3<f64>,
) -> Result<DarbouxAngles> {
    let delta = p_t - p_s;
    let d = delta.norm();
    if d < MIN_POINT_SEPARATION {
        return Err(Error::Features(format!(
            "coincident points (separation {d:.3e}); cannot build a Darboux frame"
        )));
    }
    let dir = delta / d;

    let (u, n_other, dir) = if n_s.dot(&dir).abs() >= n_t.dot(&dir).abs() {
        (*n_s, *n_t, dir)
    } else {
        (*n_t, *n_s, -dir)
    };

    let v = u.cross(&dir);
    let w = u.cross(&v);
    Ok(DarbouxAngles {
        alpha: v.dot(&n_other),
        phi: u.dot(&dir),
        theta: w.dot(&n_other).atan2(u.dot(&n_other)),
        d,
    })
}

/// Bin index in `[0, ANGLE_BINS)` for a value on `[lo, hi]`, upper edge
/// inclusive. Values squeezed marginally outside by rounding are clamped.
fn bin_index(x: f64, lo: f64, hi: f64) -> usize {
    let t = (x - lo) / (hi - lo) * ANGLE_BINS as f64;
    (t.floor() as isize).clamp(0, ANGLE_BINS as isize - 1) as usize
}

/// Default neighborhood radius: 2.5x the mean edge length, adapting the
/// neighborhood to the mesh resolution.
pub fn default_radius(mesh: &Mesh) -> f64 {
    2.5 * mesh.mean_edge_length()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusPolicy {
    Auto,
    Fixed(f64),
}

impl RadiusPolicy {
    pub fn resolve(&self, mesh: &Mesh) -> f64 {
        match self {
            RadiusPolicy::Auto => default_radius(mesh),
            RadiusPolicy::Fixed(r) => *r,
        }
    }
}

impl std::str::FromStr for RadiusPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(RadiusPolicy::Auto);
        }
        let value: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("radius must be `auto` or a number, got {s:?}")))?;
        if value <= 0.0 || !value.is_finite() {
            return Err(Error::Config(format!("radius must be positive, got {value}")));
        }
        Ok(RadiusPolicy::Fixed(value))
    }
}

impl std::fmt::Display for RadiusPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RadiusPolicy::Auto => write!(f, "auto"),
            RadiusPolicy::Fixed(r) => write!(f, "{r}"),
        }
    }
}

fn radius_neighbors(mesh: &Mesh, radius: f64) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = mesh.n_vertices();
    let vertices = mesh.vertices();
    let r2 = radius * radius;
    let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = (vertices[i] - vertices[j]).norm_squared();
            if d2 <= r2 {
                let d = d2.sqrt();
                if d < MIN_POINT_SEPARATION {
                    return Err(Error::Features(format!(
                        "vertices {i} and {j} occupy the same position; refusing to weight by zero distance"
                    )));
                }
                neighbors[i].push((j, d));
                neighbors[j].push((i, d));
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable_by_key(|&(idx, _)| idx);
    }

    let isolated: Vec<usize> = neighbors
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_empty())
        .map(|(i, _)| i)
        .collect();
    if !isolated.is_empty() {
        return Err(Error::Features(format!(
            "{} vertices have no neighbor within radius {radius}: {:?}",
            isolated.len(),
            &isolated[..isolated.len().min(16)]
        )));
    }
    Ok(neighbors)
}

fn compute_spfh(
    mesh: &Mesh,
    normals: &VertexNormals,
    neighbors: &[Vec<(usize, f64)>],
) -> Result<Vec<[f64; FPFH_WIDTH]>> {
    let vertices = mesh.vertices();
    (0..mesh.n_vertices())
        .into_par_iter()
        .map(|i| {
            let mut hist = [0.0f64; FPFH_WIDTH];
            for &(j, _) in &neighbors[i] {
                let ang = darboux_angles(&vertices[i], &normals.get(i), &vertices[j], &normals.get(j))?;
                hist[bin_index(ang.alpha, -1.0, 1.0)] += 1.0;
                hist[ANGLE_BINS + bin_index(ang.phi, -1.0, 1.0)] += 1.0;
                hist[2 * ANGLE_BINS + bin_index(ang.theta, -PI, PI)] += 1.0;
            }
            // Percentage normalization: each 11-bin sub-histogram sums to 100.
            let scale = 100.0 / neighbors[i].len() as f64;
            for v in &mut hist {
                *v *= scale;
            }
            Ok(hist)
        })
        .collect()
}

/// Two-pass FPFH over radius neighborhoods:
/// `FPFH(p) = SPFH(p) + (1/k) * sum_q SPFH(q) / ||p - q||`.
/// Errors if any vertex is isolated at the given radius or if two vertices
/// coincide. Output is `n x 33`.
pub fn compute_fpfh(mesh: &Mesh, normals: &VertexNormals, radius: f64) -> Result<Array2<f64>> {
    if radius <= 0.0 || !radius.is_finite() {
        return Err(Error::Features(format!("radius must be positive, got {radius}")));
    }
    if normals.len() != mesh.n_vertices() {
        return Err(Error::Features(format!(
            "normal count {} does not match vertex count {}",
            normals.len(),
            mesh.n_vertices()
        )));
    }

    let neighbors = radius_neighbors(mesh, radius)?;
    let spfh = compute_spfh(mesh, normals, &neighbors)?;

    let rows: Vec<[f64; FPFH_WIDTH]> = (0..mesh.n_vertices())
        .into_par_iter()
        .map(|i| {
            let mut row = spfh[i];
            let k = neighbors[i].len() as f64;
            for &(j, d) in &neighbors[i] {
                let w = 1.0 / (k * d);
                for (out, q) in row.iter_mut().zip(&spfh[j]) {
                    *out += w * q;
                }
            }
            row
        })
        .collect();

    let mut out = Array2::zeros((mesh.n_vertices(), FPFH_WIDTH));
    for (i, row) in rows.iter().enumerate() {
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
    }
    Ok(out)
}
