//! Triangular surface meshes: storage, validation, file I/O, vertex normals.
//!
//! A [`Mesh`] stores vertex coordinates (millimetres), counter-clockwise
//! triangle faces, and the undirected edge set derived from the faces. Edges
//! are stored once; adjacency consumers expand them to directed pairs.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Validated triangular mesh. Construction goes through [`Mesh::new`], which
/// checks face indices, rejects degenerate faces, derives the edge set, and
/// requires a single connected component.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    edges: Vec<(usize, usize)>,
    name: Option<String>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let edges = validate_and_build_edges(&vertices, &faces)?;
        Ok(Mesh {
            vertices,
            faces,
            edges,
            name: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    /// Rebuild with the same (already validated) topology and new coordinates.
    /// `f` maps each current vertex to its replacement.
    pub fn map_vertices(&self, mut f: impl FnMut(&Vector3<f64>) -> Vector3<f64>) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(&mut f).collect(),
            faces: self.faces.clone(),
            edges: self.edges.clone(),
            name: self.name.clone(),
        }
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Undirected edges as sorted `(lo, hi)` index pairs, lexicographically ordered.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Count of directed edge pairs (twice the undirected edge count).
    pub fn directed_edge_count(&self) -> usize {
        2 * self.edges.len()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let total: f64 = self
            .edges
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .sum();
        total / self.edges.len() as f64
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.vertices.iter().sum();
        sum / self.vertices.len() as f64
    }
}

fn validate_and_build_edges(
    vertices: &[Vector3<f64>],
    faces: &[[usize; 3]],
) -> Result<Vec<(usize, usize)>> {
    let n = vertices.len();
    if n == 0 {
        return Err(Error::InvalidMesh("mesh has no vertices".into()));
    }
    if faces.is_empty() {
        return Err(Error::InvalidMesh("mesh has no faces".into()));
    }
    for (fi, f) in faces.iter().enumerate() {
        for &v in f {
            if v >= n {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {v}, but mesh has only {n} vertices"
                )));
            }
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(Error::InvalidMesh(format!(
                "face {fi} is degenerate: indices {:?} are not distinct",
                f
            )));
        }
    }

    let mut edges: Vec<(usize, usize)> = faces
        .iter()
        .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
        .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
        .collect();
    edges.sort_unstable();
    edges.dedup();

    // Single connected component over the edge graph. This also guarantees
    // every vertex belongs to at least one face.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in &edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let root = find(&mut parent, 0);
    for v in 1..n {
        if find(&mut parent, v) != root {
            return Err(Error::InvalidMesh(format!(
                "mesh is disconnected: vertex {v} is not reachable from vertex 0"
            )));
        }
    }

    Ok(edges)
}

/// Per-vertex unit normals, consistently oriented outward.
#[derive(Debug, Clone)]
pub struct VertexNormals {
    normals: Vec<Vector3<f64>>,
}

impl VertexNormals {
    /// Wrap externally supplied normals; every row must be unit length.
    pub fn from_unit_vectors(normals: Vec<Vector3<f64>>) -> Result<Self> {
        for (i, n) in normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidMesh(format!(
                    "normal {i} has length {}, expected 1",
                    n.norm()
                )));
            }
        }
        Ok(VertexNormals { normals })
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn get(&self, vertex: usize) -> Vector3<f64> {
        self.normals[vertex]
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }
}

/// Weighted mean of incident face normals at every vertex, normalized to
/// unit length. Each face contributes its (unnormalized) corner normal
/// divided by the squared lengths of the two edges meeting at the vertex,
/// which reproduces exact normals for vertices sampled from a sphere and
/// stays accurate on the near-spherical meshes this pipeline handles.
/// The whole field is flipped if, on average, normals point against the
/// centroid-to-vertex directions (closed, near-star-shaped surfaces end up
/// outward regardless of face winding).
pub fn vertex_normals(mesh: &Mesh) -> Result<VertexNormals> {
    let n = mesh.n_vertices();
    let mut acc = vec![Vector3::zeros(); n];
    for &face in mesh.faces() {
        let corners = [
            mesh.vertices()[face[0]],
            mesh.vertices()[face[1]],
            mesh.vertices()[face[2]],
        ];
        for k in 0..3 {
            let e1 = corners[(k + 1) % 3] - corners[k];
            let e2 = corners[(k + 2) % 3] - corners[k];
            acc[face[k]] += e1.cross(&e2) / (e1.norm_squared() * e2.norm_squared());
        }
    }

    let mut normals = Vec::with_capacity(n);
    for (v, a) in acc.iter().enumerate() {
        let norm = a.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidMesh(format!(
                "vertex {v} accumulated a zero or non-finite normal"
            )));
        }
        normals.push(a / norm);
    }

    let centroid = mesh.centroid();
    let alignment: f64 = normals
        .iter()
        .zip(mesh.vertices())
        .map(|(nrm, v)| nrm.dot(&(v - centroid)))
        .sum();
    if alignment < 0.0 {
        for nrm in &mut normals {
            *nrm = -*nrm;
        }
    }

    Ok(VertexNormals { normals })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Json,
}

impl MeshFormat {
    /// Infer the format from a file extension (`.off` / `.json`).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("off") => Ok(MeshFormat::Off),
            Some(ext) if ext.eq_ignore_ascii_case("json") => Ok(MeshFormat::Json),
            other => Err(Error::parse(
                path,
                format!("cannot infer mesh format from extension {other:?}"),
            )),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MeshJson {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        MeshFormat::Off => parse_off(path, &text),
        MeshFormat::Json => {
            let raw: MeshJson = serde_json::from_str(&text)
                .map_err(|e| Error::parse(path, e.to_string()))?;
            let vertices = raw
                .vertices
                .into_iter()
                .map(|[x, y, z]| Vector3::new(x, y, z))
                .collect();
            let mesh = Mesh::new(vertices, raw.faces)?;
            Ok(match raw.name {
                Some(name) => mesh.with_name(name),
                None => mesh,
            })
        }
    }
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>, format: MeshFormat) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    match format {
        MeshFormat::Off => {
            writeln!(out, "OFF").unwrap();
            writeln!(out, "{} {} {}", mesh.n_vertices(), mesh.n_faces(), mesh.n_edges()).unwrap();
            for v in mesh.vertices() {
                writeln!(out, "{} {} {}", v.x, v.y, v.z).unwrap();
            }
            for f in mesh.faces() {
                writeln!(out, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
            }
        }
        MeshFormat::Json => {
            let raw = MeshJson {
                vertices: mesh.vertices().iter().map(|v| [v.x, v.y, v.z]).collect(),
                faces: mesh.faces().to_vec(),
                name: mesh.name().map(str::to_owned),
            };
            serde_json::to_writer(&mut out, &raw).expect("mesh serialization cannot fail");
            out.push(b'\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_off(path: &Path, text: &str) -> Result<Mesh> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace());

    match tokens.next() {
        Some("OFF") => {}
        other => return Err(Error::parse(path, format!("expected OFF header, got {other:?}"))),
    }
    let next_usize = |what: &str, tokens: &mut dyn Iterator<Item = &str>| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::parse(path, format!("unexpected end of file reading {what}")))?
            .parse()
            .map_err(|e| Error::parse(path, format!("bad {what}: {e}")))
    };
    let nv = next_usize("vertex count", &mut tokens)?;
    let nf = next_usize("face count", &mut tokens)?;
    let _ne = next_usize("edge count", &mut tokens)?;

    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let mut coord = [0.0f64; 3];
        for c in &mut coord {
            *c = tokens
                .next()
                .ok_or_else(|| Error::parse(path, format!("unexpected end of file in vertex {i}")))?
                .parse()
                .map_err(|e| Error::parse(path, format!("bad coordinate in vertex {i}: {e}")))?;
        }
        vertices.push(Vector3::new(coord[0], coord[1], coord[2]));
    }

    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let arity = next_usize(&format!("face {i} arity"), &mut tokens)?;
        if arity != 3 {
            return Err(Error::parse(
                path,
                format!("face {i} has {arity} vertices; only triangles are supported"),
            ));
        }
        let mut idx = [0usize; 3];
        for v in &mut idx {
            *v = next_usize(&format!("face {i} index"), &mut tokens)?;
        }
        faces.push(idx);
    }

    Mesh::new(vertices, faces)
}

/// Deduplicating builder used by subdivision and tests: merges exactly
/// coincident vertices while collecting faces.
pub(crate) struct MeshBuilder {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    index: HashMap<[u64; 3], usize>,
}

impl MeshBuilder {
    pub(crate) fn new() -> Self {
        MeshBuilder {
            vertices: Vec::new(),
            faces: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub(crate) fn vertex(&mut self, v: Vector3<f64>) -> usize {
        let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
        *self.index.entry(key).or_insert_with(|| {
            self.vertices.push(v);
            self.vertices.len() - 1
        })
    }

    pub(crate) fn face(&mut self, a: usize, b: usize, c: usize) {
        self.faces.push([a, b, c]);
    }

    pub(crate) fn build(self) -> Result<Mesh> {
        Mesh::new(self.vertices, self.faces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::icosphere;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use tempfile::tempdir;

    pub(crate) fn tetrahedron() -> Mesh {
        let vertices = vec![
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(1.0, -1.0, -1.0),
            Vector3::new(-1.0, 1.0, -1.0),
            Vector3::new(-1.0, -1.0, 1.0),
        ];
        let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        Mesh::new(vertices, faces).unwrap()
    }

    #[test]
    fn tetrahedron_off_has_six_edges() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tet.off");
        save_mesh(&tetrahedron(), &path, MeshFormat::Off).unwrap();
        let mesh = load_mesh(&path, MeshFormat::Off).unwrap();
        assert_eq!(mesh.n_vertices(), 4);
        assert_eq!(mesh.n_faces(), 4);
        assert_eq!(mesh.n_edges(), 6);
    }

    #[test]
    fn level3_icosphere_has_642_vertices() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ico3.json");
        save_mesh(&icosphere(3).unwrap(), &path, MeshFormat::Json).unwrap();
        let mesh = load_mesh(&path, MeshFormat::Json).unwrap();
        assert_eq!(mesh.n_vertices(), 642);
        assert_eq!(mesh.directed_edge_count(), 3840);
    }

    #[test]
    fn out_of_range_face_index_is_rejected() {
        let vertices: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 1.0)).collect();
        let err = Mesh::new(vertices, vec![[0, 1, 999]]).unwrap_err();
        assert!(matches!(err, Error::InvalidMesh(_)), "got {err:?}");
        assert!(err.to_string().contains("999"));
    }

    #[test]
    fn degenerate_face_is_rejected() {
        let vertices = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let err = Mesh::new(vertices, vec![[0, 1, 1]]).unwrap_err();
        assert!(err.to_string().contains("degenerate"));
    }

    #[test]
    fn disconnected_mesh_is_rejected() {
        let vertices: Vec<_> = (0..6).map(|i| Vector3::new(i as f64, (i % 3) as f64, 0.5)).collect();
        let err = Mesh::new(vertices, vec![[0, 1, 2], [3, 4, 5]]).unwrap_err();
        assert!(err.to_string().contains("disconnected"));
    }

    #[test]
    fn edge_set_ignores_face_order() {
        let base = tetrahedron();
        let mut faces = base.faces().to_vec();
        faces.reverse();
        let permuted = Mesh::new(base.vertices().to_vec(), faces).unwrap();
        assert_eq!(base.edges(), permuted.edges());
    }

    #[test]
    fn icosphere_normals_match_sphere_directions() {
        let mesh = icosphere(3).unwrap();
        let normals = vertex_normals(&mesh).unwrap();
        let max_angle_deg = mesh
            .vertices()
            .iter()
            .zip(normals.normals())
            .map(|(v, n)| n.dot(&v.normalize()).clamp(-1.0, 1.0).acos().to_degrees())
            .fold(0.0f64, f64::max);
        assert!(max_angle_deg < 0.1, "max angular error {max_angle_deg} deg");
    }

    #[test]
    fn planar_patch_normals_equal_plane_normal() {
        // Two triangles forming a square in the xy-plane. A lone planar patch
        // has zero alignment signal, so accept either consistent orientation.
        let vertices = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let mesh = Mesh::new(vertices, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        let normals = vertex_normals(&mesh).unwrap();
        let z = Vector3::new(0.0, 0.0, 1.0);
        let sign = normals.get(0).dot(&z).signum();
        for i in 0..4 {
            assert_relative_eq!(normals.get(i), sign * z, epsilon = 1e-12);
        }
    }

    #[test]
    fn inverted_winding_still_yields_outward_normals() {
        let mesh = icosphere(2).unwrap();
        let flipped = Mesh::new(
            mesh.vertices().to_vec(),
            mesh.faces().iter().map(|&[a, b, c]| [a, c, b]).collect(),
        )
        .unwrap();
        let normals = vertex_normals(&flipped).unwrap();
        let centroid = flipped.centroid();
        for (v, n) in flipped.vertices().iter().zip(normals.normals()) {
            assert!(n.dot(&(v - centroid)) > 0.0);
        }
    }

    #[test]
    fn normals_are_unit_length() {
        let normals = vertex_normals(&icosphere(2).unwrap()).unwrap();
        for n in normals.normals() {
            assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn normals_are_rotation_equivariant() {
        let mesh = icosphere(2).unwrap();
        let angle = 0.83f64;
        let rot = Matrix3::new(
            angle.cos(), -angle.sin(), 0.0,
            angle.sin(), angle.cos(), 0.0,
            0.0, 0.0, 1.0,
        );
        let rotated = mesh.map_vertices(|v| rot * v);
        let base = vertex_normals(&mesh).unwrap();
        let after = vertex_normals(&rotated).unwrap();
        for (n0, n1) in base.normals().iter().zip(after.normals()) {
            assert_relative_eq!(rot * n0, *n1, epsilon = 1e-9);
        }
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let mesh = icosphere(1).unwrap().map_vertices(|v| v * 1.2345678901234567);
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        save_mesh(&mesh, &p1, MeshFormat::Json).unwrap();
        let loaded = load_mesh(&p1, MeshFormat::Json).unwrap();
        save_mesh(&loaded, &p2, MeshFormat::Json).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(mesh.vertices(), loaded.vertices());
        assert_eq!(mesh.faces(), loaded.faces());
    }

    #[test]
    fn off_roundtrip_preserves_vertices_and_faces() {
        let dir = tempdir().unwrap();
        let mesh = icosphere(1).unwrap().map_vertices(|v| v * 0.987654321);
        let path = dir.path().join("m.off");
        save_mesh(&mesh, &path, MeshFormat::Off).unwrap();
        let loaded = load_mesh(&path, MeshFormat::Off).unwrap();
        assert_eq!(mesh.vertices(), loaded.vertices());
        assert_eq!(mesh.faces(), loaded.faces());
    }
}
