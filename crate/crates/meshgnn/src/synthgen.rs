//! Synthetic multi-structure, multi-site mesh datasets.
//!
//! Each subject carries one mesh per structure. Structures start from a
//! shared icosphere, get a fixed per-structure deformation (so structures
//! differ from each other), a class-dependent anisotropic scaling for
//! label-1 subjects, i.i.d. vertex noise, and finally a per-site rigid
//! transform shared by all subjects of that site. Everything is derived
//! from counter-based RNG streams, so output is independent of generation
//! order and bit-identical under a fixed seed.

use nalgebra::{Matrix3, Unit, Vector3};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, MeshBuilder};
use crate::rng::stream;

/// Radius of the undeformed template sphere, millimetres.
const BASE_RADIUS_MM: f64 = 10.0;

/// Subjects per site for one split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub name: String,
    /// Magnitude of the site's rigid translation, millimetres.
    pub offset_mm: f64,
    /// Site rotation angle is drawn uniformly from `[0, rot_range_rad]`.
    pub rot_range_rad: f64,
    /// Optional global scale applied with the site transform (1.0 = off).
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Per-site override of `subjects_per_site`.
    #[serde(default)]
    pub splits: Option<SplitCounts>,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_n_structures")]
    pub n_structures: usize,
    pub subjects_per_site: SplitCounts,
    pub site_specs: Vec<SiteSpec>,
    /// Anisotropic scale factor applied to label-1 subjects. Structure `s`
    /// is scaled along axis `s % 3`, by this factor for even `s` and by its
    /// reciprocal for odd `s`.
    #[serde(default = "default_class_effect")]
    pub class_effect: f64,
    /// Standard deviation of i.i.d. per-component vertex noise, millimetres.
    #[serde(default)]
    pub vertex_noise_sd: f64,
    #[serde(default = "default_icosphere_level")]
    pub icosphere_level: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_structures() -> usize {
    15
}

fn default_class_effect() -> f64 {
    1.05
}

fn default_icosphere_level() -> usize {
    3
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_structures == 0 {
            return Err(Error::Config("n_structures must be positive".into()));
        }
        if self.site_specs.is_empty() {
            return Err(Error::Config("at least one site is required".into()));
        }
        if self.class_effect <= 0.0 {
            return Err(Error::Config("class_effect must be positive".into()));
        }
        if self.vertex_noise_sd < 0.0 {
            return Err(Error::Config("vertex_noise_sd must be non-negative".into()));
        }
        if self.icosphere_level > 5 {
            return Err(Error::Config(format!(
                "icosphere_level {} out of range [0, 5]",
                self.icosphere_level
            )));
        }
        for site in &self.site_specs {
            if site.name.is_empty()
                || !site
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return Err(Error::Config(format!(
                    "site name {:?} must be non-empty and use only [A-Za-z0-9_-]",
                    site.name
                )));
            }
            if site.offset_mm < 0.0 || site.rot_range_rad < 0.0 || site.scale <= 0.0 {
                return Err(Error::Config(format!("invalid transform ranges for site {}", site.name)));
            }
        }
        let mut names: Vec<_> = self.site_specs.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.site_specs.len() {
            return Err(Error::Config("duplicate site names".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// One subject: per-structure meshes plus (after the features stage) their
/// node-feature matrices.
#[derive(Debug, Clone)]
pub struct SubjectSample {
    pub id: String,
    pub site: String,
    pub label: u8,
    pub meshes: Vec<Mesh>,
    pub features: Option<Vec<Array2<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplits {
    pub train: Vec<SubjectSample>,
    pub val: Vec<SubjectSample>,
    pub test: Vec<SubjectSample>,
}

impl DatasetSplits {
    pub fn split(&self, split: Split) -> &[SubjectSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<SubjectSample> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn iter_all(&self) -> impl Iterator<Item = (Split, &SubjectSample)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |sub| (s, sub)))
    }

    pub fn n_subjects(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Unit icosphere by recursive icosahedron subdivision, `level` in `[0, 5]`.
/// Level 0 is the icosahedron (12 vertices); level 3 has 642 vertices.
pub fn icosphere(level: usize) -> Result<Mesh> {
    if level > 5 {
        return Err(Error::Config(format!("icosphere level {level} out of range [0, 5]")));
    }
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let base = [
        [-1.0, phi, 0.0], [1.0, phi, 0.0], [-1.0, -phi, 0.0], [1.0, -phi, 0.0],
        [0.0, -1.0, phi], [0.0, 1.0, phi], [0.0, -1.0, -phi], [0.0, 1.0, -phi],
        [phi, 0.0, -1.0], [phi, 0.0, 1.0], [-phi, 0.0, -1.0], [-phi, 0.0, 1.0],
    ];
    let mut vertices: Vec<Vector3<f64>> = base
        .iter()
        .map(|&[x, y, z]| Vector3::new(x, y, z).normalize())
        .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];

    for _ in 0..level {
        let mut builder = MeshBuilder::new();
        let existing: Vec<usize> = vertices.iter().map(|v| builder.vertex(*v)).collect();
        let midpoint = |a: usize, b: usize, builder: &mut MeshBuilder| {
            builder.vertex(((vertices[a] + vertices[b]) / 2.0).normalize())
        };
        for &[a, b, c] in &faces {
            let (ia, ib, ic) = (existing[a], existing[b], existing[c]);
            let mab = midpoint(a, b, &mut builder);
            let mbc = midpoint(b, c, &mut builder);
            let mca = midpoint(c, a, &mut builder);
            builder.face(ia, mab, mca);
            builder.face(ib, mbc, mab);
            builder.face(ic, mca, mbc);
            builder.face(mab, mbc, mca);
        }
        let mesh = builder.build()?;
        vertices = mesh.vertices().to_vec();
        faces = mesh.faces().to_vec();
    }

    Mesh::new(vertices, faces)
}

/// Fixed per-structure shape template: a deformed, slightly offset sphere.
struct StructureTemplate {
    vertices: Vec<Vector3<f64>>,
    offset: Vector3<f64>,
}

fn structure_template(base: &Mesh, structure: usize, seed: u64) -> StructureTemplate {
    let mut rng = stream(seed, &format!("structure/{structure}"));
    let scale = Vector3::new(
        rng.random_range(0.7..1.5),
        rng.random_range(0.7..1.5),
        rng.random_range(0.7..1.5),
    );
    let amp: f64 = rng.random_range(0.12..0.35);
    let freq: f64 = rng.random_range(2.0..8.0);
    let dir = random_unit(&mut rng);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let offset = Vector3::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    );

    let vertices = base
        .vertices()
        .iter()
        .map(|v| {
            let scaled = BASE_RADIUS_MM * Vector3::new(v.x * scale.x, v.y * scale.y, v.z * scale.z);
            let modulation = 1.0 + amp * (freq * v.dot(&dir) + phase).sin();
            scaled * modulation
        })
        .collect();
    StructureTemplate { vertices, offset }
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    let gauss = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = Vector3::new(gauss.sample(rng), gauss.sample(rng), gauss.sample(rng));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

struct SiteTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    scale: f64,
}

fn site_transform(site: &SiteSpec, site_idx: usize, seed: u64) -> SiteTransform {
    let mut rng = stream(seed, &format!("site/{site_idx}"));
    let axis = random_unit(&mut rng);
    let angle = if site.rot_range_rad > 0.0 {
        rng.random_range(0.0..site.rot_range_rad)
    } else {
        0.0
    };
    let rotation = nalgebra::Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle)
        .into_inner();
    let dir = random_unit(&mut rng);
    SiteTransform {
        rotation,
        translation: dir * site.offset_mm,
        scale: site.scale,
    }
}

pub fn generate_dataset(spec: &SynthSpec) -> Result<DatasetSplits> {
    spec.validate()?;
    let base = icosphere(spec.icosphere_level)?;
    let templates: Vec<StructureTemplate> = (0..spec.n_structures)
        .map(|s| structure_template(&base, s, spec.seed))
        .collect();
    let sites: Vec<SiteTransform> = spec
        .site_specs
        .iter()
        .enumerate()
        .map(|(i, s)| site_transform(s, i, spec.seed))
        .collect();

    let noise = if spec.vertex_noise_sd > 0.0 {
        Some(Normal::new(0.0, spec.vertex_noise_sd).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };

    let mut splits = DatasetSplits::default();
    let mut global_idx = 0usize;
    for split in Split::ALL {
        for (site_idx, site) in spec.site_specs.iter().enumerate() {
            let counts = site.splits.unwrap_or(spec.subjects_per_site);
            let count = match split {
                Split::Train => counts.train,
                Split::Val => counts.val,
                Split::Test => counts.test,
            };
            for k in 0..count {
                let label = (k % 2) as u8;
                let sample = generate_subject(
                    spec,
                    &base,
                    &templates,
                    &sites[site_idx],
                    &site.name,
                    label,
                    global_idx,
                    noise.as_ref(),
                );
                splits.split_mut(split).push(sample);
                global_idx += 1;
            }
        }
    }
    Ok(splits)
}

#[allow(clippy::too_many_arguments)]
fn generate_subject(
    spec: &SynthSpec,
    base: &Mesh,
    templates: &[StructureTemplate],
    site: &SiteTransform,
    site_name: &str,
    label: u8,
    global_idx: usize,
    noise: Option<&Normal<f64>>,
) -> SubjectSample {
    let mut rng = stream(spec.seed, &format!("subject/{global_idx}"));
    let meshes = templates
        .iter()
        .enumerate()
        .map(|(s, template)| {
            let axis = s % 3;
            let factor = if label == 1 {
                if s % 2 == 0 {
                    spec.class_effect
                } else {
                    1.0 / spec.class_effect
                }
            } else {
                1.0
            };
            let mut i = 0;
            base.map_vertices(|_| {
                let mut v = template.vertices[i];
                i += 1;
                if factor != 1.0 {
                    v[axis] *= factor;
                }
                v += template.offset;
                if let Some(noise) = noise {
                    v += Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                }
                site.scale * (site.rotation * v) + site.translation
            })
        })
        .collect();

    SubjectSample {
        id: format!("s{global_idx:04}"),
        site: site_name.to_string(),
        label,
        meshes,
        features: None,
    }
}
