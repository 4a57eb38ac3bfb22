//! Graph-based shape classification over triangular surface meshes.
//!
//! The pipeline treats each anatomical structure as a mesh graph, computes
//! pose-invariant FPFH node descriptors, optionally rigid-aligns every mesh
//! to a per-structure reference, trains a multi-graph GCN classifier (with
//! shared or structure-specific submodels), and inspects the learned
//! embeddings layer by layer (PCA scatter + silhouette separability).
//!
//! Modules follow the processing stages:
//!
//! - [`mesh`]: mesh storage, validation, OFF/JSON I/O, vertex normals
//! - [`registration`]: closed-form rigid alignment (SVD)
//! - [`features`]: 33-dimensional FPFH node descriptors
//! - [`gnn`]: multi-graph GCN forward pass and analytic gradients
//! - [`training`]: Adam loop with jitter augmentation and model selection
//! - [`inspection`]: embedding extraction, PCA, silhouette reports
//! - [`evaluation`]: ROC curves and AUC
//! - [`synthgen`]: synthetic multi-site mesh datasets
//! - [`cli`]: end-to-end commands and on-disk artifact formats

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod gnn;
pub mod inspection;
pub mod mesh;
pub mod registration;
pub mod rng;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
pub use mesh::{load_mesh, save_mesh, vertex_normals, Mesh, MeshFormat, VertexNormals};
pub use registration::{apply_transform, register_dataset, umeyama_rigid, Reference, RigidTransform};
