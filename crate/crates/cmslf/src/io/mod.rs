//! File formats: PFM float maps, PLY/OBJ triangle meshes, plain-text
//! spectral tables, and the light-field dataset manifest.

mod manifest;
mod mesh;
mod pfm;
mod tabular;

pub use manifest::{load_dataset, save_dataset, DatasetManifest, GROUND_TRUTH_MAPS};
pub use mesh::{load_mesh, save_ply_mesh, save_ply_points};
pub use pfm::{read_pfm, write_pfm};
pub use tabular::{read_table, write_table};
