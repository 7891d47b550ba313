//! Concentric multi-spectral light field (CMSLF) synthesis and inverse
//! rendering.
//!
//! A CMSLF rig places cameras on `m` concentric rings (ring `j` filtered to a
//! single narrow band `λ_j`) and surrounds them with `m` narrowband point
//! lights, one per band. Because light `j` is only visible to ring `j`, a
//! single exposure samples `m` lighting directions under `n` viewpoints each.
//!
//! The crate covers both directions:
//!
//! * forward — [`renderer`] shades analytic spheres and triangle meshes with a
//!   Phong dichromatic model and produces the full `n×m` grid of single-band
//!   images plus ground-truth maps;
//! * inverse — [`msscam`] resamples the grid into per-point surface cameras,
//!   [`consistency`] sweeps depth hypotheses, [`specular`] fits and removes
//!   highlight lobes, [`photostereo`] solves per-pixel normals and reflectance
//!   coefficients, and [`surface`] integrates the result into depth maps and
//!   orchestrates the full pipeline.

pub mod consistency;
pub mod error;
pub mod image;
pub mod io;
pub mod msscam;
pub mod photostereo;
pub mod renderer;
pub mod rig;
pub mod scene;
pub mod spectral;
pub mod specular;
pub mod surface;

mod bvh;
mod util;

#[cfg(any(test, feature = "testutil"))]
pub mod testutil;

pub use error::{Error, Result};

pub(crate) use util::par_for_each_enumerated;
