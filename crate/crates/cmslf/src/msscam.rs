//! Multi-spectral surface camera (MSS-Cam) resampling.
//!
//! For a hypothesized 3D point (a center-view pixel back-projected to depth
//! `z`), the MSS-Cam is the `n x m` matrix of light-field samples obtained by
//! projecting the point into every camera: row `i` fixes the spoke, column
//! `j` fixes the ring and therefore the band and the light. A column sees one
//! surface point under one light from `n` viewpoints, so it is constant for a
//! diffuse point sampled at the correct depth and carries the specular
//! variation otherwise.

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::renderer::LightField;

#[derive(Debug, Clone)]
pub struct MssCam {
    /// `n x m` sample matrix; masked entries are 0 and must be ignored.
    pub values: DMatrix<f64>,
    /// Validity per entry (projection in bounds).
    pub mask: DMatrix<bool>,
    /// The hypothesized 3D point the samples were traced from.
    pub point: Vector3<f64>,
    /// Depth hypothesis that produced `point`.
    pub depth: f64,
    /// Columns with at least 2 valid entries.
    pub usable_columns: Vec<bool>,
}

impl MssCam {
    pub fn spokes(&self) -> usize {
        self.values.nrows()
    }

    pub fn rings(&self) -> usize {
        self.values.ncols()
    }

    /// Valid entries of one column.
    pub fn column_values(&self, ring: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.nrows()).filter_map(move |i| {
            if self.mask[(i, ring)] {
                Some(self.values[(i, ring)])
            } else {
                None
            }
        })
    }

    pub fn valid_count(&self, ring: usize) -> usize {
        (0..self.values.nrows())
            .filter(|&i| self.mask[(i, ring)])
            .count()
    }

    /// Mean over all valid entries.
    pub fn mean_intensity(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in 0..self.rings() {
            for i in 0..self.spokes() {
                if self.mask[(i, j)] {
                    sum += self.values[(i, j)];
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

/// Bilinear sample of a single-band view at a fractional pixel position.
pub fn bilinear_fetch(image: &Image, uf: f64, vf: f64) -> Result<f64> {
    image.bilinear(uf, vf)
}

/// Build the MSS-Cam for center-view pixel (`u`, `v`) at depth hypothesis
/// `z`. Out-of-bounds projections are masked out rather than failing; an
/// error is returned only when the depth lies outside the rig's sweep range.
pub fn sample_msscam(lf: &LightField, u: f64, v: f64, z: f64) -> Result<MssCam> {
    let rig = lf.rig();
    if z < rig.depth_min - 1e-9 || z > rig.depth_max + 1e-9 {
        return Err(Error::IndexOutOfRange(format!(
            "depth {z} outside sweep range [{}, {}]",
            rig.depth_min, rig.depth_max
        )));
    }
    let point = rig.backproject_center(u, v, z);
    let n = rig.cameras_per_ring;
    let m = rig.num_rings;
    let mut values = DMatrix::zeros(n, m);
    let mut mask = DMatrix::from_element(n, m, false);
    for i in 0..n {
        for j in 0..m {
            let (uf, vf) = rig.project_point(&point, i, j)?;
            if let Ok(sample) = lf.view(i, j).bilinear(uf, vf) {
                values[(i, j)] = sample;
                mask[(i, j)] = true;
            }
        }
    }
    let usable_columns = (0..m)
        .map(|j| (0..n).filter(|&i| mask[(i, j)]).count() >= 2)
        .collect();
    Ok(MssCam {
        values,
        mask,
        point,
        depth: z,
        usable_columns,
    })
}
