//! Spectral tables: illumination spectra, camera responses and the linear
//! reflectance basis, plus the per-band projection terms the rest of the
//! pipeline consumes.
//!
//! Reflectance spectra are modeled in a low-dimensional linear subspace: a
//! surface's reflectance is `R(λ) = c · B(λ)` for a `w`-vector of
//! coefficients `c` and `w` fixed basis functions. Band `j` of the rig only
//! ever sees the narrow window of `k` samples (step `λ̃`) centered on its
//! filter wavelength, so the model precomputes, per band,
//!
//! * `W_j = B_j E_j Q_j` — the `w`-vector projecting coefficients to the
//!   band's diffuse response, and
//! * `JEQ_j = 1ᵀ E_j Q_j` — the scalar response to spectrally flat
//!   (interface/specular) radiance,
//!
//! where `B_j` (`w×k`) is the basis restricted to the window, `E_j` (`k×k`
//! diagonal) the illumination spectrum of light `j` and `Q_j` (`k`) the
//! camera response of ring `j`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reflectance basis sampled on a dense wavelength grid.
#[derive(Debug, Clone)]
pub struct Basis {
    grid: Vec<f64>,
    /// `w x K`, one row per basis function.
    values: DMatrix<f64>,
}

impl Basis {
    pub fn new(grid: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        if grid.len() != values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "basis has {} columns for {} grid wavelengths",
                values.ncols(),
                grid.len()
            )));
        }
        if grid.len() < 2 {
            return Err(Error::InvalidConfig("basis grid needs >= 2 samples".into()));
        }
        let step = grid[1] - grid[0];
        if step <= 0.0 || grid.windows(2).any(|w| (w[1] - w[0] - step).abs() > 1e-9) {
            return Err(Error::InvalidConfig(
                "basis grid must be uniformly increasing".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    /// Smooth low-order cosine basis on `[lo, hi]`:
    /// `b_q(λ) = cos(q π (λ - lo) / (hi - lo))`, `q = 0..dim`.
    /// The first function is constant, so a flat reflectance of value `r`
    /// is exactly `c = (r, 0, ..., 0)`.
    pub fn cosine(dim: usize, lo: f64, hi: f64, step: f64) -> Self {
        let count = ((hi - lo) / step + 1.5).floor() as usize;
        let grid: Vec<f64> = (0..count).map(|i| lo + i as f64 * step).collect();
        let mut values = DMatrix::zeros(dim, grid.len());
        for (col, &lambda) in grid.iter().enumerate() {
            let x = (lambda - lo) / (hi - lo);
            for q in 0..dim {
                values[(q, col)] = (q as f64 * std::f64::consts::PI * x).cos();
            }
        }
        Self { grid, values }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    fn grid_step(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    /// Index of `lambda` on the grid, if it falls on a grid node.
    fn grid_index(&self, lambda: f64) -> Option<usize> {
        let pos = (lambda - self.grid[0]) / self.grid_step();
        let idx = pos.round();
        if (pos - idx).abs() > 1e-6 || idx < 0.0 || idx as usize >= self.grid.len() {
            None
        } else {
            Some(idx as usize)
        }
    }
}

/// Per-band spectral shape of a light source or camera filter.
#[derive(Debug, Clone)]
pub enum BandProfile {
    /// Gaussian profile centered on each band's filter wavelength.
    Gaussian { sigma: f64, scale: f64 },
    /// Measured profile per band, linearly interpolated from a table.
    Tabulated { grid: Vec<f64>, per_band: Vec<Vec<f64>> },
}

impl BandProfile {
    fn eval(&self, band: usize, center: f64, lambda: f64) -> Result<f64> {
        match self {
            BandProfile::Gaussian { sigma, scale } => {
                let d = (lambda - center) / sigma;
                Ok(scale * (-0.5 * d * d).exp())
            }
            BandProfile::Tabulated { grid, per_band } => {
                let values = per_band.get(band).ok_or_else(|| {
                    Error::DimensionMismatch(format!(
                        "tabulated profile has {} bands, band {band} requested",
                        per_band.len()
                    ))
                })?;
                if values.len() != grid.len() {
                    return Err(Error::DimensionMismatch(
                        "tabulated profile row length != grid length".into(),
                    ));
                }
                // Linear interpolation, clamped to the table's ends.
                if lambda <= grid[0] {
                    return Ok(values[0]);
                }
                if lambda >= *grid.last().unwrap() {
                    return Ok(*values.last().unwrap());
                }
                let k = grid.partition_point(|&g| g <= lambda) - 1;
                let t = (lambda - grid[k]) / (grid[k + 1] - grid[k]);
                Ok(values[k] * (1.0 - t) + values[k + 1] * t)
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Band {
    /// Window sample wavelengths, `k` of them.
    wavelengths: Vec<f64>,
    /// Basis restricted to the window, `w x k`.
    basis: DMatrix<f64>,
    /// Diagonal of the illumination matrix.
    illumination: DVector<f64>,
    /// Camera response.
    response: DVector<f64>,
    /// `B_j E_j Q_j`.
    w_vec: DVector<f64>,
    /// `1ᵀ E_j Q_j`.
    jeq: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralModel {
    sample_step: f64,
    band_halfwidth: usize,
    band_centers: Vec<f64>,
    basis: Basis,
    bands: Vec<Band>,
    w_matrix: DMatrix<f64>,
    w_rank: usize,
}

impl SpectralModel {
    /// Assemble the per-band tables for the given band centers. `k` is the
    /// number of samples per narrowband window (odd), spaced `sample_step`
    /// nanometers; every window sample must fall on the basis grid.
    pub fn new(
        basis: Basis,
        illumination: BandProfile,
        response: BandProfile,
        band_centers: &[f64],
        sample_step: f64,
        band_halfwidth: usize,
    ) -> Result<Self> {
        if band_halfwidth % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "band sample count k must be odd, got {band_halfwidth}"
            )));
        }
        if (sample_step / basis.grid_step() - (sample_step / basis.grid_step()).round()).abs()
            > 1e-9
        {
            return Err(Error::InvalidConfig(
                "sample step must be a multiple of the basis grid step".into(),
            ));
        }
        let k = band_halfwidth;
        let w = basis.dim();
        let half = (k - 1) as f64 / 2.0;
        let mut bands = Vec::with_capacity(band_centers.len());
        for (j, &center) in band_centers.iter().enumerate() {
            let wavelengths: Vec<f64> = (0..k)
                .map(|l| center + (l as f64 - half) * sample_step)
                .collect();
            let mut basis_slice = DMatrix::zeros(w, k);
            let mut illum = DVector::zeros(k);
            let mut resp = DVector::zeros(k);
            for (l, &lambda) in wavelengths.iter().enumerate() {
                let idx = basis.grid_index(lambda).ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "band {j} sample {lambda} nm off the basis grid"
                    ))
                })?;
                basis_slice.set_column(l, &basis.values.column(idx));
                illum[l] = illumination.eval(j, center, lambda)?;
                resp[l] = response.eval(j, center, lambda)?;
            }
            if illum.iter().any(|&x| x < 0.0) || resp.iter().any(|&x| x < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "band {j} has negative illumination or response samples"
                )));
            }
            let jeq: f64 = illum.iter().zip(resp.iter()).map(|(e, q)| e * q).sum();
            if jeq <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "band {j} has zero illumination-response overlap"
                )));
            }
            let w_vec = &basis_slice * DMatrix::from_diagonal(&illum) * &resp;
            bands.push(Band {
                wavelengths,
                basis: basis_slice,
                illumination: illum,
                response: resp,
                w_vec,
                jeq,
            });
        }
        let mut w_matrix = DMatrix::zeros(w, bands.len());
        for (j, band) in bands.iter().enumerate() {
            w_matrix.set_column(j, &band.w_vec);
        }
        let w_rank = matrix_rank(&w_matrix);
        let model = Self {
            sample_step,
            band_halfwidth,
            band_centers: band_centers.to_vec(),
            basis,
            bands,
            w_matrix,
            w_rank,
        };
        model.check_band_consistency()?;
        Ok(model)
    }

    /// Every band slice must be the dense basis restricted to the window.
    fn check_band_consistency(&self) -> Result<()> {
        for (j, band) in self.bands.iter().enumerate() {
            for (l, &lambda) in band.wavelengths.iter().enumerate() {
                let idx = self.basis.grid_index(lambda).ok_or_else(|| {
                    Error::InvalidConfig(format!("band {j} drifted off the dense grid"))
                })?;
                for q in 0..self.basis.dim() {
                    let diff = (band.basis[(q, l)] - self.basis.values[(q, idx)]).abs();
                    if diff > 1e-12 {
                        return Err(Error::InvalidConfig(format!(
                            "band {j} basis slice disagrees with dense basis by {diff}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn basis_dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn band_centers(&self) -> &[f64] {
        &self.band_centers
    }

    pub fn sample_step(&self) -> f64 {
        self.sample_step
    }

    pub fn band_halfwidth(&self) -> usize {
        self.band_halfwidth
    }

    pub fn band_wavelengths(&self, band: usize) -> &[f64] {
        &self.bands[band].wavelengths
    }

    pub fn band_illumination(&self, band: usize) -> &DVector<f64> {
        &self.bands[band].illumination
    }

    pub fn band_response(&self, band: usize) -> &DVector<f64> {
        &self.bands[band].response
    }

    /// The precomputed `w x m` matrix whose column `j` is `W_j = B_j E_j Q_j`.
    pub fn w_matrix(&self) -> &DMatrix<f64> {
        &self.w_matrix
    }

    /// Numerical rank of the `W` matrix. A rank below `min(w, m)` makes the
    /// photometric solve ill-posed; callers should surface a warning.
    pub fn w_rank(&self) -> usize {
        self.w_rank
    }

    pub fn w_column(&self, band: usize) -> &DVector<f64> {
        &self.bands[band].w_vec
    }

    /// `1ᵀ E_j Q_j`: the band's response to spectrally flat radiance.
    pub fn jeq(&self, band: usize) -> f64 {
        self.bands[band].jeq
    }

    /// Recompute `W` from the per-band tables (matches [`w_matrix`] exactly;
    /// exposed so callers can re-derive it after editing tables).
    pub fn compute_w(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.basis.dim(), self.bands.len());
        for (j, band) in self.bands.iter().enumerate() {
            let col = &band.basis * DMatrix::from_diagonal(&band.illumination) * &band.response;
            w.set_column(j, &col);
        }
        w
    }

    /// Reflectance restricted to band `band`: the `k` window samples
    /// `c·B_j`, and the scalar diffuse response `c·W_j`.
    pub fn reflectance_at_band(&self, c: &DVector<f64>, band: usize) -> (DVector<f64>, f64) {
        let b = &self.bands[band];
        let r_band = (c.transpose() * &b.basis).transpose();
        (r_band, c.dot(&b.w_vec))
    }

    /// Scalar diffuse response `c·W_j`.
    #[inline]
    pub fn diffuse_response(&self, c: &DVector<f64>, band: usize) -> f64 {
        c.dot(&self.bands[band].w_vec)
    }

    /// Full-range spectral reflectance curve `R = c·B` on the dense grid.
    pub fn dense_reflectance(&self, c: &DVector<f64>) -> DVector<f64> {
        (c.transpose() * &self.basis.values).transpose()
    }
}

fn matrix_rank(m: &DMatrix<f64>) -> usize {
    let svd = m.clone().svd(false, false);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if max_sv == 0.0 {
        return 0;
    }
    let tol = max_sv * 1e-10 * m.nrows().max(m.ncols()) as f64;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn band_centers_12() -> Vec<f64> {
        (0..12).map(|j| 440.0 + 20.0 * j as f64).collect()
    }

    pub(crate) fn test_model() -> SpectralModel {
        SpectralModel::new(
            Basis::cosine(3, 400.0, 700.0, 5.0),
            BandProfile::Gaussian { sigma: 8.0, scale: 1.0 },
            BandProfile::Gaussian { sigma: 6.0, scale: 1.0 },
            &band_centers_12(),
            5.0,
            5,
        )
        .unwrap()
    }

    fn flat_basis(w: usize, grid: Vec<f64>) -> Basis {
        Basis::new(grid.clone(), DMatrix::from_element(w, grid.len(), 1.0)).unwrap()
    }

    #[test]
    fn w_equals_k_for_all_ones_tables() {
        // B_j all ones, E_j identity, Q_j all ones => each W entry is k.
        let grid: Vec<f64> = (0..61).map(|i| 400.0 + 5.0 * i as f64).collect();
        let model = SpectralModel::new(
            flat_basis(1, grid.clone()),
            BandProfile::Tabulated { grid: grid.clone(), per_band: vec![vec![1.0; 61]; 3] },
            BandProfile::Tabulated { grid, per_band: vec![vec![1.0; 61]; 3] },
            &[450.0, 550.0, 650.0],
            5.0,
            5,
        )
        .unwrap();
        for j in 0..3 {
            assert_relative_eq!(model.w_column(j)[0], 5.0, epsilon = 1e-12);
            assert_relative_eq!(model.jeq(j), 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_single_sample_band_is_a_plain_product() {
        // k = 1: W_j = B_j * E_j * Q_j entry-wise per basis row.
        let grid: Vec<f64> = (0..31).map(|i| 400.0 + 10.0 * i as f64).collect();
        let mut values = DMatrix::zeros(3, 31);
        for col in 0..31 {
            for q in 0..3 {
                values[(q, col)] = (q + 1) as f64 * 0.1 + col as f64 * 0.01;
            }
        }
        let basis = Basis::new(grid, values.clone()).unwrap();
        let model = SpectralModel::new(
            basis,
            BandProfile::Gaussian { sigma: 10.0, scale: 2.0 },
            BandProfile::Gaussian { sigma: 10.0, scale: 3.0 },
            &[500.0],
            10.0,
            1,
        )
        .unwrap();
        // At the band center both Gaussians evaluate to their scale.
        let idx = 10; // (500 - 400) / 10
        for q in 0..3 {
            assert_relative_eq!(model.w_column(0)[q], values[(q, idx)] * 2.0 * 3.0, epsilon = 1e-12);
        }
        assert_relative_eq!(model.jeq(0), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn compute_w_matches_naive_triple_product() {
        let model = test_model();
        let w = model.compute_w();
        assert_eq!(w, *model.w_matrix());
        for j in 0..model.num_bands() {
            let b = &model.bands[j];
            for q in 0..model.basis_dim() {
                // Naive loop oracle: sum_l B[q,l] * E[l] * Q[l].
                let mut acc = 0.0;
                for l in 0..model.band_halfwidth() {
                    acc += b.basis[(q, l)] * b.illumination[l] * b.response[l];
                }
                assert_relative_eq!(w[(q, j)], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn w_matrix_has_full_rank_for_reference_tables() {
        let model = test_model();
        assert_eq!(model.w_rank(), 3);
    }

    #[test]
    fn reflectance_at_band_zero_and_unit_coefficients() {
        let model = test_model();
        let zero = DVector::zeros(3);
        let (r, s) = model.reflectance_at_band(&zero, 4);
        assert!(r.iter().all(|&x| x == 0.0));
        assert_eq!(s, 0.0);

        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let (r, s) = model.reflectance_at_band(&e1, 4);
        for (l, &val) in r.iter().enumerate() {
            assert_relative_eq!(val, model.bands[4].basis[(0, l)], epsilon = 1e-15);
        }
        assert_relative_eq!(s, model.w_column(4)[0], epsilon = 1e-15);
    }

    #[test]
    fn band_restriction_matches_dense_evaluation() {
        let model = test_model();
        // Seeded pseudo-random coefficients.
        let c = DVector::from_vec(vec![0.63, -0.21, 0.11]);
        let dense = model.dense_reflectance(&c);
        for j in 0..model.num_bands() {
            let (r_band, _) = model.reflectance_at_band(&c, j);
            for (l, &lambda) in model.band_wavelengths(j).iter().enumerate() {
                let idx = model.basis.grid_index(lambda).unwrap();
                assert_relative_eq!(r_band[l], dense[idx], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dense_reflectance_picks_out_basis_functions() {
        let model = test_model();
        let e2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let dense = model.dense_reflectance(&e2);
        for (idx, &val) in dense.iter().enumerate() {
            assert_relative_eq!(val, model.basis.values[(1, idx)], epsilon = 1e-15);
        }
        assert!(model.dense_reflectance(&DVector::zeros(3)).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dense_reflectance_is_linear() {
        let model = test_model();
        let c1 = DVector::from_vec(vec![0.4, 0.2, -0.1]);
        let c2 = DVector::from_vec(vec![-0.3, 0.5, 0.25]);
        let (a, b) = (1.7, -0.9);
        let lhs = model.dense_reflectance(&(&c1 * a + &c2 * b));
        let rhs = model.dense_reflectance(&c1) * a + model.dense_reflectance(&c2) * b;
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            assert_relative_eq!(l, r, epsilon = 1e-12);
        }
    }

    #[test]
    fn off_grid_band_center_is_rejected() {
        let err = SpectralModel::new(
            Basis::cosine(3, 400.0, 700.0, 5.0),
            BandProfile::Gaussian { sigma: 8.0, scale: 1.0 },
            BandProfile::Gaussian { sigma: 6.0, scale: 1.0 },
            &[443.0],
            5.0,
            5,
        );
        assert!(err.is_err());
    }

    #[test]
    fn even_band_sample_count_is_rejected() {
        let err = SpectralModel::new(
            Basis::cosine(3, 400.0, 700.0, 5.0),
            BandProfile::Gaussian { sigma: 8.0, scale: 1.0 },
            BandProfile::Gaussian { sigma: 6.0, scale: 1.0 },
            &[440.0],
            5.0,
            4,
        );
        assert!(err.is_err());
    }
}
