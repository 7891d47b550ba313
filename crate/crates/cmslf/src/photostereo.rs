//! Per-pixel surface normal and reflectance coefficients from the
//! specular-free MSS-Cam row.
//!
//! The per-band model, after undoing the known light falloff, is bilinear in
//! the unknowns:
//!
//! ```text
//! y_j = row_j · |P_j − X|² = (c · W_j)(L_j · N)
//! ```
//!
//! Two routes solve it. The lifted route rewrites the product as a linear
//! system in the `w·3` outer-product unknowns `Z = c Nᵀ`, solves least
//! squares, and factors the best rank-1 approximation of `Z` back into
//! `(c, N)` — feasible when `w·3 ≤ m`. The bilinear route runs damped least
//! squares directly over `(c, N)` and also covers `w·3 > m`. Bands the
//! current normal predicts as shadowed are dropped in a single reweighted
//! pass (lifted) or handled by the clamped model (bilinear).

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::storage::Owned;
use nalgebra::{DMatrix, DVector, Dyn, Matrix, Vector3, U1};

use crate::error::{Error, Result};
use crate::spectral::SpectralModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    LiftedLinear,
    BilinearDamped,
}

#[derive(Debug, Clone)]
pub struct PhotometricSolveResult {
    /// Unit normal, oriented to face the rig.
    pub normal: Vector3<f64>,
    /// Reflectance coefficients (carry the full intensity scale).
    pub coeffs: DVector<f64>,
    /// Euclidean norm of the per-band residual at the solution.
    pub residual: f64,
    pub method: SolveMethod,
    /// Second-to-first singular value ratio of the lifted solution; near zero
    /// on exact data.
    pub rank1_ratio: Option<f64>,
}

/// Shared problem data for one pixel.
#[derive(Debug, Clone)]
pub struct PhotometricInputs<'a> {
    /// Specular-free per-band row vector (m).
    pub row: &'a DVector<f64>,
    /// Unit lighting directions from the point, one per band (m x 3 rows).
    pub lights: &'a [Vector3<f64>],
    /// `w x m` projection matrix (column j is `W_j`).
    pub w_matrix: &'a DMatrix<f64>,
    /// Squared light distances `|P_j − X|²` per band.
    pub falloff: &'a DVector<f64>,
    /// Per-band weights (0 drops a band entirely), all 1 by default.
    pub band_weights: Option<&'a [f64]>,
}

impl PhotometricInputs<'_> {
    fn dims(&self) -> Result<(usize, usize)> {
        let m = self.row.len();
        let w = self.w_matrix.nrows();
        if self.lights.len() != m
            || self.w_matrix.ncols() != m
            || self.falloff.len() != m
            || self.band_weights.is_some_and(|b| b.len() != m)
        {
            return Err(Error::DimensionMismatch(format!(
                "row {m}, lights {}, W {}x{}, falloff {}",
                self.lights.len(),
                self.w_matrix.nrows(),
                self.w_matrix.ncols(),
                self.falloff.len()
            )));
        }
        Ok((w, m))
    }

    fn weight(&self, j: usize) -> f64 {
        self.band_weights.map_or(1.0, |b| b[j])
    }

    /// Falloff-corrected targets `y_j`.
    fn targets(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.row.len(),
            self.row.iter().zip(self.falloff.iter()).map(|(r, f)| r * f),
        )
    }
}

fn front_facing_sign(normal: &Vector3<f64>, x: &Vector3<f64>) -> f64 {
    // The rig lives at the origin; the surface faces it when N·(0 − X) > 0.
    if normal.dot(&(-x)) >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Residual of the clamped forward model over all weighted bands; the common
/// metric for comparing candidates across solve routes.
fn clamped_residual(
    inputs: &PhotometricInputs<'_>,
    coeffs: &DVector<f64>,
    normal: &Vector3<f64>,
) -> f64 {
    let targets = inputs.targets();
    let mut acc = 0.0;
    for j in 0..targets.len() {
        let wt = inputs.weight(j);
        if wt > 0.0 {
            let ln = inputs.lights[j].dot(normal).max(0.0);
            let model = coeffs.dot(&inputs.w_matrix.column(j).into_owned()) * ln;
            acc += wt * (model - targets[j]).powi(2);
        }
    }
    acc.sqrt()
}

fn lstsq(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = max_sv * 1e-10 * a.nrows().max(a.ncols()) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let solution = svd
        .solve(y, tol.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Degenerate(format!("least squares failed: {e}")))?;
    Ok((solution, rank))
}

/// One pass of the lifted linear solve on the given band weights.
fn lifted_pass(
    inputs: &PhotometricInputs<'_>,
    extra_weights: &[f64],
    x: &Vector3<f64>,
) -> Result<PhotometricSolveResult> {
    let (w, m) = inputs.dims()?;
    let unknowns = 3 * w;
    let targets = inputs.targets();
    let mut rows = Vec::new();
    for j in 0..m {
        let wt = inputs.weight(j) * extra_weights[j];
        if wt > 0.0 {
            rows.push((j, wt));
        }
    }
    if rows.len() < unknowns {
        return Err(Error::Degenerate(format!(
            "{} usable bands cannot determine {unknowns} lifted unknowns",
            rows.len()
        )));
    }
    let mut design = DMatrix::zeros(rows.len(), unknowns);
    let mut y = DVector::zeros(rows.len());
    for (r, &(j, wt)) in rows.iter().enumerate() {
        let sw = wt.sqrt();
        for k in 0..w {
            for d in 0..3 {
                design[(r, k * 3 + d)] = sw * inputs.w_matrix[(k, j)] * inputs.lights[j][d];
            }
        }
        y[r] = sw * targets[j];
    }
    let (z_vec, rank) = lstsq(&design, &y)?;
    if rank < unknowns {
        return Err(Error::Degenerate(format!(
            "lifted design rank {rank} < {unknowns}"
        )));
    }
    // Reshape to w x 3 and take the best rank-1 factorization.
    let z = DMatrix::from_fn(w, 3, |k, d| z_vec[k * 3 + d]);
    let svd = z.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let s1 = svd.singular_values[0];
    if s1 <= 0.0 || !s1.is_finite() {
        return Err(Error::Degenerate("lifted solution vanished".into()));
    }
    let rank1_ratio = if svd.singular_values.len() > 1 {
        svd.singular_values[1] / s1
    } else {
        0.0
    };
    let mut normal = Vector3::new(vt[(0, 0)], vt[(0, 1)], vt[(0, 2)]);
    let mut coeffs = DVector::from_iterator(w, (0..w).map(|k| u[(k, 0)] * s1));
    let sign = front_facing_sign(&normal, x);
    normal *= sign;
    coeffs *= sign;
    let normal = normal.normalize();

    let mut residual_sq = 0.0;
    for j in 0..m {
        let wt = inputs.weight(j) * extra_weights[j];
        if wt > 0.0 {
            let model = coeffs.dot(&inputs.w_matrix.column(j).into_owned())
                * inputs.lights[j].dot(&normal);
            residual_sq += wt * (model - targets[j]).powi(2);
        }
    }
    Ok(PhotometricSolveResult {
        normal,
        coeffs,
        residual: residual_sq.sqrt(),
        method: SolveMethod::LiftedLinear,
        rank1_ratio: Some(rank1_ratio),
    })
}

/// Lifted-linear photometric solve with one shadow-reweighting pass: bands
/// the first solution predicts as back-facing are dropped and the system is
/// solved again. Requires `w·3 ≤` usable bands and a full-rank design.
pub fn solve_lifted(
    inputs: &PhotometricInputs<'_>,
    x: &Vector3<f64>,
) -> Result<PhotometricSolveResult> {
    let (_, m) = inputs.dims()?;
    if inputs.row.iter().all(|&r| r == 0.0) {
        return Err(Error::NoValidSamples("row vector carries no signal".into()));
    }
    // Dark bands are ambiguous under the unclamped linear model (either a
    // true zero of the bilinear form or an attached shadow), so the first
    // pass fits the lit rows only.
    let targets = inputs.targets();
    let max_target = targets.amax();
    let lit: Vec<f64> = (0..m)
        .map(|j| {
            if targets[j].abs() <= 1e-6 * max_target {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    let first = lifted_pass(inputs, &lit, x)?;
    // Down-weight predicted attached shadows and solve once more.
    let weights: Vec<f64> = (0..m)
        .map(|j| {
            if inputs.lights[j].dot(&first.normal) <= 0.0 {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    if weights == lit {
        return Ok(first);
    }
    lifted_pass(inputs, &weights, x).or(Ok(first))
}

struct BilinearProblem {
    /// (c_0..c_{w-1}, t1, t2)
    params: DVector<f64>,
    anchor: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    w_matrix: DMatrix<f64>,
    lights: Vec<Vector3<f64>>,
    targets: DVector<f64>,
    weights: Vec<f64>,
}

impl BilinearProblem {
    fn wdim(&self) -> usize {
        self.params.len() - 2
    }

    fn current_normal(&self) -> (Vector3<f64>, f64) {
        let w = self.wdim();
        let g = self.anchor + self.e1 * self.params[w] + self.e2 * self.params[w + 1];
        let norm = g.norm();
        (g / norm, norm)
    }
}

fn tangent_frame(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1).normalize();
    (e1, e2)
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for BilinearProblem {
    type ResidualStorage = Owned<f64, Dyn, U1>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn, U1>;

    fn set_params(&mut self, x: &Matrix<f64, Dyn, U1, Self::ParameterStorage>) {
        self.params = x.clone();
    }

    fn params(&self) -> Matrix<f64, Dyn, U1, Self::ParameterStorage> {
        self.params.clone()
    }

    fn residuals(&self) -> Option<Matrix<f64, Dyn, U1, Self::ResidualStorage>> {
        let (normal, _) = self.current_normal();
        let w = self.wdim();
        let m = self.targets.len();
        let mut r = DVector::zeros(m);
        for j in 0..m {
            let ln = self.lights[j].dot(&normal).max(0.0);
            let mut cw = 0.0;
            for k in 0..w {
                cw += self.params[k] * self.w_matrix[(k, j)];
            }
            r[j] = self.weights[j].sqrt() * (cw * ln - self.targets[j]);
        }
        Some(r)
    }

    fn jacobian(&self) -> Option<Matrix<f64, Dyn, Dyn, Self::JacobianStorage>> {
        let (normal, gnorm) = self.current_normal();
        let w = self.wdim();
        let m = self.targets.len();
        let dn_dt1 = (self.e1 - normal * normal.dot(&self.e1)) / gnorm;
        let dn_dt2 = (self.e2 - normal * normal.dot(&self.e2)) / gnorm;
        let mut jac = DMatrix::zeros(m, w + 2);
        for j in 0..m {
            let sw = self.weights[j].sqrt();
            let ln_raw = self.lights[j].dot(&normal);
            let ln = ln_raw.max(0.0);
            for k in 0..w {
                jac[(j, k)] = sw * self.w_matrix[(k, j)] * ln;
            }
            if ln_raw > 0.0 {
                let mut cw = 0.0;
                for k in 0..w {
                    cw += self.params[k] * self.w_matrix[(k, j)];
                }
                jac[(j, w)] = sw * cw * self.lights[j].dot(&dn_dt1);
                jac[(j, w + 1)] = sw * cw * self.lights[j].dot(&dn_dt2);
            }
        }
        Some(jac)
    }
}

/// Damped bilinear solve over `(c, N)`. The normal is parameterized by two
/// tangent offsets around `init_normal`; coefficients initialize from the
/// given values or from the conditionally linear solve at the initial normal.
/// Back-facing bands are handled by the clamped model itself.
pub fn solve_bilinear(
    inputs: &PhotometricInputs<'_>,
    init_normal: &Vector3<f64>,
    init_coeffs: Option<&DVector<f64>>,
    x: &Vector3<f64>,
) -> Result<PhotometricSolveResult> {
    let (w, m) = inputs.dims()?;
    if m < w + 2 {
        return Err(Error::Degenerate(format!(
            "{m} bands cannot determine {w} coefficients plus a normal"
        )));
    }
    if inputs.row.iter().all(|&r| r == 0.0) {
        return Err(Error::NoValidSamples("row vector carries no signal".into()));
    }
    let targets = inputs.targets();
    let weights: Vec<f64> = (0..m).map(|j| inputs.weight(j)).collect();
    let anchor = init_normal.normalize();
    let (e1, e2) = tangent_frame(&anchor);

    // Conditionally linear initialization of c given the anchor normal.
    let coeffs0 = match init_coeffs {
        Some(c) => c.clone(),
        None => {
            let mut design = DMatrix::zeros(m, w);
            let mut y = DVector::zeros(m);
            for j in 0..m {
                let ln = inputs.lights[j].dot(&anchor).max(0.0);
                let sw = weights[j].sqrt();
                for k in 0..w {
                    design[(j, k)] = sw * inputs.w_matrix[(k, j)] * ln;
                }
                y[j] = sw * targets[j];
            }
            lstsq(&design, &y)?.0
        }
    };

    let mut params = DVector::zeros(w + 2);
    for k in 0..w {
        params[k] = coeffs0[k];
    }
    let problem = BilinearProblem {
        params,
        anchor,
        e1,
        e2,
        w_matrix: inputs.w_matrix.clone(),
        lights: inputs.lights.to_vec(),
        targets,
        weights,
    };
    let initial_residual = problem
        .residuals()
        .map(|r| r.norm())
        .unwrap_or(f64::INFINITY);
    let (solved, report) = LevenbergMarquardt::new().minimize(problem);
    if !report.objective_function.is_finite() {
        return Err(Error::NonConvergence(
            "bilinear solve diverged to non-finite objective".into(),
        ));
    }
    let (mut normal, _) = solved.current_normal();
    let mut coeffs = DVector::from_iterator(w, (0..w).map(|k| solved.params[k]));
    let sign = front_facing_sign(&normal, x);
    // A sign flip of both factors leaves the model unchanged; normalize the
    // representation to the front-facing one.
    normal *= sign;
    coeffs *= sign;
    let residual = (2.0 * report.objective_function).max(0.0).sqrt();
    if residual > initial_residual + 1e-12 {
        return Err(Error::NonConvergence(format!(
            "bilinear residual increased: {initial_residual} -> {residual}"
        )));
    }
    Ok(PhotometricSolveResult {
        normal,
        coeffs,
        residual,
        method: SolveMethod::BilinearDamped,
        rank1_ratio: None,
    })
}

/// Route a photometric solve: lifted when feasible, with a damped polish,
/// falling back to multi-start bilinear solves (rank-deficient lifted
/// designs, `w·3 > m`, or attached shadows that bias the linear system).
/// The candidate with the smallest residual wins.
pub fn solve_photometric(
    inputs: &PhotometricInputs<'_>,
    x: &Vector3<f64>,
    fallback_normal: &Vector3<f64>,
) -> Result<PhotometricSolveResult> {
    let (w, m) = inputs.dims()?;
    let signal = inputs.targets().norm();
    if signal == 0.0 {
        return Err(Error::NoValidSamples("row vector carries no signal".into()));
    }
    let exact = 1e-9 * signal;
    let mut best: Option<PhotometricSolveResult> = None;
    let mut consider = |mut candidate: PhotometricSolveResult,
                        best: &mut Option<PhotometricSolveResult>| {
        candidate.residual = clamped_residual(inputs, &candidate.coeffs, &candidate.normal);
        if best.as_ref().is_none_or(|b| candidate.residual < b.residual) {
            *best = Some(candidate);
        }
    };

    if 3 * w <= m {
        if let Ok(lifted) = solve_lifted(inputs, x) {
            if clamped_residual(inputs, &lifted.coeffs, &lifted.normal) < exact {
                return Ok(lifted);
            }
            // Polish with the damped route; shadowed or noisy bands leave the
            // lifted solution noticeably non-rank-1.
            if let Ok(refined) = solve_bilinear(inputs, &lifted.normal, Some(&lifted.coeffs), x) {
                consider(refined, &mut best);
            }
            consider(lifted, &mut best);
        }
    }
    if best.as_ref().is_some_and(|b| b.residual < exact) {
        return Ok(best.unwrap());
    }

    // Multi-start damped solves around the fallback normal.
    let anchor = fallback_normal.normalize();
    let (e1, e2) = tangent_frame(&anchor);
    let mut starts = vec![anchor];
    for tilt_deg in [25.0f64, 50.0] {
        let tilt = tilt_deg.to_radians().tan();
        for k in 0..8 {
            let ang = std::f64::consts::TAU * (k as f64 + 0.5 * (tilt_deg / 50.0)) / 8.0;
            starts.push((anchor + (e1 * ang.cos() + e2 * ang.sin()) * tilt).normalize());
        }
    }
    for start in starts {
        if let Ok(result) = solve_bilinear(inputs, &start, None, x) {
            consider(result, &mut best);
        }
        if best.as_ref().is_some_and(|b| b.residual < exact) {
            break;
        }
    }
    best.ok_or_else(|| Error::NonConvergence("no photometric solve succeeded".into()))
}

/// Dense spectral reflectance curve of recovered coefficients.
pub fn recover_reflectance(spectral: &SpectralModel, coeffs: &DVector<f64>) -> DVector<f64> {
    spectral.dense_reflectance(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    struct Instance {
        row: DVector<f64>,
        lights: Vec<Vector3<f64>>,
        w_matrix: DMatrix<f64>,
        falloff: DVector<f64>,
        x: Vector3<f64>,
        coeffs: DVector<f64>,
        normal: Vector3<f64>,
    }

    impl Instance {
        fn inputs(&self) -> PhotometricInputs<'_> {
            PhotometricInputs {
                row: &self.row,
                lights: &self.lights,
                w_matrix: &self.w_matrix,
                falloff: &self.falloff,
                band_weights: None,
            }
        }
    }

    /// Forward-synthesize a noiseless instance on the reference rig. Normals
    /// stay within a cone that keeps every band lit unless `allow_shadow`.
    fn random_instance(rng: &mut impl Rng, wdim: usize, allow_shadow: bool) -> Instance {
        let rig = testutil::sphere_rig(96);
        let spectral_w = if wdim == 3 {
            testutil::test_spectral().w_matrix().clone()
        } else {
            let basis = crate::spectral::Basis::cosine(wdim, 400.0, 700.0, 5.0);
            let model = crate::spectral::SpectralModel::new(
                basis,
                crate::spectral::BandProfile::Gaussian { sigma: 8.0, scale: 1.0 },
                crate::spectral::BandProfile::Gaussian { sigma: 6.0, scale: 1.0 },
                &(0..12).map(|j| 440.0 + 20.0 * j as f64).collect::<Vec<_>>(),
                5.0,
                5,
            )
            .unwrap();
            model.w_matrix().clone()
        };
        loop {
            let tilt = if allow_shadow { 2.0 } else { 0.25 };
            let dir = Vector3::new(
                (rng.random::<f64>() - 0.5) * 2.0 * tilt,
                (rng.random::<f64>() - 0.5) * 2.0 * tilt,
                -1.0,
            )
            .normalize();
            let x = Vector3::new(
                (rng.random::<f64>() - 0.5) * 20.0,
                (rng.random::<f64>() - 0.5) * 20.0,
                110.0 + rng.random::<f64>() * 12.0,
            );
            let mut coeffs = DVector::zeros(wdim);
            coeffs[0] = 0.3 + rng.random::<f64>() * 0.6;
            for k in 1..wdim {
                coeffs[k] = (rng.random::<f64>() - 0.5) * 0.2;
            }
            let lights: Vec<Vector3<f64>> = (0..12)
                .map(|j| (rig.light_position(j).unwrap() - x).normalize())
                .collect();
            if !allow_shadow && lights.iter().any(|l| l.dot(&dir) < 0.05) {
                continue;
            }
            let falloff = DVector::from_iterator(
                12,
                (0..12).map(|j| (rig.light_position(j).unwrap() - x).norm_squared()),
            );
            let mut row = DVector::zeros(12);
            for j in 0..12 {
                let ln = lights[j].dot(&dir).max(0.0);
                let cw = coeffs.dot(&spectral_w.column(j).into_owned());
                row[j] = cw * ln / falloff[j];
            }
            return Instance {
                row,
                lights,
                w_matrix: spectral_w,
                falloff,
                x,
                coeffs,
                normal: dir,
            };
        }
    }

    fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn zero_row_is_an_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut inst = random_instance(&mut rng, 3, false);
        inst.row.fill(0.0);
        assert!(solve_lifted(&inst.inputs(), &inst.x).is_err());
        assert!(solve_bilinear(&inst.inputs(), &Vector3::new(0.0, 0.0, -1.0), None, &inst.x).is_err());
    }

    #[test]
    fn lifted_recovers_lambertian_point_from_forward_model() {
        // Analytic MSS-Cam for a diffuse point; median row; lifted solve.
        let rig = testutil::sphere_rig(96);
        let spectral = testutil::test_spectral();
        let n_true = Vector3::new(0.2, -0.1, -0.97).normalize();
        let x = Vector3::new(0.0, 0.0, 128.0) + n_true * 20.0;
        let coeffs = testutil::uniform_coeffs();
        let cam = testutil::analytic_msscam(x, n_true, &coeffs, 0.0, 1.0, &rig, &spectral);
        let mut row = DVector::zeros(12);
        for j in 0..12 {
            let mut col: Vec<f64> = cam.column_values(j).collect();
            row[j] = crate::specular::median(&mut col);
        }
        let lights: Vec<Vector3<f64>> = (0..12)
            .map(|j| (rig.light_position(j).unwrap() - x).normalize())
            .collect();
        let falloff = DVector::from_iterator(
            12,
            (0..12).map(|j| (rig.light_position(j).unwrap() - x).norm_squared()),
        );
        let inputs = PhotometricInputs {
            row: &row,
            lights: &lights,
            w_matrix: spectral.w_matrix(),
            falloff: &falloff,
            band_weights: None,
        };
        let result = solve_lifted(&inputs, &x).unwrap();
        assert!(angle_deg(&result.normal, &n_true) < 0.01);
        for k in 0..3 {
            assert_relative_eq!(result.coeffs[k], coeffs[k], epsilon = 1e-6, max_relative = 1e-6);
        }
        assert!(result.rank1_ratio.unwrap() < 1e-8);
    }

    #[test]
    fn lifted_solution_is_rank_one_on_exact_data() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 3, false);
            let result = solve_lifted(&inst.inputs(), &inst.x).unwrap();
            assert!(
                result.rank1_ratio.unwrap() < 1e-8,
                "rank-1 ratio {}",
                result.rank1_ratio.unwrap()
            );
            assert!(angle_deg(&result.normal, &inst.normal) < 0.01);
        }
    }

    #[test]
    fn bilinear_initialized_at_truth_stays_put() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let inst = random_instance(&mut rng, 3, false);
        let result =
            solve_bilinear(&inst.inputs(), &inst.normal, Some(&inst.coeffs), &inst.x).unwrap();
        assert!(result.residual < 1e-10, "residual {}", result.residual);
        assert!(angle_deg(&result.normal, &inst.normal) < 1e-6);
    }

    #[test]
    fn lifted_and_bilinear_agree_on_100_noiseless_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for trial in 0..100 {
            let inst = random_instance(&mut rng, 3, false);
            let lifted = solve_lifted(&inst.inputs(), &inst.x).unwrap();
            // Bilinear from a deliberately offset initialization.
            let offset_init =
                (inst.normal + Vector3::new(0.15, -0.1, 0.0)).normalize();
            let bilinear = solve_bilinear(&inst.inputs(), &offset_init, None, &inst.x).unwrap();
            let disagreement = angle_deg(&lifted.normal, &bilinear.normal);
            assert!(
                disagreement < 0.1,
                "trial {trial}: methods disagree by {disagreement} deg"
            );
            for k in 0..3 {
                let denom = inst.coeffs.norm();
                assert!(
                    (lifted.coeffs[k] - bilinear.coeffs[k]).abs() / denom < 1e-4,
                    "trial {trial}: coeff {k} {} vs {}",
                    lifted.coeffs[k],
                    bilinear.coeffs[k]
                );
            }
        }
    }

    #[test]
    fn bilinear_covers_overcomplete_basis() {
        // w = 5, m = 12: lifted needs 15 unknowns and is infeasible.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 5, false);
            assert!(solve_lifted(&inst.inputs(), &inst.x).is_err());
            let init = (inst.normal + Vector3::new(0.1, 0.05, 0.0)).normalize();
            let result = solve_bilinear(&inst.inputs(), &init, None, &inst.x).unwrap();
            assert!(
                angle_deg(&result.normal, &inst.normal) < 1.0,
                "normal error {}",
                angle_deg(&result.normal, &inst.normal)
            );
            let rel = (&result.coeffs - &inst.coeffs).norm() / inst.coeffs.norm();
            assert!(rel < 0.01, "coefficient error {rel}");
        }
    }

    #[test]
    fn scaling_the_row_scales_coefficients_only() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let inst = random_instance(&mut rng, 3, false);
        let base = solve_lifted(&inst.inputs(), &inst.x).unwrap();
        let gamma = 3.7;
        let scaled_row = &inst.row * gamma;
        let scaled_inputs = PhotometricInputs {
            row: &scaled_row,
            lights: &inst.lights,
            w_matrix: &inst.w_matrix,
            falloff: &inst.falloff,
            band_weights: None,
        };
        let scaled = solve_lifted(&scaled_inputs, &inst.x).unwrap();
        assert!((base.normal - scaled.normal).norm() < 1e-9);
        for k in 0..3 {
            assert_relative_eq!(scaled.coeffs[k], base.coeffs[k] * gamma, max_relative = 1e-9);
        }
    }

    #[test]
    fn rotating_lights_and_normal_rotates_the_solution() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let inst = random_instance(&mut rng, 3, false);
            // Small random rotation (keeps the front-facing sign convention
            // meaningful).
            let axis = Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            )
            .normalize();
            let angle = (rng.random::<f64>() - 0.5) * 0.6;
            let rot = nalgebra::Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(axis),
                angle,
            );
            let base = solve_lifted(&inst.inputs(), &inst.x).unwrap();
            let rotated_lights: Vec<Vector3<f64>> =
                inst.lights.iter().map(|l| rot * l).collect();
            let rotated_inputs = PhotometricInputs {
                row: &inst.row,
                lights: &rotated_lights,
                w_matrix: &inst.w_matrix,
                falloff: &inst.falloff,
                band_weights: None,
            };
            // Rotate X as well so the sign convention follows the frame.
            let rx = rot * inst.x;
            let rotated = solve_lifted(&rotated_inputs, &rx).unwrap();
            let expected = rot * base.normal;
            assert!(
                (rotated.normal - expected).norm() < 1e-8,
                "equivariance violated by {}",
                (rotated.normal - expected).norm()
            );
        }
    }

    #[test]
    fn bilinear_jacobian_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let inst = random_instance(&mut rng, 3, false);
        let anchor = (inst.normal + Vector3::new(0.1, -0.05, 0.0)).normalize();
        let (e1, e2) = tangent_frame(&anchor);
        for _ in 0..20 {
            let mut params = DVector::zeros(5);
            params[0] = 0.2 + rng.random::<f64>();
            params[1] = (rng.random::<f64>() - 0.5) * 0.3;
            params[2] = (rng.random::<f64>() - 0.5) * 0.3;
            params[3] = (rng.random::<f64>() - 0.5) * 0.2;
            params[4] = (rng.random::<f64>() - 0.5) * 0.2;
            let mut problem = BilinearProblem {
                params: params.clone(),
                anchor,
                e1,
                e2,
                w_matrix: inst.w_matrix.clone(),
                lights: inst.lights.clone(),
                targets: inst.inputs().targets(),
                weights: vec![1.0; 12],
            };
            let analytic = problem.jacobian().unwrap();
            for p in 0..5 {
                let h = 1e-6 * params[p].abs().max(1e-3);
                let mut hi = params.clone();
                hi[p] += h;
                let mut lo = params.clone();
                lo[p] -= h;
                problem.set_params(&hi);
                let r_hi = problem.residuals().unwrap();
                problem.set_params(&lo);
                let r_lo = problem.residuals().unwrap();
                problem.set_params(&params);
                let scale = analytic.column(p).amax().max(1e-9);
                for row in 0..12 {
                    let fd = (r_hi[row] - r_lo[row]) / (2.0 * h);
                    assert!(
                        (analytic[(row, p)] - fd).abs() <= 1e-5 * scale.max(fd.abs()),
                        "param {p} row {row}: {} vs fd {fd}",
                        analytic[(row, p)]
                    );
                }
            }
        }
    }

    #[test]
    fn shadowed_bands_are_reweighted_not_fatal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut found = 0;
        for _ in 0..50 {
            let inst = random_instance(&mut rng, 3, true);
            let shadowed = inst
                .lights
                .iter()
                .filter(|l| l.dot(&inst.normal) <= 0.0)
                .count();
            if shadowed == 0 || shadowed > 3 {
                continue;
            }
            found += 1;
            let result = solve_photometric(
                &inst.inputs(),
                &inst.x,
                &Vector3::new(0.0, 0.0, -1.0),
            )
            .unwrap();
            assert!(
                angle_deg(&result.normal, &inst.normal) < 0.5,
                "normal error {} with {shadowed} shadowed bands",
                angle_deg(&result.normal, &inst.normal)
            );
        }
        assert!(found >= 5, "only {found} shadowed instances sampled");
    }

    #[test]
    fn reflectance_curve_band_quadrature_matches_projection() {
        // The dense curve restricted to band j, integrated against E_j Q_j,
        // must reproduce c·W_j.
        let spectral = testutil::test_spectral();
        let c = DVector::from_vec(vec![0.55, 0.2, -0.07]);
        let curve = recover_reflectance(&spectral, &c);
        let grid = spectral.basis().grid();
        for j in 0..spectral.num_bands() {
            let e = spectral.band_illumination(j);
            let q = spectral.band_response(j);
            let mut acc = 0.0;
            for (l, &lambda) in spectral.band_wavelengths(j).iter().enumerate() {
                let gi = ((lambda - grid[0]) / (grid[1] - grid[0])).round() as usize;
                acc += curve[gi] * e[l] * q[l];
            }
            assert_relative_eq!(acc, spectral.diffuse_response(&c, j), epsilon = 1e-10);
        }
    }
}
