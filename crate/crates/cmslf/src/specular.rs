//! Specular parameter estimation from MSS-Cam vertical gradients, and
//! removal of the fitted lobe.
//!
//! Within one MSS-Cam column the light, the surface point and therefore the
//! diffuse term are all fixed; only the viewing direction changes from row to
//! row. Differencing vertically along a column cancels the diffuse component
//! exactly and leaves a pure specular signal
//!
//! ```text
//! ∇M(i,j) = β ((D_j·V_{i+1,j})^σ − (D_j·V_{i,j})^σ) · JEQ_j / |P_j − X|²
//! ```
//!
//! which, normalized by the known per-column falloff and flat-spectrum
//! response (`G = ∇M · |P_j − X|² / JEQ_j`), depends only on the normal, the
//! shininess σ and the specular reflectivity β. Those three are recovered by
//! damped least squares with an analytic Jacobian, σ parameterized in
//! log-space.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::storage::Owned;
use nalgebra::{DMatrix, DVector, Dyn, Matrix, Vector3, Vector4, U1, U4};

use crate::error::{Error, Result};
use crate::msscam::MssCam;
use crate::rig::RigConfig;
use crate::spectral::SpectralModel;

/// Vertical-gradient matrices of an MSS-Cam, `(n-1) x m`.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Raw differences `M(i+1,j) - M(i,j)`.
    pub raw: DMatrix<f64>,
    /// Falloff/response normalized gradients `G`.
    pub normalized: DMatrix<f64>,
    /// Entry validity (both adjacent samples valid).
    pub mask: DMatrix<bool>,
    /// The 3D point the MSS-Cam was sampled at.
    pub point: Vector3<f64>,
}

/// Result of the damped specular fit.
#[derive(Debug, Clone)]
pub struct SpecularFit {
    pub normal: Vector3<f64>,
    pub shininess: f64,
    pub beta: f64,
    /// Euclidean norm of the gradient residual at the solution.
    pub residual: f64,
    pub converged: bool,
    /// True when the gradients carry no usable specular signal (β pinned 0).
    pub degenerate: bool,
}

const SHININESS_RANGE: (f64, f64) = (1.0, 200.0);

/// Column differences and their falloff-normalized form. The division uses
/// the exact per-column scalar: within a column the point and the light are
/// fixed, so `|P_j - X|²` is constant.
pub fn vertical_gradients(
    cam: &MssCam,
    rig: &RigConfig,
    spectral: &SpectralModel,
) -> Result<Gradients> {
    let n = cam.spokes();
    let m = cam.rings();
    if n < 2 {
        return Err(Error::Degenerate("need at least two spokes".into()));
    }
    let mut raw = DMatrix::zeros(n - 1, m);
    let mut normalized = DMatrix::zeros(n - 1, m);
    let mut mask = DMatrix::from_element(n - 1, m, false);
    for j in 0..m {
        let light = rig.light_position(j)?;
        let dist_sq = (light - cam.point).norm_squared();
        let jeq = spectral.jeq(j);
        if jeq <= 0.0 {
            return Err(Error::Degenerate(format!("band {j} has nonpositive JEQ")));
        }
        for i in 0..n - 1 {
            if cam.mask[(i, j)] && cam.mask[(i + 1, j)] {
                let d = cam.values[(i + 1, j)] - cam.values[(i, j)];
                raw[(i, j)] = d;
                normalized[(i, j)] = d * dist_sq / jeq;
                mask[(i, j)] = true;
            }
        }
    }
    Ok(Gradients {
        raw,
        normalized,
        mask,
        point: cam.point,
    })
}

/// The model value `(D_j·V)^σ` with the forward conventions: zero for
/// back-facing lights, clamped reflection alignment.
#[inline]
fn lobe_power(d: &Vector3<f64>, view: &Vector3<f64>, sigma: f64) -> f64 {
    let dv = d.dot(view);
    if dv <= 0.0 {
        0.0
    } else {
        dv.powf(sigma)
    }
}

/// Damped least-squares problem over (normal tangent offsets, log σ, β).
struct SpecularProblem {
    /// Current parameters: (t1, t2, ln σ, β).
    params: Vector4<f64>,
    /// Anchor normal and tangent frame for the offset parameterization.
    anchor: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    /// Per equation: (light index, view at i, view at i+1, target G).
    equations: Vec<(usize, Vector3<f64>, Vector3<f64>, f64)>,
    lights: Vec<Vector3<f64>>,
}

impl SpecularProblem {
    fn current_normal(&self) -> (Vector3<f64>, f64) {
        let g = self.anchor + self.e1 * self.params[0] + self.e2 * self.params[1];
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

impl LeastSquaresProblem<f64, Dyn, U4> for SpecularProblem {
    type ResidualStorage = Owned<f64, Dyn, U1>;
    type JacobianStorage = Owned<f64, Dyn, U4>;
    type ParameterStorage = Owned<f64, U4, U1>;

    fn set_params(&mut self, x: &Vector4<f64>) {
        self.params = *x;
    }

    fn params(&self) -> Vector4<f64> {
        self.params
    }

    fn residuals(&self) -> Option<Matrix<f64, Dyn, U1, Self::ResidualStorage>> {
        let (normal, _) = self.current_normal();
        let sigma = self.params[2].exp();
        let beta = self.params[3];
        let mut r = Matrix::<f64, Dyn, U1, _>::zeros(self.equations.len());
        for (row, (j, v_lo, v_hi, target)) in self.equations.iter().enumerate() {
            let l = &self.lights[*j];
            let ln = l.dot(&normal);
            let model = if ln <= 0.0 {
                0.0
            } else {
                let d = normal * (2.0 * ln) - l;
                beta * (lobe_power(&d, v_hi, sigma) - lobe_power(&d, v_lo, sigma))
            };
            r[row] = model - target;
        }
        Some(r)
    }

    fn jacobian(&self) -> Option<Matrix<f64, Dyn, U4, Self::JacobianStorage>> {
        let (normal, gnorm) = self.current_normal();
        let sigma = self.params[2].exp();
        let beta = self.params[3];
        // ∂N/∂t_k = (e_k − N (N·e_k)) / |g|
        let dn_dt1 = (self.e1 - normal * normal.dot(&self.e1)) / gnorm;
        let dn_dt2 = (self.e2 - normal * normal.dot(&self.e2)) / gnorm;
        let mut jac = Matrix::<f64, Dyn, U4, _>::zeros(self.equations.len());
        for (row, (j, v_lo, v_hi, _)) in self.equations.iter().enumerate() {
            let l = &self.lights[*j];
            let ln = l.dot(&normal);
            if ln <= 0.0 {
                continue; // model identically 0 in this region
            }
            let d = normal * (2.0 * ln) - l;
            let mut pow = [0.0f64; 2];
            let mut dpow_dsigma = [0.0f64; 2];
            let mut dpow_dn = [Vector3::zeros(), Vector3::zeros()];
            for (k, view) in [v_lo, v_hi].into_iter().enumerate() {
                let dv = d.dot(view);
                if dv > 0.0 {
                    let p = dv.powf(sigma);
                    pow[k] = p;
                    // d/d(lnσ) x^σ = x^σ · ln x · σ
                    dpow_dsigma[k] = p * dv.ln() * sigma;
                    // ∂(D·V)/∂N = 2 (L·N) V + 2 (V·N) L ... via D = 2(L·N)N − L:
                    // ∂D/∂N[dir] = 2(L·dir)N + 2(L·N)dir
                    // ∂(D·V)/∂dir = 2(L·dir)(N·V) + 2(L·N)(dir·V)
                    let common = sigma * dv.powf(sigma - 1.0);
                    let ddv_dn = |dir: &Vector3<f64>| {
                        2.0 * l.dot(dir) * normal.dot(view) + 2.0 * ln * dir.dot(view)
                    };
                    dpow_dn[k] = Vector3::new(
                        common * ddv_dn(&dn_dt1),
                        common * ddv_dn(&dn_dt2),
                        0.0,
                    );
                }
            }
            jac[(row, 0)] = beta * (dpow_dn[1].x - dpow_dn[0].x);
            jac[(row, 1)] = beta * (dpow_dn[1].y - dpow_dn[0].y);
            jac[(row, 2)] = beta * (dpow_dsigma[1] - dpow_dsigma[0]);
            jac[(row, 3)] = pow[1] - pow[0];
        }
        Some(jac)
    }
}

#[derive(Debug, Clone)]
pub struct SpecularFitOptions {
    /// Extra normal initializations tried in addition to the default
    /// multi-start cone (e.g. the peak-bisector estimate).
    pub init_normals: Vec<Vector3<f64>>,
    pub sigma_init: f64,
    /// Gradient norm below which the point is declared non-specular.
    pub min_gradient_norm: f64,
}

impl Default for SpecularFitOptions {
    fn default() -> Self {
        Self {
            init_normals: Vec::new(),
            sigma_init: 10.0,
            min_gradient_norm: 1e-12,
        }
    }
}

/// Default multi-start normals: toward the rig center, plus two cones of
/// tilts around it.
fn default_normal_starts(x: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let center = (-x).normalize();
    let (e1, e2) = tangent_frame(&center);
    let mut starts = vec![center];
    for &tilt in &[20.0f64, 40.0] {
        let t = tilt.to_radians().tan();
        for k in 0..8 {
            let ang = std::f64::consts::TAU * k as f64 / 8.0;
            starts.push((center + (e1 * ang.cos() + e2 * ang.sin()) * t).normalize());
        }
    }
    starts
}

/// Fit (N, σ, β) to normalized gradients by damped least squares with
/// multi-start over initial normals. Needs at least 5 usable equations.
pub fn fit_specular(
    gradients: &Gradients,
    x: &Vector3<f64>,
    rig: &RigConfig,
    options: &SpecularFitOptions,
) -> Result<SpecularFit> {
    let m = rig.num_rings;
    let n1 = gradients.normalized.nrows();
    let lights: Vec<Vector3<f64>> = (0..m)
        .map(|j| (rig.light_position(j).unwrap() - x).normalize())
        .collect();

    let mut equations = Vec::new();
    let mut g_norm_sq = 0.0;
    for j in 0..m {
        for i in 0..n1 {
            if !gradients.mask[(i, j)] {
                continue;
            }
            let cam_lo = rig.camera_position(i, j)?;
            let cam_hi = rig.camera_position(i + 1, j)?;
            let v_lo = (Vector3::new(cam_lo.x, cam_lo.y, 0.0) - x).normalize();
            let v_hi = (Vector3::new(cam_hi.x, cam_hi.y, 0.0) - x).normalize();
            let g = gradients.normalized[(i, j)];
            g_norm_sq += g * g;
            equations.push((j, v_lo, v_hi, g));
        }
    }
    if equations.len() < 5 {
        return Err(Error::Degenerate(format!(
            "{} usable gradient equations, need at least 5",
            equations.len()
        )));
    }
    let g_norm = g_norm_sq.sqrt();
    if g_norm < options.min_gradient_norm {
        return Ok(SpecularFit {
            normal: (-x).normalize(),
            shininess: options.sigma_init,
            beta: 0.0,
            residual: 0.0,
            converged: false,
            degenerate: true,
        });
    }

    let max_g = equations
        .iter()
        .map(|(_, _, _, g)| g.abs())
        .fold(0.0, f64::max);
    // Lobe power differences are O(0.1..1) near a visible peak.
    let beta_init = (max_g / 0.3).max(1e-6);

    let mut starts = options.init_normals.clone();
    starts.extend(default_normal_starts(x));

    let mut best: Option<SpecularFit> = None;
    for start in &starts {
        let anchor = start.normalize();
        let (e1, e2) = tangent_frame(&anchor);
        let problem = SpecularProblem {
            params: Vector4::new(0.0, 0.0, options.sigma_init.ln(), beta_init),
            anchor,
            e1,
            e2,
            equations: equations.clone(),
            lights: lights.clone(),
        };
        let (solved, report) = LevenbergMarquardt::new().minimize(problem);
        if !report.objective_function.is_finite() {
            continue;
        }
        let (normal, _) = solved.current_normal();
        let sigma = solved.params[2].exp();
        let beta = solved.params[3];
        let residual = (2.0 * report.objective_function).max(0.0).sqrt();
        let candidate = SpecularFit {
            normal,
            shininess: sigma.clamp(SHININESS_RANGE.0, SHININESS_RANGE.1),
            beta,
            residual,
            converged: report.termination.was_successful() && beta >= 0.0,
            degenerate: false,
        };
        if best.as_ref().is_none_or(|b| candidate.residual < b.residual) {
            best = Some(candidate);
        }
        // Perfect fit: no point trying further starts.
        if let Some(b) = &best {
            if b.converged && b.residual < 1e-10 * g_norm.max(1e-300) {
                break;
            }
        }
    }
    let mut fit = best.ok_or_else(|| Error::NonConvergence("all specular starts failed".into()))?;
    if fit.beta < 0.0 {
        fit.beta = 0.0;
        fit.converged = false;
    }
    Ok(fit)
}

/// Largest specular sample the fitted lobe predicts anywhere on the camera
/// grid; used to judge whether a fit is worth removing at all.
pub fn lobe_peak_value(
    fit: &SpecularFit,
    x: &Vector3<f64>,
    rig: &RigConfig,
    spectral: &SpectralModel,
) -> Result<f64> {
    let mut peak = 0.0f64;
    for j in 0..rig.num_rings {
        let light = rig.light_position(j)?;
        let to_light = light - x;
        let dist_sq = to_light.norm_squared();
        let l = to_light / dist_sq.sqrt();
        let ln = l.dot(&fit.normal);
        if ln <= 0.0 {
            continue;
        }
        let d = fit.normal * (2.0 * ln) - l;
        for i in 0..rig.cameras_per_ring {
            let cam = rig.camera_position(i, j)?;
            let view = (Vector3::new(cam.x, cam.y, 0.0) - x).normalize();
            let value = fit.beta * lobe_power(&d, &view, fit.shininess) * spectral.jeq(j) / dist_sq;
            peak = peak.max(value);
        }
    }
    Ok(peak)
}

/// Subtract the fitted lobe from the MSS-Cam (clamping at zero) and collapse
/// each column to its median: the specular-free per-band row vector.
pub fn remove_specular(
    cam: &MssCam,
    fit: &SpecularFit,
    rig: &RigConfig,
    spectral: &SpectralModel,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = cam.spokes();
    let m = cam.rings();
    let mut cleaned = DMatrix::zeros(n, m);
    let mut row = DVector::zeros(m);
    for j in 0..m {
        let light = rig.light_position(j)?;
        let to_light = light - cam.point;
        let dist_sq = to_light.norm_squared();
        let l = to_light / dist_sq.sqrt();
        let ln = l.dot(&fit.normal);
        let d = if ln > 0.0 {
            Some(fit.normal * (2.0 * ln) - l)
        } else {
            None
        };
        let mut column = Vec::with_capacity(n);
        for i in 0..n {
            if !cam.mask[(i, j)] {
                continue;
            }
            let specular = match &d {
                Some(d) => {
                    let cam_pos = rig.camera_position(i, j)?;
                    let view = (Vector3::new(cam_pos.x, cam_pos.y, 0.0) - cam.point).normalize();
                    fit.beta * lobe_power(d, &view, fit.shininess) * spectral.jeq(j) / dist_sq
                }
                None => 0.0,
            };
            let value = (cam.values[(i, j)] - specular).max(0.0);
            cleaned[(i, j)] = value;
            column.push(value);
        }
        row[j] = median(&mut column);
    }
    Ok((cleaned, row))
}

/// Median of a slice (mean of the two middle values for even counts);
/// 0 for empty input.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn synthetic_gradients(
        x: &Vector3<f64>,
        normal: &Vector3<f64>,
        beta: f64,
        sigma: f64,
        rig: &RigConfig,
    ) -> Gradients {
        let n = rig.cameras_per_ring;
        let m = rig.num_rings;
        let mut normalized = DMatrix::zeros(n - 1, m);
        for j in 0..m {
            let l = (rig.light_position(j).unwrap() - x).normalize();
            let ln = l.dot(normal);
            if ln <= 0.0 {
                continue;
            }
            let d = normal * (2.0 * ln) - l;
            for i in 0..n - 1 {
                let clo = rig.camera_position(i, j).unwrap();
                let chi = rig.camera_position(i + 1, j).unwrap();
                let vlo = (Vector3::new(clo.x, clo.y, 0.0) - x).normalize();
                let vhi = (Vector3::new(chi.x, chi.y, 0.0) - x).normalize();
                normalized[(i, j)] =
                    beta * (lobe_power(&d, &vhi, sigma) - lobe_power(&d, &vlo, sigma));
            }
        }
        Gradients {
            raw: normalized.clone(),
            normalized,
            mask: DMatrix::from_element(n - 1, m, true),
            point: *x,
        }
    }

    /// A sphere surface point whose lobe is well sampled by the rig.
    fn reference_point() -> (Vector3<f64>, Vector3<f64>) {
        let center = Vector3::new(0.0, 0.0, 128.0);
        let n = Vector3::new(0.25, 0.15, -0.95).normalize();
        (center + n * 20.0, n)
    }

    #[test]
    fn adjacent_difference_is_plain_subtraction() {
        let rig = testutil::sphere_rig(96);
        let spectral = testutil::test_spectral();
        let mut cam = testutil::analytic_msscam(
            Vector3::new(0.0, 0.0, 115.0),
            Vector3::new(0.0, 0.0, -1.0),
            &testutil::uniform_coeffs(),
            0.0,
            1.0,
            &rig,
            &spectral,
        );
        cam.values[(3, 2)] = 5.0;
        cam.values[(4, 2)] = 9.0;
        let g = vertical_gradients(&cam, &rig, &spectral).unwrap();
        assert_relative_eq!(g.raw[(3, 2)], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn diffuse_gradients_vanish() {
        let lf = testutil::lambertian_sphere_lf();
        let gt = lf.ground_truth.as_ref().unwrap();
        let spectral = testutil::test_spectral();
        let (u, v) = (48, 48);
        let z = gt.depth.get(u, v, 0) as f64;
        let cam = crate::msscam::sample_msscam(&lf, u as f64, v as f64, z).unwrap();
        let g = vertical_gradients(&cam, lf.rig(), &spectral).unwrap();
        let mean = cam.mean_intensity();
        let max_raw = g.raw.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
        // Pure interpolation noise; the bound scales with resolution (the
        // fixture renders at 96 px, a quarter of the reference resolution).
        assert!(
            max_raw < 2e-3 * mean,
            "raw gradient {max_raw} vs mean intensity {mean}"
        );
    }

    #[test]
    fn forward_model_gradients_match_closed_form() {
        let rig = testutil::sphere_rig(96);
        let spectral = testutil::test_spectral();
        let (x, n) = reference_point();
        let (beta, sigma) = (0.3, 8.0);
        let cam = testutil::analytic_msscam(
            x,
            n,
            &testutil::uniform_coeffs(),
            beta,
            sigma,
            &rig,
            &spectral,
        );
        let g = vertical_gradients(&cam, &rig, &spectral).unwrap();
        let oracle = synthetic_gradients(&x, &n, beta, sigma, &rig);
        let mut checked = 0;
        for j in 0..g.normalized.ncols() {
            for i in 0..g.normalized.nrows() {
                assert_relative_eq!(
                    g.normalized[(i, j)],
                    oracle.normalized[(i, j)],
                    epsilon = 1e-6,
                    max_relative = 1e-6
                );
                if oracle.normalized[(i, j)].abs() > 1e-9 {
                    checked += 1;
                }
            }
        }
        assert!(checked > 10, "lobe not visible in gradients ({checked})");
    }

    #[test]
    fn zero_gradients_are_degenerate() {
        let rig = testutil::sphere_rig(96);
        let x = Vector3::new(0.0, 0.0, 115.0);
        let g = Gradients {
            raw: DMatrix::zeros(11, 12),
            normalized: DMatrix::zeros(11, 12),
            mask: DMatrix::from_element(11, 12, true),
            point: x,
        };
        let fit = fit_specular(&g, &x, &rig, &SpecularFitOptions::default()).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.beta, 0.0);
    }

    #[test]
    fn too_few_equations_is_an_error() {
        let rig = testutil::sphere_rig(96);
        let x = Vector3::new(0.0, 0.0, 115.0);
        let mut mask = DMatrix::from_element(11, 12, false);
        mask[(0, 0)] = true;
        mask[(1, 0)] = true;
        let g = Gradients {
            raw: DMatrix::zeros(11, 12),
            normalized: DMatrix::zeros(11, 12),
            mask,
            point: x,
        };
        assert!(fit_specular(&g, &x, &rig, &SpecularFitOptions::default()).is_err());
    }

    #[test]
    fn recovers_parameters_from_noiseless_gradients() {
        let rig = testutil::sphere_rig(96);
        let (x, n) = reference_point();
        let (beta, sigma) = (0.3, 8.0);
        let g = synthetic_gradients(&x, &n, beta, sigma, &rig);
        let fit = fit_specular(&g, &x, &rig, &SpecularFitOptions::default()).unwrap();
        assert!(!fit.degenerate);
        let angle = fit.normal.dot(&n).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 1.0, "normal error {angle} deg");
        assert!((fit.beta - beta).abs() / beta < 0.02, "beta {}", fit.beta);
        assert!(
            (fit.shininess - sigma).abs() / sigma < 0.05,
            "sigma {}",
            fit.shininess
        );
    }

    #[test]
    fn tolerates_one_percent_noise() {
        let rig = testutil::sphere_rig(96);
        let (x, n) = reference_point();
        let (beta, sigma) = (0.3, 8.0);
        let mut g = synthetic_gradients(&x, &n, beta, sigma, &rig);
        let scale = g.normalized.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for value in g.normalized.iter_mut() {
            let noise: f64 = rng.random::<f64>() * 2.0 - 1.0;
            *value += 0.01 * scale * noise;
        }
        let fit = fit_specular(&g, &x, &rig, &SpecularFitOptions::default()).unwrap();
        let angle = fit.normal.dot(&n).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 3.0, "normal error {angle} deg under 1% noise");
    }

    #[test]
    fn analytic_jacobian_matches_central_differences() {
        let rig = testutil::sphere_rig(96);
        let (x, n) = reference_point();
        let g = synthetic_gradients(&x, &n, 0.3, 8.0, &rig);
        let lights: Vec<Vector3<f64>> = (0..12)
            .map(|j| (rig.light_position(j).unwrap() - x).normalize())
            .collect();
        let mut equations = Vec::new();
        for j in 0..12 {
            for i in 0..11 {
                let clo = rig.camera_position(i, j).unwrap();
                let chi = rig.camera_position(i + 1, j).unwrap();
                equations.push((
                    j,
                    (Vector3::new(clo.x, clo.y, 0.0) - x).normalize(),
                    (Vector3::new(chi.x, chi.y, 0.0) - x).normalize(),
                    g.normalized[(i, j)],
                ));
            }
        }
        let anchor = n;
        let (e1, e2) = tangent_frame(&anchor);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let params = Vector4::new(
                (rng.random::<f64>() - 0.5) * 0.2,
                (rng.random::<f64>() - 0.5) * 0.2,
                (rng.random::<f64>() * 2.0 - 1.0) * 0.5 + 8.0f64.ln(),
                0.1 + rng.random::<f64>() * 0.5,
            );
            let mut problem = SpecularProblem {
                params,
                anchor,
                e1,
                e2,
                equations: equations.clone(),
                lights: lights.clone(),
            };
            let analytic = problem.jacobian().unwrap();
            // Central differences, one parameter at a time.
            for p in 0..4 {
                let h = 1e-6 * params[p].abs().max(1e-3);
                let mut lo = params;
                lo[p] -= h;
                let mut hi = params;
                hi[p] += h;
                problem.set_params(&hi);
                let r_hi = problem.residuals().unwrap();
                problem.set_params(&lo);
                let r_lo = problem.residuals().unwrap();
                problem.set_params(&params);
                let col_scale = analytic.column(p).amax().max(1e-12);
                for row in 0..equations.len() {
                    let fd = (r_hi[row] - r_lo[row]) / (2.0 * h);
                    let diff = (analytic[(row, p)] - fd).abs();
                    assert!(
                        diff <= 1e-5 * col_scale.max(fd.abs()),
                        "param {p} row {row}: analytic {} fd {fd}",
                        analytic[(row, p)]
                    );
                }
            }
        }
    }

    #[test]
    fn removal_with_zero_beta_is_identity() {
        let rig = testutil::sphere_rig(96);
        let spectral = testutil::test_spectral();
        let (x, n) = reference_point();
        let cam = testutil::analytic_msscam(
            x,
            n,
            &testutil::uniform_coeffs(),
            0.3,
            8.0,
            &rig,
            &spectral,
        );
        let fit = SpecularFit {
            normal: n,
            shininess: 8.0,
            beta: 0.0,
            residual: 0.0,
            converged: true,
            degenerate: false,
        };
        let (cleaned, _) = remove_specular(&cam, &fit, &rig, &spectral).unwrap();
        for j in 0..cam.rings() {
            for i in 0..cam.spokes() {
                assert_relative_eq!(cleaned[(i, j)], cam.values[(i, j)], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn exact_fit_removal_leaves_constant_columns_equal_to_diffuse_term() {
        let rig = testutil::sphere_rig(96);
        let spectral = testutil::test_spectral();
        let (x, n) = reference_point();
        let coeffs = testutil::uniform_coeffs();
        let (beta, sigma) = (0.3, 8.0);
        let cam = testutil::analytic_msscam(x, n, &coeffs, beta, sigma, &rig, &spectral);
        let fit = SpecularFit {
            normal: n,
            shininess: sigma,
            beta,
            residual: 0.0,
            converged: true,
            degenerate: false,
        };
        let (cleaned, row) = remove_specular(&cam, &fit, &rig, &spectral).unwrap();
        for j in 0..cam.rings() {
            let light = rig.light_position(j).unwrap();
            let dist_sq = (light - x).norm_squared();
            let l = (light - x).normalize();
            let ln = l.dot(&n).max(0.0);
            let diffuse = ln * spectral.diffuse_response(&coeffs, j) / dist_sq;
            for i in 0..cam.spokes() {
                assert_relative_eq!(cleaned[(i, j)], diffuse, epsilon = 1e-6, max_relative = 1e-6);
            }
            assert_relative_eq!(row[j], diffuse, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn overestimated_beta_clamps_and_keeps_row_below_diffuse() {
        let rig = testutil::sphere_rig(96);
        let spectral = testutil::test_spectral();
        let (x, n) = reference_point();
        let coeffs = testutil::uniform_coeffs();
        let cam = testutil::analytic_msscam(x, n, &coeffs, 0.3, 8.0, &rig, &spectral);
        let fit = SpecularFit {
            normal: n,
            shininess: 8.0,
            beta: 0.45, // 1.5x the truth
            residual: 0.0,
            converged: true,
            degenerate: false,
        };
        let (cleaned, row) = remove_specular(&cam, &fit, &rig, &spectral).unwrap();
        assert!(cleaned.iter().all(|&v| v >= 0.0));
        for j in 0..cam.rings() {
            let light = rig.light_position(j).unwrap();
            let dist_sq = (light - x).norm_squared();
            let l = (light - x).normalize();
            let ln = l.dot(&n).max(0.0);
            let diffuse = ln * spectral.diffuse_response(&coeffs, j) / dist_sq;
            assert!(row[j] <= diffuse + 1e-12, "column {j}: {} vs {diffuse}", row[j]);
        }
    }

    #[test]
    fn median_resists_minority_corruption() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = 5 + (rng.random::<u32>() % 8) as usize;
            let clean: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let lo = clean.iter().cloned().fold(f64::MAX, f64::min);
            let hi = clean.iter().cloned().fold(f64::MIN, f64::max);
            let corrupt_count = (n - 1) / 2;
            let mut corrupted = clean.clone();
            for k in 0..corrupt_count {
                corrupted[k] = 1e6 * if k % 2 == 0 { 1.0 } else { -1.0 };
            }
            let med = median(&mut corrupted);
            assert!(
                med >= lo - 1e-12 && med <= hi + 1e-12,
                "median {med} escaped [{lo}, {hi}] with {corrupt_count}/{n} corrupted"
            );
        }
    }
}
