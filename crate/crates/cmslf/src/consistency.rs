//! Depth hypotheses scoring: photo-consistency for diffuse points,
//! periodicity consistency for specular ones, and the per-pixel plane sweep
//! that combines them.
//!
//! For a diffuse point sampled at the correct depth every MSS-Cam column is
//! constant, so the mean column standard deviation `C` bottoms out at the
//! true depth. Specular points break that: each column carries a periodic
//! intensity profile in the spoke angle (one highlight lobe per camera
//! revolution), so their depth is refined by `S`, which scores how well the
//! columns fit low-order Fourier series and how well the fitted peak angles
//! agree with the peak angles predicted by mirror-reflection geometry.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::msscam::{sample_msscam, MssCam};
use crate::renderer::LightField;
use crate::rig::RigConfig;

/// Truncated Fourier series `a_0 + Σ_p a_p cos(pφ) + b_p sin(pφ)` fitted by
/// least squares.
#[derive(Debug, Clone)]
pub struct FourierFit {
    pub order: usize,
    pub a0: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Root-mean-square residual of the fit.
    pub residual_rmse: f64,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
}

impl FourierFit {
    pub fn eval(&self, phi: f64) -> f64 {
        let mut value = self.a0;
        for p in 1..=self.order {
            value += self.a[p - 1] * (p as f64 * phi).cos() + self.b[p - 1] * (p as f64 * phi).sin();
        }
        value
    }

    /// Argmax of the fitted series on a dense angular grid over `[0, 2π)`.
    pub fn peak_on_grid(&self, grid: usize) -> (f64, f64) {
        let mut best_phi = 0.0;
        let mut best_val = f64::NEG_INFINITY;
        for k in 0..grid {
            let phi = std::f64::consts::TAU * k as f64 / grid as f64;
            let v = self.eval(phi);
            if v > best_val {
                best_val = v;
                best_phi = phi;
            }
        }
        (best_phi, best_val)
    }
}

/// Least-squares fit of a truncated Fourier series to (angle, value) pairs.
/// Needs at least `2·order + 1` samples.
pub fn fit_fourier(angles: &[f64], values: &[f64], order: usize) -> Result<FourierFit> {
    if angles.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} angles for {} values",
            angles.len(),
            values.len()
        )));
    }
    let unknowns = 2 * order + 1;
    if angles.len() < unknowns {
        return Err(Error::Degenerate(format!(
            "{} samples cannot determine a Fourier series of order {order}",
            angles.len()
        )));
    }
    let rows = angles.len();
    let mut design = DMatrix::zeros(rows, unknowns);
    for (r, &phi) in angles.iter().enumerate() {
        design[(r, 0)] = 1.0;
        for p in 1..=order {
            design[(r, 2 * p - 1)] = (p as f64 * phi).cos();
            design[(r, 2 * p)] = (p as f64 * phi).sin();
        }
    }
    let rhs = DVector::from_column_slice(values);
    let svd = design.clone().svd(true, true);
    let coeffs = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Degenerate(format!("fourier fit solve failed: {e}")))?;
    let residual_vec = &design * &coeffs - &rhs;
    let residual_norm = residual_vec.norm();
    let fit = FourierFit {
        order,
        a0: coeffs[0],
        a: (1..=order).map(|p| coeffs[2 * p - 1]).collect(),
        b: (1..=order).map(|p| coeffs[2 * p]).collect(),
        residual_rmse: residual_norm / (rows as f64).sqrt(),
        residual_norm,
    };
    if !fit.a0.is_finite() || fit.a.iter().chain(fit.b.iter()).any(|c| !c.is_finite()) {
        return Err(Error::Degenerate("fourier coefficients not finite".into()));
    }
    Ok(fit)
}

/// Mean over usable columns of the population standard deviation of valid
/// entries: near zero for a diffuse point sampled at the correct depth.
pub fn photo_consistency(cam: &MssCam) -> Result<f64> {
    let mut total = 0.0;
    let mut used = 0usize;
    for j in 0..cam.rings() {
        if !cam.usable_columns[j] {
            continue;
        }
        let values: Vec<f64> = cam.column_values(j).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        total += var.sqrt();
        used += 1;
    }
    if used == 0 {
        return Err(Error::NoValidSamples(
            "no MSS-Cam column has enough samples for photo-consistency".into(),
        ));
    }
    Ok(total / used as f64)
}

/// Outcome of the periodicity-consistency measurement.
#[derive(Debug, Clone)]
pub struct SpecularConsistency {
    /// `S`: the column-residual term normalized by the mean intensity (so
    /// both contributions are dimensionless and the argmin over depth is
    /// invariant to global intensity scaling) plus the peak-agreement term
    /// in radians.
    pub score: f64,
    /// Mean over columns of the Fourier-fit residual norm.
    pub residual_term: f64,
    /// Norm of the wrapped differences between predicted and fitted peak
    /// spoke angles; zero when too few columns carry a usable peak.
    pub peak_term: f64,
    /// Fitted peak spoke angle per column (None when the column has no
    /// significant angular variation).
    pub peak_angles: Vec<Option<f64>>,
    /// Fitted peak value per column.
    pub peak_values: Vec<Option<f64>>,
    /// Fourier series over the per-column peak values as a function of the
    /// light angle; the cross-column periodic curve.
    pub peak_value_fit: Option<FourierFit>,
    /// Normal estimate from the peak bisector construction, when available.
    pub working_normal: Option<Vector3<f64>>,
}

/// Minimum peak amplitude, relative to the mean intensity, for a column to
/// contribute to the peak-agreement term.
const PEAK_AMPLITUDE_REL: f64 = 0.05;

fn wrap_angle(a: f64) -> f64 {
    a.sin().atan2(a.cos())
}

/// Direction from `x` to the camera at continuous spoke angle `phi` on the
/// ring of radius `ring_radius`.
fn view_direction(x: &Vector3<f64>, ring_radius: f64, phi: f64) -> Vector3<f64> {
    (Vector3::new(ring_radius * phi.cos(), ring_radius * phi.sin(), 0.0) - x).normalize()
}

/// Normal estimate that bisects, per column, the lighting direction and the
/// viewing direction of the fitted specular peak, weighted by peak amplitude.
pub fn peak_bisector_normal(
    cam: &MssCam,
    rig: &RigConfig,
    peak_angles: &[Option<f64>],
    peak_weights: &[f64],
) -> Option<Vector3<f64>> {
    let mut acc = Vector3::zeros();
    let mut any = false;
    for j in 0..cam.rings() {
        let Some(phi) = peak_angles[j] else { continue };
        let light = rig.light_position(j).ok()?;
        let l = (light - cam.point).normalize();
        let v = view_direction(&cam.point, rig.ring_radii[j], phi);
        let h = l + v;
        if h.norm() < 1e-9 {
            continue;
        }
        acc += h.normalize() * peak_weights[j];
        any = true;
    }
    if !any || acc.norm() < 1e-9 {
        None
    } else {
        Some(acc.normalize())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PeriodicityOptions {
    pub fourier_order: usize,
    /// Samples per revolution when locating peaks on the fitted series.
    pub peak_grid: usize,
}

impl Default for PeriodicityOptions {
    fn default() -> Self {
        Self {
            fourier_order: 2,
            peak_grid: 720,
        }
    }
}

/// Periodicity consistency of a specular MSS-Cam.
///
/// The first term accumulates, per column, how far the samples stray from a
/// low-order periodic curve. The second compares two independent estimates of
/// each column's highlight position: the argmax of the fitted curve versus
/// the spoke angle at which the mirror-reflection direction of light `j`
/// (about a working normal built from the peak bisectors) best aligns with
/// the viewing direction. The cross-column curve of peak values over light
/// angles is fitted as well and exposed for inspection.
pub fn periodicity_consistency(
    cam: &MssCam,
    rig: &RigConfig,
    options: &PeriodicityOptions,
) -> Result<SpecularConsistency> {
    let m = cam.rings();
    let mut residual_sum = 0.0;
    let mut fitted_columns = 0usize;
    let mut peak_angles: Vec<Option<f64>> = vec![None; m];
    let mut peak_values: Vec<Option<f64>> = vec![None; m];
    let mut peak_weights = vec![0.0; m];
    let mean_intensity = cam.mean_intensity();

    for j in 0..m {
        if !cam.usable_columns[j] {
            continue;
        }
        let mut angles = Vec::new();
        let mut values = Vec::new();
        for i in 0..cam.spokes() {
            if cam.mask[(i, j)] {
                angles.push(rig.spoke_angle(i));
                values.push(cam.values[(i, j)]);
            }
        }
        if angles.len() < 2 * options.fourier_order + 1 {
            continue;
        }
        let fit = fit_fourier(&angles, &values, options.fourier_order)?;
        residual_sum += fit.residual_norm;
        fitted_columns += 1;

        let (phi_peak, value_peak) = fit.peak_on_grid(options.peak_grid);
        // Peak amplitude above the column's fitted floor.
        let mut min_val = f64::INFINITY;
        for k in 0..options.peak_grid {
            let phi = std::f64::consts::TAU * k as f64 / options.peak_grid as f64;
            min_val = min_val.min(fit.eval(phi));
        }
        let amplitude = value_peak - min_val;
        if amplitude > PEAK_AMPLITUDE_REL * mean_intensity.max(1e-300) {
            peak_angles[j] = Some(phi_peak);
            peak_values[j] = Some(value_peak);
            peak_weights[j] = amplitude;
        }
    }

    if fitted_columns == 0 {
        return Err(Error::NoValidSamples(
            "no MSS-Cam column is fittable for periodicity consistency".into(),
        ));
    }
    let residual_term = residual_sum / fitted_columns as f64;

    // Cross-column curve: peak values against the light angles.
    let mut curve_angles = Vec::new();
    let mut curve_values = Vec::new();
    for j in 0..m {
        if let Some(v) = peak_values[j] {
            curve_angles
                .push(rig.light_phase + j as f64 * std::f64::consts::TAU / rig.num_rings as f64);
            curve_values.push(v);
        }
    }
    let peak_value_fit = if curve_angles.len() >= 3 {
        let order = ((curve_angles.len() - 1) / 2).min(2);
        fit_fourier(&curve_angles, &curve_values, order).ok()
    } else {
        None
    };

    let working_normal = peak_bisector_normal(cam, rig, &peak_angles, &peak_weights);

    // Predicted peak angle per column from reflection geometry, compared
    // against the fitted peaks.
    let mut peak_term = 0.0;
    if let Some(normal) = working_normal {
        let mut sq_sum = 0.0;
        let mut compared = 0usize;
        for j in 0..m {
            let Some(measured) = peak_angles[j] else { continue };
            let light = rig.light_position(j)?;
            let l = (light - cam.point).normalize();
            let ln = l.dot(&normal);
            if ln <= 0.0 {
                continue;
            }
            let d = normal * (2.0 * ln) - l;
            let mut best_phi = 0.0;
            let mut best_align = f64::NEG_INFINITY;
            for k in 0..options.peak_grid {
                let phi = std::f64::consts::TAU * k as f64 / options.peak_grid as f64;
                let align = view_direction(&cam.point, rig.ring_radii[j], phi).dot(&d);
                if align > best_align {
                    best_align = align;
                    best_phi = phi;
                }
            }
            sq_sum += wrap_angle(best_phi - measured).powi(2);
            compared += 1;
        }
        if compared > 0 {
            peak_term = sq_sum.sqrt();
        }
    }

    Ok(SpecularConsistency {
        score: residual_term / mean_intensity.max(1e-300) + peak_term,
        residual_term,
        peak_term,
        peak_angles,
        peak_values,
        peak_value_fit,
        working_normal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelLabel {
    Diffuse,
    Specular,
    Invalid,
}

#[derive(Debug, Clone)]
pub struct DepthHypothesisResult {
    pub depth: f64,
    /// Photo-consistency at the chosen depth.
    pub c: f64,
    /// Periodicity consistency at the chosen depth (specular branch only).
    pub s: Option<f64>,
    pub label: PixelLabel,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Diffuse/specular threshold on C, relative to the MSS-Cam mean
    /// intensity at the winning depth.
    pub tau_c_rel: f64,
    /// Half-width, in depth steps, of the S refinement window around the
    /// photo-consistency minimum.
    pub s_window_steps: usize,
    pub periodicity: PeriodicityOptions,
    /// Pixels whose best-depth mean intensity falls below this absolute floor
    /// are background.
    pub min_mean_intensity: f64,
    /// A pixel must expose at least one internally consistent column
    /// (std/mean below this) at its best depth to count as a surface point.
    pub bg_consistency: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            tau_c_rel: 0.05,
            s_window_steps: 10,
            periodicity: PeriodicityOptions::default(),
            min_mean_intensity: 0.0,
            bg_consistency: 0.12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub result: DepthHypothesisResult,
    /// (depth, C) per hypothesis; C is infinite where no column was usable.
    pub c_curve: Vec<(f64, f64)>,
    /// (depth, S) over the refinement window (specular branch only).
    pub s_curve: Vec<(f64, f64)>,
    /// Mean MSS-Cam intensity at the winning depth.
    pub best_mean_intensity: f64,
}

/// Whether the MSS-Cam exposes at least one significant, internally
/// consistent column — true surface points do (diffuse columns are constant;
/// specular points keep some lobe-free columns), floating background points
/// do not.
fn has_consistent_column(cam: &MssCam, rel_tol: f64) -> bool {
    let overall = cam.mean_intensity();
    if overall <= 0.0 {
        return false;
    }
    for j in 0..cam.rings() {
        if !cam.usable_columns[j] {
            continue;
        }
        let values: Vec<f64> = cam.column_values(j).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if mean < 0.1 * overall {
            continue;
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        if var.sqrt() <= rel_tol * mean {
            return true;
        }
    }
    false
}

/// Full per-pixel depth sweep: photo-consistency minimum, diffuse/specular
/// classification, and S-refinement over a local window for specular points.
/// Ties break toward smaller depth.
pub fn depth_sweep(
    lf: &LightField,
    u: f64,
    v: f64,
    options: &SweepOptions,
) -> Result<SweepOutcome> {
    let rig = lf.rig();
    let depths = rig.depth_hypotheses();
    let mut c_curve = Vec::with_capacity(depths.len());
    let mut best: Option<(usize, f64)> = None;
    for (idx, &z) in depths.iter().enumerate() {
        let cam = sample_msscam(lf, u, v, z)?;
        let c = photo_consistency(&cam).unwrap_or(f64::INFINITY);
        c_curve.push((z, c));
        if best.is_none_or(|(_, bc)| c < bc) {
            best = Some((idx, c));
        }
    }
    let (best_idx, best_c) = best.expect("at least one depth hypothesis");
    if !best_c.is_finite() {
        return Ok(SweepOutcome {
            result: DepthHypothesisResult {
                depth: depths[best_idx],
                c: best_c,
                s: None,
                label: PixelLabel::Invalid,
            },
            c_curve,
            s_curve: Vec::new(),
            best_mean_intensity: 0.0,
        });
    }

    let best_cam = sample_msscam(lf, u, v, depths[best_idx])?;
    let best_mean = best_cam.mean_intensity();
    let is_background = best_mean < options.min_mean_intensity
        || !has_consistent_column(&best_cam, options.bg_consistency);
    if is_background {
        return Ok(SweepOutcome {
            result: DepthHypothesisResult {
                depth: depths[best_idx],
                c: best_c,
                s: None,
                label: PixelLabel::Invalid,
            },
            c_curve,
            s_curve: Vec::new(),
            best_mean_intensity: best_mean,
        });
    }

    let tau_c = options.tau_c_rel * best_mean;
    if best_c <= tau_c {
        return Ok(SweepOutcome {
            result: DepthHypothesisResult {
                depth: depths[best_idx],
                c: best_c,
                s: None,
                label: PixelLabel::Diffuse,
            },
            c_curve,
            s_curve: Vec::new(),
            best_mean_intensity: best_mean,
        });
    }

    // Specular: refine within a window around the C minimum using S.
    let lo = best_idx.saturating_sub(options.s_window_steps);
    let hi = (best_idx + options.s_window_steps).min(depths.len() - 1);
    let mut s_curve = Vec::with_capacity(hi - lo + 1);
    let mut best_s: Option<(usize, f64)> = None;
    for idx in lo..=hi {
        let cam = sample_msscam(lf, u, v, depths[idx])?;
        let s = periodicity_consistency(&cam, rig, &options.periodicity)
            .map(|sc| sc.score)
            .unwrap_or(f64::INFINITY);
        s_curve.push((depths[idx], s));
        if best_s.is_none_or(|(_, bs)| s < bs) {
            best_s = Some((idx, s));
        }
    }
    let (s_idx, s_min) = best_s.expect("window is nonempty");
    let chosen = if s_min.is_finite() { s_idx } else { best_idx };
    Ok(SweepOutcome {
        result: DepthHypothesisResult {
            depth: depths[chosen],
            c: c_curve[chosen].1,
            s: s_min.is_finite().then_some(s_min),
            label: PixelLabel::Specular,
        },
        c_curve,
        s_curve,
        best_mean_intensity: best_mean,
    })
}
