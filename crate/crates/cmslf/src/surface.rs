//! Surface reconstruction: normal-field integration and the full per-pixel
//! pipeline (sweep → classify → specular removal → photometric solve →
//! integrate, run twice).

use nalgebra::{DVector, Vector3};

use crate::consistency::{
    depth_sweep, peak_bisector_normal, periodicity_consistency, photo_consistency, PixelLabel,
    SweepOptions,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::msscam::sample_msscam;
use crate::photostereo::{solve_photometric, PhotometricInputs};
use crate::renderer::LightField;
use crate::rig::RigConfig;
use crate::spectral::SpectralModel;
use crate::specular::{fit_specular, remove_specular, vertical_gradients, SpecularFitOptions};

/// Dense per-pixel reconstruction output.
#[derive(Debug, Clone)]
pub struct SurfaceEstimate {
    pub depth: Image,
    /// Unit normals, 3 channels; zero outside the mask.
    pub normal: Image,
    /// Recovered reflectance coefficients, `w` channels.
    pub coefficients: Image,
    pub beta: Image,
    pub shininess: Image,
    /// 0 = invalid, 1 = diffuse, 2 = specular.
    pub label: Image,
    pub mask: Image,
    /// Photometric residual per pixel.
    pub residual: Image,
}

#[derive(Debug, Clone)]
pub struct IntegrationOptions {
    /// Weight of the depth anchors relative to the (unit) gradient equations.
    pub anchor_weight: f64,
    /// Pixels with `|N·d|` below this are treated as grazing: excluded from
    /// gradient equations and smoothed in from their neighbors.
    pub grazing_cutoff: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            anchor_weight: 1e-3,
            grazing_cutoff: 0.05,
            max_iterations: 8000,
            tolerance: 1e-13,
        }
    }
}

/// Screened least-squares integration of a normal field into a depth map.
///
/// Works in log-depth, where the perspective projection makes the gradient
/// exact: for a surface point `X = z·(a, b, 1)` seen through metric
/// image-plane coordinates `(a, b)`,
///
/// ```text
/// ∂(ln z)/∂a = −N_x / (N·d),   d = (a, b, 1)
/// ```
///
/// and likewise for `b`. Gradient equations couple 4-neighbors inside the
/// mask; every mask pixel is softly anchored to its input depth so the
/// metric scale recovered by the sweep survives integration. Disconnected
/// mask components decouple and solve independently.
pub fn integrate_normals(
    normals: &[Vector3<f64>],
    mask: &[bool],
    anchor_depths: &[f64],
    rig: &RigConfig,
    options: &IntegrationOptions,
) -> Result<Vec<f64>> {
    let width = rig.image_width;
    let height = rig.image_height;
    if normals.len() != width * height
        || mask.len() != normals.len()
        || anchor_depths.len() != normals.len()
    {
        return Err(Error::DimensionMismatch(
            "normal/mask/anchor grids must match the rig resolution".into(),
        ));
    }
    // Compact index over mask pixels.
    let mut index = vec![usize::MAX; width * height];
    let mut pixels = Vec::new();
    for (p, &inside) in mask.iter().enumerate() {
        if inside {
            if !(anchor_depths[p] > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "mask pixel {p} has nonpositive anchor depth"
                )));
            }
            index[p] = pixels.len();
            pixels.push(p);
        }
    }
    if pixels.is_empty() {
        return Err(Error::NoValidSamples("empty integration mask".into()));
    }
    let count = pixels.len();

    // Per-pixel log-gradient field where reliable.
    let pixel_size = rig.pixel_size();
    let mut grad: Vec<Option<(f64, f64)>> = vec![None; width * height];
    for &p in &pixels {
        let (u, v) = (p % width, p / width);
        let (a, b) = rig.metric_from_pixel(u as f64, v as f64);
        let n = normals[p];
        let denom = n.x * a + n.y * b + n.z;
        if denom.abs() > options.grazing_cutoff && n.norm() > 0.5 {
            grad[p] = Some((-n.x / denom, -n.y / denom));
        }
    }

    // Edge list: (row scale, i, j, rhs) meaning scale·(q_j − q_i) = rhs.
    struct EdgeEq {
        i: usize,
        j: usize,
        weight: f64,
        rhs: f64,
    }
    let mut edges = Vec::new();
    const SMOOTH_WEIGHT: f64 = 0.1;
    for &p in &pixels {
        let (u, v) = (p % width, p / width);
        for (du, dv, axis) in [(1usize, 0usize, 0usize), (0, 1, 1)] {
            let (uu, vv) = (u + du, v + dv);
            if uu >= width || vv >= height {
                continue;
            }
            let r = vv * width + uu;
            if index[r] == usize::MAX {
                continue;
            }
            match (grad[p], grad[r]) {
                (Some(gp), Some(gr)) => {
                    let g = 0.5 * (if axis == 0 { gp.0 + gr.0 } else { gp.1 + gr.1 });
                    edges.push(EdgeEq {
                        i: index[p],
                        j: index[r],
                        weight: 1.0,
                        rhs: g * pixel_size,
                    });
                }
                // Grazing endpoint: fall back to first-order smoothness so the
                // pixel is inpainted from its neighborhood.
                _ => edges.push(EdgeEq {
                    i: index[p],
                    j: index[r],
                    weight: SMOOTH_WEIGHT,
                    rhs: 0.0,
                }),
            }
        }
    }

    // Normal equations applied on the fly: (Σ wᵢⱼ Lᵢⱼ + w_a I) q = rhs.
    let w_anchor = options.anchor_weight;
    let apply = |q: &[f64], out: &mut [f64]| {
        for (k, o) in out.iter_mut().enumerate() {
            *o = w_anchor * q[k];
        }
        for e in &edges {
            let diff = q[e.j] - q[e.i];
            out[e.i] -= e.weight * diff;
            out[e.j] += e.weight * diff;
        }
    };
    let mut rhs = vec![0.0f64; count];
    for (k, &p) in pixels.iter().enumerate() {
        rhs[k] = w_anchor * anchor_depths[p].ln();
    }
    for e in &edges {
        rhs[e.i] -= e.weight * e.rhs;
        rhs[e.j] += e.weight * e.rhs;
    }

    // Jacobi-preconditioned conjugate gradients.
    let mut diag = vec![w_anchor; count];
    for e in &edges {
        diag[e.i] += e.weight;
        diag[e.j] += e.weight;
    }
    let mut q: Vec<f64> = pixels.iter().map(|&p| anchor_depths[p].ln()).collect();
    let mut r = vec![0.0f64; count];
    apply(&q, &mut r);
    for k in 0..count {
        r[k] = rhs[k] - r[k];
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p_dir = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let rhs_norm: f64 = rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut ap = vec![0.0f64; count];
    for _ in 0..options.max_iterations {
        let r_norm: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r_norm <= options.tolerance * rhs_norm.max(1e-300) {
            break;
        }
        apply(&p_dir, &mut ap);
        let pap: f64 = p_dir.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for k in 0..count {
            q[k] += alpha * p_dir[k];
            r[k] -= alpha * ap[k];
        }
        for k in 0..count {
            z[k] = r[k] / diag[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..count {
            p_dir[k] = z[k] + beta * p_dir[k];
        }
    }

    let mut depths = vec![0.0f64; width * height];
    for (k, &p) in pixels.iter().enumerate() {
        depths[p] = q[k].exp();
    }
    Ok(depths)
}

#[derive(Debug, Clone)]
pub struct ReconstructOptions {
    pub sweep: SweepOptions,
    /// Pipeline passes: the initial pass plus refinements.
    pub passes: usize,
    pub integration: IntegrationOptions,
    /// Background intensity floor relative to the light field's maximum.
    pub background_rel: f64,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            sweep: SweepOptions::default(),
            passes: 2,
            integration: IntegrationOptions::default(),
            background_rel: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
struct PixelState {
    label: PixelLabel,
    depth: f64,
    normal: Vector3<f64>,
    coeffs: DVector<f64>,
    beta: f64,
    shininess: f64,
    residual: f64,
}

/// Full reconstruction: per-pixel depth sweep and classification, specular
/// fitting/removal, photometric normal + reflectance solve, normal
/// integration, then one more pass of everything at the integrated depths.
pub fn reconstruct(
    lf: &LightField,
    spectral: &SpectralModel,
    options: &ReconstructOptions,
) -> Result<SurfaceEstimate> {
    let rig = lf.rig();
    rig.validate()?;
    if rig.num_rings != spectral.num_bands() {
        return Err(Error::DimensionMismatch(format!(
            "rig has {} rings, spectral model {} bands",
            rig.num_rings,
            spectral.num_bands()
        )));
    }
    let width = rig.image_width;
    let height = rig.image_height;
    let wdim = spectral.basis_dim();
    let m = rig.num_rings;
    let global_max = lf.max_intensity() as f64;
    if !(global_max > 0.0) {
        return Err(Error::NoValidSamples("light field is entirely dark".into()));
    }
    let bg_floor = options.background_rel * global_max;
    let mut sweep_options = options.sweep.clone();
    sweep_options.min_mean_intensity = sweep_options.min_mean_intensity.max(bg_floor);

    let depths = rig.depth_hypotheses();

    // Stage 1: sweep every pixel (cheap coarse background rejection first).
    let mut states: Vec<Option<PixelState>> = (0..width * height).map(|_| None).collect();
    crate::par_for_each_enumerated(&mut states, |p, slot| {
        let (u, v) = ((p % width) as f64, (p / width) as f64);
        // Coarse prefilter: a surface pixel must show signal at some depth.
        let mut candidate = false;
        for idx in (0..depths.len()).step_by(4).chain([depths.len() - 1]) {
            if let Ok(cam) = sample_msscam(lf, u, v, depths[idx]) {
                if cam.mean_intensity() > bg_floor {
                    candidate = true;
                    break;
                }
            }
        }
        if !candidate {
            return;
        }
        let Ok(outcome) = depth_sweep(lf, u, v, &sweep_options) else {
            return;
        };
        if outcome.result.label == PixelLabel::Invalid {
            return;
        }
        *slot = Some(PixelState {
            label: outcome.result.label,
            depth: outcome.result.depth,
            normal: Vector3::new(0.0, 0.0, -1.0),
            coeffs: DVector::zeros(wdim),
            beta: 0.0,
            shininess: 1.0,
            residual: 0.0,
        });
    });

    if states.iter().all(Option::is_none) {
        return Err(Error::NoValidSamples(
            "no pixel survived the depth sweep".into(),
        ));
    }

    // Stage 2: the per-pixel fit + integration loop.
    for pass in 0..options.passes.max(1) {
        crate::par_for_each_enumerated(&mut states, |p, slot| {
            let Some(state) = slot.as_mut() else { return };
            let (u, v) = ((p % width) as f64, (p / width) as f64);
            let z = state.depth.clamp(rig.depth_min, rig.depth_max);
            let Ok(cam) = sample_msscam(lf, u, v, z) else {
                state.residual = f64::INFINITY;
                return;
            };
            let Ok(c_value) = photo_consistency(&cam) else {
                *slot = None;
                return;
            };
            let mean = cam.mean_intensity();
            if mean <= 0.0 {
                *slot = None;
                return;
            }
            // (Re-)classify at the current depth.
            state.label = if c_value <= sweep_options.tau_c_rel * mean {
                PixelLabel::Diffuse
            } else {
                PixelLabel::Specular
            };

            let toward_rig = (-cam.point).normalize();
            let mut fallback_normal = if pass == 0 {
                toward_rig
            } else {
                state.normal
            };

            // Specular handling: fit the lobe from vertical gradients and
            // subtract it; fall back to the raw median row when the fit is
            // degenerate.
            let mut row = DVector::zeros(m);
            let mut spec_beta = 0.0;
            let mut spec_shine = 1.0;
            let mut removed = false;
            if state.label == PixelLabel::Specular {
                let mut fit_opts = SpecularFitOptions::default();
                if let Ok(sc) = periodicity_consistency(&cam, rig, &sweep_options.periodicity) {
                    if let Some(n) = sc.working_normal {
                        fit_opts.init_normals.push(n);
                        fallback_normal = n;
                    }
                }
                if pass > 0 {
                    fit_opts.init_normals.push(state.normal);
                }
                if let Ok(gradients) = vertical_gradients(&cam, rig, spectral) {
                    let gradient_energy = gradients
                        .normalized
                        .iter()
                        .map(|g| g * g)
                        .sum::<f64>()
                        .sqrt();
                    if let Ok(fit) = fit_specular(&gradients, &cam.point, rig, &fit_opts) {
                        // Only subtract a lobe that explains most of the
                        // gradient energy and is bright enough to matter;
                        // anything else is classification noise and the raw
                        // median row is safer.
                        let significant = !fit.degenerate
                            && fit.converged
                            && fit.residual < 0.5 * gradient_energy
                            && crate::specular::lobe_peak_value(&fit, &cam.point, rig, spectral)
                                .is_ok_and(|peak| peak > 0.02 * mean);
                        if significant {
                            if let Ok((_, cleaned_row)) =
                                remove_specular(&cam, &fit, rig, spectral)
                            {
                                row = cleaned_row;
                                spec_beta = fit.beta;
                                spec_shine = fit.shininess;
                                fallback_normal = fit.normal;
                                removed = true;
                            }
                        }
                    }
                }
            }
            let mut raw_row = DVector::zeros(m);
            for j in 0..m {
                let mut col: Vec<f64> = cam.column_values(j).collect();
                raw_row[j] = crate::specular::median(&mut col);
            }
            if !removed {
                row = raw_row.clone();
            }

            let lights: Vec<Vector3<f64>> = (0..m)
                .map(|j| (rig.light_position(j).unwrap() - cam.point).normalize())
                .collect();
            let falloff = DVector::from_iterator(
                m,
                (0..m).map(|j| (rig.light_position(j).unwrap() - cam.point).norm_squared()),
            );
            let band_weights: Vec<f64> = (0..m)
                .map(|j| if cam.usable_columns[j] { 1.0 } else { 0.0 })
                .collect();
            let solve_row = |row: &DVector<f64>, init: &Vector3<f64>| {
                let inputs = PhotometricInputs {
                    row,
                    lights: &lights,
                    w_matrix: spectral.w_matrix(),
                    falloff: &falloff,
                    band_weights: Some(&band_weights),
                };
                solve_photometric(&inputs, &cam.point, init)
            };
            let mut solved = solve_row(&row, &fallback_normal).ok();
            if removed {
                // A phantom lobe subtraction corrupts diffuse rows; keep
                // whichever row the model explains better (relative to its
                // own scale).
                if let Ok(raw_solved) = solve_row(&raw_row, &fallback_normal) {
                    let rel = |r: &crate::photostereo::PhotometricSolveResult,
                               row: &DVector<f64>| {
                        r.residual / row.norm().max(1e-300)
                    };
                    let prefer_raw = match &solved {
                        Some(s) => rel(&raw_solved, &raw_row) < rel(s, &row),
                        None => true,
                    };
                    if prefer_raw {
                        solved = Some(raw_solved);
                        spec_beta = 0.0;
                        spec_shine = 1.0;
                    }
                }
            }
            match solved {
                Some(result) => {
                    state.normal = result.normal;
                    state.coeffs = result.coeffs;
                    state.beta = spec_beta;
                    state.shininess = spec_shine;
                    state.residual = result.residual;
                }
                None => {
                    *slot = None;
                }
            }
        });

        // Integrate the normal field and update depths for the next pass.
        let mask: Vec<bool> = states.iter().map(Option::is_some).collect();
        let normals: Vec<Vector3<f64>> = states
            .iter()
            .map(|s| s.as_ref().map_or(Vector3::zeros(), |st| st.normal))
            .collect();
        let anchors: Vec<f64> = states
            .iter()
            .map(|s| s.as_ref().map_or(1.0, |st| st.depth))
            .collect();
        let integrated = integrate_normals(&normals, &mask, &anchors, rig, &options.integration)?;
        for (p, slot) in states.iter_mut().enumerate() {
            if let Some(state) = slot.as_mut() {
                state.depth = integrated[p].clamp(rig.depth_min, rig.depth_max);
            }
            let _ = pass;
        }
    }

    // Pack the dense maps.
    let mut estimate = SurfaceEstimate {
        depth: Image::new(width, height, 1),
        normal: Image::new(width, height, 3),
        coefficients: Image::new(width, height, wdim),
        beta: Image::new(width, height, 1),
        shininess: Image::new(width, height, 1),
        label: Image::new(width, height, 1),
        mask: Image::new(width, height, 1),
        residual: Image::new(width, height, 1),
    };
    for (p, slot) in states.iter().enumerate() {
        let (u, v) = (p % width, p / width);
        let Some(state) = slot else { continue };
        estimate.depth.set(u, v, 0, state.depth as f32);
        for c in 0..3 {
            estimate.normal.set(u, v, c, state.normal[c] as f32);
        }
        for c in 0..wdim {
            estimate.coefficients.set(u, v, c, state.coeffs[c] as f32);
        }
        estimate.beta.set(u, v, 0, state.beta as f32);
        estimate.shininess.set(u, v, 0, state.shininess as f32);
        estimate.label.set(
            u,
            v,
            0,
            match state.label {
                PixelLabel::Invalid => 0.0,
                PixelLabel::Diffuse => 1.0,
                PixelLabel::Specular => 2.0,
            },
        );
        estimate.mask.set(u, v, 0, 1.0);
        estimate.residual.set(u, v, 0, state.residual as f32);
    }
    Ok(estimate)
}
