//! Forward imaging: shades scenes with the Phong dichromatic near-point-light
//! model and produces the full `n x m` grid of single-band views plus
//! ground-truth maps for the virtual center view.
//!
//! Spectral multiplexing is structural here: ring `j` only ever sees light
//! `j`, so each view is shaded with exactly one light/band pair.
//!
//! Per band, with `L = (P_j - X)/|P_j - X|`, `D = 2(L·N)N - L` and view
//! vector `V` toward the camera:
//!
//! ```text
//! I = (L·N)⁺ · (c·W_j) / |P_j - X|²  +  β · ((D·V)⁺)^σ · JEQ_j / |P_j - X|²
//! ```
//!
//! Both dot products clamp at zero from below; a light behind the surface
//! contributes nothing to either term. The diffuse reflectivity is folded
//! into the coefficient vector `c`, so ground truth and reconstruction share
//! one parameterization.

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rig::RigConfig;
use crate::scene::{Material, Scene};
use crate::spectral::SpectralModel;
use crate::util::mix_seed;

/// The captured light field: one single-band image per (spoke, ring) camera.
#[derive(Debug, Clone)]
pub struct LightField {
    images: Vec<Image>,
    rig: RigConfig,
    pub ground_truth: Option<GroundTruth>,
}

/// Center-view reference maps emitted by the renderer.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Plane-parallel depth (z coordinate); 0 outside the mask.
    pub depth: Image,
    /// Unit surface normal, 3 channels.
    pub normal: Image,
    /// Diffuse coefficient vector, `w` channels.
    pub coefficients: Image,
    pub beta: Image,
    pub shininess: Image,
    /// 1 inside the object silhouette.
    pub mask: Image,
    /// max specular sample / mean diffuse sample over the whole camera grid;
    /// the oracle for which pixels carry a visible highlight.
    pub specular_ratio: Image,
    /// Fraction of cameras with a front-facing, unblocked view of the point.
    pub camera_visibility: Image,
    /// Fraction of front-facing lights that are not cast-shadowed.
    pub light_visibility: Image,
}

impl LightField {
    pub fn new(rig: RigConfig, images: Vec<Image>) -> Result<Self> {
        let expected = rig.cameras_per_ring * rig.num_rings;
        if images.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} images for a {}x{} rig",
                images.len(),
                rig.cameras_per_ring,
                rig.num_rings
            )));
        }
        for img in &images {
            if img.width() != rig.image_width
                || img.height() != rig.image_height
                || img.channels() != 1
            {
                return Err(Error::DimensionMismatch(
                    "light-field image dimensions do not match the rig".into(),
                ));
            }
        }
        Ok(Self {
            images,
            rig,
            ground_truth: None,
        })
    }

    pub fn rig(&self) -> &RigConfig {
        &self.rig
    }

    #[inline]
    pub fn view(&self, spoke: usize, ring: usize) -> &Image {
        &self.images[spoke * self.rig.num_rings + ring]
    }

    pub fn views(&self) -> &[Image] {
        &self.images
    }

    pub fn max_intensity(&self) -> f32 {
        self.images
            .iter()
            .map(Image::max_value)
            .fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Diffuse and specular shading terms for one (camera, band) sample.
#[inline]
pub fn shade_parts(
    x: &Vector3<f64>,
    normal: &Vector3<f64>,
    coeffs: &DVector<f64>,
    beta: f64,
    shininess: f64,
    band: usize,
    view: &Vector3<f64>,
    rig: &RigConfig,
    spectral: &SpectralModel,
) -> Result<(f64, f64)> {
    let light = rig.light_position(band)?;
    let to_light = light - x;
    let dist_sq = to_light.norm_squared();
    if dist_sq < 1e-12 {
        return Err(Error::SingularFalloff { light: band });
    }
    let l = to_light / dist_sq.sqrt();
    let ln = l.dot(normal);
    if ln <= 0.0 {
        // Attached shadow: the band goes completely dark.
        return Ok((0.0, 0.0));
    }
    let diffuse = ln * spectral.diffuse_response(coeffs, band) / dist_sq;
    let d = normal * (2.0 * ln) - l;
    let dv = d.dot(view).max(0.0);
    let specular = if beta > 0.0 && dv > 0.0 {
        beta * dv.powf(shininess) * spectral.jeq(band) / dist_sq
    } else {
        0.0
    };
    Ok((diffuse, specular))
}

/// Pixel intensity for a surface point under the band's single light.
pub fn shade(
    x: &Vector3<f64>,
    normal: &Vector3<f64>,
    material: &Material,
    band: usize,
    view: &Vector3<f64>,
    rig: &RigConfig,
    spectral: &SpectralModel,
) -> Result<f64> {
    let coeffs = material.coefficients.at(x);
    let (d, s) = shade_parts(
        x,
        normal,
        &coeffs,
        material.specular_reflectivity,
        material.shininess,
        band,
        view,
        rig,
        spectral,
    )?;
    Ok(d + s)
}

#[derive(Debug, Clone)]
pub struct RenderOptions {
    /// Gaussian noise level relative to the maximum clean intensity.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Emit center-view ground-truth maps.
    pub ground_truth: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            seed: 0,
            ground_truth: true,
        }
    }
}

/// Render the full light field. Background pixels are 0; noise (if any) is
/// added after rendering, scaled by the global maximum, and clamped at 0.
pub fn render_lightfield(
    scene: &Scene,
    rig: &RigConfig,
    spectral: &SpectralModel,
    options: &RenderOptions,
) -> Result<LightField> {
    rig.validate()?;
    scene.validate(spectral)?;
    if rig.num_rings != spectral.num_bands() {
        return Err(Error::DimensionMismatch(format!(
            "rig has {} rings, spectral model {} bands",
            rig.num_rings,
            spectral.num_bands()
        )));
    }

    let n = rig.cameras_per_ring;
    let m = rig.num_rings;
    let mut images: Vec<Image> = vec![Image::new(rig.image_width, rig.image_height, 1); n * m];
    crate::par_for_each_enumerated(&mut images, |idx, img| {
        let spoke = idx / m;
        let ring = idx % m;
        let cam = rig.camera_position(spoke, ring).expect("validated rig");
        let cam3 = Vector3::new(cam.x, cam.y, 0.0);
        for v in 0..rig.image_height {
            for u in 0..rig.image_width {
                let ray = rig
                    .pixel_ray(spoke, ring, u as f64, v as f64)
                    .expect("in-bounds pixel");
                if let Some(hit) = scene.intersect(&ray.origin, &ray.direction) {
                    let material = &scene.objects[hit.object].material;
                    let view = (cam3 - hit.point).normalize();
                    let value = shade(&hit.point, &hit.normal, material, ring, &view, rig, spectral)
                        .expect("surface point does not coincide with a light");
                    img.set(u, v, 0, value as f32);
                }
            }
        }
    });

    if options.noise_sigma > 0.0 {
        let global_max = images
            .iter()
            .map(Image::max_value)
            .fold(f32::NEG_INFINITY, f32::max) as f64;
        let sigma = options.noise_sigma * global_max.max(0.0);
        crate::par_for_each_enumerated(&mut images, |idx, img| {
            for v in 0..img.height() {
                for u in 0..img.width() {
                    let seed = mix_seed(&[options.seed, idx as u64, v as u64, u as u64]);
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let clean = img.get(u, v, 0) as f64;
                    img.set(u, v, 0, (clean + sigma * noise).max(0.0) as f32);
                }
            }
        });
    }

    let mut lf = LightField::new(rig.clone(), images)?;
    if options.ground_truth {
        lf.ground_truth = Some(render_ground_truth(scene, rig, spectral)?);
    }
    Ok(lf)
}

fn render_ground_truth(
    scene: &Scene,
    rig: &RigConfig,
    spectral: &SpectralModel,
) -> Result<GroundTruth> {
    let w = rig.image_width;
    let h = rig.image_height;
    let wdim = spectral.basis_dim();
    let n = rig.cameras_per_ring;
    let m = rig.num_rings;

    let mut camera_positions = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let c = rig.camera_position(i, j)?;
            camera_positions.push((j, Vector3::new(c.x, c.y, 0.0)));
        }
    }
    let lights: Vec<Vector3<f64>> = (0..m).map(|j| rig.light_position(j).unwrap()).collect();

    // One row of all maps per work item so rows can fill in parallel.
    struct RowOut {
        depth: Vec<f32>,
        normal: Vec<f32>,
        coeffs: Vec<f32>,
        beta: Vec<f32>,
        shininess: Vec<f32>,
        mask: Vec<f32>,
        spec_ratio: Vec<f32>,
        cam_vis: Vec<f32>,
        light_vis: Vec<f32>,
    }
    let mut rows: Vec<RowOut> = (0..h)
        .map(|_| RowOut {
            depth: vec![0.0; w],
            normal: vec![0.0; w * 3],
            coeffs: vec![0.0; w * wdim],
            beta: vec![0.0; w],
            shininess: vec![0.0; w],
            mask: vec![0.0; w],
            spec_ratio: vec![0.0; w],
            cam_vis: vec![0.0; w],
            light_vis: vec![0.0; w],
        })
        .collect();

    crate::par_for_each_enumerated(&mut rows, |v, row| {
        for u in 0..w {
            let ray = rig.center_pixel_ray(u as f64, v as f64).expect("in bounds");
            let Some(hit) = scene.intersect(&ray.origin, &ray.direction) else {
                continue;
            };
            let material = &scene.objects[hit.object].material;
            let coeffs = scene.coefficients_at(&hit);
            row.depth[u] = hit.point.z as f32;
            for c in 0..3 {
                row.normal[u * 3 + c] = hit.normal[c] as f32;
            }
            for c in 0..wdim {
                row.coeffs[u * wdim + c] = coeffs[c] as f32;
            }
            row.beta[u] = material.specular_reflectivity as f32;
            row.shininess[u] = material.shininess as f32;
            row.mask[u] = 1.0;

            // Highlight oracle plus visibility statistics over the full grid.
            let mut diffuse_sum = 0.0f64;
            let mut diffuse_count = 0usize;
            let mut spec_max = 0.0f64;
            let mut visible_cams = 0usize;
            for (ring, cam) in &camera_positions {
                let to_cam = cam - hit.point;
                if hit.normal.dot(&to_cam) > 0.0
                    && !scene.segment_occluded(&(hit.point + hit.normal * 1e-6), cam)
                {
                    visible_cams += 1;
                }
                let view = to_cam.normalize();
                let (d, s) = shade_parts(
                    &hit.point,
                    &hit.normal,
                    &coeffs,
                    material.specular_reflectivity,
                    material.shininess,
                    *ring,
                    &view,
                    rig,
                    spectral,
                )
                .expect("surface point away from lights");
                if d > 0.0 {
                    diffuse_sum += d;
                    diffuse_count += 1;
                }
                spec_max = spec_max.max(s);
            }
            let mut front_lights = 0usize;
            let mut unshadowed = 0usize;
            for light in &lights {
                let l = (light - hit.point).normalize();
                if hit.normal.dot(&l) > 0.0 {
                    front_lights += 1;
                    if !scene.segment_occluded(&(hit.point + hit.normal * 1e-6), light) {
                        unshadowed += 1;
                    }
                }
            }
            row.cam_vis[u] = (visible_cams as f64 / (n * m) as f64) as f32;
            row.light_vis[u] = if front_lights > 0 {
                (unshadowed as f64 / front_lights as f64) as f32
            } else {
                0.0
            };
            if diffuse_count > 0 {
                let mean_diffuse = diffuse_sum / diffuse_count as f64;
                row.spec_ratio[u] = (spec_max / mean_diffuse.max(1e-300)) as f32;
            } else if spec_max > 0.0 {
                row.spec_ratio[u] = f32::INFINITY;
            }
        }
    });

    let mut gt = GroundTruth {
        depth: Image::new(w, h, 1),
        normal: Image::new(w, h, 3),
        coefficients: Image::new(w, h, wdim),
        beta: Image::new(w, h, 1),
        shininess: Image::new(w, h, 1),
        mask: Image::new(w, h, 1),
        specular_ratio: Image::new(w, h, 1),
        camera_visibility: Image::new(w, h, 1),
        light_visibility: Image::new(w, h, 1),
    };
    for (v, row) in rows.into_iter().enumerate() {
        for u in 0..w {
            gt.depth.set(u, v, 0, row.depth[u]);
            for c in 0..3 {
                gt.normal.set(u, v, c, row.normal[u * 3 + c]);
            }
            for c in 0..wdim {
                gt.coefficients.set(u, v, c, row.coeffs[u * wdim + c]);
            }
            gt.beta.set(u, v, 0, row.beta[u]);
            gt.shininess.set(u, v, 0, row.shininess[u]);
            gt.mask.set(u, v, 0, row.mask[u]);
            gt.specular_ratio.set(u, v, 0, row.spec_ratio[u]);
            gt.camera_visibility.set(u, v, 0, row.cam_vis[u]);
            gt.light_visibility.set(u, v, 0, row.light_vis[u]);
        }
    }
    Ok(gt)
}
