//! Shared fixtures for unit and integration tests: the reference sphere rig,
//! 12-band spectral tables and cached light-field renders.

use std::sync::{Arc, OnceLock};

use nalgebra::{DVector, Vector3};

use crate::renderer::{render_lightfield, LightField, RenderOptions};
use crate::rig::RigConfig;
use crate::scene::{CoefficientField, Material, Primitive, Scene, SceneObject, TriangleMesh};
use crate::spectral::{BandProfile, Basis, SpectralModel};

/// 12x12 rig around a radius-20 sphere at distance 120.
pub fn sphere_rig(width: usize) -> RigConfig {
    RigConfig {
        num_rings: 12,
        cameras_per_ring: 12,
        ring_radii: (0..12).map(|j| 29.0 + j as f64).collect(),
        light_radius: 80.0,
        light_phase: std::f64::consts::PI / 12.0,
        wavelengths: (0..12).map(|j| 440.0 + 20.0 * j as f64).collect(),
        image_width: width,
        image_height: width,
        half_extent: 0.55,
        depth_min: 108.0,
        depth_max: 125.0,
        depth_step: 0.2,
    }
}

/// Small desk-scale rig for the displaced-sphere mesh scenes.
pub fn blob_rig(width: usize) -> RigConfig {
    RigConfig {
        num_rings: 12,
        cameras_per_ring: 12,
        ring_radii: (0..12).map(|j| 4.0 - 0.1 * j as f64).collect(),
        light_radius: 20.0,
        light_phase: std::f64::consts::PI / 12.0,
        wavelengths: (0..12).map(|j| 440.0 + 20.0 * j as f64).collect(),
        image_width: width,
        image_height: width,
        half_extent: 0.23,
        depth_min: 33.0,
        depth_max: 42.0,
        depth_step: 0.1,
    }
}

pub fn test_spectral() -> SpectralModel {
    SpectralModel::new(
        Basis::cosine(3, 400.0, 700.0, 5.0),
        BandProfile::Gaussian { sigma: 8.0, scale: 1.0 },
        BandProfile::Gaussian { sigma: 6.0, scale: 1.0 },
        &(0..12).map(|j| 440.0 + 20.0 * j as f64).collect::<Vec<_>>(),
        5.0,
        5,
    )
    .unwrap()
}

pub fn uniform_coeffs() -> DVector<f64> {
    DVector::from_vec(vec![0.7, 0.0, 0.0])
}

pub fn sphere_scene(beta: f64, shininess: f64) -> Scene {
    Scene {
        objects: vec![SceneObject {
            primitive: Primitive::Sphere {
                center: Vector3::new(0.0, 0.0, 128.0),
                radius: 20.0,
            },
            material: Material {
                coefficients: CoefficientField::Uniform(uniform_coeffs()),
                specular_reflectivity: beta,
                shininess,
            },
        }],
    }
}

pub fn textured_sphere_scene(beta: f64, shininess: f64) -> Scene {
    Scene {
        objects: vec![SceneObject {
            primitive: Primitive::Sphere {
                center: Vector3::new(0.0, 0.0, 128.0),
                radius: 20.0,
            },
            material: Material {
                coefficients: CoefficientField::AngularBands {
                    base: DVector::from_vec(vec![0.7, 0.05, 0.0]),
                    accent: DVector::from_vec(vec![0.35, -0.1, 0.05]),
                    axis_origin: Vector3::new(0.0, 0.0, 128.0),
                    polar_freq: 4.0,
                    azimuth_freq: 3.0,
                },
                specular_reflectivity: beta,
                shininess,
            },
        }],
    }
}

pub fn blob_scene(beta: f64, shininess: f64) -> Scene {
    let mesh = TriangleMesh::displaced_uv_sphere(
        Vector3::new(0.0, 0.0, 38.5),
        3.0,
        0.1,
        72,
        70,
    )
    .unwrap();
    Scene {
        objects: vec![SceneObject {
            primitive: Primitive::Mesh(mesh),
            material: Material {
                coefficients: CoefficientField::Uniform(uniform_coeffs()),
                specular_reflectivity: beta,
                shininess,
            },
        }],
    }
}

fn cached(
    slot: &'static OnceLock<Arc<LightField>>,
    build: impl FnOnce() -> LightField,
) -> Arc<LightField> {
    slot.get_or_init(|| Arc::new(build())).clone()
}

/// Noiseless Lambertian sphere at 96 px, with ground truth.
pub fn lambertian_sphere_lf() -> Arc<LightField> {
    static LF: OnceLock<Arc<LightField>> = OnceLock::new();
    cached(&LF, || {
        render_lightfield(
            &sphere_scene(0.0, 1.0),
            &sphere_rig(96),
            &test_spectral(),
            &RenderOptions::default(),
        )
        .unwrap()
    })
}

/// Noiseless specular sphere (β = 0.3, σ = 8) at 96 px, with ground truth.
pub fn specular_sphere_lf() -> Arc<LightField> {
    static LF: OnceLock<Arc<LightField>> = OnceLock::new();
    cached(&LF, || {
        render_lightfield(
            &sphere_scene(0.3, 8.0),
            &sphere_rig(96),
            &test_spectral(),
            &RenderOptions::default(),
        )
        .unwrap()
    })
}

/// MSS-Cam built directly from the shading model (no image resampling): the
/// exact forward values a perfectly sampled surface point would produce.
pub fn analytic_msscam(
    x: Vector3<f64>,
    normal: Vector3<f64>,
    coeffs: &DVector<f64>,
    beta: f64,
    shininess: f64,
    rig: &RigConfig,
    spectral: &SpectralModel,
) -> crate::msscam::MssCam {
    let n = rig.cameras_per_ring;
    let m = rig.num_rings;
    let mut values = nalgebra::DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let cam = rig.camera_position(i, j).unwrap();
            let view = (Vector3::new(cam.x, cam.y, 0.0) - x).normalize();
            let (d, s) = crate::renderer::shade_parts(
                &x, &normal, coeffs, beta, shininess, j, &view, rig, spectral,
            )
            .unwrap();
            values[(i, j)] = d + s;
        }
    }
    crate::msscam::MssCam {
        mask: nalgebra::DMatrix::from_element(n, m, true),
        usable_columns: vec![true; m],
        point: x,
        depth: x.z,
        values,
    }
}
