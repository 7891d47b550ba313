//! Scene description for the forward renderer: analytic spheres and triangle
//! meshes with Phong-dichromatic materials.

use nalgebra::{DVector, Vector3};

use crate::bvh::{Bvh, TriangleHit};
use crate::error::{Error, Result};
use crate::spectral::SpectralModel;

/// Spatially varying diffuse coefficient field `c(X)`.
#[derive(Debug, Clone)]
pub enum CoefficientField {
    Uniform(DVector<f64>),
    /// Smooth angular bands around `axis_origin`: blends `base` and `accent`
    /// with weight `0.5 (1 + sin(f_polar θ) cos(f_azimuth φ))` where (θ, φ)
    /// are spherical angles of `X - axis_origin`.
    AngularBands {
        base: DVector<f64>,
        accent: DVector<f64>,
        axis_origin: Vector3<f64>,
        polar_freq: f64,
        azimuth_freq: f64,
    },
}

impl CoefficientField {
    pub fn dim(&self) -> usize {
        match self {
            CoefficientField::Uniform(c) => c.len(),
            CoefficientField::AngularBands { base, .. } => base.len(),
        }
    }

    pub fn at(&self, x: &Vector3<f64>) -> DVector<f64> {
        match self {
            CoefficientField::Uniform(c) => c.clone(),
            CoefficientField::AngularBands {
                base,
                accent,
                axis_origin,
                polar_freq,
                azimuth_freq,
            } => {
                let d = x - axis_origin;
                let r = d.norm().max(1e-12);
                let theta = (d.z / r).clamp(-1.0, 1.0).acos();
                let phi = d.y.atan2(d.x);
                let w = 0.5 * (1.0 + (polar_freq * theta).sin() * (azimuth_freq * phi).cos());
                base * (1.0 - w) + accent * w
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Material {
    pub coefficients: CoefficientField,
    /// Specular reflectivity β ≥ 0.
    pub specular_reflectivity: f64,
    /// Phong exponent, ≥ 1.
    pub shininess: f64,
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    bvh: Bvh,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
        faces: Vec<[u32; 3]>,
    ) -> Result<Self> {
        if normals.len() != vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} normals for {} vertices",
                normals.len(),
                vertices.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "vertex normal {i} is not unit length (|n| = {})",
                    n.norm()
                )));
            }
        }
        let max_index = vertices.len() as u32;
        if faces.iter().flatten().any(|&i| i >= max_index) {
            return Err(Error::IndexOutOfRange("face index past vertex count".into()));
        }
        let bvh = Bvh::build(&vertices, &faces);
        Ok(Self {
            vertices,
            normals,
            faces,
            bvh,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    fn interpolated_normal(&self, hit: &TriangleHit) -> Vector3<f64> {
        let f = self.faces[hit.triangle];
        let n0 = self.normals[f[0] as usize];
        let n1 = self.normals[f[1] as usize];
        let n2 = self.normals[f[2] as usize];
        (n0 * (1.0 - hit.u - hit.v) + n1 * hit.u + n2 * hit.v).normalize()
    }

    /// Watertight UV-sphere with a smooth radial displacement, polar axis
    /// along `+x` so the displaced band faces a rig looking down `+z`.
    /// `slices` azimuth divisions, `stacks` polar divisions; triangle count
    /// is `2 * slices * (stacks - 1)`.
    pub fn displaced_uv_sphere(
        center: Vector3<f64>,
        base_radius: f64,
        bump_amplitude: f64,
        slices: usize,
        stacks: usize,
    ) -> Result<Self> {
        if slices < 3 || stacks < 3 {
            return Err(Error::InvalidConfig("sphere needs >= 3 slices/stacks".into()));
        }
        let radius = |theta: f64, phi: f64| -> f64 {
            let bump =
                (3.0 * theta).sin() * (2.0 * phi).cos() + 0.5 * (5.0 * phi + 1.0).cos() * theta.sin().powi(2);
            base_radius * (1.0 + bump_amplitude * bump)
        };
        let position = |theta: f64, phi: f64| -> Vector3<f64> {
            let dir = Vector3::new(
                theta.cos(),
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
            );
            center + dir * radius(theta, phi)
        };
        // Analytic-by-differencing surface normal of the displaced sphere.
        let normal = |theta: f64, phi: f64| -> Vector3<f64> {
            let h = 1e-5;
            let t = theta.clamp(h, std::f64::consts::PI - h);
            let dt = (position(t + h, phi) - position(t - h, phi)) / (2.0 * h);
            let dp = (position(t, phi + h) - position(t, phi - h)) / (2.0 * h);
            let mut n = dt.cross(&dp);
            if n.norm() < 1e-12 {
                n = position(theta, phi) - center;
            }
            let n = n.normalize();
            // Orient outward.
            if n.dot(&(position(theta, phi) - center)) < 0.0 {
                -n
            } else {
                n
            }
        };

        let mut vertices = Vec::new();
        let mut normals = Vec::new();
        // Poles first, then the interior rings.
        vertices.push(position(0.0, 0.0));
        normals.push(normal(0.0, 0.0));
        vertices.push(position(std::f64::consts::PI, 0.0));
        normals.push(normal(std::f64::consts::PI, 0.0));
        let ring_start = vertices.len() as u32;
        for s in 1..stacks {
            let theta = std::f64::consts::PI * s as f64 / stacks as f64;
            for c in 0..slices {
                let phi = std::f64::consts::TAU * c as f64 / slices as f64;
                vertices.push(position(theta, phi));
                normals.push(normal(theta, phi));
            }
        }
        let ring = |s: usize, c: usize| ring_start + ((s - 1) * slices + (c % slices)) as u32;
        let mut faces = Vec::new();
        for c in 0..slices {
            faces.push([0, ring(1, c), ring(1, c + 1)]);
            faces.push([1, ring(stacks - 1, c + 1), ring(stacks - 1, c)]);
        }
        for s in 1..stacks - 1 {
            for c in 0..slices {
                let a = ring(s, c);
                let b = ring(s, c + 1);
                let d = ring(s + 1, c);
                let e = ring(s + 1, c + 1);
                faces.push([a, d, b]);
                faces.push([b, d, e]);
            }
        }
        Self::new(vertices, normals, faces)
    }
}

#[derive(Debug, Clone)]
pub enum Primitive {
    Sphere { center: Vector3<f64>, radius: f64 },
    Mesh(TriangleMesh),
}

#[derive(Debug, Clone)]
pub struct SceneObject {
    pub primitive: Primitive,
    pub material: Material,
}

#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

/// Nearest surface intersection.
#[derive(Debug, Clone)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub object: usize,
}

/// Minimum ray parameter accepted as a hit; rejects self-intersections when
/// rays originate on a surface.
const T_EPSILON: f64 = 1e-7;

fn intersect_sphere(
    center: &Vector3<f64>,
    radius: f64,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    t_min: f64,
    t_max: f64,
) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.dot(&oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t1 = -b - sq;
    if t1 > t_min && t1 < t_max {
        return Some(t1);
    }
    let t2 = -b + sq;
    if t2 > t_min && t2 < t_max {
        return Some(t2);
    }
    None
}

impl Scene {
    pub fn validate(&self, spectral: &SpectralModel) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::InvalidConfig("scene has no objects".into()));
        }
        for (idx, obj) in self.objects.iter().enumerate() {
            if obj.material.specular_reflectivity < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "object {idx}: specular reflectivity must be >= 0"
                )));
            }
            if obj.material.shininess < 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "object {idx}: shininess must be >= 1"
                )));
            }
            if obj.material.coefficients.dim() != spectral.basis_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "object {idx}: coefficient dim {} != basis dim {}",
                    obj.material.coefficients.dim(),
                    spectral.basis_dim()
                )));
            }
            if let Primitive::Sphere { radius, .. } = obj.primitive {
                if radius <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "object {idx}: sphere radius must be positive"
                    )));
                }
            }
            // Reflectance nonnegativity, checked by sampling the field at a
            // spread of surface-scale offsets.
            let reference = match &obj.primitive {
                Primitive::Sphere { center, radius } => (*center, *radius),
                Primitive::Mesh(mesh) => {
                    let c = mesh
                        .vertices
                        .iter()
                        .fold(Vector3::zeros(), |acc, v| acc + v)
                        / mesh.vertices.len().max(1) as f64;
                    let r = mesh
                        .vertices
                        .iter()
                        .map(|v| (v - c).norm())
                        .fold(0.0, f64::max);
                    (c, r)
                }
            };
            for sample in 0..64 {
                let a = sample as f64 * 2.399963229728653; // golden-angle spread
                let z = 1.0 - 2.0 * (sample as f64 + 0.5) / 64.0;
                let rho = (1.0 - z * z).max(0.0).sqrt();
                let dir = Vector3::new(rho * a.cos(), rho * a.sin(), z);
                let x = reference.0 + dir * reference.1;
                let c = obj.material.coefficients.at(&x);
                let curve = spectral.dense_reflectance(&c);
                if curve.iter().any(|&v| v < -1e-9) {
                    return Err(Error::InvalidConfig(format!(
                        "object {idx}: coefficient field yields negative reflectance"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Nearest positive-t intersection along the ray, if any.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut limit = f64::INFINITY;
        for (idx, obj) in self.objects.iter().enumerate() {
            match &obj.primitive {
                Primitive::Sphere { center, radius } => {
                    if let Some(t) = intersect_sphere(center, *radius, origin, dir, T_EPSILON, limit)
                    {
                        let point = origin + dir * t;
                        let normal = (point - center) / *radius;
                        limit = t;
                        best = Some(Hit {
                            t,
                            point,
                            normal,
                            object: idx,
                        });
                    }
                }
                Primitive::Mesh(mesh) => {
                    if let Some(tri_hit) =
                        mesh.bvh
                            .intersect(&mesh.vertices, &mesh.faces, origin, dir, T_EPSILON, limit)
                    {
                        let point = origin + dir * tri_hit.t;
                        let normal = mesh.interpolated_normal(&tri_hit);
                        limit = tri_hit.t;
                        best = Some(Hit {
                            t: tri_hit.t,
                            point,
                            normal,
                            object: idx,
                        });
                    }
                }
            }
        }
        best
    }

    /// Whether the open segment between `from` and `to` is blocked by any
    /// surface (endpoints excluded).
    pub fn segment_occluded(&self, from: &Vector3<f64>, to: &Vector3<f64>) -> bool {
        let delta = to - from;
        let dist = delta.norm();
        if dist < T_EPSILON {
            return false;
        }
        let dir = delta / dist;
        let t_max = dist - 1e-6;
        for obj in &self.objects {
            match &obj.primitive {
                Primitive::Sphere { center, radius } => {
                    if intersect_sphere(center, *radius, from, &dir, T_EPSILON, t_max).is_some() {
                        return true;
                    }
                }
                Primitive::Mesh(mesh) => {
                    if mesh
                        .bvh
                        .any_hit(&mesh.vertices, &mesh.faces, from, &dir, T_EPSILON, t_max)
                    {
                        return true;
                    }
                }
            }
        }
        false
    }

    pub fn coefficients_at(&self, hit: &Hit) -> DVector<f64> {
        self.objects[hit.object].material.coefficients.at(&hit.point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Basis, BandProfile, SpectralModel};
    use approx::assert_relative_eq;

    fn spectral() -> SpectralModel {
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

    fn sphere_scene() -> Scene {
        Scene {
            objects: vec![SceneObject {
                primitive: Primitive::Sphere {
                    center: Vector3::new(0.0, 0.0, 120.0),
                    radius: 20.0,
                },
                material: Material {
                    coefficients: CoefficientField::Uniform(DVector::from_vec(vec![
                        0.7, 0.0, 0.0,
                    ])),
                    specular_reflectivity: 0.0,
                    shininess: 1.0,
                },
            }],
        }
    }

    #[test]
    fn ray_through_sphere_center_hits_front_pole() {
        let scene = sphere_scene();
        let origin = Vector3::new(0.0, 0.0, 0.0);
        let dir = Vector3::new(0.0, 0.0, 1.0);
        let hit = scene.intersect(&origin, &dir).unwrap();
        assert_relative_eq!(hit.t, 100.0, epsilon = 1e-12);
        assert_relative_eq!((hit.normal - Vector3::new(0.0, 0.0, -1.0)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tangent_ray_boundary_behavior() {
        let scene = sphere_scene();
        // Ray grazing the sphere at x = 20 exactly: the discriminant is ~0 and
        // either a single touch or a miss is acceptable; just past the radius
        // must always miss.
        let origin = Vector3::new(20.0 + 1e-6, 0.0, 0.0);
        let dir = Vector3::new(0.0, 0.0, 1.0);
        assert!(scene.intersect(&origin, &dir).is_none());
        let origin_inside = Vector3::new(20.0 - 1e-4, 0.0, 0.0);
        let hit = scene.intersect(&origin_inside, &dir);
        assert!(hit.is_some());
    }

    #[test]
    fn mesh_hits_match_sphere_analytics_approximately() {
        let mesh = TriangleMesh::displaced_uv_sphere(
            Vector3::new(0.0, 0.0, 50.0),
            10.0,
            0.0, // no displacement: a faceted sphere
            64,
            48,
        )
        .unwrap();
        let scene = Scene {
            objects: vec![SceneObject {
                primitive: Primitive::Mesh(mesh),
                material: Material {
                    coefficients: CoefficientField::Uniform(DVector::from_vec(vec![0.7, 0.0, 0.0])),
                    specular_reflectivity: 0.0,
                    shininess: 1.0,
                },
            }],
        };
        let hit = scene
            .intersect(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert_relative_eq!(hit.t, 40.0, epsilon = 0.05);
        assert!(hit.normal.z < -0.99);
    }

    #[test]
    fn displaced_sphere_is_watertight() {
        let mesh =
            TriangleMesh::displaced_uv_sphere(Vector3::zeros(), 3.0, 0.12, 72, 71).unwrap();
        assert_eq!(mesh.faces().len(), 2 * 72 * 70);
        // Every edge must be shared by exactly two triangles.
        use std::collections::HashMap;
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for f in mesh.faces() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = (a.min(b), a.max(b));
                *edges.entry(key).or_insert(0) += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2), "mesh has boundary or non-manifold edges");
    }

    #[test]
    fn segment_occlusion_detects_blocker() {
        let scene = sphere_scene();
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = Vector3::new(0.0, 0.0, 200.0);
        assert!(scene.segment_occluded(&a, &b));
        let c = Vector3::new(60.0, 0.0, 0.0);
        let d = Vector3::new(60.0, 0.0, 200.0);
        assert!(!scene.segment_occluded(&c, &d));
    }

    #[test]
    fn validate_rejects_negative_reflectance_fields() {
        let spectral = spectral();
        let mut scene = sphere_scene();
        scene.validate(&spectral).unwrap();
        // A coefficient vector whose curve dips negative.
        scene.objects[0].material.coefficients =
            CoefficientField::Uniform(DVector::from_vec(vec![0.1, 0.9, 0.0]));
        assert!(scene.validate(&spectral).is_err());
    }

    #[test]
    fn angular_bands_interpolate_between_materials() {
        let base = DVector::from_vec(vec![0.7, 0.0, 0.0]);
        let accent = DVector::from_vec(vec![0.3, 0.1, 0.0]);
        let field = CoefficientField::AngularBands {
            base: base.clone(),
            accent: accent.clone(),
            axis_origin: Vector3::zeros(),
            polar_freq: 4.0,
            azimuth_freq: 3.0,
        };
        let c = field.at(&Vector3::new(1.0, 0.5, -0.2));
        for q in 0..3 {
            let lo = base[q].min(accent[q]);
            let hi = base[q].max(accent[q]);
            assert!(c[q] >= lo - 1e-12 && c[q] <= hi + 1e-12);
        }
    }
}
