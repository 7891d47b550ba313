//! Axis-aligned bounding volume hierarchy over triangle soups.
//!
//! Median-split build, iterative stack traversal, Möller–Trumbore triangle
//! tests. Good enough for the ~10k triangle scenes this crate renders.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    bb_min: Vector3<f64>,
    bb_max: Vector3<f64>,
    /// Leaf: index range into `tri_order`. Inner: `left` is the index of the
    /// first child, the second child is `left + 1`... encoded via `count`.
    left: u32,
    start: u32,
    count: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    tri_order: Vec<u32>,
}

/// Closest-hit record in barycentric form: `point = (1-u-v)·v0 + u·v1 + v·v2`.
#[derive(Debug, Clone, Copy)]
pub struct TriangleHit {
    pub t: f64,
    pub triangle: usize,
    pub u: f64,
    pub v: f64,
}

fn triangle_bounds(
    vertices: &[Vector3<f64>],
    face: &[u32; 3],
) -> (Vector3<f64>, Vector3<f64>) {
    let a = vertices[face[0] as usize];
    let b = vertices[face[1] as usize];
    let c = vertices[face[2] as usize];
    (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
}

/// Möller–Trumbore. Returns `(t, u, v)` for hits with `t` in `(t_min, t_max)`.
#[inline]
pub fn ray_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    v0: &Vector3<f64>,
    v1: &Vector3<f64>,
    v2: &Vector3<f64>,
    t_min: f64,
    t_max: f64,
) -> Option<(f64, f64, f64)> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - v0;
    let u = tvec.dot(&pvec) * inv_det;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t <= t_min || t >= t_max {
        return None;
    }
    Some((t, u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)))
}

#[inline]
fn slab_test(
    bb_min: &Vector3<f64>,
    bb_max: &Vector3<f64>,
    origin: &Vector3<f64>,
    inv_dir: &Vector3<f64>,
    t_max: f64,
) -> bool {
    let mut t0 = 0.0f64;
    let mut t1 = t_max;
    for axis in 0..3 {
        let ta = (bb_min[axis] - origin[axis]) * inv_dir[axis];
        let tb = (bb_max[axis] - origin[axis]) * inv_dir[axis];
        let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t0 > t1 {
            return false;
        }
    }
    true
}

impl Bvh {
    pub fn build(vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> Self {
        let tri_order: Vec<u32> = (0..faces.len() as u32).collect();
        let centroids: Vec<Vector3<f64>> = faces
            .iter()
            .map(|f| {
                (vertices[f[0] as usize] + vertices[f[1] as usize] + vertices[f[2] as usize])
                    / 3.0
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * faces.len().max(1));
        nodes.push(Node {
            bb_min: Vector3::zeros(),
            bb_max: Vector3::zeros(),
            left: 0,
            start: 0,
            count: 0,
        });
        let mut bvh = Self { nodes, tri_order };
        if !faces.is_empty() {
            bvh.build_node(0, 0, faces.len(), vertices, faces, &centroids);
        }
        bvh
    }

    fn build_node(
        &mut self,
        node_idx: usize,
        start: usize,
        end: usize,
        vertices: &[Vector3<f64>],
        faces: &[[u32; 3]],
        centroids: &[Vector3<f64>],
    ) {
        let mut bb_min = Vector3::repeat(f64::INFINITY);
        let mut bb_max = Vector3::repeat(f64::NEG_INFINITY);
        for &ti in &self.tri_order[start..end] {
            let (lo, hi) = triangle_bounds(vertices, &faces[ti as usize]);
            bb_min = bb_min.inf(&lo);
            bb_max = bb_max.sup(&hi);
        }
        self.nodes[node_idx].bb_min = bb_min;
        self.nodes[node_idx].bb_max = bb_max;

        let count = end - start;
        if count <= LEAF_SIZE {
            self.nodes[node_idx].start = start as u32;
            self.nodes[node_idx].count = count as u32;
            return;
        }

        // Split at the centroid median along the widest axis.
        let extent = bb_max - bb_min;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = start + count / 2;
        self.tri_order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis]
                .partial_cmp(&centroids[b as usize][axis])
                .unwrap()
        });

        let left = self.nodes.len();
        self.nodes[node_idx].left = left as u32;
        self.nodes[node_idx].count = 0;
        self.nodes.push(Node {
            bb_min: Vector3::zeros(),
            bb_max: Vector3::zeros(),
            left: 0,
            start: 0,
            count: 0,
        });
        self.nodes.push(Node {
            bb_min: Vector3::zeros(),
            bb_max: Vector3::zeros(),
            left: 0,
            start: 0,
            count: 0,
        });
        self.build_node(left, start, mid, vertices, faces, centroids);
        self.build_node(left + 1, mid, end, vertices, faces, centroids);
    }

    /// Nearest intersection with `t` in `(t_min, t_max)`.
    pub fn intersect(
        &self,
        vertices: &[Vector3<f64>],
        faces: &[[u32; 3]],
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        t_min: f64,
        t_max: f64,
    ) -> Option<TriangleHit> {
        if faces.is_empty() {
            return None;
        }
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<TriangleHit> = None;
        let mut limit = t_max;
        let mut stack = [0u32; 64];
        let mut sp = 0usize;
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if !slab_test(&node.bb_min, &node.bb_max, origin, &inv_dir, limit) {
                continue;
            }
            if node.count > 0 {
                let start = node.start as usize;
                for &ti in &self.tri_order[start..start + node.count as usize] {
                    let f = &faces[ti as usize];
                    if let Some((t, u, v)) = ray_triangle(
                        origin,
                        dir,
                        &vertices[f[0] as usize],
                        &vertices[f[1] as usize],
                        &vertices[f[2] as usize],
                        t_min,
                        limit,
                    ) {
                        limit = t;
                        best = Some(TriangleHit {
                            t,
                            triangle: ti as usize,
                            u,
                            v,
                        });
                    }
                }
            } else {
                stack[sp] = node.left;
                stack[sp + 1] = node.left + 1;
                sp += 2;
            }
        }
        best
    }

    /// Whether any triangle blocks `t` in `(t_min, t_max)`.
    pub fn any_hit(
        &self,
        vertices: &[Vector3<f64>],
        faces: &[[u32; 3]],
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        t_min: f64,
        t_max: f64,
    ) -> bool {
        if faces.is_empty() {
            return false;
        }
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = [0u32; 64];
        let mut sp = 0usize;
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if !slab_test(&node.bb_min, &node.bb_max, origin, &inv_dir, t_max) {
                continue;
            }
            if node.count > 0 {
                let start = node.start as usize;
                for &ti in &self.tri_order[start..start + node.count as usize] {
                    let f = &faces[ti as usize];
                    if ray_triangle(
                        origin,
                        dir,
                        &vertices[f[0] as usize],
                        &vertices[f[1] as usize],
                        &vertices[f[2] as usize],
                        t_min,
                        t_max,
                    )
                    .is_some()
                    {
                        return true;
                    }
                }
            } else {
                stack[sp] = node.left;
                stack[sp + 1] = node.left + 1;
                sp += 2;
            }
        }
        false
    }
}
