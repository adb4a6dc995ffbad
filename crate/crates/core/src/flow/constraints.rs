//! Constraint gradients, projections and symmetry groups acting on vertices.

use nalgebra::{Matrix2, Vector2};

use crate::error::{domain, Result};
use crate::mesh::{MeshTopology, Vec3};
use crate::varifold::Isometry;

/// Gradient of the area of one sheet with respect to vertex positions.
pub(crate) fn area_gradient(topo: &MeshTopology, x: &[Vec3]) -> Vec<Vec3> {
    let mut g = vec![Vec3::zeros(); x.len()];
    for f in topo.faces() {
        let (a, b, c) = (x[f[0]], x[f[1]], x[f[2]]);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len == 0.0 {
            continue;
        }
        let n = n / len;
        g[f[0]] += 0.5 * (b - c).cross(&n);
        g[f[1]] += 0.5 * (c - a).cross(&n);
        g[f[2]] += 0.5 * (a - b).cross(&n);
    }
    g
}

/// Gradient of the geometric signed volume.
pub(crate) fn volume_gradient(topo: &MeshTopology, x: &[Vec3]) -> Vec<Vec3> {
    let mut g = vec![Vec3::zeros(); x.len()];
    for f in topo.faces() {
        let (a, b, c) = (x[f[0]], x[f[1]], x[f[2]]);
        g[f[0]] += b.cross(&c) / 6.0;
        g[f[1]] += c.cross(&a) / 6.0;
        g[f[2]] += a.cross(&b) / 6.0;
    }
    g
}

pub(crate) fn area(topo: &MeshTopology, x: &[Vec3]) -> f64 {
    topo.faces()
        .iter()
        .map(|f| 0.5 * (x[f[1]] - x[f[0]]).cross(&(x[f[2]] - x[f[0]])).norm())
        .sum()
}

pub(crate) fn signed_volume(topo: &MeshTopology, x: &[Vec3]) -> f64 {
    topo.faces().iter().map(|f| x[f[0]].dot(&x[f[1]].cross(&x[f[2]])) / 6.0).sum()
}

pub(crate) fn area_centroid(topo: &MeshTopology, x: &[Vec3]) -> Vec3 {
    let mut acc = Vec3::zeros();
    let mut total = 0.0;
    for f in topo.faces() {
        let (a, b, c) = (x[f[0]], x[f[1]], x[f[2]]);
        let w = 0.5 * (b - a).cross(&(c - a)).norm();
        acc += (a + b + c) * (w / 3.0);
        total += w;
    }
    acc / total
}

/// Uniform rescale about the area centroid to the given sheet area.
pub(crate) fn rescale_to_area(topo: &MeshTopology, x: &mut [Vec3], target: f64) {
    let s = (target / area(topo, x)).sqrt();
    let c = area_centroid(topo, x);
    for p in x.iter_mut() {
        *p = c + (*p - c) * s;
    }
}

/// Newton iteration for the minimum-norm correction reaching the target
/// sheet area and signed volume.
pub(crate) fn project_area_volume(topo: &MeshTopology, x: &mut [Vec3], area_target: f64, vol_target: f64) -> Result<()> {
    for _ in 0..50 {
        let r = Vector2::new(area(topo, x) - area_target, signed_volume(topo, x) - vol_target);
        if r[0].abs() <= 1e-14 * area_target && r[1].abs() <= 1e-14 * vol_target.abs() {
            return Ok(());
        }
        let ga = area_gradient(topo, x);
        let gv = volume_gradient(topo, x);
        let dot = |u: &[Vec3], w: &[Vec3]| u.iter().zip(w).map(|(a, b)| a.dot(b)).sum::<f64>();
        let m = Matrix2::new(dot(&ga, &ga), dot(&ga, &gv), dot(&gv, &ga), dot(&gv, &gv));
        let lam = m
            .try_inverse()
            .map(|inv| inv * r)
            .ok_or_else(|| crate::error::Error::Domain("area and volume gradients are parallel".into()))?;
        for v in 0..x.len() {
            x[v] -= ga[v] * lam[0] + gv[v] * lam[1];
        }
    }
    let r = (area(topo, x) - area_target, signed_volume(topo, x) - vol_target);
    if r.0.abs() <= 1e-10 * area_target && r.1.abs() <= 1e-10 * vol_target.abs() {
        Ok(())
    } else {
        domain(format!("area/volume projection did not converge (residuals {:e}, {:e})", r.0, r.1))
    }
}

/// Finite isometry group together with the vertex permutation of each element.
#[derive(Debug, Clone)]
pub struct SymmetryGroup {
    elements: Vec<(Isometry, Vec<usize>)>,
}

const MAX_GROUP_ORDER: usize = 240;

impl SymmetryGroup {
    /// Closes the generators under composition. Every generator must map
    /// the vertex set onto itself.
    pub fn generate(generators: &[Isometry], x: &[Vec3]) -> Result<Self> {
        let diam = crate::mesh::point_set_diameter(x.iter());
        let tol = 1e-9 * diam.max(1e-300);
        let mut gens = Vec::new();
        for (k, g) in generators.iter().enumerate() {
            let mut perm = Vec::with_capacity(x.len());
            for (v, p) in x.iter().enumerate() {
                let q = g.apply_point(p);
                let (w, d) = x
                    .iter()
                    .enumerate()
                    .map(|(w, r)| (w, (r - q).norm()))
                    .fold((usize::MAX, f64::INFINITY), |acc, it| if it.1 < acc.1 { it } else { acc });
                if d > tol {
                    return domain(format!(
                        "symmetry generator {k} does not map vertex {v} onto a vertex (nearest at {d:e})"
                    ));
                }
                perm.push(w);
            }
            gens.push((*g, perm));
        }
        let identity = (Isometry::identity(), (0..x.len()).collect::<Vec<_>>());
        let mut elements = vec![identity];
        let mut frontier = 0;
        while frontier < elements.len() {
            let (h, ph) = elements[frontier].clone();
            frontier += 1;
            for (g, pg) in &gens {
                let perm: Vec<usize> = (0..x.len()).map(|v| pg[ph[v]]).collect();
                if elements.iter().all(|(_, p)| *p != perm) {
                    if elements.len() == MAX_GROUP_ORDER {
                        return domain(format!("symmetry group exceeds {MAX_GROUP_ORDER} elements"));
                    }
                    elements.push((g.compose(&h), perm));
                }
            }
        }
        Ok(Self { elements })
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> impl Iterator<Item = &Isometry> {
        self.elements.iter().map(|(g, _)| g)
    }

    /// Orbit average of the positions: the nearest symmetric configuration.
    pub fn symmetrize_positions(&self, x: &mut [Vec3]) {
        if self.elements.len() == 1 {
            return;
        }
        let n = self.elements.len() as f64;
        let out: Vec<Vec3> = (0..x.len())
            .map(|v| {
                let mut acc = Vec3::zeros();
                for (g, perm) in &self.elements {
                    let s = g.linear();
                    acc += s.transpose() * (x[perm[v]] - g.translation_part());
                }
                acc / n
            })
            .collect();
        x.copy_from_slice(&out);
    }

    /// Orbit average of a covector field (gradients, search directions).
    pub fn symmetrize_covector(&self, d: &mut [Vec3]) {
        if self.elements.len() == 1 {
            return;
        }
        let n = self.elements.len() as f64;
        let out: Vec<Vec3> = (0..d.len())
            .map(|v| {
                let mut acc = Vec3::zeros();
                for (g, perm) in &self.elements {
                    acc += g.linear().transpose() * d[perm[v]];
                }
                acc / n
            })
            .collect();
        d.copy_from_slice(&out);
    }

    /// sum_g sum_v |g(x_v) - x_{pi_g(v)}|^2 and its gradient.
    pub(crate) fn defect_penalty(&self, x: &[Vec3]) -> (f64, Vec<Vec3>) {
        let mut val = 0.0;
        let mut grad = vec![Vec3::zeros(); x.len()];
        for (g, perm) in &self.elements {
            let s = g.linear();
            for v in 0..x.len() {
                let r = g.apply_point(&x[v]) - x[perm[v]];
                val += r.norm_squared();
                grad[v] += 2.0 * s.transpose() * r;
                grad[perm[v]] -= 2.0 * r;
            }
        }
        (val, grad)
    }
}
