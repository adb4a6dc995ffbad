//! Procedural test surfaces.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MeshVarifold, Vec3};
use crate::error::Result;

type Tri = (Vec<Vec3>, Vec<[usize; 3]>);

fn orient_outward(v: &[Vec3], faces: &mut [[usize; 3]]) {
    for f in faces.iter_mut() {
        let (a, b, c) = (v[f[0]], v[f[1]], v[f[2]]);
        if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
            f.swap(1, 2);
        }
    }
}

/// Regular icosahedron inscribed in the unit sphere.
pub fn icosahedron_raw() -> Tri {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v = vec![
        Vec3::new(-1.0, phi, 0.0),
        Vec3::new(1.0, phi, 0.0),
        Vec3::new(-1.0, -phi, 0.0),
        Vec3::new(1.0, -phi, 0.0),
        Vec3::new(0.0, -1.0, phi),
        Vec3::new(0.0, 1.0, phi),
        Vec3::new(0.0, -1.0, -phi),
        Vec3::new(0.0, 1.0, -phi),
        Vec3::new(phi, 0.0, -1.0),
        Vec3::new(phi, 0.0, 1.0),
        Vec3::new(-phi, 0.0, -1.0),
        Vec3::new(-phi, 0.0, 1.0),
    ];
    for p in &mut v {
        *p = p.normalize();
    }
    let mut f = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    orient_outward(&v, &mut f);
    (v, f)
}

/// Regular octahedron inscribed in the unit sphere.
pub fn octahedron_raw() -> Tri {
    let v = vec![
        Vec3::x(),
        -Vec3::x(),
        Vec3::y(),
        -Vec3::y(),
        Vec3::z(),
        -Vec3::z(),
    ];
    let mut f = vec![
        [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
        [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
    ];
    orient_outward(&v, &mut f);
    (v, f)
}

/// Loop-style 1-to-4 split with new vertices projected to the unit sphere.
fn subdivide_sphere((mut v, f): Tri) -> Tri {
    let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, v: &mut Vec<Vec3>| -> usize {
        let key = (a.min(b), a.max(b));
        *cache.entry(key).or_insert_with(|| {
            v.push(((v[a] + v[b]) * 0.5).normalize());
            v.len() - 1
        })
    };
    let mut out = Vec::with_capacity(f.len() * 4);
    for [a, b, c] in f {
        let ab = mid(a, b, &mut v);
        let bc = mid(b, c, &mut v);
        let ca = mid(c, a, &mut v);
        out.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
    }
    (v, out)
}

/// Unit icosphere after `subdivisions` rounds of refinement.
pub fn icosphere_raw(subdivisions: u32) -> Tri {
    let mut m = icosahedron_raw();
    for _ in 0..subdivisions {
        m = subdivide_sphere(m);
    }
    m
}

/// Icosphere of the given radius with multiplicity `k` (all sheets aligned).
pub fn icosphere(subdivisions: u32, radius: f64, k: u32) -> Result<MeshVarifold> {
    let (v, f) = icosphere_raw(subdivisions);
    MeshVarifold::new(v.into_iter().map(|p| p * radius).collect(), f, k, 0, 0)
}

/// Axis-aligned ellipsoid with semi-axes `axes`, built from an icosphere.
pub fn ellipsoid(subdivisions: u32, axes: [f64; 3], k: u32) -> Result<MeshVarifold> {
    let (v, f) = icosphere_raw(subdivisions);
    let v = v.into_iter().map(|p| Vec3::new(p.x * axes[0], p.y * axes[1], p.z * axes[2])).collect();
    MeshVarifold::new(v, f, k, 0, 0)
}

/// Torus of revolution about the z axis with `nu` x `nv` quads split into triangles.
pub fn torus(major: f64, minor: f64, nu: usize, nv: usize, k: u32) -> Result<MeshVarifold> {
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let w = 2.0 * PI * j as f64 / nv as f64;
            let r = major + minor * w.cos();
            v.push(Vec3::new(r * u.cos(), r * u.sin(), minor * w.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut f = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            f.push([a, b, c]);
            f.push([a, c, d]);
        }
    }
    MeshVarifold::new(v, f, k, 0, 1)
}

/// Closed axis-aligned cube `[-h, h]^3` whose faces are `n` x `n` grids.
pub fn grid_box(n: usize, half: f64, k: u32) -> Result<MeshVarifold> {
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut v: Vec<Vec3> = Vec::new();
    let mut f: Vec<[usize; 3]> = Vec::new();
    let n_i = n as i64;
    let mut vid = |key: [i64; 3], v: &mut Vec<Vec3>| -> usize {
        *index.entry(key).or_insert_with(|| {
            let s = |c: i64| half * (2.0 * c as f64 / n as f64 - 1.0);
            v.push(Vec3::new(s(key[0]), s(key[1]), s(key[2])));
            v.len() - 1
        })
    };
    for axis in 0..3 {
        for side in [0, n_i] {
            let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..n_i {
                for j in 0..n_i {
                    let corner = |di: i64, dj: i64| {
                        let mut key = [0i64; 3];
                        key[axis] = side;
                        key[u] = i + di;
                        key[w] = j + dj;
                        key
                    };
                    let keys = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                    let q: Vec<usize> = keys.iter().map(|k| vid(*k, &mut v)).collect();
                    let mut t1 = [q[0], q[1], q[2]];
                    let mut t2 = [q[0], q[2], q[3]];
                    if side == 0 {
                        t1.swap(1, 2);
                        t2.swap(1, 2);
                    }
                    f.push(t1);
                    f.push(t2);
                }
            }
        }
    }
    MeshVarifold::new(v, f, k, 0, 0)
}

/// Smooth random radial perturbation of the unit sphere.
///
/// The radius becomes `1 + amplitude * s(u)` where `s` is a random cubic
/// polynomial in the unit direction `u` without linear part, normalized so
/// that `max |s| = 1` over the mesh vertices. With `mirror_x` only monomials
/// even in `x` are used, so the result is symmetric under `x -> -x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialPerturbation {
    pub amplitude: f64,
    pub seed: u64,
    pub mirror_x: bool,
}

impl RadialPerturbation {
    pub fn new(amplitude: f64, seed: u64) -> Self {
        Self { amplitude, seed, mirror_x: false }
    }

    pub fn mirrored(mut self) -> Self {
        self.mirror_x = true;
        self
    }

    fn apply(&self, dirs: &[Vec3]) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut terms: Vec<([i32; 3], f64)> = Vec::new();
        for deg in 2..=3 {
            for a in 0..=deg {
                for b in 0..=deg - a {
                    let c = deg - a - b;
                    let coef: f64 = rng.gen_range(-1.0..1.0);
                    if self.mirror_x && a % 2 == 1 {
                        continue;
                    }
                    terms.push(([a, b, c], coef));
                }
            }
        }
        let s: Vec<f64> = dirs
            .iter()
            .map(|u| terms.iter().map(|(e, c)| c * u.x.powi(e[0]) * u.y.powi(e[1]) * u.z.powi(e[2])).sum())
            .collect();
        let smax = s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        dirs.iter()
            .zip(&s)
            .map(|(u, si)| u * (1.0 + self.amplitude * si / smax))
            .collect()
    }
}

/// Radially perturbed unit icosphere.
pub fn perturbed_sphere(subdivisions: u32, pert: RadialPerturbation, k: u32) -> Result<MeshVarifold> {
    let (v, f) = icosphere_raw(subdivisions);
    MeshVarifold::new(pert.apply(&v), f, k, 0, 0)
}
