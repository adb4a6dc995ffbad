//! Configurations with prescribed per-face areas (and optionally enclosed
//! volume). Moving inside this set leaves the atom weights unchanged, so the
//! transport term stays smooth.

use std::cell::RefCell;

use sprs::{FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::mesh::{MeshTopology, Vec3};

pub(crate) struct AreaManifold<'a> {
    topo: &'a MeshTopology,
    face_area: Vec<f64>,
    volume: Option<f64>,
    /// Multipliers of the last projection, the starting guess for the next.
    last_lam: RefCell<Option<Vec<f64>>>,
    /// Factorization of the face block of the normal matrix at the first
    /// solve, used to precondition later ones.
    precond: RefCell<Option<Preconditioner>>,
}

struct Preconditioner {
    faces: LdlNumeric<f64, usize>,
    volume_diag: f64,
}

impl Preconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let nf = self.faces.problem_size();
        let mut z: Vec<f64> = self.faces.solve(&r[..nf].to_vec());
        if r.len() > nf {
            z.push(r[nf] / self.volume_diag);
        }
        z
    }
}

fn face_area(x: &[Vec3], f: &[usize; 3]) -> f64 {
    0.5 * (x[f[1]] - x[f[0]]).cross(&(x[f[2]] - x[f[0]])).norm()
}

/// Area gradients of one face with respect to its three corners.
fn face_area_grad(x: &[Vec3], f: &[usize; 3]) -> [Vec3; 3] {
    let (a, b, c) = (x[f[0]], x[f[1]], x[f[2]]);
    let n = (b - a).cross(&(c - a));
    let n = n / n.norm();
    [0.5 * (b - c).cross(&n), 0.5 * (c - a).cross(&n), 0.5 * (a - b).cross(&n)]
}

fn volume(topo: &MeshTopology, x: &[Vec3]) -> f64 {
    topo.faces().iter().map(|f| x[f[0]].dot(&x[f[1]].cross(&x[f[2]])) / 6.0).sum()
}

impl<'a> AreaManifold<'a> {
    pub fn new(topo: &'a MeshTopology, x: &[Vec3], volume: Option<f64>) -> Self {
        let face_area = topo.faces().iter().map(|f| self::face_area(x, f)).collect();
        Self { topo, face_area, volume, last_lam: RefCell::new(None), precond: RefCell::new(None) }
    }

    fn residual(&self, x: &[Vec3]) -> Vec<f64> {
        let mut r: Vec<f64> =
            self.topo.faces().iter().zip(&self.face_area).map(|(f, a0)| face_area(x, f) - a0).collect();
        if let Some(v0) = self.volume {
            r.push(volume(self.topo, x) - v0);
        }
        r
    }

    fn within_tolerance(&self, r: &[f64]) -> bool {
        let nf = self.face_area.len();
        let faces_ok = r[..nf].iter().zip(&self.face_area).all(|(ri, a)| ri.abs() <= 1e-11 * a);
        let vol_ok = self.volume.map_or(true, |v0| r[nf].abs() <= 1e-12 * v0.abs());
        faces_ok && vol_ok
    }

    /// Constraint Jacobian: per-face corner gradients and the volume gradient.
    fn jacobian(&self, x: &[Vec3]) -> Jacobian<'_> {
        let faces = self.topo.faces().iter().map(|f| face_area_grad(x, f)).collect();
        let vol = self.volume.map(|_| {
            let mut g = vec![Vec3::zeros(); x.len()];
            for f in self.topo.faces() {
                let (a, b, c) = (x[f[0]], x[f[1]], x[f[2]]);
                g[f[0]] += b.cross(&c) / 6.0;
                g[f[1]] += c.cross(&a) / 6.0;
                g[f[2]] += a.cross(&b) / 6.0;
            }
            g
        });
        Jacobian { topo: self.topo, faces, vol }
    }

    /// Tangent vector `M^{-1}(g - J^T lam)` closest to `M^{-1} g` in the `M` norm.
    pub fn project(&self, x: &[Vec3], g: &[Vec3], minv: &[f64]) -> Option<Vec<Vec3>> {
        let jac = self.jacobian(x);
        let rhs = jac.apply(&scaled(g, minv));
        let guess = self.last_lam.borrow_mut().take();
        let lam = self.solve(&jac, &rhs, minv, 1e-10, guess.as_deref())?;
        *self.last_lam.borrow_mut() = Some(lam.clone());
        let corr = jac.apply_t(&lam, x.len());
        Some(g.iter().zip(&corr).zip(minv).map(|((a, b), m)| (a - b) * *m).collect())
    }

    fn solve(&self, jac: &Jacobian, rhs: &[f64], minv: &[f64], tol: f64, guess: Option<&[f64]>) -> Option<Vec<f64>> {
        let mut pc = self.precond.borrow_mut();
        if pc.is_none() {
            *pc = jac.factor(minv);
        }
        jac.solve_normal(rhs, minv, tol, guess, pc.as_ref())
    }

    /// Gauss-Newton return to the constraint set with inexact inner solves.
    pub fn restore(&self, x: &mut [Vec3], minv: &[f64]) -> bool {
        for _ in 0..30 {
            let r = self.residual(x);
            if self.within_tolerance(&r) {
                return true;
            }
            let jac = self.jacobian(x);
            let Some(lam) = self.solve(&jac, &r, minv, 1e-6, None) else {
                return false;
            };
            let corr = jac.apply_t(&lam, x.len());
            for (v, c) in corr.iter().enumerate() {
                x[v] -= c * minv[v];
            }
        }
        self.within_tolerance(&self.residual(x))
    }
}

fn scaled(v: &[Vec3], s: &[f64]) -> Vec<Vec3> {
    v.iter().zip(s).map(|(a, b)| a * *b).collect()
}

struct Jacobian<'a> {
    topo: &'a MeshTopology,
    faces: Vec<[Vec3; 3]>,
    vol: Option<Vec<Vec3>>,
}

impl Jacobian<'_> {
    fn apply(&self, v: &[Vec3]) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .topo
            .faces()
            .iter()
            .zip(&self.faces)
            .map(|(f, g)| g[0].dot(&v[f[0]]) + g[1].dot(&v[f[1]]) + g[2].dot(&v[f[2]]))
            .collect();
        if let Some(gv) = &self.vol {
            out.push(gv.iter().zip(v).map(|(a, b)| a.dot(b)).sum());
        }
        out
    }

    fn apply_t(&self, lam: &[f64], n: usize) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); n];
        for ((f, g), l) in self.topo.faces().iter().zip(&self.faces).zip(lam) {
            for k in 0..3 {
                out[f[k]] += g[k] * *l;
            }
        }
        if let Some(gv) = &self.vol {
            let l = lam[self.faces.len()];
            for (o, g) in out.iter_mut().zip(gv) {
                *o += g * l;
            }
        }
        out
    }

    /// Sparse LDL^T factorization of the face block of `J M^{-1} J^T`.
    fn factor(&self, minv: &[f64]) -> Option<Preconditioner> {
        let faces = self.topo.faces();
        let nf = faces.len();
        let mut tri = TriMat::new((nf, nf));
        for v in 0..minv.len() {
            let star = self.topo.vertex_faces(v);
            for &f in star {
                let kf = faces[f].iter().position(|&u| u == v)?;
                for &g in star {
                    let kg = faces[g].iter().position(|&u| u == v)?;
                    tri.add_triplet(f, g, self.faces[f][kf].dot(&self.faces[g][kg]) * minv[v]);
                }
            }
        }
        let mat = tri.to_csc::<usize>();
        let ldl = Ldl::new()
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .numeric(mat.view())
            .ok()?;
        let volume_diag = match &self.vol {
            Some(gv) => gv.iter().zip(minv).map(|(g, m)| g.norm_squared() * m).sum(),
            None => 1.0,
        };
        Some(Preconditioner { faces: ldl, volume_diag })
    }

    /// Preconditioned conjugate gradients on `J M^{-1} J^T lam = rhs`
    /// (Jacobi when no factorization is available).
    fn solve_normal(
        &self,
        rhs: &[f64],
        minv: &[f64],
        tol: f64,
        guess: Option<&[f64]>,
        pc: Option<&Preconditioner>,
    ) -> Option<Vec<f64>> {
        let n = rhs.len();
        let op = |p: &[f64]| self.apply(&scaled(&self.apply_t(p, minv.len()), minv));
        let mut diag: Vec<f64> = self
            .topo
            .faces()
            .iter()
            .zip(&self.faces)
            .map(|(f, g)| (0..3).map(|k| g[k].norm_squared() * minv[f[k]]).sum())
            .collect();
        if let Some(gv) = &self.vol {
            diag.push(gv.iter().zip(minv).map(|(g, m)| g.norm_squared() * m).sum());
        }
        if diag.iter().any(|d| !(*d > 0.0)) {
            return None;
        }
        let bnorm = rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Some(vec![0.0; n]);
        }
        let (mut lam, mut r) = match guess {
            Some(g) if g.len() == n => {
                let ag = op(g);
                (g.to_vec(), rhs.iter().zip(&ag).map(|(b, a)| b - a).collect::<Vec<_>>())
            }
            _ => (vec![0.0; n], rhs.to_vec()),
        };
        if r.iter().map(|x| x * x).sum::<f64>().sqrt() <= tol * bnorm {
            return Some(lam);
        }
        let precondition = |r: &[f64]| -> Vec<f64> {
            match pc {
                Some(pc) => pc.apply(r),
                None => r.iter().zip(&diag).map(|(a, d)| a / d).collect(),
            }
        };
        let mut z = precondition(&r);
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        for _ in 0..(4 * n).max(200) {
            let ap = op(&p);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                lam[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rnorm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if rnorm <= tol * bnorm {
                return Some(lam);
            }
            z = precondition(&r);
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rnorm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        (rnorm <= tol.max(1e-8) * bnorm).then_some(lam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate::{perturbed_sphere, RadialPerturbation};

    #[test]
    fn projected_direction_is_tangent_and_restore_converges() {
        let m = perturbed_sphere(2, RadialPerturbation::new(0.1, 9), 1).unwrap();
        let topo = m.topology();
        let x = m.positions().to_vec();
        let vol = volume(topo, &x);
        let man = AreaManifold::new(topo, &x, Some(vol));
        let minv = vec![1.0; x.len()];
        let v: Vec<Vec3> = x.iter().map(|p| Vec3::new(p.y * p.z, p.x, -p.x * p.x)).collect();
        let d = man.project(&x, &v, &minv).unwrap();
        let jd = man.jacobian(&x).apply(&d);
        assert!(jd.iter().all(|t| t.abs() < 1e-10), "{:e}", jd.iter().fold(0.0f64, |a, b| a.max(b.abs())));
        let mut y: Vec<Vec3> = x.iter().zip(&d).map(|(a, b)| a + b * 1e-2).collect();
        assert!(man.restore(&mut y, &minv));
        let r = man.residual(&y);
        assert!(man.within_tolerance(&r));
    }
}
