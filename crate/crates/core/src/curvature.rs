//! Discrete curvature on closed triangle meshes.
//!
//! Mean curvature is the cotangent Laplacian of the embedding divided by the
//! mixed Voronoi area (Meyer et al.), Gauss curvature is the angle defect over
//! the same area. The scalar mean curvature carries the sign of `Hbar . n`
//! with `n` the area-weighted outward vertex normal, so the unit sphere has
//! `H = -2`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{MeshTopology, MeshVarifold, Vec3};

static FLIP_MEAN_SIGN: AtomicBool = AtomicBool::new(false);

/// Mutation hook for the validation suite: flips the sign convention of the
/// scalar mean curvature process-wide.
#[doc(hidden)]
pub fn set_sign_mutation(on: bool) {
    FLIP_MEAN_SIGN.store(on, Ordering::SeqCst);
}

/// Per-vertex quantities of one closed star.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexCurvature {
    /// Mixed Voronoi area.
    pub area: f64,
    /// Cotangent Laplacian of the position times the mixed area.
    pub laplacian: Vec3,
    /// 2 pi minus the incident angles.
    pub angle_defect: f64,
    /// Sum of incident face cross products (twice the area-weighted normal).
    pub normal_sum: Vec3,
}

impl VertexCurvature {
    pub fn mean_vector(&self) -> Vec3 {
        self.laplacian / self.area
    }

    pub fn mean(&self) -> f64 {
        let hbar = self.mean_vector();
        let h = if hbar.dot(&self.normal_sum) < 0.0 { -hbar.norm() } else { hbar.norm() };
        if FLIP_MEAN_SIGN.load(Ordering::Relaxed) {
            -h
        } else {
            h
        }
    }

    pub fn gauss(&self) -> f64 {
        self.angle_defect / self.area
    }
}

#[inline]
fn cot_and_angle(u: &Vec3, w: &Vec3) -> (f64, f64) {
    let cross = u.cross(w).norm();
    let dot = u.dot(w);
    (dot / cross, cross.atan2(dot))
}

/// Evaluates the star of `v` from the given positions.
pub fn vertex_curvature(topo: &MeshTopology, pos: &[Vec3], v: usize) -> VertexCurvature {
    vertex_curvature_by(topo, v, |i| pos[i])
}

/// As [`vertex_curvature`] with positions supplied by a lookup.
pub fn vertex_curvature_by(topo: &MeshTopology, v: usize, pos: impl Fn(usize) -> Vec3) -> VertexCurvature {
    let mut area = 0.0;
    let mut lap = Vec3::zeros();
    let mut angles = 0.0;
    let mut nsum = Vec3::zeros();
    let p = pos(v);
    for &f in topo.vertex_faces(v) {
        let face = topo.faces()[f];
        let c = face.iter().position(|&x| x == v).expect("incident face contains vertex");
        let a = pos(face[(c + 1) % 3]);
        let b = pos(face[(c + 2) % 3]);
        let (ea, eb) = (a - p, b - p);
        let (_, ang_v) = cot_and_angle(&ea, &eb);
        let (cot_a, ang_a) = cot_and_angle(&(p - a), &(b - a));
        let (cot_b, ang_b) = cot_and_angle(&(p - b), &(a - b));
        lap += (ea * cot_b + eb * cot_a) * 0.5;
        angles += ang_v;
        let cross = ea.cross(&eb);
        nsum += cross;
        let tri_area = 0.5 * cross.norm();
        let half_pi = 0.5 * PI;
        area += if ang_v > half_pi {
            0.5 * tri_area
        } else if ang_a > half_pi || ang_b > half_pi {
            0.25 * tri_area
        } else {
            0.125 * (ea.norm_squared() * cot_b + eb.norm_squared() * cot_a)
        };
    }
    VertexCurvature { area, laplacian: lap, angle_defect: 2.0 * PI - angles, normal_sum: nsum }
}

/// Per-vertex curvature of a mesh.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureField {
    pub mean_vector: Vec<[f64; 3]>,
    pub mean: Vec<f64>,
    pub gauss: Vec<f64>,
    pub area: Vec<f64>,
    /// Angle defects; `gauss * area` up to rounding.
    pub angle_defect: Vec<f64>,
}

impl CurvatureField {
    pub fn compute(mesh: &MeshVarifold) -> Result<Self> {
        let topo = mesh.topology();
        let pos = mesh.positions();
        let stars: Vec<VertexCurvature> =
            (0..mesh.n_vertices()).into_par_iter().map(|v| vertex_curvature(topo, pos, v)).collect();
        if let Some(vertex) = stars.iter().position(|s| !(s.area > 0.0)) {
            return Err(Error::ZeroMixedArea { vertex });
        }
        Ok(Self {
            mean_vector: stars.iter().map(|s| s.mean_vector().into()).collect(),
            mean: stars.iter().map(VertexCurvature::mean).collect(),
            gauss: stars.iter().map(VertexCurvature::gauss).collect(),
            area: stars.iter().map(|s| s.area).collect(),
            angle_defect: stars.iter().map(|s| s.angle_defect).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean_vector_sq(&self, v: usize) -> f64 {
        let h = self.mean_vector[v];
        h[0] * h[0] + h[1] * h[1] + h[2] * h[2]
    }

    /// Sum of K a, i.e. the total angle defect.
    pub fn total_gauss(&self) -> f64 {
        self.angle_defect.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let second = second_form_quantities(self).ok();
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["vertex", "H", "K", "II2", "area"]).map_err(csv_err)?;
        for v in 0..self.len() {
            let ii = second.as_ref().map_or(f64::NAN, |s| s.ii_sq[v]);
            wtr.write_record([
                v.to_string(),
                format!("{:?}", self.mean[v]),
                format!("{:?}", self.gauss[v]),
                format!("{ii:?}"),
                format!("{:?}", self.area[v]),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Domain(e.to_string())
}

pub fn mean_curvature(mesh: &MeshVarifold) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
    let f = CurvatureField::compute(mesh)?;
    Ok((f.mean_vector, f.mean))
}

pub fn gauss_curvature(mesh: &MeshVarifold) -> Result<Vec<f64>> {
    Ok(CurvatureField::compute(mesh)?.gauss)
}

/// |II|^2 and |A|^2 per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondForm {
    pub ii_sq: Vec<f64>,
    pub a_sq: Vec<f64>,
}

pub fn second_form_quantities(field: &CurvatureField) -> Result<SecondForm> {
    let mut ii_sq = Vec::with_capacity(field.len());
    for v in 0..field.len() {
        let h2 = field.mean_vector_sq(v);
        let val = h2 - 2.0 * field.gauss[v];
        let eps = 1e-8 * h2.max(1.0);
        if val < -eps {
            return Err(Error::InconsistentCurvature { vertex: v, value: val });
        }
        ii_sq.push(val.max(0.0));
    }
    let a_sq = ii_sq.iter().map(|x| 2.0 * x).collect();
    Ok(SecondForm { ii_sq, a_sq })
}
