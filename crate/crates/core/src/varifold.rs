//! Particle varifolds, isometries and mesh sampling.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mesh::{point_set_diameter, MeshVarifold, Vec3};
use crate::transport::{wasserstein, Solver, TransportConfig};

/// A weighted point of position-normal space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub x: Vec3,
    pub nu: Vec3,
    pub w: f64,
}

/// Finite positive measure on R^3 x S^2.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleVarifold {
    atoms: Vec<Atom>,
}

#[derive(Serialize, Deserialize)]
struct AtomRow {
    x: f64,
    y: f64,
    z: f64,
    nx: f64,
    ny: f64,
    nz: f64,
    w: f64,
}

impl ParticleVarifold {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return domain("particle varifold has no atoms");
        }
        for (i, a) in atoms.iter().enumerate() {
            if !(a.w > 0.0 && a.w.is_finite()) {
                return domain(format!("atom {i} has non-positive weight {}", a.w));
            }
            if !a.x.iter().all(|c| c.is_finite()) {
                return domain(format!("atom {i} has a non-finite position"));
            }
            if (a.nu.norm() - 1.0).abs() > 1e-12 {
                return domain(format!("atom {i} normal has length {}", a.nu.norm()));
            }
        }
        Ok(Self { atoms })
    }

    pub(crate) fn new_unchecked(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    /// (1/3) sum w x . nu
    pub fn enclosed_volume(&self) -> f64 {
        self.atoms.iter().map(|a| a.w * a.x.dot(&a.nu)).sum::<f64>() / 3.0
    }

    pub fn diameter(&self) -> f64 {
        point_set_diameter(self.atoms.iter().map(|a| &a.x))
    }

    pub fn pushforward(&self, g: &Isometry) -> Self {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom { x: g.apply_point(&a.x), nu: g.apply_normal(&a.nu), w: a.w })
            .collect();
        Self { atoms }
    }

    /// Multiplies all weights by `c`.
    pub fn scaled_weights(&self, c: f64) -> Self {
        Self { atoms: self.atoms.iter().map(|a| Atom { w: a.w * c, ..*a }).collect() }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut atoms = Vec::new();
        for (i, row) in rdr.deserialize::<AtomRow>().enumerate() {
            let r = row.map_err(|e| Error::Parse { line: i + 2, msg: e.to_string() })?;
            atoms.push(Atom { x: Vec3::new(r.x, r.y, r.z), nu: Vec3::new(r.nx, r.ny, r.nz), w: r.w });
        }
        Self::new(atoms)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for a in &self.atoms {
            wtr.serialize(AtomRow { x: a.x.x, y: a.x.y, z: a.x.z, nx: a.nu.x, ny: a.nu.y, nz: a.nu.z, w: a.w })
                .map_err(|e| Error::Domain(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Total mass, enclosed volume and support diameter shared by both
/// varifold representations.
pub trait Measure {
    fn mass(&self) -> f64;
    fn enclosed_volume(&self) -> f64;
    fn diameter(&self) -> f64;
}

impl Measure for ParticleVarifold {
    fn mass(&self) -> f64 {
        ParticleVarifold::mass(self)
    }
    fn enclosed_volume(&self) -> f64 {
        ParticleVarifold::enclosed_volume(self)
    }
    fn diameter(&self) -> f64 {
        ParticleVarifold::diameter(self)
    }
}

impl Measure for MeshVarifold {
    fn mass(&self) -> f64 {
        self.mass_value()
    }
    /// Centroid quadrature of (1/3) x . nu per face, which is exact on flat triangles.
    fn enclosed_volume(&self) -> f64 {
        self.orientation_density() as f64 * self.signed_volume()
    }
    fn diameter(&self) -> f64 {
        self.vertex_diameter()
    }
}

pub fn mass<M: Measure + ?Sized>(v: &M) -> f64 {
    v.mass()
}

pub fn enclosed_volume<M: Measure + ?Sized>(v: &M) -> f64 {
    v.enclosed_volume()
}

/// Rigid motion `(x, nu) -> (S x + t, S nu)` with orthogonal `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Isometry {
    linear: Matrix3<f64>,
    translation: Vec3,
}

impl Isometry {
    pub fn new(linear: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let defect = (linear.transpose() * linear - Matrix3::identity()).abs().max();
        if !(defect <= 1e-12) {
            return domain(format!("linear part is not orthogonal (|S^T S - I| = {defect:e})"));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return domain("translation is not finite");
        }
        Ok(Self { linear, translation })
    }

    pub fn identity() -> Self {
        Self { linear: Matrix3::identity(), translation: Vec3::zeros() }
    }

    /// Reflection across the plane through the origin with the given normal.
    pub fn reflection(normal: Vec3) -> Result<Self> {
        let n = normal.try_normalize(0.0).ok_or_else(|| Error::Domain("zero reflection normal".into()))?;
        Self::new(Matrix3::identity() - 2.0 * n * n.transpose(), Vec3::zeros())
    }

    pub fn rotation(axis: Vec3, angle: f64) -> Result<Self> {
        let axis = Unit::try_new(axis, 0.0).ok_or_else(|| Error::Domain("zero rotation axis".into()))?;
        Self::new(Rotation3::from_axis_angle(&axis, angle).into_inner(), Vec3::zeros())
    }

    pub fn translation(t: Vec3) -> Result<Self> {
        Self::new(Matrix3::identity(), t)
    }

    pub fn linear(&self) -> &Matrix3<f64> {
        &self.linear
    }

    pub fn translation_part(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply_point(&self, x: &Vec3) -> Vec3 {
        self.linear * x + self.translation
    }

    pub fn apply_normal(&self, nu: &Vec3) -> Vec3 {
        self.linear * nu
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &Isometry) -> Isometry {
        Isometry {
            linear: self.linear * other.linear,
            translation: self.linear * other.translation + self.translation,
        }
    }
}

pub fn pushforward(v: &ParticleVarifold, g: &Isometry) -> ParticleVarifold {
    v.pushforward(g)
}

/// W_p distance between `g#V` and `V`, computed exactly.
pub fn symmetry_defect(v: &ParticleVarifold, g: &Isometry, p: f64) -> Result<f64> {
    let cfg = TransportConfig { p, solver: Solver::Exact, ..TransportConfig::default() };
    Ok(wasserstein(&v.pushforward(g), v, &cfg)?.0)
}

/// Face quadrature used to turn a mesh into atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    /// One node at the centroid.
    #[default]
    Centroid,
    /// Three nodes at barycentric (2/3, 1/6, 1/6) and permutations.
    ThreePoint,
}

impl QuadratureRule {
    pub(crate) fn nodes(self) -> &'static [([f64; 3], f64)] {
        const C: [([f64; 3], f64); 1] = [([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1.0)];
        const T: [([f64; 3], f64); 3] = [
            ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
            ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
            ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
        ];
        match self {
            QuadratureRule::Centroid => &C,
            QuadratureRule::ThreePoint => &T,
        }
    }
}

/// Atoms of a mesh varifold: per face node, one atom along the outward
/// normal carrying the `theta_plus` share and one along the inward normal
/// carrying the `theta_minus` share.
pub fn sample_particles(mesh: &MeshVarifold, rule: QuadratureRule) -> Result<ParticleVarifold> {
    let threshold = crate::mesh::DEGENERATE_AREA_RATIO * mesh.area() / mesh.n_faces() as f64;
    for f in 0..mesh.n_faces() {
        let area = mesh.face_area(f);
        if !(area > threshold) {
            return Err(Error::DegenerateFace { face: f, area, threshold });
        }
    }
    Ok(sample_unchecked(mesh, rule))
}

pub(crate) fn sample_unchecked(mesh: &MeshVarifold, rule: QuadratureRule) -> ParticleVarifold {
    let tp = mesh.theta_plus() as f64;
    let tm = mesh.theta_minus() as f64;
    let nodes = rule.nodes();
    let mut atoms = Vec::with_capacity(mesh.n_faces() * nodes.len() * 2);
    let pos = mesh.positions();
    for (fi, face) in mesh.faces().iter().enumerate() {
        let cross = mesh.face_cross(fi);
        let area = 0.5 * cross.norm();
        let n = cross / (2.0 * area);
        for (bary, share) in nodes {
            let x = pos[face[0]] * bary[0] + pos[face[1]] * bary[1] + pos[face[2]] * bary[2];
            if tp > 0.0 {
                atoms.push(Atom { x, nu: n, w: area * share * tp });
            }
            if tm > 0.0 {
                atoms.push(Atom { x, nu: -n, w: area * share * tm });
            }
        }
    }
    ParticleVarifold::new_unchecked(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate;

    fn atom(x: [f64; 3], nu: [f64; 3], w: f64) -> Atom {
        Atom { x: Vec3::from(x), nu: Vec3::from(nu).normalize(), w }
    }

    #[test]
    fn particle_mass_is_weight_sum() {
        let v = ParticleVarifold::new(vec![atom([0.0; 3], [0.0, 0.0, 1.0], 1.5), atom([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], 2.5)])
            .unwrap();
        assert_eq!(v.mass(), 4.0);
    }

    #[test]
    fn invalid_atoms_are_rejected() {
        assert!(ParticleVarifold::new(vec![]).is_err());
        assert!(ParticleVarifold::new(vec![Atom { x: Vec3::zeros(), nu: Vec3::new(0.0, 0.0, 1.1), w: 1.0 }]).is_err());
        assert!(ParticleVarifold::new(vec![atom([0.0; 3], [1.0, 0.0, 0.0], 0.0)]).is_err());
    }

    #[test]
    fn non_orthogonal_isometry_is_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-6;
        assert!(Isometry::new(m, Vec3::zeros()).is_err());
    }

    #[test]
    fn icosahedron_sampling() {
        let (v, f) = generate::icosahedron_raw();
        let mesh = MeshVarifold::new(v.clone(), f.clone(), 1, 0, 0).unwrap();
        let p = sample_particles(&mesh, QuadratureRule::Centroid).unwrap();
        assert_eq!(p.len(), 20);
        assert!((p.mass() - mesh.area()).abs() <= 1e-12 * mesh.area());

        let both = MeshVarifold::new(v, f, 1, 1, 0).unwrap();
        let p = sample_particles(&both, QuadratureRule::Centroid).unwrap();
        assert_eq!(p.len(), 40);
        for pair in p.atoms().chunks(2) {
            assert_eq!(pair[0].x, pair[1].x);
            assert_eq!(pair[0].nu, -pair[1].nu);
        }
    }

    #[test]
    fn sampled_volume_matches_mesh_volume() {
        let mesh = generate::ellipsoid(2, [1.0, 1.5, 0.7], 1).unwrap();
        for rule in [QuadratureRule::Centroid, QuadratureRule::ThreePoint] {
            let p = sample_particles(&mesh, rule).unwrap();
            let rel = (p.enclosed_volume() - mesh.enclosed_volume()).abs() / mesh.enclosed_volume();
            assert!(rel < 1e-12, "{rule:?}: {rel}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let v = ParticleVarifold::new(vec![atom([0.1, 0.2, 0.3], [0.0, 0.6, 0.8], 0.7)]).unwrap();
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y,z,nx,ny,nz,w"));
        assert_eq!(ParticleVarifold::read_csv(buf.as_slice()).unwrap(), v);
    }
}
