//! Closed oriented triangle meshes carrying constant multiplicities.
//!
//! A [`MeshVarifold`] is the regular-setting representation of an oriented
//! integral varifold: a closed, consistently wound triangle surface with a
//! per-mesh pair of multiplicities `(theta_plus, theta_minus)` counting the
//! sheets aligned with and opposite to the outward normal.
//!
//! Connectivity lives in a shared [`MeshTopology`], so updating vertex
//! positions (as the flow driver does on every inner iteration) is cheap.

pub mod generate;
pub mod io;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::varifold::Isometry;

pub type Vec3 = Vector3<f64>;

/// Relative area below which a face counts as degenerate.
pub const DEGENERATE_AREA_RATIO: f64 = 1e-14;

/// Face connectivity of a closed orientable triangle surface.
#[derive(Debug, Clone)]
pub struct MeshTopology {
    n_vertices: usize,
    faces: Vec<[usize; 3]>,
    vertex_faces: Vec<Vec<usize>>,
    vertex_neighbors: Vec<Vec<usize>>,
    n_edges: usize,
}

impl MeshTopology {
    /// Builds the adjacency and checks that every edge is shared by exactly
    /// two faces with opposite winding.
    pub fn new(n_vertices: usize, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::Domain("mesh has no faces".into()));
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n_vertices {
                    return Err(Error::Domain(format!(
                        "face {fi} references vertex {v} but mesh has {n_vertices} vertices"
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Domain(format!("face {fi} repeats a vertex: {f:?}")));
            }
            for c in 0..3 {
                let e = (f[c], f[(c + 1) % 3]);
                if directed.insert(e, fi).is_some() {
                    return Err(Error::Inconsistent(e.0, e.1));
                }
            }
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                let count = 1;
                return Err(Error::NotClosed(a.min(b), a.max(b), count));
            }
        }
        let n_edges = directed.len() / 2;

        let mut vertex_faces = vec![Vec::new(); n_vertices];
        let mut vertex_neighbors: Vec<Vec<usize>> = vec![Vec::new(); n_vertices];
        for (fi, f) in faces.iter().enumerate() {
            for c in 0..3 {
                vertex_faces[f[c]].push(fi);
                let nb = f[(c + 1) % 3];
                if !vertex_neighbors[f[c]].contains(&nb) {
                    vertex_neighbors[f[c]].push(nb);
                }
            }
        }
        if let Some(v) = vertex_faces.iter().position(|fs| fs.is_empty()) {
            return Err(Error::Domain(format!("vertex {v} is not referenced by any face")));
        }
        for nb in &mut vertex_neighbors {
            nb.sort_unstable();
        }
        Ok(Self { n_vertices, faces, vertex_faces, vertex_neighbors, n_edges })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Faces incident to vertex `v`.
    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    /// One-ring neighbours of `v`, sorted.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.vertex_neighbors[v]
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices as i64 - self.n_edges as i64 + self.faces.len() as i64
    }

    fn flipped(&self) -> Self {
        let faces = self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect();
        Self::new(self.n_vertices, faces).expect("flipping preserves validity")
    }
}

/// A closed oriented triangle mesh with constant multiplicities.
#[derive(Debug, Clone)]
pub struct MeshVarifold {
    topology: Arc<MeshTopology>,
    positions: Vec<Vec3>,
    theta_plus: u32,
    theta_minus: u32,
    genus: u32,
}

impl MeshVarifold {
    /// Validates the mesh (closed, consistently wound, Euler characteristic
    /// `2 - 2 genus`, no degenerate faces) and normalizes the winding so that
    /// face normals point outward.
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        theta_plus: u32,
        theta_minus: u32,
        genus: u32,
    ) -> Result<Self> {
        let topology = MeshTopology::new(vertices.len(), faces)?;
        Self::from_topology(Arc::new(topology), vertices, theta_plus, theta_minus, genus)
    }

    pub fn from_topology(
        topology: Arc<MeshTopology>,
        positions: Vec<Vec3>,
        theta_plus: u32,
        theta_minus: u32,
        genus: u32,
    ) -> Result<Self> {
        if theta_plus + theta_minus == 0 {
            return Err(Error::Domain("theta_plus + theta_minus must be at least 1".into()));
        }
        if positions.len() != topology.n_vertices() {
            return Err(Error::Domain(format!(
                "{} positions for {} vertices",
                positions.len(),
                topology.n_vertices()
            )));
        }
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Domain(format!("vertex {i} has a non-finite coordinate")));
        }
        let chi = topology.euler_characteristic();
        let expected = 2 - 2 * genus as i64;
        if chi != expected {
            return Err(Error::EulerMismatch { chi, genus, expected });
        }
        let mut mesh = Self { topology, positions, theta_plus, theta_minus, genus };
        mesh.check_degenerate()?;
        if mesh.signed_volume() < 0.0 {
            mesh.topology = Arc::new(mesh.topology.flipped());
        }
        Ok(mesh)
    }

    /// Same connectivity and multiplicity, new vertex positions.
    pub fn with_positions(&self, positions: Vec<Vec3>) -> Result<Self> {
        let mesh = self.with_positions_unchecked(positions);
        if mesh.positions.len() != self.positions.len() {
            return Err(Error::Domain("position count changed".into()));
        }
        mesh.check_degenerate()?;
        Ok(mesh)
    }

    pub(crate) fn with_positions_unchecked(&self, positions: Vec<Vec3>) -> Self {
        Self {
            topology: Arc::clone(&self.topology),
            positions,
            theta_plus: self.theta_plus,
            theta_minus: self.theta_minus,
            genus: self.genus,
        }
    }

    pub fn with_multiplicity(&self, theta_plus: u32, theta_minus: u32) -> Result<Self> {
        if theta_plus + theta_minus == 0 {
            return Err(Error::Domain("theta_plus + theta_minus must be at least 1".into()));
        }
        Ok(Self { theta_plus, theta_minus, ..self.clone() })
    }

    pub fn topology(&self) -> &Arc<MeshTopology> {
        &self.topology
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        self.topology.faces()
    }

    pub fn n_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn n_faces(&self) -> usize {
        self.topology.n_faces()
    }

    pub fn theta_plus(&self) -> u32 {
        self.theta_plus
    }

    pub fn theta_minus(&self) -> u32 {
        self.theta_minus
    }

    /// theta_plus + theta_minus.
    pub fn multiplicity(&self) -> u32 {
        self.theta_plus + self.theta_minus
    }

    /// theta_plus - theta_minus.
    pub fn orientation_density(&self) -> i64 {
        self.theta_plus as i64 - self.theta_minus as i64
    }

    pub fn genus(&self) -> u32 {
        self.genus
    }

    fn corners(&self, f: usize) -> (Vec3, Vec3, Vec3) {
        let [a, b, c] = self.topology.faces[f];
        (self.positions[a], self.positions[b], self.positions[c])
    }

    /// Unnormalized face normal (b - a) x (c - a); its norm is twice the area.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let (a, b, c) = self.corners(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.face_cross(f).normalize()
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let (a, b, c) = self.corners(f);
        (a + b + c) / 3.0
    }

    /// Surface area of one sheet.
    pub fn area(&self) -> f64 {
        (0..self.n_faces()).map(|f| self.face_area(f)).sum()
    }

    /// Geometric volume bounded by one outward sheet.
    pub fn signed_volume(&self) -> f64 {
        (0..self.n_faces())
            .map(|f| {
                let (a, b, c) = self.corners(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Area-weighted centroid of the surface.
    pub fn centroid(&self) -> Vec3 {
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for f in 0..self.n_faces() {
            let a = self.face_area(f);
            acc += self.face_centroid(f) * a;
            total += a;
        }
        acc / total
    }

    /// Uniform scaling by `s` about `center`.
    pub fn scaled_about(&self, s: f64, center: Vec3) -> Self {
        let positions = self.positions.iter().map(|p| center + (p - center) * s).collect();
        self.with_positions_unchecked(positions)
    }

    /// Rescales about the centroid so that the mass equals `m0`.
    pub fn rescaled_to_mass(&self, m0: f64) -> Self {
        let s = (m0 / self.mass_value()).sqrt();
        self.scaled_about(s, self.centroid())
    }

    pub fn transformed(&self, g: &Isometry) -> Self {
        let positions = self.positions.iter().map(|p| g.apply_point(p)).collect();
        let mesh = self.with_positions_unchecked(positions);
        if g.linear().determinant() < 0.0 {
            // reflections reverse the winding; restore the outward convention
            Self { topology: Arc::new(mesh.topology.flipped()), ..mesh }
        } else {
            mesh
        }
    }

    pub(crate) fn mass_value(&self) -> f64 {
        self.multiplicity() as f64 * self.area()
    }

    fn check_degenerate(&self) -> Result<()> {
        let n = self.n_faces();
        let areas: Vec<f64> = (0..n).map(|f| self.face_area(f)).collect();
        let mean = areas.iter().sum::<f64>() / n as f64;
        let threshold = DEGENERATE_AREA_RATIO * mean;
        for (face, &area) in areas.iter().enumerate() {
            if !(area >= threshold) || area == 0.0 {
                return Err(Error::DegenerateFace { face, area, threshold });
            }
        }
        Ok(())
    }

    /// Exact diameter of the vertex set.
    pub fn vertex_diameter(&self) -> f64 {
        point_set_diameter(self.positions.iter())
    }
}

pub(crate) fn point_set_diameter<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> f64 {
    let pts: Vec<&Vec3> = points.collect();
    let mut best = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.max((pts[i] - pts[j]).norm_squared());
        }
    }
    best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> (Vec<Vec3>, Vec<[usize; 3]>) {
        let v = vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, -1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ];
        let f = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]];
        (v, f)
    }

    #[test]
    fn tetrahedron_is_valid_and_outward() {
        let (v, f) = tetra();
        let m = MeshVarifold::new(v, f, 1, 0, 0).unwrap();
        assert_eq!(m.topology().euler_characteristic(), 2);
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn inward_winding_is_flipped() {
        let (v, f) = tetra();
        let inward: Vec<[usize; 3]> = f.iter().map(|t| [t[0], t[2], t[1]]).collect();
        let m = MeshVarifold::new(v, inward, 1, 0, 0).unwrap();
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn open_mesh_is_rejected() {
        let (v, mut f) = tetra();
        f.pop();
        assert!(matches!(MeshVarifold::new(v, f, 1, 0, 0), Err(Error::NotClosed(..))));
    }

    #[test]
    fn inconsistent_winding_is_rejected() {
        let (v, mut f) = tetra();
        f[0] = [0, 2, 1];
        assert!(matches!(MeshVarifold::new(v, f, 1, 0, 0), Err(Error::Inconsistent(..))));
    }

    #[test]
    fn wrong_genus_is_rejected() {
        let (v, f) = tetra();
        assert!(matches!(MeshVarifold::new(v, f, 1, 0, 1), Err(Error::EulerMismatch { .. })));
    }

    #[test]
    fn degenerate_face_is_rejected() {
        let (mut v, f) = tetra();
        // collapse vertex 3 onto the edge between 0 and 1 is not enough; put it on vertex 0's line
        v[3] = v[0] * 0.5 + v[1] * 0.5;
        let err = MeshVarifold::new(v, f, 1, 0, 0).unwrap_err();
        assert!(matches!(err, Error::DegenerateFace { .. }), "{err}");
    }

    #[test]
    fn zero_multiplicity_is_rejected() {
        let (v, f) = tetra();
        assert!(MeshVarifold::new(v, f, 0, 0, 0).is_err());
    }
}
