//! Bending energies of mesh varifolds and the closed forms for spheres.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::curvature::CurvatureField;
use crate::error::{domain, Error, Result};
use crate::mesh::{MeshVarifold, Vec3};
use crate::params::HelfrichParams;
use crate::varifold::Measure;

/// Components of the Canham-Helfrich energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    /// sum a (beta/2)(H^2 + H0^2)(theta+ + theta-)
    pub bending: f64,
    /// sum a gamma K (theta+ + theta-)
    pub gauss: f64,
    /// -beta H0 (theta+ - theta-) sum a H
    pub cross: f64,
    pub willmore: f64,
}

fn check_field(mesh: &MeshVarifold, field: &CurvatureField) -> Result<()> {
    if field.len() != mesh.n_vertices() {
        return domain(format!(
            "curvature field has {} vertices, mesh has {}",
            field.len(),
            mesh.n_vertices()
        ));
    }
    Ok(())
}

/// Energy density of one vertex star; sums to [`helfrich_energy`]'s total.
#[inline]
pub(crate) fn vertex_energy(area: f64, h: f64, angle_defect: f64, theta_sum: f64, theta_diff: f64, p: &HelfrichParams) -> f64 {
    area * 0.5 * p.beta * (h * h + p.h0 * p.h0) * theta_sum + p.gamma * angle_defect * theta_sum
        - p.beta * p.h0 * theta_diff * area * h
}

pub fn helfrich_energy(mesh: &MeshVarifold, field: &CurvatureField, params: &HelfrichParams) -> Result<EnergyBreakdown> {
    check_field(mesh, field)?;
    let ts = mesh.multiplicity() as f64;
    let td = mesh.orientation_density() as f64;
    let (mut h2a, mut ha, mut area, mut kdef) = (0.0, 0.0, 0.0, 0.0);
    for v in 0..field.len() {
        let a = field.area[v];
        let h = field.mean[v];
        h2a += a * h * h;
        ha += a * h;
        area += a;
        kdef += field.angle_defect[v];
    }
    let bending = 0.5 * params.beta * (h2a + params.h0 * params.h0 * area) * ts;
    let gauss = params.gamma * kdef * ts;
    let cross = -params.beta * params.h0 * td * ha;
    let willmore = 0.25 * h2a * ts;
    Ok(EnergyBreakdown { total: bending + gauss + cross, bending, gauss, cross, willmore })
}

/// W = 1/4 sum a |Hbar|^2 (theta+ + theta-).
pub fn willmore_energy(mesh: &MeshVarifold, field: &CurvatureField) -> Result<f64> {
    check_field(mesh, field)?;
    let s: f64 = (0..field.len()).map(|v| field.area[v] * field.mean_vector_sq(v)).sum();
    Ok(0.25 * s * mesh.multiplicity() as f64)
}

/// Right-hand side of the Cauchy-Schwarz lower bound
/// `2 beta (sqrt(W/m) - |H0|/2)^2 m + gamma sum K a (theta+ + theta-)` with `m` the mass.
pub fn lower_bound_certificate(mesh: &MeshVarifold, field: &CurvatureField, params: &HelfrichParams) -> Result<f64> {
    let w = willmore_energy(mesh, field)?;
    let gauss_integral = field.total_gauss() * mesh.multiplicity() as f64;
    Ok(lower_bound_from_parts(w, mesh.mass(), gauss_integral, params))
}

/// The lower bound evaluated from scalar inputs.
pub fn lower_bound_from_parts(willmore: f64, mass: f64, gauss_integral: f64, params: &HelfrichParams) -> f64 {
    let s = (willmore / mass).sqrt() - 0.5 * params.h0.abs();
    2.0 * params.beta * s * s * mass + params.gamma * gauss_integral
}

/// (theta+ + theta-) sum a f(x, nu, H, K) with vertex normals from the mesh.
pub fn generic_energy<F>(mesh: &MeshVarifold, field: &CurvatureField, f: F) -> Result<f64>
where
    F: Fn(&Vec3, &Vec3, f64, f64) -> f64,
{
    check_field(mesh, field)?;
    let normals = vertex_normals(mesh);
    let mut s = 0.0;
    for v in 0..field.len() {
        let val = f(&mesh.positions()[v], &normals[v], field.mean[v], field.gauss[v]);
        if !val.is_finite() {
            return Err(Error::NonFinite { vertex: v, value: val });
        }
        s += field.area[v] * val;
    }
    Ok(s * mesh.multiplicity() as f64)
}

/// Area-weighted outward vertex normals.
pub fn vertex_normals(mesh: &MeshVarifold) -> Vec<Vec3> {
    let mut n = vec![Vec3::zeros(); mesh.n_vertices()];
    for (fi, face) in mesh.faces().iter().enumerate() {
        let c = mesh.face_cross(fi);
        for &v in face {
            n[v] += c;
        }
    }
    n.into_iter().map(|x| x.normalize()).collect()
}

/// Energy of the k-covered sphere of mass m0.
pub fn sphere_energy(k: u64, params: &HelfrichParams) -> Result<f64> {
    if k == 0 {
        return domain("sphere multiplicity must be at least 1");
    }
    Ok(sphere_energy_unchecked(k as f64, params))
}

fn sphere_energy_unchecked(k: f64, p: &HelfrichParams) -> f64 {
    let r1 = p.r1();
    2.0 * p.beta * p.m0 * (p.reduced_rigidity() * k / (r1 * r1) + p.h0 * k.sqrt() / r1 + 0.25 * p.h0 * p.h0)
}

/// Minimizing multiplicity: either unique or a tie between neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum SphereArgmin {
    Unique(u64),
    Tie(u64, u64),
}

impl SphereArgmin {
    /// The smaller minimizer.
    pub fn first(&self) -> u64 {
        match *self {
            SphereArgmin::Unique(k) | SphereArgmin::Tie(k, _) => k,
        }
    }

    pub fn contains(&self, k: u64) -> bool {
        match *self {
            SphereArgmin::Unique(a) => a == k,
            SphereArgmin::Tie(a, b) => a == k || b == k,
        }
    }
}

/// How the minimizer was determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// k* is a positive integer: exact interior minimizer.
    Integer,
    /// k* <= 1.
    AtMostOne,
    /// Decided by the sign of Y*.
    Neighbour,
    /// Y* vanished within tolerance.
    Tie,
    /// Outside the closed-form hypotheses: direct search.
    BruteForce,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SphereAnalytics {
    pub k_star: f64,
    pub y_star: Option<f64>,
    pub argmin: SphereArgmin,
    pub rule: SelectionRule,
    pub radii: BTreeMap<u64, f64>,
    pub energies: BTreeMap<u64, f64>,
    pub warnings: Vec<String>,
}

const BRUTE_FORCE_CAP: u64 = 1000;

/// Closed-form optimal multiplicity for spheres of mass m0.
pub fn optimal_sphere(params: &HelfrichParams) -> Result<SphereAnalytics> {
    optimal_sphere_upto(params, None)
}

/// As [`optimal_sphere`], tabulating energies for `k = 1..=k_max`
/// (default: a few past the minimizer).
pub fn optimal_sphere_upto(params: &HelfrichParams, k_max: Option<u64>) -> Result<SphereAnalytics> {
    params.validate()?;
    let p = params;
    let c = p.reduced_rigidity();
    let k_star = p.m0 * p.h0 * p.h0 / (16.0 * PI) / (c * c);
    let mut warnings = Vec::new();
    let hyp_gamma = -2.0 * p.beta < p.gamma && p.gamma <= 0.0;
    let hyp_h0 = 0.0 <= -p.h0 && -p.h0 <= (16.0 * PI / p.m0).sqrt();

    let (argmin, rule, y_star) = if hyp_gamma && hyp_h0 {
        closed_form(p, k_star)
    } else {
        if !hyp_gamma {
            warnings.push(format!("gamma = {} outside (-2 beta, 0]; using direct search", p.gamma));
        }
        if !hyp_h0 {
            warnings.push(format!("H0 = {} outside [-sqrt(16 pi / m0), 0]; using direct search", p.h0));
        }
        let cap = brute_force_range(p, &mut warnings);
        (brute_force_argmin(p, cap), SelectionRule::BruteForce, None)
    };

    let hi = k_max.unwrap_or_else(|| match argmin {
        SphereArgmin::Unique(k) | SphereArgmin::Tie(_, k) => (k + 2).max(3),
    });
    let mut radii = BTreeMap::new();
    let mut energies = BTreeMap::new();
    for k in 1..=hi {
        radii.insert(k, p.radius_k(k));
        energies.insert(k, sphere_energy_unchecked(k as f64, p));
    }
    Ok(SphereAnalytics { k_star, y_star, argmin, rule, radii, energies, warnings })
}

fn closed_form(p: &HelfrichParams, k_star: f64) -> (SphereArgmin, SelectionRule, Option<f64>) {
    let nearest = k_star.round();
    if nearest >= 1.0 && (k_star - nearest).abs() <= 1e-12 * k_star.max(1.0) {
        return (SphereArgmin::Unique(nearest as u64), SelectionRule::Integer, None);
    }
    if k_star <= 1.0 {
        return (SphereArgmin::Unique(1), SelectionRule::AtMostOne, None);
    }
    let lo = k_star.floor();
    let hi = k_star.ceil();
    let t1 = (lo.sqrt() - hi.sqrt()) * p.h0;
    let t2 = (4.0 * PI / p.m0).sqrt() * p.reduced_rigidity();
    let y = t1 - t2;
    let (lo, hi) = (lo as u64, hi as u64);
    if y.abs() < 1e-12 * (t1.abs() + t2.abs()) {
        (SphereArgmin::Tie(lo, hi), SelectionRule::Tie, Some(y))
    } else if y < 0.0 {
        (SphereArgmin::Unique(lo), SelectionRule::Neighbour, Some(y))
    } else {
        (SphereArgmin::Unique(hi), SelectionRule::Neighbour, Some(y))
    }
}

fn brute_force_range(p: &HelfrichParams, warnings: &mut Vec<String>) -> u64 {
    if p.gamma < 0.0 && -2.0 * p.beta < p.gamma {
        let f1 = sphere_energy_unchecked(1.0, p);
        if let Ok(k) = multiplicity_bound(f1, p, Some(0)) {
            return k.clamp(1, BRUTE_FORCE_CAP);
        }
    }
    if p.reduced_rigidity() <= 0.0 {
        warnings.push("energy is not bounded below in k; search truncated".into());
    }
    BRUTE_FORCE_CAP
}

fn brute_force_argmin(p: &HelfrichParams, cap: u64) -> SphereArgmin {
    let mut best = 1;
    let mut best_e = sphere_energy_unchecked(1.0, p);
    for k in 2..=cap {
        let e = sphere_energy_unchecked(k as f64, p);
        if e < best_e {
            best = k;
            best_e = e;
        }
    }
    SphereArgmin::Unique(best)
}

/// Upper bound on the multiplicity of any varifold with energy `f`.
///
/// Without a genus the maximum of the three genus branches is returned.
pub fn multiplicity_bound(f: f64, params: &HelfrichParams, genus: Option<u32>) -> Result<u64> {
    let (b, g, h0, m0) = (params.beta, params.gamma, params.h0, params.m0);
    if !(b > 0.0) {
        return domain("multiplicity bound requires beta > 0");
    }
    if !(g < 0.0) {
        return domain("multiplicity bound requires gamma < 0");
    }
    if !f.is_finite() {
        return domain(format!("energy {f} is not finite"));
    }
    let k0 = || (2.0 * f / (2.0 * b + g) + b * (2.0 * b - g) * h0 * h0 * m0 / ((2.0 * b + g) * (2.0 * b + g))) / (4.0 * PI);
    let k1 = || (f / b + 0.5 * h0 * h0 * m0) / (4.0 * PI);
    let k2 = || -f / (4.0 * PI * g);
    let kbar = match genus {
        Some(genus) => {
            let rhs = g * (1.0 - genus as f64);
            if !(-2.0 * b < rhs) {
                return domain(format!("multiplicity bound requires -2 beta < gamma (1 - g), got {} >= {rhs}", -2.0 * b));
            }
            match genus {
                0 => k0(),
                1 => k1(),
                _ => k2(),
            }
        }
        None => {
            if !(-2.0 * b < g) {
                return domain(format!("multiplicity bound requires -2 beta < gamma, got gamma = {g}"));
            }
            k0().max(k1()).max(k2())
        }
    };
    Ok(kbar.ceil().max(1.0) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(beta: f64, gamma: f64, h0: f64, m0: f64) -> HelfrichParams {
        HelfrichParams::new(beta, gamma, h0, m0).unwrap()
    }

    #[test]
    fn sphere_energy_closed_forms() {
        assert_relative_eq!(sphere_energy(1, &params(1.0, 0.0, 0.0, 4.0 * PI)).unwrap(), 8.0 * PI, max_relative = 1e-14);
        for k in 1..6 {
            assert_relative_eq!(sphere_energy(k, &params(0.5, 0.0, 0.0, 3.7)).unwrap(), 4.0 * PI * k as f64, max_relative = 1e-14);
        }
        let p = params(1.3, -2.6, -0.4, 2.0);
        for k in 1..5u64 {
            let kf = k as f64;
            let expect = 2.0 * p.beta * p.m0 * (p.h0 * kf.sqrt() / p.r1() + 0.25 * p.h0 * p.h0);
            assert_relative_eq!(sphere_energy(k, &p).unwrap(), expect, max_relative = 1e-12);
        }
        assert!(sphere_energy(0, &p).is_err());
    }

    #[test]
    fn optimal_sphere_examples() {
        let a = optimal_sphere(&params(1.0, 0.0, -1.0, 16.0 * PI)).unwrap();
        assert_relative_eq!(a.k_star, 1.0, max_relative = 1e-14);
        assert_eq!(a.argmin, SphereArgmin::Unique(1));
        let b = optimal_sphere(&params(1.0, 0.0, -1.0, 64.0 * PI)).unwrap();
        assert_relative_eq!(b.k_star, 4.0, max_relative = 1e-14);
        assert_eq!(b.argmin, SphereArgmin::Unique(4));
        // |H0| exceeds sqrt(16 pi / m0) here, so the direct search decides
        assert_eq!(b.rule, SelectionRule::BruteForce);
        let c = optimal_sphere(&params(1.0, -1.5, -2.0, 4.0 * PI)).unwrap();
        assert_relative_eq!(c.k_star, 16.0, max_relative = 1e-12);
        assert_eq!(c.rule, SelectionRule::Integer);
        assert_eq!(c.argmin, SphereArgmin::Unique(16));
        let d = optimal_sphere(&params(2.0, -1.0, 0.0, 5.0)).unwrap();
        assert_eq!(d.k_star, 0.0);
        assert_eq!(d.argmin, SphereArgmin::Unique(1));
        assert_eq!(d.rule, SelectionRule::AtMostOne);
    }

    #[test]
    fn outside_hypotheses_warns() {
        let a = optimal_sphere(&params(1.0, 0.0, 1.0, 4.0 * PI)).unwrap();
        assert_eq!(a.rule, SelectionRule::BruteForce);
        assert!(!a.warnings.is_empty());
        assert_eq!(a.argmin, SphereArgmin::Unique(1));
    }

    #[test]
    fn multiplicity_bound_example() {
        let p = params(1.0, -0.5, 0.0, 4.0 * PI);
        assert_eq!(multiplicity_bound(8.0 * PI, &p, Some(0)).unwrap(), 3);
    }

    #[test]
    fn multiplicity_bound_hypotheses() {
        assert!(multiplicity_bound(1.0, &params(1.0, 0.0, 0.0, 1.0), None).is_err());
        assert!(multiplicity_bound(1.0, &params(1.0, -2.5, 0.0, 1.0), None).is_err());
        // g = 3: gamma (1 - g) = 1 > -2 beta holds; g = 0 with gamma = -2.5 fails
        assert!(multiplicity_bound(1.0, &params(1.0, -2.5, 0.0, 1.0), Some(3)).is_ok());
        let err = multiplicity_bound(1.0, &params(1.0, -2.5, 0.0, 1.0), Some(0)).unwrap_err();
        assert!(err.to_string().contains("-2 beta < gamma (1 - g)"));
    }
}
