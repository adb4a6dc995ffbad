use std::f64::consts::PI;

use helfrich_core::curvature::{gauss_curvature, mean_curvature, second_form_quantities};
use helfrich_core::mesh::generate::{self, RadialPerturbation};
use helfrich_core::{CurvatureField, Isometry, Vec3};

fn max_rel_dev(values: &[f64], target: f64) -> f64 {
    values.iter().map(|v| ((v - target) / target).abs()).fold(0.0, f64::max)
}

#[test]
fn unit_sphere_mean_and_gauss() {
    let m = generate::icosphere(4, 1.0, 1).unwrap();
    let (_, h) = mean_curvature(&m).unwrap();
    assert!(max_rel_dev(&h, -2.0) < 0.02);
    let k = gauss_curvature(&m).unwrap();
    assert!(max_rel_dev(&k, 1.0) < 0.03);
}

#[test]
fn flat_faces_of_a_box_have_zero_mean_curvature() {
    let (n, half) = (8, 5.0);
    let m = generate::grid_box(n, half, 1).unwrap();
    let (_, h) = mean_curvature(&m).unwrap();
    let interior: Vec<f64> = m
        .positions()
        .iter()
        .zip(&h)
        .filter(|(p, _)| p.iter().filter(|c| (c.abs() - half).abs() < 1e-12).count() == 1)
        .filter(|(p, _)| p.iter().all(|c| c.abs() < half - 1e-9 || (c.abs() - half).abs() < 1e-12))
        .filter(|(p, _)| p.iter().filter(|c| c.abs() > half - 2.0 * half / n as f64 + 1e-9).count() == 1)
        .map(|(_, h)| *h)
        .collect();
    assert!(!interior.is_empty());
    assert!(interior.iter().all(|h| h.abs() < 1e-6), "{interior:?}");
}

#[test]
fn scaling_law() {
    let m = generate::perturbed_sphere(3, RadialPerturbation::new(0.1, 3), 1).unwrap();
    let s = m.scaled_about(2.0, Vec3::zeros());
    let (a, b) = (CurvatureField::compute(&m).unwrap(), CurvatureField::compute(&s).unwrap());
    for v in 0..a.len() {
        assert!((b.mean[v] - a.mean[v] / 2.0).abs() <= 1e-12 * a.mean[v].abs().max(1.0));
        assert!((b.gauss[v] - a.gauss[v] / 4.0).abs() <= 1e-12 * a.gauss[v].abs().max(1.0));
    }
}

#[test]
fn gauss_bonnet_on_torus_and_spheres() {
    let t = generate::torus(2.0, 0.7, 40, 20, 1).unwrap();
    assert!(CurvatureField::compute(&t).unwrap().total_gauss().abs() / (4.0 * PI) < 1e-9);
    for m in [
        generate::icosphere(3, 1.0, 1).unwrap(),
        generate::ellipsoid(3, [1.0, 1.0, 2.0], 1).unwrap(),
        generate::perturbed_sphere(3, RadialPerturbation::new(0.2, 5), 1).unwrap(),
    ] {
        let total = CurvatureField::compute(&m).unwrap().total_gauss();
        assert!((total - 4.0 * PI).abs() <= 1e-9 * 4.0 * PI);
    }
}

#[test]
fn second_form_on_the_sphere() {
    let m = generate::icosphere(4, 1.0, 1).unwrap();
    let f = CurvatureField::compute(&m).unwrap();
    let s = second_form_quantities(&f).unwrap();
    for v in 0..f.len() {
        assert!((s.ii_sq[v] - 2.0).abs() < 0.1);
        assert!((s.a_sq[v] - 4.0).abs() < 0.2);
        let h2 = f.mean_vector_sq(v);
        assert!(s.ii_sq[v] >= h2 / 2.0 * (1.0 - 0.05));
    }
}

#[test]
fn second_form_of_a_cylinder_point() {
    let f = CurvatureField {
        mean_vector: vec![[0.0, 1.0, 0.0]],
        mean: vec![-1.0],
        gauss: vec![0.0],
        area: vec![1.0],
        angle_defect: vec![0.0],
    };
    let s = second_form_quantities(&f).unwrap();
    assert_eq!(s.ii_sq, vec![1.0]);
    assert!(s.ii_sq[0] >= 1.0 / 2.0);
}

#[test]
fn rigid_motion_invariance() {
    let m = generate::ellipsoid(3, [1.0, 1.5, 0.7], 1).unwrap();
    let g = Isometry::rotation(Vec3::new(1.0, 2.0, -0.5), 0.9).unwrap().compose(&Isometry::translation(Vec3::new(3.0, -1.0, 2.0)).unwrap());
    let (a, b) = (CurvatureField::compute(&m).unwrap(), CurvatureField::compute(&m.transformed(&g)).unwrap());
    for v in 0..a.len() {
        assert!((a.mean[v] - b.mean[v]).abs() < 1e-10 * a.mean[v].abs().max(1.0));
        assert!((a.gauss[v] - b.gauss[v]).abs() < 1e-10 * a.gauss[v].abs().max(1.0));
    }
}

#[test]
fn refinement_reduces_sphere_error() {
    let mut prev = (f64::INFINITY, f64::INFINITY);
    for level in 2..=5 {
        let m = generate::icosphere(level, 1.0, 1).unwrap();
        let f = CurvatureField::compute(&m).unwrap();
        let eh = f.mean.iter().map(|h| (h + 2.0).abs()).fold(0.0, f64::max);
        let ek = f.gauss.iter().map(|k| (k - 1.0).abs()).fold(0.0, f64::max);
        assert!(eh < prev.0 && ek < prev.1, "level {level}: {eh} {ek}");
        prev = (eh, ek);
    }
}
