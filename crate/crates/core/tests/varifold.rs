use std::f64::consts::PI;

use approx::assert_relative_eq;
use helfrich_core::mesh::generate;
use helfrich_core::transport::wasserstein;
use helfrich_core::varifold::{mass, pushforward, sample_particles, symmetry_defect};
use helfrich_core::{Atom, Isometry, Measure, ParticleVarifold, QuadratureRule, TransportConfig, Vec3};

fn atom(x: [f64; 3], nu: [f64; 3], w: f64) -> Atom {
    Atom { x: Vec3::from(x), nu: Vec3::from(nu).normalize(), w }
}

#[test]
fn icosphere_mass_is_close_to_sphere_area() {
    let m = generate::icosphere(4, 1.0, 1).unwrap();
    assert_relative_eq!(mass(&m), 4.0 * PI, max_relative = 5e-3);
    let m3 = m.with_multiplicity(3, 0).unwrap();
    assert_relative_eq!(mass(&m3), 3.0 * mass(&m), max_relative = 1e-14);
}

#[test]
fn particle_mass_sums_weights() {
    let v = ParticleVarifold::new(vec![atom([0.0; 3], [0.0, 0.0, 1.0], 1.5), atom([1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 2.5)]).unwrap();
    assert_eq!(v.mass(), 4.0);
}

#[test]
fn enclosed_volume_of_unit_sphere() {
    let m = generate::icosphere(4, 1.0, 1).unwrap();
    let v = m.enclosed_volume();
    assert_relative_eq!(v, 4.0 * PI / 3.0, max_relative = 1e-2);
    let flipped = m.with_multiplicity(0, 1).unwrap();
    assert_relative_eq!(flipped.enclosed_volume(), -v, max_relative = 1e-14);
    let moved = m.transformed(&Isometry::translation(Vec3::new(10.0, 0.0, 0.0)).unwrap());
    assert_relative_eq!(moved.enclosed_volume(), v, max_relative = 1e-9);
}

#[test]
fn identity_pushforward_is_identity() {
    let v = ParticleVarifold::new(vec![atom([0.3, -1.0, 2.0], [1.0, 2.0, 3.0], 0.7), atom([1.0, 1.0, 0.0], [0.0, 1.0, 0.0], 1.1)]).unwrap();
    assert_eq!(pushforward(&v, &Isometry::identity()), v);
}

#[test]
fn mirror_pair_is_reflection_invariant() {
    let v = ParticleVarifold::new(vec![atom([1.0, 0.5, 0.0], [1.0, 0.0, 0.0], 1.0), atom([-1.0, 0.5, 0.0], [-1.0, 0.0, 0.0], 1.0)]).unwrap();
    let g = Isometry::reflection(Vec3::x()).unwrap();
    let (d, _) = wasserstein(&pushforward(&v, &g), &v, &TransportConfig::exact(2.0)).unwrap();
    assert!(d.abs() < 1e-12, "{d}");
    assert_eq!(pushforward(&v, &g).mass(), v.mass());
}

#[test]
fn single_atom_symmetry_defect() {
    let (delta, m) = (0.3, 2.0);
    let nu = Vec3::new(1.0, 1.0, 0.0).normalize();
    let v = ParticleVarifold::new(vec![Atom { x: Vec3::new(delta, 0.0, 0.0), nu, w: m }]).unwrap();
    let g = Isometry::reflection(Vec3::x()).unwrap();
    let snu = g.apply_normal(&nu);
    for p in [1.0, 2.0] {
        let expected = m.powf(1.0 / p) * (2.0 * delta + (nu - snu).norm());
        assert_relative_eq!(symmetry_defect(&v, &g, p).unwrap(), expected, max_relative = 1e-12);
    }
}

#[test]
fn threefold_configuration_is_rotation_invariant() {
    let atoms = (0..3)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / 3.0;
            atom([t.cos(), t.sin(), 0.2], [t.cos(), t.sin(), 0.5], 0.8)
        })
        .collect();
    let v = ParticleVarifold::new(atoms).unwrap();
    let g = Isometry::rotation(Vec3::z(), 2.0 * PI / 3.0).unwrap();
    assert!(symmetry_defect(&v, &g, 2.0).unwrap() < 1e-7);
}

#[test]
fn icosahedron_sampling_counts_and_mass() {
    let (v, f) = generate::icosahedron_raw();
    let m = helfrich_core::MeshVarifold::new(v, f, 1, 0, 0).unwrap();
    let p = sample_particles(&m, QuadratureRule::Centroid).unwrap();
    assert_eq!(p.len(), 20);
    assert_relative_eq!(p.mass(), m.area(), max_relative = 1e-12);

    let two = m.with_multiplicity(1, 1).unwrap();
    let p = sample_particles(&two, QuadratureRule::Centroid).unwrap();
    assert_eq!(p.len(), 40);
    for a in p.atoms() {
        assert!(p.atoms().iter().any(|b| (b.x - a.x).norm() < 1e-14 && (b.nu + a.nu).norm() < 1e-14));
    }
}

#[test]
fn sampling_is_mass_exact_on_every_corpus_mesh() {
    for (name, m) in helfrich_core::validation::corpus().unwrap() {
        for rule in [QuadratureRule::Centroid, QuadratureRule::ThreePoint] {
            let p = sample_particles(&m, rule).unwrap();
            assert!((p.mass() - m.mass()).abs() <= 1e-12 * m.mass(), "{name}");
        }
        let chi = m.topology().euler_characteristic();
        assert_eq!(chi, 2 - 2 * m.genus() as i64, "{name}");
    }
}
