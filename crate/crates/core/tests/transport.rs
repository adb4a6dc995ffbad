use approx::assert_relative_eq;
use helfrich_core::transport::{dual_certificate_w1, ground_cost, solve_dense, wasserstein, wasserstein_spatial};
use helfrich_core::{Atom, Isometry, ParticleVarifold, TransportConfig, Vec3};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn atom(x: [f64; 3], nu: [f64; 3], w: f64) -> Atom {
    Atom { x: Vec3::from(x), nu: Vec3::from(nu).normalize(), w }
}

fn random_atoms(rng: &mut ChaCha8Rng, n: usize, total: f64) -> ParticleVarifold {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let atoms = raw
        .iter()
        .map(|w| {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let nu = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            atom(x, nu, w / s * total)
        })
        .collect();
    ParticleVarifold::new(atoms).unwrap()
}

/// Minimum cost over basic feasible solutions, each found by solving the
/// marginal equations restricted to a subset of n1 + n2 - 1 cells.
fn vertex_oracle(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let (n1, n2) = (a.len(), b.len());
    let cells: Vec<usize> = (0..n1 * n2).collect();
    let k = n1 + n2 - 1;
    let mut rhs = a.to_vec();
    rhs.extend_from_slice(&b[..n2 - 1]);
    let rhs = DVector::from_vec(rhs);
    let mut best = f64::INFINITY;
    let mut subset = Vec::new();
    fn rec(cells: &[usize], k: usize, start: usize, subset: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if subset.len() == k {
            f(subset);
            return;
        }
        for c in start..cells.len() {
            subset.push(cells[c]);
            rec(cells, k, c + 1, subset, f);
            subset.pop();
        }
    }
    rec(&cells, k, 0, &mut subset, &mut |s: &[usize]| {
        let mut m = DMatrix::<f64>::zeros(k, k);
        for (col, &cell) in s.iter().enumerate() {
            let (i, j) = (cell / n2, cell % n2);
            m[(i, col)] = 1.0;
            if j < n2 - 1 {
                m[(n1 + j, col)] = 1.0;
            }
        }
        if m.determinant().abs() < 0.5 {
            return;
        }
        let x = m.lu().solve(&rhs).unwrap();
        if x.iter().all(|&v| v >= -1e-13) {
            best = best.min(s.iter().zip(x.iter()).map(|(&c, v)| v * cost[c]).sum());
        }
    });
    best
}

fn weights(v: &ParticleVarifold) -> Vec<f64> {
    v.atoms().iter().map(|a| a.w).collect()
}

fn costs(v: &ParticleVarifold, w: &ParticleVarifold, p: f64) -> Vec<f64> {
    v.atoms().iter().flat_map(|a| w.atoms().iter().map(move |b| ground_cost(a, b, p))).collect()
}

#[test]
fn ground_cost_examples() {
    let a = atom([0.0; 3], [0.0, 0.0, 1.0], 1.0);
    assert_eq!(ground_cost(&a, &a, 2.0), 0.0);
    let b = atom([0.0; 3], [0.0, 0.0, -1.0], 1.0);
    assert_eq!(ground_cost(&a, &b, 1.0), 2.0);
    let c = atom([3.0, 4.0, 0.0], [0.0, 0.0, 1.0], 1.0);
    assert_relative_eq!(ground_cost(&a, &c, 2.0), 25.0, max_relative = 1e-15);
}

#[test]
fn identical_varifolds_have_zero_distance_and_diagonal_plan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = random_atoms(&mut rng, 7, 2.0);
    let (d, plan) = wasserstein(&v, &v, &TransportConfig::exact(2.0)).unwrap();
    assert!(d.abs() < 1e-12);
    for &(i, j, m) in &plan.entries {
        assert!(i == j || m.abs() < 1e-14);
    }
}

#[test]
fn single_atoms_use_the_unique_coupling() {
    let (x, y) = (atom([0.0, 1.0, 0.0], [1.0, 0.0, 0.0], 2.5), atom([1.0, -1.0, 3.0], [0.0, 1.0, 1.0], 2.5));
    let (v, w) = (ParticleVarifold::new(vec![x]).unwrap(), ParticleVarifold::new(vec![y]).unwrap());
    for p in [1.0, 2.0, 3.0] {
        let expected = 2.5f64.powf(1.0 / p) * ((x.x - y.x).norm() + (x.nu - y.nu).norm());
        assert_relative_eq!(wasserstein(&v, &w, &TransportConfig::exact(p)).unwrap().0, expected, max_relative = 1e-12);
    }
}

#[test]
fn exact_solver_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..40 {
        let (n1, n2) = if trial < 10 { (3, 3) } else { (rng.gen_range(1..=4), rng.gen_range(1..=4)) };
        let v = random_atoms(&mut rng, n1, 1.7);
        let w = random_atoms(&mut rng, n2, 1.7);
        let cost = costs(&v, &w, 2.0);
        let plan = solve_dense(&weights(&v), &weights(&w), &cost, &TransportConfig::exact(2.0)).unwrap();
        let oracle = vertex_oracle(&weights(&v), &weights(&w), &cost);
        assert!((plan.cost - oracle).abs() < 1e-12, "trial {trial}: {} vs {oracle}", plan.cost);
    }
}

#[test]
fn plans_satisfy_the_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = random_atoms(&mut rng, 12, 3.0);
    let w = random_atoms(&mut rng, 9, 3.0);
    for cfg in [TransportConfig::exact(2.0), TransportConfig::entropic(2.0, 1e-2)] {
        let (_, plan) = wasserstein(&v, &w, &cfg).unwrap();
        for (s, a) in plan.row_sums().iter().zip(v.atoms()) {
            assert!((s - a.w).abs() <= 1e-9 * a.w);
        }
        for (s, b) in plan.col_sums().iter().zip(w.atoms()) {
            assert!((s - b.w).abs() <= 1e-9 * b.w);
        }
        assert!(plan.entries.iter().all(|e| e.2 >= 0.0));
    }
}

#[test]
fn spatial_distance_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let v = random_atoms(&mut rng, 6, 1.0);
        let w = random_atoms(&mut rng, 5, 1.0);
        let cfg = TransportConfig::exact(2.0);
        assert!(wasserstein_spatial(&v, &w, &cfg).unwrap() <= wasserstein(&v, &w, &cfg).unwrap().0 + 1e-12);
    }
    let v = ParticleVarifold::new(vec![atom([0.0; 3], [0.0, 0.0, 1.0], 1.0), atom([1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 1.0)]).unwrap();
    let w = ParticleVarifold::new(vec![atom([0.0; 3], [0.0, 1.0, 0.0], 1.0), atom([1.0, 0.0, 0.0], [0.0, 0.0, -1.0], 1.0)]).unwrap();
    let cfg = TransportConfig::exact(2.0);
    assert!(wasserstein_spatial(&v, &w, &cfg).unwrap() < 1e-12);
    assert!(wasserstein(&v, &w, &cfg).unwrap().0 > 0.1);

    let a = ParticleVarifold::new(vec![atom([0.0; 3], [0.0, 0.0, 1.0], 1.0)]).unwrap();
    let b = ParticleVarifold::new(vec![atom([3.0, 4.0, 0.0], [0.0, 0.0, 1.0], 1.0)]).unwrap();
    let cfg = TransportConfig::exact(1.0);
    assert_relative_eq!(wasserstein(&a, &b, &cfg).unwrap().0, 5.0, max_relative = 1e-14);
    assert_relative_eq!(wasserstein_spatial(&a, &b, &cfg).unwrap(), 5.0, max_relative = 1e-14);
}

#[test]
fn dual_certificates() {
    let t = 2.5;
    let v = ParticleVarifold::new(vec![atom([t, 0.0, 0.0], [0.0, 0.0, 1.0], 1.0)]).unwrap();
    let w = ParticleVarifold::new(vec![atom([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], 1.0)]).unwrap();
    assert_eq!(dual_certificate_w1(&v, &w, |_, _| 3.0).unwrap(), 0.0);
    let d = dual_certificate_w1(&v, &w, |x, _| x[0]).unwrap();
    assert_relative_eq!(d, t, max_relative = 1e-15);
    assert_relative_eq!(d, wasserstein(&v, &w, &TransportConfig::exact(1.0)).unwrap().0, max_relative = 1e-14);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v = random_atoms(&mut rng, 6, 1.0);
    let w = random_atoms(&mut rng, 6, 1.0);
    let w1 = wasserstein(&v, &w, &TransportConfig::exact(1.0)).unwrap().0;
    for f in [
        Box::new(|x: &Vec3, _: &Vec3| x[1]) as Box<dyn Fn(&Vec3, &Vec3) -> f64>,
        Box::new(|_: &Vec3, n: &Vec3| n[2]),
        Box::new(|x: &Vec3, n: &Vec3| 0.5 * (x.norm() + n[0])),
    ] {
        assert!(dual_certificate_w1(&v, &w, f).unwrap() <= w1 + 1e-9);
    }
    assert!(dual_certificate_w1(&v, &w, |x, _| 2.0 * x[0]).is_err());
}

#[test]
fn entropic_converges_to_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let v = random_atoms(&mut rng, 10, 1.0);
    let w = random_atoms(&mut rng, 10, 1.0);
    let exact = wasserstein(&v, &w, &TransportConfig::exact(2.0)).unwrap().0;
    let mut prev = f64::INFINITY;
    for eps in [1.0, 0.1, 0.01, 0.001] {
        let cfg = TransportConfig { max_iter: 100_000, tol: 1e-12, ..TransportConfig::entropic(2.0, eps) };
        let d = wasserstein(&v, &w, &cfg).unwrap().0;
        let err = (d - exact).abs();
        assert!(err <= prev + 1e-12, "eps {eps}: {err} > {prev}");
        prev = err;
    }
    assert!(prev < 1e-3 * exact, "{prev}");
}

#[test]
fn metric_axioms_and_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = TransportConfig::exact(2.0);
    for _ in 0..10 {
        let (u, v, w) = (random_atoms(&mut rng, 5, 2.0), random_atoms(&mut rng, 6, 2.0), random_atoms(&mut rng, 4, 2.0));
        let duv = wasserstein(&u, &v, &cfg).unwrap().0;
        let dvu = wasserstein(&v, &u, &cfg).unwrap().0;
        let dvw = wasserstein(&v, &w, &cfg).unwrap().0;
        let duw = wasserstein(&u, &w, &cfg).unwrap().0;
        assert!((duv - dvu).abs() < 1e-9);
        assert!(duw <= duv + dvw + 1e-9);
        assert!(duv > 0.0);

        let g = Isometry::rotation(Vec3::new(1.0, -2.0, 0.5), 1.3).unwrap().compose(&Isometry::reflection(Vec3::y()).unwrap());
        let moved = wasserstein(&u.pushforward(&g), &v.pushforward(&g), &cfg).unwrap().0;
        assert!((moved - duv).abs() < 1e-9);

        for c in [0.25, 3.0] {
            let scaled = wasserstein(&u.scaled_weights(c), &v.scaled_weights(c), &cfg).unwrap().0;
            assert_relative_eq!(scaled, c.sqrt() * duv, max_relative = 1e-12);
        }
    }
}

#[test]
fn unequal_masses_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let v = random_atoms(&mut rng, 3, 1.0);
    let w = random_atoms(&mut rng, 3, 1.5);
    assert!(wasserstein(&v, &w, &TransportConfig::exact(2.0)).is_err());
}
