use std::f64::consts::PI;

use approx::assert_relative_eq;
use helfrich_core::energy::helfrich_energy;
use helfrich_core::flow::{
    diameter, diameter_bounds, estimate_metric_derivative, incremental_step, prepare_initial, run_flow, FlowConfig, FlowTrace,
    MultiplicitySearch, StepRecord,
};
use helfrich_core::mesh::generate::{self, RadialPerturbation};
use helfrich_core::{Atom, CurvatureField, HelfrichParams, Isometry, Measure, MeshVarifold, ParticleVarifold, Vec3};

fn perturbed(seed: u64) -> (MeshVarifold, FlowConfig, HelfrichParams) {
    let m = generate::perturbed_sphere(2, RadialPerturbation::new(0.15, seed), 1).unwrap();
    let params = HelfrichParams::new(1.0, 0.0, 0.0, m.mass()).unwrap();
    let cfg = FlowConfig { tau: 1e-3, steps: 3, ..FlowConfig::default() };
    let m = prepare_initial(&m, &cfg, &params).unwrap();
    (m, cfg, params)
}

fn energy(m: &MeshVarifold, p: &HelfrichParams) -> f64 {
    helfrich_energy(m, &CurvatureField::compute(m).unwrap(), p).unwrap().total
}

#[test]
fn zero_steps_give_only_the_initial_record() {
    let (m, cfg, params) = perturbed(1);
    let run = run_flow(&m, &FlowConfig { steps: 0, ..cfg }, &params).unwrap();
    assert_eq!(run.trace.records.len(), 1);
    assert_eq!(run.trace.records[0].step, 0);
    assert_eq!(run.final_mesh.positions(), m.positions());
}

#[test]
fn first_step_strictly_decreases_the_energy() {
    let (m, cfg, params) = perturbed(2);
    let g0 = energy(&m, &params);
    let (next, rec) = incremental_step(&m, &cfg, &params).unwrap();
    assert!(rec.energy < g0, "{} >= {g0}", rec.energy);
    assert_relative_eq!(energy(&next, &params), rec.energy, max_relative = 1e-9);
    assert!(rec.increment > 0.0);
}

#[test]
fn tiny_time_step_bounds_the_increment() {
    let (m, cfg, params) = perturbed(3);
    let tau = 1e-8;
    let g0 = energy(&m, &params);
    let (_, rec) = incremental_step(&m, &FlowConfig { tau, ..cfg }, &params).unwrap();
    assert!(rec.increment <= (2.0 * tau * g0).sqrt() * (1.0 + 1e-9), "{} > {}", rec.increment, (2.0 * tau * g0).sqrt());
}

#[test]
fn trajectory_dissipates_energy() {
    let (m, cfg, params) = perturbed(4);
    let run = run_flow(&m, &FlowConfig { steps: 4, ..cfg }, &params).unwrap();
    let e = run.trace.energies();
    let tol = run.trace.tol_accept;
    for w in e.windows(2) {
        assert!(w[1] <= w[0] + tol);
    }
    let (_, cumulative) = estimate_metric_derivative(&run.trace);
    for (n, c) in cumulative.iter().enumerate() {
        assert!(e[n + 1] + c <= e[0] + (n + 1) as f64 * tol);
    }
    for r in &run.trace.records {
        assert!(r.mass_residual <= 1e-6 * params.m0);
        assert!(r.diameter_lower <= r.diameter * 1.03 && r.diameter <= r.diameter_upper * 1.03);
    }
    assert_eq!(run.snapshots.last().unwrap().0, 4);
}

#[test]
fn singleton_candidate_set_matches_the_plain_step() {
    let (m, cfg, params) = perturbed(5);
    let (a, ra) = incremental_step(&m, &cfg, &params).unwrap();
    let single = FlowConfig { multiplicity_search: MultiplicitySearch::Candidates(vec![1]), ..cfg };
    let (b, rb) = incremental_step(&m, &single, &params).unwrap();
    assert_eq!(a.multiplicity(), b.multiplicity());
    assert_relative_eq!(ra.energy, rb.energy, max_relative = 1e-12);
    for (p, q) in a.positions().iter().zip(b.positions()) {
        assert!((p - q).norm() < 1e-12);
    }
}

#[test]
fn discrete_minimizer_is_stationary() {
    let (m, cfg, params) = helfrich_core::validation::discrete_optimal_sphere().unwrap();
    let run = run_flow(&m, &FlowConfig { steps: 2, ..cfg }, &params).unwrap();
    let e = run.trace.energies();
    let bound = 1e-6 * params.m0.sqrt() * m.diameter();
    for r in &run.trace.records[1..] {
        assert!(r.increment < bound, "{} >= {bound}", r.increment);
        assert!((r.energy - e[0]).abs() <= 1e-6 * e[0].abs());
    }
}

#[test]
fn volume_and_symmetry_constraints_hold() {
    let m = generate::perturbed_sphere(2, RadialPerturbation::new(0.15, 6).mirrored(), 1).unwrap();
    let v0 = 0.95 * m.enclosed_volume();
    let params = HelfrichParams::new(1.0, 0.0, 0.0, m.mass()).unwrap().with_volume(v0).unwrap();
    let cfg = FlowConfig {
        tau: 1e-3,
        steps: 2,
        volume: true,
        symmetry: vec![Isometry::reflection(Vec3::x()).unwrap()],
        ..FlowConfig::default()
    };
    let m = prepare_initial(&m, &cfg, &params).unwrap();
    let run = run_flow(&m, &cfg, &params).unwrap();
    for r in &run.trace.records {
        assert!(r.volume_residual.unwrap() <= 1e-4 * v0);
        assert!(r.symmetry_defect.unwrap() <= 1e-6 * params.m0.sqrt() * r.diameter);
    }
}

#[test]
fn invalid_time_step_is_rejected() {
    let (m, cfg, params) = perturbed(7);
    for tau in [0.0, -1.0, f64::NAN] {
        assert!(run_flow(&m, &FlowConfig { tau, ..cfg.clone() }, &params).is_err());
    }
}

#[test]
fn diameters() {
    let a = |x: [f64; 3]| Atom { x: Vec3::from(x), nu: Vec3::z(), w: 1.0 };
    assert_eq!(diameter(&ParticleVarifold::new(vec![a([1.0, 2.0, 3.0])]).unwrap()), 0.0);
    assert_relative_eq!(diameter(&ParticleVarifold::new(vec![a([0.0; 3]), a([7.0, 0.0, 0.0])]).unwrap()), 7.0);
    let s = generate::icosphere(3, 1.0, 1).unwrap();
    assert_relative_eq!(diameter(&s), 2.0, max_relative = 1e-12);
}

#[test]
fn diameter_bounds_contain_the_sphere_diameter() {
    let s = generate::icosphere(4, 1.0, 1).unwrap();
    let (lo, hi) = diameter_bounds(&s, &CurvatureField::compute(&s).unwrap()).unwrap();
    assert_relative_eq!(lo, 1.0, max_relative = 0.02);
    assert_relative_eq!(hi, 8.0, max_relative = 0.02);
    for k in 2..=3u32 {
        let r = 1.0 / (k as f64).sqrt();
        let m = generate::icosphere(4, r, k).unwrap();
        let (lo, hi) = diameter_bounds(&m, &CurvatureField::compute(&m).unwrap()).unwrap();
        assert_relative_eq!(lo, r, max_relative = 0.02);
        assert_relative_eq!(hi, 8.0 * k as f64 * r, max_relative = 0.02);
        assert!(lo <= 2.0 * r && 2.0 * r <= hi);
    }
}

fn record(step: usize, energy: f64, increment: f64) -> StepRecord {
    StepRecord {
        step,
        energy,
        willmore: 4.0 * PI,
        lower_bound: 0.0,
        increment,
        metric_derivative: 0.0,
        diameter: 2.0,
        diameter_lower: 1.0,
        diameter_upper: 8.0,
        multiplicity: 1,
        mass_residual: 0.0,
        volume_residual: None,
        symmetry_defect: None,
        inner_iterations: 0,
        objective_gap: None,
        tau_threshold: None,
        stalled: false,
    }
}

#[test]
fn metric_derivative_estimates() {
    let records = vec![record(0, 10.0, 0.0), record(1, 9.0, 0.2), record(2, 8.5, 0.1)];
    let t1 = FlowTrace { tau: 0.1, tol_accept: 0.0, records: records.clone() };
    let t2 = FlowTrace { tau: 0.2, tol_accept: 0.0, records };
    let (s1, c1) = estimate_metric_derivative(&t1);
    let (s2, _) = estimate_metric_derivative(&t2);
    for (a, b) in s1.iter().zip(&s2) {
        assert_relative_eq!(*b, a / 2.0, max_relative = 1e-15);
    }
    assert_relative_eq!(c1[1], 0.5 * 0.1 * (4.0 + 1.0), max_relative = 1e-14);

    let still = FlowTrace { tau: 0.1, tol_accept: 0.0, records: vec![record(0, 1.0, 0.0), record(1, 1.0, 0.0)] };
    assert!(estimate_metric_derivative(&still).0.iter().all(|s| *s == 0.0));
}
