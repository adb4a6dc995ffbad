//! Numerical acceptance checks shared by the test suite and the CLI.
//!
//! Each criterion returns a [`CriterionOutcome`] with a one-line summary.
//! Criterion 9 is computed from the trajectory of criterion 7, so the two are
//! run together by [`Suite`].

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curvature::CurvatureField;
use crate::energy::{
    helfrich_energy, lower_bound_certificate, lower_bound_from_parts, multiplicity_bound, optimal_sphere,
    sphere_energy, willmore_energy, SphereArgmin,
};
use crate::error::Result;
use crate::flow::{self, FlowConfig, FlowRun, MultiplicitySearch};
use crate::mesh::generate::{self, RadialPerturbation};
use crate::mesh::{MeshVarifold, Vec3};
use crate::params::HelfrichParams;
use crate::transport::{solve_dense, wasserstein, wasserstein_spatial, TransportConfig};
use crate::varifold::{sample_particles, symmetry_defect, Atom, Isometry, Measure, ParticleVarifold, QuadratureRule};

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} {:>8.2}s / {:>5.0}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.budget_seconds,
            self.detail
        )
    }
}

pub const ALL: [u8; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];
/// Criteria that finish well within a minute.
pub const QUICK: [u8; 6] = [1, 2, 3, 4, 5, 6];

const NAMES: [&str; 11] = [
    "sphere energies",
    "gauss-bonnet",
    "li-yau and multiplicity",
    "lower-bound certificate",
    "optimal-sphere selector",
    "transport correctness",
    "flow dissipation",
    "stationarity",
    "diameter sandwich",
    "constraint residuals",
    "multiplicity conservation",
];

const BUDGETS: [f64; 11] = [10.0, 1.0, 30.0, 30.0, 5.0, 60.0, 600.0, 120.0, 5.0, 600.0, 600.0];

/// Runs criteria in order, keeping the trajectory needed by criterion 9.
#[derive(Default)]
pub struct Suite {
    dissipation_run: Option<FlowRun>,
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn run(&mut self, id: u8) -> CriterionOutcome {
        let start = Instant::now();
        let result = match id {
            1 => sphere_energies(),
            2 => gauss_bonnet(),
            3 => li_yau(),
            4 => lower_bound(),
            5 => sphere_selector(),
            6 => transport_checks(),
            7 => self.flow_dissipation(),
            8 => stationarity(),
            9 => self.diameter_sandwich(),
            10 => constraint_residuals(),
            11 => multiplicity_conservation(),
            _ => Err(crate::error::Error::Domain(format!("unknown criterion {id}"))),
        };
        let seconds = start.elapsed().as_secs_f64();
        let idx = (id as usize).clamp(1, 11) - 1;
        let budget = BUDGETS[idx];
        let (ok, detail) = match result {
            Ok(c) => (c.ok, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let within = seconds <= budget;
        let detail = if within { detail } else { format!("{detail}; over the runtime budget") };
        CriterionOutcome { id, name: NAMES[idx], passed: ok && within, detail, seconds, budget_seconds: budget }
    }

    fn flow_dissipation(&mut self) -> Result<Check> {
        let (check, run) = flow_dissipation()?;
        self.dissipation_run = Some(run);
        Ok(check)
    }

    fn diameter_sandwich(&mut self) -> Result<Check> {
        if self.dissipation_run.is_none() {
            let (_, run) = flow_dissipation()?;
            self.dissipation_run = Some(run);
        }
        diameter_sandwich(self.dissipation_run.as_ref().expect("trajectory present"))
    }
}

/// Runs the given criteria and returns their outcomes in order.
pub fn run_all(ids: &[u8]) -> Vec<CriterionOutcome> {
    let mut suite = Suite::new();
    ids.iter().map(|&id| suite.run(id)).collect()
}

struct Check {
    ok: bool,
    detail: String,
}

impl Check {
    fn new(ok: bool, detail: impl Into<String>) -> Self {
        Self { ok, detail: detail.into() }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Relative error against `b`, with `floor` as the reference when `b`
/// vanishes (sphere energies can be exactly zero).
fn rel_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

fn energy_and_field(mesh: &MeshVarifold, p: &HelfrichParams) -> Result<(f64, CurvatureField)> {
    let field = CurvatureField::compute(mesh)?;
    let e = helfrich_energy(mesh, &field, p)?.total;
    Ok((e, field))
}

fn sphere_energies() -> Result<Check> {
    let m0 = 4.0 * PI;
    let base = generate::icosphere(4, 1.0, 1)?;
    let mut worst = 0.0f64;
    let mut willmore_case = f64::NAN;
    for (beta, gamma, h0) in [(1.0, 0.0, 0.0), (1.0, -0.5, -1.0), (0.5, 0.0, 0.0)] {
        let p = HelfrichParams::new(beta, gamma, h0, m0)?;
        for k in 1..=3u32 {
            let mesh = base.with_multiplicity(k, 0)?.rescaled_to_mass(m0);
            let (e, _) = energy_and_field(&mesh, &p)?;
            let exact = sphere_energy(k as u64, &p)?;
            worst = worst.max(rel_floor(e, exact, 4.0 * PI * beta * k as f64));
            if beta == 0.5 && k == 1 {
                willmore_case = rel(e, 4.0 * PI);
            }
        }
    }
    Ok(Check::new(
        worst <= 0.02 && willmore_case <= 0.02,
        format!("max rel error {worst:.2e}, beta=1/2 k=1 vs 4pi {willmore_case:.2e}"),
    ))
}

fn gauss_bonnet() -> Result<Check> {
    let sphere = generate::perturbed_sphere(3, RadialPerturbation::new(0.2, 3), 1)?;
    let torus = generate::torus(2.0, 0.7, 40, 20, 1)?;
    let ks = CurvatureField::compute(&sphere)?.total_gauss();
    let kt = CurvatureField::compute(&torus)?.total_gauss();
    let es = rel(ks, 4.0 * PI);
    let et = kt.abs();
    Ok(Check::new(
        es <= 1e-9 && et <= 1e-9 * 4.0 * PI,
        format!("sphere rel {es:.1e}, torus abs {et:.1e}"),
    ))
}

/// Closed test surfaces of genus 0 and 1 with multiplicities 1 to 3.
pub fn corpus() -> Result<Vec<(&'static str, MeshVarifold)>> {
    Ok(vec![
        ("icosphere k=1", generate::icosphere(3, 1.0, 1)?),
        ("icosphere k=2", generate::icosphere(2, 1.3, 2)?),
        ("icosphere k=3", generate::icosphere(3, 0.8, 3)?),
        ("ellipsoid 1:1:2", generate::ellipsoid(3, [1.0, 1.0, 2.0], 1)?),
        ("ellipsoid 1:0.7:0.5 k=2", generate::ellipsoid(3, [1.0, 0.7, 0.5], 2)?),
        ("ellipsoid 2:1:1 k=3", generate::ellipsoid(2, [2.0, 1.0, 1.0], 3)?),
        ("torus", generate::torus(2.0, 0.7, 40, 20, 1)?),
        ("torus k=2", generate::torus(1.5, 0.5, 36, 18, 2)?),
        ("perturbed sphere", generate::perturbed_sphere(3, RadialPerturbation::new(0.2, 1), 1)?),
        ("perturbed sphere k=2", generate::perturbed_sphere(3, RadialPerturbation::new(0.15, 2), 2)?),
        ("perturbed sphere k=3", generate::perturbed_sphere(2, RadialPerturbation::new(0.1, 4), 3)?),
        ("two-sheet sphere", generate::icosphere(3, 1.0, 1)?.with_multiplicity(1, 1)?),
    ])
}

fn li_yau() -> Result<Check> {
    let mut failures = Vec::new();
    let mut worst_ratio = f64::INFINITY;
    for (name, mesh) in corpus()? {
        let field = CurvatureField::compute(&mesh)?;
        let w = willmore_energy(&mesh, &field)?;
        let k = mesh.multiplicity();
        let floor = 4.0 * PI * k as f64;
        worst_ratio = worst_ratio.min(w / floor);
        if w < floor * 0.98 {
            failures.push(format!("{name}: W = {w:.4} < 0.98 * {floor:.4}"));
        }
        for (beta, gamma, h0) in [(1.0, -0.5, 0.0), (1.0, -0.3, -0.5), (2.0, -1.0, 0.4)] {
            let p = HelfrichParams::new(beta, gamma, h0, mesh.mass())?;
            let f = helfrich_energy(&mesh, &field, &p)?.total;
            let bound = multiplicity_bound(f, &p, Some(mesh.genus()))?;
            if bound < k as u64 {
                failures.push(format!("{name}: bound {bound} < k = {k}"));
            }
        }
    }
    Ok(Check::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("min W / (4 pi k) = {worst_ratio:.4}")
        } else {
            failures.join("; ")
        },
    ))
}

/// Twenty parameter tuples (beta, gamma, H0).
pub fn parameter_grid() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    let gammas = [-0.9, -0.3, 0.0, 0.5];
    for (i, beta) in [0.5, 1.0, 2.0, 4.0].into_iter().enumerate() {
        for (j, h0) in [-2.0, -0.5, 0.0, 0.5, 2.0].into_iter().enumerate() {
            out.push((beta, gammas[(i + j) % 4] * beta, h0));
        }
    }
    out
}

fn lower_bound() -> Result<Check> {
    let mut worst = f64::INFINITY;
    for (_, mesh) in corpus()? {
        let field = CurvatureField::compute(&mesh)?;
        for (beta, gamma, h0) in parameter_grid() {
            let p = HelfrichParams::new(beta, gamma, h0, mesh.mass())?;
            let f = helfrich_energy(&mesh, &field, &p)?.total;
            let lb = lower_bound_certificate(&mesh, &field, &p)?;
            worst = worst.min((f - lb) / f.abs().max(1e-300));
        }
    }
    let holds = worst >= -1e-9;

    // equality: closed form for round spheres and vertex-transitive polyhedra
    let mut eq_err = 0.0f64;
    for k in 1..=3u64 {
        for m0 in [4.0 * PI, 10.0] {
            let rk = (m0 / (4.0 * PI * k as f64)).sqrt();
            for frac in [0.0, 0.5, 1.0] {
                let h0 = -frac * 2.0 / rk;
                for (beta, gamma) in [(1.0, 0.0), (1.0, -0.5), (0.5, -0.2)] {
                    let p = HelfrichParams::new(beta, gamma, h0, m0)?;
                    let lb = lower_bound_from_parts(4.0 * PI * k as f64, m0, 4.0 * PI * k as f64, &p);
                    eq_err = eq_err.max(rel_floor(lb, sphere_energy(k, &p)?, 4.0 * PI * beta * k as f64));
                }
            }
        }
    }
    for raw in [generate::icosahedron_raw(), generate::octahedron_raw()] {
        for k in 1..=3u32 {
            let mesh = MeshVarifold::new(raw.0.clone(), raw.1.clone(), k, 0, 0)?;
            let field = CurvatureField::compute(&mesh)?;
            let w = willmore_energy(&mesh, &field)?;
            let rk = (mesh.mass() / w).sqrt();
            for frac in [0.0, 0.5, 1.0] {
                let p = HelfrichParams::new(1.0, -0.5, -frac * 2.0 / rk, mesh.mass())?;
                let f = helfrich_energy(&mesh, &field, &p)?.total;
                let lb = lower_bound_certificate(&mesh, &field, &p)?;
                eq_err = eq_err.max(rel_floor(lb, f, w));
            }
        }
    }
    Ok(Check::new(
        holds && eq_err <= 1e-9,
        format!("min (F - L)/|F| = {worst:.2e}, equality error {eq_err:.1e}"),
    ))
}

fn brute_force(p: &HelfrichParams) -> Result<(f64, Vec<u64>)> {
    let mut vals = Vec::with_capacity(1000);
    for k in 1..=1000u64 {
        vals.push(sphere_energy(k, p)?);
    }
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * min.abs().max(1.0);
    let argmin = (1..=1000u64).filter(|&k| vals[k as usize - 1] <= min + tol).collect();
    Ok((min, argmin))
}

/// Parameters with `Y_star = 0` between multiplicities `k` and `k + 1`.
pub fn tie_parameters(k: u64, beta: f64, m0: f64) -> Result<HelfrichParams> {
    let d = ((k + 1) as f64).sqrt() - (k as f64).sqrt();
    let c = d; // -H0 = c / (R1 d) = 1 / R1 stays below 2 / R1
    let gamma = 2.0 * beta * (c - 1.0);
    let r1 = (m0 / (4.0 * PI)).sqrt();
    HelfrichParams::new(beta, gamma, -c / (r1 * d), m0)
}

fn sphere_selector() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases: Vec<(HelfrichParams, bool)> = Vec::new();
    for k in 1..=3 {
        cases.push((tie_parameters(k, 1.0, 4.0 * PI)?, false));
    }
    cases.push((tie_parameters(1, 0.7, 30.0)?, false));
    while cases.len() < 200 {
        let beta = rng.gen_range(0.1..5.0);
        // c >= 0.05 keeps k* <= 400 inside the search range
        let gamma = -rng.gen_range(0.0..0.95) * 2.0 * beta;
        let m0 = rng.gen_range(1.0..200.0);
        let c = 1.0 + gamma / (2.0 * beta);
        let single_cover = cases.len() % 4 == 0;
        let hmax = if single_cover {
            (4.0 * PI / m0).sqrt() * c * (1.0 + 2f64.sqrt())
        } else {
            (16.0 * PI / m0).sqrt()
        };
        let h0 = -rng.gen_range(0.0..1.0) * hmax;
        let p = HelfrichParams::new(beta, gamma, h0, m0)?;
        cases.push((p, single_cover && -h0 < (16.0 * PI / m0).sqrt()));
    }
    let mut failures = Vec::new();
    let mut ties = 0;
    let mut single_cover_cases = 0;
    for (i, (p, single_cover)) in cases.iter().enumerate() {
        let a = optimal_sphere(p)?;
        let (_, brute) = brute_force(p)?;
        let ok = match a.argmin {
            SphereArgmin::Unique(k) => brute == vec![k],
            SphereArgmin::Tie(k1, k2) => {
                ties += 1;
                brute.contains(&k1) || brute.contains(&k2)
            }
        };
        if *single_cover {
            single_cover_cases += 1;
            if a.argmin != SphereArgmin::Unique(1) {
                failures.push(format!("case {i}: single-cover region gave {:?}", a.argmin));
            }
        }
        if !ok {
            failures.push(format!("case {i}: {:?} vs brute force {:?}", a.argmin, brute));
        }
    }
    let ok = failures.is_empty() && ties >= 1 && single_cover_cases >= 1;
    Ok(Check::new(
        ok,
        if failures.is_empty() {
            format!("{} tuples, {ties} ties, {single_cover_cases} in the single-cover region", cases.len())
        } else {
            failures.join("; ")
        },
    ))
}

fn random_varifold(rng: &mut ChaCha8Rng, n: usize) -> ParticleVarifold {
    let mut atoms = Vec::with_capacity(n);
    for _ in 0..n {
        let x = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let nu = loop {
            let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let len = v.norm();
            if len > 0.1 && len <= 1.0 {
                break v / len;
            }
        };
        atoms.push(Atom { x, nu, w: rng.gen_range(0.1..1.0) });
    }
    let total: f64 = atoms.iter().map(|a| a.w).sum();
    for a in &mut atoms {
        a.w /= total;
    }
    ParticleVarifold::new(atoms).expect("valid random atoms")
}

fn random_sized(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> ParticleVarifold {
    let n = rng.gen_range(lo..=hi);
    random_varifold(rng, n)
}

/// Minimum of the transport cost over all vertices of the transportation
/// polytope, enumerated as spanning trees of the bipartite graph.
pub fn polytope_minimum(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let (n1, n2) = (a.len(), b.len());
    let arcs: Vec<(usize, usize)> = (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).collect();
    let need = n1 + n2 - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(need);
    enumerate_subsets(&arcs, need, 0, &mut chosen, &mut |subset| {
        if let Some(flow) = tree_flows(n1, n2, a, b, subset) {
            if flow.iter().all(|&x| x >= -1e-14) {
                let c: f64 = subset.iter().zip(&flow).map(|(&(i, j), x)| x * cost[i * n2 + j]).sum();
                best = best.min(c);
            }
        }
    });
    best
}

fn enumerate_subsets<F: FnMut(&[(usize, usize)])>(
    arcs: &[(usize, usize)],
    need: usize,
    start: usize,
    chosen: &mut Vec<(usize, usize)>,
    visit: &mut F,
) {
    if chosen.len() == need {
        visit(chosen);
        return;
    }
    for k in start..arcs.len() {
        if arcs.len() - k < need - chosen.len() {
            break;
        }
        chosen.push(arcs[k]);
        enumerate_subsets(arcs, need, k + 1, chosen, visit);
        chosen.pop();
    }
}

/// Unique flows on a spanning tree, by repeatedly peeling leaves.
fn tree_flows(n1: usize, n2: usize, a: &[f64], b: &[f64], arcs: &[(usize, usize)]) -> Option<Vec<f64>> {
    let n = n1 + n2;
    let mut degree = vec![0usize; n];
    for &(i, j) in arcs {
        degree[i] += 1;
        degree[n1 + j] += 1;
    }
    if degree.iter().any(|&d| d == 0) {
        return None;
    }
    let mut supply: Vec<f64> = a.iter().cloned().chain(b.iter().cloned()).collect();
    let mut flow = vec![f64::NAN; arcs.len()];
    let mut done = vec![false; arcs.len()];
    for _ in 0..arcs.len() {
        let mut progressed = false;
        for (e, &(i, j)) in arcs.iter().enumerate() {
            if done[e] {
                continue;
            }
            let (u, v) = (i, n1 + j);
            let leaf = if degree[u] == 1 { Some((u, v)) } else if degree[v] == 1 { Some((v, u)) } else { None };
            if let Some((leaf, other)) = leaf {
                let x = supply[leaf];
                flow[e] = x;
                supply[other] -= x;
                supply[leaf] = 0.0;
                degree[leaf] -= 1;
                degree[other] -= 1;
                done[e] = true;
                progressed = true;
                break;
            }
        }
        if !progressed {
            return None;
        }
    }
    Some(flow)
}

fn transport_checks() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let exact = TransportConfig::exact(2.0);
    let mut failures = Vec::new();

    let mut worst_enum = 0.0f64;
    for _ in 0..50 {
        let n1 = rng.gen_range(1..=4);
        let n2 = rng.gen_range(1..=4);
        let p = if rng.gen_bool(0.5) { 1.0 } else { 2.0 };
        let v = random_varifold(&mut rng, n1);
        let w = random_varifold(&mut rng, n2);
        let cfg = TransportConfig::exact(p);
        let (dist, plan) = wasserstein(&v, &w, &cfg)?;
        let a: Vec<f64> = v.atoms().iter().map(|x| x.w).collect();
        let b: Vec<f64> = w.atoms().iter().map(|x| x.w).collect();
        let cost: Vec<f64> = v
            .atoms()
            .iter()
            .flat_map(|x| w.atoms().iter().map(move |y| crate::transport::ground_cost(x, y, p)))
            .collect();
        let reference = polytope_minimum(&a, &b, &cost);
        worst_enum = worst_enum.max((plan.cost - reference).abs());
        debug_assert!((dist.powf(p) - plan.cost).abs() < 1e-12);
    }
    if worst_enum > 1e-12 {
        failures.push(format!("simplex vs enumeration {worst_enum:.1e}"));
    }

    // entropic schedule on a fixed 10 x 10 instance
    let mut fixed = ChaCha8Rng::seed_from_u64(10);
    let v = random_varifold(&mut fixed, 10);
    let w = random_varifold(&mut fixed, 10);
    let a: Vec<f64> = v.atoms().iter().map(|x| x.w).collect();
    let b: Vec<f64> = w.atoms().iter().map(|x| x.w).collect();
    let cost: Vec<f64> =
        v.atoms().iter().flat_map(|x| w.atoms().iter().map(move |y| crate::transport::ground_cost(x, y, 2.0))).collect();
    let reference = solve_dense(&a, &b, &cost, &exact)?.cost;
    let mut errors = Vec::new();
    for eps in entropic_schedule() {
        let plan = solve_dense(&a, &b, &cost, &TransportConfig::entropic(2.0, eps))?;
        errors.push((plan.cost - reference).abs());
    }
    let monotone = errors.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let last = *errors.last().expect("non-empty schedule");
    if !monotone || last > 1e-3 * reference {
        failures.push(format!("entropic errors {:?}", errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()));
    }

    let mut spatial_violations = 0;
    let mut triangle_worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let n = rng.gen_range(2..=8);
        let v = random_varifold(&mut rng, n);
        let w = random_sized(&mut rng, 2, 8);
        let full = wasserstein(&v, &w, &exact)?.0;
        let spatial = wasserstein_spatial(&v, &w, &exact)?;
        if spatial > full * (1.0 + 1e-12) + 1e-15 {
            spatial_violations += 1;
        }
    }
    for _ in 0..50 {
        let p = if rng.gen_bool(0.5) { 1.0 } else { 2.0 };
        let cfg = TransportConfig::exact(p);
        let u = random_sized(&mut rng, 2, 6);
        let v = random_sized(&mut rng, 2, 6);
        let w = random_sized(&mut rng, 2, 6);
        let uw = wasserstein(&u, &w, &cfg)?.0;
        let uv = wasserstein(&u, &v, &cfg)?.0;
        let vw = wasserstein(&v, &w, &cfg)?.0;
        triangle_worst = triangle_worst.max(uw - uv - vw);
    }
    if spatial_violations > 0 {
        failures.push(format!("{spatial_violations} spatial-marginal violations"));
    }
    if triangle_worst > 1e-9 {
        failures.push(format!("triangle inequality off by {triangle_worst:.1e}"));
    }
    Ok(Check::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("enumeration {worst_enum:.1e}, entropic final rel {:.1e}, triangle slack {triangle_worst:.1e}", last / reference)
        } else {
            failures.join("; ")
        },
    ))
}

/// Relative regularizations used for the entropic convergence check.
pub fn entropic_schedule() -> Vec<f64> {
    vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
}

/// Parameters and configuration of the dissipation run.
pub fn dissipation_setup() -> Result<(MeshVarifold, FlowConfig, HelfrichParams)> {
    let params = HelfrichParams::new(1.0, -0.5, 0.0, 4.0 * PI)?;
    let cfg = FlowConfig { tau: 1e-3, steps: 50, ..FlowConfig::default() };
    let mesh = generate::perturbed_sphere(3, RadialPerturbation::new(0.1, 7), 1)?;
    let mesh = flow::prepare_initial(&mesh, &cfg, &params)?;
    Ok((mesh, cfg, params))
}

fn acceptance_violations(run: &FlowRun, cfg: &FlowConfig) -> (usize, usize, f64) {
    let recs = &run.trace.records;
    let tol = run.trace.tol_accept;
    let mut bad_accept = 0;
    let mut bad_monotone = 0;
    let mut slack = f64::NEG_INFINITY;
    for w in recs.windows(2) {
        let d = match cfg.distance_power {
            flow::DistancePower::Squared => w[1].increment * w[1].increment,
            flow::DistancePower::Order => w[1].increment.powf(cfg.transport.p),
        };
        let lhs = w[1].energy + d / (2.0 * cfg.tau);
        slack = slack.max(lhs - w[0].energy);
        if lhs > w[0].energy + tol {
            bad_accept += 1;
        }
        if w[1].energy > w[0].energy + tol {
            bad_monotone += 1;
        }
    }
    (bad_accept, bad_monotone, slack)
}

fn flow_dissipation() -> Result<(Check, FlowRun)> {
    let (mesh, cfg, params) = dissipation_setup()?;
    let run = flow::run_flow(&mesh, &cfg, &params).map_err(|f| f.error)?;
    let (bad_accept, bad_monotone, slack) = acceptance_violations(&run, &cfg);
    let last = run.trace.records.last().expect("initial record");
    let first = &run.trace.records[0];
    let above = last.energy - last.lower_bound >= -1e-9 * last.energy.abs();
    let stalled = run.trace.records.iter().filter(|r| r.stalled).count();
    let ok = bad_accept == 0 && bad_monotone == 0 && above && run.trace.records.len() == cfg.steps + 1;
    let detail = format!(
        "{} atoms, G {:.6} -> {:.6}, max acceptance slack {slack:.1e}, {stalled} stalled, final - bound {:.1e}",
        mesh.n_faces(),
        first.energy,
        last.energy,
        last.energy - last.lower_bound
    );
    Ok((Check::new(ok, detail), run))
}

fn diameter_sandwich(run: &FlowRun) -> Result<Check> {
    let mut worst_lo = f64::INFINITY;
    let mut worst_hi = f64::INFINITY;
    for (_, mesh) in &run.snapshots {
        let field = CurvatureField::compute(mesh)?;
        let (lo, hi) = flow::diameter_bounds(mesh, &field)?;
        let d = flow::diameter(mesh);
        worst_lo = worst_lo.min(d / lo);
        worst_hi = worst_hi.min(hi / d);
    }
    Ok(Check::new(
        worst_lo >= 0.97 && worst_hi >= 0.97,
        format!("{} snapshots, min diam/lower {worst_lo:.3}, min upper/diam {worst_hi:.3}", run.snapshots.len()),
    ))
}

/// The discrete optimal sphere for beta = 1, gamma = -1, H0 = -1, m0 = 8 pi
/// (analytic minimizer: the doubly covered unit sphere).
pub fn discrete_optimal_sphere() -> Result<(MeshVarifold, FlowConfig, HelfrichParams)> {
    let params = HelfrichParams::new(1.0, -1.0, -1.0, 8.0 * PI)?;
    let a = optimal_sphere(&params)?;
    let k = a.argmin.first();
    let mesh = generate::icosphere(2, params.radius_k(k), k as u32)?;
    let cfg = FlowConfig { tau: 1e-3, steps: 10, ..FlowConfig::default() };
    let mesh = flow::relax(&mesh, &cfg, &params, 2000)?;
    Ok((mesh, cfg, params))
}

fn stationarity() -> Result<Check> {
    let (mesh, cfg, params) = discrete_optimal_sphere()?;
    let run = flow::run_flow(&mesh, &cfg, &params).map_err(|f| f.error)?;
    let g0 = run.trace.records[0].energy;
    let drift = run.trace.records.iter().map(|r| rel(r.energy, g0)).fold(0.0, f64::max);
    let scale = params.m0.sqrt() * mesh.diameter();
    let max_inc = run.trace.records.iter().map(|r| r.increment).fold(0.0, f64::max);
    Ok(Check::new(
        drift <= 1e-6 && max_inc <= 1e-6 * scale,
        format!(
            "k = {}, G = {g0:.9} (sphere {:.9}), drift {drift:.1e}, max W {:.1e} vs {:.1e}",
            mesh.multiplicity(),
            sphere_energy(mesh.multiplicity() as u64, &params)?,
            max_inc,
            1e-6 * scale
        ),
    ))
}

/// Starting states of the volume-constrained and reflection-symmetric runs.
pub fn constrained_setups() -> Result<[(MeshVarifold, FlowConfig, HelfrichParams); 2]> {
    let m0 = 4.0 * PI;
    let mesh = generate::perturbed_sphere(2, RadialPerturbation::new(0.1, 11), 1)?.rescaled_to_mass(m0);
    let v0 = 0.9 * mesh.enclosed_volume();
    let params_v = HelfrichParams::new(1.0, -0.5, 0.0, m0)?.with_volume(v0)?;
    let cfg_v = FlowConfig { tau: 1e-3, steps: 20, volume: true, ..FlowConfig::default() };
    let start_v = flow::prepare_initial(&mesh, &cfg_v, &params_v)?;

    let sym = generate::perturbed_sphere(2, RadialPerturbation::new(0.1, 12).mirrored(), 1)?.rescaled_to_mass(m0);
    let params_s = HelfrichParams::new(1.0, -0.5, 0.0, m0)?;
    let cfg_s =
        FlowConfig { tau: 1e-3, steps: 20, symmetry: vec![Isometry::reflection(Vec3::x())?], ..FlowConfig::default() };
    let start_s = flow::prepare_initial(&sym, &cfg_s, &params_s)?;
    Ok([(start_v, cfg_v, params_v), (start_s, cfg_s, params_s)])
}

fn constraint_residuals() -> Result<Check> {
    let [(mv, cv, pv), (ms, cs, ps)] = constrained_setups()?;
    let v0 = pv.v0.expect("volume set");
    let run_v = flow::run_flow(&mv, &cv, &pv).map_err(|f| f.error)?;
    let worst_v =
        run_v.trace.records.iter().filter_map(|r| r.volume_residual).fold(0.0, f64::max) / v0.abs();
    let moved_v = run_v.trace.records.iter().filter(|r| !r.stalled && r.increment > 0.0).count();

    let run_s = flow::run_flow(&ms, &cs, &ps).map_err(|f| f.error)?;
    let g = &cs.symmetry[0];
    let mut worst_s = 0.0f64;
    for (_, m) in &run_s.snapshots {
        let atoms = sample_particles(m, QuadratureRule::Centroid)?;
        let defect = symmetry_defect(&atoms, g, cs.transport.p)?;
        let scale = ps.m0.sqrt() * m.diameter();
        worst_s = worst_s.max(defect / scale);
    }
    let ok = worst_v <= 1e-4 && worst_s <= 1e-6 && run_v.trace.records.len() == 21 && run_s.trace.records.len() == 21;
    Ok(Check::new(
        ok,
        format!(
            "volume rel residual {worst_v:.1e} ({moved_v} moving steps, G {:.5} -> {:.5}), symmetry defect / (sqrt(m0) diam) {worst_s:.1e}",
            run_v.trace.records[0].energy,
            run_v.trace.records.last().expect("records").energy
        ),
    ))
}

/// Doubly covered sphere with beta = 1, gamma = -1/2, H0 = 0, m0 = 4 pi, for
/// which the single cover has half the energy.
pub fn multiplicity_setup() -> Result<(MeshVarifold, FlowConfig, HelfrichParams)> {
    let params = HelfrichParams::new(1.0, -0.5, 0.0, 4.0 * PI)?;
    let mesh = generate::icosphere(2, params.radius_k(2), 2)?;
    let cfg = FlowConfig {
        tau: 1e-3,
        steps: 1,
        multiplicity_search: MultiplicitySearch::Candidates(vec![1, 2, 3]),
        ..FlowConfig::default()
    };
    let mesh = flow::relax(&mesh, &cfg, &params, 2000)?;
    Ok((mesh, cfg, params))
}

fn multiplicity_conservation() -> Result<Check> {
    let (mesh, mut cfg, params) = multiplicity_setup()?;
    let probe = flow::run_flow(&mesh, &cfg, &params).map_err(|f| f.error)?;
    let threshold = probe.trace.records[1]
        .tau_threshold
        .ok_or_else(|| crate::error::Error::Domain("no candidate with lower energy; threshold undefined".into()))?;

    cfg.tau = 0.5 * threshold;
    cfg.steps = 20;
    let slow = flow::run_flow(&mesh, &cfg, &params).map_err(|f| f.error)?;
    let conserved = slow.trace.records.iter().all(|r| r.multiplicity == 2);

    cfg.tau = threshold * 1e6;
    cfg.steps = 3;
    let fast = flow::run_flow(&mesh, &cfg, &params).map_err(|f| f.error)?;
    let jump = fast.trace.records.iter().skip(1).position(|r| r.multiplicity == 1).map(|i| i + 1);
    let ok = conserved && jump.is_some() && sphere_energy(1, &params)? < sphere_energy(2, &params)?;
    Ok(Check::new(
        ok,
        format!(
            "recorded tau threshold {threshold:.3e}; k constant over 20 steps at tau/2: {conserved}; jump to k=1 at step {:?} with tau x 1e6",
            jump
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_matches_a_hand_instance() {
        let a = [0.5, 0.5];
        let b = [0.5, 0.5];
        let cost = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(polytope_minimum(&a, &b, &cost), 0.0);
    }

    #[test]
    fn tie_parameters_produce_ties() {
        for k in 1..=3 {
            let p = tie_parameters(k, 1.0, 4.0 * PI).unwrap();
            let a = optimal_sphere(&p).unwrap();
            assert_eq!(a.argmin, SphereArgmin::Tie(k, k + 1), "{a:?}");
        }
    }

    #[test]
    fn grid_has_twenty_points() {
        assert_eq!(parameter_grid().len(), 20);
    }
}
