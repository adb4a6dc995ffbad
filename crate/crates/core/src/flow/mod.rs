//! Minimizing movements of the bending energy in the transport metric.
//!
//! Each step minimizes `G(V) + penalties + D(V, V_prev) / (2 tau)` over the
//! vertex positions of a fixed-connectivity mesh, where `D` is `W_p^2`
//! (or `W_p^p`) between the sampled particle varifolds. Constraints are
//! restored exactly after the inner solve and the step is only accepted if
//! the incremental inequality `G(V) + D / (2 tau) <= G(V_prev) + tol` holds.

pub mod constraints;
mod manifold;
mod objective;

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::curvature::{second_form_quantities, CurvatureField};
use crate::energy::{helfrich_energy, lower_bound_certificate, multiplicity_bound, willmore_energy};
use crate::error::{domain, Error, Result};
use crate::mesh::{MeshVarifold, Vec3};
use crate::params::HelfrichParams;
use crate::transport::{wasserstein, Solver, TransportConfig};
use crate::varifold::{sample_particles, symmetry_defect, Isometry, Measure, ParticleVarifold, QuadratureRule};

pub use constraints::SymmetryGroup;
use manifold::AreaManifold;
use objective::{AtomLayout, Eval, Objective, TransportTerm};

/// Power of the distance in the incremental functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistancePower {
    /// `W_p^2 / (2 tau)`.
    #[default]
    Squared,
    /// `W_p^p / (2 tau)`.
    Order,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplicitySearch {
    Off,
    /// Candidates `1..=k` with `k` the multiplicity bound of the initial energy.
    UpToBound,
    Candidates(Vec<u32>),
}

impl Default for MultiplicitySearch {
    fn default() -> Self {
        MultiplicitySearch::Off
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_inner_iter: usize,
    /// Stop when the preconditioned gradient norm falls below
    /// `grad_tol * (1 + |J|)`.
    pub grad_tol: f64,
    /// Relative objective decrease below which the inner loop stops.
    pub ftol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Inner budget per candidate multiplicity before the winner is refined.
    pub candidate_iter: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { max_inner_iter: 40, grad_tol: 1e-9, ftol: 1e-10, armijo: 1e-4, max_backtracks: 40, candidate_iter: 15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyWeights {
    pub mass: f64,
    pub volume: f64,
    pub symmetry: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self { mass: 100.0, volume: 100.0, symmetry: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub tau: f64,
    pub steps: usize,
    pub transport: TransportConfig,
    pub distance_power: DistancePower,
    pub quadrature: QuadratureRule,
    /// Enforce `encvol = params.v0`.
    pub volume: bool,
    pub symmetry: Vec<Isometry>,
    pub multiplicity_search: MultiplicitySearch,
    pub optimizer: OptimizerConfig,
    pub penalty: PenaltyWeights,
    pub snapshot_stride: usize,
    /// Curvature bound of the admissible class; only checked, never enforced.
    pub curvature_bound: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            steps: 10,
            transport: TransportConfig::default(),
            distance_power: DistancePower::Squared,
            quadrature: QuadratureRule::Centroid,
            volume: false,
            symmetry: Vec::new(),
            multiplicity_search: MultiplicitySearch::Off,
            optimizer: OptimizerConfig::default(),
            penalty: PenaltyWeights::default(),
            snapshot_stride: 1,
            curvature_bound: None,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self, params: &HelfrichParams) -> Result<()> {
        params.validate()?;
        self.transport.validate()?;
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return domain(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.penalty.mass > 0.0) {
            return domain("penalty.mass must be positive");
        }
        if self.volume {
            if params.v0.is_none() {
                return domain("volume constraint requested but v0 is not set");
            }
            if !(self.penalty.volume > 0.0) {
                return domain("penalty.volume must be positive when the volume constraint is on");
            }
        }
        if !self.symmetry.is_empty() && !(self.penalty.symmetry > 0.0) {
            return domain("penalty.symmetry must be positive when symmetry generators are given");
        }
        if let MultiplicitySearch::Candidates(c) = &self.multiplicity_search {
            if c.is_empty() || c.contains(&0) {
                return domain("multiplicity candidates must be a non-empty list of positive integers");
            }
        }
        if self.optimizer.armijo <= 0.0 || self.optimizer.armijo >= 1.0 {
            return domain("optimizer.armijo must lie in (0, 1)");
        }
        if self.snapshot_stride == 0 {
            return domain("snapshot_stride must be at least 1");
        }
        Ok(())
    }
}

/// Diagnostics of one accepted state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub energy: f64,
    pub willmore: f64,
    pub lower_bound: f64,
    /// W_p(V^n, V^{n-1}).
    pub increment: f64,
    pub metric_derivative: f64,
    pub diameter: f64,
    pub diameter_lower: f64,
    pub diameter_upper: f64,
    pub multiplicity: u32,
    pub mass_residual: f64,
    pub volume_residual: Option<f64>,
    pub symmetry_defect: Option<f64>,
    pub inner_iterations: usize,
    /// Objective gap between the best and second-best candidate multiplicity.
    pub objective_gap: Option<f64>,
    /// Largest tau for which no candidate could have beaten the current one.
    pub tau_threshold: Option<f64>,
    /// The optimizer found no admissible improvement; V^n = V^{n-1}.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowTrace {
    pub tau: f64,
    pub tol_accept: f64,
    pub records: Vec<StepRecord>,
}

impl FlowTrace {
    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        for r in &self.records {
            wtr.serialize(r).map_err(|e| Error::Domain(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Trajectory samples and diagnostics.
#[derive(Debug, Clone)]
pub struct FlowRun {
    pub trace: FlowTrace,
    /// (step, mesh) every `snapshot_stride` steps, always including the last.
    pub snapshots: Vec<(usize, MeshVarifold)>,
    pub final_mesh: MeshVarifold,
}

/// A failed run with everything computed before the failure.
#[derive(Debug)]
pub struct FlowFailure {
    pub error: Error,
    pub trace: FlowTrace,
    pub snapshots: Vec<(usize, MeshVarifold)>,
}

impl std::fmt::Display for FlowFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "flow failed after {} records: {}", self.trace.records.len(), self.error)
    }
}

impl std::error::Error for FlowFailure {}

/// Largest pairwise vertex (or atom) distance.
pub fn diameter<M: Measure + ?Sized>(v: &M) -> f64 {
    v.diameter()
}

/// `(sqrt(mass / W), (2 / pi) sqrt(mass W))`.
pub fn diameter_bounds(mesh: &MeshVarifold, field: &CurvatureField) -> Result<(f64, f64)> {
    let w = willmore_energy(mesh, field)?;
    if !(w > 0.0) {
        return domain("Willmore energy vanishes; diameter bounds undefined");
    }
    let m = mesh.mass();
    Ok(((m / w).sqrt(), 2.0 / std::f64::consts::PI * (m * w).sqrt()))
}

/// Per-step `W_p / tau` and the running dissipation `sum W_p^2 / (2 tau)`.
pub fn estimate_metric_derivative(trace: &FlowTrace) -> (Vec<f64>, Vec<f64>) {
    let mut speeds = Vec::new();
    let mut cumulative = Vec::new();
    let mut acc = 0.0;
    for r in trace.records.iter().skip(1) {
        let s = r.increment / trace.tau;
        acc += 0.5 * trace.tau * s * s;
        speeds.push(s);
        cumulative.push(acc);
    }
    (speeds, cumulative)
}

pub fn tol_accept(initial_energy: f64) -> f64 {
    1e-10 * (1.0 + initial_energy.abs())
}

fn energy_of(mesh: &MeshVarifold, params: &HelfrichParams) -> Result<f64> {
    let field = CurvatureField::compute(mesh)?;
    Ok(helfrich_energy(mesh, &field, params)?.total)
}

/// Mutable state carried across steps of one trajectory.
struct Driver<'a> {
    cfg: &'a FlowConfig,
    params: &'a HelfrichParams,
    symmetry: Option<SymmetryGroup>,
    tol_accept: f64,
    alpha: f64,
}

struct Candidate {
    mesh: MeshVarifold,
    eval: Eval,
    iterations: usize,
}

impl<'a> Driver<'a> {
    fn new(cfg: &'a FlowConfig, params: &'a HelfrichParams, v0: &MeshVarifold) -> Result<Self> {
        cfg.validate(params)?;
        if !params.convexity_flag() {
            log::warn!(
                "gamma = {} lies outside (-6/5 beta, 0); the energy density is not convex",
                params.gamma
            );
        }
        if cfg.volume && v0.orientation_density() == 0 {
            return domain("volume constraint needs theta_plus != theta_minus");
        }
        let symmetry = if cfg.symmetry.is_empty() {
            None
        } else {
            Some(SymmetryGroup::generate(&cfg.symmetry, v0.positions())?)
        };
        let g0 = energy_of(v0, params)?;
        Ok(Self { cfg, params, symmetry, tol_accept: tol_accept(g0), alpha: 0.0 })
    }

    fn objective<'b>(&'b self, mesh: &'b MeshVarifold, transport: Option<TransportTerm<'b>>) -> Objective<'b> {
        let topo = mesh.topology();
        let bbox = bbox_diagonal(mesh.positions());
        let mean_area = mesh.area() / mesh.n_faces() as f64;
        Objective {
            topo,
            theta_plus: mesh.theta_plus(),
            theta_minus: mesh.theta_minus(),
            params: self.params,
            kappa_mass: self.cfg.penalty.mass,
            kappa_volume: self.cfg.penalty.volume,
            kappa_symmetry: self.cfg.penalty.symmetry,
            volume_target: if self.cfg.volume { self.params.v0 } else { None },
            symmetry: self.symmetry.as_ref(),
            transport,
            layout: AtomLayout::new(topo, mesh.theta_plus(), mesh.theta_minus(), self.cfg.quadrature),
            fd_step: 1e-5 * bbox,
            min_face_area: 1e-6 * mean_area,
        }
    }

    fn transport_term<'b>(&self, prev: &'b ParticleVarifold) -> TransportTerm<'b> {
        // inner solves stay exact: the entropic bias would move minimizers
        let cfg = TransportConfig { solver: Solver::Exact, ..self.cfg.transport };
        TransportTerm { prev, tau: self.cfg.tau, cfg, power: self.cfg.distance_power, basis: Default::default() }
    }

    fn sheet_volume(&self, mesh: &MeshVarifold) -> Option<f64> {
        if self.cfg.volume {
            self.params.v0.map(|v0| v0 / mesh.orientation_density() as f64)
        } else {
            None
        }
    }

    /// Restores mass (and volume) exactly.
    fn project(&self, mesh: &MeshVarifold, x: &mut [Vec3]) -> Result<()> {
        let topo = mesh.topology();
        let sheet_area = self.params.m0 / mesh.multiplicity() as f64;
        if self.cfg.volume {
            let v0 = self.params.v0.expect("validated");
            let sheet_vol = v0 / mesh.orientation_density() as f64;
            constraints::project_area_volume(topo, x, sheet_area, sheet_vol)?;
        } else {
            constraints::rescale_to_area(topo, x, sheet_area);
        }
        if let Some(grp) = &self.symmetry {
            grp.symmetrize_positions(x);
        }
        Ok(())
    }

    /// Optimizes from `start` towards the incremental minimizer relative to `prev`.
    fn optimize_candidate(&mut self, start: &MeshVarifold, prev_atoms: &ParticleVarifold, budget: usize) -> Result<Candidate> {
        let term = self.transport_term(prev_atoms);
        let mut alpha = self.alpha;
        let (x, eval, iterations) = {
            let obj = self.objective(start, Some(term));
            minimize(&obj, &self.cfg.optimizer, start.positions().to_vec(), budget, &mut alpha, Some(self.sheet_volume(start)))?
        };
        self.alpha = alpha;
        Ok(Candidate { mesh: start.with_positions_unchecked(x), eval, iterations })
    }

    /// Projects, checks the incremental inequality, backtracks towards `prev`.
    fn accept(&self, prev: &MeshVarifold, cand: &MeshVarifold) -> Result<(MeshVarifold, f64, bool)> {
        let g_prev = energy_of(prev, self.params)?;
        let prev_atoms = sample_particles(prev, self.cfg.quadrature)?;
        let exact = TransportConfig { solver: Solver::Exact, ..self.cfg.transport };
        let same_multiplicity = prev.multiplicity() == cand.multiplicity() && prev.theta_minus() == cand.theta_minus();
        let mut s = 1.0;
        for _ in 0..30 {
            let mut x: Vec<Vec3> = if s == 1.0 {
                cand.positions().to_vec()
            } else if same_multiplicity {
                prev.positions().iter().zip(cand.positions()).map(|(p, c)| p + (c - p) * s).collect()
            } else {
                break;
            };
            self.project(cand, &mut x)?;
            let trial = cand.with_positions_unchecked(x);
            if trial.with_positions(trial.positions().to_vec()).is_ok() {
                if let Ok(g) = energy_of(&trial, self.params) {
                    let atoms = sample_particles(&trial, self.cfg.quadrature)?;
                    let (w, _) = wasserstein(&atoms, &prev_atoms, &exact)?;
                    let d = match self.cfg.distance_power {
                        DistancePower::Squared => w * w,
                        DistancePower::Order => w.powf(exact.p),
                    };
                    if g + d / (2.0 * self.cfg.tau) <= g_prev + self.tol_accept {
                        return Ok((trial, w, false));
                    }
                }
            }
            s *= 0.5;
        }
        Ok((prev.clone(), 0.0, true))
    }

    fn step(&mut self, prev: &MeshVarifold, step: usize, g0: f64) -> Result<(MeshVarifold, StepRecord)> {
        let prev_atoms = sample_particles(prev, self.cfg.quadrature)?;
        let candidates = self.candidate_multiplicities(prev, g0)?;
        let (cand, iters, gap, threshold) = if candidates.len() <= 1 {
            let c = self.optimize_candidate(prev, &prev_atoms, self.cfg.optimizer.max_inner_iter)?;
            (c.mesh, c.iterations, None, None)
        } else {
            self.multiplicity_search(prev, &prev_atoms, &candidates)?
        };
        let (next, w, stalled) = self.accept(prev, &cand)?;
        let mut rec = self.record(&next, step, w, iters)?;
        rec.stalled = stalled;
        rec.objective_gap = gap;
        rec.tau_threshold = threshold;
        Ok((next, rec))
    }

    fn candidate_multiplicities(&self, prev: &MeshVarifold, g0: f64) -> Result<Vec<u32>> {
        Ok(match &self.cfg.multiplicity_search {
            MultiplicitySearch::Off => vec![prev.multiplicity()],
            MultiplicitySearch::Candidates(c) => c.clone(),
            MultiplicitySearch::UpToBound => {
                let k = multiplicity_bound(g0, self.params, Some(prev.genus()))?;
                (1..=k.min(64) as u32).collect()
            }
        })
    }

    /// Optimizes every candidate multiplicity with a reduced budget, refines the best.
    fn multiplicity_search(
        &mut self,
        prev: &MeshVarifold,
        prev_atoms: &ParticleVarifold,
        candidates: &[u32],
    ) -> Result<(MeshVarifold, usize, Option<f64>, Option<f64>)> {
        if prev.theta_minus() != 0 {
            return domain("multiplicity search requires theta_minus = 0");
        }
        let g_prev = energy_of(prev, self.params)?;
        let mut results: Vec<(u32, Candidate)> = Vec::new();
        for &j in candidates {
            let start = similarity_candidate(prev, j)?;
            let c = self.optimize_candidate(&start, prev_atoms, self.cfg.optimizer.candidate_iter)?;
            log::debug!("candidate k = {j}: J = {:.12e}, G = {:.12e}", c.eval.objective, c.eval.energy);
            results.push((j, c));
        }
        let k = prev.multiplicity();
        let mut threshold: Option<f64> = None;
        for (j, c) in &results {
            if *j == k || c.eval.energy >= g_prev {
                continue;
            }
            let w2 = match self.cfg.distance_power {
                DistancePower::Squared => c.eval.plan_cost.powf(2.0 / self.cfg.transport.p),
                DistancePower::Order => c.eval.plan_cost,
            };
            let t = w2 / (2.0 * (g_prev - c.eval.energy));
            threshold = Some(threshold.map_or(t, |x: f64| x.min(t)));
        }
        results.sort_by(|a, b| a.1.eval.objective.total_cmp(&b.1.eval.objective));
        let gap = results.get(1).map(|r| r.1.eval.objective - results[0].1.eval.objective);
        let (_, best) = results.swap_remove(0);
        let refined = self.optimize_candidate(&best.mesh, prev_atoms, self.cfg.optimizer.max_inner_iter)?;
        Ok((refined.mesh, best.iterations + refined.iterations, gap, threshold))
    }

    fn record(&self, mesh: &MeshVarifold, step: usize, increment: f64, inner: usize) -> Result<StepRecord> {
        let field = CurvatureField::compute(mesh)?;
        let e = helfrich_energy(mesh, &field, self.params)?;
        let (lo, hi) = diameter_bounds(mesh, &field)?;
        let diam = mesh.diameter();
        if diam > hi * 1.03 {
            log::warn!("step {step}: diameter {diam} exceeds the Willmore upper bound {hi}");
        }
        if let Some(l) = self.cfg.curvature_bound {
            if let Ok(sf) = second_form_quantities(&field) {
                let kmax = sf.ii_sq.iter().fold(0.0f64, |m, x| m.max(x.sqrt()));
                if kmax > l {
                    log::warn!("step {step}: curvature {kmax} exceeds the configured bound {l}");
                }
            }
        }
        let symmetry = match &self.symmetry {
            Some(_) => {
                let atoms = sample_particles(mesh, self.cfg.quadrature)?;
                let mut worst = 0.0f64;
                for g in &self.cfg.symmetry {
                    worst = worst.max(symmetry_defect(&atoms, g, self.cfg.transport.p)?);
                }
                Some(worst)
            }
            None => None,
        };
        Ok(StepRecord {
            step,
            energy: e.total,
            willmore: e.willmore,
            lower_bound: lower_bound_certificate(mesh, &field, self.params)?,
            increment,
            metric_derivative: increment / self.cfg.tau,
            diameter: diam,
            diameter_lower: lo,
            diameter_upper: hi,
            multiplicity: mesh.multiplicity(),
            mass_residual: (mesh.mass() - self.params.m0).abs(),
            volume_residual: if self.cfg.volume { Some((mesh.enclosed_volume() - self.params.v0.unwrap()).abs()) } else { None },
            symmetry_defect: symmetry,
            inner_iterations: inner,
            objective_gap: None,
            tau_threshold: None,
            stalled: false,
        })
    }
}

/// Limited-memory BFGS in the lumped-mass metric with Armijo backtracking.
/// With `constrain = Some(v)` iterates stay on the set of configurations
/// with the starting face areas (and sheet volume `v`, if given); steps off
/// that set are only taken when the constrained search stalls. `alpha`
/// carries the gradient-step size between calls.
fn minimize(
    obj: &Objective,
    opt: &OptimizerConfig,
    x0: Vec<Vec3>,
    max_iter: usize,
    alpha: &mut f64,
    constrain: Option<Option<f64>>,
) -> Result<(Vec<Vec3>, Eval, usize)> {
    let mut x = x0;
    let mut ev = obj
        .value(&x)
        .ok_or_else(|| Error::StepRejected("starting configuration is degenerate".into()))?;
    let mut manifold = constrain.map(|v| AreaManifold::new(obj.topo, &x, v));
    let mut memory: VecDeque<(Vec<Vec3>, Vec<Vec3>)> = VecDeque::new();
    let mut last: Option<(Vec<Vec3>, Vec<Vec3>)> = None;
    let mut iters = 0;
    for _ in 0..max_iter {
        let g = obj.gradient(&x, &ev);
        let minv: Vec<f64> = lumped_mass(obj, &x).iter().map(|m| 1.0 / m).collect();
        let edge = mean_edge(obj, &x);
        // reduced gradient: the component of g seen by tangent directions
        let mut r = match &manifold {
            Some(man) => match man.project(&x, &g, &minv) {
                Some(t) => t.iter().zip(&minv).map(|(v, m)| v / *m).collect(),
                None => g.clone(),
            },
            None => g.clone(),
        };
        if let Some(grp) = obj.symmetry {
            grp.symmetrize_covector(&mut r);
        }
        if let Some((xp, rp)) = last.take() {
            let sk: Vec<Vec3> = x.iter().zip(&xp).map(|(a, b)| a - b).collect();
            let yk: Vec<Vec3> = r.iter().zip(&rp).map(|(a, b)| a - b).collect();
            if dot(&sk, &yk) > 1e-12 * dot(&yk, &yk).sqrt() * dot(&sk, &sk).sqrt() {
                if memory.len() == LBFGS_MEMORY {
                    memory.pop_front();
                }
                memory.push_back((sk, yk));
            }
        }

        let mut step_taken = None;
        if let Some(man) = &manifold {
            if !memory.is_empty() {
                let h = two_loop(&r, &memory, &minv);
                let mv: Vec<Vec3> = h.iter().zip(&minv).map(|(v, m)| v / *m).collect();
                if let Some(t) = man.project(&x, &mv, &minv) {
                    let d: Vec<Vec3> = t.iter().map(|v| -v).collect();
                    let mut unit = 1.0;
                    step_taken = line_search(obj, opt, &x, &ev, &g, d, edge, &mut unit, Some((man, &minv)));
                }
                if step_taken.is_none() {
                    memory.clear();
                }
            }
            if step_taken.is_none() {
                let d: Vec<Vec3> = r.iter().zip(&minv).map(|(v, m)| -v * *m).collect();
                step_taken = line_search(obj, opt, &x, &ev, &g, d, edge, alpha, Some((man, &minv)));
            }
        }
        if step_taken.is_none() {
            let d: Vec<Vec3> = g.iter().zip(&minv).map(|(gv, m)| -gv * *m).collect();
            let mut fresh = 0.0;
            step_taken = line_search(obj, opt, &x, &ev, &g, d, edge, &mut fresh, None);
            if let (Some((xt, _)), Some(v)) = (&step_taken, constrain) {
                manifold = Some(AreaManifold::new(obj.topo, xt, v));
                memory.clear();
            }
        }
        let Some((xt, et)) = step_taken else {
            break;
        };
        iters += 1;
        let decrease = ev.objective - et.objective;
        last = Some((std::mem::replace(&mut x, xt), r));
        ev = et;
        if decrease <= opt.ftol * (1.0 + ev.objective.abs()) {
            break;
        }
    }
    Ok((x, ev, iters))
}

const LBFGS_MEMORY: usize = 8;

fn dot(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u.dot(v)).sum()
}

/// Inverse-Hessian estimate applied to the covector `q`, seeded with a
/// scaled inverse lumped mass.
fn two_loop(q: &[Vec3], memory: &VecDeque<(Vec<Vec3>, Vec<Vec3>)>, minv: &[f64]) -> Vec<Vec3> {
    let mut q = q.to_vec();
    let mut coeffs = Vec::with_capacity(memory.len());
    for (s, y) in memory.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= yi * a;
        }
        coeffs.push((rho, a));
    }
    let (s, y) = memory.back().expect("non-empty memory");
    let my: Vec<Vec3> = y.iter().zip(minv).map(|(v, m)| v * *m).collect();
    let gamma = dot(s, y) / dot(y, &my);
    let mut h: Vec<Vec3> = q.iter().zip(minv).map(|(v, m)| v * (*m * gamma)).collect();
    for ((s, y), (rho, a)) in memory.iter().zip(coeffs.iter().rev()) {
        let b = rho * dot(y, &h);
        for (hi, si) in h.iter_mut().zip(s) {
            *hi += si * (a - b);
        }
    }
    h
}

#[allow(clippy::too_many_arguments)]
fn line_search(
    obj: &Objective,
    opt: &OptimizerConfig,
    x: &[Vec3],
    ev: &Eval,
    g: &[Vec3],
    mut d: Vec<Vec3>,
    edge: f64,
    alpha: &mut f64,
    manifold: Option<(&AreaManifold, &[f64])>,
) -> Option<(Vec<Vec3>, Eval)> {
    if let Some(grp) = obj.symmetry {
        grp.symmetrize_covector(&mut d);
    }
    let slope: f64 = g.iter().zip(&d).map(|(a, b)| a.dot(b)).sum();
    if !(slope < 0.0) || (-slope).sqrt() <= opt.grad_tol * (1.0 + ev.objective.abs()) {
        return None;
    }
    let dmax = d.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let cap = 0.25 * edge / dmax;
    if !(*alpha > 0.0) {
        *alpha = 0.05 * edge / dmax;
    }
    let mut step = alpha.min(cap);
    for _ in 0..opt.max_backtracks {
        let mut xt: Vec<Vec3> = x.iter().zip(&d).map(|(p, dv)| p + dv * step).collect();
        if let Some(grp) = obj.symmetry {
            grp.symmetrize_positions(&mut xt);
        }
        let feasible = manifold.map_or(true, |(man, minv)| man.restore(&mut xt, minv));
        if feasible {
            if let Some(et) = obj.value(&xt) {
                if et.objective <= ev.objective + opt.armijo * step * slope {
                    *alpha = 2.0 * step;
                    return Some((xt, et));
                }
            }
        }
        step *= 0.5;
    }
    None
}

fn bbox_diagonal(x: &[Vec3]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in x {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

fn lumped_mass(obj: &Objective, x: &[Vec3]) -> Vec<f64> {
    let ts = (obj.theta_plus + obj.theta_minus) as f64;
    let mut m = vec![0.0; x.len()];
    for f in obj.topo.faces() {
        let a = 0.5 * (x[f[1]] - x[f[0]]).cross(&(x[f[2]] - x[f[0]])).norm() * ts / 3.0;
        for &v in f {
            m[v] += a;
        }
    }
    m
}

fn mean_edge(obj: &Objective, x: &[Vec3]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for f in obj.topo.faces() {
        for k in 0..3 {
            s += (x[f[(k + 1) % 3]] - x[f[k]]).norm();
            n += 1;
        }
    }
    s / n as f64
}

/// The mesh rescaled about its centroid so that `j` sheets carry the same mass.
fn similarity_candidate(prev: &MeshVarifold, j: u32) -> Result<MeshVarifold> {
    let s = (prev.multiplicity() as f64 / j as f64).sqrt();
    prev.scaled_about(s, prev.centroid()).with_multiplicity(j, 0)
}

fn check_initial(mesh: &MeshVarifold, cfg: &FlowConfig, params: &HelfrichParams) -> Result<()> {
    let m = mesh.mass();
    if (m - params.m0).abs() > 1e-6 * params.m0 {
        return domain(format!("initial mass {m} differs from m0 = {}; prepare the initial state first", params.m0));
    }
    if cfg.volume {
        let v0 = params.v0.expect("validated");
        let v = mesh.enclosed_volume();
        if (v - v0).abs() > 1e-4 * v0.abs() {
            return domain(format!("initial enclosed volume {v} differs from v0 = {v0}; prepare the initial state first"));
        }
    }
    Ok(())
}

/// One minimizing-movement step from `prev`.
pub fn incremental_step(prev: &MeshVarifold, cfg: &FlowConfig, params: &HelfrichParams) -> Result<(MeshVarifold, StepRecord)> {
    let mut d = Driver::new(cfg, params, prev)?;
    let g0 = energy_of(prev, params)?;
    d.step(prev, 1, g0)
}

/// One step with the multiplicity as an additional search dimension.
pub fn multiplicity_step(prev: &MeshVarifold, cfg: &FlowConfig, params: &HelfrichParams) -> Result<(MeshVarifold, u32, StepRecord)> {
    if cfg.multiplicity_search == MultiplicitySearch::Off {
        return domain("multiplicity_step needs multiplicity_search enabled");
    }
    let (m, rec) = incremental_step(prev, cfg, params)?;
    let k = m.multiplicity();
    Ok((m, k, rec))
}

/// Runs `cfg.steps` minimizing-movement steps from `v0`.
pub fn run_flow(v0: &MeshVarifold, cfg: &FlowConfig, params: &HelfrichParams) -> std::result::Result<FlowRun, FlowFailure> {
    let mut trace = FlowTrace { tau: cfg.tau, tol_accept: 0.0, records: Vec::new() };
    let mut snapshots = Vec::new();
    let fail = |error, trace: FlowTrace, snapshots| FlowFailure { error, trace, snapshots };

    let mut driver = match check_initial(v0, cfg, params).and_then(|_| Driver::new(cfg, params, v0)) {
        Ok(d) => d,
        Err(e) => return Err(fail(e, trace, snapshots)),
    };
    trace.tol_accept = driver.tol_accept;
    let g0 = match energy_of(v0, params) {
        Ok(g) => g,
        Err(e) => return Err(fail(e, trace, snapshots)),
    };
    match driver.record(v0, 0, 0.0, 0) {
        Ok(r) => trace.records.push(r),
        Err(e) => return Err(fail(e, trace, snapshots)),
    }
    snapshots.push((0, v0.clone()));
    let mut current = v0.clone();
    for n in 1..=cfg.steps {
        match driver.step(&current, n, g0) {
            Ok((next, rec)) => {
                log::info!(
                    "step {n}: G = {:.12e}, W = {:.3e}, k = {}, inner = {}{}",
                    rec.energy,
                    rec.increment,
                    rec.multiplicity,
                    rec.inner_iterations,
                    if rec.stalled { " (stalled)" } else { "" }
                );
                trace.records.push(rec);
                current = next;
                if n % cfg.snapshot_stride == 0 || n == cfg.steps {
                    snapshots.push((n, current.clone()));
                }
            }
            Err(e) => return Err(fail(e, trace, snapshots)),
        }
    }
    Ok(FlowRun { trace, snapshots, final_mesh: current })
}

/// Minimizes the energy plus constraint penalties without a transport term,
/// then projects onto the constraints. Used to prepare initial states and
/// discrete minimizers.
pub fn relax(mesh: &MeshVarifold, cfg: &FlowConfig, params: &HelfrichParams, iterations: usize) -> Result<MeshVarifold> {
    let d = Driver::new(cfg, params, mesh)?;
    let mut alpha = 0.0;
    let (mut x, _, _) = {
        let obj = d.objective(mesh, None);
        minimize(&obj, &cfg.optimizer, mesh.positions().to_vec(), iterations, &mut alpha, None)?
    };
    d.project(mesh, &mut x)?;
    mesh.with_positions(x)
}

/// Projects a mesh onto the mass (and, if configured, volume) constraint.
pub fn prepare_initial(mesh: &MeshVarifold, cfg: &FlowConfig, params: &HelfrichParams) -> Result<MeshVarifold> {
    let d = Driver::new(cfg, params, mesh)?;
    let mut x = mesh.positions().to_vec();
    d.project(mesh, &mut x)?;
    mesh.with_positions(x)
}
