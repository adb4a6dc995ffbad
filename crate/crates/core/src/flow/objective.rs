//! The incremental objective on vertex positions and its gradient.

use std::sync::Mutex;

use rayon::prelude::*;

use super::constraints::{area, area_gradient, signed_volume, volume_gradient, SymmetryGroup};
use super::DistancePower;
use crate::curvature::vertex_curvature_by;
use crate::energy::vertex_energy;
use crate::mesh::{MeshTopology, Vec3};
use crate::params::HelfrichParams;
use crate::transport::{cost_matrix, solve_exact_warm, solve_rescaled, Solver, TransportConfig, TransportPlan};
use crate::varifold::{Atom, ParticleVarifold, QuadratureRule};

/// Which face, quadrature node and sheet each atom comes from.
#[derive(Debug, Clone)]
pub(crate) struct AtomLayout {
    entries: Vec<AtomSource>,
}

#[derive(Debug, Clone, Copy)]
struct AtomSource {
    face: usize,
    bary: [f64; 3],
    sign: f64,
    /// Weight per unit face area.
    density: f64,
}

impl AtomLayout {
    /// Same ordering as [`crate::varifold::sample_particles`].
    pub fn new(topo: &MeshTopology, theta_plus: u32, theta_minus: u32, rule: QuadratureRule) -> Self {
        let mut entries = Vec::new();
        for face in 0..topo.n_faces() {
            for (bary, share) in rule.nodes() {
                if theta_plus > 0 {
                    entries.push(AtomSource { face, bary: *bary, sign: 1.0, density: share * theta_plus as f64 });
                }
                if theta_minus > 0 {
                    entries.push(AtomSource { face, bary: *bary, sign: -1.0, density: share * theta_minus as f64 });
                }
            }
        }
        Self { entries }
    }

    pub fn atoms(&self, topo: &MeshTopology, x: &[Vec3]) -> Vec<Atom> {
        self.entries
            .iter()
            .map(|s| {
                let f = topo.faces()[s.face];
                let (a, b, c) = (x[f[0]], x[f[1]], x[f[2]]);
                let cross = (b - a).cross(&(c - a));
                let len = cross.norm();
                Atom {
                    x: a * s.bary[0] + b * s.bary[1] + c * s.bary[2],
                    nu: cross * (s.sign / len),
                    w: 0.5 * len * s.density,
                }
            })
            .collect()
    }
}

pub(crate) struct TransportTerm<'a> {
    pub prev: &'a ParticleVarifold,
    pub tau: f64,
    pub cfg: TransportConfig,
    pub power: DistancePower,
    /// Last simplex basis, reused while the atom weights stay fixed.
    pub basis: Mutex<Option<Vec<(usize, usize)>>>,
}

impl TransportTerm<'_> {
    /// Distance term D as a function of the plan cost C = W_p^p.
    fn distance(&self, cost: f64) -> f64 {
        match self.power {
            DistancePower::Squared => cost.max(0.0).powf(2.0 / self.cfg.p),
            DistancePower::Order => cost,
        }
    }

    fn distance_slope(&self, cost: f64) -> f64 {
        match self.power {
            DistancePower::Squared => {
                let p = self.cfg.p;
                if p == 2.0 {
                    1.0
                } else if cost > 0.0 {
                    (2.0 / p) * cost.powf(2.0 / p - 1.0)
                } else {
                    0.0
                }
            }
            DistancePower::Order => 1.0,
        }
    }
}

pub(crate) struct Objective<'a> {
    pub topo: &'a MeshTopology,
    pub theta_plus: u32,
    pub theta_minus: u32,
    pub params: &'a HelfrichParams,
    pub kappa_mass: f64,
    pub kappa_volume: f64,
    pub kappa_symmetry: f64,
    pub volume_target: Option<f64>,
    pub symmetry: Option<&'a SymmetryGroup>,
    pub transport: Option<TransportTerm<'a>>,
    pub layout: AtomLayout,
    pub fd_step: f64,
    pub min_face_area: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub objective: f64,
    pub energy: f64,
    /// Plan cost W_p^p (0 without a transport term).
    pub plan_cost: f64,
    pub atoms: Vec<Atom>,
    pub plan: Option<TransportPlan>,
}

impl Objective<'_> {
    fn theta_sum(&self) -> f64 {
        (self.theta_plus + self.theta_minus) as f64
    }

    fn theta_diff(&self) -> f64 {
        self.theta_plus as f64 - self.theta_minus as f64
    }

    /// Energy of the star of `v` without the topological Gauss term.
    fn star_energy(&self, v: usize, pos: impl Fn(usize) -> Vec3) -> f64 {
        let s = vertex_curvature_by(self.topo, v, pos);
        vertex_energy(s.area, s.mean(), 0.0, self.theta_sum(), self.theta_diff(), self.params)
    }

    pub fn energy(&self, x: &[Vec3]) -> Option<f64> {
        let vals: Vec<(f64, f64)> = (0..x.len())
            .into_par_iter()
            .map(|v| {
                let s = vertex_curvature_by(self.topo, v, |i| x[i]);
                (s.area, vertex_energy(s.area, s.mean(), s.angle_defect, self.theta_sum(), self.theta_diff(), self.params))
            })
            .collect();
        let mut e = 0.0;
        for (a, ev) in vals {
            if !(a > 0.0) || !ev.is_finite() {
                return None;
            }
            e += ev;
        }
        Some(e)
    }

    fn degenerate(&self, x: &[Vec3]) -> bool {
        self.topo.faces().iter().any(|f| {
            let a2 = (x[f[1]] - x[f[0]]).cross(&(x[f[2]] - x[f[0]])).norm();
            !(0.5 * a2 > self.min_face_area)
        })
    }

    pub fn mass(&self, x: &[Vec3]) -> f64 {
        self.theta_sum() * area(self.topo, x)
    }

    pub fn volume(&self, x: &[Vec3]) -> f64 {
        self.theta_diff() * signed_volume(self.topo, x)
    }

    fn penalties(&self, x: &[Vec3]) -> f64 {
        let mut p = self.kappa_mass * (self.mass(x) - self.params.m0).powi(2);
        if let Some(v0) = self.volume_target {
            p += self.kappa_volume * (self.volume(x) - v0).powi(2);
        }
        if let Some(g) = self.symmetry {
            if g.order() > 1 {
                p += self.kappa_symmetry * g.defect_penalty(x).0;
            }
        }
        p
    }

    pub fn value(&self, x: &[Vec3]) -> Option<Eval> {
        if self.degenerate(x) {
            return None;
        }
        let energy = self.energy(x)?;
        let mut objective = energy + self.penalties(x);
        let atoms = self.layout.atoms(self.topo, x);
        let (plan_cost, plan) = match &self.transport {
            Some(t) => {
                let a: Vec<f64> = atoms.iter().map(|x| x.w).collect();
                let b: Vec<f64> = t.prev.atoms().iter().map(|x| x.w).collect();
                let cost = cost_matrix(&atoms, t.prev.atoms(), t.cfg.p);
                let plan = if t.cfg.solver == Solver::Exact {
                    let mut basis = t.basis.lock().expect("basis lock");
                    solve_exact_warm(&a, &b, &cost, &mut basis).ok()?
                } else {
                    solve_rescaled(&a, &b, &cost, &t.cfg).ok()?
                };
                objective += t.distance(plan.cost) / (2.0 * t.tau);
                (plan.cost, Some(plan))
            }
            None => (0.0, None),
        };
        if !objective.is_finite() {
            return None;
        }
        Some(Eval { objective, energy, plan_cost, atoms, plan })
    }

    /// Central differences of the star energies, one vertex at a time.
    fn energy_gradient(&self, x: &[Vec3]) -> Vec<Vec3> {
        let h = self.fd_step;
        (0..x.len())
            .into_par_iter()
            .map(|u| {
                let mut g = Vec3::zeros();
                for k in 0..3 {
                    let mut side = [0.0; 2];
                    for (slot, sgn) in [(0, 1.0), (1, -1.0)] {
                        let mut xu = x[u];
                        xu[k] += sgn * h;
                        let pos = |i: usize| if i == u { xu } else { x[i] };
                        let mut e = self.star_energy(u, pos);
                        for &v in self.topo.neighbors(u) {
                            e += self.star_energy(v, pos);
                        }
                        side[slot] = e;
                    }
                    g[k] = (side[0] - side[1]) / (2.0 * h);
                }
                g
            })
            .collect()
    }

    pub fn gradient(&self, x: &[Vec3], ev: &Eval) -> Vec<Vec3> {
        let mut g = self.energy_gradient(x);

        let ga = area_gradient(self.topo, x);
        let cm = 2.0 * self.kappa_mass * (self.mass(x) - self.params.m0) * self.theta_sum();
        if let Some(v0) = self.volume_target {
            let gv = volume_gradient(self.topo, x);
            let cv = 2.0 * self.kappa_volume * (self.volume(x) - v0) * self.theta_diff();
            for v in 0..x.len() {
                g[v] += gv[v] * cv;
            }
        }
        for v in 0..x.len() {
            g[v] += ga[v] * cm;
        }
        if let Some(grp) = self.symmetry {
            if grp.order() > 1 {
                let (_, gs) = grp.defect_penalty(x);
                for v in 0..x.len() {
                    g[v] += gs[v] * self.kappa_symmetry;
                }
            }
        }

        if let (Some(t), Some(plan)) = (&self.transport, &ev.plan) {
            let scale = t.distance_slope(ev.plan_cost) / (2.0 * t.tau);
            if scale > 0.0 {
                self.add_transport_gradient(x, ev, t, plan, scale, &mut g);
            }
        }
        g
    }

    fn add_transport_gradient(&self, x: &[Vec3], ev: &Eval, t: &TransportTerm, plan: &TransportPlan, scale: f64, g: &mut [Vec3]) {
        let p = t.cfg.p;
        let n = ev.atoms.len();
        let mut gx = vec![Vec3::zeros(); n];
        let mut gn = vec![Vec3::zeros(); n];
        for &(i, j, mass) in &plan.entries {
            let (a, b) = (&ev.atoms[i], &t.prev.atoms()[j]);
            let dx = a.x - b.x;
            let dn = a.nu - b.nu;
            let (lx, ln) = (dx.norm(), dn.norm());
            let d = lx + ln;
            if d == 0.0 {
                continue;
            }
            let coef = mass * p * d.powf(p - 1.0);
            if lx > 0.0 {
                gx[i] += dx * (coef / lx);
            }
            if ln > 0.0 {
                gn[i] += dn * (coef / ln);
            }
        }
        // derivative of the optimal cost in the source weights, with the
        // target rescaled to the source mass
        let m: f64 = ev.atoms.iter().map(|a| a.w).sum();
        let mb: f64 = t.prev.atoms().iter().map(|a| a.w).sum();
        let gbar: f64 =
            t.prev.atoms().iter().zip(&plan.target_potential).map(|(b, gj)| b.w * (m / mb) * gj).sum::<f64>() / m;

        for (i, src) in self.layout.entries.iter().enumerate() {
            let f = self.topo.faces()[src.face];
            let (a, b, c) = (x[f[0]], x[f[1]], x[f[2]]);
            let cross = (b - a).cross(&(c - a));
            let len = cross.norm();
            let nhat = cross / len;
            for k in 0..3 {
                g[f[k]] += gx[i] * (src.bary[k] * scale);
            }
            let gnu = gn[i] * src.sign;
            let u = (gnu - nhat * nhat.dot(&gnu)) / len;
            g[f[0]] += (b - c).cross(&u) * scale;
            g[f[1]] += (c - a).cross(&u) * scale;
            g[f[2]] += (a - b).cross(&u) * scale;
            let dw = (plan.source_potential[i] + gbar) * 0.5 * src.density * scale;
            g[f[0]] += (b - c).cross(&nhat) * dw;
            g[f[1]] += (c - a).cross(&nhat) * dw;
            g[f[2]] += (a - b).cross(&nhat) * dw;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate::{perturbed_sphere, RadialPerturbation};
    use crate::transport::Solver;
    use crate::varifold::sample_particles;
    use rand::{Rng, SeedableRng};

    fn directional_check(p: f64, power: DistancePower, theta: (u32, u32)) {
        let params = HelfrichParams::new(1.0, -0.5, -0.3, 4.0 * std::f64::consts::PI).unwrap();
        let prev = perturbed_sphere(1, RadialPerturbation::new(0.1, 3), 1).unwrap().with_multiplicity(theta.0, theta.1).unwrap();
        let cur = perturbed_sphere(1, RadialPerturbation::new(0.12, 4), 1).unwrap().with_multiplicity(theta.0, theta.1).unwrap();
        let prev_atoms = sample_particles(&prev, QuadratureRule::Centroid).unwrap();
        let topo = cur.topology();
        let obj = Objective {
            topo,
            theta_plus: theta.0,
            theta_minus: theta.1,
            params: &params,
            kappa_mass: 3.0,
            kappa_volume: 2.0,
            kappa_symmetry: 0.0,
            volume_target: Some(3.0),
            symmetry: None,
            transport: Some(TransportTerm {
                prev: &prev_atoms,
                tau: 0.1,
                cfg: TransportConfig { p, solver: Solver::Exact, ..TransportConfig::default() },
                power,
                basis: Default::default(),
            }),
            layout: AtomLayout::new(topo, theta.0, theta.1, QuadratureRule::Centroid),
            fd_step: 1e-6,
            min_face_area: 0.0,
        };
        let x = cur.positions().to_vec();
        let ev = obj.value(&x).unwrap();
        let g = obj.gradient(&x, &ev);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let d: Vec<Vec3> = (0..x.len()).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()) - Vec3::repeat(0.5)).collect();
        let h = 1e-6;
        let shift = |s: f64| x.iter().zip(&d).map(|(a, b)| a + b * s).collect::<Vec<_>>();
        let fd = (obj.value(&shift(h)).unwrap().objective - obj.value(&shift(-h)).unwrap().objective) / (2.0 * h);
        let an: f64 = g.iter().zip(&d).map(|(a, b)| a.dot(b)).sum();
        assert!((fd - an).abs() < 1e-5 * (1.0 + fd.abs()), "fd {fd} analytic {an}");
    }

    #[test]
    fn gradient_matches_objective_p2() {
        directional_check(2.0, DistancePower::Squared, (1, 0));
    }

    #[test]
    fn gradient_matches_objective_two_sheets() {
        directional_check(2.0, DistancePower::Squared, (2, 1));
    }

    #[test]
    fn gradient_matches_objective_p3() {
        directional_check(3.0, DistancePower::Squared, (1, 0));
        directional_check(3.0, DistancePower::Order, (1, 0));
    }
}
