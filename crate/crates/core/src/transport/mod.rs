//! Wasserstein distances on position-normal space.
//!
//! The ground distance between atoms is `|x - y| + |nu - mu|`. Two solvers are
//! available: an exact network simplex on the dense bipartite graph, and
//! log-domain Sinkhorn with the regularization given relative to the mean
//! ground cost.

mod simplex;
mod sinkhorn;

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mesh::Vec3;
use crate::varifold::{Atom, ParticleVarifold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Exact,
    Entropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub p: f64,
    pub solver: Solver,
    /// Entropic regularization as a fraction of the mean ground cost.
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { p: 2.0, solver: Solver::Exact, epsilon: 1e-2, max_iter: 100_000, tol: 1e-9 }
    }
}

impl TransportConfig {
    pub fn exact(p: f64) -> Self {
        Self { p, ..Self::default() }
    }

    pub fn entropic(p: f64, epsilon: f64) -> Self {
        Self { p, solver: Solver::Entropic, epsilon, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return domain(format!("transport order p must be >= 1, got {}", self.p));
        }
        if self.solver == Solver::Entropic && !(self.epsilon > 0.0) {
            return domain(format!("entropic epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.tol > 0.0) {
            return domain(format!("transport tol must be positive, got {}", self.tol));
        }
        Ok(())
    }
}

/// Sparse coupling between two atom lists.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// (i, j, mass) with mass > 0.
    pub entries: Vec<(usize, usize, f64)>,
    /// Integral of the ground cost to the power p.
    pub cost: f64,
    /// Kantorovich potentials, `f_i + g_j <= c_ij` (approximately for the entropic solver).
    pub source_potential: Vec<f64>,
    pub target_potential: Vec<f64>,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for &(i, _, x) in &self.entries {
            s[i] += x;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for &(_, j, x) in &self.entries {
            s[j] += x;
        }
        s
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Domain(e.to_string());
        wtr.write_record(["i", "j", "mass"]).map_err(err)?;
        for &(i, j, x) in &self.entries {
            wtr.write_record([i.to_string(), j.to_string(), format!("{x:?}")]).map_err(err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// (|x - y| + |nu - mu|)^p
#[inline]
pub fn ground_cost(a: &Atom, b: &Atom, p: f64) -> f64 {
    let d = (a.x - b.x).norm() + (a.nu - b.nu).norm();
    powp(d, p)
}

#[inline]
pub(crate) fn powp(d: f64, p: f64) -> f64 {
    if p == 1.0 {
        d
    } else if p == 2.0 {
        d * d
    } else {
        d.powf(p)
    }
}

fn check_masses(m1: f64, m2: f64) -> Result<()> {
    if !(m1 > 0.0) || !((m1 - m2).abs() <= 1e-9 * m1) {
        return Err(Error::MassMismatch { source_mass: m1, target_mass: m2 });
    }
    Ok(())
}

/// Solves the transport problem between weights `a` and `b` for a dense
/// row-major cost matrix. `b` is rescaled to the mass of `a`.
pub fn solve_dense(a: &[f64], b: &[f64], cost: &[f64], cfg: &TransportConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return domain("transport between empty measures");
    }
    if cost.len() != n1 * n2 {
        return domain("cost matrix has the wrong size");
    }
    let ma: f64 = a.iter().sum();
    let mb: f64 = b.iter().sum();
    check_masses(ma, mb)?;
    solve_rescaled(a, b, cost, cfg)
}

/// As [`solve_dense`] for measures of any positive masses: `b` is rescaled
/// to the mass of `a` without a mismatch check.
pub(crate) fn solve_rescaled(a: &[f64], b: &[f64], cost: &[f64], cfg: &TransportConfig) -> Result<TransportPlan> {
    let (n1, n2) = (a.len(), b.len());
    let ma: f64 = a.iter().sum();
    let mb: f64 = b.iter().sum();
    if !(ma > 0.0 && mb > 0.0) {
        return Err(Error::MassMismatch { source_mass: ma, target_mass: mb });
    }
    let b: Vec<f64> = b.iter().map(|x| x * (ma / mb)).collect();

    match cfg.solver {
        Solver::Exact => {
            let max_pivots = 50 * (n1 + n2) * (n1 + n2) + 10_000;
            let sol = simplex::solve(a, &b, cost, max_pivots)?;
            log::trace!("network simplex: {} pivots on {}x{}", sol.pivots, n1, n2);
            let total = sol.flows.iter().map(|&(i, j, x)| x * cost[i * n2 + j]).sum();
            Ok(TransportPlan {
                rows: n1,
                cols: n2,
                entries: sol.flows,
                cost: total,
                source_potential: sol.f,
                target_potential: sol.g,
            })
        }
        Solver::Entropic => {
            let pa: Vec<f64> = a.iter().map(|x| x / ma).collect();
            let pb: Vec<f64> = b.iter().map(|x| x / ma).collect();
            let mean = cost.iter().sum::<f64>() / cost.len() as f64;
            let eps = cfg.epsilon * if mean > 0.0 { mean } else { 1.0 };
            let sol = sinkhorn::solve(&pa, &pb, cost, eps, cfg.max_iter, cfg.tol)?;
            log::trace!("sinkhorn: {} iterations", sol.iterations);
            let mut entries = Vec::new();
            let mut total = 0.0;
            for i in 0..n1 {
                for j in 0..n2 {
                    let x = sol.plan[i * n2 + j] * ma;
                    if x > 0.0 {
                        total += x * cost[i * n2 + j];
                        entries.push((i, j, x));
                    }
                }
            }
            Ok(TransportPlan {
                rows: n1,
                cols: n2,
                entries,
                cost: total,
                source_potential: sol.f,
                target_potential: sol.g,
            })
        }
    }
}

/// Exact solve of the rescaled problem, warm-started from and updating `basis`.
pub(crate) fn solve_exact_warm(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    basis: &mut Option<Vec<(usize, usize)>>,
) -> Result<TransportPlan> {
    let (n1, n2) = (a.len(), b.len());
    let ma: f64 = a.iter().sum();
    let mb: f64 = b.iter().sum();
    if !(ma > 0.0 && mb > 0.0) {
        return Err(Error::MassMismatch { source_mass: ma, target_mass: mb });
    }
    let b: Vec<f64> = b.iter().map(|x| x * (ma / mb)).collect();
    let max_pivots = 50 * (n1 + n2) * (n1 + n2) + 10_000;
    // a warm start that needs more pivots than a cold one is abandoned
    let warm_limit = 10 * (n1 + n2) + 1000;
    let sol = match basis.as_deref() {
        Some(arcs) => match simplex::solve_from(a, &b, cost, warm_limit, Some(arcs)) {
            Err(Error::PivotLimit(_)) => simplex::solve(a, &b, cost, max_pivots)?,
            other => other?,
        },
        None => simplex::solve(a, &b, cost, max_pivots)?,
    };
    log::trace!("network simplex (warm): {} pivots on {}x{}", sol.pivots, n1, n2);
    let total = sol.flows.iter().map(|&(i, j, x)| x * cost[i * n2 + j]).sum();
    *basis = Some(sol.basis);
    Ok(TransportPlan { rows: n1, cols: n2, entries: sol.flows, cost: total, source_potential: sol.f, target_potential: sol.g })
}

pub(crate) fn cost_matrix(v: &[Atom], w: &[Atom], p: f64) -> Vec<f64> {
    let n2 = w.len();
    // structure-of-arrays copy of the targets so that rows vectorize
    let col = |f: fn(&Atom) -> f64| w.iter().map(f).collect::<Vec<f64>>();
    let (wx, wy, wz) = (col(|a| a.x.x), col(|a| a.x.y), col(|a| a.x.z));
    let (nx, ny, nz) = (col(|a| a.nu.x), col(|a| a.nu.y), col(|a| a.nu.z));
    let mut c = vec![0.0; v.len() * n2];
    c.par_chunks_mut(n2.max(1)).zip(v.par_iter()).for_each(|(row, a)| {
        for j in 0..row.len() {
            let (dx, dy, dz) = (a.x.x - wx[j], a.x.y - wy[j], a.x.z - wz[j]);
            let (ex, ey, ez) = (a.nu.x - nx[j], a.nu.y - ny[j], a.nu.z - nz[j]);
            row[j] = (dx * dx + dy * dy + dz * dz).sqrt() + (ex * ex + ey * ey + ez * ez).sqrt();
        }
        if p == 2.0 {
            row.iter_mut().for_each(|d| *d *= *d);
        } else if p != 1.0 {
            row.iter_mut().for_each(|d| *d = d.powf(p));
        }
    });
    c
}

/// W_p on R^3 x S^2 with the optimal plan.
pub fn wasserstein(v: &ParticleVarifold, w: &ParticleVarifold, cfg: &TransportConfig) -> Result<(f64, TransportPlan)> {
    let a: Vec<f64> = v.atoms().iter().map(|x| x.w).collect();
    let b: Vec<f64> = w.atoms().iter().map(|x| x.w).collect();
    check_masses(v.mass(), w.mass())?;
    let cost = cost_matrix(v.atoms(), w.atoms(), cfg.p);
    let plan = solve_dense(&a, &b, &cost, cfg)?;
    Ok((plan.cost.max(0.0).powf(1.0 / cfg.p), plan))
}

/// Spatial marginal: positions with summed weights, coincident points merged.
pub fn spatial_marginal(v: &ParticleVarifold) -> Vec<(Vec3, f64)> {
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut out: Vec<(Vec3, f64)> = Vec::new();
    for a in v.atoms() {
        let key = [0, 1, 2].map(|k| (a.x[k] / 1e-12).round() as i64);
        match index.get(&key) {
            Some(&i) => out[i].1 += a.w,
            None => {
                index.insert(key, out.len());
                out.push((a.x, a.w));
            }
        }
    }
    out
}

/// W_p between the spatial marginals, ground cost |x - y|^p.
pub fn wasserstein_spatial(v: &ParticleVarifold, w: &ParticleVarifold, cfg: &TransportConfig) -> Result<f64> {
    check_masses(v.mass(), w.mass())?;
    let sv = spatial_marginal(v);
    let sw = spatial_marginal(w);
    let mut cost = Vec::with_capacity(sv.len() * sw.len());
    for (x, _) in &sv {
        for (y, _) in &sw {
            cost.push(powp((x - y).norm(), cfg.p));
        }
    }
    let a: Vec<f64> = sv.iter().map(|x| x.1).collect();
    let b: Vec<f64> = sw.iter().map(|x| x.1).collect();
    let plan = solve_dense(&a, &b, &cost, cfg)?;
    Ok(plan.cost.max(0.0).powf(1.0 / cfg.p))
}

/// `int f dV - int f dW` for a test function that is 1-Lipschitz on the
/// union of both atom sets; a lower bound for W_1.
pub fn dual_certificate_w1<F>(v: &ParticleVarifold, w: &ParticleVarifold, f: F) -> Result<f64>
where
    F: Fn(&Vec3, &Vec3) -> f64,
{
    let atoms: Vec<&Atom> = v.atoms().iter().chain(w.atoms()).collect();
    let vals: Vec<f64> = atoms.iter().map(|a| f(&a.x, &a.nu)).collect();
    for i in 0..atoms.len() {
        for j in i + 1..atoms.len() {
            let diff = (vals[i] - vals[j]).abs();
            let dist = (atoms[i].x - atoms[j].x).norm() + (atoms[i].nu - atoms[j].nu).norm();
            if diff > dist * (1.0 + 1e-12) + 1e-15 {
                return Err(Error::Lipschitz { i, j, diff, dist });
            }
        }
    }
    let nv = v.len();
    let sv: f64 = v.atoms().iter().zip(&vals[..nv]).map(|(a, x)| a.w * x).sum();
    let sw: f64 = w.atoms().iter().zip(&vals[nv..]).map(|(a, x)| a.w * x).sum();
    Ok(sv - sw)
}
