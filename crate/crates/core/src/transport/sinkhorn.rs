//! Log-domain Sinkhorn iterations with epsilon scaling.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub(crate) struct EntropicSolution {
    /// Dense plan, row-major, for probability marginals.
    pub plan: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
}

fn logsumexp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

struct State<'a> {
    n1: usize,
    n2: usize,
    cost: &'a [f64],
    log_a: Vec<f64>,
    log_b: Vec<f64>,
}

impl State<'_> {
    fn update_f(&self, g: &[f64], eps: f64, f: &mut [f64]) {
        let (n2, cost, lb) = (self.n2, self.cost, &self.log_b);
        f.par_iter_mut().enumerate().for_each(|(i, fi)| {
            let row = &cost[i * n2..(i + 1) * n2];
            *fi = -eps * logsumexp((0..n2).map(|j| lb[j] + (g[j] - row[j]) / eps));
        });
    }

    fn update_g(&self, f: &[f64], eps: f64, g: &mut [f64]) {
        let (n2, cost, la) = (self.n2, self.cost, &self.log_a);
        let n1 = self.n1;
        g.par_iter_mut().enumerate().for_each(|(j, gj)| {
            *gj = -eps * logsumexp((0..n1).map(|i| la[i] + (f[i] - cost[i * n2 + j]) / eps));
        });
    }

    /// L1 deviation of the row sums from `a` (columns are exact after a g update).
    fn row_residual(&self, f: &[f64], g: &[f64], eps: f64) -> f64 {
        let n2 = self.n2;
        let rows: Vec<f64> = (0..self.n1)
            .into_par_iter()
            .map(|i| {
                let row = &self.cost[i * n2..(i + 1) * n2];
                let s: f64 = (0..n2)
                    .map(|j| (self.log_a[i] + self.log_b[j] + (f[i] + g[j] - row[j]) / eps).exp())
                    .sum();
                (s - self.log_a[i].exp()).abs()
            })
            .collect();
        rows.iter().sum()
    }
}

/// Solves for probability vectors `a`, `b`. `eps` is absolute.
pub(crate) fn solve(a: &[f64], b: &[f64], cost: &[f64], eps: f64, max_iter: usize, tol: f64) -> Result<EntropicSolution> {
    let (n1, n2) = (a.len(), b.len());
    let st = State { n1, n2, cost, log_a: a.iter().map(|x| x.ln()).collect(), log_b: b.iter().map(|x| x.ln()).collect() };
    let mut f = vec![0.0; n1];
    let mut g = vec![0.0; n2];
    let mean_cost = cost.iter().sum::<f64>() / cost.len() as f64;

    // warm start through a geometric schedule of temperatures
    let mut stage = mean_cost.max(eps);
    let mut iterations = 0;
    while stage > eps {
        for _ in 0..50 {
            st.update_f(&g, stage, &mut f);
            st.update_g(&f, stage, &mut g);
            iterations += 1;
        }
        stage = (stage * 0.5).max(eps);
        if stage == eps {
            break;
        }
    }

    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        st.update_f(&g, eps, &mut f);
        st.update_g(&f, eps, &mut g);
        iterations += 1;
        residual = st.row_residual(&f, &g, eps);
        if residual < tol {
            let mut plan = vec![0.0; n1 * n2];
            plan.par_chunks_mut(n2).enumerate().for_each(|(i, row)| {
                for j in 0..n2 {
                    row[j] = (st.log_a[i] + st.log_b[j] + (f[i] + g[j] - cost[i * n2 + j]) / eps).exp();
                }
            });
            round_to_marginals(&mut plan, a, b);
            return Ok(EntropicSolution { plan, f, g, iterations });
        }
    }
    if !residual.is_finite() {
        residual = st.row_residual(&f, &g, eps);
    }
    Err(Error::NotConverged { iterations, residual })
}

/// Projects an approximate coupling onto the exact transport polytope:
/// scale overfull rows and columns down, then distribute the deficits.
fn round_to_marginals(plan: &mut [f64], a: &[f64], b: &[f64]) {
    let n2 = b.len();
    for (i, row) in plan.chunks_mut(n2).enumerate() {
        let s: f64 = row.iter().sum();
        if s > a[i] {
            row.iter_mut().for_each(|x| *x *= a[i] / s);
        }
    }
    let mut cols = vec![0.0; n2];
    for row in plan.chunks(n2) {
        cols.iter_mut().zip(row).for_each(|(c, x)| *c += x);
    }
    for (j, &c) in cols.iter().enumerate() {
        if c > b[j] {
            let r = b[j] / c;
            plan.iter_mut().skip(j).step_by(n2).for_each(|x| *x *= r);
        }
    }
    let mut dr: Vec<f64> = plan.chunks(n2).zip(a).map(|(row, ai)| (ai - row.iter().sum::<f64>()).max(0.0)).collect();
    let mut dc = vec![0.0; n2];
    for row in plan.chunks(n2) {
        dc.iter_mut().zip(row).for_each(|(c, x)| *c += x);
    }
    dc.iter_mut().zip(b).for_each(|(c, bj)| *c = (bj - *c).max(0.0));
    let total: f64 = dr.iter().sum();
    if total > 0.0 {
        dr.iter_mut().for_each(|x| *x /= total);
        for (row, r) in plan.chunks_mut(n2).zip(&dr) {
            row.iter_mut().zip(&dc).for_each(|(x, c)| *x += r * c);
        }
    }
}
