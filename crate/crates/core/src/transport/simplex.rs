//! Primal network simplex for the dense transportation problem.
//!
//! Nodes `0..n1` are sources, `n1..n1+n2` sinks. The spanning tree is rooted
//! at source 0; every non-root node `u` stores the tree arc to its parent and
//! the flow on it. Arcs always run source to sink, so `u < n1` means the arc
//! points from `u` up to its parent.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

pub(crate) struct ExactSolution {
    /// (source, sink, flow) for every basic arc with positive flow.
    pub flows: Vec<(usize, usize, f64)>,
    /// Dual potentials with `f_i + g_j <= c_ij`, tight on the support.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub pivots: usize,
    /// All `n1 + n2 - 1` basic arcs (source, sink), including degenerate ones.
    pub basis: Vec<(usize, usize)>,
}

struct Tree<'a> {
    n1: usize,
    n2: usize,
    cost: &'a [f64],
    parent: Vec<usize>,
    flow: Vec<f64>,
    pi: Vec<f64>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    child_pos: Vec<usize>,
}

impl<'a> Tree<'a> {
    #[inline]
    fn is_source(&self, u: usize) -> bool {
        u < self.n1
    }

    /// Cost of the arc between `u` and `v` (one source, one sink).
    #[inline]
    fn arc_cost(&self, u: usize, v: usize) -> f64 {
        let (s, t) = if u < self.n1 { (u, v) } else { (v, u) };
        self.cost[s * self.n2 + (t - self.n1)]
    }

    #[inline]
    fn potential_from_parent(&self, u: usize, p: usize) -> f64 {
        let c = self.arc_cost(u, p);
        if self.is_source(u) {
            self.pi[p] - c
        } else {
            self.pi[p] + c
        }
    }

    fn detach(&mut self, u: usize) {
        let p = self.parent[u];
        let pos = self.child_pos[u];
        self.children[p].swap_remove(pos);
        if let Some(&moved) = self.children[p].get(pos) {
            self.child_pos[moved] = pos;
        }
    }

    fn attach(&mut self, u: usize, p: usize) {
        self.parent[u] = p;
        self.child_pos[u] = self.children[p].len();
        self.children[p].push(u);
    }

    fn join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] < self.depth[v] {
                v = self.parent[v];
            } else {
                u = self.parent[u];
            }
        }
        u
    }

    /// Recomputes depth and potentials below `top`.
    fn refresh_subtree(&mut self, top: usize, stack: &mut Vec<usize>) {
        stack.clear();
        stack.push(top);
        while let Some(u) = stack.pop() {
            let p = self.parent[u];
            self.pi[u] = self.potential_from_parent(u, p);
            self.depth[u] = self.depth[p] + 1;
            stack.extend_from_slice(&self.children[u]);
        }
    }
}

/// North-west corner rule; ties advance the column so that the starting
/// basis is strongly feasible in index order.
fn north_west(a: &[f64], b: &[f64]) -> Vec<(usize, usize, f64)> {
    let (n1, n2) = (a.len(), b.len());
    let mut ra = a.to_vec();
    let mut rb = b.to_vec();
    let mut arcs = Vec::with_capacity(n1 + n2 - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra[i].min(rb[j]);
        arcs.push((i, j, x));
        ra[i] -= x;
        rb[j] -= x;
        if i == n1 - 1 && j == n2 - 1 {
            break;
        }
        if j == n2 - 1 || (i < n1 - 1 && ra[i] < rb[j]) {
            rb[j] = rb[j].max(0.0);
            i += 1;
        } else {
            j += 1;
        }
    }
    arcs
}

/// min_j (c_j - p_j), written so that it vectorizes.
#[inline]
fn row_minimum(c: &[f64], p: &[f64]) -> f64 {
    let n = c.len().min(p.len());
    let (c, p) = (&c[..n], &p[..n]);
    let mut lanes = [f64::INFINITY; 8];
    let mut cc = c.chunks_exact(8);
    let mut pc = p.chunks_exact(8);
    for (cb, pb) in (&mut cc).zip(&mut pc) {
        for k in 0..8 {
            let v = cb[k] - pb[k];
            lanes[k] = if v < lanes[k] { v } else { lanes[k] };
        }
    }
    let mut m = f64::INFINITY;
    for (x, y) in cc.remainder().iter().zip(pc.remainder()) {
        let v = x - y;
        m = if v < m { v } else { m };
    }
    lanes.iter().fold(m, |a, &b| if b < a { b } else { a })
}

/// Flows on a spanning tree given by its arcs, or `None` if the arcs do not
/// form a spanning tree or the flows are infeasible.
fn tree_flows(a: &[f64], b: &[f64], arcs: &[(usize, usize)]) -> Option<Vec<(usize, usize, f64)>> {
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    if arcs.len() != n - 1 {
        return None;
    }
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, &(i, j)) in arcs.iter().enumerate() {
        if i >= n1 || j >= n2 {
            return None;
        }
        incident[i].push(e);
        incident[n1 + j].push(e);
    }
    let mut degree: Vec<usize> = incident.iter().map(Vec::len).collect();
    let mut supply: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut flow = vec![f64::NAN; arcs.len()];
    let mut leaves: Vec<usize> = (0..n).filter(|&u| degree[u] == 1).collect();
    let mut assigned = 0;
    while let Some(u) = leaves.pop() {
        if degree[u] != 1 {
            continue;
        }
        let Some(&e) = incident[u].iter().find(|&&e| flow[e].is_nan()) else {
            continue;
        };
        let (i, j) = arcs[e];
        let other = if u < n1 { n1 + j } else { i };
        flow[e] = supply[u];
        supply[other] -= supply[u];
        supply[u] = 0.0;
        degree[u] = 0;
        degree[other] -= 1;
        assigned += 1;
        if degree[other] == 1 {
            leaves.push(other);
        }
    }
    if assigned != n - 1 {
        return None;
    }
    let mass: f64 = a.iter().sum();
    if flow.iter().any(|&x| x < -1e-13 * mass) {
        return None;
    }
    Some(arcs.iter().zip(flow).map(|(&(i, j), x)| (i, j, x.max(0.0))).collect())
}

pub(crate) fn solve(a: &[f64], b: &[f64], cost: &[f64], max_pivots: usize) -> Result<ExactSolution> {
    solve_from(a, b, cost, max_pivots, None)
}

/// Network simplex started from `warm` when it is a feasible basis, from the
/// north-west corner otherwise.
pub(crate) fn solve_from(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    max_pivots: usize,
    warm: Option<&[(usize, usize)]>,
) -> Result<ExactSolution> {
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    debug_assert_eq!(cost.len(), n1 * n2);

    let basis = warm.and_then(|arcs| tree_flows(a, b, arcs)).unwrap_or_else(|| north_west(a, b));
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, x) in &basis {
        adj[i].push((n1 + j, x));
        adj[n1 + j].push((i, x));
    }
    let mut t = Tree {
        n1,
        n2,
        cost,
        parent: vec![NONE; n],
        flow: vec![0.0; n],
        pi: vec![0.0; n],
        depth: vec![0; n],
        children: vec![Vec::new(); n],
        child_pos: vec![0; n],
    };
    let mut order = vec![0usize];
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        for k in 0..adj[u].len() {
            let (v, x) = adj[u][k];
            if !seen[v] {
                seen[v] = true;
                t.attach(v, u);
                t.flow[v] = x;
                t.depth[v] = t.depth[u] + 1;
                t.pi[v] = t.potential_from_parent(v, u);
                order.push(v);
            }
        }
    }
    debug_assert_eq!(order.len(), n);

    let max_cost = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let eps = max_cost * 1e-15 * (n as f64).max(10.0);
    let block_rows = (((n1 * n2) as f64).sqrt() as usize / n2.max(1)).max(1);
    let mut next_row = 0usize;
    let mut pivots = 0usize;
    let mut stack = Vec::new();

    loop {
        // block pricing over whole rows
        let mut best = -eps;
        let mut entering = NONE;
        let mut row = next_row;
        let mut rows_in_block = 0;
        for _ in 0..n1 {
            let pi_sink = &t.pi[n1..];
            let crow = &cost[row * n2..(row + 1) * n2];
            let shift = t.pi[row];
            let row_min = row_minimum(crow, pi_sink) + shift;
            if row_min < best {
                best = row_min;
                let j = crow.iter().zip(pi_sink).position(|(c, p)| c - p + shift == row_min).expect("row minimum");
                entering = row * n2 + j;
            }
            row = if row + 1 == n1 { 0 } else { row + 1 };
            rows_in_block += 1;
            if rows_in_block >= block_rows {
                if entering != NONE {
                    break;
                }
                rows_in_block = 0;
            }
        }
        if entering == NONE {
            break;
        }
        next_row = row;
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::PivotLimit(max_pivots));
        }

        let s = entering / n2;
        let k = n1 + entering % n2;
        let top = t.join(s, k);

        // ratio test along the cycle s -> k -> ... -> top -> ... -> s
        let mut delta = f64::INFINITY;
        let mut leave = NONE;
        let mut leave_on_source_side = true;
        let mut u = s;
        while u != top {
            if t.is_source(u) && t.flow[u] < delta {
                delta = t.flow[u];
                leave = u;
            }
            u = t.parent[u];
        }
        u = k;
        while u != top {
            if !t.is_source(u) && t.flow[u] <= delta {
                delta = t.flow[u];
                leave = u;
                leave_on_source_side = false;
            }
            u = t.parent[u];
        }

        if delta > 0.0 {
            let mut u = s;
            while u != top {
                t.flow[u] += if t.is_source(u) { -delta } else { delta };
                u = t.parent[u];
            }
            u = k;
            while u != top {
                t.flow[u] += if t.is_source(u) { delta } else { -delta };
                u = t.parent[u];
            }
            t.flow[leave] = 0.0;
        }

        // re-hang the path from the entering endpoint up to the leaving arc
        let (u_in, v_in) = if leave_on_source_side { (s, k) } else { (k, s) };
        let mut u = u_in;
        let mut new_parent = v_in;
        let mut carried = delta;
        loop {
            let old_parent = t.parent[u];
            let old_flow = t.flow[u];
            t.detach(u);
            t.attach(u, new_parent);
            t.flow[u] = carried;
            if u == leave {
                break;
            }
            new_parent = u;
            carried = old_flow;
            u = old_parent;
        }
        t.refresh_subtree(u_in, &mut stack);
    }

    let mut flows = Vec::with_capacity(n - 1);
    let mut basis = Vec::with_capacity(n - 1);
    for u in 1..n {
        let x = t.flow[u];
        let p = t.parent[u];
        let (s, k) = if u < n1 { (u, p) } else { (p, u) };
        basis.push((s, k - n1));
        if x > 0.0 {
            flows.push((s, k - n1, x));
        }
    }
    flows.sort_unstable_by_key(|&(i, j, _)| (i, j));
    let f = t.pi[..n1].iter().map(|x| -x).collect();
    let g = t.pi[n1..].to_vec();
    Ok(ExactSolution { flows, f, g, pivots, basis })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(sol: &ExactSolution, cost: &[f64], n2: usize) -> f64 {
        sol.flows.iter().map(|&(i, j, x)| x * cost[i * n2 + j]).sum()
    }

    #[test]
    fn two_by_two_swaps_to_diagonal() {
        let a = [1.0, 1.0];
        let b = [1.0, 1.0];
        let cost = [5.0, 0.0, 0.0, 5.0];
        let sol = solve(&a, &b, &cost, 100).unwrap();
        assert_eq!(total(&sol, &cost, 2), 0.0);
    }

    #[test]
    fn marginals_and_complementary_slackness() {
        let a = [0.2, 0.5, 0.3];
        let b = [0.4, 0.1, 0.25, 0.25];
        let cost: Vec<f64> = (0..12).map(|k| ((k * 7919) % 13) as f64 + 0.5).collect();
        let sol = solve(&a, &b, &cost, 1000).unwrap();
        let mut rows = [0.0; 3];
        let mut cols = [0.0; 4];
        for &(i, j, x) in &sol.flows {
            rows[i] += x;
            cols[j] += x;
            assert!((sol.f[i] + sol.g[j] - cost[i * 4 + j]).abs() < 1e-12);
        }
        for i in 0..3 {
            assert!((rows[i] - a[i]).abs() < 1e-14);
            for j in 0..4 {
                assert!(sol.f[i] + sol.g[j] <= cost[i * 4 + j] + 1e-12);
            }
        }
        for j in 0..4 {
            assert!((cols[j] - b[j]).abs() < 1e-14);
        }
        let dual: f64 = a.iter().zip(&sol.f).map(|(x, y)| x * y).sum::<f64>()
            + b.iter().zip(&sol.g).map(|(x, y)| x * y).sum::<f64>();
        assert!((dual - total(&sol, &cost, 4)).abs() < 1e-12);
    }

    #[test]
    fn warm_start_reaches_the_same_optimum() {
        let a = [0.3, 0.3, 0.4];
        let b = [0.25, 0.25, 0.5];
        let cost: Vec<f64> = (0..9).map(|k| ((k * 31) % 11) as f64).collect();
        let cold = solve(&a, &b, &cost, 1000).unwrap();
        let perturbed: Vec<f64> = cost.iter().enumerate().map(|(k, c)| c + 0.3 * (k % 2) as f64).collect();
        let warm = solve_from(&a, &b, &perturbed, 1000, Some(&cold.basis)).unwrap();
        let fresh = solve(&a, &b, &perturbed, 1000).unwrap();
        assert!((total(&warm, &perturbed, 3) - total(&fresh, &perturbed, 3)).abs() < 1e-14);
        assert_eq!(solve_from(&a, &b, &cost, 1000, Some(&cold.basis)).unwrap().pivots, 0);
    }

    #[test]
    fn invalid_warm_basis_falls_back() {
        let a = [0.5, 0.5];
        let b = [0.5, 0.5];
        let cost = [1.0, 0.0, 0.0, 1.0];
        let sol = solve_from(&a, &b, &cost, 100, Some(&[(0, 0), (1, 1)])).unwrap();
        assert_eq!(total(&sol, &cost, 2), 0.0);
    }

    #[test]
    fn pivot_limit_is_reported() {
        let a = [1.0, 1.0, 1.0];
        let b = [1.0, 1.0, 1.0];
        let cost = [9.0, 1.0, 1.0, 1.0, 9.0, 1.0, 1.0, 1.0, 9.0];
        assert!(matches!(solve(&a, &b, &cost, 0), Err(Error::PivotLimit(0))));
    }
}
