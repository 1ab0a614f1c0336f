//! Metrics on states and grid paths, and exact order-2 Wasserstein distances
//! between finite discrete measures.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};

const MERGE_TOL: f64 = 1e-12;

/// Ground metric used by the transport routines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Metric {
    Euclid,
    /// `min(sup_k |x_k - y_k|, 1)` on stopped paths whose states live in
    /// `R^state_dim`; atoms are stored time-major.
    TruncatedSup { state_dim: usize },
}

impl Metric {
    /// Distance between two points of equal length (not checked).
    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Metric::Euclid => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            Metric::TruncatedSup { state_dim } => {
                let d = state_dim.max(1);
                let mut sup = 0.0f64;
                for (xa, ya) in x.chunks(d).zip(y.chunks(d)) {
                    let s: f64 = xa.iter().zip(ya).map(|(a, b)| (a - b) * (a - b)).sum();
                    sup = sup.max(s.sqrt());
                }
                sup.min(1.0)
            }
        }
    }

    fn checked(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(x.len(), y.len()));
        }
        Ok(self.dist(x, y))
    }
}

pub fn metric_euclid(x: &[f64], y: &[f64]) -> Result<f64> {
    Metric::Euclid.checked(x, y)
}

/// Truncated sup distance between two scalar stopped paths.
pub fn metric_path(x: &[f64], y: &[f64]) -> Result<f64> {
    Metric::TruncatedSup { state_dim: 1 }.checked(x, y)
}

/// Finite measure with positive weights summing to one; atoms are stored
/// flat with stride `dim`, sorted lexicographically and merged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteLaw {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteLaw {
    pub fn new(dim: usize, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if let Some(a) = atoms.iter().find(|a| a.len() != dim) {
            return Err(Error::DimensionMismatch(a.len(), dim));
        }
        Self::from_flat(dim, &atoms.concat(), &weights)
    }

    /// Builds a law from flat atoms; zero weights are dropped and atoms that
    /// agree coordinatewise within `1e-12` are merged.
    pub fn from_flat(dim: usize, atoms: &[f64], weights: &[f64]) -> Result<Self> {
        let count = weights.len();
        if atoms.len() != count * dim.max(1) && !(dim == 0 && atoms.is_empty()) {
            return Err(Error::SizeMismatch(atoms.len(), count * dim));
        }
        if count == 0 {
            return Err(Error::InvalidInput("empty law".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("weights sum to {total}")));
        }
        let at = |i: usize| &atoms[i * dim..(i + 1) * dim];
        let mut order: Vec<usize> = (0..count).filter(|&i| weights[i] > 0.0).collect();
        order.sort_by(|&a, &b| {
            at(a).iter().zip(at(b)).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut out_atoms: Vec<f64> = Vec::with_capacity(order.len() * dim);
        let mut out_weights: Vec<f64> = Vec::with_capacity(order.len());
        for i in order {
            let a = at(i);
            let merge = match out_weights.len() {
                0 => false,
                m => {
                    let last = &out_atoms[(m - 1) * dim..m * dim];
                    last.iter().zip(a).all(|(x, y)| (x - y).abs() <= MERGE_TOL)
                }
            };
            if merge {
                *out_weights.last_mut().unwrap() += weights[i];
            } else {
                out_atoms.extend_from_slice(a);
                out_weights.push(weights[i]);
            }
        }
        Ok(Self { dim, atoms: out_atoms, weights: out_weights })
    }

    pub fn dirac(point: Vec<f64>) -> Self {
        Self { dim: point.len(), atoms: point, weights: vec![1.0] }
    }

    /// Empirical measure of the given points, each with mass `1/N`.
    pub fn empirical(dim: usize, points: &[f64]) -> Result<Self> {
        let n = if dim == 0 { 0 } else { points.len() / dim };
        if n == 0 || n * dim != points.len() {
            return Err(Error::SizeMismatch(points.len(), dim));
        }
        let mut w = vec![1.0 / n as f64; n];
        // make the weights sum to one exactly up to rounding of the last term
        let head: f64 = w[..n - 1].iter().sum();
        w[n - 1] = 1.0 - head;
        Self::from_flat(dim, points, &w)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (mj, a) in m.iter_mut().zip(self.atom(i)) {
                *mj += self.weights[i] * a;
            }
        }
        m
    }

    /// `int |x|^q dmu` with the Euclidean norm.
    pub fn abs_moment(&self, q: f64) -> f64 {
        (0..self.len())
            .map(|i| self.weights[i] * self.atom(i).iter().map(|x| x * x).sum::<f64>().sqrt().powf(q))
            .sum()
    }
}

fn cost_matrix(xs: &[&[f64]], ys: &[&[f64]], metric: Metric) -> Vec<f64> {
    let mut c = Vec::with_capacity(xs.len() * ys.len());
    for x in xs {
        for y in ys {
            let d = metric.dist(x, y);
            c.push(d * d);
        }
    }
    c
}

/// Minimum-cost perfect assignment of an `n x n` cost matrix; among optimal
/// assignments the lexicographically smallest row-to-column map is returned.
pub fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    // potentials and matching, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    let scale = cost.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let tight = |i: usize, j: usize| cost[i * n + j] - u[i + 1] - v[j + 1] <= 1e-12 * scale;
    lexicographic_in_tight_graph(n, &mut row_to_col, tight);
    row_to_col
}

/// Rewires a perfect matching inside the tight-edge graph so that it becomes
/// the lexicographically smallest one, fixing rows in order.
fn lexicographic_in_tight_graph(n: usize, row_to_col: &mut [usize], tight: impl Fn(usize, usize) -> bool) {
    let mut col_to_row = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    for i in 0..n {
        let target = row_to_col[i];
        for j in 0..target {
            if col_to_row[j] < i || !tight(i, j) {
                continue;
            }
            // alternating path from the row holding column j back to `target`,
            // using only rows > i
            let start = col_to_row[j];
            let mut prev_col = vec![usize::MAX; n];
            let mut seen_row = vec![false; n];
            let mut queue = VecDeque::from([start]);
            seen_row[start] = true;
            let mut found = false;
            'bfs: while let Some(r) = queue.pop_front() {
                for c in 0..n {
                    if c == row_to_col[r] || !tight(r, c) || prev_col[c] != usize::MAX {
                        continue;
                    }
                    let owner = col_to_row[c];
                    if owner < i || (owner == i && c != target) {
                        continue;
                    }
                    prev_col[c] = r;
                    if c == target {
                        found = true;
                        break 'bfs;
                    }
                    if !seen_row[owner] {
                        seen_row[owner] = true;
                        queue.push_back(owner);
                    }
                }
            }
            if found {
                let mut c = target;
                loop {
                    let r = prev_col[c];
                    let next = row_to_col[r];
                    row_to_col[r] = c;
                    col_to_row[c] = r;
                    if r == start {
                        break;
                    }
                    c = next;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
                break;
            }
        }
    }
}

fn points(flat: &[Vec<f64>]) -> Vec<&[f64]> {
    flat.iter().map(|v| v.as_slice()).collect()
}

/// `W_2` between two equal-size empirical measures via optimal assignment.
pub fn w2_empirical_equal(xs: &[Vec<f64>], ys: &[Vec<f64>], metric: Metric) -> Result<f64> {
    let n = xs.len();
    if n == 0 || ys.len() != n {
        return Err(Error::SizeMismatch(n, ys.len()));
    }
    if let Some(bad) = xs.iter().chain(ys).find(|p| p.len() != xs[0].len()) {
        return Err(Error::DimensionMismatch(bad.len(), xs[0].len()));
    }
    let cost = cost_matrix(&points(xs), &points(ys), metric);
    let sigma = assignment(&cost, n);
    let total: f64 = sigma.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Optimal coupling of two finite laws with squared-metric cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// `(source atom, target atom, mass)` for every basic cell.
    pub flows: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

/// `W_2` between two finite laws on the same space by the transportation simplex.
pub fn w2_discrete(p: &DiscreteLaw, q: &DiscreteLaw, metric: Metric) -> Result<f64> {
    Ok(optimal_plan(p, q, metric)?.cost.max(0.0).sqrt())
}

pub fn optimal_plan(p: &DiscreteLaw, q: &DiscreteLaw, metric: Metric) -> Result<TransportPlan> {
    if p.dim() != q.dim() {
        return Err(Error::SpaceMismatch(p.dim(), q.dim()));
    }
    let xs: Vec<&[f64]> = (0..p.len()).map(|i| p.atom(i)).collect();
    let ys: Vec<&[f64]> = (0..q.len()).map(|j| q.atom(j)).collect();
    let cost = cost_matrix(&xs, &ys, metric);
    Ok(transportation_simplex(p.weights(), q.weights(), &cost))
}

/// Transportation simplex: north-west corner start, tree duals, Bland's
/// entering/leaving rule. Degenerate zero-flow basic cells stay in the basis,
/// so the basis is always a spanning tree of the `m + n` nodes.
pub fn transportation_simplex(supply: &[f64], demand: &[f64], cost: &[f64]) -> TransportPlan {
    let (m, n) = (supply.len(), demand.len());
    let mut ra = supply.to_vec();
    let mut rb = demand.to_vec();
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(m + n - 1);
    let mut flow: Vec<f64> = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = if i == m - 1 && j == n - 1 { ra[i].max(rb[j]) } else { ra[i].min(rb[j]) }.max(0.0);
        basis.push((i, j));
        flow.push(x);
        ra[i] -= x;
        rb[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || ra[i] <= rb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    let scale = cost.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-13 * scale;
    let nodes = m + n;
    let max_pivots = 50 * (m * n + nodes);
    for _ in 0..max_pivots {
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
        for (e, &(r, c)) in basis.iter().enumerate() {
            adj[r].push((m + c, e));
            adj[m + c].push((r, e));
        }
        // duals: u_r + v_c = cost on basic cells, u_0 = 0
        let mut pot = vec![f64::NAN; nodes];
        pot[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(a) = stack.pop() {
            for &(b, e) in &adj[a] {
                if pot[b].is_nan() {
                    let (r, c) = basis[e];
                    pot[b] = cost[r * n + c] - pot[a];
                    stack.push(b);
                }
            }
        }
        let mut entering = None;
        'scan: for r in 0..m {
            for c in 0..n {
                if cost[r * n + c] - pot[r] - pot[m + c] < -tol && !basis.contains(&(r, c)) {
                    entering = Some((r, c));
                    break 'scan;
                }
            }
        }
        let Some((er, ec)) = entering else { break };
        // tree path from column node back to row node closes the cycle
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
        let mut visited = vec![false; nodes];
        visited[m + ec] = true;
        let mut queue = VecDeque::from([m + ec]);
        while let Some(a) = queue.pop_front() {
            if a == er {
                break;
            }
            for &(b, e) in &adj[a] {
                if !visited[b] {
                    visited[b] = true;
                    parent[b] = Some((a, e));
                    queue.push_back(b);
                }
            }
        }
        // walking from the row node to the column node, edges alternate -,+,-...
        let mut path_edges = Vec::new();
        let mut node = er;
        while let Some((prev, e)) = parent[node] {
            path_edges.push(e);
            node = prev;
        }
        let mut leave: Option<usize> = None;
        for (pos, &e) in path_edges.iter().enumerate() {
            if pos % 2 == 0 {
                let better = match leave {
                    None => true,
                    Some(l) => {
                        flow[e] < flow[l]
                            || (flow[e] == flow[l] && basis[e].0 * n + basis[e].1 < basis[l].0 * n + basis[l].1)
                    }
                };
                if better {
                    leave = Some(e);
                }
            }
        }
        let leave = leave.expect("cycle has a decreasing cell");
        let theta = flow[leave];
        for (pos, &e) in path_edges.iter().enumerate() {
            if pos % 2 == 0 {
                flow[e] = (flow[e] - theta).max(0.0);
            } else {
                flow[e] += theta;
            }
        }
        basis[leave] = (er, ec);
        flow[leave] = theta;
    }
    let total = basis.iter().zip(&flow).map(|(&(r, c), &x)| x * cost[r * n + c]).sum();
    TransportPlan { flows: basis.into_iter().zip(flow).map(|((r, c), x)| (r, c, x)).collect(), cost: total }
}

/// `W_2` on the real line through the quantile coupling, integrated exactly
/// over the merged breakpoints of both distribution functions.
pub fn w2_1d(p: &DiscreteLaw, q: &DiscreteLaw) -> Result<f64> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(Error::DimensionMismatch(p.dim().max(q.dim()), 1));
    }
    let sorted = |l: &DiscreteLaw| {
        let mut v: Vec<(f64, f64)> = (0..l.len()).map(|i| (l.atom(i)[0], l.weight(i))).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let (a, b) = (sorted(p), sorted(q));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    loop {
        let step = ra.min(rb);
        total += step * (a[i].0 - b[j].0).powi(2);
        ra -= step;
        rb -= step;
        let last_a = i + 1 == a.len();
        let last_b = j + 1 == b.len();
        if last_a && last_b {
            break;
        }
        if (ra <= rb && !last_a) || last_b {
            i += 1;
            ra += a[i].1;
        } else {
            j += 1;
            rb += b[j].1;
        }
    }
    Ok(total.max(0.0).sqrt())
}

/// Checks `W_2^2(L^N(x), L^N(y)) <= (1/N) sum d(x_i, y_i)^2`.
pub fn empirical_coupling_bound_check(xs: &[Vec<f64>], ys: &[Vec<f64>], metric: Metric) -> Result<bool> {
    let w = w2_empirical_equal(xs, ys, metric)?;
    let rhs: f64 = xs.iter().zip(ys).map(|(x, y)| metric.dist(x, y).powi(2)).sum::<f64>() / xs.len() as f64;
    Ok(w * w <= rhs + 1e-12)
}
