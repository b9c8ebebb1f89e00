//! Exact Kantorovich (earth mover's) distance between finite distributions.
//!
//! The solver is the transportation simplex (u-v / MODI method): a
//! north-west-corner spanning-tree basis, potentials from the tree, entering
//! cells by most-negative reduced cost and pivots around the tree cycle.
//! Long runs of degenerate pivots switch the pricing to Bland's rule, which
//! cannot cycle.

use log::warn;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MARGINAL_TOL: f64 = 1e-9;

/// `min <plan, cost>` over couplings of `mu` (rows) and `nu` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem<T> {
    mu: Vec<T>,
    nu: Vec<T>,
    /// Row-major `mu.len() x nu.len()`.
    cost: Vec<T>,
}

impl<T: Scalar> TransportProblem<T> {
    /// Validates the marginals and costs. Marginals off by at most 1e-9 are
    /// renormalised; anything worse is rejected.
    pub fn new(mu: Vec<T>, nu: Vec<T>, cost: Vec<T>) -> Result<Self> {
        if mu.is_empty() || nu.is_empty() {
            return Err(Error::Transport("empty marginal".into()));
        }
        if cost.len() != mu.len() * nu.len() {
            return Err(Error::Dimension(format!(
                "cost has {} entries for a {}x{} problem",
                cost.len(),
                mu.len(),
                nu.len()
            )));
        }
        if let Some(c) = cost.iter().find(|c| !c.is_finite() || **c < T::zero()) {
            return Err(Error::Transport(format!("cost entry {c} is negative or non-finite")));
        }
        let mu = normalise(mu, "mu")?;
        let nu = normalise(nu, "nu")?;
        Ok(Self { mu, nu, cost })
    }

    pub fn from_rows(mu: Vec<T>, nu: Vec<T>, cost: &[Vec<T>]) -> Result<Self> {
        if cost.len() != mu.len() || cost.iter().any(|r| r.len() != nu.len()) {
            return Err(Error::Dimension("cost matrix shape does not match marginals".into()));
        }
        Self::new(mu, nu, cost.concat())
    }

    pub fn mu(&self) -> &[T] {
        &self.mu
    }

    pub fn nu(&self) -> &[T] {
        &self.nu
    }

    pub fn cost(&self, i: usize, j: usize) -> T {
        self.cost[i * self.nu.len() + j]
    }

    /// Same problem with the roles of the marginals swapped.
    pub fn transposed(&self) -> Self {
        let (m, n) = (self.mu.len(), self.nu.len());
        let mut cost = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                cost.push(self.cost[i * n + j]);
            }
        }
        Self { mu: self.nu.clone(), nu: self.mu.clone(), cost }
    }
}

fn normalise<T: Scalar>(mut p: Vec<T>, name: &str) -> Result<Vec<T>> {
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < T::zero()) {
        return Err(Error::Transport(format!("{name} has invalid mass {x}")));
    }
    let total: T = p.iter().copied().sum();
    if (total - T::one()).abs() > T::lit(MARGINAL_TOL) {
        return Err(Error::Transport(format!("{name} sums to {total}, expected 1")));
    }
    if total != T::one() {
        for x in &mut p {
            *x = *x / total;
        }
    }
    Ok(p)
}

/// Optimal plan with the dual potentials that certify it.
#[derive(Debug, Clone)]
pub struct TransportSolution<T> {
    pub value: T,
    /// Row-major plan over the full (uncompacted) support.
    pub plan: Vec<T>,
    pub row_potential: Vec<T>,
    pub col_potential: Vec<T>,
    pub pivots: usize,
}

impl<T: Scalar> TransportSolution<T> {
    /// `sum mu_i u_i + sum nu_j v_j`.
    pub fn dual_objective(&self, problem: &TransportProblem<T>) -> T {
        let rows: T = problem.mu.iter().zip(&self.row_potential).map(|(&m, &u)| m * u).sum();
        let cols: T = problem.nu.iter().zip(&self.col_potential).map(|(&n, &v)| n * v).sum();
        rows + cols
    }
}

pub fn kantorovich<T: Scalar>(problem: &TransportProblem<T>) -> T {
    kantorovich_with_plan(problem).value
}

pub fn kantorovich_with_plan<T: Scalar>(problem: &TransportProblem<T>) -> TransportSolution<T> {
    let (m, n) = (problem.mu.len(), problem.nu.len());
    let rows: Vec<usize> = (0..m).filter(|&i| problem.mu[i] > T::zero()).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| problem.nu[j] > T::zero()).collect();
    let mut solver = TransportSolver::new();
    let value = solver.run(rows.iter().map(|&i| problem.mu[i]), cols.iter().map(|&j| problem.nu[j]), |ci, cj| {
        problem.cost(rows[ci], cols[cj])
    });

    let mut plan = vec![T::zero(); m * n];
    for (k, &(ci, cj)) in solver.basis.iter().enumerate() {
        plan[rows[ci] * n + cols[cj]] = solver.flow[k];
    }
    // Potentials for dropped rows/columns: the tightest dual-feasible choice.
    let mut row_potential = vec![T::zero(); m];
    let mut col_potential = vec![T::zero(); n];
    for (ci, &i) in rows.iter().enumerate() {
        row_potential[i] = solver.u[ci];
    }
    for (cj, &j) in cols.iter().enumerate() {
        col_potential[j] = solver.v[cj];
    }
    for i in (0..m).filter(|&i| problem.mu[i] <= T::zero()) {
        row_potential[i] =
            cols.iter().enumerate().map(|(cj, &j)| problem.cost(i, j) - solver.v[cj]).fold(T::infinity(), T::min);
    }
    for j in (0..n).filter(|&j| problem.nu[j] <= T::zero()) {
        col_potential[j] = (0..m).map(|i| problem.cost(i, j) - row_potential[i]).fold(T::infinity(), T::min);
    }

    let solution = TransportSolution { value, plan, row_potential, col_potential, pivots: solver.pivots };
    debug_assert!(
        solution.dual_objective(problem)
            <= value + T::lit(1e-8).max(T::epsilon() * T::lit(1e3)) * (T::one() + value.abs()),
        "weak duality violated"
    );
    solution
}

/// Reusable transportation-simplex workspace. Solving many small problems
/// through one solver avoids per-call allocation.
#[derive(Debug, Clone, Default)]
pub struct TransportSolver<T> {
    m: usize,
    n: usize,
    supply: Vec<T>,
    demand: Vec<T>,
    cost: Vec<T>,
    basis: Vec<(usize, usize)>,
    flow: Vec<T>,
    in_basis: Vec<bool>,
    u: Vec<T>,
    v: Vec<T>,
    // tree bookkeeping over nodes 0..m (rows) and m..m+n (columns)
    adjacency: Vec<Vec<usize>>,
    parent_edge: Vec<usize>,
    depth: Vec<usize>,
    queue: Vec<usize>,
    cycle: Vec<usize>,
    pivots: usize,
}

impl<T: Scalar> TransportSolver<T> {
    pub fn new() -> Self {
        Self {
            m: 0,
            n: 0,
            supply: Vec::new(),
            demand: Vec::new(),
            cost: Vec::new(),
            basis: Vec::new(),
            flow: Vec::new(),
            in_basis: Vec::new(),
            u: Vec::new(),
            v: Vec::new(),
            adjacency: Vec::new(),
            parent_edge: Vec::new(),
            depth: Vec::new(),
            queue: Vec::new(),
            cycle: Vec::new(),
            pivots: 0,
        }
    }

    /// Distance between two sparse distributions given as `(index, mass)`
    /// pairs with strictly positive masses summing to one; `cost` receives
    /// the original indices.
    pub fn distance<F>(&mut self, mu: &[(usize, T)], nu: &[(usize, T)], cost: F) -> T
    where
        F: Fn(usize, usize) -> T,
    {
        self.run(mu.iter().map(|&(_, p)| p), nu.iter().map(|&(_, p)| p), |ci, cj| cost(mu[ci].0, nu[cj].0))
    }

    fn run<F>(&mut self, supply: impl Iterator<Item = T>, demand: impl Iterator<Item = T>, cost: F) -> T
    where
        F: Fn(usize, usize) -> T,
    {
        self.supply.clear();
        self.supply.extend(supply);
        self.demand.clear();
        self.demand.extend(demand);
        let (m, n) = (self.supply.len(), self.demand.len());
        self.m = m;
        self.n = n;
        self.pivots = 0;
        self.cost.clear();
        for i in 0..m {
            for j in 0..n {
                self.cost.push(cost(i, j));
            }
        }
        self.basis.clear();
        self.flow.clear();
        self.u.clear();
        self.u.resize(m, T::zero());
        self.v.clear();
        self.v.resize(n, T::zero());
        if m == 0 || n == 0 {
            return T::zero();
        }

        if m == 1 || n == 1 {
            // The only feasible plan.
            for i in 0..m {
                for j in 0..n {
                    let f = if m == 1 { self.demand[j] } else { self.supply[i] };
                    self.basis.push((i, j));
                    self.flow.push(f);
                }
            }
            if m == 1 {
                self.v.copy_from_slice(&self.cost[..n]);
            } else {
                self.u.copy_from_slice(&self.cost[..m]);
            }
            return self.objective();
        }

        self.north_west_corner();
        self.optimise();
        self.objective()
    }

    fn objective(&self) -> T {
        self.basis.iter().zip(&self.flow).map(|(&(i, j), &f)| f * self.cost[i * self.n + j]).sum()
    }

    fn north_west_corner(&mut self) {
        let (m, n) = (self.m, self.n);
        let mut a = self.supply.clone();
        let mut b = self.demand.clone();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = a[i].min(b[j]);
            self.basis.push((i, j));
            self.flow.push(x);
            a[i] = a[i] - x;
            b[j] = b[j] - x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && a[i] <= b[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(self.basis.len(), m + n - 1);
        self.in_basis.clear();
        self.in_basis.resize(m * n, false);
        for &(i, j) in &self.basis {
            self.in_basis[i * n + j] = true;
        }
    }

    /// BFS over the basis tree from row 0: potentials, parents and depths.
    fn build_tree(&mut self) {
        let (m, n) = (self.m, self.n);
        let nodes = m + n;
        if self.adjacency.len() < nodes {
            self.adjacency.resize_with(nodes, Vec::new);
        }
        for adj in &mut self.adjacency[..nodes] {
            adj.clear();
        }
        for (k, &(i, j)) in self.basis.iter().enumerate() {
            self.adjacency[i].push(k);
            self.adjacency[m + j].push(k);
        }
        self.parent_edge.clear();
        self.parent_edge.resize(nodes, usize::MAX);
        self.depth.clear();
        self.depth.resize(nodes, usize::MAX);
        self.queue.clear();
        self.queue.push(0);
        self.depth[0] = 0;
        self.u[0] = T::zero();
        let mut head = 0;
        while head < self.queue.len() {
            let node = self.queue[head];
            head += 1;
            for &k in &self.adjacency[node] {
                let (i, j) = self.basis[k];
                let other = if node < m { m + j } else { i };
                if self.depth[other] != usize::MAX {
                    continue;
                }
                let c = self.cost[i * n + j];
                if other >= m {
                    self.v[j] = c - self.u[i];
                } else {
                    self.u[i] = c - self.v[j];
                }
                self.depth[other] = self.depth[node] + 1;
                self.parent_edge[other] = k;
                self.queue.push(other);
            }
        }
        debug_assert_eq!(self.queue.len(), nodes, "basis is not a spanning tree");
    }

    fn parent_node(&self, node: usize) -> usize {
        let (i, j) = self.basis[self.parent_edge[node]];
        if node < self.m {
            self.m + j
        } else {
            i
        }
    }

    fn optimise(&mut self) {
        let (m, n) = (self.m, self.n);
        let max_cost = self.cost.iter().copied().fold(T::zero(), T::max);
        let eps = T::epsilon() * T::lit(64.0) * (T::one() + max_cost);
        let max_pivots = 50 * (m + n) * m * n + 1000;
        let mut degenerate_run = 0usize;
        let mut bland = false;

        loop {
            self.build_tree();

            let mut entering: Option<(usize, usize)> = None;
            let mut best = -eps;
            'pricing: for i in 0..m {
                for j in 0..n {
                    if self.in_basis[i * n + j] {
                        continue;
                    }
                    let reduced = self.cost[i * n + j] - self.u[i] - self.v[j];
                    if reduced < best {
                        entering = Some((i, j));
                        if bland {
                            break 'pricing;
                        }
                        best = reduced;
                    }
                }
            }
            let Some((ei, ej)) = entering else {
                return;
            };
            if self.pivots >= max_pivots {
                warn!("transportation simplex hit its pivot cap ({max_pivots}) on a {m}x{n} problem");
                return;
            }
            self.pivots += 1;

            // Cycle: entering edge, then the tree path from column ej to row ei.
            self.cycle.clear();
            let mut a = m + ej;
            let mut b = ei;
            let mut tail = Vec::new();
            while a != b {
                if self.depth[a] >= self.depth[b] {
                    self.cycle.push(self.parent_edge[a]);
                    a = self.parent_node(a);
                } else {
                    tail.push(self.parent_edge[b]);
                    b = self.parent_node(b);
                }
            }
            self.cycle.extend(tail.into_iter().rev());

            // Even positions lose flow, odd positions gain it.
            let mut leave_pos = 0;
            let mut theta = T::infinity();
            let mut leave_cell = usize::MAX;
            for (pos, &k) in self.cycle.iter().enumerate().step_by(2) {
                let f = self.flow[k];
                let (i, j) = self.basis[k];
                let cell = i * n + j;
                if f < theta || (f == theta && cell < leave_cell) {
                    theta = f;
                    leave_pos = pos;
                    leave_cell = cell;
                }
            }
            if theta > T::zero() {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
                if degenerate_run > m * n {
                    bland = true;
                }
            }
            for (pos, &k) in self.cycle.iter().enumerate() {
                if pos % 2 == 0 {
                    self.flow[k] = (self.flow[k] - theta).max(T::zero());
                } else {
                    self.flow[k] = self.flow[k] + theta;
                }
            }
            let leaving = self.cycle[leave_pos];
            let (li, lj) = self.basis[leaving];
            self.in_basis[li * n + lj] = false;
            self.in_basis[ei * n + ej] = true;
            self.basis[leaving] = (ei, ej);
            self.flow[leaving] = theta;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_masses() {
        let p = TransportProblem::from_rows(
            vec![0.0, 1.0],
            vec![0.0, 0.0, 1.0],
            &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
        )
        .unwrap();
        let sol = kantorovich_with_plan(&p);
        assert_eq!(sol.value, 6.0);
        assert_eq!(sol.plan, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);

        let same =
            TransportProblem::from_rows(vec![1.0, 0.0], vec![1.0, 0.0], &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(kantorovich(&same), 0.0);
    }

    #[test]
    fn two_by_two_family() {
        // Feasible plans are [[t, 0.7-t], [0.4-t, t-0.1]] for t in [0.1, 0.4];
        // the cost 1.1 - 2t is minimised at t = 0.4.
        let p = TransportProblem::from_rows(vec![0.7, 0.3], vec![0.4, 0.6], &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let sol = kantorovich_with_plan(&p);
        assert!((sol.value - 0.3_f64).abs() < 1e-12);
        let grid_best =
            (0..=300).map(|k| 0.1 + 0.001 * k as f64).map(|t| (0.7 - t) + (0.4 - t)).fold(f64::INFINITY, f64::min);
        assert!((sol.value - grid_best).abs() < 1e-9);
    }

    #[test]
    fn uniform_identity_is_diagonal() {
        let n = 5;
        let cost: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 1.0 + (k % 3) as f64 }).collect();
        let p = TransportProblem::new(vec![0.2; n], vec![0.2; n], cost).unwrap();
        let sol = kantorovich_with_plan(&p);
        assert_eq!(sol.value, 0.0);
        for i in 0..n {
            assert!((sol.plan[i * n + i] - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn marginal_checks() {
        assert!(TransportProblem::new(vec![0.5, 0.5 + 5e-10], vec![1.0], vec![0.0, 0.0]).is_ok());
        assert!(matches!(TransportProblem::new(vec![0.5, 0.6], vec![1.0], vec![0.0, 0.0]), Err(Error::Transport(_))));
        assert!(TransportProblem::new(vec![1.0], vec![1.0], vec![-1.0]).is_err());
    }

    #[test]
    fn degenerate_equal_masses() {
        // Many ties in both marginals and costs.
        let mu = vec![0.025, 0.025, 0.025, 0.025, 0.9];
        let nu = vec![0.9, 0.025, 0.025, 0.025, 0.025];
        let cost: Vec<f64> = (0..25).map(|k| ((k * 7) % 5) as f64 * 0.5).collect();
        let p = TransportProblem::new(mu, nu, cost).unwrap();
        let sol = kantorovich_with_plan(&p);
        assert!((sol.dual_objective(&p) - sol.value).abs() < 1e-12);
    }

    #[test]
    fn f32_solves() {
        let p = TransportProblem::<f32>::from_rows(vec![0.7, 0.3], vec![0.4, 0.6], &[vec![0.0, 1.0], vec![1.0, 0.0]])
            .unwrap();
        assert!((kantorovich(&p) - 0.3).abs() < 1e-6);
    }
}
