//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the solver code it is used to check.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::Rng;

use extra_core::bisim::MetricVariant;
use extra_core::mdp::{DeterministicPolicy, TabularMdp};

/// Random MDP with no terminal states: each row puts mass on a random
/// subset of states, rewards are uniform in `[-1, 1]`.
pub fn random_mdp<R: Rng>(rng: &mut R, ns: usize, na: usize, discount: f64) -> TabularMdp<f64> {
    let mut p = vec![vec![vec![0.0; ns]; na]; ns];
    let mut r = vec![vec![0.0; na]; ns];
    for s in 0..ns {
        for a in 0..na {
            let support = rng.random_range(1..=ns.min(3));
            let mut total = 0.0;
            for _ in 0..support {
                let w = rng.random_range(0.1..1.0);
                p[s][a][rng.random_range(0..ns)] += w;
                total += w;
            }
            for x in &mut p[s][a] {
                *x /= total;
            }
            r[s][a] = rng.random_range(-1.0..1.0);
        }
    }
    TabularMdp::from_dense(&p, &r, discount, vec![false; ns], vec![1.0 / ns as f64; ns]).unwrap()
}

pub fn dense_row(mdp: &TabularMdp<f64>, s: usize, a: usize) -> Vec<f64> {
    (0..mdp.num_states()).map(|n| mdp.prob(s, a, n)).collect()
}

/// Plain value iteration on dense rows, run to `tol` in sup norm.
pub fn oracle_q(mdp: &TabularMdp<f64>, tol: f64) -> Vec<Vec<f64>> {
    let (ns, na, g) = (mdp.num_states(), mdp.num_actions(), mdp.discount());
    let rows: Vec<Vec<Vec<f64>>> = (0..ns).map(|s| (0..na).map(|a| dense_row(mdp, s, a)).collect()).collect();
    let mut q = vec![vec![0.0; na]; ns];
    loop {
        let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::MIN, f64::max)).collect();
        let mut change: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let next = if mdp.is_terminal(s) {
                    0.0
                } else {
                    mdp.reward(s, a) + g * rows[s][a].iter().zip(&v).map(|(p, v)| p * v).sum::<f64>()
                };
                change = change.max((next - q[s][a]).abs());
                q[s][a] = next;
            }
        }
        if change < tol * (1.0 - g) {
            return q;
        }
    }
}

pub fn oracle_greedy(q: &[Vec<f64>]) -> DeterministicPolicy {
    let na = q[0].len();
    let acts = q.iter().map(|row| (0..na).fold(0, |best, a| if row[a] > row[best] { a } else { best })).collect();
    DeterministicPolicy::new(acts, na).unwrap()
}

/// Exact optimal transport by enumerating every basic solution of the
/// transportation polytope. A basis is a spanning tree of the bipartite
/// supply/demand graph; its flows follow by peeling leaves.
pub fn vertex_enumeration_ot(mu: &[BigRational], nu: &[BigRational], cost: &[Vec<BigRational>]) -> BigRational {
    let (m, n) = (mu.len(), nu.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let mut best: Option<BigRational> = None;
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        let edges: Vec<(usize, usize)> = pick.iter().map(|&c| cells[c]).collect();
        if is_spanning_tree(&edges, m, n) {
            if let Some(flows) = tree_flows(&edges, mu, nu) {
                let total =
                    edges.iter().zip(&flows).fold(BigRational::zero(), |acc, (&(i, j), f)| acc + &cost[i][j] * f);
                if best.as_ref().is_none_or(|b| total < *b) {
                    best = Some(total);
                }
            }
        }
        if !next_combination(&mut pick, cells.len()) {
            break;
        }
    }
    best.expect("the transportation polytope always has a vertex")
}

fn next_combination(pick: &mut [usize], n: usize) -> bool {
    let k = pick.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if pick[i] < n - k + i {
            pick[i] += 1;
            for j in i + 1..k {
                pick[j] = pick[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn is_spanning_tree(edges: &[(usize, usize)], m: usize, n: usize) -> bool {
    let mut parent: Vec<usize> = (0..m + n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for &(i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, m + j));
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

/// Flows on a spanning tree; `None` if any is negative.
fn tree_flows(edges: &[(usize, usize)], mu: &[BigRational], nu: &[BigRational]) -> Option<Vec<BigRational>> {
    let m = mu.len();
    let mut left: Vec<BigRational> = mu.iter().chain(nu).cloned().collect();
    let mut flows = vec![BigRational::zero(); edges.len()];
    let mut alive = vec![true; edges.len()];
    for _ in 0..edges.len() {
        let mut degree = vec![0usize; left.len()];
        for (e, &(i, j)) in edges.iter().enumerate() {
            if alive[e] {
                degree[i] += 1;
                degree[m + j] += 1;
            }
        }
        let (e, leaf, other) = edges
            .iter()
            .enumerate()
            .filter(|(e, _)| alive[*e])
            .find_map(|(e, &(i, j))| {
                if degree[i] == 1 {
                    Some((e, i, m + j))
                } else if degree[m + j] == 1 {
                    Some((e, m + j, i))
                } else {
                    None
                }
            })
            .expect("a tree always has a leaf");
        let f = left[leaf].clone();
        if f.is_negative() {
            return None;
        }
        left[other] = &left[other] - &f;
        left[leaf] = BigRational::zero();
        flows[e] = f;
        alive[e] = false;
    }
    Some(flows)
}

pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn to_f64(x: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap()
}

/// Min-cost flow by successive shortest paths (Bellman-Ford on the
/// residual graph). Used as the transport oracle where supports are too
/// large for vertex enumeration.
pub fn ssp_ot(mu: &[f64], nu: &[f64], cost: &[Vec<f64>]) -> f64 {
    const EPS: f64 = 1e-15;
    let (m, n) = (mu.len(), nu.len());
    let mut supply = mu.to_vec();
    let mut demand = nu.to_vec();
    let mut flow = vec![vec![0.0; n]; m];
    loop {
        // nodes: 0..m sources, m..m+n sinks; virtual start feeds sources with supply left
        let mut dist = vec![f64::INFINITY; m + n];
        let mut prev: Vec<Option<usize>> = vec![None; m + n];
        for i in 0..m {
            if supply[i] > EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..m + n {
            let mut changed = false;
            for i in 0..m {
                if dist[i].is_finite() {
                    for j in 0..n {
                        let d = dist[i] + cost[i][j];
                        if d < dist[m + j] - 1e-15 {
                            dist[m + j] = d;
                            prev[m + j] = Some(i);
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..n {
                if dist[m + j].is_finite() {
                    for i in 0..m {
                        if flow[i][j] > EPS {
                            let d = dist[m + j] - cost[i][j];
                            if d < dist[i] - 1e-15 {
                                dist[i] = d;
                                prev[i] = Some(m + j);
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let Some(end) = (0..n)
            .filter(|&j| demand[j] > EPS && dist[m + j].is_finite())
            .min_by(|&a, &b| dist[m + a].total_cmp(&dist[m + b]))
            .map(|j| m + j)
        else {
            break;
        };
        let mut path = vec![end];
        let mut node = end;
        while let Some(p) = prev[node] {
            path.push(p);
            node = p;
        }
        let start = node;
        let mut amount = supply[start].min(demand[end - m]);
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from >= m {
                amount = amount.min(flow[to][from - m]);
            }
        }
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from < m {
                flow[from][to - m] += amount;
            } else {
                flow[to][from - m] -= amount;
            }
        }
        supply[start] -= amount;
        demand[end - m] -= amount;
    }
    (0..m).map(|i| (0..n).map(|j| flow[i][j] * cost[i][j]).sum::<f64>()).sum()
}

/// Straightforward Jacobi iteration of the restricted lax-bisimulation
/// operator on dense tables, with [`ssp_ot`] as the transport solver.
#[allow(clippy::too_many_arguments)]
pub fn dense_bisim_oracle(
    source: &TabularMdp<f64>,
    policy: &DeterministicPolicy,
    target: &TabularMdp<f64>,
    c_r: f64,
    c_t: f64,
    variant: MetricVariant,
    threshold: f64,
    max_iterations: usize,
) -> Vec<Vec<Vec<f64>>> {
    let (ns1, ns2, na2) = (source.num_states(), target.num_states(), target.num_actions());
    let p1: Vec<Vec<f64>> = (0..ns1).map(|s| dense_row(source, s, policy.action(s))).collect();
    let p2: Vec<Vec<Vec<f64>>> = (0..ns2).map(|s| (0..na2).map(|a| dense_row(target, s, a)).collect()).collect();
    let mut d = vec![vec![vec![0.0; na2]; ns2]; ns1];
    for _ in 0..max_iterations {
        let ground: Vec<Vec<f64>> = d
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|acts| match variant {
                        MetricVariant::Optimistic => acts.iter().copied().fold(f64::INFINITY, f64::min),
                        MetricVariant::Pessimistic => acts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    })
                    .collect()
            })
            .collect();
        let mut next = d.clone();
        let mut change: f64 = 0.0;
        for s1 in 0..ns1 {
            let r1 = source.reward(s1, policy.action(s1));
            for s2 in 0..ns2 {
                for a2 in 0..na2 {
                    let w = ssp_ot(&p1[s1], &p2[s2][a2], &ground);
                    let v = c_r * (r1 - target.reward(s2, a2)).abs() + c_t * w;
                    change = change.max((v - d[s1][s2][a2]).abs());
                    next[s1][s2][a2] = v;
                }
            }
        }
        d = next;
        if change <= threshold {
            break;
        }
    }
    d
}
