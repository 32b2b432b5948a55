//! Token remapping between the attention layout and the token-uniform layout
//! used by linear modules.
//!
//! Each rank with a surplus sends tokens to ranks with a deficit; the cost of
//! a sender is `Σ_j T[i][j]·M[i][j]` and the objective is the largest sender
//! cost. With two-level costs a sender's cost only depends on how many of its
//! tokens leave the node, so feasibility of a cost bound `C` is a max-flow
//! question with one gate per sender limiting its cross-node volume to
//! `(C − b_intra·surplus_i) / (b_inter − b_intra)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::topology::ClusterSpec;

const SEARCH_TOLERANCE: f64 = 1e-9;

/// Two-level transfer cost: `intra` within a node, `inter` across nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemapCosts {
    pub node_of: Vec<usize>,
    pub intra: f64,
    pub inter: f64,
}

impl RemapCosts {
    pub fn new(node_of: Vec<usize>, intra: f64, inter: f64) -> Self {
        assert!(intra >= 0.0 && inter >= intra, "costs must satisfy 0 <= intra <= inter");
        RemapCosts { node_of, intra, inter }
    }

    pub fn from_cluster(cluster: &ClusterSpec) -> Self {
        let node_of = (0..cluster.num_ranks()).map(|r| cluster.node_of(r)).collect();
        RemapCosts::new(node_of, cluster.inv_bw_intra, cluster.inv_bw_inter)
    }

    pub fn ranks(&self) -> usize {
        self.node_of.len()
    }

    pub fn cost(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else if self.node_of[i] == self.node_of[j] {
            self.intra
        } else {
            self.inter
        }
    }

    /// Dense `T` matrix.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let d = self.ranks();
        (0..d).map(|i| (0..d).map(|j| self.cost(i, j)).collect()).collect()
    }
}

/// `m[i][j]`: tokens moved from rank `i` to rank `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub m: Vec<Vec<u64>>,
}

impl TransferMatrix {
    pub fn zeros(d: usize) -> Self {
        TransferMatrix { m: vec![vec![0; d]; d] }
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.m.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let d = self.m.len();
        (0..d).map(|j| self.m.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let d = self.m.len();
        TransferMatrix { m: (0..d).map(|i| (0..d).map(|j| self.m[j][i]).collect()).collect() }
    }

    pub fn sender_costs(&self, costs: &RemapCosts) -> Vec<f64> {
        self.m
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().map(|(j, &x)| costs.cost(i, j) * x as f64).sum())
            .collect()
    }

    pub fn receiver_costs(&self, costs: &RemapCosts) -> Vec<f64> {
        self.transpose().sender_costs(costs)
    }

    pub fn to_csv(&self) -> String {
        let d = self.m.len();
        let mut out = String::from("from");
        for j in 0..d {
            write!(out, ",to_{j}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.m.iter().enumerate() {
            write!(out, "{i}").unwrap();
            for x in row {
                write!(out, ",{x}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemapSolution {
    pub target: Vec<u64>,
    pub matrix: TransferMatrix,
    /// Largest sender cost of `matrix`; optimal over integer transfers.
    pub objective: f64,
    /// Optimum of the continuous relaxation.
    pub continuous_objective: f64,
    pub sender_costs: Vec<f64>,
    /// Not part of the objective; reported for diagnostics.
    pub receiver_costs: Vec<f64>,
}

/// Uniform target: `⌊Σa/d⌋` everywhere, with the remainder going to the
/// ranks holding the most tokens (lowest index on ties).
pub fn target_distribution(a: &[u64]) -> Vec<u64> {
    let d = a.len() as u64;
    if d == 0 {
        return Vec::new();
    }
    let total: u64 = a.iter().sum();
    let mut b = vec![total / d; a.len()];
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&x, &y| a[y].cmp(&a[x]).then(x.cmp(&y)));
    for &i in order.iter().take((total % d) as usize) {
        b[i] += 1;
    }
    b
}

struct FlowGraph {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph { head: vec![Vec::new(); n], to: Vec::new(), cap: Vec::new(), level: vec![0; n], iter: vec![0; n] }
    }

    fn add_edge(&mut self, u: usize, v: usize, c: f64) -> usize {
        let id = self.to.len();
        self.head[u].push(id);
        self.to.push(v);
        self.cap.push(c);
        self.head[v].push(id + 1);
        self.to.push(u);
        self.cap.push(0.0);
        id
    }

    fn flow_on(&self, edge: usize) -> f64 {
        self.cap[edge + 1]
    }

    fn bfs(&mut self, s: usize, eps: f64) {
        self.level.iter_mut().for_each(|l| *l = -1);
        let mut queue = std::collections::VecDeque::from([s]);
        self.level[s] = 0;
        while let Some(u) = queue.pop_front() {
            for &e in &self.head[u] {
                let v = self.to[e];
                if self.cap[e] > eps && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: f64, eps: f64) -> f64 {
        if u == t {
            return pushed;
        }
        while self.iter[u] < self.head[u].len() {
            let e = self.head[u][self.iter[u]];
            let v = self.to[e];
            if self.cap[e] > eps && self.level[v] == self.level[u] + 1 {
                let d = self.dfs(v, t, pushed.min(self.cap[e]), eps);
                if d > eps {
                    self.cap[e] -= d;
                    self.cap[e ^ 1] += d;
                    return d;
                }
            }
            self.iter[u] += 1;
        }
        0.0
    }

    fn max_flow(&mut self, s: usize, t: usize, eps: f64) -> f64 {
        let mut flow = 0.0;
        loop {
            self.bfs(s, eps);
            if self.level[t] < 0 {
                return flow;
            }
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY, eps);
                if f <= eps {
                    break;
                }
                flow += f;
            }
        }
    }
}

struct Instance<'a> {
    costs: &'a RemapCosts,
    surplus: Vec<u64>,
    deficit: Vec<u64>,
    total: u64,
}

/// Arcs `(sender, receiver, edge id)` in a built network.
type Arcs = Vec<(usize, usize, usize)>;

impl Instance<'_> {
    fn delta(&self) -> f64 {
        self.costs.inter - self.costs.intra
    }

    /// Cross-node allowance of each sender under bound `c`, or `None` if
    /// some sender cannot even ship its surplus within the node.
    fn gates(&self, c: f64, integral: bool) -> Option<Vec<f64>> {
        let delta = self.delta();
        self.surplus
            .iter()
            .map(|&s| {
                let slack = c - self.costs.intra * s as f64;
                if slack < -SEARCH_TOLERANCE * c.abs().max(f64::MIN_POSITIVE) {
                    return None;
                }
                let g = (slack.max(0.0) / delta).min(s as f64);
                Some(if integral { (g + 1e-9).floor() } else { g })
            })
            .collect()
    }

    fn network(&self, gates: &[f64]) -> (FlowGraph, Arcs) {
        let d = self.costs.ranks();
        // source, sink, senders 2.., gates 2+d.., receivers 2+2d..
        let (src, sink) = (0, 1);
        let sender = |i: usize| 2 + i;
        let gate = |i: usize| 2 + d + i;
        let receiver = |j: usize| 2 + 2 * d + j;
        let mut g = FlowGraph::new(2 + 3 * d);
        let big = self.total as f64 + 1.0;
        let mut arcs = Vec::new();
        for i in (0..d).filter(|&i| self.surplus[i] > 0) {
            g.add_edge(src, sender(i), self.surplus[i] as f64);
            g.add_edge(sender(i), gate(i), gates[i]);
            for j in (0..d).filter(|&j| self.deficit[j] > 0) {
                let e = if self.costs.node_of[i] == self.costs.node_of[j] {
                    g.add_edge(sender(i), receiver(j), big)
                } else {
                    g.add_edge(gate(i), receiver(j), big)
                };
                arcs.push((i, j, e));
            }
        }
        for j in (0..d).filter(|&j| self.deficit[j] > 0) {
            g.add_edge(receiver(j), sink, self.deficit[j] as f64);
        }
        (g, arcs)
    }

    fn feasible(&self, c: f64, integral: bool) -> Option<(FlowGraph, Arcs)> {
        let gates = self.gates(c, integral)?;
        let (mut g, arcs) = self.network(&gates);
        let eps = if integral { 0.5 } else { 1e-12 * (self.total as f64).max(1.0) };
        let flow = g.max_flow(0, 1, eps);
        let needed = self.total as f64;
        (flow >= needed - if integral { 0.5 } else { 1e-9 * needed }).then_some((g, arcs))
    }

    /// Smallest bound accepted by `feasible`, to `SEARCH_TOLERANCE` relative.
    fn search(&self, integral: bool) -> f64 {
        let max_s = self.surplus.iter().copied().max().unwrap_or(0) as f64;
        let mut lo = self.costs.intra * max_s;
        let mut hi = self.costs.inter * max_s;
        if self.feasible(lo, integral).is_some() {
            return lo;
        }
        while hi - lo > SEARCH_TOLERANCE * hi {
            let mid = 0.5 * (lo + hi);
            if self.feasible(mid, integral).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// Minimises the largest sender cost of moving `a` to its uniform target.
pub fn solve_remap(a: &[u64], costs: &RemapCosts) -> RemapSolution {
    assert_eq!(a.len(), costs.ranks(), "token vector and cost matrix disagree on d");
    let d = a.len();
    let target = target_distribution(a);
    let surplus: Vec<u64> = a.iter().zip(&target).map(|(&x, &b)| x.saturating_sub(b)).collect();
    let deficit: Vec<u64> = a.iter().zip(&target).map(|(&x, &b)| b.saturating_sub(x)).collect();
    let total = surplus.iter().sum();
    let inst = Instance { costs, surplus, deficit, total };

    let mut matrix = TransferMatrix::zeros(d);
    let continuous_objective;
    if total == 0 {
        continuous_objective = 0.0;
    } else if inst.delta() == 0.0 {
        // Every transfer costs the same; each sender ships its surplus.
        let max_s = inst.surplus.iter().copied().max().unwrap_or(0);
        continuous_objective = costs.intra * max_s as f64;
        let (g, arcs) = inst.feasible(f64::INFINITY, true).expect("uniform costs are always feasible");
        fill(&mut matrix, &g, &arcs);
    } else {
        continuous_objective = inst.search(false);
        let bound = inst.search(true);
        let (g, arcs) = inst.feasible(bound, true).expect("search ends on a feasible bound");
        fill(&mut matrix, &g, &arcs);
    }
    let sender_costs = matrix.sender_costs(costs);
    let receiver_costs = matrix.receiver_costs(costs);
    let objective = sender_costs.iter().copied().fold(0.0, f64::max);
    RemapSolution { target, matrix, objective, continuous_objective, sender_costs, receiver_costs }
}

fn fill(matrix: &mut TransferMatrix, g: &FlowGraph, arcs: &Arcs) {
    for &(i, j, e) in arcs {
        matrix.m[i][j] += g.flow_on(e).round() as u64;
    }
}

/// Remap cost before and after the linear modules. The inverse moves `Mᵀ`
/// over symmetric costs, so both directions cost the same.
pub fn remap_cost_pair(tokens_per_rank: &[u64], cluster: &ClusterSpec) -> (f64, f64) {
    let sol = solve_remap(tokens_per_rank, &RemapCosts::from_cluster(cluster));
    (sol.objective, sol.objective)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_nodes(d: usize) -> RemapCosts {
        RemapCosts::new((0..d).map(|r| r * 2 / d).collect(), 1.0, 10.0)
    }

    fn check_marginals(a: &[u64], sol: &RemapSolution) {
        for (i, row) in sol.matrix.m.iter().enumerate() {
            assert_eq!(row[i], 0);
        }
        let rows = sol.matrix.row_sums();
        let cols = sol.matrix.col_sums();
        for i in 0..a.len() {
            assert_eq!(rows[i], a[i].saturating_sub(sol.target[i]));
            assert_eq!(cols[i], sol.target[i].saturating_sub(a[i]));
        }
    }

    #[test]
    fn targets() {
        assert_eq!(target_distribution(&[4, 4]), vec![4, 4]);
        assert_eq!(target_distribution(&[6, 2]), vec![4, 4]);
        assert_eq!(target_distribution(&[5, 5, 3]), vec![5, 4, 4]);
        assert_eq!(target_distribution(&[0, 0, 7]), vec![2, 2, 3]);
        assert!(target_distribution(&[]).is_empty());
    }

    #[test]
    fn single_transfer_with_uniform_costs() {
        let costs = RemapCosts::new(vec![0, 0], 2.5, 2.5);
        let sol = solve_remap(&[6, 2], &costs);
        assert_eq!(sol.matrix.m, vec![vec![0, 2], vec![0, 0]]);
        assert_eq!(sol.objective, 5.0);
        assert_eq!(remap_cost_pair(&[4, 4], &ClusterSpec::new(1, 2, 8, 1.0, 1.0, 1).unwrap()), (0.0, 0.0));
    }

    #[test]
    fn intra_path_preferred() {
        let sol = solve_remap(&[8, 0, 4, 4], &two_nodes(4));
        assert_eq!(sol.matrix.m[0][1], 4);
        assert_eq!(sol.objective, 4.0);
        check_marginals(&[8, 0, 4, 4], &sol);
    }

    #[test]
    fn forced_cross_node_transfer() {
        // Node 0 holds 12 tokens against a target of 4 + 4.
        let a = [6, 6, 0, 0];
        let sol = solve_remap(&a, &two_nodes(4));
        check_marginals(&a, &sol);
        assert!((sol.objective - 30.0).abs() < 1e-9);
        assert!((sol.continuous_objective - 30.0).abs() < 1e-6);
    }

    #[test]
    fn balancing_cross_node_load_between_senders() {
        // Sender 0 can offload intra to rank 1; sender 2 must go inter.
        let a = [9, 3, 6, 0, 6, 0];
        let costs = RemapCosts::new(vec![0, 0, 1, 1, 2, 2], 1.0, 4.0);
        let sol = solve_remap(&a, &costs);
        check_marginals(&a, &sol);
        assert!(sol.objective >= sol.continuous_objective - 1e-9);
        assert!(sol.objective <= sol.continuous_objective + 4.0 + 1e-9);
    }

    #[test]
    fn uniform_input_is_free() {
        let sol = solve_remap(&[5, 5, 5, 5], &two_nodes(4));
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.matrix, TransferMatrix::zeros(4));
    }

    #[test]
    fn csv_dump() {
        let sol = solve_remap(&[6, 2], &RemapCosts::new(vec![0, 0], 1.0, 1.0));
        assert_eq!(sol.matrix.to_csv(), "from,to_0,to_1\n0,0,2\n1,0,0\n");
    }
}
