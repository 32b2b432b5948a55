//! Multi-NIC routing of cross-node transfers.
//!
//! A transfer of `n` tokens from `src` to `dst` on another node is scattered
//! over `x1` send proxies on the source node (one per distinct NIC), carried
//! across in parallel, then gathered by `x2` receive proxies to `dst`.

use serde::{Deserialize, Serialize};

use crate::attention::even_split;
use crate::simulator::Stream;
use crate::topology::{direct_transfer_time, ClusterSpec, Rank, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegKind {
    /// Source scatters its payload to the other send proxies.
    Dispatch,
    /// One send proxy to its paired receive proxy over its NIC.
    InterTransfer,
    /// Receive proxies gather the payload at the destination.
    Combine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteStep {
    pub kind: LegKind,
    pub source: Rank,
    pub dest: Rank,
    pub scope: Scope,
    pub tokens: u64,
    /// Rank whose stream carries the step.
    pub rank: Rank,
    pub stream: Stream,
    pub duration: f64,
}

/// Route of one cross-node transfer. Stages run one after another; inside a
/// stage, steps sharing a `(rank, stream)` run back to back and the others in
/// parallel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub src: Rank,
    pub dst: Rank,
    pub tokens: u64,
    pub send_proxies: Vec<Rank>,
    pub recv_proxies: Vec<Rank>,
    pub stages: Vec<Vec<RouteStep>>,
}

impl RoutePlan {
    pub fn x1(&self) -> usize {
        self.send_proxies.len()
    }

    pub fn x2(&self) -> usize {
        self.recv_proxies.len()
    }

    fn stage_time(stage: &[RouteStep]) -> f64 {
        let mut busy: Vec<((Rank, Stream), f64)> = Vec::new();
        for st in stage {
            match busy.iter_mut().find(|(k, _)| *k == (st.rank, st.stream)) {
                Some((_, t)) => *t += st.duration,
                None => busy.push(((st.rank, st.stream), st.duration)),
            }
        }
        busy.iter().map(|&(_, t)| t).fold(0.0, f64::max)
    }

    /// End-to-end time of the route.
    pub fn time(&self) -> f64 {
        self.stages.iter().map(|s| Self::stage_time(s)).sum()
    }

    pub fn steps(&self) -> impl Iterator<Item = &RouteStep> {
        self.stages.iter().flatten()
    }

    pub fn is_routed(&self) -> bool {
        self.x1() > 1 || self.x2() > 1
    }

    /// Duration of the cross-node stage.
    pub fn inter_stage_time(&self) -> f64 {
        self.stages
            .iter()
            .filter(|s| s.iter().any(|st| st.kind == LegKind::InterTransfer))
            .map(|s| Self::stage_time(s))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proxies {
    pub send: Vec<Rank>,
    pub recv: Vec<Rank>,
}

/// One rank per distinct NIC on `endpoint`'s node, starting with `endpoint`,
/// then `preferred`, then the remaining node ranks in order.
fn proxies_on_node(
    cluster: &ClusterSpec,
    endpoint: Rank,
    preferred: &[Rank],
    available: &dyn Fn(Rank) -> bool,
) -> Vec<Rank> {
    let node = cluster.node_of(endpoint);
    let candidates = std::iter::once(endpoint)
        .chain(preferred.iter().copied().filter(|&r| cluster.node_of(r) == node))
        .chain(cluster.ranks_of_node(node));
    let mut nics = Vec::new();
    let mut out = Vec::new();
    for r in candidates {
        if (r == endpoint || available(r)) && !out.contains(&r) && !nics.contains(&cluster.nic_of(r)) {
            nics.push(cluster.nic_of(r));
            out.push(r);
        }
    }
    out
}

/// Chooses send and receive proxies. `available` says which ranks may relay
/// traffic; the endpoints always take part.
pub fn select_proxies(
    cluster: &ClusterSpec,
    src: Rank,
    dst: Rank,
    preferred: &[Rank],
    available: &dyn Fn(Rank) -> bool,
) -> Proxies {
    let mut send = proxies_on_node(cluster, src, preferred, available);
    let mut recv = proxies_on_node(cluster, dst, preferred, available);
    let x = send.len().min(recv.len()).min(cluster.nics_per_node);
    send.truncate(x);
    recv.truncate(x);
    Proxies { send, recv }
}

/// Time to move `tokens` across nodes through `x_send` and `x_recv` proxies:
/// scatter on the source node, parallel NIC transfers, gather at the target.
pub fn routed_time(cluster: &ClusterSpec, tokens: f64, x_send: usize, x_recv: usize) -> f64 {
    let (x1, x2) = (x_send.max(1) as f64, x_recv.max(1) as f64);
    let dispatch = cluster.inv_bw_intra * tokens * (x1 - 1.0) / x1;
    let inter = cluster.inv_bw_inter * (tokens / x1).max(tokens / x2);
    let combine = cluster.inv_bw_intra * tokens * (x2 - 1.0) / x2;
    dispatch + inter + combine
}

fn step(kind: LegKind, source: Rank, dest: Rank, tokens: u64, rank: Rank, cluster: &ClusterSpec) -> RouteStep {
    let (scope, stream) = match kind {
        LegKind::InterTransfer => (Scope::Inter, Stream::InterComm),
        LegKind::Dispatch | LegKind::Combine => (Scope::Intra, Stream::IntraComm),
    };
    let duration = direct_transfer_time(cluster, tokens as f64, scope);
    RouteStep { kind, source, dest, scope, tokens, rank, stream, duration }
}

fn direct(cluster: &ClusterSpec, src: Rank, dst: Rank, tokens: u64) -> RoutePlan {
    RoutePlan {
        src,
        dst,
        tokens,
        send_proxies: vec![src],
        recv_proxies: vec![dst],
        stages: vec![vec![step(LegKind::InterTransfer, src, dst, tokens, src, cluster)]],
    }
}

/// Routes a transfer between ranks on different nodes through `proxies`
/// (paired one-to-one) when that beats the direct path. The payload is split
/// evenly over the pairs; the source and destination keep the largest piece.
pub fn route(cluster: &ClusterSpec, src: Rank, dst: Rank, tokens: u64, proxies: &Proxies) -> RoutePlan {
    debug_assert_eq!(cluster.scope_between(src, dst), Scope::Inter, "route() is for cross-node transfers");
    let x = proxies.send.len().min(proxies.recv.len());
    if tokens == 0 || x <= 1 {
        return direct(cluster, src, dst, tokens);
    }
    let pieces = even_split(tokens, x);
    let (send, recv) = (&proxies.send[..x], &proxies.recv[..x]);
    let dispatch = (1..x).map(|k| step(LegKind::Dispatch, src, send[k], pieces[k], src, cluster)).collect();
    let inter = (0..x).map(|k| step(LegKind::InterTransfer, send[k], recv[k], pieces[k], send[k], cluster)).collect();
    let combine = (1..x).map(|k| step(LegKind::Combine, recv[k], dst, pieces[k], dst, cluster)).collect();
    let plan = RoutePlan {
        src,
        dst,
        tokens,
        send_proxies: send.to_vec(),
        recv_proxies: recv.to_vec(),
        stages: vec![dispatch, inter, combine],
    };
    if plan.time() < direct_transfer_time(cluster, tokens as f64, Scope::Inter) {
        plan
    } else {
        direct(cluster, src, dst, tokens)
    }
}

/// Route using every rank of both nodes as a potential proxy.
pub fn route_all_available(cluster: &ClusterSpec, src: Rank, dst: Rank, tokens: u64, preferred: &[Rank]) -> RoutePlan {
    let proxies = select_proxies(cluster, src, dst, preferred, &|_| true);
    route(cluster, src, dst, tokens, &proxies)
}
