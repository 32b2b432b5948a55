//! Discrete-event cost simulation of one training step.
//!
//! Every rank owns three streams (compute, intra-node comm, inter-node comm).
//! Work is list-scheduled: an event starts once its inputs are ready and its
//! stream is free. The forward pass is attention, then the remap into the
//! token-uniform layout, the linear modules, and the inverse remap; the
//! backward pass is the forward timeline stretched by the backward multiplier.

mod report;
mod trace;

use serde::{Deserialize, Serialize};

pub use report::{compare, comparison_csv, report_csv, ComparisonRow, StepReport, CSV_HEADER};
pub use trace::{export_trace, trace_json};

use crate::attention::{build_schedule, AttentionSchedule, RingSchedule};
use crate::baselines::StrategyId;
use crate::error::{Error, Result};
use crate::partitioner::{validate_plan, PlacementPlan};
use crate::remap::{solve_remap, RemapCosts, RemapSolution};
use crate::routing::{route, select_proxies, LegKind, Proxies};
use crate::topology::{ClusterSpec, CostCoefficients, Rank, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stream {
    #[serde(rename = "compute")]
    Compute,
    #[serde(rename = "intra-comm")]
    IntraComm,
    #[serde(rename = "inter-comm")]
    InterComm,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Compute, Stream::IntraComm, Stream::InterComm];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Stream::Compute => "compute",
            Stream::IntraComm => "intra-comm",
            Stream::InterComm => "inter-comm",
        }
    }

    fn for_scope(scope: Scope) -> Stream {
        match scope {
            Scope::Intra => Stream::IntraComm,
            Scope::Inter => Stream::InterComm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RingCompute,
    LocalAttention,
    /// Attention after a full KV all-gather.
    GatheredAttention,
    RingSend,
    Dispatch,
    InterTransfer,
    Combine,
    Allgather,
    RemapForward,
    Linear,
    RemapInverse,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::RingCompute => "ring_compute",
            EventKind::LocalAttention => "local_attention",
            EventKind::GatheredAttention => "gathered_attention",
            EventKind::RingSend => "ring_send",
            EventKind::Dispatch => "dispatch",
            EventKind::InterTransfer => "inter_transfer",
            EventKind::Combine => "combine",
            EventKind::Allgather => "allgather",
            EventKind::RemapForward => "remap_forward",
            EventKind::Linear => "linear",
            EventKind::RemapInverse => "remap_inverse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub rank: Rank,
    pub stream: Stream,
    pub start: f64,
    pub duration: f64,
    pub kind: EventKind,
    pub phase: Phase,
    /// Tokens moved, or (q, k) pairs / tokens processed for compute.
    pub payload: f64,
    pub peer: Option<Rank>,
    /// Shared by the legs of one routed transfer.
    pub route: Option<u64>,
    pub ring: Option<usize>,
    pub round: Option<usize>,
}

impl Event {
    fn new(rank: Rank, stream: Stream, kind: EventKind, duration: f64, payload: f64) -> Self {
        Event {
            rank,
            stream,
            start: 0.0,
            duration,
            kind,
            phase: Phase::Forward,
            payload,
            peer: None,
            route: None,
            ring: None,
            round: None,
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub num_nodes: usize,
    pub gpus_per_node: usize,
    /// Sorted by `(start, rank, stream)`.
    pub events: Vec<Event>,
}

impl Timeline {
    pub fn makespan(&self) -> f64 {
        self.events.iter().map(Event::end).fold(0.0, f64::max)
    }

    pub fn node_of(&self, rank: Rank) -> usize {
        rank / self.gpus_per_node
    }
}

struct Sim<'a> {
    cluster: &'a ClusterSpec,
    coeffs: &'a CostCoefficients,
    free: Vec<[f64; 3]>,
    events: Vec<Event>,
    next_route: u64,
    inter_sent: Vec<u64>,
    intra_sent: Vec<u64>,
    nic_busy: Vec<Vec<f64>>,
    /// Multi-NIC routing of cross-node ring traffic; baselines send directly.
    routing: bool,
}

impl<'a> Sim<'a> {
    fn new(cluster: &'a ClusterSpec, coeffs: &'a CostCoefficients, routing: bool) -> Self {
        let ranks = cluster.num_ranks();
        Sim {
            cluster,
            coeffs,
            free: vec![[0.0; 3]; ranks],
            events: Vec::new(),
            next_route: 0,
            inter_sent: vec![0; ranks],
            intra_sent: vec![0; ranks],
            nic_busy: vec![vec![0.0; cluster.nics_per_node.min(cluster.gpus_per_node)]; cluster.num_nodes],
            routing,
        }
    }

    /// Schedules `ev` no earlier than `ready`; returns its `(start, end)`.
    /// Zero-length events are dropped.
    fn place(&mut self, ready: f64, mut ev: Event) -> (f64, f64) {
        if ev.duration <= 0.0 {
            return (ready, ready);
        }
        let slot = &mut self.free[ev.rank][ev.stream.index()];
        ev.start = ready.max(*slot);
        *slot = ev.end();
        let span = (ev.start, ev.end());
        self.events.push(ev);
        span
    }

    fn account(&mut self, rank: Rank, scope: Scope, tokens: u64, duration: f64) {
        match scope {
            Scope::Intra => self.intra_sent[rank] += tokens,
            Scope::Inter => {
                self.inter_sent[rank] += tokens;
                let node = self.cluster.node_of(rank);
                self.nic_busy[node][self.cluster.nic_of(rank)] += duration;
            }
        }
    }

    /// Moves ring KV from `src` to `dst`; returns its arrival time.
    fn transfer(&mut self, src: Rank, dst: Rank, tokens: u64, ready: f64, members: &[Rank], tag: (usize, usize)) -> f64 {
        if tokens == 0 {
            return ready;
        }
        let (ring, round) = (Some(tag.0), Some(tag.1));
        if self.cluster.scope_between(src, dst) == Scope::Intra {
            let duration = self.cluster.inv_bw_intra * tokens as f64;
            let mut ev = Event::new(src, Stream::IntraComm, EventKind::RingSend, duration, tokens as f64);
            (ev.peer, ev.ring, ev.round) = (Some(dst), ring, round);
            self.account(src, Scope::Intra, tokens, duration);
            return self.place(ready, ev).1;
        }
        let proxies = if self.routing {
            select_proxies(self.cluster, src, dst, members, &|_| true)
        } else {
            Proxies { send: vec![src], recv: vec![dst] }
        };
        let plan = route(self.cluster, src, dst, tokens, &proxies);
        let id = self.next_route;
        self.next_route += 1;
        let mut t = ready;
        for stage in &plan.stages {
            let mut stage_end = t;
            for step in stage {
                let kind = match step.kind {
                    LegKind::Dispatch => EventKind::Dispatch,
                    LegKind::InterTransfer => EventKind::InterTransfer,
                    LegKind::Combine => EventKind::Combine,
                };
                let mut ev = Event::new(step.rank, step.stream, kind, step.duration, step.tokens as f64);
                let peer = if step.rank == step.source { step.dest } else { step.source };
                (ev.peer, ev.route, ev.ring, ev.round) = (Some(peer), Some(id), ring, round);
                self.account(step.source, step.scope, step.tokens, step.duration);
                stage_end = stage_end.max(self.place(t, ev).1);
            }
            t = stage_end;
        }
        t
    }

    fn run_ring(&mut self, idx: usize, ring: &RingSchedule) {
        let g = ring.members.len();
        let mut arrival = vec![0.0; g];
        for (r, round) in ring.rounds.iter().enumerate() {
            let mut next = vec![0.0; g];
            for (i, &rank) in ring.members.iter().enumerate() {
                let pairs = round.compute_pairs[i];
                let mut ev = Event::new(
                    rank,
                    Stream::Compute,
                    EventKind::RingCompute,
                    self.coeffs.attn_quadratic * pairs as f64,
                    pairs as f64,
                );
                (ev.ring, ev.round) = (Some(idx), Some(r));
                let (start, _) = self.place(arrival[i], ev);
                let j = (i + 1) % g;
                next[j] = self.transfer(rank, ring.members[j], round.send_tokens[i], start, &ring.members, (idx, r));
            }
            arrival = next;
        }
    }

    /// KV all-gather around the ring of `members`, then the whole attention
    /// of every member with nothing left to overlap.
    fn run_gathered(&mut self, idx: usize, ring: &RingSchedule) {
        let g = ring.members.len();
        let total: u64 = ring.rounds.first().map_or(0, |r| r.send_tokens.iter().sum());
        let moved = (total as f64 * (g - 1) as f64 / g as f64).round() as u64;
        let spans_nodes = ring.members.iter().any(|&r| self.cluster.node_of(r) != self.cluster.node_of(ring.members[0]));
        let bottleneck = if spans_nodes { Scope::Inter } else { Scope::Intra };
        let duration = self.cluster.inv_bw(bottleneck) * total as f64 * (g - 1) as f64 / g as f64;
        let mut done = 0.0f64;
        for (i, &rank) in ring.members.iter().enumerate() {
            let next = ring.members[(i + 1) % g];
            let scope = self.cluster.scope_between(rank, next);
            let mut ev = Event::new(rank, Stream::for_scope(bottleneck), EventKind::Allgather, duration, moved as f64);
            (ev.peer, ev.ring) = (Some(next), Some(idx));
            self.account(rank, scope, moved, if scope == Scope::Inter { duration } else { 0.0 });
            done = done.max(self.place(0.0, ev).1);
        }
        for (i, &rank) in ring.members.iter().enumerate() {
            let pairs = ring.total_pairs(i);
            let mut ev = Event::new(
                rank,
                Stream::Compute,
                EventKind::GatheredAttention,
                self.coeffs.attn_quadratic * pairs as f64,
                pairs as f64,
            );
            ev.ring = Some(idx);
            self.place(done, ev);
        }
    }

    fn run_attention(&mut self, plan: &PlacementPlan, schedule: &AttentionSchedule) {
        let mut waves: Vec<u32> =
            schedule.rings.iter().map(|r| r.wave).chain(schedule.locals.iter().map(|k| k.wave)).collect();
        waves.sort_unstable();
        waves.dedup();
        for wave in waves {
            for (idx, ring) in schedule.rings.iter().enumerate().filter(|(_, r)| r.wave == wave) {
                if plan.strategy == StrategyId::LlamaCp {
                    self.run_gathered(idx, ring);
                } else {
                    self.run_ring(idx, ring);
                }
            }
            for kernel in schedule.locals.iter().filter(|k| k.wave == wave) {
                let ev = Event::new(
                    kernel.rank,
                    Stream::Compute,
                    EventKind::LocalAttention,
                    self.coeffs.attn_quadratic * kernel.pairs as f64,
                    kernel.pairs as f64,
                );
                self.place(0.0, ev);
            }
        }
    }

    /// Every sender ships its intra-node share, then its cross-node share,
    /// from `t0`. The inverse direction is charged to the same ranks.
    fn run_remap(&mut self, t0: f64, sol: &RemapSolution, kind: EventKind) {
        for (i, row) in sol.matrix.m.iter().enumerate() {
            let mut t = t0;
            for scope in [Scope::Intra, Scope::Inter] {
                for (j, &tokens) in row.iter().enumerate() {
                    if tokens == 0 || j == i || self.cluster.scope_between(i, j) != scope {
                        continue;
                    }
                    let duration = self.cluster.inv_bw(scope) * tokens as f64;
                    let mut ev = Event::new(i, Stream::for_scope(scope), kind, duration, tokens as f64);
                    ev.peer = Some(j);
                    self.account(i, scope, tokens, duration);
                    t = self.place(t, ev).1;
                }
            }
        }
    }
}

/// Simulates one training step of `plan`.
pub fn simulate(plan: &PlacementPlan, cluster: &ClusterSpec, coeffs: &CostCoefficients) -> Result<(Timeline, StepReport)> {
    if plan.num_nodes != cluster.num_nodes
        || plan.gpus_per_node != cluster.gpus_per_node
        || plan.token_capacity != cluster.token_capacity
    {
        return Err(Error::invalid(
            "plan",
            format!(
                "plan was built for {}x{} ranks with capacity {}, cluster has {}x{} with capacity {}",
                plan.num_nodes,
                plan.gpus_per_node,
                plan.token_capacity,
                cluster.num_nodes,
                cluster.gpus_per_node,
                cluster.token_capacity
            ),
        ));
    }
    validate_plan(plan)?;
    let schedule = build_schedule(plan);
    let mut sim = Sim::new(cluster, coeffs, plan.strategy == StrategyId::Zeppelin);

    sim.run_attention(plan, &schedule);
    let attention_makespan = sim.events.iter().map(Event::end).fold(0.0, f64::max);
    let attention_inter_tokens: u64 = sim.inter_sent.iter().sum();

    let (linear_tokens, remap) = if plan.strategy == StrategyId::Zeppelin {
        let sol = solve_remap(&plan.tokens_per_rank, &RemapCosts::from_cluster(cluster));
        (sol.target.clone(), Some(sol))
    } else {
        (plan.tokens_per_rank.clone(), None)
    };
    let remap_cost = remap.as_ref().map_or(0.0, |s| s.objective);

    let t1 = attention_makespan + remap_cost;
    let linear_time = linear_tokens.iter().map(|&t| coeffs.linear_per_token * t as f64).fold(0.0, f64::max);
    let t2 = t1 + linear_time;
    if let Some(sol) = &remap {
        sim.run_remap(attention_makespan, sol, EventKind::RemapForward);
    }
    for (rank, &tokens) in linear_tokens.iter().enumerate() {
        let ev = Event::new(rank, Stream::Compute, EventKind::Linear, coeffs.linear_per_token * tokens as f64, tokens as f64);
        sim.place(t1, ev);
    }
    if let Some(sol) = &remap {
        sim.run_remap(t2, sol, EventKind::RemapInverse);
    }
    let forward_time = t2 + remap_cost;

    let bm = cluster.backward_multiplier;
    let mut events = std::mem::take(&mut sim.events);
    if bm > 0.0 {
        let offset = sim.next_route;
        let backward: Vec<Event> = events
            .iter()
            .map(|e| Event {
                start: forward_time + e.start * bm,
                duration: e.duration * bm,
                phase: Phase::Backward,
                route: e.route.map(|r| r + offset),
                ..e.clone()
            })
            .collect();
        events.extend(backward);
    }
    events.sort_by(|a, b| {
        a.start.total_cmp(&b.start).then(a.rank.cmp(&b.rank)).then(a.stream.cmp(&b.stream))
    });

    let report = StepReport {
        strategy: plan.strategy,
        attention_makespan,
        remap_forward: remap_cost,
        linear_time,
        remap_inverse: remap_cost,
        forward_time,
        total_step: forward_time * (1.0 + bm),
        attention_inter_tokens,
        inter_comm_tokens: sim.inter_sent.iter().sum(),
        intra_comm_tokens: sim.intra_sent.iter().sum(),
        inter_tokens_per_rank: sim.inter_sent,
        intra_tokens_per_rank: sim.intra_sent,
        nic_busy: sim.nic_busy,
        peak_kv_tokens: peak_kv_tokens(plan, &schedule),
        remap_receiver_cost: remap.as_ref().map_or(0.0, |s| s.receiver_costs.iter().copied().fold(0.0, f64::max)),
    };
    let timeline = Timeline { num_nodes: cluster.num_nodes, gpus_per_node: cluster.gpus_per_node, events };
    Ok((timeline, report))
}

/// Largest KV footprint of any rank: its own tokens plus the largest block
/// it receives in one round, or the whole gathered KV for all-gather plans.
fn peak_kv_tokens(plan: &PlacementPlan, schedule: &AttentionSchedule) -> u64 {
    let mut incoming = vec![0u64; plan.num_ranks()];
    for ring in &schedule.rings {
        let g = ring.members.len();
        for round in &ring.rounds {
            for i in 0..g {
                let recv = round.send_tokens[(i + g - 1) % g];
                let held = if plan.strategy == StrategyId::LlamaCp {
                    round.send_tokens.iter().sum()
                } else {
                    recv
                };
                let rank = ring.members[i];
                incoming[rank] = incoming[rank].max(held);
            }
        }
    }
    plan.tokens_per_rank.iter().zip(&incoming).map(|(a, b)| a + b).max().unwrap_or(0)
}
