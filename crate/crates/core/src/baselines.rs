//! Comparison strategies built on the same plan representation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partitioner::{build_plan, node_buckets_from, PartitionStats, PlacementPlan, PlanAssembler};
use crate::topology::{ClusterSpec, Rank};
use crate::workload::{Sequence, SequenceBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Zeppelin,
    TeCp,
    LlamaCp,
    HybridDp,
}

impl StrategyId {
    pub const ALL: [StrategyId; 4] =
        [StrategyId::Zeppelin, StrategyId::TeCp, StrategyId::LlamaCp, StrategyId::HybridDp];

    pub fn name(self) -> &'static str {
        match self {
            StrategyId::Zeppelin => "zeppelin",
            StrategyId::TeCp => "te_cp",
            StrategyId::LlamaCp => "llama_cp",
            StrategyId::HybridDp => "hybrid_dp",
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::invalid("strategy", format!("unknown strategy `{s}`")))
    }
}

/// Share of `P * L` above which the hybrid baseline runs a sequence as
/// context parallel instead of data parallel.
pub const DEFAULT_HYBRID_CP_FRACTION: f64 = 1.0;

pub fn plan(strategy: StrategyId, batch: &SequenceBatch, cluster: &ClusterSpec) -> Result<PlacementPlan> {
    match strategy {
        StrategyId::Zeppelin => build_plan(batch, cluster),
        StrategyId::TeCp => plan_global_ring(StrategyId::TeCp, batch, cluster),
        StrategyId::LlamaCp => plan_global_ring(StrategyId::LlamaCp, batch, cluster),
        StrategyId::HybridDp => plan_hybrid_dp(batch, cluster, DEFAULT_HYBRID_CP_FRACTION),
    }
}

fn check_capacity(strategy: StrategyId, plan: Result<PlacementPlan>) -> Result<PlacementPlan> {
    plan.map_err(|e| match e {
        Error::Validation(msg) if msg.contains("capacity") => {
            Error::InfeasibleBatch(format!("{strategy}: {msg}"))
        }
        other => other,
    })
}

/// Every sequence zigzag-split over one ring spanning all ranks.
fn plan_global_ring(strategy: StrategyId, batch: &SequenceBatch, cluster: &ClusterSpec) -> Result<PlacementPlan> {
    let members: Vec<Rank> = (0..cluster.num_ranks()).collect();
    let mut asm = PlanAssembler::new(cluster);
    for &s in batch.sequences() {
        asm.place_ring(s, members.clone(), 0);
    }
    let buckets = node_buckets_from(cluster, asm.device_buckets());
    check_capacity(strategy, asm.finish(strategy, batch, None, buckets, PartitionStats::default()))
}

pub fn plan_te_cp(batch: &SequenceBatch, cluster: &ClusterSpec) -> Result<PlacementPlan> {
    plan_global_ring(StrategyId::TeCp, batch, cluster)
}

pub fn plan_llama_cp(batch: &SequenceBatch, cluster: &ClusterSpec) -> Result<PlacementPlan> {
    plan_global_ring(StrategyId::LlamaCp, batch, cluster)
}

/// Long sequences run as one global ring in wave 0; the rest are packed by
/// quadratic cost onto ranks (longest first, least-loaded rank) and split
/// into capacity-sized micro-batches that follow.
pub fn plan_hybrid_dp(batch: &SequenceBatch, cluster: &ClusterSpec, cp_fraction: f64) -> Result<PlacementPlan> {
    if !(cp_fraction.is_finite() && cp_fraction > 0.0) {
        return Err(Error::invalid("cp_fraction", "must be finite and positive"));
    }
    let cap = cluster.token_capacity;
    let threshold = ((cp_fraction * cluster.node_capacity() as f64) as u64).min(cap);
    let mut sorted = batch.sequences().to_vec();
    sorted.sort_by(|a, b| b.len.cmp(&a.len).then(a.id.cmp(&b.id)));
    let (cp, dp): (Vec<Sequence>, Vec<Sequence>) = sorted.into_iter().partition(|s| s.len > threshold);

    let mut asm = PlanAssembler::new(cluster);
    let members: Vec<Rank> = (0..cluster.num_ranks()).collect();
    for &s in &cp {
        asm.place_ring(s, members.clone(), 0);
    }

    let ranks = cluster.num_ranks();
    let mut cost = vec![0u128; ranks];
    let mut lists: Vec<Vec<Sequence>> = vec![Vec::new(); ranks];
    for s in dp {
        let r = (0..ranks).min_by_key(|&r| (cost[r], r)).expect("at least one rank");
        cost[r] += s.len as u128 * s.len as u128;
        lists[r].push(s);
    }
    let first_wave = u32::from(!cp.is_empty());
    for (rank, list) in lists.into_iter().enumerate() {
        let (mut wave, mut used) = (first_wave, 0);
        for s in list {
            if used + s.len > cap {
                wave += 1;
                used = 0;
            }
            used += s.len;
            asm.place_local(s, rank, wave);
        }
    }
    let buckets = node_buckets_from(cluster, asm.device_buckets());
    check_capacity(StrategyId::HybridDp, asm.finish(StrategyId::HybridDp, batch, None, buckets, PartitionStats::default()))
}
