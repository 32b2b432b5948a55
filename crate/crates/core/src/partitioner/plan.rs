use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::RingGroup;
use crate::baselines::StrategyId;
use crate::error::{Error, Result};
use crate::topology::Rank;
use crate::workload::{Sequence, SequenceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    Local,
    IntraNode,
    InterNode,
}

/// Contiguous slice `[start, end)` of a sequence hosted by one rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub sequence_id: SequenceId,
    pub start: u64,
    pub end: u64,
    pub rank: Rank,
    /// Micro-batch index; only the hybrid baseline uses more than one.
    #[serde(default)]
    pub wave: u32,
}

impl Fragment {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Tokens of one sequence assigned to a node by the inter-node stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeShare {
    pub sequence_id: SequenceId,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Final inter-node threshold: sequences at least this long span nodes.
    pub s1: u64,
    /// Final per-node local threshold.
    pub s0_per_node: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub inter_iterations: usize,
    pub inter_threshold_updates: usize,
    pub inter_retries: usize,
    pub intra_iterations: Vec<usize>,
    pub intra_threshold_updates: Vec<usize>,
    pub intra_retries: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub strategy: StrategyId,
    pub num_nodes: usize,
    pub gpus_per_node: usize,
    pub token_capacity: u64,
    pub sequences: Vec<Sequence>,
    pub zone_of: BTreeMap<SequenceId, Zone>,
    /// Absent for baselines, which do not use zone thresholds.
    pub thresholds: Option<Thresholds>,
    pub node_buckets: Vec<Vec<NodeShare>>,
    pub device_buckets: Vec<Vec<Fragment>>,
    pub ring_groups: Vec<RingGroup>,
    pub tokens_per_rank: Vec<u64>,
    #[serde(default)]
    pub stats: PartitionStats,
}

impl PlacementPlan {
    pub fn num_ranks(&self) -> usize {
        self.num_nodes * self.gpus_per_node
    }

    pub fn node_of(&self, rank: Rank) -> usize {
        rank / self.gpus_per_node
    }

    pub fn total_tokens(&self) -> u64 {
        self.sequences.iter().map(|s| s.len).sum()
    }

    pub fn num_waves(&self) -> u32 {
        self.device_buckets.iter().flatten().map(|f| f.wave + 1).max().unwrap_or(0)
    }

    pub fn fragments(&self) -> impl Iterator<Item = &Fragment> {
        self.device_buckets.iter().flatten()
    }

    /// Tokens per rank within each wave, `[wave][rank]`.
    pub fn tokens_per_rank_and_wave(&self) -> Vec<Vec<u64>> {
        let mut out = vec![vec![0; self.num_ranks()]; self.num_waves() as usize];
        for f in self.fragments() {
            out[f.wave as usize][f.rank] += f.len();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Malformed { what: "plan file", message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
