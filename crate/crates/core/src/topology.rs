//! Cluster shape and the linear cost model shared by every planner.
//!
//! Costs are expressed per token of KV activation (communication) and per
//! visible query/key pair (attention compute). Hidden size, dtype width and
//! the K+V factor are folded into the inverse-bandwidth coefficients, so the
//! planners never deal with bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global device index, `node * gpus_per_node + local`.
pub type Rank = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub num_nodes: usize,
    pub gpus_per_node: usize,
    /// Maximum tokens a single GPU may host per micro-batch.
    pub token_capacity: u64,
    /// Seconds per KV token over an intra-node link.
    pub inv_bw_intra: f64,
    /// Seconds per KV token over one inter-node path (one NIC).
    pub inv_bw_inter: f64,
    pub nics_per_node: usize,
    pub backward_multiplier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    /// Seconds per visible (query, key) pair of causal attention.
    pub attn_quadratic: f64,
    /// Seconds per token of linear-module compute.
    pub linear_per_token: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Intra,
    Inter,
}

pub const DEFAULT_BACKWARD_MULTIPLIER: f64 = 2.0;

impl ClusterSpec {
    pub fn new(
        num_nodes: usize,
        gpus_per_node: usize,
        token_capacity: u64,
        inv_bw_intra: f64,
        inv_bw_inter: f64,
        nics_per_node: usize,
    ) -> Result<Self> {
        let spec = ClusterSpec {
            num_nodes,
            gpus_per_node,
            token_capacity,
            inv_bw_intra,
            inv_bw_inter,
            nics_per_node,
            backward_multiplier: DEFAULT_BACKWARD_MULTIPLIER,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_backward_multiplier(mut self, multiplier: f64) -> Result<Self> {
        self.backward_multiplier = multiplier;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(Error::invalid("nodes", "must be at least 1"));
        }
        if self.gpus_per_node == 0 {
            return Err(Error::invalid("gpus_per_node", "must be at least 1"));
        }
        if self.token_capacity == 0 {
            return Err(Error::invalid("token_capacity", "must be at least 1"));
        }
        if self.nics_per_node == 0 {
            return Err(Error::invalid("nics_per_node", "must be at least 1"));
        }
        if !(self.inv_bw_intra.is_finite() && self.inv_bw_intra > 0.0) {
            return Err(Error::invalid("inv_bw_intra", "must be finite and positive"));
        }
        if !(self.inv_bw_inter.is_finite() && self.inv_bw_inter >= self.inv_bw_intra) {
            return Err(Error::invalid(
                "inv_bw_inter",
                "must be finite and no smaller than inv_bw_intra",
            ));
        }
        if !(self.backward_multiplier.is_finite() && self.backward_multiplier >= 0.0) {
            return Err(Error::invalid("backward_multiplier", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn num_ranks(&self) -> usize {
        self.num_nodes * self.gpus_per_node
    }

    pub fn node_of(&self, rank: Rank) -> usize {
        rank / self.gpus_per_node
    }

    pub fn local_index(&self, rank: Rank) -> usize {
        rank % self.gpus_per_node
    }

    pub fn rank(&self, node: usize, local: usize) -> Rank {
        node * self.gpus_per_node + local
    }

    pub fn ranks_of_node(&self, node: usize) -> std::ops::Range<Rank> {
        let start = node * self.gpus_per_node;
        start..start + self.gpus_per_node
    }

    /// NIC index (within the node) a rank is attached to. When there are
    /// fewer NICs than GPUs, neighbouring GPUs share one NIC.
    pub fn nic_of(&self, rank: Rank) -> usize {
        self.local_index(rank) * self.nics_per_node.min(self.gpus_per_node) / self.gpus_per_node
    }

    pub fn node_capacity(&self) -> u64 {
        self.gpus_per_node as u64 * self.token_capacity
    }

    pub fn cluster_capacity(&self) -> u64 {
        self.num_ranks() as u64 * self.token_capacity
    }

    pub fn scope_between(&self, a: Rank, b: Rank) -> Scope {
        if self.node_of(a) == self.node_of(b) {
            Scope::Intra
        } else {
            Scope::Inter
        }
    }

    pub fn inv_bw(&self, scope: Scope) -> f64 {
        match scope {
            Scope::Intra => self.inv_bw_intra,
            Scope::Inter => self.inv_bw_inter,
        }
    }
}

impl CostCoefficients {
    pub fn new(attn_quadratic: f64, linear_per_token: f64) -> Result<Self> {
        let coeffs = CostCoefficients { attn_quadratic, linear_per_token };
        coeffs.validate()?;
        Ok(coeffs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.attn_quadratic.is_finite() && self.attn_quadratic > 0.0) {
            return Err(Error::invalid("attn_quadratic", "must be finite and positive"));
        }
        if !(self.linear_per_token.is_finite() && self.linear_per_token >= 0.0) {
            return Err(Error::invalid("linear_per_token", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Sequence lengths at which attention compute stops being able to hide
/// intra-node (`local_max`) and inter-node (`intra_max`) ring traffic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneBoundaries {
    pub local_max: f64,
    pub intra_max: f64,
}

/// Crossing points of the per-device compute curve `α·s²/G` with the
/// per-round send cost `b·s`, for a ring over one node (`G = P`) and over
/// the whole cluster (`G = N·P`). Advisory only; the partitioner derives its
/// operative thresholds from capacity.
pub fn zone_boundaries(cluster: &ClusterSpec, coeffs: &CostCoefficients) -> ZoneBoundaries {
    let p = cluster.gpus_per_node as f64;
    let np = cluster.num_ranks() as f64;
    ZoneBoundaries {
        local_max: p * cluster.inv_bw_intra / coeffs.attn_quadratic,
        intra_max: np * cluster.inv_bw_inter / coeffs.attn_quadratic,
    }
}

pub fn direct_transfer_time(cluster: &ClusterSpec, tokens: f64, scope: Scope) -> f64 {
    cluster.inv_bw(scope) * tokens
}

/// Seconds per token for a link of `bytes_per_second`, given the KV footprint
/// of one token.
pub fn inverse_bandwidth(kv_bytes_per_token: f64, bytes_per_second: f64) -> f64 {
    kv_bytes_per_token / bytes_per_second
}

/// Gigabits per second to bytes per second.
pub fn gbit_per_s(gbit: f64) -> f64 {
    gbit * 1e9 / 8.0
}

/// Gigabytes per second to bytes per second.
pub fn gbyte_per_s(gbyte: f64) -> f64 {
    gbyte * 1e9
}

// Reference model for the built-in preset: a 3B-class dense layer
// (hidden 3200, bf16), so one token's K and V cost 2 * 3200 * 2 bytes and one
// causal pair costs 4 * 3200 FLOPs. Linear modules are ~24 * hidden^2 FLOPs
// per token. Effective throughput assumed for an A800-class GPU.
const PRESET_HIDDEN: f64 = 3200.0;
const PRESET_KV_BYTES_PER_TOKEN: f64 = 2.0 * PRESET_HIDDEN * 2.0;
const PRESET_EFFECTIVE_FLOPS: f64 = 150e12;

/// 8 GPUs per node over a 400 GB/s switch, 4 NICs of 200 Gb/s shared by
/// GPU pairs, 6144 tokens of per-GPU capacity.
pub fn cluster_a(num_nodes: usize) -> Result<(ClusterSpec, CostCoefficients)> {
    let cluster = ClusterSpec::new(
        num_nodes,
        8,
        6144,
        inverse_bandwidth(PRESET_KV_BYTES_PER_TOKEN, gbyte_per_s(400.0)),
        inverse_bandwidth(PRESET_KV_BYTES_PER_TOKEN, gbit_per_s(200.0)),
        4,
    )?;
    let coeffs = CostCoefficients::new(
        4.0 * PRESET_HIDDEN / PRESET_EFFECTIVE_FLOPS,
        24.0 * PRESET_HIDDEN * PRESET_HIDDEN / PRESET_EFFECTIVE_FLOPS,
    )?;
    Ok((cluster, coeffs))
}

/// Resolves a built-in preset name: `cluster_a` (2 nodes) or `cluster_a:<nodes>`.
pub fn preset(name: &str) -> Result<(ClusterSpec, CostCoefficients)> {
    match name.split_once(':') {
        None if name == "cluster_a" => cluster_a(2),
        Some(("cluster_a", nodes)) => {
            let nodes = nodes
                .parse()
                .map_err(|_| Error::invalid("nodes", format!("`{nodes}` is not a node count")))?;
            cluster_a(nodes)
        }
        _ => Err(Error::UnknownPreset(name.to_string())),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterFile {
    nodes: usize,
    gpus_per_node: usize,
    token_capacity: u64,
    inv_bw_intra: f64,
    inv_bw_inter: f64,
    nics_per_node: usize,
    attn_quadratic: f64,
    #[serde(default)]
    linear_per_token: f64,
    #[serde(default = "default_backward_multiplier")]
    backward_multiplier: f64,
}

fn default_backward_multiplier() -> f64 {
    DEFAULT_BACKWARD_MULTIPLIER
}

/// Parses a `key = value` cluster description.
pub fn parse_cluster_config(text: &str) -> Result<(ClusterSpec, CostCoefficients)> {
    let malformed = |message: String| Error::Malformed { what: "cluster config", message };
    let de = toml::Deserializer::parse(text).map_err(|e| malformed(e.message().to_string()))?;
    let file: ClusterFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().message().to_string();
        malformed(if path == "." { message } else { format!("{path}: {message}") })
    })?;
    let cluster = ClusterSpec::new(
        file.nodes,
        file.gpus_per_node,
        file.token_capacity,
        file.inv_bw_intra,
        file.inv_bw_inter,
        file.nics_per_node,
    )?
    .with_backward_multiplier(file.backward_multiplier)?;
    let coeffs = CostCoefficients::new(file.attn_quadratic, file.linear_per_token)?;
    Ok((cluster, coeffs))
}

pub fn render_cluster_config(cluster: &ClusterSpec, coeffs: &CostCoefficients) -> String {
    format!(
        "nodes = {}\ngpus_per_node = {}\ntoken_capacity = {}\ninv_bw_intra = {:e}\n\
         inv_bw_inter = {:e}\nnics_per_node = {}\nattn_quadratic = {:e}\n\
         linear_per_token = {:e}\nbackward_multiplier = {}\n",
        cluster.num_nodes,
        cluster.gpus_per_node,
        cluster.token_capacity,
        cluster.inv_bw_intra,
        cluster.inv_bw_inter,
        cluster.nics_per_node,
        coeffs.attn_quadratic,
        coeffs.linear_per_token,
        cluster.backward_multiplier,
    )
}

/// Loads either a built-in preset name or a config file path.
pub fn load_cluster(source: &str) -> Result<(ClusterSpec, CostCoefficients)> {
    match preset(source) {
        Err(Error::UnknownPreset(_)) => {
            let path = Path::new(source);
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_cluster_config(&text)
        }
        other => other,
    }
}
