//! Two-level hierarchical sequence partitioning.
//!
//! The inter-node stage splits the longest sequences across nodes and packs
//! the rest into node buckets; the intra-node stage then splits medium
//! sequences across a node's devices to balance quadratic work and packs the
//! remaining short sequences as local work. Both stages lower their threshold
//! to the longest unplaceable sequence whenever capacity is exceeded.

mod plan;
mod validate;

use std::collections::{BTreeMap, HashMap};

pub use plan::{Fragment, NodeShare, PartitionStats, PlacementPlan, Thresholds, Zone};
pub use validate::validate_plan;

use crate::attention::{zigzag_owned, zigzag_shares, RingGroup, RingKind, RingSequence};
use crate::baselines::StrategyId;
use crate::error::{Error, Result};
use crate::topology::{ClusterSpec, Rank};
use crate::workload::{Sequence, SequenceBatch, SequenceId};

/// A sequence split across `nodes.len()` nodes, `per_node` devices each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterPlacement {
    pub sequence: Sequence,
    /// Participating nodes in ring order (ascending).
    pub nodes: Vec<usize>,
    pub per_node: usize,
    /// Tokens landing on each of `nodes`.
    pub node_shares: Vec<u64>,
}

impl InterPlacement {
    pub fn ring_size(&self) -> usize {
        self.nodes.len() * self.per_node
    }

    /// Per-device zigzag shares for the `k`-th participating node.
    pub fn device_shares(&self, k: usize) -> Vec<u64> {
        let shares = zigzag_shares(self.sequence.len, self.ring_size());
        shares[k * self.per_node..(k + 1) * self.per_node].to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterNodePartition {
    pub s1: u64,
    pub node_buckets: Vec<Vec<NodeShare>>,
    pub inter: Vec<InterPlacement>,
    /// Sequences below `s1`, per node, longest first.
    pub own: Vec<Vec<Sequence>>,
    pub iterations: usize,
    pub threshold_updates: usize,
    pub retries: usize,
}

impl InterNodePartition {
    pub fn node_loads(&self) -> Vec<u64> {
        self.node_buckets.iter().map(|b| b.iter().map(|s| s.tokens).sum()).collect()
    }

    /// Input of the intra-node stage for `node`.
    pub fn node_bucket(&self, node: usize) -> NodeBucket {
        let inter = self
            .inter
            .iter()
            .filter_map(|p| {
                let k = p.nodes.iter().position(|&n| n == node)?;
                Some(InterPiece { sequence_id: p.sequence.id, device_shares: p.device_shares(k) })
            })
            .collect();
        NodeBucket { node, inter, own: self.own[node].clone() }
    }
}

/// The part of a cross-node sequence hosted by one node, already split
/// across `device_shares.len()` devices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterPiece {
    pub sequence_id: SequenceId,
    pub device_shares: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeBucket {
    pub node: usize,
    pub inter: Vec<InterPiece>,
    pub own: Vec<Sequence>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceShare {
    pub sequence_id: SequenceId,
    pub tokens: u64,
}

/// A node-local sequence and the devices (local indices, ascending) it uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntraPlacement {
    pub sequence: Sequence,
    pub devices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntraNodePartition {
    pub node: usize,
    pub s0: u64,
    pub device_buckets: Vec<Vec<DeviceShare>>,
    /// Devices chosen for each inter piece, in piece order.
    pub inter_devices: Vec<(SequenceId, Vec<usize>)>,
    /// Own sequences; one device means local placement.
    pub placements: Vec<IntraPlacement>,
    pub iterations: usize,
    pub threshold_updates: usize,
    pub retries: usize,
}

impl IntraNodePartition {
    pub fn device_loads(&self) -> Vec<u64> {
        self.device_buckets.iter().map(|b| b.iter().map(|s| s.tokens).sum()).collect()
    }
}

fn argmin(loads: &[u64]) -> usize {
    loads
        .iter()
        .enumerate()
        .min_by_key(|&(i, &l)| (l, i))
        .map(|(i, _)| i)
        .expect("non-empty loads")
}

/// `k` least-loaded indices (ties to the lowest index), returned ascending.
fn least_loaded(loads: &[u64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..loads.len()).collect();
    idx.sort_by_key(|&i| (loads[i], i));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

fn longest_first(mut seqs: Vec<Sequence>) -> Vec<Sequence> {
    seqs.sort_by(|a, b| b.len.cmp(&a.len).then(a.id.cmp(&b.id)));
    seqs
}

/// Largest ring that still gives every position at least one token.
fn max_ring(len: u64, limit: usize) -> usize {
    limit.min(len.max(1) as usize).max(1)
}

/// Number of nodes and devices per node for splitting `len` tokens into
/// `nodes` node chunks, keeping at least two tokens per ring position so the
/// zigzag layout has no empty chunks and node shares stay even.
fn ring_shape(len: u64, nodes: usize, gpus_per_node: usize) -> (usize, usize) {
    let k = nodes.min((len / 2).max(1) as usize).max(1);
    let m = (len / (2 * k as u64)).clamp(1, gpus_per_node as u64) as usize;
    (k, m)
}

/// Inter-node stage: returns node buckets and the final threshold `s1`.
pub fn partition_inter_node(batch: &SequenceBatch, cluster: &ClusterSpec) -> Result<InterNodePartition> {
    let n = cluster.num_nodes;
    let node_cap = cluster.node_capacity();
    if batch.total_tokens() > cluster.cluster_capacity() {
        return Err(Error::InfeasibleBatch(format!(
            "{} tokens exceed cluster capacity {}",
            batch.total_tokens(),
            cluster.cluster_capacity()
        )));
    }
    let sorted = longest_first(batch.sequences().to_vec());
    let mut s1 = node_cap;
    let mut extra: HashMap<SequenceId, usize> = HashMap::new();
    let (mut iterations, mut threshold_updates, mut retries) = (0, 0, 0);

    'outer: loop {
        iterations += 1;
        let mut buckets: Vec<Vec<NodeShare>> = vec![Vec::new(); n];
        let mut loads = vec![0u64; n];
        let mut own: Vec<Vec<Sequence>> = vec![Vec::new(); n];
        let split = sorted.partition_point(|s| s.len >= s1);
        let (z2, z01) = sorted.split_at(split);
        let z2_total: u64 = z2.iter().map(|s| s.len).sum();

        let mut inter = Vec::with_capacity(z2.len());
        let mut overflow: Option<(SequenceId, usize)> = None;
        for s in z2 {
            // ceil(|s| / s_avg) with s_avg = sum(z2) / N
            let chunks = (s.len as u128 * n as u128).div_ceil(z2_total as u128) as usize;
            let requested = (chunks + extra.get(&s.id).copied().unwrap_or(0)).min(n);
            let (k, m) = ring_shape(s.len, requested, cluster.gpus_per_node);
            let mut nodes = least_loaded(&loads, k);
            nodes.sort_unstable();
            let positions = zigzag_shares(s.len, k * m);
            let node_shares: Vec<u64> = positions.chunks(m).map(|c| c.iter().sum()).collect();
            for (&node, &tokens) in nodes.iter().zip(&node_shares) {
                buckets[node].push(NodeShare { sequence_id: s.id, tokens });
                loads[node] += tokens;
                if loads[node] > node_cap && overflow.is_none() {
                    overflow = Some((s.id, k));
                }
            }
            inter.push(InterPlacement { sequence: *s, nodes, per_node: m, node_shares });
        }
        if let Some((id, k)) = overflow {
            let len = sorted.iter().find(|s| s.id == id).map_or(0, |s| s.len);
            let (next_k, _) = ring_shape(len, (k + 1).min(n), cluster.gpus_per_node);
            retries += 1;
            if next_k <= k || retries > cluster.num_ranks() {
                return Err(Error::InfeasibleBatch(format!(
                    "cross-node chunks of sequence {id} exceed node capacity {node_cap}"
                )));
            }
            *extra.entry(id).or_default() += 1;
            continue;
        }

        for s in z01 {
            let idx = argmin(&loads);
            if loads[idx] + s.len > node_cap {
                s1 = z01[0].len;
                threshold_updates += 1;
                continue 'outer;
            }
            buckets[idx].push(NodeShare { sequence_id: s.id, tokens: s.len });
            loads[idx] += s.len;
            own[idx].push(*s);
        }
        return Ok(InterNodePartition {
            s1,
            node_buckets: buckets,
            inter,
            own,
            iterations,
            threshold_updates,
            retries,
        });
    }
}

/// Intra-node stage for one node bucket: returns device buckets and the
/// final local threshold `s0`.
pub fn partition_intra_node(bucket: &NodeBucket, cluster: &ClusterSpec) -> Result<IntraNodePartition> {
    let p = cluster.gpus_per_node;
    let cap = cluster.token_capacity;
    let node = bucket.node;
    let own = longest_first(bucket.own.clone());
    let mut s0 = cap;
    let mut extra: HashMap<SequenceId, usize> = HashMap::new();
    let (mut iterations, mut threshold_updates, mut retries) = (0, 0, 0);

    'outer: loop {
        iterations += 1;
        let mut buckets: Vec<Vec<DeviceShare>> = vec![Vec::new(); p];
        let mut loads = vec![0u64; p];

        let mut inter_devices = Vec::with_capacity(bucket.inter.len());
        for piece in &bucket.inter {
            let m = piece.device_shares.len();
            let devices = if m == p { (0..p).collect() } else { least_loaded(&loads, m) };
            for (&d, &tokens) in devices.iter().zip(&piece.device_shares) {
                buckets[d].push(DeviceShare { sequence_id: piece.sequence_id, tokens });
                loads[d] += tokens;
            }
            inter_devices.push((piece.sequence_id, devices));
        }
        if let Some(d) = loads.iter().position(|&l| l > cap) {
            return Err(Error::InfeasibleNode {
                node,
                reason: format!("cross-node chunks put {} tokens on device {d}", loads[d]),
            });
        }

        let split = own.partition_point(|s| s.len >= s0);
        let (z1, z0) = own.split_at(split);
        let c_total: u128 = z1.iter().map(|s| s.len as u128 * s.len as u128).sum();
        let mut placements = Vec::with_capacity(own.len());
        let mut cursor = 0;
        let mut overflow: Option<(SequenceId, usize)> = None;
        let mut ring_of: HashMap<SequenceId, (usize, u64)> = HashMap::new();
        for s in z1 {
            // ceil(|s|^2 / c_avg) with c_avg = sum(z1 |s|^2) / P
            let fragments = (s.len as u128 * s.len as u128 * p as u128).div_ceil(c_total) as usize;
            let g = max_ring(s.len, (fragments + extra.get(&s.id).copied().unwrap_or(0)).min(p));
            let mut devices: Vec<usize> = (0..g).map(|i| (cursor + i) % p).collect();
            cursor = (cursor + g) % p;
            devices.sort_unstable();
            for (&d, tokens) in devices.iter().zip(zigzag_shares(s.len, g)) {
                buckets[d].push(DeviceShare { sequence_id: s.id, tokens });
                loads[d] += tokens;
                if loads[d] > cap && overflow.is_none() {
                    overflow = Some((s.id, d));
                }
            }
            ring_of.insert(s.id, (g, s.len));
            placements.push(IntraPlacement { sequence: *s, devices });
        }
        if let Some((id, d)) = overflow {
            retries += 1;
            let can_grow = |sid: &SequenceId| ring_of.get(sid).is_some_and(|&(g, len)| g < max_ring(len, p));
            // Grow the offender; once it spans every device it can, grow the
            // split sequences it collides with instead.
            let grow: Vec<SequenceId> = if can_grow(&id) {
                vec![id]
            } else {
                buckets[d].iter().map(|f| f.sequence_id).filter(can_grow).collect()
            };
            if grow.is_empty() || retries > cluster.num_ranks() {
                return Err(Error::InfeasibleNode {
                    node,
                    reason: format!("fragments of sequence {id} exceed device capacity {cap}"),
                });
            }
            for sid in grow {
                *extra.entry(sid).or_default() += 1;
            }
            continue;
        }

        for s in z0 {
            let idx = argmin(&loads);
            if loads[idx] + s.len > cap {
                s0 = z0[0].len;
                threshold_updates += 1;
                continue 'outer;
            }
            buckets[idx].push(DeviceShare { sequence_id: s.id, tokens: s.len });
            loads[idx] += s.len;
            placements.push(IntraPlacement { sequence: *s, devices: vec![idx] });
        }
        return Ok(IntraNodePartition {
            node,
            s0,
            device_buckets: buckets,
            inter_devices,
            placements,
            iterations,
            threshold_updates,
            retries,
        });
    }
}

/// Accumulates ring and local placements into a plan.
#[derive(Debug)]
pub(crate) struct PlanAssembler {
    cluster: ClusterSpec,
    device_buckets: Vec<Vec<Fragment>>,
    rings: BTreeMap<(u32, RingKind, Vec<Rank>), Vec<RingSequence>>,
    zone_of: BTreeMap<SequenceId, Zone>,
}

impl PlanAssembler {
    pub(crate) fn new(cluster: &ClusterSpec) -> Self {
        PlanAssembler {
            cluster: *cluster,
            device_buckets: vec![Vec::new(); cluster.num_ranks()],
            rings: BTreeMap::new(),
            zone_of: BTreeMap::new(),
        }
    }

    pub(crate) fn device_buckets(&self) -> &[Vec<Fragment>] {
        &self.device_buckets
    }

    pub(crate) fn place_local(&mut self, seq: Sequence, rank: Rank, wave: u32) {
        self.device_buckets[rank].push(Fragment { sequence_id: seq.id, start: 0, end: seq.len, rank, wave });
        self.zone_of.insert(seq.id, Zone::Local);
    }

    /// Zigzag layout of `seq` over `members`; a single member means local.
    pub(crate) fn place_ring(&mut self, seq: Sequence, members: Vec<Rank>, wave: u32) {
        if members.len() == 1 {
            self.place_local(seq, members[0], wave);
            return;
        }
        let g = members.len();
        let ring_seq = RingSequence::new(seq.id, seq.len, g);
        for (pos, &rank) in members.iter().enumerate() {
            for c in zigzag_owned(pos, g) {
                let chunk = ring_seq.chunks[c];
                if !chunk.is_empty() {
                    self.device_buckets[rank].push(Fragment {
                        sequence_id: seq.id,
                        start: chunk.start,
                        end: chunk.end,
                        rank,
                        wave,
                    });
                }
            }
        }
        let spans_nodes = members.iter().any(|&r| self.cluster.node_of(r) != self.cluster.node_of(members[0]));
        let (kind, zone) = if spans_nodes {
            (RingKind::InterNode, Zone::InterNode)
        } else {
            (RingKind::IntraNode, Zone::IntraNode)
        };
        self.zone_of.insert(seq.id, zone);
        self.rings.entry((wave, kind, members)).or_default().push(ring_seq);
    }

    pub(crate) fn finish(
        self,
        strategy: StrategyId,
        batch: &SequenceBatch,
        thresholds: Option<Thresholds>,
        node_buckets: Vec<Vec<NodeShare>>,
        stats: PartitionStats,
    ) -> Result<PlacementPlan> {
        let ring_groups = self
            .rings
            .into_iter()
            .map(|((wave, kind, members), sequences)| RingGroup { kind, members, wave, sequences })
            .collect();
        let tokens_per_rank = self.device_buckets.iter().map(|b| b.iter().map(Fragment::len).sum()).collect();
        let plan = PlacementPlan {
            strategy,
            num_nodes: self.cluster.num_nodes,
            gpus_per_node: self.cluster.gpus_per_node,
            token_capacity: self.cluster.token_capacity,
            sequences: batch.sequences().to_vec(),
            zone_of: self.zone_of,
            thresholds,
            node_buckets,
            device_buckets: self.device_buckets,
            ring_groups,
            tokens_per_rank,
            stats,
        };
        validate_plan(&plan)?;
        Ok(plan)
    }
}

/// Node buckets as seen from the final device placement.
pub(crate) fn node_buckets_from(cluster: &ClusterSpec, buckets: &[Vec<Fragment>]) -> Vec<Vec<NodeShare>> {
    let mut per_node: Vec<BTreeMap<SequenceId, u64>> = vec![BTreeMap::new(); cluster.num_nodes];
    for f in buckets.iter().flatten() {
        *per_node[cluster.node_of(f.rank)].entry(f.sequence_id).or_default() += f.len();
    }
    per_node
        .into_iter()
        .map(|m| m.into_iter().map(|(sequence_id, tokens)| NodeShare { sequence_id, tokens }).collect())
        .collect()
}

/// Runs both partitioning stages and assembles a validated plan.
pub fn build_plan(batch: &SequenceBatch, cluster: &ClusterSpec) -> Result<PlacementPlan> {
    let inter = partition_inter_node(batch, cluster)?;
    let intra: Vec<IntraNodePartition> = (0..cluster.num_nodes)
        .map(|node| partition_intra_node(&inter.node_bucket(node), cluster))
        .collect::<Result<_>>()?;

    let mut asm = PlanAssembler::new(cluster);
    for placement in &inter.inter {
        let members: Vec<Rank> = placement
            .nodes
            .iter()
            .flat_map(|&node| {
                let (_, devices) = intra[node]
                    .inter_devices
                    .iter()
                    .find(|(id, _)| *id == placement.sequence.id)
                    .expect("every node of a cross-node sequence places it");
                devices.iter().map(move |&d| cluster.rank(node, d))
            })
            .collect();
        asm.place_ring(placement.sequence, members, 0);
    }
    for part in &intra {
        for p in &part.placements {
            let members = p.devices.iter().map(|&d| cluster.rank(part.node, d)).collect();
            asm.place_ring(p.sequence, members, 0);
        }
    }

    let stats = PartitionStats {
        inter_iterations: inter.iterations,
        inter_threshold_updates: inter.threshold_updates,
        inter_retries: inter.retries,
        intra_iterations: intra.iter().map(|p| p.iterations).collect(),
        intra_threshold_updates: intra.iter().map(|p| p.threshold_updates).collect(),
        intra_retries: intra.iter().map(|p| p.retries).collect(),
    };
    let thresholds = Thresholds { s1: inter.s1, s0_per_node: intra.iter().map(|p| p.s0).collect() };
    asm.finish(StrategyId::Zeppelin, batch, Some(thresholds), inter.node_buckets.clone(), stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{preset, sample_batch, Dataset};

    fn cluster(n: usize, p: usize, l: u64) -> ClusterSpec {
        ClusterSpec::new(n, p, l, 1.0, 10.0, p).unwrap()
    }

    #[test]
    fn inter_node_hand_trace() {
        let batch = SequenceBatch::from_lengths(&[24, 6, 5, 3]).unwrap();
        let part = partition_inter_node(&batch, &cluster(2, 2, 10)).unwrap();
        assert_eq!(part.s1, 20);
        assert_eq!(part.inter.len(), 1);
        assert_eq!(part.inter[0].nodes, vec![0, 1]);
        assert_eq!(part.inter[0].node_shares, vec![12, 12]);
        let own_lens = |n: usize| part.own[n].iter().map(|s| s.len).collect::<Vec<_>>();
        assert_eq!(own_lens(0), vec![6]);
        assert_eq!(own_lens(1), vec![5, 3]);
        assert_eq!(part.node_loads(), vec![18, 20]);
        assert_eq!(part.threshold_updates, 0);
    }

    #[test]
    fn inter_node_single_node_and_empty() {
        let batch = SequenceBatch::from_lengths(&[7]).unwrap();
        let part = partition_inter_node(&batch, &cluster(1, 4, 4)).unwrap();
        assert_eq!(part.s1, 16);
        assert!(part.inter.is_empty());
        assert_eq!(part.node_loads(), vec![7]);

        let part = partition_inter_node(&SequenceBatch::empty(), &cluster(3, 2, 4)).unwrap();
        assert_eq!(part.s1, 8);
        assert_eq!(part.node_buckets, vec![Vec::new(); 3]);
    }

    #[test]
    fn inter_node_rejects_oversized_batch() {
        let batch = SequenceBatch::from_lengths(&[30, 11]).unwrap();
        let err = partition_inter_node(&batch, &cluster(2, 2, 10)).unwrap_err();
        assert!(err.is_infeasible());
    }

    #[test]
    fn inter_node_lowers_threshold_on_overflow() {
        // Node capacity 16: 9 + 8 cannot share a node with the others.
        let batch = SequenceBatch::from_lengths(&[9, 9, 8, 6]).unwrap();
        let part = partition_inter_node(&batch, &cluster(2, 2, 8)).unwrap();
        assert!(part.s1 < 16);
        assert!(part.threshold_updates >= 1);
        assert!(part.node_loads().iter().all(|&l| l <= 16));
    }

    #[test]
    fn colliding_intra_rings_both_grow() {
        // 20783 and 18069 share node 1; growing only the later one still
        // overfills the device where their round-robin fragments meet.
        let (c, _) = crate::topology::cluster_a(2).unwrap();
        let batch = SequenceBatch::from_lengths(&[20783, 26684, 18069]).unwrap();
        let plan = build_plan(&batch, &c).unwrap();
        assert!(plan.tokens_per_rank.iter().all(|&t| t <= c.token_capacity));
    }

    #[test]
    fn short_sequence_may_split_unevenly() {
        // {4}, {4}, {3, 1}, {1} fits; the 3 has to share two devices 1 + 2.
        let batch = SequenceBatch::from_lengths(&[1, 1, 3, 4, 4]).unwrap();
        let plan = build_plan(&batch, &cluster(2, 2, 4)).unwrap();
        assert_eq!(plan.total_tokens(), 13);
        assert!(plan.tokens_per_rank.iter().all(|&t| t <= 4));
    }

    #[test]
    fn intra_node_hand_trace() {
        let bucket = NodeBucket {
            node: 0,
            inter: vec![InterPiece { sequence_id: 99, device_shares: vec![4, 4] }],
            own: SequenceBatch::from_lengths(&[10, 4, 3]).unwrap().sequences().to_vec(),
        };
        let part = partition_intra_node(&bucket, &cluster(1, 2, 16)).unwrap();
        assert_eq!(part.s0, 16);
        assert_eq!(part.device_loads(), vec![14, 11]);
        let dev = |len: u64| part.placements.iter().find(|p| p.sequence.len == len).unwrap().devices.clone();
        assert_eq!(dev(10), vec![0]);
        assert_eq!(dev(4), vec![1]);
        assert_eq!(dev(3), vec![1]);
    }

    #[test]
    fn intra_node_exact_fit_and_ties() {
        let bucket = NodeBucket { node: 0, inter: vec![], own: vec![Sequence { id: 0, len: 8 }] };
        let part = partition_intra_node(&bucket, &cluster(1, 2, 8)).unwrap();
        assert_eq!(part.s0, 8);
        // |s| >= s0 puts it in the split zone; spread over both devices.
        assert_eq!(part.placements[0].devices.len(), 2);

        let own = SequenceBatch::from_lengths(&[20, 20]).unwrap().sequences().to_vec();
        let part = partition_intra_node(&NodeBucket { node: 0, inter: vec![], own }, &cluster(1, 2, 32)).unwrap();
        assert_eq!(part.s0, 32);
        assert_eq!(part.device_loads(), vec![20, 20]);
        assert_eq!(part.placements[0].devices, vec![0]);
        assert_eq!(part.placements[1].devices, vec![1]);
    }

    #[test]
    fn single_sequence_of_capacity_is_local() {
        let batch = SequenceBatch::from_lengths(&[7]).unwrap();
        let plan = build_plan(&batch, &cluster(1, 2, 8)).unwrap();
        assert_eq!(plan.zone_of[&0], Zone::Local);
        assert_eq!(plan.thresholds.as_ref().unwrap().s0_per_node, vec![8]);
    }

    #[test]
    fn one_token_batch() {
        let batch = SequenceBatch::from_lengths(&[1]).unwrap();
        let plan = build_plan(&batch, &cluster(2, 2, 4)).unwrap();
        assert_eq!(plan.zone_of[&0], Zone::Local);
        assert_eq!(plan.device_buckets[0].len(), 1);
        assert!(plan.ring_groups.is_empty());
    }

    #[test]
    fn hand_traced_plan_covers_every_sequence() {
        let batch = SequenceBatch::from_lengths(&[24, 6, 5, 3]).unwrap();
        let c = cluster(2, 2, 12);
        let plan = build_plan(&batch, &c).unwrap();
        assert_eq!(plan.zone_of[&0], Zone::InterNode);
        assert_eq!(plan.ring_groups.len(), 1);
        assert_eq!(plan.ring_groups[0].members, vec![0, 1, 2, 3]);
        assert_eq!(plan.tokens_per_rank.iter().sum::<u64>(), 38);
        assert!(plan.tokens_per_rank.iter().all(|&t| t <= 12));
    }

    #[test]
    fn sampled_batches_produce_valid_plans() {
        let (c, _) = crate::topology::cluster_a(2).unwrap();
        for dataset in Dataset::ALL {
            for seed in 0..20 {
                let batch = sample_batch(&preset(dataset), 65536, seed);
                let plan = build_plan(&batch, &c).unwrap_or_else(|e| panic!("{dataset} seed {seed}: {e}"));
                assert!(plan.thresholds.as_ref().unwrap().s1 <= c.node_capacity());
            }
        }
    }
}
