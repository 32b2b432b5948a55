use std::collections::{BTreeMap, BTreeSet};

use crate::attention::{zigzag_owned, RingKind};
use crate::error::{Error, Result};
use crate::partitioner::{PlacementPlan, Zone};

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(Error::Validation(format!($($arg)*)));
        }
    };
}

/// Checks every structural invariant of a plan: coverage, conservation,
/// per-wave capacity, zone consistency and ring layout.
pub fn validate_plan(plan: &PlacementPlan) -> Result<()> {
    let num_ranks = plan.num_ranks();
    ensure!(plan.device_buckets.len() == num_ranks, "expected {num_ranks} device buckets");
    ensure!(plan.tokens_per_rank.len() == num_ranks, "expected {num_ranks} token counts");
    ensure!(plan.node_buckets.len() == plan.num_nodes, "expected {} node buckets", plan.num_nodes);

    let lengths: BTreeMap<_, _> = plan.sequences.iter().map(|s| (s.id, s.len)).collect();
    ensure!(lengths.len() == plan.sequences.len(), "duplicate sequence ids");

    // Rings wider than half a sequence leave some members without tokens.
    let ring_size: BTreeMap<u64, usize> =
        plan.ring_groups.iter().flat_map(|r| r.sequences.iter().map(|s| (s.id, r.size()))).collect();

    let mut per_seq: BTreeMap<u64, Vec<(u64, u64, usize)>> = BTreeMap::new();
    for (rank, bucket) in plan.device_buckets.iter().enumerate() {
        let mut tokens = 0;
        for f in bucket {
            ensure!(f.rank == rank, "fragment of {} filed under rank {rank} but names {}", f.sequence_id, f.rank);
            ensure!(f.start < f.end, "empty fragment of sequence {}", f.sequence_id);
            ensure!(lengths.contains_key(&f.sequence_id), "unknown sequence {}", f.sequence_id);
            per_seq.entry(f.sequence_id).or_default().push((f.start, f.end, rank));
            tokens += f.len();
        }
        ensure!(
            plan.tokens_per_rank[rank] == tokens,
            "rank {rank} reports {} tokens but hosts {tokens}",
            plan.tokens_per_rank[rank]
        );
    }
    let total: u64 = plan.tokens_per_rank.iter().sum();
    ensure!(total == plan.total_tokens(), "token total {total} != batch total {}", plan.total_tokens());

    for (wave, loads) in plan.tokens_per_rank_and_wave().iter().enumerate() {
        for (rank, &load) in loads.iter().enumerate() {
            ensure!(
                load <= plan.token_capacity,
                "rank {rank} holds {load} tokens in wave {wave}, capacity {}",
                plan.token_capacity
            );
        }
    }

    for (&id, &len) in &lengths {
        let frags = per_seq.get_mut(&id).ok_or_else(|| Error::Validation(format!("sequence {id} has no fragments")))?;
        frags.sort_unstable();
        let mut cursor = 0;
        for &(start, end, _) in frags.iter() {
            ensure!(start == cursor, "sequence {id}: gap or overlap at token {cursor}");
            cursor = end;
        }
        ensure!(cursor == len, "sequence {id}: covered {cursor} of {len} tokens");

        let ranks: BTreeSet<usize> = frags.iter().map(|f| f.2).collect();
        let nodes: BTreeSet<usize> = ranks.iter().map(|&r| plan.node_of(r)).collect();
        match plan.zone_of.get(&id) {
            Some(Zone::Local) => ensure!(ranks.len() == 1, "local sequence {id} spans {} ranks", ranks.len()),
            Some(Zone::IntraNode) => ensure!(
                nodes.len() == 1 && (ranks.len() >= 2 || ring_size.get(&id).is_some_and(|&g| len < 2 * g as u64)),
                "intra-node sequence {id} spans {} nodes / {} ranks",
                nodes.len(),
                ranks.len()
            ),
            Some(Zone::InterNode) => ensure!(
                nodes.len() >= 2 || ring_size.get(&id).is_some_and(|&g| len < 2 * g as u64),
                "inter-node sequence {id} stays on one node"
            ),
            None => return Err(Error::Validation(format!("sequence {id} has no zone"))),
        }
    }

    let mut in_ring = BTreeSet::new();
    for (idx, ring) in plan.ring_groups.iter().enumerate() {
        let g = ring.size();
        ensure!(g >= 2, "ring {idx} has {g} members");
        let distinct: BTreeSet<_> = ring.members.iter().collect();
        ensure!(distinct.len() == g, "ring {idx} repeats a member");
        ensure!(ring.members.iter().all(|&m| m < num_ranks), "ring {idx} names an unknown rank");
        let nodes: BTreeSet<usize> = ring.members.iter().map(|&r| plan.node_of(r)).collect();
        match ring.kind {
            RingKind::InterNode => ensure!(nodes.len() >= 2, "inter-node ring {idx} spans one node"),
            RingKind::IntraNode => ensure!(nodes.len() == 1, "intra-node ring {idx} spans {} nodes", nodes.len()),
        }
        for seq in &ring.sequences {
            ensure!(in_ring.insert(seq.id), "sequence {} appears in two rings", seq.id);
            ensure!(lengths.get(&seq.id) == Some(&seq.len), "ring {idx}: bad length for {}", seq.id);
            ensure!(seq.chunks.len() == 2 * g, "ring {idx}: sequence {} has {} chunks", seq.id, seq.chunks.len());
            let mut cursor = 0;
            for c in &seq.chunks {
                ensure!(c.start == cursor && c.end >= c.start, "ring {idx}: chunks of {} not contiguous", seq.id);
                cursor = c.end;
            }
            ensure!(cursor == seq.len, "ring {idx}: chunks of {} do not cover it", seq.id);
            let expected_zone = match ring.kind {
                RingKind::InterNode => Zone::InterNode,
                RingKind::IntraNode => Zone::IntraNode,
            };
            ensure!(plan.zone_of.get(&seq.id) == Some(&expected_zone), "ring {idx}: zone mismatch for {}", seq.id);
            for (pos, &rank) in ring.members.iter().enumerate() {
                for c in zigzag_owned(pos, g) {
                    let chunk = seq.chunks[c];
                    if chunk.is_empty() {
                        continue;
                    }
                    let hosted = plan.device_buckets[rank].iter().any(|f| {
                        f.sequence_id == seq.id && f.start == chunk.start && f.end == chunk.end && f.wave == ring.wave
                    });
                    ensure!(hosted, "ring {idx}: chunk {c} of {} missing on rank {rank}", seq.id);
                }
            }
        }
    }
    for (&id, &zone) in &plan.zone_of {
        if zone != Zone::Local {
            ensure!(in_ring.contains(&id), "sequence {id} is {zone:?} but not in any ring");
        }
    }
    Ok(())
}
