//! Ring groups, zigzag causal chunking and per-rank attention schedules.
//!
//! Work is accounted in visible (query, key) pairs under a causal mask and
//! communication in KV tokens; no tensors are involved.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partitioner::{PlacementPlan, Zone};
use crate::topology::Rank;
use crate::workload::SequenceId;

/// Half-open token interval in sequence coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenRange {
    pub start: u64,
    pub end: u64,
}

impl TokenRange {
    pub fn new(start: u64, end: u64) -> Self {
        debug_assert!(start <= end);
        TokenRange { start, end }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

impl From<Range<u64>> for TokenRange {
    fn from(r: Range<u64>) -> Self {
        TokenRange::new(r.start, r.end)
    }
}

/// Sizes of `parts` near-equal pieces of `len`: the first `len % parts`
/// pieces get one extra token.
pub fn even_split(len: u64, parts: usize) -> Vec<u64> {
    assert!(parts > 0, "cannot split into zero parts");
    let parts_u = parts as u64;
    let (base, rem) = (len / parts_u, len % parts_u);
    (0..parts_u).map(|i| base + u64::from(i < rem)).collect()
}

/// Consecutive ranges with the sizes of [`even_split`].
pub fn even_ranges(len: u64, parts: usize) -> Vec<TokenRange> {
    let mut start = 0;
    even_split(len, parts)
        .into_iter()
        .map(|size| {
            let r = TokenRange::new(start, start + size);
            start += size;
            r
        })
        .collect()
}

/// `2g` contiguous chunks of `len`; ring position `i` owns chunks `i` and
/// `2g - 1 - i`. Chunks may be empty when `len < 2g`.
pub fn zigzag_ranges(len: u64, g: usize) -> Vec<TokenRange> {
    even_ranges(len, 2 * g)
}

/// Chunk indices held by ring position `i`.
pub fn zigzag_owned(i: usize, g: usize) -> [usize; 2] {
    [i, 2 * g - 1 - i]
}

/// Per-position token counts for a zigzag layout of `len` over `g` ranks.
pub fn zigzag_shares(len: u64, g: usize) -> Vec<u64> {
    let sizes = even_split(len, 2 * g);
    (0..g).map(|i| zigzag_owned(i, g).iter().map(|&c| sizes[c]).sum()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZigzagChunks {
    pub chunks: Vec<TokenRange>,
    /// `owned[i]` = the two chunk indices held by ring position `i`.
    pub owned: Vec<[usize; 2]>,
}

pub fn zigzag_chunks(len: u64, g: usize) -> Result<ZigzagChunks> {
    if g == 0 || len < 2 * g as u64 {
        return Err(Error::SequenceTooShort { len, ring_size: g });
    }
    Ok(ZigzagChunks {
        chunks: zigzag_ranges(len, g),
        owned: (0..g).map(|i| zigzag_owned(i, g)).collect(),
    })
}

/// Pairs `(q, k)` with `q` in `query`, `k` in `keys` and `k <= q`.
fn pairs_between(query: TokenRange, keys: TokenRange) -> u64 {
    if query.is_empty() || keys.is_empty() {
        return 0;
    }
    let (a, b, c, d) = (query.start, query.end, keys.start, keys.end);
    // Queries below `c` see nothing; in [c, d) query q sees q + 1 - c keys;
    // from d onwards every query sees the whole key range.
    let lo = a.max(c);
    let hi = b.min(d);
    let mut total = 0;
    if lo < hi {
        // sum_{q=lo}^{hi-1} (q + 1 - c)
        let first = lo + 1 - c;
        let last = hi - c;
        total += (first + last) * (hi - lo) / 2;
    }
    let full_from = a.max(d);
    if full_from < b {
        total += (b - full_from) * (d - c);
    }
    total
}

/// Causal pairs of `query` against the union of `context` ranges, which must
/// be disjoint.
pub fn visible_pairs(query: TokenRange, context: &[TokenRange]) -> u64 {
    context.iter().map(|&k| pairs_between(query, k)).sum()
}

pub fn triangle(len: u64) -> u64 {
    len * (len + 1) / 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RingKind {
    InterNode,
    IntraNode,
}

/// One sequence laid out over a ring: `chunks` has `2G` entries, position `i`
/// holds chunks `i` and `2G - 1 - i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingSequence {
    pub id: SequenceId,
    pub len: u64,
    pub chunks: Vec<TokenRange>,
}

impl RingSequence {
    pub fn new(id: SequenceId, len: u64, g: usize) -> Self {
        RingSequence { id, len, chunks: zigzag_ranges(len, g) }
    }

    pub fn chunk_size(&self) -> u64 {
        self.chunks.iter().map(TokenRange::len).max().unwrap_or(0)
    }

    pub fn held_by(&self, position: usize) -> [TokenRange; 2] {
        let g = self.chunks.len() / 2;
        zigzag_owned(position, g).map(|c| self.chunks[c])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingGroup {
    pub kind: RingKind,
    /// Ring order; KV travels from `members[i]` to `members[i + 1]`.
    pub members: Vec<Rank>,
    /// Micro-batch the ring belongs to.
    pub wave: u32,
    pub sequences: Vec<RingSequence>,
}

impl RingGroup {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn position_of(&self, rank: Rank) -> Option<usize> {
        self.members.iter().position(|&m| m == rank)
    }
}

/// Compute and traffic of one ring round, indexed by ring position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingRound {
    pub round: usize,
    pub compute_pairs: Vec<u64>,
    /// KV tokens position `i` forwards to position `i + 1` during this round.
    pub send_tokens: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingSchedule {
    /// Index into `PlacementPlan::ring_groups`.
    pub ring: usize,
    pub kind: RingKind,
    pub members: Vec<Rank>,
    pub wave: u32,
    pub rounds: Vec<RingRound>,
}

impl RingSchedule {
    pub fn total_pairs(&self, position: usize) -> u64 {
        self.rounds.iter().map(|r| r.compute_pairs[position]).sum()
    }
}

/// Single-device variable-length attention over the rank's local sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalKernel {
    pub rank: Rank,
    pub wave: u32,
    pub sequences: Vec<SequenceId>,
    pub tokens: u64,
    pub pairs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueueItem {
    Ring { ring: usize, round: usize },
    Local { kernel: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSchedule {
    /// Rings in execution order: by wave, inter-node before intra-node.
    pub rings: Vec<RingSchedule>,
    pub locals: Vec<LocalKernel>,
    /// Per-rank execution queue.
    pub queues: Vec<Vec<QueueItem>>,
}

impl AttentionSchedule {
    pub fn ring_kind_of(&self, item: QueueItem) -> Option<RingKind> {
        match item {
            QueueItem::Ring { ring, .. } => Some(self.rings[ring].kind),
            QueueItem::Local { .. } => None,
        }
    }

    /// Pairs computed by each rank over the whole schedule.
    pub fn pairs_per_rank(&self, num_ranks: usize) -> Vec<u64> {
        let mut pairs = vec![0; num_ranks];
        for ring in &self.rings {
            for (pos, &rank) in ring.members.iter().enumerate() {
                pairs[rank] += ring.total_pairs(pos);
            }
        }
        for k in &self.locals {
            pairs[k.rank] += k.pairs;
        }
        pairs
    }
}

/// Rounds of one ring. In round `r`, position `i` holds the KV that
/// originated at position `i - r` and forwards it to `i + 1`; after `G`
/// rounds every KV block is back with its owner.
pub fn ring_rounds(ring: &RingGroup) -> Vec<RingRound> {
    let g = ring.size();
    (0..g)
        .map(|r| {
            let mut compute_pairs = vec![0; g];
            let mut send_tokens = vec![0; g];
            for i in 0..g {
                let owner = (i + g - r) % g;
                for seq in &ring.sequences {
                    let q = seq.held_by(i);
                    let kv = seq.held_by(owner);
                    compute_pairs[i] += q.iter().map(|&qr| visible_pairs(qr, &kv)).sum::<u64>();
                    send_tokens[i] += kv.iter().map(TokenRange::len).sum::<u64>();
                }
            }
            RingRound { round: r, compute_pairs, send_tokens }
        })
        .collect()
}

/// Orders every rank's work as inter-node rounds, intra-node rounds, then the
/// local kernel, wave by wave.
pub fn build_schedule(plan: &PlacementPlan) -> AttentionSchedule {
    let num_ranks = plan.num_ranks();
    let mut order: Vec<usize> = (0..plan.ring_groups.len()).collect();
    order.sort_by_key(|&i| {
        let r = &plan.ring_groups[i];
        (r.wave, r.kind, r.members.clone())
    });
    let rings: Vec<RingSchedule> = order
        .into_iter()
        .map(|i| {
            let ring = &plan.ring_groups[i];
            RingSchedule {
                ring: i,
                kind: ring.kind,
                members: ring.members.clone(),
                wave: ring.wave,
                rounds: ring_rounds(ring),
            }
        })
        .collect();

    let mut locals = Vec::new();
    let waves: BTreeSet<u32> = plan.device_buckets.iter().flatten().map(|f| f.wave).collect();
    for &wave in &waves {
        for (rank, bucket) in plan.device_buckets.iter().enumerate() {
            let mut kernel =
                LocalKernel { rank, wave, sequences: Vec::new(), tokens: 0, pairs: 0 };
            for f in bucket.iter().filter(|f| f.wave == wave) {
                if plan.zone_of.get(&f.sequence_id) == Some(&Zone::Local) {
                    kernel.sequences.push(f.sequence_id);
                    kernel.tokens += f.len();
                    kernel.pairs += triangle(f.len());
                }
            }
            if !kernel.sequences.is_empty() {
                locals.push(kernel);
            }
        }
    }

    let mut queues = vec![Vec::new(); num_ranks];
    let mut local_iter = locals.iter().enumerate().peekable();
    let mut ring_iter = rings.iter().enumerate().peekable();
    for &wave in waves.iter().chain(rings.iter().map(|r| &r.wave)).collect::<BTreeSet<_>>() {
        while let Some((idx, ring)) = ring_iter.next_if(|(_, r)| r.wave == wave) {
            for &rank in &ring.members {
                queues[rank].extend((0..ring.rounds.len()).map(|round| QueueItem::Ring { ring: idx, round }));
            }
        }
        while let Some((idx, kernel)) = local_iter.next_if(|(_, k)| k.wave == wave) {
            queues[kernel.rank].push(QueueItem::Local { kernel: idx });
        }
    }
    AttentionSchedule { rings, locals, queues }
}
