use proptest::prelude::*;

use cpsim_core::attention::{even_split, ring_rounds, triangle, RingGroup, RingKind, RingSequence};
use cpsim_core::baselines::{self, StrategyId};
use cpsim_core::partitioner::{build_plan, validate_plan};
use cpsim_core::remap::{solve_remap, RemapCosts};
use cpsim_core::routing::route_all_available;
use cpsim_core::simulator::{simulate, Stream};
use cpsim_core::topology::{ClusterSpec, CostCoefficients};
use cpsim_core::workload::SequenceBatch;
use cpsim_core::Error;

fn cluster_with(nodes: std::ops::Range<usize>) -> impl Strategy<Value = ClusterSpec> {
    (nodes, 1usize..5, 8u64..64, 1usize..5, 1.0f64..20.0).prop_map(|(n, p, l, nics, ratio)| {
        ClusterSpec::new(n, p, l, 0.1, 0.1 * ratio, nics.min(p)).unwrap()
    })
}

fn small_cluster() -> impl Strategy<Value = ClusterSpec> {
    cluster_with(1..4)
}

fn coeffs() -> CostCoefficients {
    CostCoefficients::new(1.0, 0.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn even_split_is_near_equal(len in 0u64..10_000, parts in 1usize..64) {
        let s = even_split(len, parts);
        prop_assert_eq!(s.iter().sum::<u64>(), len);
        prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
    }

    #[test]
    fn ring_rounds_cover_the_causal_triangle(g in 1usize..12, extra in 0u64..300) {
        let len = 2 * g as u64 + extra;
        let ring = RingGroup {
            kind: RingKind::IntraNode,
            members: (0..g).collect(),
            wave: 0,
            sequences: vec![RingSequence::new(0, len, g)],
        };
        let rounds = ring_rounds(&ring);
        let total: u64 = rounds.iter().flat_map(|r| r.compute_pairs.iter()).sum();
        prop_assert_eq!(total, triangle(len));
        for r in &rounds {
            prop_assert_eq!(r.send_tokens.iter().sum::<u64>(), len);
        }
    }

    #[test]
    fn plans_are_valid_or_infeasible(
        cluster in small_cluster(),
        lengths in prop::collection::vec(1u64..200, 0..12),
    ) {
        let batch = SequenceBatch::from_lengths(&lengths).unwrap();
        for strategy in StrategyId::ALL {
            match baselines::plan(strategy, &batch, &cluster) {
                Ok(plan) => {
                    prop_assert!(validate_plan(&plan).is_ok());
                    prop_assert_eq!(plan.total_tokens(), batch.total_tokens());
                    prop_assert!(plan.tokens_per_rank_and_wave().iter().flatten().all(|&t| t <= cluster.token_capacity));
                }
                Err(e) => prop_assert!(e.is_infeasible(), "{strategy}: {e}"),
            }
        }
    }

    #[test]
    fn light_batches_always_plan(cluster in small_cluster(), seed in prop::collection::vec(1u64..1000, 1..10)) {
        // Every sequence fits one device and the batch fills under half the cluster.
        let cap = cluster.token_capacity;
        let budget = cluster.cluster_capacity() / 2;
        let mut total = 0;
        let lengths: Vec<u64> = seed
            .iter()
            .map(|&x| 1 + x % cap)
            .take_while(|&l| { total += l; total <= budget })
            .collect();
        let batch = SequenceBatch::from_lengths(&lengths).unwrap();
        prop_assert!(build_plan(&batch, &cluster).is_ok());
    }

    #[test]
    fn routing_never_loses_to_direct(cluster in cluster_with(2..4), tokens in 1u64..100_000, a in 0usize..64, b in 0usize..64) {
        let src = a % cluster.gpus_per_node;
        let dst = cluster.gpus_per_node + b % cluster.gpus_per_node;
        let plan = route_all_available(&cluster, src, dst, tokens, &[]);
        prop_assert!(plan.time() <= cluster.inv_bw_inter * tokens as f64 * (1.0 + 1e-12));
        let moved: u64 = plan.steps().filter(|s| s.kind == cpsim_core::routing::LegKind::InterTransfer).map(|s| s.tokens).sum();
        prop_assert_eq!(moved, tokens);
    }

    #[test]
    fn remap_conserves_tokens(a in prop::collection::vec(0u64..500, 1..10), per_node in 1usize..5, ratio in 1.0f64..10.0) {
        let d = a.len();
        let costs = RemapCosts::new((0..d).map(|i| i / per_node).collect(), 1.0, ratio);
        let sol = solve_remap(&a, &costs);
        let after: Vec<u64> = (0..d)
            .map(|i| a[i] - sol.matrix.row_sums()[i] + sol.matrix.col_sums()[i])
            .collect();
        prop_assert_eq!(&after, &sol.target);
        // The continuous optimum comes from a bisection accurate to 1e-9 relative.
        let tol = 1e-8 * sol.continuous_objective.max(1.0);
        prop_assert!(sol.objective + tol >= sol.continuous_objective);
        prop_assert!(sol.objective <= sol.continuous_objective + ratio + tol);
    }

    #[test]
    fn simulated_lanes_never_overlap(cluster in small_cluster(), lengths in prop::collection::vec(1u64..120, 1..10)) {
        let batch = SequenceBatch::from_lengths(&lengths).unwrap();
        for strategy in StrategyId::ALL {
            let Ok(plan) = baselines::plan(strategy, &batch, &cluster) else { continue };
            let (timeline, report) = simulate(&plan, &cluster, &coeffs()).unwrap();
            for rank in 0..cluster.num_ranks() {
                for stream in Stream::ALL {
                    let mut spans: Vec<(f64, f64)> = timeline
                        .events
                        .iter()
                        .filter(|e| e.rank == rank && e.stream == stream)
                        .map(|e| (e.start, e.end()))
                        .collect();
                    spans.sort_by(|x, y| x.0.total_cmp(&y.0));
                    for w in spans.windows(2) {
                        prop_assert!(w[0].1 <= w[1].0 + 1e-9 * w[1].0.max(1.0));
                    }
                }
            }
            prop_assert!(report.total_step >= report.attention_makespan);
            prop_assert!((report.total_step - report.forward_time * (1.0 + cluster.backward_multiplier)).abs() <= 1e-9 * report.total_step.max(1.0));
        }
    }
}

#[test]
fn oversized_batch_is_infeasible_for_every_strategy() {
    let cluster = ClusterSpec::new(2, 2, 8, 1.0, 10.0, 2).unwrap();
    let batch = SequenceBatch::from_lengths(&[20, 13]).unwrap();
    for strategy in StrategyId::ALL {
        let err = baselines::plan(strategy, &batch, &cluster).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBatch(_)), "{strategy}: {err}");
    }
}
