use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baselines::{plan, StrategyId};
use crate::error::Result;
use crate::simulator::{simulate, Timeline};
use crate::topology::{ClusterSpec, CostCoefficients};
use crate::workload::SequenceBatch;

/// Simulated costs of one training step (seconds unless noted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub strategy: StrategyId,
    pub attention_makespan: f64,
    pub remap_forward: f64,
    pub linear_time: f64,
    pub remap_inverse: f64,
    pub forward_time: f64,
    /// Forward plus backward.
    pub total_step: f64,
    /// Cross-node tokens moved by attention alone (forward).
    pub attention_inter_tokens: u64,
    /// Cross-node tokens moved in the forward pass, remapping included.
    pub inter_comm_tokens: u64,
    pub intra_comm_tokens: u64,
    pub inter_tokens_per_rank: Vec<u64>,
    pub intra_tokens_per_rank: Vec<u64>,
    /// Forward busy time per `[node][nic]`.
    pub nic_busy: Vec<Vec<f64>>,
    pub peak_kv_tokens: u64,
    /// Largest receiver-side remap cost; not part of the remap objective.
    pub remap_receiver_cost: f64,
}

#[derive(Debug)]
pub struct ComparisonRow {
    pub strategy: StrategyId,
    pub outcome: Result<(Timeline, StepReport)>,
    /// `None` when this row or the baseline is infeasible.
    pub speedup_vs_te_cp: Option<f64>,
}

impl ComparisonRow {
    pub fn report(&self) -> Option<&StepReport> {
        self.outcome.as_ref().ok().map(|(_, r)| r)
    }
}

fn run(strategy: StrategyId, batch: &SequenceBatch, cluster: &ClusterSpec, coeffs: &CostCoefficients) -> Result<(Timeline, StepReport)> {
    let p = plan(strategy, batch, cluster)?;
    simulate(&p, cluster, coeffs)
}

fn speedup(baseline: f64, total: f64) -> f64 {
    if total == 0.0 && baseline == 0.0 {
        1.0
    } else {
        baseline / total
    }
}

/// Plans and simulates each strategy; infeasible strategies become error rows.
pub fn compare(
    batch: &SequenceBatch,
    cluster: &ClusterSpec,
    coeffs: &CostCoefficients,
    strategies: &[StrategyId],
) -> Vec<ComparisonRow> {
    let mut rows: Vec<ComparisonRow> = strategies
        .iter()
        .map(|&s| ComparisonRow { strategy: s, outcome: run(s, batch, cluster, coeffs), speedup_vs_te_cp: None })
        .collect();
    let baseline = match rows.iter().find(|r| r.strategy == StrategyId::TeCp) {
        Some(row) => row.report().map(|r| r.total_step),
        None => run(StrategyId::TeCp, batch, cluster, coeffs).ok().map(|(_, r)| r.total_step),
    };
    for row in &mut rows {
        row.speedup_vs_te_cp = match (baseline, row.report()) {
            (Some(b), Some(r)) => Some(speedup(b, r.total_step)),
            _ => None,
        };
    }
    rows
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

pub const CSV_HEADER: &str = "strategy,attention_makespan_s,remap_s,linear_s,total_step_s,speedup_vs_te_cp,inter_comm_tokens,intra_comm_tokens,error";

/// One CSV line per row; infeasible rows carry only the strategy and error.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        match &row.outcome {
            Ok((_, r)) => {
                let speedup = row.speedup_vs_te_cp.map(|s| format!("{s:.6}")).unwrap_or_default();
                writeln!(
                    out,
                    "{},{:.9},{:.9},{:.9},{:.9},{},{},{},",
                    row.strategy,
                    r.attention_makespan,
                    r.remap_forward + r.remap_inverse,
                    r.linear_time,
                    r.total_step,
                    speedup,
                    r.inter_comm_tokens,
                    r.intra_comm_tokens
                )
                .unwrap();
            }
            Err(e) => writeln!(out, "{},,,,,,,,{}", row.strategy, csv_field(&e.to_string())).unwrap(),
        }
    }
    out
}

/// Single-row report for `simulate`, without a speedup column value.
pub fn report_csv(report: &StepReport) -> String {
    let row = ComparisonRow {
        strategy: report.strategy,
        outcome: Ok((Timeline { num_nodes: 0, gpus_per_node: 1, events: Vec::new() }, report.clone())),
        speedup_vs_te_cp: (report.strategy == StrategyId::TeCp).then_some(1.0),
    };
    comparison_csv(std::slice::from_ref(&row))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_rows_and_unit_speedup() {
        let cluster = ClusterSpec::new(2, 2, 64, 1.0, 10.0, 2).unwrap();
        let coeffs = CostCoefficients::new(1.0, 0.5).unwrap();
        let batch = SequenceBatch::from_lengths(&[40, 12, 9, 3, 2, 1]).unwrap();
        let rows = compare(&batch, &cluster, &coeffs, &StrategyId::ALL);
        assert_eq!(rows.len(), 4);
        let te = rows.iter().find(|r| r.strategy == StrategyId::TeCp).unwrap();
        assert_eq!(te.speedup_vs_te_cp, Some(1.0));
        let csv = comparison_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with(CSV_HEADER));
    }

    #[test]
    fn infeasible_strategy_is_an_error_row() {
        // 5 + 5 on a 2x1 cluster with capacity 5 fits zeppelin exactly but
        // not the global ring, whose first position takes the odd tokens.
        let cluster = ClusterSpec::new(2, 1, 5, 1.0, 10.0, 1).unwrap();
        let coeffs = CostCoefficients::new(1.0, 0.0).unwrap();
        let batch = SequenceBatch::from_lengths(&[5, 5]).unwrap();
        let rows = compare(&batch, &cluster, &coeffs, &[StrategyId::Zeppelin, StrategyId::TeCp]);
        assert!(rows[0].outcome.is_ok());
        assert!(rows[1].outcome.as_ref().is_err_and(|e| e.is_infeasible()));
        assert_eq!(rows[0].speedup_vs_te_cp, None);
        let csv = comparison_csv(&rows);
        let last = csv.lines().nth(2).unwrap();
        assert!(last.starts_with("te_cp,,,,,,,,"), "{last}");
    }
}
