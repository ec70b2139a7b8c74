use std::fmt::Write as _;

use crate::neuralnet::{EvalReport, TrainHistory, WeightSet};

/// Leading columns of the round report CSV; per-client `local_acc_<id>` and
/// `factor_<id>` columns follow.
pub const REPORT_COLUMNS: &str = "round,client_count,avg_local_acc,global_acc,rejected,chain_len,H";

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u64,
    pub client_count: usize,
    /// Fog clients that trained this round, ascending.
    pub client_ids: Vec<u64>,
    /// Test accuracy of each client's local model, aligned with `client_ids`.
    pub local_accuracies: Vec<f64>,
    pub avg_local_accuracy: f64,
    pub global_accuracy: f64,
    /// Clients whose updates were accepted, ascending.
    pub factor_ids: Vec<u64>,
    /// Scaling factor per accepted update, aligned with `factor_ids`.
    pub factors: Vec<f64>,
    pub chain_tip_index: u64,
    pub chain_len: usize,
    pub rejected: usize,
    /// `None` with fewer than two workers.
    pub heterogeneity: Option<f64>,
    pub update_times: Vec<f64>,
    /// Evaluation of the fused model on the test split.
    pub confusion: EvalReport,
    pub histories: Vec<TrainHistory>,
    /// Accepted local models, aligned with `factor_ids`.
    pub local_weights: Vec<WeightSet<f32>>,
}

impl RoundReport {
    pub fn factor_for(&self, client_id: u64) -> Option<f64> {
        self.factor_ids
            .iter()
            .position(|&id| id == client_id)
            .map(|i| self.factors[i])
    }
}

/// One row per report. Per-client columns run to the largest client count
/// present and are left empty where a client did not take part.
pub fn reports_csv(reports: &[RoundReport]) -> String {
    let width = reports.iter().map(|r| r.client_count).max().unwrap_or(0);
    let mut out = String::from(REPORT_COLUMNS);
    for k in 1..=width {
        let _ = write!(out, ",local_acc_{k}");
    }
    for k in 1..=width {
        let _ = write!(out, ",factor_{k}");
    }
    out.push('\n');
    for r in reports {
        let h = r
            .heterogeneity
            .map(|h| format!("{h:.6}"))
            .unwrap_or_default();
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.round,
            r.client_count,
            r.avg_local_accuracy,
            r.global_accuracy,
            r.rejected,
            r.chain_len,
            h
        );
        for k in 1..=width as u64 {
            match r.client_ids.iter().position(|&id| id == k) {
                Some(i) => {
                    let _ = write!(out, ",{}", r.local_accuracies[i]);
                }
                None => out.push(','),
            }
        }
        for k in 1..=width as u64 {
            match r.factor_for(k) {
                Some(f) => {
                    let _ = write!(out, ",{f}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}
