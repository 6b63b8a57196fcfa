use crate::analytic::{plan_table, qkd_match_success};

use super::config::{AppType, ScenarioConfig};
use super::ScenarioError;

/// CSV table of block success probabilities for `1..=k_max` blocks.
pub fn block_plan_csv(p_err_q: f64, p_err_c: f64, k_max: u32) -> Result<String, ScenarioError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "p_block", "p_retry", "p_all"])?;
    for r in plan_table(p_err_q, p_err_c, k_max)? {
        w.write_record([r.k.to_string(), r.p_block.to_string(), r.p_retry.to_string(), r.p_all.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| ScenarioError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QkdPlanRow {
    pub app: String,
    pub n_pairs: u32,
    pub k_target: u32,
    pub p_deliver: f64,
    pub p_success: f64,
}

/// Chance that each QKD app in the scenario sifts enough key in one round
/// when every pair arrives with probability `p_deliver`.
pub fn qkd_plan(cfg: &ScenarioConfig, p_deliver: f64) -> Result<Vec<QkdPlanRow>, ScenarioError> {
    cfg.apps
        .iter()
        .filter(|a| a.kind == AppType::Qkd)
        .map(|a| {
            let q = a.qkd.unwrap_or_default();
            Ok(QkdPlanRow {
                app: a.name.clone(),
                n_pairs: q.n_pairs,
                k_target: q.k_target,
                p_deliver,
                p_success: qkd_match_success(q.n_pairs as u64, q.k_target as u64, p_deliver)?,
            })
        })
        .collect()
}
