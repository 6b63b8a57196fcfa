//! Closed-form success models for multi-block protocols, used for planning
//! and as oracles for simulated runs.
//!
//! A protocol is a sequence of `K` blocks. Each block needs one quantum and
//! one classical step to go through. [`p_succ_sequence`] gives the chance
//! that the first success arrives somewhere in the `K` tries, which is the
//! retry reading used by the applications. [`p_all_blocks`] gives the chance
//! that every block succeeds.

use statrs::distribution::{Binomial, DiscreteCDF};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("probability {name} = {value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("need at least one block")]
    NoBlocks,
    #[error("k_target {k} exceeds n_delivered {n}")]
    TargetTooLarge { k: u64, n: u64 },
}

fn check(name: &'static str, value: f64) -> Result<f64, AnalyticError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(AnalyticError::Probability { name, value })
    }
}

/// Success probability of one block.
pub fn p_block(p_err_q: f64, p_err_c: f64) -> Result<f64, AnalyticError> {
    Ok((1.0 - check("p_err_q", p_err_q)?) * (1.0 - check("p_err_c", p_err_c)?))
}

/// Probability that some block in the sequence succeeds, summed over the
/// position of the first success.
pub fn p_succ_sequence(p: &[f64]) -> Result<f64, AnalyticError> {
    if p.is_empty() {
        return Err(AnalyticError::NoBlocks);
    }
    let mut all_failed = 1.0;
    let mut total = 0.0;
    for &pi in p {
        check("p_succ", pi)?;
        total += pi * all_failed;
        all_failed *= 1.0 - pi;
    }
    Ok(total.min(1.0))
}

/// Probability that every block in the sequence succeeds.
pub fn p_all_blocks(p: &[f64]) -> Result<f64, AnalyticError> {
    if p.is_empty() {
        return Err(AnalyticError::NoBlocks);
    }
    p.iter().try_fold(1.0, |acc, &pi| Ok(acc * check("p_succ", pi)?))
}

/// [`p_succ_sequence`] for `k` identical blocks.
pub fn p_succ_iid(p_err_q: f64, p_err_c: f64, k: u32) -> Result<f64, AnalyticError> {
    if k == 0 {
        return Err(AnalyticError::NoBlocks);
    }
    check("p_err_q", p_err_q)?;
    check("p_err_c", p_err_c)?;
    let fail = (1.0 - p_err_c) * p_err_q + p_err_c;
    Ok(1.0 - fail.powi(k as i32))
}

/// Probability that at least `k_target` of `n_delivered` pairs both arrive
/// and were measured in matching bases.
pub fn qkd_match_success(n_delivered: u64, k_target: u64, p_deliver: f64) -> Result<f64, AnalyticError> {
    check("p_deliver", p_deliver)?;
    if k_target > n_delivered {
        return Err(AnalyticError::TargetTooLarge { k: k_target, n: n_delivered });
    }
    if k_target == 0 {
        return Ok(1.0);
    }
    let b = Binomial::new(p_deliver / 2.0, n_delivered).expect("checked parameters");
    Ok(b.sf(k_target - 1))
}

/// One row of a planning table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanRow {
    pub k: u32,
    pub p_block: f64,
    pub p_retry: f64,
    pub p_all: f64,
}

/// Success probabilities for `1..=k_max` blocks of identical quality.
pub fn plan_table(p_err_q: f64, p_err_c: f64, k_max: u32) -> Result<Vec<PlanRow>, AnalyticError> {
    let p = p_block(p_err_q, p_err_c)?;
    (1..=k_max.max(1))
        .map(|k| Ok(PlanRow { k, p_block: p, p_retry: p_succ_iid(p_err_q, p_err_c, k)?, p_all: p.powi(k as i32) }))
        .collect()
}
