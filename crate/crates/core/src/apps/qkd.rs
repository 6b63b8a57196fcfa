//! Entanglement based key distribution (BBM92).
//!
//! Both parties measure their halves of `N` pairs in bases drawn uniformly
//! from {Z, X}, publicly compare bases, keep the matching positions, reveal a
//! random subset to estimate the error rate and shrink what is left with the
//! asymptotic one-way rate `1 - 2 h2(e)`.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netmodel::NodeId;
use crate::protocol::{
    entanglement_session, send_message, EntanglementRequest, MeasurePlan, Pctx, SessionOutcome, SliceType,
};
use crate::qcore::MeasurementBasis;

use super::{service_complete, AppError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QkdConfig {
    pub n_pairs: u32,
    pub k_target: u32,
    pub sacrifice_fraction: f64,
    pub qber_abort: f64,
    /// Deadline of each entanglement session.
    pub max_latency_s: f64,
    /// Start a fresh round after an abort instead of giving up.
    pub retry_on_abort: bool,
    pub max_rounds: u32,
}

impl Default for QkdConfig {
    fn default() -> Self {
        Self {
            n_pairs: 1000,
            k_target: 100,
            sacrifice_fraction: 0.1,
            qber_abort: 0.11,
            max_latency_s: 10.0,
            retry_on_abort: false,
            max_rounds: 1,
        }
    }
}

impl QkdConfig {
    pub fn validate(&self) -> Result<(), AppError> {
        if self.n_pairs == 0 {
            return Err(AppError::Config("n_pairs must be at least 1".into()));
        }
        if self.k_target > self.n_pairs {
            return Err(AppError::Config(format!("k_target {} exceeds n_pairs {}", self.k_target, self.n_pairs)));
        }
        if !(0.0..1.0).contains(&self.sacrifice_fraction) {
            return Err(AppError::Config(format!("sacrifice_fraction {} outside [0, 1)", self.sacrifice_fraction)));
        }
        if self.sacrifice_fraction > 0.0 && self.sacrifice_fraction * (self.k_target as f64) < 1.0 {
            return Err(AppError::Config("sacrifice_fraction * k_target must be at least 1".into()));
        }
        if !(0.0..=0.5).contains(&self.qber_abort) {
            return Err(AppError::Config(format!("qber_abort {} outside [0, 0.5]", self.qber_abort)));
        }
        if !(self.max_latency_s > 0.0) {
            return Err(AppError::Config("max_latency_s must be positive".into()));
        }
        if self.max_rounds == 0 {
            return Err(AppError::Config("max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Key bits left after privacy amplification of `n_remaining` bits.
pub fn final_key_length(n_remaining: usize, qber: f64) -> usize {
    let rate = (1.0 - 2.0 * binary_entropy(qber)).max(0.0);
    (n_remaining as f64 * rate).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sifted {
    pub a: Vec<bool>,
    pub b: Vec<bool>,
    pub matched: usize,
}

/// Keep the positions where both parties used the same basis.
pub fn qkd_sift(
    bases_a: &[MeasurementBasis],
    bases_b: &[MeasurementBasis],
    bits_a: &[bool],
    bits_b: &[bool],
) -> Result<Sifted, AppError> {
    let n = bases_a.len();
    for len in [bases_b.len(), bits_a.len(), bits_b.len()] {
        if len != n {
            return Err(AppError::LengthMismatch(n, len));
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| bases_a[i] == bases_b[i]).collect();
    Ok(Sifted {
        a: keep.iter().map(|&i| bits_a[i]).collect(),
        b: keep.iter().map(|&i| bits_b[i]).collect(),
        matched: keep.len(),
    })
}

/// Outcome of the public error estimation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub revealed: usize,
    pub qber_est: f64,
    pub key_a: Vec<bool>,
    pub key_b: Vec<bool>,
}

/// Reveal a uniformly random `fraction` of the sifted key (at least one bit
/// when the fraction is positive) and drop it from both keys.
pub fn sacrifice<R: Rng + ?Sized>(sifted: &Sifted, fraction: f64, rng: &mut R) -> Estimate {
    let n = sifted.matched;
    let m = if fraction > 0.0 && n > 0 { ((fraction * n as f64).ceil() as usize).clamp(1, n) } else { 0 };
    let mut reveal = vec![false; n];
    for i in sample(rng, n, m) {
        reveal[i] = true;
    }
    let errors = (0..n).filter(|&i| reveal[i] && sifted.a[i] != sifted.b[i]).count();
    let keep = |v: &[bool]| (0..n).filter(|&i| !reveal[i]).map(|i| v[i]).collect::<Vec<_>>();
    Estimate {
        revealed: m,
        qber_est: if m > 0 { errors as f64 / m as f64 } else { 0.0 },
        key_a: keep(&sifted.a),
        key_b: keep(&sifted.b),
    }
}

/// Fraction of positions where two equally long keys differ.
pub fn error_rate(a: &[bool], b: &[bool]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AbortReason {
    InsufficientKey { sifted: usize, needed: u32 },
    QberAboveThreshold { qber_est: f64, threshold: f64 },
    NoClassicalCoverage(String),
    SessionFailed(String),
}

impl AbortReason {
    pub fn label(&self) -> &'static str {
        match self {
            AbortReason::InsufficientKey { .. } => "abort_insufficient_key",
            AbortReason::QberAboveThreshold { .. } => "abort_qber",
            AbortReason::NoClassicalCoverage(_) => "abort_no_classical_coverage",
            AbortReason::SessionFailed(_) => "abort_session",
        }
    }
}

/// One attempt at producing a key.
#[derive(Debug, Clone, PartialEq)]
pub struct QkdRound {
    pub delivered: usize,
    pub sifted: usize,
    /// Matched-basis disagreement over the whole sifted key.
    pub qber: Option<f64>,
    pub qber_est: Option<f64>,
    pub key_a: Vec<bool>,
    pub key_b: Vec<bool>,
    pub elapsed: f64,
    pub abort: Option<AbortReason>,
}

impl QkdRound {
    fn aborted(delivered: usize, sifted: usize, elapsed: f64, reason: AbortReason) -> Self {
        Self {
            delivered,
            sifted,
            qber: None,
            qber_est: None,
            key_a: Vec::new(),
            key_b: Vec::new(),
            elapsed,
            abort: Some(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QkdReport {
    pub rounds: Vec<QkdRound>,
    /// Time from the first request to the first key, if any.
    pub time_to_first_key: Option<f64>,
    pub elapsed: f64,
}

impl QkdReport {
    pub fn key(&self) -> Option<&QkdRound> {
        self.rounds.iter().find(|r| r.abort.is_none())
    }
}

fn basis_message_bits(n: usize) -> u64 {
    64 + n as u64
}

/// Run one BBM92 round between `alice` and `bob`.
pub async fn qkd_round(ctx: &Pctx, cfg: &QkdConfig, alice: &NodeId, bob: &NodeId) -> QkdRound {
    let t0 = ctx.now();
    let mut req = EntanglementRequest::new(alice, bob, SliceType::GenerateAndMeasure, cfg.n_pairs, cfg.max_latency_s);
    req.app_type = "qkd".into();
    req.plan = MeasurePlan::RandomPauli;
    let session = entanglement_session(ctx, &req).await;
    let delivered = session.measured.len();
    if matches!(session.outcome, SessionOutcome::Rejected) || delivered == 0 {
        let why = session.reason.unwrap_or_else(|| session.outcome.to_string());
        return QkdRound::aborted(delivered, 0, ctx.now() - t0, AbortReason::SessionFailed(why));
    }

    // Public basis comparison, one announcement each way.
    for (from, to) in [(alice, bob), (bob, alice)] {
        if let Err(e) = send_message(ctx, from, to, basis_message_bits(delivered), "qkd_bases").await {
            return QkdRound::aborted(delivered, 0, ctx.now() - t0, AbortReason::NoClassicalCoverage(e.to_string()));
        }
    }
    let bases_a: Vec<_> = session.measured.iter().map(|m| m.basis[0]).collect();
    let bases_b: Vec<_> = session.measured.iter().map(|m| m.basis[1]).collect();
    let bits_a: Vec<_> = session.measured.iter().map(|m| m.bits[0]).collect();
    let bits_b: Vec<_> = session.measured.iter().map(|m| m.bits[1]).collect();
    let sifted = qkd_sift(&bases_a, &bases_b, &bits_a, &bits_b).expect("aligned by construction");
    if sifted.matched < cfg.k_target as usize {
        let reason = AbortReason::InsufficientKey { sifted: sifted.matched, needed: cfg.k_target };
        return QkdRound::aborted(delivered, sifted.matched, ctx.now() - t0, reason);
    }
    let qber = error_rate(&sifted.a, &sifted.b);

    let est = ctx.with_rng(alice.as_str(), "qkd_sample", |rng| sacrifice(&sifted, cfg.sacrifice_fraction, rng));
    let reveal_bits = 64 + 33 * est.revealed as u64;
    for (from, to, bits) in [(alice, bob, reveal_bits), (bob, alice, 64)] {
        if let Err(e) = send_message(ctx, from, to, bits, "qkd_estimate").await {
            return QkdRound::aborted(
                delivered,
                sifted.matched,
                ctx.now() - t0,
                AbortReason::NoClassicalCoverage(e.to_string()),
            );
        }
    }
    if est.qber_est > cfg.qber_abort {
        let reason = AbortReason::QberAboveThreshold { qber_est: est.qber_est, threshold: cfg.qber_abort };
        let mut r = QkdRound::aborted(delivered, sifted.matched, ctx.now() - t0, reason);
        r.qber = Some(qber);
        r.qber_est = Some(est.qber_est);
        return r;
    }
    let len = final_key_length(est.key_a.len(), est.qber_est);
    // Privacy amplification is modelled by its output length only.
    QkdRound {
        delivered,
        sifted: sifted.matched,
        qber: Some(qber),
        qber_est: Some(est.qber_est),
        key_a: est.key_a[..len].to_vec(),
        key_b: est.key_b[..len].to_vec(),
        elapsed: ctx.now() - t0,
        abort: None,
    }
}

/// Rounds until a key is produced or the round budget is spent, recording
/// metrics and the service completion.
pub async fn qkd_run(ctx: &Pctx, cfg: &QkdConfig, alice: &NodeId, bob: &NodeId) -> Result<QkdReport, AppError> {
    cfg.validate()?;
    let t0 = ctx.now();
    let max_rounds = if cfg.retry_on_abort { cfg.max_rounds } else { 1 };
    let mut rounds = Vec::new();
    let mut time_to_first_key = None;
    for _ in 0..max_rounds {
        let round = qkd_round(ctx, cfg, alice, bob).await;
        record_round(ctx, &round);
        let ok = round.abort.is_none();
        rounds.push(round);
        if ok {
            time_to_first_key = Some(ctx.now() - t0);
            break;
        }
    }
    let elapsed = ctx.now() - t0;
    let report = QkdReport { rounds, time_to_first_key, elapsed };
    ctx.metrics(|m| {
        m.incr("qkd.runs", 1.0, "count");
        m.observe("qkd.rounds", report.rounds.len() as f64, "count");
        match (report.key(), report.time_to_first_key) {
            (Some(k), Some(t)) => {
                m.observe("time_to_first_key", t, "s");
                m.observe("secret_key_rate", k.key_a.len() as f64 / elapsed, "bit/s");
                m.observe("qkd.key_bits", k.key_a.len() as f64, "bit");
                m.incr("qkd.keys", 1.0, "count");
            }
            _ => m.incr("qkd.failed_runs", 1.0, "count"),
        }
    });
    let outcome = match report.key() {
        Some(_) => "key".to_owned(),
        None => report.rounds.last().and_then(|r| r.abort.as_ref()).map_or("abort", |a| a.label()).to_owned(),
    };
    service_complete(ctx, "qkd", &[alice, bob], &outcome);
    Ok(report)
}

fn record_round(ctx: &Pctx, r: &QkdRound) {
    ctx.metrics(|m| {
        m.incr("qkd.pairs_measured", r.delivered as f64, "count");
        m.incr("qkd.sifted_bits", r.sifted as f64, "count");
        if r.delivered > 0 {
            m.observe("sift_discard_rate", 1.0 - r.sifted as f64 / r.delivered as f64, "1");
        }
        if let Some(q) = r.qber {
            m.observe("qber", q, "1");
        }
        if let Some(q) = r.qber_est {
            m.observe("qber_est", q, "1");
        }
        if let Some(a) = &r.abort {
            m.incr(&format!("qkd.{}", a.label()), 1.0, "count");
        }
    });
}
