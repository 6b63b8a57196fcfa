//! Blind delegated computation over a measurement chain.
//!
//! The client remotely prepares each server qubit by measuring its half of a
//! stored pair in a secret equatorial basis, then drives the computation one
//! angle at a time. The server only ever sees `δ = φ' - θ + rπ`, uniform over
//! the eight grid angles whatever the logical pattern is.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::netmodel::NodeId;
use crate::protocol::{
    acquire_pairs, consume_measure, consume_release, discard_pair, send_message, EntanglementRequest, Pctx, ProtoError,
    SliceType,
};
use crate::qcore::{Gate, MeasurementBasis, PureState, QError, ResourceId};

use super::{service_complete, AppError};

/// Rounds below which the uniformity statistic is not trusted.
pub const MIN_BLINDNESS_ROUNDS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UbqcConfig {
    pub k_pairs: u32,
    /// Logical angles in radians, each a multiple of π/4.
    pub pattern: Vec<f64>,
    pub exact_mode: bool,
    pub max_latency_s: f64,
}

impl Default for UbqcConfig {
    fn default() -> Self {
        Self { k_pairs: 4, pattern: vec![0.0; 4], exact_mode: true, max_latency_s: 10.0 }
    }
}

/// Index `k` of an angle `kπ/4`, if it lies on the grid.
pub fn grid_index(angle: f64) -> Option<u8> {
    let x = angle.rem_euclid(TAU) / FRAC_PI_4;
    let k = x.round();
    ((x - k).abs() < 1e-9).then_some((k as u8) % 8)
}

impl UbqcConfig {
    pub fn validate(&self) -> Result<(), AppError> {
        if self.pattern.is_empty() {
            return Err(AppError::Config("pattern is empty".into()));
        }
        if self.pattern.len() > self.k_pairs as usize {
            return Err(AppError::Config(format!(
                "pattern of length {} needs more than k_pairs = {}",
                self.pattern.len(),
                self.k_pairs
            )));
        }
        if let Some(bad) = self.pattern.iter().find(|a| grid_index(**a).is_none()) {
            return Err(AppError::Config(format!("angle {bad} is not a multiple of π/4")));
        }
        if !(self.max_latency_s > 0.0) {
            return Err(AppError::Config("max_latency_s must be positive".into()));
        }
        Ok(())
    }
}

/// One client-server exchange as seen by both sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UbqcRound {
    /// Effective secret angle of the prepared qubit.
    pub theta: f64,
    pub r: bool,
    pub delta: f64,
    pub s: bool,
    pub b: bool,
}

/// `δ = φ - θ + rπ` reduced to `[0, 2π)`.
pub fn delta_angle(phi: f64, theta: f64, r: bool) -> f64 {
    let d = phi - theta + if r { PI } else { 0.0 };
    let d = d.rem_euclid(TAU);
    // Snap rounding noise so grid angles stay exact.
    match grid_index(d) {
        Some(k) => k as f64 * FRAC_PI_4,
        None => d,
    }
}

/// Pauli frame of the logical qubit carried along the chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Frame {
    pub x: bool,
    pub z: bool,
}

impl Frame {
    /// Angle to request for logical angle `phi` under the current frame.
    pub fn adapt(&self, phi: f64) -> f64 {
        if self.x {
            -phi
        } else {
            phi
        }
    }

    /// Update after a measurement with decoded bit `b`.
    pub fn advance(self, b: bool) -> Frame {
        Frame { x: b ^ self.z, z: self.x }
    }

    /// Logical result of the final measurement.
    pub fn decode_output(&self, b: bool) -> bool {
        b ^ self.z
    }
}

/// Probability that the chain with logical angles `pattern` outputs 0:
/// `|+>` through `H P(-φ_1) ... H P(-φ_n)`, then a Z measurement.
pub fn direct_output_p0(pattern: &[f64]) -> Result<f64, QError> {
    let mut s = PureState::zero(1)?;
    s.apply(Gate::H, &[0])?;
    for &phi in pattern {
        s.apply(Gate::Rz(-phi), &[0])?;
        s.apply(Gate::H, &[0])?;
    }
    s.prob_zero(0, MeasurementBasis::Z)
}

/// `|+_α> = (|0> + e^{iα}|1>)/√2`.
fn plus_state(alpha: f64) -> Result<PureState, QError> {
    let mut s = PureState::zero(1)?;
    s.apply(Gate::H, &[0])?;
    s.apply(Gate::Rz(alpha), &[0])?;
    Ok(s)
}

/// Server-side register of the exact mode: at most two live qubits.
struct ServerChain {
    state: Option<PureState>,
}

impl ServerChain {
    /// Append a qubit and entangle it with the current tail.
    fn push(&mut self, q: PureState) -> Result<(), QError> {
        self.state = Some(match self.state.take() {
            None => q,
            Some(s) => {
                let mut joined = s.tensor(&q)?;
                let last = joined.n_qubits() - 1;
                joined.apply_cz(last - 1, last)?;
                joined
            }
        });
        Ok(())
    }

    /// Measure the oldest qubit in the equatorial basis at `delta`.
    fn measure_head<R: Rng + ?Sized>(&mut self, delta: f64, rng: &mut R) -> Result<bool, QError> {
        let s = self.state.take().ok_or_else(|| QError::Domain("server register is empty".into()))?;
        let (bit, rest) = s.measure(0, MeasurementBasis::equatorial(delta), rng)?;
        self.state = (rest.n_qubits() > 0).then_some(rest);
        Ok(bit)
    }
}

/// What the server physically holds after remote preparation: the intended
/// `|+_{-θ}>` with probability `w`, a random computational state otherwise.
fn prepared_qubit<R: Rng + ?Sized>(theta_eff: f64, w: f64, rng: &mut R) -> Result<PureState, QError> {
    if rng.random_bool(w.clamp(0.0, 1.0)) {
        plus_state(-theta_eff)
    } else {
        let mut s = PureState::zero(1)?;
        if rng.random() {
            s.apply(Gate::X, &[0])?;
        }
        Ok(s)
    }
}

/// Server side of remote preparation: takes the server half of pair `j`
/// into the register once it is needed.
struct Loader<'a> {
    server: &'a NodeId,
    pairs: &'a [ResourceId],
    secrets: &'a [(f64, bool)],
    f_min: f64,
    exact: bool,
}

impl Loader<'_> {
    async fn run(&mut self, ctx: &Pctx, j: usize, chain: &mut ServerChain, w_total: &mut f64) -> Result<(), AppError> {
        let id = self.pairs[j];
        let now = ctx.now();
        let f = ctx.world(|w| w.store.get(id).map(|p| p.fidelity_at(now)))?;
        if f < self.f_min {
            return Err(ProtoError::DecoheredResource { id, fidelity: f, f_min: self.f_min }.into());
        }
        let w = consume_release(ctx, self.server, id, SliceType::GenerateAndStore).await?;
        *w_total *= w;
        if self.exact {
            let theta = self.secrets[j].0;
            let q = ctx.with_rng(self.server.as_str(), "ubqc_prep", |rng| prepared_qubit(theta, w, rng))?;
            chain.push(q)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UbqcReport {
    pub rounds: Vec<UbqcRound>,
    /// Logical output bit of the computation.
    pub output: bool,
    pub elapsed: f64,
    pub pairs_used: usize,
}

/// Delegate `cfg.pattern` from `client` to `server`.
pub async fn ubqc_run(ctx: &Pctx, cfg: &UbqcConfig, client: &NodeId, server: &NodeId) -> Result<UbqcReport, AppError> {
    cfg.validate()?;
    let t0 = ctx.now();
    let n = cfg.pattern.len();
    let f_min = ctx.world(|w| w.cfg.f_min);
    let mut req = EntanglementRequest::new(client, server, SliceType::GenerateAndStore, cfg.k_pairs, cfg.max_latency_s);
    req.app_type = "ubqc".into();
    req.min_fidelity = f_min;
    let session = acquire_pairs(ctx, &req).await;
    if session.delivered.len() < n {
        let why = session.reason.unwrap_or_else(|| session.outcome.to_string());
        ctx.metrics(|m| m.incr("ubqc.failed_runs", 1.0, "count"));
        return Err(AppError::Session(why));
    }
    let pairs: Vec<ResourceId> = session.delivered[..n].to_vec();
    let result = drive(ctx, cfg, client, server, &pairs, f_min).await;
    // Leftover pairs from a failed run are dropped, never reused.
    if result.is_err() {
        for id in &pairs {
            if ctx.world(|w| w.store.get(*id).is_ok()) {
                discard_pair(ctx, *id, "ubqc_aborted");
            }
        }
    }
    let (rounds, output) = match result {
        Ok(v) => v,
        Err(e) => {
            ctx.metrics(|m| m.incr("ubqc.failed_runs", 1.0, "count"));
            return Err(e);
        }
    };
    let elapsed = ctx.now() - t0;
    ctx.metrics(|m| {
        m.incr("ubqc.runs", 1.0, "count");
        m.incr("ubqc.output_ones", if output { 1.0 } else { 0.0 }, "count");
        m.observe("ubqc.elapsed", elapsed, "s");
        for r in &rounds {
            m.incr(&format!("ubqc.delta_bin_{}", grid_index(r.delta).unwrap_or(8)), 1.0, "count");
        }
    });
    service_complete(ctx, "ubqc", &[client, server], if output { "1" } else { "0" });
    Ok(UbqcReport { rounds, output, elapsed, pairs_used: n })
}

async fn drive(
    ctx: &Pctx,
    cfg: &UbqcConfig,
    client: &NodeId,
    server: &NodeId,
    pairs: &[ResourceId],
    f_min: f64,
) -> Result<(Vec<UbqcRound>, bool), AppError> {
    let n = cfg.pattern.len();
    let bits = ctx.world(|w| w.cfg.sizes.correction);

    // Remote preparation: the client measures every half up front.
    let mut secrets = Vec::with_capacity(n);
    for &id in pairs {
        let (k, r) =
            ctx.with_rng(client.as_str(), "ubqc_secret", |rng| (rng.random_range(0..8u8), rng.random::<bool>()));
        let theta = k as f64 * FRAC_PI_4;
        let (c, _) =
            consume_measure(ctx, client, id, MeasurementBasis::equatorial(theta), SliceType::GenerateAndStore).await?;
        let theta_eff = (theta + if c { PI } else { 0.0 }).rem_euclid(TAU);
        secrets.push((theta_eff, r));
    }

    let mut chain = ServerChain { state: None };
    let mut frame = Frame::default();
    let mut w_total = 1.0;
    let mut load = Loader { server, pairs, secrets: &secrets, f_min, exact: cfg.exact_mode };
    load.run(ctx, 0, &mut chain, &mut w_total).await?;

    let mut rounds = Vec::with_capacity(n);
    let mut output = false;
    for (j, &(theta, r)) in secrets.iter().enumerate() {
        let phi = frame.adapt(cfg.pattern[j]);
        let delta = delta_angle(phi, theta, r);
        send_message(ctx, client, server, bits, "ubqc_delta").await?;
        if j + 1 < n {
            load.run(ctx, j + 1, &mut chain, &mut w_total).await?;
        }
        let s = if cfg.exact_mode {
            ctx.with_rng(server.as_str(), "ubqc_measure", |rng| chain.measure_head(delta, rng))?
        } else if j + 1 < n {
            ctx.with_rng(server.as_str(), "ubqc_measure", |rng| rng.random())
        } else {
            // Only the last outcome carries the logical result.
            let p0 = direct_output_p0(&cfg.pattern)?;
            let logical = ctx.with_rng(server.as_str(), "ubqc_measure", |rng| {
                if rng.random_bool(w_total.clamp(0.0, 1.0)) {
                    !rng.random_bool(p0.clamp(0.0, 1.0))
                } else {
                    rng.random()
                }
            });
            logical ^ frame.z ^ r
        };
        send_message(ctx, server, client, bits, "ubqc_outcome").await?;
        let b = s ^ r;
        rounds.push(UbqcRound { theta, r, delta, s, b });
        if j + 1 == n {
            output = frame.decode_output(b);
        } else {
            frame = frame.advance(b);
        }
    }
    Ok((rounds, output))
}

/// Chi-square test of a set of transmitted angles against the uniform
/// distribution over the eight grid angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformityStat {
    pub chi2: f64,
    pub p_value: f64,
    pub rounds: usize,
    pub reliable: bool,
}

pub fn delta_histogram(deltas: &[f64]) -> Result<[u64; 8], AppError> {
    let mut h = [0u64; 8];
    for &d in deltas {
        let k = grid_index(d).ok_or_else(|| AppError::Config(format!("angle {d} is off the grid")))?;
        h[k as usize] += 1;
    }
    Ok(h)
}

pub fn ubqc_blindness_check(deltas: &[f64]) -> Result<UniformityStat, AppError> {
    let h = delta_histogram(deltas)?;
    let n = deltas.len();
    let expected = n as f64 / 8.0;
    let chi2 = if n == 0 { 0.0 } else { h.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum() };
    let dist = ChiSquared::new(7.0).expect("positive degrees of freedom");
    Ok(UniformityStat { chi2, p_value: 1.0 - dist.cdf(chi2), rounds: n, reliable: n >= MIN_BLINDNESS_ROUNDS })
}

/// Two-sample chi-square homogeneity test between two angle samples.
pub fn two_sample_blindness(a: &[f64], b: &[f64]) -> Result<UniformityStat, AppError> {
    let ha = delta_histogram(a)?;
    let hb = delta_histogram(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut chi2 = 0.0;
    let mut bins = 0;
    for k in 0..8 {
        let total = (ha[k] + hb[k]) as f64;
        if total == 0.0 {
            continue;
        }
        bins += 1;
        for (o, n) in [(ha[k] as f64, na), (hb[k] as f64, nb)] {
            let e = total * n / (na + nb);
            chi2 += (o - e).powi(2) / e;
        }
    }
    let df = (bins.max(2) - 1) as f64;
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    let rounds = a.len().min(b.len());
    Ok(UniformityStat { chi2, p_value: 1.0 - dist.cdf(chi2), rounds, reliable: rounds >= MIN_BLINDNESS_ROUNDS })
}
