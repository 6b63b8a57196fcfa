//! Distributed phase estimation.
//!
//! `N` sensors each pick up a phase `φ` during an interrogation time `τ`,
//! with contrast `C = exp(-τ/T2)`. Separable probes read out one bit each
//! with `P(0) = (1 + C cos φ)/2`; a GHZ probe reads out one parity bit with
//! `P(even) = (1 + w C^N cos Nφ)/2`. The phase is fitted by inverting the
//! pooled frequency, and its spread is the standard error of the per-shot
//! linearized estimates.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::EventKind;
use crate::netmodel::NodeId;
use crate::protocol::{send_parallel, Pctx};
use crate::qcore::GhzResource;

use super::{service_complete, AppError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Probe {
    Separable,
    Ghz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingConfig {
    pub n_sensors: u32,
    pub probe: Probe,
    pub true_phase: f64,
    pub shots: u32,
    pub t2: f64,
    pub interrogation_time: f64,
    /// Fixed re-initialization delay between shots.
    #[serde(default)]
    pub reinit_delay: f64,
}

impl SensingConfig {
    pub fn validate(&self) -> Result<(), AppError> {
        if self.n_sensors == 0 {
            return Err(AppError::Config("n_sensors must be at least 1".into()));
        }
        if self.shots == 0 {
            return Err(AppError::Config("shots must be at least 1".into()));
        }
        if !(self.t2 > 0.0) {
            return Err(AppError::Config(format!("t2 must be positive, got {}", self.t2)));
        }
        if !(self.interrogation_time >= 0.0) || !(self.reinit_delay >= 0.0) {
            return Err(AppError::Config("times must be non-negative".into()));
        }
        Ok(())
    }

    pub fn contrast(&self) -> f64 {
        (-self.interrogation_time / self.t2).exp()
    }

    /// Phase at which the estimator is best conditioned for this probe.
    pub fn sweet_phase(probe: Probe, n: u32) -> f64 {
        match probe {
            Probe::Separable => PI / 2.0,
            Probe::Ghz => PI / (4.0 * n as f64),
        }
    }
}

pub fn p_zero_separable(contrast: f64, phi: f64) -> f64 {
    (1.0 + contrast * phi.cos()) / 2.0
}

pub fn p_even_ghz(w: f64, contrast: f64, n: u32, phi: f64) -> f64 {
    (1.0 + w * contrast.powi(n as i32) * (n as f64 * phi).cos()) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    pub phase: f64,
    pub std: f64,
    pub shots: usize,
}

/// Fit from per-shot success fractions `p_shot` of a signal
/// `p(φ) = (1 + A cos(kφ))/2`, valid for `kφ` in `[0, π]`.
fn fit(p_shot: &[f64], amplitude: f64, k: f64) -> Result<PhaseEstimate, AppError> {
    let m = p_shot.len();
    if m == 0 {
        return Err(AppError::Config("no usable shots".into()));
    }
    if !(amplitude > 0.0) {
        return Err(AppError::Config("probe has no contrast left".into()));
    }
    let p_hat = p_shot.iter().sum::<f64>() / m as f64;
    let arg = ((2.0 * p_hat - 1.0) / amplitude).clamp(-1.0, 1.0);
    let phase = arg.acos() / k;
    let slope = -amplitude * k * (k * phase).sin() / 2.0;
    let std = if m < 2 || slope == 0.0 {
        f64::INFINITY
    } else {
        let est: Vec<f64> = p_shot.iter().map(|p| phase + (p - p_hat) / slope).collect();
        let var = est.iter().map(|e| (e - phase).powi(2)).sum::<f64>() / (m - 1) as f64;
        var.sqrt() / (m as f64).sqrt()
    };
    Ok(PhaseEstimate { phase, std, shots: m })
}

/// Separable readout: `zeros[i]` of `n` sensors reported 0 on shot `i`.
pub fn estimate_separable(zeros: &[u32], n: u32, contrast: f64) -> Result<PhaseEstimate, AppError> {
    let p: Vec<f64> = zeros.iter().map(|&z| z as f64 / n as f64).collect();
    fit(&p, contrast, 1.0)
}

/// GHZ parity readout over `n` sensors with overall contrast `w C^N`.
pub fn estimate_ghz(even: &[bool], n: u32, w: f64, contrast: f64) -> Result<PhaseEstimate, AppError> {
    let p: Vec<f64> = even.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect();
    fit(&p, w * contrast.powi(n as i32), n as f64)
}

/// Sample one shot: zeros among separable sensors, or 1/0 for even parity.
pub fn sample_shot<R: Rng + ?Sized>(cfg: &SensingConfig, w: f64, rng: &mut R) -> u32 {
    let c = cfg.contrast();
    match cfg.probe {
        Probe::Separable => {
            let p = p_zero_separable(c, cfg.true_phase);
            (0..cfg.n_sensors).filter(|_| rng.random_bool(p)).count() as u32
        }
        Probe::Ghz => rng.random_bool(p_even_ghz(w, c, cfg.n_sensors, cfg.true_phase)) as u32,
    }
}

fn estimate(cfg: &SensingConfig, w: f64, outcomes: &[u32]) -> Result<PhaseEstimate, AppError> {
    match cfg.probe {
        Probe::Separable => estimate_separable(outcomes, cfg.n_sensors, cfg.contrast()),
        Probe::Ghz => {
            let even: Vec<bool> = outcomes.iter().map(|&o| o == 1).collect();
            estimate_ghz(&even, cfg.n_sensors, w, cfg.contrast())
        }
    }
}

/// Network-free Monte-Carlo of the readout model.
pub fn sensing_monte_carlo<R: Rng + ?Sized>(
    cfg: &SensingConfig,
    w: f64,
    rng: &mut R,
) -> Result<PhaseEstimate, AppError> {
    cfg.validate()?;
    let outcomes: Vec<u32> = (0..cfg.shots).map(|_| sample_shot(cfg, w, rng)).collect();
    estimate(cfg, w, &outcomes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingReport {
    pub estimate: PhaseEstimate,
    pub discarded_shots: u32,
    pub elapsed: f64,
}

/// Sample the time and quality of one GHZ state spanning all `sensors`,
/// distributed from `hub`: every link must succeed on the same attempt.
async fn distribute_ghz(ctx: &Pctx, hub: &NodeId, sensors: &[NodeId], deadline: f64) -> Result<f64, AppError> {
    let now = ctx.now();
    let links = ctx.world(|w| {
        sensors
            .iter()
            .map(|s| {
                let l = w
                    .topo
                    .quantum_link_between(hub, s)
                    .cloned()
                    .ok_or_else(|| AppError::Config(format!("no quantum link between {hub} and {s}")))?;
                w.topo.check_link_usable(&l, now).map_err(crate::protocol::ProtoError::from)?;
                Ok(l)
            })
            .collect::<Result<Vec<_>, AppError>>()
    })?;
    let q: f64 = links.iter().map(|l| l.spec.q_attempt).product();
    let w: f64 = links.iter().map(|l| l.spec.w0).product();
    let period = links.iter().map(|l| l.spec.attempt_period_s).fold(0.0, f64::max);
    if q <= 0.0 {
        return Err(AppError::Session("GHZ generation never succeeds".into()));
    }
    let mut t = now + period;
    while !ctx.with_rng(hub.as_str(), "ghz_attempt", |rng| rng.random_bool(q)) {
        t += period;
        if t > deadline {
            return Err(AppError::Session("GHZ generation missed its deadline".into()));
        }
    }
    ctx.sleep_until(t, EventKind::EntanglementAttempt).await;
    if sensors.len() >= 3 {
        let ghz = ctx.world_mut(|wd| GhzResource::new(wd.ids.fresh(), sensors.to_vec(), w, t))?;
        if ctx.world(|wd| wd.cfg.trace_resources) {
            ctx.trace(hub.as_str(), "ghz_created", [("id", ghz.id.to_string()), ("w", format!("{w:.6}"))]);
        }
    }
    ctx.metrics(|m| m.incr("ghz_generated", 1.0, "count"));
    Ok(w)
}

/// Run the sensing service with `sensors` reporting to `hub`. A shot is
/// discarded when any report cannot be delivered.
pub async fn sensing_run(
    ctx: &Pctx,
    cfg: &SensingConfig,
    sensors: &[NodeId],
    hub: &NodeId,
) -> Result<SensingReport, AppError> {
    cfg.validate()?;
    if sensors.len() != cfg.n_sensors as usize {
        return Err(AppError::Config(format!("{} sensors given, config says {}", sensors.len(), cfg.n_sensors)));
    }
    let t0 = ctx.now();
    let bits = ctx.world(|w| w.cfg.sizes.correction);
    let reports: Vec<(NodeId, NodeId)> = sensors.iter().map(|s| (s.clone(), hub.clone())).collect();
    let mut outcomes = Vec::with_capacity(cfg.shots as usize);
    let mut discarded = 0;
    let mut w_probe = 1.0;
    for _ in 0..cfg.shots {
        if cfg.probe == Probe::Ghz {
            let deadline = ctx.now() + 10.0;
            match distribute_ghz(ctx, hub, sensors, deadline).await {
                Ok(w) => w_probe = w,
                Err(_) => {
                    discarded += 1;
                    ctx.sleep(cfg.reinit_delay).await;
                    continue;
                }
            }
        }
        ctx.sleep(cfg.interrogation_time).await;
        let outcome = ctx.with_rng(hub.as_str(), "sensing", |rng| sample_shot(cfg, w_probe, rng));
        let delivered = send_parallel(ctx, &reports, bits, "sensor_report").await;
        if delivered.iter().all(Result::is_ok) {
            outcomes.push(outcome);
        } else {
            discarded += 1;
        }
        ctx.sleep(cfg.reinit_delay).await;
    }
    let estimate = estimate(cfg, w_probe, &outcomes)?;
    let elapsed = ctx.now() - t0;
    ctx.metrics(|m| {
        m.observe("phase_estimate", estimate.phase, "rad");
        m.observe("phase_std", estimate.std, "rad");
        m.incr("sensing.discarded_shots", discarded as f64, "count");
        m.observe("sensing.elapsed", elapsed, "s");
    });
    let mut parties: Vec<&NodeId> = vec![hub];
    parties.extend(sensors.iter());
    service_complete(ctx, "sensing", &parties, "estimate");
    Ok(SensingReport { estimate, discarded_shots: discarded, elapsed })
}
