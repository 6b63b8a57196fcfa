use crate::netmodel::NodeId;
use crate::qcore::ResourceId;

use super::session::{discard, entanglement_session, set_state};
use super::{EntanglementRequest, HandoverMode, Pctx, ProtoError, QueState, SessionOutcome, SliceType};

/// Deadline of the bridge or replacement session.
const SESSION_LATENCY_S: f64 = 10.0;

/// What a handover left behind.
#[derive(Debug, Clone, PartialEq)]
pub struct HandoverRecord {
    pub mode_used: HandoverMode,
    /// Time during which the user held no usable entanglement.
    pub downtime: f64,
    /// Werner parameter of the surviving pair when the handover completed.
    pub w_after: f64,
    pub pair: Option<ResourceId>,
}

fn soft_feasible(ctx: &Pctx, old: &NodeId, new: &NodeId) -> bool {
    ctx.world(|w| w.topo.repeater_edge(old, new) && w.topo.quantum_link_between(old, new).is_some())
}

fn serve_from(ctx: &Pctx, que: &NodeId, bs: &NodeId) {
    ctx.world_mut(|w| {
        if let Some(u) = w.users.get_mut(que) {
            u.serving = Some(bs.clone());
        }
    });
    ctx.trace(que.as_str(), "serving", [("bs", bs.to_string())]);
}

/// Move `que`'s stored entanglement from `old` to `new`.
///
/// Soft mode builds an `old`-`new` bridge pair and swaps at `old`, so the
/// user's qubit stays entangled throughout and `w` is multiplied by the
/// bridge. Hard mode drops the old pair and starts over with `new`. Soft
/// falls back to Hard when the two stations share no repeater link.
pub async fn handover(
    ctx: &Pctx,
    que: &NodeId,
    old: &NodeId,
    new: &NodeId,
    mode: HandoverMode,
) -> Result<HandoverRecord, ProtoError> {
    let t0 = ctx.now();
    let existing = ctx.world(|w| w.store.usable_between(que, old)).first().copied();
    let Some(old_pair) = existing else {
        return Err(ProtoError::Rejected(format!("{que} holds no stored pair with {old}")));
    };
    let mut mode_used = mode;
    if mode == HandoverMode::Soft && !soft_feasible(ctx, old, new) {
        ctx.trace(
            que.as_str(),
            "handover_fallback",
            [("from", old.to_string()), ("to", new.to_string()), ("reason", "no inter-station link".to_owned())],
        );
        mode_used = HandoverMode::Hard;
    }

    let record = match mode_used {
        HandoverMode::Soft => {
            let mut req = EntanglementRequest::new(new, old, SliceType::GenerateAndStore, 1, SESSION_LATENCY_S);
            req.app_type = "handover".into();
            let bridge = entanglement_session(ctx, &req).await;
            let Some(&bridge_id) = bridge.delivered.first() else {
                return Err(ProtoError::Rejected(format!(
                    "bridge {old}-{new} failed: {}",
                    bridge.reason.unwrap_or_else(|| bridge.outcome.to_string())
                )));
            };
            let now = ctx.now();
            let (id, _) = ctx.with_rng(old.as_str(), "swap", |rng| {
                ctx.world_mut(|w| {
                    let new_id = w.ids.fresh();
                    w.store.swap(old_pair, bridge_id, old, new_id, now, rng)
                })
            })?;
            ctx.trace(
                old.as_str(),
                "swap",
                [("left", old_pair.to_string()), ("right", bridge_id.to_string()), ("out", id.to_string())],
            );
            ctx.metrics(|m| m.incr("swaps", 1.0, "count"));
            let bits = ctx.world(|w| w.cfg.sizes.correction);
            if let Err(e) = super::send_message(ctx, old, new, bits, "correction").await {
                discard(ctx, id, "correction_lost");
                return Err(e);
            }
            ctx.world_mut(|w| w.store.set_usable(id))?;
            serve_from(ctx, que, new);
            let w_after = ctx.world(|w| w.store.get(id).map(|p| p.w_at(ctx.now())))?;
            HandoverRecord { mode_used, downtime: 0.0, w_after, pair: Some(id) }
        }
        HandoverMode::Hard => {
            discard(ctx, old_pair, "hard_handover");
            let lost_at = ctx.now();
            serve_from(ctx, que, new);
            if ctx.world(|w| w.state(que)) == Some(QueState::Entangled) {
                set_state(ctx, que, QueState::Connected)?;
            }
            let mut req = EntanglementRequest::new(que, new, SliceType::GenerateAndStore, 1, SESSION_LATENCY_S);
            req.app_type = "handover".into();
            let fresh = entanglement_session(ctx, &req).await;
            if fresh.outcome != SessionOutcome::Fulfilled {
                return Err(ProtoError::Rejected(format!(
                    "new session with {new} failed: {}",
                    fresh.reason.unwrap_or_else(|| fresh.outcome.to_string())
                )));
            }
            let id = fresh.delivered[0];
            let w_after = ctx.world(|w| w.store.get(id).map(|p| p.w_at(ctx.now())))?;
            HandoverRecord { mode_used, downtime: ctx.now() - lost_at, w_after, pair: Some(id) }
        }
    };
    ctx.trace(
        que.as_str(),
        "handover",
        [
            ("mode", format!("{:?}", record.mode_used)),
            ("downtime", format!("{:.9}", record.downtime)),
            ("w_after", format!("{:.6}", record.w_after)),
            ("elapsed", format!("{:.9}", ctx.now() - t0)),
        ],
    );
    ctx.metrics(|m| m.observe("handover_downtime", record.downtime, "s"));
    Ok(record)
}
