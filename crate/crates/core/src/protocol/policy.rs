use serde::{Deserialize, Serialize};

use crate::engine::EventKind;
use crate::netmodel::NodeId;

use super::session::{discard, entanglement_session};
use super::{EntanglementRequest, Pctx, SliceType};

/// When sessions are started.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
#[derive(Default)]
pub enum DistributionPolicy {
    /// Only when an application asks.
    #[default]
    Reactive,
    /// Keep `buffer` usable pairs ready, checking every `refresh_interval`
    /// seconds and replacing pairs that decayed below the threshold.
    Proactive { buffer: u32, refresh_interval: f64 },
}

/// Earliest time at which every link of the route can be attempted again,
/// if some satellite source is out of its pass now.
fn next_pass(ctx: &Pctx, que: &NodeId, peer: &NodeId) -> Option<f64> {
    let now = ctx.now();
    ctx.world(|w| {
        let route = w.quantum_route(que, peer).ok()?;
        route
            .iter()
            .filter(|l| w.topo.check_link_usable(l, now).is_err())
            .filter_map(|l| w.topo.node(&l.source).ok()?.mobility.orbit().map(|o| o.next_window(now).0))
            .filter(|&t| t > now)
            .max_by(f64::total_cmp)
    })
}

/// Background process that keeps the store-slice buffer between `que` and
/// `peer` topped up until `until`. Does nothing under a reactive policy.
pub async fn provision(
    ctx: Pctx,
    policy: DistributionPolicy,
    que: NodeId,
    peer: NodeId,
    min_fidelity: f64,
    until: f64,
) {
    let DistributionPolicy::Proactive { buffer, refresh_interval } = policy else {
        return;
    };
    let refresh = if refresh_interval > 0.0 { refresh_interval } else { 1.0 };
    while ctx.now() < until {
        let now = ctx.now();
        let stale: Vec<_> = ctx.world(|w| {
            w.store
                .usable_between(&que, &peer)
                .into_iter()
                .filter(|id| w.store.get(*id).map(|p| p.fidelity_at(now) < min_fidelity).unwrap_or(false))
                .collect()
        });
        for id in stale {
            discard(&ctx, id, "buffer_refresh");
        }
        let have = ctx.world(|w| w.store.usable_between(&que, &peer).len()) as u32;
        if have < buffer {
            if let Some(start) = next_pass(&ctx, &que, &peer) {
                ctx.trace(que.as_str(), "await_pass", [("start", format!("{start:.6}"))]);
                ctx.sleep_until(start.min(until), EventKind::Timer).await;
                continue;
            }
            let mut req = EntanglementRequest::new(&que, &peer, SliceType::GenerateAndStore, buffer - have, refresh);
            req.min_fidelity = min_fidelity;
            req.app_type = "provision".into();
            let r = entanglement_session(&ctx, &req).await;
            if r.delivered.is_empty() {
                ctx.sleep(refresh).await;
            }
        } else {
            ctx.sleep(refresh).await;
        }
    }
}
