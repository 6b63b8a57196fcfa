use rand::Rng;

use crate::engine::EventKind;
use crate::netmodel::{NodeId, QuantumLink};
use crate::qcore::{
    fidelity_of, ghz_x_reduce, GhzResource, MeasurementBasis, PureState, Reduced, ResourceId, WernerPair,
};

use super::ops::teleport_exact;
use super::world::Delivery;
use super::{
    EntanglementRequest, MeasurePlan, MeasuredPair, PayloadId, Pctx, ProtoError, QueState, SessionOutcome,
    SessionResult, SliceType, TeleportRecord,
};

/// What is being teleported.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// A single-qubit state simulated in the statevector oracle.
    Exact(PureState),
    /// An abstract qubit tracked only by identity and fidelity.
    Token(PayloadId),
}

fn tracing_resources(ctx: &Pctx) -> bool {
    ctx.world(|w| w.cfg.trace_resources)
}

fn mark_activity(ctx: &Pctx, node: &NodeId) {
    let now = ctx.now();
    ctx.world_mut(|w| {
        if let Some(u) = w.users.get_mut(node) {
            u.last_activity = now;
        }
    });
}

fn trace_msg(ctx: &Pctx, from: &NodeId, to: &NodeId, bits: u64, label: &str, d: &Delivery) {
    ctx.trace(
        from.as_str(),
        "msg",
        [
            ("to", to.to_string()),
            ("label", label.to_owned()),
            ("bits", bits.to_string()),
            ("attempts", d.attempts.to_string()),
        ],
    );
    ctx.metrics(|m| m.incr("classical_messages", 1.0, "count"));
}

async fn finish_delivery(
    ctx: &Pctx,
    from: &NodeId,
    to: &NodeId,
    bits: u64,
    label: &str,
    planned: Result<Delivery, (ProtoError, f64)>,
) -> Result<Delivery, ProtoError> {
    match planned {
        Ok(d) => {
            ctx.sleep_until(d.arrival, EventKind::MessageDelivery).await;
            mark_activity(ctx, from);
            mark_activity(ctx, to);
            trace_msg(ctx, from, to, bits, label, &d);
            Ok(d)
        }
        Err((e, t)) => {
            ctx.sleep_until(t, EventKind::Timer).await;
            ctx.trace(
                from.as_str(),
                "msg_failed",
                [("to", to.to_string()), ("label", label.to_owned()), ("error", e.to_string())],
            );
            ctx.metrics(|m| m.incr("classical_failures", 1.0, "count"));
            Err(e)
        }
    }
}

fn plan(
    ctx: &Pctx,
    from: &NodeId,
    to: &NodeId,
    bits: u64,
    label: &str,
    t0: f64,
) -> Result<Delivery, (ProtoError, f64)> {
    let hops = ctx.world(|w| w.classical_route(from, to, t0)).map_err(|e| (e, t0))?;
    ctx.with_rng(from.as_str(), "classical", |rng| ctx.world(|w| w.plan_hops(&hops, bits, label, t0, rng)))
}

/// Deliver one classical message end to end, with retransmissions.
pub async fn send_message(
    ctx: &Pctx,
    from: &NodeId,
    to: &NodeId,
    bits: u64,
    label: &str,
) -> Result<Delivery, ProtoError> {
    let planned = plan(ctx, from, to, bits, label, ctx.now());
    finish_delivery(ctx, from, to, bits, label, planned).await
}

/// Send several independent messages at once. Returns when the last one
/// has arrived or failed; results keep the input order.
pub async fn send_parallel(
    ctx: &Pctx,
    msgs: &[(NodeId, NodeId)],
    bits: u64,
    label: &str,
) -> Vec<Result<Delivery, ProtoError>> {
    let t0 = ctx.now();
    let plans: Vec<_> = msgs.iter().map(|(a, b)| plan(ctx, a, b, bits, label, t0)).collect();
    let done_at = |p: &Result<Delivery, (ProtoError, f64)>| match p {
        Ok(d) => d.arrival,
        Err((_, t)) => *t,
    };
    let mut order: Vec<usize> = (0..plans.len()).collect();
    order.sort_by(|&i, &j| done_at(&plans[i]).total_cmp(&done_at(&plans[j])).then(i.cmp(&j)));
    let mut out: Vec<Option<Result<Delivery, ProtoError>>> = vec![None; plans.len()];
    for i in order {
        let (a, b) = &msgs[i];
        out[i] = Some(finish_delivery(ctx, a, b, bits, label, plans[i].clone()).await);
    }
    out.into_iter().map(|r| r.expect("every message resolved")).collect()
}

async fn inactivity_timer(ctx: Pctx, node: NodeId, epoch: u64) {
    loop {
        let Some((state, last, current, timer)) = ctx
            .world(|w| w.users.get(&node).map(|u| (u.state, u.last_activity, u.timer_epoch, w.cfg.inactivity_timer_s)))
        else {
            return;
        };
        if current != epoch || !state.is_attached() || !(timer > 0.0 && timer.is_finite()) {
            return;
        }
        let deadline = last + timer;
        let now = ctx.now();
        if state == QueState::Connected && now >= deadline {
            let _ = set_state(&ctx, &node, QueState::Inactive);
            return;
        }
        let wake = if deadline > now { deadline } else { now + timer };
        ctx.sleep_until(wake, EventKind::Timer).await;
    }
}

pub(crate) fn set_state(ctx: &Pctx, node: &NodeId, to: QueState) -> Result<(), ProtoError> {
    let now = ctx.now();
    let (from, epoch) = ctx.world_mut(|w| {
        let u = w.users.get_mut(node).ok_or_else(|| ProtoError::Rejected(format!("{node} is not a user")))?;
        let from = u.state;
        if from == to {
            return Ok((from, None));
        }
        if !from.can_go(to) {
            return Err(ProtoError::InvalidTransition { node: node.clone(), from, to });
        }
        u.state = to;
        let mut epoch = None;
        if to == QueState::Connected && from != QueState::Entangled {
            u.last_activity = now;
            u.timer_epoch += 1;
            epoch = Some(u.timer_epoch);
        }
        Ok((from, epoch))
    })?;
    if from != to {
        ctx.trace(node.as_str(), "state", [("from", from.to_string()), ("to", to.to_string())]);
    }
    if let Some(epoch) = epoch {
        let node = node.clone();
        ctx.spawn(move |c| inactivity_timer(c, node, epoch));
    }
    Ok(())
}

/// Initial registration: `k` alternating messages between `que` and `bs`.
/// On success the user is Connected and served by `bs`.
pub async fn register(ctx: &Pctx, que: &NodeId, bs: &NodeId) -> Result<f64, ProtoError> {
    let t0 = ctx.now();
    let state = ctx.world(|w| w.state(que)).ok_or_else(|| ProtoError::Rejected(format!("{que} is not a user")))?;
    if state != QueState::Idle {
        return Err(ProtoError::InvalidTransition { node: que.clone(), from: state, to: QueState::Connected });
    }
    if !ctx.world(|w| w.topo.in_classical_coverage(que, bs, t0))? {
        ctx.trace(que.as_str(), "register_rejected", [("bs", bs.to_string())]);
        return Err(ProtoError::Rejected(format!("{que} is outside the classical cell of {bs}")));
    }
    let (k, bits) = ctx.world(|w| (w.cfg.registration_messages, w.cfg.sizes.registration));
    for i in 0..k {
        let (a, b) = if i % 2 == 0 { (que, bs) } else { (bs, que) };
        let now = ctx.now();
        let planned = ctx.with_rng(a.as_str(), "classical", |rng| {
            ctx.world(|w| w.plan_hops(&[(a.clone(), b.clone())], bits, "registration", now, rng))
        });
        if let Err(e) = finish_delivery(ctx, a, b, bits, "registration", planned).await {
            ctx.trace(que.as_str(), "register_failed", [("error", e.to_string())]);
            return Err(e);
        }
    }
    ctx.world_mut(|w| {
        if let Some(u) = w.users.get_mut(que) {
            u.serving = Some(bs.clone());
        }
    });
    set_state(ctx, que, QueState::Connected)?;
    Ok(ctx.now() - t0)
}

/// Inactive back to Connected with a short exchange.
pub async fn resume(ctx: &Pctx, que: &NodeId) -> Result<f64, ProtoError> {
    let t0 = ctx.now();
    let state = ctx.world(|w| w.state(que));
    if state != Some(QueState::Inactive) {
        return Err(ProtoError::InvalidTransition {
            node: que.clone(),
            from: state.unwrap_or(QueState::Idle),
            to: QueState::Connected,
        });
    }
    let bs = ctx.world(|w| w.access_bs(que, t0))?;
    let (m, bits) = ctx.world(|w| (w.cfg.resume_messages, w.cfg.sizes.registration));
    for i in 0..m {
        let (a, b) = if i % 2 == 0 { (que, &bs) } else { (&bs, que) };
        send_message(ctx, a, b, bits, "resume").await?;
    }
    ctx.world_mut(|w| {
        if let Some(u) = w.users.get_mut(que) {
            u.serving = Some(bs.clone());
        }
    });
    set_state(ctx, que, QueState::Connected)?;
    Ok(ctx.now() - t0)
}

/// Connected back to Idle.
pub fn release(ctx: &Pctx, que: &NodeId) -> Result<(), ProtoError> {
    set_state(ctx, que, QueState::Idle)?;
    ctx.world_mut(|w| {
        if let Some(u) = w.users.get_mut(que) {
            u.serving = None;
        }
    });
    Ok(())
}

async fn ensure_attached(ctx: &Pctx, node: &NodeId) -> Result<(), ProtoError> {
    match ctx.world(|w| w.state(node)) {
        None => Ok(()),
        Some(QueState::Idle) => Err(ProtoError::Rejected(format!("{node} is not registered"))),
        Some(QueState::Inactive) => resume(ctx, node).await.map(|_| ()),
        Some(_) => Ok(()),
    }
}

/// Check that `node` may consume `id` now. Stored resources need the
/// Entangled state; measure-on-receipt resources need an attached user.
async fn consume_guard(ctx: &Pctx, node: &NodeId, id: ResourceId, slice: SliceType) -> Result<String, ProtoError> {
    let Some(mut state) = ctx.world(|w| w.state(node)) else {
        return Ok("infrastructure".into());
    };
    if state == QueState::Inactive {
        resume(ctx, node).await?;
        state = ctx.world(|w| w.state(node)).unwrap_or(QueState::Idle);
    }
    let allowed = match slice {
        SliceType::GenerateAndStore => state == QueState::Entangled,
        SliceType::GenerateAndMeasure => state.is_attached(),
    };
    if !allowed {
        ctx.trace(node.as_str(), "consume_refused", [("id", id.to_string()), ("owner_state", state.to_string())]);
        return Err(ProtoError::ConsumeForbidden { node: node.clone(), id, state });
    }
    Ok(state.to_string())
}

fn after_consume(ctx: &Pctx, node: &NodeId) {
    let drop_back = ctx.world(|w| w.state(node) == Some(QueState::Entangled) && w.store.held_by(node).is_empty());
    if drop_back {
        let _ = set_state(ctx, node, QueState::Connected);
    }
}

fn trace_consume(ctx: &Pctx, node: &NodeId, id: ResourceId, owner_state: &str, op: &str, fidelity: f64) {
    if tracing_resources(ctx) {
        ctx.trace(
            node.as_str(),
            "consume",
            [
                ("id", id.to_string()),
                ("owner_state", owner_state.to_owned()),
                ("op", op.to_owned()),
                ("fidelity", format!("{fidelity:.6}")),
            ],
        );
    }
    let f_min = ctx.world(|w| w.cfg.f_min);
    ctx.metrics(|m| {
        m.observe("fidelity_at_consumption", fidelity, "1");
        m.incr(&format!("consumed.{node}"), 1.0, "count");
        if fidelity < f_min {
            m.incr(&format!("decoherence_failures.{node}"), 1.0, "count");
        }
    });
}

/// Measure `node`'s half of `id`, subject to the state machine.
pub async fn consume_measure(
    ctx: &Pctx,
    node: &NodeId,
    id: ResourceId,
    basis: MeasurementBasis,
    slice: SliceType,
) -> Result<(bool, f64), ProtoError> {
    let owner_state = consume_guard(ctx, node, id, slice).await?;
    let now = ctx.now();
    let (bit, fidelity) =
        ctx.with_rng(node.as_str(), "measure", |rng| ctx.world_mut(|w| w.store.measure(id, node, basis, now, rng)))?;
    mark_activity(ctx, node);
    trace_consume(ctx, node, id, &owner_state, &format!("measure_{basis}"), fidelity);
    after_consume(ctx, node);
    Ok((bit, fidelity))
}

/// Hand `node`'s half of `id` to a local operation; returns `w` at use.
pub async fn consume_release(ctx: &Pctx, node: &NodeId, id: ResourceId, slice: SliceType) -> Result<f64, ProtoError> {
    let owner_state = consume_guard(ctx, node, id, slice).await?;
    let now = ctx.now();
    let w = ctx.world_mut(|w| w.store.release(id, node, now))?;
    mark_activity(ctx, node);
    trace_consume(ctx, node, id, &owner_state, "release", fidelity_of(w.clamp(0.0, 1.0))?);
    after_consume(ctx, node);
    Ok(w)
}

/// Drop a live pair, recording why.
pub fn discard(ctx: &Pctx, id: ResourceId, reason: &str) {
    let now = ctx.now();
    let holders = ctx.world_mut(|w| w.store.discard(id, now, reason).ok().map(|p| p.pair.holders));
    if let Some(holders) = holders {
        if tracing_resources(ctx) {
            ctx.trace(holders[0].as_str(), "discard", [("id", id.to_string()), ("reason", reason.to_owned())]);
        }
        ctx.metrics(|m| m.incr("pairs_discarded", 1.0, "count"));
        for h in &holders {
            after_consume(ctx, h);
        }
    }
}

/// Time of the next heralded success on `link` after `from`, or `None` if
/// none happens by `deadline`. Attempts while an end point is uncovered
/// fail; a satellite source skips ahead to its next pass.
/// Hard stop for sessions without a finite deadline.
const MAX_ATTEMPTS: f64 = 1e9;

fn next_success(ctx: &Pctx, link: &QuantumLink, from: f64, deadline: f64) -> Option<f64> {
    let spec = link.spec;
    if spec.q_attempt <= 0.0 {
        return None;
    }
    let period = spec.attempt_period_s;
    let mut k = 1.0f64;
    loop {
        let t = from + k * period;
        if t > deadline || k > MAX_ATTEMPTS {
            return None;
        }
        let (usable, window) = ctx.world(|w| {
            let usable = w.topo.check_link_usable(link, t).is_ok();
            let window = w
                .topo
                .node(&link.source)
                .ok()
                .and_then(|n| n.mobility.orbit().copied())
                .filter(|o| !o.contains(t))
                .map(|o| o.next_window(t).0);
            (usable, window)
        });
        if usable {
            if ctx.with_rng(link.source.as_str(), "attempt", |rng| rng.random_bool(spec.q_attempt)) {
                return Some(t);
            }
        } else if let Some(start) = window {
            k = k.max(((start - from) / period).ceil());
            if from + k * period < start {
                k += 1.0;
            }
            continue;
        }
        k += 1.0;
    }
}

fn basis_for(ctx: &Pctx, plan: MeasurePlan, node: &NodeId, side: usize) -> MeasurementBasis {
    match plan {
        MeasurePlan::Fixed(a, b) => {
            if side == 0 {
                a
            } else {
                b
            }
        }
        MeasurePlan::RandomPauli => {
            ctx.with_rng(
                node.as_str(),
                "basis",
                |rng| {
                    if rng.random() {
                        MeasurementBasis::X
                    } else {
                        MeasurementBasis::Z
                    }
                },
            )
        }
    }
}

enum Generated {
    Ready(ResourceId, Option<MeasuredPair>),
    Dropped,
    Deadline,
}

/// Produce one end-to-end pair along `route`: every link generates in
/// parallel, the repeaters swap once all links hold a pair, and the far end
/// waits for every correction before the pair is usable.
async fn generate_one(
    ctx: &Pctx,
    req: &EntanglementRequest,
    route: &[QuantumLink],
    nodes: &[NodeId],
    deadline: f64,
) -> Result<Generated, ProtoError> {
    let n = route.len();
    let a = &nodes[0];
    let b = &nodes[n];
    let measure = req.slice == SliceType::GenerateAndMeasure;
    let start = ctx.now();
    let mut held: Vec<Option<ResourceId>> = vec![None; n];
    let mut next: Vec<Option<f64>> = route.iter().map(|l| next_success(ctx, l, start, deadline)).collect();
    let mut outcome: [Option<(MeasurementBasis, bool, f64)>; 2] = [None, None];

    while held.iter().any(Option::is_none) {
        let pick = (0..n)
            .filter(|&i| held[i].is_none())
            .filter_map(|i| next[i].map(|t| (t, i)))
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let Some((t, i)) = pick else {
            for id in held.iter().flatten() {
                discard(ctx, *id, "session_deadline");
            }
            return Ok(Generated::Deadline);
        };
        ctx.sleep_until(t, EventKind::EntanglementAttempt).await;
        let link = &route[i];
        let has_room = ctx.world(|w| link.endpoints.iter().all(|e| w.memory_free(e)));
        if !has_room {
            next[i] = next_success(ctx, link, t, deadline);
            continue;
        }
        let id = ctx.world_mut(|w| -> Result<ResourceId, ProtoError> {
            let id = w.ids.fresh();
            let pair = WernerPair::new(id, link.endpoints.clone(), link.spec.w0, t)?;
            let t_coh = [w.t_coh(&link.endpoints[0]), w.t_coh(&link.endpoints[1])];
            Ok(w.store.insert(pair, t_coh, true)?)
        })?;
        ctx.metrics(|m| m.incr("pairs_generated", 1.0, "count"));
        if tracing_resources(ctx) {
            ctx.trace(
                link.source.as_str(),
                "pair_created",
                [
                    ("id", id.to_string()),
                    ("a", link.endpoints[0].to_string()),
                    ("b", link.endpoints[1].to_string()),
                    ("w", format!("{:.6}", link.spec.w0)),
                ],
            );
        }
        for e in &link.endpoints {
            mark_activity(ctx, e);
        }
        held[i] = Some(id);
        if measure {
            // The near end measures on receipt; the far end does too when
            // no correction will ever be needed.
            for (side, end) in [(0, a), (1, b)] {
                if link.endpoints.contains(end) && (side == 0 || n == 1) {
                    let basis = basis_for(ctx, req.plan, end, side);
                    let (bit, f) = consume_measure(ctx, end, id, basis, req.slice).await?;
                    outcome[side] = Some((basis, bit, f));
                }
            }
        }
    }

    let mut cur = held[0].expect("all links hold a pair");
    for (i, r) in nodes.iter().enumerate().take(n).skip(1) {
        let now = ctx.now();
        let right = held[i].expect("all links hold a pair");
        let (id, _) = ctx.with_rng(r.as_str(), "swap", |rng| {
            ctx.world_mut(|w| {
                let new_id = w.ids.fresh();
                w.store.swap(cur, right, r, new_id, now, rng)
            })
        })?;
        if tracing_resources(ctx) {
            ctx.trace(
                r.as_str(),
                "swap",
                [("left", cur.to_string()), ("right", right.to_string()), ("out", id.to_string())],
            );
        }
        ctx.metrics(|m| m.incr("swaps", 1.0, "count"));
        cur = id;
    }

    if n > 1 {
        let now = ctx.now();
        let bits = ctx.world(|w| w.cfg.sizes.correction);
        let mut latest = now;
        let mut plans = Vec::new();
        for r in &nodes[1..n] {
            match plan(ctx, r, b, bits, "correction", now) {
                Ok(d) => {
                    latest = latest.max(d.arrival);
                    plans.push((r, d));
                }
                Err((e, t)) => {
                    ctx.sleep_until(t, EventKind::Timer).await;
                    ctx.trace(
                        r.as_str(),
                        "msg_failed",
                        [("to", b.to_string()), ("label", "correction".to_owned()), ("error", e.to_string())],
                    );
                    discard(ctx, cur, "correction_lost");
                    return Ok(Generated::Dropped);
                }
            }
        }
        ctx.sleep_until(latest, EventKind::MessageDelivery).await;
        for (r, d) in &plans {
            trace_msg(ctx, r, b, bits, "correction", d);
        }
        mark_activity(ctx, b);
        ctx.world_mut(|w| w.store.set_usable(cur))?;
        if measure {
            let basis = basis_for(ctx, req.plan, b, 1);
            let (bit, f) = consume_measure(ctx, b, cur, basis, req.slice).await?;
            outcome[1] = Some((basis, bit, f));
        }
    }

    let measured = match outcome {
        [Some(x), Some(y)] => Some(MeasuredPair { id: cur, basis: [x.0, y.0], bits: [x.1, y.1], fidelity: [x.2, y.2] }),
        _ => None,
    };
    Ok(Generated::Ready(cur, measured))
}

fn route_nodes(a: &NodeId, route: &[QuantumLink]) -> Vec<NodeId> {
    let mut nodes = vec![a.clone()];
    for l in route {
        let last = nodes.last().expect("nonempty").clone();
        nodes.push(l.other(&last).expect("route is a chain").clone());
    }
    nodes
}

async fn session_inner(ctx: &Pctx, req: &EntanglementRequest, t0: f64) -> Result<SessionResult, ProtoError> {
    req.validate()?;
    ensure_attached(ctx, &req.requester).await?;
    ensure_attached(ctx, &req.peer).await?;
    let route = ctx.world(|w| w.quantum_route(&req.requester, &req.peer))?;
    let now = ctx.now();
    ctx.world(|w| route.iter().try_for_each(|l| w.topo.check_link_usable(l, now)))?;
    let nodes = route_nodes(&req.requester, &route);

    let orchestrator = route[0].source.clone();
    let sizes = ctx.world(|w| w.cfg.sizes);
    send_message(ctx, &req.requester, &orchestrator, sizes.request, "ent_request").await?;
    let mut sources: Vec<NodeId> = route.iter().map(|l| l.source.clone()).filter(|s| s != &orchestrator).collect();
    sources.dedup();
    for s in &sources {
        send_message(ctx, &orchestrator, s, sizes.request, "ent_forward").await?;
    }
    ctx.trace(
        req.requester.as_str(),
        "session_start",
        [
            ("peer", req.peer.to_string()),
            ("count", req.count.to_string()),
            ("slice", format!("{:?}", req.slice)),
            ("app", req.app_type.clone()),
            ("hops", route.len().to_string()),
        ],
    );

    let deadline = t0 + req.max_latency;
    let mut delivered: Vec<ResourceId> = Vec::new();
    let mut measured: Vec<MeasuredPair> = Vec::new();
    let mut discarded = 0;
    let mut out_of_time = false;
    loop {
        while (delivered.len() as u32) < req.count && !out_of_time {
            match generate_one(ctx, req, &route, &nodes, deadline).await? {
                Generated::Ready(id, m) => match m {
                    Some(m) if m.fidelity[0].min(m.fidelity[1]) < req.min_fidelity => discarded += 1,
                    Some(m) => {
                        delivered.push(id);
                        measured.push(m);
                    }
                    None => delivered.push(id),
                },
                Generated::Dropped => discarded += 1,
                Generated::Deadline => out_of_time = true,
            }
        }
        if let Err(e) = send_message(ctx, &req.requester, &orchestrator, sizes.ack, "ent_ack").await {
            for id in &delivered {
                if req.slice == SliceType::GenerateAndStore {
                    discard(ctx, *id, "ack_lost");
                }
            }
            return Err(e);
        }
        if req.slice == SliceType::GenerateAndStore {
            let now = ctx.now();
            let stale: Vec<ResourceId> = ctx.world(|w| {
                delivered
                    .iter()
                    .copied()
                    .filter(|id| w.store.get(*id).map(|p| p.fidelity_at(now) < req.min_fidelity).unwrap_or(true))
                    .collect()
            });
            for id in &stale {
                discard(ctx, *id, "below_threshold");
                discarded += 1;
            }
            delivered.retain(|id| !stale.contains(id));
        }
        if delivered.len() as u32 >= req.count || out_of_time || ctx.now() >= deadline {
            break;
        }
    }

    if req.slice == SliceType::GenerateAndStore && !delivered.is_empty() {
        if let Some(d) = ctx.world(|w| w.cfg.distillation) {
            ctx.sleep(d.delay_s).await;
            let now = ctx.now();
            for id in &delivered {
                ctx.world_mut(|w| w.store.distill(*id, now, d.boost))?;
            }
        }
        for node in [&req.requester, &req.peer] {
            if ctx.world(|w| w.state(node)) == Some(QueState::Connected) {
                set_state(ctx, node, QueState::Entangled)?;
            }
        }
    }

    let elapsed = ctx.now() - t0;
    let outcome = if delivered.len() as u32 == req.count && elapsed <= req.max_latency {
        SessionOutcome::Fulfilled
    } else if !delivered.is_empty() {
        SessionOutcome::PartiallyFulfilled
    } else {
        SessionOutcome::Expired
    };
    Ok(SessionResult { delivered, measured, elapsed, outcome, reason: None, discarded })
}

/// The link-layer entanglement session: request, generation (with swaps
/// and corrections on multi-hop routes) and acknowledgment.
pub async fn entanglement_session(ctx: &Pctx, req: &EntanglementRequest) -> SessionResult {
    let t0 = ctx.now();
    let result = match session_inner(ctx, req, t0).await {
        Ok(r) => r,
        Err(e) => {
            ctx.trace(req.requester.as_str(), "session_rejected", [("reason", e.to_string())]);
            SessionResult::rejected(e.to_string(), ctx.now() - t0)
        }
    };
    ctx.trace(
        req.requester.as_str(),
        "session_end",
        [
            ("outcome", result.outcome.to_string()),
            ("delivered", result.delivered.len().to_string()),
            ("elapsed", format!("{:.9}", result.elapsed)),
        ],
    );
    let label = format!("sessions_{}", format!("{:?}", result.outcome).to_lowercase());
    ctx.metrics(|m| {
        m.incr(&label, 1.0, "count");
        m.observe("session_latency", result.elapsed, "s");
    });
    result
}

/// Serve a request from buffered pairs first and run a session for the rest.
pub async fn acquire_pairs(ctx: &Pctx, req: &EntanglementRequest) -> SessionResult {
    let t0 = ctx.now();
    let mut buffered: Vec<ResourceId> = Vec::new();
    if req.slice == SliceType::GenerateAndStore {
        buffered = ctx.world(|w| {
            w.store
                .usable_between(&req.requester, &req.peer)
                .into_iter()
                .filter(|id| w.store.get(*id).map(|p| p.fidelity_at(t0) >= req.min_fidelity).unwrap_or(false))
                .take(req.count as usize)
                .collect()
        });
    }
    if !buffered.is_empty() {
        ctx.trace(req.requester.as_str(), "buffer_hit", [("pairs", buffered.len().to_string())]);
    }
    let missing = req.count - buffered.len() as u32;
    if missing == 0 {
        return SessionResult {
            delivered: buffered,
            measured: Vec::new(),
            elapsed: 0.0,
            outcome: SessionOutcome::Fulfilled,
            reason: None,
            discarded: 0,
        };
    }
    let mut rest = EntanglementRequest { count: missing, ..req.clone() };
    rest.max_latency = req.max_latency;
    let mut r = entanglement_session(ctx, &rest).await;
    if !buffered.is_empty() {
        buffered.append(&mut r.delivered);
        r.delivered = buffered;
        r.outcome = if r.delivered.len() as u32 == req.count && r.outcome == SessionOutcome::Fulfilled {
            SessionOutcome::Fulfilled
        } else {
            SessionOutcome::PartiallyFulfilled
        };
    }
    r.elapsed = ctx.now() - t0;
    r
}

/// Teleport `payload` from `sender` to `receiver` through stored pair `pair`.
pub async fn teleport(
    ctx: &Pctx,
    sender: &NodeId,
    receiver: &NodeId,
    payload: Payload,
    pair: ResourceId,
) -> Result<TeleportRecord, ProtoError> {
    let both = ctx.world(|w| w.store.get(pair).map(|p| p.live_at(sender) && p.live_at(receiver)))?;
    if !both {
        return Err(ProtoError::Rejected(format!("{sender} and {receiver} do not share pair {pair}")));
    }
    consume_release(ctx, sender, pair, SliceType::GenerateAndStore).await?;
    let bits = ctx.world(|w| w.cfg.sizes.correction);
    if let Err(e) = send_message(ctx, sender, receiver, bits, "teleport_bits").await {
        discard(ctx, pair, "teleport_bits_lost");
        let lost = match payload {
            Payload::Token(id) => id,
            Payload::Exact(_) => ctx.world_mut(|w| w.payloads.fresh()),
        };
        ctx.trace(sender.as_str(), "payload_lost", [("payload", lost.to_string()), ("error", e.to_string())]);
        return Err(ProtoError::PermanentlyLost(lost));
    }
    let w = consume_release(ctx, receiver, pair, SliceType::GenerateAndStore).await?;
    let record = match payload {
        Payload::Exact(state) => ctx.with_rng(sender.as_str(), "teleport", |rng| teleport_exact(state, w, rng))?,
        Payload::Token(_) => {
            let bits = ctx.with_rng(sender.as_str(), "teleport", |rng| [rng.random(), rng.random()]);
            TeleportRecord { bits, quality: fidelity_of(w)?, output: None }
        }
    };
    ctx.trace(
        receiver.as_str(),
        "teleport",
        [("from", sender.to_string()), ("quality", format!("{:.6}", record.quality))],
    );
    ctx.metrics(|m| m.observe("teleport_quality", record.quality, "1"));
    Ok(record)
}

/// X-measure `party`'s qubit of a GHZ state and deliver the correction bit
/// to `notify`. A two-party remainder is stored as an ordinary pair.
pub async fn reduce_ghz(ctx: &Pctx, ghz: GhzResource, party: &NodeId, notify: &NodeId) -> Result<Reduced, ProtoError> {
    let now = ctx.now();
    let (_, reduced) =
        ctx.with_rng(party.as_str(), "ghz", |rng| ctx.world_mut(|w| ghz_x_reduce(ghz, party, &mut w.ids, now, rng)))?;
    let bits = ctx.world(|w| w.cfg.sizes.correction);
    send_message(ctx, party, notify, bits, "ghz_correction").await?;
    if let Reduced::Pair(p) = &reduced {
        ctx.world_mut(|w| -> Result<(), ProtoError> {
            let t_coh = [w.t_coh(&p.holders[0]), w.t_coh(&p.holders[1])];
            w.store.insert(p.clone(), t_coh, true)?;
            Ok(())
        })?;
    }
    Ok(reduced)
}
