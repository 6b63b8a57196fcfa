use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use crate::netmodel::{classical_send, NodeId, QuantumLink, Topology};
use crate::qcore::ResourceIds;

use super::ops::PayloadRegistry;
use super::store::ResourceStore;
use super::{ProtoError, ProtocolConfig, QueState};

#[derive(Debug, Clone, PartialEq)]
pub struct QueInfo {
    pub state: QueState,
    pub serving: Option<NodeId>,
    pub last_activity: f64,
    /// Bumped whenever a fresh inactivity timer is armed.
    pub timer_epoch: u64,
}

/// Result of a planned classical message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub arrival: f64,
    pub attempts: u32,
    pub hops: usize,
}

/// Shared mutable state of one replication.
#[derive(Debug, Clone)]
pub struct World {
    pub topo: Topology,
    pub cfg: ProtocolConfig,
    pub ids: ResourceIds,
    pub store: ResourceStore,
    pub users: BTreeMap<NodeId, QueInfo>,
    pub payloads: PayloadRegistry,
}

impl World {
    pub fn new(topo: Topology, cfg: ProtocolConfig) -> Self {
        let users = topo
            .nodes()
            .filter(|n| n.kind.is_user())
            .map(|n| {
                (n.id.clone(), QueInfo { state: QueState::Idle, serving: None, last_activity: 0.0, timer_epoch: 0 })
            })
            .collect();
        Self {
            topo,
            cfg,
            ids: ResourceIds::default(),
            store: ResourceStore::default(),
            users,
            payloads: PayloadRegistry::default(),
        }
    }

    /// Connection state of a user; `None` for infrastructure nodes.
    pub fn state(&self, node: &NodeId) -> Option<QueState> {
        self.users.get(node).map(|u| u.state)
    }

    pub fn serving(&self, node: &NodeId) -> Option<&NodeId> {
        self.users.get(node).and_then(|u| u.serving.as_ref())
    }

    pub fn t_coh(&self, node: &NodeId) -> f64 {
        self.topo.node(node).map(|n| n.t_coh).unwrap_or(f64::INFINITY)
    }

    pub fn memory_free(&self, node: &NodeId) -> bool {
        let slots = self.topo.node(node).map(|n| n.memory_slots).unwrap_or(0) as usize;
        self.store.occupancy(node) < slots
    }

    fn is_user(&self, node: &NodeId) -> Result<bool, ProtoError> {
        Ok(self.topo.node(node)?.kind.is_user())
    }

    /// Base station that carries `user`'s traffic at `t`: the serving one
    /// while it still covers the user, else the nearest covering cell.
    pub fn access_bs(&self, user: &NodeId, t: f64) -> Result<NodeId, ProtoError> {
        if let Some(s) = self.serving(user) {
            if self.topo.in_classical_coverage(user, s, t)? {
                return Ok(s.clone());
            }
        }
        self.topo
            .classical_cells_covering(user, t)?
            .into_iter()
            .next()
            .ok_or_else(|| ProtoError::NoClassicalCoverage { node: user.clone(), t })
    }

    /// Hops of the classical path `from -> to` chosen at `t`.
    pub fn classical_route(&self, from: &NodeId, to: &NodeId, t: f64) -> Result<Vec<(NodeId, NodeId)>, ProtoError> {
        let mut hops = Vec::new();
        let src_bs = if self.is_user(from)? {
            let bs = self.access_bs(from, t)?;
            hops.push((from.clone(), bs.clone()));
            bs
        } else {
            from.clone()
        };
        let dst_bs = if self.is_user(to)? { self.access_bs(to, t)? } else { to.clone() };
        if src_bs != dst_bs {
            hops.push((src_bs, dst_bs.clone()));
        }
        if self.is_user(to)? {
            hops.push((dst_bs, to.clone()));
        }
        Ok(hops)
    }

    /// Sample the fate of one message over `hops` starting at `t0`.
    ///
    /// Every hop is retransmitted up to the retry cap; a lost copy costs one
    /// latency before the sender times out. Users must be classically
    /// covered by their hop's base station at every attempt. On failure the
    /// error comes with the time at which it became known.
    pub fn plan_hops<R: Rng + ?Sized>(
        &self,
        hops: &[(NodeId, NodeId)],
        bits: u64,
        label: &str,
        t0: f64,
        rng: &mut R,
    ) -> Result<Delivery, (ProtoError, f64)> {
        let mut t = t0;
        let mut total = 0;
        for (a, b) in hops {
            let link = match self.topo.classical_link(a, b) {
                Ok(Some(l)) => l,
                Ok(None) => return Err((ProtoError::Rejected(format!("no classical link {a}-{b}")), t)),
                Err(e) => return Err((e.into(), t)),
            };
            let mut attempts = 0;
            loop {
                for (user, bs) in [(a, b), (b, a)] {
                    match self.is_user(user) {
                        Ok(true) => match self.topo.in_classical_coverage(user, bs, t) {
                            Ok(true) => {}
                            Ok(false) => return Err((ProtoError::NoClassicalCoverage { node: user.clone(), t }, t)),
                            Err(e) => return Err((e.into(), t)),
                        },
                        Ok(false) => {}
                        Err(e) => return Err((e, t)),
                    }
                }
                attempts += 1;
                let (ok, latency) = classical_send(&link, bits, rng);
                t += latency;
                if ok {
                    break;
                }
                if attempts > self.cfg.retry_cap {
                    return Err((
                        ProtoError::RetryCapExceeded {
                            from: a.clone(),
                            to: b.clone(),
                            label: label.to_owned(),
                            attempts,
                        },
                        t,
                    ));
                }
            }
            total += attempts;
        }
        Ok(Delivery { arrival: t, attempts: total, hops: hops.len() })
    }

    /// Shortest chain of quantum links from `a` to `b`. Interior nodes must
    /// be quantum base stations, and station-to-station links must be edges
    /// of the repeater graph.
    pub fn quantum_route(&self, a: &NodeId, b: &NodeId) -> Result<Vec<QuantumLink>, ProtoError> {
        let mut prev: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut seen = BTreeSet::from([a.clone()]);
        let mut queue = VecDeque::from([a.clone()]);
        let links = self.topo.quantum_links();
        while let Some(u) = queue.pop_front() {
            if &u == b {
                break;
            }
            if &u != a && !self.topo.node(&u)?.kind.is_base_station() {
                continue;
            }
            let mut next: Vec<(NodeId, usize)> =
                links.iter().enumerate().filter_map(|(i, l)| l.other(&u).map(|v| (v.clone(), i))).collect();
            next.sort();
            for (v, i) in next {
                if seen.contains(&v) {
                    continue;
                }
                let (ku, kv) = (self.topo.node(&u)?.kind, self.topo.node(&v)?.kind);
                if ku.is_base_station() && kv.is_base_station() && !self.topo.repeater_edge(&u, &v) {
                    continue;
                }
                if &v != b && !(kv.is_base_station() && kv.is_quantum()) {
                    continue;
                }
                seen.insert(v.clone());
                prev.insert(v.clone(), i);
                queue.push_back(v);
            }
        }
        if !prev.contains_key(b) {
            return Err(ProtoError::NoRoute(a.clone(), b.clone()));
        }
        let mut route = Vec::new();
        let mut cur = b.clone();
        while &cur != a {
            let link = links[prev[&cur]].clone();
            cur = link.other(&cur).expect("link touches node").clone();
            route.push(link);
        }
        route.reverse();
        Ok(route)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::rng_stream;
    use crate::netmodel::{CellSpec, ClassicalLinkSpec, MobilityModel, NodeKind, NodeSpec, QuantumLinkSpec};

    fn n(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn node(id: &str, kind: NodeKind, x: f64) -> NodeSpec {
        NodeSpec {
            id: n(id),
            kind,
            mobility: MobilityModel::Static { position: [x, 0.0, 0.0] },
            device_class: None,
            t_coh: 1.0,
            memory_slots: if kind == NodeKind::Cue { 0 } else { 4 },
        }
    }

    fn spec() -> QuantumLinkSpec {
        QuantumLinkSpec { q_attempt: 1.0, attempt_period_s: 1e-3, w0: 1.0, requires_los: false }
    }

    fn topo() -> Topology {
        let mut t = Topology::new();
        t.add_node(node("QBS1", NodeKind::Qbs, 0.0));
        t.add_node(node("QBS2", NodeKind::Qbs, 5000.0));
        t.add_node(node("QUE1", NodeKind::Que, 100.0));
        t.add_node(node("QUE3", NodeKind::Que, 5100.0));
        for bs in ["QBS1", "QBS2"] {
            t.add_cell(n(bs), CellSpec { classical_radius: 3000.0, quantum_radius: 1500.0 });
        }
        t.access_link = Some(ClassicalLinkSpec::new(1e6, 1e-3, 0.0).unwrap());
        t.backhaul_link = Some(ClassicalLinkSpec::new(1e9, 1e-4, 0.0).unwrap());
        t.add_quantum_link(QuantumLink { endpoints: [n("QUE1"), n("QBS1")], source: n("QBS1"), spec: spec() });
        t.add_quantum_link(QuantumLink { endpoints: [n("QBS1"), n("QBS2")], source: n("QBS1"), spec: spec() });
        t.add_quantum_link(QuantumLink { endpoints: [n("QBS2"), n("QUE3")], source: n("QBS2"), spec: spec() });
        t
    }

    #[test]
    fn route_through_repeaters_needs_the_graph_edge() {
        let mut w = World::new(topo(), ProtocolConfig::default());
        assert!(matches!(w.quantum_route(&n("QUE1"), &n("QUE3")), Err(ProtoError::NoRoute(..))));
        w.topo.add_repeater_edge(&n("QBS1"), &n("QBS2"));
        let r = w.quantum_route(&n("QUE1"), &n("QUE3")).unwrap();
        let ends: Vec<_> = r.iter().map(|l| l.endpoints.clone()).collect();
        assert_eq!(ends.len(), 3);
        assert!(r[0].connects(&n("QUE1"), &n("QBS1")));
        assert!(r[2].connects(&n("QBS2"), &n("QUE3")));
    }

    #[test]
    fn users_are_not_relays() {
        let mut t = topo();
        t.add_node(node("QUE2", NodeKind::Que, 200.0));
        t.add_quantum_link(QuantumLink { endpoints: [n("QUE1"), n("QUE2")], source: n("QBS1"), spec: spec() });
        t.add_quantum_link(QuantumLink { endpoints: [n("QUE2"), n("QUE3")], source: n("QBS1"), spec: spec() });
        let w = World::new(t, ProtocolConfig::default());
        assert!(w.quantum_route(&n("QUE1"), &n("QUE3")).is_err());
        assert_eq!(w.quantum_route(&n("QUE1"), &n("QUE2")).unwrap().len(), 1);
    }

    #[test]
    fn classical_route_and_latency() {
        let w = World::new(topo(), ProtocolConfig::default());
        let hops = w.classical_route(&n("QUE1"), &n("QUE3"), 0.0).unwrap();
        assert_eq!(hops, vec![(n("QUE1"), n("QBS1")), (n("QBS1"), n("QBS2")), (n("QBS2"), n("QUE3"))]);
        let mut rng = rng_stream(0, "a", "b");
        let d = w.plan_hops(&hops, 1000, "x", 0.0, &mut rng).unwrap();
        let expected = 2.0 * (1000.0 / 1e6 + 1e-3) + 1000.0 / 1e9 + 1e-4;
        assert!((d.arrival - expected).abs() < 1e-12);
        assert_eq!(d.attempts, 3);
    }

    #[test]
    fn out_of_coverage_user_has_no_route() {
        let mut t = topo();
        t.add_node(node("QUE9", NodeKind::Que, 20_000.0));
        let w = World::new(t, ProtocolConfig::default());
        assert!(matches!(w.classical_route(&n("QUE9"), &n("QBS1"), 0.0), Err(ProtoError::NoClassicalCoverage { .. })));
    }
}
