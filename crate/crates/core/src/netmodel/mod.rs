//! Topology, coverage geometry, link models and mobility.
//!
//! Coverage is a sphere around the base station. A satellite base station is
//! only reachable inside its repeating pass windows.

mod mobility;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qcore::{ResourceIds, WernerPair};

pub use mobility::{MobilityModel, Orbit};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{node} is not in quantum coverage of {source_bs} at t={t}")]
    NotCovered { node: NodeId, source_bs: NodeId, t: f64 },
    #[error("no line of sight for link {a}-{b} at t={t}")]
    NoLineOfSight { a: NodeId, b: NodeId, t: f64 },
    #[error("invalid link parameters: {0}")]
    InvalidLink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "CBS")]
    Cbs,
    #[serde(rename = "QBS")]
    Qbs,
    #[serde(rename = "CUE")]
    Cue,
    #[serde(rename = "QUE")]
    Que,
    #[serde(rename = "SAT_QBS")]
    SatQbs,
}

impl NodeKind {
    pub fn is_base_station(self) -> bool {
        matches!(self, NodeKind::Cbs | NodeKind::Qbs | NodeKind::SatQbs)
    }

    pub fn is_quantum(self) -> bool {
        matches!(self, NodeKind::Qbs | NodeKind::Que | NodeKind::SatQbs)
    }

    pub fn is_user(self) -> bool {
        matches!(self, NodeKind::Cue | NodeKind::Que)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeKind::Cbs => "CBS",
            NodeKind::Qbs => "QBS",
            NodeKind::Cue => "CUE",
            NodeKind::Que => "QUE",
            NodeKind::SatQbs => "SAT_QBS",
        };
        f.write_str(s)
    }
}

/// Quantum memory capability shared by all devices of a class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceClass {
    pub t_coh_s: f64,
    pub memory_slots: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    pub mobility: MobilityModel,
    pub device_class: Option<String>,
    /// Memory coherence time; infinite for purely classical nodes.
    pub t_coh: f64,
    pub memory_slots: u32,
}

impl NodeSpec {
    pub fn position(&self, t: f64) -> [f64; 3] {
        self.mobility.position(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub classical_radius: f64,
    pub quantum_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalLinkSpec {
    pub rate_bps: f64,
    pub prop_delay_s: f64,
    pub p_err: f64,
}

impl ClassicalLinkSpec {
    pub fn new(rate_bps: f64, prop_delay_s: f64, p_err: f64) -> Result<Self, NetError> {
        if !(rate_bps > 0.0) {
            return Err(NetError::InvalidLink(format!("rate must be positive, got {rate_bps}")));
        }
        if !(prop_delay_s >= 0.0) {
            return Err(NetError::InvalidLink(format!("negative propagation delay {prop_delay_s}")));
        }
        if !(0.0..1.0).contains(&p_err) {
            return Err(NetError::InvalidLink(format!("p_err {p_err} outside [0, 1)")));
        }
        Ok(Self { rate_bps, prop_delay_s, p_err })
    }

    pub fn latency(&self, size_bits: u64) -> f64 {
        size_bits as f64 / self.rate_bps + self.prop_delay_s
    }
}

/// Send one message. Latency depends only on the link and size; whether it
/// arrives is the only random part.
pub fn classical_send<R: Rng + ?Sized>(link: &ClassicalLinkSpec, size_bits: u64, rng: &mut R) -> (bool, f64) {
    let delivered = !rng.random_bool(link.p_err);
    (delivered, link.latency(size_bits))
}

/// Heralded free-space entanglement generation between two endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumLinkSpec {
    pub q_attempt: f64,
    pub attempt_period_s: f64,
    pub w0: f64,
    #[serde(default)]
    pub requires_los: bool,
}

impl QuantumLinkSpec {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.attempt_period_s > 0.0) {
            return Err(NetError::InvalidLink(format!(
                "attempt period must be positive, got {}",
                self.attempt_period_s
            )));
        }
        if !(0.0..=1.0).contains(&self.q_attempt) {
            return Err(NetError::InvalidLink(format!("q_attempt {} outside [0, 1]", self.q_attempt)));
        }
        if !(0.0..=1.0).contains(&self.w0) {
            return Err(NetError::InvalidLink(format!("w0 {} outside [0, 1]", self.w0)));
        }
        Ok(())
    }
}

/// A quantum link between `endpoints`, driven by the entanglement source at
/// base station `source`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumLink {
    pub endpoints: [NodeId; 2],
    pub source: NodeId,
    pub spec: QuantumLinkSpec,
}

impl QuantumLink {
    pub fn connects(&self, a: &NodeId, b: &NodeId) -> bool {
        (&self.endpoints[0] == a && &self.endpoints[1] == b) || (&self.endpoints[0] == b && &self.endpoints[1] == a)
    }

    pub fn other(&self, node: &NodeId) -> Option<&NodeId> {
        if &self.endpoints[0] == node {
            Some(&self.endpoints[1])
        } else if &self.endpoints[1] == node {
            Some(&self.endpoints[0])
        } else {
            None
        }
    }
}

fn ordered(a: &NodeId, b: &NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Read-only network description after scenario load.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeSpec>,
    cells: BTreeMap<NodeId, CellSpec>,
    classical_links: BTreeMap<(NodeId, NodeId), ClassicalLinkSpec>,
    quantum_links: Vec<QuantumLink>,
    repeater_graph: BTreeSet<(NodeId, NodeId)>,
    /// Used for user-to-base-station hops without an explicit link.
    pub access_link: Option<ClassicalLinkSpec>,
    /// Used for base-station-to-base-station hops without an explicit link.
    pub backhaul_link: Option<ClassicalLinkSpec>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: NodeSpec) {
        self.nodes.insert(node.id.clone(), node);
    }

    pub fn add_cell(&mut self, bs: NodeId, cell: CellSpec) {
        self.cells.insert(bs, cell);
    }

    pub fn add_classical_link(&mut self, a: &NodeId, b: &NodeId, link: ClassicalLinkSpec) {
        self.classical_links.insert(ordered(a, b), link);
    }

    pub fn add_quantum_link(&mut self, link: QuantumLink) {
        self.quantum_links.push(link);
    }

    pub fn add_repeater_edge(&mut self, a: &NodeId, b: &NodeId) {
        self.repeater_graph.insert(ordered(a, b));
    }

    pub fn node(&self, id: &NodeId) -> Result<&NodeSpec, NetError> {
        self.nodes.get(id).ok_or_else(|| NetError::UnknownNode(id.clone()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn cell(&self, bs: &NodeId) -> Option<&CellSpec> {
        self.cells.get(bs)
    }

    pub fn quantum_links(&self) -> &[QuantumLink] {
        &self.quantum_links
    }

    pub fn repeater_edge(&self, a: &NodeId, b: &NodeId) -> bool {
        self.repeater_graph.contains(&ordered(a, b))
    }

    pub fn repeater_neighbors(&self, bs: &NodeId) -> Vec<NodeId> {
        self.repeater_graph
            .iter()
            .filter_map(|(a, b)| {
                if a == bs {
                    Some(b.clone())
                } else if b == bs {
                    Some(a.clone())
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn quantum_link_between(&self, a: &NodeId, b: &NodeId) -> Option<&QuantumLink> {
        self.quantum_links.iter().find(|l| l.connects(a, b))
    }

    /// Explicit link if present, otherwise the access/backhaul default for
    /// the pair's node kinds.
    pub fn classical_link(&self, a: &NodeId, b: &NodeId) -> Result<Option<ClassicalLinkSpec>, NetError> {
        if let Some(l) = self.classical_links.get(&ordered(a, b)) {
            return Ok(Some(*l));
        }
        let ka = self.node(a)?.kind;
        let kb = self.node(b)?.kind;
        Ok(match (ka.is_base_station(), kb.is_base_station()) {
            (true, true) => self.backhaul_link,
            (true, false) | (false, true) => self.access_link,
            (false, false) => None,
        })
    }

    /// Whether `bs` is visible at `t`; always true for terrestrial stations.
    pub fn in_service(&self, bs: &NodeId, t: f64) -> Result<bool, NetError> {
        Ok(self.node(bs)?.mobility.in_window(t))
    }

    fn covered(&self, node: &NodeId, bs: &NodeId, t: f64, quantum: bool) -> Result<bool, NetError> {
        let n = self.node(node)?;
        let b = self.node(bs)?;
        let Some(cell) = self.cells.get(bs) else {
            return Ok(false);
        };
        if !b.mobility.in_window(t) {
            return Ok(false);
        }
        let radius = if quantum { cell.quantum_radius } else { cell.classical_radius };
        Ok(distance(n.position(t), b.position(t)) <= radius)
    }

    pub fn in_classical_coverage(&self, node: &NodeId, bs: &NodeId, t: f64) -> Result<bool, NetError> {
        self.covered(node, bs, t, false)
    }

    pub fn in_quantum_coverage(&self, node: &NodeId, bs: &NodeId, t: f64) -> Result<bool, NetError> {
        if !self.node(bs)?.kind.is_quantum() {
            return Ok(false);
        }
        self.covered(node, bs, t, true)
    }

    /// Base stations whose classical cell contains `node` at `t`, nearest first.
    pub fn classical_cells_covering(&self, node: &NodeId, t: f64) -> Result<Vec<NodeId>, NetError> {
        let pos = self.node(node)?.position(t);
        let mut hits = Vec::new();
        for bs in self.cells.keys() {
            if self.in_classical_coverage(node, bs, t)? {
                hits.push((distance(pos, self.node(bs)?.position(t)), bs.clone()));
            }
        }
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        Ok(hits.into_iter().map(|(_, b)| b).collect())
    }

    /// Check that both endpoints of `link` can be served by its source at `t`.
    pub fn check_link_usable(&self, link: &QuantumLink, t: f64) -> Result<(), NetError> {
        let source = &link.source;
        if !self.in_service(source, t)? {
            return Err(NetError::NoLineOfSight { a: link.endpoints[0].clone(), b: link.endpoints[1].clone(), t });
        }
        for end in &link.endpoints {
            let spec = self.node(end)?;
            if end == source {
                continue;
            }
            if spec.kind.is_base_station() {
                // Inter-station links are fixed optics; only visibility matters.
                if !spec.mobility.in_window(t) {
                    return Err(NetError::NoLineOfSight {
                        a: link.endpoints[0].clone(),
                        b: link.endpoints[1].clone(),
                        t,
                    });
                }
            } else if !self.in_quantum_coverage(end, source, t)? {
                return Err(NetError::NotCovered { node: end.clone(), source_bs: source.clone(), t });
            }
        }
        if link.spec.requires_los {
            for end in &link.endpoints {
                if !self.node(end)?.mobility.in_window(t) {
                    return Err(NetError::NoLineOfSight {
                        a: link.endpoints[0].clone(),
                        b: link.endpoints[1].clone(),
                        t,
                    });
                }
            }
        }
        Ok(())
    }
}

/// One heralded generation attempt at time `t`.
///
/// Coverage violations are errors, distinct from the `Ok(None)` of an
/// attempt that simply failed.
pub fn attempt_pair<R: Rng + ?Sized>(
    topo: &Topology,
    link: &QuantumLink,
    ids: &mut ResourceIds,
    rng: &mut R,
    t: f64,
) -> Result<Option<WernerPair>, NetError> {
    topo.check_link_usable(link, t)?;
    if !rng.random_bool(link.spec.q_attempt) {
        return Ok(None);
    }
    let pair = WernerPair::new(ids.fresh(), link.endpoints.clone(), link.spec.w0, t)
        .map_err(|e| NetError::InvalidLink(e.to_string()))?;
    Ok(Some(pair))
}

/// Earliest pass window of `orbit` that ends after `t`.
pub fn orbit_next_window(orbit: &Orbit, t: f64) -> (f64, f64) {
    orbit.next_window(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn n(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn node(id: &str, kind: NodeKind, pos: [f64; 3]) -> NodeSpec {
        NodeSpec {
            id: n(id),
            kind,
            mobility: MobilityModel::Static { position: pos },
            device_class: None,
            t_coh: 1.0,
            memory_slots: if kind == NodeKind::Cue { 0 } else { 4 },
        }
    }

    fn cell_topology() -> Topology {
        let mut t = Topology::new();
        t.add_node(node("QBS1", NodeKind::Qbs, [0.0; 3]));
        t.add_node(node("QUE1", NodeKind::Que, [1400.0, 0.0, 0.0]));
        t.add_node(node("QUE2", NodeKind::Que, [2000.0, 0.0, 0.0]));
        t.add_node(node("CUE1", NodeKind::Cue, [0.0; 3]));
        t.add_cell(n("QBS1"), CellSpec { classical_radius: 5000.0, quantum_radius: 1500.0 });
        t
    }

    #[test]
    fn terrestrial_fso_range() {
        let t = cell_topology();
        assert!(t.in_quantum_coverage(&n("QUE1"), &n("QBS1"), 0.0).unwrap());
        assert!(!t.in_quantum_coverage(&n("QUE2"), &n("QBS1"), 0.0).unwrap());
        assert!(t.in_classical_coverage(&n("QUE2"), &n("QBS1"), 0.0).unwrap());
        assert!(t.in_classical_coverage(&n("CUE1"), &n("QBS1"), 0.0).unwrap());
        assert!(matches!(t.in_classical_coverage(&n("nope"), &n("QBS1"), 0.0), Err(NetError::UnknownNode(_))));
    }

    #[test]
    fn zero_distance_is_covered() {
        let mut t = Topology::new();
        t.add_node(node("B", NodeKind::Qbs, [5.0, 5.0, 5.0]));
        t.add_node(node("U", NodeKind::Que, [5.0, 5.0, 5.0]));
        t.add_cell(n("B"), CellSpec { classical_radius: 1e-6, quantum_radius: 1e-6 });
        assert!(t.in_quantum_coverage(&n("U"), &n("B"), 0.0).unwrap());
    }

    #[test]
    fn satellite_window_gates_coverage() {
        let mut t = Topology::new();
        let mut sat = node("SAT", NodeKind::SatQbs, [0.0; 3]);
        sat.mobility = MobilityModel::Orbit { position: [0.0; 3], orbit: Orbit::new(100.0, 300.0, 1000.0).unwrap() };
        t.add_node(sat);
        t.add_node(node("U", NodeKind::Que, [10.0, 0.0, 0.0]));
        t.add_cell(n("SAT"), CellSpec { classical_radius: 5e5, quantum_radius: 5e5 });
        assert!(!t.in_quantum_coverage(&n("U"), &n("SAT"), 500.0).unwrap());
        assert!(t.in_quantum_coverage(&n("U"), &n("SAT"), 200.0).unwrap());
        assert!(!t.in_quantum_coverage(&n("U"), &n("SAT"), 50.0).unwrap());
    }

    #[test]
    fn classical_latency_and_delivery() {
        let link = ClassicalLinkSpec::new(1e6, 1e-3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (ok, lat) = classical_send(&link, 1000, &mut rng);
            assert!(ok);
            assert!((lat - 2e-3).abs() < 1e-15);
        }
        assert!(ClassicalLinkSpec::new(0.0, 0.0, 0.0).is_err());
        assert!(ClassicalLinkSpec::new(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn classical_delivery_rate() {
        let link = ClassicalLinkSpec::new(1e6, 0.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sends = 100_000;
        let ok = (0..sends).filter(|_| classical_send(&link, 64, &mut rng).0).count();
        let freq = ok as f64 / sends as f64;
        let sigma = (0.9f64 * 0.1 / sends as f64).sqrt();
        assert!((freq - 0.9).abs() < 3.0 * sigma, "{freq}");
    }

    fn link(q: f64) -> QuantumLink {
        QuantumLink {
            endpoints: [n("QBS1"), n("QUE1")],
            source: n("QBS1"),
            spec: QuantumLinkSpec { q_attempt: q, attempt_period_s: 1e-3, w0: 0.95, requires_los: false },
        }
    }

    #[test]
    fn certain_attempts_always_succeed() {
        let t = cell_topology();
        let mut ids = ResourceIds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 0..50 {
            let p = attempt_pair(&t, &link(1.0), &mut ids, &mut rng, k as f64).unwrap().unwrap();
            assert_eq!(p.w, 0.95);
            assert_eq!(p.created_at, k as f64);
        }
    }

    #[test]
    fn geometric_attempt_count() {
        let t = cell_topology();
        let mut ids = ResourceIds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sessions = 10_000;
        let mut total = 0u64;
        for _ in 0..sessions {
            let mut k = 0u64;
            loop {
                k += 1;
                if attempt_pair(&t, &link(0.2), &mut ids, &mut rng, 0.0).unwrap().is_some() {
                    break;
                }
            }
            total += k;
        }
        let mean = total as f64 / sessions as f64;
        // Geometric(0.2): mean 5, variance (1-q)/q^2 = 20.
        let sigma = (20.0f64 / sessions as f64).sqrt();
        assert!((mean - 5.0).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn outside_cell_is_precondition_error() {
        let t = cell_topology();
        let mut ids = ResourceIds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = link(1.0);
        l.endpoints = [n("QBS1"), n("QUE2")];
        assert!(matches!(attempt_pair(&t, &l, &mut ids, &mut rng, 0.0), Err(NetError::NotCovered { .. })));
    }

    #[test]
    fn next_window_examples() {
        let o = Orbit::new(100.0, 300.0, 1000.0).unwrap();
        assert_eq!(orbit_next_window(&o, 0.0), (100.0, 400.0));
        assert_eq!(orbit_next_window(&o, 450.0), (1100.0, 1400.0));
        assert_eq!(orbit_next_window(&o, 100.0), (100.0, 400.0));
    }

    #[test]
    fn default_links_by_kind() {
        let mut t = cell_topology();
        assert_eq!(t.classical_link(&n("QUE1"), &n("QBS1")).unwrap(), None);
        let access = ClassicalLinkSpec::new(1e6, 0.0, 0.0).unwrap();
        t.access_link = Some(access);
        assert_eq!(t.classical_link(&n("QUE1"), &n("QBS1")).unwrap(), Some(access));
        assert_eq!(t.classical_link(&n("QUE1"), &n("QUE2")).unwrap(), None);
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quantum_coverage_implies_classical(
                qr in 1.0f64..5000.0, extra in 0.0f64..5000.0,
                x in -1e4f64..1e4, y in -1e4f64..1e4, z in -100.0f64..100.0,
            ) {
                let mut t = Topology::new();
                t.add_node(node("B", NodeKind::Qbs, [0.0; 3]));
                t.add_node(node("U", NodeKind::Que, [x, y, z]));
                t.add_cell(n("B"), CellSpec { classical_radius: qr + extra, quantum_radius: qr });
                let q = t.in_quantum_coverage(&n("U"), &n("B"), 0.0).unwrap();
                let c = t.in_classical_coverage(&n("U"), &n("B"), 0.0).unwrap();
                prop_assert!(!q || c);
            }
        }
    }
}
