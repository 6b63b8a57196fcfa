#![allow(dead_code)]

use oneq::netmodel::{
    CellSpec, ClassicalLinkSpec, MobilityModel, NodeId, NodeKind, NodeSpec, QuantumLink, QuantumLinkSpec, Topology,
};

pub fn n(s: &str) -> NodeId {
    NodeId::from(s)
}

pub fn node(id: &str, kind: NodeKind, x: f64, t_coh: f64) -> NodeSpec {
    NodeSpec {
        id: n(id),
        kind,
        mobility: MobilityModel::Static { position: [x, 0.0, 0.0] },
        device_class: None,
        t_coh,
        memory_slots: if kind == NodeKind::Cue { 0 } else { 8 },
    }
}

pub fn qlink(q: f64, w0: f64) -> QuantumLinkSpec {
    QuantumLinkSpec { q_attempt: q, attempt_period_s: 1e-3, w0, requires_los: false }
}

pub const ACCESS_RATE: f64 = 1e6;
pub const ACCESS_DELAY: f64 = 1e-3;
pub const BACKHAUL_RATE: f64 = 1e9;
pub const BACKHAUL_DELAY: f64 = 1e-4;

pub fn access_latency(bits: u64) -> f64 {
    bits as f64 / ACCESS_RATE + ACCESS_DELAY
}

pub fn backhaul_latency(bits: u64) -> f64 {
    bits as f64 / BACKHAUL_RATE + BACKHAUL_DELAY
}

/// Two terrestrial cells 5 km apart with QUE1 near QBS1 and QUE3 near QBS2,
/// both QBS linked and adjacent in the repeater graph.
pub fn two_cells(q: f64, w_access: f64, w_backhaul: f64, p_err: f64, t_coh: f64) -> Topology {
    let mut t = Topology::new();
    t.add_node(node("QBS1", NodeKind::Qbs, 0.0, t_coh));
    t.add_node(node("QBS2", NodeKind::Qbs, 5000.0, t_coh));
    t.add_node(node("QUE1", NodeKind::Que, 100.0, t_coh));
    t.add_node(node("QUE2", NodeKind::Que, 200.0, t_coh));
    t.add_node(node("QUE3", NodeKind::Que, 5100.0, t_coh));
    for bs in ["QBS1", "QBS2"] {
        t.add_cell(n(bs), CellSpec { classical_radius: 3000.0, quantum_radius: 1500.0 });
    }
    t.access_link = Some(ClassicalLinkSpec::new(ACCESS_RATE, ACCESS_DELAY, p_err).unwrap());
    t.backhaul_link = Some(ClassicalLinkSpec::new(BACKHAUL_RATE, BACKHAUL_DELAY, p_err).unwrap());
    t.add_quantum_link(QuantumLink { endpoints: [n("QUE1"), n("QBS1")], source: n("QBS1"), spec: qlink(q, w_access) });
    t.add_quantum_link(QuantumLink { endpoints: [n("QUE2"), n("QBS1")], source: n("QBS1"), spec: qlink(q, w_access) });
    t.add_quantum_link(QuantumLink { endpoints: [n("QUE1"), n("QUE2")], source: n("QBS1"), spec: qlink(q, w_access) });
    t.add_quantum_link(QuantumLink {
        endpoints: [n("QBS1"), n("QBS2")],
        source: n("QBS1"),
        spec: qlink(q, w_backhaul),
    });
    t.add_quantum_link(QuantumLink { endpoints: [n("QBS2"), n("QUE3")], source: n("QBS2"), spec: qlink(q, w_access) });
    t.add_repeater_edge(&n("QBS1"), &n("QBS2"));
    t
}
