use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::apps::qkd::QkdConfig;
use crate::apps::sensing::SensingConfig;
use crate::apps::ubqc::UbqcConfig;
use crate::netmodel::{
    CellSpec, ClassicalLinkSpec, DeviceClass, MobilityModel, NodeId, NodeKind, NodeSpec, QuantumLink, QuantumLinkSpec,
    Topology,
};
use crate::protocol::{Distillation, DistributionPolicy, HandoverMode, MessageSizes, ProtocolConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: Option<u32>,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub defaults: Defaults,
    #[serde(default)]
    pub device_classes: BTreeMap<String, DeviceClass>,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub cells: Vec<CellConfig>,
    #[serde(default)]
    pub classical_links: Vec<ClassicalLinkConfig>,
    #[serde(default)]
    pub quantum_links: Vec<QuantumLinkConfig>,
    #[serde(default)]
    pub repeater_graph: Vec<[String; 2]>,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub apps: Vec<AppConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub rate_bps: f64,
    pub prop_delay_s: f64,
    #[serde(default)]
    pub p_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub f_min: f64,
    pub inactivity_timer_s: f64,
    pub retry_cap: u32,
    pub registration_messages: u32,
    pub resume_messages: u32,
    pub trace_resources: bool,
    pub message_sizes: MessageSizes,
    pub access_link: Option<LinkParams>,
    pub backhaul_link: Option<LinkParams>,
    pub distillation: Option<Distillation>,
}

impl Default for Defaults {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        Self {
            f_min: p.f_min,
            inactivity_timer_s: p.inactivity_timer_s,
            retry_cap: p.retry_cap,
            registration_messages: p.registration_messages,
            resume_messages: p.resume_messages,
            trace_resources: p.trace_resources,
            message_sizes: p.sizes,
            access_link: None,
            backhaul_link: None,
            distillation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub kind: NodeKind,
    pub mobility: MobilityModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_class: Option<String>,
    /// Overrides the device class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_coh_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_slots: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub bs: String,
    pub classical_radius: f64,
    #[serde(default)]
    pub quantum_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalLinkConfig {
    pub endpoints: [String; 2],
    pub rate_bps: f64,
    pub prop_delay_s: f64,
    #[serde(default)]
    pub p_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumLinkConfig {
    pub endpoints: [String; 2],
    pub source: String,
    pub q_attempt: f64,
    pub attempt_period_s: f64,
    pub w0: f64,
    #[serde(default)]
    pub requires_los: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    #[default]
    Reactive,
    Proactive,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub mode: PolicyMode,
    pub buffer: u32,
    pub refresh_interval_s: f64,
    /// `[que, peer]` pairs kept stocked under the proactive policy.
    pub provision: Vec<[String; 2]>,
}

impl PolicyConfig {
    pub fn policy(&self) -> DistributionPolicy {
        match self.mode {
            PolicyMode::Reactive => DistributionPolicy::Reactive,
            PolicyMode::Proactive => {
                DistributionPolicy::Proactive { buffer: self.buffer, refresh_interval: self.refresh_interval_s }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppType {
    Qkd,
    Ubqc,
    Sensing,
    Teleport,
    Handover,
}

impl fmt::Display for AppType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AppType::Qkd => "qkd",
            AppType::Ubqc => "ubqc",
            AppType::Sensing => "sensing",
            AppType::Teleport => "teleport",
            AppType::Handover => "handover",
        };
        f.write_str(s)
    }
}

/// One application instance. `parties` are role-ordered: `[alice, bob]`,
/// `[client, server]`, `[hub, sensor...]`, `[sender, receiver]` or
/// `[que, target_bs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: AppType,
    pub parties: Vec<String>,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default = "one")]
    pub repeat: u32,
    #[serde(default)]
    pub interval_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qkd: Option<QkdConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ubqc: Option<UbqcConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensing: Option<SensingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handover_mode: Option<HandoverMode>,
}

fn one() -> u32 {
    1
}

/// A schema violation located by a path such as `cells[1].quantum_radius`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

struct Checker<'a> {
    out: Vec<Violation>,
    kinds: BTreeMap<&'a str, NodeKind>,
}

impl<'a> Checker<'a> {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.out.push(Violation { path: path.into(), message: message.into() });
    }

    fn node(&mut self, path: String, id: &str) -> Option<NodeKind> {
        let k = self.kinds.get(id).copied();
        if k.is_none() {
            self.push(path, format!("unknown node '{id}'"));
        }
        k
    }

    fn prob(&mut self, path: String, v: f64, closed_top: bool) {
        let ok = if closed_top { (0.0..=1.0).contains(&v) } else { (0.0..1.0).contains(&v) };
        if !ok {
            self.push(path, format!("{v} is not a valid probability"));
        }
    }

    fn positive(&mut self, path: String, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.push(path, format!("must be positive and finite, got {v}"));
        }
    }

    fn nonneg(&mut self, path: String, v: f64) {
        if !(v >= 0.0 && v.is_finite()) {
            self.push(path, format!("must be nonnegative and finite, got {v}"));
        }
    }

    fn link(&mut self, path: &str, l: &LinkParams) {
        self.positive(format!("{path}.rate_bps"), l.rate_bps);
        self.nonneg(format!("{path}.prop_delay_s"), l.prop_delay_s);
        self.prob(format!("{path}.p_err"), l.p_err, false);
    }
}

impl ScenarioConfig {
    /// Every violation of the schema invariants, in document order.
    pub fn validate(&self) -> Vec<Violation> {
        let mut c = Checker { out: Vec::new(), kinds: BTreeMap::new() };
        match self.schema_version {
            None => c.push("schema_version", "missing (required)"),
            Some(v) if v != SCHEMA_VERSION => c.push("schema_version", format!("unsupported version {v}")),
            _ => {}
        }
        c.positive("duration_s".into(), self.duration_s);

        let d = &self.defaults;
        if !(d.f_min > 0.25 && d.f_min <= 1.0) {
            c.push("defaults.f_min", format!("{} outside (0.25, 1]", d.f_min));
        }
        c.positive("defaults.inactivity_timer_s".into(), d.inactivity_timer_s);
        if let Some(l) = &d.access_link {
            c.link("defaults.access_link", l);
        }
        if let Some(l) = &d.backhaul_link {
            c.link("defaults.backhaul_link", l);
        }
        if let Some(x) = &d.distillation {
            c.prob("defaults.distillation.boost".into(), x.boost, true);
            c.nonneg("defaults.distillation.delay_s".into(), x.delay_s);
        }

        for (name, dc) in &self.device_classes {
            c.positive(format!("device_classes.{name}.t_coh_s"), dc.t_coh_s);
        }

        if self.nodes.is_empty() {
            c.push("nodes", "at least one node is required");
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let p = format!("nodes[{i}]");
            if n.id.is_empty() {
                c.push(format!("{p}.id"), "empty id");
            }
            if c.kinds.insert(n.id.as_str(), n.kind).is_some() {
                c.push(format!("{p}.id"), format!("duplicate node id '{}'", n.id));
            }
            if let Err(e) = n.mobility.validate() {
                c.push(format!("{p}.mobility"), e.to_string());
            }
            if let Some(dc) = &n.device_class {
                if !self.device_classes.contains_key(dc) {
                    c.push(format!("{p}.device_class"), format!("unknown device class '{dc}'"));
                }
            }
            if let Some(t) = n.t_coh_s {
                c.positive(format!("{p}.t_coh_s"), t);
            }
            if n.kind.is_quantum() && n.t_coh_s.is_none() && n.device_class.is_none() {
                c.push(p.clone(), format!("quantum node '{}' needs t_coh_s or a device_class", n.id));
            }
        }

        let mut with_cell = BTreeSet::new();
        for (i, cell) in self.cells.iter().enumerate() {
            let p = format!("cells[{i}]");
            if let Some(k) = c.node(format!("{p}.bs"), &cell.bs) {
                if !k.is_base_station() {
                    c.push(format!("{p}.bs"), format!("'{}' is a {k}, not a base station", cell.bs));
                } else if !k.is_quantum() && cell.quantum_radius > 0.0 {
                    c.push(
                        format!("{p}.quantum_radius"),
                        format!("classical station '{}' has no quantum cell", cell.bs),
                    );
                }
            }
            if !with_cell.insert(cell.bs.as_str()) {
                c.push(format!("{p}.bs"), format!("second cell for '{}'", cell.bs));
            }
            c.nonneg(format!("{p}.classical_radius"), cell.classical_radius);
            c.nonneg(format!("{p}.quantum_radius"), cell.quantum_radius);
            if cell.quantum_radius > cell.classical_radius {
                c.push(
                    format!("{p}.quantum_radius"),
                    format!(
                        "cell of '{}': quantum radius {} exceeds classical radius {}",
                        cell.bs, cell.quantum_radius, cell.classical_radius
                    ),
                );
            }
        }

        // Users reach their station over the default access link; there is
        // no per-user access link in the schema.
        if d.access_link.is_none() && !self.cells.is_empty() && self.nodes.iter().any(|n| n.kind.is_user()) {
            c.push("defaults.access_link", "required when cells serve user nodes");
        }
        if d.backhaul_link.is_none() && !self.repeater_graph.is_empty() {
            c.push("defaults.backhaul_link", "required when the repeater graph has edges");
        }

        for (i, l) in self.classical_links.iter().enumerate() {
            let p = format!("classical_links[{i}]");
            for (j, e) in l.endpoints.iter().enumerate() {
                c.node(format!("{p}.endpoints[{j}]"), e);
            }
            if l.endpoints[0] == l.endpoints[1] {
                c.push(format!("{p}.endpoints"), "a link needs two distinct endpoints");
            }
            c.link(&p, &LinkParams { rate_bps: l.rate_bps, prop_delay_s: l.prop_delay_s, p_err: l.p_err });
        }

        for (i, l) in self.quantum_links.iter().enumerate() {
            let p = format!("quantum_links[{i}]");
            for (j, e) in l.endpoints.iter().enumerate() {
                if let Some(k) = c.node(format!("{p}.endpoints[{j}]"), e) {
                    if !k.is_quantum() {
                        c.push(format!("{p}.endpoints[{j}]"), format!("'{e}' is a {k} without quantum hardware"));
                    }
                }
            }
            if l.endpoints[0] == l.endpoints[1] {
                c.push(format!("{p}.endpoints"), "a link needs two distinct endpoints");
            }
            if let Some(k) = c.node(format!("{p}.source"), &l.source) {
                if !(k.is_base_station() && k.is_quantum()) {
                    c.push(format!("{p}.source"), format!("'{}' cannot source entanglement", l.source));
                }
            }
            c.prob(format!("{p}.q_attempt"), l.q_attempt, true);
            c.prob(format!("{p}.w0"), l.w0, true);
            c.positive(format!("{p}.attempt_period_s"), l.attempt_period_s);
        }

        for (i, e) in self.repeater_graph.iter().enumerate() {
            for (j, id) in e.iter().enumerate() {
                if let Some(k) = c.node(format!("repeater_graph[{i}][{j}]"), id) {
                    if !(k.is_base_station() && k.is_quantum()) {
                        c.push(format!("repeater_graph[{i}][{j}]"), format!("'{id}' is not a quantum base station"));
                    }
                }
            }
        }

        if self.policy.mode == PolicyMode::Proactive {
            if self.policy.buffer == 0 {
                c.push("policy.buffer", "a proactive policy needs a positive buffer");
            }
            c.positive("policy.refresh_interval_s".into(), self.policy.refresh_interval_s);
        }
        for (i, pair) in self.policy.provision.iter().enumerate() {
            for (j, id) in pair.iter().enumerate() {
                c.node(format!("policy.provision[{i}][{j}]"), id);
            }
        }

        let mut names = BTreeSet::new();
        for (i, a) in self.apps.iter().enumerate() {
            self.check_app(&mut c, i, a);
            if !names.insert(a.name.as_str()) {
                c.push(format!("apps[{i}].name"), format!("duplicate app name '{}'", a.name));
            }
        }
        c.out
    }

    fn check_app(&self, c: &mut Checker<'_>, i: usize, a: &AppConfig) {
        let p = format!("apps[{i}]");
        c.nonneg(format!("{p}.start_s"), a.start_s);
        c.nonneg(format!("{p}.interval_s"), a.interval_s);
        if a.repeat == 0 {
            c.push(format!("{p}.repeat"), "must be at least 1");
        }
        let kinds: Vec<Option<NodeKind>> =
            a.parties.iter().enumerate().map(|(j, id)| c.node(format!("{p}.parties[{j}]"), id)).collect();
        let expect = |c: &mut Checker<'_>, n: usize| {
            if a.parties.len() != n {
                c.push(format!("{p}.parties"), format!("{} app needs {n} parties, got {}", a.kind, a.parties.len()));
                false
            } else {
                true
            }
        };
        let quantum = |c: &mut Checker<'_>, j: usize| {
            if let Some(Some(k)) = kinds.get(j) {
                if !k.is_quantum() {
                    c.push(format!("{p}.parties[{j}]"), format!("'{}' has no quantum hardware", a.parties[j]));
                }
            }
        };
        let others = [
            (a.qkd.is_some(), AppType::Qkd, "qkd"),
            (a.ubqc.is_some(), AppType::Ubqc, "ubqc"),
            (a.sensing.is_some(), AppType::Sensing, "sensing"),
            (a.handover_mode.is_some(), AppType::Handover, "handover_mode"),
        ];
        for (present, kind, field) in others {
            if present && kind != a.kind {
                c.push(format!("{p}.{field}"), format!("not allowed for a {} app", a.kind));
            }
        }
        let config_err = |c: &mut Checker<'_>, field: &str, r: Result<(), crate::apps::AppError>| {
            if let Err(e) = r {
                c.push(format!("{p}.{field}"), e.to_string());
            }
        };
        match a.kind {
            AppType::Qkd => {
                if expect(c, 2) {
                    quantum(c, 0);
                    quantum(c, 1);
                }
                config_err(c, "qkd", a.qkd.unwrap_or_default().validate());
            }
            AppType::Ubqc => {
                if expect(c, 2) {
                    quantum(c, 0);
                    quantum(c, 1);
                }
                config_err(c, "ubqc", a.ubqc.clone().unwrap_or_default().validate());
            }
            AppType::Teleport => {
                if expect(c, 2) {
                    quantum(c, 0);
                    quantum(c, 1);
                }
            }
            AppType::Handover => {
                if expect(c, 2) {
                    if let Some(Some(k)) = kinds.first() {
                        if *k != NodeKind::Que {
                            c.push(format!("{p}.parties[0]"), format!("'{}' is not a QUE", a.parties[0]));
                        }
                    }
                    if let Some(Some(k)) = kinds.get(1) {
                        if !(k.is_base_station() && k.is_quantum()) {
                            c.push(
                                format!("{p}.parties[1]"),
                                format!("'{}' is not a quantum base station", a.parties[1]),
                            );
                        }
                    }
                }
            }
            AppType::Sensing => match &a.sensing {
                None => c.push(format!("{p}.sensing"), "sensing app needs a [sensing] table"),
                Some(s) => {
                    config_err(c, "sensing", s.validate());
                    if a.parties.len() != s.n_sensors as usize + 1 {
                        c.push(
                            format!("{p}.parties"),
                            format!("expected hub plus {} sensors, got {} parties", s.n_sensors, a.parties.len()),
                        );
                    }
                    for j in 0..a.parties.len() {
                        quantum(c, j);
                    }
                }
            },
        }
    }

    fn device(&self, n: &NodeConfig) -> (f64, u32) {
        let class = n.device_class.as_ref().and_then(|d| self.device_classes.get(d));
        let t_coh = n.t_coh_s.or(class.map(|d| d.t_coh_s)).unwrap_or(f64::INFINITY);
        let slots = n.memory_slots.or(class.map(|d| d.memory_slots)).unwrap_or(0);
        (t_coh, slots)
    }

    /// Build the topology. Call only on a configuration that validated.
    pub fn topology(&self) -> Topology {
        let mut t = Topology::new();
        for n in &self.nodes {
            let (t_coh, memory_slots) = self.device(n);
            t.add_node(NodeSpec {
                id: NodeId::from(n.id.as_str()),
                kind: n.kind,
                mobility: n.mobility.clone(),
                device_class: n.device_class.clone(),
                t_coh,
                memory_slots,
            });
        }
        for cell in &self.cells {
            t.add_cell(
                NodeId::from(cell.bs.as_str()),
                CellSpec { classical_radius: cell.classical_radius, quantum_radius: cell.quantum_radius },
            );
        }
        let link =
            |l: &LinkParams| ClassicalLinkSpec::new(l.rate_bps, l.prop_delay_s, l.p_err).expect("validated link");
        t.access_link = self.defaults.access_link.as_ref().map(link);
        t.backhaul_link = self.defaults.backhaul_link.as_ref().map(link);
        for l in &self.classical_links {
            let spec = link(&LinkParams { rate_bps: l.rate_bps, prop_delay_s: l.prop_delay_s, p_err: l.p_err });
            t.add_classical_link(&NodeId::from(l.endpoints[0].as_str()), &NodeId::from(l.endpoints[1].as_str()), spec);
        }
        for l in &self.quantum_links {
            t.add_quantum_link(QuantumLink {
                endpoints: [NodeId::from(l.endpoints[0].as_str()), NodeId::from(l.endpoints[1].as_str())],
                source: NodeId::from(l.source.as_str()),
                spec: QuantumLinkSpec {
                    q_attempt: l.q_attempt,
                    attempt_period_s: l.attempt_period_s,
                    w0: l.w0,
                    requires_los: l.requires_los,
                },
            });
        }
        for [a, b] in &self.repeater_graph {
            t.add_repeater_edge(&NodeId::from(a.as_str()), &NodeId::from(b.as_str()));
        }
        t
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        let d = &self.defaults;
        ProtocolConfig {
            sizes: d.message_sizes,
            registration_messages: d.registration_messages,
            resume_messages: d.resume_messages,
            retry_cap: d.retry_cap,
            inactivity_timer_s: d.inactivity_timer_s,
            f_min: d.f_min,
            distillation: d.distillation,
            trace_resources: d.trace_resources,
        }
    }
}
