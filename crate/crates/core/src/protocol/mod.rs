//! Control and user plane of the access network.
//!
//! The QUE state machine, registration, the three-step entanglement session,
//! swapping, teleportation, direct transfer, handover and the distribution
//! policies. Everything that takes a [`Pctx`] runs as a process on the
//! engine's event loop; the pure building blocks live in [`ops`] and
//! [`store`].

mod handover;
pub mod ops;
mod policy;
mod session;
pub mod store;
mod world;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::exec::Ctx;
use crate::netmodel::{NetError, NodeId};
use crate::qcore::{QError, ResourceId};

pub use handover::{handover, HandoverRecord};
pub use ops::{
    direct_transfer, entanglement_swap, sample_werner_state, teleport_exact, PayloadId, PayloadRegistry, TeleportRecord,
};
pub use policy::{provision, DistributionPolicy};
pub use session::{
    acquire_pairs, consume_measure, consume_release, discard as discard_pair, entanglement_session, reduce_ghz,
    register, release, resume, send_message, send_parallel, teleport, Payload,
};
pub use store::{Fate, Half, ResourceStore, StoredPair};
pub use world::{Delivery, QueInfo, World};

/// Process handle for protocol code.
pub type Pctx = Ctx<World>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtoError {
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("{node} has no classical coverage at t={t}")]
    NoClassicalCoverage { node: NodeId, t: f64 },
    #[error("message {label} from {from} to {to} lost after {attempts} attempts")]
    RetryCapExceeded { from: NodeId, to: NodeId, label: String, attempts: u32 },
    #[error("{node} cannot go from {from} to {to}")]
    InvalidTransition { node: NodeId, from: QueState, to: QueState },
    #[error("{node} may not consume resource {id} while {state}")]
    ConsumeForbidden { node: NodeId, id: ResourceId, state: QueState },
    #[error("no quantum route between {0} and {1}")]
    NoRoute(NodeId, NodeId),
    #[error("payload {0} was permanently lost and cannot be resent")]
    PermanentlyLost(PayloadId),
    #[error("resource {id} decohered below F={f_min} (F={fidelity:.4})")]
    DecoheredResource { id: ResourceId, fidelity: f64, f_min: f64 },
    #[error("no memory slot free at {0}")]
    MemoryFull(NodeId),
    #[error(transparent)]
    Resource(#[from] QError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Connection state of a quantum user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QueState {
    Idle,
    Connected,
    Inactive,
    Entangled,
}

impl QueState {
    /// The edge set of the state machine. Entangled keeps every Connected
    /// privilege and adds stored resources.
    pub fn can_go(self, to: QueState) -> bool {
        use QueState::*;
        matches!(
            (self, to),
            (Idle, Connected)
                | (Connected, Inactive)
                | (Inactive, Connected)
                | (Connected, Idle)
                | (Connected, Entangled)
                | (Entangled, Connected)
        )
    }

    pub fn is_attached(self) -> bool {
        matches!(self, QueState::Connected | QueState::Entangled)
    }
}

impl fmt::Display for QueState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            QueState::Idle => "Idle",
            QueState::Connected => "Connected",
            QueState::Inactive => "Inactive",
            QueState::Entangled => "Entangled",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceType {
    GenerateAndStore,
    GenerateAndMeasure,
}

/// How the end points of a measure-slice session choose their bases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurePlan {
    /// Each end picks Z or X uniformly from its own RNG stream.
    RandomPauli,
    Fixed(crate::qcore::MeasurementBasis, crate::qcore::MeasurementBasis),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntanglementRequest {
    pub requester: NodeId,
    pub peer: NodeId,
    pub slice: SliceType,
    pub count: u32,
    pub max_latency: f64,
    pub min_fidelity: f64,
    pub priority: u8,
    pub app_type: String,
    /// Bases used by the end points of a measure slice.
    pub plan: MeasurePlan,
}

impl EntanglementRequest {
    pub fn new(requester: &NodeId, peer: &NodeId, slice: SliceType, count: u32, max_latency: f64) -> Self {
        Self {
            requester: requester.clone(),
            peer: peer.clone(),
            slice,
            count,
            max_latency,
            min_fidelity: 0.25,
            priority: 0,
            app_type: "generic".into(),
            plan: MeasurePlan::RandomPauli,
        }
    }

    pub fn validate(&self) -> Result<(), ProtoError> {
        if self.count == 0 {
            return Err(ProtoError::Rejected("count must be at least 1".into()));
        }
        if !(self.max_latency > 0.0) {
            return Err(ProtoError::Rejected(format!("max_latency must be positive, got {}", self.max_latency)));
        }
        if !(0.25..=1.0).contains(&self.min_fidelity) {
            return Err(ProtoError::Rejected(format!("min_fidelity {} outside [0.25, 1]", self.min_fidelity)));
        }
        if self.requester == self.peer {
            return Err(ProtoError::Rejected("requester and peer coincide".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionOutcome {
    Fulfilled,
    PartiallyFulfilled,
    Expired,
    Rejected,
}

impl fmt::Display for SessionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One end's view of a measured pair in a measure slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredPair {
    pub id: ResourceId,
    pub basis: [crate::qcore::MeasurementBasis; 2],
    pub bits: [bool; 2],
    /// Fidelity each end saw when it measured.
    pub fidelity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub delivered: Vec<ResourceId>,
    /// Outcomes for measure slices, aligned with `delivered`.
    pub measured: Vec<MeasuredPair>,
    pub elapsed: f64,
    pub outcome: SessionOutcome,
    pub reason: Option<String>,
    /// Pairs created and then dropped (threshold, lost correction, full memory).
    pub discarded: u32,
}

impl SessionResult {
    fn rejected(reason: impl Into<String>, elapsed: f64) -> Self {
        Self {
            delivered: Vec::new(),
            measured: Vec::new(),
            elapsed,
            outcome: SessionOutcome::Rejected,
            reason: Some(reason.into()),
            discarded: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandoverMode {
    Soft,
    Hard,
}

/// Optional purification step applied after a store-slice session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distillation {
    pub boost: f64,
    pub delay_s: f64,
}

/// On-wire message sizes in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MessageSizes {
    pub request: u64,
    pub ack: u64,
    pub correction: u64,
    pub registration: u64,
}

impl Default for MessageSizes {
    fn default() -> Self {
        Self { request: 512, ack: 128, correction: 64, registration: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub sizes: MessageSizes,
    pub registration_messages: u32,
    pub resume_messages: u32,
    /// Retransmissions allowed after the first attempt of a message.
    pub retry_cap: u32,
    pub inactivity_timer_s: f64,
    pub f_min: f64,
    pub distillation: Option<Distillation>,
    /// Emit one trace record per resource event. Large Monte-Carlo runs turn
    /// this off and keep only the summary records.
    pub trace_resources: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            sizes: MessageSizes::default(),
            registration_messages: 4,
            resume_messages: 2,
            retry_cap: 10,
            inactivity_timer_s: 5.0,
            f_min: 0.8,
            distillation: None,
            trace_resources: true,
        }
    }
}
