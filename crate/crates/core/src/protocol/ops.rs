//! Pure protocol operations: swapping, teleportation and direct transfer.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netmodel::{NodeId, QuantumLinkSpec};
use crate::qcore::{fidelity_of, Gate, MeasurementBasis, PureState, QError, ResourceId, WernerPair};

use super::ProtoError;

/// Bell measurement at `repeater` on its halves of two pairs.
///
/// Both inputs are consumed. The output joins the two outer holders with
/// `w = w_ab * w_bc` (inputs must already be decayed to the swap time) and
/// the returned two bits are the Pauli correction for the far end.
pub fn entanglement_swap<R: Rng + ?Sized>(
    pair_ab: WernerPair,
    pair_bc: WernerPair,
    repeater: &NodeId,
    new_id: ResourceId,
    t: f64,
    rng: &mut R,
) -> Result<(WernerPair, [bool; 2]), QError> {
    let sa = pair_ab.side_of(repeater).ok_or_else(|| QError::NotHolder { id: pair_ab.id, node: repeater.clone() })?;
    let sb = pair_bc.side_of(repeater).ok_or_else(|| QError::NotHolder { id: pair_bc.id, node: repeater.clone() })?;
    let a = pair_ab.holders[1 - sa].clone();
    let c = pair_bc.holders[1 - sb].clone();
    if a == c {
        return Err(QError::Domain(format!("swap would join {a} with itself")));
    }
    let w = pair_ab.w * pair_bc.w;
    let out = WernerPair::new(new_id, [a, c], w, t)?;
    // Outcomes of the Bell measurement are uniform for any Werner inputs.
    let correction = [rng.random(), rng.random()];
    Ok((out, correction))
}

/// Draw a pure Bell state from the Werner mixture: `|Φ+>` with probability
/// `w + (1-w)/4`, each other Bell state with `(1-w)/4`. Qubit order is
/// `(first holder, second holder)`.
pub fn sample_werner_state<R: Rng + ?Sized>(w: f64, rng: &mut R) -> PureState {
    let mut s = PureState::phi_plus();
    if !rng.random_bool(w.clamp(0.0, 1.0)) {
        // Uniform over the four Bell states: I, X, Z, XZ on the second qubit.
        if rng.random() {
            s.apply(Gate::X, &[1]).expect("two-qubit state");
        }
        if rng.random() {
            s.apply(Gate::Z, &[1]).expect("two-qubit state");
        }
    }
    s
}

/// Receiver state and bookkeeping of one exact teleportation.
#[derive(Debug, Clone, PartialEq)]
pub struct TeleportRecord {
    pub bits: [bool; 2],
    /// Entanglement fidelity of the consumed pair at use time.
    pub quality: f64,
    /// Receiver qubit, present in exact mode.
    pub output: Option<PureState>,
}

/// Teleport a single-qubit `payload` through a Werner pair with parameter
/// `w` in the statevector oracle. The payload is moved in, so the sender has
/// nothing left afterwards; the oracle itself is reduced to the receiver's
/// qubit by the two measurements.
pub fn teleport_exact<R: Rng + ?Sized>(payload: PureState, w: f64, rng: &mut R) -> Result<TeleportRecord, QError> {
    if payload.n_qubits() != 1 {
        return Err(QError::Domain(format!("payload must be one qubit, got {}", payload.n_qubits())));
    }
    let quality = fidelity_of(w)?;
    let pair = sample_werner_state(w, rng);
    let mut state = payload.tensor(&pair)?;
    state.apply(Gate::Cnot, &[0, 1])?;
    state.apply(Gate::H, &[0])?;
    let (m_z, state) = state.measure(0, MeasurementBasis::Z, rng)?;
    let (m_x, mut state) = state.measure(0, MeasurementBasis::Z, rng)?;
    if m_x {
        state.apply(Gate::X, &[0])?;
    }
    if m_z {
        state.apply(Gate::Z, &[0])?;
    }
    Ok(TeleportRecord { bits: [m_z, m_x], quality, output: Some(state) })
}

/// Identity of a flying qubit handed to [`direct_transfer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PayloadId(pub u64);

impl fmt::Display for PayloadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

/// Tracks payloads that were destroyed in flight. An unknown qubit cannot
/// be copied, so a lost payload can never be sent again.
#[derive(Debug, Clone, Default)]
pub struct PayloadRegistry {
    next: u64,
    lost: BTreeSet<PayloadId>,
    delivered: BTreeSet<PayloadId>,
}

impl PayloadRegistry {
    pub fn fresh(&mut self) -> PayloadId {
        let id = PayloadId(self.next);
        self.next += 1;
        id
    }

    pub fn is_lost(&self, id: PayloadId) -> bool {
        self.lost.contains(&id)
    }

    pub fn lost_count(&self) -> usize {
        self.lost.len()
    }
}

/// Send `payload` as a flying qubit over one free-space link.
pub fn direct_transfer<R: Rng + ?Sized>(
    payload: PayloadId,
    link: &QuantumLinkSpec,
    registry: &mut PayloadRegistry,
    rng: &mut R,
) -> Result<(), ProtoError> {
    if registry.lost.contains(&payload) {
        return Err(ProtoError::PermanentlyLost(payload));
    }
    if registry.delivered.contains(&payload) {
        return Err(ProtoError::Rejected(format!("payload {payload} is no longer at the sender")));
    }
    if rng.random_bool(link.q_attempt) {
        registry.delivered.insert(payload);
        Ok(())
    } else {
        registry.lost.insert(payload);
        Err(ProtoError::PermanentlyLost(payload))
    }
}

/// Apply the optional purification post-step `w' = min(1, c*w)`.
pub fn distill(w: f64, boost: f64) -> f64 {
    (boost * w).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::rng_stream;
    use crate::qcore::ResourceIds;

    fn n(s: &str) -> NodeId {
        NodeId::from(s)
    }

    #[test]
    fn swap_multiplies_and_consumes() {
        let mut ids = ResourceIds::default();
        let ab = WernerPair::new(ids.fresh(), [n("A"), n("B")], 0.9, 0.0).unwrap();
        let bc = WernerPair::new(ids.fresh(), [n("C"), n("B")], 0.8, 0.0).unwrap();
        let mut rng = rng_stream(0, "swap", "bits");
        let (ac, _) = entanglement_swap(ab, bc, &n("B"), ids.fresh(), 1.0, &mut rng).unwrap();
        assert_eq!(ac.holders, [n("A"), n("C")]);
        assert!((ac.w - 0.72).abs() < 1e-12);
        let ideal = WernerPair::new(ids.fresh(), [n("A"), n("B")], 1.0, 0.0).unwrap();
        let ideal2 = WernerPair::new(ids.fresh(), [n("B"), n("C")], 1.0, 0.0).unwrap();
        assert_eq!(entanglement_swap(ideal, ideal2, &n("B"), ids.fresh(), 0.0, &mut rng).unwrap().0.w, 1.0);
    }

    #[test]
    fn swap_needs_the_repeater_in_both() {
        let mut ids = ResourceIds::default();
        let ab = WernerPair::new(ids.fresh(), [n("A"), n("B")], 0.9, 0.0).unwrap();
        let cd = WernerPair::new(ids.fresh(), [n("C"), n("D")], 0.9, 0.0).unwrap();
        let mut rng = rng_stream(0, "swap", "bits");
        assert!(matches!(
            entanglement_swap(ab, cd, &n("B"), ids.fresh(), 0.0, &mut rng),
            Err(QError::NotHolder { .. })
        ));
    }

    #[test]
    fn ideal_teleportation_is_exact() {
        let mut rng = rng_stream(4, "tele", "oracle");
        for _ in 0..100 {
            let payload = PureState::random_qubit(&mut rng);
            let reference = payload.clone();
            let rec = teleport_exact(payload, 1.0, &mut rng).unwrap();
            let out = rec.output.unwrap();
            assert_eq!(out.n_qubits(), 1);
            assert!((out.fidelity(&reference).unwrap() - 1.0).abs() < 1e-9);
            assert_eq!(rec.quality, 1.0);
        }
    }

    #[test]
    fn noisy_teleport_reports_entanglement_fidelity() {
        let mut rng = rng_stream(4, "tele", "noisy");
        let rec = teleport_exact(PureState::random_qubit(&mut rng), 0.72, &mut rng).unwrap();
        assert!((rec.quality - 0.79).abs() < 1e-12);
    }

    #[test]
    fn lost_payload_cannot_be_retried() {
        let link = QuantumLinkSpec { q_attempt: 0.0, attempt_period_s: 1e-3, w0: 1.0, requires_los: false };
        let mut reg = PayloadRegistry::default();
        let mut rng = rng_stream(1, "x", "y");
        let p = reg.fresh();
        assert_eq!(direct_transfer(p, &link, &mut reg, &mut rng), Err(ProtoError::PermanentlyLost(p)));
        let ok = QuantumLinkSpec { q_attempt: 1.0, ..link };
        assert_eq!(direct_transfer(p, &ok, &mut reg, &mut rng), Err(ProtoError::PermanentlyLost(p)));
        let q = reg.fresh();
        assert!(direct_transfer(q, &ok, &mut reg, &mut rng).is_ok());
    }

    #[test]
    fn direct_transfer_loss_rate() {
        let link = QuantumLinkSpec { q_attempt: 0.5, attempt_period_s: 1e-3, w0: 1.0, requires_los: false };
        let mut reg = PayloadRegistry::default();
        let mut rng = rng_stream(2, "x", "y");
        let trials = 100_000;
        for _ in 0..trials {
            let p = reg.fresh();
            let _ = direct_transfer(p, &link, &mut reg, &mut rng);
        }
        let sigma = (0.25 / trials as f64).sqrt();
        assert!((reg.lost_count() as f64 / trials as f64 - 0.5).abs() < 3.0 * sigma);
    }
}
