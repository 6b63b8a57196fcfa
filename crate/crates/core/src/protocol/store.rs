use std::collections::BTreeMap;

use rand::Rng;

use crate::netmodel::NodeId;
use crate::qcore::{MeasurementBasis, QError, ResourceId, WernerPair};

use super::ops::entanglement_swap;

/// What has happened to one qubit of a stored pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Half {
    Live,
    Measured {
        basis: MeasurementBasis,
        bit: bool,
        at: f64,
        fidelity: f64,
    },
    /// Moved into a local operation (teleportation, computation).
    Released {
        at: f64,
        fidelity: f64,
    },
}

impl Half {
    pub fn is_live(&self) -> bool {
        matches!(self, Half::Live)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredPair {
    /// Werner parameter as of `pair.last_touched`.
    pub pair: WernerPair,
    /// Memory coherence time at each holder.
    pub t_coh: [f64; 2],
    pub halves: [Half; 2],
    /// False until every pending classical correction has arrived.
    pub usable: bool,
}

impl StoredPair {
    /// Decay rate of `w`. A pair held in two memories of coherence time
    /// `T` decays as `exp(-t/T)`; each live half contributes half of that.
    fn rate(&self) -> f64 {
        self.halves
            .iter()
            .zip(self.t_coh)
            .filter(|(h, _)| h.is_live())
            .map(|(_, t)| if t.is_finite() { 0.5 / t } else { 0.0 })
            .sum()
    }

    pub fn w_at(&self, t: f64) -> f64 {
        let dt = (t - self.pair.last_touched).max(0.0);
        self.pair.w * (-dt * self.rate()).exp()
    }

    pub fn fidelity_at(&self, t: f64) -> f64 {
        (1.0 + 3.0 * self.w_at(t)) / 4.0
    }

    fn advance(&mut self, t: f64) {
        if t > self.pair.last_touched {
            self.pair.w = self.w_at(t);
            self.pair.last_touched = t;
        }
    }

    pub fn live_at(&self, node: &NodeId) -> bool {
        self.pair.side_of(node).is_some_and(|s| self.halves[s].is_live())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fate {
    Consumed { at: f64 },
    Discarded { at: f64, reason: String },
    Expired { at: f64 },
}

impl Fate {
    pub fn label(&self) -> &'static str {
        match self {
            Fate::Consumed { .. } => "consumed",
            Fate::Discarded { .. } => "discarded",
            Fate::Expired { .. } => "expired",
        }
    }
}

/// Correlation `<A ⊗ B>` of `|Φ+>` for the two measurement bases.
fn phi_plus_correlation(a: MeasurementBasis, b: MeasurementBasis) -> f64 {
    use MeasurementBasis::*;
    let angle = |m: MeasurementBasis| match m {
        X => Some(0.0),
        Equatorial(t) => Some(t),
        Z => None,
    };
    match (angle(a), angle(b)) {
        (None, None) => 1.0,
        (Some(x), Some(y)) => (x + y).cos(),
        _ => 0.0,
    }
}

/// Every pair ever created in a run, live or retired.
#[derive(Debug, Clone, Default)]
pub struct ResourceStore {
    live: BTreeMap<ResourceId, StoredPair>,
    retired: BTreeMap<ResourceId, Fate>,
}

impl ResourceStore {
    pub fn insert(&mut self, pair: WernerPair, t_coh: [f64; 2], usable: bool) -> Result<ResourceId, QError> {
        let id = pair.id;
        if self.live.contains_key(&id) || self.retired.contains_key(&id) {
            return Err(QError::Domain(format!("resource {id} already exists")));
        }
        self.live.insert(id, StoredPair { pair, t_coh, halves: [Half::Live, Half::Live], usable });
        Ok(id)
    }

    pub fn get(&self, id: ResourceId) -> Result<&StoredPair, QError> {
        match self.live.get(&id) {
            Some(p) => Ok(p),
            None if self.retired.contains_key(&id) => Err(QError::Consumed(id)),
            None => Err(QError::Domain(format!("unknown resource {id}"))),
        }
    }

    fn get_mut(&mut self, id: ResourceId) -> Result<&mut StoredPair, QError> {
        if self.retired.contains_key(&id) {
            return Err(QError::Consumed(id));
        }
        self.live.get_mut(&id).ok_or_else(|| QError::Domain(format!("unknown resource {id}")))
    }

    fn live_side(&self, id: ResourceId, node: &NodeId) -> Result<usize, QError> {
        let p = self.get(id)?;
        match p.pair.side_of(node) {
            Some(s) if p.halves[s].is_live() => Ok(s),
            _ => Err(QError::NotHolder { id, node: node.clone() }),
        }
    }

    pub fn set_usable(&mut self, id: ResourceId) -> Result<(), QError> {
        self.get_mut(id)?.usable = true;
        Ok(())
    }

    fn retire(&mut self, id: ResourceId, fate: Fate) -> Option<StoredPair> {
        let p = self.live.remove(&id);
        self.retired.insert(id, fate);
        p
    }

    fn retire_if_spent(&mut self, id: ResourceId, t: f64) {
        if self.live.get(&id).is_some_and(|p| p.halves.iter().all(|h| !h.is_live())) {
            self.retire(id, Fate::Consumed { at: t });
        }
    }

    /// Measure `node`'s half at `t`. Returns the bit and the fidelity of the
    /// pair at that moment.
    ///
    /// The first half measured gives a fair bit; the second is correlated
    /// with it through the Werner parameter at the second measurement.
    pub fn measure<R: Rng + ?Sized>(
        &mut self,
        id: ResourceId,
        node: &NodeId,
        basis: MeasurementBasis,
        t: f64,
        rng: &mut R,
    ) -> Result<(bool, f64), QError> {
        let side = self.live_side(id, node)?;
        let p = self.get_mut(id)?;
        p.advance(t);
        let w = p.pair.w;
        let fidelity = p.pair.fidelity();
        let bit = match p.halves[1 - side] {
            Half::Measured { basis: other_basis, bit: other_bit, .. } => {
                let c = w * phi_plus_correlation(other_basis, basis);
                let agree = rng.random_bool(((1.0 + c) / 2.0).clamp(0.0, 1.0));
                other_bit ^ !agree
            }
            _ => rng.random(),
        };
        p.halves[side] = Half::Measured { basis, bit, at: t, fidelity };
        self.retire_if_spent(id, t);
        Ok((bit, fidelity))
    }

    /// Hand `node`'s half to a local operation; returns `w` at `t`.
    pub fn release(&mut self, id: ResourceId, node: &NodeId, t: f64) -> Result<f64, QError> {
        let side = self.live_side(id, node)?;
        let p = self.get_mut(id)?;
        p.advance(t);
        let w = p.pair.w;
        p.halves[side] = Half::Released { at: t, fidelity: p.pair.fidelity() };
        self.retire_if_spent(id, t);
        Ok(w)
    }

    /// Join two pairs at `repeater`. The inputs are retired; the output is
    /// not usable until its correction is delivered.
    pub fn swap<R: Rng + ?Sized>(
        &mut self,
        left: ResourceId,
        right: ResourceId,
        repeater: &NodeId,
        new_id: ResourceId,
        t: f64,
        rng: &mut R,
    ) -> Result<(ResourceId, [bool; 2]), QError> {
        let sl = self.live_side(left, repeater)?;
        let sr = self.live_side(right, repeater)?;
        if left == right {
            return Err(QError::Domain("cannot swap a pair with itself".into()));
        }
        let mut a = self.get(left)?.clone();
        let mut b = self.get(right)?.clone();
        a.advance(t);
        b.advance(t);
        let (pair, correction) = entanglement_swap(a.pair.clone(), b.pair.clone(), repeater, new_id, t, rng)?;
        let stored = StoredPair {
            pair,
            t_coh: [a.t_coh[1 - sl], b.t_coh[1 - sr]],
            halves: [a.halves[1 - sl], b.halves[1 - sr]],
            usable: false,
        };
        self.retire(left, Fate::Consumed { at: t });
        self.retire(right, Fate::Consumed { at: t });
        self.live.insert(new_id, stored);
        Ok((new_id, correction))
    }

    /// Purification post-step: `w <- min(1, boost * w)` at `t`.
    pub fn distill(&mut self, id: ResourceId, t: f64, boost: f64) -> Result<f64, QError> {
        let p = self.get_mut(id)?;
        p.advance(t);
        p.pair.w = (boost * p.pair.w).clamp(0.0, 1.0);
        Ok(p.pair.w)
    }

    pub fn discard(&mut self, id: ResourceId, t: f64, reason: &str) -> Result<StoredPair, QError> {
        self.get(id)?;
        Ok(self.retire(id, Fate::Discarded { at: t, reason: reason.to_owned() }).expect("checked live"))
    }

    /// Retire everything still live at the end of a run.
    pub fn expire_all(&mut self, t: f64) -> Vec<ResourceId> {
        let ids: Vec<_> = self.live.keys().copied().collect();
        for id in &ids {
            self.retire(*id, Fate::Expired { at: t });
        }
        ids
    }

    pub fn fate(&self, id: ResourceId) -> Option<&Fate> {
        self.retired.get(&id)
    }

    pub fn live(&self) -> impl Iterator<Item = &StoredPair> {
        self.live.values()
    }

    pub fn retired(&self) -> impl Iterator<Item = (&ResourceId, &Fate)> {
        self.retired.iter()
    }

    /// Occupied memory slots at `node`.
    pub fn occupancy(&self, node: &NodeId) -> usize {
        self.live.values().filter(|p| p.live_at(node)).count()
    }

    /// Usable pairs in which both `node` and `peer` still hold live halves.
    pub fn usable_between(&self, node: &NodeId, peer: &NodeId) -> Vec<ResourceId> {
        self.live.values().filter(|p| p.usable && p.live_at(node) && p.live_at(peer)).map(|p| p.pair.id).collect()
    }

    /// Live halves held by `node` in usable pairs.
    pub fn held_by(&self, node: &NodeId) -> Vec<ResourceId> {
        self.live.values().filter(|p| p.usable && p.live_at(node)).map(|p| p.pair.id).collect()
    }

    pub fn total(&self) -> usize {
        self.live.len() + self.retired.len()
    }
}
