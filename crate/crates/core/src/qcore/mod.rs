//! Quantum resources: Werner pairs, GHZ states, their decoherence and
//! measurement statistics, plus the statevector oracle in [`statevector`].
//!
//! Everything here is pure given an explicit RNG. Consumption is modeled by
//! move semantics: operations that consume a resource take it by value, and
//! the protocol-level store is what rejects stale ids.

pub mod statevector;

use std::f64::consts::TAU;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use statevector::{Gate, PureState, MAX_QUBITS};

use crate::netmodel::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("qubit index {index} out of range for {n_qubits} qubit(s)")]
    QubitIndex { index: usize, n_qubits: usize },
    #[error("resource {0} has already been consumed")]
    Consumed(ResourceId),
    #[error("node {node} does not hold a qubit of resource {id}")]
    NotHolder { id: ResourceId, node: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceId(pub u64);

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Hands out fresh resource ids; ids are never reused within a run.
#[derive(Debug, Default, Clone)]
pub struct ResourceIds {
    next: u64,
}

impl ResourceIds {
    pub fn fresh(&mut self) -> ResourceId {
        let id = ResourceId(self.next);
        self.next += 1;
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeasurementBasis {
    Z,
    X,
    /// `{|±_θ>}` with `|±_θ> = (|0> ± e^{iθ}|1>)/√2`.
    Equatorial(f64),
}

impl MeasurementBasis {
    pub fn equatorial(theta: f64) -> Self {
        MeasurementBasis::Equatorial(theta.rem_euclid(TAU))
    }

    pub fn is_pauli(&self) -> bool {
        matches!(self, MeasurementBasis::Z | MeasurementBasis::X)
    }
}

impl fmt::Display for MeasurementBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasurementBasis::Z => write!(f, "Z"),
            MeasurementBasis::X => write!(f, "X"),
            MeasurementBasis::Equatorial(t) => write!(f, "E({:.6})", t.rem_euclid(TAU)),
        }
    }
}

fn check_unit(name: &str, v: f64) -> Result<(), QError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(QError::Domain(format!("{name} = {v} is outside [0, 1]")))
    }
}

/// Fidelity of a Werner pair with `|Φ+>`.
pub fn fidelity_of(w: f64) -> Result<f64, QError> {
    check_unit("Werner parameter", w)?;
    Ok((1.0 + 3.0 * w) / 4.0)
}

/// Werner parameter whose fidelity equals `f`; may be negative for `f < 1/4`.
pub fn werner_for_fidelity(f: f64) -> f64 {
    (4.0 * f - 1.0) / 3.0
}

/// Exponential memory decay of the Werner parameter.
pub fn decay(w0: f64, dt: f64, t_coh: f64) -> Result<f64, QError> {
    if !(t_coh > 0.0) {
        return Err(QError::Config(format!("coherence time must be positive, got {t_coh}")));
    }
    if !(dt >= 0.0) {
        return Err(QError::Domain(format!("elapsed time must be nonnegative, got {dt}")));
    }
    check_unit("Werner parameter", w0)?;
    Ok(w0 * (-dt / t_coh).exp())
}

/// Time until fidelity drops below `f_min`, starting from `w0`. Zero if the
/// pair already starts below threshold; infinite for an ideal memory.
pub fn survival_time(w0: f64, t_coh: f64, f_min: f64) -> Result<f64, QError> {
    check_unit("Werner parameter", w0)?;
    if !(t_coh > 0.0) {
        return Err(QError::Config(format!("coherence time must be positive, got {t_coh}")));
    }
    let w_min = werner_for_fidelity(f_min);
    if w0 < w_min || w0 == 0.0 {
        return Ok(0.0);
    }
    if w_min <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(t_coh * (w0 / w_min).ln())
}

/// Noisy Bell pair `w|Φ+><Φ+| + (1-w) I/4` shared by two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct WernerPair {
    pub id: ResourceId,
    pub holders: [NodeId; 2],
    /// Werner parameter as of `last_touched`.
    pub w: f64,
    pub created_at: f64,
    pub last_touched: f64,
}

impl WernerPair {
    pub fn new(id: ResourceId, holders: [NodeId; 2], w: f64, created_at: f64) -> Result<Self, QError> {
        check_unit("Werner parameter", w)?;
        Ok(Self { id, holders, w, created_at, last_touched: created_at })
    }

    pub fn fidelity(&self) -> f64 {
        (1.0 + 3.0 * self.w) / 4.0
    }

    pub fn holds(&self, node: &NodeId) -> bool {
        self.holders.contains(node)
    }

    pub fn side_of(&self, node: &NodeId) -> Option<usize> {
        self.holders.iter().position(|h| h == node)
    }

    /// Apply the decay accumulated since `last_touched` at rate `1/t_coh`.
    pub fn touch(&mut self, t: f64, t_coh: f64) -> Result<(), QError> {
        let dt = t - self.last_touched;
        self.w = decay(self.w, dt, t_coh)?;
        self.last_touched = t;
        Ok(())
    }
}

/// Measure both halves of a pair in Pauli bases, consuming it.
///
/// Matched bases disagree with probability `(1-w)/2`; mismatched bases give
/// independent fair bits.
pub fn measure_pair<R: Rng + ?Sized>(
    pair: WernerPair,
    basis_a: MeasurementBasis,
    basis_b: MeasurementBasis,
    rng: &mut R,
) -> Result<(bool, bool), QError> {
    if !basis_a.is_pauli() || !basis_b.is_pauli() {
        return Err(QError::Domain(format!("pair measurement supports Z and X only, got {basis_a} and {basis_b}")));
    }
    let a: bool = rng.random();
    let b = if basis_a == basis_b { a ^ rng.random_bool((1.0 - pair.w) / 2.0) } else { rng.random() };
    Ok((a, b))
}

/// `N`-party GHZ state, ideal with probability `w` and fully dephased otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct GhzResource {
    pub id: ResourceId,
    pub holders: Vec<NodeId>,
    pub w: f64,
    pub created_at: f64,
}

impl GhzResource {
    pub fn new(id: ResourceId, holders: Vec<NodeId>, w: f64, created_at: f64) -> Result<Self, QError> {
        if holders.len() < 3 {
            return Err(QError::Domain(format!("GHZ resource needs at least 3 holders, got {}", holders.len())));
        }
        let mut sorted = holders.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != holders.len() {
            return Err(QError::Domain("GHZ holders must be distinct".into()));
        }
        check_unit("GHZ mixture parameter", w)?;
        Ok(Self { id, holders, w, created_at })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reduced {
    Ghz(GhzResource),
    Pair(WernerPair),
}

/// X-measure one party of a GHZ state and hand the remaining parties a
/// smaller GHZ-class resource. The returned bit is the Z correction one of
/// the remaining holders must apply once it arrives classically.
pub fn ghz_x_reduce<R: Rng + ?Sized>(
    ghz: GhzResource,
    measured_party: &NodeId,
    ids: &mut ResourceIds,
    now: f64,
    rng: &mut R,
) -> Result<(bool, Reduced), QError> {
    let pos = ghz
        .holders
        .iter()
        .position(|h| h == measured_party)
        .ok_or_else(|| QError::NotHolder { id: ghz.id, node: measured_party.clone() })?;
    // X outcomes on either branch of the mixture are uniform.
    let correction: bool = rng.random();
    let mut remaining = ghz.holders;
    remaining.remove(pos);
    let id = ids.fresh();
    let reduced = if remaining.len() == 2 {
        let holders = [remaining[0].clone(), remaining[1].clone()];
        Reduced::Pair(WernerPair::new(id, holders, ghz.w, now)?)
    } else {
        Reduced::Ghz(GhzResource::new(id, remaining, ghz.w, now)?)
    };
    Ok((correction, reduced))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn n(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn pair(w: f64) -> WernerPair {
        WernerPair::new(ResourceId(0), [n("a"), n("b")], w, 0.0).unwrap()
    }

    #[test]
    fn fidelity_endpoints() {
        assert_eq!(fidelity_of(1.0).unwrap(), 1.0);
        assert_eq!(fidelity_of(0.0).unwrap(), 0.25);
        assert!(fidelity_of(1.2).is_err());
        assert!(fidelity_of(-0.1).is_err());
    }

    #[test]
    fn decay_examples() {
        assert_eq!(decay(0.9, 0.0, 2.0).unwrap(), 0.9);
        assert!((decay(1.0, 1.5, 1.5).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(decay(1.0, 1.0, 0.0), Err(QError::Config(_))));
        assert!(decay(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn survival_time_matches_bisection() {
        // Bisection on fidelity_of(decay(..)) is the independent route.
        let (mut lo, mut hi) = (0.0f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if fidelity_of(decay(1.0, mid, 1.0).unwrap()).unwrap() >= 0.8 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = survival_time(1.0, 1.0, 0.8).unwrap();
        assert!((t - lo).abs() < 1e-9);
        assert!((t - 0.310155).abs() < 1e-6);
        assert_eq!(survival_time(0.5, 1.0, 0.8).unwrap(), 0.0);
        assert!(survival_time(1.0, 1.0, 0.25).unwrap().is_infinite());
    }

    #[test]
    fn mixed_bases_need_pauli() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = measure_pair(pair(1.0), MeasurementBasis::Z, MeasurementBasis::equatorial(1.0), &mut rng);
        assert!(r.is_err());
    }

    #[test]
    fn ideal_pair_is_perfectly_correlated() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for basis in [MeasurementBasis::Z, MeasurementBasis::X] {
            for _ in 0..1000 {
                let (a, b) = measure_pair(pair(1.0), basis, basis, &mut rng).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn disagreement_rates_over_w_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples = 100_000;
        for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
            for basis in [MeasurementBasis::Z, MeasurementBasis::X] {
                let bad = (0..samples)
                    .filter(|_| {
                        let (a, b) = measure_pair(pair(w), basis, basis, &mut rng).unwrap();
                        a != b
                    })
                    .count();
                let p = (1.0 - w) / 2.0;
                let freq = bad as f64 / samples as f64;
                let sigma = (p * (1.0 - p) / samples as f64).sqrt();
                assert!((freq - p).abs() <= 3.0 * sigma + 1e-12, "w={w} freq={freq}");
            }
        }
    }

    #[test]
    fn touch_decays_monotonically() {
        let mut p = pair(0.95);
        let mut last = p.fidelity();
        for k in 1..50 {
            p.touch(k as f64 * 0.01, 0.3).unwrap();
            assert!(p.fidelity() <= last);
            last = p.fidelity();
        }
        assert!(last >= 0.25);
    }

    #[test]
    fn ghz_reduction_shapes() {
        let mut ids = ResourceIds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g4 = GhzResource::new(ids.fresh(), vec![n("a"), n("b"), n("c"), n("d")], 0.8, 0.0).unwrap();
        let (_, red) = ghz_x_reduce(g4, &n("b"), &mut ids, 1.0, &mut rng).unwrap();
        match red {
            Reduced::Ghz(g) => {
                assert_eq!(g.holders, vec![n("a"), n("c"), n("d")]);
                assert_eq!(g.w, 0.8);
            }
            other => panic!("expected GHZ, got {other:?}"),
        }
        let g3 = GhzResource::new(ids.fresh(), vec![n("a"), n("b"), n("c")], 0.9, 0.0).unwrap();
        let (_, red) = ghz_x_reduce(g3.clone(), &n("a"), &mut ids, 1.0, &mut rng).unwrap();
        assert!(matches!(red, Reduced::Pair(ref p) if p.holders == [n("b"), n("c")] && p.w == 0.9));
        assert!(matches!(ghz_x_reduce(g3, &n("z"), &mut ids, 1.0, &mut rng), Err(QError::NotHolder { .. })));
        assert!(GhzResource::new(ids.fresh(), vec![n("a"), n("b")], 1.0, 0.0).is_err());
    }

    #[test]
    fn equatorial_angle_is_wrapped() {
        match MeasurementBasis::equatorial(-std::f64::consts::FRAC_PI_2) {
            MeasurementBasis::Equatorial(t) => assert!((t - 1.5 * std::f64::consts::PI).abs() < 1e-12),
            _ => unreachable!(),
        }
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fidelity_nonincreasing_in_time(w0 in 0.0f64..=1.0, t_coh in 1e-3f64..100.0,
                                              t1 in 0.0f64..50.0, dt in 0.0f64..50.0) {
                let f1 = fidelity_of(decay(w0, t1, t_coh).unwrap()).unwrap();
                let f2 = fidelity_of(decay(w0, t1 + dt, t_coh).unwrap()).unwrap();
                prop_assert!(f2 <= f1 + 1e-15);
                prop_assert!((0.25..=1.0).contains(&f2));
            }
        }
    }
}
