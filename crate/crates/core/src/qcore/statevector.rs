//! Dense statevector used as the exact reference for small systems.
//!
//! Qubit `0` is the most significant bit of the basis index, so the
//! amplitude vector of `|q0 q1 ... q(n-1)>` reads left to right.

use num_complex::Complex64;
use rand::Rng;

use super::{MeasurementBasis, QError};

/// Largest register the oracle will allocate.
pub const MAX_QUBITS: usize = 20;

const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    H,
    X,
    Z,
    /// Control first, target second.
    Cnot,
    /// `diag(e^{-iθ/2}, e^{iθ/2})`.
    Rz(f64),
}

impl Gate {
    pub fn arity(&self) -> usize {
        match self {
            Gate::Cnot => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl PureState {
    /// `|0...0>` on `n` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self, QError> {
        if n_qubits > MAX_QUBITS {
            return Err(QError::Domain(format!("{n_qubits} qubits exceeds the oracle cap of {MAX_QUBITS}")));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amplitudes })
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self, QError> {
        let len = amplitudes.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(QError::Domain(format!("amplitude vector length {len} is not a power of two")));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(QError::Domain(format!("{n_qubits} qubits exceeds the oracle cap of {MAX_QUBITS}")));
        }
        let state = Self { n_qubits, amplitudes };
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QError::Domain(format!("state is not normalized (|psi|^2 = {norm})")));
        }
        Ok(state)
    }

    /// Single qubit `alpha|0> + beta|1>`.
    pub fn qubit(alpha: Complex64, beta: Complex64) -> Result<Self, QError> {
        Self::from_amplitudes(vec![alpha, beta])
    }

    /// `(|00> + |11>)/sqrt(2)`.
    pub fn phi_plus() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            n_qubits: 2,
            amplitudes: vec![
                Complex64::new(h, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(h, 0.0),
            ],
        }
    }

    /// Haar-random single-qubit state.
    pub fn random_qubit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        // Normalized complex Gaussian vector is Haar distributed.
        let mut g = || {
            let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.random();
            let r = (-2.0 * u1.ln()).sqrt();
            let a = 2.0 * std::f64::consts::PI * u2;
            (r * a.cos(), r * a.sin())
        };
        let (a, b) = g();
        let (c, d) = g();
        let n = (a * a + b * b + c * c + d * d).sqrt();
        Self { n_qubits: 1, amplitudes: vec![Complex64::new(a / n, b / n), Complex64::new(c / n, d / n)] }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &PureState) -> Result<f64, QError> {
        if self.n_qubits != other.n_qubits {
            return Err(QError::Domain(format!(
                "fidelity between {} and {} qubit states",
                self.n_qubits, other.n_qubits
            )));
        }
        let overlap: Complex64 = self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum();
        Ok(overlap.norm_sqr())
    }

    /// `self ⊗ other`, with `other`'s qubits appended after ours.
    pub fn tensor(&self, other: &PureState) -> Result<PureState, QError> {
        let n = self.n_qubits + other.n_qubits;
        if n > MAX_QUBITS {
            return Err(QError::Domain(format!("{n} qubits exceeds the oracle cap of {MAX_QUBITS}")));
        }
        let mut amplitudes = Vec::with_capacity(1 << n);
        for a in &self.amplitudes {
            for b in &other.amplitudes {
                amplitudes.push(a * b);
            }
        }
        Ok(PureState { n_qubits: n, amplitudes })
    }

    fn mask(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    fn check_qubit(&self, qubit: usize) -> Result<(), QError> {
        if qubit >= self.n_qubits {
            Err(QError::QubitIndex { index: qubit, n_qubits: self.n_qubits })
        } else {
            Ok(())
        }
    }

    pub fn apply(&mut self, gate: Gate, qubits: &[usize]) -> Result<(), QError> {
        if qubits.len() != gate.arity() {
            return Err(QError::Domain(format!("{gate:?} acts on {} qubit(s), got {}", gate.arity(), qubits.len())));
        }
        for &q in qubits {
            self.check_qubit(q)?;
        }
        match gate {
            Gate::Cnot => {
                if qubits[0] == qubits[1] {
                    return Err(QError::Domain("CNOT control equals target".into()));
                }
                let c = self.mask(qubits[0]);
                let t = self.mask(qubits[1]);
                for i in 0..self.amplitudes.len() {
                    if i & c != 0 && i & t == 0 {
                        self.amplitudes.swap(i, i | t);
                    }
                }
            }
            single => {
                let m = self.mask(qubits[0]);
                let [[a, b], [c, d]] = single_qubit_matrix(single);
                for i in 0..self.amplitudes.len() {
                    if i & m == 0 {
                        let x0 = self.amplitudes[i];
                        let x1 = self.amplitudes[i | m];
                        self.amplitudes[i] = a * x0 + b * x1;
                        self.amplitudes[i | m] = c * x0 + d * x1;
                    }
                }
            }
        }
        Ok(())
    }

    /// Controlled-Z, composed from the native gate set.
    pub fn apply_cz(&mut self, a: usize, b: usize) -> Result<(), QError> {
        self.apply(Gate::H, &[b])?;
        self.apply(Gate::Cnot, &[a, b])?;
        self.apply(Gate::H, &[b])
    }

    /// Rotate `qubit` so that the given basis maps onto the computational one,
    /// with the `+` (outcome 0) eigenvector sent to `|0>`.
    fn rotate_to_z(&mut self, qubit: usize, basis: MeasurementBasis) -> Result<(), QError> {
        match basis {
            MeasurementBasis::Z => Ok(()),
            MeasurementBasis::X => self.apply(Gate::H, &[qubit]),
            MeasurementBasis::Equatorial(theta) => {
                self.apply(Gate::Rz(-theta), &[qubit])?;
                self.apply(Gate::H, &[qubit])
            }
        }
    }

    /// Born probability of outcome 0 without disturbing the state.
    pub fn prob_zero(&self, qubit: usize, basis: MeasurementBasis) -> Result<f64, QError> {
        self.check_qubit(qubit)?;
        let mut rotated = self.clone();
        rotated.rotate_to_z(qubit, basis)?;
        let m = rotated.mask(qubit);
        Ok(rotated.amplitudes.iter().enumerate().filter(|(i, _)| i & m == 0).map(|(_, a)| a.norm_sqr()).sum())
    }

    /// Projectively measure `qubit`, returning the outcome and the
    /// renormalized state on the remaining qubits.
    pub fn measure<R: Rng + ?Sized>(
        mut self,
        qubit: usize,
        basis: MeasurementBasis,
        rng: &mut R,
    ) -> Result<(bool, PureState), QError> {
        self.check_qubit(qubit)?;
        self.rotate_to_z(qubit, basis)?;
        let m = self.mask(qubit);
        let p0: f64 = self.amplitudes.iter().enumerate().filter(|(i, _)| i & m == 0).map(|(_, a)| a.norm_sqr()).sum();
        let outcome = rng.random::<f64>() >= p0;
        let p = if outcome { 1.0 - p0 } else { p0 };
        let scale = 1.0 / p.sqrt();
        // Surviving amplitudes keep their relative order, which is exactly
        // the index order of the reduced register.
        let amplitudes: Vec<Complex64> = self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| (i & m != 0) == outcome)
            .map(|(_, a)| a * scale)
            .collect();
        Ok((outcome, PureState { n_qubits: self.n_qubits - 1, amplitudes }))
    }
}

fn single_qubit_matrix(gate: Gate) -> [[Complex64; 2]; 2] {
    let z = Complex64::new(0.0, 0.0);
    let o = Complex64::new(1.0, 0.0);
    match gate {
        Gate::H => {
            let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            [[h, h], [h, -h]]
        }
        Gate::X => [[z, o], [o, z]],
        Gate::Z => [[o, z], [z, -o]],
        Gate::Rz(theta) => {
            [[Complex64::from_polar(1.0, -theta / 2.0), z], [z, Complex64::from_polar(1.0, theta / 2.0)]]
        }
        Gate::Cnot => unreachable!("two-qubit gate"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn hadamard_on_zero() {
        let mut s = PureState::zero(1).unwrap();
        s.apply(Gate::H, &[0]).unwrap();
        assert!((s.amplitudes()[0].re - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((s.amplitudes()[1].re - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn bell_preparation() {
        let mut s = PureState::zero(2).unwrap();
        s.apply(Gate::H, &[0]).unwrap();
        s.apply(Gate::Cnot, &[0, 1]).unwrap();
        assert!((s.fidelity(&PureState::phi_plus()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rz_quarter_turn_on_plus() {
        let mut s = PureState::zero(1).unwrap();
        s.apply(Gate::H, &[0]).unwrap();
        s.apply(Gate::Rz(PI / 2.0), &[0]).unwrap();
        let target = PureState::qubit(c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2)).unwrap();
        assert!((s.fidelity(&target).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_index_is_domain_error() {
        let mut s = PureState::zero(2).unwrap();
        assert!(matches!(s.apply(Gate::X, &[2]), Err(QError::QubitIndex { .. })));
        assert!(s.apply(Gate::Cnot, &[1, 1]).is_err());
        assert!(s.apply(Gate::Cnot, &[0]).is_err());
    }

    #[test]
    fn cap_is_at_least_twelve() {
        assert!(PureState::zero(12).is_ok());
        assert!(PureState::zero(MAX_QUBITS + 1).is_err());
    }

    #[test]
    fn deterministic_measurements() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (bit, rest) = PureState::zero(1).unwrap().measure(0, MeasurementBasis::Z, &mut rng).unwrap();
            assert!(!bit);
            assert_eq!(rest.n_qubits(), 0);
            let mut plus = PureState::zero(1).unwrap();
            plus.apply(Gate::H, &[0]).unwrap();
            let (bit, _) = plus.measure(0, MeasurementBasis::X, &mut rng).unwrap();
            assert!(!bit);
        }
    }

    #[test]
    fn born_rule_frequency() {
        // |alpha|^2 = 0.36; 3 sigma over 1e5 shots.
        let s = PureState::qubit(c(0.6, 0.0), c(0.0, 0.8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shots = 100_000;
        let zeros = (0..shots).filter(|_| !s.clone().measure(0, MeasurementBasis::Z, &mut rng).unwrap().0).count();
        let freq = zeros as f64 / shots as f64;
        let sigma = (0.36f64 * 0.64 / shots as f64).sqrt();
        assert!((freq - 0.36).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn measuring_one_half_of_bell_collapses_partner() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (a, rest) = PureState::phi_plus().measure(0, MeasurementBasis::X, &mut rng).unwrap();
            let (b, _) = rest.measure(0, MeasurementBasis::X, &mut rng).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn equatorial_basis_eigenstate() {
        let theta = 3.0 * PI / 4.0;
        let plus_theta = PureState::qubit(c(FRAC_1_SQRT_2, 0.0), Complex64::from_polar(FRAC_1_SQRT_2, theta)).unwrap();
        let p0 = plus_theta.prob_zero(0, MeasurementBasis::Equatorial(theta)).unwrap();
        assert!((p0 - 1.0).abs() < 1e-12);
        let p0_other = plus_theta.prob_zero(0, MeasurementBasis::Equatorial(theta + PI)).unwrap();
        assert!(p0_other.abs() < 1e-12);
    }

    #[test]
    fn from_amplitudes_rejects_bad_input() {
        assert!(PureState::from_amplitudes(vec![c(1.0, 0.0); 3]).is_err());
        assert!(PureState::from_amplitudes(vec![c(1.0, 0.0), c(1.0, 0.0)]).is_err());
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        fn gate_strategy(n: usize) -> impl Strategy<Value = (Gate, Vec<usize>)> {
            prop_oneof![
                (0..n).prop_map(|q| (Gate::H, vec![q])),
                (0..n).prop_map(|q| (Gate::X, vec![q])),
                (0..n).prop_map(|q| (Gate::Z, vec![q])),
                ((0..n), -10.0f64..10.0).prop_map(|(q, t)| (Gate::Rz(t), vec![q])),
                ((0..n), (1..n)).prop_map(move |(a, d)| (Gate::Cnot, vec![a, (a + d) % n])),
            ]
        }

        proptest! {
            #[test]
            fn unitarity_preserves_norm(gates in proptest::collection::vec(gate_strategy(4), 0..=100)) {
                let mut s = PureState::zero(4).unwrap();
                for (g, qs) in gates {
                    s.apply(g, &qs).unwrap();
                }
                prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-9);
            }
        }
    }
}
