//! Dense statevector simulator for Pauli-rotation circuits.
//!
//! Every gate is `exp(-i theta/2 P)` for a Pauli string `P` with `P^2 = I`,
//! which makes the pi/2 parameter-shift rule exact. Bitstrings are
//! little-endian: qubit 0 is the least significant bit of the basis index and
//! the rightmost character of the printed string.

use num_traits::Zero;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pauli::{Hamiltonian, PauliAxis, PauliError, PauliString, Spectrum};
use crate::scalar::{Complex, Real};

/// Norm drift tolerated before a state counts as unnormalized.
pub const NORM_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QsimError {
    #[error("qubit {qubit} out of range for {n} qubits")]
    QubitOutOfRange { qubit: usize, n: usize },
    #[error("gate qubits must be distinct")]
    RepeatedQubit,
    #[error("rotation {axis:?} expects {expected} qubit(s), got {got}")]
    Arity { axis: RotationAxis, expected: usize, got: usize },
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("state has {got} qubits, operation expects {expected}")]
    QubitCountMismatch { expected: usize, got: usize },
    #[error("amplitude vector length {0} is not a power of two")]
    BadLength(usize),
    #[error("state is not normalized (norm {0})")]
    Unnormalized(f64),
    #[error("probability {name} = {value} outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
    #[error("need at least one shot / step")]
    ZeroCount,
    #[error(transparent)]
    Pauli(#[from] PauliError),
}

/// `2^n` complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector<T> {
    n: usize,
    amps: Vec<Complex<T>>,
}

impl<T: Real> Statevector<T> {
    /// `|0...0>`.
    pub fn zero_state(n: usize) -> Self {
        let mut amps = vec![Complex::zero(); 1 << n];
        amps[0] = Complex::new(T::one(), T::zero());
        Self { n, amps }
    }

    pub fn basis_state(n: usize, index: usize) -> Self {
        let mut amps = vec![Complex::zero(); 1 << n];
        amps[index] = Complex::new(T::one(), T::zero());
        Self { n, amps }
    }

    /// Wraps amplitudes after checking length and normalization.
    pub fn from_amplitudes(amps: Vec<Complex<T>>) -> Result<Self, QsimError> {
        let len = amps.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(QsimError::BadLength(len));
        }
        let s = Self {
            n: len.trailing_zeros() as usize,
            amps,
        };
        let norm = s.norm().to_f64_lossy();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QsimError::Unnormalized(norm));
        }
        Ok(s)
    }

    /// Normalizes an arbitrary nonzero amplitude vector.
    pub fn normalized(mut amps: Vec<Complex<T>>) -> Result<Self, QsimError> {
        let len = amps.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(QsimError::BadLength(len));
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<T>().sqrt();
        if norm == T::zero() {
            return Err(QsimError::Unnormalized(0.0));
        }
        for a in &mut amps {
            *a = *a / norm;
        }
        Ok(Self {
            n: len.trailing_zeros() as usize,
            amps,
        })
    }

    /// Haar-random state: i.i.d. complex normal amplitudes, normalized.
    pub fn haar_random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let amps: Vec<Complex<T>> = (0..1usize << n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex::new(T::lit(re), T::lit(im))
            })
            .collect();
        Self::normalized(amps).expect("nonzero Gaussian vector")
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex<T>> {
        self.amps
    }

    pub fn norm(&self) -> T {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<T>().sqrt()
    }

    pub fn probabilities(&self) -> Vec<T> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn inner(&self, other: &Self) -> Complex<T> {
        self.amps
            .iter()
            .zip(&other.amps)
            .fold(Complex::zero(), |acc, (a, b)| acc + a.conj() * b)
    }

    /// `|<self|other>|^2`.
    pub fn overlap(&self, other: &Self) -> T {
        self.inner(other).norm_sqr()
    }

    /// `psi <- exp(-i theta/2 P) psi`.
    pub fn apply_pauli_exp(&mut self, p: &PauliString, theta: T) {
        let half = theta / T::lit(2.0);
        let (c, s) = (half.cos(), half.sin());
        let minus_i_s = Complex::new(T::zero(), -s);
        let cc = Complex::new(c, T::zero());
        let f = p.flip_mask;
        if f == 0 {
            for (x, a) in self.amps.iter_mut().enumerate() {
                *a *= cc + minus_i_s * p.phase::<T>(x);
            }
            return;
        }
        let high = 1usize << (usize::BITS - 1 - f.leading_zeros());
        for x in 0..self.amps.len() {
            if x & high != 0 {
                continue;
            }
            let y = x ^ f;
            let a = self.amps[x];
            let b = self.amps[y];
            self.amps[x] = cc * a + minus_i_s * p.phase::<T>(y) * b;
            self.amps[y] = cc * b + minus_i_s * p.phase::<T>(x) * a;
        }
    }

    /// `psi <- P psi`.
    pub fn apply_pauli(&mut self, p: &PauliString) {
        let mut out = vec![Complex::zero(); self.amps.len()];
        p.apply_add(Complex::new(T::one(), T::zero()), &self.amps, &mut out);
        self.amps = out;
    }

    /// Applies `R_P(theta) = exp(-i theta/2 P)` for the Pauli string built from
    /// `axis` on `qubits`.
    pub fn apply_rotation(&mut self, axis: RotationAxis, qubits: &[usize], theta: T) -> Result<(), QsimError> {
        let p = axis.pauli_string(qubits, self.n)?;
        self.apply_pauli_exp(&p, theta);
        Ok(())
    }
}

/// Rotation generators available as gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RotationAxis {
    X,
    Y,
    Z,
    XX,
    YY,
    ZZ,
}

impl RotationAxis {
    pub fn arity(self) -> usize {
        match self {
            RotationAxis::X | RotationAxis::Y | RotationAxis::Z => 1,
            _ => 2,
        }
    }

    fn axis(self) -> PauliAxis {
        match self {
            RotationAxis::X | RotationAxis::XX => PauliAxis::X,
            RotationAxis::Y | RotationAxis::YY => PauliAxis::Y,
            RotationAxis::Z | RotationAxis::ZZ => PauliAxis::Z,
        }
    }

    pub fn pauli_string(self, qubits: &[usize], n: usize) -> Result<PauliString, QsimError> {
        if qubits.len() != self.arity() {
            return Err(QsimError::Arity {
                axis: self,
                expected: self.arity(),
                got: qubits.len(),
            });
        }
        for &q in qubits {
            if q >= n {
                return Err(QsimError::QubitOutOfRange { qubit: q, n });
            }
        }
        if qubits.len() == 2 && qubits[0] == qubits[1] {
            return Err(QsimError::RepeatedQubit);
        }
        let a = self.axis();
        Ok(PauliString::new(&qubits.iter().map(|&q| (q, a)).collect::<Vec<_>>()))
    }
}

/// One recorded gate `exp(-i angle/2 P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate<T> {
    pub pauli: PauliString,
    pub angle: T,
    /// Index into the ansatz parameter vector, if parameterized.
    pub param: Option<usize>,
}

/// Ordered gate record on `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit<T> {
    pub n: usize,
    pub gates: Vec<Gate<T>>,
}

impl<T: Real> Circuit<T> {
    pub fn new(n: usize) -> Self {
        Self { n, gates: Vec::new() }
    }

    pub fn push(&mut self, pauli: PauliString, angle: T, param: Option<usize>) {
        self.gates.push(Gate { pauli, angle, param });
    }

    pub fn extend(&mut self, other: &Circuit<T>) {
        debug_assert_eq!(self.n, other.n);
        self.gates.extend(other.gates.iter().cloned());
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn run(&self, psi: &mut Statevector<T>) -> Result<(), QsimError> {
        if psi.n() != self.n {
            return Err(QsimError::QubitCountMismatch {
                expected: self.n,
                got: psi.n(),
            });
        }
        for g in &self.gates {
            psi.apply_pauli_exp(&g.pauli, g.angle);
        }
        Ok(())
    }
}

/// Parameter layout of the ladder-wise hardware-efficient ansatz.
///
/// Order: the initial layer holds `(x1, z, x2)` per qubit; each of the `depth`
/// blocks then holds `n` ZZ angles, `n` XX angles, `n` YY angles and `(x, z)`
/// per qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzLayout {
    pub n: usize,
    pub depth: usize,
}

impl AnsatzLayout {
    pub fn new(n: usize, depth: usize) -> Self {
        Self { n, depth }
    }

    /// `3n + 5nD`.
    pub fn param_count(&self) -> usize {
        3 * self.n + 5 * self.n * self.depth
    }

    /// Ring ladder pairs `(i, i+1 mod n)`, applied sequentially including the wrap.
    pub fn ladder(&self) -> Vec<(usize, usize)> {
        (0..self.n).map(|i| (i, (i + 1) % self.n)).collect()
    }

    pub fn circuit<T: Real>(&self, theta: &[T]) -> Result<Circuit<T>, QsimError> {
        let p = self.param_count();
        if theta.len() != p {
            return Err(QsimError::ParamCount {
                expected: p,
                got: theta.len(),
            });
        }
        let n = self.n;
        let mut c = Circuit::new(n);
        let mut k = 0usize;
        let mut push = |c: &mut Circuit<T>, pauli: PauliString| {
            c.push(pauli, theta[k], Some(k));
            k += 1;
        };
        for q in 0..n {
            push(&mut c, PauliString::single(q, PauliAxis::X));
            push(&mut c, PauliString::single(q, PauliAxis::Z));
            push(&mut c, PauliString::single(q, PauliAxis::X));
        }
        let ladder = self.ladder();
        for _ in 0..self.depth {
            for axis in [PauliAxis::Z, PauliAxis::X, PauliAxis::Y] {
                for &(i, j) in &ladder {
                    let pauli = if i == j {
                        PauliString::single(i, axis)
                    } else {
                        PauliString::pair(i, axis, j, axis)
                    };
                    push(&mut c, pauli);
                }
            }
            for q in 0..n {
                push(&mut c, PauliString::single(q, PauliAxis::X));
                push(&mut c, PauliString::single(q, PauliAxis::Z));
            }
        }
        debug_assert_eq!(k, p);
        Ok(c)
    }
}

/// Prepares `U(theta)|0...0>` for the ladder-wise ansatz.
pub fn hea_prepare<T: Real>(n: usize, depth: usize, theta: &[T]) -> Result<Statevector<T>, QsimError> {
    let circuit = AnsatzLayout::new(n, depth).circuit(theta)?;
    let mut psi = Statevector::zero_state(n);
    circuit.run(&mut psi)?;
    Ok(psi)
}

/// `<psi|H|psi>`.
pub fn expectation<T: Real>(h: &Hamiltonian<T>, psi: &Statevector<T>) -> Result<T, QsimError> {
    if h.n() != psi.n() {
        return Err(QsimError::QubitCountMismatch {
            expected: h.n(),
            got: psi.n(),
        });
    }
    Ok(h.terms().iter().map(|(p, c)| *c * p.expectation(psi.amplitudes())).sum())
}

/// `<psi| P_ground |psi>`.
pub fn fidelity<T: Real>(psi: &Statevector<T>, spectrum: &Spectrum<T>) -> Result<T, QsimError> {
    if spectrum.eigenvectors.dim() != psi.dim() {
        return Err(QsimError::QubitCountMismatch {
            expected: spectrum.eigenvectors.dim().trailing_zeros() as usize,
            got: psi.n(),
        });
    }
    Ok(spectrum.ground_fidelity(psi.amplitudes()))
}

/// First-order product formula `[prod_terms exp(-i c P t/steps)]^steps` as a gate record.
pub fn trotter_circuit<T: Real>(h: &Hamiltonian<T>, t: T, steps: usize) -> Result<Circuit<T>, QsimError> {
    if steps == 0 {
        return Err(QsimError::ZeroCount);
    }
    let terms = h.terms();
    let dt = t / T::from_usize(steps).unwrap();
    let mut c = Circuit::new(h.n());
    for _ in 0..steps {
        for (p, coeff) in &terms {
            c.push(*p, T::lit(2.0) * *coeff * dt, None);
        }
    }
    Ok(c)
}

pub fn trotter_evolve<T: Real>(h: &Hamiltonian<T>, psi: &Statevector<T>, t: T, steps: usize) -> Result<Statevector<T>, QsimError> {
    let c = trotter_circuit(h, t, steps)?;
    let mut out = psi.clone();
    c.run(&mut out)?;
    Ok(out)
}

/// Depolarizing-plus-readout noise for trajectory sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub p1: f64,
    pub p2: f64,
    pub p_readout: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        p1: 0.0,
        p2: 0.0,
        p_readout: 0.0,
    };

    /// Transmon-like defaults.
    pub const DEFAULT: NoiseSpec = NoiseSpec {
        p1: 1e-3,
        p2: 1e-2,
        p_readout: 1e-2,
    };

    pub fn validate(&self) -> Result<(), QsimError> {
        for (name, value) in [("p1", self.p1), ("p2", self.p2), ("p_readout", self.p_readout)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(QsimError::BadProbability { name, value });
            }
        }
        Ok(())
    }

    pub fn has_gate_noise(&self) -> bool {
        self.p1 > 0.0 || self.p2 > 0.0
    }

    pub fn is_noiseless(&self) -> bool {
        !self.has_gate_noise() && self.p_readout == 0.0
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// A state described by how it is prepared, so noisy trajectories can replay it.
#[derive(Debug, Clone)]
pub struct Preparation<T> {
    pub initial: Statevector<T>,
    pub circuit: Circuit<T>,
}

impl<T: Real> Preparation<T> {
    /// A state injected directly, with no gate record to corrupt.
    pub fn from_state(psi: Statevector<T>) -> Self {
        let n = psi.n();
        Self {
            initial: psi,
            circuit: Circuit::new(n),
        }
    }

    pub fn ideal_state(&self) -> Result<Statevector<T>, QsimError> {
        let mut psi = self.initial.clone();
        self.circuit.run(&mut psi)?;
        Ok(psi)
    }
}

fn cumulative<T: Real>(psi: &Statevector<T>) -> Vec<f64> {
    let mut acc = 0.0;
    psi.amplitudes()
        .iter()
        .map(|a| {
            acc += a.norm_sqr().to_f64_lossy();
            acc
        })
        .collect()
}

fn draw<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let total = *cdf.last().expect("nonempty distribution");
    let u: f64 = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn random_error<R: Rng + ?Sized>(support: usize, rng: &mut R) -> PauliString {
    let qubits: Vec<usize> = (0..usize::BITS as usize).filter(|q| support >> q & 1 == 1).collect();
    // Uniform over the 4^w - 1 non-identity Paulis on the gate's support.
    let choices = (1usize << (2 * qubits.len())) - 1;
    let mut code = rng.random_range(0..choices) + 1;
    let mut ops = Vec::with_capacity(qubits.len());
    for &q in &qubits {
        match code & 3 {
            1 => ops.push((q, PauliAxis::X)),
            2 => ops.push((q, PauliAxis::Y)),
            3 => ops.push((q, PauliAxis::Z)),
            _ => {}
        }
        code >>= 2;
    }
    PauliString::new(&ops)
}

/// Computational-basis samples (basis indices) of a prepared state.
///
/// Gate noise inserts a uniformly random non-identity Pauli on a gate's support
/// after the gate with probability `p1` (one-qubit) or `p2` (two-qubit); each
/// shot is an independent trajectory. Readout then flips each bit with
/// `p_readout`. Shots without gate errors reuse the ideal output distribution.
pub fn sample_bitstrings<T: Real, R: Rng + ?Sized>(
    prep: &Preparation<T>,
    shots: usize,
    rng: &mut R,
    noise: &NoiseSpec,
) -> Result<Vec<usize>, QsimError> {
    if shots == 0 {
        return Err(QsimError::ZeroCount);
    }
    noise.validate()?;
    let norm = prep.initial.norm().to_f64_lossy();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(QsimError::Unnormalized(norm));
    }
    let ideal = prep.ideal_state()?;
    let ideal_cdf = cumulative(&ideal);
    let n = prep.initial.n();
    let mut out = Vec::with_capacity(shots);
    for _ in 0..shots {
        let mut errors: Vec<(usize, PauliString)> = Vec::new();
        if noise.has_gate_noise() {
            for (k, g) in prep.circuit.gates.iter().enumerate() {
                let p = if g.pauli.weight() <= 1 { noise.p1 } else { noise.p2 };
                if p > 0.0 && rng.random::<f64>() < p {
                    errors.push((k, random_error(g.pauli.support(), rng)));
                }
            }
        }
        let mut x = if errors.is_empty() {
            draw(&ideal_cdf, rng)
        } else {
            let mut psi = prep.initial.clone();
            let mut next = errors.iter().peekable();
            for (k, g) in prep.circuit.gates.iter().enumerate() {
                psi.apply_pauli_exp(&g.pauli, g.angle);
                while let Some((_, e)) = next.next_if(|(ek, _)| *ek == k) {
                    psi.apply_pauli(e);
                }
            }
            draw(&cumulative(&psi), rng)
        };
        if noise.p_readout > 0.0 {
            for q in 0..n {
                if rng.random::<f64>() < noise.p_readout {
                    x ^= 1 << q;
                }
            }
        }
        out.push(x);
    }
    Ok(out)
}

/// Prints basis index `x` with qubit `n-1` leftmost and qubit 0 rightmost.
pub fn format_bitstring(x: usize, n: usize) -> String {
    (0..n).rev().map(|q| if x >> q & 1 == 1 { '1' } else { '0' }).collect()
}

/// Ansatz energy `C(theta) = <0|U(theta)^dag H U(theta)|0>`.
pub fn ansatz_energy<T: Real>(h: &Hamiltonian<T>, layout: &AnsatzLayout, theta: &[T]) -> Result<T, QsimError> {
    let psi = hea_prepare(layout.n, layout.depth, theta)?;
    expectation(h, &psi)
}

/// Gradient by the pi/2 shift rule: `dC/dtheta_k = (C(theta_k + pi/2) - C(theta_k - pi/2)) / 2`.
pub fn parameter_shift_grad<T: Real>(h: &Hamiltonian<T>, layout: &AnsatzLayout, theta: &[T]) -> Result<Vec<T>, QsimError> {
    check_params(layout, theta)?;
    let shift = T::FRAC_PI_2();
    let mut shifted = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            shifted[k] = theta[k] + shift;
            let plus = ansatz_energy(h, layout, &shifted)?;
            shifted[k] = theta[k] - shift;
            let minus = ansatz_energy(h, layout, &shifted)?;
            shifted[k] = theta[k];
            Ok((plus - minus) / T::lit(2.0))
        })
        .collect()
}

fn check_params<T>(layout: &AnsatzLayout, theta: &[T]) -> Result<(), QsimError> {
    if theta.len() != layout.param_count() {
        return Err(QsimError::ParamCount {
            expected: layout.param_count(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// Energy and gradient by a reverse sweep over the gate record.
///
/// With `phi = U|0>` and `lambda = H phi`, walking gates backwards gives
/// `dC/dtheta_k = Im <lambda_k| P_k |phi_k>` where both vectors are taken just
/// after gate `k`.
pub fn adjoint_grad<T: Real>(h: &Hamiltonian<T>, layout: &AnsatzLayout, theta: &[T]) -> Result<(T, Vec<T>), QsimError> {
    check_params(layout, theta)?;
    let circuit = layout.circuit(theta)?;
    let mut phi = Statevector::zero_state(layout.n);
    circuit.run(&mut phi)?;
    let energy = expectation(h, &phi)?;
    let mut lambda = Statevector {
        n: layout.n,
        amps: h.apply(phi.amplitudes())?,
    };
    let mut grad = vec![T::zero(); theta.len()];
    let mut scratch = vec![Complex::<T>::zero(); phi.dim()];
    for g in circuit.gates.iter().rev() {
        if let Some(k) = g.param {
            scratch.iter_mut().for_each(|z| *z = Complex::zero());
            g.pauli.apply_add(Complex::new(T::one(), T::zero()), phi.amplitudes(), &mut scratch);
            let ip = lambda
                .amps
                .iter()
                .zip(&scratch)
                .fold(Complex::<T>::zero(), |acc, (l, p)| acc + l.conj() * p);
            grad[k] += ip.im;
        }
        phi.apply_pauli_exp(&g.pauli, -g.angle);
        lambda.apply_pauli_exp(&g.pauli, -g.angle);
    }
    Ok((energy, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn rx_pi_flips_with_phase() {
        let mut psi = Statevector::<f64>::zero_state(1);
        psi.apply_rotation(RotationAxis::X, &[0], PI).unwrap();
        assert!((psi.amplitudes()[0]).norm() < 1e-15);
        assert!((psi.amplitudes()[1] - c(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn rz_is_phase_only_on_zero() {
        let mut psi = Statevector::<f64>::zero_state(1);
        psi.apply_rotation(RotationAxis::Z, &[0], 0.7).unwrap();
        assert!((psi.amplitudes()[0] - c((0.35f64).cos(), -(0.35f64).sin())).norm() < 1e-15);
        assert!((psi.overlap(&Statevector::zero_state(1)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rzz_on_01_picks_positive_phase() {
        // |01> here is qubit 0 = 1, qubit 1 = 0; ZZ eigenvalue -1 either way.
        let mut psi = Statevector::<f64>::basis_state(2, 0b01);
        let theta = 0.9;
        psi.apply_rotation(RotationAxis::ZZ, &[0, 1], theta).unwrap();
        let expected = c((theta / 2.0).cos(), (theta / 2.0).sin());
        assert!((psi.amplitudes()[1] - expected).norm() < 1e-15);
    }

    #[test]
    fn rotation_argument_errors() {
        let mut psi = Statevector::<f64>::zero_state(2);
        assert!(matches!(
            psi.apply_rotation(RotationAxis::X, &[2], 1.0),
            Err(QsimError::QubitOutOfRange { .. })
        ));
        assert!(matches!(psi.apply_rotation(RotationAxis::XX, &[1, 1], 1.0), Err(QsimError::RepeatedQubit)));
        assert!(matches!(psi.apply_rotation(RotationAxis::XX, &[1], 1.0), Err(QsimError::Arity { .. })));
    }

    #[test]
    fn ansatz_parameter_counts() {
        assert_eq!(AnsatzLayout::new(4, 2).param_count(), 52);
        assert_eq!(AnsatzLayout::new(9, 2).param_count(), 117);
        assert!(hea_prepare::<f64>(4, 2, &[0.0; 51]).is_err());
    }

    #[test]
    fn zero_angles_prepare_the_zero_state() {
        let psi = hea_prepare(4, 2, &[0.0f64; 52]).unwrap();
        assert!((psi.overlap(&Statevector::zero_state(4)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zz_expectation_on_zero_state() {
        let mut h = Hamiltonian::<f64>::new(2).unwrap();
        h.add_two_local(0, PauliAxis::Z, 1, PauliAxis::Z, 1.0).unwrap();
        assert_eq!(expectation(&h, &Statevector::zero_state(2)).unwrap(), 1.0);
    }

    #[test]
    fn trotter_zero_time_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = Statevector::<f64>::haar_random(3, &mut rng);
        let mut h = Hamiltonian::<f64>::new(3).unwrap();
        h.add_two_local(0, PauliAxis::X, 2, PauliAxis::Y, 0.4).unwrap();
        let out = trotter_evolve(&h, &psi, 0.0, 4).unwrap();
        assert_eq!(out, psi);
        assert!(trotter_evolve(&h, &psi, 1.0, 0).is_err());
    }

    #[test]
    fn sampling_basis_state_and_readout_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prep = Preparation::from_state(Statevector::<f64>::basis_state(4, 0b0101));
        let shots = sample_bitstrings(&prep, 50, &mut rng, &NoiseSpec::NONE).unwrap();
        assert!(shots.iter().all(|&x| format_bitstring(x, 4) == "0101"));

        let zero = Preparation::from_state(Statevector::<f64>::zero_state(1));
        let flip = NoiseSpec {
            p1: 0.0,
            p2: 0.0,
            p_readout: 1.0,
        };
        let shots = sample_bitstrings(&zero, 20, &mut rng, &flip).unwrap();
        assert!(shots.iter().all(|&x| format_bitstring(x, 1) == "1"));
    }

    #[test]
    fn sampling_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bad = Preparation {
            initial: Statevector {
                n: 1,
                amps: vec![c(1.0, 0.0), c(1.0, 0.0)],
            },
            circuit: Circuit::new(1),
        };
        assert!(matches!(
            sample_bitstrings(&bad, 1, &mut rng, &NoiseSpec::NONE),
            Err(QsimError::Unnormalized(_))
        ));
        let good = Preparation::from_state(Statevector::<f64>::zero_state(1));
        assert!(sample_bitstrings(&good, 0, &mut rng, &NoiseSpec::NONE).is_err());
        let silly = NoiseSpec {
            p1: 2.0,
            ..NoiseSpec::NONE
        };
        assert!(sample_bitstrings(&good, 1, &mut rng, &silly).is_err());
    }

    #[test]
    fn single_qubit_gradient_is_minus_sine() {
        // H = Z on one qubit, ansatz depth 0: Rx(a) Rz(b) Rx(c) |0>.
        let mut h = Hamiltonian::<f64>::new(1).unwrap();
        h.add_one_local(0, PauliAxis::Z, 1.0).unwrap();
        let layout = AnsatzLayout::new(1, 0);
        let theta = [PI / 2.0, 0.0, 0.0];
        let ps = parameter_shift_grad(&h, &layout, &theta).unwrap();
        assert!((ps[0] + 1.0).abs() < 1e-12);
        let (_, adj) = adjoint_grad(&h, &layout, &theta).unwrap();
        assert!((adj[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn trailing_rz_on_diagonal_hamiltonian_has_zero_gradient() {
        let mut h = Hamiltonian::<f64>::new(2).unwrap();
        h.add_two_local(0, PauliAxis::Z, 1, PauliAxis::Z, 1.3).unwrap();
        h.add_one_local(1, PauliAxis::Z, -0.4).unwrap();
        let layout = AnsatzLayout::new(2, 1);
        let theta: Vec<f64> = (0..layout.param_count()).map(|k| 0.3 + 0.17 * k as f64).collect();
        let (_, g) = adjoint_grad(&h, &layout, &theta).unwrap();
        // Last parameter is the final R_z on the last qubit.
        assert!(g[layout.param_count() - 1].abs() < 1e-12);
        let ps = parameter_shift_grad(&h, &layout, &theta).unwrap();
        assert!(ps[layout.param_count() - 1].abs() < 1e-12);
    }

    #[test]
    fn format_is_little_endian() {
        assert_eq!(format_bitstring(0b0001, 4), "0001");
        assert_eq!(format_bitstring(0b1000, 4), "1000");
    }
}
