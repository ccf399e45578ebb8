//! Sample-based Krylov diagonalization: Trotterized Krylov states, sampled
//! bitstring subspaces and projected ground-energy estimates.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{eigvalsh, LinalgError};
use crate::nnvqe::MRE_FLOOR;
use crate::pauli::PauliError;
use crate::qsim::{sample_bitstrings, trotter_circuit, NoiseSpec, Preparation, QsimError};
use crate::{CMatrix, Complex, Hamiltonian, Statevector};

/// Slack allowed when checking that nested subspaces never raise the estimate.
pub const INTERLACING_TOL: f64 = 1e-10;
/// Slack allowed below the exact ground energy.
pub const VARIATIONAL_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SkqdError {
    #[error("Krylov dimension must be at least 1")]
    ZeroDimension,
    #[error("shot count must be at least 1")]
    ZeroShots,
    #[error("empty subspace")]
    EmptySubspace,
    #[error("Hamiltonian has zero norm, time step undefined")]
    ZeroNorm,
    #[error("estimate rose from {prev} to {next} at d = {d}")]
    Interlacing { d: usize, prev: f64, next: f64 },
    #[error("estimate {estimate} below exact ground energy {e0}")]
    BelowGround { estimate: f64, e0: f64 },
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error(transparent)]
    Pauli(#[from] PauliError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkqdConfig {
    pub d_max: usize,
    pub trotter_steps: usize,
    pub shots: usize,
    pub noise: NoiseSpec,
    /// Krylov time step; `pi / ||H||` when absent.
    pub dt: Option<f64>,
}

impl SkqdConfig {
    pub fn new(shots: usize, noise: NoiseSpec) -> Self {
        Self {
            d_max: 10,
            trotter_steps: 10,
            shots,
            noise,
            dt: None,
        }
    }

    pub fn validate(&self) -> Result<(), SkqdError> {
        if self.d_max == 0 {
            return Err(SkqdError::ZeroDimension);
        }
        if self.shots == 0 {
            return Err(SkqdError::ZeroShots);
        }
        self.noise.validate()?;
        Ok(())
    }

    pub fn time_step(&self, h: &Hamiltonian) -> Result<f64, SkqdError> {
        match self.dt {
            Some(dt) => Ok(dt),
            None => default_time_step(h),
        }
    }
}

/// `pi / ||H||` with the exact spectral norm.
pub fn default_time_step(h: &Hamiltonian) -> Result<f64, SkqdError> {
    let norm = h.operator_norm()?;
    if norm == 0.0 {
        return Err(SkqdError::ZeroNorm);
    }
    Ok(PI / norm)
}

/// `psi_k = (e^{-iH dt})^k psi_0` for `k < d`, each `dt` split into `steps` Trotter steps.
pub fn krylov_states(h: &Hamiltonian, psi0: &Statevector, dt: f64, d: usize, steps: usize) -> Result<Vec<Statevector>, SkqdError> {
    if d == 0 {
        return Err(SkqdError::ZeroDimension);
    }
    let step = trotter_circuit(h, dt, steps)?;
    let mut out = vec![psi0.clone()];
    for _ in 1..d {
        let mut next = out.last().expect("nonempty").clone();
        step.run(&mut next)?;
        out.push(next);
    }
    Ok(out)
}

/// Gate-level preparations of the Krylov states, so noise can act on every gate.
pub fn krylov_preparations(
    h: &Hamiltonian,
    base: &Preparation<f64>,
    dt: f64,
    d: usize,
    steps: usize,
) -> Result<Vec<Preparation<f64>>, SkqdError> {
    if d == 0 {
        return Err(SkqdError::ZeroDimension);
    }
    let step = trotter_circuit(h, dt, steps)?;
    let mut out = vec![base.clone()];
    for _ in 1..d {
        let mut next = out.last().expect("nonempty").clone();
        next.circuit.extend(&step);
        out.push(next);
    }
    Ok(out)
}

/// Distinct sampled basis states in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledSubspace {
    pub n: usize,
    pub strings: Vec<usize>,
    /// Krylov index whose shots first produced each string.
    pub first_seen: Vec<usize>,
    /// `sizes[d-1]` strings make up the subspace at dimension `d`.
    pub sizes: Vec<usize>,
}

impl SampledSubspace {
    pub fn dims(&self) -> usize {
        self.sizes.len()
    }

    /// Strings gathered from the first `d` Krylov states.
    pub fn at(&self, d: usize) -> &[usize] {
        &self.strings[..self.sizes[d - 1]]
    }
}

/// `shots` measurements of each Krylov state, accumulated into nested subspaces.
pub fn build_subspace<R: Rng + ?Sized>(
    preps: &[Preparation<f64>],
    shots: usize,
    rng: &mut R,
    noise: &NoiseSpec,
) -> Result<SampledSubspace, SkqdError> {
    let first = preps.first().ok_or(SkqdError::ZeroDimension)?;
    if shots == 0 {
        return Err(SkqdError::ZeroShots);
    }
    let mut seen = HashMap::new();
    let mut sub = SampledSubspace {
        n: first.initial.n(),
        strings: Vec::new(),
        first_seen: Vec::new(),
        sizes: Vec::with_capacity(preps.len()),
    };
    for (k, prep) in preps.iter().enumerate() {
        for x in sample_bitstrings(prep, shots, rng, noise)? {
            seen.entry(x).or_insert_with(|| {
                sub.strings.push(x);
                sub.first_seen.push(k);
                sub.strings.len() - 1
            });
        }
        sub.sizes.push(sub.strings.len());
    }
    Ok(sub)
}

/// `<x|H|y>` over the given basis states.
pub fn projected_matrix(h: &Hamiltonian, strings: &[usize]) -> Result<CMatrix, SkqdError> {
    if strings.is_empty() {
        return Err(SkqdError::EmptySubspace);
    }
    let index: HashMap<usize, usize> = strings.iter().enumerate().map(|(k, &x)| (x, k)).collect();
    let dim = strings.len();
    let mut rows = vec![vec![Complex::new(0.0, 0.0); dim]; dim];
    for (p, c) in h.terms() {
        for (col, &y) in strings.iter().enumerate() {
            if let Some(&row) = index.get(&(y ^ p.flip_mask)) {
                rows[row][col] += p.phase::<f64>(y) * c;
            }
        }
    }
    Ok(CMatrix::from_rows(rows)?)
}

/// Lowest eigenvalue of `H` projected onto the span of `strings`.
pub fn ground_estimate(h: &Hamiltonian, strings: &[usize]) -> Result<f64, SkqdError> {
    let m = projected_matrix(h, strings)?;
    Ok(eigvalsh(&m)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub d: usize,
    pub estimate: f64,
    pub error: f64,
    pub subspace_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    /// Errors are absolute because `|E0|` fell below the relative floor.
    pub absolute: bool,
    pub e0: f64,
}

impl Curve {
    pub fn error_at(&self, d: usize) -> Option<f64> {
        self.points.iter().find(|p| p.d == d).map(|p| p.error)
    }
}

/// Error versus Krylov dimension for one initial-state preparation.
///
/// Fails if an estimate rises with `d` or undercuts `e0`.
pub fn run_curve<R: Rng + ?Sized>(
    h: &Hamiltonian,
    base: &Preparation<f64>,
    e0: f64,
    cfg: &SkqdConfig,
    rng: &mut R,
) -> Result<Curve, SkqdError> {
    cfg.validate()?;
    let dt = cfg.time_step(h)?;
    let preps = krylov_preparations(h, base, dt, cfg.d_max, cfg.trotter_steps)?;
    let sub = build_subspace(&preps, cfg.shots, rng, &cfg.noise)?;
    curve_from_subspace(h, &sub, e0)
}

pub fn curve_from_subspace(h: &Hamiltonian, sub: &SampledSubspace, e0: f64) -> Result<Curve, SkqdError> {
    let absolute = e0.abs() < MRE_FLOOR;
    let mut points: Vec<CurvePoint> = Vec::with_capacity(sub.dims());
    for d in 1..=sub.dims() {
        let strings = sub.at(d);
        let estimate = match points.last() {
            // No new strings: the projected problem is unchanged.
            Some(prev) if prev.subspace_size == strings.len() => prev.estimate,
            _ => ground_estimate(h, strings)?,
        };
        if let Some(prev) = points.last() {
            if estimate > prev.estimate + INTERLACING_TOL {
                return Err(SkqdError::Interlacing {
                    d,
                    prev: prev.estimate,
                    next: estimate,
                });
            }
        }
        if estimate < e0 - VARIATIONAL_TOL {
            return Err(SkqdError::BelowGround { estimate, e0 });
        }
        let gap = (estimate - e0).abs();
        points.push(CurvePoint {
            d,
            estimate,
            error: if absolute { gap } else { gap / e0.abs() },
            subspace_size: strings.len(),
        });
    }
    Ok(Curve { points, absolute, e0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    Random,
    Nnvqe,
    EgateNnvqe,
}

impl Provider {
    pub const ALL: [Provider; 3] = [Provider::Random, Provider::Nnvqe, Provider::EgateNnvqe];

    pub fn label(self) -> &'static str {
        match self {
            Provider::Random => "random",
            Provider::Nnvqe => "nnvqe",
            Provider::EgateNnvqe => "egate_nnvqe",
        }
    }
}

/// A Haar-random state, injected without a gate record.
pub fn haar_preparation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Preparation<f64> {
    Preparation::from_state(Statevector::haar_random(n, rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub family: String,
    pub instance_id: usize,
    pub provider: Provider,
    pub shots: usize,
    pub seed: u64,
    pub fidelity: f64,
    pub curve: Curve,
}

pub fn curves_csv(records: &[CurveRecord]) -> String {
    let mut out = String::from("family,instance_id,provider,M,d,estimate,e0,rel_error,subspace_size,seed\n");
    for r in records {
        for p in &r.curve.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.family,
                r.instance_id,
                r.provider.label(),
                r.shots,
                p.d,
                p.estimate,
                r.curve.e0,
                p.error,
                p.subspace_size,
                r.seed
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{build_family, Family, FamilySpec, PauliAxis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn xxz4() -> Hamiltonian {
        build_family(&FamilySpec::new(Family::Xxz1d, 4, &[("Jzz", 1.0)])).unwrap()
    }

    #[test]
    fn one_dimension_is_the_input() {
        let psi = Statevector::basis_state(3, 5);
        let states = krylov_states(&xxz4_small(), &psi, 0.1, 1, 10).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(states[0], psi);
    }

    fn xxz4_small() -> Hamiltonian {
        build_family(&FamilySpec::new(Family::Xxz1d, 3, &[("Jzz", 0.5)])).unwrap()
    }

    #[test]
    fn diagonal_hamiltonian_keeps_basis_state() {
        let mut h = Hamiltonian::new(3).unwrap();
        h.add_two_local(0, PauliAxis::Z, 1, PauliAxis::Z, 1.0).unwrap();
        h.add_one_local(2, PauliAxis::Z, -0.7).unwrap();
        let psi = Statevector::basis_state(3, 6);
        for s in krylov_states(&h, &psi, 0.4, 5, 10).unwrap() {
            assert!((s.overlap(&psi) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_state_gives_single_string() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut h = Hamiltonian::new(4).unwrap();
        h.add_two_local(0, PauliAxis::Z, 1, PauliAxis::Z, 1.0).unwrap();
        let base = Preparation::from_state(Statevector::zero_state(4));
        let preps = krylov_preparations(&h, &base, 0.3, 4, 10).unwrap();
        let sub = build_subspace(&preps, 20, &mut rng, &NoiseSpec::NONE).unwrap();
        assert_eq!(sub.strings, vec![0]);
        assert_eq!(sub.sizes, vec![1; 4]);
    }

    #[test]
    fn uniform_superposition_fills_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let amp = Complex::new(0.5, 0.0);
        let psi = Statevector::from_amplitudes(vec![amp; 4]).unwrap();
        let sub = build_subspace(&[Preparation::from_state(psi)], 400, &mut rng, &NoiseSpec::NONE).unwrap();
        let mut s = sub.strings.clone();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2, 3]);
    }

    #[test]
    fn complete_basis_recovers_ground_energy() {
        let h = xxz4();
        let all: Vec<usize> = (0..16).collect();
        let e = ground_estimate(&h, &all).unwrap();
        assert!((e + 8.0).abs() < 1e-8);
    }

    #[test]
    fn singleton_is_diagonal_element() {
        let h = xxz4();
        let x = 0b0101;
        let psi = Statevector::basis_state(4, x);
        let diag = crate::qsim::expectation(&h, &psi).unwrap();
        assert!((ground_estimate(&h, &[x]).unwrap() - diag).abs() < 1e-12);
    }

    #[test]
    fn projected_matches_dense_submatrix() {
        let h = xxz4();
        let dense = h.to_dense().unwrap();
        let picks = [0b0011, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100];
        let m = projected_matrix(&h, &picks).unwrap();
        for (r, &x) in picks.iter().enumerate() {
            for (c, &y) in picks.iter().enumerate() {
                let a = m.as_slice()[r * picks.len() + c];
                let b = dense.as_slice()[x * 16 + y];
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn ground_state_start_converges_at_first_dimension() {
        let h = xxz4();
        let sp = h.exact_spectrum(1e-9).unwrap();
        let psi = Statevector::normalized(sp.eigenvector(0)).unwrap();
        let cfg = SkqdConfig::new(2000, NoiseSpec::NONE);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let curve = run_curve(&h, &Preparation::from_state(psi), sp.ground_energy, &cfg, &mut rng).unwrap();
        assert!(curve.points[0].error < 1e-6);
        assert_eq!(curve.points.len(), 10);
    }

    #[test]
    fn curves_are_reproducible_and_monotone() {
        let h = xxz4();
        let e0 = h.exact_spectrum(1e-9).unwrap().ground_energy;
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = haar_preparation(4, &mut rng);
            run_curve(&h, &base, e0, &SkqdConfig::new(3, NoiseSpec::DEFAULT), &mut rng).unwrap()
        };
        let a = run(5);
        assert_eq!(a, run(5));
        for w in a.points.windows(2) {
            assert!(w[1].estimate <= w[0].estimate + INTERLACING_TOL);
        }
    }

    #[test]
    fn tiny_ground_energy_switches_to_absolute_error() {
        let mut h = Hamiltonian::new(2).unwrap();
        h.add_one_local(0, PauliAxis::X, 1e-8).unwrap();
        let sub = SampledSubspace {
            n: 2,
            strings: vec![0, 1],
            first_seen: vec![0, 0],
            sizes: vec![2],
        };
        let c = curve_from_subspace(&h, &sub, -1e-8).unwrap();
        assert!(c.absolute);
    }

    #[test]
    fn argument_errors() {
        let h = xxz4();
        let psi = Statevector::zero_state(4);
        assert!(matches!(krylov_states(&h, &psi, 0.1, 0, 10), Err(SkqdError::ZeroDimension)));
        assert!(matches!(ground_estimate(&h, &[]), Err(SkqdError::EmptySubspace)));
        assert!(matches!(default_time_step(&Hamiltonian::new(2).unwrap()), Err(SkqdError::ZeroNorm)));
    }
}
