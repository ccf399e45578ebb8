//! One- and two-local Pauli Hamiltonians, the benchmark families, and exact
//! spectral oracles.
//!
//! Qubits are 0-indexed and basis states are little-endian: qubit `q` is bit
//! `q` of the computational-basis index.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_traits::Zero;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::linalg::{eigh, CMatrix, LinalgError};
use crate::scalar::{Complex, Real};

/// Largest register `to_dense` will materialize.
pub const MAX_DENSE_QUBITS: usize = 14;
/// Largest register `exact_spectrum` will diagonalize.
pub const MAX_SPECTRUM_QUBITS: usize = 12;
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PauliError {
    #[error("site index {index} out of range for {n} qubits")]
    SiteOutOfRange { index: usize, n: usize },
    #[error("two-local term needs distinct sites, got ({0}, {0})")]
    SameSite(usize),
    #[error("Hamiltonian needs at least one qubit")]
    NoQubits,
    #[error("{n} qubits exceeds the dense limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("state dimension {got} does not match 2^{n} = {expected}")]
    DimensionMismatch { n: usize, expected: usize, got: usize },
    #[error("unknown Hamiltonian family '{0}'")]
    UnknownFamily(String),
    #[error("family {family} expects parameters {expected:?}, got {got:?}")]
    ParamMismatch {
        family: Family,
        expected: Vec<&'static str>,
        got: Vec<String>,
    },
    #[error("family {family} requires n = {required}, got {got}")]
    SizeMismatch { family: Family, required: usize, got: usize },
    #[error("family {family} requires n >= {min}, got {got}")]
    TooFewSites { family: Family, min: usize, got: usize },
    #[error("invalid Pauli axis '{0}'")]
    BadAxis(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Single-qubit Pauli axis. Ordered `X < Y < Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub const ALL: [PauliAxis; 3] = [PauliAxis::X, PauliAxis::Y, PauliAxis::Z];

    pub fn as_char(self) -> char {
        match self {
            PauliAxis::X => 'x',
            PauliAxis::Y => 'y',
            PauliAxis::Z => 'z',
        }
    }

    pub fn from_char(c: char) -> Result<Self, PauliError> {
        match c.to_ascii_lowercase() {
            'x' => Ok(PauliAxis::X),
            'y' => Ok(PauliAxis::Y),
            'z' => Ok(PauliAxis::Z),
            _ => Err(PauliError::BadAxis(c.to_string())),
        }
    }
}

impl fmt::Display for PauliAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Tensor product of Pauli operators on distinct qubits, encoded by bit masks
/// so that `P|y> = i^{n_y} (-1)^{|y & phase_mask|} |y ^ flip_mask>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PauliString {
    pub flip_mask: usize,
    pub phase_mask: usize,
    pub n_y: u32,
}

impl PauliString {
    pub fn new(ops: &[(usize, PauliAxis)]) -> Self {
        let mut s = PauliString {
            flip_mask: 0,
            phase_mask: 0,
            n_y: 0,
        };
        for &(q, axis) in ops {
            let bit = 1usize << q;
            debug_assert!((s.flip_mask | s.phase_mask) & bit == 0, "repeated qubit in Pauli string");
            match axis {
                PauliAxis::X => s.flip_mask |= bit,
                PauliAxis::Y => {
                    s.flip_mask |= bit;
                    s.phase_mask |= bit;
                    s.n_y += 1;
                }
                PauliAxis::Z => s.phase_mask |= bit,
            }
        }
        s
    }

    pub fn single(q: usize, axis: PauliAxis) -> Self {
        Self::new(&[(q, axis)])
    }

    pub fn pair(i: usize, a: PauliAxis, j: usize, b: PauliAxis) -> Self {
        Self::new(&[(i, a), (j, b)])
    }

    pub fn support(&self) -> usize {
        self.flip_mask | self.phase_mask
    }

    pub fn weight(&self) -> u32 {
        self.support().count_ones()
    }

    /// Phase picked up by basis state `y`: `P|y> = phase(y) |y ^ flip_mask>`.
    #[inline]
    pub fn phase<T: Real>(&self, y: usize) -> Complex<T> {
        let sign_flip = (y & self.phase_mask).count_ones() & 1 == 1;
        let base = match self.n_y % 4 {
            0 => Complex::new(T::one(), T::zero()),
            1 => Complex::new(T::zero(), T::one()),
            2 => Complex::new(-T::one(), T::zero()),
            _ => Complex::new(T::zero(), -T::one()),
        };
        if sign_flip {
            -base
        } else {
            base
        }
    }

    /// `out += coeff * P psi`.
    pub fn apply_add<T: Real>(&self, coeff: Complex<T>, psi: &[Complex<T>], out: &mut [Complex<T>]) {
        for (y, &amp) in psi.iter().enumerate() {
            if amp.is_zero() {
                continue;
            }
            let x = y ^ self.flip_mask;
            out[x] += coeff * self.phase::<T>(y) * amp;
        }
    }

    /// `<psi| P |psi>` (real for Hermitian `P`).
    pub fn expectation<T: Real>(&self, psi: &[Complex<T>]) -> T {
        let mut acc = Complex::<T>::zero();
        for (y, &amp) in psi.iter().enumerate() {
            let x = y ^ self.flip_mask;
            acc += psi[x].conj() * self.phase::<T>(y) * amp;
        }
        acc.re
    }
}

/// Key of a two-local coefficient `J_{ij}^{ab}`; always `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TwoLocalKey {
    pub i: usize,
    pub j: usize,
    pub a: PauliAxis,
    pub b: PauliAxis,
}

/// Sparse Hamiltonian `sum J_{ij}^{ab} s^a_i s^b_j + sum K_i^a s^a_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian<T> {
    n: usize,
    two_local: BTreeMap<TwoLocalKey, T>,
    one_local: BTreeMap<(usize, PauliAxis), T>,
}

impl<T: Real> Hamiltonian<T> {
    pub fn new(n: usize) -> Result<Self, PauliError> {
        if n == 0 {
            return Err(PauliError::NoQubits);
        }
        Ok(Self {
            n,
            two_local: BTreeMap::new(),
            one_local: BTreeMap::new(),
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dim(&self) -> usize {
        1 << self.n
    }

    fn check_site(&self, i: usize) -> Result<(), PauliError> {
        if i >= self.n {
            Err(PauliError::SiteOutOfRange { index: i, n: self.n })
        } else {
            Ok(())
        }
    }

    /// Accumulates `coeff * s^a_i s^b_j`. Entries that cancel to zero are removed.
    pub fn add_two_local(&mut self, i: usize, a: PauliAxis, j: usize, b: PauliAxis, coeff: T) -> Result<(), PauliError> {
        self.check_site(i)?;
        self.check_site(j)?;
        if i == j {
            return Err(PauliError::SameSite(i));
        }
        let key = if i < j {
            TwoLocalKey { i, j, a, b }
        } else {
            TwoLocalKey { i: j, j: i, a: b, b: a }
        };
        let total = self.two_local.get(&key).copied().unwrap_or_else(T::zero) + coeff;
        if total == T::zero() {
            self.two_local.remove(&key);
        } else {
            self.two_local.insert(key, total);
        }
        Ok(())
    }

    pub fn add_one_local(&mut self, i: usize, a: PauliAxis, coeff: T) -> Result<(), PauliError> {
        self.check_site(i)?;
        let total = self.one_local.get(&(i, a)).copied().unwrap_or_else(T::zero) + coeff;
        if total == T::zero() {
            self.one_local.remove(&(i, a));
        } else {
            self.one_local.insert((i, a), total);
        }
        Ok(())
    }

    pub fn two_local(&self) -> &BTreeMap<TwoLocalKey, T> {
        &self.two_local
    }

    pub fn one_local(&self) -> &BTreeMap<(usize, PauliAxis), T> {
        &self.one_local
    }

    pub fn coupling(&self, i: usize, a: PauliAxis, j: usize, b: PauliAxis) -> T {
        let key = if i < j {
            TwoLocalKey { i, j, a, b }
        } else {
            TwoLocalKey { i: j, j: i, a: b, b: a }
        };
        self.two_local.get(&key).copied().unwrap_or_else(T::zero)
    }

    pub fn field(&self, i: usize, a: PauliAxis) -> T {
        self.one_local.get(&(i, a)).copied().unwrap_or_else(T::zero)
    }

    pub fn is_empty(&self) -> bool {
        self.two_local.is_empty() && self.one_local.is_empty()
    }

    /// Distinct interacting pairs `(i, j)`, `i < j`, ascending.
    pub fn interacting_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self.two_local.keys().map(|k| (k.i, k.j)).collect();
        pairs.dedup();
        pairs
    }

    /// All terms in canonical order: two-local by `(i, j, a, b)`, then one-local by `(i, a)`.
    pub fn terms(&self) -> Vec<(PauliString, T)> {
        self.two_local
            .iter()
            .map(|(k, &c)| (PauliString::pair(k.i, k.a, k.j, k.b), c))
            .chain(self.one_local.iter().map(|(&(i, a), &c)| (PauliString::single(i, a), c)))
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Hamiltonian<U> {
        Hamiltonian {
            n: self.n,
            two_local: self.two_local.iter().map(|(k, v)| (*k, U::lit(v.to_f64_lossy()))).collect(),
            one_local: self.one_local.iter().map(|(k, v)| (*k, U::lit(v.to_f64_lossy()))).collect(),
        }
    }

    /// Dense `2^n x 2^n` matrix.
    pub fn to_dense(&self) -> Result<CMatrix<T>, PauliError> {
        if self.n > MAX_DENSE_QUBITS {
            return Err(PauliError::TooLarge {
                n: self.n,
                max: MAX_DENSE_QUBITS,
            });
        }
        let dim = self.dim();
        let mut m = CMatrix::zeros(dim);
        for (p, c) in self.terms() {
            for y in 0..dim {
                let x = y ^ p.flip_mask;
                m[(x, y)] += p.phase::<T>(y) * c;
            }
        }
        Ok(m)
    }

    /// Matrix-free `H psi`.
    pub fn apply(&self, psi: &[Complex<T>]) -> Result<Vec<Complex<T>>, PauliError> {
        if psi.len() != self.dim() {
            return Err(PauliError::DimensionMismatch {
                n: self.n,
                expected: self.dim(),
                got: psi.len(),
            });
        }
        let mut out = vec![Complex::zero(); psi.len()];
        for (p, c) in self.terms() {
            p.apply_add(Complex::new(c, T::zero()), psi, &mut out);
        }
        Ok(out)
    }

    /// `<x| H |y>` for basis states `x`, `y`.
    pub fn matrix_element(&self, x: usize, y: usize) -> Complex<T> {
        let mut acc = Complex::zero();
        for (p, c) in self.terms() {
            if y ^ p.flip_mask == x {
                acc += p.phase::<T>(y) * c;
            }
        }
        acc
    }

    /// Full Hermitian eigen-decomposition with the ground-space projector.
    pub fn exact_spectrum(&self, degeneracy_tol: T) -> Result<Spectrum<T>, PauliError> {
        if self.n > MAX_SPECTRUM_QUBITS {
            return Err(PauliError::TooLarge {
                n: self.n,
                max: MAX_SPECTRUM_QUBITS,
            });
        }
        let dense = self.to_dense()?;
        let decomposition = eigh(&dense)?;
        Ok(Spectrum::from_eigh(decomposition.values, decomposition.vectors, degeneracy_tol))
    }

    /// Operator norm `max |lambda|`.
    pub fn operator_norm(&self) -> Result<T, PauliError> {
        if self.n > MAX_SPECTRUM_QUBITS {
            return Err(PauliError::TooLarge {
                n: self.n,
                max: MAX_SPECTRUM_QUBITS,
            });
        }
        let vals = crate::linalg::eigvalsh(&self.to_dense()?)?;
        Ok(vals.iter().fold(T::zero(), |m, v| m.max(v.abs())))
    }
}

/// Exact spectrum of a Hamiltonian.
#[derive(Debug, Clone)]
pub struct Spectrum<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: CMatrix<T>,
    pub ground_energy: T,
    pub degeneracy: usize,
    pub ground_projector: CMatrix<T>,
}

impl<T: Real> Spectrum<T> {
    pub fn from_eigh(eigenvalues: Vec<T>, eigenvectors: CMatrix<T>, degeneracy_tol: T) -> Self {
        let ground_energy = eigenvalues[0];
        let degeneracy = eigenvalues
            .iter()
            .take_while(|&&v| v - ground_energy <= degeneracy_tol)
            .count();
        let dim = eigenvectors.dim();
        let mut proj = CMatrix::zeros(dim);
        for k in 0..degeneracy {
            for i in 0..dim {
                let vi = eigenvectors[(i, k)];
                if vi.is_zero() {
                    continue;
                }
                for j in 0..dim {
                    proj[(i, j)] += vi * eigenvectors[(j, k)].conj();
                }
            }
        }
        Self {
            eigenvalues,
            eigenvectors,
            ground_energy,
            degeneracy,
            ground_projector: proj,
        }
    }

    pub fn ground_vectors(&self) -> Vec<Vec<Complex<T>>> {
        let dim = self.eigenvectors.dim();
        (0..self.degeneracy)
            .map(|k| (0..dim).map(|r| self.eigenvectors[(r, k)]).collect())
            .collect()
    }

    /// `<psi| P_ground |psi>`, clamped to `[0, 1]`.
    /// Column `k` of the eigenvector matrix.
    pub fn eigenvector(&self, k: usize) -> Vec<Complex<T>> {
        (0..self.eigenvectors.dim()).map(|r| self.eigenvectors[(r, k)]).collect()
    }

    pub fn ground_fidelity(&self, psi: &[Complex<T>]) -> T {
        let p_psi = self.ground_projector.matvec(psi);
        let f = psi.iter().zip(&p_psi).fold(T::zero(), |acc, (a, b)| acc + (a.conj() * b).re);
        f.max(T::zero()).min(T::one())
    }
}

/// Benchmark Hamiltonian families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    /// 1D periodic XXZ chain, tunable `Jzz`.
    #[serde(rename = "xxz1d")]
    Xxz1d,
    /// 1D periodic XXZ chain with uniform transverse field, tunable `Jzz`, `Kx`.
    #[serde(rename = "xxz_x1d")]
    XxzX1d,
    /// 1D periodic XXZ chain with longitudinal field, tunable `lambda`, `Delta`.
    #[serde(rename = "xxz_z1d")]
    XxzZ1d,
    /// XXZ on the open 3x3 lattice with nearest/next-nearest `Jzz1`, `Jzz2`.
    #[serde(rename = "xxz2d33")]
    Xxz2d33,
    /// XYZ on the open 3x3 lattice, tunable `Jyy`, `Jzz1`, `Jzz2`.
    #[serde(rename = "xyz2d33")]
    Xyz2d33,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Xxz1d,
        Family::XxzX1d,
        Family::XxzZ1d,
        Family::Xxz2d33,
        Family::Xyz2d33,
    ];

    /// Tunable parameter names in canonical input order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Xxz1d => &["Jzz"],
            Family::XxzX1d => &["Jzz", "Kx"],
            Family::XxzZ1d => &["lambda", "Delta"],
            Family::Xxz2d33 => &["Jzz1", "Jzz2"],
            Family::Xyz2d33 => &["Jyy", "Jzz1", "Jzz2"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Xxz1d => "xxz1d",
            Family::XxzX1d => "xxz_x1d",
            Family::XxzZ1d => "xxz_z1d",
            Family::Xxz2d33 => "xxz2d33",
            Family::Xyz2d33 => "xyz2d33",
        }
    }

    pub fn is_lattice(self) -> bool {
        matches!(self, Family::Xxz2d33 | Family::Xyz2d33)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = PauliError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PauliError::UnknownFamily(s.to_string()))
    }
}

/// One member of a benchmark family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub n: usize,
    pub params: BTreeMap<String, f64>,
}

impl FamilySpec {
    pub fn new(family: Family, n: usize, params: &[(&str, f64)]) -> Self {
        Self {
            family,
            n,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), PauliError> {
        let expected = self.family.param_names();
        let mut want: Vec<&str> = expected.to_vec();
        want.sort_unstable();
        let got: Vec<String> = self.params.keys().cloned().collect();
        if want.iter().map(|s| s.to_string()).collect::<Vec<_>>() != got {
            return Err(PauliError::ParamMismatch {
                family: self.family,
                expected: expected.to_vec(),
                got,
            });
        }
        if self.family.is_lattice() {
            if self.n != 9 {
                return Err(PauliError::SizeMismatch {
                    family: self.family,
                    required: 9,
                    got: self.n,
                });
            }
        } else if self.n < 3 {
            return Err(PauliError::TooFewSites {
                family: self.family,
                min: 3,
                got: self.n,
            });
        }
        Ok(())
    }

    /// Tunable parameters in canonical order.
    pub fn tunables(&self) -> Vec<f64> {
        self.family.param_names().iter().map(|k| self.params[*k]).collect()
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }
}

/// Periodic-ring edges `(i, i+1 mod n)`, normalized to `i < j`, ascending.
pub fn ring_edges(n: usize) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            (i.min(j), i.max(j))
        })
        .collect();
    e.sort_unstable();
    e.dedup();
    e
}

/// Nearest (axis-adjacent) and next-nearest (diagonal) pairs of an open
/// `rows x cols` lattice with row-major numbering.
pub fn lattice_edges(rows: usize, cols: usize) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let idx = |r: usize, c: usize| r * cols + c;
    let mut nn = Vec::new();
    let mut nnn = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                nn.push((idx(r, c), idx(r, c + 1)));
            }
            if r + 1 < rows {
                nn.push((idx(r, c), idx(r + 1, c)));
            }
            if r + 1 < rows && c + 1 < cols {
                nnn.push((idx(r, c), idx(r + 1, c + 1)));
                nnn.push((idx(r, c + 1), idx(r + 1, c)));
            }
        }
    }
    for v in [&mut nn, &mut nnn] {
        for e in v.iter_mut() {
            *e = (e.0.min(e.1), e.0.max(e.1));
        }
        v.sort_unstable();
    }
    (nn, nnn)
}

fn add_heisenberg_bond<T: Real>(
    h: &mut Hamiltonian<T>,
    (i, j): (usize, usize),
    jxx: T,
    jyy: T,
    jzz: T,
) -> Result<(), PauliError> {
    h.add_two_local(i, PauliAxis::X, j, PauliAxis::X, jxx)?;
    h.add_two_local(i, PauliAxis::Y, j, PauliAxis::Y, jyy)?;
    h.add_two_local(i, PauliAxis::Z, j, PauliAxis::Z, jzz)
}

/// Builds the Hamiltonian of a benchmark family member.
pub fn build_family<T: Real>(spec: &FamilySpec) -> Result<Hamiltonian<T>, PauliError> {
    spec.validate()?;
    let mut h = Hamiltonian::new(spec.n)?;
    let p = |k: &str| T::lit(spec.param(k));
    let one = T::one();
    match spec.family {
        Family::Xxz1d | Family::XxzX1d | Family::XxzZ1d => {
            let jzz = match spec.family {
                Family::XxzZ1d => p("lambda"),
                _ => p("Jzz"),
            };
            for e in ring_edges(spec.n) {
                add_heisenberg_bond(&mut h, e, one, one, jzz)?;
            }
            let field = match spec.family {
                Family::XxzX1d => Some((PauliAxis::X, p("Kx"))),
                Family::XxzZ1d => Some((PauliAxis::Z, p("Delta"))),
                _ => None,
            };
            if let Some((axis, k)) = field {
                for i in 0..spec.n {
                    h.add_one_local(i, axis, k)?;
                }
            }
        }
        Family::Xxz2d33 | Family::Xyz2d33 => {
            let jyy = if spec.family == Family::Xyz2d33 { p("Jyy") } else { one };
            let (nn, nnn) = lattice_edges(3, 3);
            for e in nn {
                add_heisenberg_bond(&mut h, e, one, jyy, p("Jzz1"))?;
            }
            for e in nnn {
                add_heisenberg_bond(&mut h, e, one, jyy, p("Jzz2"))?;
            }
        }
    }
    Ok(h)
}

#[derive(Serialize, Deserialize)]
struct HamiltonianDoc<T> {
    n: usize,
    two_local: Vec<(usize, usize, String, T)>,
    one_local: Vec<(usize, String, T)>,
}

impl<T: Real> Serialize for Hamiltonian<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        HamiltonianDoc {
            n: self.n,
            two_local: self
                .two_local
                .iter()
                .map(|(k, &c)| (k.i, k.j, format!("{}{}", k.a, k.b), c))
                .collect(),
            one_local: self.one_local.iter().map(|(&(i, a), &c)| (i, a.to_string(), c)).collect(),
        }
        .serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for Hamiltonian<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let doc = HamiltonianDoc::<T>::deserialize(d)?;
        let mut h = Hamiltonian::new(doc.n).map_err(D::Error::custom)?;
        let axis = |s: &str, want: usize| -> Result<Vec<PauliAxis>, PauliError> {
            let axes = s.chars().map(PauliAxis::from_char).collect::<Result<Vec<_>, _>>()?;
            if axes.len() != want {
                return Err(PauliError::BadAxis(s.to_string()));
            }
            Ok(axes)
        };
        for (i, j, ab, c) in doc.two_local {
            let ax = axis(&ab, 2).map_err(D::Error::custom)?;
            h.add_two_local(i, ax[0], j, ax[1], c).map_err(D::Error::custom)?;
        }
        for (i, a, c) in doc.one_local {
            let ax = axis(&a, 1).map_err(D::Error::custom)?;
            h.add_one_local(i, ax[0], c).map_err(D::Error::custom)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xxz(n: usize, jzz: f64) -> Hamiltonian<f64> {
        build_family(&FamilySpec::new(Family::Xxz1d, n, &[("Jzz", jzz)])).unwrap()
    }

    #[test]
    fn xxz_ring_term_count() {
        let h = xxz(4, 1.0);
        assert_eq!(h.two_local().len(), 12);
        assert!(h.one_local().is_empty());
        assert_eq!(h.interacting_pairs(), vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn zero_transverse_field_reduces_to_plain_xxz() {
        let hx: Hamiltonian<f64> =
            build_family(&FamilySpec::new(Family::XxzX1d, 4, &[("Jzz", 1.0), ("Kx", 0.0)])).unwrap();
        assert_eq!(hx, xxz(4, 1.0));
    }

    #[test]
    fn four_site_heisenberg_ring_ground_energy() {
        let s = xxz(4, 1.0).exact_spectrum(DEFAULT_DEGENERACY_TOL).unwrap();
        assert!((s.ground_energy + 8.0).abs() < 1e-8, "E0 = {}", s.ground_energy);
        assert_eq!(s.degeneracy, 1);
    }

    #[test]
    fn single_qubit_dense_matrices() {
        let mut h = Hamiltonian::<f64>::new(1).unwrap();
        h.add_one_local(0, PauliAxis::Z, 1.0).unwrap();
        let m = h.to_dense().unwrap();
        assert_eq!(m[(0, 0)].re, 1.0);
        assert_eq!(m[(1, 1)].re, -1.0);
        assert_eq!(m[(0, 1)].norm(), 0.0);

        let mut zz = Hamiltonian::<f64>::new(2).unwrap();
        zz.add_two_local(0, PauliAxis::Z, 1, PauliAxis::Z, 1.0).unwrap();
        let m = zz.to_dense().unwrap();
        let diag: Vec<f64> = (0..4).map(|i| m[(i, i)].re).collect();
        assert_eq!(diag, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn apply_basic_actions() {
        let mut z = Hamiltonian::<f64>::new(1).unwrap();
        z.add_one_local(0, PauliAxis::Z, 1.0).unwrap();
        let zero = vec![Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)];
        assert_eq!(z.apply(&zero).unwrap(), zero);

        let mut x = Hamiltonian::<f64>::new(1).unwrap();
        x.add_one_local(0, PauliAxis::X, 1.0).unwrap();
        let one = x.apply(&zero).unwrap();
        assert_eq!(one, vec![Complex::new(0.0, 0.0), Complex::new(1.0, 0.0)]);
        assert!(x.apply(&[Complex::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn empty_hamiltonian_spectrum_is_fully_degenerate() {
        let h = Hamiltonian::<f64>::new(2).unwrap();
        let s = h.exact_spectrum(DEFAULT_DEGENERACY_TOL).unwrap();
        assert_eq!(s.ground_energy, 0.0);
        assert_eq!(s.degeneracy, 4);
        assert!(s.ground_projector.max_abs_diff(&CMatrix::identity(4)) < 1e-12);
    }

    #[test]
    fn diag_spectrum_projector() {
        let mut h = Hamiltonian::<f64>::new(1).unwrap();
        h.add_one_local(0, PauliAxis::Z, 1.0).unwrap();
        let s = h.exact_spectrum(DEFAULT_DEGENERACY_TOL).unwrap();
        assert_eq!(s.ground_energy, -1.0);
        assert!((s.ground_projector[(1, 1)].re - 1.0).abs() < 1e-15);
        assert!(s.ground_projector[(0, 0)].norm() < 1e-15);
    }

    #[test]
    fn operator_norm_examples() {
        let mut x = Hamiltonian::<f64>::new(1).unwrap();
        x.add_one_local(0, PauliAxis::X, 1.0).unwrap();
        assert!((x.operator_norm().unwrap() - 1.0).abs() < 1e-12);
        let mut zz = Hamiltonian::<f64>::new(2).unwrap();
        zz.add_two_local(0, PauliAxis::Z, 1, PauliAxis::Z, 2.0).unwrap();
        assert!((zz.operator_norm().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn coefficients_that_cancel_are_dropped() {
        let mut h = Hamiltonian::<f64>::new(3).unwrap();
        h.add_two_local(2, PauliAxis::X, 0, PauliAxis::Z, 1.5).unwrap();
        assert_eq!(h.coupling(0, PauliAxis::Z, 2, PauliAxis::X), 1.5);
        h.add_two_local(0, PauliAxis::Z, 2, PauliAxis::X, -1.5).unwrap();
        assert!(h.is_empty());
        assert!(h.add_two_local(1, PauliAxis::X, 1, PauliAxis::X, 1.0).is_err());
        assert!(h.add_one_local(3, PauliAxis::X, 1.0).is_err());
    }

    #[test]
    fn family_validation() {
        let missing = FamilySpec::new(Family::XxzX1d, 4, &[("Jzz", 1.0)]);
        assert!(matches!(build_family::<f64>(&missing), Err(PauliError::ParamMismatch { .. })));
        let extra = FamilySpec::new(Family::Xxz1d, 4, &[("Jzz", 1.0), ("Kx", 0.0)]);
        assert!(build_family::<f64>(&extra).is_err());
        let wrong_n = FamilySpec::new(Family::Xxz2d33, 8, &[("Jzz1", 1.0), ("Jzz2", 1.0)]);
        assert!(matches!(build_family::<f64>(&wrong_n), Err(PauliError::SizeMismatch { .. })));
        let short = FamilySpec::new(Family::Xxz1d, 2, &[("Jzz", 1.0)]);
        assert!(matches!(build_family::<f64>(&short), Err(PauliError::TooFewSites { .. })));
        assert!("nonsense".parse::<Family>().is_err());
        assert_eq!("XXZ_X1D".parse::<Family>().unwrap(), Family::XxzX1d);
    }

    #[test]
    fn lattice_edge_sets() {
        let (nn, nnn) = lattice_edges(3, 3);
        assert_eq!(nn.len(), 12);
        assert_eq!(nnn.len(), 8);
        assert!(nn.contains(&(0, 1)) && nn.contains(&(0, 3)) && !nn.contains(&(0, 4)));
        assert!(nnn.contains(&(0, 4)) && nnn.contains(&(1, 3)));
        let h: Hamiltonian<f64> =
            build_family(&FamilySpec::new(Family::Xyz2d33, 9, &[("Jyy", 0.5), ("Jzz1", 1.0), ("Jzz2", -2.0)])).unwrap();
        assert_eq!(h.coupling(0, PauliAxis::Y, 1, PauliAxis::Y), 0.5);
        assert_eq!(h.coupling(0, PauliAxis::Z, 4, PauliAxis::Z), -2.0);
        assert_eq!(h.two_local().len(), 60);
    }

    #[test]
    fn json_layout() {
        let mut h = Hamiltonian::<f64>::new(2).unwrap();
        h.add_two_local(0, PauliAxis::X, 1, PauliAxis::Z, 0.1).unwrap();
        h.add_one_local(1, PauliAxis::Y, -2.5).unwrap();
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, r#"{"n":2,"two_local":[[0,1,"xz",0.1]],"one_local":[[1,"y",-2.5]]}"#);
        let back: Hamiltonian<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<Hamiltonian<f64>>(r#"{"n":2,"two_local":[[0,1,"q",1.0]],"one_local":[]}"#).is_err());
    }
}
