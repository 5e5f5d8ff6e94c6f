//! Pauli algebra, many-body operator construction, initial product states,
//! and the physicality projection for density matrices.
//!
//! Conventions fixed here and relied on everywhere else:
//!
//! * Site 0 is the leftmost Kronecker factor, i.e. the most significant bit
//!   of a computational-basis index or measured bitstring.
//! * `Z|0> = +|0>`, so the +1 eigenstate of Z is the first basis vector.
//! * The Y-basis rotation is `H S†` per site (any unitary mapping the Y
//!   eigenbasis to Z would do; one is fixed for bit-exact reproducibility).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{C64, CMat};

/// Largest system size for which dense many-body operators are built.
pub const MAX_QUBITS: usize = 6;

const ZERO: C64 = Complex64::new(0.0, 0.0);
const ONE: C64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(c: char) -> Option<Pauli> {
        match c {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// The standard single-qubit Pauli matrix.
pub fn pauli_matrix(label: Pauli) -> CMat {
    let i = Complex64::new(0.0, 1.0);
    match label {
        Pauli::I => CMat::from_rows(&[&[ONE, ZERO], &[ZERO, ONE]]),
        Pauli::X => CMat::from_rows(&[&[ZERO, ONE], &[ONE, ZERO]]),
        Pauli::Y => CMat::from_rows(&[&[ZERO, -i], &[i, ZERO]]),
        Pauli::Z => CMat::from_rows(&[&[ONE, ZERO], &[ZERO, -ONE]]),
    }
}

/// A length-N word over {I, X, Y, Z}; site 0 first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString(pub Vec<Pauli>);

impl PauliString {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_identity(&self) -> bool {
        self.0.contains(&Pauli::I)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.0 {
            write!(f, "{}", p.to_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let labels: Option<Vec<Pauli>> = s.chars().map(Pauli::from_char).collect();
        match labels {
            Some(v) if !v.is_empty() => Ok(PauliString(v)),
            _ => Err(Error::InvalidConfig(format!("bad Pauli string '{s}'"))),
        }
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig("system size must be >= 1".into()));
    }
    if n > MAX_QUBITS {
        return Err(Error::TooManyQubits { n, max: MAX_QUBITS });
    }
    Ok(())
}

/// Dense 2^N x 2^N operator for a Pauli word, site 0 leftmost.
pub fn string_operator(ps: &PauliString) -> Result<CMat> {
    check_size(ps.len())?;
    let mut op = pauli_matrix(ps.0[0]);
    for &p in &ps.0[1..] {
        op = op.kron(&pauli_matrix(p));
    }
    Ok(op)
}

/// `I ⊗ ... ⊗ op ⊗ ... ⊗ I` with `op` at position `site`.
pub fn embed_single_site(op: &CMat, site: usize, n: usize) -> Result<CMat> {
    check_size(n)?;
    if site >= n {
        return Err(Error::SiteOutOfRange { site, n });
    }
    assert_eq!(op.dim(), 2, "embed_single_site expects a single-qubit operator");
    let mut out = CMat::identity(1);
    for k in 0..n {
        if k == site {
            out = out.kron(op);
        } else {
            out = out.kron(&CMat::identity(2));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn pauli(self) -> Pauli {
        match self {
            Axis::X => Pauli::X,
            Axis::Y => Pauli::Y,
            Axis::Z => Pauli::Z,
        }
    }
}

/// A product eigenstate of single-qubit Paulis: per site an axis and a sign.
///
/// Text form: per-site tokens like `x+`, `y-`, `z+` joined by commas.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialStateSpec(pub Vec<(Axis, i8)>);

impl InitialStateSpec {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for InitialStateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tokens: Vec<String> = self
            .0
            .iter()
            .map(|(axis, sign)| {
                let a = match axis {
                    Axis::X => 'x',
                    Axis::Y => 'y',
                    Axis::Z => 'z',
                };
                format!("{}{}", a, if *sign >= 0 { '+' } else { '-' })
            })
            .collect();
        write!(f, "{}", tokens.join(","))
    }
}

impl FromStr for InitialStateSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut sites = Vec::new();
        for tok in s.split(',') {
            let mut chars = tok.chars();
            let axis = match chars.next() {
                Some('x') => Axis::X,
                Some('y') => Axis::Y,
                Some('z') => Axis::Z,
                _ => return Err(Error::InvalidConfig(format!("bad state token '{tok}'"))),
            };
            let sign = match chars.next() {
                Some('+') => 1,
                Some('-') => -1,
                _ => return Err(Error::InvalidConfig(format!("bad state token '{tok}'"))),
            };
            if chars.next().is_some() {
                return Err(Error::InvalidConfig(format!("bad state token '{tok}'")));
            }
            sites.push((axis, sign));
        }
        if sites.is_empty() {
            return Err(Error::InvalidConfig("empty initial-state spec".into()));
        }
        Ok(InitialStateSpec(sites))
    }
}

/// Hermitian, unit-trace state of a register of qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    mat: CMat,
    n: usize,
}

impl DensityMatrix {
    /// Wraps a matrix believed to already satisfy the state invariants
    /// (Hermitian, unit trace). Debug builds verify.
    pub fn from_valid(mat: CMat, n: usize) -> Self {
        debug_assert_eq!(mat.dim(), 1 << n);
        debug_assert!((mat.trace() - ONE).norm() < 1e-8);
        debug_assert!(mat.hermiticity_deviation() < 1e-8);
        DensityMatrix { mat, n }
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }
}

/// Rank-1 projector onto the product eigenstate; per-site factor
/// `(I + sign * sigma_axis) / 2`.
pub fn product_eigenstate(spec: &InitialStateSpec) -> Result<DensityMatrix> {
    let n = spec.len();
    check_size(n)?;
    let mut rho = CMat::identity(1);
    for &(axis, sign) in &spec.0 {
        let sigma = pauli_matrix(axis.pauli());
        let factor = CMat::identity(2)
            .add(&sigma.scale(Complex64::new(sign as f64, 0.0)))
            .scale(Complex64::new(0.5, 0.0));
        rho = rho.kron(&factor);
    }
    Ok(DensityMatrix::from_valid(rho, n))
}

/// Normalize trace to one and average with the conjugate transpose,
/// `((M / tr M) + (M / tr M)†) / 2`. Positivity is not enforced.
///
/// A near-zero trace means the trajectory diverged; reported as an error.
pub fn project_physical(m: &CMat) -> Result<CMat> {
    let tr = m.trace();
    if tr.norm() <= 1e-12 {
        return Err(Error::DivergedTrajectory { trace_mag: tr.norm(), t: f64::NAN });
    }
    let scaled = m.scale(ONE / tr);
    Ok(scaled.hermitian_part())
}

/// Reverse-mode derivative of [`project_physical`].
///
/// For `f(M) = ((M/t) + (M/t)†)/2`, `t = tr M`, and cotangent `W` under the
/// real inner product, the input cotangent is
/// `S / conj(t) - conj(tr(S† M) / t^2) * I` with `S = (W + W†)/2`.
pub fn project_physical_vjp(m: &CMat, w: &CMat) -> CMat {
    let t = m.trace();
    let s = w.hermitian_part();
    let mut out = s.scale(ONE / t.conj());
    // tr(S† M)
    let d = m.dim();
    let mut tr_sm = ZERO;
    for i in 0..d {
        for j in 0..d {
            tr_sm += s[(j, i)].conj() * m[(j, i)];
        }
    }
    let coeff = -(tr_sm / (t * t)).conj();
    for i in 0..d {
        out[(i, i)] += coeff;
    }
    out
}

/// Unitary mapping measurement in `basis` to the computational basis:
/// per-site factors Z -> I, X -> H, Y -> H S†.
pub fn basis_rotation(basis: &PauliString) -> Result<CMat> {
    check_size(basis.len())?;
    if basis.has_identity() {
        return Err(Error::IdentityInBasis);
    }
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let h = CMat::from_rows(&[
        &[Complex64::new(inv_sqrt2, 0.0), Complex64::new(inv_sqrt2, 0.0)],
        &[Complex64::new(inv_sqrt2, 0.0), Complex64::new(-inv_sqrt2, 0.0)],
    ]);
    // H S† = (1/sqrt2) [[1, -i], [1, i]]
    let hsd = CMat::from_rows(&[
        &[Complex64::new(inv_sqrt2, 0.0), Complex64::new(0.0, -inv_sqrt2)],
        &[Complex64::new(inv_sqrt2, 0.0), Complex64::new(0.0, inv_sqrt2)],
    ]);
    let mut u = CMat::identity(1);
    for &p in &basis.0 {
        let factor = match p {
            Pauli::Z => CMat::identity(2),
            Pauli::X => h.clone(),
            Pauli::Y => hsd.clone(),
            Pauli::I => unreachable!(),
        };
        u = u.kron(&factor);
    }
    Ok(u)
}

/// Sparse row representation of one N-site Pauli word: the operator is a
/// signed permutation, `P[i, col[i]] = phase[i]`.
#[derive(Clone, Debug)]
pub struct SparsePauli {
    pub col: Vec<usize>,
    pub phase: Vec<C64>,
}

/// Enumeration of all 4^N Pauli words with the identity word first.
///
/// Word index j is read as N base-4 digits (site 0 most significant) with
/// digit order (I, X, Y, Z), so j = 0 is `I...I`.
pub struct PauliTable {
    pub n: usize,
    pub words: Vec<SparsePauli>,
}

impl PauliTable {
    pub fn new(n: usize) -> Result<PauliTable> {
        check_size(n)?;
        let dim = 1usize << n;
        let count = 1usize << (2 * n);
        let mut words = Vec::with_capacity(count);
        for j in 0..count {
            // Decode base-4 digits, site 0 most significant.
            let mut labels = vec![Pauli::I; n];
            let mut rem = j;
            for site in (0..n).rev() {
                labels[site] = match rem % 4 {
                    0 => Pauli::I,
                    1 => Pauli::X,
                    2 => Pauli::Y,
                    _ => Pauli::Z,
                };
                rem /= 4;
            }
            let mut col = vec![0usize; dim];
            let mut phase = vec![ONE; dim];
            for row in 0..dim {
                let mut c = 0usize;
                let mut ph = ONE;
                for (site, &label) in labels.iter().enumerate() {
                    let bit = (row >> (n - 1 - site)) & 1;
                    let (colbit, f) = match label {
                        Pauli::I => (bit, ONE),
                        Pauli::X => (bit ^ 1, ONE),
                        // Y[0,1] = -i, Y[1,0] = +i
                        Pauli::Y => (
                            bit ^ 1,
                            if bit == 0 {
                                Complex64::new(0.0, -1.0)
                            } else {
                                Complex64::new(0.0, 1.0)
                            },
                        ),
                        Pauli::Z => (bit, if bit == 0 { ONE } else { -ONE }),
                    };
                    c = (c << 1) | colbit;
                    ph *= f;
                }
                col[row] = c;
                phase[row] = ph;
            }
            words.push(SparsePauli { col, phase });
        }
        Ok(PauliTable { n, words })
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    /// `tr(P_j M)` for every word, divided by 2^N; real part only.
    pub fn coords(&self, m: &CMat) -> Vec<f64> {
        let dim = self.dim();
        let norm = 1.0 / dim as f64;
        self.words
            .iter()
            .map(|w| {
                let mut tr = ZERO;
                for row in 0..dim {
                    // (P M)_{row,row} = P[row, col] * M[col, row]
                    tr += w.phase[row] * m[(w.col[row], row)];
                }
                tr.re * norm
            })
            .collect()
    }

    /// `sum_j coeffs[j] P_j`; Hermitian for real coefficients.
    pub fn assemble(&self, coeffs: &[f64]) -> CMat {
        assert_eq!(coeffs.len(), self.word_count());
        let dim = self.dim();
        let mut out = CMat::zeros(dim);
        for (w, &c) in self.words.iter().zip(coeffs.iter()) {
            if c == 0.0 {
                continue;
            }
            for row in 0..dim {
                out[(row, w.col[row])] += c * w.phase[row];
            }
        }
        out
    }

    /// Adjoint of [`Self::coords`] under the real inner product:
    /// `sum_j cbar[j] P_j / 2^N`.
    pub fn coords_vjp(&self, cbar: &[f64]) -> CMat {
        let dim = self.dim();
        let norm = 1.0 / dim as f64;
        let scaled: Vec<f64> = cbar.iter().map(|c| c * norm).collect();
        self.assemble(&scaled)
    }

    /// Adjoint of [`Self::assemble`]: `cbar[j] = Re tr(P_j W)`.
    pub fn assemble_vjp(&self, w: &CMat) -> Vec<f64> {
        let dim = self.dim();
        self.words
            .iter()
            .map(|word| {
                let mut tr = ZERO;
                for row in 0..dim {
                    tr += word.phase[row] * w[(word.col[row], row)];
                }
                tr.re
            })
            .collect()
    }
}
