//! Hamiltonian and dissipator families, the GKSL generator, and
//! ground-truth parameter sampling with the noise-to-unitary rescaling.
//!
//! Coefficient ordering is fixed per family and relied on by serialization,
//! training, and the recovery metrics:
//!
//! * Rydberg: `[omega, delta, c_pair...]` in pair-list order, where `c_pair`
//!   multiplies `Z_i Z_j` and the true value is `C6 / r_ij^6`.
//! * Superconducting: `[h_0 .. h_{N-1}, zeta_edge...]` in edge-list order.
//! * XYZ: per bond `[Jx_i, Jy_i, Jz_i]` for i = 0..N-2, then fields
//!   `[h_0 .. h_{N-1}]`.
//! * PXP: `[J_i]` for the interior sites i = 1..N-2 (zero-based).
//!
//! Jump-operator ordering: phase noise contributes `Z` per site in site
//! order; thermal noise contributes all lowering operators in site order,
//! then all raising operators; combined noise is the phase list followed by
//! the thermal list. Rate vectors index into this order.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, CMat};
use crate::neural::MlpParams;
use crate::spinops::{Pauli, embed_single_site, pauli_matrix};

const ONE: C64 = Complex64::new(1.0, 0.0);

/// Van der Waals coefficient for the Rydberg family, in um^6; the pair
/// interaction is C6 / r^6 with r in um.
pub const RYDBERG_C6: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HamiltonianFamily {
    Rydberg,
    Superconducting,
    Xyz,
    Pxp,
}

impl HamiltonianFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rydberg" => Ok(Self::Rydberg),
            "superconducting" => Ok(Self::Superconducting),
            "xyz" => Ok(Self::Xyz),
            "pxp" => Ok(Self::Pxp),
            _ => Err(Error::InvalidConfig(format!("unknown Hamiltonian family '{s}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Rydberg => "rydberg",
            Self::Superconducting => "superconducting",
            Self::Xyz => "xyz",
            Self::Pxp => "pxp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DissipatorFamily {
    Phase,
    Thermal,
    Combined,
}

impl DissipatorFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "phase" => Ok(Self::Phase),
            "thermal" => Ok(Self::Thermal),
            "combined" => Ok(Self::Combined),
            _ => Err(Error::InvalidConfig(format!("unknown dissipator family '{s}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Phase => "phase",
            Self::Thermal => "thermal",
            Self::Combined => "combined",
        }
    }
}

/// Structure of the coherent part: family plus realized geometry.
#[derive(Clone, Debug, PartialEq)]
pub enum HamiltonianSpec {
    /// 2D neutral-atom layout: per-atom positions in um and the interacting
    /// pair list (nearest + next-nearest neighbours of the ideal lattice).
    Rydberg { n: usize, positions: Vec<[f64; 2]>, pairs: Vec<(usize, usize)> },
    /// 1D chain with explicit edge list.
    Superconducting { n: usize, edges: Vec<(usize, usize)> },
    Xyz { n: usize },
    Pxp { n: usize },
}

impl HamiltonianSpec {
    pub fn n(&self) -> usize {
        match self {
            Self::Rydberg { n, .. }
            | Self::Superconducting { n, .. }
            | Self::Xyz { n }
            | Self::Pxp { n } => *n,
        }
    }

    pub fn family(&self) -> HamiltonianFamily {
        match self {
            Self::Rydberg { .. } => HamiltonianFamily::Rydberg,
            Self::Superconducting { .. } => HamiltonianFamily::Superconducting,
            Self::Xyz { .. } => HamiltonianFamily::Xyz,
            Self::Pxp { .. } => HamiltonianFamily::Pxp,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Self::Rydberg { pairs, .. } => 2 + pairs.len(),
            Self::Superconducting { n, edges } => n + edges.len(),
            Self::Xyz { n } => 3 * (n - 1) + n,
            Self::Pxp { n } => n.saturating_sub(2),
        }
    }

    /// Default nearest-neighbour chain edges for the 1D families.
    pub fn chain_edges(n: usize) -> Vec<(usize, usize)> {
        (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect()
    }

    /// The Hermitian basis operator multiplying each coefficient, in the
    /// documented order. `build_hamiltonian` is the weighted sum of these.
    pub fn terms(&self) -> Result<Vec<CMat>> {
        let n = self.n();
        let dim = 1usize << n;
        let half = Complex64::new(0.5, 0.0);
        match self {
            Self::Rydberg { pairs, .. } => {
                let mut terms = Vec::with_capacity(2 + pairs.len());
                // (1/2) sum_j X_j multiplies omega.
                let mut omega_term = CMat::zeros(dim);
                for j in 0..n {
                    omega_term.axpy(half, &embed_single_site(&pauli_matrix(Pauli::X), j, n)?);
                }
                terms.push(omega_term);
                // -sum_j Z_j multiplies delta.
                let mut delta_term = CMat::zeros(dim);
                for j in 0..n {
                    delta_term.axpy(-ONE, &embed_single_site(&pauli_matrix(Pauli::Z), j, n)?);
                }
                terms.push(delta_term);
                for &(i, j) in pairs {
                    terms.push(zz_pair(i, j, n)?);
                }
                Ok(terms)
            }
            Self::Superconducting { edges, .. } => {
                let mut terms = Vec::with_capacity(n + edges.len());
                for i in 0..n {
                    let zi = embed_single_site(&pauli_matrix(Pauli::Z), i, n)?;
                    terms.push(CMat::identity(dim).sub(&zi).scale(half));
                }
                for &(i, j) in edges {
                    terms.push(zz_pair(i, j, n)?.scale(half));
                }
                Ok(terms)
            }
            Self::Xyz { .. } => {
                let mut terms = Vec::with_capacity(4 * n.saturating_sub(1) + 1);
                for i in 0..n - 1 {
                    for p in [Pauli::X, Pauli::Y, Pauli::Z] {
                        let a = embed_single_site(&pauli_matrix(p), i, n)?;
                        let b = embed_single_site(&pauli_matrix(p), i + 1, n)?;
                        terms.push(a.matmul(&b));
                    }
                }
                for i in 0..n {
                    terms.push(embed_single_site(&pauli_matrix(Pauli::X), i, n)?);
                }
                Ok(terms)
            }
            Self::Pxp { .. } => {
                // P_{i-1} X_i P_{i+1} with P = |0><0|.
                let proj = CMat::from_rows(&[
                    &[ONE, Complex64::new(0.0, 0.0)],
                    &[Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
                ]);
                let mut terms = Vec::new();
                for i in 1..n.saturating_sub(1) {
                    let left = embed_single_site(&proj, i - 1, n)?;
                    let x = embed_single_site(&pauli_matrix(Pauli::X), i, n)?;
                    let right = embed_single_site(&proj, i + 1, n)?;
                    terms.push(left.matmul(&x).matmul(&right));
                }
                Ok(terms)
            }
        }
    }
}

fn zz_pair(i: usize, j: usize, n: usize) -> Result<CMat> {
    let zi = embed_single_site(&pauli_matrix(Pauli::Z), i, n)?;
    let zj = embed_single_site(&pauli_matrix(Pauli::Z), j, n)?;
    Ok(zi.matmul(&zj))
}

/// Structure of the dissipative part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipatorSpec {
    pub family: DissipatorFamily,
    pub n: usize,
}

impl DissipatorSpec {
    pub fn jump_count(&self) -> usize {
        match self.family {
            DissipatorFamily::Phase => self.n,
            DissipatorFamily::Thermal => 2 * self.n,
            DissipatorFamily::Combined => 3 * self.n,
        }
    }
}

/// Full white-box ansatz structure: which Pauli terms and jump operators
/// appear. Coefficients are supplied separately.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub hamiltonian: HamiltonianSpec,
    pub dissipator: DissipatorSpec,
}

impl ModelSpec {
    pub fn new(hamiltonian: HamiltonianSpec, dissipator: DissipatorFamily) -> Self {
        let n = hamiltonian.n();
        ModelSpec { hamiltonian, dissipator: DissipatorSpec { family: dissipator, n } }
    }

    pub fn n(&self) -> usize {
        self.hamiltonian.n()
    }

    pub fn dim(&self) -> usize {
        1 << self.n()
    }
}

/// The full variational point: Hamiltonian coefficients, unconstrained
/// dissipative pre-rates (softplus-mapped to physical rates), and optional
/// neural weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub hamiltonian_coeffs: Vec<f64>,
    pub raw_rates: Vec<f64>,
    pub neural: Option<MlpParams>,
}

impl GeneratorParams {
    pub fn rates(&self) -> Vec<f64> {
        rates_from_raw(&self.raw_rates)
    }

    /// Flattened layout `[hamiltonian | raw rates | neural]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.hamiltonian_coeffs.clone();
        v.extend_from_slice(&self.raw_rates);
        if let Some(mlp) = &self.neural {
            v.extend(mlp.flatten());
        }
        v
    }

    pub fn unflatten_like(&self, flat: &[f64]) -> GeneratorParams {
        let nh = self.hamiltonian_coeffs.len();
        let nl = self.raw_rates.len();
        let neural = self.neural.as_ref().map(|mlp| {
            let mut m = mlp.clone();
            m.set_flat(&flat[nh + nl..]);
            m
        });
        assert_eq!(flat.len(), nh + nl + neural.as_ref().map_or(0, |m| m.parameter_count()));
        GeneratorParams {
            hamiltonian_coeffs: flat[..nh].to_vec(),
            raw_rates: flat[nh..nh + nl].to_vec(),
            neural,
        }
    }
}

/// Experiment definition prior to geometry realization.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub family: HamiltonianFamily,
    pub n: usize,
    pub dissipator: DissipatorFamily,
    /// Noise-to-unitary ratio R = |gamma|_1 / |theta_H|_1 after rescaling.
    pub noise_ratio: f64,
    pub seed: u64,
}

/// Sampled ground truth: realized model structure plus true coefficients.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub model: ModelSpec,
    pub hamiltonian_coeffs: Vec<f64>,
    /// Physical rates, after noise-to-unitary rescaling.
    pub rates: Vec<f64>,
}

/// Softplus `log(1 + e^x)`, stable for large |x|.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() }
}

/// Logistic sigmoid; the derivative of [`softplus`].
pub fn softplus_prime(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Elementwise softplus mapping pre-rates to strictly positive rates.
pub fn rates_from_raw(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|&t| softplus(t)).collect()
}

/// Elementwise inverse softplus `log(e^g - 1)`; requires g > 0.
pub fn raw_from_rates(rates: &[f64]) -> Result<Vec<f64>> {
    rates
        .iter()
        .map(|&g| {
            if g <= 0.0 { Err(Error::NonPositiveRate(g)) } else { Ok(g.exp_m1().ln()) }
        })
        .collect()
}

/// `H(theta) = sum_k theta_k B_k` over the family's term list.
pub fn build_hamiltonian(spec: &HamiltonianSpec, coeffs: &[f64]) -> Result<CMat> {
    if coeffs.len() != spec.parameter_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} family expects {} coefficients, got {}",
            spec.family().name(),
            spec.parameter_count(),
            coeffs.len()
        )));
    }
    let terms = spec.terms()?;
    let mut h = CMat::zeros(1 << spec.n());
    for (term, &c) in terms.iter().zip(coeffs.iter()) {
        h.axpy(Complex64::new(c, 0.0), term);
    }
    Ok(h)
}

/// Jump operators in the documented fixed order.
pub fn build_jump_operators(spec: &DissipatorSpec) -> Result<Vec<CMat>> {
    let n = spec.n;
    // The lowering operator |0><1| decays |1> -> |0> (amplitude damping
    // under the Z|0> = +|0> convention); raising is its adjoint.
    let zero = Complex64::new(0.0, 0.0);
    let lower = CMat::from_rows(&[&[zero, ONE], &[zero, zero]]);
    let raise = lower.adjoint();
    let mut ops = Vec::with_capacity(spec.jump_count());
    let push_phase = |ops: &mut Vec<CMat>| -> Result<()> {
        for i in 0..n {
            ops.push(embed_single_site(&pauli_matrix(Pauli::Z), i, n)?);
        }
        Ok(())
    };
    let push_thermal = |ops: &mut Vec<CMat>| -> Result<()> {
        for i in 0..n {
            ops.push(embed_single_site(&lower, i, n)?);
        }
        for i in 0..n {
            ops.push(embed_single_site(&raise, i, n)?);
        }
        Ok(())
    };
    match spec.family {
        DissipatorFamily::Phase => push_phase(&mut ops)?,
        DissipatorFamily::Thermal => push_thermal(&mut ops)?,
        DissipatorFamily::Combined => {
            push_phase(&mut ops)?;
            push_thermal(&mut ops)?;
        }
    }
    Ok(ops)
}

/// GKSL right-hand side for explicit operator lists and physical rates:
/// `-i[H, rho] + sum_a rates[a] (L rho L† - (1/2){L†L, rho})`.
pub fn apply_gksl(h: &CMat, jumps: &[CMat], rates: &[f64], rho: &CMat) -> CMat {
    assert_eq!(jumps.len(), rates.len());
    let minus_i = Complex64::new(0.0, -1.0);
    let half = Complex64::new(0.5, 0.0);
    let mut out = h.matmul(rho);
    out.axpy(-ONE, &rho.matmul(h));
    out = out.scale(minus_i);
    for (l, &g) in jumps.iter().zip(rates.iter()) {
        if g == 0.0 {
            continue;
        }
        let l_adj = l.adjoint();
        let sandwich = l.matmul(rho).matmul(&l_adj);
        let lsq = l_adj.matmul(l);
        let anti = lsq.matmul(rho).add(&rho.matmul(&lsq)).scale(half);
        out.axpy(Complex64::new(g, 0.0), &sandwich.sub(&anti));
    }
    out
}

/// The physical generator with softplus-mapped rates:
/// `-i[H(theta_H), rho] + sum_a softplus(theta_L[a]) D_a[rho]`.
pub fn apply_physical_generator(
    model: &ModelSpec,
    theta_h: &[f64],
    theta_l: &[f64],
    rho: &CMat,
) -> Result<CMat> {
    if theta_l.len() != model.dissipator.jump_count() {
        return Err(Error::DimensionMismatch(format!(
            "dissipator expects {} rates, got {}",
            model.dissipator.jump_count(),
            theta_l.len()
        )));
    }
    if rho.dim() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state dim {} does not match model dim {}",
            rho.dim(),
            model.dim()
        )));
    }
    let h = build_hamiltonian(&model.hamiltonian, theta_h)?;
    let jumps = build_jump_operators(&model.dissipator)?;
    let rates = rates_from_raw(theta_l);
    Ok(apply_gksl(&h, &jumps, &rates, rho))
}

/// Rescale rates so `|gamma|_1 / |theta_H|_1 = ratio` exactly.
pub fn rescale_noise_to_ratio(theta_h: &[f64], rates: &[f64], ratio: f64) -> Result<Vec<f64>> {
    let h_norm: f64 = theta_h.iter().map(|c| c.abs()).sum();
    let g_norm: f64 = rates.iter().map(|g| g.abs()).sum();
    if h_norm <= 0.0 {
        return Err(Error::InvalidConfig(
            "cannot rescale noise against a zero-norm Hamiltonian".into(),
        ));
    }
    if ratio <= 0.0 {
        return Err(Error::InvalidConfig("noise-to-unitary ratio must be > 0".into()));
    }
    if g_norm <= 0.0 {
        return Err(Error::InvalidConfig("cannot rescale a zero rate vector".into()));
    }
    let s = ratio * h_norm / g_norm;
    Ok(rates.iter().map(|g| g * s).collect())
}

/// Row lengths of the compact triangular patch used for N <= 6 atoms.
fn triangular_rows(n: usize) -> Vec<usize> {
    match n {
        1 => vec![1],
        2 => vec![2],
        3 => vec![2, 1],
        4 => vec![2, 2],
        5 => vec![2, 3],
        _ => vec![2, 3, 1],
    }
}

/// Ideal triangular-lattice positions (odd rows offset by a/2) and the pair
/// list selected by ideal distance <= 1.1 * sqrt(3) * a, which keeps the
/// nearest (a) and next-nearest (sqrt(3) a) shells and excludes 2a.
fn triangular_layout(n: usize, spacing: f64) -> (Vec<[f64; 2]>, Vec<(usize, usize)>) {
    let mut ideal = Vec::with_capacity(n);
    let row_height = spacing * 3.0f64.sqrt() / 2.0;
    'outer: for (r, &len) in triangular_rows(n).iter().enumerate() {
        for j in 0..len {
            let x = j as f64 * spacing + if r % 2 == 1 { spacing / 2.0 } else { 0.0 };
            ideal.push([x, r as f64 * row_height]);
            if ideal.len() == n {
                break 'outer;
            }
        }
    }
    let cutoff = 1.1 * 3.0f64.sqrt() * spacing;
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = ideal[i][0] - ideal[j][0];
            let dy = ideal[i][1] - ideal[j][1];
            if (dx * dx + dy * dy).sqrt() <= cutoff {
                pairs.push((i, j));
            }
        }
    }
    (ideal, pairs)
}

/// Sample a ground-truth generator for the experiment. Draw order is fixed:
/// geometry (Rydberg only: spacing, then per-atom jitter x,y), Hamiltonian
/// coefficients in family order, then one rate per jump operator, then the
/// noise-to-unitary rescaling.
pub fn sample_true_params<R: Rng>(config: &ExperimentConfig, rng: &mut R) -> Result<GroundTruth> {
    let n = config.n;
    let (spec, theta_h) = match config.family {
        HamiltonianFamily::Rydberg => {
            let spacing = rng.random_range(9.0..11.0);
            let (ideal, pairs) = triangular_layout(n, spacing);
            let jitter = 0.05 * spacing;
            let positions: Vec<[f64; 2]> = ideal
                .iter()
                .map(|p| {
                    [
                        p[0] + rng.random_range(-jitter..jitter),
                        p[1] + rng.random_range(-jitter..jitter),
                    ]
                })
                .collect();
            let omega = rng.random_range(0.0..1.0);
            let delta = rng.random_range(-4.0..4.0);
            let mut theta = vec![omega, delta];
            for &(i, j) in &pairs {
                let dx = positions[i][0] - positions[j][0];
                let dy = positions[i][1] - positions[j][1];
                let r = (dx * dx + dy * dy).sqrt();
                theta.push(RYDBERG_C6 / r.powi(6));
            }
            (HamiltonianSpec::Rydberg { n, positions, pairs }, theta)
        }
        HamiltonianFamily::Superconducting => {
            let edges = HamiltonianSpec::chain_edges(n);
            let field = Normal::new(0.0, 10.0).expect("valid normal");
            let coupling = Normal::new(-30.0, 10.0).expect("valid normal");
            let mut theta = Vec::with_capacity(n + edges.len());
            for _ in 0..n {
                theta.push(field.sample(rng) / 100.0);
            }
            for _ in 0..edges.len() {
                theta.push(coupling.sample(rng) / 100.0);
            }
            (HamiltonianSpec::Superconducting { n, edges }, theta)
        }
        HamiltonianFamily::Xyz => {
            let spec = HamiltonianSpec::Xyz { n };
            let theta =
                (0..spec.parameter_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            (spec, theta)
        }
        HamiltonianFamily::Pxp => {
            let spec = HamiltonianSpec::Pxp { n };
            let theta =
                (0..spec.parameter_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            (spec, theta)
        }
    };
    let model = ModelSpec::new(spec, config.dissipator);
    let drawn_rates: Vec<f64> =
        (0..model.dissipator.jump_count()).map(|_| rng.random_range(0.2..1.0)).collect();
    let rates = rescale_noise_to_ratio(&theta_h, &drawn_rates, config.noise_ratio)?;
    Ok(GroundTruth { model, hamiltonian_coeffs: theta_h, rates })
}

// ---------------------------------------------------------------------------
// Serialized descriptors (JSON shapes shared by configs, datasets, run dirs)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GeometryJson {
    pub positions: Vec<[f64; 2]>,
    pub pairs: Vec<[usize; 2]>,
}

/// JSON form of a model structure plus experiment-level metadata.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelDescriptor {
    pub family: HamiltonianFamily,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    pub dissipator: DissipatorFamily,
    pub r: f64,
    pub seed: u64,
}

impl ModelDescriptor {
    pub fn from_model(model: &ModelSpec, r: f64, seed: u64) -> Self {
        let (geometry, edges) = match &model.hamiltonian {
            HamiltonianSpec::Rydberg { positions, pairs, .. } => (
                Some(GeometryJson {
                    positions: positions.clone(),
                    pairs: pairs.iter().map(|&(i, j)| [i, j]).collect(),
                }),
                None,
            ),
            HamiltonianSpec::Superconducting { edges, .. } => {
                (None, Some(edges.iter().map(|&(i, j)| [i, j]).collect()))
            }
            _ => (None, None),
        };
        ModelDescriptor {
            family: model.hamiltonian.family(),
            n: model.n(),
            geometry,
            edges,
            dissipator: model.dissipator.family,
            r,
            seed,
        }
    }

    pub fn to_model(&self) -> Result<ModelSpec> {
        let n = self.n;
        let hamiltonian = match self.family {
            HamiltonianFamily::Rydberg => {
                let g = self
                    .geometry
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("rydberg model requires geometry".into()))?;
                HamiltonianSpec::Rydberg {
                    n,
                    positions: g.positions.clone(),
                    pairs: g.pairs.iter().map(|p| (p[0], p[1])).collect(),
                }
            }
            HamiltonianFamily::Superconducting => {
                let edges = self
                    .edges
                    .clone()
                    .map(|e| e.iter().map(|p| (p[0], p[1])).collect())
                    .unwrap_or_else(|| HamiltonianSpec::chain_edges(n));
                HamiltonianSpec::Superconducting { n, edges }
            }
            HamiltonianFamily::Xyz => HamiltonianSpec::Xyz { n },
            HamiltonianFamily::Pxp => HamiltonianSpec::Pxp { n },
        };
        Ok(ModelSpec::new(hamiltonian, self.dissipator))
    }
}

/// Serialized ground-truth coefficients in the documented index order.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TruthJson {
    pub theta_h: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Cached operator structure for repeated generator applications: the term
/// matrices, jump operators, their adjoints, and the products L†L.
pub struct GeneratorOps {
    pub model: ModelSpec,
    pub terms: Vec<CMat>,
    pub jumps: Vec<CMat>,
    pub jump_adjoints: Vec<CMat>,
    pub jump_squares: Vec<CMat>,
}

impl GeneratorOps {
    pub fn new(model: &ModelSpec) -> Result<GeneratorOps> {
        let terms = model.hamiltonian.terms()?;
        let jumps = build_jump_operators(&model.dissipator)?;
        let jump_adjoints: Vec<CMat> = jumps.iter().map(|l| l.adjoint()).collect();
        let jump_squares: Vec<CMat> =
            jumps.iter().zip(jump_adjoints.iter()).map(|(l, la)| la.matmul(l)).collect();
        Ok(GeneratorOps { model: model.clone(), terms, jumps, jump_adjoints, jump_squares })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn assemble_hamiltonian(&self, coeffs: &[f64]) -> CMat {
        assert_eq!(coeffs.len(), self.terms.len());
        let mut h = CMat::zeros(self.dim());
        for (term, &c) in self.terms.iter().zip(coeffs.iter()) {
            h.axpy(Complex64::new(c, 0.0), term);
        }
        h
    }
}
