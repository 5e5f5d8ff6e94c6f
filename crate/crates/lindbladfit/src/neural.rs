//! Neural correction term: a shallow MLP vector field on the Pauli-basis
//! real coordinates of the state.
//!
//! The state is mapped to the 4^N real coefficients `tr(P_j rho) / 2^N`,
//! pushed through one hidden layer with a scaled softplus activation, and
//! mapped back as a real Pauli combination with the identity component
//! zeroed. The output is therefore exactly Hermitian and exactly traceless
//! for every weight setting, so the combined generator preserves trace and
//! Hermiticity of trajectories up to integrator error. The real part of the
//! trace is taken when reading coordinates, which keeps the guarantee even
//! for the slightly non-Hermitian raw states seen inside the solver.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{ModelSpec, apply_physical_generator};
use crate::linalg::CMat;
use crate::spinops::PauliTable;

/// Weights of the one-hidden-layer MLP `W2 f(W1 x + b1) + b2`.
///
/// Flattened parameter order: `w1` row-major, `b1`, `w2` row-major, `b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        MlpParams {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; output_dim * hidden_dim],
            b2: vec![0.0; output_dim],
        }
    }

    /// Hidden layer uniform in (-1/sqrt(d_in), 1/sqrt(d_in)); output layer
    /// zeroed so the correction starts at exactly zero.
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut mlp = MlpParams::zeros(input_dim, hidden_dim, input_dim);
        let bound = 1.0 / (input_dim as f64).sqrt();
        for w in mlp.w1.iter_mut() {
            *w = rng.random_range(-bound..bound);
        }
        for b in mlp.b1.iter_mut() {
            *b = rng.random_range(-bound..bound);
        }
        mlp
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.parameter_count());
        let (n1, n2, n3) = (self.w1.len(), self.b1.len(), self.w2.len());
        self.w1.copy_from_slice(&flat[..n1]);
        self.b1.copy_from_slice(&flat[n1..n1 + n2]);
        self.w2.copy_from_slice(&flat[n1 + n2..n1 + n2 + n3]);
        self.b2.copy_from_slice(&flat[n1 + n2 + n3..]);
    }

    pub fn squared_norm(&self) -> f64 {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).map(|w| w * w).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpJson {
    widths: Vec<usize>,
    layers: Vec<LayerJson>,
}

impl Serialize for MlpParams {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let doc = MlpJson {
            widths: vec![self.input_dim, self.hidden_dim, self.output_dim],
            layers: vec![
                LayerJson { w: self.w1.clone(), b: self.b1.clone() },
                LayerJson { w: self.w2.clone(), b: self.b2.clone() },
            ],
        };
        doc.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MlpParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = MlpJson::deserialize(deserializer)?;
        if doc.widths.len() != 3 || doc.layers.len() != 2 {
            return Err(serde::de::Error::custom("MLP must have exactly one hidden layer"));
        }
        let mlp = MlpParams {
            input_dim: doc.widths[0],
            hidden_dim: doc.widths[1],
            output_dim: doc.widths[2],
            w1: doc.layers[0].w.clone(),
            b1: doc.layers[0].b.clone(),
            w2: doc.layers[1].w.clone(),
            b2: doc.layers[1].b.clone(),
        };
        if mlp.w1.len() != mlp.hidden_dim * mlp.input_dim
            || mlp.b1.len() != mlp.hidden_dim
            || mlp.w2.len() != mlp.output_dim * mlp.hidden_dim
            || mlp.b2.len() != mlp.output_dim
        {
            return Err(serde::de::Error::custom("MLP layer shapes inconsistent with widths"));
        }
        Ok(mlp)
    }
}

impl MlpParams {
    pub fn to_json(&self) -> String {
        let doc = MlpJson {
            widths: vec![self.input_dim, self.hidden_dim, self.output_dim],
            layers: vec![
                LayerJson { w: self.w1.clone(), b: self.b1.clone() },
                LayerJson { w: self.w2.clone(), b: self.b2.clone() },
            ],
        };
        serde_json::to_string(&doc).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<MlpParams> {
        let doc: MlpJson = serde_json::from_str(s)?;
        if doc.widths.len() != 3 || doc.layers.len() != 2 {
            return Err(Error::InvalidConfig("MLP must have exactly one hidden layer".into()));
        }
        let (d_in, d_hid, d_out) = (doc.widths[0], doc.widths[1], doc.widths[2]);
        let mlp = MlpParams {
            input_dim: d_in,
            hidden_dim: d_hid,
            output_dim: d_out,
            w1: doc.layers[0].w.clone(),
            b1: doc.layers[0].b.clone(),
            w2: doc.layers[1].w.clone(),
            b2: doc.layers[1].b.clone(),
        };
        if mlp.w1.len() != d_hid * d_in
            || mlp.b1.len() != d_hid
            || mlp.w2.len() != d_out * d_hid
            || mlp.b2.len() != d_out
        {
            return Err(Error::InvalidConfig("MLP layer shapes inconsistent with widths".into()));
        }
        Ok(mlp)
    }
}

/// Scaled softplus `f(x) = (1/5) log(1 + e^{5x})`, stable for large |5x|.
pub fn scaled_softplus(x: f64) -> f64 {
    crate::generators::softplus(5.0 * x) / 5.0
}

/// Derivative of [`scaled_softplus`]: the logistic sigmoid of 5x.
pub fn scaled_softplus_prime(x: f64) -> f64 {
    1.0 / (1.0 + (-5.0 * x).exp())
}

/// Pauli coordinates `tr(P_j rho) / 2^N` (real parts), identity word first.
pub fn to_pauli_coords(table: &PauliTable, rho: &CMat) -> Vec<f64> {
    table.coords(rho)
}

/// Real Pauli combination `sum_j coeffs[j] P_j`; Hermitian by construction.
pub fn from_pauli_coords(table: &PauliTable, coeffs: &[f64]) -> Result<CMat> {
    if coeffs.len() != table.word_count() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} Pauli coefficients, got {}",
            table.word_count(),
            coeffs.len()
        )));
    }
    Ok(table.assemble(coeffs))
}

/// Intermediate activations kept for the backward pass.
pub struct MlpTape {
    pub x: Vec<f64>,
    pub pre: Vec<f64>,
    pub hid: Vec<f64>,
}

/// MLP forward on raw coordinate vectors with the identity output zeroed.
#[allow(clippy::needless_range_loop)]
pub fn mlp_forward(mlp: &MlpParams, x: &[f64]) -> (Vec<f64>, MlpTape) {
    assert_eq!(x.len(), mlp.input_dim);
    let mut pre = mlp.b1.clone();
    for h in 0..mlp.hidden_dim {
        let row = &mlp.w1[h * mlp.input_dim..(h + 1) * mlp.input_dim];
        let mut acc = 0.0;
        for (w, xv) in row.iter().zip(x.iter()) {
            acc += w * xv;
        }
        pre[h] += acc;
    }
    let hid: Vec<f64> = pre.iter().map(|&p| scaled_softplus(p)).collect();
    let mut y = mlp.b2.clone();
    for o in 0..mlp.output_dim {
        let row = &mlp.w2[o * mlp.hidden_dim..(o + 1) * mlp.hidden_dim];
        let mut acc = 0.0;
        for (w, hv) in row.iter().zip(hid.iter()) {
            acc += w * hv;
        }
        y[o] += acc;
    }
    y[0] = 0.0; // traceless correction
    (y, MlpTape { x: x.to_vec(), pre, hid })
}

/// Backward pass through [`mlp_forward`]. Accumulates the weight gradient
/// into `grad` (flattened MLP layout) and returns the input cotangent.
pub fn mlp_backward(mlp: &MlpParams, tape: &MlpTape, ybar: &[f64], grad: &mut [f64]) -> Vec<f64> {
    assert_eq!(grad.len(), mlp.parameter_count());
    let mut ybar = ybar.to_vec();
    ybar[0] = 0.0;
    let (n1, n2, n3) = (mlp.w1.len(), mlp.b1.len(), mlp.w2.len());
    let (g_w1, rest) = grad.split_at_mut(n1);
    let (g_b1, rest) = rest.split_at_mut(n2);
    let (g_w2, g_b2) = rest.split_at_mut(n3);

    let mut hidbar = vec![0.0; mlp.hidden_dim];
    for o in 0..mlp.output_dim {
        let yb = ybar[o];
        g_b2[o] += yb;
        let row = &mlp.w2[o * mlp.hidden_dim..(o + 1) * mlp.hidden_dim];
        let grow = &mut g_w2[o * mlp.hidden_dim..(o + 1) * mlp.hidden_dim];
        for h in 0..mlp.hidden_dim {
            grow[h] += yb * tape.hid[h];
            hidbar[h] += row[h] * yb;
        }
    }
    let mut xbar = vec![0.0; mlp.input_dim];
    for h in 0..mlp.hidden_dim {
        let prebar = hidbar[h] * scaled_softplus_prime(tape.pre[h]);
        g_b1[h] += prebar;
        let row = &mlp.w1[h * mlp.input_dim..(h + 1) * mlp.input_dim];
        let grow = &mut g_w1[h * mlp.input_dim..(h + 1) * mlp.input_dim];
        for i in 0..mlp.input_dim {
            grow[i] += prebar * tape.x[i];
            xbar[i] += row[i] * prebar;
        }
    }
    xbar
}

/// The neural vector field on density matrices:
/// `from_pauli_coords(MLP(to_pauli_coords(rho)))` with zero trace.
pub fn neural_field_with(table: &PauliTable, mlp: &MlpParams, rho: &CMat) -> CMat {
    let x = table.coords(rho);
    let (y, _) = mlp_forward(mlp, &x);
    table.assemble(&y)
}

/// Convenience wrapper that builds the Pauli table on the fly.
pub fn neural_field(mlp: &MlpParams, rho: &CMat) -> Result<CMat> {
    let n = rho.dim().trailing_zeros() as usize;
    let table = PauliTable::new(n)?;
    Ok(neural_field_with(&table, mlp, rho))
}

/// Full combined field: the physical generator plus, when enabled, the
/// neural correction. When disabled the neural term contributes nothing
/// forward and receives zero gradient.
pub fn combined_field(
    model: &ModelSpec,
    theta_h: &[f64],
    theta_l: &[f64],
    neural: Option<&MlpParams>,
    nde_enabled: bool,
    rho: &CMat,
) -> Result<CMat> {
    let mut out = apply_physical_generator(model, theta_h, theta_l, rho)?;
    if nde_enabled {
        if let Some(mlp) = neural {
            let correction = neural_field(mlp, rho)?;
            out.axpy(num_complex::Complex64::new(1.0, 0.0), &correction);
        }
    }
    Ok(out)
}

/// L2 penalty `lambda * sum w^2` over all weights and biases.
pub fn l2_penalty(mlp: &MlpParams, lambda: f64) -> f64 {
    lambda * mlp.squared_norm()
}
