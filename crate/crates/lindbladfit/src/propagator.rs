//! Adaptive explicit Runge-Kutta 5(4) integration of the master equation
//! with exact reverse-mode gradients of scalar losses.
//!
//! The stepper is the Tsitouras 5(4) pair with its free 4th-order
//! interpolant and a PI step controller (safety 0.9, growth clamp [0.2, 5]).
//! Requested output times are served by the interpolant; the physicality
//! projection is applied once per reported state, never inside the stepper.
//!
//! Gradients are discrete adjoints: the forward pass records the stage
//! values of every accepted step, and the backward pass replays the steps in
//! reverse, accumulating d(loss)/d(params) and d(loss)/d(state). Step sizes
//! are treated as constants, so the gradient is exact for the computed map.

// Tableau constants carry their published digits beyond f64 resolution.
#![allow(clippy::excessive_precision)]

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::generators::{GeneratorOps, GeneratorParams, softplus, softplus_prime};
use crate::linalg::{C64, CMat, min_eigenvalue};
use crate::neural::{MlpParams, mlp_backward, mlp_forward, neural_field_with};
use crate::spinops::{DensityMatrix, PauliTable, project_physical, project_physical_vjp};

const ZERO: C64 = Complex64::new(0.0, 0.0);
const ONE: C64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Debug)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step size.
    pub dt0: f64,
    pub max_steps: usize,
}

impl IntegratorConfig {
    pub const METHOD: &'static str = "tsit5-like explicit RK5(4) with adaptive PI step control";
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { rtol: 1e-6, atol: 1e-8, dt0: 1e-3, max_steps: 100_000 }
    }
}

// Tsitouras 2011 coefficients, kept at published precision. Row 6 of `A`
// holds the 5th-order weights (the last stage is evaluated at the step
// endpoint), `ERR` the difference to the embedded 4th-order solution.
const STAGES: usize = 7;

// Stage abscissae; the generator is autonomous so these only pin down the
// tableau (row-sum consistency is asserted in tests).
#[allow(dead_code)]
const C: [f64; STAGES] = [0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0];

const A: [[f64; 6]; STAGES] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.161, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.008480655492356989, 0.335480655492357, 0.0, 0.0, 0.0, 0.0],
    [2.8971530571054935, -6.359448489975075, 4.3622954328695815, 0.0, 0.0, 0.0],
    [
        5.325864828439257,
        -11.748883564062828,
        7.4955393428898365,
        -0.09249506636175525,
        0.0,
        0.0,
    ],
    [
        5.86145544294642,
        -12.92096931784711,
        8.159367898576159,
        -0.071584973281401,
        -0.028269050394068383,
        0.0,
    ],
    [
        0.09646076681806523,
        0.01,
        0.4798896504144996,
        1.379008574103742,
        -3.290069515436081,
        2.324710524099774,
    ],
];

const B: [f64; 6] = [
    0.09646076681806523,
    0.01,
    0.4798896504144996,
    1.379008574103742,
    -3.290069515436081,
    2.324710524099774,
];

const ERR: [f64; STAGES] = [
    -0.00178001105222577714,
    -0.0008164344596567469,
    0.007880878010261995,
    -0.1447110071732629,
    0.5823571654525552,
    -0.45808210592918697,
    0.015151515151515152,
];

/// Weights of the 4th-order interpolant: y(t0 + theta h) = y0 + h sum_i w_i(theta) k_i.
fn interp_weights(theta: f64) -> [f64; STAGES] {
    let t = theta;
    let t2 = t * t;
    [
        -1.0530884977290216
            * t
            * (t - 1.3299890189751412)
            * (t2 - 1.4364028541716351 * t + 0.7139816917074209),
        0.1017 * t2 * (t2 - 2.1966568338249754 * t + 1.2949852507374631),
        2.490627285651252793 * t2 * (t2 - 2.38535645472061657 * t + 1.57803468208092486),
        -16.54810288924490272 * (t - 1.21712927295533244) * (t - 0.61620406037800089) * t2,
        47.37952196281928122 * (t - 1.203071208372362603) * (t - 0.658047292653547382) * t2,
        -34.87065786149660974 * (t - 1.2) * (t - 0.666666666666666667) * t2,
        2.5 * (t - 1.0) * (t - 0.6) * t2,
    ]
}

const SAFETY: f64 = 0.9;
const FACTOR_MIN: f64 = 0.2;
const FACTOR_MAX: f64 = 5.0;
const BETA1: f64 = 7.0 / 50.0;
const BETA2: f64 = 2.0 / 25.0;
const MIN_STEP: f64 = 1e-12;

// Physical states have entries of magnitude at most one. A state this large
// means the generator has positive spectrum (possible mid-training with the
// neural term enabled) and the trajectory is meaningless: abort rather than
// track the blow-up in relative error.
const DIVERGENCE_BOUND: f64 = 1e6;

/// Summary of one accepted step.
#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub t0: f64,
    pub h: f64,
}

/// Integration output at the requested times, post projection.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Smallest eigenvalue of each reported state (positivity diagnostic;
    /// not enforced).
    pub min_eigenvalues: Vec<f64>,
    pub accepted_steps: Vec<StepRecord>,
    /// Largest |tr(y) - 1| over raw accepted-step endpoints.
    pub raw_trace_drift: f64,
}

impl Trajectory {
    /// CSV debug export: time followed by the 4^N Pauli coordinates.
    pub fn to_pauli_csv(&self) -> Result<String> {
        let n = self.states.first().map(|s| s.num_qubits()).unwrap_or(1);
        let table = PauliTable::new(n)?;
        let mut out = String::from("t");
        for j in 0..table.word_count() {
            out.push_str(&format!(",p{j}"));
        }
        out.push('\n');
        for (t, s) in self.times.iter().zip(self.states.iter()) {
            out.push_str(&format!("{t:.17e}"));
            for c in table.coords(s.matrix()) {
                out.push_str(&format!(",{c:.17e}"));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Full stage tape of one accepted step, kept for the adjoint replay.
struct StepTape {
    t0: f64,
    h: f64,
    y0: CMat,
    stages: Vec<CMat>,
}

/// A requested output time resolved against the step sequence.
struct Report {
    time_index: usize,
    /// Index into the step tape; `None` for a report at t = 0 (initial state).
    step: Option<usize>,
    theta: f64,
    raw: CMat,
}

struct RawIntegration {
    tapes: Vec<StepTape>,
    reports: Vec<Report>,
    raw_trace_drift: f64,
}

fn validate_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidConfig("at least one output time is required".into()));
    }
    if times[0] < 0.0 {
        return Err(Error::InvalidConfig("output times must be nonnegative".into()));
    }
    for w in times.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidConfig("output times must be strictly increasing".into()));
        }
    }
    Ok(())
}

fn scaled_error(err: &CMat, y0: &CMat, y1: &CMat, atol: f64, rtol: f64) -> f64 {
    let n = err.data().len() * 2;
    let mut acc = 0.0;
    for ((e, a), b) in err.data().iter().zip(y0.data().iter()).zip(y1.data().iter()) {
        let sc_re = atol + rtol * a.re.abs().max(b.re.abs());
        let sc_im = atol + rtol * a.im.abs().max(b.im.abs());
        let r = e.re / sc_re;
        let i = e.im / sc_im;
        acc += r * r + i * i;
    }
    (acc / n as f64).sqrt()
}

/// Core adaptive loop. Steps from t = 0 to the last requested time,
/// recording stage tapes and resolving every requested time to a step and
/// interpolation parameter.
#[allow(clippy::needless_range_loop)] // stage indices address the tableau
fn integrate<F: Fn(&CMat) -> CMat>(
    field: &F,
    rho0: &CMat,
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<RawIntegration> {
    validate_times(times)?;
    let t_end = *times.last().unwrap();
    let mut tapes: Vec<StepTape> = Vec::new();
    let mut reports: Vec<Report> = Vec::new();
    let mut next_time = 0usize;

    // Reports exactly at t = 0 read the initial state.
    while next_time < times.len() && times[next_time] == 0.0 {
        reports.push(Report { time_index: next_time, step: None, theta: 0.0, raw: rho0.clone() });
        next_time += 1;
    }
    if next_time == times.len() {
        return Ok(RawIntegration { tapes, reports, raw_trace_drift: 0.0 });
    }

    let mut t = 0.0;
    let mut y = rho0.clone();
    let mut h = cfg.dt0.min(t_end).max(MIN_STEP);
    let mut err_old: f64 = 1e-4;
    let mut attempts = 0usize;
    let mut drift: f64 = 0.0;
    let mut k1: Option<CMat> = None; // field(y); reused across rejections

    // Exit tolerance absorbs the rounding of the final clipped step.
    let t_close = 1e-12 * t_end.max(1.0);
    while t_end - t > t_close {
        if attempts >= cfg.max_steps {
            return Err(Error::StepLimitExceeded { max_steps: cfg.max_steps, t });
        }
        attempts += 1;
        if h < MIN_STEP {
            return Err(Error::StepUnderflow { dt: h, t });
        }
        if t + h > t_end {
            h = t_end - t;
        }

        let k_first = match &k1 {
            Some(k) => k.clone(),
            None => {
                let k = field(&y);
                k1 = Some(k.clone());
                k
            }
        };
        let mut stages: Vec<CMat> = Vec::with_capacity(STAGES);
        stages.push(k_first);
        for i in 1..STAGES - 1 {
            let mut u = y.clone();
            for (j, stage) in stages.iter().enumerate() {
                let a = A[i][j];
                if a != 0.0 {
                    u.axpy(Complex64::new(h * a, 0.0), stage);
                }
            }
            stages.push(field(&u));
        }
        // 5th-order endpoint from the first six stages.
        let mut y1 = y.clone();
        for (j, stage) in stages.iter().enumerate() {
            y1.axpy(Complex64::new(h * B[j], 0.0), stage);
        }
        stages.push(field(&y1));

        let mut err_vec = CMat::zeros(y.dim());
        for (j, stage) in stages.iter().enumerate() {
            err_vec.axpy(Complex64::new(h * ERR[j], 0.0), stage);
        }
        let err = scaled_error(&err_vec, &y, &y1, cfg.atol, cfg.rtol);

        if !err.is_finite() {
            h *= FACTOR_MIN;
            continue;
        }
        if err <= 1.0 {
            // Accept.
            let magnitude = y1.max_abs();
            if magnitude > DIVERGENCE_BOUND {
                return Err(Error::DivergedTrajectory { trace_mag: magnitude, t });
            }
            let step_index = tapes.len();
            let t1 = t + h;
            while next_time < times.len() && times[next_time] <= t1 + 1e-14 * t1.abs() {
                let theta = ((times[next_time] - t) / h).clamp(0.0, 1.0);
                let w = interp_weights(theta);
                let mut raw = y.clone();
                for (j, stage) in stages.iter().enumerate() {
                    if w[j] != 0.0 {
                        raw.axpy(Complex64::new(h * w[j], 0.0), stage);
                    }
                }
                reports.push(Report { time_index: next_time, step: Some(step_index), theta, raw });
                next_time += 1;
            }
            tapes.push(StepTape { t0: t, h, y0: y, stages });
            y = y1;
            drift = drift.max((y.trace() - ONE).norm());
            t = t1;
            k1 = None;
            let fac = if err == 0.0 {
                FACTOR_MAX
            } else {
                (SAFETY * err.powf(-BETA1) * err_old.powf(BETA2)).clamp(FACTOR_MIN, FACTOR_MAX)
            };
            err_old = err.max(1e-4);
            h *= fac;
        } else {
            let fac = (SAFETY * err.powf(-BETA1)).clamp(FACTOR_MIN, 1.0);
            h *= fac;
        }
    }
    debug_assert_eq!(next_time, times.len(), "all requested times resolved");
    Ok(RawIntegration { tapes, reports, raw_trace_drift: drift })
}

fn finalize_trajectory(raw: RawIntegration, times: &[f64], n: usize) -> Result<Trajectory> {
    let mut states: Vec<DensityMatrix> = Vec::with_capacity(times.len());
    let mut min_eigs = Vec::with_capacity(times.len());
    for report in &raw.reports {
        let projected = project_physical(&report.raw).map_err(|e| match e {
            Error::DivergedTrajectory { trace_mag, .. } => {
                Error::DivergedTrajectory { trace_mag, t: times[report.time_index] }
            }
            other => other,
        })?;
        min_eigs.push(min_eigenvalue(&projected));
        states.push(DensityMatrix::from_valid(projected, n));
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        min_eigenvalues: min_eigs,
        accepted_steps: raw.tapes.iter().map(|s| StepRecord { t0: s.t0, h: s.h }).collect(),
        raw_trace_drift: raw.raw_trace_drift,
    })
}

/// Integrate a vector field from `rho0`, reporting the projected state at
/// each requested time (5th-order accurate, dense output between steps).
pub fn evolve<F: Fn(&CMat) -> CMat>(
    field: F,
    rho0: &DensityMatrix,
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let raw = integrate(&field, rho0.matrix(), times, cfg)?;
    finalize_trajectory(raw, times, rho0.num_qubits())
}

// ---------------------------------------------------------------------------
// Field engine: fast application plus analytic vector-Jacobian products
// ---------------------------------------------------------------------------

/// Dense superoperator cache: the generator as a d^2 x d^2 complex matrix in
/// split real/imaginary storage, plus its adjoint for the backward pass.
struct SuperOp {
    d2: usize,
    fwd_re: Vec<f64>,
    fwd_im: Vec<f64>,
    adj_re: Vec<f64>,
    adj_im: Vec<f64>,
}

impl SuperOp {
    fn apply(&self, re: &[f64], im: &[f64], state: &CMat, out: &mut CMat) {
        let d2 = self.d2;
        let x = state.data();
        let o = out.data_mut();
        for row in 0..d2 {
            let rrow = &re[row * d2..(row + 1) * d2];
            let irow = &im[row * d2..(row + 1) * d2];
            let mut acc_re = 0.0;
            let mut acc_im = 0.0;
            for col in 0..d2 {
                let xv = x[col];
                let (sr, si) = (rrow[col], irow[col]);
                acc_re += sr * xv.re - si * xv.im;
                acc_im += sr * xv.im + si * xv.re;
            }
            o[row] = Complex64::new(acc_re, acc_im);
        }
    }

    fn forward(&self, state: &CMat, out: &mut CMat) {
        self.apply(&self.fwd_re, &self.fwd_im, state, out);
    }

    fn adjoint(&self, state: &CMat, out: &mut CMat) {
        self.apply(&self.adj_re, &self.adj_im, state, out);
    }
}

/// Caching the dense superoperator pays off only while d^4 stays small.
const SUPEROP_MAX_DIM: usize = 16;

/// The combined physical + neural vector field with fixed parameters,
/// prepared for repeated application and adjoint evaluation.
pub struct FieldEngine<'a> {
    ops: &'a GeneratorOps,
    table: Option<&'a PauliTable>,
    h_mat: CMat,
    rates: Vec<f64>,
    raw_rates: Vec<f64>,
    mlp: Option<&'a MlpParams>,
    nde_enabled: bool,
    superop: Option<SuperOp>,
}

impl<'a> FieldEngine<'a> {
    /// `table` is required when `params.neural` is present and enabled.
    pub fn new(
        ops: &'a GeneratorOps,
        table: Option<&'a PauliTable>,
        params: &'a GeneratorParams,
        nde_enabled: bool,
    ) -> Result<FieldEngine<'a>> {
        let nh = ops.model.hamiltonian.parameter_count();
        let nl = ops.model.dissipator.jump_count();
        if params.hamiltonian_coeffs.len() != nh || params.raw_rates.len() != nl {
            return Err(Error::DimensionMismatch(format!(
                "expected {} Hamiltonian coefficients and {} rates, got {} and {}",
                nh,
                nl,
                params.hamiltonian_coeffs.len(),
                params.raw_rates.len()
            )));
        }
        let use_neural = nde_enabled && params.neural.is_some();
        if use_neural && table.is_none() {
            return Err(Error::InvalidConfig(
                "a Pauli table is required for the neural correction".into(),
            ));
        }
        let h_mat = ops.assemble_hamiltonian(&params.hamiltonian_coeffs);
        let rates: Vec<f64> = params.raw_rates.iter().map(|&r| softplus(r)).collect();
        let mut engine = FieldEngine {
            ops,
            table,
            h_mat,
            rates,
            raw_rates: params.raw_rates.clone(),
            mlp: params.neural.as_ref(),
            nde_enabled,
            superop: None,
        };
        if ops.dim() <= SUPEROP_MAX_DIM {
            engine.superop = Some(engine.build_superop());
        }
        Ok(engine)
    }

    pub fn dim(&self) -> usize {
        self.ops.dim()
    }

    pub fn nde_enabled(&self) -> bool {
        self.nde_enabled
    }

    /// Length of the gradient vector: Hamiltonian block, rate block, and the
    /// neural block whenever neural weights exist (zeros while disabled).
    pub fn parameter_count(&self) -> usize {
        self.ops.model.hamiltonian.parameter_count()
            + self.ops.model.dissipator.jump_count()
            + self.mlp.map_or(0, |m| m.parameter_count())
    }

    /// Entrywise assembly of the generator as a matrix on row-major
    /// vectorized states, using the dense H and the jump operators' sparse
    /// structure. Consistency with the operator-product route is unit-tested.
    fn build_superop(&self) -> SuperOp {
        let d = self.dim();
        let d2 = d * d;
        let mut re = vec![0.0; d2 * d2];
        let mut im = vec![0.0; d2 * d2];
        let mut add = |row: usize, col: usize, v: C64| {
            re[row * d2 + col] += v.re;
            im[row * d2 + col] += v.im;
        };
        let minus_i = Complex64::new(0.0, -1.0);
        // -i H rho: out[a,b] += -i H[a,i] rho[i,b]
        for a in 0..d {
            for i in 0..d {
                let v = minus_i * self.h_mat[(a, i)];
                if v != ZERO {
                    for b in 0..d {
                        add(a * d + b, i * d + b, v);
                    }
                }
            }
        }
        // +i rho H: out[a,b] += i rho[a,j] H[j,b]
        for j in 0..d {
            for b in 0..d {
                let v = -minus_i * self.h_mat[(j, b)];
                if v != ZERO {
                    for a in 0..d {
                        add(a * d + b, a * d + j, v);
                    }
                }
            }
        }
        for (idx, l) in self.ops.jumps.iter().enumerate() {
            let g = self.rates[idx];
            if g == 0.0 {
                continue;
            }
            let gc = Complex64::new(g, 0.0);
            // Collect nonzeros of L and L†L once per operator.
            let mut l_nz: Vec<(usize, usize, C64)> = Vec::new();
            for a in 0..d {
                for i in 0..d {
                    if l[(a, i)] != ZERO {
                        l_nz.push((a, i, l[(a, i)]));
                    }
                }
            }
            let lsq = &self.ops.jump_squares[idx];
            // g L rho L†: out[a,b] += g L[a,i] conj(L[b,j]) rho[i,j]
            for &(a, i, la) in &l_nz {
                for &(b, j, lb) in &l_nz {
                    add(a * d + b, i * d + j, gc * la * lb.conj());
                }
            }
            // -g/2 (L†L) rho and -g/2 rho (L†L)
            let half = Complex64::new(0.5 * g, 0.0);
            for a in 0..d {
                for i in 0..d {
                    let v = lsq[(a, i)];
                    if v != ZERO {
                        for b in 0..d {
                            add(a * d + b, i * d + b, -half * v);
                        }
                    }
                }
            }
            for j in 0..d {
                for b in 0..d {
                    let v = lsq[(j, b)];
                    if v != ZERO {
                        for a in 0..d {
                            add(a * d + b, a * d + j, -half * v);
                        }
                    }
                }
            }
        }
        // Adjoint: conj transpose of the complex matrix.
        let mut adj_re = vec![0.0; d2 * d2];
        let mut adj_im = vec![0.0; d2 * d2];
        for r in 0..d2 {
            for c in 0..d2 {
                adj_re[c * d2 + r] = re[r * d2 + c];
                adj_im[c * d2 + r] = -im[r * d2 + c];
            }
        }
        SuperOp { d2, fwd_re: re, fwd_im: im, adj_re, adj_im }
    }

    /// The physical GKSL part applied through operator products.
    fn apply_physical_chain(&self, rho: &CMat) -> CMat {
        crate::generators::apply_gksl(&self.h_mat, &self.ops.jumps, &self.rates, rho)
    }

    /// Heisenberg-picture adjoint of the physical part:
    /// `i[H, w] + sum_a g_a (L† w L - (1/2){L†L, w})`.
    fn apply_physical_adjoint_chain(&self, w: &CMat) -> CMat {
        let plus_i = Complex64::new(0.0, 1.0);
        let half = Complex64::new(0.5, 0.0);
        let mut out = self.h_mat.matmul(w);
        out.axpy(-ONE, &w.matmul(&self.h_mat));
        out = out.scale(plus_i);
        for (idx, l) in self.ops.jumps.iter().enumerate() {
            let g = self.rates[idx];
            if g == 0.0 {
                continue;
            }
            let la = &self.ops.jump_adjoints[idx];
            let lsq = &self.ops.jump_squares[idx];
            let sandwich = la.matmul(w).matmul(l);
            let anti = lsq.matmul(w).add(&w.matmul(lsq)).scale(half);
            out.axpy(Complex64::new(g, 0.0), &sandwich.sub(&anti));
        }
        out
    }

    /// Evaluate the vector field.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let mut out = CMat::zeros(self.dim());
        match &self.superop {
            Some(s) => s.forward(rho, &mut out),
            None => out = self.apply_physical_chain(rho),
        }
        if self.nde_enabled {
            if let (Some(mlp), Some(table)) = (self.mlp, self.table) {
                out.axpy(ONE, &neural_field_with(table, mlp, rho));
            }
        }
        out
    }

    /// Vector-Jacobian product at stage input `u` with cotangent `w`:
    /// returns d<w, F(u)>/du and accumulates the parameter gradient.
    ///
    /// Gradient layout: `[hamiltonian | raw rates | neural]`; the neural
    /// block stays untouched when the correction is disabled.
    fn vjp(&self, u: &CMat, w: &CMat, grad: &mut [f64]) -> CMat {
        let nh = self.ops.terms.len();
        let nl = self.ops.jumps.len();
        // State cotangent through the physical part.
        let mut ubar = CMat::zeros(self.dim());
        match &self.superop {
            Some(s) => s.adjoint(w, &mut ubar),
            None => ubar = self.apply_physical_adjoint_chain(w),
        }
        // Hamiltonian coefficients: d<w, -i[B_k, u]> = Re(-i tr(B_k G)),
        // G = u w† - w† u.
        let w_adj = w.adjoint();
        let g_mat = u.matmul(&w_adj).sub(&w_adj.matmul(u));
        let d = self.dim();
        for (k, term) in self.ops.terms.iter().enumerate() {
            let mut tr = ZERO;
            for r in 0..d {
                for c in 0..d {
                    let t = term[(r, c)];
                    if t != ZERO {
                        tr += t * g_mat[(c, r)];
                    }
                }
            }
            grad[k] += (Complex64::new(0.0, -1.0) * tr).re;
        }
        // Rates: gamma_bar = <w, D_a[u]>, chain-ruled through softplus.
        for (a, l) in self.ops.jumps.iter().enumerate() {
            let lu = l.matmul(u);
            let wl = w.matmul(l);
            let s1 = wl.real_inner(&lu);
            let lsq = &self.ops.jump_squares[a];
            let lsq_u = lsq.matmul(u);
            let u_lsq = u.matmul(lsq);
            let s2 = w.real_inner(&lsq_u);
            let s3 = w.real_inner(&u_lsq);
            let gamma_bar = s1 - 0.5 * (s2 + s3);
            grad[nh + a] += gamma_bar * softplus_prime(self.raw_rates[a]);
        }
        // Neural block.
        if self.nde_enabled {
            if let (Some(mlp), Some(table)) = (self.mlp, self.table) {
                let x = table.coords(u);
                let (_, tape) = mlp_forward(mlp, &x);
                let ybar = table.assemble_vjp(w);
                let xbar = mlp_backward(mlp, &tape, &ybar, &mut grad[nh + nl..]);
                ubar.axpy(ONE, &table.coords_vjp(&xbar));
            }
        }
        ubar
    }
}

/// Per-time loss contributions for gradient-enabled integration. `eval`
/// returns the scalar contribution at the reported (projected) state and its
/// cotangent matrix under the real inner product.
pub trait TimeLoss {
    fn eval(&self, time_index: usize, state: &CMat) -> (f64, CMat);
}

impl<F: Fn(usize, &CMat) -> (f64, CMat)> TimeLoss for F {
    fn eval(&self, time_index: usize, state: &CMat) -> (f64, CMat) {
        self(time_index, state)
    }
}

/// Result of a gradient-enabled integration.
pub struct GradientOutcome {
    pub loss: f64,
    /// Aligned with the `[hamiltonian | raw rates | neural]` flattening.
    pub gradient: Vec<f64>,
    pub trajectory: Trajectory,
}

/// Integrate the engine's field and differentiate `sum_t loss_t(rho(t))`
/// with respect to all parameters by replaying the recorded steps in
/// reverse. Reported states pass through the physicality projection before
/// the loss sees them; the projection is part of the differentiated graph.
#[allow(clippy::needless_range_loop)] // stage indices address the tableau
pub fn evolve_with_gradient<L: TimeLoss>(
    engine: &FieldEngine,
    rho0: &DensityMatrix,
    times: &[f64],
    loss: &L,
    cfg: &IntegratorConfig,
) -> Result<GradientOutcome> {
    let raw = integrate(&|rho| engine.apply(rho), rho0.matrix(), times, cfg)?;
    let dim = engine.dim();
    let n = rho0.num_qubits();

    // Forward loss over projected reports; keep the projection VJP of each
    // loss cotangent for the backward sweep.
    let mut total = 0.0;
    let mut states = Vec::with_capacity(times.len());
    let mut min_eigs = Vec::with_capacity(times.len());
    let mut report_cotangents: Vec<CMat> = Vec::with_capacity(raw.reports.len());
    for report in &raw.reports {
        let projected = project_physical(&report.raw).map_err(|e| match e {
            Error::DivergedTrajectory { trace_mag, .. } => {
                Error::DivergedTrajectory { trace_mag, t: times[report.time_index] }
            }
            other => other,
        })?;
        let (value, cbar) = loss.eval(report.time_index, &projected);
        total += value;
        report_cotangents.push(project_physical_vjp(&report.raw, &cbar));
        min_eigs.push(min_eigenvalue(&projected));
        states.push(DensityMatrix::from_valid(projected, n));
    }

    // Backward sweep.
    let mut grad = vec![0.0; engine.parameter_count()];
    let mut ybar = CMat::zeros(dim);
    for (step_index, tape) in raw.tapes.iter().enumerate().rev() {
        let h = tape.h;
        // Seed stage cotangents from the endpoint: y1 = y0 + h sum b_j k_j.
        let mut kbar: Vec<CMat> = (0..STAGES).map(|_| CMat::zeros(dim)).collect();
        let mut active = [false; STAGES];
        if ybar.max_abs() != 0.0 {
            for (j, b) in B.iter().enumerate() {
                if *b != 0.0 {
                    kbar[j].axpy(Complex64::new(h * b, 0.0), &ybar);
                    active[j] = true;
                }
            }
        }
        let mut y0bar = ybar.clone();
        // Loss contributions interpolated inside this step.
        for (report, cot) in raw.reports.iter().zip(report_cotangents.iter()) {
            if report.step == Some(step_index) {
                let w = interp_weights(report.theta);
                for j in 0..STAGES {
                    if w[j] != 0.0 {
                        kbar[j].axpy(Complex64::new(h * w[j], 0.0), cot);
                        active[j] = true;
                    }
                }
                y0bar.axpy(ONE, cot);
            }
        }
        // Reverse through the stages.
        for i in (0..STAGES).rev() {
            if !active[i] {
                continue;
            }
            // Stage input: u_i = y0 + h sum_{j<i} A[i][j] k_j (row 6 is the
            // endpoint, u_7 = y1).
            let mut u = tape.y0.clone();
            if i == STAGES - 1 {
                for (j, b) in B.iter().enumerate() {
                    u.axpy(Complex64::new(h * b, 0.0), &tape.stages[j]);
                }
            } else {
                for j in 0..i {
                    let a = A[i][j];
                    if a != 0.0 {
                        u.axpy(Complex64::new(h * a, 0.0), &tape.stages[j]);
                    }
                }
            }
            let ubar = engine.vjp(&u, &kbar[i], &mut grad);
            y0bar.axpy(ONE, &ubar);
            if i == STAGES - 1 {
                for (j, b) in B.iter().enumerate() {
                    if *b != 0.0 {
                        kbar[j].axpy(Complex64::new(h * b, 0.0), &ubar);
                        active[j] = true;
                    }
                }
            } else {
                for j in 0..i {
                    let a = A[i][j];
                    if a != 0.0 {
                        kbar[j].axpy(Complex64::new(h * a, 0.0), &ubar);
                        active[j] = true;
                    }
                }
            }
        }
        ybar = y0bar;
    }
    // Reports at t = 0 depend only on rho0; no parameter gradient flows.

    for g in &grad {
        if !g.is_finite() {
            return Err(Error::NanGradient { step: raw.tapes.len() });
        }
    }
    let trajectory = Trajectory {
        times: times.to_vec(),
        states,
        min_eigenvalues: min_eigs,
        accepted_steps: raw.tapes.iter().map(|s| StepRecord { t0: s.t0, h: s.h }).collect(),
        raw_trace_drift: raw.raw_trace_drift,
    };
    Ok(GradientOutcome { loss: total, gradient: grad, trajectory })
}

/// Forward-only loss evaluation through the same pipeline (used by the
/// finite-difference oracle and landscape scans).
pub fn evaluate_loss<L: TimeLoss>(
    engine: &FieldEngine,
    rho0: &DensityMatrix,
    times: &[f64],
    loss: &L,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let raw = integrate(&|rho| engine.apply(rho), rho0.matrix(), times, cfg)?;
    let mut total = 0.0;
    for report in &raw.reports {
        let projected = project_physical(&report.raw)?;
        let (value, _) = loss.eval(report.time_index, &projected);
        total += value;
    }
    Ok(total)
}

/// Central finite differences of an arbitrary scalar function.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0);
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let mut xp = x.to_vec();
        xp[k] += h;
        let mut xm = x.to_vec();
        xm[k] -= h;
        grad.push((f(&xp) - f(&xm)) / (2.0 * h));
    }
    grad
}

/// Finite-difference gradient of the full evolve -> loss pipeline, one fresh
/// integration per perturbed component. Independent oracle for
/// [`evolve_with_gradient`].
#[allow(clippy::too_many_arguments)] // mirrors the gradient entry point
pub fn finite_diff_gradient<L: TimeLoss>(
    ops: &GeneratorOps,
    table: Option<&PauliTable>,
    params: &GeneratorParams,
    nde_enabled: bool,
    rho0: &DensityMatrix,
    times: &[f64],
    loss: &L,
    cfg: &IntegratorConfig,
    h: f64,
) -> Result<Vec<f64>> {
    let flat = params.flatten();
    let mut failures: Option<Error> = None;
    let grad = finite_diff(
        |x| {
            let p = params.unflatten_like(x);
            match FieldEngine::new(ops, table, &p, nde_enabled)
                .and_then(|engine| evaluate_loss(&engine, rho0, times, loss, cfg))
            {
                Ok(v) => v,
                Err(e) => {
                    failures = Some(e);
                    f64::NAN
                }
            }
        },
        &flat,
        h,
    );
    match failures {
        Some(e) => Err(e),
        None => Ok(grad),
    }
}
