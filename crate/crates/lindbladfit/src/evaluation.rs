//! Parameter-recovery metrics, success rates over seeds, fidelity and
//! infidelity curves with renormalized time, and loss-landscape scans with
//! trajectory projection.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{
    ExperimentConfig, GeneratorOps, GeneratorParams, ModelSpec, raw_from_rates, rates_from_raw,
    sample_true_params,
};
use crate::linalg::{CMat, hermitian_eigen};
use crate::measurement::{ProtocolConfig, generate_dataset};
use crate::propagator::{FieldEngine, IntegratorConfig, evolve};
use crate::rng::{derive_seed, substream};
use crate::spinops::DensityMatrix;
use crate::training::{TrainerConfig, TrainingRun, init_variational_params, run_curriculum};

/// Relative L1 recovery error `|true - est|_1 / |true|_1`.
pub fn relative_error(true_vec: &[f64], est_vec: &[f64]) -> Result<f64> {
    if true_vec.len() != est_vec.len() {
        return Err(Error::DimensionMismatch(format!(
            "parameter vectors of length {} vs {}",
            true_vec.len(),
            est_vec.len()
        )));
    }
    let norm: f64 = true_vec.iter().map(|x| x.abs()).sum();
    if norm <= 0.0 {
        return Err(Error::InvalidConfig("relative error against a zero-norm truth".into()));
    }
    let diff: f64 = true_vec.iter().zip(est_vec.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(diff / norm)
}

/// Success threshold from the recovery benchmark: strictly below 0.1.
pub fn is_success(eps: f64) -> bool {
    eps < 0.1
}

/// Clamp negative eigenvalues to zero and renormalize; returns the
/// eigendecomposition of the repaired state.
fn repaired_eigen(rho: &CMat) -> Result<(Vec<f64>, CMat)> {
    if rho.hermiticity_deviation() > 1e-8 {
        return Err(Error::InvalidConfig("fidelity requires Hermitian inputs".into()));
    }
    let (mut w, v) = hermitian_eigen(rho);
    for x in w.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let sum: f64 = w.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidConfig("state has no positive weight".into()));
    }
    for x in w.iter_mut() {
        *x /= sum;
    }
    Ok((w, v))
}

fn assemble_from_eigen(w: &[f64], v: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let d = v.dim();
    let mut out = CMat::zeros(d);
    for k in 0..d {
        let fk = f(w[k]);
        if fk == 0.0 {
            continue;
        }
        for i in 0..d {
            let vik = v[(i, k)] * fk;
            for j in 0..d {
                out[(i, j)] += vik * v[(j, k)].conj();
            }
        }
    }
    out
}

/// Uhlmann fidelity `(tr sqrt(sqrt(r1) r2 sqrt(r1)))^2`, with negative
/// eigenvalues clamped to zero and states renormalized first.
pub fn fidelity(rho1: &CMat, rho2: &CMat) -> Result<f64> {
    let (w1, v1) = repaired_eigen(rho1)?;
    let sqrt1 = assemble_from_eigen(&w1, &v1, f64::sqrt);
    let (w2, v2) = repaired_eigen(rho2)?;
    let repaired2 = assemble_from_eigen(&w2, &v2, |x| x);
    let inner = sqrt1.matmul(&repaired2).matmul(&sqrt1).hermitian_part();
    let (wi, _) = hermitian_eigen(&inner);
    let root_sum: f64 = wi.iter().map(|&x| x.max(0.0).sqrt()).sum();
    Ok((root_sum * root_sum).min(1.0))
}

/// One point of an infidelity-vs-time curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InfidelityPoint {
    pub t: f64,
    /// Time multiplied by the noise-to-unitary ratio.
    pub t_renormalized: f64,
    pub mean_infidelity: f64,
}

/// Log-spaced extension of the training window out to
/// `horizon_factor * t_max`, eight points per decade past the window.
pub fn infidelity_time_grid(train_times: &[f64], horizon_factor: f64) -> Vec<f64> {
    let mut grid = train_times.to_vec();
    let t_max = *train_times.last().expect("nonempty training window");
    if horizon_factor > 1.0 {
        let decades = horizon_factor.log10();
        let extra = (8.0 * decades).ceil() as usize;
        for i in 1..=extra {
            grid.push(t_max * 10f64.powf(decades * i as f64 / extra as f64));
        }
    }
    grid
}

/// Evolve the true and estimated generators from each initial state over the
/// extended time grid; report `1 - F` averaged over the initial states
/// against both raw and renormalized time.
#[allow(clippy::too_many_arguments)]
pub fn infidelity_curve(
    model: &ModelSpec,
    theta_true: &[f64],
    rates_true: &[f64],
    theta_est: &[f64],
    rates_est: &[f64],
    rho0s: &[DensityMatrix],
    train_times: &[f64],
    horizon_factor: f64,
    noise_ratio: f64,
    integrator: &IntegratorConfig,
) -> Result<Vec<InfidelityPoint>> {
    if horizon_factor < 1.0 {
        return Err(Error::InvalidConfig("horizon factor must be >= 1".into()));
    }
    let grid = infidelity_time_grid(train_times, horizon_factor);
    let ops = GeneratorOps::new(model)?;
    let params_true = GeneratorParams {
        hamiltonian_coeffs: theta_true.to_vec(),
        raw_rates: raw_from_rates(rates_true)?,
        neural: None,
    };
    let params_est = GeneratorParams {
        hamiltonian_coeffs: theta_est.to_vec(),
        raw_rates: raw_from_rates(rates_est)?,
        neural: None,
    };
    let engine_true = FieldEngine::new(&ops, None, &params_true, false)?;
    let engine_est = FieldEngine::new(&ops, None, &params_est, false)?;
    let mut acc = vec![0.0; grid.len()];
    for rho0 in rho0s {
        let traj_true = evolve(|r: &CMat| engine_true.apply(r), rho0, &grid, integrator)?;
        let traj_est = evolve(|r: &CMat| engine_est.apply(r), rho0, &grid, integrator)?;
        for (i, (a, b)) in traj_true.states.iter().zip(traj_est.states.iter()).enumerate() {
            acc[i] += 1.0 - fidelity(a.matrix(), b.matrix())?;
        }
    }
    let l = rho0s.len().max(1) as f64;
    Ok(grid
        .iter()
        .zip(acc.iter())
        .map(|(&t, &s)| InfidelityPoint {
            t,
            t_renormalized: t * noise_ratio,
            mean_infidelity: s / l,
        })
        .collect())
}

/// How the variational point is initialized in a seeded pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    Random,
    /// Start at the sampled truth (degenerate plumbing check).
    AtTruth,
}

/// Outcome of one end-to-end seed: truth sampling, dataset generation,
/// training, recovery metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed_index: u64,
    pub eps_h: Option<f64>,
    pub eps_l: Option<f64>,
    pub success_h: bool,
    pub success_l: bool,
    /// Mean loss of the first and last epoch of the opening phase; a
    /// decreasing pair is the basic sanity signal of the optimizer.
    pub first_epoch_loss: Option<f64>,
    pub main_phase_final_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_seconds: f64,
}

/// Aggregate success fractions with per-seed records.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuccessReport {
    pub rate_h: f64,
    pub rate_l: f64,
    pub seeds: Vec<SeedOutcome>,
}

/// One full pipeline for seed `index` of the experiment's master seed:
/// sample a ground truth, generate the dataset, initialize, train, and
/// score. Returns the outcome together with the run (when training ran).
pub fn run_seed_pipeline(
    experiment: &ExperimentConfig,
    protocol: &ProtocolConfig,
    trainer: &TrainerConfig,
    integrator: &IntegratorConfig,
    index: u64,
    init: InitStrategy,
) -> (SeedOutcome, Option<TrainingRun>) {
    let started = std::time::Instant::now();
    let mut outcome = SeedOutcome {
        seed_index: index,
        eps_h: None,
        eps_l: None,
        success_h: false,
        success_l: false,
        first_epoch_loss: None,
        main_phase_final_loss: None,
        error: None,
        wall_seconds: 0.0,
    };
    let mut run_out = None;
    let master = experiment.seed;
    let result = (|| -> Result<()> {
        let truth = sample_true_params(experiment, &mut substream(master, "truth", index))?;
        let mut proto = protocol.clone();
        proto.seed = derive_seed(master, "protocol", index);
        let dataset = generate_dataset(
            &truth.model,
            &truth.hamiltonian_coeffs,
            &truth.rates,
            &proto,
            integrator,
            experiment.noise_ratio,
        )?;
        let with_neural = matches!(trainer.kind, crate::training::TrainerKind::Nde);
        let init_params = match init {
            InitStrategy::Random => init_variational_params(
                &truth.model,
                with_neural,
                trainer.hidden_width,
                &mut substream(master, "init", index),
            )?,
            InitStrategy::AtTruth => {
                let mut p = init_variational_params(
                    &truth.model,
                    with_neural,
                    trainer.hidden_width,
                    &mut substream(master, "init", index),
                )?;
                p.hamiltonian_coeffs = truth.hamiltonian_coeffs.clone();
                p.raw_rates = raw_from_rates(&truth.rates)?;
                p
            }
        };
        let mut tcfg = trainer.clone();
        tcfg.seed = derive_seed(master, "train", index);
        let run = run_curriculum(&dataset, &init_params, &tcfg, integrator)?;
        if let Some(first_phase) = run.phases.first() {
            let main: Vec<f64> = run
                .epoch_log
                .iter()
                .filter(|e| e.phase == first_phase.name)
                .map(|e| e.mean_loss)
                .collect();
            outcome.first_epoch_loss = main.first().copied();
            outcome.main_phase_final_loss = main.last().copied();
        }
        let est_h = run.final_params.hamiltonian_coeffs.clone();
        let est_g = run.final_params.rates();
        let eps_h = relative_error(&truth.hamiltonian_coeffs, &est_h)?;
        let eps_l = relative_error(&truth.rates, &est_g)?;
        outcome.eps_h = Some(eps_h);
        outcome.eps_l = Some(eps_l);
        outcome.success_h = is_success(eps_h);
        outcome.success_l = is_success(eps_l);
        run_out = Some(run);
        Ok(())
    })();
    if let Err(e) = result {
        outcome.error = Some(e.to_string());
    }
    outcome.wall_seconds = started.elapsed().as_secs_f64();
    (outcome, run_out)
}

/// Run `n_seeds` independent pipelines; individual failures are recorded in
/// the per-seed records rather than aborting the sweep.
pub fn success_rate(
    experiment: &ExperimentConfig,
    protocol: &ProtocolConfig,
    trainer: &TrainerConfig,
    integrator: &IntegratorConfig,
    n_seeds: u64,
    init: InitStrategy,
) -> SuccessReport {
    let mut seeds = Vec::with_capacity(n_seeds as usize);
    for index in 0..n_seeds {
        let (outcome, _) = run_seed_pipeline(experiment, protocol, trainer, integrator, index, init);
        seeds.push(outcome);
    }
    let n = n_seeds.max(1) as f64;
    let rate_h = seeds.iter().filter(|s| s.success_h).count() as f64 / n;
    let rate_l = seeds.iter().filter(|s| s.success_l).count() as f64 / n;
    SuccessReport { rate_h, rate_l, seeds }
}

/// Which blocks of the variational space a scan may move in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceSelector {
    pub hamiltonian: bool,
    pub rates: bool,
    pub neural: bool,
}

impl SubspaceSelector {
    pub fn parse(s: &str) -> Result<Self> {
        let mut sel =
            SubspaceSelector { hamiltonian: false, rates: false, neural: false };
        for ch in s.chars() {
            match ch.to_ascii_uppercase() {
                'H' => sel.hamiltonian = true,
                'L' => sel.rates = true,
                'N' => sel.neural = true,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown subspace letter '{ch}' (use H, L, N)"
                    )));
                }
            }
        }
        if !(sel.hamiltonian || sel.rates || sel.neural) {
            return Err(Error::InvalidConfig("empty subspace selector".into()));
        }
        Ok(sel)
    }

    /// Flat indices selected in the `[hamiltonian | raw rates | neural]`
    /// layout of `params`.
    pub fn indices(&self, params: &GeneratorParams) -> Vec<usize> {
        let nh = params.hamiltonian_coeffs.len();
        let nl = params.raw_rates.len();
        let nn = params.neural.as_ref().map_or(0, |m| m.parameter_count());
        let mut idx = Vec::new();
        if self.hamiltonian {
            idx.extend(0..nh);
        }
        if self.rates {
            idx.extend(nh..nh + nl);
        }
        if self.neural {
            idx.extend(nh + nl..nh + nl + nn);
        }
        idx
    }
}

/// Two orthonormal directions supported on the selected coordinates:
/// standard-normal draws, Gram-Schmidt orthogonalized (degenerate draws are
/// retried).
pub fn random_orthogonal_plane<R: Rng>(
    selector: &SubspaceSelector,
    params: &GeneratorParams,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = params.flatten().len();
    let indices = selector.indices(params);
    if indices.len() < 2 {
        return Err(Error::InvalidConfig(
            "plane scans need at least two selected coordinates".into(),
        ));
    }
    let normal = StandardNormal;
    for _attempt in 0..64 {
        let mut v1 = vec![0.0; dim];
        let mut v2 = vec![0.0; dim];
        for &i in &indices {
            v1[i] = normal.sample(rng);
            v2[i] = normal.sample(rng);
        }
        let n1 = v1.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n1 < 1e-12 {
            continue;
        }
        v1.iter_mut().for_each(|x| *x /= n1);
        let dot: f64 = v1.iter().zip(v2.iter()).map(|(a, b)| a * b).sum();
        for (a, b) in v2.iter_mut().zip(v1.iter()) {
            *a -= dot * b;
        }
        let n2 = v2.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n2 < 1e-8 {
            continue;
        }
        v2.iter_mut().for_each(|x| *x /= n2);
        return Ok((v1, v2));
    }
    Err(Error::InvalidConfig("could not draw an orthogonal plane".into()))
}

/// A plane scan of the loss around a center point. Offsets act on the raw
/// (pre-softplus) rate coordinates, so every grid point stays physical.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LandscapeScan {
    pub center: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub offsets: Vec<f64>,
    /// losses[i][j] = loss(center + offsets[i] v1 + offsets[j] v2); failed
    /// cells hold NaN.
    pub losses: Vec<Vec<f64>>,
}

impl LandscapeScan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta,loss\n");
        for (i, a) in self.offsets.iter().enumerate() {
            for (j, b) in self.offsets.iter().enumerate() {
                out.push_str(&format!("{a:.17e},{b:.17e},{:.17e}\n", self.losses[i][j]));
            }
        }
        out
    }
}

/// Evaluate the loss over a symmetric (2r x 2r) grid spanned by `v1`, `v2`.
/// `grid_n` must be odd so the center cell is evaluated exactly.
pub fn landscape_scan<F: FnMut(&[f64]) -> Result<f64>>(
    center: &[f64],
    v1: &[f64],
    v2: &[f64],
    radius: f64,
    grid_n: usize,
    mut loss: F,
) -> Result<LandscapeScan> {
    if grid_n < 3 || grid_n.is_multiple_of(2) {
        return Err(Error::InvalidConfig("grid size must be odd and >= 3".into()));
    }
    if radius < 0.0 {
        return Err(Error::InvalidConfig("scan radius must be nonnegative".into()));
    }
    let half = (grid_n / 2) as i64;
    let step = if half > 0 { radius / half as f64 } else { 0.0 };
    let offsets: Vec<f64> = (-half..=half).map(|i| i as f64 * step).collect();
    let mut losses = Vec::with_capacity(grid_n);
    for &a in &offsets {
        let mut row = Vec::with_capacity(grid_n);
        for &b in &offsets {
            let point: Vec<f64> = center
                .iter()
                .enumerate()
                .map(|(k, &c)| c + a * v1[k] + b * v2[k])
                .collect();
            row.push(loss(&point).unwrap_or(f64::NAN));
        }
        losses.push(row);
    }
    Ok(LandscapeScan {
        center: center.to_vec(),
        v1: v1.to_vec(),
        v2: v2.to_vec(),
        offsets,
        losses,
    })
}

/// Truth as a flat vector aligned with a parameter layout: Hamiltonian
/// coefficients, inverse-softplus rates, zeros over any neural block.
pub fn truth_flat_like(params_like: &GeneratorParams, theta_true: &[f64], rates_true: &[f64]) -> Result<Vec<f64>> {
    let mut flat = theta_true.to_vec();
    flat.extend(raw_from_rates(rates_true)?);
    if let Some(mlp) = &params_like.neural {
        flat.extend(std::iter::repeat_n(0.0, mlp.parameter_count()));
    }
    if flat.len() != params_like.flatten().len() {
        return Err(Error::DimensionMismatch(
            "truth layout does not match parameter layout".into(),
        ));
    }
    Ok(flat)
}

/// Project parameter snapshots onto a plane anchored at the truth:
/// `((theta - theta_true) . v1, (theta - theta_true) . v2)` per snapshot.
pub fn trajectory_projection(
    snapshots: &[GeneratorParams],
    truth_flat: &[f64],
    v1: &[f64],
    v2: &[f64],
) -> Vec<(f64, f64)> {
    snapshots
        .iter()
        .map(|p| {
            let flat = p.flatten();
            let mut a = 0.0;
            let mut b = 0.0;
            for k in 0..flat.len() {
                let d = flat[k] - truth_flat[k];
                a += d * v1[k];
                b += d * v2[k];
            }
            (a, b)
        })
        .collect()
}

/// Landscape scans restricted to the rate block act on raw coordinates, so
/// the mapped rates stay positive by construction.
pub fn rates_on_grid_are_physical(scan: &LandscapeScan, params_like: &GeneratorParams) -> bool {
    let nh = params_like.hamiltonian_coeffs.len();
    let nl = params_like.raw_rates.len();
    for &a in &scan.offsets {
        for &b in &scan.offsets {
            let raw: Vec<f64> = (nh..nh + nl)
                .map(|k| scan.center[k] + a * scan.v1[k] + b * scan.v2[k])
                .collect();
            if rates_from_raw(&raw).iter().any(|g| *g <= 0.0) {
                return false;
            }
        }
    }
    true
}
