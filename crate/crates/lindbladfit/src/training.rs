//! Negative-log-likelihood objective, Adam, the per-shot batching scheme,
//! and the two training curricula (physics-only and neural-augmented).
//!
//! A batch fixes one initial state and one shot index and covers all
//! timestamps and all bases for that pair, so every optimization step costs
//! exactly one integration. With the default protocol (5 states, 100 shots)
//! an epoch is the shuffled sequence of all 500 (state, shot) pairs.
//!
//! Loss convention: the batch objective is the *sum* of `-log p(b)` over the
//! batch records (optionally mean-normalized via config), plus the L2
//! penalty on the neural weights while the correction is enabled.
//! Probabilities are floored at 1e-12 inside the log so outcomes the model
//! assigns numerically zero probability keep finite gradients.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{
    GeneratorOps, GeneratorParams, ModelSpec, raw_from_rates, rates_from_raw,
};
use crate::linalg::CMat;
use crate::measurement::ShotDataset;
use crate::neural::MlpParams;
use crate::propagator::{FieldEngine, IntegratorConfig, TimeLoss, evolve_with_gradient};
use crate::rng::substream;
use crate::spinops::{DensityMatrix, PauliTable, basis_rotation, product_eigenstate};

const PROB_FLOOR: f64 = 1e-12;

/// One optimization batch: a (state, shot) pair with its J*K records.
#[derive(Clone, Debug)]
pub struct Batch {
    pub state_id: usize,
    pub shot_index: usize,
    /// Per time index: (basis index within the cell, observed bits).
    pub items_by_time: Vec<Vec<(usize, u32)>>,
}

/// Adam moment vectors aligned with the flattened parameter vector.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            first: vec![0.0; dim],
            second: vec![0.0; dim],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Zero the moments and the step counter (optimizer reset).
    pub fn reset(&mut self) {
        self.first.iter_mut().for_each(|m| *m = 0.0);
        self.second.iter_mut().for_each(|v| *v = 0.0);
        self.step = 0;
    }
}

/// Bias-corrected Adam update with a per-component learning-rate vector
/// (blocks with rate zero are frozen exactly).
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grad: &[f64],
    lr: &[f64],
) -> Result<()> {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), lr.len());
    assert_eq!(params.len(), state.first.len());
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NanGradient { step: state.step as usize });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        state.first[i] = state.beta1 * state.first[i] + (1.0 - state.beta1) * grad[i];
        state.second[i] = state.beta2 * state.second[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        if lr[i] != 0.0 {
            let m_hat = state.first[i] / bc1;
            let v_hat = state.second[i] / bc2;
            params[i] -= lr[i] * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// One curriculum phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPhase {
    pub name: String,
    pub epochs: usize,
    pub lr_h: f64,
    pub lr_l: f64,
    pub lr_nde: f64,
    pub nde_enabled: bool,
    pub l2_lambda: f64,
    pub reset_optimizer_on_entry: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    Vanilla,
    Nde,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineTunePolicy {
    /// Fine-tune when the last phase was still improving (relative loss
    /// improvement over its final 5 epochs above 1e-3).
    Auto,
    Always,
    Never,
}

/// Trainer configuration; defaults follow the reference curricula.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub kind: TrainerKind,
    pub fine_tune: FineTunePolicy,
    /// Hidden width of the MLP; defaults to 4^N when absent.
    pub hidden_width: Option<usize>,
    pub main_epochs: usize,
    /// Epochs of the NDE-off refinement phase (neural curriculum only).
    pub refine_epochs: usize,
    pub fine_tune_epochs: usize,
    pub lr_main: f64,
    pub lr_nde: f64,
    pub lr_fine: f64,
    pub l2_lambda: f64,
    /// Normalize the batch loss by its record count. Default off: the
    /// objective is the plain sum and learning rates are calibrated to it.
    pub mean_normalize: bool,
    /// Optional residual phase training only the neural weights with the
    /// physical parameters frozen. Off by default and excluded from
    /// acceptance checks.
    pub residual_fine_tune: bool,
    pub residual_epochs: usize,
    /// Seed for the epoch shuffling substreams.
    pub seed: u64,
}

impl TrainerConfig {
    pub fn vanilla(seed: u64) -> Self {
        TrainerConfig {
            kind: TrainerKind::Vanilla,
            fine_tune: FineTunePolicy::Auto,
            hidden_width: None,
            main_epochs: 20,
            refine_epochs: 10,
            fine_tune_epochs: 5,
            lr_main: 1e-3,
            lr_nde: 2e-3,
            lr_fine: 1e-4,
            l2_lambda: 0.1,
            mean_normalize: false,
            residual_fine_tune: false,
            residual_epochs: 5,
            seed,
        }
    }

    pub fn nde(seed: u64) -> Self {
        TrainerConfig { kind: TrainerKind::Nde, ..TrainerConfig::vanilla(seed) }
    }
}

/// Per-epoch log entry backing `loss.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: String,
    pub mean_loss: f64,
    pub grad_norm: f64,
    pub min_eigenvalue_seen: f64,
}

/// Full training record: phase structure, per-epoch metrics, parameter
/// snapshots (initialization plus one per epoch), and the final point.
#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub phases: Vec<CurriculumPhase>,
    pub epoch_log: Vec<EpochLog>,
    pub snapshots: Vec<GeneratorParams>,
    pub final_params: GeneratorParams,
    /// The learning-rate swap rule fired at fine-tune entry.
    pub swap_applied: bool,
    /// The returned model evaluates with the neural term disabled.
    pub final_nde_enabled: bool,
    /// L2 norm of the Adam moment vectors at each phase entry (after any
    /// reset); evidence that boundaries start from zeroed moments.
    pub optimizer_moments_at_phase_entry: Vec<f64>,
    pub wall_seconds: f64,
}

impl TrainingRun {
    /// Render the epoch log as CSV (bitwise-stable formatting).
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,phase,mean_loss,grad_norm,min_eigenvalue_seen\n");
        for e in &self.epoch_log {
            out.push_str(&format!(
                "{},{},{:.17e},{:.17e},{:.17e}\n",
                e.epoch, e.phase, e.mean_loss, e.grad_norm, e.min_eigenvalue_seen
            ));
        }
        out
    }
}

/// Precomputed per-dataset quantities shared by every training step: the
/// operator cache, initial states, timestamps, and one basis rotation per
/// (state, time, basis) cell.
pub struct TrainerContext {
    pub model: ModelSpec,
    pub ops: GeneratorOps,
    pub table: PauliTable,
    pub times: Vec<f64>,
    pub rho0s: Vec<DensityMatrix>,
    rotations: Vec<CMat>,
    j_count: usize,
    k_count: usize,
}

impl TrainerContext {
    pub fn new(dataset: &ShotDataset) -> Result<TrainerContext> {
        dataset.check_complete()?;
        let model = dataset.meta.model.to_model()?;
        let protocol = &dataset.meta.protocol;
        let ops = GeneratorOps::new(&model)?;
        let table = PauliTable::new(model.n())?;
        let rho0s: Vec<DensityMatrix> = dataset
            .initial_states
            .iter()
            .map(product_eigenstate)
            .collect::<Result<_>>()?;
        let (l, j, k) =
            (protocol.num_states, protocol.times.len(), protocol.bases_per_point);
        let mut rotations = Vec::with_capacity(l * j * k);
        for s in 0..l {
            for jt in 0..j {
                for kb in 0..k {
                    let record = &dataset.records[dataset.record_index(s, jt, kb, 0)];
                    if record.state_id != s {
                        return Err(Error::IncompleteDataset(format!(
                            "record layout mismatch at (state {s}, time {jt}, basis {kb})"
                        )));
                    }
                    rotations.push(basis_rotation(&record.basis)?);
                }
            }
        }
        Ok(TrainerContext {
            model,
            ops,
            table,
            times: protocol.times.clone(),
            rho0s,
            rotations,
            j_count: j,
            k_count: k,
        })
    }

    fn rotation(&self, state: usize, time_idx: usize, basis_idx: usize) -> &CMat {
        &self.rotations[(state * self.j_count + time_idx) * self.k_count + basis_idx]
    }

    pub fn batch_record_count(&self) -> usize {
        self.j_count * self.k_count
    }
}

/// The (state, shot) pairs enumerated, shuffled, one [`Batch`] each.
pub fn make_epoch_batches<R: rand::Rng>(
    dataset: &ShotDataset,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    dataset.check_complete()?;
    let protocol = &dataset.meta.protocol;
    let (l, j, k, m) =
        (protocol.num_states, protocol.times.len(), protocol.bases_per_point, protocol.shots_per_basis);
    let mut pairs: Vec<(usize, usize)> =
        (0..l).flat_map(|s| (0..m).map(move |shot| (s, shot))).collect();
    pairs.shuffle(rng);
    let mut batches = Vec::with_capacity(pairs.len());
    for (state_id, shot_index) in pairs {
        let mut items_by_time = vec![Vec::with_capacity(k); j];
        for (time_idx, items) in items_by_time.iter_mut().enumerate() {
            for basis_idx in 0..k {
                let rec =
                    &dataset.records[dataset.record_index(state_id, time_idx, basis_idx, shot_index)];
                items.push((basis_idx, rec.bits));
            }
        }
        batches.push(Batch { state_id, shot_index, items_by_time });
    }
    Ok(batches)
}

/// Batch NLL as a per-time loss: at each reported state, accumulate
/// `-log p(bits)` over the batch records, probabilities read as quadratic
/// forms in the cached rotation rows.
struct BatchNll<'a> {
    ctx: &'a TrainerContext,
    batch: &'a Batch,
    scale: f64,
}

impl TimeLoss for BatchNll<'_> {
    fn eval(&self, time_index: usize, state: &CMat) -> (f64, CMat) {
        let d = state.dim();
        let mut loss = 0.0;
        let mut cbar = CMat::zeros(d);
        for &(basis_idx, bits) in &self.batch.items_by_time[time_index] {
            let u = self.ctx.rotation(self.batch.state_id, time_index, basis_idx);
            // v = conj(row `bits` of U); p = v† rho v.
            let row = bits as usize;
            let mut p = 0.0;
            for a in 0..d {
                let va = u[(row, a)]; // conj(v_a)
                for b in 0..d {
                    let vb = u[(row, b)].conj(); // v_b
                    p += (va * state[(a, b)] * vb).re;
                }
            }
            if p > PROB_FLOOR {
                loss -= p.ln() * self.scale;
                let w = Complex64::new(-self.scale / p, 0.0);
                for a in 0..d {
                    let va_conj = u[(row, a)].conj(); // v_a
                    for b in 0..d {
                        let vb = u[(row, b)]; // conj(v_b)
                        cbar[(a, b)] += w * va_conj * vb;
                    }
                }
            } else {
                loss -= PROB_FLOOR.ln() * self.scale;
            }
        }
        (loss, cbar)
    }
}

/// Batch objective value and gradient: one integration serving all
/// timestamps and bases, plus the L2 term while the correction is enabled.
///
/// Returns (loss, gradient, smallest eigenvalue seen across the reported
/// states).
pub fn batch_loss_and_gradient(
    ctx: &TrainerContext,
    params: &GeneratorParams,
    nde_enabled: bool,
    l2_lambda: f64,
    batch: &Batch,
    integrator: &IntegratorConfig,
    mean_normalize: bool,
) -> Result<(f64, Vec<f64>, f64)> {
    let scale =
        if mean_normalize { 1.0 / ctx.batch_record_count() as f64 } else { 1.0 };
    let engine = FieldEngine::new(&ctx.ops, Some(&ctx.table), params, nde_enabled)?;
    let loss_fn = BatchNll { ctx, batch, scale };
    let out = evolve_with_gradient(
        &engine,
        &ctx.rho0s[batch.state_id],
        &ctx.times,
        &loss_fn,
        integrator,
    )?;
    let mut loss = out.loss;
    let mut grad = out.gradient;
    if nde_enabled && l2_lambda > 0.0 {
        if let Some(mlp) = &params.neural {
            loss += l2_lambda * mlp.squared_norm();
            let nh = params.hamiltonian_coeffs.len();
            let nl = params.raw_rates.len();
            for (g, w) in grad[nh + nl..].iter_mut().zip(mlp.flatten()) {
                *g += 2.0 * l2_lambda * w;
            }
        }
    }
    let min_eig = out
        .trajectory
        .min_eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &e| acc.min(e));
    Ok((loss, grad, min_eig))
}

/// Forward-only batch objective (no gradient); used by landscape scans and
/// the finite-difference oracle paths.
pub fn batch_loss(
    ctx: &TrainerContext,
    params: &GeneratorParams,
    nde_enabled: bool,
    l2_lambda: f64,
    batch: &Batch,
    integrator: &IntegratorConfig,
    mean_normalize: bool,
) -> Result<f64> {
    let scale = if mean_normalize { 1.0 / ctx.batch_record_count() as f64 } else { 1.0 };
    let engine = FieldEngine::new(&ctx.ops, Some(&ctx.table), params, nde_enabled)?;
    let loss_fn = BatchNll { ctx, batch, scale };
    let mut loss = crate::propagator::evaluate_loss(
        &engine,
        &ctx.rho0s[batch.state_id],
        &ctx.times,
        &loss_fn,
        integrator,
    )?;
    if nde_enabled && l2_lambda > 0.0 {
        if let Some(mlp) = &params.neural {
            loss += l2_lambda * mlp.squared_norm();
        }
    }
    Ok(loss)
}

/// Reference NLL for a batch (sum convention plus the L2 term when the
/// correction is enabled). Builds its rotations on the fly.
pub fn nll_loss(
    dataset: &ShotDataset,
    params: &GeneratorParams,
    nde_enabled: bool,
    l2_lambda: f64,
    batch: &Batch,
    integrator: &IntegratorConfig,
) -> Result<f64> {
    let ctx = TrainerContext::new(dataset)?;
    let (loss, _, _) =
        batch_loss_and_gradient(&ctx, params, nde_enabled, l2_lambda, batch, integrator, false)?;
    Ok(loss)
}

/// Initialize the variational point: Hamiltonian coefficients uniform in
/// (-1, 1), rates uniform in (0.2, 1) mapped through the inverse softplus,
/// then the neural weights when requested.
pub fn init_variational_params<R: rand::Rng>(
    model: &ModelSpec,
    with_neural: bool,
    hidden_width: Option<usize>,
    rng: &mut R,
) -> Result<GeneratorParams> {
    let nh = model.hamiltonian.parameter_count();
    let nl = model.dissipator.jump_count();
    let hamiltonian_coeffs: Vec<f64> = (0..nh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gammas: Vec<f64> = (0..nl).map(|_| rng.random_range(0.2..1.0)).collect();
    let raw_rates = raw_from_rates(&gammas)?;
    let neural = if with_neural {
        let dim = 1usize << (2 * model.n());
        Some(MlpParams::init(dim, hidden_width.unwrap_or(dim), rng))
    } else {
        None
    };
    Ok(GeneratorParams { hamiltonian_coeffs, raw_rates, neural })
}

fn phase_lr_vector(params: &GeneratorParams, phase: &CurriculumPhase) -> Vec<f64> {
    let nh = params.hamiltonian_coeffs.len();
    let nl = params.raw_rates.len();
    let nn = params.neural.as_ref().map_or(0, |m| m.parameter_count());
    let mut lr = Vec::with_capacity(nh + nl + nn);
    lr.extend(std::iter::repeat_n(phase.lr_h, nh));
    lr.extend(std::iter::repeat_n(phase.lr_l, nl));
    lr.extend(std::iter::repeat_n(if phase.nde_enabled { phase.lr_nde } else { 0.0 }, nn));
    lr
}

/// Relative improvement over the trailing window of a phase's epoch losses.
fn still_improving(losses: &[f64]) -> bool {
    if losses.len() < 2 {
        return false;
    }
    let window = losses.len().min(6);
    let first = losses[losses.len() - window];
    let last = losses[losses.len() - 1];
    (first - last) / first.abs().max(1e-12) > 1e-3
}

/// Build the vanilla phase list; the swap rule is applied at fine-tune entry.
fn vanilla_fine_tune_phases(cfg: &TrainerConfig, swap: bool) -> Vec<CurriculumPhase> {
    let (lr_h1, lr_l1) =
        if swap { (cfg.lr_main, cfg.lr_fine) } else { (cfg.lr_fine, cfg.lr_main) };
    vec![
        CurriculumPhase {
            name: "2".into(),
            epochs: cfg.fine_tune_epochs,
            lr_h: lr_h1,
            lr_l: lr_l1,
            lr_nde: 0.0,
            nde_enabled: false,
            l2_lambda: 0.0,
            reset_optimizer_on_entry: true,
        },
        CurriculumPhase {
            name: "3".into(),
            epochs: cfg.fine_tune_epochs,
            lr_h: cfg.lr_fine,
            lr_l: cfg.lr_fine,
            lr_nde: 0.0,
            nde_enabled: false,
            l2_lambda: 0.0,
            reset_optimizer_on_entry: true,
        },
    ]
}

struct CurriculumDriver<'a> {
    ctx: &'a TrainerContext,
    dataset: &'a ShotDataset,
    cfg: &'a TrainerConfig,
    integrator: &'a IntegratorConfig,
    params: GeneratorParams,
    adam: AdamState,
    run_phases: Vec<CurriculumPhase>,
    epoch_log: Vec<EpochLog>,
    snapshots: Vec<GeneratorParams>,
    epoch_counter: usize,
    phase_losses: Vec<f64>,
    moment_norms: Vec<f64>,
}

impl<'a> CurriculumDriver<'a> {
    fn new(
        ctx: &'a TrainerContext,
        dataset: &'a ShotDataset,
        cfg: &'a TrainerConfig,
        integrator: &'a IntegratorConfig,
        params: GeneratorParams,
    ) -> Self {
        let dim = params.flatten().len();
        let snapshots = vec![params.clone()];
        CurriculumDriver {
            ctx,
            dataset,
            cfg,
            integrator,
            params,
            adam: AdamState::new(dim),
            run_phases: Vec::new(),
            epoch_log: Vec::new(),
            snapshots,
            epoch_counter: 0,
            phase_losses: Vec::new(),
            moment_norms: Vec::new(),
        }
    }

    /// Run one phase; returns the per-epoch mean losses of that phase.
    fn run_phase(&mut self, phase: CurriculumPhase) -> Result<()> {
        if phase.reset_optimizer_on_entry {
            self.adam.reset();
        }
        let moment_norm: f64 = self
            .adam
            .first
            .iter()
            .chain(self.adam.second.iter())
            .map(|m| m * m)
            .sum::<f64>()
            .sqrt();
        self.moment_norms.push(moment_norm);
        self.phase_losses.clear();
        let lr = phase_lr_vector(&self.params, &phase);
        for _ in 0..phase.epochs {
            let mut batches = make_epoch_batches(
                self.dataset,
                &mut substream(self.cfg.seed, "shuffle", self.epoch_counter as u64),
            )?;
            let mut loss_acc = 0.0;
            let mut grad_norm_acc = 0.0;
            let mut min_eig = f64::INFINITY;
            for batch in batches.drain(..) {
                let (loss, grad, eig) = batch_loss_and_gradient(
                    self.ctx,
                    &self.params,
                    phase.nde_enabled,
                    phase.l2_lambda,
                    &batch,
                    self.integrator,
                    self.cfg.mean_normalize,
                )?;
                let mut flat = self.params.flatten();
                adam_step(&mut self.adam, &mut flat, &grad, &lr)?;
                self.params = self.params.unflatten_like(&flat);
                loss_acc += loss;
                grad_norm_acc += grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                min_eig = min_eig.min(eig);
            }
            let steps = (self.dataset.meta.protocol.num_states
                * self.dataset.meta.protocol.shots_per_basis) as f64;
            let mean_loss = loss_acc / steps;
            self.epoch_counter += 1;
            self.epoch_log.push(EpochLog {
                epoch: self.epoch_counter,
                phase: phase.name.clone(),
                mean_loss,
                grad_norm: grad_norm_acc / steps,
                min_eigenvalue_seen: min_eig,
            });
            self.snapshots.push(self.params.clone());
            self.phase_losses.push(mean_loss);
        }
        self.run_phases.push(phase);
        Ok(())
    }

    fn wants_fine_tune(&self) -> bool {
        match self.cfg.fine_tune {
            FineTunePolicy::Always => true,
            FineTunePolicy::Never => false,
            FineTunePolicy::Auto => still_improving(&self.phase_losses),
        }
    }

    /// The swap rule: fine-tune learning rates exchange blocks when the
    /// dissipative magnitude exceeds the Hamiltonian one at entry.
    fn swap_rule(&self) -> bool {
        let l_mag: f64 = rates_from_raw(&self.params.raw_rates).iter().sum();
        let h_mag: f64 = self.params.hamiltonian_coeffs.iter().map(|c| c.abs()).sum();
        l_mag > h_mag
    }

    fn finish(self, swap_applied: bool, final_nde_enabled: bool, wall: f64) -> TrainingRun {
        TrainingRun {
            phases: self.run_phases,
            epoch_log: self.epoch_log,
            snapshots: self.snapshots,
            final_params: self.params,
            swap_applied,
            final_nde_enabled,
            optimizer_moments_at_phase_entry: self.moment_norms,
            wall_seconds: wall,
        }
    }
}

/// Physics-only curriculum: one main phase, then (when triggered) the
/// two-stage fine-tune with the learning-rate swap rule.
pub fn run_vanilla_curriculum(
    dataset: &ShotDataset,
    init_params: &GeneratorParams,
    cfg: &TrainerConfig,
    integrator: &IntegratorConfig,
) -> Result<TrainingRun> {
    let started = std::time::Instant::now();
    let ctx = TrainerContext::new(dataset)?;
    let mut driver = CurriculumDriver::new(&ctx, dataset, cfg, integrator, init_params.clone());
    driver.run_phase(CurriculumPhase {
        name: "1".into(),
        epochs: cfg.main_epochs,
        lr_h: cfg.lr_main,
        lr_l: cfg.lr_main,
        lr_nde: 0.0,
        nde_enabled: false,
        l2_lambda: 0.0,
        reset_optimizer_on_entry: true,
    })?;
    let mut swap_applied = false;
    if driver.wants_fine_tune() {
        swap_applied = driver.swap_rule();
        for phase in vanilla_fine_tune_phases(cfg, swap_applied) {
            driver.run_phase(phase)?;
        }
    }
    Ok(driver.finish(swap_applied, false, started.elapsed().as_secs_f64()))
}

/// Neural-augmented curriculum: joint warm-up with the correction enabled,
/// refinement with it switched off (forward and backward), then the same
/// fine-tune as the vanilla regime. The returned model evaluates without
/// any neural contribution.
pub fn run_nde_curriculum(
    dataset: &ShotDataset,
    init_params: &GeneratorParams,
    cfg: &TrainerConfig,
    integrator: &IntegratorConfig,
) -> Result<TrainingRun> {
    if init_params.neural.is_none() {
        return Err(Error::InvalidConfig(
            "the neural curriculum requires initialized neural weights".into(),
        ));
    }
    let started = std::time::Instant::now();
    let ctx = TrainerContext::new(dataset)?;
    let mut driver = CurriculumDriver::new(&ctx, dataset, cfg, integrator, init_params.clone());
    driver.run_phase(CurriculumPhase {
        name: "A".into(),
        epochs: cfg.main_epochs,
        lr_h: cfg.lr_main,
        lr_l: cfg.lr_main,
        lr_nde: cfg.lr_nde,
        nde_enabled: true,
        l2_lambda: cfg.l2_lambda,
        reset_optimizer_on_entry: true,
    })?;
    driver.run_phase(CurriculumPhase {
        name: "B".into(),
        epochs: cfg.refine_epochs,
        lr_h: cfg.lr_main,
        lr_l: cfg.lr_main,
        lr_nde: 0.0,
        nde_enabled: false,
        l2_lambda: 0.0,
        reset_optimizer_on_entry: true,
    })?;
    let mut swap_applied = false;
    if driver.wants_fine_tune() {
        swap_applied = driver.swap_rule();
        for mut phase in vanilla_fine_tune_phases(cfg, swap_applied) {
            phase.name = "C".into();
            driver.run_phase(phase)?;
        }
    }
    if cfg.residual_fine_tune {
        driver.run_phase(CurriculumPhase {
            name: "R".into(),
            epochs: cfg.residual_epochs,
            lr_h: 0.0,
            lr_l: 0.0,
            lr_nde: cfg.lr_nde,
            nde_enabled: true,
            l2_lambda: cfg.l2_lambda,
            reset_optimizer_on_entry: true,
        })?;
    }
    Ok(driver.finish(swap_applied, false, started.elapsed().as_secs_f64()))
}

pub fn run_curriculum(
    dataset: &ShotDataset,
    init_params: &GeneratorParams,
    cfg: &TrainerConfig,
    integrator: &IntegratorConfig,
) -> Result<TrainingRun> {
    match cfg.kind {
        TrainerKind::Vanilla => run_vanilla_curriculum(dataset, init_params, cfg, integrator),
        TrainerKind::Nde => run_nde_curriculum(dataset, init_params, cfg, integrator),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{
        DissipatorFamily, ExperimentConfig, HamiltonianFamily, HamiltonianSpec,
        sample_true_params,
    };
    use crate::measurement::{ProtocolConfig, generate_dataset};
    use crate::propagator::finite_diff;

    fn small_dataset(seed: u64) -> (ShotDataset, crate::generators::GroundTruth) {
        let config = ExperimentConfig {
            family: HamiltonianFamily::Xyz,
            n: 2,
            dissipator: DissipatorFamily::Phase,
            noise_ratio: 1.0,
            seed,
        };
        let truth = sample_true_params(&config, &mut substream(seed, "truth", 0)).unwrap();
        let protocol = ProtocolConfig {
            num_states: 2,
            times: vec![0.2, 0.6],
            bases_per_point: 3,
            shots_per_basis: 4,
            seed,
        };
        let ds = generate_dataset(
            &truth.model,
            &truth.hamiltonian_coeffs,
            &truth.rates,
            &protocol,
            &IntegratorConfig::default(),
            1.0,
        )
        .unwrap();
        (ds, truth)
    }

    #[test]
    fn adam_basics() {
        let mut state = AdamState::new(2);
        let mut params = vec![1.0, -2.0];
        // Zero gradient leaves parameters unchanged.
        adam_step(&mut state, &mut params, &[0.0, 0.0], &[1e-3, 1e-3]).unwrap();
        assert_eq!(params, vec![1.0, -2.0]);

        // First step magnitude approximately equals the learning rate.
        let mut state = AdamState::new(1);
        let mut p = vec![0.0];
        adam_step(&mut state, &mut p, &[0.5], &[1e-3]).unwrap();
        let expected = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12, "{} vs {expected}", p[0]);
        assert!((p[0].abs() - 1e-3).abs() < 1e-7);

        // Frozen blocks stay bit-identical.
        let mut state = AdamState::new(2);
        let mut p = vec![0.25, 0.75];
        adam_step(&mut state, &mut p, &[1.0, 1.0], &[1e-3, 0.0]).unwrap();
        assert_eq!(p[1], 0.75);
        assert!(p[0] != 0.25);

        let mut state = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut state, &mut [0.0], &[f64::NAN], &[1e-3]),
            Err(Error::NanGradient { .. })
        ));
    }

    #[test]
    fn epoch_batches_partition_pairs() {
        let (ds, _) = small_dataset(3);
        let mut rng = substream(3, "shuffle", 0);
        let batches = make_epoch_batches(&ds, &mut rng).unwrap();
        // L * M pairs.
        assert_eq!(batches.len(), 2 * 4);
        let mut seen = std::collections::HashSet::new();
        for b in &batches {
            assert!(seen.insert((b.state_id, b.shot_index)));
            assert_eq!(b.items_by_time.len(), 2);
            for items in &b.items_by_time {
                assert_eq!(items.len(), 3);
            }
        }
        // Reproducible order.
        let again = make_epoch_batches(&ds, &mut substream(3, "shuffle", 0)).unwrap();
        let order_a: Vec<_> = batches.iter().map(|b| (b.state_id, b.shot_index)).collect();
        let order_b: Vec<_> = again.iter().map(|b| (b.state_id, b.shot_index)).collect();
        assert_eq!(order_a, order_b);
    }

    #[test]
    fn incomplete_dataset_is_rejected() {
        let (mut ds, _) = small_dataset(4);
        ds.records.pop();
        let mut rng = substream(4, "shuffle", 0);
        assert!(matches!(
            make_epoch_batches(&ds, &mut rng),
            Err(Error::IncompleteDataset(_))
        ));
    }

    #[test]
    fn nll_matches_per_record_oracle() {
        // Brute force: one fresh integration per record, probabilities from
        // outcome_distribution, summed log losses.
        use crate::measurement::outcome_distribution;
        use crate::propagator::evolve;

        let (ds, truth) = small_dataset(5);
        let ctx = TrainerContext::new(&ds).unwrap();
        let params = GeneratorParams {
            hamiltonian_coeffs: truth.hamiltonian_coeffs.clone(),
            raw_rates: raw_from_rates(&truth.rates).unwrap(),
            neural: None,
        };
        let mut rng = substream(5, "shuffle", 0);
        let batch = &make_epoch_batches(&ds, &mut rng).unwrap()[0];
        let cfg = IntegratorConfig::default();
        let fast = nll_loss(&ds, &params, false, 0.0, batch, &cfg).unwrap();

        let engine = FieldEngine::new(&ctx.ops, None, &params, false).unwrap();
        let mut brute = 0.0;
        for (time_idx, items) in batch.items_by_time.iter().enumerate() {
            for &(basis_idx, bits) in items {
                let rec =
                    &ds.records[ds.record_index(batch.state_id, time_idx, basis_idx, batch.shot_index)];
                assert_eq!(rec.bits, bits);
                let traj = evolve(
                    |r: &CMat| engine.apply(r),
                    &ctx.rho0s[batch.state_id],
                    &[rec.t],
                    &cfg,
                )
                .unwrap();
                let probs = outcome_distribution(&traj.states[0], &rec.basis).unwrap();
                brute -= probs[bits as usize].max(PROB_FLOOR).ln();
            }
        }
        assert!(
            (fast - brute).abs() < 1e-8 * brute.abs().max(1.0),
            "fast {fast} vs brute {brute}"
        );
    }

    #[test]
    fn perfectly_predicted_data_has_zero_loss() {
        // H = 0 and negligible rates: a Z-eigenstate stays put, so Z-basis
        // outcomes are deterministic and the NLL vanishes.
        use crate::measurement::{DatasetMeta, MeasurementRecord, ShotDataset};
        use crate::generators::{ModelDescriptor, ModelSpec};

        let model = ModelSpec::new(HamiltonianSpec::Xyz { n: 1 }, DissipatorFamily::Phase);
        let protocol = ProtocolConfig {
            num_states: 1,
            times: vec![0.5],
            bases_per_point: 1,
            shots_per_basis: 1,
            seed: 0,
        };
        let meta = DatasetMeta {
            version: 1,
            model: ModelDescriptor::from_model(&model, 1.0, 0),
            protocol,
            truth: None,
            initial_states: vec!["z+".into()],
        };
        let ds = ShotDataset {
            meta,
            initial_states: vec!["z+".parse().unwrap()],
            records: vec![MeasurementRecord {
                state_id: 0,
                t: 0.5,
                basis: "Z".parse().unwrap(),
                bits: 0,
            }],
        };
        let params = GeneratorParams {
            hamiltonian_coeffs: vec![0.0],
            raw_rates: vec![-40.0],
            neural: None,
        };
        let mut rng = substream(0, "shuffle", 0);
        let batch = &make_epoch_batches(&ds, &mut rng).unwrap()[0];
        let loss = nll_loss(&ds, &params, false, 0.0, batch, &IntegratorConfig::default()).unwrap();
        assert!(loss.abs() < 1e-10, "loss {loss}");
    }

    #[test]
    fn single_half_probability_record_gives_ln2() {
        use crate::measurement::{DatasetMeta, MeasurementRecord, ShotDataset};
        use crate::generators::{ModelDescriptor, ModelSpec};

        // |0><0| measured in X: p = 1/2 for either outcome.
        let model = ModelSpec::new(HamiltonianSpec::Xyz { n: 1 }, DissipatorFamily::Phase);
        let protocol = ProtocolConfig {
            num_states: 1,
            times: vec![0.3],
            bases_per_point: 1,
            shots_per_basis: 1,
            seed: 0,
        };
        let meta = DatasetMeta {
            version: 1,
            model: ModelDescriptor::from_model(&model, 1.0, 0),
            protocol,
            truth: None,
            initial_states: vec!["z+".into()],
        };
        let ds = ShotDataset {
            meta,
            initial_states: vec!["z+".parse().unwrap()],
            records: vec![MeasurementRecord {
                state_id: 0,
                t: 0.3,
                basis: "X".parse().unwrap(),
                bits: 1,
            }],
        };
        let params = GeneratorParams {
            hamiltonian_coeffs: vec![0.0],
            raw_rates: vec![-40.0],
            neural: None,
        };
        let mut rng = substream(0, "shuffle", 0);
        let batch = &make_epoch_batches(&ds, &mut rng).unwrap()[0];
        let loss = nll_loss(&ds, &params, false, 0.0, batch, &IntegratorConfig::default()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let (ds, truth) = small_dataset(6);
        let ctx = TrainerContext::new(&ds).unwrap();
        let mut init_rng = substream(6, "init", 0);
        let params = init_variational_params(&truth.model, false, None, &mut init_rng).unwrap();
        let mut rng = substream(6, "shuffle", 0);
        let batch = make_epoch_batches(&ds, &mut rng).unwrap().swap_remove(1);
        let cfg = IntegratorConfig { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        let (_, grad, _) =
            batch_loss_and_gradient(&ctx, &params, false, 0.0, &batch, &cfg, false).unwrap();

        let flat = params.flatten();
        let fd = finite_diff(
            |x| {
                let p = params.unflatten_like(x);
                let (loss, _, _) =
                    batch_loss_and_gradient(&ctx, &p, false, 0.0, &batch, &cfg, false).unwrap();
                loss
            },
            &flat,
            1e-5,
        );
        for (k, (a, f)) in grad.iter().zip(fd.iter()).enumerate() {
            let denom = f.abs().max(1e-8);
            assert!((a - f).abs() / denom < 1e-4, "component {k}: {a} vs {f}");
        }
    }

    #[test]
    fn curriculum_mechanics_vanilla() {
        let (ds, truth) = small_dataset(7);
        let mut init_rng = substream(7, "init", 0);
        let params = init_variational_params(&truth.model, false, None, &mut init_rng).unwrap();
        let mut cfg = TrainerConfig::vanilla(7);
        cfg.main_epochs = 2;
        cfg.fine_tune_epochs = 1;
        cfg.fine_tune = FineTunePolicy::Always;
        let run = run_vanilla_curriculum(&ds, &params, &cfg, &IntegratorConfig::default()).unwrap();
        assert_eq!(run.phases.len(), 3);
        assert_eq!(run.epoch_log.len(), 2 + 1 + 1);
        assert_eq!(run.snapshots.len(), 4 + 1);
        assert!(run.phases.iter().all(|p| p.reset_optimizer_on_entry));
        // Fine-tune learning rates: unswapped means (lr_fine, lr_main).
        let p2 = &run.phases[1];
        if run.swap_applied {
            assert_eq!((p2.lr_h, p2.lr_l), (cfg.lr_main, cfg.lr_fine));
        } else {
            assert_eq!((p2.lr_h, p2.lr_l), (cfg.lr_fine, cfg.lr_main));
        }
        let p3 = &run.phases[2];
        assert_eq!((p3.lr_h, p3.lr_l), (cfg.lr_fine, cfg.lr_fine));
        // Rates stay positive at every snapshot.
        for snap in &run.snapshots {
            for g in snap.rates() {
                assert!(g > 0.0);
            }
        }
    }

    #[test]
    fn zero_learning_rates_freeze_everything() {
        let (ds, truth) = small_dataset(8);
        let mut init_rng = substream(8, "init", 0);
        let params = init_variational_params(&truth.model, false, None, &mut init_rng).unwrap();
        let mut cfg = TrainerConfig::vanilla(8);
        cfg.main_epochs = 1;
        cfg.fine_tune = FineTunePolicy::Never;
        cfg.lr_main = 0.0;
        let run = run_vanilla_curriculum(&ds, &params, &cfg, &IntegratorConfig::default()).unwrap();
        assert_eq!(run.final_params, params);
    }

    #[test]
    fn nde_curriculum_freezes_neural_weights_after_phase_a() {
        let (ds, truth) = small_dataset(9);
        let mut init_rng = substream(9, "init", 0);
        let params = init_variational_params(&truth.model, true, Some(4), &mut init_rng).unwrap();
        let mut cfg = TrainerConfig::nde(9);
        cfg.main_epochs = 1;
        cfg.refine_epochs = 1;
        cfg.fine_tune_epochs = 1;
        cfg.fine_tune = FineTunePolicy::Always;
        let run = run_nde_curriculum(&ds, &params, &cfg, &IntegratorConfig::default()).unwrap();
        assert_eq!(run.phases.len(), 4); // A, B, C, C
        assert!(!run.final_nde_enabled);
        let after_a = run.snapshots[1 + cfg.main_epochs].neural.clone().unwrap();
        for snap in &run.snapshots[1 + cfg.main_epochs..] {
            assert_eq!(snap.neural.as_ref().unwrap(), &after_a, "neural weights moved");
        }
        // Phase A moved them (nonzero gradient through the enabled term).
        let initial = run.snapshots[0].neural.clone().unwrap();
        assert_ne!(initial.flatten(), after_a.flatten());
        // Zero-init output layer: first-step loss equals the physics-only loss.
        let phase_names: Vec<&str> = run.phases.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(phase_names, ["A", "B", "C", "C"]);
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, truth) = small_dataset(10);
        let mut init_rng = substream(10, "init", 0);
        let params = init_variational_params(&truth.model, false, None, &mut init_rng).unwrap();
        let mut cfg = TrainerConfig::vanilla(10);
        cfg.main_epochs = 2;
        cfg.fine_tune = FineTunePolicy::Never;
        let a = run_vanilla_curriculum(&ds, &params, &cfg, &IntegratorConfig::default()).unwrap();
        let b = run_vanilla_curriculum(&ds, &params, &cfg, &IntegratorConfig::default()).unwrap();
        assert_eq!(a.loss_csv(), b.loss_csv());
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn init_params_in_documented_ranges() {
        let model = ModelSpec::new(HamiltonianSpec::Xyz { n: 3 }, DissipatorFamily::Thermal);
        let mut rng = substream(11, "init", 0);
        for _ in 0..10 {
            let p = init_variational_params(&model, false, None, &mut rng).unwrap();
            for c in &p.hamiltonian_coeffs {
                assert!((-1.0..1.0).contains(c));
            }
            for g in p.rates() {
                assert!((0.2..1.0).contains(&g));
            }
        }
    }
}
