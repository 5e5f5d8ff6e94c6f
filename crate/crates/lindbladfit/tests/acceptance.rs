//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers (visible with `--nocapture`).
//!
//! The heavyweight end-to-end criteria share one set of training runs
//! through a process-wide cell; every other criterion is self-contained.

use std::sync::OnceLock;
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;

use lindbladfit::CMat;
use lindbladfit::evaluation::{
    InitStrategy, SuccessReport, infidelity_curve, run_seed_pipeline, success_rate,
};
use lindbladfit::generators::{
    DissipatorFamily, ExperimentConfig, GeneratorOps, GeneratorParams, HamiltonianFamily,
    HamiltonianSpec, ModelSpec, apply_physical_generator, build_hamiltonian,
    build_jump_operators, raw_from_rates, rates_from_raw, sample_true_params,
};
use lindbladfit::measurement::{
    ProtocolConfig, generate_dataset, outcome_distribution, sample_bases, sample_shots,
};
use lindbladfit::neural::combined_field;
use lindbladfit::propagator::{FieldEngine, IntegratorConfig, evolve, finite_diff};
use lindbladfit::rng::{derive_seed, substream};
use lindbladfit::spinops::product_eigenstate;
use lindbladfit::training::{
    FineTunePolicy, TrainerConfig, TrainerContext, batch_loss, batch_loss_and_gradient,
    init_variational_params, make_epoch_batches, run_nde_curriculum, run_vanilla_curriculum,
};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn ten_times() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

/// Reduced dataset protocol used by the end-to-end criteria.
fn reduced_protocol() -> ProtocolConfig {
    ProtocolConfig {
        num_states: 5,
        times: ten_times(),
        bases_per_point: 50,
        shots_per_basis: 50,
        seed: 0,
    }
}

fn random_hermitian<R: rand::Rng>(d: usize, rng: &mut R) -> CMat {
    let mut m = CMat::zeros(d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
    }
    m.hermitian_part()
}

/// criterion 1: analytic dephasing. N=1, H=0, rate 0.5, rho0 = |+><+|;
/// the off-diagonal at t=1 must equal 0.5 e^{-1} within 1e-6 in under 1 s.
#[test]
fn acceptance_01_analytic_dephasing() {
    let started = Instant::now();
    let model = ModelSpec::new(HamiltonianSpec::Xyz { n: 1 }, DissipatorFamily::Phase);
    let ops = GeneratorOps::new(&model).unwrap();
    let params = GeneratorParams {
        hamiltonian_coeffs: vec![0.0],
        raw_rates: raw_from_rates(&[0.5]).unwrap(),
        neural: None,
    };
    let engine = FieldEngine::new(&ops, None, &params, false).unwrap();
    let rho0 = product_eigenstate(&"x+".parse().unwrap()).unwrap();
    let traj =
        evolve(|r: &CMat| engine.apply(r), &rho0, &[1.0], &IntegratorConfig::default()).unwrap();
    let got = traj.states[0].matrix()[(0, 1)];
    let want = 0.5 * (-1.0f64).exp();
    let err = (got.re - want).abs().max(got.im.abs());
    let elapsed = started.elapsed().as_secs_f64();
    assert!(err <= 1e-6, "dephasing coherence error {err}");
    assert!(elapsed < 1.0, "runtime {elapsed}s exceeds 1s");
    println!("[PASS] criterion 1: |rho01(1) - 0.5e^-1| = {err:.2e} in {elapsed:.3}s");
}

/// criterion 2: analytic amplitude damping. N=1, lowering rate 1,
/// rho0 = |1><1|; the excited population at t=1 is e^{-1} within 1e-6.
#[test]
fn acceptance_02_analytic_amplitude_damping() {
    let model = ModelSpec::new(HamiltonianSpec::Xyz { n: 1 }, DissipatorFamily::Thermal);
    let ops = GeneratorOps::new(&model).unwrap();
    // Raising pre-rate -60 maps to ~9e-27: numerically pure decay.
    let params = GeneratorParams {
        hamiltonian_coeffs: vec![0.0],
        raw_rates: vec![raw_from_rates(&[1.0]).unwrap()[0], -60.0],
        neural: None,
    };
    let engine = FieldEngine::new(&ops, None, &params, false).unwrap();
    let rho0 = product_eigenstate(&"z-".parse().unwrap()).unwrap();
    let traj =
        evolve(|r: &CMat| engine.apply(r), &rho0, &[1.0], &IntegratorConfig::default()).unwrap();
    let got = traj.states[0].matrix()[(1, 1)].re;
    let err = (got - (-1.0f64).exp()).abs();
    assert!(err <= 1e-6, "population error {err}");
    println!("[PASS] criterion 2: |rho11(1) - e^-1| = {err:.2e}");
}

fn all_families() -> [HamiltonianFamily; 4] {
    [
        HamiltonianFamily::Rydberg,
        HamiltonianFamily::Superconducting,
        HamiltonianFamily::Xyz,
        HamiltonianFamily::Pxp,
    ]
}

fn all_dissipators() -> [DissipatorFamily; 3] {
    [DissipatorFamily::Phase, DissipatorFamily::Thermal, DissipatorFamily::Combined]
}

/// Model structure at N=2 for a family/dissipator combination; geometry for
/// the Rydberg family is realized from the sampling path.
fn n2_model<R: rand::Rng>(
    family: HamiltonianFamily,
    dissipator: DissipatorFamily,
    rng: &mut R,
) -> ModelSpec {
    match family {
        HamiltonianFamily::Pxp => ModelSpec::new(HamiltonianSpec::Pxp { n: 2 }, dissipator),
        _ => {
            let config =
                ExperimentConfig { family, n: 2, dissipator, noise_ratio: 1.0, seed: 0 };
            sample_true_params(&config, rng).unwrap().model
        }
    }
}

/// criterion 3: gradient fidelity on 20 random N=2 instances spanning all
/// families and dissipators; the full-pipeline adjoint gradient matches
/// central finite differences (h = 1e-5) to 1e-4 relative (1e-8 absolute for
/// near-zero components) in under 5 minutes.
#[test]
fn acceptance_03_gradient_fidelity() {
    let started = Instant::now();
    let mut rng = substream(301, "acceptance", 0);
    let mut combos: Vec<(HamiltonianFamily, DissipatorFamily)> = Vec::new();
    for f in all_families() {
        for d in all_dissipators() {
            combos.push((f, d));
        }
    }
    for k in 0..8 {
        combos.push(combos[k % 12]);
    }
    assert_eq!(combos.len(), 20);

    let cfg = IntegratorConfig { rtol: 1e-10, atol: 1e-12, ..Default::default() };
    let mut worst_rel: f64 = 0.0;
    for (idx, (family, dissipator)) in combos.into_iter().enumerate() {
        let model = n2_model(family, dissipator, &mut rng);
        let nh = model.hamiltonian.parameter_count();
        let nl = model.dissipator.jump_count();
        let params = GeneratorParams {
            hamiltonian_coeffs: (0..nh).map(|_| rng.random_range(-1.0..1.0)).collect(),
            raw_rates: (0..nl).map(|_| rng.random_range(-1.0..1.0)).collect(),
            neural: None,
        };
        let truth_rates = rates_from_raw(&params.raw_rates);
        let protocol = ProtocolConfig {
            num_states: 1,
            times: vec![0.3, 0.6, 1.0],
            bases_per_point: 4,
            shots_per_basis: 2,
            seed: derive_seed(301, "grad-data", idx as u64),
        };
        let dataset = generate_dataset(
            &model,
            &params.hamiltonian_coeffs,
            &truth_rates,
            &protocol,
            &cfg,
            1.0,
        )
        .unwrap();
        let ctx = TrainerContext::new(&dataset).unwrap();
        let batch =
            make_epoch_batches(&dataset, &mut substream(301, "grad-batch", idx as u64))
                .unwrap()
                .swap_remove(0);
        let (_, grad, _) =
            batch_loss_and_gradient(&ctx, &params, false, 0.0, &batch, &cfg, false).unwrap();
        let flat = params.flatten();
        let fd = finite_diff(
            |x| {
                let p = params.unflatten_like(x);
                batch_loss(&ctx, &p, false, 0.0, &batch, &cfg, false).unwrap()
            },
            &flat,
            1e-5,
        );
        for (k, (a, f)) in grad.iter().zip(fd.iter()).enumerate() {
            if f.abs() < 1e-8 {
                assert!(
                    (a - f).abs() <= 1e-8,
                    "instance {idx} ({family:?}/{dissipator:?}) component {k}: {a} vs {f}"
                );
            } else {
                let rel = (a - f).abs() / f.abs();
                worst_rel = worst_rel.max(rel);
                assert!(
                    rel <= 1e-4,
                    "instance {idx} ({family:?}/{dissipator:?}) component {k}: {a} vs {f} (rel {rel:.2e})"
                );
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "runtime {elapsed}s exceeds 5 minutes");
    println!(
        "[PASS] criterion 3: 20 instances, worst relative gradient deviation {worst_rel:.2e} in {elapsed:.1}s"
    );
}

/// criterion 4: physicality of reported states across a grid of test
/// trajectories: unit trace and Hermiticity to 1e-10, smallest eigenvalue
/// no lower than -1e-7.
#[test]
fn acceptance_04_physicality() {
    let mut rng = substream(304, "acceptance", 0);
    let cfg = IntegratorConfig::default();
    let mut checked = 0usize;
    let mut worst_eig: f64 = 0.0;
    for (i, (family, dissipator)) in all_families()
        .into_iter()
        .flat_map(|f| all_dissipators().into_iter().map(move |d| (f, d)))
        .enumerate()
    {
        for n in [2usize, 3] {
            if family == HamiltonianFamily::Pxp && n == 2 {
                continue; // empty Hamiltonian block has no noise scale
            }
            let ratio = [0.01, 1.0, 10.0][i % 3];
            let config = ExperimentConfig { family, n, dissipator, noise_ratio: ratio, seed: 0 };
            let truth =
                sample_true_params(&config, &mut substream(304, "truth", i as u64)).unwrap();
            let ops = GeneratorOps::new(&truth.model).unwrap();
            let params = GeneratorParams {
                hamiltonian_coeffs: truth.hamiltonian_coeffs.clone(),
                raw_rates: raw_from_rates(&truth.rates).unwrap(),
                neural: None,
            };
            let engine = FieldEngine::new(&ops, None, &params, false).unwrap();
            let spec = lindbladfit::measurement::sample_initial_states(
                1,
                n,
                &mut substream(304, "states", i as u64),
            )
            .pop()
            .unwrap();
            let rho0 = product_eigenstate(&spec).unwrap();
            let traj = evolve(|r: &CMat| engine.apply(r), &rho0, &ten_times(), &cfg).unwrap();
            for (state, &min_eig) in traj.states.iter().zip(traj.min_eigenvalues.iter()) {
                let m = state.matrix();
                assert!((m.trace() - c(1.0, 0.0)).norm() <= 1e-10, "trace violation");
                assert!(m.hermiticity_deviation() <= 1e-10, "hermiticity violation");
                assert!(min_eig >= -1e-7, "negative eigenvalue {min_eig}");
                worst_eig = worst_eig.min(min_eig);
                checked += 1;
            }
            assert!(traj.raw_trace_drift <= 10.0 * cfg.atol, "raw trace drift");
        }
    }
    let _ = &mut rng;
    println!(
        "[PASS] criterion 4: {checked} reported states physical (worst min-eigenvalue {worst_eig:.2e})"
    );
}

/// Independent vectorized-Liouvillian oracle under row-major vec:
/// S = -i(H (x) I - I (x) H^T)
///     + sum_a g_a (L (x) conj(L) - (1/2)(L†L (x) I + I (x) (L†L)^T)).
fn superoperator_oracle(h: &CMat, jumps: &[CMat], rates: &[f64]) -> CMat {
    let d = h.dim();
    let eye = CMat::identity(d);
    let transpose = |m: &CMat| m.adjoint().conjugate_entries();
    let mut s = h.kron(&eye).sub(&eye.kron(&transpose(h))).scale(c(0.0, -1.0));
    for (l, &g) in jumps.iter().zip(rates.iter()) {
        let term = l
            .kron(&l.conjugate_entries())
            .sub(&l.adjoint().matmul(l).kron(&eye).scale(c(0.5, 0.0)))
            .sub(&eye.kron(&transpose(&l.adjoint().matmul(l))).scale(c(0.5, 0.0)));
        s.axpy(c(g, 0.0), &term);
    }
    s
}

/// criterion 5: the generator agrees with an independently assembled 16x16
/// vectorized Liouvillian on 50 random (params, rho) pairs at N=2 to 1e-10.
#[test]
fn acceptance_05_superoperator_oracle() {
    let mut rng = substream(305, "acceptance", 0);
    let mut worst: f64 = 0.0;
    for pair in 0..50u64 {
        let family = all_families()[(pair % 4) as usize];
        let dissipator = all_dissipators()[(pair % 3) as usize];
        let model = n2_model(family, dissipator, &mut rng);
        let nh = model.hamiltonian.parameter_count();
        let nl = model.dissipator.jump_count();
        let theta_h: Vec<f64> = (0..nh).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta_l: Vec<f64> = (0..nl).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rho = random_hermitian(4, &mut rng);

        let direct = apply_physical_generator(&model, &theta_h, &theta_l, &rho).unwrap();

        let h = build_hamiltonian(&model.hamiltonian, &theta_h).unwrap();
        let jumps = build_jump_operators(&model.dissipator).unwrap();
        let s = superoperator_oracle(&h, &jumps, &rates_from_raw(&theta_l));
        assert_eq!(s.dim(), 16);
        let mut via_superop = CMat::zeros(4);
        for row in 0..16 {
            let mut acc = c(0.0, 0.0);
            for col in 0..16 {
                acc += s[(row, col)] * rho[(col / 4, col % 4)];
            }
            via_superop[(row / 4, row % 4)] = acc;
        }
        let dev = direct.max_abs_diff(&via_superop);
        worst = worst.max(dev);
        assert!(dev <= 1e-10, "pair {pair}: deviation {dev}");
    }
    println!("[PASS] criterion 5: 50 random pairs, worst deviation {worst:.2e}");
}

/// criterion 6: empirical shot frequencies at N=2 with 10^4 shots per basis
/// stay within total-variation 0.05 of the exact Born distribution in at
/// least 95% of cells.
#[test]
fn acceptance_06_born_statistics() {
    let mut rng = substream(306, "acceptance", 0);
    let config = ExperimentConfig {
        family: HamiltonianFamily::Xyz,
        n: 2,
        dissipator: DissipatorFamily::Thermal,
        noise_ratio: 1.0,
        seed: 0,
    };
    let truth = sample_true_params(&config, &mut rng).unwrap();
    let ops = GeneratorOps::new(&truth.model).unwrap();
    let params = GeneratorParams {
        hamiltonian_coeffs: truth.hamiltonian_coeffs.clone(),
        raw_rates: raw_from_rates(&truth.rates).unwrap(),
        neural: None,
    };
    let engine = FieldEngine::new(&ops, None, &params, false).unwrap();
    let times = [0.1, 0.4, 0.7, 1.0];
    let mut cells = 0usize;
    let mut ok = 0usize;
    let mut worst_tv: f64 = 0.0;
    for (s_idx, state_spec) in ["x+,z-", "y-,x+"].iter().enumerate() {
        let rho0 = product_eigenstate(&state_spec.parse().unwrap()).unwrap();
        let traj =
            evolve(|r: &CMat| engine.apply(r), &rho0, &times, &IntegratorConfig::default())
                .unwrap();
        for (t_idx, state) in traj.states.iter().enumerate() {
            let bases =
                sample_bases(5, 2, &mut substream(306, "bases", (s_idx * 4 + t_idx) as u64));
            for (b_idx, basis) in bases.iter().enumerate() {
                let exact = outcome_distribution(state, basis).unwrap();
                let shots = sample_shots(
                    &exact,
                    10_000,
                    &mut substream(306, "shots", (s_idx * 100 + t_idx * 10 + b_idx) as u64),
                )
                .unwrap();
                let mut counts = vec![0usize; exact.len()];
                for b in shots {
                    counts[b as usize] += 1;
                }
                let tv: f64 = exact
                    .iter()
                    .zip(counts.iter())
                    .map(|(p, &n)| (p - n as f64 / 10_000.0).abs())
                    .sum::<f64>()
                    / 2.0;
                worst_tv = worst_tv.max(tv);
                cells += 1;
                if tv <= 0.05 {
                    ok += 1;
                }
            }
        }
    }
    assert!(
        ok as f64 >= 0.95 * cells as f64,
        "{ok}/{cells} cells within TV 0.05"
    );
    println!("[PASS] criterion 6: {ok}/{cells} cells within TV 0.05 (worst {worst_tv:.4})");
}

const CRIT7_MASTER: u64 = 1001;

fn crit7_experiment() -> ExperimentConfig {
    ExperimentConfig {
        family: HamiltonianFamily::Xyz,
        n: 3,
        dissipator: DissipatorFamily::Thermal,
        noise_ratio: 1.0,
        seed: CRIT7_MASTER,
    }
}

/// Shared heavyweight runs for criteria 7 and 12.
fn crit7_results() -> &'static (SuccessReport, String) {
    static RESULTS: OnceLock<(SuccessReport, String)> = OnceLock::new();
    RESULTS.get_or_init(|| {
        let experiment = crit7_experiment();
        let protocol = reduced_protocol();
        let trainer = TrainerConfig::vanilla(0);
        let integrator = IntegratorConfig::default();
        let report = success_rate(
            &experiment,
            &protocol,
            &trainer,
            &integrator,
            10,
            InitStrategy::Random,
        );
        // Seed 0 rerun for the determinism criterion happens separately; keep
        // its loss trace from a dedicated pipeline call here.
        let (_, run) = run_seed_pipeline(
            &experiment,
            &protocol,
            &trainer,
            &integrator,
            0,
            InitStrategy::Random,
        );
        (report, run.expect("seed 0 trains").loss_csv())
    })
}

/// criterion 7: scaled-down end-to-end recovery. XYZ + thermal at N=3 and
/// R=1 with the reduced protocol (L=5, J=10, K=50, M=50): both recovery
/// errors below 0.1 in at least 8 of 10 seeds, each seed within 30 minutes.
#[test]
fn acceptance_07_end_to_end_recovery() {
    let (report, _) = crit7_results();
    let mut both_ok = 0;
    let mut improved = 0;
    for s in &report.seeds {
        assert!(s.error.is_none(), "seed {} failed: {:?}", s.seed_index, s.error);
        assert!(
            s.wall_seconds <= 1800.0,
            "seed {} took {:.0}s, over the 30-minute budget",
            s.seed_index,
            s.wall_seconds
        );
        if s.success_h && s.success_l {
            both_ok += 1;
        }
        if let (Some(first), Some(last)) = (s.first_epoch_loss, s.main_phase_final_loss) {
            if last < first {
                improved += 1;
            }
        }
        println!(
            "  seed {}: eps_h {:.4}, eps_l {:.4} ({:.0}s)",
            s.seed_index,
            s.eps_h.unwrap_or(f64::NAN),
            s.eps_l.unwrap_or(f64::NAN),
            s.wall_seconds
        );
    }
    assert!(both_ok >= 8, "only {both_ok}/10 seeds recovered both blocks");
    // Sanity over the same seeds: the main-phase loss decreases in at least
    // 9 of 10 runs.
    assert!(improved >= 9, "loss decreased in only {improved}/10 seeds");
    println!("[PASS] criterion 7: {both_ok}/10 seeds with eps_h < 0.1 and eps_l < 0.1");
}

/// criterion 8: qualitative noise-ratio trend. On XYZ + thermal at N=3 with
/// fixed seeds, the median final eps_l at R=10 does not exceed the median at
/// R=0.01 across 10 seeds.
#[test]
fn acceptance_08_noise_ratio_trend() {
    let median = |xs: &mut Vec<f64>| -> f64 {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len();
        if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) }
    };
    let mut medians = Vec::new();
    for ratio in [10.0, 0.01] {
        let experiment = ExperimentConfig {
            family: HamiltonianFamily::Xyz,
            n: 3,
            dissipator: DissipatorFamily::Thermal,
            noise_ratio: ratio,
            seed: 1002,
        };
        let report = success_rate(
            &experiment,
            &reduced_protocol(),
            &TrainerConfig::vanilla(0),
            &IntegratorConfig::default(),
            10,
            InitStrategy::Random,
        );
        let mut eps: Vec<f64> = report
            .seeds
            .iter()
            .map(|s| s.eps_l.unwrap_or(f64::INFINITY))
            .collect();
        medians.push(median(&mut eps));
    }
    let (high_noise, low_noise) = (medians[0], medians[1]);
    assert!(
        high_noise <= low_noise,
        "median eps_l at R=10 ({high_noise:.4}) exceeds R=0.01 ({low_noise:.4})"
    );
    println!(
        "[PASS] criterion 8: median eps_l {high_noise:.4} (R=10) <= {low_noise:.4} (R=0.01)"
    );
}

/// criterion 9: neural-curriculum distillation. XYZ + phase at N=3 and
/// R=0.01 over 5 seeds: the distilled model carries zero neural contribution
/// and its held-out NLL beats the physics-only model in at least 3 of 5.
#[test]
fn acceptance_09_nde_distillation() {
    let master = 1003u64;
    let experiment = ExperimentConfig {
        family: HamiltonianFamily::Xyz,
        n: 3,
        dissipator: DissipatorFamily::Phase,
        noise_ratio: 0.01,
        seed: master,
    };
    let protocol = reduced_protocol();
    let integrator = IntegratorConfig::default();
    let mut nde_wins = 0usize;
    // Both curricula optimize the mean-normalized objective here: with the
    // batch-sum convention the L2 weight on the neural term is hundreds of
    // times weaker relative to the data term, and the warm-up phase can
    // drift into a destabilizing correction (diverged trajectories). Adam
    // makes the two conventions equivalent for the physics-only model.
    for index in 0..5u64 {
        let truth =
            sample_true_params(&experiment, &mut substream(master, "truth", index)).unwrap();
        let mut train_proto = protocol.clone();
        train_proto.seed = derive_seed(master, "protocol", index);
        let train_ds = generate_dataset(
            &truth.model,
            &truth.hamiltonian_coeffs,
            &truth.rates,
            &train_proto,
            &integrator,
            experiment.noise_ratio,
        )
        .unwrap();
        let mut holdout_proto = protocol.clone();
        holdout_proto.shots_per_basis = 10;
        holdout_proto.seed = derive_seed(master, "heldout", index);
        let holdout_ds = generate_dataset(
            &truth.model,
            &truth.hamiltonian_coeffs,
            &truth.rates,
            &holdout_proto,
            &integrator,
            experiment.noise_ratio,
        )
        .unwrap();

        let mut vanilla_cfg = TrainerConfig::vanilla(derive_seed(master, "train", index));
        vanilla_cfg.fine_tune = FineTunePolicy::Auto;
        vanilla_cfg.mean_normalize = true;
        let init_vanilla = init_variational_params(
            &truth.model,
            false,
            None,
            &mut substream(master, "init", index),
        )
        .unwrap();
        let vanilla_run =
            run_vanilla_curriculum(&train_ds, &init_vanilla, &vanilla_cfg, &integrator).unwrap();

        let mut nde_cfg = TrainerConfig::nde(derive_seed(master, "train", index));
        nde_cfg.fine_tune = FineTunePolicy::Auto;
        nde_cfg.mean_normalize = true;
        let init_nde = init_variational_params(
            &truth.model,
            true,
            None,
            &mut substream(master, "init", index),
        )
        .unwrap();
        let nde_run = match run_nde_curriculum(&train_ds, &init_nde, &nde_cfg, &integrator) {
            Ok(run) => run,
            Err(e) => {
                println!("  seed {index}: neural curriculum aborted ({e}); counted as a loss");
                continue;
            }
        };

        // Distillation contract: the returned model evaluates with the
        // neural term off, identical to the bare physical generator.
        assert!(!nde_run.final_nde_enabled);
        let mut rho_rng = substream(master, "probe", index);
        for _ in 0..3 {
            let rho = random_hermitian(8, &mut rho_rng);
            let full = combined_field(
                &truth.model,
                &nde_run.final_params.hamiltonian_coeffs,
                &nde_run.final_params.raw_rates,
                nde_run.final_params.neural.as_ref(),
                false,
                &rho,
            )
            .unwrap();
            let phys = apply_physical_generator(
                &truth.model,
                &nde_run.final_params.hamiltonian_coeffs,
                &nde_run.final_params.raw_rates,
                &rho,
            )
            .unwrap();
            assert_eq!(full.max_abs_diff(&phys), 0.0, "distilled field is not physical");
        }

        // Held-out NLL comparison, neural term off for both models.
        let ctx = TrainerContext::new(&holdout_ds).unwrap();
        let batches =
            make_epoch_batches(&holdout_ds, &mut substream(master, "heldout-batches", index))
                .unwrap();
        let nll = |params: &GeneratorParams| -> f64 {
            let bare = GeneratorParams {
                hamiltonian_coeffs: params.hamiltonian_coeffs.clone(),
                raw_rates: params.raw_rates.clone(),
                neural: None,
            };
            batches
                .iter()
                .map(|b| batch_loss(&ctx, &bare, false, 0.0, b, &integrator, false).unwrap())
                .sum()
        };
        let nll_vanilla = nll(&vanilla_run.final_params);
        let nll_nde = nll(&nde_run.final_params);
        if nll_nde <= nll_vanilla {
            nde_wins += 1;
        }
        let eps = |p: &GeneratorParams| {
            lindbladfit::evaluation::relative_error(
                &truth.hamiltonian_coeffs,
                &p.hamiltonian_coeffs,
            )
            .unwrap_or(f64::NAN)
        };
        println!(
            "  seed {index}: held-out NLL nde {nll_nde:.2} vs vanilla {nll_vanilla:.2} \
             (eps_h nde {:.4} vs vanilla {:.4})",
            eps(&nde_run.final_params),
            eps(&vanilla_run.final_params)
        );
    }
    println!("  distillation contract held on every completed seed (zero neural contribution)");
    assert!(nde_wins >= 3, "distilled model won only {nde_wins}/5 seeds");
    println!("[PASS] criterion 9: distilled model at or below vanilla NLL in {nde_wins}/5 seeds");
}

/// criterion 10: curriculum mechanics. Default phase counts 20/10(+5+5),
/// optimizer moments zeroed at each boundary, and the learning-rate swap
/// rule, all read off the training logs.
#[test]
fn acceptance_10_curriculum_mechanics() {
    // Micro dataset keeps the default-length curricula cheap.
    let experiment = ExperimentConfig {
        family: HamiltonianFamily::Xyz,
        n: 2,
        dissipator: DissipatorFamily::Thermal,
        noise_ratio: 10.0,
        seed: 310,
    };
    let truth = sample_true_params(&experiment, &mut substream(310, "truth", 0)).unwrap();
    let protocol = ProtocolConfig {
        num_states: 1,
        times: vec![0.3, 0.8],
        bases_per_point: 2,
        shots_per_basis: 2,
        seed: 311,
    };
    let integrator = IntegratorConfig::default();
    let dataset = generate_dataset(
        &truth.model,
        &truth.hamiltonian_coeffs,
        &truth.rates,
        &protocol,
        &integrator,
        10.0,
    )
    .unwrap();

    // Vanilla with forced fine-tune: 20 + 5 + 5 epochs, reset everywhere.
    // Micro-data training moves parameters by at most a few times 1e-3 per
    // component over 40 steps, so an initialization with a dominant
    // dissipative magnitude pins the swap rule's decision at entry.
    let mut cfg = TrainerConfig::vanilla(312);
    cfg.fine_tune = FineTunePolicy::Always;
    let init_large_rates = GeneratorParams {
        hamiltonian_coeffs: vec![0.05; truth.model.hamiltonian.parameter_count()],
        raw_rates: raw_from_rates(&vec![3.0; truth.model.dissipator.jump_count()]).unwrap(),
        neural: None,
    };
    let run = run_vanilla_curriculum(&dataset, &init_large_rates, &cfg, &integrator).unwrap();
    let shape: Vec<(String, usize, bool)> = run
        .phases
        .iter()
        .map(|p| (p.name.clone(), p.epochs, p.reset_optimizer_on_entry))
        .collect();
    assert_eq!(
        shape,
        vec![("1".into(), 20, true), ("2".into(), 5, true), ("3".into(), 5, true)]
    );
    assert_eq!(run.epoch_log.len(), 30);
    assert_eq!(run.snapshots.len(), 31);
    for norm in &run.optimizer_moments_at_phase_entry {
        assert_eq!(*norm, 0.0, "optimizer moments not zeroed at a phase boundary");
    }
    assert!(run.swap_applied, "dominant dissipative magnitude must trigger the swap");
    assert_eq!((run.phases[1].lr_h, run.phases[1].lr_l), (1e-3, 1e-4));
    assert_eq!((run.phases[2].lr_h, run.phases[2].lr_l), (1e-4, 1e-4));

    // Dominant Hamiltonian magnitude: no swap, canonical assignment.
    let init_large_h = GeneratorParams {
        hamiltonian_coeffs: vec![1.0; truth.model.hamiltonian.parameter_count()],
        raw_rates: raw_from_rates(&vec![0.01; truth.model.dissipator.jump_count()]).unwrap(),
        neural: None,
    };
    let run_low = run_vanilla_curriculum(&dataset, &init_large_h, &cfg, &integrator).unwrap();
    assert!(!run_low.swap_applied);
    assert_eq!((run_low.phases[1].lr_h, run_low.phases[1].lr_l), (1e-4, 1e-3));

    // Neural curriculum: 20 + 10 (+5+5) with phases A/B/C and the neural
    // block frozen bit-exactly from the end of the warm-up onward.
    let mut nde_cfg = TrainerConfig::nde(313);
    nde_cfg.fine_tune = FineTunePolicy::Always;
    nde_cfg.hidden_width = Some(4);
    let init_nde =
        init_variational_params(&truth.model, true, Some(4), &mut substream(313, "init", 0))
            .unwrap();
    let nde_run = run_nde_curriculum(&dataset, &init_nde, &nde_cfg, &integrator).unwrap();
    let shape: Vec<(String, usize)> =
        nde_run.phases.iter().map(|p| (p.name.clone(), p.epochs)).collect();
    assert_eq!(
        shape,
        vec![("A".into(), 20), ("B".into(), 10), ("C".into(), 5), ("C".into(), 5)]
    );
    assert_eq!(nde_run.epoch_log.len(), 40);
    for norm in &nde_run.optimizer_moments_at_phase_entry {
        assert_eq!(*norm, 0.0);
    }
    let after_warmup = nde_run.snapshots[1 + 20].neural.clone().unwrap();
    for snap in &nde_run.snapshots[1 + 20..] {
        assert_eq!(
            snap.neural.as_ref().unwrap().flatten(),
            after_warmup.flatten(),
            "neural weights changed after the warm-up"
        );
    }
    println!("[PASS] criterion 10: phase counts 20/5/5 and 20/10/5/5, resets and swap rule verified");
}

/// criterion 11: steady-state plateau. Superconducting + thermal at N=2 and
/// R=1: the infidelity between the truth and a 5%-perturbed generator
/// flattens past 10x the training window (slope below 1e-4 per unit
/// renormalized time).
#[test]
fn acceptance_11_steady_state_plateau() {
    let experiment = ExperimentConfig {
        family: HamiltonianFamily::Superconducting,
        n: 2,
        dissipator: DissipatorFamily::Thermal,
        noise_ratio: 1.0,
        seed: 311,
    };
    let truth = sample_true_params(&experiment, &mut substream(311, "truth", 0)).unwrap();
    let perturbed_theta: Vec<f64> =
        truth.hamiltonian_coeffs.iter().map(|x| 1.05 * x).collect();
    let perturbed_rates: Vec<f64> = truth.rates.iter().map(|x| 1.05 * x).collect();
    let rho0s = vec![
        product_eigenstate(&"x+,z-".parse().unwrap()).unwrap(),
        product_eigenstate(&"y+,x-".parse().unwrap()).unwrap(),
    ];
    let train_times = ten_times();
    let curve = infidelity_curve(
        &truth.model,
        &truth.hamiltonian_coeffs,
        &truth.rates,
        &perturbed_theta,
        &perturbed_rates,
        &rho0s,
        &train_times,
        1000.0,
        experiment.noise_ratio,
        &IntegratorConfig::default(),
    )
    .unwrap();
    let t_max = *train_times.last().unwrap();
    let mut plateau_points = 0;
    let mut worst_slope: f64 = 0.0;
    for pair in curve.windows(2) {
        if pair[0].t >= 10.0 * t_max {
            let slope = (pair[1].mean_infidelity - pair[0].mean_infidelity).abs()
                / (pair[1].t_renormalized - pair[0].t_renormalized);
            worst_slope = worst_slope.max(slope);
            plateau_points += 1;
            assert!(
                slope < 1e-4,
                "slope {slope:.2e} at t = {} exceeds the plateau bound",
                pair[0].t
            );
        }
    }
    assert!(plateau_points >= 5, "not enough points past 10x the window");
    println!(
        "[PASS] criterion 11: {plateau_points} plateau intervals, worst slope {worst_slope:.2e}"
    );
}

/// criterion 12: determinism. Repeating criterion 7's first seed reproduces
/// its loss trace bitwise.
#[test]
fn acceptance_12_determinism() {
    let (_, first_csv) = crit7_results();
    let (_, rerun) = run_seed_pipeline(
        &crit7_experiment(),
        &reduced_protocol(),
        &TrainerConfig::vanilla(0),
        &IntegratorConfig::default(),
        0,
        InitStrategy::Random,
    );
    let rerun_csv = rerun.expect("seed 0 trains").loss_csv();
    assert_eq!(first_csv, &rerun_csv, "loss.csv differs between identical runs");
    println!("[PASS] criterion 12: seed-0 loss.csv reproduced bitwise ({} bytes)", rerun_csv.len());
}
