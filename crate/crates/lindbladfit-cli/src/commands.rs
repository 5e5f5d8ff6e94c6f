//! Subcommand implementations: data generation, training, evaluation,
//! landscape scans, and sweep orchestration.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use lindbladfit::evaluation::{
    InitStrategy, SeedOutcome, SubspaceSelector, infidelity_curve, is_success,
    random_orthogonal_plane, relative_error, run_seed_pipeline, trajectory_projection,
    truth_flat_like,
};
use lindbladfit::generators::{
    DissipatorFamily, ExperimentConfig, GeneratorParams, HamiltonianFamily, TruthJson,
    sample_true_params,
};
use lindbladfit::measurement::{ShotDataset, generate_dataset, read_dataset, write_dataset};
use lindbladfit::rng::{derive_seed, substream};
use lindbladfit::spinops::product_eigenstate;
use lindbladfit::training::{
    TrainerKind, TrainingRun, batch_loss, init_variational_params, make_epoch_batches,
    run_curriculum, TrainerContext,
};

use crate::CliError;
use crate::config::RunConfig;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::config(format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("bad JSON in {}: {e}", path.display())))
}

fn output_dir(cfg: &RunConfig, flag: Option<&Path>, fallback: &str) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

/// Parameters with the physical rates included for plot-ready output.
#[derive(Serialize, Deserialize)]
struct ParamsFile {
    params: GeneratorParams,
    gamma: Vec<f64>,
}

impl ParamsFile {
    fn new(params: &GeneratorParams) -> Self {
        ParamsFile { params: params.clone(), gamma: params.rates() }
    }
}

pub fn cmd_gen_data(
    config_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.seeds.master = s;
    }
    let experiment = cfg.experiment()?;
    let master = cfg.seeds.master;
    let dir = output_dir(&cfg, out, "dataset_out");
    ensure_dir(&dir)?;

    let truth = sample_true_params(&experiment, &mut substream(master, "truth", 0))
        .map_err(CliError::from_generation)?;
    let protocol = cfg.protocol(derive_seed(master, "protocol", 0));
    let dataset = generate_dataset(
        &truth.model,
        &truth.hamiltonian_coeffs,
        &truth.rates,
        &protocol,
        &cfg.integrator(),
        experiment.noise_ratio,
    )
    .map_err(CliError::from_generation)?;

    let data_path = dir.join("dataset.jsonl");
    write_dataset(&dataset, &data_path).map_err(CliError::from_generation)?;
    write_json(
        &dir.join("truth.json"),
        &TruthJson { theta_h: truth.hamiltonian_coeffs.clone(), gamma: truth.rates.clone() },
    )?;
    write_json(&dir.join("config.json"), &cfg)?;
    println!(
        "wrote {} records ({} states x {} times x {} bases x {} shots) to {}",
        dataset.records.len(),
        protocol.num_states,
        protocol.times.len(),
        protocol.bases_per_point,
        protocol.shots_per_basis,
        data_path.display()
    );
    Ok(())
}

fn check_dataset_compat(cfg: &RunConfig, ds: &ShotDataset) -> Result<(), CliError> {
    if let Some(section) = &cfg.experiment {
        let family = HamiltonianFamily::parse(&section.family).map_err(CliError::from_config)?;
        let dissipator =
            DissipatorFamily::parse(&section.dissipator).map_err(CliError::from_config)?;
        if ds.meta.model.family != family
            || ds.meta.model.n != section.n
            || ds.meta.model.dissipator != dissipator
        {
            return Err(CliError::config(format!(
                "dataset model ({}, n={}, {}) does not match config ({}, n={}, {})",
                ds.meta.model.family.name(),
                ds.meta.model.n,
                ds.meta.model.dissipator.name(),
                family.name(),
                section.n,
                dissipator.name()
            )));
        }
    }
    Ok(())
}

pub fn cmd_train(
    config_path: &Path,
    dataset_path: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let dataset = read_dataset(dataset_path).map_err(CliError::from_config)?;
    dataset.check_complete().map_err(CliError::from_config)?;
    check_dataset_compat(&cfg, &dataset)?;
    let master = cfg.seeds.master;
    let dir = output_dir(&cfg, out, "run_out");
    ensure_dir(&dir)?;

    let model = dataset.meta.model.to_model().map_err(CliError::from_config)?;
    let trainer = cfg.trainer(derive_seed(master, "train", 0))?;
    let with_neural = matches!(trainer.kind, TrainerKind::Nde);
    let init_params = init_variational_params(
        &model,
        with_neural,
        trainer.hidden_width,
        &mut substream(master, "init", 0),
    )
    .map_err(CliError::from_config)?;

    let run = run_curriculum(&dataset, &init_params, &trainer, &cfg.integrator())
        .map_err(CliError::from_training)?;

    persist_run(&dir, &cfg, &run)?;
    if let Some(truth) = &dataset.meta.truth {
        let eps_h = relative_error(&truth.theta_h, &run.final_params.hamiltonian_coeffs)
            .map_err(CliError::from_training)?;
        let eps_l = relative_error(&truth.gamma, &run.final_params.rates())
            .map_err(CliError::from_training)?;
        println!("final eps_h = {eps_h:.6}, eps_l = {eps_l:.6}");
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

fn persist_run(dir: &Path, cfg: &RunConfig, run: &TrainingRun) -> Result<(), CliError> {
    std::fs::write(dir.join("loss.csv"), run.loss_csv())
        .map_err(|e| CliError::training(format!("cannot write loss.csv: {e}")))?;
    for (k, snapshot) in run.snapshots.iter().enumerate() {
        write_json(&dir.join(format!("params_epoch_{k}.json")), &ParamsFile::new(snapshot))?;
    }
    write_json(&dir.join("final_params.json"), &ParamsFile::new(&run.final_params))?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(&dir.join("phases.json"), &run.phases)?;
    // Timestamps stay confined to the log file so reruns are byte-identical
    // everywhere else.
    let log = format!("wall_seconds: {:.3}\nswap_applied: {}\n", run.wall_seconds, run.swap_applied);
    std::fs::write(dir.join("run.log"), log)
        .map_err(|e| CliError::training(format!("cannot write run.log: {e}")))?;
    Ok(())
}

pub fn cmd_eval(
    run_dir: &Path,
    dataset_path: &Path,
    horizon: Option<f64>,
) -> Result<(), CliError> {
    let final_path = run_dir.join("final_params.json");
    if !final_path.exists() {
        return Err(CliError::config(format!(
            "no final_params.json in {} (incomplete run)",
            run_dir.display()
        )));
    }
    let params_file: ParamsFile = read_json(&final_path)?;
    let cfg: RunConfig = read_json(&run_dir.join("config.json")).unwrap_or_default();
    let dataset = read_dataset(dataset_path).map_err(CliError::from_config)?;
    let truth = dataset
        .meta
        .truth
        .as_ref()
        .ok_or_else(|| CliError::config("dataset carries no ground truth".to_string()))?;
    let model = dataset.meta.model.to_model().map_err(CliError::from_config)?;

    let eps_h = relative_error(&truth.theta_h, &params_file.params.hamiltonian_coeffs)
        .map_err(CliError::from_config)?;
    let eps_l =
        relative_error(&truth.gamma, &params_file.gamma).map_err(CliError::from_config)?;
    #[derive(Serialize)]
    struct EpsFile {
        eps_h: f64,
        eps_l: f64,
        success_h: bool,
        success_l: bool,
    }
    write_json(
        &run_dir.join("eps.json"),
        &EpsFile { eps_h, eps_l, success_h: is_success(eps_h), success_l: is_success(eps_l) },
    )?;

    let horizon = horizon.unwrap_or(cfg.evaluation.horizon);
    let rho0s: Vec<_> = dataset
        .initial_states
        .iter()
        .map(product_eigenstate)
        .collect::<lindbladfit::Result<_>>()
        .map_err(CliError::from_config)?;
    let curve = infidelity_curve(
        &model,
        &truth.theta_h,
        &truth.gamma,
        &params_file.params.hamiltonian_coeffs,
        &params_file.gamma,
        &rho0s,
        &dataset.meta.protocol.times,
        horizon,
        dataset.meta.model.r,
        &cfg.integrator(),
    )
    .map_err(CliError::from_training)?;
    let mut csv = String::from("t,t_renormalized,mean_infidelity,n,r\n");
    for p in &curve {
        csv.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{},{}\n",
            p.t, p.t_renormalized, p.mean_infidelity, dataset.meta.model.n, dataset.meta.model.r
        ));
    }
    std::fs::write(run_dir.join("infidelity.csv"), csv)
        .map_err(|e| CliError::config(format!("cannot write infidelity.csv: {e}")))?;
    println!(
        "eps_h = {eps_h:.6} ({}), eps_l = {eps_l:.6} ({}); {} infidelity rows",
        is_success(eps_h),
        is_success(eps_l),
        curve.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_landscape(
    config_path: Option<&Path>,
    run_dir: Option<&Path>,
    dataset_path: &Path,
    subspace: &str,
    epoch: &str,
    radius: Option<f64>,
    grid: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let cfg: RunConfig = match (config_path, run_dir) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(dir)) => read_json(&dir.join("config.json"))?,
        (None, None) => {
            return Err(CliError::config("landscape needs --config or --run".to_string()));
        }
    };
    let dataset = read_dataset(dataset_path).map_err(CliError::from_config)?;
    dataset.check_complete().map_err(CliError::from_config)?;
    let model = dataset.meta.model.to_model().map_err(CliError::from_config)?;
    let master = cfg.seeds.master;

    // Parameter point for the requested epoch.
    let params: GeneratorParams = match (run_dir, epoch) {
        (Some(dir), "final") => read_json::<ParamsFile>(&dir.join("final_params.json"))?.params,
        (Some(dir), label) => {
            let k: usize = if label == "init" {
                0
            } else {
                label.parse().map_err(|_| {
                    CliError::config(format!("bad epoch '{label}' (init|final|<number>)"))
                })?
            };
            let path = dir.join(format!("params_epoch_{k}.json"));
            if !path.exists() {
                return Err(CliError::config(format!("unknown epoch {label}: no {}", path.display())));
            }
            read_json::<ParamsFile>(&path)?.params
        }
        (None, "init") => {
            let trainer = cfg.trainer(0)?;
            let with_neural = matches!(trainer.kind, TrainerKind::Nde);
            init_variational_params(
                &model,
                with_neural,
                trainer.hidden_width,
                &mut substream(master, "init", 0),
            )
            .map_err(CliError::from_config)?
        }
        (None, other) => {
            return Err(CliError::config(format!(
                "epoch '{other}' requires --run (only 'init' works from a bare config)"
            )));
        }
    };

    let selector = SubspaceSelector::parse(subspace).map_err(CliError::from_config)?;
    if selector.neural && params.neural.is_none() {
        return Err(CliError::config(
            "subspace includes the neural block but the run has no neural weights".to_string(),
        ));
    }
    let (v1, v2) = random_orthogonal_plane(
        &selector,
        &params,
        &mut substream(master, "directions", 0),
    )
    .map_err(CliError::from_config)?;

    let ctx = TrainerContext::new(&dataset).map_err(CliError::from_config)?;
    let trainer = cfg.trainer(0)?;
    let batches = make_epoch_batches(&dataset, &mut substream(master, "landscape-batch", 0))
        .map_err(CliError::from_config)?;
    let scan_batches: Vec<_> = if cfg.evaluation.landscape_full_data {
        batches
    } else {
        batches.into_iter().take(1).collect()
    };
    let nde_enabled = params.neural.is_some();
    let integrator = cfg.integrator();
    let center = params.flatten();
    let radius = radius.unwrap_or(cfg.evaluation.landscape_radius);
    let grid_n = grid.unwrap_or(cfg.evaluation.landscape_grid);
    let scan = lindbladfit::evaluation::landscape_scan(&center, &v1, &v2, radius, grid_n, |x| {
        let p = params.unflatten_like(x);
        let mut total = 0.0;
        for b in &scan_batches {
            total += batch_loss(
                &ctx,
                &p,
                nde_enabled,
                trainer.l2_lambda,
                b,
                &integrator,
                trainer.mean_normalize,
            )?;
        }
        Ok(total)
    })
    .map_err(CliError::from_training)?;

    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| run_dir.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("landscape_out"));
    ensure_dir(&dir)?;
    std::fs::write(dir.join("landscape.csv"), scan.to_csv())
        .map_err(|e| CliError::config(format!("cannot write landscape.csv: {e}")))?;

    // Trajectory projection when snapshots and ground truth are available.
    if let (Some(rdir), Some(truth)) = (run_dir, dataset.meta.truth.as_ref()) {
        let mut snapshots = Vec::new();
        for k in 0.. {
            let path = rdir.join(format!("params_epoch_{k}.json"));
            if !path.exists() {
                break;
            }
            snapshots.push(read_json::<ParamsFile>(&path)?.params);
        }
        if !snapshots.is_empty() {
            let truth_flat = truth_flat_like(&snapshots[0], &truth.theta_h, &truth.gamma)
                .map_err(CliError::from_config)?;
            let proj = trajectory_projection(&snapshots, &truth_flat, &v1, &v2);
            let mut csv = String::from("epoch,alpha,beta\n");
            for (k, (a, b)) in proj.iter().enumerate() {
                csv.push_str(&format!("{k},{a:.17e},{b:.17e}\n"));
            }
            std::fs::write(dir.join("trajectory.csv"), csv)
                .map_err(|e| CliError::config(format!("cannot write trajectory.csv: {e}")))?;
        }
    }
    println!("landscape grid {grid_n}x{grid_n} (radius {radius}) written to {}", dir.display());
    Ok(())
}

pub fn cmd_sweep(
    config_path: &Path,
    workers: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let sweep = &cfg.sweep;
    if sweep.families.is_empty()
        || sweep.dissipators.is_empty()
        || sweep.ratios.is_empty()
        || sweep.sizes.is_empty()
    {
        return Err(CliError::config(
            "sweep config needs non-empty families, dissipators, ratios, sizes".to_string(),
        ));
    }
    let dir = output_dir(&cfg, out, "sweep_out");
    ensure_dir(&dir)?;
    write_json(&dir.join("config.json"), &cfg)?;

    #[derive(Clone)]
    struct Cell {
        family: HamiltonianFamily,
        dissipator: DissipatorFamily,
        ratio: f64,
        n: usize,
        seed_index: u64,
        dir: PathBuf,
        label: String,
    }
    let mut work: Vec<Cell> = Vec::new();
    for family_name in &sweep.families {
        let family = HamiltonianFamily::parse(family_name).map_err(CliError::from_config)?;
        for diss_name in &sweep.dissipators {
            let dissipator = DissipatorFamily::parse(diss_name).map_err(CliError::from_config)?;
            for &ratio in &sweep.ratios {
                for &n in &sweep.sizes {
                    let label = format!("{}_{}_r{}_n{}", family.name(), dissipator.name(), ratio, n);
                    for seed_index in 0..cfg.seeds.count {
                        work.push(Cell {
                            family,
                            dissipator,
                            ratio,
                            n,
                            seed_index,
                            dir: dir.join(&label).join(format!("seed{seed_index}")),
                            label: label.clone(),
                        });
                    }
                }
            }
        }
    }

    let master = cfg.seeds.master;
    let worker_count = workers.unwrap_or(1).max(1);
    let next = AtomicUsize::new(0);
    let run_cell = |cell: &Cell| {
        let outcome_path = cell.dir.join("outcome.json");
        if outcome_path.exists() {
            return; // resume: cell already done
        }
        if std::fs::create_dir_all(&cell.dir).is_err() {
            eprintln!("sweep: cannot create {}", cell.dir.display());
            return;
        }
        let lock_path = cell.dir.join(".lock");
        let lock = std::fs::OpenOptions::new().write(true).create_new(true).open(&lock_path);
        if lock.is_err() {
            eprintln!("sweep: {} is locked, skipping", cell.dir.display());
            return;
        }
        let experiment = ExperimentConfig {
            family: cell.family,
            n: cell.n,
            dissipator: cell.dissipator,
            noise_ratio: cell.ratio,
            seed: derive_seed(master, &cell.label, 0),
        };
        let protocol = cfg.protocol(0); // per-seed protocol seed derived inside
        let trainer = match cfg.trainer(0) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("sweep: {}", e.message);
                let _ = std::fs::remove_file(&lock_path);
                return;
            }
        };
        let (outcome, run) = run_seed_pipeline(
            &experiment,
            &protocol,
            &trainer,
            &cfg.integrator(),
            cell.seed_index,
            InitStrategy::Random,
        );
        if let Some(e) = &outcome.error {
            eprintln!("sweep: {}/seed{} failed: {e}", cell.label, cell.seed_index);
        }
        if let Some(run) = run {
            let _ = std::fs::write(cell.dir.join("loss.csv"), run.loss_csv());
            let _ = write_json(&cell.dir.join("final_params.json"), &ParamsFile::new(&run.final_params));
        }
        let _ = write_json(&outcome_path, &outcome);
        let _ = std::fs::remove_file(&lock_path);
    };

    std::thread::scope(|scope| {
        for _ in 0..worker_count.min(work.len().max(1)) {
            scope.spawn(|| {
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= work.len() {
                        break;
                    }
                    run_cell(&work[i]);
                }
            });
        }
    });

    // Deterministic aggregation order regardless of worker scheduling.
    let mut csv = String::from("family,noise,r,n,seed,eps_h,eps_l,success_h,success_l\n");
    let mut summary: Vec<(String, usize, usize, usize)> = Vec::new();
    let mut current: Option<(String, usize, usize, usize)> = None;
    for cell in &work {
        let outcome_path = cell.dir.join("outcome.json");
        let outcome: Option<SeedOutcome> = read_json(&outcome_path).ok();
        let (eps_h, eps_l, s_h, s_l) = match &outcome {
            Some(o) => (
                o.eps_h.map(|v| format!("{v:.17e}")).unwrap_or_else(|| "nan".into()),
                o.eps_l.map(|v| format!("{v:.17e}")).unwrap_or_else(|| "nan".into()),
                o.success_h,
                o.success_l,
            ),
            None => ("nan".into(), "nan".into(), false, false),
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            cell.family.name(),
            cell.dissipator.name(),
            cell.ratio,
            cell.n,
            cell.seed_index,
            eps_h,
            eps_l,
            s_h,
            s_l
        ));
        match &mut current {
            Some((label, count, ok_h, ok_l)) if *label == cell.label => {
                *count += 1;
                *ok_h += s_h as usize;
                *ok_l += s_l as usize;
            }
            _ => {
                if let Some(c) = current.take() {
                    summary.push(c);
                }
                current = Some((cell.label.clone(), 1, s_h as usize, s_l as usize));
            }
        }
    }
    if let Some(c) = current.take() {
        summary.push(c);
    }
    std::fs::write(dir.join("success_rates.csv"), csv)
        .map_err(|e| CliError::config(format!("cannot write success_rates.csv: {e}")))?;
    for (label, count, ok_h, ok_l) in summary {
        println!(
            "{label}: success_h {ok_h}/{count}, success_l {ok_l}/{count}",
        );
    }
    println!("sweep results in {}", dir.display());
    Ok(())
}
