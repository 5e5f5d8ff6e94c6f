//! Random-Pauli transient measurement protocol: exact Born distributions,
//! shot sampling, dataset assembly and serialization.
//!
//! Records are generated (and stored) in nested loop order: initial state,
//! timestamp, basis, shot. A complete dataset therefore locates the record
//! of (state s, time j, basis k, shot m) at index `((s*J + j)*K + k)*M + m`,
//! which the trainer's per-shot batching relies on.
//!
//! Randomness splits off the protocol seed: `"init-states"` for the state
//! list and one `"cell"` substream per (state, time) pair that first draws
//! the K bases, then the K*M shots. Generation is a pure function of
//! (model, true parameters, protocol).

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::generators::{GeneratorOps, GeneratorParams, ModelDescriptor, ModelSpec, TruthJson, raw_from_rates};
use crate::linalg::CMat;
use crate::propagator::{FieldEngine, IntegratorConfig, evolve};
use crate::rng::substream;
use crate::spinops::{Axis, DensityMatrix, InitialStateSpec, PauliString, basis_rotation, product_eigenstate};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Measurement protocol counts and timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Number of initial product states (L).
    pub num_states: usize,
    /// Output timestamps in ascending order (J entries).
    pub times: Vec<f64>,
    /// Random compatible Pauli bases per (state, time) pair (K).
    pub bases_per_point: usize,
    /// Shots per basis (M).
    pub shots_per_basis: usize,
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_states < 1 || self.bases_per_point < 1 || self.shots_per_basis < 1 {
            return Err(Error::InvalidConfig("protocol counts must be >= 1".into()));
        }
        if self.times.is_empty() {
            return Err(Error::InvalidConfig("protocol needs at least one timestamp".into()));
        }
        if self.times[0] <= 0.0 {
            return Err(Error::InvalidConfig("timestamps must be positive".into()));
        }
        for w in self.times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidConfig("timestamps must be ascending".into()));
            }
        }
        Ok(())
    }

    pub fn record_count(&self) -> usize {
        self.num_states * self.times.len() * self.bases_per_point * self.shots_per_basis
    }
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            num_states: 5,
            times: (1..=10).map(|k| k as f64 / 10.0).collect(),
            bases_per_point: 200,
            shots_per_basis: 100,
            seed: 0,
        }
    }
}

/// One measurement shot: which prepared state, at what time, in which basis,
/// and the observed bitstring (site 0 = most significant bit).
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub state_id: usize,
    pub t: f64,
    pub basis: PauliString,
    pub bits: u32,
}

impl MeasurementRecord {
    pub fn bits_string(&self, n: usize) -> String {
        (0..n).map(|site| if (self.bits >> (n - 1 - site)) & 1 == 1 { '1' } else { '0' }).collect()
    }
}

/// Dataset metadata persisted as the file header.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub model: ModelDescriptor,
    pub protocol: ProtocolConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthJson>,
    pub initial_states: Vec<String>,
}

/// The training data: protocol metadata, prepared states, and shot records.
#[derive(Clone, Debug)]
pub struct ShotDataset {
    pub meta: DatasetMeta,
    pub initial_states: Vec<InitialStateSpec>,
    pub records: Vec<MeasurementRecord>,
}

impl ShotDataset {
    pub fn n(&self) -> usize {
        self.meta.model.n
    }

    /// Errors unless the record count and layout match the protocol.
    pub fn check_complete(&self) -> Result<()> {
        let want = self.meta.protocol.record_count();
        if self.records.len() != want {
            return Err(Error::IncompleteDataset(format!(
                "expected {want} records, found {}",
                self.records.len()
            )));
        }
        if self.initial_states.len() != self.meta.protocol.num_states {
            return Err(Error::IncompleteDataset(format!(
                "expected {} initial states, found {}",
                self.meta.protocol.num_states,
                self.initial_states.len()
            )));
        }
        Ok(())
    }

    /// Index of the record for (state, time index, basis index, shot index).
    pub fn record_index(&self, state: usize, time_idx: usize, basis_idx: usize, shot: usize) -> usize {
        let p = &self.meta.protocol;
        ((state * p.times.len() + time_idx) * p.bases_per_point + basis_idx) * p.shots_per_basis
            + shot
    }
}

/// L initial product states with per-site axis and sign drawn uniformly from
/// the six single-qubit Pauli eigenstates.
pub fn sample_initial_states<R: Rng>(l: usize, n: usize, rng: &mut R) -> Vec<InitialStateSpec> {
    (0..l)
        .map(|_| {
            InitialStateSpec(
                (0..n)
                    .map(|_| match rng.random_range(0..6) {
                        0 => (Axis::X, 1),
                        1 => (Axis::X, -1),
                        2 => (Axis::Y, 1),
                        3 => (Axis::Y, -1),
                        4 => (Axis::Z, 1),
                        _ => (Axis::Z, -1),
                    })
                    .collect(),
            )
        })
        .collect()
}

/// K random compatible Pauli bases: per-site labels i.i.d. uniform over
/// {X, Y, Z}.
pub fn sample_bases<R: Rng>(k: usize, n: usize, rng: &mut R) -> Vec<PauliString> {
    use crate::spinops::Pauli;
    (0..k)
        .map(|_| {
            PauliString(
                (0..n)
                    .map(|_| match rng.random_range(0..3) {
                        0 => Pauli::X,
                        1 => Pauli::Y,
                        _ => Pauli::Z,
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Born-rule outcome probabilities for measuring `basis` on `rho`: the
/// diagonal of U rho U†. Tiny negative entries are clamped to zero and the
/// vector renormalized; a sum off unity by more than 1e-9 signals a
/// corrupted state and aborts.
pub fn outcome_distribution(rho: &DensityMatrix, basis: &PauliString) -> Result<Vec<f64>> {
    if basis.len() != rho.num_qubits() {
        return Err(Error::DimensionMismatch(format!(
            "basis length {} does not match {} qubits",
            basis.len(),
            rho.num_qubits()
        )));
    }
    let u = basis_rotation(basis)?;
    let rotated = u.matmul(rho.matrix()).matmul(&u.adjoint());
    let d = rotated.dim();
    let mut probs: Vec<f64> = (0..d).map(|b| rotated[(b, b)].re).collect();
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadDistribution { sum });
    }
    let mut clamped_sum = 0.0;
    for p in probs.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
        clamped_sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= clamped_sum;
    }
    Ok(probs)
}

/// M i.i.d. categorical draws from `probs`; returns outcome indices.
pub fn sample_shots<R: Rng>(probs: &[f64], m: usize, rng: &mut R) -> Result<Vec<u32>> {
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadDistribution { sum });
    }
    let mut shots = Vec::with_capacity(m);
    for _ in 0..m {
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut outcome = probs.len() as u32 - 1;
        for (b, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                outcome = b as u32;
                break;
            }
        }
        shots.push(outcome);
    }
    Ok(shots)
}

/// Evolve each prepared state once under the true generator, then sample
/// K fresh bases and M shots per basis from the exact Born distribution at
/// every timestamp.
pub fn generate_dataset(
    model: &ModelSpec,
    theta_h_true: &[f64],
    rates_true: &[f64],
    protocol: &ProtocolConfig,
    integrator: &IntegratorConfig,
    noise_ratio: f64,
) -> Result<ShotDataset> {
    protocol.validate()?;
    let n = model.n();
    let seed = protocol.seed;
    let initial_states =
        sample_initial_states(protocol.num_states, n, &mut substream(seed, "init-states", 0));

    let ops = GeneratorOps::new(model)?;
    let params = GeneratorParams {
        hamiltonian_coeffs: theta_h_true.to_vec(),
        raw_rates: raw_from_rates(rates_true)?,
        neural: None,
    };
    let engine = FieldEngine::new(&ops, None, &params, false)?;

    let j_count = protocol.times.len();
    let mut records = Vec::with_capacity(protocol.record_count());
    for (state_id, spec) in initial_states.iter().enumerate() {
        let rho0 = product_eigenstate(spec)?;
        let traj = evolve(|r: &CMat| engine.apply(r), &rho0, &protocol.times, integrator)?;
        for (time_idx, (t, state)) in
            protocol.times.iter().zip(traj.states.iter()).enumerate()
        {
            let mut cell_rng = substream(seed, "cell", (state_id * j_count + time_idx) as u64);
            let bases = sample_bases(protocol.bases_per_point, n, &mut cell_rng);
            for basis in bases {
                let probs = outcome_distribution(state, &basis)?;
                let shots = sample_shots(&probs, protocol.shots_per_basis, &mut cell_rng)?;
                for bits in shots {
                    records.push(MeasurementRecord {
                        state_id,
                        t: *t,
                        basis: basis.clone(),
                        bits,
                    });
                }
            }
        }
    }

    let meta = DatasetMeta {
        version: DATASET_FORMAT_VERSION,
        model: ModelDescriptor::from_model(model, noise_ratio, seed),
        protocol: protocol.clone(),
        truth: Some(TruthJson { theta_h: theta_h_true.to_vec(), gamma: rates_true.to_vec() }),
        initial_states: initial_states.iter().map(|s| s.to_string()).collect(),
    };
    Ok(ShotDataset { meta, initial_states, records })
}

/// File format: one JSON meta line, then one record per line as
/// `state_id,t,basis,bits` with t printed at 17 significant digits.
pub fn write_dataset(ds: &ShotDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, &ds.meta)?;
    w.write_all(b"\n")?;
    let n = ds.n();
    for r in &ds.records {
        writeln!(w, "{},{:.16e},{},{}", r.state_id, r.t, r.basis, r.bits_string(n))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<ShotDataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty dataset file".into() })??;
    let meta: DatasetMeta = serde_json::from_str(&header)
        .map_err(|e| Error::Parse { line: 1, msg: format!("bad meta header: {e}") })?;
    if meta.version != DATASET_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: meta.version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let n = meta.model.n;
    let initial_states: Vec<InitialStateSpec> = meta
        .initial_states
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()
        .map_err(|e| Error::Parse { line: 1, msg: format!("bad initial state: {e}") })?;

    let mut records = Vec::new();
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut field = |name: &str| {
            parts
                .next()
                .ok_or_else(|| Error::Parse { line: line_no, msg: format!("missing {name}") })
        };
        let state_id: usize = field("state_id")?
            .parse()
            .map_err(|e| Error::Parse { line: line_no, msg: format!("state_id: {e}") })?;
        let t: f64 = field("t")?
            .parse()
            .map_err(|e| Error::Parse { line: line_no, msg: format!("t: {e}") })?;
        let basis: PauliString = field("basis")?
            .parse()
            .map_err(|e| Error::Parse { line: line_no, msg: format!("basis: {e}") })?;
        let bits_str = field("bits")?;
        if bits_str.len() != n || basis.len() != n {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {n}-site basis and bits, got '{basis}' and '{bits_str}'"),
            });
        }
        let mut bits = 0u32;
        for ch in bits_str.chars() {
            bits = (bits << 1)
                | match ch {
                    '0' => 0,
                    '1' => 1,
                    _ => {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("bad bit character '{ch}'"),
                        });
                    }
                };
        }
        records.push(MeasurementRecord { state_id, t, basis, bits });
    }
    Ok(ShotDataset { meta, initial_states, records })
}
