//! Run configuration: TOML input, `LINDBLADFIT_*` environment overrides,
//! and the resolved form persisted into every output directory.

use serde::{Deserialize, Serialize};
use std::path::Path;

use lindbladfit::generators::{DissipatorFamily, ExperimentConfig, HamiltonianFamily};
use lindbladfit::measurement::ProtocolConfig;
use lindbladfit::propagator::IntegratorConfig;
use lindbladfit::training::{FineTunePolicy, TrainerConfig, TrainerKind};

use crate::CliError;

fn default_times() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub family: String,
    pub n: usize,
    pub dissipator: String,
    #[serde(default = "one")]
    pub r: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub states: usize,
    pub times: Vec<f64>,
    pub bases: usize,
    pub shots: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection { states: 5, times: default_times(), bases: 200, shots: 100 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub kind: String,
    pub fine_tune: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_width: Option<usize>,
    pub main_epochs: usize,
    pub refine_epochs: usize,
    pub fine_tune_epochs: usize,
    pub lr_main: f64,
    pub lr_nde: f64,
    pub lr_fine: f64,
    pub l2_lambda: f64,
    pub mean_normalize: bool,
    pub residual_fine_tune: bool,
    pub residual_epochs: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            kind: "vanilla".into(),
            fine_tune: "auto".into(),
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
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub rtol: f64,
    pub atol: f64,
    pub dt0: f64,
    pub max_steps: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        IntegratorSection { rtol: d.rtol, atol: d.atol, dt0: d.dt0, max_steps: d.max_steps }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub horizon: f64,
    pub landscape_radius: f64,
    pub landscape_grid: usize,
    /// Scan the loss on the full dataset instead of one (state, shot) batch.
    pub landscape_full_data: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            horizon: 1000.0,
            landscape_radius: 1.0,
            landscape_grid: 41,
            landscape_full_data: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub master: u64,
    pub count: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection { master: 0, count: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

/// Sweep grid: the cross product of families, dissipators, ratios and sizes,
/// each cell trained over `seeds.count` seeds.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub families: Vec<String>,
    pub dissipators: Vec<String>,
    pub ratios: Vec<f64>,
    pub sizes: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
    pub protocol: ProtocolSection,
    pub trainer: TrainerSection,
    pub integrator: IntegratorSection,
    pub evaluation: EvaluationSection,
    pub seeds: SeedsSection,
    pub output: OutputSection,
    pub sweep: SweepSection,
}

impl RunConfig {
    /// Parse a TOML file (or a machine-emitted JSON resolved config), then
    /// apply `LINDBLADFIT_<SECTION>_<KEY>` overrides (section names carry no
    /// underscore; the key may).
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut table: toml::Table = if text.trim_start().starts_with('{') {
            serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("bad JSON in {}: {e}", path.display())))?
        } else {
            text.parse()
                .map_err(|e| CliError::config(format!("bad TOML in {}: {e}", path.display())))?
        };
        apply_env_overrides(&mut table, std::env::vars())?;
        let value = toml::Value::Table(table);
        value
            .try_into()
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let section = self
            .experiment
            .as_ref()
            .ok_or_else(|| CliError::config("missing [experiment] section".to_string()))?;
        Ok(ExperimentConfig {
            family: HamiltonianFamily::parse(&section.family).map_err(CliError::from_config)?,
            n: section.n,
            dissipator: DissipatorFamily::parse(&section.dissipator)
                .map_err(CliError::from_config)?,
            noise_ratio: section.r,
            seed: self.seeds.master,
        })
    }

    pub fn protocol(&self, seed: u64) -> ProtocolConfig {
        ProtocolConfig {
            num_states: self.protocol.states,
            times: self.protocol.times.clone(),
            bases_per_point: self.protocol.bases,
            shots_per_basis: self.protocol.shots,
            seed,
        }
    }

    pub fn trainer(&self, seed: u64) -> Result<TrainerConfig, CliError> {
        let kind = match self.trainer.kind.as_str() {
            "vanilla" => TrainerKind::Vanilla,
            "nde" => TrainerKind::Nde,
            other => {
                return Err(CliError::config(format!(
                    "unknown trainer kind '{other}' (vanilla|nde)"
                )));
            }
        };
        let fine_tune = match self.trainer.fine_tune.as_str() {
            "auto" => FineTunePolicy::Auto,
            "always" => FineTunePolicy::Always,
            "never" => FineTunePolicy::Never,
            other => {
                return Err(CliError::config(format!(
                    "unknown fine-tune policy '{other}' (auto|always|never)"
                )));
            }
        };
        Ok(TrainerConfig {
            kind,
            fine_tune,
            hidden_width: self.trainer.hidden_width,
            main_epochs: self.trainer.main_epochs,
            refine_epochs: self.trainer.refine_epochs,
            fine_tune_epochs: self.trainer.fine_tune_epochs,
            lr_main: self.trainer.lr_main,
            lr_nde: self.trainer.lr_nde,
            lr_fine: self.trainer.lr_fine,
            l2_lambda: self.trainer.l2_lambda,
            mean_normalize: self.trainer.mean_normalize,
            residual_fine_tune: self.trainer.residual_fine_tune,
            residual_epochs: self.trainer.residual_epochs,
            seed,
        })
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            rtol: self.integrator.rtol,
            atol: self.integrator.atol,
            dt0: self.integrator.dt0,
            max_steps: self.integrator.max_steps,
        }
    }
}

/// Apply environment overrides to the raw TOML table. Values parse as TOML
/// scalars or arrays, falling back to strings.
pub fn apply_env_overrides<I: Iterator<Item = (String, String)>>(
    table: &mut toml::Table,
    vars: I,
) -> Result<(), CliError> {
    for (key, value) in vars {
        let Some(rest) = key.strip_prefix("LINDBLADFIT_") else { continue };
        let Some((section, field)) = rest.split_once('_') else {
            return Err(CliError::config(format!(
                "environment override {key} must look like LINDBLADFIT_SECTION_KEY"
            )));
        };
        let section = section.to_ascii_lowercase();
        let field = field.to_ascii_lowercase();
        let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
            Ok(t) => t["v"].clone(),
            Err(_) => toml::Value::String(value.clone()),
        };
        table
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override {key} targets a non-table")))?
            .insert(field, parsed);
    }
    Ok(())
}
