//! Run configuration: a TOML file with documented defaults for every stage.
//!
//! Unknown keys are rejected. The global seed fans out to per-stage seeds
//! via `dmq_core::rng::derive_seed(seed, "<stage tag>")`: `"synth"`,
//! `"filter.gbt"`, `"filter.pi"`, and the evaluation seeds derived inside
//! the protocol. CLI flags (`--seed`, `--jobs`, `--features`) override the
//! file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dmq_core::dataset::IngestConfig;
use dmq_core::error::{Error, Result};
use dmq_core::eval::{EvalConfig, FeatureSetChoice};
use dmq_core::filters::{DEFAULT_KEEP_RATIO, DEFAULT_MI_BINS, DEFAULT_PI_REPEATS};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; every stage derives its own from it.
    pub seed: u64,
    /// Worker cap for stage-internal parallelism; 1 is fully serial.
    pub jobs: usize,
    pub paths: Paths,
    pub synth: SynthSection,
    pub ingest: IngestConfig,
    pub ic: IcSection,
    pub filter: FilterSection,
    pub eval: EvalConfig,
    /// Explicit test plan (six triples of held-out cell ids). Absent: the
    /// documented default assignment over CCD_1..8 / DCD_1..8.
    pub plan: Option<PlanSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            jobs: 1,
            paths: Paths::default(),
            synth: SynthSection::default(),
            ingest: IngestConfig::default(),
            ic: IcSection::default(),
            filter: FilterSection::default(),
            eval: EvalConfig::default(),
            plan: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory of per-cell input files (one subdirectory per cell).
    pub data_dir: PathBuf,
    /// Directory for persisted intermediates and the report.
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Cells to generate from the standard sixteen-cell roster.
    pub cells: usize,
    pub cycles_per_cell: usize,
    /// Abnormal cycles injected per cell (exercises ingest cleaning).
    pub abnormal_per_cell: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            cells: 16,
            cycles_per_cell: 200,
            abnormal_per_cell: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcSection {
    /// Voltage bin width in volts.
    pub bin_width_v: f64,
    /// Odd moving-average window for the diagnostic smoothed curves;
    /// 0 disables the diagnostic dump entirely.
    pub smoothing_window: usize,
    /// Dump per-cycle curve files under out_dir/curves (diagnostics).
    pub dump_curves: bool,
}

impl Default for IcSection {
    fn default() -> Self {
        Self {
            bin_width_v: 0.01,
            smoothing_window: 0,
            dump_curves: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    /// Dispersion-stage keep ratio (top ceil(ratio * n_features)).
    pub keep_ratio: f64,
    pub pi_repeats: usize,
    pub mi_bins: usize,
    pub gbt: GbtSection,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            keep_ratio: DEFAULT_KEEP_RATIO,
            pi_repeats: DEFAULT_PI_REPEATS,
            mi_bins: DEFAULT_MI_BINS,
            gbt: GbtSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtSection {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtSection {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 4,
            learning_rate: 0.1,
            subsample: 1.0,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub tests: Vec<[String; 3]>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))
    }

    /// Apply CLI overrides on top of the file.
    pub fn with_overrides(
        mut self,
        seed: Option<u64>,
        jobs: Option<usize>,
        features: Option<FeatureSetChoice>,
    ) -> Self {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(jobs) = jobs {
            self.jobs = jobs.max(1);
        }
        if let Some(choice) = features {
            self.eval.fnn_variants = vec![choice];
        }
        // The evaluation section always runs under the global seed and
        // job cap.
        self.eval.seed = self.seed;
        self.eval.jobs = self.jobs;
        self
    }

    /// Echo for run.json: full config as a JSON value.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

/// Config-key reference printed by `--help`.
pub const CONFIG_HELP: &str = "\
CONFIG FILE (TOML; every key optional, defaults shown):
  seed = 42                      global seed; stages derive sub-seeds from it
  jobs = 1                       worker cap; 1 = fully serial, bitwise reproducible

  [paths]
  data_dir = \"data\"              per-cell input directories
  out_dir = \"out\"                intermediates and the report

  [synth]
  cells = 16                     cells drawn from the CCD_1..8/DCD_1..8 roster
  cycles_per_cell = 200
  abnormal_per_cell = 0          injected bad cycles per cell

  [ingest]
  v_min_v = 2.5                  cleaning bounds: samples outside are trimmed
  v_max_v = 4.3
  temp_band_c = 5.0              drop when |T - setpoint| > band on more than
  temp_excursion_frac = 0.05       this fraction of samples
  capacity_regression_ah = 0.001 drop on larger in-segment capacity drops
  min_samples = 16
  cycles_subdir = \"cycles\"
  cycle_file_prefix = \"cycle_\"

  [ic]
  bin_width_v = 0.01             voltage bin width (volts)
  smoothing_window = 0           odd window for diagnostic smoothing; 0 = off
  dump_curves = false            write per-cycle curve files (diagnostics)

  [filter]
  keep_ratio = 0.6923...         dispersion stage keeps ceil(ratio * 91) = 63
  pi_repeats = 100               permutation-importance repeats
  mi_bins = 16                   equal-frequency bins for mutual information
  [filter.gbt]
  n_trees = 200
  max_depth = 4
  learning_rate = 0.1
  subsample = 1.0
  min_samples_leaf = 1

  [eval]
  mape_floor = 0.005             |truth| below this is excluded from MAPE
  include_baselines = true
  fnn_variants = [\"critical\", \"all\"]   network variants to evaluate
  validation_cells = 3           train cells held out for selection/stopping
  [eval.svr]
  cost = [10.0, 100.0]
  epsilon = [0.001]
  gamma = [0.5]
  [eval.enr]
  l1_weight = [0.0001, 0.001]
  l2_weight = [0.0001, 0.01]
  [eval.sgpr]
  inducing = 64
  lengthscale = [1.0, 2.0]
  noise_var = [0.0001]
  [eval.fnn]
  hidden_width = 64
  learning_rate = 0.001
  batch_size = 64
  max_epochs = 500
  patience = 25
  loss_weights = [1.0, 4.0, 2.0]

  [plan]                         omit for the documented default plan
  tests = [[\"CCD_1\",\"CCD_4\",\"CCD_6\"], ...six triples...]

EXIT CODES: 0 success, 1 validation error, 2 data error, 3 numerical failure.";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = RunConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, config.seed);
        assert_eq!(back.filter.keep_ratio, config.filter.keep_ratio);
        assert_eq!(back.eval.fnn.max_epochs, 500);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("nonsense_key = 1").unwrap_err();
        assert!(err.to_string().contains("nonsense_key"));
        assert!(toml::from_str::<RunConfig>("[ic]\nbin_midth_v = 0.01").is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let config = RunConfig::default().with_overrides(
            Some(7),
            Some(4),
            Some(FeatureSetChoice::Critical),
        );
        assert_eq!(config.seed, 7);
        assert_eq!(config.jobs, 4);
        assert_eq!(config.eval.seed, 7);
        assert_eq!(config.eval.jobs, 4);
        assert_eq!(config.eval.fnn_variants, vec![FeatureSetChoice::Critical]);
    }

    #[test]
    fn help_text_covers_every_section() {
        for key in ["[paths]", "[synth]", "[ingest]", "[ic]", "[filter]", "[eval]", "[plan]"] {
            assert!(CONFIG_HELP.contains(key), "missing {key}");
        }
    }
}
