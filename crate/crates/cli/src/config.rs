//! Experiment configuration: defaults, JSON file, dotted-path overrides and
//! seed resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tdrc_core::ga::{GaConfig, GeneLayout};
use tdrc_core::{GridSpec, QuantizationModel, ReadoutConfig, ReservoirParams, SplitSizes, SyntheticConfig};

/// Environment variable consulted when no global seed is given.
pub const SEED_ENV: &str = "TDRC_SEED";

/// Seed fields filled from the global seed when the user leaves them unset.
const SEED_PATHS: [&str; 5] = [
    "dataset.synthetic.seed",
    "split.seed",
    "mask.seed",
    "quantization.seed",
    "ga.seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Manifest of an on-disk dataset. When null the synthetic generator is used.
    pub manifest: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub seed: u64,
    /// Explicit subset sizes; null scales the 500/500/1000/412 partition.
    pub sizes: Option<SplitSizes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSection {
    pub n_nodes: usize,
    pub connectivity: f64,
    pub amplitude: f64,
    pub seed: u64,
    pub pca: bool,
    pub m_prime: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirSection {
    pub tau: f64,
    pub tau_d: f64,
    pub beta: f64,
    pub phi0: f64,
    pub rho: f64,
    /// Overrides θ = τ_D / N.
    pub theta: Option<f64>,
    pub substeps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantSection {
    #[serde(flatten)]
    pub model: QuantizationModel,
    /// Datapath width; when set, the level becomes 2^−(bits−3).
    pub bits: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaSection {
    #[serde(flatten)]
    pub config: GaConfig,
    pub layout: GeneLayout,
    /// Independent seeded runs; run r uses seed `seed + r`.
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    #[serde(flatten)]
    pub spec: GridSpec,
    pub chunk_size: usize,
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaSweepSection {
    /// Empty means every M′ from 1 to M.
    pub m_primes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    /// Train once per seed at the configured dynamics and report test WER.
    FinalWer,
    /// Run the GA per seed and report its best validation loss.
    Ga,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantStudySection {
    pub bits: Vec<u32>,
    /// Seed s offsets the split, mask and noise seeds by s.
    pub n_seeds: usize,
    pub mode: StudyMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; unset seed fields take this value.
    pub seed: Option<u64>,
    pub dataset: DatasetSection,
    pub split: SplitSection,
    pub mask: MaskSection,
    pub reservoir: ReservoirSection,
    pub quantization: QuantSection,
    pub readout: ReadoutConfig,
    pub ga: GaSection,
    pub grid: GridSection,
    pub pca_sweep: PcaSweepSection,
    pub quant_study: QuantStudySection,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            dataset: DatasetSection {
                manifest: None,
                synthetic: SyntheticConfig::default(),
            },
            split: SplitSection { seed: 0, sizes: None },
            mask: MaskSection {
                n_nodes: 600,
                connectivity: 0.3,
                amplitude: 0.4,
                seed: 0,
                pca: true,
                m_prime: 7,
            },
            // GA optimum reported for the digit task, with Φ₀ = −1.33 taken
            // mod π into the searchable range.
            reservoir: ReservoirSection {
                tau: 0.07,
                tau_d: tdrc_core::reservoir::DEFAULT_TAU_D,
                beta: -1.69,
                phi0: std::f64::consts::PI - 1.33,
                rho: 1.5,
                theta: None,
                substeps: None,
            },
            quantization: QuantSection {
                model: QuantizationModel::default(),
                bits: None,
            },
            readout: ReadoutConfig::default(),
            ga: GaSection {
                config: GaConfig::default(),
                layout: GeneLayout::standard(),
                n_runs: 6,
            },
            grid: GridSection {
                spec: GridSpec::default(),
                chunk_size: 64,
                record_wall_time: false,
            },
            pca_sweep: PcaSweepSection { m_primes: Vec::new() },
            quant_study: QuantStudySection {
                bits: vec![8, 13, 16],
                n_seeds: 5,
                mode: StudyMode::FinalWer,
            },
            output_dir: PathBuf::from("out"),
        }
    }
}

pub type ConfigResult<T> = std::result::Result<T, String>;

/// Recursively writes `patch` into `base`. Every key of `patch` must already
/// exist in `base`, so typos are reported instead of silently ignored.
fn merge(base: &mut Value, patch: &Value, path: &str) -> ConfigResult<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(k).ok_or_else(|| format!("unknown config key `{sub}`"))?;
                // Objects merge key by key unless the slot is currently null
                // (an optional section being filled in).
                if slot.is_object() && v.is_object() {
                    merge(slot, v, &sub)?;
                } else {
                    *slot = v.clone();
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

/// Parses an override value as JSON, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `a.b.c = value` in `target`, creating intermediate objects.
fn set_path(target: &mut Value, path: &str, value: Value) -> ConfigResult<()> {
    let mut cur = target;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("malformed override path `{path}`"));
    }
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj.entry((*part).to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!()
}

fn has_path(v: &Value, path: &str) -> bool {
    let mut cur = v;
    for part in path.split('.') {
        match cur.get(part) {
            Some(next) => cur = next,
            None => return false,
        }
    }
    true
}

fn resolve_global_seed(given: Option<u64>) -> ConfigResult<u64> {
    if let Some(s) = given {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .trim()
            .parse()
            .map_err(|_| format!("{SEED_ENV} must be an unsigned integer, got `{raw}`")),
        Err(_) => Ok(0),
    }
}

impl ExperimentConfig {
    /// Builds the effective config: defaults, then `file`, then
    /// `overrides` (dotted path, raw value). Seed fields the user did not set
    /// take the global seed (`seed_flag`, the file's `seed`, `TDRC_SEED`, 0).
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)], seed_flag: Option<u64>) -> ConfigResult<Self> {
        let mut user = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                serde_json::from_str::<Value>(&text).map_err(|e| format!("{}: {e}", path.display()))?
            }
            None => Value::Object(Map::new()),
        };
        if !user.is_object() {
            return Err("config file must contain a JSON object".into());
        }
        for (path, raw) in overrides {
            set_path(&mut user, path, parse_value(raw))?;
        }
        if let Some(s) = seed_flag {
            set_path(&mut user, "seed", Value::from(s))?;
        }
        let global = resolve_global_seed(user.get("seed").and_then(Value::as_u64))?;
        set_path(&mut user, "seed", Value::from(global))?;
        for path in SEED_PATHS {
            if !has_path(&user, path) {
                set_path(&mut user, path, Value::from(global))?;
            }
        }

        let mut merged = serde_json::to_value(Self::default()).map_err(|e| e.to_string())?;
        merge(&mut merged, &user, "")?;
        let mut cfg: Self = serde_json::from_value(merged).map_err(|e| format!("config: {e}"))?;
        if let Some(bits) = cfg.quantization.bits {
            cfg.quantization.model.level = QuantizationModel::level_for_bits(bits).map_err(|e| e.to_string())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range and file checks that serde cannot express.
    pub fn validate(&self) -> ConfigResult<()> {
        if let Some(m) = &self.dataset.manifest {
            if !m.is_file() {
                return Err(format!("dataset manifest {} does not exist", m.display()));
            }
        } else {
            self.dataset.synthetic.validate().map_err(|e| e.to_string())?;
        }
        let mk = &self.mask;
        if mk.n_nodes == 0 {
            return Err("mask.n_nodes must be ≥ 1".into());
        }
        if !(mk.connectivity > 0.0 && mk.connectivity <= 1.0) {
            return Err(format!("mask.connectivity must lie in (0, 1], got {}", mk.connectivity));
        }
        if !(mk.amplitude.is_finite() && mk.amplitude > 0.0) {
            return Err(format!("mask.amplitude must be positive, got {}", mk.amplitude));
        }
        if mk.pca && mk.m_prime == 0 {
            return Err("mask.m_prime must be ≥ 1 when PCA is on".into());
        }
        self.reservoir_params().validate().map_err(|e| e.to_string())?;
        self.quantization.model.validate().map_err(|e| e.to_string())?;
        if !(self.readout.lambda >= 0.0 && self.readout.lambda.is_finite()) {
            return Err(format!("readout.lambda must be ≥ 0, got {}", self.readout.lambda));
        }
        self.ga.config.validate().map_err(|e| e.to_string())?;
        self.ga.layout.validate().map_err(|e| e.to_string())?;
        if self.ga.n_runs == 0 {
            return Err("ga.n_runs must be ≥ 1".into());
        }
        self.grid.spec.validate().map_err(|e| e.to_string())?;
        if self.quant_study.bits.iter().any(|&b| b < 2) {
            return Err("quant_study.bits must all be ≥ 2".into());
        }
        if self.quant_study.n_seeds == 0 {
            return Err("quant_study.n_seeds must be ≥ 1".into());
        }
        Ok(())
    }

    pub fn reservoir_params(&self) -> ReservoirParams {
        let r = &self.reservoir;
        let mut p = ReservoirParams::new(self.mask.n_nodes, r.tau, r.beta, r.phi0, r.rho);
        p.tau_d = r.tau_d;
        p.theta = r.theta.unwrap_or(r.tau_d / self.mask.n_nodes as f64);
        p.substeps = r.substeps;
        p
    }
}

/// Splits `--a.b=v` / `--a.b v` config overrides out of `args`, leaving the
/// rest for the regular parser.
pub fn extract_overrides(args: Vec<String>) -> ConfigResult<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| format!("override --{key} needs a value"))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}
