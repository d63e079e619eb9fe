//! Experiment configuration: TOML, unknown keys rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use otoc_core::model::{DEFAULT_DIM_CAP, OutcomeIndex};
use otoc_core::quasiprob::{DEFAULT_BIN_QUANTUM, DEFAULT_FD_STEP, TABLE_DIM_CAP};
use otoc_core::{Axis, CMatrix, C64};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Otoc,
    Quasiprob,
    Verify,
    WeakSim,
    InterfSim,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Otoc => "otoc",
            Mode::Quasiprob => "quasiprob",
            Mode::Verify => "verify",
            Mode::WeakSim => "weak-sim",
            Mode::InterfSim => "interf-sim",
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub times: Vec<f64>,
    pub seed: Option<u64>,
    pub dim_cap: Option<usize>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub state: StateConfig,
    pub operators: OperatorsConfig,
    #[serde(default)]
    pub quasiprob: QuasiprobConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub weak: WeakConfig,
    #[serde(default)]
    pub interference: InterferenceConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(rename = "J", alias = "j", default = "default_j")]
    pub j: f64,
    #[serde(default = "default_g")]
    pub g: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    /// Explicit Hamiltonian; overrides the chain parameters.
    pub matrix_file: Option<PathBuf>,
}

fn default_n() -> usize {
    3
}
fn default_j() -> f64 {
    1.0
}
fn default_g() -> f64 {
    1.05
}
fn default_h() -> f64 {
    0.5
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            j: default_j(),
            g: default_g(),
            h: default_h(),
            matrix_file: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum StateConfig {
    #[default]
    MaximallyMixed,
    Gibbs {
        temperature: f64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorsConfig {
    #[serde(rename = "W", alias = "w")]
    pub w: OperatorConfig,
    #[serde(rename = "V", alias = "v")]
    pub v: OperatorConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum OperatorConfig {
    Identity,
    Pauli { site: usize, axis: Axis },
    /// Hermitian generator `G` read from a file; the operator is `exp(iG)`.
    Generator { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasiprobConfig {
    #[serde(default = "default_quantum")]
    pub bin_quantum: f64,
    #[serde(default = "default_fd")]
    pub h_fd: f64,
    #[serde(default = "default_table_cap")]
    pub dim_cap: usize,
}

fn default_quantum() -> f64 {
    DEFAULT_BIN_QUANTUM
}
fn default_fd() -> f64 {
    DEFAULT_FD_STEP
}
fn default_table_cap() -> usize {
    TABLE_DIM_CAP
}

impl Default for QuasiprobConfig {
    fn default() -> Self {
        Self {
            bin_quantum: default_quantum(),
            h_fd: default_fd(),
            dim_cap: default_table_cap(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// When set, ignore model/state/operators and check this many random
    /// instances instead.
    pub random_instances: Option<usize>,
}

/// `[group, degeneracy]` pair.
pub type IndexPair = [usize; 2];

fn to_index(p: IndexPair) -> OutcomeIndex {
    OutcomeIndex::new(p[0], p[1])
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakConfig {
    #[serde(default = "default_strength")]
    pub strength: f64,
    /// Trials per coupling mode; 0 uses exact statistics only.
    #[serde(default)]
    pub trials: u64,
    #[serde(default)]
    pub w2: IndexPair,
    #[serde(default)]
    pub w3: IndexPair,
    #[serde(default)]
    pub v1: IndexPair,
    #[serde(default)]
    pub v2: IndexPair,
}

fn default_strength() -> f64 {
    0.05
}

impl Default for WeakConfig {
    fn default() -> Self {
        Self {
            strength: default_strength(),
            trials: 0,
            w2: [0, 0],
            w3: [0, 0],
            v1: [0, 0],
            v2: [0, 0],
        }
    }
}

impl WeakConfig {
    pub fn indices(&self) -> [OutcomeIndex; 4] {
        [to_index(self.w2), to_index(self.w3), to_index(self.v1), to_index(self.v2)]
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceConfig {
    #[serde(default = "default_angle")]
    pub theta: f64,
    #[serde(default = "default_angle")]
    pub phi: f64,
    /// Trials per probability estimate; 0 uses exact probabilities.
    #[serde(default)]
    pub trials: u64,
    #[serde(default)]
    pub w2: IndexPair,
    #[serde(default)]
    pub w3: IndexPair,
    #[serde(default)]
    pub v1: IndexPair,
    #[serde(default)]
    pub v2: IndexPair,
}

fn default_angle() -> f64 {
    std::f64::consts::FRAC_PI_2
}

impl Default for InterferenceConfig {
    fn default() -> Self {
        Self {
            theta: default_angle(),
            phi: default_angle(),
            trials: 0,
            w2: [0, 0],
            w3: [0, 0],
            v1: [0, 0],
            v2: [0, 0],
        }
    }
}

impl InterferenceConfig {
    pub fn indices(&self) -> [OutcomeIndex; 4] {
        [to_index(self.w2), to_index(self.w3), to_index(self.v1), to_index(self.v2)]
    }
}

/// Invalid configuration, with the offending field when known.
#[derive(Debug)]
pub struct ConfigError {
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "invalid config field `{field}`: {}", self.message),
            None => write!(f, "invalid config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: Some(field.to_string()),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            // toml reports "missing field `x`" / "unknown field `x`" in the message.
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .filter(|_| msg.contains("field"));
            let location = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!(" (line {line})")
                })
                .unwrap_or_default();
            ConfigError {
                field,
                message: format!("{msg}{location}"),
            }
        })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.model.matrix_file.as_mut() {
            fix(p);
        }
        if let StateConfig::File { path } = &mut self.state {
            fix(path);
        }
        for op in [&mut self.operators.w, &mut self.operators.v] {
            if let OperatorConfig::Generator { path } = op {
                fix(path);
            }
        }
    }

    pub fn dim_cap(&self) -> usize {
        self.dim_cap.unwrap_or(DEFAULT_DIM_CAP)
    }

    /// Sampling requested by the selected mode.
    pub fn sampling_trials(&self) -> u64 {
        match self.mode {
            Mode::WeakSim => self.weak.trials,
            Mode::InterfSim => self.interference.trials,
            _ => 0,
        }
    }

    /// Checks that do not need the matrices themselves.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.times.is_empty() && !(self.mode == Mode::Verify && self.verify.random_instances.is_some()) {
            return Err(invalid("times", "at least one time is required"));
        }
        if let Some(t) = self.times.iter().find(|t| !t.is_finite()) {
            return Err(invalid("times", format!("non-finite time {t}")));
        }
        if self.model.matrix_file.is_none() {
            if self.model.n == 0 {
                return Err(invalid("model.n", "chain needs at least one site"));
            }
            let too_big = self.model.n >= usize::BITS as usize || (1usize << self.model.n) > self.dim_cap();
            if too_big {
                return Err(invalid(
                    "model.n",
                    format!("2^{} exceeds the dimension cap {}", self.model.n, self.dim_cap()),
                ));
            }
            for (name, x) in [("model.J", self.model.j), ("model.g", self.model.g), ("model.h", self.model.h)] {
                if !x.is_finite() {
                    return Err(invalid(name, "must be finite"));
                }
            }
        }
        let mut files: Vec<(&str, &PathBuf)> = Vec::new();
        if let Some(p) = &self.model.matrix_file {
            files.push(("model.matrix_file", p));
        }
        if let StateConfig::File { path } = &self.state {
            files.push(("state.path", path));
        }
        if let StateConfig::Gibbs { temperature } = &self.state {
            if temperature.is_nan() || *temperature <= 0.0 {
                return Err(invalid("state.temperature", "must be positive"));
            }
        }
        if let OperatorConfig::Generator { path } = &self.operators.w {
            files.push(("operators.W.path", path));
        }
        if let OperatorConfig::Generator { path } = &self.operators.v {
            files.push(("operators.V.path", path));
        }
        for (field, p) in files {
            if !p.is_file() {
                return Err(invalid(field, format!("file {} does not exist", p.display())));
            }
        }
        let q = &self.quasiprob;
        if q.bin_quantum.is_nan() || q.bin_quantum <= 0.0 {
            return Err(invalid("quasiprob.bin_quantum", "must be positive"));
        }
        if !(q.h_fd > 0.0 && q.h_fd < 0.1) {
            return Err(invalid("quasiprob.h_fd", "must lie in (0, 0.1)"));
        }
        if self.mode == Mode::WeakSim && (self.weak.strength.is_nan() || self.weak.strength <= 0.0) {
            return Err(invalid("weak.strength", "must be positive"));
        }
        if self.mode == Mode::InterfSim {
            for (name, a) in [("interference.theta", self.interference.theta), ("interference.phi", self.interference.phi)] {
                if !(a > 0.0 && a < std::f64::consts::PI) {
                    return Err(invalid(name, "angle must lie strictly between 0 and pi"));
                }
            }
        }
        if self.sampling_trials() > 0 && self.seed.is_none() {
            return Err(invalid("seed", "required when trials > 0"));
        }
        if self.mode == Mode::Verify && self.verify.random_instances == Some(0) {
            return Err(invalid("verify.random_instances", "must be at least 1"));
        }
        Ok(())
    }
}

/// Complex matrix stored as JSON `{"re": [[...]], "im": [[...]]}`; `im` may
/// be omitted for real matrices.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    re: Vec<Vec<f64>>,
    #[serde(default)]
    im: Option<Vec<Vec<f64>>>,
}

pub fn read_matrix(path: &Path) -> anyhow::Result<CMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    let mf: MatrixFile =
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("bad matrix file {}: {e}", path.display()))?;
    let n = mf.re.len();
    let square = |rows: &Vec<Vec<f64>>| rows.len() == n && rows.iter().all(|r| r.len() == n);
    if n == 0 || !square(&mf.re) || !mf.im.as_ref().is_none_or(square) {
        anyhow::bail!("matrix file {} is not a non-empty square matrix", path.display());
    }
    Ok(CMatrix::from_fn(n, n, |i, j| {
        C64::new(mf.re[i][j], mf.im.as_ref().map_or(0.0, |im| im[i][j]))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "otoc"
times = [0.0, 0.5]
[operators.W]
kind = "pauli"
site = 0
axis = "z"
[operators.V]
kind = "identity"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.mode, Mode::Otoc);
        assert_eq!(cfg.model.n, 3);
        assert_eq!(cfg.model.g, 1.05);
        assert!(matches!(cfg.state, StateConfig::MaximallyMixed));
    }

    #[test]
    fn missing_times_names_the_field() {
        let text = MINIMAL.replace("times = [0.0, 0.5]\n", "");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert_eq!(err.field.as_deref(), Some("times"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[model]\nn = 2\nspin = 1\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert_eq!(err.field.as_deref(), Some("spin"));
        assert!(err.message.contains("line"));
    }

    #[test]
    fn oversized_chain_is_rejected() {
        let text = format!("{MINIMAL}\n[model]\nn = 12\n");
        let err = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err();
        assert_eq!(err.field.as_deref(), Some("model.n"));
    }

    #[test]
    fn sampling_needs_a_seed() {
        let text = MINIMAL.replace("\"otoc\"", "\"weak-sim\"") + "\n[weak]\ntrials = 10\n";
        let err = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err();
        assert_eq!(err.field.as_deref(), Some("seed"));
    }

    #[test]
    fn missing_files_are_reported() {
        let text = MINIMAL.replace("kind = \"identity\"", "kind = \"generator\"\npath = \"/nonexistent/g.json\"");
        let err = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err();
        assert_eq!(err.field.as_deref(), Some("operators.V.path"));
    }
}
