//! Scenario files: TOML with one table per block.

use std::path::Path;

use mskin_core::mixture_core::{AngularLaw, MixtureSpec};
use mskin_core::collision_kernel::TimeScheme;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: cannot read: {msg}")]
    Io { path: String, msg: String },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{path}: {key}: {msg}")]
    Invalid { path: String, key: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MsRun,
    FluxProbe,
    Relaxation,
    LinopSuite,
    CoeffTable,
    MatrixSuite,
}

impl Mode {
    pub fn uses_sampling(self) -> bool {
        matches!(self, Mode::FluxProbe | Mode::CoeffTable | Mode::MatrixSuite | Mode::LinopSuite)
    }
}

/// Either one value for every pair or a full N x N table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairValue<T> {
    All(T),
    Table(Vec<Vec<T>>),
}

impl<T: Clone> PairValue<T> {
    fn expand(&self, n: usize) -> Vec<Vec<T>> {
        match self {
            PairValue::All(v) => vec![vec![v.clone(); n]; n],
            PairValue::Table(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureBlock {
    pub masses: Vec<f64>,
    pub gamma: f64,
    #[serde(default = "one_pair")]
    pub phi_const: PairValue<f64>,
    /// constant angular law b₀; ignored when `angular` is given
    #[serde(default)]
    pub b0: Option<f64>,
    #[serde(default)]
    pub angular: Option<PairValue<AngularLaw>>,
}

fn one_pair() -> PairValue<f64> {
    PairValue::All(1.0)
}

impl MixtureBlock {
    pub fn build(&self) -> mskin_core::Result<MixtureSpec> {
        let n = self.masses.len();
        let angular = match (&self.angular, self.b0) {
            (Some(a), _) => a.expand(n),
            (None, Some(b0)) => vec![vec![AngularLaw::Constant { b0 }; n]; n],
            (None, None) => vec![vec![AngularLaw::Constant { b0: 1.0 / (4.0 * std::f64::consts::PI) }; n]; n],
        };
        MixtureSpec::new(self.masses.clone(), self.gamma, self.phi_const.expand(n), angular)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dim: Option<usize>,
    pub n_x: Option<usize>,
    pub n_v: Option<usize>,
    pub v_max: Option<f64>,
    /// second velocity resolution for the gap refinement study
    pub n_v_refine: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// amplitude · cos(2π m·x + phase)
    Cosine {
        amplitude: f64,
        mode: [i32; 3],
        #[serde(default)]
        phase: f64,
    },
}

impl Profile {
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Cosine { amplitude, mode, phase } => {
                let arg: f64 = (0..3).map(|a| mode[a] as f64 * x[a]).sum::<f64>();
                amplitude * (2.0 * std::f64::consts::PI * arg + phase).cos()
            }
        }
    }

    /// Value after time t of the heat flow ∂_t = αΔ.
    pub fn heat(&self, x: [f64; 3], alpha: f64, t: f64) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Cosine { mode, .. } => {
                let k2: f64 = mode.iter().map(|m| (2.0 * std::f64::consts::PI * *m as f64).powi(2)).sum();
                self.eval(x) * (-alpha * k2 * t).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxwellianBlock {
    pub c: f64,
    #[serde(default)]
    pub u: [f64; 3],
    #[serde(default = "unit")]
    pub t: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalStateBlock {
    pub c: Vec<f64>,
    pub u: Vec<[f64; 3]>,
    #[serde(default = "unit")]
    pub t: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    pub c_bar: Option<Vec<f64>>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    /// per species, summed
    pub profiles: Option<Vec<Vec<Profile>>>,
    /// relaxation: one Maxwellian per species
    pub maxwellians: Option<Vec<MaxwellianBlock>>,
    /// flux probe: local macroscopic state
    pub state: Option<LocalStateBlock>,
    pub pair: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsBlock {
    pub dt: Option<f64>,
    pub cfl: Option<f64>,
    pub t_end: Option<f64>,
    pub n_steps: Option<usize>,
    pub scheme: Option<TimeScheme>,
    pub picard_tol: Option<f64>,
    pub picard_max_iter: Option<usize>,
    pub smallness: Option<f64>,
    pub s_list: Option<Vec<usize>>,
    pub tol_e: Option<f64>,
    pub mc_samples: Option<usize>,
    pub seed: Option<u64>,
    pub eps_list: Option<Vec<f64>>,
    pub tolerance: Option<f64>,
    pub n_random: Option<usize>,
    pub species_counts: Option<Vec<usize>>,
    pub lambda_a_samples: Option<usize>,
    /// local-Maxwellian parameters for the L^ε check
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<String>,
    #[serde(default)]
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub mixture: Option<MixtureBlock>,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub initial: InitialBlock,
    #[serde(default)]
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

impl ScenarioConfig {
    pub fn seed(&self) -> Option<u64> {
        self.numerics.seed
    }

    pub fn name_or(&self, fallback: &str) -> String {
        self.name.clone().unwrap_or_else(|| fallback.to_string())
    }
}

fn invalid(path: &str, key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.to_string(), key: key.to_string(), msg: msg.into() }
}

/// Parse from text; `origin` labels error messages.
pub fn parse_config_str(text: &str, origin: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig =
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), msg: e.to_string().trim_end().to_string() })?;
    validate(&cfg, origin)?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: origin.clone(), msg: e.to_string() })?;
    parse_config_str(&text, &origin)
}

fn validate(cfg: &ScenarioConfig, p: &str) -> Result<(), ConfigError> {
    if cfg.mode != Mode::MatrixSuite && cfg.mixture.is_none() {
        return Err(invalid(p, "mixture", "block required for this mode"));
    }
    let spec = match &cfg.mixture {
        Some(m) => Some(m.build().map_err(|e| invalid(p, "mixture", e.to_string()))?),
        None => None,
    };
    if cfg.mode.uses_sampling() && cfg.numerics.seed.is_none() {
        return Err(invalid(p, "numerics.seed", "required for sampling modes"));
    }
    let n = spec.as_ref().map(|s| s.n_species()).unwrap_or(0);
    let init = &cfg.initial;
    match cfg.mode {
        Mode::MsRun => {
            let cb = init.c_bar.as_ref().ok_or_else(|| invalid(p, "initial.c_bar", "required"))?;
            if cb.len() != n || n < 2 {
                return Err(invalid(p, "initial.c_bar", "needs one entry per species and N >= 2"));
            }
            if cb.iter().any(|c| !(*c > 0.0)) {
                return Err(invalid(p, "initial.c_bar", "entries must be positive"));
            }
            if let Some(pr) = &init.profiles {
                if pr.len() != n {
                    return Err(invalid(p, "initial.profiles", "needs one list per species"));
                }
            }
            if !matches!(init.alpha, Some(a) if a > 0.0) {
                return Err(invalid(p, "initial.alpha", "required and positive"));
            }
            if let Some(l) = init.lambda {
                if !(l > 0.0 && l <= 1.0) {
                    return Err(invalid(p, "initial.lambda", "must lie in (0, 1]"));
                }
            }
            if cfg.grid.n_x.is_none() {
                return Err(invalid(p, "grid.n_x", "required"));
            }
            if cfg.numerics.t_end.is_none() {
                return Err(invalid(p, "numerics.t_end", "required"));
            }
        }
        Mode::Relaxation => {
            let mx = init.maxwellians.as_ref().ok_or_else(|| invalid(p, "initial.maxwellians", "required"))?;
            if mx.len() != n {
                return Err(invalid(p, "initial.maxwellians", "needs one entry per species"));
            }
            if cfg.grid.n_v.is_none() {
                return Err(invalid(p, "grid.n_v", "required"));
            }
            if cfg.numerics.dt.is_none() || cfg.numerics.n_steps.is_none() {
                return Err(invalid(p, "numerics", "dt and n_steps required"));
            }
        }
        Mode::FluxProbe => {
            let st = init.state.as_ref().ok_or_else(|| invalid(p, "initial.state", "required"))?;
            if st.c.len() != n || st.u.len() != n {
                return Err(invalid(p, "initial.state", "needs one entry per species"));
            }
            if cfg.numerics.eps_list.as_ref().is_none_or(|e| e.is_empty()) {
                return Err(invalid(p, "numerics.eps_list", "required"));
            }
        }
        Mode::LinopSuite => {
            let cb = init.c_bar.as_ref().ok_or_else(|| invalid(p, "initial.c_bar", "required"))?;
            if cb.len() != n {
                return Err(invalid(p, "initial.c_bar", "needs one entry per species"));
            }
            if cfg.grid.n_v.is_none() {
                return Err(invalid(p, "grid.n_v", "required"));
            }
        }
        Mode::CoeffTable | Mode::MatrixSuite => {}
    }
    if let Some([i, j]) = init.pair {
        if i >= n || j >= n {
            return Err(invalid(p, "initial.pair", "species index out of range"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "ms_run"
[mixture]
masses = [1.0, 2.0]
gamma = 0.0
[grid]
n_x = 16
[initial]
c_bar = [0.5, 0.5]
alpha = 0.1
[numerics]
t_end = 0.1
"#;

    #[test]
    fn minimal_ms_run() {
        let c = parse_config_str(MINIMAL, "t").unwrap();
        assert_eq!(c.mode, Mode::MsRun);
    }

    #[test]
    fn gamma_out_of_range() {
        let text = MINIMAL.replace("gamma = 0.0", "gamma = 1.5");
        let e = parse_config_str(&text, "t").unwrap_err();
        assert!(e.to_string().contains("gamma"), "{e}");
    }

    #[test]
    fn seed_required_for_sampling() {
        let text = "mode = \"coeff_table\"\n[mixture]\nmasses = [1.0, 1.0]\ngamma = 0.0\n";
        let e = parse_config_str(text, "t").unwrap_err();
        assert!(e.to_string().contains("seed"));
        let ok = format!("{text}[numerics]\nseed = 3\n");
        assert!(parse_config_str(&ok, "t").is_ok());
    }

    #[test]
    fn unknown_key_is_reported() {
        let text = MINIMAL.replace("alpha = 0.1", "alpha = 0.1\nbogus = 2");
        let e = parse_config_str(&text, "t").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }
}
