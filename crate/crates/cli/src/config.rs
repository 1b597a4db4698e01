//! Run configuration: a TOML file describing the model, the reservoirs, the
//! retained-space truncation, the variational ansatz, the integrator, and
//! the output layout. Unknown keys are rejected so typos fail loudly.

use crate::error::{AppError, ExitCode};
use dqn_core::bath::{default_pole_count, ReservoirSpec, Scheme};
use dqn_core::models::{AndersonSpec, ModelSpec, TwoImpuritySpec};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Dense,
    Rbm,
    Both,
}

impl RunMode {
    pub fn wants_dense(self) -> bool {
        matches!(self, RunMode::Dense | RunMode::Both)
    }
    pub fn wants_rbm(self) -> bool {
        matches!(self, RunMode::Rbm | RunMode::Both)
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dense" => Ok(RunMode::Dense),
            "rbm" => Ok(RunMode::Rbm),
            "both" => Ok(RunMode::Both),
            other => Err(format!("unknown mode `{other}` (expected dense, rbm, or both)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct ModelSection {
    pub kind: ModelKind,
    pub eps0: f64,
    pub u0: f64,
    /// Quench shift of the level energy (anderson only).
    #[serde(default)]
    pub d_eps: f64,
    /// Quench shift of the on-site interaction (anderson only).
    #[serde(default)]
    pub d_u: f64,
    /// Exchange coupling switched on at the quench (two_impurity only).
    #[serde(default)]
    pub j_exchange: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Anderson,
    TwoImpurity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSection {
    /// Exponential-decomposition scheme for the reservoir correlation
    /// functions.
    #[serde(default = "default_scheme")]
    pub scheme: SchemeKind,
    /// Poles per reservoir; omitted → an accuracy-driven default per
    /// reservoir.
    #[serde(default)]
    pub poles: Option<usize>,
    /// Bias voltage switched on at the quench; each reservoir picks up
    /// `bias_factor * voltage` on its chemical potential in the post-quench
    /// epoch.
    #[serde(default)]
    pub voltage: f64,
    pub reservoir: Vec<ReservoirSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Pade,
    Matsubara,
}

fn default_scheme() -> SchemeKind {
    SchemeKind::Pade
}

impl SchemeKind {
    pub fn to_core(self) -> Scheme {
        match self {
            SchemeKind::Pade => Scheme::Pade,
            SchemeKind::Matsubara => Scheme::Matsubara,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirSection {
    /// `L` or `R`; maps to the `I_L`/`I_R` CSV columns.
    pub label: String,
    pub coupling: f64,
    pub bandwidth: f64,
    pub temperature: f64,
    /// Base chemical potential, present in both epochs.
    #[serde(default)]
    pub mu: f64,
    /// Share of the bath-level `voltage` added post-quench (e.g. +0.5/−0.5).
    #[serde(default)]
    pub bias_factor: f64,
    pub orbitals: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSection {
    /// Maximum total dissipaton occupancy retained.
    pub tier: usize,
    #[serde(default = "default_true")]
    pub parity_filter: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmSection {
    pub n_h: usize,
    pub n_a: usize,
    pub seed: u64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_init_tol")]
    pub init_tol: f64,
    #[serde(default = "default_init_steps")]
    pub init_steps: usize,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingKind,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub n_burn: Option<usize>,
    #[serde(default)]
    pub n_chains: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingKind {
    Exact,
    Sampled,
}

fn default_lambda() -> f64 {
    1e-4
}
fn default_init_tol() -> f64 {
    1e-3
}
fn default_init_steps() -> usize {
    300
}
fn default_sampling() -> SamplingKind {
    SamplingKind::Exact
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub t_start: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    /// File-name stem; defaults to the config file's stem.
    #[serde(default)]
    pub prefix: Option<String>,
}

fn default_out_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    pub model: ModelSection,
    pub bath: BathSection,
    pub truncation: TruncationSection,
    #[serde(default)]
    pub rbm: Option<RbmSection>,
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_mode() -> RunMode {
    RunMode::Both
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            AppError::new(ExitCode::Io, format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| {
            AppError::new(ExitCode::Config, format!("config {}: {e}", path.display()))
        })?;
        if cfg.output.prefix.is_none() {
            cfg.output.prefix =
                Some(path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(
                    || "run".into(),
                ));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), AppError> {
        let bad = |msg: String| Err(AppError::new(ExitCode::Config, msg));
        match self.model.kind {
            ModelKind::Anderson => {
                if self.model.j_exchange != 0.0 {
                    return bad("model.j_exchange is a two_impurity parameter".into());
                }
            }
            ModelKind::TwoImpurity => {
                if self.model.d_eps != 0.0 || self.model.d_u != 0.0 {
                    return bad("model.d_eps / model.d_u are anderson parameters".into());
                }
            }
        }
        if self.bath.reservoir.is_empty() {
            return bad("at least one [[bath.reservoir]] is required".into());
        }
        let model = self.model_spec();
        let mut seen = Vec::new();
        for r in &self.bath.reservoir {
            if r.label != "L" && r.label != "R" {
                return bad(format!(
                    "reservoir label `{}` must be L or R (it names a CSV current column)",
                    r.label
                ));
            }
            if seen.contains(&r.label) {
                return bad(format!("duplicate reservoir label `{}`", r.label));
            }
            seen.push(r.label.clone());
            if !(r.coupling > 0.0) || !(r.bandwidth > 0.0) || !(r.temperature > 0.0) {
                return bad(format!(
                    "reservoir `{}`: coupling, bandwidth, temperature must be positive",
                    r.label
                ));
            }
            if r.orbitals.is_empty() {
                return bad(format!("reservoir `{}` couples no orbitals", r.label));
            }
            model
                .check_orbitals(&r.orbitals)
                .map_err(|e| AppError::new(ExitCode::Config, e.to_string()))?;
        }
        if self.truncation.tier == 0 {
            return bad("truncation.tier must be at least 1".into());
        }
        if let Some(rbm) = &self.rbm {
            if rbm.n_h == 0 || rbm.n_a == 0 {
                return bad("rbm.n_h and rbm.n_a must be at least 1".into());
            }
            if rbm.lambda < 0.0 {
                return bad("rbm.lambda must be nonnegative".into());
            }
            if rbm.sampling == SamplingKind::Sampled
                && (rbm.n_samples.is_none() || rbm.n_chains.is_none())
            {
                return bad("sampled mode needs rbm.n_samples and rbm.n_chains".into());
            }
        } else if self.mode.wants_rbm() {
            return bad("mode includes rbm but the [rbm] section is missing".into());
        }
        let it = &self.integrator;
        if !(it.dt > 0.0) || !(it.t_end > it.t_start) {
            return bad("integrator needs dt > 0 and t_end > t_start".into());
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model.kind {
            ModelKind::Anderson => ModelSpec::Anderson(AndersonSpec {
                eps0: self.model.eps0,
                u0: self.model.u0,
                d_eps: self.model.d_eps,
                d_u: self.model.d_u,
            }),
            ModelKind::TwoImpurity => ModelSpec::TwoImpurity(TwoImpuritySpec {
                eps0: self.model.eps0,
                u0: self.model.u0,
                j_exchange: self.model.j_exchange,
            }),
        }
    }

    /// Reservoir specifications for one epoch; the post-quench epoch adds
    /// the bias shares to the chemical potentials.
    pub fn reservoir_specs(&self, post_quench: bool) -> Vec<ReservoirSpec> {
        self.bath
            .reservoir
            .iter()
            .map(|r| ReservoirSpec {
                label: r.label.clone(),
                coupling: r.coupling,
                bandwidth: r.bandwidth,
                chemical_potential: if post_quench {
                    r.mu + r.bias_factor * self.bath.voltage
                } else {
                    r.mu
                },
                temperature: r.temperature,
                coupled_orbitals: r.orbitals.clone(),
            })
            .collect()
    }

    /// Pole count for one reservoir: the explicit setting, else the
    /// accuracy-driven default.
    pub fn pole_count(&self, spec: &ReservoirSpec) -> Result<usize, AppError> {
        match self.bath.poles {
            Some(p) => Ok(p),
            None => default_pole_count(spec)
                .map_err(|e| AppError::new(ExitCode::Bath, e.to_string())),
        }
    }

    /// The resolved config as TOML, for embedding into artifacts.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# unserializable: {e}"))
    }

    pub fn prefix(&self) -> &str {
        self.output.prefix.as_deref().unwrap_or("run")
    }

    pub fn n_steps(&self) -> usize {
        ((self.integrator.t_end - self.integrator.t_start) / self.integrator.dt).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        r#"
mode = "dense"

[model]
kind = "anderson"
eps0 = 0.9
u0 = 0.0
d_eps = -0.6

[bath]
poles = 0

[[bath.reservoir]]
label = "L"
coupling = 1.0
bandwidth = 20.0
temperature = 5.0
orbitals = [0, 1]

[truncation]
tier = 2

[integrator]
dt = 1e-3
t_end = 0.1
"#
    }

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg: RunConfig = toml::from_str(minimal_toml()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.mode, RunMode::Dense);
        assert_eq!(cfg.bath.reservoir.len(), 1);
        assert_eq!(cfg.n_steps(), 100);
        let pre = cfg.reservoir_specs(false);
        let post = cfg.reservoir_specs(true);
        assert_eq!(pre[0].chemical_potential, 0.0);
        assert_eq!(post[0].chemical_potential, 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = minimal_toml().replace("[truncation]", "[truncation]\nbogus = 1");
        let err = toml::from_str::<RunConfig>(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "unexpected message: {err}");
    }

    #[test]
    fn rbm_mode_without_rbm_section_is_rejected() {
        let text = minimal_toml().replace("mode = \"dense\"", "mode = \"both\"");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.message.contains("rbm"));
    }

    #[test]
    fn bias_applies_only_post_quench() {
        let text = minimal_toml()
            .replace("poles = 0", "poles = 0\nvoltage = 0.2")
            .replace("orbitals = [0, 1]", "orbitals = [0, 1]\nbias_factor = 0.5");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.reservoir_specs(false)[0].chemical_potential, 0.0);
        assert!((cfg.reservoir_specs(true)[0].chemical_potential - 0.1).abs() < 1e-15);
    }

    #[test]
    fn resolved_toml_round_trips() {
        let cfg: RunConfig = toml::from_str(minimal_toml()).unwrap();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.model.eps0, cfg.model.eps0);
        assert_eq!(back.mode, cfg.mode);
    }

    #[test]
    fn bad_labels_and_ranges_are_rejected() {
        let cfg: RunConfig = toml::from_str(minimal_toml()).unwrap();
        let mut c = cfg.clone();
        c.bath.reservoir[0].label = "X".into();
        assert!(c.validate().is_err());
        let mut c = cfg.clone();
        c.bath.reservoir[0].orbitals = vec![7];
        assert!(c.validate().is_err());
        let mut c = cfg.clone();
        c.truncation.tier = 0;
        assert!(c.validate().is_err());
        let mut c = cfg;
        c.integrator.dt = 0.0;
        assert!(c.validate().is_err());
    }
}
