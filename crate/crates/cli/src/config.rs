//! TOML run configuration.
//!
//! ```toml
//! [system]
//! preset = "three_level"
//! omega = 1.0
//!
//! [bath]
//! big_gamma = 1.0
//! gamma = 1.0
//!
//! [run]
//! mode = "ou-hfd"
//! order = 10
//! trajectories = 1000
//! seed = 1
//! ```
//!
//! Complex numbers are `[re, im]` pairs; matrices are row-major lists of them.

use std::fmt;

use hfd::hfd_general::{Closure, GeneralOptions};
use hfd::hfd_ou::{OuOptions, Truncation};
use hfd::model::{validate_system, Observable};
use hfd::noise::{step_count, KernelTerm, NoiseError};
use hfd::{Complex64, EngineSpec, Kernel, Matrix, System};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    OuHfd,
    GeneralHfd,
    SdeOracle,
    HopsCheck,
    Exact3,
    Lindblad,
    Compare,
    Counts,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::OuHfd => "ou-hfd",
            Mode::GeneralHfd => "general-hfd",
            Mode::SdeOracle => "sde-oracle",
            Mode::HopsCheck => "hops-check",
            Mode::Exact3 => "exact3",
            Mode::Lindblad => "lindblad",
            Mode::Compare => "compare",
            Mode::Counts => "counts",
        }
    }
}

/// A trajectory propagator, as named in `run.engine` and `run.reference`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineKind {
    OuHfd,
    GeneralHfd,
    SdeOracle,
    Exact3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    ThreeLevel,
    SpinBoson,
    QubitDecay,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationKind {
    #[default]
    Zero,
    Commutator,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosureKind {
    #[default]
    TruncateZero,
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    pub name: String,
    pub matrix: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tunneling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lindblad: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observables: Vec<ObservableConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// `[Re c, Im c, Re ν, Im ν]` per term of `α(τ) = Σ c e^{-ντ}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_max: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub mode: Mode,
    pub order: usize,
    pub truncation: TruncationKind,
    pub closure: ClosureKind,
    /// Geometric ratio; defaults to `-ν` of a single-term kernel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closure_a: Option<[f64; 2]>,
    pub closure_j_max: usize,
    pub dt: f64,
    pub t_max: f64,
    pub trajectories: usize,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: String,
    /// Engine under test in `compare` and `hops-check`.
    pub engine: EngineKind,
    /// Engine compared against in `compare`.
    pub reference: EngineKind,
    pub hops_depth: usize,
    /// Levels kept in the truncated reconstruction of `hops-check`.
    pub hops_keep: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: Mode::OuHfd,
            order: 10,
            truncation: TruncationKind::Zero,
            closure: ClosureKind::TruncateZero,
            closure_a: None,
            closure_j_max: 1,
            dt: 0.01,
            t_max: 10.0,
            trajectories: 1000,
            seed: 0,
            workers: 1,
            out_dir: "runs".into(),
            engine: EngineKind::OuHfd,
            reference: EngineKind::Exact3,
            hops_depth: 6,
            hops_keep: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub bath: BathConfig,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl ConfigErrors {
    pub fn messages(&self) -> Vec<String> {
        self.0.iter().map(|e| e.message.clone()).collect()
    }
}

/// 1-based line of `key = …` inside `[section]`, or of the header itself.
fn locate(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let header = format!("[{section}]");
    let mut inside = false;
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            inside = line == header;
            if inside {
                header_line = Some(i + 1);
            }
            continue;
        }
        if let (true, Some(k)) = (inside, key) {
            let name = line.split('=').next().unwrap_or("").trim();
            if name == k {
                return Some(i + 1);
            }
        }
    }
    header_line
}

fn complex_of(v: &[f64; 2]) -> Complex64 {
    Complex64::new(v[0], v[1])
}

fn matrix_of(name: &str, dim: usize, data: &[[f64; 2]]) -> Result<Matrix, String> {
    if data.len() != dim * dim {
        return Err(format!(
            "{name} needs {} entries for dim = {dim}, got {}",
            dim * dim,
            data.len()
        ));
    }
    Matrix::from_row_major(data.iter().map(complex_of).collect())
        .ok_or_else(|| format!("{name} is not square"))
}

impl RunConfig {
    /// A preset system with an OU bath and default run settings.
    pub fn preset(preset: Preset, big_gamma: f64, gamma: f64) -> Self {
        Self {
            system: SystemConfig {
                preset: Some(preset),
                ..Default::default()
            },
            bath: BathConfig {
                big_gamma: Some(big_gamma),
                gamma: Some(gamma),
                ..Default::default()
            },
            run: RunSection::default(),
        }
    }

    /// Expands the system section into matrices.
    pub fn system_spec(&self) -> Result<System, ConfigError> {
        let s = &self.system;
        let err = |message: String| ConfigError {
            line: None,
            message,
        };
        let explicit = s.dim.is_some()
            || s.hamiltonian.is_some()
            || s.lindblad.is_some()
            || s.initial_state.is_some();
        let mut spec = match (s.preset, explicit) {
            (Some(_), true) => {
                return Err(err(
                    "system: give either a preset or explicit matrices, not both".into(),
                ))
            }
            (Some(Preset::ThreeLevel), _) => System::three_level(s.omega.unwrap_or(1.0)),
            (Some(Preset::QubitDecay), _) => System::qubit_decay(s.omega.unwrap_or(1.0)),
            (Some(Preset::SpinBoson), _) => {
                let (Some(bias), Some(tunneling)) = (s.bias, s.tunneling) else {
                    return Err(err("spin_boson preset requires bias and tunneling".into()));
                };
                System::spin_boson(bias, tunneling)
            }
            (None, false) => return Err(err("system: preset or dim required".into())),
            (None, true) => {
                let dim = s.dim.ok_or_else(|| err("system: dim required".into()))?;
                let need = |name: &str, v: &Option<Vec<[f64; 2]>>| {
                    v.clone()
                        .ok_or_else(|| err(format!("system: {name} required")))
                };
                let h = matrix_of("hamiltonian", dim, &need("hamiltonian", &s.hamiltonian)?)
                    .map_err(err)?;
                let l = matrix_of("lindblad", dim, &need("lindblad", &s.lindblad)?).map_err(err)?;
                let psi: Vec<Complex64> = need("initial_state", &s.initial_state)?
                    .iter()
                    .map(complex_of)
                    .collect();
                System {
                    dim,
                    hamiltonian: h,
                    lindblad: l,
                    initial_state: psi,
                    observables: Vec::new(),
                }
            }
        };
        if s.preset.is_none() && (s.omega.is_some() || s.bias.is_some() || s.tunneling.is_some()) {
            return Err(err(
                "system: omega, bias and tunneling only apply to presets".into(),
            ));
        }
        for o in &s.observables {
            let matrix =
                matrix_of(&format!("observable {}", o.name), spec.dim, &o.matrix).map_err(err)?;
            spec.observables.retain(|x| x.name != o.name);
            spec.observables.push(Observable {
                name: o.name.clone(),
                matrix,
            });
        }
        let report = validate_system(&spec);
        if !report.passed() {
            let failed: Vec<String> = report.failures().iter().map(|c| c.name.clone()).collect();
            return Err(err(format!("invalid system: {}", failed.join(", "))));
        }
        Ok(spec)
    }

    pub fn kernel(&self) -> Result<Kernel, ConfigError> {
        let b = &self.bath;
        let err = |message: String| ConfigError {
            line: None,
            message,
        };
        let kernel = match (b.big_gamma, b.gamma, &b.terms) {
            (None, None, None) => return Err(err("kernel required".into())),
            (Some(_), _, Some(_)) | (_, Some(_), Some(_)) => {
                return Err(err(
                    "bath: give either big_gamma/gamma or terms, not both".into()
                ))
            }
            (Some(big), Some(g), None) => Kernel::ou(big, g),
            (None, Some(_), None) => return Err(err("bath: big_gamma required".into())),
            (Some(_), None, None) => return Err(err("bath: gamma required".into())),
            (None, None, Some(terms)) => Kernel::new(
                terms
                    .iter()
                    .map(|t| KernelTerm {
                        weight: Complex64::new(t[0], t[1]),
                        rate: Complex64::new(t[2], t[3]),
                    })
                    .collect(),
            ),
        }
        .map_err(|e| err(format!("bath: {e}")))?;
        Ok(match b.j_max {
            Some(j) => kernel.with_j_max(j),
            None => kernel,
        })
    }

    /// Engine selected by `kind` with this configuration's options.
    pub fn engine_spec(&self, kind: EngineKind) -> Result<EngineSpec, ConfigError> {
        let r = &self.run;
        Ok(match kind {
            EngineKind::OuHfd => EngineSpec::Ou(OuOptions {
                order: r.order,
                truncation: match r.truncation {
                    TruncationKind::Zero => Truncation::Zero,
                    TruncationKind::Commutator => Truncation::Commutator,
                },
                renormalize: true,
            }),
            EngineKind::GeneralHfd => {
                let closure = match r.closure {
                    ClosureKind::TruncateZero => Closure::TruncateZero,
                    ClosureKind::Geometric => {
                        let a = match r.closure_a {
                            Some(a) => complex_of(&a),
                            None => {
                                -self
                                    .kernel()?
                                    .single_exponential()
                                    .ok_or_else(|| ConfigError {
                                        line: None,
                                        message: "run: closure_a required for a multi-term kernel"
                                            .into(),
                                    })?
                                    .rate
                            }
                        };
                        Closure::Geometric {
                            a,
                            j_max: r.closure_j_max,
                        }
                    }
                };
                EngineSpec::General(GeneralOptions {
                    order: r.order,
                    closure,
                    ..Default::default()
                })
            }
            EngineKind::SdeOracle => EngineSpec::Sde { order: r.order },
            EngineKind::Exact3 => {
                if self.system.preset != Some(Preset::ThreeLevel) {
                    return Err(ConfigError {
                        line: None,
                        message: "exact3 needs the three_level preset".into(),
                    });
                }
                EngineSpec::Exact3 {
                    omega: self.system.omega.unwrap_or(1.0),
                }
            }
        })
    }

    fn check_run(&self) -> Vec<(&'static str, String)> {
        let r = &self.run;
        let mut out = Vec::new();
        if r.seed > i64::MAX as u64 {
            out.push(("seed", format!("run: seed must be at most {}", i64::MAX)));
        }
        if r.mode == Mode::Counts {
            return out;
        }
        match step_count(r.t_max, r.dt) {
            Err(e @ NoiseError::NonPositiveStep(_)) => out.push(("dt", format!("run: {e}"))),
            Err(e) => out.push(("t_max", format!("run: {e}"))),
            Ok(_) => {}
        }
        if r.trajectories == 0 {
            out.push((
                "trajectories",
                "run: trajectories must be at least 1".into(),
            ));
        }
        if r.workers == 0 {
            out.push(("workers", "run: workers must be at least 1".into()));
        }
        if r.mode == Mode::HopsCheck && r.hops_depth > r.order + 1 {
            out.push((
                "hops_depth",
                format!(
                    "run: hops_depth = {} needs order >= {}",
                    r.hops_depth,
                    r.hops_depth - 1
                ),
            ));
        }
        out
    }

    /// Every semantic problem, each tagged with the line it concerns.
    pub fn validate(&self, text: Option<&str>) -> Result<(), ConfigErrors> {
        let mut errors = Vec::new();
        let mut tag = |e: ConfigError, section: &str, key: Option<&str>| {
            errors.push(ConfigError {
                line: text.and_then(|t| locate(t, section, key)),
                message: e.message,
            });
        };
        let counts = self.run.mode == Mode::Counts;
        if !counts {
            if let Err(e) = self.system_spec() {
                let key = first_key(
                    &e.message,
                    &["hamiltonian", "lindblad", "initial_state", "bias", "dim"],
                );
                tag(e, "system", key);
            }
            if let Err(e) = self.kernel() {
                let key = first_key(&e.message, &["big_gamma", "gamma", "terms"]);
                tag(e, "bath", key);
            }
        }
        for (key, message) in self.check_run() {
            tag(
                ConfigError {
                    line: None,
                    message,
                },
                "run",
                Some(key),
            );
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errors))
        }
    }

    /// TOML text that parses back to `self`.
    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

fn first_key<'a>(message: &str, keys: &[&'a str]) -> Option<&'a str> {
    keys.iter().copied().find(|k| message.contains(k))
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        ConfigErrors(vec![ConfigError {
            line,
            message: e.message().to_string(),
        }])
    })?;
    cfg.validate(Some(text))?;
    Ok(cfg)
}
