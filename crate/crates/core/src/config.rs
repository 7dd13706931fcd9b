//! `key = value` run configuration with presets and command-line overrides.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4};
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    Auxetic,
    NonAuxetic,
    Mixed,
    Custom,
    /// Frozen constant coefficient with a known smooth solution.
    Manufactured,
}

impl Case {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "auxetic" => Self::Auxetic,
            "non_auxetic" | "non-auxetic" => Self::NonAuxetic,
            "mixed" => Self::Mixed,
            "custom" => Self::Custom,
            "manufactured" => Self::Manufactured,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Auxetic => "auxetic",
            Self::NonAuxetic => "non_auxetic",
            Self::Mixed => "mixed",
            Self::Custom => "custom",
            Self::Manufactured => "manufactured",
        }
    }

    pub fn is_preset(self) -> bool {
        matches!(self, Self::Auxetic | Self::NonAuxetic | Self::Mixed)
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DirichletData {
    Constant(f64),
    /// Linear in `x` from the left side value to the right side value.
    Ramp(f64, f64),
}

impl DirichletData {
    pub fn eval(self, x: f64, length: f64) -> f64 {
        match self {
            Self::Constant(c) => c,
            Self::Ramp(left, right) => left + (right - left) * x / length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Newton,
    Picard,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Newton => "newton",
            Self::Picard => "picard",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case: Case,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub nx: usize,
    pub ny: usize,
    pub length: f64,
    pub xi_minus: f64,
    pub xi_plus: f64,
    pub dirichlet: Option<DirichletData>,
    pub neumann: f64,
    pub r_tol: f64,
    pub a_tol: f64,
    pub max_iterations: usize,
    pub damping: f64,
    pub solver: SolverKind,
    pub quadrature_order: usize,
    pub output_prefix: PathBuf,
    /// Refinement levels for `study`.
    pub levels: usize,
    /// Dissipation values for `sweep`.
    pub epsilons: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case: Case::Custom,
            alpha: 0.0,
            beta: 0.0,
            epsilon: 0.0,
            nx: 64,
            ny: 64,
            length: 1.5,
            xi_minus: -FRAC_PI_4,
            xi_plus: FRAC_PI_3,
            dirichlet: None,
            neumann: 0.0,
            r_tol: 1e-8,
            a_tol: 1e-12,
            max_iterations: 50,
            damping: 1.0,
            solver: SolverKind::Newton,
            quadrature_order: 2,
            output_prefix: PathBuf::from("kirigami"),
            levels: 4,
            epsilons: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Defaults for `case`: material parameters, dissipation and tolerance.
    pub fn preset(case: Case) -> Self {
        let base = Self {
            case,
            ..Self::default()
        };
        match case {
            Case::Auxetic => Self {
                alpha: -0.9,
                beta: 0.9,
                epsilon: 0.0,
                r_tol: 1e-8,
                ..base
            },
            Case::NonAuxetic => Self {
                alpha: -0.9,
                beta: 0.0,
                epsilon: 0.5,
                r_tol: 1e-6,
                ..base
            },
            // mu1 = cos + 1.6 sin vanishes at -0.559, inside [-pi/4, 0]
            Case::Mixed => Self {
                alpha: -1.6,
                beta: 0.4,
                epsilon: 0.071,
                r_tol: 1e-6,
                xi_minus: 0.0,
                ..base
            },
            Case::Manufactured => Self {
                dirichlet: Some(DirichletData::Constant(0.0)),
                ..base
            },
            Case::Custom => base,
        }
    }

    /// Parses a config file followed by `--key value` overrides. `case` is
    /// applied first wherever it appears, then all other keys in order.
    pub fn load(file: Option<(&str, &str)>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut entries: Vec<Entry> = Vec::new();
        if let Some((name, text)) = file {
            entries.extend(parse_file(name, text)?);
        }
        entries.extend(parse_overrides(overrides)?);

        let case = entries
            .iter()
            .rev()
            .find(|e| e.key == "case")
            .map(|e| {
                Case::parse(&e.value).ok_or_else(|| e.error(format!("unknown case `{}`", e.value)))
            })
            .transpose()?
            .unwrap_or(Case::Custom);
        let mut config = Self::preset(case);
        for e in entries.iter().filter(|e| e.key != "case") {
            config.set(e)?;
        }
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, e: &Entry) -> Result<(), ConfigError> {
        let real = || {
            e.value
                .parse::<f64>()
                .map_err(|_| e.error(format!("`{}` is not a number", e.value)))
        };
        let int = || {
            e.value
                .parse::<usize>()
                .map_err(|_| e.error(format!("`{}` is not a non-negative integer", e.value)))
        };
        match e.key.as_str() {
            "alpha" => self.alpha = real()?,
            "beta" => self.beta = real()?,
            "epsilon" => self.epsilon = real()?,
            "nx" => self.nx = int()?,
            "ny" => self.ny = int()?,
            "length" | "l" => self.length = real()?,
            "xi_minus" => self.xi_minus = real()?,
            "xi_plus" => self.xi_plus = real()?,
            "dirichlet_constant" => self.dirichlet = Some(DirichletData::Constant(real()?)),
            "dirichlet_ramp" => {
                let parts = parse_list(&e.value).map_err(|m| e.error(m))?;
                let [left, right] = parts[..] else {
                    return Err(e.error("dirichlet_ramp expects `left,right`".into()));
                };
                self.dirichlet = Some(DirichletData::Ramp(left, right));
            }
            "neumann" => self.neumann = real()?,
            "r_tol" => self.r_tol = real()?,
            "a_tol" => self.a_tol = real()?,
            "max_iterations" => self.max_iterations = int()?,
            "damping" => self.damping = real()?,
            "solver" => {
                self.solver = match e.value.as_str() {
                    "newton" => SolverKind::Newton,
                    "picard" => SolverKind::Picard,
                    other => return Err(e.error(format!("unknown solver `{other}`"))),
                }
            }
            "quadrature_order" => self.quadrature_order = int()?,
            "output_prefix" => self.output_prefix = PathBuf::from(&e.value),
            "levels" => self.levels = int()?,
            "epsilons" => self.epsilons = parse_list(&e.value).map_err(|m| e.error(m))?,
            other => return Err(e.error(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.nx == 0 || self.ny == 0 {
            return bad(format!(
                "nx and ny must be positive, got {} x {}",
                self.nx, self.ny
            ));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return bad(format!("length must be positive, got {}", self.length));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            ));
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0)) {
            return bad("all epsilons must be non-negative".into());
        }
        if self.dirichlet.is_none() {
            return bad(format!(
                "case `{}` needs Dirichlet data: set dirichlet_constant or dirichlet_ramp",
                self.case
            ));
        }
        Ok(())
    }
}

struct Entry {
    key: String,
    value: String,
    source_name: String,
    line: usize,
}

impl Entry {
    fn error(&self, message: String) -> ConfigError {
        ConfigError::Parse {
            source_name: self.source_name.clone(),
            line: self.line,
            message,
        }
    }
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn parse_list(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| format!("`{s}` is not a number"))
        })
        .collect()
}

fn parse_file(name: &str, text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                source_name: name.into(),
                line: i + 1,
                message: format!("expected `key = value`, found `{line}`"),
            });
        };
        out.push(Entry {
            key: normalize(k),
            value: v.trim().to_string(),
            source_name: name.into(),
            line: i + 1,
        });
    }
    Ok(out)
}

/// Overrides are `--key value` or `--key=value`; `line` is the argument
/// position.
fn parse_overrides(args: &[String]) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let err = |message: String| ConfigError::Parse {
            source_name: "command line".into(),
            line: i + 1,
            message,
        };
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(err(format!("expected `--key value`, found `{arg}`")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = args
                    .get(i + 1)
                    .ok_or_else(|| err(format!("missing value for `--{flag}`")))?;
                i += 1;
                (flag.to_string(), v.clone())
            }
        };
        out.push(Entry {
            key: normalize(&key),
            value,
            source_name: "command line".into(),
            line: i + 1,
        });
        i += 1;
    }
    Ok(out)
}
