use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use wasep_core::grid::DEFAULT_NODES;
use wasep_core::{Grid, Params};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Stationary,
    Phi,
    FreeEnergy,
    FreeEnergyAsym,
    OptimalPath,
    PathCost,
    Simulate,
    AsymLimit,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Stationary => "stationary",
            Command::Phi => "phi",
            Command::FreeEnergy => "free-energy",
            Command::FreeEnergyAsym => "free-energy-asym",
            Command::OptimalPath => "optimal-path",
            Command::PathCost => "path-cost",
            Command::Simulate => "simulate",
            Command::AsymLimit => "asym-limit",
            Command::Verify => "verify",
        }
    }

    /// Commands built on the quasi-potential, which needs `E <= E0`.
    fn needs_subcritical(self) -> bool {
        matches!(self, Command::Phi | Command::FreeEnergy | Command::OptimalPath | Command::PathCost)
    }
}

/// Field strength: a number, or `E0` for the reversible field of the reservoirs.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "FieldRepr")]
pub enum Field {
    Value(f64),
    E0,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FieldRepr {
    Number(f64),
    Name(String),
}

impl TryFrom<FieldRepr> for Field {
    type Error = String;
    fn try_from(r: FieldRepr) -> Result<Self, String> {
        match r {
            FieldRepr::Number(x) => Ok(Field::Value(x)),
            FieldRepr::Name(s) => s.parse(),
        }
    }
}

impl FromStr for Field {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("e0") {
            return Ok(Field::E0);
        }
        s.parse().map(Field::Value).map_err(|_| format!("expected a number or E0, got {s:?}"))
    }
}

/// Settings that may come from a JSON file or from flags; flags win.
#[derive(Debug, Clone, Default, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Field strength, or E0
    #[arg(long = "E", allow_hyphen_values = true)]
    #[serde(rename = "E")]
    pub e: Option<Field>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho_minus: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho_plus: Option<f64>,
    /// Grid nodes on [-1, 1]
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m: Option<usize>,
    /// PDE time step (default h^2)
    #[arg(long)]
    pub dt: Option<f64>,
    /// PDE horizon for optimal-path, averaging window for simulate
    #[arg(long, allow_hyphen_values = true)]
    pub horizon: Option<f64>,
    /// Lattice half-width
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// Comma separated negative fields for asym-limit
    #[arg(long = "E-list", value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(rename = "E_list")]
    pub e_list: Option<Vec<f64>>,
    /// Density profile CSV with columns u, rho
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Space-time CSV with columns t, u, rho
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Run a single acceptance criterion
    #[arg(long)]
    pub criterion: Option<u8>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("bad config {}: {e}", path.display())))
    }

    /// Fields set here take precedence over `base`.
    pub fn over(self, base: Settings) -> Settings {
        Settings {
            e: self.e.or(base.e),
            rho_minus: self.rho_minus.or(base.rho_minus),
            rho_plus: self.rho_plus.or(base.rho_plus),
            m: self.m.or(base.m),
            dt: self.dt.or(base.dt),
            horizon: self.horizon.or(base.horizon),
            n: self.n.or(base.n),
            samples: self.samples.or(base.samples),
            seed: self.seed.or(base.seed),
            burn_in: self.burn_in.or(base.burn_in),
            e_list: self.e_list.or(base.e_list),
            profile: self.profile.or(base.profile),
            path: self.path.or(base.path),
            criterion: self.criterion.or(base.criterion),
        }
    }
}

/// Fully resolved configuration. This is what the manifest hash covers.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    #[serde(rename = "E")]
    pub e: f64,
    pub rho_minus: f64,
    pub rho_plus: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub dt: Option<f64>,
    pub horizon: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub burn_in: f64,
    #[serde(rename = "E_list")]
    pub e_list: Vec<f64>,
    pub profile: Option<PathBuf>,
    pub path: Option<PathBuf>,
    pub criterion: Option<u8>,
}

impl RunConfig {
    pub fn resolve(command: Command, s: Settings) -> Result<Self, CliError> {
        let horizon = s.horizon.unwrap_or(match command {
            Command::Simulate => 50.0,
            _ => 3.0,
        });
        let mut cfg = RunConfig {
            command,
            e: 0.0,
            rho_minus: s.rho_minus.unwrap_or(0.2),
            rho_plus: s.rho_plus.unwrap_or(0.8),
            m: s.m.unwrap_or(DEFAULT_NODES),
            dt: s.dt,
            horizon,
            n: s.n.unwrap_or(4),
            samples: s.samples.unwrap_or(32),
            seed: s.seed.unwrap_or(0),
            burn_in: s.burn_in.unwrap_or(10.0),
            e_list: s.e_list.unwrap_or_else(|| vec![-3.0, -10.0, -30.0, -100.0, -300.0]),
            profile: s.profile,
            path: s.path,
            criterion: s.criterion,
        };
        cfg.e = match s.e.unwrap_or(Field::Value(-2.0)) {
            Field::Value(e) => e,
            Field::E0 => Params::reversible(cfg.rho_minus, cfg.rho_plus)?.e(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let p = self.params()?;
        if self.command.needs_subcritical() {
            p.require_subcritical()?;
        }
        Grid::new(self.m)?;
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(CliError::Validation(format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(CliError::Validation(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.command == Command::Simulate {
            if self.n < 2 {
                return Err(CliError::Validation(format!("N must be at least 2, got {}", self.n)));
            }
            if self.samples < 2 {
                return Err(CliError::Validation("simulate needs at least 2 samples for error bars".into()));
            }
            if !(self.burn_in >= 0.0) {
                return Err(CliError::Validation(format!("burn-in must be non-negative, got {}", self.burn_in)));
            }
        }
        if self.command == Command::AsymLimit && (self.e_list.is_empty() || self.e_list.iter().any(|&e| !(e < 0.0))) {
            return Err(CliError::Validation("E-list must be a non-empty list of negative fields".into()));
        }
        if self.command == Command::PathCost && self.path.is_none() {
            return Err(CliError::Validation("path-cost needs --path".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<Params, CliError> {
        Ok(Params::new(self.e, self.rho_minus, self.rho_plus)?)
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.m).expect("validated")
    }
}
