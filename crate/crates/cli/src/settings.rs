//! Shared flags, merged with an optional key=value config file.

use crate::input::{parse_config, parse_rho, RhoSpec};
use clap::{Args, ValueEnum};
use serde::Serialize;
use so3_bgk::flow::FlowOptions;
use so3_bgk::vonmises::{Quadrature, QuadratureConfig};
use so3_bgk::{Error, Result};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Densities: `a:b:n`, a comma list, or one value.
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nodes_1d: Option<usize>,
    #[arg(long)]
    pub nodes_s3: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Integration horizon of the flux ODE.
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Relative tolerance of the integrator; the absolute one is tol/100.
    #[arg(long)]
    pub tol: Option<f64>,
    /// key=value file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const COMMON_KEYS: [&str; 9] = ["rho", "seed", "nodes-1d", "nodes-s3", "out", "format", "jobs", "t-max", "tol"];
pub const SIM_KEYS: [&str; 6] = ["n", "rho-eff", "time", "checkpoint-dt", "replicas", "init-kappa"];

#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub rho: Option<String>,
    pub seed: u64,
    pub quadrature: QuadratureConfig,
    pub out: PathBuf,
    pub format: Format,
    pub jobs: Option<usize>,
    pub t_max: f64,
    pub tol: f64,
    #[serde(skip)]
    pub file: BTreeMap<String, String>,
}

/// Flag value, else config value, else `None`.
pub fn pick<T: FromStr>(flag: Option<T>, file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("config value '{v}' for '{key}' is invalid"))),
    }
}

impl Settings {
    pub fn resolve(c: &Common) -> Result<Settings> {
        let file = match &c.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        for k in file.keys() {
            if !COMMON_KEYS.contains(&k.as_str()) && !SIM_KEYS.contains(&k.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown config key '{k}'")));
            }
        }
        let format = match (c.format, file.get("format")) {
            (Some(f), _) => f,
            (None, Some(v)) => Format::from_str(v, true)
                .map_err(|_| Error::InvalidArgument(format!("unknown format '{v}'")))?,
            (None, None) => Format::Csv,
        };
        let defaults = QuadratureConfig::default();
        let flow = FlowOptions::default();
        let s = Settings {
            rho: pick(c.rho.clone(), &file, "rho")?,
            seed: pick(c.seed, &file, "seed")?.unwrap_or(0),
            quadrature: QuadratureConfig {
                nodes_1d: pick(c.nodes_1d, &file, "nodes-1d")?.unwrap_or(defaults.nodes_1d),
                nodes_s3: pick(c.nodes_s3, &file, "nodes-s3")?.unwrap_or(defaults.nodes_s3),
            },
            out: pick(c.out.clone(), &file, "out")?.unwrap_or_else(|| PathBuf::from(".")),
            format,
            jobs: pick(c.jobs, &file, "jobs")?,
            t_max: pick(c.t_max, &file, "t-max")?.unwrap_or(flow.t_max),
            tol: pick(c.tol, &file, "tol")?.unwrap_or(flow.rtol),
            file,
        };
        s.quadrature.validate()?;
        if !(s.t_max > 0.0) || !(s.tol > 0.0) {
            return Err(Error::InvalidArgument("--t-max and --tol must be positive".into()));
        }
        if s.jobs == Some(0) {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        if let Some(j) = s.jobs {
            // only the first configuration in a process takes effect
            let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
        }
        Ok(s)
    }

    pub fn quad(&self) -> Result<Quadrature> {
        Quadrature::new(self.quadrature)
    }

    pub fn flow(&self) -> FlowOptions {
        FlowOptions {
            rtol: self.tol,
            atol: self.tol / 100.0,
            t_max: self.t_max,
            ..Default::default()
        }
    }

    pub fn rho_spec(&self) -> Result<RhoSpec> {
        match &self.rho {
            Some(r) => parse_rho(r),
            None => Err(Error::InvalidArgument("--rho is required".into())),
        }
    }

    pub fn single_rho(&self) -> Result<f64> {
        match self.rho_spec()? {
            RhoSpec::List(v) if v.len() == 1 => Ok(v[0]),
            _ => Err(Error::InvalidArgument("--rho must be a single value here".into())),
        }
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap()
    }
}
