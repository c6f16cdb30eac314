//! Experiment configuration: a JSON document with grid, coefficient,
//! weight and solver sections. The trace regularity sigma is always
//! derived from alpha, never supplied.

use std::path::Path;

use serde::{Deserialize, Serialize};

use conormal_core::coeff::CoefficientTensor;
use conormal_core::error::{Error, Result};
use conormal_core::expr::Expr;
use conormal_core::grid::{TGrid, TorusGrid};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridConfig {
    pub n: usize,
    pub m: usize,
    pub points: usize,
    pub period: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub t_nodes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoeffConfig {
    Identity,
    /// Matrix of expression strings over t, x1..x3 and i.
    Expression { entries: Vec<Vec<String>> },
    /// A coefficient tensor stored in the repository container format.
    File { path: String },
}

impl Default for CoeffConfig {
    fn default() -> Self {
        Self::Identity
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightConfig {
    pub alpha: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { alpha: 0.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_terms: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_terms: 80,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub coefficients: CoeffConfig,
    #[serde(default)]
    pub weight: WeightConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidGrid(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.alpha.abs() > 1.0 {
            return Err(Error::UnsupportedAlpha {
                alpha: self.weight.alpha,
            });
        }
        if self.grid.t_nodes < 2 || self.grid.t_min <= 0.0 || self.grid.t_max <= self.grid.t_min {
            return Err(Error::InvalidGrid("transverse grid section".into()));
        }
        let _ = TorusGrid::new(self.grid.n, self.grid.m, self.grid.points, self.grid.period)?;
        if let CoeffConfig::Expression { entries } = &self.coefficients {
            let c = (1 + self.grid.n) * self.grid.m;
            if entries.len() != c || entries.iter().any(|r| r.len() != c) {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    got: entries.len(),
                    context: "coefficient expression matrix",
                });
            }
            for row in entries {
                for e in row {
                    Expr::parse(e)?;
                }
            }
        }
        Ok(())
    }

    /// Halve the resolution for quick runs.
    pub fn quicken(&mut self) {
        self.grid.points = (self.grid.points / 2).max(8);
        self.grid.t_nodes = (self.grid.t_nodes / 2).max(8);
    }

    pub fn torus(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.grid.n, self.grid.m, self.grid.points, self.grid.period)
    }

    pub fn tgrid(&self) -> Result<TGrid> {
        TGrid::geometric(self.grid.t_min, self.grid.t_max, self.grid.t_nodes)
    }

    pub fn coefficients(&self, torus: &TorusGrid, tgrid: &TGrid) -> Result<CoefficientTensor> {
        match &self.coefficients {
            CoeffConfig::Identity => Ok(CoefficientTensor::identity(torus, tgrid)),
            CoeffConfig::Expression { entries } => {
                let parsed: Vec<Vec<Expr>> = entries
                    .iter()
                    .map(|row| row.iter().map(|e| Expr::parse(e)).collect::<Result<_>>())
                    .collect::<Result<_>>()?;
                CoefficientTensor::from_expressions(torus, tgrid, &parsed)
            }
            CoeffConfig::File { path } => {
                let a = conormal_core::field_io::read_coefficients(Path::new(path))?;
                if a.torus != *torus {
                    return Err(Error::SizeMismatch);
                }
                Ok(a)
            }
        }
    }

    /// Hash of the canonical serialized config, embedded in every report.
    pub fn hash(&self) -> u64 {
        let canonical = serde_json::to_string(self).unwrap_or_default();
        conormal_core::report::content_hash(canonical.as_bytes())
    }
}
