//! Measurement reports: named values with grid provenance, serialized as
//! JSON records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::grid::{TGrid, TorusGrid};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridMeta {
    pub n: usize,
    pub m: usize,
    pub points: usize,
    pub period: f64,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub t_nodes: Option<usize>,
}

impl GridMeta {
    pub fn boundary(grid: &TorusGrid) -> Self {
        Self {
            n: grid.n,
            m: grid.m,
            points: grid.points,
            period: grid.period,
            t_min: None,
            t_max: None,
            t_nodes: None,
        }
    }

    pub fn half_space(grid: &TorusGrid, tgrid: &TGrid) -> Self {
        Self {
            t_min: Some(tgrid.t_min),
            t_max: Some(tgrid.t_max),
            t_nodes: Some(tgrid.len()),
            ..Self::boundary(grid)
        }
    }
}

/// Stable 64-bit content hash for keying reports to their inputs.
pub fn content_hash(bytes: &[u8]) -> u64 {
    crate::util::fnv1a(bytes)
}

/// A measured quantity (norm, constant, deviation suite) with metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub name: String,
    /// Headline value when the report is a single number.
    pub value: f64,
    /// Named secondary values (per-identity deviations, tail bounds, ...).
    pub entries: BTreeMap<String, f64>,
    pub grid: GridMeta,
    pub trials: Option<u32>,
    pub notes: Vec<String>,
}

impl FunctionalReport {
    pub fn new(name: impl Into<String>, value: f64, grid: GridMeta) -> Self {
        Self {
            name: name.into(),
            value,
            entries: BTreeMap::new(),
            grid,
            trials: None,
            notes: Vec::new(),
        }
    }

    pub fn with_entry(mut self, key: impl Into<String>, value: f64) -> Self {
        self.entries.insert(key.into(), value);
        self
    }

    pub fn entry(&self, key: &str) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn push_note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Largest deviation recorded across all entries.
    pub fn max_entry(&self) -> f64 {
        self.entries.values().copied().fold(self.value, f64::max)
    }
}
