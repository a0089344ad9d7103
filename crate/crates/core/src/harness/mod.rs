//! Experiment orchestration: configuration, parameter sweeps, rate fits and
//! CSV emission.

pub mod config;
pub mod emit;
pub mod experiments;
pub mod fit;
pub mod sweep;

use std::fmt::Display;

pub use config::{
    ConvergenceConfig, ExpansionConfig, ExpansionExperiment, ExperimentConfig, FluxModeKind,
    MacroProblemKind, MacroRunConfig, ReferenceKind, SweepVar,
};
pub use emit::{emit, emit_series, emit_to_path, series_path};
pub use experiments::{
    build_macro, macro_convergence, run_convergence, run_expansion, run_macro_config,
    ExpansionOutcome, MacroOutcome,
};
pub use fit::{fit_rate, fit_tail, RateFit, DEFAULT_FLOOR};
pub use sweep::{sweep, sweep_with, Execution, MIN_SWEEP_POINTS};

/// One sample of a sweep: the swept quantity, the measured error and the
/// parameters that produced it, as ordered key/value text.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub sweep_var: f64,
    pub error: f64,
    pub meta: Vec<(String, String)>,
}

impl ConvergenceRecord {
    pub fn new(sweep_var: f64, error: f64) -> Self {
        ConvergenceRecord {
            sweep_var,
            error,
            meta: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Display) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Fixed-precision text for metadata values.
pub fn num(x: f64) -> String {
    format!("{x:.12e}")
}

/// `;`-joined [`num`] values.
pub fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

/// A labelled record series and its fitted rate, if one could be fitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub records: Vec<ConvergenceRecord>,
    pub fit: Option<RateFit>,
}

impl Series {
    pub fn new(
        label: impl Into<String>,
        records: Vec<ConvergenceRecord>,
        fit: Option<RateFit>,
    ) -> Self {
        Series {
            label: label.into(),
            records,
            fit,
        }
    }

    /// Series with a fit over records above `floor`; a failed fit is logged
    /// and left empty.
    pub fn fitted(label: impl Into<String>, records: Vec<ConvergenceRecord>, floor: f64) -> Self {
        let label = label.into();
        let fit = match fit_rate(&records, floor) {
            Ok(f) => Some(f),
            Err(e) => {
                log::warn!("{label}: no rate fitted ({e})");
                None
            }
        };
        Series {
            label,
            records,
            fit,
        }
    }

    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error).collect()
    }
}
