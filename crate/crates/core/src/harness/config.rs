//! TOML experiment configuration. Every key is optional; missing keys take
//! the defaults listed on each field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coupled schedules `η = ε^{1-β}` need `β` below this bound.
pub const BETA_LIMIT: f64 = 2.0 / 7.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub convergence: Option<ConvergenceConfig>,
    #[serde(rename = "macro")]
    pub macro_run: Option<MacroRunConfig>,
    pub expansion: Option<ExpansionConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn convergence(&self) -> Result<&ConvergenceConfig> {
        self.convergence
            .as_ref()
            .ok_or_else(|| Error::Config("missing [convergence] section".into()))
    }

    pub fn macro_run(&self) -> Result<&MacroRunConfig> {
        self.macro_run
            .as_ref()
            .ok_or_else(|| Error::Config("missing [macro] section".into()))
    }

    pub fn expansion(&self) -> Result<&ExpansionConfig> {
        self.expansion
            .as_ref()
            .ok_or_else(|| Error::Config("missing [expansion] section".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVar {
    /// `ε/η`
    Ratio,
    Eps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    /// Discrete cell problem on the micro stencil and phase.
    Matched,
    /// Cell problem resolved with `reference_n` points per axis.
    Resolved,
}

/// Upscaling-error sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Catalog labels; one record series per label.
    /// Default `["periodic-1d", "locally-periodic-1d"]`.
    pub coefficients: Vec<String>,
    /// Default 0.01. Ignored by the coupled schedule.
    pub eta: f64,
    /// Default `η`.
    pub tau: Option<f64>,
    /// Default 3.
    pub p: usize,
    /// Default 6.
    pub q: usize,
    /// Explicit ε values. Required by the coupled schedule.
    pub eps: Option<Vec<f64>>,
    /// Dyadic `ε_k = η 2^{-k}`, inclusive. Default `[1, 6]` in 1D, `[1, 4]` in 2D.
    pub k_range: Option<[u32; 2]>,
    /// Coupled schedule `η = τ = ε^{1-β}` when set.
    pub beta: Option<f64>,
    /// Default origin.
    pub r0: Option<Vec<f64>>,
    /// Default all ones.
    pub slope: Option<Vec<f64>>,
    /// Default 32.
    pub pts_per_eps: usize,
    /// Default 0.5.
    pub cfl: f64,
    /// Default `ratio`.
    pub sweep_var: SweepVar,
    /// Default `matched`.
    pub reference: ReferenceKind,
    /// Default 1024 in 1D, 128 in 2D.
    pub reference_n: Option<usize>,
    /// Errors at or below this value are excluded from the fit. Default 1e-11.
    pub floor: f64,
    /// Fit only the `n` records with the smallest sweep variable.
    pub fit_tail: Option<usize>,
    /// CSV base path; one file per coefficient, suffixed by its label.
    pub output: Option<PathBuf>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            coefficients: vec!["periodic-1d".into(), "locally-periodic-1d".into()],
            eta: 0.01,
            tau: None,
            p: 3,
            q: 6,
            eps: None,
            k_range: None,
            beta: None,
            r0: None,
            slope: None,
            pts_per_eps: 32,
            cfl: 0.5,
            sweep_var: SweepVar::Ratio,
            reference: ReferenceKind::Matched,
            reference_n: None,
            floor: 1e-11,
            fit_tail: None,
            output: None,
        }
    }
}

/// One sweep point: `(ε, η, τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalePoint {
    pub eps: f64,
    pub eta: f64,
    pub tau: f64,
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coefficients.is_empty() {
            return Err(Error::Config("no coefficients given".into()));
        }
        if let Some(beta) = self.beta {
            if !(beta > 0.0 && beta < BETA_LIMIT) {
                return Err(Error::Config(format!(
                    "beta must lie in (0, 2/7), got {beta}"
                )));
            }
            if self.eps.is_none() {
                return Err(Error::Config(
                    "the coupled schedule needs an explicit eps list".into(),
                ));
            }
        } else if !(self.eta > 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if let Some([a, b]) = self.k_range {
            if a > b {
                return Err(Error::Config(format!("empty k_range [{a}, {b}]")));
            }
        }
        Ok(())
    }

    /// Sweep points for a coefficient of dimension `dim`.
    pub fn schedule(&self, dim: usize) -> Result<Vec<ScalePoint>> {
        self.validate()?;
        let eps: Vec<f64> = match (&self.eps, self.k_range) {
            (Some(list), _) => list.clone(),
            (None, range) => {
                let [a, b] = range.unwrap_or(if dim == 1 { [1, 6] } else { [1, 4] });
                (a..=b).map(|k| self.eta * 0.5f64.powi(k as i32)).collect()
            }
        };
        if eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("eps values must be positive".into()));
        }
        Ok(eps
            .into_iter()
            .map(|e| match self.beta {
                Some(beta) => {
                    let eta = e.powf(1.0 - beta);
                    ScalePoint {
                        eps: e,
                        eta,
                        tau: eta,
                    }
                }
                None => ScalePoint {
                    eps: e,
                    eta: self.eta,
                    tau: self.tau.unwrap_or(self.eta),
                },
            })
            .collect())
    }

    pub fn reference_n(&self, dim: usize) -> usize {
        self.reference_n
            .unwrap_or(if dim == 1 { 1024 } else { 128 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluxModeKind {
    Reference,
    Hmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacroProblemKind {
    /// `u = t² Π sin(k_j (x_j - a_j))` with the matching source.
    Manufactured,
    /// `u = cos(ωt) Π sin(k_j (x_j - a_j))`, no source.
    StandingWave,
    /// Gaussian initial displacement, no source, no exact solution.
    Pulse,
}

/// Macro solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacroRunConfig {
    /// Default `periodic-1d`.
    pub coefficient: String,
    /// `[a, b]` per axis. Default unit interval or square.
    pub domain: Option<Vec<[f64; 2]>>,
    /// Cells per axis. Default 64.
    pub cells: usize,
    /// Default 1.
    pub t_final: f64,
    /// Default 0.5.
    pub cfl: f64,
    /// Overrides the CFL-derived step.
    pub dt: Option<f64>,
    /// Default `reference`.
    pub mode: FluxModeKind,
    /// Cell-problem resolution in reference mode. Default 256.
    pub cell_n: usize,
    /// Micro parameters in hmm mode. Defaults 0.01 / 0.05 / η / 3 / 6 / 32.
    pub eps: f64,
    pub eta: f64,
    pub tau: Option<f64>,
    pub p: usize,
    pub q: usize,
    pub pts_per_eps: usize,
    /// Default `standing-wave`.
    pub problem: MacroProblemKind,
    /// Pulse centre, default domain centre.
    pub pulse_center: Option<Vec<f64>>,
    /// Pulse width. Default 0.1.
    pub pulse_width: f64,
    /// Store every `k`-th level in addition to the final one.
    pub snapshot_every: Option<usize>,
    /// Snapshot CSV path.
    pub output: Option<PathBuf>,
}

impl Default for MacroRunConfig {
    fn default() -> Self {
        MacroRunConfig {
            coefficient: "periodic-1d".into(),
            domain: None,
            cells: 64,
            t_final: 1.0,
            cfl: 0.5,
            dt: None,
            mode: FluxModeKind::Reference,
            cell_n: 256,
            eps: 0.01,
            eta: 0.05,
            tau: None,
            p: 3,
            q: 6,
            pts_per_eps: 32,
            problem: MacroProblemKind::StandingWave,
            pulse_center: None,
            pulse_width: 0.1,
            snapshot_every: None,
            output: None,
        }
    }
}

/// Asymptotic-expansion experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    /// Default `locally-periodic-1d`.
    pub coefficient: String,
    /// Default all ones.
    pub slope: Option<Vec<f64>>,
    /// Default origin. Used by the cell experiments.
    pub r0: Option<Vec<f64>>,
    /// Truncated domain `[-L, L]` in cells. Default 3 (fig2) or 30 (fig3, fig4).
    pub half_width: Option<usize>,
    /// Default 1 (fig2, fig4) or 0.5 (fig3).
    pub t_final: Option<f64>,
    /// Default 32.
    pub pts_per_unit: usize,
    /// Default 0.5.
    pub cfl: f64,
    /// Error window `|y| ≤ window`. Default 1.5.
    pub window: f64,
    /// Default `2^{-4} .. 2^{-7}`.
    pub eps: Vec<f64>,
    /// Highest expansion order. Default 2.
    pub orders: usize,
    /// Cell-centre distances used by the growth fit. Default `[5, 15]`.
    pub growth_range: [f64; 2],
    /// Default `2^{-2} .. 2^{-5}`.
    pub alpha: Vec<f64>,
    /// Averaging width for the flux decomposition. Default 1e-3.
    pub eta: f64,
    /// Micro points per `ε` (flux decomposition) and per cell (time averages). Default 32.
    pub cell_n: usize,
    /// Default 3.
    pub p: usize,
    /// Default 6.
    pub q: usize,
    /// Default 1e-11.
    pub floor: f64,
    /// CSV base path; one file per series, suffixed by its label.
    pub output: Option<PathBuf>,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            coefficient: "locally-periodic-1d".into(),
            slope: None,
            r0: None,
            half_width: None,
            t_final: None,
            pts_per_unit: 32,
            cfl: 0.5,
            window: 1.5,
            eps: (4..=7).map(|k| 0.5f64.powi(k)).collect(),
            orders: 2,
            growth_range: [5.0, 15.0],
            alpha: (2..=5).map(|k| 0.5f64.powi(k)).collect(),
            eta: 1e-3,
            cell_n: 32,
            p: 3,
            q: 6,
            floor: 1e-11,
            output: None,
        }
    }
}

/// Experiments driven by [`ExpansionConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpansionExperiment {
    Fig2,
    Fig3,
    Fig4,
    TimeAverages,
    FluxDecomp,
}

impl ExpansionExperiment {
    pub fn label(self) -> &'static str {
        match self {
            ExpansionExperiment::Fig2 => "fig2",
            ExpansionExperiment::Fig3 => "fig3",
            ExpansionExperiment::Fig4 => "fig4",
            ExpansionExperiment::TimeAverages => "time-averages",
            ExpansionExperiment::FluxDecomp => "flux-decomp",
        }
    }

    fn default_half_width(self) -> usize {
        match self {
            ExpansionExperiment::Fig2 => 3,
            _ => 30,
        }
    }

    fn default_t_final(self) -> f64 {
        match self {
            ExpansionExperiment::Fig3 => 0.5,
            _ => 1.0,
        }
    }
}

impl std::str::FromStr for ExpansionExperiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fig2" => ExpansionExperiment::Fig2,
            "fig3" => ExpansionExperiment::Fig3,
            "fig4" => ExpansionExperiment::Fig4,
            "time-averages" => ExpansionExperiment::TimeAverages,
            "flux-decomp" => ExpansionExperiment::FluxDecomp,
            other => return Err(Error::Config(format!("unknown experiment '{other}'"))),
        })
    }
}

impl ExpansionConfig {
    pub fn half_width_for(&self, exp: ExpansionExperiment) -> usize {
        self.half_width.unwrap_or(exp.default_half_width())
    }

    pub fn t_final_for(&self, exp: ExpansionExperiment) -> f64 {
        self.t_final.unwrap_or(exp.default_t_final())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("[convergence]\n[expansion]\n").unwrap();
        assert_eq!(cfg.convergence.unwrap(), ConvergenceConfig::default());
        assert_eq!(cfg.expansion.unwrap(), ExpansionConfig::default());
        assert!(cfg.macro_run.is_none());
    }

    #[test]
    fn default_schedule_is_dyadic() {
        let c = ConvergenceConfig::default();
        let pts = c.schedule(1).unwrap();
        assert_eq!(pts.len(), 6);
        assert!((pts[0].eps - 0.005).abs() < 1e-15);
        assert!((pts[5].eps - 0.01 / 64.0).abs() < 1e-15);
        assert_eq!(c.schedule(2).unwrap().len(), 4);
    }

    #[test]
    fn coupled_schedule_checks_beta() {
        let mut c = ConvergenceConfig {
            beta: Some(0.2),
            eps: Some(vec![1e-2, 5e-3]),
            ..ConvergenceConfig::default()
        };
        let pts = c.schedule(1).unwrap();
        assert!((pts[0].eta - 1e-2f64.powf(0.8)).abs() < 1e-15);
        c.beta = Some(0.3);
        assert!(matches!(c.schedule(1), Err(Error::Config(_))));
        c.beta = Some(0.2);
        c.eps = None;
        assert!(matches!(c.schedule(1), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[convergence]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[other]\n").is_err());
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig {
            convergence: Some(ConvergenceConfig {
                eps: Some(vec![1e-3, 5e-4]),
                fit_tail: Some(3),
                ..ConvergenceConfig::default()
            }),
            macro_run: Some(MacroRunConfig {
                domain: Some(vec![[0.0, 1.0]]),
                mode: FluxModeKind::Hmm,
                problem: MacroProblemKind::Pulse,
                ..MacroRunConfig::default()
            }),
            expansion: Some(ExpansionConfig::default()),
        };
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }
}
