//! Detector-model and experiment config files (TOML).
//!
//! A model file holds `scheme`, `spatial_modes` and either a full
//! `efficiencies` matrix (rows = spatial modes, columns = detectors) or a
//! scalar `eta`. The scalar expands to the symmetric mismatch pattern when
//! there is one spatial mode per detector, and to `[1, eta]` (active) or
//! `[1, eta, 1, eta]` (passive) for a single spatial mode.

use std::path::{Path, PathBuf};

use evmix_core::channel::Resend;
use evmix_core::detectors::{DetectorModel, Scheme, SchemeConfig};
use serde::{Deserialize, Serialize};

use crate::error::AppError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub scheme: String,
    pub spatial_modes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiencies: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl ModelConfig {
    pub fn scheme(&self) -> Result<Scheme, AppError> {
        Ok(Scheme::parse(&self.scheme)?)
    }

    /// Model with `eta` substituted for the scalar shortcut.
    pub fn model_at(&self, eta: f64) -> Result<DetectorModel, AppError> {
        let scheme = self.scheme()?;
        let n = scheme.detector_count();
        let model = if self.spatial_modes == n {
            DetectorModel::symmetric(scheme, eta)?
        } else if self.spatial_modes == 1 {
            let row = (0..n).map(|d| if d % 2 == 0 { 1.0 } else { eta }).collect();
            DetectorModel::new(scheme, vec![row])?
        } else {
            return Err(AppError::Config(format!(
                "eta shortcut needs spatial_modes = 1 or {n} for the {} scheme",
                scheme.name()
            )));
        };
        Ok(model)
    }

    pub fn model(&self) -> Result<DetectorModel, AppError> {
        match (&self.eta, &self.efficiencies) {
            (Some(_), Some(_)) => Err(AppError::Config("give either eta or efficiencies, not both".into())),
            (None, None) => Err(AppError::Config("model needs eta or efficiencies".into())),
            (Some(eta), None) => self.model_at(*eta),
            (None, Some(rows)) => {
                if rows.len() != self.spatial_modes {
                    return Err(AppError::Config(format!(
                        "spatial_modes = {} but {} efficiency rows",
                        self.spatial_modes,
                        rows.len()
                    )));
                }
                Ok(DetectorModel::new(self.scheme()?, rows.clone())?)
            }
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| match (&self.eta, &self.efficiencies) {
            (Some(e), _) => format!("{}-{}mode-eta{}", self.scheme, self.spatial_modes, e),
            _ => format!("{}-{}mode", self.scheme, self.spatial_modes),
        })
    }
}

/// Parse a model file's text.
pub fn load_detector_model(text: &str) -> Result<(SchemeConfig, DetectorModel), AppError> {
    let cfg: ModelConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
    let model = cfg.model()?;
    Ok((model.config(), model))
}

pub fn read_model_config(path: &Path) -> Result<ModelConfig, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BoundsTable,
    EtaMinCurve,
    TradeoffCurve,
    SquashCompare,
    VerifySingle,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::BoundsTable => "bounds-table",
            ExperimentKind::EtaMinCurve => "eta-min-curve",
            ExperimentKind::TradeoffCurve => "tradeoff-curve",
            ExperimentKind::SquashCompare => "squash-compare",
            ExperimentKind::VerifySingle => "verify-single",
        }
    }
}

fn default_resend() -> String {
    "inf".into()
}

fn default_eta_range() -> [f64; 2] {
    [0.0, 1.0]
}

fn default_eta_tol() -> f64 {
    1e-3
}

fn default_n_max() -> usize {
    6
}

fn default_true() -> bool {
    true
}

/// One experiment: a kind, a model and parameter grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Inline model; `model_file` is the alternative.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    #[serde(default)]
    pub omega: Vec<f64>,
    #[serde(default)]
    pub p: Vec<f64>,
    #[serde(default)]
    pub r: Vec<f64>,
    /// Efficiencies for bounds tables, or the varied efficiency of a trade-off curve.
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default = "default_eta_range")]
    pub eta_range: [f64; 2],
    #[serde(default = "default_eta_tol")]
    pub eta_tol: f64,
    /// Resent photon number, an integer or "inf".
    #[serde(default = "default_resend")]
    pub n_resend: String,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Fixed `[eta_H, eta_D]` of a passive trade-off curve.
    #[serde(default)]
    pub fixed: Option<[f64; 2]>,
    #[serde(default = "default_true")]
    pub ideal_operators: bool,
    #[serde(default = "default_true")]
    pub tails: bool,
    /// Also run the measurement-operators-only dictionary (squash comparison).
    #[serde(default)]
    pub compare_povm_only: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, AppError> {
        let mut spec: ExperimentSpec = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        if let (Some(base), Some(f)) = (base, spec.model_file.as_ref()) {
            if f.is_relative() {
                spec.model_file = Some(base.join(f));
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    pub fn model_config(&self) -> Result<ModelConfig, AppError> {
        match (&self.model, &self.model_file) {
            (Some(m), None) => Ok(m.clone()),
            (None, Some(f)) => read_model_config(f),
            _ => Err(AppError::Config("experiment needs exactly one of model or model_file".into())),
        }
    }

    pub fn resend(&self) -> Result<Resend, AppError> {
        Ok(Resend::parse(&self.n_resend)?)
    }

    pub fn validate(&self) -> Result<(), AppError> {
        let unit = |name: &str, v: &[f64]| -> Result<(), AppError> {
            if let Some(x) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(AppError::Config(format!("{name} value {x} outside [0, 1]")));
            }
            Ok(())
        };
        unit("omega", &self.omega)?;
        unit("p", &self.p)?;
        unit("r", &self.r)?;
        unit("eta", &self.eta)?;
        unit("eta_range", &self.eta_range)?;
        if self.eta_range[0] >= self.eta_range[1] {
            return Err(AppError::Config("eta_range must be increasing".into()));
        }
        let need = |name: &str, v: &[f64]| {
            if v.is_empty() {
                Err(AppError::Config(format!("{} needs a non-empty {name} grid", self.kind.name())))
            } else {
                Ok(())
            }
        };
        match self.kind {
            ExperimentKind::BoundsTable => need("eta", &self.eta)?,
            ExperimentKind::EtaMinCurve => {
                need("omega", &self.omega)?;
                need("p", &self.p)?;
                need("r", &self.r)?;
            }
            ExperimentKind::TradeoffCurve => {
                need("eta", &self.eta)?;
                need("omega", &self.omega)?;
                need("p", &self.p)?;
                need("r", &self.r)?;
                if self.fixed.is_none() {
                    return Err(AppError::Config("tradeoff-curve needs fixed = [eta_H, eta_D]".into()));
                }
            }
            ExperimentKind::SquashCompare => {
                need("omega", &self.omega)?;
                need("p", &self.p)?;
            }
            ExperimentKind::VerifySingle => {
                need("omega", &self.omega)?;
                need("p", &self.p)?;
                need("r", &self.r)?;
            }
        }
        self.resend()?;
        self.model_config()?.model_or_family()?;
        Ok(())
    }
}

impl ModelConfig {
    /// Checks the config describes either a fixed model or an eta family.
    pub fn model_or_family(&self) -> Result<(), AppError> {
        match (&self.eta, &self.efficiencies) {
            (_, Some(_)) => self.model().map(|_| ()),
            (_, None) => self.model_at(1.0).map(|_| ()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_i_shortcut() {
        let (cfg, m) = load_detector_model("scheme = \"active\"\nspatial_modes = 2\neta = 0.5\n").unwrap();
        assert_eq!(cfg.spatial_modes, 2);
        assert_eq!(m.rows(), &[vec![1.0, 0.5], vec![0.5, 1.0]]);
    }

    #[test]
    fn single_mode_shortcut() {
        let (_, m) = load_detector_model("scheme = \"passive\"\nspatial_modes = 1\neta = 0.3\n").unwrap();
        assert_eq!(m.rows(), &[vec![1.0, 0.3, 1.0, 0.3]]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(load_detector_model("scheme = \"active\"\nspatial_modes = 2\neta = 1.5\n").is_err());
        assert!(load_detector_model("scheme = \"both\"\nspatial_modes = 1\neta = 0.5\n").is_err());
        assert!(load_detector_model("scheme = \"active\"\nspatial_modes = 2\nefficiencies = [[1.0, 0.5]]\n").is_err());
        assert!(load_detector_model("scheme = \"active\"\nspatial_modes = 1\nefficiencies = [[1.0, 0.5, 0.2]]\n").is_err());
    }
}
